"""Train the synthetic-shapes fixture network and export it as a CHIPNET file.

Usage:
    cargo run --release -p chip --example synthetic_shapes -- /tmp/shapes-train 3000 1000
    python3 tools/train_shapes_fixture.py /tmp/shapes-train crates/core/fixtures/shapes_net.chipnet

Architecture (channels-last in the exported file):
    conv 3x3 3->8 pad 1, relu, maxpool 2
    conv 3x3 8->16 pad 1, relu
    conv 3x3 16->32 pad 1, relu
    global average pool, dense 32->3, softmax

An L1 penalty on the classifier weights leaves most last-layer channels
unused by the classifier, as in large trained networks.
"""

import json
import os
import struct
import sys

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

LAST = 32
L1_CLASSIFIER = 2e-3


def load(dirname):
    with open(os.path.join(dirname, "ground_truth.json")) as f:
        gt = json.load(f)
    names = sorted(n for n in os.listdir(dirname) if n.endswith(".ppm"))
    xs = np.stack([np.asarray(Image.open(os.path.join(dirname, n)).convert("RGB"), dtype=np.float32) / 255.0 for n in names])
    labels = np.zeros(len(names), dtype=np.int64)
    for g in gt:
        labels[g["image_id"]] = g["class_id"]
    return torch.from_numpy(xs).permute(0, 3, 1, 2).contiguous(), torch.from_numpy(labels)


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(3, 8, 3, padding=1)
        self.c2 = nn.Conv2d(8, 16, 3, padding=1)
        self.c3 = nn.Conv2d(16, LAST, 3, padding=1)
        self.fc = nn.Linear(LAST, 3)

    def forward(self, x):
        x = torch.max_pool2d(torch.relu(self.c1(x)), 2)
        x = torch.relu(self.c2(x))
        x = torch.relu(self.c3(x))
        return self.fc(x.mean(dim=(2, 3)))


def export(net, path):
    layers = []
    blobs = []

    def conv(m):
        w = m.weight.detach().permute(0, 2, 3, 1).contiguous().numpy().astype("<f4")
        b = m.bias.detach().numpy().astype("<f4")
        blobs.extend([w, b])
        k = m.kernel_size[0]
        return {"type": "conv", "kernel": k, "stride": 1, "padding": m.padding[0], "out_channels": w.shape[0],
                "blobs": [{"shape": list(w.shape), "bytes": w.nbytes}, {"shape": list(b.shape), "bytes": b.nbytes}]}

    layers += [conv(net.c1), {"type": "relu"}, {"type": "maxpool", "size": 2, "stride": 2}]
    layers += [conv(net.c2), {"type": "relu"}, conv(net.c3), {"type": "relu"}, {"type": "gap"}]
    w = net.fc.weight.detach().numpy().astype("<f4")
    b = net.fc.bias.detach().numpy().astype("<f4")
    blobs.extend([w, b])
    layers.append({"type": "dense", "out_dim": 3,
                   "blobs": [{"shape": list(w.shape), "bytes": w.nbytes}, {"shape": list(b.shape), "bytes": b.nbytes}]})
    layers.append({"type": "softmax"})
    header = {"input": [32, 32, 3], "layers": layers, "blob_bytes": sum(x.nbytes for x in blobs)}
    with open(path, "wb") as f:
        f.write(b"CHIPNET 1\n")
        f.write(json.dumps(header, separators=(",", ":")).encode())
        f.write(b"\n")
        for x in blobs:
            f.write(x.tobytes())


def main():
    src, out = sys.argv[1], sys.argv[2]
    torch.manual_seed(0)
    torch.use_deterministic_algorithms(True)
    x, y = load(src)
    n_val = len(x) // 10
    xt, yt, xv, yv = x[n_val:], y[n_val:], x[:n_val], y[:n_val]
    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    for epoch in range(40):
        perm = torch.randperm(len(xt))
        for i in range(0, len(xt), 64):
            idx = perm[i:i + 64]
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            loss = loss + L1_CLASSIFIER * net.fc.weight.abs().sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            acc = (net(xv).argmax(1) == yv).float().mean().item()
        print(f"epoch {epoch} loss {loss.item():.4f} val acc {acc:.4f}")
    print("classifier |w| per channel:", net.fc.weight.abs().sum(0).detach().numpy().round(3))
    export(net, out)


if __name__ == "__main__":
    main()
