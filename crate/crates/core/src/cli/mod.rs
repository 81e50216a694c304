//! Command-line surface: argument parsing, config merging and one function
//! per subcommand. The `chip` binary is a thin wrapper around [`main_with_args`].

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::require_path;
pub use config::{InterpretSection, LocalizeSection, Paths, RunConfig, SolverSection, OUTPUT_DIR_ENV};

use crate::error::{Error, Result};
use crate::interpret::{encode_pgm, importance_stats, overlay_png, saliency, MapKind, OverlapReport, SaliencyMap};
use crate::io::{write_atomic, ImageSet};
use crate::localize::{evaluate, grid_search_threshold, localize_map, EvalConfig, EvalReport, GroundTruth};
use crate::net::{load_network, NetworkSpec, Retain};
use crate::perturb::{build_dataset, read_dataset};
use crate::solver::{encode_bin, encode_csv, read_importance_bin, solve_all, ImportanceMatrix};

#[derive(Debug, Parser)]
#[command(
    name = "chip",
    version,
    about = "Channel-perturbation saliency and weak localization"
)]
pub struct Cli {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Print failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub error_json: bool,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags mirroring config fields.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Network model file.
    #[arg(long, global = true, value_name = "FILE")]
    pub net: Option<PathBuf>,
    /// Directory of .ppm/.png images (sorted by name; position = image id).
    #[arg(long, global = true, value_name = "DIR")]
    pub images: Option<PathBuf>,
    /// Perturbed dataset file for the target layer.
    #[arg(long, global = true, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Directory holding importance_site<L>.{csv,bin}.
    #[arg(long, global = true, value_name = "DIR")]
    pub importance_dir: Option<PathBuf>,
    /// Ground-truth boxes (JSON list of {image_id, class_id, box}).
    #[arg(long, global = true, value_name = "FILE")]
    pub ground_truth: Option<PathBuf>,
    /// Output directory [env: CHIP_OUTPUT_DIR, default ./chip-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Gate site index to perturb/explain (0 = first convolution).
    #[arg(long, global = true, value_name = "SITE")]
    pub layer: Option<usize>,
    /// Gate draws per image.
    #[arg(long, global = true, value_name = "N")]
    pub draws: Option<usize>,
    /// Base seed of the gate streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Resize inputs to HxW on load, e.g. 32x32.
    #[arg(long, global = true, value_name = "HxW", value_parser = parse_resize)]
    pub resize: Option<[usize; 2]>,
    /// Absolute ℓ1 weight (overrides --lambda-relative).
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// ℓ1 weight as a fraction of the largest Gram diagonal.
    #[arg(long, global = true)]
    pub lambda_relative: Option<f64>,
    /// ADMM penalty.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Proximity kernel width (default K/4).
    #[arg(long, global = true)]
    pub sigma2: Option<f64>,
    /// ADMM iteration cap.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Use the refined first×last map in localize/eval.
    #[arg(long, global = true)]
    pub refined: bool,
    /// First gate site of the refined map.
    #[arg(long, global = true, value_name = "SITE")]
    pub first_layer: Option<usize>,
    /// Last gate site of the refined map.
    #[arg(long, global = true, value_name = "SITE")]
    pub last_layer: Option<usize>,
    /// Fixed binarization fraction for localize/eval (skips the grid search).
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Skip PNG overlays.
    #[arg(long, global = true)]
    pub no_overlay: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the perturbed dataset for the target layer.
    Perturb,
    /// Fit per-class channel importance from the perturbed dataset.
    Learn {
        /// Also solve at every multiplier of solver.lambda_sweep and write a summary.
        #[arg(long)]
        sweep: bool,
    },
    /// CHIP saliency map of one image.
    Explain(MapArgs),
    /// Refined (first×last layer) saliency map of one image.
    Refine(MapArgs),
    /// Boxes for every image at the predicted class.
    Localize,
    /// Localization report against ground truth.
    Eval,
    /// Importance sparsity and cross-class channel overlap.
    Analyze {
        /// Classes to compare (default: config or all).
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<usize>>,
        /// Channels per class in the top-k sets.
        #[arg(long)]
        top_k: Option<usize>,
        /// Relative threshold for the above-threshold sets.
        #[arg(long)]
        rel_threshold: Option<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct MapArgs {
    /// Image id (position in the sorted directory) or file name stem.
    #[arg(long)]
    pub image: String,
    /// Class to explain (default: the predicted class).
    #[arg(long)]
    pub class: Option<usize>,
}

fn parse_resize(s: &str) -> std::result::Result<[usize; 2], String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok([p(h)?, p(w)?])
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:expr => $dst:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = Some(v);
                }
            };
        }
        set!(self.net => cfg.paths.net);
        set!(self.images => cfg.paths.images);
        set!(self.dataset => cfg.paths.dataset);
        set!(self.importance_dir => cfg.paths.importance_dir);
        set!(self.ground_truth => cfg.paths.ground_truth);
        set!(self.output_dir => cfg.paths.output_dir);
        set!(self.layer => cfg.target_layer);
        set!(self.resize => cfg.resize);
        set!(self.lambda => cfg.solver.lambda);
        set!(self.sigma2 => cfg.solver.sigma2);
        set!(self.first_layer => cfg.interpret.first_layer);
        set!(self.last_layer => cfg.interpret.last_layer);
        set!(self.threshold => cfg.localize.threshold);
        if let Some(v) = self.draws {
            cfg.draws = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lambda_relative {
            cfg.solver.lambda_relative = v;
            if self.lambda.is_none() {
                cfg.solver.lambda = None;
            }
        }
        if let Some(v) = self.rho {
            cfg.solver.rho = v;
        }
        if let Some(v) = self.max_iters {
            cfg.solver.max_iters = v;
        }
        if self.refined {
            cfg.interpret.refined = true;
        }
        if self.no_overlay {
            cfg.interpret.overlay = false;
        }
    }
}

impl Cli {
    /// File config (if any) with flag overrides applied, validated.
    pub fn effective_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(outputs) => {
            for p in outputs {
                println!("{}", p.display());
            }
            0
        }
        Err(e) => {
            if cli.error_json {
                let body = json!({
                    "error": e.kind(),
                    "message": e.to_string(),
                    "exit_code": e.exit_code(),
                });
                eprintln!("{body}");
            } else {
                eprintln!("error: {e}");
            }
            e.exit_code()
        }
    }
}

/// Runs the parsed command, returning the files it wrote.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    let cfg = cli.effective_config()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Perturb => cmd_perturb(&cfg).map(|p| vec![p]),
        Command::Learn { sweep } => cmd_learn(&cfg, *sweep),
        Command::Explain(a) => cmd_explain(&cfg, &a.image, a.class),
        Command::Refine(a) => cmd_refine(&cfg, &a.image, a.class),
        Command::Localize => cmd_localize(&cfg).map(|p| vec![p]),
        Command::Eval => cmd_eval(&cfg).map(|(p, _)| vec![p]),
        Command::Analyze {
            classes,
            top_k,
            rel_threshold,
        } => {
            let classes = classes.clone().unwrap_or_else(|| cfg.interpret.classes.clone());
            let top_k = top_k.unwrap_or(cfg.interpret.top_k);
            let rel = rel_threshold.unwrap_or(cfg.interpret.rel_threshold);
            cmd_analyze(&cfg, &classes, top_k, rel).map(|(p, _)| vec![p])
        }
    })
}

fn config_err(e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::Config(m),
        other => other,
    }
}

fn load_net(cfg: &RunConfig) -> Result<NetworkSpec> {
    load_network(require_path(&cfg.paths.net, "paths.net")?)
}

fn load_images(cfg: &RunConfig) -> Result<ImageSet> {
    let dir = require_path(&cfg.paths.images, "paths.images")?;
    let set = ImageSet::load_dir(&dir, cfg.resize.map(|[h, w]| (h, w)))?;
    if set.is_empty() {
        return Err(Error::Config(format!("no .ppm/.png images in {}", dir.display())));
    }
    Ok(set)
}

fn target_site(cfg: &RunConfig, net: &NetworkSpec) -> Result<usize> {
    let site = match cfg.target_layer {
        Some(s) => s,
        None => net
            .gate_sites()
            .len()
            .checked_sub(1)
            .ok_or_else(|| Error::Config("network has no convolution to explain".into()))?,
    };
    net.gate_site(site).map_err(config_err)?;
    Ok(site)
}

fn refined_sites(cfg: &RunConfig, net: &NetworkSpec) -> Result<(usize, usize)> {
    let (f, l) = net
        .first_last_sites()
        .ok_or_else(|| Error::Config("network has no convolution to explain".into()))?;
    let first = cfg.interpret.first_layer.unwrap_or(f);
    let last = cfg.interpret.last_layer.unwrap_or(l);
    net.gate_site(first).map_err(config_err)?;
    net.gate_site(last).map_err(config_err)?;
    Ok((first, last))
}

fn load_importance(cfg: &RunConfig, net: &NetworkSpec, site: usize) -> Result<ImportanceMatrix> {
    let path = cfg.importance_stem(site).with_extension("bin");
    if !path.exists() {
        return Err(Error::Config(format!(
            "importance for site {site} not found at {} (run `learn --layer {site}` first)",
            path.display()
        )));
    }
    let w = read_importance_bin(&path)?;
    let hash = net.content_hash();
    if !w.meta.net_hash.is_empty() && w.meta.net_hash != hash {
        return Err(Error::StaleDataset {
            expected: hash,
            found: w.meta.net_hash.clone(),
        });
    }
    if w.site != site || w.channels() != net.gate_site(site)?.channels || w.classes() != net.num_classes() {
        return Err(Error::format(
            0,
            format!("{}: shape does not match the network", path.display()),
        ));
    }
    Ok(w)
}

fn map_kind(cfg: &RunConfig, net: &NetworkSpec) -> Result<MapKind> {
    if cfg.interpret.refined {
        let (first, last) = refined_sites(cfg, net)?;
        Ok(MapKind::Refined { first, last })
    } else {
        Ok(MapKind::Chip {
            site: target_site(cfg, net)?,
        })
    }
}

fn importances_for(cfg: &RunConfig, net: &NetworkSpec, kind: MapKind) -> Result<Vec<ImportanceMatrix>> {
    match kind {
        MapKind::Chip { site } => Ok(vec![load_importance(cfg, net, site)?]),
        MapKind::Refined { first, last } => Ok(vec![
            load_importance(cfg, net, first)?,
            load_importance(cfg, net, last)?,
        ]),
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("serializable");
    s.push(b'\n');
    s
}

/// Writes every file or none of the renamed targets is partial.
fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    for (p, bytes) in files {
        write_atomic(p, bytes)?;
    }
    Ok(files.iter().map(|(p, _)| p.clone()).collect())
}

/// Builds and writes the perturbed dataset for the target layer.
pub fn cmd_perturb(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let net = load_net(cfg)?;
    let site = target_site(cfg, &net)?;
    let images = load_images(cfg)?;
    let mut ds = build_dataset(&net, &images, site, cfg.draws, cfg.seed)?;
    ds.header.provenance = Some(cfg.provenance());
    let path = cfg.dataset_path(site);
    write_atomic(&path, &ds.to_bytes()?)?;
    log::info!("{} records -> {}", ds.records.len(), path.display());
    Ok(path)
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    multiplier: f64,
    lambda: Vec<f64>,
    nonzero: Vec<usize>,
    converged: Vec<bool>,
}

/// Solves every class and writes CSV and binary importance files.
pub fn cmd_learn(cfg: &RunConfig, sweep: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let net = load_net(cfg)?;
    let site = target_site(cfg, &net)?;
    let ds_path = cfg.dataset_path(site);
    if !ds_path.exists() {
        return Err(Error::Config(format!(
            "dataset not found at {} (run `perturb` first)",
            ds_path.display()
        )));
    }
    let ds = read_dataset(&ds_path, &net)?;
    if ds.header.site != site {
        return Err(Error::Config(format!(
            "dataset {} is for site {}, not {site}",
            ds_path.display(),
            ds.header.site
        )));
    }
    let solver = cfg.solver.solver_config();
    let mut w = solve_all(&ds, &solver)?;
    w.meta.provenance = Some(cfg.provenance());
    let stem = cfg.importance_stem(site);
    let mut files = vec![
        (stem.with_extension("csv"), encode_csv(&w)),
        (stem.with_extension("bin"), encode_bin(&w)),
    ];
    if sweep {
        let mut entries = Vec::new();
        for &m in &cfg.solver.lambda_sweep {
            let ws = solve_all(&ds, &solver.scale_lambda(m))?;
            entries.push(SweepEntry {
                multiplier: m,
                lambda: ws.meta.classes.iter().map(|d| d.lambda).collect(),
                nonzero: ws.nonzero_counts(),
                converged: ws.meta.classes.iter().map(|d| d.converged).collect(),
            });
        }
        let body = json!({ "site": site, "sweep": entries, "provenance": cfg.provenance() });
        files.push((
            cfg.output_dir().join(format!("lambda_sweep_site{site}.json")),
            to_json(&body),
        ));
    }
    write_all(&files)
}

fn resolve_image(images: &ImageSet, key: &str) -> Result<usize> {
    if let Some(i) = images.names.iter().position(|n| n == key) {
        return Ok(i);
    }
    match key.parse::<usize>() {
        Ok(i) if i < images.len() => Ok(i),
        Ok(i) => Err(Error::Config(format!(
            "image id {i} out of range ({} images)",
            images.len()
        ))),
        Err(_) => Err(Error::Config(format!("no image named {key:?}"))),
    }
}

fn predicted_class(net: &NetworkSpec, image: &crate::tensor::Tensor) -> Result<usize> {
    Ok(net.forward(image, None, Retain::Nothing)?.argmax())
}

#[derive(Debug, Serialize)]
struct MapSidecar<'a> {
    image_id: usize,
    image: &'a str,
    class_id: usize,
    map: MapKind,
    raw_min: f64,
    raw_max: f64,
    degenerate: bool,
    provenance: serde_json::Value,
}

fn emit_map(
    cfg: &RunConfig,
    stem: &str,
    images: &ImageSet,
    image_id: usize,
    kind: MapKind,
    map: &SaliencyMap,
) -> Result<Vec<PathBuf>> {
    let base = cfg.output_dir().join(stem);
    let sidecar = MapSidecar {
        image_id,
        image: &images.names[image_id],
        class_id: map.class_id,
        map: kind,
        raw_min: map.norm.raw_min,
        raw_max: map.norm.raw_max,
        degenerate: map.norm.degenerate,
        provenance: cfg.provenance(),
    };
    let mut files = vec![
        (base.with_extension("pgm"), encode_pgm(map)),
        (base.with_extension("json"), to_json(&sidecar)),
    ];
    if cfg.interpret.overlay {
        files.push((base.with_extension("png"), overlay_png(map, &images.images[image_id])?));
    }
    write_all(&files)
}

fn explain_with(cfg: &RunConfig, image: &str, class: Option<usize>, refined: bool) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let net = load_net(cfg)?;
    let kind = if refined {
        let (first, last) = refined_sites(cfg, &net)?;
        MapKind::Refined { first, last }
    } else {
        MapKind::Chip {
            site: target_site(cfg, &net)?,
        }
    };
    let importances = importances_for(cfg, &net, kind)?;
    let images = load_images(cfg)?;
    let id = resolve_image(&images, image)?;
    let class_id = match class {
        Some(c) if c < net.num_classes() => c,
        Some(c) => {
            return Err(Error::Config(format!(
                "class {c} out of range ({} classes)",
                net.num_classes()
            )))
        }
        None => predicted_class(&net, &images.images[id])?,
    };
    let map = saliency(&net, &images.images[id], class_id, &importances, kind)?;
    let name = &images.names[id];
    let stem = match kind {
        MapKind::Chip { site } => format!("chip_site{site}_{name}_c{class_id}"),
        MapKind::Refined { first, last } => format!("refined_site{first}-{last}_{name}_c{class_id}"),
    };
    emit_map(cfg, &stem, &images, id, kind, &map)
}

/// CHIP map of one image at the target layer: PGM, PNG overlay, JSON sidecar.
pub fn cmd_explain(cfg: &RunConfig, image: &str, class: Option<usize>) -> Result<Vec<PathBuf>> {
    explain_with(cfg, image, class, false)
}

/// Refined CHIP map of one image from the first and last layer maps.
pub fn cmd_refine(cfg: &RunConfig, image: &str, class: Option<usize>) -> Result<Vec<PathBuf>> {
    explain_with(cfg, image, class, true)
}

fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruth>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| {
        Error::format(
            0,
            format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()),
        )
    })
}

#[derive(Debug, Serialize)]
struct BoxEntry {
    image_id: usize,
    image: String,
    class_id: usize,
    #[serde(rename = "box")]
    bbox: Option<[usize; 4]>,
    component_pixels: usize,
}

/// Boxes for every image at its predicted class. Without a fixed threshold
/// the fraction is grid-searched against the ground truth.
pub fn cmd_localize(cfg: &RunConfig) -> Result<PathBuf> {
    use rayon::prelude::*;
    cfg.validate()?;
    let net = load_net(cfg)?;
    let kind = map_kind(cfg, &net)?;
    let importances = importances_for(cfg, &net, kind)?;
    let gt = match cfg.localize.threshold {
        Some(_) => None,
        None => {
            let p = cfg
                .paths
                .ground_truth
                .as_ref()
                .ok_or_else(|| Error::Config("localize needs localize.threshold or paths.ground_truth".into()))?;
            Some(load_ground_truth(&require_path(
                &Some(p.clone()),
                "paths.ground_truth",
            )?)?)
        }
    };
    let images = load_images(cfg)?;
    let maps: Vec<SaliencyMap> = images
        .images
        .par_iter()
        .enumerate()
        .map(|(id, img)| {
            let c = predicted_class(&net, img)?;
            saliency(&net, img, c, &importances, kind).map_err(|e| Error::Image {
                image_id: id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let threshold = match (cfg.localize.threshold, gt) {
        (Some(t), _) => t,
        (None, Some(gt)) => {
            let items: Vec<_> = gt
                .iter()
                .filter(|g| g.image_id < maps.len())
                .map(|g| (&maps[g.image_id], g.bbox))
                .collect();
            if items.is_empty() {
                return Err(Error::invalid("no ground truth matches the loaded images"));
            }
            grid_search_threshold(&items, &cfg.localize.grid)?
        }
        (None, None) => unreachable!(),
    };
    let boxes = maps
        .iter()
        .enumerate()
        .map(|(id, m)| {
            let (b, pixels) = localize_map(m, threshold)?;
            Ok(BoxEntry {
                image_id: id,
                image: images.names[id].clone(),
                class_id: m.class_id,
                bbox: b.map(|b| [b.x0, b.y0, b.x1, b.y1]),
                component_pixels: pixels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let body = json!({
        "map": kind,
        "threshold": threshold,
        "boxes": boxes,
        "provenance": cfg.provenance(),
    });
    let name = match kind {
        MapKind::Chip { site } => format!("boxes_chip_site{site}.json"),
        MapKind::Refined { first, last } => format!("boxes_refined_site{first}-{last}.json"),
    };
    let path = cfg.output_dir().join(name);
    write_atomic(&path, &to_json(&body))?;
    Ok(path)
}

/// Localization report of the configured map against ground truth.
pub fn cmd_eval(cfg: &RunConfig) -> Result<(PathBuf, EvalReport)> {
    cfg.validate()?;
    let net = load_net(cfg)?;
    let kind = map_kind(cfg, &net)?;
    let importances = importances_for(cfg, &net, kind)?;
    let gt = load_ground_truth(&require_path(&cfg.paths.ground_truth, "paths.ground_truth")?)?;
    let images = load_images(cfg)?;
    let ecfg = EvalConfig {
        map: kind,
        grid: cfg.localize.grid.clone(),
        threshold: cfg.localize.threshold,
    };
    let mut report = evaluate(&net, &images, &gt, &importances, &ecfg)?;
    report.provenance = Some(cfg.provenance());
    let name = match kind {
        MapKind::Chip { site } => format!("report_chip_site{site}.json"),
        MapKind::Refined { first, last } => format!("report_refined_site{first}-{last}.json"),
    };
    let path = cfg.output_dir().join(name);
    write_atomic(&path, &to_json(&report))?;
    Ok((path, report))
}

/// Sparsity and overlap of the target layer's importance.
pub fn cmd_analyze(
    cfg: &RunConfig,
    classes: &[usize],
    top_k: usize,
    rel_threshold: f64,
) -> Result<(PathBuf, OverlapReport)> {
    cfg.validate()?;
    let net = load_net(cfg)?;
    let site = target_site(cfg, &net)?;
    let w = load_importance(cfg, &net, site)?;
    let classes: Vec<usize> = if classes.is_empty() {
        (0..w.classes()).collect()
    } else {
        classes.to_vec()
    };
    if let Some(&c) = classes.iter().find(|&&c| c >= w.classes()) {
        return Err(Error::Config(format!(
            "class {c} out of range ({} classes)",
            w.classes()
        )));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    let report = importance_stats(&w, &classes, top_k, rel_threshold).map_err(config_err)?;
    let body = json!({ "site": site, "report": report, "provenance": cfg.provenance() });
    let path = cfg.output_dir().join(format!("overlap_site{site}.json"));
    write_atomic(&path, &to_json(&body))?;
    Ok((path, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let cli = Cli::try_parse_from(["chip", "--draws", "5", "--seed", "9", "--layer", "1", "perturb"]).unwrap();
        let cfg = cli.effective_config().unwrap();
        assert_eq!((cfg.draws, cfg.seed, cfg.target_layer), (5, 9, Some(1)));
    }

    #[test]
    fn unknown_flag_is_an_error() {
        assert!(Cli::try_parse_from(["chip", "perturb", "--drawz", "3"]).is_err());
        assert_eq!(main_with_args(["chip", "perturb", "--bogus"]), 2);
    }

    #[test]
    fn resize_parses() {
        assert_eq!(parse_resize("24x32").unwrap(), [24, 32]);
        assert!(parse_resize("24").is_err());
    }

    #[test]
    fn invalid_numbers_exit_with_config_code() {
        assert_eq!(main_with_args(["chip", "--rho", "-1", "perturb"]), 2);
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let cli = Cli::try_parse_from(["chip", "--net", "/nonexistent/net", "perturb"]).unwrap();
        assert!(matches!(run(&cli), Err(Error::Config(_))));
    }
}
