//! Channel-wise perturbation interpretability for small convolutional
//! networks.
//!
//! The pipeline gates the channels of one convolutional layer at random,
//! records how the class probabilities respond ([`perturb`]), fits a sparse
//! per-class channel importance with ADMM ([`solver`]), turns importance and
//! activations into saliency maps ([`interpret`]) and boxes objects from
//! those maps ([`localize`]).

pub mod cli;
pub mod error;
pub mod interpret;
pub mod io;
pub mod localize;
pub mod net;
pub mod perturb;
pub mod shapes;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use interpret::{chip_map, refined_chip, MapKind, SaliencyMap};
pub use io::ImageSet;
pub use localize::BBox;
pub use net::{GateVector, Layer, NetworkSpec, Retain};
pub use perturb::{build_dataset, PerturbedDataset};
pub use solver::{solve_all, ImportanceMatrix, SolverConfig};
pub use tensor::Tensor;
