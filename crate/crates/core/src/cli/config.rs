//! Declarative run configuration (TOML) with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localize::default_grid;
use crate::solver::{Lambda, SolverConfig};

/// Environment variable holding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CHIP_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub net: Option<PathBuf>,
    pub images: Option<PathBuf>,
    /// Dataset file for the target layer; defaults to
    /// `<output_dir>/dataset_site<L>.chipdata`.
    pub dataset: Option<PathBuf>,
    /// Directory holding `importance_site<L>.{csv,bin}`; defaults to the
    /// output directory.
    pub importance_dir: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// Absolute ℓ1 weight; takes precedence over `lambda_relative`.
    pub lambda: Option<f64>,
    pub lambda_relative: f64,
    pub rho: f64,
    pub sigma2: Option<f64>,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
    /// λ multipliers for `learn --sweep`.
    pub lambda_sweep: Vec<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            lambda: None,
            lambda_relative: 1e-3,
            rho: d.rho,
            sigma2: None,
            max_iters: d.max_iters,
            tol_primal: d.tol_primal,
            tol_dual: d.tol_dual,
            lambda_sweep: vec![1.0, 3.0, 10.0, 30.0],
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            lambda: match self.lambda {
                Some(v) => Lambda::Absolute(v),
                None => Lambda::Relative(self.lambda_relative),
            },
            rho: self.rho,
            sigma2: self.sigma2,
            max_iters: self.max_iters,
            tol_primal: self.tol_primal,
            tol_dual: self.tol_dual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    /// Classes for `analyze`; empty means all.
    pub classes: Vec<usize>,
    /// Use the first×last refined map in `localize`/`eval`.
    pub refined: bool,
    /// Gate sites combined by the refined map; default first and last.
    pub first_layer: Option<usize>,
    pub last_layer: Option<usize>,
    pub top_k: usize,
    pub rel_threshold: f64,
    /// Also write a PNG overlay next to every PGM.
    pub overlay: bool,
}

impl Default for InterpretSection {
    fn default() -> Self {
        Self {
            classes: Vec::new(),
            refined: false,
            first_layer: None,
            last_layer: None,
            top_k: 10,
            rel_threshold: 1e-3,
            overlay: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeSection {
    pub grid: Vec<f64>,
    /// Fixed threshold fraction; searched on the grid when absent.
    pub threshold: Option<f64>,
}

impl Default for LocalizeSection {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Gate site to perturb and explain; default the last convolution.
    pub target_layer: Option<usize>,
    pub draws: usize,
    pub seed: u64,
    /// Resize every input image to `[height, width]` on load.
    pub resize: Option<[usize; 2]>,
    pub solver: SolverSection,
    pub interpret: InterpretSection,
    pub localize: LocalizeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            target_layer: None,
            draws: 100,
            seed: 0,
            resize: None,
            solver: SolverSection::default(),
            interpret: InterpretSection::default(),
            localize: LocalizeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("chip-out"))
        })
    }

    pub fn importance_dir(&self) -> PathBuf {
        self.paths.importance_dir.clone().unwrap_or_else(|| self.output_dir())
    }

    pub fn dataset_path(&self, site: usize) -> PathBuf {
        self.paths
            .dataset
            .clone()
            .unwrap_or_else(|| self.output_dir().join(format!("dataset_site{site}.chipdata")))
    }

    pub fn importance_stem(&self, site: usize) -> PathBuf {
        self.importance_dir().join(format!("importance_site{site}"))
    }

    /// Numeric preconditions; path checks happen per command.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.draws == 0 {
            return bad("draws must be at least 1".into());
        }
        self.solver
            .solver_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.solver.lambda_sweep.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("lambda_sweep multipliers must be positive".into());
        }
        if !(self.interpret.rel_threshold > 0.0 && self.interpret.rel_threshold < 1.0) {
            return bad(format!("rel_threshold {} not in (0, 1)", self.interpret.rel_threshold));
        }
        if self.interpret.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if self.localize.grid.is_empty() || self.localize.grid.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return bad("localization grid must be non-empty with entries in (0, 1)".into());
        }
        if let Some(t) = self.localize.threshold {
            if !(t > 0.0 && t < 1.0) {
                return bad(format!("threshold {t} not in (0, 1)"));
            }
        }
        if let Some([h, w]) = self.resize {
            if h == 0 || w == 0 {
                return bad("resize dimensions must be positive".into());
            }
        }
        Ok(())
    }

    /// JSON echo of the configuration written into every output.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.net,
            &mut self.images,
            &mut self.dataset,
            &mut self.importance_dir,
            &mut self.ground_truth,
            &mut self.output_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Path that must exist before a command runs.
pub(crate) fn require_path(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    let p = p
        .clone()
        .ok_or_else(|| Error::Config(format!("missing path: {what}")))?;
    if !p.exists() {
        return Err(Error::Config(format!("{what} not found: {}", p.display())));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml_str("drawz = 3").is_err());
        assert!(RunConfig::from_toml_str("[solver]\nlamda = 1.0").is_err());
    }

    #[test]
    fn validation_catches_bad_numbers() {
        let mut c = RunConfig::default();
        c.solver.rho = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.localize.grid = vec![0.5, 1.2];
        assert!(c.validate().is_err());
    }

    #[test]
    fn parses_sections() {
        let c = RunConfig::from_toml_str(
            "draws = 7\nseed = 3\n[solver]\nlambda = 0.5\n[interpret]\nclasses = [0, 2]\n[localize]\nthreshold = 0.4",
        )
        .unwrap();
        assert_eq!(c.draws, 7);
        assert_eq!(c.solver.solver_config().lambda, Lambda::Absolute(0.5));
        assert_eq!(c.interpret.classes, vec![0, 2]);
        assert_eq!(c.localize.threshold, Some(0.4));
    }
}
