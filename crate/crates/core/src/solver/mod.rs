//! Per-class channel importance by ADMM on the doubly-weighted lasso
//!
//! ```text
//! min_w  ½ Σ_i f^c(X_i) h(d_i) (w·z_i − g^c_i)²  +  λ‖w‖₁
//! ```
//!
//! split as `w = m` with scaled multiplier `q`:
//!
//! ```text
//! w ← (G + ρI)⁻¹ (b + ρ(m + q))      G = Σ a_i z_i z_iᵀ,  b = Σ a_i g_i z_i
//! m ← soft(w − q, λ/ρ)
//! q ← q − (w − m)
//! ```
//!
//! The objective is divided by `max diag G` before iterating, so `ρ` is
//! relative to the data scale (see [`solve_class`]).

mod io;

pub use io::{
    decode_bin, encode_bin, encode_csv, read_importance_bin, read_importance_csv, write_importance_bin,
    write_importance_csv,
};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::GateVector;
use crate::perturb::PerturbedDataset;

/// How the ℓ1 weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Absolute(f64),
    /// Multiple of the largest diagonal entry of the weighted Gram matrix.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: Lambda,
    pub rho: f64,
    /// Proximity bandwidth; `None` means `K / 4`.
    pub sigma2: Option<f64>,
    pub max_iters: usize,
    pub tol_primal: f64,
    pub tol_dual: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: Lambda::Relative(1e-3),
            rho: 1.0,
            sigma2: None,
            max_iters: 5000,
            tol_primal: 1e-6,
            tol_dual: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let lam = match self.lambda {
            Lambda::Absolute(v) | Lambda::Relative(v) => v,
        };
        if !(lam >= 0.0 && lam.is_finite()) {
            return Err(Error::invalid(format!("lambda must be >= 0, got {lam}")));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid(format!("rho must be > 0, got {}", self.rho)));
        }
        if let Some(s) = self.sigma2 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("sigma2 must be > 0, got {s}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        if !(self.tol_primal > 0.0 && self.tol_dual > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        Ok(())
    }

    pub fn sigma2_for(&self, channels: usize) -> f64 {
        self.sigma2.unwrap_or(channels as f64 / 4.0)
    }

    /// Same configuration with λ multiplied by `factor`.
    pub fn scale_lambda(mut self, factor: f64) -> Self {
        self.lambda = match self.lambda {
            Lambda::Absolute(v) => Lambda::Absolute(v * factor),
            Lambda::Relative(v) => Lambda::Relative(v * factor),
        };
        self
    }
}

/// `exp(−‖d − 1‖² / σ²)`, i.e. `exp(−closed / σ²)`.
pub fn proximity_weight(gate: &GateVector, sigma2: f64) -> Result<f64> {
    if sigma2.is_nan() || sigma2 <= 0.0 {
        return Err(Error::invalid(format!("sigma2 must be > 0, got {sigma2}")));
    }
    Ok((-(gate.closed_count() as f64) / sigma2).exp())
}

/// Elementwise square root of the original prediction.
pub fn loyalty_weight(base_pred: &[f32]) -> Result<Vec<f64>> {
    base_pred
        .iter()
        .map(|&f| {
            if f.is_nan() || f < 0.0 {
                Err(Error::invalid(format!("prediction entry {f} is negative")))
            } else {
                Ok((f as f64).sqrt())
            }
        })
        .collect()
}

/// `sign(x) · max(|x| − t, 0)`.
pub fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Weighted regression problem for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProblem {
    pub class_id: usize,
    /// `rows × K` design matrix of pooled activations.
    pub design: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// `f^c(X_s) · h(d_n)` per row.
    pub weights: DVector<f64>,
}

impl ClassProblem {
    pub fn new(class_id: usize, design: DMatrix<f64>, targets: DVector<f64>, weights: DVector<f64>) -> Result<Self> {
        if design.nrows() != targets.len() || design.nrows() != weights.len() {
            return Err(Error::invalid("problem dimensions are inconsistent"));
        }
        if design.ncols() == 0 {
            return Err(Error::invalid("problem has no channels"));
        }
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("sample weights must be finite and >= 0"));
        }
        if design.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("problem contains non-finite values"));
        }
        Ok(Self {
            class_id,
            design,
            targets,
            weights,
        })
    }

    pub fn rows(&self) -> usize {
        self.design.nrows()
    }

    pub fn channels(&self) -> usize {
        self.design.ncols()
    }

    /// `(Σ a_i z_i z_iᵀ, Σ a_i g_i z_i)`.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.channels();
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..self.rows() {
            let a = self.weights[i];
            if a == 0.0 {
                continue;
            }
            let z = self.design.row(i);
            for r in 0..k {
                let az = a * z[r];
                rhs[r] += az * self.targets[i];
                for c in 0..k {
                    gram[(r, c)] += az * z[c];
                }
            }
        }
        (gram, rhs)
    }

    /// `½ Σ a_i (w·z_i − g_i)² + λ‖w‖₁`.
    pub fn objective(&self, w: &[f64], lambda: f64) -> f64 {
        let mut loss = 0.0;
        for i in 0..self.rows() {
            let pred: f64 = self.design.row(i).iter().zip(w).map(|(z, w)| z * w).sum();
            loss += self.weights[i] * (pred - self.targets[i]).powi(2);
        }
        0.5 * loss + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Builds the class-`c` problem: row `i` holds the pooled vector of record
/// `i`, target `g^c`, and weight `f^c · h(d)`.
pub fn assemble_problem(ds: &PerturbedDataset, class_id: usize, sigma2: f64) -> Result<ClassProblem> {
    let h = &ds.header;
    if class_id >= h.classes {
        return Err(Error::invalid(format!("class {class_id} out of range ({})", h.classes)));
    }
    if ds.records.is_empty() {
        return Err(Error::invalid("perturbed dataset is empty"));
    }
    let rows = ds.records.len();
    let mut design = DMatrix::<f64>::zeros(rows, h.channels);
    let mut targets = DVector::<f64>::zeros(rows);
    let mut weights = DVector::<f64>::zeros(rows);
    for (i, rec) in ds.records.iter().enumerate() {
        for (k, &z) in rec.pooled.iter().enumerate() {
            design[(i, k)] = z as f64;
        }
        targets[i] = rec.pert_pred[class_id] as f64;
        let f = rec.base_pred[class_id];
        if f.is_nan() || f < 0.0 {
            return Err(Error::invalid(format!("prediction entry {f} is negative")));
        }
        weights[i] = f as f64 * proximity_weight(&rec.gate, sigma2)?;
    }
    ClassProblem::new(class_id, design, targets, weights)
}

/// Residual trace length kept for diagnostics.
pub const RESIDUAL_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub lambda: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    /// `max(primal, dual)` over the last iterations, oldest first.
    pub residual_tail: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSolution {
    /// The sparse split variable `m` at termination.
    pub weights: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn resolve_lambda(lambda: Lambda, gram: &DMatrix<f64>) -> f64 {
    match lambda {
        Lambda::Absolute(v) => v,
        Lambda::Relative(s) => {
            let max_diag = gram.diagonal().iter().copied().fold(0.0, f64::max);
            s * max_diag
        }
    }
}

/// Runs ADMM on one class problem and returns the sparse split variable.
///
/// The problem is solved in Jacobi-scaled coordinates `u_k = sqrt(G_kk) w_k`,
/// which gives the Gram matrix a unit diagonal and turns the penalty into a
/// per-channel threshold `λ / sqrt(G_kk)`; the minimizer is unchanged and
/// `ρ = 1` suits problems of any magnitude. Residuals are measured in the
/// scaled coordinates. The factorization of `G + ρI` is computed once.
pub fn solve_class(p: &ClassProblem, cfg: &SolverConfig) -> Result<ClassSolution> {
    cfg.validate()?;
    let k = p.channels();
    let (gram, rhs) = p.normal_equations();
    let lambda = resolve_lambda(cfg.lambda, &gram);
    let rho = cfg.rho;

    // channels that never fire keep unit scale; their weight is fixed by λ alone
    let d = DVector::from_iterator(k, gram.diagonal().iter().map(|&g| if g > 0.0 { g.sqrt() } else { 1.0 }));
    let gram = DMatrix::from_fn(k, k, |i, j| gram[(i, j)] / (d[i] * d[j]));
    let rhs = rhs.component_div(&d);
    let system = &gram + DMatrix::<f64>::identity(k, k) * rho;
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("class {}: system matrix is not positive definite", p.class_id)))?;

    let thresholds = d.map(|dk| lambda / dk / rho);
    let mut m = DVector::<f64>::zeros(k);
    let mut q = DVector::<f64>::zeros(k);
    let mut tail = Vec::with_capacity(RESIDUAL_WINDOW);
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let w = chol.solve(&(&rhs + (&m + &q) * rho));
        let m_next = (&w - &q).zip_map(&thresholds, soft);
        let gap = &w - &m_next;
        q -= &gap;
        primal = gap.amax();
        dual = rho * (&m_next - &m).amax();
        m = m_next;

        if !(primal.is_finite() && dual.is_finite()) || m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                class_id: p.class_id,
                iteration: it,
            });
        }
        if tail.len() == RESIDUAL_WINDOW {
            tail.remove(0);
        }
        tail.push(primal.max(dual));
        if primal < cfg.tol_primal && dual < cfg.tol_dual {
            converged = true;
            break;
        }
    }

    Ok(ClassSolution {
        weights: m.component_div(&d).iter().copied().collect(),
        diagnostics: Diagnostics {
            lambda,
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            converged,
            residual_tail: tail,
        },
    })
}

/// Learned `C × K` importance for one gate site.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub site: usize,
    pub rows: Vec<Vec<f64>>,
    pub meta: ImportanceMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMeta {
    pub site: usize,
    pub net_hash: String,
    pub rho: f64,
    pub sigma2: f64,
    pub lambda: Lambda,
    pub classes: Vec<Diagnostics>,
    /// Effective run configuration, echoed for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<serde_json::Value>,
}

impl ImportanceMatrix {
    pub fn from_rows(site: usize, rows: Vec<Vec<f64>>) -> Self {
        Self {
            site,
            meta: ImportanceMeta {
                site,
                net_hash: String::new(),
                rho: 0.0,
                sigma2: 0.0,
                lambda: Lambda::Absolute(0.0),
                classes: Vec::new(),
                provenance: None,
            },
            rows,
        }
    }

    pub fn classes(&self) -> usize {
        self.rows.len()
    }

    pub fn channels(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, class_id: usize) -> Result<&[f64]> {
        self.rows
            .get(class_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::invalid(format!("class {class_id} out of range ({})", self.rows.len())))
    }

    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| r.iter().filter(|&&v| v != 0.0).count())
            .collect()
    }
}

/// Solves every class independently (in parallel) and stacks the rows.
pub fn solve_all(ds: &PerturbedDataset, cfg: &SolverConfig) -> Result<ImportanceMatrix> {
    cfg.validate()?;
    let sigma2 = cfg.sigma2_for(ds.header.channels);
    let results: Vec<Result<ClassSolution>> = (0..ds.header.classes)
        .into_par_iter()
        .map(|c| {
            let p = assemble_problem(ds, c, sigma2)?;
            solve_class(&p, cfg)
        })
        .collect();

    let mut rows = Vec::with_capacity(results.len());
    let mut diags = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        match r {
            Ok(sol) => {
                if !sol.diagnostics.converged {
                    log::warn!(
                        "class {c}: stopped at max_iters ({}), primal {:.3e} dual {:.3e}",
                        sol.diagnostics.iterations,
                        sol.diagnostics.primal_residual,
                        sol.diagnostics.dual_residual
                    );
                }
                rows.push(sol.weights);
                diags.push(sol.diagnostics);
            }
            Err(e) => failures.push(Error::Class {
                class_id: c,
                source: Box::new(e),
            }),
        }
    }
    match failures.len() {
        0 => {}
        1 => return Err(failures.remove(0)),
        _ => return Err(Error::Multiple(failures)),
    }

    Ok(ImportanceMatrix {
        site: ds.header.site,
        rows,
        meta: ImportanceMeta {
            site: ds.header.site,
            net_hash: ds.header.net_hash.clone(),
            rho: cfg.rho,
            sigma2,
            lambda: cfg.lambda,
            classes: diags,
            provenance: None,
        },
    })
}
