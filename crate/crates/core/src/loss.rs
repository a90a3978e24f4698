//! Similarity kernels and the training objective.
//!
//! The structure-preserving loss is the binary cross-entropy between the
//! augmentation-invariant latent similarities (targets) and the 2-D
//! similarities:
//!
//! ```text
//! L_sp = -1/(B-1)² Σ_ij [ S̃_ij log S_ij + (1 - S̃_ij) log(1 - S_ij) ]
//! S̃_ij = κ(y(x_i), y(x'_j), ν_Y)      y = projection ∘ gate
//! S_ij  = κ(z(x'_i), z(x'_j), ν_Z)     z = head ∘ y
//! κ(u, v, ν) = (1 + ‖u - v‖² / ν)^(-(ν + 1) / 2)
//! ```
//!
//! The leading minus makes the loss a proper cross-entropy: minimising it
//! pulls `S` towards `S̃`. `S` is clamped to `[clamp, 1 - clamp]` inside the
//! logarithms only.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{self, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub nu_y: f64,
    pub nu_z: f64,
    /// `λ = L_sp / (ratio · L_r)` on the first batch.
    pub lambda_init_ratio: f64,
    /// Multiplicative λ growth per epoch while pruning.
    pub lambda_growth: f64,
    pub clamp: f64,
    /// Keep `i = j` terms in the double sum.
    pub include_diagonal: bool,
    /// Treat the latent targets as constants when differentiating.
    pub detach_target: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            nu_y: 100.0,
            nu_z: 0.01,
            lambda_init_ratio: 0.1,
            lambda_growth: 0.005,
            clamp: 1e-7,
            include_diagonal: true,
            detach_target: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_y > 0.0 && self.nu_z > 0.0) {
            return Err(Error::invalid("degrees of freedom nu_y and nu_z must be > 0"));
        }
        if !(self.clamp > 0.0 && self.clamp < 0.5) {
            return Err(Error::invalid("similarity clamp must lie in (0, 0.5)"));
        }
        if !(self.lambda_init_ratio > 0.0 && self.lambda_growth >= 0.0) {
            return Err(Error::invalid("lambda_init_ratio must be > 0 and lambda_growth >= 0"));
        }
        Ok(())
    }
}

/// κ as a function of the squared distance.
#[inline]
pub fn kernel_sq(d2: f64, nu: f64) -> f64 {
    (1.0 + d2 / nu).powf(-(nu + 1.0) / 2.0)
}

/// dκ/d(d²).
#[inline]
pub fn kernel_sq_grad(d2: f64, nu: f64) -> f64 {
    -(nu + 1.0) / (2.0 * nu) * (1.0 + d2 / nu).powf(-(nu + 3.0) / 2.0)
}

pub fn t_kernel(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>, nu: f64) -> f64 {
    let d2: f64 = u.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    kernel_sq(d2, nu)
}

/// `out[i][j] = ‖a_i - b_j‖²`.
pub fn pairwise_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (ra, rb) = (a.nrows(), b.nrows());
    let rows: Vec<Vec<f64>> = (0..ra)
        .into_par_iter()
        .map(|i| {
            let ai = a.row(i);
            (0..rb)
                .map(|j| {
                    ai.iter()
                        .zip(b.row(j).iter())
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_vec((ra, rb), rows.into_iter().flatten().collect()).expect("shape")
}

/// Similarity matrices for one batch plus the squared distances they came
/// from (needed for the gradient).
#[derive(Debug, Clone)]
pub struct Similarities {
    /// `S̃`: row = original, column = augment.
    pub target: Array2<f64>,
    pub low: Array2<f64>,
    pub target_sq: Array2<f64>,
    pub low_sq: Array2<f64>,
}

pub fn similarities_from(
    latent_orig: ArrayView2<'_, f64>,
    latent_aug: ArrayView2<'_, f64>,
    output_aug: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Result<Similarities> {
    let b = latent_orig.nrows();
    if latent_aug.nrows() != b || output_aug.nrows() != b {
        return Err(Error::DimensionMismatch(format!(
            "batch rows differ: {b} originals, {} augments, {} outputs",
            latent_aug.nrows(),
            output_aug.nrows()
        )));
    }
    let target_sq = pairwise_sq(latent_orig, latent_aug);
    let low_sq = pairwise_sq(output_aug, output_aug);
    Ok(Similarities {
        target: target_sq.mapv(|d| kernel_sq(d, cfg.nu_y)),
        low: low_sq.mapv(|d| kernel_sq(d, cfg.nu_z)),
        target_sq,
        low_sq,
    })
}

/// Row `i` of `originals` must be the un-augmented source of row `i` of
/// `augments`.
pub fn similarity_matrices(
    originals: ArrayView2<'_, f64>,
    augments: ArrayView2<'_, f64>,
    params: &ModelParams,
    cfg: &LossConfig,
) -> Result<Similarities> {
    if originals.dim() != augments.dim() {
        return Err(Error::DimensionMismatch(format!(
            "originals {:?} vs augments {:?}",
            originals.dim(),
            augments.dim()
        )));
    }
    let orig = network::project_batch(originals, params)?;
    let aug = network::forward_batch(augments, params)?;
    similarities_from(
        orig.latent_unbiased().view(),
        aug.latent_unbiased().view(),
        aug.output_unbiased().expect("full pass").view(),
        cfg,
    )
}

fn normalizer(b: usize) -> Result<f64> {
    if b < 2 {
        return Err(Error::invalid("structure-preserving loss needs a batch of at least 2"));
    }
    Ok(1.0 / ((b - 1) * (b - 1)) as f64)
}

fn check_pair(target: &Array2<f64>, low: &Array2<f64>) -> Result<usize> {
    let b = target.nrows();
    if target.dim() != (b, b) || low.dim() != (b, b) {
        return Err(Error::DimensionMismatch(format!(
            "similarity matrices must be square and equal: {:?} vs {:?}",
            target.dim(),
            low.dim()
        )));
    }
    if target.iter().chain(low.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity matrix entry".into()));
    }
    Ok(b)
}

pub fn loss_sp(target: &Array2<f64>, low: &Array2<f64>, cfg: &LossConfig) -> Result<f64> {
    let b = check_pair(target, low)?;
    let norm = normalizer(b)?;
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    let mut sum = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i == j && !cfg.include_diagonal {
                continue;
            }
            let t = target[[i, j]];
            let s = low[[i, j]].clamp(lo, hi);
            sum += t * s.ln() + (1.0 - t) * (1.0 - s).ln();
        }
    }
    Ok(-norm * sum)
}

/// `(∂L_sp/∂S̃, ∂L_sp/∂S)`. Entries where `S` is clamped get zero gradient
/// in the second matrix; the first is zero when targets are detached.
pub fn loss_sp_partials(
    target: &Array2<f64>,
    low: &Array2<f64>,
    cfg: &LossConfig,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let b = check_pair(target, low)?;
    let norm = normalizer(b)?;
    let (lo, hi) = (cfg.clamp, 1.0 - cfg.clamp);
    let mut d_target = Array2::zeros((b, b));
    let mut d_low = Array2::zeros((b, b));
    for i in 0..b {
        for j in 0..b {
            if i == j && !cfg.include_diagonal {
                continue;
            }
            let t = target[[i, j]];
            let raw = low[[i, j]];
            let s = raw.clamp(lo, hi);
            if !cfg.detach_target {
                d_target[[i, j]] = -norm * (s.ln() - (1.0 - s).ln());
            }
            if raw > lo && raw < hi {
                d_low[[i, j]] = -norm * (t / s - (1.0 - t) / (1.0 - s));
            }
        }
    }
    Ok((d_target, d_low))
}

pub fn loss_reg(gate: ArrayView1<'_, f64>) -> f64 {
    gate.iter().map(|w| w.abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaState {
    pub lambda: f64,
    /// Latched once the active-feature target has been met.
    pub frozen: bool,
}

impl LambdaState {
    /// No regularization at all (used when pruning is disabled).
    pub fn disabled() -> Self {
        LambdaState {
            lambda: 0.0,
            frozen: true,
        }
    }
}

/// `λ = L_sp / (ratio · L_r)`.
pub fn lambda_init(loss_sp: f64, loss_reg: f64, ratio: f64) -> Result<LambdaState> {
    if !(loss_reg > 0.0) {
        return Err(Error::invalid(
            "cannot initialize lambda: L1 term is zero (every gate weight is 0)",
        ));
    }
    Ok(LambdaState {
        lambda: loss_sp / (ratio * loss_reg),
        frozen: false,
    })
}

/// Grow λ by `growth` while more than `target` features are open; latch once
/// the target is reached.
pub fn lambda_step(state: LambdaState, active: usize, target: usize, growth: f64) -> LambdaState {
    if state.frozen {
        return state;
    }
    if active <= target {
        return LambdaState {
            frozen: true,
            ..state
        };
    }
    LambdaState {
        lambda: state.lambda * (1.0 + growth),
        frozen: false,
    }
}
