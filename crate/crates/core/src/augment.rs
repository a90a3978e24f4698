//! Neighbour interpolation augmentation and the per-feature paired
//! augmentations used by the saliency explanations.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AugmentMode {
    #[default]
    Unsupervised,
    /// Neighbours restricted to the same label.
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Upper bound of the interpolation ratio, `r ~ U(0, p_u)`.
    pub p_u: f64,
    pub mode: AugmentMode,
    /// Draw one ratio per point instead of one per feature.
    pub shared_ratio: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p_u: 2.0,
            mode: AugmentMode::Unsupervised,
            shared_ratio: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_u >= 0.0 && self.p_u.is_finite()) {
            return Err(Error::invalid(format!("p_u = {} must be finite and >= 0", self.p_u)));
        }
        Ok(())
    }
}

/// One augmented sample and the bookkeeping that identifies its original.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    /// Row of the original point; the inverse map is this index.
    pub source: usize,
    /// Neighbour interpolated towards, `None` for the identity fallback.
    pub neighbor: Option<usize>,
    pub ratios: Vec<f64>,
    pub point: Array1<f64>,
    /// Set when the supervised neighbourhood was empty.
    pub identity_fallback: bool,
}

/// `x⁺f` keeps the original value at `f`, `x⁻f` the augmented one; every
/// other coordinate is shared.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePair {
    pub plus: Array1<f64>,
    pub minus: Array1<f64>,
    /// Augmented value of feature `f`; the saliency denominator is
    /// `tau_f - x[f]`.
    pub tau_f: f64,
}

/// `(1 - r) x + r x̃` per coordinate.
pub fn interpolate(x: ArrayView1<'_, f64>, neighbor: ArrayView1<'_, f64>, ratios: &[f64]) -> Array1<f64> {
    x.iter()
        .zip(neighbor.iter())
        .zip(ratios)
        .map(|((&a, &b), &r)| (1.0 - r) * a + r * b)
        .collect()
}

fn neighborhood<'a>(d: &'a Dataset, i: usize, mode: AugmentMode) -> Result<&'a [usize]> {
    let lists = match mode {
        AugmentMode::Unsupervised => d.neighbors.as_ref(),
        AugmentMode::Supervised => d.supervised_neighbors.as_ref(),
    }
    .ok_or_else(|| Error::invalid(format!("{mode:?} neighbour lists have not been built")))?;
    lists
        .get(i)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::invalid(format!("point {i} out of range")))
}

pub fn augment_point<R: Rng + ?Sized>(
    d: &Dataset,
    i: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Augmentation> {
    let neigh = neighborhood(d, i, cfg.mode)?;
    let x = d.row(i);
    if neigh.is_empty() {
        if cfg.mode == AugmentMode::Unsupervised {
            return Err(Error::invalid(format!("point {i} has no neighbours")));
        }
        return Ok(Augmentation {
            source: i,
            neighbor: None,
            ratios: vec![0.0; x.len()],
            point: x.to_owned(),
            identity_fallback: true,
        });
    }
    let j = neigh[rng.random_range(0..neigh.len())];
    let ratios: Vec<f64> = if cfg.shared_ratio {
        vec![cfg.p_u * rng.random::<f64>(); x.len()]
    } else {
        (0..x.len()).map(|_| cfg.p_u * rng.random::<f64>()).collect()
    };
    Ok(Augmentation {
        source: i,
        neighbor: Some(j),
        point: interpolate(x, d.row(j), &ratios),
        ratios,
        identity_fallback: false,
    })
}

impl Augmentation {
    /// Paired vectors for feature `f` built from this draw. `original` must be
    /// the row the augmentation was drawn from.
    pub fn feature_pair(&self, original: ArrayView1<'_, f64>, f: usize) -> FeaturePair {
        let minus = self.point.clone();
        let mut plus = self.point.clone();
        plus[f] = original[f];
        FeaturePair {
            tau_f: minus[f],
            plus,
            minus,
        }
    }
}

pub fn augment_feature_pair<R: Rng + ?Sized>(
    d: &Dataset,
    i: usize,
    f: usize,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<FeaturePair> {
    if f >= d.n_features() {
        return Err(Error::invalid(format!("feature {f} out of range")));
    }
    let aug = augment_point(d, i, cfg, rng)?;
    Ok(aug.feature_pair(d.row(i), f))
}
