//! Cluster discovery on the embedding and the global, local and
//! transformation feature importances.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::loss::kernel_sq;
use crate::network::{self, ModelParams};
use crate::rng::{stream, Domain};

pub const REPORT_VERSION: &str = "evnet-importance/1";
pub const CLUSTER_VERSION: &str = "evnet-clusters/1";
/// Draws whose augmented value is closer than this to the original are
/// skipped.
pub const DENOMINATOR_GUARD: f64 = 1e-8;
pub const KMEANS_TOL: f64 = 1e-6;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub version: String,
    /// K x 2 in embedding space.
    pub centers: Array2<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center, ties to the lower id.
fn nearest(p: ArrayView1<'_, f64>, centers: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.axis_iter(Axis(0)).enumerate() {
        let d = sq(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centers.nrows()
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == c).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k()];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    pub fn predict(&self, z: ArrayView2<'_, f64>) -> Vec<usize> {
        z.axis_iter(Axis(0)).map(|p| nearest(p, self.centers.view()).0).collect()
    }

    /// Turns a user selection into an ad-hoc cluster: the selection centroid
    /// replaces the center of the cluster most selected points belong to,
    /// the other centers are kept. Returns the new model and the id of the
    /// selection cluster, whose members are exactly `point_ids`.
    pub fn with_selection(&self, embedding: ArrayView2<'_, f64>, point_ids: &[usize]) -> Result<(ClusterModel, usize)> {
        let m = self.assignments.len();
        if embedding.nrows() != m {
            return Err(Error::DimensionMismatch(format!(
                "embedding has {} rows, cluster model {m}",
                embedding.nrows()
            )));
        }
        if point_ids.is_empty() {
            return Err(Error::invalid("selection is empty"));
        }
        let mut selected = vec![false; m];
        for &i in point_ids {
            if i >= m {
                return Err(Error::invalid(format!("point id {i} out of range (M = {m})")));
            }
            selected[i] = true;
        }
        let mut votes = vec![0usize; self.k()];
        for &i in point_ids {
            votes[self.assignments[i]] += 1;
        }
        let c = (0..votes.len()).fold(0, |b, j| if votes[j] > votes[b] { j } else { b });
        let mut centers = self.centers.clone();
        let mut centroid = Array1::zeros(embedding.ncols());
        let mut count = 0.0;
        for (i, _) in selected.iter().enumerate().filter(|(_, &s)| s) {
            centroid += &embedding.row(i);
            count += 1.0;
        }
        centers.row_mut(c).assign(&(centroid / count));
        let others: Vec<usize> = (0..self.k()).filter(|&j| j != c).collect();
        let assignments = (0..m)
            .map(|i| {
                if selected[i] || others.is_empty() {
                    return c;
                }
                let p = embedding.row(i);
                let mut best = (others[0], f64::INFINITY);
                for &j in &others {
                    let d = sq(p, centers.row(j));
                    if d < best.1 {
                        best = (j, d);
                    }
                }
                best.0
            })
            .collect::<Vec<_>>();
        let inertia = (0..m).map(|i| sq(embedding.row(i), centers.row(assignments[i]))).sum();
        Ok((
            ClusterModel {
                version: CLUSTER_VERSION.to_string(),
                centers,
                assignments,
                inertia,
                iterations: 0,
            },
            c,
        ))
    }
}

/// K-means++ seeding followed by Lloyd iterations.
pub fn kmeans_fit(points: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<ClusterModel> {
    let m = points.nrows();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("K = {k} must satisfy 1 <= K <= M = {m}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding coordinate".into()));
    }
    let mut rng = stream(seed, Domain::KMeans, 0, 0);
    let mut centers = Array2::zeros((k, points.ncols()));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..m)));
    let mut d2: Vec<f64> = (0..m).map(|i| sq(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && u < acc {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| (0..m).rev().find(|&i| d2[i] > 0.0).expect("total > 0"))
        } else {
            rng.random_range(0..m)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..m {
            d2[i] = d2[i].min(sq(points.row(i), centers.row(c)));
        }
    }

    let mut assignments = vec![0; m];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        for i in 0..m {
            assignments[i] = nearest(points.row(i), centers.view()).0;
        }
        let mut sums = Array2::<f64>::zeros(centers.raw_dim());
        let mut counts = vec![0usize; k];
        for i in 0..m {
            let mut row = sums.row_mut(assignments[i]);
            row += &points.row(i);
            counts[assignments[i]] += 1;
        }
        let mut next = centers.clone();
        for c in 0..k {
            if counts[c] > 0 {
                next.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            } else {
                // reseed at the point farthest from its current center
                let far = (0..m)
                    .map(|i| (i, sq(points.row(i), next.row(assignments[i]))))
                    .fold((0, -1.0), |b, (i, d)| if d > b.1 { (i, d) } else { b })
                    .0;
                next.row_mut(c).assign(&points.row(far));
                assignments[far] = c;
            }
        }
        let moved = (0..k).map(|c| sq(next.row(c), centers.row(c)).sqrt()).fold(0.0, f64::max);
        centers = next;
        if moved < KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for i in 0..m {
        let (c, d) = nearest(points.row(i), centers.view());
        assignments[i] = c;
        inertia += d;
    }
    Ok(ClusterModel {
        version: CLUSTER_VERSION.to_string(),
        centers,
        assignments,
        inertia,
        iterations,
    })
}

/// Softmax over the t-kernel similarities between `z` and every center.
pub fn cluster_similarity(z: ArrayView1<'_, f64>, centers: ArrayView2<'_, f64>, nu_z: f64) -> Array1<f64> {
    let s: Array1<f64> = centers.axis_iter(Axis(0)).map(|c| kernel_sq(sq(z, c), nu_z)).collect();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = s.mapv(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceKind {
    Global,
    Local,
    Transformation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub index: usize,
    pub value: f64,
    pub skipped_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub version: String,
    pub kind: ImportanceKind,
    pub clusters: Vec<usize>,
    pub features: Vec<FeatureImportance>,
    /// Rows averaged over (0 for global reports).
    pub sample_count: usize,
    pub repeats: usize,
    pub seed: u64,
    pub active: Vec<bool>,
    pub warnings: Vec<String>,
}

impl ImportanceReport {
    pub fn values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.value).collect()
    }

    /// Feature index with the largest value, ties to the lower index.
    pub fn top(&self) -> Option<usize> {
        self.features
            .iter()
            .fold(None, |best: Option<&FeatureImportance>, f| match best {
                Some(b) if b.value >= f.value => Some(b),
                _ => Some(f),
            })
            .map(|f| f.index)
    }
}

fn names_for(params: &ModelParams, names: &[String]) -> Result<Vec<String>> {
    let n = params.n_features();
    if names.is_empty() {
        return Ok((0..n).map(|j| format!("f{j}")).collect());
    }
    if names.len() != n {
        return Err(Error::DimensionMismatch(format!("{} names for {n} features", names.len())));
    }
    Ok(names.to_vec())
}

/// `W_f / max W` over the effective gate, so closed features score 0.
pub fn global_importance(params: &ModelParams, names: &[String]) -> Result<ImportanceReport> {
    let names = names_for(params, names)?;
    let mask = params.gate_mask();
    let max = mask.iter().copied().fold(0.0, f64::max);
    let mut warnings = Vec::new();
    let values: Vec<f64> = if max > 0.0 {
        mask.iter().map(|w| w / max).collect()
    } else {
        warnings.push("every gate is closed; all importances are 0".to_string());
        vec![0.0; mask.len()]
    };
    Ok(ImportanceReport {
        version: REPORT_VERSION.to_string(),
        kind: ImportanceKind::Global,
        clusters: Vec::new(),
        features: names
            .into_iter()
            .zip(values)
            .enumerate()
            .map(|(index, (name, value))| FeatureImportance {
                name,
                index,
                value,
                skipped_draws: 0,
            })
            .collect(),
        sample_count: 0,
        repeats: 0,
        seed: 0,
        active: (0..params.n_features()).map(|j| params.is_open(j)).collect(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub augment: AugmentConfig,
    /// Augmentation draws per sample.
    pub repeats: usize,
    pub nu_z: f64,
    pub seed: u64,
    /// Average over every row instead of the queried cluster's members.
    pub average_all: bool,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            augment: AugmentConfig::default(),
            repeats: 8,
            nu_z: crate::loss::LossConfig::default().nu_z,
            seed: 0,
            average_all: false,
        }
    }
}

/// Per-sample sums of `|numerator / (τ - x)|` and skip counts per feature.
struct Accumulator {
    sum: Vec<f64>,
    used: Vec<usize>,
    skipped: Vec<usize>,
}

/// Shared machinery: for every sample and draw, embed the `n` paired
/// vectors `x⁺f` plus the common `x⁻f`, then fold the saliency for the
/// requested clusters.
fn saliency(
    d: &Dataset,
    params: &ModelParams,
    model: &ClusterModel,
    c1: usize,
    c2: Option<usize>,
    cfg: &ExplainConfig,
) -> Result<(Vec<f64>, Vec<usize>, usize)> {
    let n = d.n_features();
    if n != params.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {n} features, model expects {}",
            params.n_features()
        )));
    }
    if model.assignments.len() != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "cluster model covers {} rows, dataset has {}",
            model.assignments.len(),
            d.len()
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    for &c in std::iter::once(&c1).chain(c2.iter()) {
        if c >= model.k() {
            return Err(Error::invalid(format!("cluster {c} out of range (K = {})", model.k())));
        }
        if model.members(c).is_empty() {
            return Err(Error::EmptyCluster(c));
        }
    }
    let samples: Vec<usize> = if cfg.average_all {
        (0..d.len()).collect()
    } else {
        model.members(c1)
    };
    let centers = model.centers.view();

    let per_sample = samples
        .par_iter()
        .map(|&i| -> Result<Accumulator> {
            let mut acc = Accumulator {
                sum: vec![0.0; n],
                used: vec![0; n],
                skipped: vec![0; n],
            };
            let x = d.row(i);
            for r in 0..cfg.repeats {
                let mut rng = stream(cfg.seed, Domain::Explain, i as u64, r as u64);
                let aug = augment::augment_point(d, i, &cfg.augment, &mut rng)?;
                let mut batch = Array2::zeros((n + 1, n));
                for f in 0..n {
                    let pair = aug.feature_pair(x, f);
                    batch.row_mut(f).assign(&pair.plus);
                }
                batch.row_mut(n).assign(&aug.point);
                let z = network::embed_batch(batch.view(), params)?;
                let p_minus = cluster_similarity(z.row(n), centers, cfg.nu_z);
                for f in 0..n {
                    let denom = aug.point[f] - x[f];
                    if denom.abs() < DENOMINATOR_GUARD {
                        acc.skipped[f] += 1;
                        continue;
                    }
                    let p_plus = cluster_similarity(z.row(f), centers, cfg.nu_z);
                    let delta = |c: usize| p_plus[c] - p_minus[c];
                    let num = match c2 {
                        None => delta(c1),
                        Some(c2) => delta(c1) - delta(c2),
                    };
                    acc.sum[f] += (num / denom).abs();
                    acc.used[f] += 1;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sum = vec![0.0; n];
    let mut used = vec![0usize; n];
    let mut skipped = vec![0usize; n];
    for acc in &per_sample {
        for f in 0..n {
            sum[f] += acc.sum[f];
            used[f] += acc.used[f];
            skipped[f] += acc.skipped[f];
        }
    }
    let values = (0..n)
        .map(|f| if used[f] > 0 { sum[f] / used[f] as f64 } else { 0.0 })
        .collect();
    Ok((values, skipped, samples.len()))
}

fn build_report(
    kind: ImportanceKind,
    clusters: Vec<usize>,
    params: &ModelParams,
    names: &[String],
    (values, skipped, samples): (Vec<f64>, Vec<usize>, usize),
    cfg: &ExplainConfig,
) -> Result<ImportanceReport> {
    let names = names_for(params, names)?;
    let mut warnings = Vec::new();
    for (f, &s) in skipped.iter().enumerate() {
        if s == samples * cfg.repeats {
            warnings.push(format!("feature {} had every draw skipped", names[f]));
        }
    }
    Ok(ImportanceReport {
        version: REPORT_VERSION.to_string(),
        kind,
        clusters,
        features: names
            .into_iter()
            .zip(values.into_iter().zip(skipped))
            .enumerate()
            .map(|(index, (name, (value, skipped_draws)))| FeatureImportance {
                name,
                index,
                value,
                skipped_draws,
            })
            .collect(),
        sample_count: samples,
        repeats: cfg.repeats,
        seed: cfg.seed,
        active: (0..params.n_features()).map(|j| params.is_open(j)).collect(),
        warnings,
    })
}

/// Sensitivity of membership in cluster `c` to each feature. `d` must be
/// the normalized data the model was trained on, with its neighbour graph.
pub fn local_importance(
    d: &Dataset,
    params: &ModelParams,
    model: &ClusterModel,
    c: usize,
    cfg: &ExplainConfig,
) -> Result<ImportanceReport> {
    let raw = saliency(d, params, model, c, None, cfg)?;
    build_report(ImportanceKind::Local, vec![c], params, &d.feature_names, raw, cfg)
}

/// Features that move samples of `c1` towards `c2`.
pub fn transform_importance(
    d: &Dataset,
    params: &ModelParams,
    model: &ClusterModel,
    c1: usize,
    c2: usize,
    cfg: &ExplainConfig,
) -> Result<ImportanceReport> {
    let raw = saliency(d, params, model, c1, Some(c2), cfg)?;
    build_report(ImportanceKind::Transformation, vec![c1, c2], params, &d.feature_names, raw, cfg)
}
