//! Seeded fixture generators.
//!
//! Specs are written as `kind:key=value,...`, e.g. `gaussians:k=3,per=100,dim=5`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Synthetic {
    /// `k` isotropic unit-variance blobs in `dim` dimensions whose centers are
    /// at least `sep` standard deviations apart.
    Gaussians {
        k: usize,
        per: usize,
        dim: usize,
        sep: f64,
    },
    /// 3-D swiss roll, labels are `classes` equal-width bins of the roll angle.
    SwissRoll {
        points: usize,
        noise: f64,
        classes: usize,
    },
    /// Gaussian blobs followed by `noise` i.i.d. uniform columns.
    NoisyGaussians {
        k: usize,
        per: usize,
        dim: usize,
        noise: usize,
        sep: f64,
    },
}

impl Synthetic {
    pub fn gaussians(k: usize, per: usize, dim: usize) -> Self {
        Synthetic::Gaussians {
            k,
            per,
            dim,
            sep: 10.0,
        }
    }

    pub fn noisy_gaussians(k: usize, per: usize, dim: usize, noise: usize) -> Self {
        Synthetic::NoisyGaussians {
            k,
            per,
            dim,
            noise,
            sep: 10.0,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        match *self {
            Synthetic::Gaussians { k, per, dim, sep } => {
                check_blobs(k, per, dim, sep)?;
                let mut rng = rng::stream(seed, Domain::Synthetic, 0, 0);
                let (x, labels) = blobs(&mut rng, k, per, dim, sep);
                named(x)?.with_labels(labels)
            }
            Synthetic::NoisyGaussians {
                k,
                per,
                dim,
                noise,
                sep,
            } => {
                check_blobs(k, per, dim, sep)?;
                let mut rng = rng::stream(seed, Domain::Synthetic, 0, 0);
                let (informative, labels) = blobs(&mut rng, k, per, dim, sep);
                let m = k * per;
                let unit = Uniform::new(0.0, 1.0).expect("valid range");
                let mut x = Array2::zeros((m, dim + noise));
                x.slice_mut(ndarray::s![.., ..dim]).assign(&informative);
                for i in 0..m {
                    for j in dim..dim + noise {
                        x[[i, j]] = unit.sample(&mut rng);
                    }
                }
                let mut ds = named(x)?.with_labels(labels)?;
                ds.noise_features = (dim..dim + noise).collect();
                Ok(ds)
            }
            Synthetic::SwissRoll {
                points,
                noise,
                classes,
            } => {
                if points == 0 || classes == 0 || !(noise >= 0.0) {
                    return Err(Error::invalid(
                        "swiss_roll needs points >= 1, classes >= 1, noise >= 0",
                    ));
                }
                let mut rng = rng::stream(seed, Domain::Synthetic, 0, 0);
                let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sd");
                let mut x = Array2::zeros((points, 3));
                let mut labels = Vec::with_capacity(points);
                for i in 0..points {
                    let u: f64 = rng.random();
                    let t = 1.5 * PI * (1.0 + 2.0 * u);
                    let h: f64 = 21.0 * rng.random::<f64>();
                    let mut e = [0.0; 3];
                    if noise > 0.0 {
                        for v in &mut e {
                            *v = jitter.sample(&mut rng);
                        }
                    }
                    x[[i, 0]] = t * t.cos() + e[0];
                    x[[i, 1]] = h + e[1];
                    x[[i, 2]] = t * t.sin() + e[2];
                    labels.push(((u * classes as f64) as usize).min(classes - 1));
                }
                named(x)?.with_labels(labels)
            }
        }
    }
}

fn check_blobs(k: usize, per: usize, dim: usize, sep: f64) -> Result<()> {
    if k == 0 || per == 0 || dim == 0 || !(sep >= 0.0) {
        return Err(Error::invalid(
            "gaussian fixtures need k >= 1, per >= 1, dim >= 1, sep >= 0",
        ));
    }
    Ok(())
}

fn named(x: Array2<f64>) -> Result<Dataset> {
    let names = (0..x.ncols()).map(|j| format!("f{j}")).collect();
    Dataset::new(x, names)
}

/// Rows are grouped by cluster: rows `c*per..(c+1)*per` have label `c`.
fn blobs<R: Rng>(rng: &mut R, k: usize, per: usize, dim: usize, sep: f64) -> (Array2<f64>, Vec<usize>) {
    let side = sep * 2.0 * (k as f64).powf(1.0 / dim as f64);
    let box_dist = Uniform::new_inclusive(0.0, side).expect("valid range");
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..1000 {
            let cand: Vec<f64> = (0..dim).map(|_| box_dist.sample(rng)).collect();
            let gap = centers
                .iter()
                .map(|c| c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            if gap >= sep {
                best = Some((gap, cand));
                break;
            }
            if best.as_ref().is_none_or(|(g, _)| gap > *g) {
                best = Some((gap, cand));
            }
        }
        centers.push(best.expect("at least one candidate").1);
    }
    let unit = Normal::new(0.0, 1.0).expect("valid sd");
    let mut x = Array2::zeros((k * per, dim));
    let mut labels = Vec::with_capacity(k * per);
    for (c, center) in centers.iter().enumerate() {
        for p in 0..per {
            let i = c * per + p;
            for j in 0..dim {
                x[[i, j]] = center[j] + unit.sample(rng);
            }
            labels.push(c);
        }
    }
    (x, labels)
}

impl FromStr for Synthetic {
    type Err = Error;

    fn from_str(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut params = BTreeMap::new();
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got {pair:?}")))?;
            params.insert(k.trim().to_owned(), v.trim().to_owned());
        }
        let mut take = |key: &str, default: Option<f64>| -> Result<f64> {
            match params.remove(key) {
                Some(v) => v
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("{kind}: {key}={v:?} is not a number"))),
                None => default.ok_or_else(|| Error::invalid(format!("{kind}: missing {key}="))),
            }
        };
        let count = |v: f64, key: &str| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::invalid(format!("{key} must be a nonnegative integer")))
            }
        };
        let parsed = match kind {
            "gaussians" => Synthetic::Gaussians {
                k: count(take("k", Some(3.0))?, "k")?,
                per: count(take("per", Some(100.0))?, "per")?,
                dim: count(take("dim", Some(5.0))?, "dim")?,
                sep: take("sep", Some(10.0))?,
            },
            "noisy_gaussians" => Synthetic::NoisyGaussians {
                k: count(take("k", Some(2.0))?, "k")?,
                per: count(take("per", Some(50.0))?, "per")?,
                dim: count(take("dim", Some(4.0))?, "dim")?,
                noise: count(take("noise", Some(6.0))?, "noise")?,
                sep: take("sep", Some(10.0))?,
            },
            "swiss_roll" => Synthetic::SwissRoll {
                points: count(take("points", Some(500.0))?, "points")?,
                noise: take("noise", Some(0.0))?,
                classes: count(take("classes", Some(4.0))?, "classes")?,
            },
            other => {
                return Err(Error::invalid(format!(
                    "unknown synthetic kind {other:?} (gaussians, swiss_roll, noisy_gaussians)"
                )))
            }
        };
        if let Some(extra) = params.keys().next() {
            return Err(Error::invalid(format!("{kind}: unknown parameter {extra:?}")));
        }
        Ok(parsed)
    }
}
