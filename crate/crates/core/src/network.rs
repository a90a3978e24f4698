//! Gate layer, projection MLP and embedding head.
//!
//! ```text
//! x ──gate──▶ x̃ = x ⊙ W ⊙ 1[W > ε] ──projection──▶ y (latent) ──head──▶ z (2-D)
//! ```
//!
//! Hidden layers use a leaky rectifier; the last layer of the projection and
//! of the head are linear. All arithmetic is `f64`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

pub const GATE_INIT: f64 = 0.2;
pub const DEFAULT_EPSILON: f64 = 0.01;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const LATENT_DIM: usize = 80;
pub const OUTPUT_DIM: usize = 2;

/// Rows per parallel work unit. Fixed so results never depend on the
/// number of worker threads.
const ROW_CHUNK: usize = 64;

/// Output widths of each layer after the gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub projection: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            projection: vec![200, 200, 200, LATENT_DIM],
            head: vec![200, OUTPUT_DIM],
        }
    }
}

impl NetworkShape {
    pub fn latent_dim(&self) -> usize {
        *self.projection.last().expect("non-empty projection")
    }

    pub fn validate(&self) -> Result<()> {
        if self.projection.is_empty() || self.head.is_empty() {
            return Err(Error::invalid("projection and head need at least one layer"));
        }
        if self.projection.iter().chain(&self.head).any(|&w| w == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.head.last() != Some(&OUTPUT_DIM) {
            return Err(Error::invalid("embedding head must end in 2 outputs"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// fan_in x fan_out
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn kaiming(fan_in: usize, fan_out: usize, seed: u64, layer: u64) -> Self {
        let sd = (2.0 / fan_in as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        let mut rng = rng::stream(seed, Domain::Init, layer, 0);
        let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut rng));
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Nonnegative per-feature gate weights.
    pub gate: Array1<f64>,
    /// Gate threshold: feature `j` passes only when `gate[j] > epsilon`.
    pub epsilon: f64,
    pub projection: Vec<Dense>,
    pub head: Vec<Dense>,
}

impl ModelParams {
    /// Default architecture `n → 200 → 200 → 200 → 80` / `80 → 200 → 2`.
    pub fn init(n: usize, seed: u64) -> Result<Self> {
        Self::init_with_shape(n, &NetworkShape::default(), DEFAULT_EPSILON, seed)
    }

    pub fn init_with_shape(n: usize, shape: &NetworkShape, epsilon: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("feature count must be at least 1"));
        }
        shape.validate()?;
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("gate threshold {epsilon} must be finite and >= 0")));
        }
        let mut layer = 0u64;
        let mut build = |fan_in: usize, widths: &[usize]| -> Vec<Dense> {
            let mut prev = fan_in;
            widths
                .iter()
                .map(|&w| {
                    let d = Dense::kaiming(prev, w, seed, layer);
                    layer += 1;
                    prev = w;
                    d
                })
                .collect()
        };
        let projection = build(n, &shape.projection);
        let head = build(shape.latent_dim(), &shape.head);
        Ok(ModelParams {
            gate: Array1::from_elem(n, GATE_INIT),
            epsilon,
            projection,
            head,
        })
    }

    pub fn n_features(&self) -> usize {
        self.gate.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.projection.last().map_or(0, Dense::fan_out)
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            projection: self.projection.iter().map(Dense::fan_out).collect(),
            head: self.head.iter().map(Dense::fan_out).collect(),
        }
    }

    pub fn is_open(&self, j: usize) -> bool {
        self.gate[j] > self.epsilon
    }

    /// Effective multiplier per feature: `W_j` when open, 0 otherwise.
    pub fn gate_mask(&self) -> Array1<f64> {
        self.gate.mapv(|w| if w > self.epsilon { w } else { 0.0 })
    }

    /// Check that layer shapes chain and every value is finite.
    pub fn validate(&self) -> Result<()> {
        let mut prev = self.n_features();
        for (name, stack) in [("projection", &self.projection), ("head", &self.head)] {
            if stack.is_empty() {
                return Err(Error::DimensionMismatch(format!("{name} has no layers")));
            }
            for (l, d) in stack.iter().enumerate() {
                if d.fan_in() != prev || d.bias.len() != d.fan_out() {
                    return Err(Error::DimensionMismatch(format!(
                        "{name} layer {l}: weight {:?}, bias {}, expected fan-in {prev}",
                        d.weight.dim(),
                        d.bias.len()
                    )));
                }
                prev = d.fan_out();
            }
        }
        if prev != OUTPUT_DIM {
            return Err(Error::DimensionMismatch(format!("output width {prev}, expected 2")));
        }
        let finite = self.gate.iter().all(|v| v.is_finite())
            && self
                .projection
                .iter()
                .chain(&self.head)
                .all(|d| d.weight.iter().chain(d.bias.iter()).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

#[inline]
pub(crate) fn leaky_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Saved input and pre-activation of one dense layer.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct StackTrace {
    pub layers: Vec<LayerCache>,
    pub output: Array2<f64>,
    /// Output before the final bias. Pairwise distances are built from this
    /// so the bias, which cancels in every difference, leaves no rounding
    /// trace in the loss.
    pub unbiased: Array2<f64>,
}

/// Everything backprop needs from a batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub gated: Array2<f64>,
    pub projection: StackTrace,
    /// Absent for latent-only passes.
    pub head: Option<StackTrace>,
}

impl ForwardTrace {
    pub fn latent(&self) -> &Array2<f64> {
        &self.projection.output
    }

    pub fn output(&self) -> Option<&Array2<f64>> {
        self.head.as_ref().map(|h| &h.output)
    }

    pub fn latent_unbiased(&self) -> &Array2<f64> {
        &self.projection.unbiased
    }

    pub fn output_unbiased(&self) -> Option<&Array2<f64>> {
        self.head.as_ref().map(|h| &h.unbiased)
    }
}

pub(crate) fn matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    if a.nrows() <= ROW_CHUNK {
        return a.dot(&b);
    }
    let parts: Vec<Array2<f64>> = a
        .axis_chunks_iter(Axis(0), ROW_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|chunk| chunk.dot(&b))
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).expect("chunks share column count")
}

fn affine(input: ArrayView2<'_, f64>, layer: &Dense) -> Array2<f64> {
    let mut out = matmul(input, layer.weight.view());
    out += &layer.bias;
    out
}

fn run_stack(input: Array2<f64>, stack: &[Dense], keep: bool) -> StackTrace {
    let mut layers = Vec::with_capacity(if keep { stack.len() } else { 0 });
    let mut current = input;
    let mut unbiased = Array2::zeros((current.nrows(), 0));
    for (l, dense) in stack.iter().enumerate() {
        let last = l + 1 == stack.len();
        let pre = if last {
            unbiased = matmul(current.view(), dense.weight.view());
            &unbiased + &dense.bias
        } else {
            affine(current.view(), dense)
        };
        let next = if last { pre.clone() } else { pre.mapv(leaky) };
        if keep {
            layers.push(LayerCache { input: current, pre });
        }
        current = next;
    }
    StackTrace {
        layers,
        output: current,
        unbiased,
    }
}

pub fn gate_forward(x: ArrayView1<'_, f64>, params: &ModelParams) -> Array1<f64> {
    &x * &params.gate_mask()
}

fn check_width(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<()> {
    if x.ncols() != params.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            params.n_features()
        )));
    }
    Ok(())
}

/// Gate and projection only.
pub fn project_batch(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<ForwardTrace> {
    check_width(x, params)?;
    let gated = &x * &params.gate_mask();
    let projection = run_stack(gated.clone(), &params.projection, true);
    Ok(ForwardTrace {
        input: x.to_owned(),
        gated,
        projection,
        head: None,
    })
}

pub fn forward_batch(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<ForwardTrace> {
    let mut trace = project_batch(x, params)?;
    trace.head = Some(run_stack(trace.projection.output.clone(), &params.head, true));
    Ok(trace)
}

pub fn forward(x: ArrayView1<'_, f64>, params: &ModelParams) -> Result<ForwardTrace> {
    forward_batch(x.insert_axis(Axis(0)), params)
}

/// Latent vectors without retaining a trace.
pub fn latent_batch(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<Array2<f64>> {
    check_width(x, params)?;
    let gated = &x * &params.gate_mask();
    Ok(run_stack(gated, &params.projection, false).output)
}

/// 2-D outputs without retaining a trace.
pub fn embed_batch(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<Array2<f64>> {
    let y = latent_batch(x, params)?;
    Ok(run_stack(y, &params.head, false).output)
}

pub fn active_features(params: &ModelParams) -> Vec<usize> {
    (0..params.n_features()).filter(|&j| params.is_open(j)).collect()
}

/// Row `i` of a batch result as an owned vector.
pub fn row(m: &Array2<f64>, i: usize) -> Array1<f64> {
    m.slice(s![i, ..]).to_owned()
}
