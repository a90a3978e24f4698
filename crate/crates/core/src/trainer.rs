//! The training loop, the fitted [`Model`] and checkpoints.

use std::path::Path;
use std::time::{Duration, Instant};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig, AugmentMode};
use crate::dataset::{Dataset, NormalizeMode, Normalizer};
use crate::error::{Error, Result};
use crate::explain::ExplainConfig;
use crate::loss::{self, LambdaState, LossConfig};
use crate::network::{self, ModelParams, NetworkShape, DEFAULT_EPSILON};
use crate::optim::{self, AdamWConfig, AdamWState};
use crate::rng::{stream, Domain};

pub const CHECKPOINT_VERSION: &str = "evnet-ckpt/1";

/// Grid values for `nu_z` and `k` offered by the CLI and UI.
pub const NU_Z_GRID: [f64; 4] = [1e-3, 5e-3, 1e-2, 1e-1];
pub const K_GRID: [usize; 5] = [3, 5, 8, 10, 15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Capped at the number of rows.
    pub batch_size: usize,
    pub k: usize,
    pub p_u: f64,
    pub nu_y: f64,
    pub nu_z: f64,
    pub lr: f64,
    /// Target number of open gates; `None` means every feature and disables
    /// pruning.
    pub target_features: Option<usize>,
    pub seed: u64,
    pub supervised: bool,
    pub detach_target: bool,
    pub include_diagonal: bool,
    pub shared_ratio: bool,
    pub epsilon: f64,
    pub lambda_init_ratio: f64,
    pub lambda_growth: f64,
    pub weight_decay: f64,
    pub clamp: f64,
    pub normalize: NormalizeMode,
    pub shape: NetworkShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let l = LossConfig::default();
        TrainConfig {
            epochs: 400,
            batch_size: 1000,
            k: 5,
            p_u: 2.0,
            nu_y: l.nu_y,
            nu_z: l.nu_z,
            lr: 1e-3,
            target_features: None,
            seed: 0,
            supervised: false,
            detach_target: false,
            include_diagonal: l.include_diagonal,
            shared_ratio: false,
            epsilon: DEFAULT_EPSILON,
            lambda_init_ratio: l.lambda_init_ratio,
            lambda_growth: l.lambda_growth,
            weight_decay: AdamWConfig::default().weight_decay,
            clamp: l.clamp,
            normalize: NormalizeMode::default(),
            shape: NetworkShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            nu_y: self.nu_y,
            nu_z: self.nu_z,
            lambda_init_ratio: self.lambda_init_ratio,
            lambda_growth: self.lambda_growth,
            clamp: self.clamp,
            include_diagonal: self.include_diagonal,
            detach_target: self.detach_target,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            p_u: self.p_u,
            mode: if self.supervised {
                AugmentMode::Supervised
            } else {
                AugmentMode::Unsupervised
            },
            shared_ratio: self.shared_ratio,
        }
    }

    pub fn adamw_config(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    /// Explanation settings matching this run's augmentation and kernel.
    pub fn explain_config(&self, repeats: usize, seed: u64, average_all: bool) -> ExplainConfig {
        ExplainConfig {
            augment: self.augment_config(),
            repeats,
            nu_z: self.nu_z,
            seed,
            average_all,
        }
    }

    /// Effective `A_f` for `n` features.
    pub fn target_for(&self, n: usize) -> usize {
        self.target_features.unwrap_or(n)
    }

    pub fn pruning(&self, n: usize) -> bool {
        self.target_for(n) < n
    }

    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs ≥ 1 required"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size ≥ 1 required"));
        }
        if self.k < 1 {
            return Err(Error::invalid("k ≥ 1 required"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr = {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be finite and >= 0"));
        }
        self.loss_config().validate()?;
        self.augment_config().validate()?;
        self.shape.validate()
    }

    /// Checks against a concrete dataset of `m` rows and `n` features.
    pub fn validate_for(&self, m: usize, n: usize) -> Result<()> {
        self.validate()?;
        if m < 2 {
            return Err(Error::invalid(format!("need at least 2 rows to train, got {m}")));
        }
        if self.k >= m {
            return Err(Error::invalid(format!("k = {} must be smaller than M = {m}", self.k)));
        }
        if let Some(a) = self.target_features {
            if a > n {
                return Err(Error::invalid(format!(
                    "target_features = {a} exceeds the {n} input features"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean structure loss over the epoch's batches.
    pub loss_sp: f64,
    /// `‖W‖₁` at the end of the epoch.
    pub loss_reg: f64,
    /// λ in force during the epoch.
    pub lambda: f64,
    /// `loss_sp + lambda * loss_reg`.
    pub loss: f64,
    /// Open gates at the end of the epoch.
    pub active_features: usize,
    /// Not serialized, so reports from identical runs compare equal.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Equality ignores wall time.
impl PartialEq for EpochStats {
    fn eq(&self, o: &Self) -> bool {
        self.epoch == o.epoch
            && self.loss_sp == o.loss_sp
            && self.loss_reg == o.loss_reg
            && self.lambda == o.lambda
            && self.loss == o.loss
            && self.active_features == o.active_features
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub active_features: Vec<usize>,
    pub target_features: usize,
    pub pruning: bool,
    /// Open-gate count equals the target at the end of the run.
    pub target_reached: bool,
    pub skipped_batches: usize,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn lambda_trace(&self) -> Vec<f64> {
        self.history.iter().map(|e| e.lambda).collect()
    }

    pub fn wall_time(&self) -> Duration {
        self.history.iter().map(|e| e.wall_time).sum()
    }
}

/// Trained parameters together with the preprocessing needed to embed raw
/// rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

impl Model {
    pub fn n_features(&self) -> usize {
        self.params.n_features()
    }

    /// Applies the frozen normalization to raw rows.
    pub fn preprocess(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "input has {} columns, model expects {}",
                x.ncols(),
                self.n_features()
            )));
        }
        Ok(self.normalizer.apply(&x.to_owned()))
    }

    /// Normalized copy of a raw dataset, labels and names kept.
    pub fn preprocess_dataset(&self, d: &Dataset) -> Result<Dataset> {
        let mut out = d.clone();
        out.features = self.preprocess(d.features.view())?;
        out.neighbors = None;
        out.supervised_neighbors = None;
        Ok(out)
    }

    /// 2-D embedding of raw rows, order preserved.
    pub fn embed(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let xn = self.preprocess(x)?;
        network::embed_batch(xn.view(), &self.params)
    }

    pub fn active_features(&self) -> Vec<usize> {
        network::active_features(&self.params)
    }
}

/// Pure forward pass over already-normalized rows.
pub fn embed(x: ArrayView2<'_, f64>, params: &ModelParams) -> Result<Array2<f64>> {
    network::embed_batch(x, params)
}

/// Complete optimizer state. Serializing it and resuming continues the run
/// bit for bit, since every random draw is keyed by epoch and row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub optimizer: AdamWState,
    /// `None` until the first batch has been seen.
    pub lambda: Option<LambdaState>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochStats>,
    pub skipped_batches: usize,
}

impl Trainer {
    pub fn new(n_features: usize, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init_with_shape(n_features, &config.shape, config.epsilon, config.seed)?;
        let optimizer = AdamWState::new(&params, config.adamw_config());
        Ok(Trainer {
            config,
            params,
            optimizer,
            lambda: None,
            epoch: 0,
            history: Vec::new(),
            skipped_batches: 0,
        })
    }

    fn check_data(&self, d: &Dataset) -> Result<()> {
        self.config.validate_for(d.len(), d.n_features())?;
        if d.n_features() != self.params.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "dataset has {} features, model expects {}",
                d.n_features(),
                self.params.n_features()
            )));
        }
        let graph = if self.config.supervised {
            &d.supervised_neighbors
        } else {
            &d.neighbors
        };
        if graph.is_none() {
            return Err(Error::invalid("dataset has no neighbour graph; call build_knn first"));
        }
        Ok(())
    }

    /// One pass over the data. `d` must be normalized and carry the kNN graph
    /// matching the configured mode.
    pub fn run_epoch(&mut self, d: &Dataset) -> Result<&EpochStats> {
        self.check_data(d)?;
        let started = Instant::now();
        let cfg = &self.config;
        let loss_cfg = cfg.loss_config();
        let aug_cfg = cfg.augment_config();
        let n = d.n_features();
        let target = cfg.target_for(n);
        let epoch = self.epoch;

        let mut order: Vec<usize> = (0..d.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, epoch as u64, 0));
        let b = cfg.batch_size.min(d.len());

        let mut sp_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(b).enumerate() {
            if chunk.len() < 2 {
                self.skipped_batches += 1;
                continue;
            }
            let seed = cfg.seed;
            let augs = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = stream(seed, Domain::Augment, epoch as u64, i as u64);
                    augment::augment_point(d, i, &aug_cfg, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let originals = d.features.select(Axis(0), chunk);
            let mut augments = Array2::zeros(originals.raw_dim());
            for (mut row, a) in augments.axis_iter_mut(Axis(0)).zip(&augs) {
                row.assign(&a.point);
            }

            let (value, mut grads) =
                optim::objective(&self.params, originals.view(), augments.view(), &loss_cfg, 0.0)?;
            if !value.sp.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: bi,
                    detail: format!("structure loss is {}", value.sp),
                });
            }
            let lambda = match self.lambda {
                Some(s) => s,
                None => {
                    let s = if cfg.pruning(n) {
                        loss::lambda_init(value.sp, value.reg, cfg.lambda_init_ratio)?
                    } else {
                        LambdaState::disabled()
                    };
                    self.lambda = Some(s);
                    s
                }
            };
            optim::add_l1_gradient(&mut grads, &self.params, lambda.lambda);
            optim::adamw_step(&mut self.params, &grads, &mut self.optimizer).map_err(|e| {
                Error::Diverged {
                    epoch,
                    batch: bi,
                    detail: e.to_string(),
                }
            })?;
            sp_sum += value.sp;
            batches += 1;
        }

        let lambda = self.lambda.unwrap_or_else(LambdaState::disabled);
        let active = network::active_features(&self.params).len();
        let loss_sp = if batches > 0 { sp_sum / batches as f64 } else { 0.0 };
        let loss_reg = loss::loss_reg(self.params.gate.view());
        self.history.push(EpochStats {
            epoch,
            loss_sp,
            loss_reg,
            lambda: lambda.lambda,
            loss: loss_sp + lambda.lambda * loss_reg,
            active_features: active,
            wall_time: started.elapsed(),
        });
        if self.lambda.is_some() {
            self.lambda = Some(loss::lambda_step(lambda, active, target, cfg.lambda_growth));
        }
        self.epoch += 1;
        Ok(self.history.last().expect("just pushed"))
    }

    /// Runs the remaining epochs up to `config.epochs`, calling `progress`
    /// after each one.
    pub fn run(&mut self, d: &Dataset, mut progress: impl FnMut(&EpochStats)) -> Result<()> {
        while self.epoch < self.config.epochs {
            let stats = self.run_epoch(d)?;
            progress(stats);
        }
        Ok(())
    }

    pub fn report(&self) -> TrainReport {
        let n = self.params.n_features();
        let target = self.config.target_for(n);
        let active = network::active_features(&self.params);
        let pruning = self.config.pruning(n);
        let mut warnings = Vec::new();
        if pruning && active.len() > target {
            warnings.push(format!(
                "A_f not reached: {} features open, target {target}",
                active.len()
            ));
        }
        if pruning && active.len() < target {
            warnings.push(format!(
                "A_f overshot: {} features open, target {target}",
                active.len()
            ));
        }
        if !pruning && active.len() < n {
            warnings.push(format!("{} gates closed without pruning", n - active.len()));
        }
        TrainReport {
            history: self.history.clone(),
            target_reached: active.len() == target,
            active_features: active,
            target_features: target,
            pruning,
            skipped_batches: self.skipped_batches,
            warnings,
        }
    }
}

/// Normalizes a raw dataset with the configured mode and builds the
/// neighbour graph the trainer expects.
pub fn prepare(raw: &Dataset, cfg: &TrainConfig) -> Result<(Dataset, Normalizer)> {
    cfg.validate_for(raw.len(), raw.n_features())?;
    let (mut d, stats) = raw.normalize(cfg.normalize);
    d.build_knn(cfg.k, cfg.supervised)?;
    Ok((d, stats))
}

/// Normalized copy of `raw` under the model's frozen statistics, with the
/// neighbour graph the saliency explanations draw from.
pub fn explain_dataset(model: &Model, raw: &Dataset, cfg: &TrainConfig) -> Result<Dataset> {
    let mut d = model.preprocess_dataset(raw)?;
    d.build_knn(cfg.k, cfg.supervised)?;
    Ok(d)
}

/// Trains on a raw (unnormalized) dataset.
pub fn fit(raw: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    fit_with_progress(raw, cfg, |_| {})
}

pub fn fit_with_progress(
    raw: &Dataset,
    cfg: &TrainConfig,
    progress: impl FnMut(&EpochStats),
) -> Result<(Model, TrainReport)> {
    let (d, normalizer) = prepare(raw, cfg)?;
    let mut trainer = Trainer::new(d.n_features(), cfg.clone())?;
    trainer.run(&d, progress)?;
    let report = trainer.report();
    Ok((
        Model {
            params: trainer.params,
            normalizer,
            feature_names: raw.feature_names.clone(),
            label_names: raw.label_names.clone(),
        },
        report,
    ))
}

/// On-disk training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    pub trainer: Trainer,
    pub normalizer: Normalizer,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

impl Checkpoint {
    pub fn new(trainer: Trainer, normalizer: Normalizer, feature_names: Vec<String>, label_names: Vec<String>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION.to_string(),
            trainer,
            normalizer,
            feature_names,
            label_names,
        }
    }

    pub fn model(&self) -> Model {
        Model {
            params: self.trainer.params.clone(),
            normalizer: self.normalizer.clone(),
            feature_names: self.feature_names.clone(),
            label_names: self.label_names.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Checkpoint(format!("unreadable or truncated checkpoint: {e}")))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => {
                return Err(Error::Checkpoint(format!(
                    "unsupported version {other:?}, expected \"{CHECKPOINT_VERSION}\""
                )))
            }
            None => {
                return Err(Error::Checkpoint(format!(
                    "missing version field, expected \"{CHECKPOINT_VERSION}\""
                )))
            }
        }
        let ckpt: Checkpoint = serde_json::from_value(value)
            .map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        let t = &self.trainer;
        t.params
            .validate()
            .map_err(|e| Error::Checkpoint(format!("inconsistent parameters: {e}")))?;
        let n = t.params.n_features();
        let bad = |what: &str| Err(Error::Checkpoint(format!("shape inconsistency: {what}")));
        if self.normalizer.n_features() != n || self.normalizer.scale.len() != n {
            return bad("normalizer width differs from the gate");
        }
        if self.feature_names.len() != n {
            return bad("feature name count differs from the gate");
        }
        if t.params.shape() != t.config.shape {
            return bad("layer widths differ from the stored configuration");
        }
        let same = |g: &optim::Gradients| {
            g.groups()
                .iter()
                .zip(t.params.groups())
                .all(|((a, x), (b, y))| *a == b && x.len() == y.len())
                && g.groups().len() == t.params.groups().len()
        };
        if !same(&t.optimizer.m) || !same(&t.optimizer.v) {
            return bad("optimizer moments differ from the parameters");
        }
        if t.history.len() != t.epoch {
            return bad("history length differs from the epoch counter");
        }
        Ok(())
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Write-temp-then-rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::Synthetic;

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 64,
            shape: NetworkShape {
                projection: vec![32, 16],
                head: vec![16, 2],
            },
            ..TrainConfig::default()
        }
    }

    fn fixture() -> Dataset {
        Synthetic::gaussians(3, 30, 4).generate(1).unwrap()
    }

    #[test]
    fn zero_epochs_rejected() {
        let err = TrainConfig { epochs: 0, ..Default::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("epochs ≥ 1"));
    }

    #[test]
    fn target_beyond_feature_count_rejected() {
        let cfg = TrainConfig { target_features: Some(9), ..small_cfg(1) };
        assert!(fit(&fixture(), &cfg).is_err());
    }

    #[test]
    fn history_matches_epochs_and_no_pruning_keeps_lambda_zero() {
        let (model, report) = fit(&fixture(), &small_cfg(3)).unwrap();
        assert_eq!(report.history.len(), 3);
        assert!(report.history.iter().all(|e| e.lambda == 0.0));
        assert_eq!(model.active_features().len(), 4);
        assert!(report.target_reached);
    }

    #[test]
    fn embed_is_pure_and_batch_consistent() {
        let d = fixture();
        let (model, _) = fit(&d, &small_cfg(2)).unwrap();
        let a = model.embed(d.features.view()).unwrap();
        let b = model.embed(d.features.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), (d.len(), 2));
        let one = model.embed(d.features.slice(ndarray::s![7..8, ..])).unwrap();
        assert_eq!(one.row(0), a.row(7));
        assert!(model.embed(d.features.slice(ndarray::s![.., 0..3])).is_err());
    }

    #[test]
    fn lambda_initialized_on_first_batch_when_pruning() {
        let cfg = TrainConfig { target_features: Some(2), ..small_cfg(2) };
        let (d, _) = prepare(&fixture(), &cfg).unwrap();
        let mut t = Trainer::new(4, cfg).unwrap();
        assert!(t.lambda.is_none());
        t.run_epoch(&d).unwrap();
        let first = t.history[0].lambda;
        assert!(first > 0.0);
        let s = t.lambda.unwrap();
        if t.history[0].active_features > 2 {
            assert_eq!(s.lambda, first * (1.0 + 0.005));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let d = fixture();
        let (a, ra) = fit(&d, &small_cfg(3)).unwrap();
        let (b, rb) = fit(&d, &small_cfg(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = small_cfg(2);
        let (d, stats) = prepare(&fixture(), &cfg).unwrap();
        let mut t = Trainer::new(4, cfg).unwrap();
        t.run(&d, |_| {}).unwrap();
        let ckpt = Checkpoint::new(t, stats, fixture().feature_names, vec![]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let x = fixture().features;
        assert_eq!(back.model().embed(x.view()).unwrap(), ckpt.model().embed(x.view()).unwrap());
    }

    #[test]
    fn checkpoint_version_and_truncation_errors() {
        let cfg = small_cfg(1);
        let t = Trainer::new(4, cfg).unwrap();
        let ckpt = Checkpoint::new(t, Normalizer::identity(4), vec!["a".into(); 4], vec![]);
        let text = ckpt.to_json().unwrap().replacen(CHECKPOINT_VERSION, "evnet-ckpt/0", 1);
        let err = Checkpoint::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("\"evnet-ckpt/1\""), "{err}");
        let full = ckpt.to_json().unwrap();
        assert!(Checkpoint::from_json(&full[..full.len() / 2]).is_err());
        let mut bad = ckpt.clone();
        bad.feature_names.pop();
        assert!(Checkpoint::from_json(&bad.to_json().unwrap()).is_err());
    }

    #[test]
    fn resumed_training_equals_uninterrupted() {
        let cfg = TrainConfig { target_features: Some(2), ..small_cfg(3) };
        let (d, stats) = prepare(&fixture(), &cfg).unwrap();

        let mut straight = Trainer::new(4, cfg.clone()).unwrap();
        straight.run(&d, |_| {}).unwrap();

        let mut first = Trainer::new(4, TrainConfig { epochs: 2, ..cfg.clone() }).unwrap();
        first.run(&d, |_| {}).unwrap();
        let text = Checkpoint::new(first, stats, vec!["f".into(); 4], vec![]).to_json().unwrap();
        let mut resumed = Checkpoint::from_json(&text).unwrap().trainer;
        resumed.config.epochs = 3;
        resumed.run(&d, |_| {}).unwrap();

        assert_eq!(resumed.params, straight.params);
        assert_eq!(resumed.optimizer, straight.optimizer);
        assert_eq!(resumed.lambda, straight.lambda);
        assert_eq!(
            serde_json::to_string(&resumed.report()).unwrap(),
            serde_json::to_string(&straight.report()).unwrap()
        );
    }

    #[test]
    fn undersized_final_batch_is_skipped() {
        // 90 rows in batches of 89 leave a single-row remainder
        let cfg = TrainConfig { batch_size: 89, ..small_cfg(1) };
        let (d, _) = prepare(&fixture(), &cfg).unwrap();
        let mut t = Trainer::new(4, cfg).unwrap();
        t.run_epoch(&d).unwrap();
        assert_eq!(t.skipped_batches, 1);
    }
}
