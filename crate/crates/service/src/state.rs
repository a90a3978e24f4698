//! In-memory store, the job table and the single training worker.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock, RwLock};
use std::thread;

use evnet_core::dataset::{Dataset, SplitSpec};
use evnet_core::explain::ClusterModel;
use evnet_core::trainer::{self, Checkpoint, EpochStats, Model, TrainConfig, Trainer};
use ndarray::Array2;
use serde::Serialize;

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Uploaded datasets and finished checkpoints are also written here.
    pub data_dir: Option<PathBuf>,
    /// Static UI bundle served under `/ui`.
    pub ui_dir: Option<PathBuf>,
}

pub struct DatasetEntry {
    pub id: String,
    pub name: Option<String>,
    pub label_column: Option<String>,
    pub data: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Train,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Progress {
    pub epoch: usize,
    pub epochs: usize,
    pub loss_sp: Option<f64>,
    pub loss_reg: Option<f64>,
    pub loss: Option<f64>,
    pub lambda: Option<f64>,
    pub active_features: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Job {
    pub id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub dataset_id: String,
    /// Model registered when the job finishes.
    pub model_id: String,
    pub progress: Progress,
    /// Per-epoch curves for the training panel.
    pub history: Vec<EpochStats>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Job {
    fn advance(&mut self, state: JobState) {
        if state > self.state {
            self.state = state;
        }
    }
}

/// A finished model plus everything the explanation endpoints need.
pub struct ModelEntry {
    pub id: String,
    pub job_id: String,
    pub dataset_id: String,
    pub config: TrainConfig,
    pub model: Model,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    /// Normalized training rows with their neighbour graph.
    pub train_view: Dataset,
    /// Labels of the full dataset, indexed by row.
    pub labels: Option<Vec<usize>>,
    pub train_embedding: Array2<f64>,
    pub test_embedding: Array2<f64>,
    pub metrics: OnceLock<serde_json::Value>,
}

impl ModelEntry {
    /// Position of dataset row `i` within the training split.
    pub fn train_position(&self, i: usize) -> Option<usize> {
        self.train_idx.binary_search(&i).ok()
    }
}

struct TrainRequest {
    job_id: String,
    dataset: Arc<DatasetEntry>,
    config: TrainConfig,
    split: SplitSpec,
}

#[derive(Default)]
struct Store {
    datasets: HashMap<String, Arc<DatasetEntry>>,
    jobs: HashMap<String, Job>,
    models: HashMap<String, Arc<ModelEntry>>,
    /// model id → job id for every model that was requested.
    model_jobs: HashMap<String, String>,
    clusters: HashMap<String, Arc<ClusterModel>>,
}

#[derive(Default)]
struct Queue {
    pending: VecDeque<TrainRequest>,
}

pub struct AppState {
    store: RwLock<Store>,
    queue: Mutex<Queue>,
    wake: Condvar,
    shutdown: AtomicBool,
    next_id: AtomicU64,
    pub config: ServiceConfig,
}

impl AppState {
    /// Creates the state and starts the training worker.
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        let state = Arc::new(AppState {
            store: RwLock::new(Store::default()),
            queue: Mutex::new(Queue::default()),
            wake: Condvar::new(),
            shutdown: AtomicBool::new(false),
            next_id: AtomicU64::new(1),
            config,
        });
        let worker = Arc::clone(&state);
        thread::Builder::new()
            .name("evnet-train".into())
            .spawn(move || worker.work())
            .expect("spawn training worker");
        state
    }

    /// Stops the worker after the current epoch; queued jobs fail.
    pub fn shutdown(&self) {
        self.shutdown.store(true, Ordering::SeqCst);
        self.wake.notify_all();
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.next_id.fetch_add(1, Ordering::SeqCst))
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Store> {
        self.store.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Store> {
        self.store.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn add_dataset(&self, data: Dataset, name: Option<String>, label_column: Option<String>, csv: &str) -> ApiResult<Arc<DatasetEntry>> {
        let id = self.fresh_id("ds");
        if let Some(dir) = &self.config.data_dir {
            spill(dir.join("datasets").join(format!("{id}.csv")), csv.as_bytes())?;
        }
        let entry = Arc::new(DatasetEntry {
            id: id.clone(),
            name,
            label_column,
            data,
        });
        self.write().datasets.insert(id, Arc::clone(&entry));
        Ok(entry)
    }

    pub fn dataset(&self, id: &str) -> ApiResult<Arc<DatasetEntry>> {
        self.read()
            .datasets
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("dataset", id))
    }

    pub fn job(&self, id: &str) -> ApiResult<Job> {
        self.read().jobs.get(id).cloned().ok_or_else(|| ApiError::not_found("job", id))
    }

    /// Registers a queued job and hands it to the worker.
    pub fn submit(&self, dataset: Arc<DatasetEntry>, config: TrainConfig, split: SplitSpec) -> Job {
        let job_id = self.fresh_id("job");
        let model_id = self.fresh_id("model");
        let job = Job {
            id: job_id.clone(),
            kind: JobKind::Train,
            state: JobState::Queued,
            dataset_id: dataset.id.clone(),
            model_id: model_id.clone(),
            progress: Progress {
                epoch: 0,
                epochs: config.epochs,
                loss_sp: None,
                loss_reg: None,
                loss: None,
                lambda: None,
                active_features: None,
            },
            history: Vec::new(),
            warnings: Vec::new(),
            error: None,
        };
        {
            let mut store = self.write();
            store.jobs.insert(job_id.clone(), job.clone());
            store.model_jobs.insert(model_id, job_id.clone());
        }
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        q.pending.push_back(TrainRequest {
            job_id,
            dataset,
            config,
            split,
        });
        self.wake.notify_all();
        job
    }

    /// A finished model, or 409 while its job is queued, running or failed.
    pub fn model(&self, id: &str) -> ApiResult<Arc<ModelEntry>> {
        let store = self.read();
        if let Some(m) = store.models.get(id) {
            return Ok(Arc::clone(m));
        }
        let job = store
            .model_jobs
            .get(id)
            .and_then(|j| store.jobs.get(j))
            .ok_or_else(|| ApiError::not_found("model", id))?;
        Err(match job.state {
            JobState::Failed => ApiError::conflict(
                "job_failed",
                format!("model {id} is unavailable: job {} failed", job.id),
            ),
            state => ApiError::conflict(
                "job_not_done",
                format!("model {id} is not ready: job {} is {state:?}", job.id).to_lowercase(),
            ),
        })
    }

    pub fn set_clusters(&self, model_id: &str, clusters: ClusterModel) -> Arc<ClusterModel> {
        let c = Arc::new(clusters);
        self.write().clusters.insert(model_id.to_string(), Arc::clone(&c));
        c
    }

    pub fn clusters(&self, model_id: &str) -> Option<Arc<ClusterModel>> {
        self.read().clusters.get(model_id).cloned()
    }

    fn update_job(&self, id: &str, f: impl FnOnce(&mut Job)) {
        if let Some(job) = self.write().jobs.get_mut(id) {
            f(job);
        }
    }

    fn next_request(&self) -> Option<TrainRequest> {
        let mut q = self.queue.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if self.shutdown.load(Ordering::SeqCst) {
                return None;
            }
            if let Some(r) = q.pending.pop_front() {
                return Some(r);
            }
            q = self.wake.wait(q).unwrap_or_else(|e| e.into_inner());
        }
    }

    fn work(&self) {
        while let Some(req) = self.next_request() {
            let job_id = req.job_id.clone();
            self.update_job(&job_id, |j| j.advance(JobState::Running));
            match self.train(req) {
                Ok(()) => self.update_job(&job_id, |j| j.advance(JobState::Done)),
                Err(msg) => self.update_job(&job_id, |j| {
                    j.error = Some(msg);
                    j.advance(JobState::Failed);
                }),
            }
        }
        let q = std::mem::take(&mut *self.queue.lock().unwrap_or_else(|e| e.into_inner()));
        for req in q.pending {
            self.update_job(&req.job_id, |j| {
                j.error = Some("service shut down before the job started".into());
                j.advance(JobState::Failed);
            });
        }
    }

    fn train(&self, req: TrainRequest) -> Result<(), String> {
        let raw = &req.dataset.data;
        let split = raw.split(req.split).map_err(|e| e.to_string())?;
        let (view, normalizer) = trainer::prepare(&split.train, &req.config).map_err(|e| e.to_string())?;
        let mut tr = Trainer::new(view.n_features(), req.config.clone()).map_err(|e| e.to_string())?;
        for _ in 0..req.config.epochs {
            if self.shutdown.load(Ordering::SeqCst) {
                return Err("service shut down during training".into());
            }
            let stats = tr.run_epoch(&view).map_err(|e| e.to_string())?.clone();
            self.update_job(&req.job_id, |j| {
                j.progress = Progress {
                    epoch: stats.epoch + 1,
                    epochs: req.config.epochs,
                    loss_sp: Some(stats.loss_sp),
                    loss_reg: Some(stats.loss_reg),
                    loss: Some(stats.loss),
                    lambda: Some(stats.lambda),
                    active_features: Some(stats.active_features),
                };
                j.history.push(stats);
            });
        }
        let report = tr.report();
        let ckpt = Checkpoint::new(tr, normalizer, raw.feature_names.clone(), raw.label_names.clone());
        let model = ckpt.model();
        let model_id = self.read().jobs.get(&req.job_id).map(|j| j.model_id.clone()).unwrap_or_default();
        if let Some(dir) = &self.config.data_dir {
            let json = ckpt.to_json().map_err(|e| e.to_string())?;
            spill(dir.join("models").join(format!("{model_id}.ckpt.json")), json.as_bytes())
                .map_err(|e| e.body.message)?;
        }
        let train_embedding = trainer::embed(view.features.view(), &model.params).map_err(|e| e.to_string())?;
        let test_embedding = model.embed(split.test.features.view()).map_err(|e| e.to_string())?;
        let entry = ModelEntry {
            id: model_id.clone(),
            job_id: req.job_id.clone(),
            dataset_id: req.dataset.id.clone(),
            config: req.config,
            model,
            train_idx: split.train_idx,
            test_idx: split.test_idx,
            train_view: view,
            labels: raw.labels.clone(),
            train_embedding,
            test_embedding,
            metrics: OnceLock::new(),
        };
        let mut store = self.write();
        store.models.insert(model_id, Arc::new(entry));
        if let Some(j) = store.jobs.get_mut(&req.job_id) {
            j.warnings = report.warnings;
        }
        Ok(())
    }
}

fn spill(path: PathBuf, bytes: &[u8]) -> ApiResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| ApiError::internal(format!("{}: {e}", parent.display())))?;
    }
    trainer::write_atomic(&path, bytes).map_err(|e| ApiError::internal(e.to_string()))
}
