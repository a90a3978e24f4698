//! Routes and request/response schemas.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use evnet_core::dataset::{Dataset, SplitSpec};
use evnet_core::eval::{self, MetricReport};
use evnet_core::explain::{self, ClusterModel, ImportanceReport};
use evnet_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::error::{ApiError, ApiResult};
use crate::state::{AppState, Job, ModelEntry};

pub const HISTOGRAM_BINS: usize = 10;
/// Neighbourhood size used by the metrics endpoint.
pub const METRICS_RRE_K: usize = 10;
pub const METRICS_FOLDS: usize = 5;

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/datasets", post(upload_dataset))
        .route("/datasets/{id}/summary", get(dataset_summary))
        .route("/train", post(train))
        .route("/jobs/{id}", get(job))
        .route("/models/{id}/embedding", get(embedding))
        .route("/models/{id}/cluster", post(cluster))
        .route("/models/{id}/explain/global", post(explain_global))
        .route("/models/{id}/explain/local", post(explain_local))
        .route("/models/{id}/explain/transform", post(explain_transform))
        .route("/models/{id}/metrics", get(metrics));
    if let Some(dir) = &state.config.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir));
    }
    app.layer(CorsLayer::permissive()).with_state(state)
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    b.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker task failed: {e}")))?
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadRequest {
    pub csv: String,
    #[serde(default)]
    pub label_column: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
}

async fn upload_dataset(State(state): Shared, req: Result<Json<UploadRequest>, JsonRejection>) -> ApiResult<(StatusCode, Json<Value>)> {
    let req = body(req)?;
    let data = Dataset::from_csv_reader(req.csv.as_bytes(), req.label_column.as_deref())
        .map_err(|e| ApiError::bad_request(e.to_string()).field("csv"))?;
    if data.is_empty() {
        return Err(ApiError::bad_request("dataset has no rows").field("csv"));
    }
    let entry = state.add_dataset(data, req.name, req.label_column, &req.csv)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "id": entry.id,
            "rows": entry.data.len(),
            "features": entry.data.n_features(),
            "has_labels": entry.data.labels.is_some(),
        })),
    ))
}

#[derive(Debug, Serialize)]
pub struct FeatureSummary {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Equal-width counts over `[min, max]`.
    pub histogram: Vec<usize>,
}

pub fn histogram(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, Vec<usize>) {
    let (lo, hi) = values.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mut counts = vec![0; HISTOGRAM_BINS];
    let width = hi - lo;
    for v in values {
        let b = if width > 0.0 {
            (((v - lo) / width) * HISTOGRAM_BINS as f64) as usize
        } else {
            0
        };
        counts[b.min(HISTOGRAM_BINS - 1)] += 1;
    }
    (lo, hi, counts)
}

async fn dataset_summary(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let entry = state.dataset(&id)?;
    let d = &entry.data;
    let features: Vec<FeatureSummary> = d
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let (min, max, histogram) = histogram(d.features.column(j).into_iter().copied());
            FeatureSummary {
                name: name.clone(),
                min,
                max,
                histogram,
            }
        })
        .collect();
    Ok(Json(json!({
        "id": entry.id,
        "name": entry.name,
        "rows": d.len(),
        "n_features": d.n_features(),
        "feature_names": d.feature_names,
        "has_labels": d.labels.is_some(),
        "label_column": entry.label_column,
        "label_names": d.label_names,
        "features": features,
    })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    pub dataset_id: String,
    #[serde(default)]
    pub config: TrainConfig,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Defaults to the config seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
}

fn default_train_fraction() -> f64 {
    SplitSpec::default().train_fraction
}

async fn train(State(state): Shared, req: Result<Json<TrainRequest>, JsonRejection>) -> ApiResult<(StatusCode, Json<Job>)> {
    let req = body(req)?;
    let dataset = state.dataset(&req.dataset_id).map_err(|e| e.field("dataset_id"))?;
    if !(req.train_fraction > 0.0 && req.train_fraction <= 1.0) {
        return Err(ApiError::bad_request(format!("train_fraction {} outside (0, 1]", req.train_fraction)).field("train_fraction"));
    }
    let m = dataset.data.len();
    let m_train = ((req.train_fraction * m as f64).round() as usize).clamp(1.min(m), m);
    req.config
        .validate_for(m_train, dataset.data.n_features())
        .map_err(|e| ApiError::from_core(e, "config"))?;
    if req.config.supervised && dataset.data.labels.is_none() {
        return Err(ApiError::bad_request("supervised training needs a labelled dataset").field("config"));
    }
    let split = SplitSpec {
        train_fraction: req.train_fraction,
        seed: req.split_seed.unwrap_or(req.config.seed),
    };
    let job = state.submit(dataset, req.config, split);
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn job(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Job>> {
    state.job(&id).map(Json)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingQuery {
    #[serde(default)]
    pub split: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct EmbeddingRow {
    pub i: usize,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
}

async fn embedding(
    State(state): Shared,
    Path(id): Path<String>,
    q: Result<Query<EmbeddingQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let m = state.model(&id)?;
    let split = q.split.unwrap_or_else(|| "train".into());
    let (idx, emb) = match split.as_str() {
        "train" => (&m.train_idx, &m.train_embedding),
        "test" => (&m.test_idx, &m.test_embedding),
        other => {
            return Err(ApiError::bad_request(format!("split must be \"train\" or \"test\", got {other:?}")).field("split"))
        }
    };
    let clusters = state.clusters(&id).map(|c| {
        if split == "train" {
            c.assignments.clone()
        } else {
            c.predict(emb.view())
        }
    });
    let rows: Vec<EmbeddingRow> = idx
        .iter()
        .enumerate()
        .map(|(pos, &i)| EmbeddingRow {
            i,
            x: emb[[pos, 0]],
            y: emb[[pos, 1]],
            label: m
                .labels
                .as_ref()
                .map(|l| m.model.label_names[l[i]].clone()),
            cluster: clusters.as_ref().map(|c| c[pos]),
        })
        .collect();
    Ok(Json(json!({ "model_id": id, "split": split, "rows": rows })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterRequest {
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn cluster_summary(model_id: &str, c: &ClusterModel) -> Value {
    json!({
        "version": c.version,
        "model_id": model_id,
        "k": c.k(),
        "centers": c.centers.rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "sizes": c.sizes(),
        "inertia": c.inertia,
        "iterations": c.iterations,
    })
}

async fn cluster(
    State(state): Shared,
    Path(id): Path<String>,
    req: Result<Json<ClusterRequest>, JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(req)?;
    let m = state.model(&id)?;
    let rows = m.train_embedding.nrows();
    if req.k == 0 || req.k > rows {
        return Err(ApiError::bad_request(format!("k must be in 1..={rows}")).field("k"));
    }
    let fit = {
        let m = Arc::clone(&m);
        blocking(move || {
            explain::kmeans_fit(m.train_embedding.view(), req.k, req.seed).map_err(|e| ApiError::from_core(e, "k"))
        })
        .await?
    };
    let c = state.set_clusters(&id, fit);
    Ok(Json(cluster_summary(&id, &c)))
}

async fn explain_global(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<ImportanceReport>> {
    let m = state.model(&id)?;
    explain::global_importance(&m.model.params, &m.model.feature_names)
        .map(Json)
        .map_err(|e| ApiError::internal(e.to_string()))
}

fn default_repeats() -> usize {
    explain::ExplainConfig::default().repeats
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalRequest {
    #[serde(default)]
    pub cluster_id: Option<usize>,
    /// Dataset row ids from the training split.
    #[serde(default)]
    pub point_ids: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub average_all: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRequest {
    pub c1: usize,
    pub c2: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub average_all: bool,
}

fn require_clusters(state: &AppState, id: &str) -> ApiResult<Arc<ClusterModel>> {
    state.clusters(id).ok_or_else(|| {
        ApiError::conflict(
            "no_cluster_model",
            format!("model {id} has no cluster model; POST /models/{id}/cluster first"),
        )
    })
}

fn check_cluster(c: &ClusterModel, id: usize, field: &str) -> ApiResult<()> {
    if id >= c.k() {
        return Err(ApiError::bad_request(format!("cluster {id} out of range (k = {})", c.k())).field(field));
    }
    Ok(())
}

fn check_repeats(repeats: usize) -> ApiResult<()> {
    if repeats == 0 {
        return Err(ApiError::bad_request("repeats must be >= 1").field("repeats"));
    }
    Ok(())
}

async fn explain_local(
    State(state): Shared,
    Path(id): Path<String>,
    req: Result<Json<LocalRequest>, JsonRejection>,
) -> ApiResult<Json<ImportanceReport>> {
    let req = body(req)?;
    let m = state.model(&id)?;
    check_repeats(req.repeats)?;
    let base = require_clusters(&state, &id)?;
    let (clusters, c) = match (req.cluster_id, &req.point_ids) {
        (Some(_), Some(_)) => {
            return Err(ApiError::bad_request("cluster_id and point_ids are mutually exclusive; send exactly one").field("cluster_id"))
        }
        (None, None) => return Err(ApiError::bad_request("one of cluster_id or point_ids is required").field("cluster_id")),
        (Some(c), None) => {
            check_cluster(&base, c, "cluster_id")?;
            (base, c)
        }
        (None, Some(ids)) => {
            let positions = ids
                .iter()
                .map(|&i| {
                    m.train_position(i).ok_or_else(|| {
                        ApiError::bad_request(format!("row {i} is not in the training split")).field("point_ids")
                    })
                })
                .collect::<ApiResult<Vec<usize>>>()?;
            let (adhoc, c) = base
                .with_selection(m.train_embedding.view(), &positions)
                .map_err(|e| ApiError::from_core(e, "point_ids"))?;
            (Arc::new(adhoc), c)
        }
    };
    let cfg = m.config.explain_config(req.repeats, req.seed, req.average_all);
    blocking(move || {
        explain::local_importance(&m.train_view, &m.model.params, &clusters, c, &cfg)
            .map(Json)
            .map_err(|e| ApiError::from_core(e, "cluster_id"))
    })
    .await
}

async fn explain_transform(
    State(state): Shared,
    Path(id): Path<String>,
    req: Result<Json<TransformRequest>, JsonRejection>,
) -> ApiResult<Json<ImportanceReport>> {
    let req = body(req)?;
    let m = state.model(&id)?;
    check_repeats(req.repeats)?;
    let clusters = require_clusters(&state, &id)?;
    check_cluster(&clusters, req.c1, "c1")?;
    check_cluster(&clusters, req.c2, "c2")?;
    let cfg = m.config.explain_config(req.repeats, req.seed, req.average_all);
    blocking(move || {
        explain::transform_importance(&m.train_view, &m.model.params, &clusters, req.c1, req.c2, &cfg)
            .map(Json)
            .map_err(|e| ApiError::from_core(e, "c1"))
    })
    .await
}

/// RRE on the training split, plus the two accuracy proxies when the
/// dataset is labelled. Computed once per model.
fn compute_metrics(m: &ModelEntry) -> Value {
    let emb = m.train_embedding.view();
    let rows = emb.nrows();
    let rre_k = METRICS_RRE_K.min(rows.saturating_sub(1) / 2);
    let rre = eval::rre(m.train_view.features.view(), emb, rre_k)
        .ok()
        .map(|v| MetricReport::new("rre", v, rre_k, 0));
    let labels: Option<Vec<usize>> = m
        .labels
        .as_ref()
        .map(|l| m.train_idx.iter().map(|&i| l[i]).collect());
    let (clf, clu) = match &labels {
        Some(l) => (
            eval::linear_accuracy(emb, l, METRICS_FOLDS, 0)
                .ok()
                .map(|v| MetricReport::new("clf", v, METRICS_FOLDS, 0)),
            eval::kmeans_accuracy(emb, l, 0)
                .ok()
                .map(|v| MetricReport::new("clu", v, m.model.label_names.len(), 0)),
        ),
        None => (None, None),
    };
    json!({ "model_id": m.id, "split": "train", "rre": rre, "clf": clf, "clu": clu })
}

async fn metrics(State(state): Shared, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let m = state.model(&id)?;
    blocking(move || Ok(Json(m.metrics.get_or_init(|| compute_metrics(&m)).clone()))).await
}
