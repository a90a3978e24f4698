use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use evnet_core::synthetic::Synthetic;
use evnet_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn gaussians_csv() -> String {
    let d = Synthetic::gaussians(3, 100, 5).generate(0).unwrap();
    let mut out = Vec::new();
    d.to_csv_writer(&mut out).unwrap();
    String::from_utf8(out).unwrap()
}

struct Harness {
    state: Arc<AppState>,
    app: Router,
}

impl Harness {
    fn new() -> Self {
        Self::with(ServiceConfig::default())
    }

    fn with(cfg: ServiceConfig) -> Self {
        let state = AppState::new(cfg);
        let app = router(Arc::clone(&state));
        Harness { state, app }
    }

    async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, v)
    }

    async fn upload(&self) -> String {
        let (s, v) = self
            .call("POST", "/datasets", Some(json!({"csv": gaussians_csv(), "label_column": "label", "name": "gaussians"})))
            .await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn train(&self, dataset: &str, config: Value) -> Value {
        let (s, v) = self.call("POST", "/train", Some(json!({"dataset_id": dataset, "config": config}))).await;
        assert_eq!(s, StatusCode::ACCEPTED, "{v}");
        v
    }

    async fn wait(&self, job: &str) -> Value {
        let start = Instant::now();
        loop {
            let (s, v) = self.call("GET", &format!("/jobs/{job}"), None).await;
            assert_eq!(s, StatusCode::OK);
            match v["state"].as_str().unwrap() {
                "done" => return v,
                "failed" => panic!("job failed: {v}"),
                _ => {}
            }
            assert!(start.elapsed() < Duration::from_secs(300), "job {job} did not finish");
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }
}

impl Drop for Harness {
    fn drop(&mut self) {
        self.state.shutdown();
    }
}

fn assert_error(v: &Value, code: &str) {
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()), "{v}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn gaussians_full_flow() {
    let h = Harness::new();
    let ds = h.upload().await;

    let (s, summary) = h.call("GET", &format!("/datasets/{ds}/summary"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(summary["rows"], 300);
    assert_eq!(summary["n_features"], 5);
    assert_eq!(summary["has_labels"], true);
    for f in summary["features"].as_array().unwrap() {
        let total: u64 = f["histogram"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
        assert_eq!(total, 300);
        assert!(f["min"].as_f64().unwrap() <= f["max"].as_f64().unwrap());
    }

    let job = h.train(&ds, json!({"epochs": 5, "seed": 1})).await;
    assert!(matches!(job["state"].as_str(), Some("queued" | "running")));
    let done = h.wait(job["id"].as_str().unwrap()).await;
    assert_eq!(done["progress"]["epoch"], 5);
    assert_eq!(done["history"].as_array().unwrap().len(), 5);
    let model = done["model_id"].as_str().unwrap().to_string();

    let (s, train) = h.call("GET", &format!("/models/{model}/embedding?split=train"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, test) = h.call("GET", &format!("/models/{model}/embedding?split=test"), None).await;
    let train_rows = train["rows"].as_array().unwrap();
    let test_rows = test["rows"].as_array().unwrap();
    assert_eq!(train_rows.len(), 240);
    assert_eq!(train_rows.len() + test_rows.len(), 300);
    let mut ids: Vec<u64> = train_rows.iter().chain(test_rows).map(|r| r["i"].as_u64().unwrap()).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..300).collect::<Vec<u64>>());
    assert!(train_rows[0]["label"].is_string());
    assert!(train_rows[0].get("cluster").is_none());

    let (s, again) = h.call("GET", &format!("/models/{model}/embedding"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again, train);

    let (s, clusters) = h.call("POST", &format!("/models/{model}/cluster"), Some(json!({"k": 3, "seed": 0}))).await;
    assert_eq!(s, StatusCode::OK, "{clusters}");
    assert_eq!(clusters["k"], 3);
    let sizes: u64 = clusters["sizes"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).sum();
    assert_eq!(sizes, 240);
    let (_, with_clusters) = h.call("GET", &format!("/models/{model}/embedding?split=test"), None).await;
    assert!(with_clusters["rows"][0]["cluster"].is_u64());

    let uri = format!("/models/{model}/explain/local");
    let (s, local) = h.call("POST", &uri, Some(json!({"cluster_id": 0, "seed": 3}))).await;
    assert_eq!(s, StatusCode::OK, "{local}");
    let values: Vec<f64> = local["features"].as_array().unwrap().iter().map(|f| f["value"].as_f64().unwrap()).collect();
    assert_eq!(values.len(), 5);
    assert!(values.iter().sum::<f64>() > 0.0);
    assert_eq!(local["version"], "evnet-importance/1");

    // identical (body, seed) under concurrent requests
    let (a, b) = tokio::join!(
        h.call("POST", &uri, Some(json!({"cluster_id": 0, "seed": 3}))),
        h.call("POST", &uri, Some(json!({"cluster_id": 0, "seed": 3})))
    );
    assert_eq!(a.1, local);
    assert_eq!(b.1, local);

    let picked: Vec<u64> = train_rows.iter().take(20).map(|r| r["i"].as_u64().unwrap()).collect();
    let (s, lasso) = h.call("POST", &uri, Some(json!({"point_ids": picked}))).await;
    assert_eq!(s, StatusCode::OK, "{lasso}");
    assert_eq!(lasso["features"].as_array().unwrap().len(), 5);

    let (s, tr) = h
        .call("POST", &format!("/models/{model}/explain/transform"), Some(json!({"c1": 1, "c2": 1})))
        .await;
    assert_eq!(s, StatusCode::OK, "{tr}");
    assert!(tr["features"].as_array().unwrap().iter().all(|f| f["value"] == 0.0));
    let (s, tr) = h
        .call("POST", &format!("/models/{model}/explain/transform"), Some(json!({"c1": 0, "c2": 2})))
        .await;
    assert_eq!(s, StatusCode::OK, "{tr}");
    assert_eq!(tr["clusters"], json!([0, 2]));

    let (s, global) = h.call("POST", &format!("/models/{model}/explain/global"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(global["kind"], "global");
    assert_eq!(global["features"].as_array().unwrap().len(), 5);

    let (s, metrics) = h.call("GET", &format!("/models/{model}/metrics"), None).await;
    assert_eq!(s, StatusCode::OK);
    for key in ["rre", "clf", "clu"] {
        let v = metrics[key]["value"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    let (_, metrics2) = h.call("GET", &format!("/models/{model}/metrics"), None).await;
    assert_eq!(metrics, metrics2);

    let (s, err) = h
        .call("POST", &uri, Some(json!({"cluster_id": 0, "point_ids": [picked[0]]})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&err, "invalid_request");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("cluster_id") && msg.contains("point_ids"), "{msg}");

    let (s, err) = h.call("POST", &uri, Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&err, "invalid_request");

    let (s, err) = h.call("POST", &uri, Some(json!({"cluster_id": 7}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "cluster_id");

    let test_id = test_rows[0]["i"].as_u64().unwrap();
    let (s, err) = h.call("POST", &uri, Some(json!({"point_ids": [test_id]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "point_ids");

    let (s, err) = h.call("GET", &format!("/models/{model}/embedding?split=validation"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(err["field"], "split");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unknown_ids_are_404() {
    let h = Harness::new();
    for (method, uri) in [
        ("GET", "/jobs/unknown"),
        ("GET", "/datasets/unknown/summary"),
        ("GET", "/models/unknown/embedding"),
        ("GET", "/models/unknown/metrics"),
        ("POST", "/models/unknown/explain/global"),
    ] {
        let (s, v) = h.call(method, uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_error(&v, "not_found");
    }
    let (s, v) = h.call("POST", "/train", Some(json!({"dataset_id": "nope"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["field"], "dataset_id");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn schema_violations_are_400() {
    let h = Harness::new();
    let ds = h.upload().await;

    let (s, v) = h.call("POST", "/datasets", Some(json!({"csv": "a,b\n1,x\n"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "csv");

    let (s, v) = h.call("POST", "/datasets", Some(json!({"text": "a\n1\n"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_error(&v, "invalid_request");

    let (s, v) = h
        .call("POST", "/train", Some(json!({"dataset_id": ds, "config": {"epochs": 5, "learning_rate": 0.1}})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["message"].as_str().unwrap().contains("learning_rate"), "{v}");

    let (s, v) = h.call("POST", "/train", Some(json!({"dataset_id": ds, "config": {"epochs": 0}}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "config");

    let (s, v) = h.call("POST", "/train", Some(json!({"dataset_id": ds, "train_fraction": 1.5}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "train_fraction");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn jobs_queue_fifo_and_unfinished_models_conflict() {
    let h = Harness::new();
    let ds = h.upload().await;
    let first = h.train(&ds, json!({"epochs": 400})).await;
    let second = h.train(&ds, json!({"epochs": 400})).await;

    let (_, v) = h.call("GET", &format!("/jobs/{}", second["id"].as_str().unwrap()), None).await;
    assert_eq!(v["state"], "queued");
    assert_eq!(v["progress"]["epoch"], 0);

    let model = second["model_id"].as_str().unwrap();
    for (method, uri, body) in [
        ("POST", format!("/models/{model}/explain/global"), None),
        ("POST", format!("/models/{model}/explain/local"), Some(json!({"cluster_id": 0}))),
        ("POST", format!("/models/{model}/explain/transform"), Some(json!({"c1": 0, "c2": 1}))),
        ("GET", format!("/models/{model}/embedding"), None),
    ] {
        let (s, v) = h.call(method, &uri, body).await;
        assert_eq!(s, StatusCode::CONFLICT, "{uri}: {v}");
        assert_error(&v, "job_not_done");
    }

    // the first job makes progress and its epoch count never goes backwards
    let job = first["id"].as_str().unwrap();
    let start = Instant::now();
    let mut last = 0;
    while last < 2 {
        let (_, v) = h.call("GET", &format!("/jobs/{job}"), None).await;
        let epoch = v["progress"]["epoch"].as_u64().unwrap();
        assert!(epoch >= last);
        last = epoch;
        if epoch > 0 {
            assert_eq!(v["state"], "running");
        }
        assert!(start.elapsed() < Duration::from_secs(120));
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    let (_, v) = h.call("GET", &format!("/jobs/{}", second["id"].as_str().unwrap()), None).await;
    assert_eq!(v["state"], "queued");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn explanations_need_a_cluster_model() {
    let h = Harness::new();
    let ds = h.upload().await;
    let job = h.train(&ds, json!({"epochs": 1})).await;
    let model = h.wait(job["id"].as_str().unwrap()).await["model_id"].as_str().unwrap().to_string();
    let (s, v) = h
        .call("POST", &format!("/models/{model}/explain/local"), Some(json!({"cluster_id": 0})))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_error(&v, "no_cluster_model");
    let (s, v) = h.call("POST", &format!("/models/{model}/cluster"), Some(json!({"k": 0}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "k");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn data_dir_receives_datasets_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let h = Harness::with(ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ui_dir: None,
    });
    let ds = h.upload().await;
    assert!(dir.path().join("datasets").join(format!("{ds}.csv")).exists());
    let job = h.train(&ds, json!({"epochs": 1})).await;
    let model = h.wait(job["id"].as_str().unwrap()).await["model_id"].as_str().unwrap().to_string();
    let path = dir.path().join("models").join(format!("{model}.ckpt.json"));
    let ckpt = evnet_core::trainer::Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt.trainer.epoch, 1);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn ui_assets_are_served_with_cors() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html></html>").unwrap();
    let h = Harness::with(ServiceConfig {
        data_dir: None,
        ui_dir: Some(dir.path().to_path_buf()),
    });
    let (s, v) = h.call("GET", "/ui/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, Value::String("<html></html>".into()));

    let req = Request::builder()
        .method("OPTIONS")
        .uri("/train")
        .header("origin", "http://localhost:5173")
        .header("access-control-request-method", "POST")
        .body(Body::empty())
        .unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
