use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use evnet_core::dataset::Dataset;
use evnet_core::eval::{self, MetricReport};
use evnet_core::explain::{self, ClusterModel, CLUSTER_VERSION};
use evnet_core::synthetic::Synthetic;
use evnet_core::trainer::{self, Checkpoint, TrainConfig, Trainer};
use ndarray::{s, Array2};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::{CliError, CliResult, SIDECAR_VERSION};

pub const REPORT_VERSION: &str = "evnet-train-report/1";

pub(crate) fn dispatch(cli: &Cli, matches: &ArgMatches) -> CliResult<()> {
    match &cli.command {
        Command::Train(a) => {
            let sub = matches.subcommand_matches("train").expect("train matches");
            train(cli, a, sub)
        }
        Command::Embed(a) => embed(cli, a),
        Command::Cluster(a) => cluster(cli, a),
        Command::Explain(e) => match e {
            ExplainCommand::Global(a) => explain_global(cli, a),
            ExplainCommand::Local(a) => explain_local(cli, a),
            ExplainCommand::Transform(a) => explain_transform(cli, a),
        },
        Command::Eval(e) => match e {
            EvalCommand::Rre(a) => eval_rre(cli, a),
            EvalCommand::Clf(a) => eval_clf(cli, a),
            EvalCommand::Clu(a) => eval_clu(cli, a),
        },
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(cli, a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    trainer::write_atomic(path, bytes).map_err(CliError::from)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(evnet_core::Error::from)?;
    write_bytes(path, text.as_bytes())
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

/// Records the fully resolved invocation next to an artifact.
fn write_sidecar<A: Serialize>(cli: &Cli, out: &Path, command: &str, args: &A, extra: Value) -> CliResult<()> {
    let mut v = json!({
        "version": SIDECAR_VERSION,
        "command": command,
        "threads": cli.threads,
        "args": args,
    });
    if let (Value::Object(map), Value::Object(more)) = (&mut v, extra) {
        map.extend(more);
    }
    write_json(&sidecar_path(out), &v)
}

fn load_csv(path: &Path, label_column: Option<&str>) -> CliResult<Dataset> {
    Ok(Dataset::load_csv(path, label_column)?)
}

/// An embedding CSV: `x,y` plus an optional `label` column.
fn load_embedding(path: &Path) -> CliResult<Dataset> {
    let text = read_text(path)?;
    let header = text.lines().next().unwrap_or_default();
    let has_label = header.split(',').any(|h| h.trim() == "label");
    let d = Dataset::from_csv_reader(text.as_bytes(), has_label.then_some("label"))?;
    if d.n_features() != 2 {
        return Err(CliError::Invalid(format!(
            "{}: expected a 2-column embedding, found {} columns",
            path.display(),
            d.n_features()
        )));
    }
    Ok(d)
}

fn load_clusters(path: &Path) -> CliResult<ClusterModel> {
    let c: ClusterModel = serde_json::from_str(&read_text(path)?).map_err(evnet_core::Error::from)?;
    if c.version != CLUSTER_VERSION {
        return Err(CliError::Invalid(format!(
            "{}: unsupported cluster model version {:?}, expected {CLUSTER_VERSION:?}",
            path.display(),
            c.version
        )));
    }
    Ok(c)
}

/// Config stored in a sidecar written by `train`, or a bare config object.
fn load_config(path: &Path) -> CliResult<TrainConfig> {
    let v: Value = serde_json::from_str(&read_text(path)?).map_err(evnet_core::Error::from)?;
    let cfg = match v.get("config") {
        Some(inner) if v.get("version").and_then(Value::as_str) == Some(SIDECAR_VERSION) => inner.clone(),
        _ => v,
    };
    serde_json::from_value(cfg).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// `TrainConfig` keys whose flag was given explicitly.
fn explicit_keys(m: &ArgMatches) -> Vec<&'static str> {
    const KEYS: [&str; 21] = [
        "epochs",
        "batch_size",
        "k",
        "p_u",
        "nu_y",
        "nu_z",
        "lr",
        "target_features",
        "seed",
        "supervised",
        "detach_target",
        "include_diagonal",
        "shared_ratio",
        "epsilon",
        "lambda_init_ratio",
        "lambda_growth",
        "weight_decay",
        "clamp",
        "normalize",
        "shape_projection",
        "shape_head",
    ];
    KEYS.into_iter()
        .filter(|k| m.value_source(k) == Some(ValueSource::CommandLine))
        .collect()
}

fn resolve_config(a: &TrainArgs, m: &ArgMatches) -> CliResult<TrainConfig> {
    let flags = a.train.to_config();
    let Some(path) = &a.config else {
        return Ok(flags);
    };
    let mut base = load_config(path)?;
    let given = explicit_keys(m);
    let from_flags = serde_json::to_value(&flags).map_err(evnet_core::Error::from)?;
    let mut merged = serde_json::to_value(&base).map_err(evnet_core::Error::from)?;
    for key in given {
        match key {
            "shape_projection" => merged["shape"]["projection"] = from_flags["shape"]["projection"].clone(),
            "shape_head" => merged["shape"]["head"] = from_flags["shape"]["head"].clone(),
            k => merged[k] = from_flags[k].clone(),
        }
    }
    base = serde_json::from_value(merged).map_err(evnet_core::Error::from)?;
    Ok(base)
}

fn train(cli: &Cli, a: &TrainArgs, m: &ArgMatches) -> CliResult<()> {
    let cfg = resolve_config(a, m)?;
    let raw = match (&a.input, &a.synthetic) {
        (Some(p), _) => load_csv(p, a.label_column.as_deref())?,
        (None, Some(spec)) => spec.parse::<Synthetic>()?.generate(cfg.seed)?,
        (None, None) => unreachable!("clap requires --input or --synthetic"),
    };
    let raw = if a.train_fraction < 1.0 {
        raw.split(evnet_core::dataset::SplitSpec {
            train_fraction: a.train_fraction,
            seed: a.split_seed.unwrap_or(cfg.seed),
        })?
        .train
    } else if a.train_fraction == 1.0 {
        raw
    } else {
        return Err(CliError::Invalid(format!("--train-fraction {} outside (0, 1]", a.train_fraction)));
    };
    let (view, normalizer) = trainer::prepare(&raw, &cfg)?;
    let mut tr = Trainer::new(view.n_features(), cfg.clone())?;
    let total = cfg.epochs;
    tr.run(&view, |s| {
        if (s.epoch + 1) % 50 == 0 || s.epoch + 1 == total {
            eprintln!(
                "epoch {:>4}/{total}  loss_sp {:.6}  lambda {:.4e}  active {}",
                s.epoch + 1,
                s.loss_sp,
                s.lambda,
                s.active_features
            );
        }
    })?;
    let report = tr.report();
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let ckpt = Checkpoint::new(tr, normalizer, raw.feature_names.clone(), raw.label_names.clone());
    ckpt.save(&a.out)?;
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &json!({ "version": REPORT_VERSION, "report": report }))?;
    write_sidecar(cli, &a.out, "train", a, json!({ "config": cfg }))
}

fn embed(cli: &Cli, a: &EmbedArgs) -> CliResult<()> {
    let model = Checkpoint::load(&a.model)?.model();
    let raw = load_csv(&a.input, a.label_column.as_deref())?;
    let z = model.embed(raw.features.view())?;
    let mut out = Dataset::new(z, vec!["x".into(), "y".into()])?;
    if let Some(l) = &raw.labels {
        out = out.with_labels(l.clone())?;
        out.label_names = raw.label_names.clone();
    }
    let mut buf = Vec::new();
    out.to_csv_writer(&mut buf)?;
    write_bytes(&a.out, &buf)?;
    write_sidecar(cli, &a.out, "embed", a, json!({}))
}

fn cluster(cli: &Cli, a: &ClusterArgs) -> CliResult<()> {
    let emb = load_embedding(&a.embedding)?;
    let c = explain::kmeans_fit(emb.features.view(), a.k, a.seed)?;
    write_json(&a.out, &c)?;
    write_sidecar(cli, &a.out, "cluster", a, json!({}))
}

fn explain_global(cli: &Cli, a: &GlobalArgs) -> CliResult<()> {
    let model = Checkpoint::load(&a.model)?.model();
    let report = explain::global_importance(&model.params, &model.feature_names)?;
    write_json(&a.out, &report)?;
    print_importances(&report);
    write_sidecar(cli, &a.out, "explain global", a, json!({}))
}

/// Normalized rows with their neighbour graph, the cluster model and the
/// explanation settings of the checkpoint.
fn saliency_inputs(a: &SaliencyArgs) -> CliResult<(Checkpoint, Dataset, ClusterModel)> {
    let ckpt = Checkpoint::load(&a.model)?;
    let raw = load_csv(&a.input, a.label_column.as_deref())?;
    let d = trainer::explain_dataset(&ckpt.model(), &raw, &ckpt.trainer.config)?;
    let clusters = load_clusters(&a.clusters)?;
    if clusters.assignments.len() != d.len() {
        return Err(CliError::Invalid(format!(
            "cluster model covers {} rows but {} has {}",
            clusters.assignments.len(),
            a.input.display(),
            d.len()
        )));
    }
    Ok((ckpt, d, clusters))
}

fn explain_local(cli: &Cli, a: &LocalArgs) -> CliResult<()> {
    let c = &a.common;
    let (ckpt, d, clusters) = saliency_inputs(c)?;
    let cfg = ckpt.trainer.config.explain_config(c.repeats, c.seed, c.average_all);
    let report = explain::local_importance(&d, &ckpt.trainer.params, &clusters, a.cluster, &cfg)?;
    write_json(&c.out, &report)?;
    print_importances(&report);
    write_sidecar(cli, &c.out, "explain local", a, json!({}))
}

fn explain_transform(cli: &Cli, a: &TransformArgs) -> CliResult<()> {
    let c = &a.common;
    let (ckpt, d, clusters) = saliency_inputs(c)?;
    let cfg = ckpt.trainer.config.explain_config(c.repeats, c.seed, c.average_all);
    let report = explain::transform_importance(&d, &ckpt.trainer.params, &clusters, a.c1, a.c2, &cfg)?;
    write_json(&c.out, &report)?;
    print_importances(&report);
    write_sidecar(cli, &c.out, "explain transform", a, json!({}))
}

fn print_importances(r: &explain::ImportanceReport) {
    let width = r.features.iter().map(|f| f.name.len()).max().unwrap_or(7).max(7);
    println!("{:<width$}  {:>12}", "feature", "importance");
    for f in &r.features {
        println!("{:<width$}  {:>12.6}", f.name, f.value);
    }
}

fn emit_metric(cli: &Cli, report: &MetricReport, out: Option<&Path>, command: &str, args: &impl Serialize) -> CliResult<()> {
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{:<8}{:>12}{:>12}{:>8}", "metric", "value", "k_or_folds", "seed");
    let _ = writeln!(
        stdout,
        "{:<8}{:>12.6}{:>12}{:>8}",
        report.metric, report.value, report.k_or_folds, report.seed
    );
    if let Some(path) = out {
        write_json(path, report)?;
        write_sidecar(cli, path, command, args, json!({}))?;
    }
    Ok(())
}

fn labels_of(d: &Dataset, path: &Path) -> CliResult<Vec<usize>> {
    d.labels
        .clone()
        .ok_or_else(|| CliError::Invalid(format!("{} has no label column", path.display())))
}

fn eval_rre(cli: &Cli, a: &RreArgs) -> CliResult<()> {
    let raw = load_csv(&a.input, a.label_column.as_deref())?;
    let high: Array2<f64> = match &a.model {
        Some(p) => Checkpoint::load(p)?.model().preprocess(raw.features.view())?,
        None => raw.features.clone(),
    };
    let emb = load_embedding(&a.embedding)?;
    let v = eval::rre(high.view(), emb.features.slice(s![.., ..]), a.k)?;
    emit_metric(cli, &MetricReport::new("rre", v, a.k, 0), a.out.as_deref(), "eval rre", a)
}

fn eval_clf(cli: &Cli, a: &ClfArgs) -> CliResult<()> {
    let emb = load_embedding(&a.embedding)?;
    let labels = labels_of(&emb, &a.embedding)?;
    let v = eval::linear_accuracy(emb.features.view(), &labels, a.folds, a.seed)?;
    emit_metric(cli, &MetricReport::new("clf", v, a.folds, a.seed), a.out.as_deref(), "eval clf", a)
}

fn eval_clu(cli: &Cli, a: &CluArgs) -> CliResult<()> {
    let emb = load_embedding(&a.embedding)?;
    let labels = labels_of(&emb, &a.embedding)?;
    let (v, k) = match &a.clusters {
        Some(p) => {
            let c = load_clusters(p)?;
            (eval::clustering_accuracy(&c.assignments, &labels)?, c.k())
        }
        None => (eval::kmeans_accuracy(emb.features.view(), &labels, a.seed)?, emb.n_classes()),
    };
    emit_metric(cli, &MetricReport::new("clu", v, k, a.seed), a.out.as_deref(), "eval clu", a)
}

fn serve(a: &ServeArgs) -> CliResult<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::Invalid(format!("bad address {}:{}: {e}", a.host, a.port)))?;
    let cfg = evnet_service::ServiceConfig {
        data_dir: a.data_dir.clone(),
        ui_dir: a.ui_dir.clone(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(io_err(Path::new("<runtime>")))?;
    eprintln!("listening on http://{addr}");
    rt.block_on(evnet_service::serve(addr, cfg)).map_err(io_err(Path::new("<listener>")))
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult<()> {
    let d = a.spec.parse::<Synthetic>()?.generate(a.seed)?;
    let mut buf = Vec::new();
    d.to_csv_writer(&mut buf)?;
    write_bytes(&a.out, &buf)?;
    write_sidecar(cli, &a.out, "synth", a, json!({}))
}
