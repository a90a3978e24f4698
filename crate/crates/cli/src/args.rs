//! Flag definitions. Training flags mirror `TrainConfig` field names.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use evnet_core::dataset::NormalizeMode;
use evnet_core::network::NetworkShape;
use evnet_core::trainer::TrainConfig;
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "evnet", version, about = "Explainable parametric dimension reduction")]
pub struct Cli {
    /// Worker threads for internal parallelism; results do not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Train on a CSV (or a synthetic fixture) and write a checkpoint and a report
    Train(TrainArgs),
    /// Embed CSV rows with a trained checkpoint
    Embed(EmbedArgs),
    /// Fit k-means on an embedding
    Cluster(ClusterArgs),
    /// Feature importance reports
    #[command(subcommand)]
    Explain(ExplainCommand),
    /// Embedding quality metrics
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Start the HTTP service
    Serve(ServeArgs),
    /// Write a synthetic fixture as CSV
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Input CSV
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate the input instead, e.g. gaussians:k=3,per=100,dim=5
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Name of the label column in the input CSV
    #[arg(long)]
    pub label_column: Option<String>,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// Report path [default: <out>.report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Start from the config in a sidecar (or bare config) JSON; flags given on the command line override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fraction of rows used for training; the rest are held out
    #[arg(long, default_value_t = 1.0)]
    pub train_fraction: f64,
    /// Seed of the train/test split [default: --seed]
    #[arg(long)]
    pub split_seed: Option<u64>,

    #[command(flatten)]
    pub train: TrainFlags,
}

/// One flag per `TrainConfig` field.
#[derive(Debug, Args, Serialize)]
pub struct TrainFlags {
    /// Training epochs
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    /// Batch size (clipped to the dataset size)
    #[arg(long, default_value_t = 1000)]
    pub batch_size: usize,
    /// Neighbour count K for augmentation; grid {3, 5, 8, 10, 15}
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Upper bound p_U of the interpolation ratio
    #[arg(long, default_value_t = 2.0)]
    pub p_u: f64,
    /// Degrees of freedom of the input-space kernel
    #[arg(long, default_value_t = 100.0)]
    pub nu_y: f64,
    /// Degrees of freedom of the embedding kernel; grid {0.001, 0.005, 0.01, 0.1}
    #[arg(long, default_value_t = 0.01)]
    pub nu_z: f64,
    /// AdamW learning rate
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Target active-feature count A_f [default: number of input features, no pruning]
    #[arg(long)]
    pub target_features: Option<usize>,
    /// Seed for initialization, shuffling and augmentation
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw augmentation neighbours from the same label only
    #[arg(long)]
    pub supervised: bool,
    /// Stop gradients through the input-space similarities
    #[arg(long)]
    pub detach_target: bool,
    /// Keep the i = j terms of the structure loss
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub include_diagonal: bool,
    /// One interpolation ratio per point instead of one per feature
    #[arg(long, alias = "shared-ru")]
    pub shared_ratio: bool,
    /// Gate threshold ε
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// λ starts at L_sp / (ratio · L_reg)
    #[arg(long, default_value_t = 0.1)]
    pub lambda_init_ratio: f64,
    /// Per-epoch multiplicative λ growth while above the target
    #[arg(long, default_value_t = 0.005)]
    pub lambda_growth: f64,
    /// Decoupled weight decay (gate excluded)
    #[arg(long, default_value_t = 1e-2)]
    pub weight_decay: f64,
    /// Probability clamp inside the logarithms
    #[arg(long, default_value_t = 1e-7)]
    pub clamp: f64,
    /// Input normalization: zscore, minmax or none
    #[arg(long, default_value = "zscore")]
    pub normalize: NormalizeMode,
    /// Projection layer widths after the gate
    #[arg(long, value_delimiter = ',', default_value = "200,200,200,80")]
    pub shape_projection: Vec<usize>,
    /// Head layer widths
    #[arg(long, value_delimiter = ',', default_value = "200,2")]
    pub shape_head: Vec<usize>,
}

impl TrainFlags {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            k: self.k,
            p_u: self.p_u,
            nu_y: self.nu_y,
            nu_z: self.nu_z,
            lr: self.lr,
            target_features: self.target_features,
            seed: self.seed,
            supervised: self.supervised,
            detach_target: self.detach_target,
            include_diagonal: self.include_diagonal,
            shared_ratio: self.shared_ratio,
            epsilon: self.epsilon,
            lambda_init_ratio: self.lambda_init_ratio,
            lambda_growth: self.lambda_growth,
            weight_decay: self.weight_decay,
            clamp: self.clamp,
            normalize: self.normalize,
            shape: NetworkShape {
                projection: self.shape_projection.clone(),
                head: self.shape_head.clone(),
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Embedding CSV with columns x,y[,label]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClusterArgs {
    /// Embedding CSV written by `embed`
    #[arg(long)]
    pub embedding: PathBuf,
    /// Number of clusters
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cluster model JSON
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainCommand {
    /// Normalized gate weights
    Global(GlobalArgs),
    /// Saliency of membership in one cluster
    Local(LocalArgs),
    /// Saliency of moving from cluster c1 towards c2
    Transform(TransformArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GlobalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Inputs shared by the saliency reports.
#[derive(Debug, Args, Serialize)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The rows the cluster model was fitted on
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Cluster model written by `cluster`
    #[arg(long)]
    pub clusters: PathBuf,
    /// Augmentation draws per sample
    #[arg(long, default_value_t = 8)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Average over every row instead of the queried cluster's members
    #[arg(long)]
    pub average_all: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalArgs {
    /// Cluster to explain
    #[arg(long)]
    pub cluster: usize,
    #[command(flatten)]
    pub common: SaliencyArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct TransformArgs {
    /// Source cluster
    #[arg(long)]
    pub c1: usize,
    /// Destination cluster
    #[arg(long)]
    pub c2: usize,
    #[command(flatten)]
    pub common: SaliencyArgs,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalCommand {
    /// Relative rank error between input rows and their embedding
    Rre(RreArgs),
    /// Cross-validated linear accuracy on the embedding
    Clf(ClfArgs),
    /// k-means clustering accuracy against the labels
    Clu(CluArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct RreArgs {
    /// Input rows
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub label_column: Option<String>,
    /// Embedding of the same rows, same order
    #[arg(long)]
    pub embedding: PathBuf,
    /// Normalize the input with this checkpoint's frozen statistics first
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Neighbourhood size
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Metrics JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ClfArgs {
    /// Embedding CSV with a label column
    #[arg(long)]
    pub embedding: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CluArgs {
    /// Embedding CSV with a label column
    #[arg(long)]
    pub embedding: PathBuf,
    /// Score these assignments instead of fitting k-means with K = number of classes
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    #[arg(long, default_value_t = evnet_service::DEFAULT_PORT)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Also write uploaded datasets and finished checkpoints here
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Static UI bundle served under /ui
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Fixture spec: gaussians:k=3,per=100,dim=5 | noisy_gaussians:k=2,per=50,dim=4,noise=6 | swiss_roll:points=500,noise=0,classes=4
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV path; labels go to a `label` column
    #[arg(long)]
    pub out: PathBuf,
}
