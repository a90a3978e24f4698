//! HTTP/JSON facade over the trainer, the explanations and the metrics.
//!
//! Training runs as poll-based jobs on one dedicated worker thread; requests
//! queue in FIFO order. Every error body is `{code, message, field?}`.

pub mod api;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use error::{ApiError, ErrorBody};
pub use state::{AppState, Job, JobState, ServiceConfig};

pub const DEFAULT_PORT: u16 = 8080;

/// Binds `addr` and serves until the process exits.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::clone(&state))).await
}
