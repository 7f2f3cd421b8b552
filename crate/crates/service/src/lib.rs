//! Annotation service: manual ground-truth clustering of findings and
//! review of incorrect predictions over HTTP, with crash-safe storage.

pub mod api;
pub mod error;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::router;
pub use error::ServiceError;
pub use model::{Event, ReasonTag, Review, ReviewItem, Session, Verdict, BUILTIN_REASONS};
pub use store::Store;

/// Open the store under `data_dir` and serve until the process is stopped.
/// Prints the bound address once the listener is ready.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf, catalog: Vec<dedupsec::SchemaMapping>) -> std::io::Result<()> {
    let store = tokio::task::spawn_blocking(move || Store::open(data_dir, catalog))
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(store))).await
}
