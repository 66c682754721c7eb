//! HTTP/JSON service for live survey planning.

mod api;
mod error;
mod session;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{router, AppState, WhatIfRequest, WhatIfResponse};
pub use error::{ErrorBody, ServiceError};
pub use session::{
    BatchRecord, CategoryCounts, CategoryDef, CategoryEstimate, CategoryPrior, Estimates, OverallSummary,
    Recommendation, Session, SessionDefinition, SessionView, TargetOverrides,
};
pub use store::{read_journal, JournalEvent, SessionStore};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Journal file; sessions live only in memory when absent.
    pub journal: Option<PathBuf>,
    pub token: Option<String>,
}

pub fn build_state(config: &ServiceConfig) -> Result<AppState, ServiceError> {
    let store = match &config.journal {
        Some(path) => SessionStore::with_journal(path)?,
        None => SessionStore::in_memory(),
    };
    Ok(AppState::new(store, config.token.clone()))
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = build_state(&config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
