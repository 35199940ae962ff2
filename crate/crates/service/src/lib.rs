//! HTTP service over the description pipeline and the steward review queue.

pub mod api;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

use thiserror::Error;

use scribe_core::config::Config;
use scribe_core::pipeline::{Engine, EngineError};

pub use api::{router, AppState};
pub use store::{ReviewItem, ReviewStore};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] store::StoreError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("server failed: {0}")]
    Serve(#[source] std::io::Error),
}

/// Builds the application state described by `cfg.service`.
pub fn state_from_config(cfg: &Config) -> Result<AppState, ServeError> {
    let engine = match &cfg.service.catalog {
        Some(catalog) => Some(Arc::new(Engine::from_config(
            cfg,
            catalog,
            cfg.service.index.as_deref(),
            cfg.generation.provider,
        )?)),
        None => None,
    };
    let store = Arc::new(ReviewStore::open(&cfg.service.journal)?);
    Ok(AppState::new(engine, store).with_bearer_token(cfg.service.bearer_token.clone()))
}

/// Serves until Ctrl-C.
pub async fn serve(cfg: Config) -> Result<(), ServeError> {
    let state = state_from_config(&cfg)?;
    let listener = tokio::net::TcpListener::bind(&cfg.service.bind)
        .await
        .map_err(|source| ServeError::Bind {
            addr: cfg.service.bind.clone(),
            source,
        })?;
    let addr: Option<SocketAddr> = listener.local_addr().ok();
    tracing::info!(?addr, items = state.store.len(), "review service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Serve)
}
