//! Local HTTP service: session lifecycle, corpus lookup, per-session event
//! streams over SSE and the timing experiment store.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use config::{ConfigError, ModelSlot, ServiceConfig};
pub use error::{ApiError, ErrorBody};
pub use events::{EventEnvelope, PhaseNotice};
pub use state::{AppState, ClientFactory, DefaultClientFactory, SessionHandle, StartupError};

/// Builds the app with the default provider wiring.
pub fn build_app(config: ServiceConfig) -> Result<(AppState, axum::Router), StartupError> {
    let factory = Arc::new(DefaultClientFactory::new(&config));
    build_app_with(config, factory)
}

pub fn build_app_with(
    config: ServiceConfig,
    factory: Arc<dyn ClientFactory>,
) -> Result<(AppState, axum::Router), StartupError> {
    let state = AppState::new(config, factory)?;
    Ok((state.clone(), router(state)))
}

/// Binds `addr` and serves until the process exits.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let (state, app) = build_app(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "{}", state.corpus_status);
    axum::serve(listener, app).await
}
