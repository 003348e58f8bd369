//! HTTP service for chainanno: authentication, protocol delivery, the
//! annotation workflow, and the data and admin consoles.

pub mod app;
pub mod auth;
pub mod config;
pub mod error;
pub mod plugins;

use std::sync::Arc;

pub use app::{router, AppState};
pub use config::Config;

/// Opens the store, applies configured options and installs the protocol.
pub fn build_state(config: &Config) -> Result<Arc<AppState>, String> {
    if let Some(dir) = config.store.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let store = chainanno_core::Datastore::open(&config.store)
        .map_err(|e| format!("{}: {e}", config.store.display()))?;
    if let Some(minutes) = config.lease_minutes {
        let mut options = store.options().map_err(|e| e.to_string())?;
        options.assignment_lease_minutes = minutes;
        store.set_options(options).map_err(|e| e.to_string())?;
    }
    let state = AppState::new(store, plugins::default_registry(), config.token_hours * 3600);
    if let Some(path) = &config.protocol {
        state
            .install_protocol_file(path)
            .map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(Arc::new(state))
}

pub async fn serve(config: Config) -> Result<(), String> {
    let state = build_state(&config)?;
    if state.installed().is_none() {
        tracing::warn!("no protocol configured; GET /protocol answers 503");
    }
    let app = router(state, config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|e| format!("bind {}: {e}", config.bind))?;
    tracing::info!("listening on {}", config.bind);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
