//! Network front end of the ozwoz Wizard-of-Oz server.
//!
//! A single process serves the experiment REST API, one WebSocket channel
//! per connected client, the audio asset store and the static client pages.
//! Everything is persisted as files under one data directory (see
//! [`store`]).

pub mod api;
pub mod catalog;
pub mod hub;
pub mod protocol;
pub mod store;
mod ws;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use tokio::net::TcpListener;

use ozwoz_core::adapters::{AdapterRegistry, RegistryError};

use crate::api::AppState;
use crate::catalog::{Catalog, CatalogError};
use crate::hub::{Hub, HubConfig, RecoveryReport};
use crate::store::{Store, StoreError};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub data_dir: PathBuf,
    /// Adapter registry file; defaults to `<data_dir>/adapters.json` when
    /// that exists, otherwise no adapters are registered.
    pub adapters: Option<PathBuf>,
    pub hub: HubConfig,
    pub fsync: bool,
}

impl ServerOptions {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), adapters: None, hub: HubConfig::default(), fsync: false }
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot bind: {0}")]
    Bind(std::io::Error),
}

/// A server listening in the background.
pub struct RunningServer {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    pub recovery: RecoveryReport,
    task: tokio::task::JoinHandle<()>,
}

impl RunningServer {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn abort(&self) {
        self.task.abort();
    }
}

/// Load everything under the data directory and restart live sessions.
pub fn load_state(opts: &ServerOptions) -> Result<(Arc<AppState>, RecoveryReport), StartupError> {
    let store = Store::open(&opts.data_dir, opts.fsync)?;
    let registry_path = opts.adapters.clone().or_else(|| {
        let default = opts.data_dir.join("adapters.json");
        default.exists().then_some(default)
    });
    let registry = match registry_path {
        Some(p) => AdapterRegistry::load(&p)?,
        None => AdapterRegistry::new(),
    };
    let catalog = Catalog::load(store.clone())?;
    let (hub, report) = Hub::recover(store.clone(), registry, opts.hub.clone())?;
    Ok((Arc::new(AppState { catalog, hub, store }), report))
}

/// Bind `addr` and serve in a background task.
pub async fn spawn(opts: &ServerOptions, addr: SocketAddr) -> Result<RunningServer, StartupError> {
    let (state, recovery) = load_state(opts)?;
    let listener = TcpListener::bind(addr).await.map_err(StartupError::Bind)?;
    let addr = listener.local_addr().map_err(StartupError::Bind)?;
    let app = api::router(state.clone());
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(RunningServer { addr, state, recovery, task })
}
