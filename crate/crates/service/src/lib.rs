//! HTTP job service: submit a bug report with a source archive, get an ID
//! back, poll it, and download the localization result when it is done.
//!
//! Jobs live on disk under `<data_root>/jobs/<id>/`; deleting that
//! directory while the service is stopped purges a job.

mod api;
mod store;
mod worker;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use cmind_core::llm::LlmConfig;
use cmind_core::pipeline::PipelineConfig;
use tokio::net::TcpListener;

pub use api::router;
pub use store::{JobId, JobRecord, JobStatus, JobStore};
pub use worker::{GatewayFactory, WorkerPool};

/// Upload limit for one submission, report and archive together.
pub const DEFAULT_MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;
pub const DEFAULT_WORKERS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("bug report is empty")]
    InvalidReport,
    #[error("{0}")]
    ArchiveRejected(String),
    #[error("malformed submission: {0}")]
    BadRequest(String),
    #[error("no job with id {0}")]
    UnknownJob(String),
    #[error("job {0} has not finished")]
    NotReady(String),
    #[error("job {id} cannot go from {from:?} to {to:?}")]
    InvalidTransition {
        id: String,
        from: JobStatus,
        to: JobStatus,
    },
    #[error("corrupt job record {0}")]
    Corrupt(String),
    #[error("address {0} is already in use")]
    AddressInUse(SocketAddr),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::InvalidReport => "InvalidReport",
            ServiceError::ArchiveRejected(_) => "ArchiveRejected",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::UnknownJob(_) => "UnknownJob",
            ServiceError::NotReady(_) => "NotReady",
            ServiceError::InvalidTransition { .. } => "InvalidTransition",
            ServiceError::Corrupt(_) => "Corrupt",
            ServiceError::AddressInUse(_) => "AddressInUse",
            ServiceError::Io { .. } => "Io",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_root: PathBuf,
    pub listen: SocketAddr,
    pub workers: usize,
    pub max_upload_bytes: usize,
    pub pipeline: PipelineConfig,
    pub llm: LlmConfig,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>, llm: LlmConfig) -> Self {
        ServiceConfig {
            data_root: data_root.into(),
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            workers: DEFAULT_WORKERS,
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            pipeline: PipelineConfig::default(),
            llm,
        }
    }
}

/// Shared state behind the router.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<JobStore>,
    pub pool: WorkerPool,
    pub max_upload_bytes: usize,
}

impl AppState {
    /// Opens the store, recovers jobs left over from a previous process
    /// and starts the worker pool. Must run inside a tokio runtime.
    pub fn start(config: &ServiceConfig, gateways: GatewayFactory) -> Result<Self, ServiceError> {
        let store = Arc::new(JobStore::open(&config.data_root)?);
        let requeue = store.recover()?;
        let pool = WorkerPool::start(
            store.clone(),
            config.workers,
            config.pipeline.clone(),
            gateways,
        );
        for id in requeue {
            log::info!("requeueing job {id}");
            pool.enqueue(id);
        }
        Ok(AppState {
            store,
            pool,
            max_upload_bytes: config.max_upload_bytes,
        })
    }
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServiceError::AddressInUse(addr)
        } else {
            ServiceError::Io {
                path: addr.to_string(),
                source: e,
            }
        }
    })
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    config: &ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let state = AppState::start(config, GatewayFactory::from_config(config.llm.clone()))?;
    serve_app(listener, state, shutdown).await
}

pub async fn serve_app(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let addr = listener.local_addr().map_err(|e| ServiceError::Io {
        path: "listener".into(),
        source: e,
    })?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|e| ServiceError::Io {
            path: addr.to_string(),
            source: e,
        })
}

/// Binds `config.listen` and serves until Ctrl-C or SIGTERM.
pub async fn serve(config: &ServiceConfig) -> Result<(), ServiceError> {
    let listener = bind(config.listen).await?;
    serve_on(listener, config, shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    log::info!("shutting down");
}
