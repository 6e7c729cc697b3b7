use std::sync::Arc;

use cmind_core::corpus::load_archive_bytes;
use cmind_core::llm::{LlmConfig, LlmError, LlmGateway};
use cmind_core::pipeline::{run, LocalizationResult, PipelineConfig, RunStatus};
use cmind_core::prompts::BugReport;
use tokio::sync::{mpsc, Semaphore};

use crate::store::{JobId, JobStatus, JobStore};

/// Builds a fresh gateway for each job, so scripted transcripts and
/// sessions are never shared between runs.
#[derive(Clone)]
pub struct GatewayFactory(Arc<dyn Fn() -> Result<LlmGateway, LlmError> + Send + Sync>);

impl GatewayFactory {
    pub fn new(f: impl Fn() -> Result<LlmGateway, LlmError> + Send + Sync + 'static) -> Self {
        GatewayFactory(Arc::new(f))
    }

    pub fn from_config(config: LlmConfig) -> Self {
        GatewayFactory::new(move || LlmGateway::from_config(&config))
    }
}

/// FIFO queue drained by at most `workers` concurrent pipeline runs.
#[derive(Clone)]
pub struct WorkerPool {
    tx: mpsc::UnboundedSender<JobId>,
}

impl WorkerPool {
    pub fn start(
        store: Arc<JobStore>,
        workers: usize,
        pipeline: PipelineConfig,
        gateways: GatewayFactory,
    ) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<JobId>();
        let permits = Arc::new(Semaphore::new(workers.max(1)));
        tokio::spawn(async move {
            while let Some(id) = rx.recv().await {
                let permit = permits.clone().acquire_owned().await.expect("semaphore closed");
                let store = store.clone();
                let pipeline = pipeline.clone();
                let gateways = gateways.clone();
                tokio::task::spawn_blocking(move || {
                    execute(&store, &id, &pipeline, &gateways);
                    drop(permit);
                });
            }
        });
        WorkerPool { tx }
    }

    pub fn enqueue(&self, id: JobId) {
        if self.tx.send(id).is_err() {
            log::error!("worker pool is gone; job stays queued until restart");
        }
    }
}

fn execute(store: &JobStore, id: &JobId, pipeline: &PipelineConfig, gateways: &GatewayFactory) {
    if let Err(e) = store.mark_running(id) {
        log::error!("job {id}: {e}");
        return;
    }
    log::info!("job {id} running");
    let mut result = match prepare_and_run(store, id, pipeline, gateways) {
        Ok(r) => r,
        Err(reason) => LocalizationResult::failed(reason),
    };
    result.id = Some(id.to_string());
    let status = match result.status {
        RunStatus::Failed => JobStatus::Failed,
        RunStatus::Completed | RunStatus::Inconclusive => JobStatus::Completed,
    };
    match store.finish(id, status, &result) {
        Ok(_) => log::info!("job {id} finished: {}", result.status.as_str()),
        Err(e) => log::error!("job {id}: cannot store result: {e}"),
    }
}

fn prepare_and_run(
    store: &JobStore,
    id: &JobId,
    pipeline: &PipelineConfig,
    gateways: &GatewayFactory,
) -> Result<LocalizationResult, String> {
    let text = store.report(id).map_err(|e| format!("{}: {e}", e.kind()))?;
    let report = BugReport::new(text).map_err(|e| format!("{}: {e}", e.kind()))?;
    let bytes = store.archive(id).map_err(|e| format!("{}: {e}", e.kind()))?;
    let tree = load_archive_bytes(&bytes, id.as_str()).map_err(|e| format!("{}: {e}", e.kind()))?;
    let gateway = (gateways.0)().map_err(|e| format!("{}: {e}", e.kind()))?;
    Ok(run(&report, &tree, pipeline, &gateway))
}
