//! Queued, non-blocking REST front-end for tuning runs.
//!
//! `POST /tasks` validates a [`TuneRequest`] and returns a task id at once;
//! worker threads run queued tasks in submission order, at most
//! [`ServiceConfig::max_running`] at a time. Every task lives in one JSON
//! file under the state directory, so finished results survive a restart.

mod api;
mod queue;
mod request;
mod task;

use std::net::SocketAddr;
use std::panic::AssertUnwindSafe;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

pub use api::{router, ApiError};
pub use queue::{DeleteError, StoreError, TaskQueue, INTERRUPTED};
pub use request::{RequestError, SpaceSource, TuneRequest};
pub use task::{TaskId, TaskProgress, TaskStatus, TaskSummary, TuningTask};

pub const DEFAULT_PORT: u16 = 8080;
pub const STATE_DIR_ENV: &str = "SEGTUNE_STATE_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub state_dir: PathBuf,
    /// Tasks allowed in the running state at once.
    pub max_running: usize,
    /// Evaluation workers for requests that do not set their own.
    pub workers: usize,
    /// Enables `GET /tasks`.
    pub admin_list: bool,
    pub retain: Option<usize>,
}

impl ServiceConfig {
    pub fn new(state_dir: impl Into<PathBuf>) -> Self {
        Self { state_dir: state_dir.into(), max_running: 1, workers: 1, admin_list: false, retain: None }
    }
}

#[derive(Debug)]
pub struct TuningService {
    config: ServiceConfig,
    queue: Arc<TaskQueue>,
    workers: std::sync::Mutex<Vec<JoinHandle<()>>>,
}

impl TuningService {
    /// Opens the state directory and starts `max_running` task threads.
    pub fn start(config: ServiceConfig) -> Result<Arc<Self>, StoreError> {
        let queue = Arc::new(TaskQueue::open(&config.state_dir, config.max_running, config.retain)?);
        let handles = (0..queue.max_running())
            .map(|i| {
                let (queue, workers) = (queue.clone(), config.workers);
                std::thread::Builder::new()
                    .name(format!("segtune-task-{i}"))
                    .spawn(move || run_tasks(&queue, workers))
                    .expect("spawn task thread")
            })
            .collect();
        Ok(Arc::new(Self { config, queue, workers: std::sync::Mutex::new(handles) }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    /// Stops taking new tasks and waits for running ones to finish.
    pub fn shutdown(&self) {
        self.queue.close();
        let handles = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|p| p.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

fn run_tasks(queue: &TaskQueue, default_workers: usize) {
    while let Some((id, request)) = queue.next_task() {
        log::info!("task {id} started");
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| {
            let job = request.prepare(default_workers).map_err(|e| e.to_string())?;
            job.run_with_progress(&mut |p| queue.progress(&id, p)).map_err(|e| e.to_string())
        }))
        .unwrap_or_else(|_| Err("tuning run panicked".into()));
        match &outcome {
            Ok(o) => log::info!("task {id} done: best scalar {:.4} after {} runs", o.best.scalar, o.executed),
            Err(e) => log::warn!("task {id} failed: {e}"),
        }
        queue.finish(&id, outcome);
    }
}

/// Serves on `addr` until ctrl-c. The bound address goes to stderr, so port 0 works.
pub async fn serve(config: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    let service = TuningService::start(config).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    eprintln!("listening on http://{local}");
    axum::serve(listener, router(service.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    tokio::task::spawn_blocking(move || service.shutdown()).await.map_err(std::io::Error::other)?;
    Ok(())
}
