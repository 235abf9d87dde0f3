//! FIFO task queue with one JSON file per task under a state directory.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, MutexGuard};

use chrono::Utc;
use thiserror::Error;

use segtune_core::runner::{Progress, TuningOutcome};

use crate::request::TuneRequest;
use crate::task::{TaskId, TaskStatus, TaskSummary, TuningTask};

pub const INTERRUPTED: &str = "interrupted by restart";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("state directory {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("task file {path}: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeleteError {
    #[error("no such task")]
    NotFound,
    #[error("task is running")]
    Running,
}

#[derive(Debug, Default)]
struct QueueState {
    tasks: HashMap<TaskId, TuningTask>,
    pending: VecDeque<TaskId>,
    running: usize,
    closed: bool,
}

#[derive(Debug)]
pub struct TaskQueue {
    dir: PathBuf,
    max_running: usize,
    /// Finished tasks kept before the oldest are dropped; unlimited if unset.
    retain: Option<usize>,
    state: Mutex<QueueState>,
    ready: Condvar,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_owned(), source }
}

impl TaskQueue {
    /// Opens (creating if needed) a state directory and recovers its tasks.
    ///
    /// Queued tasks are requeued in submission order. Tasks that were running
    /// when the previous process stopped are marked failed.
    pub fn open(dir: impl Into<PathBuf>, max_running: usize, retain: Option<usize>) -> Result<Self, StoreError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut state = QueueState::default();
        let mut queued = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
            let mut task: TuningTask =
                serde_json::from_str(&text).map_err(|source| StoreError::Corrupt { path: path.clone(), source })?;
            match task.status {
                TaskStatus::Queued => queued.push((task.submitted_at, task.id.clone())),
                TaskStatus::Running => {
                    task.status = TaskStatus::Failed;
                    task.error = Some(INTERRUPTED.into());
                    task.finished_at = Some(Utc::now());
                    write_task(&dir, &task)?;
                }
                TaskStatus::Done | TaskStatus::Failed => {}
            }
            state.tasks.insert(task.id.clone(), task);
        }
        queued.sort();
        state.pending = queued.into_iter().map(|(_, id)| id).collect();
        if !state.tasks.is_empty() {
            log::info!("recovered {} tasks ({} queued) from {}", state.tasks.len(), state.pending.len(), dir.display());
        }
        Ok(Self { dir, max_running: max_running.max(1), retain, state: Mutex::new(state), ready: Condvar::new() })
    }

    pub fn max_running(&self) -> usize {
        self.max_running
    }

    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn persist(&self, task: &TuningTask) {
        if let Err(e) = write_task(&self.dir, task) {
            log::error!("could not persist task {}: {e}", task.id);
        }
    }

    pub fn submit(&self, request: TuneRequest) -> Result<TaskId, StoreError> {
        let id = TaskId::random();
        let task = TuningTask::new(id.clone(), request);
        write_task(&self.dir, &task)?;
        let mut st = self.lock();
        st.tasks.insert(id.clone(), task);
        st.pending.push_back(id.clone());
        drop(st);
        self.ready.notify_one();
        Ok(id)
    }

    pub fn get(&self, id: &TaskId) -> Option<TuningTask> {
        self.lock().tasks.get(id).cloned()
    }

    pub fn summary(&self, id: &TaskId) -> Option<TaskSummary> {
        self.lock().tasks.get(id).map(TuningTask::summary)
    }

    /// All tasks by submission time.
    pub fn list(&self) -> Vec<TaskSummary> {
        let mut all: Vec<TaskSummary> = self.lock().tasks.values().map(TuningTask::summary).collect();
        all.sort_by(|a, b| a.submitted_at.cmp(&b.submitted_at).then_with(|| a.id.cmp(&b.id)));
        all
    }

    pub fn counts(&self) -> (usize, usize) {
        let st = self.lock();
        (st.pending.len(), st.running)
    }

    pub fn delete(&self, id: &TaskId) -> Result<(), DeleteError> {
        let mut st = self.lock();
        match st.tasks.get(id).map(|t| t.status) {
            None => return Err(DeleteError::NotFound),
            Some(TaskStatus::Running) => return Err(DeleteError::Running),
            Some(_) => {}
        }
        st.tasks.remove(id);
        st.pending.retain(|p| p != id);
        drop(st);
        let path = task_path(&self.dir, id);
        if let Err(e) = std::fs::remove_file(&path) {
            log::warn!("could not remove {}: {e}", path.display());
        }
        Ok(())
    }

    /// Blocks until a pending task can start, marks it running, and returns it.
    /// Returns `None` once the queue is closed.
    pub fn next_task(&self) -> Option<(TaskId, TuneRequest)> {
        let mut st = self.lock();
        loop {
            if st.closed {
                return None;
            }
            if st.running < self.max_running {
                if let Some(id) = st.pending.pop_front() {
                    st.running += 1;
                    let task = st.tasks.get_mut(&id).expect("pending task exists");
                    task.status = TaskStatus::Running;
                    task.started_at = Some(Utc::now());
                    let (snapshot, request) = (task.clone(), task.request.clone());
                    self.persist(&snapshot);
                    return Some((id, request));
                }
            }
            st = self.ready.wait(st).unwrap_or_else(|p| p.into_inner());
        }
    }

    /// Records progress; the executed count never moves backwards.
    pub fn progress(&self, id: &TaskId, p: &Progress) {
        let mut st = self.lock();
        if let Some(task) = st.tasks.get_mut(id) {
            if p.executed >= task.progress.executed {
                task.progress.executed = p.executed;
                task.best_so_far = p.best.clone();
            }
        }
    }

    pub fn finish(&self, id: &TaskId, result: Result<TuningOutcome, String>) {
        let mut st = self.lock();
        st.running = st.running.saturating_sub(1);
        if let Some(task) = st.tasks.get_mut(id) {
            task.finished_at = Some(Utc::now());
            match result {
                Ok(outcome) => {
                    task.status = TaskStatus::Done;
                    task.progress.executed = outcome.executed;
                    task.best_so_far = Some(outcome.best.clone());
                    task.result = Some(outcome);
                }
                Err(e) => {
                    task.status = TaskStatus::Failed;
                    task.error = Some(e);
                }
            }
            let snapshot = task.clone();
            self.persist(&snapshot);
        }
        let evicted = self.evict(&mut st);
        drop(st);
        for id in evicted {
            let _ = std::fs::remove_file(task_path(&self.dir, &id));
        }
        self.ready.notify_all();
    }

    fn evict(&self, st: &mut QueueState) -> Vec<TaskId> {
        let Some(limit) = self.retain else { return Vec::new() };
        let mut finished: Vec<(chrono::DateTime<Utc>, TaskId)> = st
            .tasks
            .values()
            .filter(|t| t.status.is_terminal())
            .map(|t| (t.finished_at.unwrap_or(t.submitted_at), t.id.clone()))
            .collect();
        if finished.len() <= limit {
            return Vec::new();
        }
        finished.sort();
        let drop_n = finished.len() - limit;
        finished.truncate(drop_n);
        finished.into_iter().map(|(_, id)| st.tasks.remove(&id).map(|t| t.id).expect("present")).collect()
    }

    /// Wakes idle workers and makes `next_task` return `None`.
    pub fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }
}

fn task_path(dir: &Path, id: &TaskId) -> PathBuf {
    dir.join(format!("{id}.json"))
}

/// Writes via a temp file and rename so a crash never leaves a torn file.
fn write_task(dir: &Path, task: &TuningTask) -> Result<(), StoreError> {
    let path = task_path(dir, &task.id);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    serde_json::to_writer(&mut tmp, task).map_err(|e| StoreError::Io { path: path.clone(), source: e.into() })?;
    tmp.as_file_mut().flush().map_err(io_err(&path))?;
    tmp.as_file().sync_all().map_err(io_err(&path))?;
    tmp.persist(&path).map_err(|e| StoreError::Io { path: path.clone(), source: e.error })?;
    Ok(())
}
