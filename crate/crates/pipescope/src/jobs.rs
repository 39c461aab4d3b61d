//! In-memory job queue with a single worker thread.
//!
//! Jobs move `queued → running → done | failed`; a terminal state is never left. While
//! running, the reported stage only moves forward and progress within a stage never drops.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc, Mutex, Weak};
use std::time::{Duration, Instant};

use pipescope_core::config::ConfigError;
use pipescope_core::pipeline::{run_pipeline_observed, PipelineObserver};
use pipescope_core::{PipelineConfig, RunReport, Stage};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running { stage: Stage, progress: f64 },
    Done { report: Box<RunReport> },
    Failed { error: String, stage: Option<Stage> },
}

impl JobState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, JobState::Done { .. } | JobState::Failed { .. })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Job {
    pub id: u64,
    pub config: PipelineConfig,
    pub warnings: Vec<String>,
    pub state: JobState,
}

struct Entry {
    job: Job,
    cancel: Arc<AtomicBool>,
}

struct Shared {
    jobs: Mutex<BTreeMap<u64, Entry>>,
    next_id: AtomicU64,
    queue: Mutex<mpsc::Sender<u64>>,
    work_root: PathBuf,
}

impl Shared {
    fn update(&self, id: u64, f: impl FnOnce(&mut JobState)) {
        if let Some(e) = self.jobs.lock().unwrap().get_mut(&id) {
            if !e.job.state.is_terminal() {
                f(&mut e.job.state);
            }
        }
    }
}

/// Handle to the job table; clones share the same queue and worker.
#[derive(Clone)]
pub struct JobManager {
    shared: Arc<Shared>,
}

fn stage_rank(s: Stage) -> usize {
    Stage::ALL.iter().position(|&x| x == s).unwrap_or(0)
}

struct JobObserver {
    shared: Arc<Shared>,
    id: u64,
    cancel: Arc<AtomicBool>,
}

impl JobObserver {
    fn advance(&self, stage: Stage, fraction: f64) {
        self.shared.update(self.id, |state| match state {
            JobState::Running { stage: cur, progress } => {
                if stage_rank(stage) > stage_rank(*cur) {
                    *cur = stage;
                    *progress = fraction;
                } else if stage == *cur && fraction > *progress {
                    *progress = fraction;
                }
            }
            JobState::Queued => {
                *state = JobState::Running {
                    stage,
                    progress: fraction,
                }
            }
            _ => {}
        });
    }
}

impl PipelineObserver for JobObserver {
    fn stage_started(&self, stage: Stage) {
        self.advance(stage, 0.0);
    }

    fn progress(&self, stage: Stage, fraction: f64) {
        self.advance(stage, fraction.clamp(0.0, 1.0));
    }

    fn is_cancelled(&self) -> bool {
        self.cancel.load(Ordering::SeqCst)
    }
}

fn worker(shared: Weak<Shared>, rx: mpsc::Receiver<u64>) {
    while let Ok(id) = rx.recv() {
        let Some(shared) = shared.upgrade() else { break };
        let (config, cancel) = {
            let jobs = shared.jobs.lock().unwrap();
            match jobs.get(&id) {
                Some(e) if !e.job.state.is_terminal() => (e.job.config.clone(), e.cancel.clone()),
                _ => continue,
            }
        };
        shared.update(id, |s| {
            *s = JobState::Running {
                stage: Stage::Ingest,
                progress: 0.0,
            }
        });
        let observer = JobObserver {
            shared: shared.clone(),
            id,
            cancel,
        };
        let result = run_pipeline_observed(&config, &observer);
        shared.update(id, |s| {
            *s = match result {
                Ok((_, report)) => JobState::Done {
                    report: Box::new(report),
                },
                Err(e) => {
                    log::warn!("job {id} failed: {e}");
                    JobState::Failed {
                        error: if e.is_cancelled() {
                            "cancelled".into()
                        } else {
                            e.to_string()
                        },
                        stage: e.stage(),
                    }
                }
            }
        });
    }
}

impl JobManager {
    /// Starts the worker. Each job writes its artifacts to `work_root/job-<id>`.
    pub fn new(work_root: PathBuf) -> Self {
        let (tx, rx) = mpsc::channel();
        let shared = Arc::new(Shared {
            jobs: Mutex::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            queue: Mutex::new(tx),
            work_root,
        });
        let weak = Arc::downgrade(&shared);
        std::thread::Builder::new()
            .name("pipescope-jobs".into())
            .spawn(move || worker(weak, rx))
            .expect("spawn job worker");
        Self { shared }
    }

    pub fn submit(&self, mut config: PipelineConfig) -> Result<Job, ConfigError> {
        let id = self.shared.next_id.fetch_add(1, Ordering::SeqCst);
        config.output_dir = self.shared.work_root.join(format!("job-{id}"));
        let warnings = config.validate()?;
        let job = Job {
            id,
            config,
            warnings,
            state: JobState::Queued,
        };
        self.shared.jobs.lock().unwrap().insert(
            id,
            Entry {
                job: job.clone(),
                cancel: Arc::new(AtomicBool::new(false)),
            },
        );
        self.shared
            .queue
            .lock()
            .unwrap()
            .send(id)
            .expect("job worker alive");
        Ok(job)
    }

    pub fn get(&self, id: u64) -> Option<Job> {
        self.shared.jobs.lock().unwrap().get(&id).map(|e| e.job.clone())
    }

    pub fn list(&self) -> Vec<Job> {
        self.shared
            .jobs
            .lock()
            .unwrap()
            .values()
            .map(|e| e.job.clone())
            .collect()
    }

    /// Cancels a queued or running job. A queued job fails at once; a running one fails
    /// at its next cancellation check.
    pub fn cancel(&self, id: u64) -> Option<Job> {
        let mut jobs = self.shared.jobs.lock().unwrap();
        let e = jobs.get_mut(&id)?;
        e.cancel.store(true, Ordering::SeqCst);
        if e.job.state == JobState::Queued {
            e.job.state = JobState::Failed {
                error: "cancelled".into(),
                stage: None,
            };
        }
        Some(e.job.clone())
    }

    /// Polls until the job reaches a terminal state or `timeout` passes.
    pub fn wait(&self, id: u64, timeout: Duration) -> Option<Job> {
        let deadline = Instant::now() + timeout;
        loop {
            let job = self.get(id)?;
            if job.state.is_terminal() || Instant::now() >= deadline {
                return Some(job);
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}
