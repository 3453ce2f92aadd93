//! Preview jobs: a persisted FIFO queue drained by a fixed pool of worker
//! threads.
//!
//! Every job is self-contained on disk (`jobs/<id>/job.json` plus the input
//! image), so queued or interrupted jobs are picked up again after a restart.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use stitchwork_core::colorsplit::Palette;
use stitchwork_core::dataio::list_swatches;
use stitchwork_core::embgan::{Direction, GanState};
use stitchwork_core::preview::{embgan_preview, fraction_tracker, split_style_preview, PreviewMethod};
use stitchwork_core::styletransfer::{StyleWeights, TransferSettings};
use stitchwork_core::{Error, Image, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

/// Everything needed to rerun a preview, as submitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobParams {
    pub method: PreviewMethod,
    pub iterations: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub working_size: usize,
    /// Palette and region → stitch id mapping (split style only).
    pub palette: Option<Palette>,
    pub stitches: BTreeMap<usize, String>,
    /// Resolved checkpoint path (EmbGAN only).
    pub checkpoint: Option<PathBuf>,
    pub direction: Direction,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: String,
    /// Submission order; the queue is FIFO in this number.
    pub seq: u64,
    pub project_id: String,
    pub params: JobParams,
    pub status: JobStatus,
    pub progress: f64,
    pub error: Option<String>,
    /// Name of the failing loss component for numerical failures.
    pub component: Option<String>,
    pub width: usize,
    pub height: usize,
}

struct Queue {
    pending: VecDeque<String>,
    shutdown: bool,
}

pub struct JobQueue {
    dir: PathBuf,
    stitch_dir: PathBuf,
    jobs: RwLock<HashMap<String, Arc<Mutex<JobRecord>>>>,
    queue: Mutex<Queue>,
    wake: Condvar,
    next_seq: AtomicU64,
}

impl JobQueue {
    /// Loads persisted jobs; anything not finished is queued again in
    /// submission order.
    pub fn open(dir: impl Into<PathBuf>, stitch_dir: impl Into<PathBuf>) -> Result<Arc<Self>> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut records = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path().join("job.json");
            if !path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            match serde_json::from_str::<JobRecord>(&text) {
                Ok(r) => records.push(r),
                Err(e) => log::warn!("skipping unreadable job {}: {e}", path.display()),
            }
        }
        records.sort_by_key(|r| r.seq);
        let next_seq = records.last().map_or(0, |r| r.seq + 1);
        let mut pending = VecDeque::new();
        let mut jobs = HashMap::new();
        for mut r in records {
            if matches!(r.status, JobStatus::Queued | JobStatus::Running) {
                r.status = JobStatus::Queued;
                r.progress = 0.0;
                pending.push_back(r.id.clone());
            }
            jobs.insert(r.id.clone(), Arc::new(Mutex::new(r)));
        }
        if !pending.is_empty() {
            log::info!("requeued {} unfinished preview job(s)", pending.len());
        }
        Ok(Arc::new(Self {
            dir,
            stitch_dir: stitch_dir.into(),
            jobs: RwLock::new(jobs),
            queue: Mutex::new(Queue { pending, shutdown: false }),
            wake: Condvar::new(),
            next_seq: AtomicU64::new(next_seq),
        }))
    }

    fn job_dir(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    pub fn result_path(&self, id: &str) -> PathBuf {
        self.job_dir(id).join("result.png")
    }

    fn persist(&self, record: &JobRecord) -> Result<()> {
        let path = self.job_dir(&record.id).join("job.json");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(record)?).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Persists a new job with its input image and queues it.
    pub fn submit(&self, project_id: &str, input: &Image, params: JobParams) -> Result<String> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.job_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        input.save(dir.join("input.png"))?;
        let record = JobRecord {
            id: id.clone(),
            seq: self.next_seq.fetch_add(1, Ordering::SeqCst),
            project_id: project_id.to_string(),
            params,
            status: JobStatus::Queued,
            progress: 0.0,
            error: None,
            component: None,
            width: input.width(),
            height: input.height(),
        };
        self.persist(&record)?;
        self.jobs
            .write()
            .expect("job table poisoned")
            .insert(id.clone(), Arc::new(Mutex::new(record)));
        self.queue.lock().expect("queue poisoned").pending.push_back(id.clone());
        self.wake.notify_one();
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<JobRecord> {
        let jobs = self.jobs.read().expect("job table poisoned");
        jobs.get(id).map(|j| j.lock().expect("job poisoned").clone())
    }

    pub fn pending(&self) -> usize {
        self.queue.lock().expect("queue poisoned").pending.len()
    }

    /// Starts `n` worker threads.
    pub fn spawn_workers(self: &Arc<Self>, n: usize) -> Vec<JoinHandle<()>> {
        (0..n)
            .map(|i| {
                let q = Arc::clone(self);
                std::thread::Builder::new()
                    .name(format!("preview-worker-{i}"))
                    .spawn(move || q.worker_loop())
                    .expect("spawning a worker thread")
            })
            .collect()
    }

    /// Wakes all workers and makes them exit once their current job ends.
    /// Unstarted jobs stay queued on disk; a job interrupted by process exit
    /// is still marked running there and is requeued on the next start.
    pub fn shutdown(&self) {
        self.queue.lock().expect("queue poisoned").shutdown = true;
        self.wake.notify_all();
    }

    fn next(&self) -> Option<String> {
        let mut q = self.queue.lock().expect("queue poisoned");
        loop {
            if q.shutdown {
                return None;
            }
            if let Some(id) = q.pending.pop_front() {
                return Some(id);
            }
            q = self.wake.wait(q).expect("queue poisoned");
        }
    }

    fn worker_loop(&self) {
        while let Some(id) = self.next() {
            let Some(job) = self.jobs.read().expect("job table poisoned").get(&id).cloned() else {
                continue;
            };
            let params = {
                let mut r = job.lock().expect("job poisoned");
                r.status = JobStatus::Running;
                r.progress = 0.0;
                if let Err(e) = self.persist(&r) {
                    log::error!("job {id}: {e}");
                }
                r.params.clone()
            };
            log::info!("job {id}: running {}", params.method);
            let outcome = self.execute(&id, &params, &mut |p| {
                let mut r = job.lock().expect("job poisoned");
                r.progress = r.progress.max(p.clamp(0.0, 1.0));
            });
            let mut r = job.lock().expect("job poisoned");
            match outcome {
                Ok(()) => {
                    r.status = JobStatus::Done;
                    r.progress = 1.0;
                    log::info!("job {id}: done");
                }
                Err(e) => {
                    log::warn!("job {id}: failed: {e}");
                    if let Error::NonFinite { component } = &e {
                        r.component = Some(component.clone());
                    }
                    r.status = JobStatus::Failed;
                    r.error = Some(e.to_string());
                }
            }
            if let Err(e) = self.persist(&r) {
                log::error!("job {id}: {e}");
            }
        }
    }

    fn execute(&self, id: &str, params: &JobParams, progress: &mut dyn FnMut(f64)) -> Result<()> {
        let input = Image::load(self.job_dir(id).join("input.png"))?;
        let result = render_preview(&input, params, &self.stitch_dir, progress)?;
        let out = self.result_path(id);
        let tmp = out.with_extension("png.tmp");
        result.save(&tmp)?;
        fs::rename(&tmp, &out).map_err(|e| Error::io(&out, e))
    }
}

/// Runs the preview described by `params` on `input`. This is the whole
/// computation behind a job, so a result can be reproduced from its logged
/// parameters.
pub fn render_preview(input: &Image, params: &JobParams, stitch_dir: &Path, progress: &mut dyn FnMut(f64)) -> Result<Image> {
    match params.method {
        PreviewMethod::SplitStyle => {
            let palette = params
                .palette
                .as_ref()
                .ok_or_else(|| Error::contract("split-style job without a palette"))?;
            let library: HashMap<String, PathBuf> = list_swatches(stitch_dir)?.into_iter().map(|e| (e.id, e.path)).collect();
            let mut cache: HashMap<&str, Image> = HashMap::new();
            let mut styles = BTreeMap::new();
            for (&r, stitch) in &params.stitches {
                if !cache.contains_key(stitch.as_str()) {
                    let path = library
                        .get(stitch)
                        .ok_or_else(|| Error::invalid(format!("stitch '{stitch}' is not in the library")))?;
                    cache.insert(stitch, Image::load(path)?);
                }
                styles.insert(r, cache[stitch.as_str()].clone());
            }
            let weights = StyleWeights {
                alpha: params.alpha,
                beta: params.beta,
                ..StyleWeights::default()
            };
            let settings = TransferSettings {
                iterations: params.iterations,
                learning_rate: params.learning_rate,
                seed: params.seed,
            };
            let mut tracker = fraction_tracker(settings.iterations, progress);
            split_style_preview(input, palette, &styles, &weights, &settings, params.working_size, &mut tracker)
        }
        PreviewMethod::Embgan => {
            let path = params
                .checkpoint
                .as_ref()
                .ok_or_else(|| Error::contract("EmbGAN job without a checkpoint"))?;
            let state = GanState::load(path)?;
            progress(0.5);
            let out = embgan_preview(&state, input, params.direction, params.working_size)?;
            progress(1.0);
            Ok(out)
        }
    }
}
