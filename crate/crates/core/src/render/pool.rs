//! A fixed set of render workers fed from one FIFO queue.
//!
//! Each worker thread owns its [`RenderContext`] and a cache of compiled
//! programs keyed by shader id. Callers submit closures that run against a
//! worker and get the result back on a per-job channel, so every handle
//! stays on the thread that compiled it.

use std::collections::HashMap;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};

use super::{Device, Image, ProgramHandle, RenderContext, RenderError, Resolution};

/// Cached programs per worker before the cache is flushed.
const CACHE_LIMIT: usize = 512;

type Task = Box<dyn FnOnce(&mut Worker) + Send>;

#[derive(Debug, Clone, Copy)]
pub struct PoolOptions {
    pub workers: usize,
    pub device: Device,
    pub frame_timeout: Option<Duration>,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            workers: default_workers(),
            device: Device::Cpu,
            frame_timeout: Some(super::DEFAULT_FRAME_TIMEOUT),
        }
    }
}

impl PoolOptions {
    /// Defaults with the device taken from the environment.
    pub fn from_env() -> Result<Self, RenderError> {
        Ok(Self { device: Device::from_env()?, ..Self::default() })
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(4)
}

/// Per-thread state visible to submitted jobs.
pub struct Worker {
    ctx: RenderContext,
    cache: HashMap<String, (Arc<str>, Result<ProgramHandle, RenderError>)>,
}

impl Worker {
    pub fn context(&self) -> &RenderContext {
        &self.ctx
    }

    /// Compiled program for `id`, compiling on first use. A cached entry is
    /// reused only while the source text is unchanged.
    pub fn program(&mut self, id: &str, glsl: &Arc<str>) -> Result<&ProgramHandle, RenderError> {
        let stale = match self.cache.get(id) {
            Some((src, _)) => src != glsl,
            None => true,
        };
        if stale {
            if self.cache.len() >= CACHE_LIMIT {
                self.cache.clear();
            }
            let compiled = self.ctx.compile_named(id, glsl);
            self.cache.insert(id.to_string(), (glsl.clone(), compiled));
        }
        match &self.cache[id].1 {
            Ok(h) => Ok(h),
            Err(e) => Err(e.clone()),
        }
    }

    /// Run `f` with this worker's context and the program for `id`.
    pub fn with_program<R>(
        &mut self,
        id: &str,
        glsl: &Arc<str>,
        f: impl FnOnce(&RenderContext, &ProgramHandle) -> R,
    ) -> Result<R, RenderError> {
        self.program(id, glsl)?;
        let handle = self.cache[id].1.as_ref().map_err(Clone::clone)?;
        Ok(f(&self.ctx, handle))
    }

    pub fn render(&mut self, id: &str, glsl: &Arc<str>, times: &[f64], res: Resolution) -> Result<Vec<Image>, RenderError> {
        self.with_program(id, glsl, |ctx, h| times.iter().map(|&t| ctx.render_frame(h, t, res)).collect())?
    }
}

/// Frames of one program to render on some worker.
#[derive(Debug, Clone)]
pub struct RenderJob {
    pub shader_id: String,
    pub glsl: Arc<str>,
    pub times: Vec<f64>,
    pub resolution: Resolution,
}

pub struct RenderPool {
    queue: Option<Sender<Task>>,
    workers: Vec<JoinHandle<()>>,
}

impl RenderPool {
    pub fn new(opts: PoolOptions) -> Result<Self, RenderError> {
        if opts.workers == 0 {
            return Err(RenderError::ZeroCount);
        }
        // Fail early and on the caller's thread if the device is unusable.
        RenderContext::with_device(opts.device)?;
        let (tx, rx) = unbounded::<Task>();
        let workers = (0..opts.workers)
            .map(|i| {
                let rx = rx.clone();
                std::thread::Builder::new()
                    .name(format!("render-{i}"))
                    .spawn(move || worker_loop(rx, opts))
                    .map_err(|e| RenderError::ContextUnavailable(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { queue: Some(tx), workers })
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Queue a job. The receiver yields its result, or disconnects with
    /// no value if the worker died.
    pub fn execute<R, F>(&self, f: F) -> Receiver<R>
    where
        R: Send + 'static,
        F: FnOnce(&mut Worker) -> R + Send + 'static,
    {
        let (tx, rx) = bounded(1);
        let task: Task = Box::new(move |w| {
            let _ = tx.send(f(w));
        });
        if let Some(q) = &self.queue {
            let _ = q.send(task);
        }
        rx
    }

    pub fn submit(&self, job: RenderJob) -> Receiver<Result<Vec<Image>, RenderError>> {
        self.execute(move |w| w.render(&job.shader_id, &job.glsl, &job.times, job.resolution))
    }

    /// Block on a submitted job, mapping a vanished worker to `DeviceLost`.
    pub fn wait<R>(rx: &Receiver<Result<R, RenderError>>) -> Result<R, RenderError> {
        rx.recv().unwrap_or_else(|_| Err(RenderError::DeviceLost("render worker exited".into())))
    }

    pub fn render(&self, job: RenderJob) -> Result<Vec<Image>, RenderError> {
        Self::wait(&self.submit(job))
    }

    /// Render all jobs concurrently; results keep the input order.
    pub fn render_all(&self, jobs: Vec<RenderJob>) -> Vec<Result<Vec<Image>, RenderError>> {
        let pending: Vec<_> = jobs.into_iter().map(|j| self.submit(j)).collect();
        pending.iter().map(Self::wait).collect()
    }

    /// Compile only, returning the compiler log on success.
    pub fn compile_check(&self, id: String, glsl: Arc<str>) -> Receiver<Result<String, RenderError>> {
        self.execute(move |w| w.program(&id, &glsl).map(|h| h.log().to_string()))
    }
}

impl Drop for RenderPool {
    fn drop(&mut self) {
        self.queue.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn worker_loop(rx: Receiver<Task>, opts: PoolOptions) {
    let mut ctx = match RenderContext::with_device(opts.device) {
        Ok(c) => c,
        // Dropping queued tasks disconnects their reply channels.
        Err(_) => return,
    };
    ctx.set_frame_timeout(opts.frame_timeout);
    let mut worker = Worker { ctx, cache: HashMap::new() };
    while let Ok(task) = rx.recv() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| task(&mut worker)));
        if outcome.is_err() {
            // The context may be in an unknown state; start over.
            worker.cache.clear();
        }
    }
}
