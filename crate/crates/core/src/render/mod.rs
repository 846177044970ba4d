//! Offscreen rendering of fragment programs into RGB8 rasters.
//!
//! The only device currently available is `cpu`: programs are parsed and
//! validated by naga's GLSL frontend, lowered to bytecode and run per
//! fragment by [`exec`]. A [`RenderContext`] and every
//! [`ProgramHandle`] it creates are confined to the creating thread; use
//! [`pool::RenderPool`] to render from many threads.

pub mod exec;
pub mod pool;
pub mod timesteps;

use std::marker::PhantomData;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

pub use crate::image::{Image, ImageBatch, Resolution};
pub use timesteps::{sample_timesteps, sample_timesteps_at, timestep_at, TimestepPlan, DEFAULT_FRAME_RATE};

use exec::{ExecError, Inputs, Program};

/// Environment variable selecting the render device.
pub const DEVICE_ENV: &str = "SHADERCORPUS_DEVICE";

pub const DEFAULT_FRAME_TIMEOUT: Duration = Duration::from_secs(2);

/// Minimum frame count accepted by [`RenderContext::measure_fps`].
pub const MIN_FPS_FRAMES: usize = 10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RenderError {
    #[error("render context unavailable: {0}")]
    ContextUnavailable(String),
    #[error("compile failed:\n{log}")]
    Compile { log: String },
    #[error("frame exceeded the {}ms time limit", limit.as_millis())]
    Timeout { limit: Duration },
    #[error("device lost: {0}")]
    DeviceLost(String),
    #[error("execution failed: {0}")]
    Execution(String),
    #[error("count must be positive")]
    ZeroCount,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("program handle belongs to a different context")]
    ForeignHandle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Device {
    Cpu,
}

impl Device {
    pub fn from_name(name: &str) -> Result<Self, RenderError> {
        match name.trim().to_ascii_lowercase().as_str() {
            "" | "cpu" | "software" => Ok(Device::Cpu),
            other => Err(RenderError::ContextUnavailable(format!("unknown device `{other}` (available: cpu)"))),
        }
    }

    /// Device named by [`DEVICE_ENV`], defaulting to `cpu`.
    pub fn from_env() -> Result<Self, RenderError> {
        match std::env::var(DEVICE_ENV) {
            Ok(name) => Self::from_name(&name),
            Err(_) => Ok(Device::Cpu),
        }
    }
}

static NEXT_CONTEXT: AtomicU64 = AtomicU64::new(1);

type Confined = PhantomData<Rc<()>>;

pub struct RenderContext {
    id: u64,
    device: Device,
    frame_timeout: Option<Duration>,
    _confined: Confined,
}

/// A compiled program, valid only within the context that created it.
pub struct ProgramHandle {
    context: u64,
    program: Arc<Program>,
    label: String,
    log: String,
    _confined: Confined,
}

impl std::fmt::Debug for ProgramHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProgramHandle").field("label", &self.label).field("context", &self.context).finish()
    }
}

impl ProgramHandle {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Compiler output retained from a successful compile (may be empty).
    pub fn log(&self) -> &str {
        &self.log
    }
}

impl RenderContext {
    pub fn new() -> Result<Self, RenderError> {
        Self::with_device(Device::from_env()?)
    }

    pub fn with_device(device: Device) -> Result<Self, RenderError> {
        Ok(Self {
            id: NEXT_CONTEXT.fetch_add(1, Ordering::Relaxed),
            device,
            frame_timeout: Some(DEFAULT_FRAME_TIMEOUT),
            _confined: PhantomData,
        })
    }

    pub fn device(&self) -> Device {
        self.device
    }

    /// Wall-clock cap per frame; `None` disables it.
    pub fn set_frame_timeout(&mut self, limit: Option<Duration>) {
        self.frame_timeout = limit;
    }

    pub fn frame_timeout(&self) -> Option<Duration> {
        self.frame_timeout
    }

    pub fn compile(&self, glsl: &str) -> Result<ProgramHandle, RenderError> {
        self.compile_named("", glsl)
    }

    /// Compile with a label that is stamped on every rendered [`Image`].
    pub fn compile_named(&self, label: &str, glsl: &str) -> Result<ProgramHandle, RenderError> {
        let program = exec::compile(glsl).map_err(|log| RenderError::Compile { log })?;
        Ok(ProgramHandle {
            context: self.id,
            program: Arc::new(program),
            label: label.to_string(),
            log: String::new(),
            _confined: PhantomData,
        })
    }

    pub fn render_frame(&self, handle: &ProgramHandle, t: f64, res: Resolution) -> Result<Image, RenderError> {
        if handle.context != self.id {
            return Err(RenderError::ForeignHandle);
        }
        if !t.is_finite() {
            return Err(RenderError::InvalidArgument(format!("time must be finite, got {t}")));
        }
        let pixels = shade_frame(&handle.program, t, res, self.frame_timeout)?;
        Ok(Image::new(res.width, res.height, pixels, handle.label.clone(), t))
    }

    pub fn render_batch(&self, handle: &ProgramHandle, plan: &TimestepPlan, res: Resolution) -> Result<ImageBatch, RenderError> {
        let frames = plan
            .values
            .iter()
            .map(|&t| self.render_frame(handle, t, res))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ImageBatch { resolution: res, frames })
    }

    /// Frames per second over `n` frames on the default jittered schedule.
    /// Pixels land in host memory, so the timing includes readback.
    pub fn measure_fps(&self, handle: &ProgramHandle, n: usize, res: Resolution) -> Result<f64, RenderError> {
        if n == 0 {
            return Err(RenderError::ZeroCount);
        }
        if n < MIN_FPS_FRAMES {
            return Err(RenderError::InvalidArgument(format!("need at least {MIN_FPS_FRAMES} frames, got {n}")));
        }
        let plan = sample_timesteps(n, 0)?;
        let start = Instant::now();
        for &t in &plan.values {
            self.render_frame(handle, t, res)?;
        }
        Ok(n as f64 / start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE))
    }
}

/// Quantize a linear channel to 8 bits the way a UNORM target would.
#[inline]
pub fn quantize(c: f32) -> u8 {
    if c.is_nan() {
        return 0;
    }
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn shade_frame(program: &Program, t: f64, res: Resolution, limit: Option<Duration>) -> Result<Vec<u8>, RenderError> {
    let (w, h) = (res.width as usize, res.height as usize);
    let inputs = Inputs { time: t as f32, resolution: [res.width as f32, res.height as f32] };
    let uniforms = program.uniforms(&inputs);
    let abort = AtomicBool::new(false);
    let deadline = limit.map(|d| Instant::now() + d);
    let mut pixels = vec![0u8; w * h * 3];

    let result = pixels.par_chunks_mut(w * 3).enumerate().try_for_each_init(
        || program.invocation(&uniforms, exec::Budget::new(deadline, &abort)),
        |inv, (row, out)| {
            inv.budget().check()?;
            // Row 0 is the top of the image; fragment y grows upward.
            let fy = (h - 1 - row) as f32 + 0.5;
            for x in 0..w {
                if let Some(c) = inv.shade([x as f32 + 0.5, fy, 0.5, 1.0])? {
                    out[x * 3] = quantize(c[0]);
                    out[x * 3 + 1] = quantize(c[1]);
                    out[x * 3 + 2] = quantize(c[2]);
                }
            }
            Ok::<(), ExecError>(())
        },
    );
    match result {
        Ok(()) => Ok(pixels),
        Err(ExecError::Timeout | ExecError::Aborted) => {
            Err(RenderError::Timeout { limit: limit.unwrap_or_default() })
        }
        Err(e) => Err(RenderError::Execution(e.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "#version 450\nlayout(set=0,binding=0) uniform EngineInputs { float time; vec2 resolution; };\nlayout(location=0) out vec4 fragColor;\n";

    fn src(body: &str) -> String {
        format!("{HEAD}void main(){{ {body} }}")
    }

    fn res(n: u32) -> Resolution {
        Resolution::square(n).unwrap()
    }

    #[test]
    fn half_gray_from_fract() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let h = ctx.compile(&src("fragColor = vec4(vec3(fract(time)), 1.0);")).unwrap();
        let img = ctx.render_frame(&h, 0.5, res(8)).unwrap();
        for p in img.pixels.chunks(3) {
            for &c in p {
                assert!((c as i32 - 128).abs() <= 1, "{c}");
            }
        }
    }

    #[test]
    fn constant_color() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let h = ctx.compile(&src("fragColor = vec4(1.0, 0.0, 0.0, 1.0);")).unwrap();
        let img = ctx.render_frame(&h, 3.0, res(4)).unwrap();
        assert!(img.pixels.chunks(3).all(|p| p == [255, 0, 0]));
    }

    #[test]
    fn row_zero_is_top() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let h = ctx.compile(&src("fragColor = vec4(gl_FragCoord.y / resolution.y, gl_FragCoord.x / resolution.x, 0.0, 1.0);")).unwrap();
        let img = ctx.render_frame(&h, 0.0, Resolution::new(4, 2).unwrap()).unwrap();
        // top row has fragment y = 1.5, bottom row 0.5
        assert_eq!(img.pixel(0, 0)[0], quantize(0.75));
        assert_eq!(img.pixel(0, 1)[0], quantize(0.25));
        assert_eq!(img.pixel(3, 0)[1], quantize(3.5 / 4.0));
    }

    #[test]
    fn batch_matches_individual_frames() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let h = ctx.compile_named("wave", &src("fragColor = vec4(sin(time + gl_FragCoord.x), cos(time), 0.5, 1.0);")).unwrap();
        let plan = sample_timesteps(4, 3).unwrap();
        let batch = ctx.render_batch(&h, &plan, res(6)).unwrap();
        for (img, &t) in batch.frames.iter().zip(&plan.values) {
            assert_eq!(img, &ctx.render_frame(&h, t, res(6)).unwrap());
            assert_eq!(img.shader_id, "wave");
        }
    }

    #[test]
    fn compile_errors_carry_the_log() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        match ctx.compile(&src("fragColor = vec4(undefined_name);")) {
            Err(RenderError::Compile { log }) => assert!(log.contains("undefined_name"), "{log}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn handles_are_bound_to_their_context() {
        let a = RenderContext::with_device(Device::Cpu).unwrap();
        let b = RenderContext::with_device(Device::Cpu).unwrap();
        let h = a.compile(&src("fragColor = vec4(1.0);")).unwrap();
        assert_eq!(b.render_frame(&h, 0.0, res(2)), Err(RenderError::ForeignHandle));
    }

    #[test]
    fn runaway_frame_times_out() {
        let mut ctx = RenderContext::with_device(Device::Cpu).unwrap();
        ctx.set_frame_timeout(Some(Duration::from_millis(50)));
        let h = ctx
            .compile(&src("float a = 0.0; for (int i = 0; i < 100000000; i++) { a += sin(float(i)); } fragColor = vec4(a);"))
            .unwrap();
        let started = Instant::now();
        assert!(matches!(ctx.render_frame(&h, 0.0, res(4)), Err(RenderError::Timeout { .. })));
        assert!(started.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn device_names() {
        assert_eq!(Device::from_name("CPU").unwrap(), Device::Cpu);
        assert!(matches!(Device::from_name("vulkan"), Err(RenderError::ContextUnavailable(_))));
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(f32::NAN), 0);
    }
}
