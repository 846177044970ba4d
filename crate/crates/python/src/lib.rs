use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use shadercorpus::corpus::{self, CorpusManifest, Dialect, PrepError};
use shadercorpus::image::{Image, Resolution};
use shadercorpus::metrics;
use shadercorpus::mix::{self, MixMode, MixSpec, SourceRef};
use shadercorpus::render::{self, ProgramHandle, RenderContext};
use shadercorpus::stream::{self, BatchRequest, Encoding};

fn value_error(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_error(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn dialect(name: &str) -> PyResult<Dialect> {
    name.parse().map_err(PyValueError::new_err)
}

fn resolution(width: u32, height: u32) -> PyResult<Resolution> {
    Resolution::new(width, height).map_err(value_error)
}

fn image(pixels: &[u8], width: u32, height: u32) -> PyResult<Image> {
    let res = resolution(width, height)?;
    if pixels.len() != res.byte_len() {
        return Err(PyValueError::new_err(format!("expected {} bytes for {res}, got {}", res.byte_len(), pixels.len())));
    }
    Ok(Image::new(width, height, pixels.to_vec(), "", 0.0))
}

type Rects = Vec<(u32, u32, u32, u32)>;
type Batch<'py> = Vec<(Bound<'py, PyBytes>, Vec<Bound<'py, PyDict>>)>;

fn source_dict<'py>(py: Python<'py>, s: &SourceRef) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("shader_id", &s.shader_id)?;
    d.set_item("t", s.t)?;
    d.set_item("weight", s.weight)?;
    d.set_item("rect", s.rect.map(|r| (r.x, r.y, r.width, r.height)))?;
    Ok(d)
}

/// Standalone GLSL for a snippet of the given dialect.
#[pyfunction]
fn normalize(source: &str, dialect_name: &str) -> PyResult<String> {
    corpus::normalize(source, dialect(dialect_name)?).map_err(|e| match e {
        PrepError::MissingEntryPoint => PyValueError::new_err("missing entry point"),
        PrepError::RequiresExternalInput(ids) => {
            PyValueError::new_err(format!("requires external input: {}", ids.join(", ")))
        }
    })
}

#[pyfunction]
#[pyo3(signature = (n, seed, base_rate = render::DEFAULT_FRAME_RATE))]
fn sample_timesteps(n: usize, seed: u64, base_rate: f64) -> PyResult<Vec<f64>> {
    render::sample_timesteps_at(n, seed, base_rate).map(|p| p.values).map_err(value_error)
}

#[pyfunction]
#[pyo3(signature = (n, alpha = mix::DEFAULT_ALPHA, seed = 0))]
fn sample_dirichlet(n: usize, alpha: f64, seed: u64) -> PyResult<Vec<f64>> {
    mix::sample_dirichlet(n, alpha, seed).map_err(value_error)
}

/// Weighted average of equally sized RGB8 buffers.
#[pyfunction]
fn mixup<'py>(py: Python<'py>, images: Vec<Vec<u8>>, weights: Vec<f64>, width: u32, height: u32) -> PyResult<Bound<'py, PyBytes>> {
    let imgs = images.iter().map(|p| image(p, width, height)).collect::<PyResult<Vec<_>>>()?;
    let out = mix::mixup(&imgs, &weights).map_err(value_error)?;
    Ok(PyBytes::new(py, &out.pixels))
}

/// CutMix with the first buffer as the base. Returns the pixels and the
/// donor rectangles as `(x, y, width, height)`.
#[pyfunction]
fn cutmix<'py>(
    py: Python<'py>,
    images: Vec<Vec<u8>>,
    width: u32,
    height: u32,
    seed: u64,
) -> PyResult<(Bound<'py, PyBytes>, Rects)> {
    let imgs = images.iter().map(|p| image(p, width, height)).collect::<PyResult<Vec<_>>>()?;
    let out = mix::cutmix(&imgs, seed).map_err(value_error)?;
    let rects = out.sources.iter().filter_map(|s| s.rect).map(|r| (r.x, r.y, r.width, r.height)).collect();
    Ok((PyBytes::new(py, &out.image.pixels), rects))
}

#[pyfunction]
fn nearest_rank(mut values: Vec<f64>, q: f64) -> PyResult<f64> {
    if values.is_empty() {
        return Err(PyValueError::new_err("empty sample"));
    }
    values.sort_by(f64::total_cmp);
    Ok(metrics::nearest_rank(&values, q))
}

/// `(avg, q5, q95)` of a sample.
#[pyfunction]
fn summary(values: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(PyValueError::new_err("empty sample"));
    }
    let s = metrics::MetricSummary::of(&values);
    Ok((s.avg, s.q5, s.q95))
}

/// A compiled program bound to its own render context.
#[pyclass(unsendable)]
struct Program {
    ctx: RenderContext,
    handle: ProgramHandle,
}

#[pymethods]
impl Program {
    #[new]
    #[pyo3(signature = (source, dialect = "twigl"))]
    fn new(source: &str, dialect: &str) -> PyResult<Self> {
        let glsl = normalize(source, dialect)?;
        let ctx = RenderContext::new().map_err(runtime_error)?;
        let handle = ctx.compile(&glsl).map_err(value_error)?;
        Ok(Self { ctx, handle })
    }

    /// RGB8 pixels of the frame at time `t`, top row first.
    fn render<'py>(&self, py: Python<'py>, t: f64, width: u32, height: u32) -> PyResult<Bound<'py, PyBytes>> {
        let img = self.ctx.render_frame(&self.handle, t, resolution(width, height)?).map_err(runtime_error)?;
        Ok(PyBytes::new(py, &img.pixels))
    }

    #[pyo3(signature = (width, height, frames = render::MIN_FPS_FRAMES))]
    fn measure_fps(&self, width: u32, height: u32, frames: usize) -> PyResult<f64> {
        self.ctx.measure_fps(&self.handle, frames, resolution(width, height)?).map_err(value_error)
    }
}

/// Read-only view of a corpus manifest.
#[pyclass(frozen)]
struct Manifest {
    inner: CorpusManifest,
}

#[pymethods]
impl Manifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        CorpusManifest::load(&path).map(|inner| Self { inner }).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    fn unique_ids(&self) -> Vec<String> {
        self.inner.unique_programs().iter().map(|r| r.id.clone()).collect()
    }

    /// Fields of one record, without the sources.
    fn record<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyDict>> {
        let r = self.inner.get(id).ok_or_else(|| PyValueError::new_err(format!("unknown id `{id}`")))?;
        let d = PyDict::new(py);
        d.set_item("id", &r.id)?;
        d.set_item("dialect", r.dialect.name())?;
        d.set_item("char_count", r.char_count)?;
        d.set_item("source_hash", &r.source_hash)?;
        d.set_item("compiled", r.is_compiled())?;
        d.set_item("unique", r.is_unique())?;
        d.set_item("fingerprint", r.fingerprint.as_deref())?;
        d.set_item("probe_spread", r.probe_spread)?;
        Ok(d)
    }
}

/// Blocking client for a batch server.
#[pyclass(unsendable)]
struct StreamClient {
    inner: stream::Client,
}

#[pymethods]
impl StreamClient {
    #[new]
    fn new(address: &str) -> PyResult<Self> {
        stream::Client::connect(address).map(|inner| Self { inner }).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Returns a list of `(payload, sources)` pairs.
    #[pyo3(signature = (seed, count, width, height, mode = "mixup", n = mix::DEFAULT_N, alpha = mix::DEFAULT_ALPHA, encoding = "raw"))]
    #[allow(clippy::too_many_arguments)]
    fn request<'py>(
        &mut self,
        py: Python<'py>,
        seed: u64,
        count: u32,
        width: u32,
        height: u32,
        mode: &str,
        n: usize,
        alpha: f64,
        encoding: &str,
    ) -> PyResult<Batch<'py>> {
        let mode: MixMode = mode.parse().map_err(PyValueError::new_err)?;
        let encoding: Encoding = encoding.parse().map_err(PyValueError::new_err)?;
        let spec = MixSpec { mode, n, alpha, seed };
        let req = BatchRequest::new(seed, count, resolution(width, height)?, spec, encoding);
        let resp = self.inner.request_batch(&req).map_err(runtime_error)?;
        resp.images
            .iter()
            .map(|img| {
                let sources = img.sources.iter().map(|s| source_dict(py, s)).collect::<PyResult<Vec<_>>>()?;
                Ok((PyBytes::new(py, &img.payload), sources))
            })
            .collect()
    }

    /// `(images_served, requests, uptime_secs, images_per_sec)`.
    fn stats(&mut self) -> PyResult<(u64, u64, f64, f64)> {
        let s = self.inner.query_stats().map_err(runtime_error)?;
        Ok((s.images_served, s.requests, s.uptime_secs, s.images_per_sec))
    }
}

#[pymodule]
fn pyshadercorpus(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize, m)?)?;
    m.add_function(wrap_pyfunction!(sample_timesteps, m)?)?;
    m.add_function(wrap_pyfunction!(sample_dirichlet, m)?)?;
    m.add_function(wrap_pyfunction!(mixup, m)?)?;
    m.add_function(wrap_pyfunction!(cutmix, m)?)?;
    m.add_function(wrap_pyfunction!(nearest_rank, m)?)?;
    m.add_function(wrap_pyfunction!(summary, m)?)?;
    m.add_class::<Program>()?;
    m.add_class::<Manifest>()?;
    m.add_class::<StreamClient>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
