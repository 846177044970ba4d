//! Per-program statistics, corpus summaries and score-based selection.

pub mod similarity;
pub mod summary;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusManifest, Dialect, ProgramRecord};
use crate::image::{Image, Resolution};
use crate::render::pool::{RenderPool, Worker};
use crate::render::{sample_timesteps, ProgramHandle, RenderContext, RenderError};
use crate::rng::StreamKey;

pub use similarity::{self_similarity, DownsampledMad, ImageDistance};
pub use summary::{nearest_rank, select_top_k, summarize, CorpusSummary, MetricSummary};

/// Bytes per reported kilobyte.
pub const KB: f64 = 1024.0;
pub const DEFAULT_SAMPLES: usize = 400;
pub const DEFAULT_JPEG_QUALITY: u8 = 90;
pub const DEFAULT_SELF_SIM_IMAGES: usize = 50;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("count must be positive")]
    ZeroCount,
    #[error("crop side {side} does not fit a {width}x{height} image")]
    CropTooLarge { side: u32, width: u32, height: u32 },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("no statistics for subset `{0}`")]
    EmptySubset(String),
    #[error("k = {k} exceeds the {available} available scores")]
    KTooLarge { k: usize, available: usize },
    #[error("encoding failed: {0}")]
    Encode(String),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSettings {
    pub samples: usize,
    pub resolution: Resolution,
    pub seed: u64,
    pub jpeg_quality: u8,
    /// Frames per program scored for self-similarity (the first ones).
    pub self_sim_images: usize,
    pub self_sim_pairs: usize,
    pub crop_frac: f64,
}

impl Default for StatsSettings {
    fn default() -> Self {
        Self {
            samples: DEFAULT_SAMPLES,
            resolution: Resolution::default(),
            seed: 0,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
            self_sim_images: DEFAULT_SELF_SIM_IMAGES,
            self_sim_pairs: similarity::DEFAULT_PAIRS,
            crop_frac: similarity::DEFAULT_CROP_FRAC,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub shader_id: String,
    pub dialect: Dialect,
    pub char_count: usize,
    pub jpeg_kb: f64,
    pub gzip_kb: f64,
    /// Measured on this machine; not reproducible across hardware.
    pub fps: f64,
    pub self_sim: f64,
    pub samples_used: usize,
    pub resolution: Resolution,
}

pub fn gzip_size(pixels: &[u8]) -> usize {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(pixels).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail").len()
}

pub fn jpeg_size(img: &Image, quality: u8) -> Result<usize, MetricsError> {
    img.encode_jpeg(quality).map(|b| b.len()).map_err(|e| MetricsError::Encode(e.to_string()))
}

/// Timestep seed for one program's statistics frames.
pub fn stats_seed(seed: u64, shader_id: &str) -> u64 {
    StreamKey::from_seed(seed).split_label("stats").split_label(shader_id).to_seed()
}

/// Mean JPEG and gzip sizes in KB over `samples` frames of one program.
pub fn compression_stats(
    ctx: &RenderContext,
    handle: &ProgramHandle,
    samples: usize,
    resolution: Resolution,
    seed: u64,
    jpeg_quality: u8,
) -> Result<(f64, f64), MetricsError> {
    let plan = sample_timesteps(samples, stats_seed(seed, handle.label())).map_err(|_| MetricsError::ZeroCount)?;
    let (mut jpeg, mut gzip) = (0usize, 0usize);
    for &t in &plan.values {
        let img = ctx.render_frame(handle, t, resolution)?;
        jpeg += jpeg_size(&img, jpeg_quality)?;
        gzip += gzip_size(&img.pixels);
    }
    let n = samples as f64;
    Ok((jpeg as f64 / n / KB, gzip as f64 / n / KB))
}

/// All statistics for one program in a single pass over its frames. The
/// FPS figure times only the render calls.
pub fn program_stats(
    ctx: &RenderContext,
    handle: &ProgramHandle,
    record: &ProgramRecord,
    settings: &StatsSettings,
    distance: &dyn ImageDistance,
) -> Result<StatsRecord, MetricsError> {
    let seed = stats_seed(settings.seed, &record.id);
    let plan = sample_timesteps(settings.samples, seed).map_err(|_| MetricsError::ZeroCount)?;
    let sim_key = StreamKey::from_seed(seed).split_label("self-sim");
    let (mut jpeg, mut gzip, mut sim, mut sim_n) = (0usize, 0usize, 0.0, 0usize);
    let mut render_time = 0.0;
    for (k, &t) in plan.values.iter().enumerate() {
        let started = Instant::now();
        let img = ctx.render_frame(handle, t, settings.resolution)?;
        render_time += started.elapsed().as_secs_f64();
        jpeg += jpeg_size(&img, settings.jpeg_quality)?;
        gzip += gzip_size(&img.pixels);
        if k < settings.self_sim_images {
            let s = sim_key.split(k as u64).to_seed();
            sim += self_similarity(&img, settings.self_sim_pairs, settings.crop_frac, distance, s)?;
            sim_n += 1;
        }
    }
    let n = settings.samples as f64;
    Ok(StatsRecord {
        shader_id: record.id.clone(),
        dialect: record.dialect,
        char_count: record.char_count,
        jpeg_kb: jpeg as f64 / n / KB,
        gzip_kb: gzip as f64 / n / KB,
        fps: n / render_time.max(f64::MIN_POSITIVE),
        self_sim: if sim_n == 0 { 0.0 } else { sim / sim_n as f64 },
        samples_used: settings.samples,
        resolution: settings.resolution,
    })
}

fn stats_on_worker(w: &mut Worker, record: &ProgramRecord, glsl: &Arc<str>, settings: &StatsSettings) -> Result<StatsRecord, MetricsError> {
    w.with_program(&record.id, glsl, |ctx, h| program_stats(ctx, h, record, settings, &DownsampledMad::default()))?
}

/// Statistics for every unique program, computed on the pool and returned
/// in id order. Failures are returned per program.
pub fn corpus_stats(
    manifest: &CorpusManifest,
    settings: StatsSettings,
    pool: &RenderPool,
) -> Vec<(String, Result<StatsRecord, MetricsError>)> {
    let pending: Vec<_> = manifest
        .unique_programs()
        .into_iter()
        .map(|r| {
            let record = r.clone();
            let glsl: Arc<str> = r.glsl.as_str().into();
            (r.id.clone(), pool.execute(move |w| stats_on_worker(w, &record, &glsl, &settings)))
        })
        .collect();
    pending
        .into_iter()
        .map(|(id, rx)| {
            let r = rx.recv().unwrap_or_else(|_| Err(RenderError::DeviceLost("render worker exited".into()).into()));
            (id, r)
        })
        .collect()
}

pub const STATS_FORMAT: &str = "shadercorpus-stats";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StatsHeader {
    format: String,
    settings: StatsSettings,
}

/// Stats file: a settings header line, then one record per line.
pub fn save_stats(path: &Path, settings: &StatsSettings, records: &[StatsRecord]) -> std::io::Result<()> {
    crate::corpus::manifest::write_atomic(path, |w| {
        let header = StatsHeader { format: STATS_FORMAT.into(), settings: *settings };
        serde_json::to_writer(&mut *w, &header).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
        for r in records {
            serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn load_stats(path: &Path) -> std::io::Result<Vec<StatsRecord>> {
    load_stats_file(path).map(|(_, records)| records)
}

/// Records of a stats file with the settings from its header line, if any.
pub fn load_stats_file(path: &Path) -> std::io::Result<(Option<StatsSettings>, Vec<StatsRecord>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut settings = None;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<StatsHeader>(&line) {
                settings = Some(h.settings);
                continue;
            }
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok((settings, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Device;

    const HEAD: &str = "#version 450\nlayout(set=0,binding=0) uniform EngineInputs { float time; vec2 resolution; };\nlayout(location=0) out vec4 fragColor;\n";

    #[test]
    fn constant_compresses_better_than_noise() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let res = Resolution::square(32).unwrap();
        let flat = ctx.compile_named("flat", &format!("{HEAD}void main(){{ fragColor = vec4(0.2, 0.4, 0.6, 1.0); }}")).unwrap();
        let noise = ctx
            .compile_named(
                "noise",
                &format!("{HEAD}void main(){{ vec2 p = gl_FragCoord.xy + time; float n = fract(sin(dot(p, vec2(12.9898, 78.233))) * 43758.5453); fragColor = vec4(n, fract(n * 7.0), fract(n * 13.0), 1.0); }}"),
            )
            .unwrap();
        let (jf, gf) = compression_stats(&ctx, &flat, 4, res, 0, 90).unwrap();
        let (jn, gn) = compression_stats(&ctx, &noise, 4, res, 0, 90).unwrap();
        assert!(gf < gn, "gzip {gf} vs {gn}");
        assert!(jf < jn, "jpeg {jf} vs {jn}");
        assert!(matches!(compression_stats(&ctx, &flat, 0, res, 0, 90), Err(MetricsError::ZeroCount)));
    }

    #[test]
    fn stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.jsonl");
        let rec = StatsRecord {
            shader_id: "a".into(),
            dialect: Dialect::Twigl,
            char_count: 12,
            jpeg_kb: 1.5,
            gzip_kb: 0.25,
            fps: 10.0,
            self_sim: 0.1,
            samples_used: 400,
            resolution: Resolution::default(),
        };
        save_stats(&path, &StatsSettings::default(), std::slice::from_ref(&rec)).unwrap();
        assert_eq!(load_stats(&path).unwrap(), vec![rec]);
    }

    #[test]
    fn defaults_match_reference_settings() {
        let s = StatsSettings::default();
        assert_eq!(s.samples, 400);
        assert_eq!(s.resolution, Resolution::square(384).unwrap());
        assert_eq!(s.self_sim_pairs, 16);
        assert_eq!(s.self_sim_images, 50);
    }
}
