//! Pruning of duplicate and time-invariant programs.
//!
//! Both passes only record evidence on each record (a frame fingerprint,
//! or the largest pixel change across probe frames) and then call
//! [`CorpusManifest::reconcile`], which derives the kept set from that
//! evidence. Running a pass twice therefore changes nothing, and record
//! order never matters.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusManifest, DedupState, RejectReason};
use crate::image::{Image, Resolution};
use crate::render::pool::RenderPool;
use crate::render::{sample_timesteps, RenderError};

/// Probe seed used unless a run overrides it.
pub const DEFAULT_PROBE_SEED: u64 = 0x5e_ed0f_57a7;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Digest of a frame's raw RGB8 bytes, with the inputs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub digest: [u8; 32],
    pub t_used: f64,
    pub resolution: Resolution,
}

impl Fingerprint {
    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }
}

pub fn fingerprint(image: &Image) -> Fingerprint {
    Fingerprint {
        digest: Sha256::digest(&image.pixels).into(),
        t_used: image.t,
        resolution: image.resolution(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicateSettings {
    pub t0: f64,
    pub resolution: Resolution,
}

impl Default for DuplicateSettings {
    fn default() -> Self {
        Self { t0: 0.0, resolution: Resolution::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticSettings {
    pub k_probes: usize,
    /// Largest per-channel change still considered static.
    pub threshold: u8,
    pub probe_seed: u64,
    pub resolution: Resolution,
}

impl Default for StaticSettings {
    fn default() -> Self {
        Self { k_probes: 4, threshold: 0, probe_seed: DEFAULT_PROBE_SEED, resolution: Resolution::default() }
    }
}

impl StaticSettings {
    /// Threshold for runs that compare frames across drivers.
    pub const TOLERANT_THRESHOLD: u8 = 2;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    /// Compiled records considered by the pass.
    pub input: usize,
    pub duplicates: usize,
    #[serde(rename = "static")]
    pub static_count: usize,
    pub kept: usize,
    /// Records that failed to render and were rejected by this pass.
    pub failed: usize,
}

impl PruneReport {
    fn tally(manifest: &CorpusManifest, input: usize, failed: usize) -> Self {
        let mut r = PruneReport { input, duplicates: 0, static_count: 0, kept: 0, failed };
        for rec in manifest.records() {
            match rec.dedup {
                Some(DedupState::Unique) => r.kept += 1,
                Some(DedupState::DuplicateOf(_)) => r.duplicates += 1,
                Some(DedupState::Static) => r.static_count += 1,
                None => {}
            }
        }
        r
    }
}

impl std::fmt::Display for PruneReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "input {}: {} duplicate, {} static, {} failed to render, {} kept",
            self.input, self.duplicates, self.static_count, self.failed, self.kept
        )
    }
}

/// Jobs for every compiled record, each reduced on the worker by `reduce`.
fn run_pass<T: Send + 'static>(
    manifest: &mut CorpusManifest,
    pool: &RenderPool,
    times: Arc<[f64]>,
    resolution: Resolution,
    reduce: fn(Vec<Image>) -> T,
    mut store: impl FnMut(&mut crate::corpus::ProgramRecord, T),
) -> Result<(usize, usize), DedupError> {
    let pending: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| r.is_compiled())
        .map(|r| {
            let id = r.id.clone();
            let glsl: Arc<str> = r.glsl.as_str().into();
            let times = times.clone();
            let rx = pool.execute(move |w| w.render(&id, &glsl, &times, resolution).map(reduce));
            (r.id.clone(), rx)
        })
        .collect();
    let input = pending.len();
    let mut failed = 0;
    for (id, rx) in pending {
        let record = manifest.get_mut(&id).expect("id from the same manifest");
        match RenderPool::wait(&rx) {
            Ok(v) => store(record, v),
            Err(e) => match RejectReason::from_render_error(&e) {
                Some(reason) => {
                    record.reject(reason);
                    failed += 1;
                }
                None => return Err(e.into()),
            },
        }
    }
    Ok((input, failed))
}

/// Fingerprint every compiled program at `t0` and mark all but the
/// smallest id of each identical-frame group as duplicates.
pub fn remove_duplicates(
    manifest: &mut CorpusManifest,
    settings: DuplicateSettings,
    pool: &RenderPool,
) -> Result<PruneReport, DedupError> {
    if !(settings.t0.is_finite() && settings.t0 >= 0.0) {
        return Err(DedupError::BadParameter(format!("t0 must be finite and non-negative, got {}", settings.t0)));
    }
    let (input, failed) = run_pass(
        manifest,
        pool,
        Arc::from(vec![settings.t0]),
        settings.resolution,
        |frames| fingerprint(&frames[0]).hex(),
        |r, fp| r.fingerprint = Some(fp),
    )?;
    manifest.header.duplicates = Some(settings);
    manifest.reconcile();
    Ok(PruneReport::tally(manifest, input, failed))
}

/// Largest absolute per-channel difference across frames.
pub fn probe_spread(frames: &[Image]) -> u8 {
    let Some(first) = frames.first() else { return 0 };
    let mut lo = first.pixels.clone();
    let mut hi = first.pixels.clone();
    for f in &frames[1..] {
        for ((l, h), &p) in lo.iter_mut().zip(hi.iter_mut()).zip(&f.pixels) {
            *l = (*l).min(p);
            *h = (*h).max(p);
        }
    }
    lo.iter().zip(&hi).map(|(l, h)| h - l).max().unwrap_or(0)
}

/// Render `k_probes` frames per compiled program and mark those whose
/// frames never differ by more than the threshold as static.
pub fn remove_static(
    manifest: &mut CorpusManifest,
    settings: StaticSettings,
    pool: &RenderPool,
) -> Result<PruneReport, DedupError> {
    if settings.k_probes < 2 {
        return Err(DedupError::BadParameter(format!("k_probes must be at least 2, got {}", settings.k_probes)));
    }
    let plan = sample_timesteps(settings.k_probes, settings.probe_seed)?;
    let (input, failed) = run_pass(
        manifest,
        pool,
        Arc::from(plan.values),
        settings.resolution,
        |frames| probe_spread(&frames),
        |r, s| r.probe_spread = Some(s),
    )?;
    manifest.header.statics = Some(settings);
    manifest.reconcile();
    Ok(PruneReport::tally(manifest, input, failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_depends_on_pixels_only() {
        let res = Resolution::square(4).unwrap();
        let mut a = Image::filled(res, [1, 2, 3]);
        let mut b = a.clone();
        b.shader_id = "other".into();
        assert_eq!(fingerprint(&a).digest, fingerprint(&b).digest);
        a.pixels[5] ^= 1;
        assert_ne!(fingerprint(&a).digest, fingerprint(&b).digest);
    }

    #[test]
    fn fingerprint_is_stable() {
        let img = Image::filled(Resolution::square(2).unwrap(), [0, 0, 0]);
        // sha256 of 12 zero bytes
        assert_eq!(fingerprint(&img).hex(), "15ec7bf0b50732b49f8228e07d24365338f9e3ab994b00af08e5a3bffe55fd8b");
    }

    #[test]
    fn spread_of_frames() {
        let res = Resolution::square(2).unwrap();
        let a = Image::filled(res, [10, 10, 10]);
        let mut b = a.clone();
        b.pixels[7] = 13;
        let c = Image::filled(res, [9, 10, 10]);
        assert_eq!(probe_spread(&[a.clone(), a.clone()]), 0);
        assert_eq!(probe_spread(&[a, b, c]), 3);
    }
}
