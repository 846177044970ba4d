//! Sample planning shared by offline datasets and the stream server, and
//! the offline dataset writer.
//!
//! Sample `i` under seed `s` draws its programs from the stream keyed by
//! `(s, "sample", i)`: `n` distinct programs, uniformly without
//! replacement, from the unique programs sorted by id. Each program's
//! frames follow its own jittered schedule keyed by `(s, "timesteps", id)`;
//! the `k`-th time a program is drawn within a run it contributes frame
//! `k`. Planning is sequential and cheap; rendering and mixing of planned
//! samples may run in any order.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crossbeam_channel::Receiver;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{cutmix_rects, mixup, paste_rects, sample_dirichlet, MixError, MixMode, MixSpec, MixedSample, Rect, SourceRef};
use crate::corpus::CorpusManifest;
use crate::image::{Image, Resolution};
use crate::render::pool::RenderPool;
use crate::render::{timestep_at, RenderError, DEFAULT_FRAME_RATE};
use crate::rng::StreamKey;

pub const PROVENANCE_FORMAT: &str = "shadercorpus-provenance";
pub const PROVENANCE_FILE: &str = "provenance.manifest";
pub const IMAGES_DIR: &str = "images";

/// Samples rendered and written per round, bounding memory use.
const CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct Program {
    pub id: String,
    pub glsl: Arc<str>,
}

/// Everything needed to render and mix one output sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub index: u64,
    pub shader_ids: Vec<String>,
    pub t: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// CutMix regions for sources `1..n`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rects: Option<Vec<Rect>>,
}

impl SamplePlan {
    /// Mix rendered frames (in plan order) into the output sample.
    pub fn assemble(&self, frames: Vec<Image>, spec: MixSpec) -> Result<MixedSample, MixError> {
        let image = match spec.mode {
            MixMode::None => frames[0].clone(),
            MixMode::Mixup => mixup(&frames, self.weights.as_deref().unwrap_or(&[]))?,
            MixMode::Cutmix => {
                let rects = self.rects.as_deref().unwrap_or(&[]);
                let mut img = paste_rects(&frames[0], &frames[1..], rects)?;
                img.shader_id = self.shader_ids.join("+");
                img
            }
        };
        let sources = frames
            .iter()
            .enumerate()
            .map(|(k, f)| SourceRef {
                shader_id: f.shader_id.clone(),
                t: f.t,
                weight: self.weights.as_ref().map(|w| w[k]),
                rect: match (&self.rects, k) {
                    (Some(r), k) if k > 0 => Some(r[k - 1]),
                    _ => None,
                },
            })
            .collect();
        Ok(MixedSample { image, sources, spec })
    }
}

/// Deterministic planner over a fixed program list.
pub struct Sampler {
    programs: Vec<Program>,
    spec: MixSpec,
    resolution: Resolution,
    root: StreamKey,
    usage: Vec<u64>,
    next: u64,
}

impl Sampler {
    /// `programs` are sorted by id here, so callers may pass any order.
    pub fn new(mut programs: Vec<Program>, spec: MixSpec, resolution: Resolution) -> Result<Self, MixError> {
        spec.validate()?;
        programs.sort_by(|a, b| a.id.cmp(&b.id));
        programs.dedup_by(|a, b| a.id == b.id);
        if programs.len() < spec.n {
            return Err(MixError::InsufficientPrograms { needed: spec.n, available: programs.len() });
        }
        let usage = vec![0; programs.len()];
        Ok(Self { programs, spec, resolution, root: StreamKey::from_seed(spec.seed), usage, next: 0 })
    }

    /// Unique programs of a manifest.
    pub fn from_manifest(manifest: &CorpusManifest, spec: MixSpec, resolution: Resolution) -> Result<Self, MixError> {
        let programs = manifest
            .unique_programs()
            .into_iter()
            .map(|r| Program { id: r.id.clone(), glsl: r.glsl.as_str().into() })
            .collect();
        Self::new(programs, spec, resolution)
    }

    pub fn programs(&self) -> &[Program] {
        &self.programs
    }

    pub fn spec(&self) -> MixSpec {
        self.spec
    }

    /// Plan the next sample.
    pub fn next_plan(&mut self) -> SamplePlan {
        let i = self.next;
        self.next += 1;
        let key = self.root.split_label("sample").split(i);
        let chosen = index::sample(&mut key.split_label("choose").rng(), self.programs.len(), self.spec.n);
        let mut shader_ids = Vec::with_capacity(self.spec.n);
        let mut t = Vec::with_capacity(self.spec.n);
        for p in chosen.iter() {
            let id = &self.programs[p].id;
            let frame = self.usage[p];
            self.usage[p] += 1;
            let seed = self.root.split_label("timesteps").split_label(id).to_seed();
            t.push(timestep_at(seed, DEFAULT_FRAME_RATE, frame).1);
            shader_ids.push(id.clone());
        }
        let (weights, rects) = match self.spec.mode {
            MixMode::None => (None, None),
            MixMode::Mixup => {
                let seed = key.split_label("weights").to_seed();
                let w = sample_dirichlet(self.spec.n, self.spec.alpha, seed).expect("spec validated");
                (Some(w), None)
            }
            MixMode::Cutmix => {
                let seed = key.split_label("cutmix").to_seed();
                (None, Some(cutmix_rects(self.resolution, self.spec.n - 1, seed)))
            }
        };
        SamplePlan { index: i, shader_ids, t, weights, rects }
    }

    /// Queue the renders for `plan` on the pool.
    pub fn submit(&self, plan: &SamplePlan, pool: &RenderPool) -> Vec<Receiver<Result<Vec<Image>, RenderError>>> {
        plan.shader_ids
            .iter()
            .zip(&plan.t)
            .map(|(id, &t)| {
                let p = &self.programs[self.programs.binary_search_by(|p| p.id.as_str().cmp(id)).expect("planned id")];
                let (id, glsl, res) = (p.id.clone(), p.glsl.clone(), self.resolution);
                pool.execute(move |w| w.render(&id, &glsl, &[t], res))
            })
            .collect()
    }
}

/// Wait for the renders of one plan.
pub fn collect_frames(plan: &SamplePlan, pending: Vec<Receiver<Result<Vec<Image>, RenderError>>>) -> Result<Vec<Image>, MixError> {
    pending
        .iter()
        .zip(&plan.shader_ids)
        .map(|(rx, id)| {
            RenderPool::wait(rx)
                .map(|mut frames| frames.remove(0))
                .map_err(|source| MixError::Render { id: id.clone(), source })
        })
        .collect()
}

/// Render and mix `count` samples, in index order.
pub fn generate(sampler: &mut Sampler, count: usize, pool: &RenderPool) -> Result<Vec<(SamplePlan, MixedSample)>, MixError> {
    let plans: Vec<_> = (0..count).map(|_| sampler.next_plan()).collect();
    let pending: Vec<_> = plans.iter().map(|p| sampler.submit(p, pool)).collect();
    plans
        .into_iter()
        .zip(pending)
        .map(|(plan, rx)| {
            let frames = collect_frames(&plan, rx)?;
            let sample = plan.assemble(frames, sampler.spec())?;
            Ok((plan, sample))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub count: usize,
    pub spec: MixSpec,
    pub resolution: Resolution,
    pub jpeg_quality: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub count: usize,
    pub programs: usize,
    pub images_dir: PathBuf,
    pub provenance: PathBuf,
    pub bytes_written: u64,
}

#[derive(Serialize)]
struct ProvenanceHeader<'a> {
    format: &'a str,
    count: usize,
    programs: usize,
    spec: MixSpec,
    resolution: Resolution,
    timestep_rate: f64,
    encoder: EncoderSettings,
}

#[derive(Serialize)]
struct EncoderSettings {
    format: &'static str,
    mode: &'static str,
    quality: u8,
}

#[derive(Serialize)]
struct ProvenanceRow<'a> {
    file: String,
    #[serde(flatten)]
    plan: &'a SamplePlan,
}

pub fn image_name(index: u64) -> String {
    format!("{IMAGES_DIR}/{index:07}.jpg")
}

/// Write `count` JPEG samples and their provenance under `out_dir`.
pub fn build_mixed_dataset(
    manifest: &CorpusManifest,
    opts: &DatasetOptions,
    out_dir: &Path,
    pool: &RenderPool,
) -> Result<DatasetReport, MixError> {
    let mut sampler = Sampler::from_manifest(manifest, opts.spec, opts.resolution)?;
    let images_dir = out_dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir)?;
    let provenance = out_dir.join(PROVENANCE_FILE);
    let mut prov = std::io::BufWriter::new(fs::File::create(&provenance)?);
    let header = ProvenanceHeader {
        format: PROVENANCE_FORMAT,
        count: opts.count,
        programs: sampler.programs().len(),
        spec: opts.spec,
        resolution: opts.resolution,
        timestep_rate: DEFAULT_FRAME_RATE,
        encoder: EncoderSettings { format: "jpeg", mode: "baseline", quality: opts.jpeg_quality },
    };
    serde_json::to_writer(&mut prov, &header).map_err(std::io::Error::other)?;
    prov.write_all(b"\n")?;

    let mut bytes_written = 0u64;
    let mut done = 0;
    while done < opts.count {
        let n = CHUNK.min(opts.count - done);
        let batch = generate(&mut sampler, n, pool)?;
        let encoded: Vec<Result<Vec<u8>, MixError>> = batch
            .par_iter()
            .map(|(_, s)| s.image.encode_jpeg(opts.jpeg_quality).map_err(|e| MixError::Encode(e.to_string())))
            .collect();
        for ((plan, _), bytes) in batch.iter().zip(encoded) {
            let bytes = bytes?;
            let file = image_name(plan.index);
            fs::write(out_dir.join(&file), &bytes)?;
            bytes_written += bytes.len() as u64;
            serde_json::to_writer(&mut prov, &ProvenanceRow { file, plan }).map_err(std::io::Error::other)?;
            prov.write_all(b"\n")?;
        }
        done += n;
    }
    prov.flush()?;
    Ok(DatasetReport { count: opts.count, programs: sampler.programs().len(), images_dir, provenance, bytes_written })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn programs(n: usize) -> Vec<Program> {
        (0..n).map(|i| Program { id: format!("p{i:02}"), glsl: "".into() }).collect()
    }

    fn res() -> Resolution {
        Resolution::square(16).unwrap()
    }

    #[test]
    fn sources_are_distinct_and_frames_advance() {
        let spec = MixSpec { n: 3, ..Default::default() };
        let mut s = Sampler::new(programs(4), spec, res()).unwrap();
        let plans: Vec<_> = (0..50).map(|_| s.next_plan()).collect();
        for p in &plans {
            let mut ids = p.shader_ids.clone();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), 3);
            assert!((p.weights.as_ref().unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        // The k-th use of a program lands in slot k of its schedule.
        let times: Vec<f64> = plans.iter().flat_map(|p| p.shader_ids.iter().zip(&p.t)).filter(|(id, _)| *id == "p00").map(|(_, t)| *t).collect();
        for (k, t) in times.iter().enumerate() {
            assert!(*t >= k as f64 / 4.0 && *t < (k + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn planning_ignores_input_order() {
        let spec = MixSpec { n: 2, mode: MixMode::Cutmix, ..Default::default() };
        let mut a = Sampler::new(programs(5), spec, res()).unwrap();
        let mut rev = programs(5);
        rev.reverse();
        let mut b = Sampler::new(rev, spec, res()).unwrap();
        for _ in 0..10 {
            assert_eq!(a.next_plan(), b.next_plan());
        }
    }

    #[test]
    fn too_few_programs() {
        let spec = MixSpec { n: 6, ..Default::default() };
        assert!(matches!(Sampler::new(programs(5), spec, res()), Err(MixError::InsufficientPrograms { needed: 6, available: 5 })));
    }
}
