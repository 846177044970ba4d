use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use super::*;
use crate::corpus::{source_hash, validate_manifest, CorpusError, CorpusManifest, RejectReason};
use crate::dedup::{remove_duplicates, remove_static, DuplicateSettings, PruneReport, StaticSettings};
use crate::image::{Image, ImageBatch};
use crate::metrics::summary::{render_table, select_top_k, summarize, CorpusSummary};
use crate::metrics::{corpus_stats, load_stats_file, save_stats, StatsRecord, StatsSettings};
use crate::mix::dataset::{build_mixed_dataset, generate, DatasetOptions, Sampler};
use crate::mix::MixSpec;
use crate::render::pool::{PoolOptions, RenderPool};
use crate::render::sample_timesteps_at;
use crate::rng::StreamKey;
use crate::stream::{serve_with, ServerOptions};

type Result<T> = std::result::Result<T, CliError>;

struct Run {
    seed: u64,
    pool: PoolOptions,
    frame_timeout_ms: u64,
    subcommand: &'static str,
    args: serde_json::Value,
}

impl Run {
    fn pool(&self) -> Result<RenderPool> {
        Ok(RenderPool::new(self.pool)?)
    }

    fn write_config(&self, dir: &Path, measurements: &[&str]) -> Result<()> {
        let config = RunConfig {
            subcommand: self.subcommand,
            tool_version: TOOL_VERSION,
            seed: self.seed,
            workers: self.pool.workers,
            frame_timeout_ms: self.frame_timeout_ms,
            device: format!("{:?}", self.pool.device).to_lowercase(),
            args: self.args.clone(),
            measurements,
        };
        fs::create_dir_all(dir)?;
        let mut body = serde_json::to_string_pretty(&config)?;
        body.push('\n');
        fs::write(dir.join(format!("{}.config.json", self.subcommand)), body)?;
        Ok(())
    }
}

pub(super) fn run(cli: Cli) -> Result<()> {
    let mut pool = PoolOptions::from_env()?;
    if let Some(w) = cli.workers {
        pool.workers = w;
    }
    pool.frame_timeout = (cli.frame_timeout_ms > 0).then(|| Duration::from_millis(cli.frame_timeout_ms));
    let mut args = serde_json::to_value(&cli.command)?;
    let args = args.as_object_mut().and_then(|o| o.values_mut().next()).map(std::mem::take).unwrap_or_default();
    let run = Run { seed: cli.seed, pool, frame_timeout_ms: cli.frame_timeout_ms, subcommand: cli.command.name(), args };
    match &cli.command {
        Command::Ingest(a) => ingest(&run, a),
        Command::Validate(a) => validate(&run, a),
        Command::Dedup(a) => dedup(&run, a),
        Command::Render(a) => render(&run, a),
        Command::Mix(a) => mix(&run, a),
        Command::Stats(a) => stats(&run, a),
        Command::Summarize(a) => summarize_cmd(&run, a),
        Command::Select(a) => select(&run, a),
        Command::Serve(a) => serve(&run, a),
        Command::Preview(a) => preview(&run, a),
    }
}

fn load(path: &Path) -> Result<CorpusManifest> {
    if !path.exists() {
        return Err(CliError::new("corpus", format!("manifest `{}` does not exist", path.display())));
    }
    Ok(CorpusManifest::load(path)?)
}

fn ingest(run: &Run, a: &IngestArgs) -> Result<()> {
    let mut manifest = if a.manifest.exists() { CorpusManifest::load(&a.manifest)? } else { CorpusManifest::new() };
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.')))
        .collect();
    files.sort();
    let (mut added, mut unchanged, mut skipped) = (0, 0, 0);
    for path in files {
        let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default();
        let Some(dialect) = a.dialect.or_else(|| Dialect::from_extension(&ext)) else {
            eprintln!("skip {}: unknown extension", path.display());
            skipped += 1;
            continue;
        };
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let source = fs::read_to_string(&path)?;
        if let Some(existing) = manifest.get(&id) {
            if existing.source_hash == source_hash(&source) {
                unchanged += 1;
                continue;
            }
            return Err(CorpusError::DuplicateId(id).into());
        }
        match manifest.ingest_snippet(&source, dialect, &id) {
            Ok(_) => added += 1,
            Err(CorpusError::EmptySource) => {
                eprintln!("skip {}: empty source", path.display());
                skipped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    manifest.save(&a.manifest)?;
    run.write_config(&dir_of(&a.manifest), &[])?;
    println!("ingested {added} new, {unchanged} unchanged, {skipped} skipped; manifest has {} records", manifest.len());
    Ok(())
}

fn validate(run: &Run, a: &ValidateArgs) -> Result<()> {
    let mut manifest = load(&a.manifest)?;
    let pool = run.pool()?;
    let reports = validate_manifest(&mut manifest, &pool, !a.all)?;
    manifest.save(&a.manifest)?;
    run.write_config(&dir_of(&a.manifest), &[])?;
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut compiled = 0;
    for r in &reports {
        match &r.reason {
            None => compiled += 1,
            Some(reason) => *reasons.entry(reason_kind(reason).to_string()).or_default() += 1,
        }
    }
    let rejected: usize = reasons.values().sum();
    let detail: Vec<String> = reasons.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("validated {}: {compiled} compiled, {rejected} rejected ({})", reports.len(), detail.join(", "));
    Ok(())
}

fn reason_kind(r: &RejectReason) -> &'static str {
    match r {
        RejectReason::Compile { .. } => "compile",
        RejectReason::MissingEntryPoint => "missing-entry-point",
        RejectReason::RequiresExternalInput { .. } => "requires-external-input",
        RejectReason::Timeout { .. } => "timeout",
        RejectReason::Render { .. } => "render",
    }
}

#[derive(Serialize)]
struct DedupReport {
    static_pass: PruneReport,
    duplicate_pass: PruneReport,
}

fn dedup(run: &Run, a: &DedupArgs) -> Result<()> {
    let mut manifest = load(&a.manifest)?;
    let pool = run.pool()?;
    let threshold = if a.tolerant { StaticSettings::TOLERANT_THRESHOLD } else { a.threshold };
    let statics = StaticSettings { k_probes: a.probes, threshold, probe_seed: a.probe_seed, resolution: a.resolution };
    let static_pass = remove_static(&mut manifest, statics, &pool)?;
    let duplicate_pass = remove_duplicates(&mut manifest, DuplicateSettings { t0: a.t0, resolution: a.resolution }, &pool)?;
    manifest.save(&a.manifest)?;
    let dir = dir_of(&a.manifest);
    run.write_config(&dir, &[])?;
    let report = DedupReport { static_pass, duplicate_pass };
    fs::write(dir.join("dedup.report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    println!("{}", serde_json::to_string(&report.duplicate_pass)?);
    println!("{}", report.duplicate_pass);
    Ok(())
}

#[derive(Serialize)]
struct FrameRow<'a> {
    shader_id: &'a str,
    frame: usize,
    t: f64,
}

fn render(run: &Run, a: &RenderArgs) -> Result<()> {
    let manifest = load(&a.manifest)?;
    let ids: Vec<String> = if a.ids.is_empty() {
        manifest.unique_programs().iter().map(|r| r.id.clone()).collect()
    } else {
        a.ids.clone()
    };
    let mut jobs = Vec::with_capacity(ids.len());
    for id in &ids {
        let r = manifest.get(id).ok_or_else(|| CorpusError::UnknownId(id.clone()))?;
        if !r.is_compiled() {
            return Err(CliError::new("corpus", format!("`{id}` is not compiled")));
        }
        let seed = StreamKey::from_seed(run.seed).split_label("render").split_label(id).to_seed();
        let plan = sample_timesteps_at(a.count, seed, a.rate)?;
        jobs.push((id.clone(), Arc::<str>::from(r.glsl.as_str()), plan.values));
    }
    let pool = run.pool()?;
    let res = a.resolution;
    let pending: Vec<_> = jobs
        .into_iter()
        .map(|(id, glsl, times)| {
            let key = id.clone();
            (key, pool.execute(move |w| w.render(&id, &glsl, &times, res)))
        })
        .collect();
    fs::create_dir_all(&a.out)?;
    let mut index = std::io::BufWriter::new(fs::File::create(a.out.join("frames.jsonl"))?);
    for (id, rx) in pending {
        let frames = RenderPool::wait(&rx)?;
        for (k, f) in frames.iter().enumerate() {
            serde_json::to_writer(&mut index, &FrameRow { shader_id: &id, frame: k, t: f.t })?;
            index.write_all(b"\n")?;
        }
        if matches!(a.format, FrameFormat::Jpeg | FrameFormat::Both) {
            let dir = a.out.join(&id);
            fs::create_dir_all(&dir)?;
            for (k, f) in frames.iter().enumerate() {
                fs::write(dir.join(format!("{k:04}.jpg")), f.encode_jpeg(a.quality)?)?;
            }
        }
        if matches!(a.format, FrameFormat::Raw | FrameFormat::Both) {
            let file = std::io::BufWriter::new(fs::File::create(a.out.join(format!("{id}.raw")))?);
            ImageBatch { resolution: res, frames }.write_raw(file)?;
        }
    }
    index.flush()?;
    run.write_config(&a.out, &[])?;
    println!("rendered {} frames of {} programs to {}", a.count * ids.len(), ids.len(), a.out.display());
    Ok(())
}

fn mix(run: &Run, a: &MixArgs) -> Result<()> {
    let manifest = load(&a.manifest)?;
    let spec = MixSpec { mode: a.mode, n: a.n, alpha: a.alpha, seed: run.seed };
    spec.validate()?;
    let pool = run.pool()?;
    let opts = DatasetOptions { count: a.count, spec, resolution: a.resolution, jpeg_quality: a.quality };
    let report = build_mixed_dataset(&manifest, &opts, &a.out, &pool)?;
    run.write_config(&a.out, &[])?;
    println!(
        "wrote {} images from {} programs ({} bytes) and {}",
        report.count,
        report.programs,
        report.bytes_written,
        report.provenance.display()
    );
    Ok(())
}

fn stats(run: &Run, a: &StatsArgs) -> Result<()> {
    let manifest = load(&a.manifest)?;
    let settings = StatsSettings {
        samples: a.samples,
        resolution: a.resolution,
        seed: run.seed,
        jpeg_quality: a.quality,
        self_sim_images: a.self_sim_images,
        self_sim_pairs: a.self_sim_pairs,
        ..StatsSettings::default()
    };
    let pool = run.pool()?;
    let out = a.out.clone().unwrap_or_else(|| CorpusManifest::stats_path(&a.manifest));
    let mut records = Vec::new();
    let mut failed = 0;
    for (id, r) in corpus_stats(&manifest, settings, &pool) {
        match r {
            Ok(s) => records.push(s),
            Err(e) => {
                eprintln!("warning: stats for `{id}` failed: {e}");
                failed += 1;
            }
        }
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_stats(&out, &settings, &records)?;
    run.write_config(&dir_of(&out), &["fps"])?;
    println!(
        "stats for {} programs ({failed} failed), {} samples at {} -> {}",
        records.len(),
        settings.samples,
        settings.resolution,
        out.display()
    );
    Ok(())
}

fn summarize_cmd(run: &Run, a: &SummarizeArgs) -> Result<()> {
    let manifest = load(&a.manifest)?;
    let stats_path = a.stats.clone().unwrap_or_else(|| CorpusManifest::stats_path(&a.manifest));
    if !stats_path.exists() {
        return Err(CliError::new("metrics", format!("stats file `{}` does not exist; run `stats` first", stats_path.display())));
    }
    let (settings, all) = load_stats_file(&stats_path)?;
    let unique: std::collections::HashSet<&str> = manifest.unique_programs().iter().map(|r| r.id.as_str()).collect();
    let records: Vec<&StatsRecord> = all.iter().filter(|r| unique.contains(r.shader_id.as_str())).collect();

    let subsets: Vec<String> = if a.subsets.is_empty() {
        let mut present: Vec<&str> = records.iter().map(|r| r.dialect.name()).collect();
        present.sort();
        present.dedup();
        std::iter::once("all").chain(present).map(String::from).collect()
    } else {
        a.subsets.clone()
    };
    let mut fids = HashMap::new();
    for f in &a.fids {
        let (k, v) = f.split_once('=').ok_or_else(|| CliError::new("usage", format!("--fid expects SUBSET=VALUE, got `{f}`")))?;
        let v: f64 = v.parse().map_err(|_| CliError::new("usage", format!("bad FID value `{v}`")))?;
        fids.insert(k.to_string(), v);
    }
    let mut summaries: Vec<CorpusSummary> = Vec::new();
    for name in &subsets {
        let filter: Option<Dialect> = match name.as_str() {
            "all" => None,
            other => Some(other.parse().map_err(|e: String| CliError::new("usage", e))?),
        };
        let mut s = summarize(name, records.iter().copied().filter(|r| filter.is_none_or(|d| r.dialect == d)))?;
        s.fid = fids.get(name).copied();
        summaries.push(s);
    }
    let table = render_table(&summaries, settings.as_ref());
    let out = a.out.clone().unwrap_or_else(|| dir_of(&a.manifest).join("summary.txt"));
    fs::write(&out, &table)?;
    if let Some(csv) = &a.csv {
        let mut w = std::io::BufWriter::new(fs::File::create(csv)?);
        writeln!(w, "shader_id,dialect,char_count,jpeg_kb,gzip_kb,fps,self_sim")?;
        for r in &records {
            writeln!(w, "{},{},{},{},{},{},{}", r.shader_id, r.dialect.name(), r.char_count, r.jpeg_kb, r.gzip_kb, r.fps, r.self_sim)?;
        }
        w.flush()?;
    }
    run.write_config(&dir_of(&out), &["fps"])?;
    print!("{table}");
    Ok(())
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let text = fs::read_to_string(path)?;
    if let Ok(map) = serde_json::from_str::<HashMap<String, f64>>(&text) {
        return Ok(map);
    }
    let mut scores = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = || CliError::new("usage", format!("{}:{}: expected `id,score`", path.display(), i + 1));
        let (id, score) = line.split_once(',').ok_or_else(bad)?;
        match score.trim().parse::<f64>() {
            Ok(s) => {
                scores.insert(id.trim().to_string(), s);
            }
            // A header line.
            Err(_) if i == 0 => {}
            Err(_) => return Err(bad()),
        }
    }
    Ok(scores)
}

fn select(run: &Run, a: &SelectArgs) -> Result<()> {
    let scores = read_scores(&a.scores)?;
    let ids = select_top_k(&scores, a.k)?;
    let out = a.out.clone().unwrap_or_else(|| dir_of(&a.scores).join("selected.txt"));
    let mut body = ids.join("\n");
    body.push('\n');
    fs::write(&out, &body)?;
    run.write_config(&dir_of(&out), &[])?;
    print!("{body}");
    Ok(())
}

fn serve(run: &Run, a: &ServeArgs) -> Result<()> {
    let manifest = load(&a.manifest)?;
    let opts = ServerOptions { pool: run.pool, max_in_flight: a.max_in_flight, ..ServerOptions::default() };
    let handle = serve_with(&manifest, a.bind.as_str(), opts)?;
    run.write_config(&dir_of(&a.manifest), &[])?;
    println!("listening on {}", handle.addr());
    handle.wait();
    Ok(())
}

/// Tile equally sized images row by row into one image.
pub(crate) fn grid(images: &[Image], rows: u32, cols: u32) -> Image {
    let (w, h) = (images[0].width, images[0].height);
    let mut out = Image::filled(crate::image::Resolution::new(w * cols, h * rows).expect("non-zero grid"), [0, 0, 0]);
    out.shader_id = "preview".into();
    for (i, img) in images.iter().enumerate() {
        let (gx, gy) = (i as u32 % cols, i as u32 / cols);
        for y in 0..h {
            let src = img.offset(0, y);
            let dst = out.offset(gx * w, gy * h + y);
            out.pixels[dst..dst + w as usize * 3].copy_from_slice(&img.pixels[src..src + w as usize * 3]);
        }
    }
    out
}

fn preview(run: &Run, a: &PreviewArgs) -> Result<()> {
    if a.rows == 0 || a.cols == 0 {
        return Err(CliError::new("usage", "rows and cols must be at least 1"));
    }
    let manifest = load(&a.manifest)?;
    let n = a.n.unwrap_or(if a.mode == crate::mix::MixMode::None { 1 } else { crate::mix::DEFAULT_N });
    let spec = MixSpec { mode: a.mode, n, alpha: a.alpha, seed: run.seed };
    let mut sampler = Sampler::from_manifest(&manifest, spec, a.resolution)?;
    let pool = run.pool()?;
    let samples = generate(&mut sampler, (a.rows * a.cols) as usize, &pool)?;
    let images: Vec<Image> = samples.into_iter().map(|(_, s)| s.image).collect();
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    grid(&images, a.rows, a.cols).save_png(&a.out)?;
    run.write_config(&dir_of(&a.out), &[])?;
    println!("wrote {}x{} preview to {}", a.cols, a.rows, a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Resolution;

    #[test]
    fn grid_places_cells_row_major() {
        let res = Resolution::new(2, 1).unwrap();
        let cells: Vec<Image> = (0..6).map(|i| Image::filled(res, [i as u8; 3])).collect();
        let g = grid(&cells, 2, 3);
        assert_eq!((g.width, g.height), (6, 2));
        assert_eq!(g.pixel(0, 0), [0; 3]);
        assert_eq!(g.pixel(5, 0), [2; 3]);
        assert_eq!(g.pixel(2, 1), [4; 3]);
    }

    #[test]
    fn scores_from_csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "id,score\na,0.5\nb,2\n").unwrap();
        let s = read_scores(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s["b"], 2.0);
    }

    #[test]
    fn error_line_format() {
        let e: CliError = CorpusError::UnknownId("x".into()).into();
        assert_eq!(e.to_string(), "error: corpus: unknown id `x`");
    }
}
