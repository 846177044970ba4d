//! The persistent corpus index.
//!
//! On disk a manifest is a JSON-lines file. The first line is a
//! [`ManifestHeader`]; every following line is one [`ProgramRecord`] with
//! fields in the order `id, dialect, char_count, source_hash, status,
//! dedup, fingerprint, probe_spread, source`. The normalized GLSL of each
//! record lives beside the manifest in `<id>.frag`, and per-program
//! statistics, when computed, in `stats.jsonl`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{dialect, CorpusError, DedupState, Dialect, ProgramRecord, HASH_ALGORITHM};
use crate::dedup::{DuplicateSettings, StaticSettings};
use crate::metrics::StatsRecord;

pub const MANIFEST_FORMAT: &str = "shadercorpus-manifest";
pub const STATS_FILE: &str = "stats.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub hash: String,
    pub glsl_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duplicates: Option<DuplicateSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statics: Option<StaticSettings>,
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            hash: HASH_ALGORITHM.into(),
            glsl_version: dialect::GLSL_VERSION.into(),
            duplicates: None,
            statics: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CorpusManifest {
    pub header: ManifestHeader,
    records: Vec<ProgramRecord>,
    index: HashMap<String, usize>,
    pub stats: BTreeMap<String, StatsRecord>,
}

impl CorpusManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[ProgramRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProgramRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut ProgramRecord> {
        self.index.get(id).map(|&i| &mut self.records[i])
    }

    pub fn records_mut(&mut self) -> impl Iterator<Item = &mut ProgramRecord> {
        self.records.iter_mut()
    }

    pub fn push(&mut self, record: ProgramRecord) -> Result<&ProgramRecord, CorpusError> {
        if self.index.contains_key(&record.id) {
            return Err(CorpusError::DuplicateId(record.id));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(self.records.last().unwrap())
    }

    pub fn ingest_snippet(&mut self, source: &str, dialect: Dialect, id: &str) -> Result<&ProgramRecord, CorpusError> {
        if self.index.contains_key(id) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        let record = ProgramRecord::new(id, source, dialect)?;
        self.push(record)
    }

    /// Programs kept by pruning, sorted by id.
    pub fn unique_programs(&self) -> Vec<&ProgramRecord> {
        let mut v: Vec<_> = self.records.iter().filter(|r| r.is_unique()).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// Recompute every record's dedup state from the stored evidence
    /// (fingerprints and probe spreads) and the header settings.
    ///
    /// A compiled record gets a state only when it carries evidence for
    /// every pass that has run. Static records are set aside first; each
    /// remaining fingerprint group keeps its smallest id. The result
    /// depends only on the set of records, never on their order.
    pub fn reconcile(&mut self) {
        let dup_ran = self.header.duplicates.is_some();
        let threshold = self.header.statics.as_ref().map(|s| s.threshold);
        let ready = |r: &ProgramRecord| {
            r.is_compiled()
                && (dup_ran || threshold.is_some())
                && (!dup_ran || r.fingerprint.is_some())
                && (threshold.is_none() || r.probe_spread.is_some())
        };
        let is_static = |r: &ProgramRecord| matches!((r.probe_spread, threshold), (Some(s), Some(t)) if s <= t);

        let mut kept: HashMap<&str, &str> = HashMap::new();
        for r in self.records.iter().filter(|r| ready(r) && !is_static(r)) {
            if let Some(fp) = r.fingerprint.as_deref() {
                let slot = kept.entry(fp).or_insert(r.id.as_str());
                if r.id.as_str() < *slot {
                    *slot = r.id.as_str();
                }
            }
        }
        let states: Vec<Option<DedupState>> = self
            .records
            .iter()
            .map(|r| {
                if !ready(r) {
                    None
                } else if is_static(r) {
                    Some(DedupState::Static)
                } else {
                    match r.fingerprint.as_deref().map(|fp| kept[fp]) {
                        Some(k) if k != r.id => Some(DedupState::DuplicateOf(k.to_string())),
                        _ => Some(DedupState::Unique),
                    }
                }
            })
            .collect();
        for (r, s) in self.records.iter_mut().zip(states) {
            r.dedup = s;
        }
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let file = fs::File::open(path)?;
        let dir = parent_dir(path);
        let mut manifest = CorpusManifest::new();
        let parse_err = |line: usize, message: String| CorpusError::Parse { path: path.display().to_string(), line, message };
        let mut saw_header = false;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                manifest.header = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
                if manifest.header.format != MANIFEST_FORMAT {
                    return Err(parse_err(i + 1, format!("not a manifest (format `{}`)", manifest.header.format)));
                }
                saw_header = true;
                continue;
            }
            let mut record: ProgramRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e.to_string()))?;
            record.glsl = match fs::read_to_string(frag_path(&dir, &record.id)) {
                Ok(s) => s,
                Err(_) => dialect::normalize(&record.source, record.dialect).unwrap_or_default(),
            };
            manifest.push(record).map_err(|e| parse_err(i + 1, e.to_string()))?;
        }
        if !saw_header {
            return Err(parse_err(1, "missing header line".into()));
        }
        let stats_path = dir.join(STATS_FILE);
        if stats_path.exists() {
            manifest.stats = crate::metrics::load_stats(&stats_path)?
                .into_iter()
                .map(|s| (s.shader_id.clone(), s))
                .collect();
        }
        Ok(manifest)
    }

    /// Write the manifest and the `.frag` files. The manifest itself is
    /// replaced atomically.
    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let dir = parent_dir(path);
        fs::create_dir_all(&dir)?;
        for r in &self.records {
            if r.glsl.is_empty() {
                continue;
            }
            let p = frag_path(&dir, &r.id);
            if fs::read_to_string(&p).ok().as_deref() != Some(r.glsl.as_str()) {
                fs::write(&p, &r.glsl)?;
            }
        }
        write_atomic(path, |w| {
            serde_json::to_writer(&mut *w, &self.header).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
            for r in &self.records {
                serde_json::to_writer(&mut *w, r).map_err(std::io::Error::other)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
        Ok(())
    }

    pub fn stats_path(manifest_path: &Path) -> PathBuf {
        parent_dir(manifest_path).join(STATS_FILE)
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn frag_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.frag"))
}

/// Write through a temporary sibling file, then rename over `path`.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>) -> std::io::Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = parent_dir(path).join(format!(".{name}.tmp{}", std::process::id()));
    let mut w = std::io::BufWriter::new(fs::File::create(&tmp)?);
    body(&mut w)?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(&tmp, path)
}
