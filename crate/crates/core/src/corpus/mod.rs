//! Program records, ingestion, dialect normalization and compile checks.

pub mod dialect;
pub mod manifest;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::render::pool::RenderPool;
use crate::render::{RenderContext, RenderError};

pub use dialect::{adapt_shadertoy, normalize, transpile_twigl, Dialect, PrepError};
pub use manifest::{CorpusManifest, ManifestHeader};

/// Name of the content hash recorded in manifest headers.
pub const HASH_ALGORITHM: &str = "sha256";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("source is empty")]
    EmptySource,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid id `{0}`: use letters, digits, `.`, `_` or `-`, not starting with `.`")]
    InvalidId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RejectReason {
    Compile { log: String },
    MissingEntryPoint,
    RequiresExternalInput { identifiers: Vec<String> },
    Timeout { limit_ms: u64 },
    Render { message: String },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::Compile { .. } => f.write_str("compile"),
            RejectReason::MissingEntryPoint => f.write_str("missing-entry-point"),
            RejectReason::RequiresExternalInput { identifiers } => {
                write!(f, "requires-external-input({})", identifiers.join(","))
            }
            RejectReason::Timeout { limit_ms } => write!(f, "timeout({limit_ms}ms)"),
            RejectReason::Render { message } => write!(f, "render({message})"),
        }
    }
}

impl From<PrepError> for RejectReason {
    fn from(e: PrepError) -> Self {
        match e {
            PrepError::MissingEntryPoint => RejectReason::MissingEntryPoint,
            PrepError::RequiresExternalInput(identifiers) => RejectReason::RequiresExternalInput { identifiers },
        }
    }
}

impl RejectReason {
    /// Reason for a record whose frame could not be rendered, or `None` when
    /// the error is not attributable to the program.
    pub fn from_render_error(e: &RenderError) -> Option<Self> {
        match e {
            RenderError::Timeout { limit } => Some(RejectReason::Timeout { limit_ms: limit.as_millis() as u64 }),
            RenderError::Compile { log } => Some(RejectReason::Compile { log: log.clone() }),
            RenderError::Execution(m) => Some(RejectReason::Render { message: m.clone() }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum Status {
    Pending,
    Compiled,
    Rejected { reason: RejectReason },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "of", rename_all = "kebab-case")]
pub enum DedupState {
    Unique,
    DuplicateOf(String),
    Static,
}

/// One generative program. The glsl text is stored beside the manifest,
/// not inside the record line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub id: String,
    pub dialect: Dialect,
    pub char_count: usize,
    pub source_hash: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dedup: Option<DedupState>,
    /// Hex digest of the frame rendered at the duplicate-detection time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
    /// Largest per-channel change seen across the static-detection probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_spread: Option<u8>,
    pub source: String,
    #[serde(skip)]
    pub glsl: String,
}

pub fn source_hash(source: &str) -> String {
    hex::encode(Sha256::digest(source.as_bytes()))
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl ProgramRecord {
    /// A pending record with hashes filled and glsl normalized when the
    /// dialect allows it. Normalization failures are kept for `validate`.
    pub fn new(id: &str, source: &str, dialect: Dialect) -> Result<Self, CorpusError> {
        if source.is_empty() {
            return Err(CorpusError::EmptySource);
        }
        if !is_valid_id(id) {
            return Err(CorpusError::InvalidId(id.to_string()));
        }
        Ok(Self {
            id: id.to_string(),
            dialect,
            char_count: source.len(),
            source_hash: source_hash(source),
            status: Status::Pending,
            dedup: None,
            fingerprint: None,
            probe_spread: None,
            glsl: normalize(source, dialect).unwrap_or_default(),
            source: source.to_string(),
        })
    }

    pub fn is_compiled(&self) -> bool {
        self.status == Status::Compiled
    }

    /// Compiled and kept by both pruning passes.
    pub fn is_unique(&self) -> bool {
        self.is_compiled() && self.dedup == Some(DedupState::Unique)
    }

    pub fn reject(&mut self, reason: RejectReason) {
        self.status = Status::Rejected { reason };
        self.clear_dedup();
    }

    pub fn clear_dedup(&mut self) {
        self.dedup = None;
        self.fingerprint = None;
        self.probe_spread = None;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub id: String,
    pub compiled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    pub log: String,
}

enum Check {
    Prep(PrepError),
    Compiled(String, Result<String, RenderError>),
}

fn apply(record: &mut ProgramRecord, check: Check) -> Result<CompileReport, RenderError> {
    let (compiled, reason, log) = match check {
        Check::Prep(e) => {
            record.glsl.clear();
            let reason = RejectReason::from(e);
            record.reject(reason.clone());
            (false, Some(reason), String::new())
        }
        Check::Compiled(glsl, outcome) => {
            if record.glsl != glsl {
                record.clear_dedup();
            }
            record.glsl = glsl;
            match outcome {
                Ok(log) => {
                    record.status = Status::Compiled;
                    (true, None, log)
                }
                Err(RenderError::Compile { log }) => {
                    let reason = RejectReason::Compile { log: log.clone() };
                    record.reject(reason.clone());
                    (false, Some(reason), log)
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(CompileReport { id: record.id.clone(), compiled, reason, log })
}

/// Normalize and compile one record, setting its status.
pub fn validate(ctx: &RenderContext, record: &mut ProgramRecord) -> Result<CompileReport, RenderError> {
    let check = match normalize(&record.source, record.dialect) {
        Err(e) => Check::Prep(e),
        Ok(glsl) => {
            let outcome = ctx.compile_named(&record.id, &glsl).map(|h| h.log().to_string());
            Check::Compiled(glsl, outcome)
        }
    };
    apply(record, check)
}

/// Validate records on the worker pool. With `only_pending`, records that
/// already have a verdict are left alone.
pub fn validate_manifest(
    manifest: &mut CorpusManifest,
    pool: &RenderPool,
    only_pending: bool,
) -> Result<Vec<CompileReport>, RenderError> {
    let pending: Vec<_> = manifest
        .records()
        .iter()
        .filter(|r| !only_pending || r.status == Status::Pending)
        .map(|r| {
            let check = match normalize(&r.source, r.dialect) {
                Err(e) => Err(e),
                Ok(glsl) => {
                    let glsl: Arc<str> = glsl.into();
                    Ok((glsl.clone(), pool.compile_check(r.id.clone(), glsl)))
                }
            };
            (r.id.clone(), check)
        })
        .collect();
    let mut reports = Vec::with_capacity(pending.len());
    for (id, check) in pending {
        let check = match check {
            Err(e) => Check::Prep(e),
            Ok((glsl, rx)) => Check::Compiled(glsl.to_string(), RenderPool::wait(&rx)),
        };
        let record = manifest.get_mut(&id).expect("id from the same manifest");
        reports.push(apply(record, check)?);
    }
    manifest.reconcile();
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::Device;

    #[test]
    fn record_fields() {
        let r = ProgramRecord::new("a", "void main(){gl_FragColor=vec4(1.);}", Dialect::RawGlsl).unwrap();
        assert_eq!(r.char_count, 35);
        assert_eq!(r.status, Status::Pending);
        assert_eq!(r.source_hash.len(), 64);
        assert!(matches!(ProgramRecord::new("b", "", Dialect::RawGlsl), Err(CorpusError::EmptySource)));
        assert!(matches!(ProgramRecord::new("../x", "x", Dialect::Twigl), Err(CorpusError::InvalidId(_))));
    }

    #[test]
    fn validation_sets_status() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let mut ok = ProgramRecord::new("ok", "o=vec4(1,0,0,1);", Dialect::Twigl).unwrap();
        let report = validate(&ctx, &mut ok).unwrap();
        assert!(report.compiled);
        assert_eq!(ok.status, Status::Compiled);

        let mut bad = ProgramRecord::new("bad", "o=vec4(1,0,0,1)", Dialect::Twigl).unwrap();
        let report = validate(&ctx, &mut bad).unwrap();
        assert!(!report.compiled);
        assert!(!report.log.is_empty());
        assert!(matches!(bad.status, Status::Rejected { reason: RejectReason::Compile { .. } }));
        assert_eq!(bad.source, "o=vec4(1,0,0,1)");
    }

    #[test]
    fn unknown_twigl_identifier_fails_in_validation() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let mut r = ProgramRecord::new("m", "o=vec4(mm.x);", Dialect::Twigl).unwrap();
        assert!(!r.glsl.is_empty());
        let report = validate(&ctx, &mut r).unwrap();
        assert!(report.log.contains("mm"), "{}", report.log);
    }

    #[test]
    fn external_inputs_are_rejected_with_identifiers() {
        let ctx = RenderContext::with_device(Device::Cpu).unwrap();
        let mut r = ProgramRecord::new(
            "tex",
            "void mainImage(out vec4 c, in vec2 p){ c = texture(iChannel0, p); }",
            Dialect::Shadertoy,
        )
        .unwrap();
        validate(&ctx, &mut r).unwrap();
        match &r.status {
            Status::Rejected { reason: RejectReason::RequiresExternalInput { identifiers } } => {
                assert!(identifiers.iter().any(|i| dialect::EXTERNAL_INPUTS.contains(&i.as_str())));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn status_serialization() {
        let s = Status::Rejected { reason: RejectReason::Timeout { limit_ms: 2000 } };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"state":"rejected","reason":{"kind":"timeout","limit_ms":2000}}"#);
        let d = serde_json::to_string(&DedupState::DuplicateOf("a".into())).unwrap();
        assert_eq!(d, r#"{"state":"duplicate-of","of":"a"}"#);
        assert_eq!(serde_json::to_string(&DedupState::Unique).unwrap(), r#"{"state":"unique"}"#);
    }
}
