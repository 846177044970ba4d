#![allow(dead_code)]

use std::fs;
use std::path::Path;

use shadercorpus::corpus::{validate_manifest, CorpusManifest, Dialect};
use shadercorpus::dedup::{remove_duplicates, remove_static, DuplicateSettings, StaticSettings, DEFAULT_PROBE_SEED};
use shadercorpus::render::pool::{PoolOptions, RenderPool};
use shadercorpus::render::Resolution;

pub fn res(side: u32) -> Resolution {
    Resolution::square(side).unwrap()
}

pub fn pool() -> RenderPool {
    RenderPool::new(PoolOptions::default()).unwrap()
}

/// A time-varying TwiGL body whose blue channel encodes `i`.
pub fn dynamic_snippet(i: usize) -> String {
    format!(
        "o=vec4(fract(FC.x/r.x*{a}.+t*{b}.),fract(FC.y/r.y+t),{i}./255.,1);",
        a = i % 5 + 1,
        b = i % 3 + 1
    )
}

/// The same program as [`dynamic_snippet`] with different text.
pub fn variant_snippet(i: usize) -> String {
    format!("// variant\nvec4 c = vec4(0);\n{}\nc = o;\no = c;", dynamic_snippet(i).replace(',', ", "))
}

/// A body that ignores time.
pub fn static_snippet(i: usize) -> String {
    format!("o=vec4(FC.x/r.x,{i}./255.,.5,1);")
}

/// `(id, source)` of 70 dynamic programs, 20 textual variants of the
/// first 20 and 10 static ones.
pub fn dedup_corpus() -> Vec<(String, String)> {
    let mut v = Vec::new();
    for i in 0..70 {
        v.push((format!("dyn_{i:03}"), dynamic_snippet(i)));
    }
    for i in 0..20 {
        v.push((format!("var_{i:03}"), variant_snippet(i)));
    }
    for i in 0..10 {
        v.push((format!("sta_{i:03}"), static_snippet(i)));
    }
    v
}

pub fn manifest_of(snippets: &[(String, String)]) -> CorpusManifest {
    let mut m = CorpusManifest::new();
    for (id, src) in snippets {
        m.ingest_snippet(src, Dialect::Twigl, id).unwrap();
    }
    m
}

pub fn static_settings(side: u32) -> StaticSettings {
    StaticSettings { k_probes: 4, threshold: 0, probe_seed: DEFAULT_PROBE_SEED, resolution: res(side) }
}

pub fn duplicate_settings(side: u32) -> DuplicateSettings {
    DuplicateSettings { t0: 0.0, resolution: res(side) }
}

/// Validate and prune in memory.
pub fn prepare(m: &mut CorpusManifest, pool: &RenderPool, side: u32) {
    validate_manifest(m, pool, true).unwrap();
    remove_static(m, static_settings(side), pool).unwrap();
    remove_duplicates(m, duplicate_settings(side), pool).unwrap();
}

/// A small validated and pruned corpus.
pub fn small_corpus(pool: &RenderPool) -> CorpusManifest {
    let snippets: Vec<_> = (0..8).map(|i| (format!("p{i}"), dynamic_snippet(i))).collect();
    let mut m = manifest_of(&snippets);
    prepare(&mut m, pool, 16);
    m
}

/// Write snippets as `.twigl` files under `dir`.
pub fn write_snippets(dir: &Path, snippets: &[(String, String)]) {
    fs::create_dir_all(dir).unwrap();
    for (id, src) in snippets {
        fs::write(dir.join(format!("{id}.twigl")), src).unwrap();
    }
}
