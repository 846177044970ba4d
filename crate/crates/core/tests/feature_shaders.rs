//! Golden checksums for TwiGL snippets covering the executor's feature set:
//! loops, switch fall-through, structs, out parameters, integer and
//! matrix algebra, dynamic indexing, private globals and discard.

use shadercorpus::corpus::{normalize, Dialect};
use shadercorpus::render::{RenderContext, Resolution};

fn weighted_sum(pixels: &[u8]) -> u64 {
    pixels.iter().enumerate().map(|(i, &p)| (i as u64 % 7 + 1) * p as u64).sum()
}

#[test]
fn feature_shaders_match_golden_checksums() {
    let ctx = RenderContext::new().unwrap();
    let res = Resolution::square(16).unwrap();
    let table = include_str!("data/feature_shaders.tsv");
    let mut failures = Vec::new();
    for (n, line) in table.lines().enumerate() {
        let (want, snippet) = line.split_once('\t').unwrap();
        let want: u64 = want.parse().unwrap();
        let h = ctx.compile(&normalize(snippet, Dialect::Twigl).unwrap()).unwrap();
        let got = weighted_sum(&ctx.render_frame(&h, 1.3, res).unwrap().pixels);
        if got != want {
            failures.push(format!("line {}: {got} != {want}", n + 1));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
