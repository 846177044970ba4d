use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{MetricsError, StatsRecord, StatsSettings};

/// Nearest-rank quantile of an ascending slice: the element at 1-based
/// rank `ceil(q * n)`, with rank at least 1.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let n = sorted.len();
    // The epsilon keeps products like 0.05 * 1000 from rounding up a rank.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub avg: f64,
    pub q5: f64,
    pub q95: f64,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            avg: values.iter().sum::<f64>() / values.len() as f64,
            q5: nearest_rank(&sorted, 0.05),
            q95: nearest_rank(&sorted, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub subset: String,
    pub count: usize,
    pub char_count: MetricSummary,
    pub jpeg_kb: MetricSummary,
    pub gzip_kb: MetricSummary,
    pub fps: MetricSummary,
    pub self_sim: MetricSummary,
    /// Filled from external tooling; never computed here.
    pub fid: Option<f64>,
}

/// Average and 5/95 quantiles of every metric over `records`.
pub fn summarize<'a>(subset: &str, records: impl IntoIterator<Item = &'a StatsRecord>) -> Result<CorpusSummary, MetricsError> {
    let records: Vec<_> = records.into_iter().collect();
    if records.is_empty() {
        return Err(MetricsError::EmptySubset(subset.to_string()));
    }
    let col = |f: fn(&StatsRecord) -> f64| MetricSummary::of(&records.iter().map(|r| f(r)).collect::<Vec<_>>());
    Ok(CorpusSummary {
        subset: subset.to_string(),
        count: records.len(),
        char_count: col(|r| r.char_count as f64),
        jpeg_kb: col(|r| r.jpeg_kb),
        gzip_kb: col(|r| r.gzip_kb),
        fps: col(|r| r.fps),
        self_sim: col(|r| r.self_sim),
        fid: None,
    })
}

/// A plain-text table with one row per metric and one column per subset,
/// each cell `avg [Q5, Q95]`, under a settings header.
pub fn render_table(summaries: &[CorpusSummary], settings: Option<&StatsSettings>) -> String {
    let mut out = String::new();
    if let Some(s) = settings {
        let _ = writeln!(
            out,
            "# samples={} resolution={} seed={} jpeg_quality={} self_sim={}x{} crop_frac={}",
            s.samples, s.resolution, s.seed, s.jpeg_quality, s.self_sim_images, s.self_sim_pairs, s.crop_frac
        );
    }
    let _ = writeln!(out, "# cells: avg [Q5, Q95]; KB = 1024 bytes; FPS measured on this machine");
    let rows: [(&str, fn(&CorpusSummary) -> MetricSummary); 5] = [
        ("Chars", |s| s.char_count),
        ("JPEG (KB)", |s| s.jpeg_kb),
        ("gzip (KB/img)", |s| s.gzip_kb),
        ("FPS", |s| s.fps),
        ("Self-sim", |s| s.self_sim),
    ];
    let mut header = format!("{:<16}", "");
    for s in summaries {
        let _ = write!(header, "{:>30}", format!("{} (n={})", s.subset, s.count));
    }
    out.push_str(header.trim_end());
    out.push('\n');
    for (name, get) in rows {
        let mut line = format!("{name:<16}");
        for s in summaries {
            let m = get(s);
            let cell = format!("{:.1} [{:.1}, {:.1}]", m.avg, m.q5, m.q95);
            let _ = write!(line, "{cell:>30}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    let mut line = format!("{:<16}", "FID");
    for s in summaries {
        let cell = s.fid.map(|f| format!("{f:.2}")).unwrap_or_else(|| "-".into());
        let _ = write!(line, "{cell:>30}");
    }
    out.push_str(&line);
    out.push('\n');
    out
}

/// Ids by descending score, ties by ascending id, truncated to `k`.
pub fn select_top_k(scores: &HashMap<String, f64>, k: usize) -> Result<Vec<String>, MetricsError> {
    if k > scores.len() {
        return Err(MetricsError::KTooLarge { k, available: scores.len() });
    }
    let mut v: Vec<_> = scores.iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    Ok(v.into_iter().take(k).map(|(id, _)| id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dialect;
    use crate::image::Resolution;

    fn rec(id: &str, chars: usize) -> StatsRecord {
        StatsRecord {
            shader_id: id.into(),
            dialect: Dialect::Twigl,
            char_count: chars,
            jpeg_kb: 2.0,
            gzip_kb: 1.0,
            fps: 50.0,
            self_sim: 0.2,
            samples_used: 400,
            resolution: Resolution::default(),
        }
    }

    #[test]
    fn singleton_collapses() {
        let s = summarize("twigl", [&rec("a", 283)]).unwrap();
        assert_eq!(s.char_count, MetricSummary { avg: 283.0, q5: 283.0, q95: 283.0 });
        assert!(matches!(summarize("x", std::iter::empty()), Err(MetricsError::EmptySubset(_))));
    }

    #[test]
    fn nearest_rank_small_cases() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(nearest_rank(&v, 0.05), 1.0);
        assert_eq!(nearest_rank(&v, 0.95), 10.0);
        assert_eq!(nearest_rank(&v, 0.5), 5.0);
        let twenty: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&twenty, 0.05), 1.0);
        assert_eq!(nearest_rank(&twenty, 0.95), 19.0);
    }

    #[test]
    fn top_k() {
        let scores: HashMap<String, f64> = [("a", 0.3), ("b", 0.2), ("c", 0.9)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_top_k(&scores, 2).unwrap(), ["c", "a"]);
        assert_eq!(select_top_k(&scores, 3).unwrap(), ["c", "a", "b"]);
        assert!(matches!(select_top_k(&scores, 4), Err(MetricsError::KTooLarge { .. })));
        let tied: HashMap<String, f64> = [("z", 1.0), ("m", 1.0), ("a", 1.0)].iter().map(|(k, v)| (k.to_string(), *v)).collect();
        assert_eq!(select_top_k(&tied, 3).unwrap(), ["a", "m", "z"]);
    }

    #[test]
    fn table_has_all_rows() {
        let s = summarize("twigl", [&rec("a", 100), &rec("b", 300)]).unwrap();
        let t = render_table(&[s], Some(&StatsSettings::default()));
        for row in ["Chars", "JPEG (KB)", "gzip (KB/img)", "FPS", "Self-sim", "FID"] {
            assert!(t.contains(row), "{t}");
        }
        assert!(t.contains("200.0 [100.0, 300.0]"), "{t}");
    }
}
