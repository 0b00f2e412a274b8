use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::records::Record;

/// Configuration two record sets are paired on. Node capacity, structure,
/// seed and host are deliberately left out: they are what a comparison
/// varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct ConfigKey {
    n: u32,
    c: Option<u64>,
    p: Option<u64>,
    mix: (Option<u32>, Option<u32>, Option<u32>),
    key_range: Option<u64>,
}

impl ConfigKey {
    fn of(r: &Record) -> Self {
        ConfigKey {
            n: r.n,
            c: r.c,
            p: r.p,
            mix: (r.mix_contains, r.mix_insert, r.mix_remove),
            key_range: r.key_range,
        }
    }
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let mix = match self.mix {
            (Some(c), Some(i), Some(r)) => format!("{c}/{i}/{r}"),
            _ => "-".into(),
        };
        write!(
            f,
            "N={} C={} P={} mix={} key_range={}",
            self.n,
            opt(self.c),
            opt(self.p),
            mix,
            opt(self.key_range)
        )
    }
}

/// Throughputs of one configuration, averaged over repeated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub config: String,
    pub n: u32,
    pub baseline_ops_s: f64,
    pub candidate_ops_s: f64,
    /// candidate / baseline
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<Comparison>,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Pairs candidate and baseline rows by configuration (N, C, P, operation
/// mix, key range) and reports per-configuration throughput ratios.
///
/// Every configuration must appear on both sides; otherwise the error lists
/// the unmatched ones.
pub fn compare(baseline: &[Record], candidate: &[Record]) -> Result<ComparisonReport> {
    let base = mean_by_config(baseline);
    let cand = mean_by_config(candidate);
    let mut unmatched: Vec<String> = base
        .keys()
        .filter(|k| !cand.contains_key(k))
        .map(|k| format!("{k} only in baseline"))
        .collect();
    unmatched.extend(
        cand.keys()
            .filter(|k| !base.contains_key(k))
            .map(|k| format!("{k} only in candidate")),
    );
    if !unmatched.is_empty() {
        return Err(Error::Mismatch(unmatched.join("; ")));
    }
    if base.is_empty() {
        return Err(Error::Mismatch("no records to compare".into()));
    }
    let rows: Vec<Comparison> = base
        .iter()
        .map(|(key, &b)| {
            let c = cand[key];
            Comparison {
                config: key.to_string(),
                n: key.n,
                baseline_ops_s: b,
                candidate_ops_s: c,
                ratio: c / b,
            }
        })
        .collect();
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    let median = if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        (ratios[mid - 1] + ratios[mid]) / 2.0
    };
    Ok(ComparisonReport {
        min: ratios[0],
        median,
        max: ratios[ratios.len() - 1],
        rows,
    })
}

fn mean_by_config(records: &[Record]) -> BTreeMap<ConfigKey, f64> {
    let mut sums: BTreeMap<ConfigKey, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(ConfigKey::of(r)).or_default();
        e.0 += r.throughput_ops_s;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

impl fmt::Display for ComparisonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<52} {:>14} {:>14} {:>8}", "config", "baseline", "candidate", "ratio")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<52} {:>14.6e} {:>14.6e} {:>8.4}",
                r.config, r.baseline_ops_s, r.candidate_ops_s, r.ratio
            )?;
        }
        write!(f, "ratio min={:.4} median={:.4} max={:.4}", self.min, self.median, self.max)
    }
}
