//! Prediction-vs-measurement tables over the shared CSV schema.

use std::collections::BTreeMap;
use std::fmt;

use crate::records::{Record, Source, Structure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JoinKey {
    pub structure: Structure,
    pub n: u32,
    pub c: Option<u64>,
    pub p: Option<u64>,
}

impl JoinKey {
    fn of(r: &Record) -> Self {
        JoinKey {
            structure: r.structure,
            n: r.n,
            c: r.c,
            p: r.p,
        }
    }
}

/// One predicted configuration with whatever measurements matched it.
/// Errors are relative to the prediction: `(measured - predicted) / predicted`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub key: JoinKey,
    pub predicted: f64,
    pub sim: Option<f64>,
    pub bench: Option<f64>,
    pub sim_error: Option<f64>,
    pub bench_error: Option<f64>,
}

/// Mean absolute percentage error of one source against the predictions
/// for one structure.
#[derive(Debug, Clone, PartialEq)]
pub struct Mape {
    pub structure: Structure,
    pub source: Source,
    pub rows: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub mape: Vec<Mape>,
    pub warnings: Vec<String>,
}

/// Joins `records` on (structure, N, C, P). Duplicate rows of one source
/// are averaged.
///
/// With only predictions in the input every predicted key is listed with
/// empty error columns; otherwise only keys with at least one measurement
/// are listed. A join that matches nothing yields an empty table and a
/// warning rather than an error.
pub fn build(records: &[Record]) -> Report {
    let predicted = mean_by_key(records, Source::Predict);
    let sim = mean_by_key(records, Source::Sim);
    let bench = mean_by_key(records, Source::Bench);
    let predict_only = sim.is_empty() && bench.is_empty();
    let mut report = Report::default();

    for (key, &pred) in &predicted {
        let (s, b) = (sim.get(key).copied(), bench.get(key).copied());
        if !predict_only && s.is_none() && b.is_none() {
            continue;
        }
        let err = |m: Option<f64>| m.filter(|_| pred != 0.0).map(|m| (m - pred) / pred);
        report.rows.push(ReportRow {
            key: *key,
            predicted: pred,
            sim: s,
            bench: b,
            sim_error: err(s),
            bench_error: err(b),
        });
    }

    if predicted.is_empty() {
        report.warnings.push("no predict rows to join against".into());
    } else if !predict_only && report.rows.is_empty() {
        report
            .warnings
            .push("no sim or bench row shares (structure, N, C, P) with a predict row".into());
    }

    let mut acc: BTreeMap<(Structure, Source), (f64, usize)> = BTreeMap::new();
    for row in &report.rows {
        for (source, e) in [(Source::Sim, row.sim_error), (Source::Bench, row.bench_error)] {
            if let Some(e) = e {
                let a = acc.entry((row.key.structure, source)).or_default();
                a.0 += e.abs();
                a.1 += 1;
            }
        }
    }
    report.mape = acc
        .into_iter()
        .map(|((structure, source), (sum, rows))| Mape {
            structure,
            source,
            rows,
            percent: 100.0 * sum / rows as f64,
        })
        .collect();
    report
}

fn mean_by_key(records: &[Record], source: Source) -> BTreeMap<JoinKey, f64> {
    let mut sums: BTreeMap<JoinKey, (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.source == source) {
        let e = sums.entry(JoinKey::of(r)).or_default();
        e.0 += r.throughput_ops_s;
        e.1 += 1;
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

impl Report {
    pub fn mape_of(&self, structure: Structure, source: Source) -> Option<f64> {
        self.mape
            .iter()
            .find(|m| m.structure == structure && m.source == source)
            .map(|m| m.percent)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn num(v: Option<f64>) -> String {
            v.map_or_else(String::new, |v| format!("{v:.6e}"))
        }
        fn pct(v: Option<f64>) -> String {
            v.map_or_else(String::new, |v| format!("{:+.2}%", 100.0 * v))
        }
        fn opt(v: Option<u64>) -> String {
            v.map_or_else(String::new, |v| v.to_string())
        }
        writeln!(
            f,
            "{:<9} {:>4} {:>8} {:>10} {:>13} {:>13} {:>9} {:>13} {:>9}",
            "structure", "N", "C", "P", "predict", "sim", "sim_err", "bench", "bench_err"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<9} {:>4} {:>8} {:>10} {:>13.6e} {:>13} {:>9} {:>13} {:>9}",
                r.key.structure.as_str(),
                r.key.n,
                opt(r.key.c),
                opt(r.key.p),
                r.predicted,
                num(r.sim),
                pct(r.sim_error),
                num(r.bench),
                pct(r.bench_error),
            )?;
        }
        for m in &self.mape {
            writeln!(
                f,
                "MAPE {} {}: {:.2}% over {} rows",
                m.structure.as_str(),
                m.source,
                m.percent,
                m.rows
            )?;
        }
        Ok(())
    }
}
