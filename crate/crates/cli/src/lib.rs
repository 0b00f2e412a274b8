//! Argument grammar and dispatch for the `throughputlab` binary.

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use throughputlab::bench::{self, BenchConfig, OpMix, RunStats};
use throughputlab::records::{read_csv, write_csv, write_records};
use throughputlab::sim::{build_mcs_program, build_treiber_program, simulate_with, SimConfig};
use throughputlab::{report, CostModel, Record, Source, Structure, Workload, WorkloadParams};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] throughputlab::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("writing output: {0}")]
    Output(#[from] io::Error),
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Throughput models, a schedule simulator and microbenchmarks for an MCS
/// lock, a Treiber stack and a fat-node skip list.
#[derive(Debug, Parser)]
#[command(name = "throughputlab", version, max_term_width = 100)]
pub struct Cli {
    /// Print per-worker detail [default: off]
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form throughput prediction
    Predict(PredictArgs),
    /// Run the schedule simulator
    Simulate(SimulateArgs),
    /// Run a real-thread microbenchmark
    Bench(BenchArgs),
    /// Throughput ratios of a candidate record set against a baseline
    Compare(CompareArgs),
    /// Fit alpha to measured rows
    Calibrate(CalibrateArgs),
    /// Join predicted, simulated and measured rows and print relative errors
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelStructure {
    Mcs,
    Treiber,
}

impl From<ModelStructure> for Workload {
    fn from(s: ModelStructure) -> Self {
        match s {
            ModelStructure::Mcs => Workload::Mcs,
            ModelStructure::Treiber => Workload::Treiber,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchStructure {
    Mcs,
    Treiber,
    Skiplist,
}

impl From<BenchStructure> for Structure {
    fn from(s: BenchStructure) -> Self {
        match s {
            BenchStructure::Mcs => Structure::Mcs,
            BenchStructure::Treiber => Structure::Treiber,
            BenchStructure::Skiplist => Structure::Skiplist,
        }
    }
}

/// Machine constants, in cycles except for alpha.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Throughput scale: operations per second per (1 / cycle)
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Cost of a write
    #[arg(long = "W", default_value_t = 1)]
    pub w: u64,
    /// Cost of a read of a recently written line
    #[arg(long = "Ri", default_value_t = 1)]
    pub r_i: u64,
    /// Cost of a compare-and-swap
    #[arg(long = "M", default_value_t = 1)]
    pub m: u64,
    /// Cost of a remote access; recorded but unused by the formulas
    #[arg(long = "X", default_value_t = 0)]
    pub x: u64,
}

impl ModelArgs {
    fn model(&self) -> CostModel {
        CostModel {
            alpha: self.alpha,
            w: self.w,
            r_i: self.r_i,
            m: self.m,
            x: self.x,
        }
    }
}

/// Workload grid; list flags take comma-separated values.
#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Worker counts
    #[arg(long = "N", value_delimiter = ',', num_args = 1.., default_value = "1")]
    pub n: Vec<u32>,
    /// Critical-section sizes (mcs only)
    #[arg(long = "C", value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub c: Vec<u64>,
    /// Parallel-section sizes
    #[arg(long = "P", value_delimiter = ',', num_args = 1.., default_value = "0")]
    pub p: Vec<u64>,
}

impl GridArgs {
    /// Points in N, C, P nesting order; C collapses to 0 for the stack.
    fn points(&self, structure: Structure) -> Vec<WorkloadParams> {
        let cs: &[u64] = if structure == Structure::Mcs { &self.c } else { &[0] };
        let mut out = Vec::new();
        for &n in &self.n {
            for &c in cs {
                for &p in &self.p {
                    out.push(WorkloadParams::new(n, c, p));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Print rows as CSV on stdout instead of text [default: off]
    #[arg(long)]
    pub csv: bool,
    /// Also append rows to this CSV file, writing the header if it is new
    /// [default: none]
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Modeled workload (required)
    #[arg(long, value_enum)]
    pub structure: ModelStructure,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Modeled workload (required)
    #[arg(long, value_enum)]
    pub structure: ModelStructure,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Simulated cycles per run
    #[arg(long, default_value_t = 1_000_000)]
    pub horizon: u64,
    /// Cycles excluded from the measurement [default: horizon / 10]
    #[arg(long)]
    pub warmup: Option<u64>,
    /// Tie-break seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cost of local steps and branches
    #[arg(long, default_value_t = SimConfig::DEFAULT_UNIT_COST)]
    pub unit_cost: u64,
    /// Wait fraction above which a run counts as saturated
    #[arg(long, default_value_t = SimConfig::DEFAULT_SATURATION_THRESHOLD)]
    pub saturation_threshold: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Structure to exercise (required)
    #[arg(long, value_enum)]
    pub structure: BenchStructure,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Skip-list node capacities
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "32")]
    pub k: Vec<usize>,
    /// Skip-list operation mix as contains/insert/remove percentages
    #[arg(long, default_value = "90/5/5")]
    pub mix: MixArg,
    /// Keys are drawn from 0..key-range
    #[arg(long, default_value_t = BenchConfig::DEFAULT_KEY_RANGE)]
    pub key_range: u64,
    /// Fraction of the key range inserted (or pushed) before timing
    #[arg(long, default_value_t = BenchConfig::DEFAULT_PREFILL)]
    pub prefill: f64,
    /// Untimed seconds before measuring
    #[arg(long, default_value_t = 0.2)]
    pub warmup: f64,
    /// Measured seconds per run
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Seed for prefill and per-worker generators
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Free-form machine label stored with every row [default: none]
    #[arg(long, env = "THROUGHPUTLAB_HOST_TAG")]
    pub host_tag: Option<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixArg(pub OpMix);

impl FromStr for MixArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split('/').collect();
        let [c, i, r] = parts.as_slice() else {
            return Err(format!("expected contains/insert/remove, got '{s}'"));
        };
        let num = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("'{v}': {e}"));
        Ok(MixArg(OpMix::new(num(c)?, num(i)?, num(r)?)))
    }
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Baseline rows (required)
    #[arg(long, value_name = "PATH")]
    pub baseline: PathBuf,
    /// Candidate rows (required)
    #[arg(long, value_name = "PATH")]
    pub candidate: PathBuf,
    /// Keep only baseline rows with this node capacity [default: all]
    #[arg(long)]
    pub baseline_k: Option<u32>,
    /// Keep only candidate rows with this node capacity [default: all]
    #[arg(long)]
    pub candidate_k: Option<u32>,
    /// Row source to compare
    #[arg(long, value_enum, default_value = "bench")]
    pub source: SourceArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Bench,
    Sim,
    Predict,
}

impl From<SourceArg> for Source {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Bench => Source::Bench,
            SourceArg::Sim => Source::Sim,
            SourceArg::Predict => Source::Predict,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Modeled workload (required)
    #[arg(long, value_enum)]
    pub structure: ModelStructure,
    /// CSV files to fit against (at least one)
    #[arg(required = true, value_name = "CSV")]
    pub inputs: Vec<PathBuf>,
    /// Row source to fit against
    #[arg(long, value_enum, default_value = "bench")]
    pub source: SourceArg,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// CSV files in the shared schema (at least one)
    #[arg(required = true, value_name = "CSV")]
    pub inputs: Vec<PathBuf>,
}

/// Runs `cli`, writing results to `out` and warnings to `err`.
pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let verbose = cli.verbose;
    match cli.command {
        Command::Predict(a) => predict(a, out),
        Command::Simulate(a) => simulate(a, verbose, out),
        Command::Bench(a) => bench_cmd(a, verbose, out, err),
        Command::Compare(a) => compare(a, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::Report(a) => report_cmd(a, out, err),
    }
}

/// Fixed-point for ordinary magnitudes, scientific otherwise.
pub fn fmt_throughput(v: f64) -> String {
    if v == 0.0 || (1e-3..1e7).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

fn emit(output: &OutputArgs, records: &[Record], out: &mut dyn Write) -> CliResult {
    if output.csv {
        write_records(&mut *out, records, true)?;
    }
    if let Some(path) = &output.out {
        write_csv(records, path)?;
    }
    Ok(())
}

fn point_label(structure: Structure, w: &WorkloadParams) -> String {
    if structure == Structure::Mcs {
        format!("structure={structure} N={} C={} P={}", w.n, w.c, w.p)
    } else {
        format!("structure={structure} N={} P={}", w.n, w.p)
    }
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> CliResult {
    let workload = Workload::from(a.structure);
    let model = a.model.model();
    let mut records = Vec::new();
    for w in a.grid.points(workload.structure()) {
        let pred = workload.predict(&model, &w)?;
        if !a.output.csv {
            writeln!(
                out,
                "{} regime={:?} throughput={} crossover_P={}",
                point_label(workload.structure(), &w),
                pred.regime,
                fmt_throughput(pred.throughput),
                workload.crossover(&model, w.c, w.n)
            )?;
        }
        records.push(workload.prediction_record(&model, &w)?);
    }
    emit(&a.output, &records, out)
}

fn simulate(a: SimulateArgs, verbose: bool, out: &mut dyn Write) -> CliResult {
    let workload = Workload::from(a.structure);
    let structure = workload.structure();
    let model = a.model.model();
    let mut records = Vec::new();
    for w in a.grid.points(structure) {
        w.validate()?;
        let program = match workload {
            Workload::Mcs => build_mcs_program(w.c, w.p),
            Workload::Treiber => build_treiber_program(w.p),
        };
        let mut cfg = SimConfig::new(w.n, a.horizon).seed(a.seed).unit_cost(a.unit_cost);
        if let Some(warmup) = a.warmup {
            cfg = cfg.warmup(warmup);
        }
        cfg.saturation_threshold = a.saturation_threshold;
        let res = simulate_with(&program, &model, &cfg)?.result;
        let simulated = model.alpha * res.throughput_per_cycle;
        let pred = workload.predict(&model, &w)?;
        if !a.output.csv {
            writeln!(
                out,
                "{} seed={} throughput={} regime={:?} ops={} predicted={} predicted_regime={:?} rel_err={:+.2}%",
                point_label(structure, &w),
                a.seed,
                fmt_throughput(simulated),
                res.regime_observed,
                res.total_ops,
                fmt_throughput(pred.throughput),
                pred.regime,
                100.0 * (simulated - pred.throughput) / pred.throughput
            )?;
            if verbose {
                writeln!(
                    out,
                    "  wait_fraction={:.4} per_worker_ops={:?}",
                    res.wait_fraction, res.per_worker_ops
                )?;
            }
        }
        let mut r = Record::new(Source::Sim, structure, w.n, simulated);
        if workload == Workload::Mcs {
            r.c = Some(w.c);
            r.r_i = Some(model.r_i);
        } else {
            r.m = Some(model.m);
        }
        r.p = Some(w.p);
        r.alpha = Some(model.alpha);
        r.w = Some(model.w);
        r.seed = Some(a.seed);
        records.push(r);
    }
    emit(&a.output, &records, out)
}

fn seconds(name: &str, v: f64) -> CliResult<Duration> {
    Duration::try_from_secs_f64(v).map_err(|_| CliError::Invalid(format!("--{name} must be a non-negative number of seconds, got {v}")))
}

fn bench_cmd(a: BenchArgs, verbose: bool, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let structure = Structure::from(a.structure);
    let warmup = seconds("warmup", a.warmup)?;
    let duration = seconds("duration", a.duration)?;
    let mut configs = Vec::new();
    for w in a.grid.points(structure) {
        let ks: &[usize] = if structure == Structure::Skiplist { &a.k } else { &a.k[..1] };
        for &k in ks {
            configs.push(BenchConfig {
                c: w.c,
                p: w.p,
                k,
                mix: a.mix.0,
                key_range: a.key_range,
                prefill: a.prefill,
                warmup,
                duration,
                seed: a.seed,
                host_tag: a.host_tag.clone(),
                ..BenchConfig::new(structure, w.n)
            });
        }
    }
    // Fail on bad parameters before spending time on any run.
    for cfg in &configs {
        cfg.validate()?;
    }
    let mut records = Vec::new();
    let mut broken = Vec::new();
    for cfg in &configs {
        let rec = bench::run(cfg)?;
        let label = match structure {
            Structure::Mcs => format!("structure=mcs N={} C={} P={}", cfg.workers, cfg.c, cfg.p),
            Structure::Treiber => format!("structure=treiber N={} P={}", cfg.workers, cfg.p),
            Structure::Skiplist => format!(
                "structure=skiplist N={} k={} mix={}/{}/{}",
                cfg.workers, cfg.k, cfg.mix.contains, cfg.mix.insert, cfg.mix.remove
            ),
        };
        if !a.output.csv {
            let detail = match &rec.stats {
                RunStats::Lock { guarded_count } => format!("guarded_count={guarded_count}"),
                RunStats::Stack { empty_pops, final_size, .. } => {
                    format!("empty_pops={empty_pops} final_size={final_size}")
                }
                RunStats::Set { final_size, audit_violations, .. } => {
                    format!("final_size={final_size} audit_violations={}", audit_violations.len())
                }
            };
            writeln!(
                out,
                "{label} seed={} throughput={} ops/s measured_s={:.3} {detail}",
                cfg.seed,
                fmt_throughput(rec.throughput_ops_s),
                rec.measured_s
            )?;
            if verbose {
                let per: Vec<String> = rec.per_worker_ops_s.iter().map(|&v| fmt_throughput(v)).collect();
                writeln!(out, "  per_worker_ops_s=[{}]", per.join(", "))?;
            }
        }
        if let RunStats::Set { audit_violations, .. } = &rec.stats {
            for v in audit_violations {
                writeln!(err, "audit: {label}: {v}")?;
            }
            if !audit_violations.is_empty() {
                broken.push(label);
            }
        }
        records.push(rec.to_record());
    }
    emit(&a.output, &records, out)?;
    if broken.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!("skip list failed its audit in: {}", broken.join("; "))))
    }
}

fn read_all(paths: &[PathBuf]) -> CliResult<Vec<Record>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_csv(p)?);
    }
    Ok(all)
}

fn rows_of(path: &Path, source: Source, k: Option<u32>) -> CliResult<Vec<Record>> {
    Ok(read_csv(path)?
        .into_iter()
        .filter(|r| r.source == source && (k.is_none() || r.k == k))
        .collect())
}

fn compare(a: CompareArgs, out: &mut dyn Write) -> CliResult {
    let source = Source::from(a.source);
    let base = rows_of(&a.baseline, source, a.baseline_k)?;
    let cand = rows_of(&a.candidate, source, a.candidate_k)?;
    let rep = bench::compare(&base, &cand)?;
    writeln!(out, "{rep}")?;
    Ok(())
}

fn calibrate(a: CalibrateArgs, out: &mut dyn Write) -> CliResult {
    let workload = Workload::from(a.structure);
    let source = Source::from(a.source);
    let rows: Vec<Record> = read_all(&a.inputs)?
        .into_iter()
        .filter(|r| r.source == source && r.structure == workload.structure() && r.p.is_some())
        .collect();
    let model = a.model.model();
    let fitted = throughputlab::cost_model::fit_alpha(&rows, &model, workload)?;
    if !a.output.csv {
        writeln!(
            out,
            "structure={} alpha={:.6e} records={}",
            workload.structure(),
            fitted.alpha,
            rows.len()
        )?;
    }
    // Predictions at every fitted point, so `report` can join them.
    let points: BTreeSet<(u32, u64, u64)> = rows
        .iter()
        .map(|r| (r.n, if workload == Workload::Mcs { r.c.unwrap_or(0) } else { 0 }, r.p.unwrap_or(0)))
        .collect();
    let records = points
        .into_iter()
        .map(|(n, c, p)| workload.prediction_record(&fitted, &WorkloadParams::new(n, c, p)))
        .collect::<throughputlab::Result<Vec<_>>>()?;
    emit(&a.output, &records, out)
}

fn report_cmd(a: ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let rep = report::build(&read_all(&a.inputs)?);
    for w in &rep.warnings {
        writeln!(err, "warning: {w}")?;
    }
    write!(out, "{rep}")?;
    Ok(())
}
