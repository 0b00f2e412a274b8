use crate::cost_model::{CostModel, Prediction, Workload, WorkloadParams};
use crate::error::{invalid, Result};
use crate::records::{Record, Source};

use super::engine::{simulate_with, SimConfig, SimResult};
use super::program::{build_mcs_program, build_treiber_program, AbstractProgram};

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SweepPoint {
    pub n: u32,
    pub c: u64,
    pub p: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub result: SimResult,
}

impl SweepRow {
    /// The row in the shared CSV schema; throughput is scaled by `model.alpha`.
    pub fn to_record(&self, workload: Workload, model: &CostModel, seed: u64) -> Record {
        let mut r = Record::new(
            Source::Sim,
            workload.structure(),
            self.point.n,
            model.alpha * self.result.throughput_per_cycle,
        );
        if workload == Workload::Mcs {
            r.c = Some(self.point.c);
            r.r_i = Some(model.r_i);
        } else {
            r.m = Some(model.m);
        }
        r.p = Some(self.point.p);
        r.alpha = Some(model.alpha);
        r.w = Some(model.w);
        r.seed = Some(seed);
        r
    }

    pub fn prediction(&self, workload: Workload, model: &CostModel) -> Result<Prediction> {
        workload.predict(model, &WorkloadParams::new(self.point.n, self.point.c, self.point.p))
    }
}

/// Simulates every point of `ns × cs × ps` (in that nesting order) with the
/// program produced by `build(c, p)`. `base.workers` is overridden per point.
///
/// Points are independent; with the `parallel` feature they run on the
/// rayon pool, otherwise one after another. Row order is the same either way.
pub fn sweep<F>(build: F, model: &CostModel, ns: &[u32], ps: &[u64], cs: &[u64], base: &SimConfig) -> Result<Vec<SweepRow>>
where
    F: Fn(u64, u64) -> AbstractProgram + Sync,
{
    let points = grid(ns, ps, cs)?;
    run_points(&points, |point| run_point(&build, model, base, point))
}

/// [`sweep`] on the calling thread regardless of features.
pub fn sweep_sequential<F>(
    build: F,
    model: &CostModel,
    ns: &[u32],
    ps: &[u64],
    cs: &[u64],
    base: &SimConfig,
) -> Result<Vec<SweepRow>>
where
    F: Fn(u64, u64) -> AbstractProgram,
{
    grid(ns, ps, cs)?
        .iter()
        .map(|point| run_point(&build, model, base, point))
        .collect()
}

fn grid(ns: &[u32], ps: &[u64], cs: &[u64]) -> Result<Vec<SweepPoint>> {
    if ns.is_empty() || ps.is_empty() || cs.is_empty() {
        return Err(invalid("sweep ranges", "N, P and C ranges must be non-empty"));
    }
    Ok(ns
        .iter()
        .flat_map(|&n| cs.iter().flat_map(move |&c| ps.iter().map(move |&p| SweepPoint { n, c, p })))
        .collect())
}

fn run_point<F>(build: &F, model: &CostModel, base: &SimConfig, point: &SweepPoint) -> Result<SweepRow>
where
    F: Fn(u64, u64) -> AbstractProgram,
{
    let program = build(point.c, point.p);
    let cfg = SimConfig {
        workers: point.n,
        ..base.clone()
    };
    let result = simulate_with(&program, model, &cfg)?.result;
    Ok(SweepRow { point: *point, result })
}

/// [`sweep`] with the program builder of a modeled workload.
pub fn sweep_workload(
    workload: Workload,
    model: &CostModel,
    ns: &[u32],
    ps: &[u64],
    cs: &[u64],
    base: &SimConfig,
) -> Result<Vec<SweepRow>> {
    match workload {
        Workload::Mcs => sweep(build_mcs_program, model, ns, ps, cs, base),
        Workload::Treiber => sweep(|_, p| build_treiber_program(p), model, ns, ps, cs, base),
    }
}

#[cfg(feature = "parallel")]
fn run_points<F>(points: &[SweepPoint], run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&SweepPoint) -> Result<SweepRow> + Sync,
{
    use rayon::prelude::*;
    points.par_iter().map(&run).collect()
}

#[cfg(not(feature = "parallel"))]
fn run_points<F>(points: &[SweepPoint], run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&SweepPoint) -> Result<SweepRow>,
{
    points.iter().map(run).collect()
}
