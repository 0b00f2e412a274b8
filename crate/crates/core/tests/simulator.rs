use std::collections::HashMap;

use proptest::prelude::*;
use throughputlab::cost_model::{crossover_treiber, predict_mcs, predict_treiber, CostModel, Regime, WorkloadParams};
use throughputlab::sim::program::{Operand, VarRef};
use throughputlab::sim::{
    build_mcs_program, build_treiber_program, simulate, simulate_with, sweep, sweep_sequential, sweep_workload, AccessKind,
    AbstractProgram, CostClass, Instruction, SimConfig,
};
use throughputlab::{Error, Workload};

fn model(w: u64, r_i: u64, m: u64) -> CostModel {
    CostModel {
        alpha: 1.0,
        w,
        r_i,
        m,
        x: 0,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b
}

#[test]
fn mcs_saturated_example() {
    let m = model(10, 50, 1);
    let r = simulate(&build_mcs_program(100, 0), &m, 15, 1_000_000, 100_000, 0).unwrap();
    assert!(rel(r.throughput_per_cycle, 1.0 / 220.0) <= 0.15, "{}", r.throughput_per_cycle);
    assert_eq!(r.regime_observed, Regime::Saturated);
}

#[test]
fn treiber_single_worker_example() {
    let m = model(10, 1, 5);
    let r = simulate(&build_treiber_program(0), &m, 1, 100_000, 10_000, 0).unwrap();
    assert!(rel(r.throughput_per_cycle, 1.0 / 15.0) <= 0.10, "{}", r.throughput_per_cycle);
    assert_eq!(r.regime_observed, Regime::ThreadBound);
    assert_eq!(r.wait_fraction, 0.0);
}

#[test]
fn treiber_single_worker_period_is_m_plus_w_plus_p() {
    let m = model(10, 1, 5);
    let r = simulate(&build_treiber_program(50), &m, 1, 650_000, 0, 0).unwrap();
    assert_eq!(r.total_ops, 10_000);
}

#[test]
fn mcs_single_worker_period() {
    // locked flag, get-and-set, release CAS, plus the next-null check
    let m = model(10, 50, 1);
    for (c, p) in [(0, 0), (100, 0), (5, 7)] {
        let period = 3 * m.w + m.r_i + c + p;
        // the thousandth op completes exactly at period * 1000
        let r = simulate(&build_mcs_program(c, p), &m, 1, period * 1000 + 1, 0, 0).unwrap();
        assert_eq!(r.total_ops, 1000, "C={c} P={p}");
    }
}

#[test]
fn smallest_window_counts_at_most_one_op() {
    let m = model(1, 1, 1);
    for program in [build_mcs_program(0, 0), build_treiber_program(0)] {
        for warmup in [0, 1, 7, 1000] {
            let r = simulate(&program, &m, 1, warmup + 1, warmup, 0).unwrap();
            assert!(r.total_ops <= 1, "{} at warmup {warmup}: {}", program.name, r.total_ops);
        }
    }
}

#[test]
fn rejects_bad_windows_and_worker_counts() {
    let p = build_treiber_program(0);
    let m = model(1, 1, 1);
    assert!(matches!(
        simulate(&p, &m, 1, 100, 100, 0),
        Err(Error::InvalidParameter { name: "horizon", .. })
    ));
    assert!(simulate(&p, &m, 1, 10, 20, 0).is_err());
    let err = simulate(&p, &m, 0, 100, 0, 0).unwrap_err();
    assert!(err.to_string().contains("N >= 1"), "{err}");
}

#[test]
fn rejects_undeclared_variable() {
    let mut p = build_treiber_program(0);
    p.instructions[0] = Instruction::Read {
        var: VarRef::Global(3),
        dst: 0,
        class: CostClass::M,
    };
    let err = simulate(&p, &model(1, 1, 1), 2, 100, 0, 0).unwrap_err();
    assert!(matches!(err, Error::UndeclaredVariable(_)), "{err}");

    let mut p = build_treiber_program(0);
    p.instructions[1] = Instruction::Write {
        var: VarRef::Own(0),
        value: Operand::Const(1),
        class: CostClass::W,
    };
    assert!(matches!(
        simulate(&p, &model(1, 1, 1), 2, 100, 0, 0),
        Err(Error::UndeclaredVariable(_))
    ));
}

#[test]
fn single_worker_progress_is_linear_in_horizon() {
    let m = model(5, 10, 5);
    for program in [build_mcs_program(17, 3), build_treiber_program(11)] {
        let short = simulate(&program, &m, 1, 100_000, 10_000, 0).unwrap();
        let long = simulate(&program, &m, 1, 1_000_000, 100_000, 0).unwrap();
        assert!(short.total_ops > 0);
        assert!(
            rel(short.throughput_per_cycle, long.throughput_per_cycle) <= 0.01,
            "{}: {} vs {}",
            program.name,
            short.throughput_per_cycle,
            long.throughput_per_cycle
        );
    }
}

/// Every failed CAS is a wasted round: the loser re-reads head and
/// retries, so its round from read start to CAS completion takes at least
/// M + W. With zero-cost bookkeeping a read and its CAS happen in one
/// cycle and contention shows up as restarted reads instead, so this runs
/// with a unit cost of one.
#[test]
fn cas_failures_cost_a_full_round() {
    let mut failures = 0;
    for n in [2, 3, 4] {
        for (m_cost, w_cost) in [(1, 1), (1, 5), (5, 1), (5, 10), (10, 5), (50, 1), (1, 50)] {
            for seed in 0..4 {
                let m = model(w_cost, 1, m_cost);
                let cfg = SimConfig::new(n, 2_000).warmup(0).seed(seed).unit_cost(1).record_log(true);
                let trace = simulate_with(&build_treiber_program(0), &m, &cfg).unwrap();
                let mut last_read: HashMap<usize, u64> = HashMap::new();
                for e in &trace.log {
                    match e.kind {
                        AccessKind::Read => {
                            assert!(e.end - e.start >= m_cost);
                            last_read.insert(e.worker, e.start);
                        }
                        AccessKind::FailedCas => {
                            failures += 1;
                            let start = last_read[&e.worker];
                            assert!(e.end - start >= m_cost + w_cost, "N={n} M={m_cost} W={w_cost}: {e:?}");
                            assert!(e.end - e.start >= w_cost);
                        }
                        AccessKind::Rmw => assert_eq!(e.end - e.start, w_cost),
                        _ => {}
                    }
                }
            }
        }
    }
    assert!(failures > 0, "no CAS ever failed");
}

#[test]
fn sweep_singleton_is_one_row() {
    let base = SimConfig::new(1, 10_000);
    let rows = sweep_workload(Workload::Treiber, &model(1, 1, 1), &[1], &[0], &[0], &base).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].point.n, 1);
}

#[test]
fn sweep_rejects_empty_ranges() {
    let base = SimConfig::new(1, 10_000);
    let m = model(1, 1, 1);
    assert!(sweep_workload(Workload::Mcs, &m, &[], &[0], &[0], &base).is_err());
    assert!(sweep_workload(Workload::Mcs, &m, &[1], &[], &[0], &base).is_err());
    assert!(sweep_workload(Workload::Mcs, &m, &[1], &[0], &[], &base).is_err());
}

#[test]
fn sequential_sweep_matches_default() {
    let base = SimConfig::new(1, 8_000);
    let m = model(3, 7, 2);
    let a = sweep(build_mcs_program, &m, &[1, 3, 6], &[0, 40, 400], &[0, 20], &base).unwrap();
    let b = sweep_sequential(build_mcs_program, &m, &[1, 3, 6], &[0, 40, 400], &[0, 20], &base).unwrap();
    assert_eq!(a, b);
    assert!(sweep_sequential(build_mcs_program, &m, &[], &[0], &[0], &base).is_err());
}

#[test]
fn sweep_rows_follow_nesting_order() {
    let base = SimConfig::new(1, 5_000);
    let rows = sweep(build_mcs_program, &model(1, 1, 1), &[1, 2], &[0, 10], &[0, 5], &base).unwrap();
    let points: Vec<(u32, u64, u64)> = rows.iter().map(|r| (r.point.n, r.point.c, r.point.p)).collect();
    assert_eq!(
        points,
        vec![
            (1, 0, 0),
            (1, 0, 10),
            (1, 5, 0),
            (1, 5, 10),
            (2, 0, 0),
            (2, 0, 10),
            (2, 5, 0),
            (2, 5, 10)
        ]
    );
    for row in &rows {
        let alone = simulate(&build_mcs_program(row.point.c, row.point.p), &model(1, 1, 1), row.point.n, 5_000, 500, 0)
            .unwrap();
        assert_eq!(alone, row.result);
    }
}

#[test]
fn treiber_saturated_throughput_is_flat_in_n() {
    let m = model(10, 1, 5);
    let ns: Vec<u32> = (2..=8).collect();
    let rows = sweep_workload(Workload::Treiber, &m, &ns, &[0], &[0], &SimConfig::new(1, 200_000)).unwrap();
    let first = rows[0].result.throughput_per_cycle;
    for row in &rows {
        assert!(rel(row.result.throughput_per_cycle, first) <= 0.15, "N={}", row.point.n);
        assert!(rel(row.result.throughput_per_cycle, 1.0 / 15.0) <= 0.15, "N={}", row.point.n);
    }
}

#[test]
fn sweep_records_carry_provenance() {
    let m = CostModel {
        alpha: 2.0e9,
        ..model(10, 50, 5)
    };
    let rows = sweep_workload(Workload::Mcs, &m, &[4], &[30], &[100], &SimConfig::new(1, 50_000)).unwrap();
    let rec = rows[0].to_record(Workload::Mcs, &m, 9);
    assert_eq!((rec.n, rec.c, rec.p, rec.seed), (4, Some(100), Some(30), Some(9)));
    assert_eq!((rec.w, rec.r_i, rec.alpha), (Some(10), Some(50), Some(2.0e9)));
    assert_eq!(rec.throughput_ops_s, 2.0e9 * rows[0].result.throughput_per_cycle);
    let pred = rows[0].prediction(Workload::Mcs, &m).unwrap();
    assert_eq!(pred, predict_mcs(&m, &WorkloadParams::new(4, 100, 30)).unwrap());
}

#[test]
fn treiber_thread_bound_matches_formula() {
    let m = model(5, 1, 5);
    for n in [2, 4, 8] {
        let p = 4 * crossover_treiber(&m, n);
        let r = simulate(&build_treiber_program(p), &m, n, 500_000, 50_000, 0).unwrap();
        let pred = predict_treiber(&m, &WorkloadParams::new(n, 0, p)).unwrap();
        assert_eq!(pred.regime, Regime::ThreadBound);
        assert_eq!(r.regime_observed, Regime::ThreadBound);
        assert!(rel(r.throughput_per_cycle, pred.throughput) <= 0.05);
    }
}

fn mcs_or_treiber(which: bool, c: u64, p: u64) -> AbstractProgram {
    if which {
        build_mcs_program(c, p)
    } else {
        build_treiber_program(p)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn deterministic_for_fixed_inputs(
        mcs in any::<bool>(), w in 1u64..20, r_i in 1u64..20, m in 1u64..20,
        c in 0u64..50, p in 0u64..200, n in 1u32..6, seed in any::<u64>(),
    ) {
        let program = mcs_or_treiber(mcs, c, p);
        let model = model(w, r_i, m);
        let cfg = SimConfig::new(n, 20_000).seed(seed).record_log(true);
        let a = simulate_with(&program, &model, &cfg).unwrap();
        let b = simulate_with(&program, &model, &cfg).unwrap();
        prop_assert_eq!(&a.result, &b.result);
        prop_assert_eq!(a.result.throughput_per_cycle.to_bits(), b.result.throughput_per_cycle.to_bits());
        prop_assert_eq!(a.log, b.log);
    }

    #[test]
    fn slot_holders_never_overlap(
        mcs in any::<bool>(), w in 1u64..20, r_i in 1u64..20, m in 1u64..20,
        c in 0u64..50, p in 0u64..100, n in 1u32..8, seed in 0u64..8,
    ) {
        let program = mcs_or_treiber(mcs, c, p);
        let cfg = SimConfig::new(n, 5_000).warmup(0).seed(seed).record_log(true);
        let trace = simulate_with(&program, &model(w, r_i, m), &cfg).unwrap();
        let mut by_var: HashMap<usize, Vec<(u64, u64)>> = HashMap::new();
        for e in trace.log.iter().filter(|e| e.kind.holds_slot()) {
            by_var.entry(e.var).or_default().push((e.start, e.end));
        }
        for (var, mut spans) in by_var {
            spans.sort_unstable();
            for pair in spans.windows(2) {
                prop_assert!(pair[0].1 <= pair[1].0, "{} overlaps: {:?}", trace.var_names[var], pair);
            }
        }
    }

    #[test]
    fn conservation_and_window_bounds(
        mcs in any::<bool>(), w in 1u64..20, r_i in 1u64..20, m in 1u64..20,
        c in 0u64..50, p in 0u64..200, n in 1u32..8, horizon in 100u64..20_000,
    ) {
        let program = mcs_or_treiber(mcs, c, p);
        let r = simulate(&program, &model(w, r_i, m), n, horizon, horizon / 4, 0).unwrap();
        prop_assert_eq!(r.total_ops, r.per_worker_ops.iter().sum::<u64>());
        prop_assert_eq!(r.per_worker_ops.len(), n as usize);
        prop_assert!(r.throughput_per_cycle >= 0.0);
        prop_assert!((0.0..=1.0).contains(&r.wait_fraction));
        prop_assert_eq!(r.horizon_cycles, horizon);
    }
}
