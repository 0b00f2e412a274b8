use std::time::{Duration, Instant};

use throughputlab::bench::{run, run_lock_bench, run_set_bench, run_stack_bench, spin, BenchConfig, OpMix, RunStats};
use throughputlab::cost_model::{crossover_mcs, CostModel};
use throughputlab::{Error, Structure};

fn quick(structure: Structure, workers: u32) -> BenchConfig {
    BenchConfig {
        warmup: Duration::from_millis(20),
        duration: Duration::from_millis(150),
        ..BenchConfig::new(structure, workers)
    }
}

#[test]
fn lock_counter_matches_completed_loops() {
    let rec = run_lock_bench(&quick(Structure::Mcs, 1)).unwrap();
    assert!(rec.throughput_ops_s > 0.0);
    let RunStats::Lock { guarded_count } = rec.stats else {
        panic!("lock stats expected")
    };
    assert_eq!(guarded_count, rec.total_completed());
    assert_eq!(rec.per_worker_ops_s.len(), 1);
    assert!(rec.measured_s >= 0.1);
}

#[test]
fn lock_counter_exact_with_contention() {
    let cfg = BenchConfig {
        c: 50,
        p: 50,
        ..quick(Structure::Mcs, 4)
    };
    let rec = run_lock_bench(&cfg).unwrap();
    let RunStats::Lock { guarded_count } = rec.stats else {
        panic!("lock stats expected")
    };
    assert_eq!(guarded_count, rec.total_completed());
    assert_eq!(rec.per_worker_ops_s.len(), 4);
    let sum: f64 = rec.per_worker_ops_s.iter().sum();
    assert!((sum - rec.throughput_ops_s).abs() <= 1e-9 * rec.throughput_ops_s);
}

#[test]
fn saturated_lock_outpaces_long_parallel_sections() {
    let unit = CostModel::default();
    let p_star = crossover_mcs(&unit, 1000, 8) as u64;
    let saturated = run_lock_bench(&BenchConfig {
        c: 1000,
        ..quick(Structure::Mcs, 8)
    })
    .unwrap();
    let spread = run_lock_bench(&BenchConfig {
        c: 1000,
        p: 10 * p_star,
        ..quick(Structure::Mcs, 8)
    })
    .unwrap();
    assert!(
        saturated.throughput_ops_s >= spread.throughput_ops_s,
        "{} < {}",
        saturated.throughput_ops_s,
        spread.throughput_ops_s
    );
}

#[test]
fn stack_conserves_elements() {
    let cfg = BenchConfig {
        key_range: 1_000,
        prefill: 0.1,
        ..quick(Structure::Treiber, 1)
    };
    let rec = run_stack_bench(&cfg).unwrap();
    assert!(rec.throughput_ops_s > 0.0);
    let RunStats::Stack {
        prefilled,
        pushes,
        pops,
        final_size,
        ..
    } = rec.stats
    else {
        panic!("stack stats expected")
    };
    assert_eq!(prefilled, 100);
    assert_eq!(final_size, prefilled + pushes - pops);
}

#[test]
fn stack_never_runs_dry_when_prefill_covers_workers() {
    let cfg = BenchConfig {
        key_range: 8,
        prefill: 1.0,
        p: 10,
        ..quick(Structure::Treiber, 8)
    };
    let rec = run_stack_bench(&cfg).unwrap();
    let RunStats::Stack {
        prefilled,
        pushes,
        pops,
        empty_pops,
        final_size,
    } = rec.stats
    else {
        panic!("stack stats expected")
    };
    assert_eq!(empty_pops, 0);
    assert_eq!(final_size, prefilled + pushes - pops);
}

#[test]
fn insert_only_set_run_is_exact() {
    let cfg = BenchConfig {
        mix: OpMix::new(0, 100, 0),
        key_range: 1_000,
        prefill: 0.0,
        ..quick(Structure::Skiplist, 1)
    };
    let rec = run_set_bench(&cfg).unwrap();
    let RunStats::Set {
        inserted,
        final_size,
        audit_violations,
        ..
    } = &rec.stats
    else {
        panic!("set stats expected")
    };
    assert!(audit_violations.is_empty(), "{audit_violations:?}");
    assert_eq!(final_size, inserted);
    assert_eq!(*final_size, 1_000, "150 ms is plenty to hit every key");
}

#[test]
fn set_run_keeps_structure_intact_under_contention() {
    for k in [1, 32] {
        let cfg = BenchConfig {
            k,
            mix: OpMix::new(50, 25, 25),
            key_range: 2_000,
            ..quick(Structure::Skiplist, 4)
        };
        let rec = run(&cfg).unwrap();
        let RunStats::Set {
            prefilled,
            inserted,
            removed,
            final_size,
            audit_violations,
        } = &rec.stats
        else {
            panic!("set stats expected")
        };
        assert!(audit_violations.is_empty(), "k={k}: {audit_violations:?}");
        assert_eq!(*final_size, prefilled + inserted - removed);
        let row = rec.to_record();
        assert_eq!(row.k, Some(k as u32));
        assert_eq!((row.mix_contains, row.mix_insert, row.mix_remove), (Some(50), Some(25), Some(25)));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let mix = BenchConfig {
        mix: OpMix::new(90, 5, 4),
        ..quick(Structure::Skiplist, 1)
    };
    assert!(matches!(run(&mix), Err(Error::InvalidParameter { name: "mix", .. })));
    let zero = BenchConfig {
        duration: Duration::ZERO,
        ..quick(Structure::Mcs, 1)
    };
    assert!(matches!(run(&zero), Err(Error::InvalidParameter { name: "duration", .. })));
    let prefill = BenchConfig {
        prefill: 1.5,
        ..quick(Structure::Treiber, 1)
    };
    assert!(run(&prefill).is_err());
    assert!(run(&quick(Structure::Mcs, 0)).is_err());
    assert!(run_stack_bench(&quick(Structure::Mcs, 1)).is_err());
}

fn r_squared(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxy * sxy / (sxx * syy), sxy / sxx)
}

/// Spin time is linear in the iteration count: some pass over the sizes
/// fits a line with R² >= 0.99. Each pass takes a few milliseconds, short
/// enough that the machine's speed holds steady within it; preemption and
/// steal on a shared core only ever break linearity, so the best pass is
/// the clean measurement. A loop the optimizer elided would not fit any.
#[test]
fn spin_loop_scales_linearly() {
    let xs: Vec<f64> = (1..=8).map(|i| (i * 250_000) as f64).collect();
    let (mut best, mut slope) = (0.0, 0.0);
    for _ in 0..40 {
        let ys: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let t = Instant::now();
                spin(x as u64);
                t.elapsed().as_secs_f64()
            })
            .collect();
        let (r2, s) = r_squared(&xs, &ys);
        if r2 > best {
            (best, slope) = (r2, s);
        }
    }
    assert!(best >= 0.99, "best R² = {best}");
    // at least one iteration per 20 GHz cycle, so the work was not elided
    assert!(slope > 0.05e-9, "{slope} s per iteration");
}
