//! Closed-form piecewise throughput predictions for the MCS-lock workload and
//! the Treiber-stack workload.
//!
//! Both formulas have a saturated branch, where throughput is bounded by the
//! serialized path through the shared structure, and a thread-bound branch,
//! where every worker runs its full loop without waiting. Costs are in cycles;
//! `alpha` scales per-cycle rates into whatever unit the caller measures in
//! (ops/s when `alpha` is the clock rate).

use std::fmt;

use crate::error::{invalid, Error, Result};
use crate::records::{Record, Source, Structure};

/// Per-instruction-class costs plus the machine scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub alpha: f64,
    /// Write / atomic read-modify-write.
    pub w: u64,
    /// Read of a line invalidated by another core.
    pub r_i: u64,
    /// Atomic read of a shared line.
    pub m: u64,
    /// Alternate contended-RMW cost. Stored only; the formulas use `w`.
    pub x: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alpha: 1.0,
            w: 1,
            r_i: 1,
            m: 1,
            x: 0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", format!("alpha > 0 required, got {}", self.alpha)));
        }
        for (name, v) in [("W", self.w), ("Ri", self.r_i), ("M", self.m)] {
            if v < 1 {
                return Err(invalid(name, format!("{name} >= 1 required, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        CostModel { alpha, ..self }
    }
}

/// Worker count and section sizes of one workload point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WorkloadParams {
    pub n: u32,
    /// Critical-section size (MCS only).
    pub c: u64,
    /// Parallel-section size.
    pub p: u64,
}

impl WorkloadParams {
    pub fn new(n: u32, c: u64, p: u64) -> Self {
        WorkloadParams { n, c, p }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(invalid("N", format!("N >= 1 required, got {}", self.n)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Saturated,
    ThreadBound,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Saturated => "Saturated",
            Regime::ThreadBound => "ThreadBound",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub regime: Regime,
    pub throughput: f64,
}

/// Workloads that have a closed-form model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    Mcs,
    Treiber,
}

impl Workload {
    pub fn structure(self) -> Structure {
        match self {
            Workload::Mcs => Structure::Mcs,
            Workload::Treiber => Structure::Treiber,
        }
    }

    pub fn predict(self, model: &CostModel, w: &WorkloadParams) -> Result<Prediction> {
        match self {
            Workload::Mcs => predict_mcs(model, w),
            Workload::Treiber => predict_treiber(model, w),
        }
    }

    /// The prediction for `w` as a CSV row. As with simulated and measured
    /// rows, `C` is only filled in for the lock workload.
    pub fn prediction_record(self, model: &CostModel, w: &WorkloadParams) -> Result<Record> {
        let pred = self.predict(model, w)?;
        let mut r = Record::new(Source::Predict, self.structure(), w.n, pred.throughput);
        match self {
            Workload::Mcs => {
                r.c = Some(w.c);
                r.r_i = Some(model.r_i);
            }
            Workload::Treiber => r.m = Some(model.m),
        }
        r.p = Some(w.p);
        r.alpha = Some(model.alpha);
        r.w = Some(model.w);
        Ok(r)
    }

    /// Largest parallel-section size that still falls in the saturated branch.
    pub fn crossover(self, model: &CostModel, c: u64, n: u32) -> i64 {
        match self {
            Workload::Mcs => crossover_mcs(model, c, n),
            Workload::Treiber => crossover_treiber(model, n) as i64,
        }
    }
}

impl TryFrom<Structure> for Workload {
    type Error = Error;

    fn try_from(s: Structure) -> Result<Self> {
        match s {
            Structure::Mcs => Ok(Workload::Mcs),
            Structure::Treiber => Ok(Workload::Treiber),
            Structure::Skiplist => Err(invalid(
                "structure",
                "no closed-form model exists for skiplist (expected mcs or treiber)",
            )),
        }
    }
}

/// Lock acquisition throughput of N workers looping over
/// {acquire; critical section C; release; parallel section P}.
///
/// Saturated iff `P + W <= (N-1)(2W + C + R_I)`, in which case the rate is
/// `alpha / (2R_I + C + 2W)`; otherwise `alpha N / ((2W + C + R_I) + (P + W))`.
pub fn predict_mcs(model: &CostModel, w: &WorkloadParams) -> Result<Prediction> {
    model.validate()?;
    w.validate()?;
    let (cw, ri, c, p, n) = (model.w as f64, model.r_i as f64, w.c as f64, w.p as f64, w.n as f64);
    let lock_path = 2.0 * cw + c + ri;
    Ok(if p + cw <= (n - 1.0) * lock_path {
        Prediction {
            regime: Regime::Saturated,
            throughput: model.alpha * (1.0 / (2.0 * ri + c + 2.0 * cw)),
        }
    } else {
        Prediction {
            regime: Regime::ThreadBound,
            throughput: model.alpha * (n / (lock_path + (p + cw))),
        }
    })
}

/// Stack-operation throughput of N workers looping over
/// {read head; CAS head (retrying); parallel section P}. `C` is ignored.
pub fn predict_treiber(model: &CostModel, w: &WorkloadParams) -> Result<Prediction> {
    model.validate()?;
    w.validate()?;
    let (m, cw, p, n) = (model.m as f64, model.w as f64, w.p as f64, w.n as f64);
    Ok(if p <= (n - 1.0) * (m + cw) {
        Prediction {
            regime: Regime::Saturated,
            throughput: model.alpha * (1.0 / (m + cw)),
        }
    } else {
        Prediction {
            regime: Regime::ThreadBound,
            throughput: model.alpha * (n / (p + m + cw)),
        }
    })
}

/// `(N-1)(2W + C + R_I) - W`. Negative when the saturated branch is
/// unreachable (N = 1).
pub fn crossover_mcs(model: &CostModel, c: u64, n: u32) -> i64 {
    let lock_path = 2 * model.w as i64 + c as i64 + model.r_i as i64;
    (i64::from(n) - 1) * lock_path - model.w as i64
}

/// `(N-1)(M + W)`.
pub fn crossover_treiber(model: &CostModel, n: u32) -> u64 {
    u64::from(n.saturating_sub(1)) * (model.m + model.w)
}

/// Ratio thread-bound / saturated of the two MCS branches evaluated at the
/// crossover `P*`. A continuous formula would give exactly 1; the printed
/// one gives `(2R_I + C + 2W) / (2W + C + R_I)`.
pub fn discontinuity_mcs(model: &CostModel, c: u64, n: u32) -> f64 {
    let (cw, ri, cf, nf) = (model.w as f64, model.r_i as f64, c as f64, f64::from(n));
    let p_star = crossover_mcs(model, c, n) as f64;
    let saturated = model.alpha / (2.0 * ri + cf + 2.0 * cw);
    let thread_bound = model.alpha * nf / ((2.0 * cw + cf + ri) + (p_star + cw));
    thread_bound / saturated
}

/// Least-squares fit of `alpha` to measured throughputs.
///
/// Uses every record of `kind`'s structure that carries `C` (MCS only) and
/// `P`; missing `C` is read as 0. Returns `model` with `alpha` replaced by
/// `sum(p_i m_i) / sum(p_i^2)` where `p_i` are the alpha = 1 predictions.
pub fn fit_alpha(records: &[Record], model: &CostModel, kind: Workload) -> Result<CostModel> {
    let unit = model.with_alpha(1.0);
    unit.validate()?;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut used = 0usize;
    for r in records.iter().filter(|r| r.structure == kind.structure()) {
        let Some(p) = r.p else { continue };
        let w = WorkloadParams::new(r.n, r.c.unwrap_or(0), p);
        let predicted = kind.predict(&unit, &w)?.throughput;
        num += predicted * r.throughput_ops_s;
        den += predicted * predicted;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Calibration(format!(
            "no {} records with N and P to fit against",
            kind.structure()
        )));
    }
    if den == 0.0 {
        return Err(Error::Calibration("all predictions are zero".into()));
    }
    let alpha = num / den;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Calibration(format!(
            "fitted alpha {alpha} is not positive"
        )));
    }
    Ok(model.with_alpha(alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model(alpha: f64, w: u64, r_i: u64, m: u64) -> CostModel {
        CostModel {
            alpha,
            w,
            r_i,
            m,
            x: 0,
        }
    }

    #[test]
    fn mcs_examples() {
        let p = predict_mcs(&model(1.0, 10, 50, 1), &WorkloadParams::new(15, 100, 0)).unwrap();
        assert_eq!(p.regime, Regime::Saturated);
        assert_eq!(p.throughput, 1.0 / 220.0);

        let p = predict_mcs(&model(1.0, 1, 1, 1), &WorkloadParams::new(1, 10, 10)).unwrap();
        assert_eq!(p.regime, Regime::ThreadBound);
        assert_eq!(p.throughput, 1.0 / 24.0);

        let p = predict_mcs(&model(1.0, 1, 1, 1), &WorkloadParams::new(2, 0, 1000)).unwrap();
        assert_eq!(p.regime, Regime::ThreadBound);
        assert_eq!(p.throughput, 2.0 / 1004.0);
    }

    #[test]
    fn treiber_examples() {
        let m = model(1.0, 10, 1, 5);
        let p = predict_treiber(&m, &WorkloadParams::new(8, 0, 0)).unwrap();
        assert_eq!((p.regime, p.throughput), (Regime::Saturated, 1.0 / 15.0));

        let p = predict_treiber(&m, &WorkloadParams::new(2, 0, 100)).unwrap();
        assert_eq!((p.regime, p.throughput), (Regime::ThreadBound, 2.0 / 115.0));

        // at the boundary both branches give 1/15
        let p = predict_treiber(&m, &WorkloadParams::new(8, 0, 105)).unwrap();
        assert_eq!(p.regime, Regime::Saturated);
        assert_eq!(p.throughput, 1.0 / 15.0);
        assert_eq!(8.0 / (105.0 + 15.0), 1.0 / 15.0);
    }

    #[test]
    fn ties_go_to_the_saturated_branch() {
        let m = model(1.0, 10, 50, 1);
        let p_star = crossover_mcs(&m, 100, 15) as u64;
        let at = predict_mcs(&m, &WorkloadParams::new(15, 100, p_star)).unwrap();
        let above = predict_mcs(&m, &WorkloadParams::new(15, 100, p_star + 1)).unwrap();
        assert_eq!(at.regime, Regime::Saturated);
        assert_eq!(above.regime, Regime::ThreadBound);
    }

    #[test]
    fn crossover_examples() {
        let m = model(1.0, 10, 50, 5);
        assert_eq!(crossover_mcs(&m, 100, 15), 2370);
        assert_eq!(crossover_mcs(&m, 100, 2), 160);
        assert_eq!(crossover_mcs(&model(1.0, 1, 1, 1), 0, 1), -1);
        assert_eq!(crossover_treiber(&m, 8), 105);
        assert_eq!(crossover_treiber(&m, 1), 0);
        assert_eq!(crossover_treiber(&model(1.0, 1, 1, 1), 16), 30);
    }

    #[test]
    fn mcs_boundary_discontinuity_is_reported_not_hidden() {
        let m = model(1.0, 10, 50, 1);
        let d = discontinuity_mcs(&m, 100, 15);
        let expected = (2.0 * 50.0 + 100.0 + 20.0) / (20.0 + 100.0 + 50.0);
        assert!((d - expected).abs() < 1e-12, "{d} vs {expected}");
    }

    #[test]
    fn preconditions_are_enforced() {
        let err = predict_mcs(&model(1.0, 1, 1, 1), &WorkloadParams::new(0, 0, 0)).unwrap_err();
        assert!(err.to_string().contains("N >= 1"), "{err}");
        let err = predict_treiber(&model(0.0, 1, 1, 1), &WorkloadParams::new(1, 0, 0)).unwrap_err();
        assert!(err.to_string().contains("alpha > 0"), "{err}");
        let err = predict_treiber(&model(1.0, 0, 1, 1), &WorkloadParams::new(1, 0, 0)).unwrap_err();
        assert!(err.to_string().contains("W >= 1"), "{err}");
    }

    fn record(kind: Workload, n: u32, c: u64, p: u64, tp: f64) -> Record {
        let mut r = Record::new(Source::Bench, kind.structure(), n, tp);
        r.c = Some(c);
        r.p = Some(p);
        r
    }

    #[test]
    fn fit_recovers_a_known_alpha() {
        let m = model(3.0, 10, 50, 5);
        let records: Vec<_> = [(4, 100, 0), (8, 100, 500), (15, 0, 3000), (2, 10, 10_000)]
            .into_iter()
            .map(|(n, c, p)| {
                let tp = predict_mcs(&m, &WorkloadParams::new(n, c, p)).unwrap().throughput;
                record(Workload::Mcs, n, c, p, tp)
            })
            .collect();
        let fitted = fit_alpha(&records, &m.with_alpha(1.0), Workload::Mcs).unwrap();
        assert!((fitted.alpha - 3.0).abs() < 1e-9, "{}", fitted.alpha);
    }

    #[test]
    fn one_point_fit() {
        let m = model(1.0, 10, 50, 5);
        let pred = predict_treiber(&m, &WorkloadParams::new(4, 0, 0)).unwrap().throughput;
        let fitted = fit_alpha(&[record(Workload::Treiber, 4, 0, 0, 2.0 * pred)], &m, Workload::Treiber).unwrap();
        assert!((fitted.alpha - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_without_matching_records_fails() {
        let m = model(1.0, 10, 50, 5);
        let other = record(Workload::Treiber, 4, 0, 0, 1.0);
        let err = fit_alpha(&[other], &m, Workload::Mcs).unwrap_err();
        assert!(matches!(err, Error::Calibration(_)));
        assert!(matches!(fit_alpha(&[], &m, Workload::Mcs), Err(Error::Calibration(_))));
    }

    fn arb_model() -> impl Strategy<Value = CostModel> {
        (0.01f64..1e4, 1u64..200, 1u64..200, 1u64..200).prop_map(|(a, w, r, m)| model(a, w, r, m))
    }

    proptest! {
        #[test]
        fn treiber_branches_meet_at_the_crossover(m in arb_model(), n in 2u32..64) {
            let p_star = crossover_treiber(&m, n);
            let (mf, wf) = (m.m as f64, m.w as f64);
            let saturated = m.alpha / (mf + wf);
            let thread_bound = m.alpha * f64::from(n) / (p_star as f64 + mf + wf);
            prop_assert!(((saturated - thread_bound) / saturated).abs() <= 1e-12);
        }

        #[test]
        fn throughput_never_increases_with_p_or_c(
            m in arb_model(), n in 1u32..32, c in 0u64..2000, p in 0u64..20_000, dp in 1u64..5000, dc in 1u64..500
        ) {
            let base = predict_mcs(&m, &WorkloadParams::new(n, c, p)).unwrap();
            let more_p = predict_mcs(&m, &WorkloadParams::new(n, c, p + dp)).unwrap();
            let more_c = predict_mcs(&m, &WorkloadParams::new(n, c + dc, p)).unwrap().throughput;
            // Leaving the saturated branch jumps up by (2W+C+2R_I)/(2W+C+R_I);
            // see `mcs_leaving_saturation_jumps_by_one_read`.
            if more_p.regime == base.regime {
                prop_assert!(more_p.throughput <= base.throughput);
            }
            prop_assert!(more_c <= base.throughput);
            let t = predict_treiber(&m, &WorkloadParams::new(n, c, p)).unwrap().throughput;
            let t2 = predict_treiber(&m, &WorkloadParams::new(n, c, p + dp)).unwrap().throughput;
            prop_assert!(t2 <= t);
        }

        #[test]
        fn mcs_leaving_saturation_jumps_by_one_read(m in arb_model(), n in 2u32..32, c in 0u64..2000) {
            let p_star = crossover_mcs(&m, c, n);
            prop_assume!(p_star >= 0);
            let at = predict_mcs(&m, &WorkloadParams::new(n, c, p_star as u64)).unwrap();
            let past = predict_mcs(&m, &WorkloadParams::new(n, c, p_star as u64 + 1)).unwrap();
            prop_assert_eq!(at.regime, Regime::Saturated);
            prop_assert_eq!(past.regime, Regime::ThreadBound);
            let (w, r) = (m.w as f64, m.r_i as f64);
            let bound = (2.0 * w + c as f64 + 2.0 * r) / (2.0 * w + c as f64 + r);
            prop_assert!(past.throughput / at.throughput <= bound * (1.0 + 1e-12));
            if m.r_i == 0 {
                prop_assert!(past.throughput <= at.throughput);
            }
        }

        #[test]
        fn saturated_throughput_ignores_n_and_p(m in arb_model(), n in 2u32..32, c in 0u64..1000, frac in 0.0f64..1.0) {
            let p_mcs = (crossover_mcs(&m, c, n).max(0) as f64 * frac) as u64;
            let a = predict_mcs(&m, &WorkloadParams::new(n, c, p_mcs)).unwrap();
            let b = predict_mcs(&m, &WorkloadParams::new(n + 5, c, 0)).unwrap();
            if a.regime == Regime::Saturated {
                prop_assert_eq!(a.throughput, b.throughput);
            }
            let p_tr = (crossover_treiber(&m, n) as f64 * frac) as u64;
            let a = predict_treiber(&m, &WorkloadParams::new(n, 0, p_tr)).unwrap();
            let b = predict_treiber(&m, &WorkloadParams::new(n + 5, 0, 0)).unwrap();
            prop_assert_eq!(a.regime, Regime::Saturated);
            prop_assert_eq!(a.throughput, b.throughput);
        }

        #[test]
        fn thread_bound_grows_with_n(m in arb_model(), c in 0u64..1000, p in 0u64..100_000, n in 1u32..16) {
            let w1 = WorkloadParams::new(n, c, p);
            let w2 = WorkloadParams::new(n + 1, c, p);
            for kind in [Workload::Mcs, Workload::Treiber] {
                let a = kind.predict(&m, &w1).unwrap();
                let b = kind.predict(&m, &w2).unwrap();
                if a.regime == Regime::ThreadBound && b.regime == Regime::ThreadBound {
                    prop_assert!(b.throughput > a.throughput);
                }
            }
        }

        #[test]
        fn alpha_scales_linearly(m in arb_model(), n in 1u32..32, c in 0u64..1000, p in 0u64..10_000) {
            let w = WorkloadParams::new(n, c, p);
            for kind in [Workload::Mcs, Workload::Treiber] {
                let scaled = kind.predict(&m, &w).unwrap().throughput;
                let unit = kind.predict(&m.with_alpha(1.0), &w).unwrap().throughput;
                prop_assert_eq!(scaled, m.alpha * unit);
            }
        }
    }
}
