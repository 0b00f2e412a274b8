//! Deterministic discrete-event execution of an [`AbstractProgram`] by N
//! simulated workers.
//!
//! Timing rules:
//! - A write, get-and-set or successful CAS holds the variable's slot for
//!   its class cost. Every access to a variable, reads included, first waits
//!   until the slot is free, so read-modify-writes on one variable never
//!   overlap and a read that follows a write pays its cost after the write.
//! - A CAS resolves when it gets the slot. A failed CAS does not hold the
//!   slot; it completes at the later of issue time plus its class cost and
//!   the moment the slot freed, so stalling behind another worker's write
//!   overlaps the failed attempt's own cost.
//! - A read returns the value at its completion. A write committed while a
//!   read is in flight invalidates it: the read completes one read cost
//!   after the write's slot frees.
//! - CAS and spin probes compare against the value at the instant they start.
//! - A spin probe costs its class cost when the variable was written since
//!   this worker's previous probe, otherwise one cycle. A spinner whose
//!   condition fails is parked and re-probes when the variable is next
//!   written, which is what polling would observe.
//! - Workers due at the same cycle run in rank order: lowest worker index
//!   first, with the ranking rotated by one each time a worker has to wait
//!   for a busy slot.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::program::{AbstractProgram, Cond, CostClass, Instruction, Operand, VarRef, REGISTERS};
use crate::cost_model::{CostModel, Regime};
use crate::error::{invalid, Error, Result};

/// Knobs of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub workers: u32,
    pub horizon: u64,
    pub warmup: u64,
    pub seed: u64,
    /// Cost of `Unit`-class steps and local branches.
    pub unit_cost: u64,
    /// Mean wait fraction above which a run is classified as saturated.
    pub saturation_threshold: f64,
    pub record_log: bool,
}

impl SimConfig {
    pub const DEFAULT_UNIT_COST: u64 = 0;
    pub const DEFAULT_SATURATION_THRESHOLD: f64 = 0.05;

    /// `warmup` defaults to a tenth of the horizon.
    pub fn new(workers: u32, horizon: u64) -> Self {
        SimConfig {
            workers,
            horizon,
            warmup: horizon / 10,
            seed: 0,
            unit_cost: Self::DEFAULT_UNIT_COST,
            saturation_threshold: Self::DEFAULT_SATURATION_THRESHOLD,
            record_log: false,
        }
    }

    pub fn warmup(mut self, warmup: u64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn unit_cost(mut self, unit_cost: u64) -> Self {
        self.unit_cost = unit_cost;
        self
    }

    pub fn record_log(mut self, on: bool) -> Self {
        self.record_log = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers < 1 {
            return Err(invalid("N", format!("N >= 1 required, got {}", self.workers)));
        }
        if self.horizon <= self.warmup {
            return Err(invalid(
                "horizon",
                format!(
                    "horizon > warmup required, got horizon {} and warmup {}",
                    self.horizon, self.warmup
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub total_ops: u64,
    pub horizon_cycles: u64,
    pub warmup_cycles: u64,
    /// Operations completed per cycle of the measured window.
    pub throughput_per_cycle: f64,
    pub per_worker_ops: Vec<u64>,
    /// Mean fraction of the measured window workers spent spinning, waiting
    /// for a busy slot or redoing failed CAS attempts.
    pub wait_fraction: f64,
    pub regime_observed: Regime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
    Rmw,
    FailedCas,
    Probe,
}

impl AccessKind {
    /// Whether the access held the variable's slot.
    pub fn holds_slot(self) -> bool {
        matches!(self, AccessKind::Write | AccessKind::Rmw)
    }
}

/// One shared access, `[start, end)` in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEvent {
    pub worker: usize,
    pub var: usize,
    pub kind: AccessKind,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone)]
pub struct SimTrace {
    pub result: SimResult,
    pub log: Vec<AccessEvent>,
    /// Display names of the simulated variables, indexed like `AccessEvent::var`.
    pub var_names: Vec<String>,
}

/// Runs `program` with default knobs (warmup as given, unit cost and
/// saturation threshold at their defaults).
pub fn simulate(
    program: &AbstractProgram,
    model: &CostModel,
    workers: u32,
    horizon: u64,
    warmup: u64,
    seed: u64,
) -> Result<SimResult> {
    let cfg = SimConfig::new(workers, horizon).warmup(warmup).seed(seed);
    simulate_with(program, model, &cfg).map(|t| t.result)
}

pub fn simulate_with(program: &AbstractProgram, model: &CostModel, cfg: &SimConfig) -> Result<SimTrace> {
    cfg.validate()?;
    program.validate()?;
    let mut engine = Engine::new(program, model, cfg);
    engine.run()?;
    Ok(engine.finish())
}

const ZERO_COST_STEP_LIMIT: usize = 1024;

struct Var {
    value: i64,
    version: u64,
    busy_until: u64,
    /// (worker, earliest re-probe time)
    parked: Vec<(usize, u64)>,
    /// Workers with a read of this variable in flight.
    readers: Vec<usize>,
}

struct Worker {
    pc: usize,
    regs: [i64; REGISTERS],
    /// Version of each variable at this worker's last spin probe.
    seen: Vec<u64>,
    ops: u64,
    wait: u64,
    parked_at: u64,
    last_read_cost: u64,
    /// Issue cycle of a CAS stalled behind a busy slot.
    cas_issued: Option<u64>,
    reading: Option<InFlightRead>,
    /// Sequence number of this worker's live heap entry.
    token: u64,
}

#[derive(Clone, Copy)]
struct InFlightRead {
    var: usize,
    start: u64,
    until: u64,
    cost: u64,
}

struct Engine<'a> {
    program: &'a AbstractProgram,
    cfg: &'a SimConfig,
    costs: [u64; 5],
    n: usize,
    vars: Vec<Var>,
    workers: Vec<Worker>,
    heap: BinaryHeap<Reverse<(u64, usize, u64, usize)>>,
    seq: u64,
    rotation: usize,
    fresh: i64,
    log: Vec<AccessEvent>,
}

enum Flow {
    /// Keep executing at the same cycle.
    Continue,
    /// Next instruction at the given cycle.
    At(u64),
    /// Parked on a variable.
    Parked,
}

impl<'a> Engine<'a> {
    fn new(program: &'a AbstractProgram, model: &CostModel, cfg: &'a SimConfig) -> Self {
        let n = cfg.workers as usize;
        let nvars = program.globals.len() + n * program.node_fields.len();
        let vars = (0..nvars)
            .map(|_| Var {
                value: 0,
                version: 0,
                busy_until: 0,
                parked: Vec::new(),
                readers: Vec::new(),
            })
            .collect();
        let workers = (0..n)
            .map(|_| Worker {
                pc: 0,
                regs: [0; REGISTERS],
                seen: vec![0; nvars],
                ops: 0,
                wait: 0,
                parked_at: 0,
                last_read_cost: 0,
                cas_issued: None,
                reading: None,
                token: 0,
            })
            .collect();
        let mut engine = Engine {
            program,
            cfg,
            costs: [model.w, model.r_i, model.m, model.x, cfg.unit_cost],
            n,
            vars,
            workers,
            heap: BinaryHeap::new(),
            seq: 0,
            rotation: (cfg.seed % n as u64) as usize,
            fresh: 1 << 32,
            log: Vec::new(),
        };
        for w in 0..n {
            engine.schedule(w, 0);
        }
        engine
    }

    fn cost(&self, class: CostClass) -> u64 {
        self.costs[match class {
            CostClass::W => 0,
            CostClass::RI => 1,
            CostClass::M => 2,
            CostClass::X => 3,
            CostClass::Unit => 4,
        }]
    }

    fn schedule(&mut self, worker: usize, at: u64) {
        let rank = (worker + self.n - self.rotation) % self.n;
        self.seq += 1;
        self.workers[worker].token = self.seq;
        self.heap.push(Reverse((at, rank, self.seq, worker)));
    }

    /// Cycles of `[from, to)` that fall inside the measured window.
    fn measured(&self, from: u64, to: u64) -> u64 {
        let lo = from.max(self.cfg.warmup);
        let hi = to.min(self.cfg.horizon);
        hi.saturating_sub(lo)
    }

    fn resolve(&self, worker: usize, var: VarRef) -> Result<usize> {
        let globals = self.program.globals.len();
        let fields = self.program.node_fields.len();
        Ok(match var {
            VarRef::Global(g) => g,
            VarRef::Own(f) => globals + worker * fields + f,
            VarRef::Via(r, f) => {
                let handle = self.workers[worker].regs[r];
                if handle < 1 || handle as usize > self.n {
                    return Err(Error::UndeclaredVariable(format!(
                        "node handle {handle} in r{r} of worker {worker}"
                    )));
                }
                globals + (handle as usize - 1) * fields + f
            }
        })
    }

    fn operand(&mut self, worker: usize, op: Operand) -> i64 {
        match op {
            Operand::Const(c) => c,
            Operand::Reg(r) => self.workers[worker].regs[r],
            Operand::SelfNode => worker as i64 + 1,
            Operand::Fresh => {
                self.fresh += 1;
                self.fresh
            }
        }
    }

    fn holds(&mut self, worker: usize, value: i64, cond: Cond) -> bool {
        match cond {
            Cond::Eq(o) => value == self.operand(worker, o),
            Cond::Ne(o) => value != self.operand(worker, o),
        }
    }

    fn record(&mut self, worker: usize, var: usize, kind: AccessKind, start: u64, end: u64) {
        if self.cfg.record_log {
            self.log.push(AccessEvent {
                worker,
                var,
                kind,
                start,
                end,
            });
        }
    }

    /// Stores `value` into `var`, holding its slot for `cost` cycles and
    /// waking parked spinners when the slot frees.
    fn commit(&mut self, var: usize, value: i64, now: u64, cost: u64) {
        let end = now + cost;
        let v = &mut self.vars[var];
        v.value = value;
        v.version += 1;
        v.busy_until = end;
        let parked = std::mem::take(&mut v.parked);
        let readers = std::mem::take(&mut v.readers);
        for w in readers {
            let mut read = self.workers[w].reading.expect("registered reader");
            // Completing in the same cycle as the write counts as overlapping it.
            if read.until >= now {
                let restarted = end + read.cost;
                let idle = self.measured(read.until, restarted);
                self.workers[w].wait += idle;
                read.until = restarted;
                self.workers[w].reading = Some(read);
                self.schedule(w, restarted);
            }
            self.vars[var].readers.push(w);
        }
        for (w, earliest) in parked {
            let wake = end.max(earliest);
            let idle = self.measured(self.workers[w].parked_at, wake);
            self.workers[w].wait += idle;
            self.schedule(w, wake);
        }
    }

    fn run(&mut self) -> Result<()> {
        while let Some(Reverse((at, _, seq, worker))) = self.heap.pop() {
            if at >= self.cfg.horizon {
                break;
            }
            if seq != self.workers[worker].token {
                continue;
            }
            let mut free_steps = 0usize;
            loop {
                match self.step(worker, at)? {
                    Flow::Continue if free_steps < ZERO_COST_STEP_LIMIT => free_steps += 1,
                    // A loop of zero-cost steps never yields; push it one cycle on.
                    Flow::Continue => {
                        self.schedule(worker, at + 1);
                        break;
                    }
                    Flow::At(t) => {
                        if t < self.cfg.horizon {
                            self.schedule(worker, t);
                        }
                        break;
                    }
                    Flow::Parked => break,
                }
            }
        }
        Ok(())
    }

    fn advance_pc(&mut self, worker: usize, pc: usize, done_at: u64) {
        self.workers[worker].pc = pc;
        if pc == self.program.op_boundary && done_at >= self.cfg.warmup && done_at < self.cfg.horizon {
            self.workers[worker].ops += 1;
        }
    }

    /// Executes one instruction of `worker` starting at cycle `now`.
    fn step(&mut self, worker: usize, now: u64) -> Result<Flow> {
        let pc = self.workers[worker].pc;
        let next = (pc + 1) % self.program.instructions.len();
        let ins = self.program.instructions[pc];
        let unit = self.cfg.unit_cost;

        if let Some(read) = self.workers[worker].reading.take() {
            let Instruction::Read { dst, .. } = ins else {
                unreachable!("in-flight read outside a read instruction")
            };
            self.vars[read.var].readers.retain(|&w| w != worker);
            self.workers[worker].regs[dst] = self.vars[read.var].value;
            self.record(worker, read.var, AccessKind::Read, read.start, now);
            self.advance_pc(worker, next, now);
            return Ok(Flow::Continue);
        }

        // Every shared access first waits for the variable's slot.
        let var = match ins.var() {
            Some(v) => {
                let idx = self.resolve(worker, v)?;
                let busy = self.vars[idx].busy_until;
                if busy > now {
                    if matches!(ins, Instruction::Cas { .. }) {
                        // accounted when the CAS resolves
                        self.workers[worker].cas_issued.get_or_insert(now);
                    } else {
                        let idle = self.measured(now, busy);
                        self.workers[worker].wait += idle;
                    }
                    self.rotation = (self.rotation + 1) % self.n;
                    return Ok(Flow::At(busy));
                }
                Some(idx)
            }
            None => None,
        };

        let end = match ins {
            Instruction::LocalWork(cycles) => {
                self.advance_pc(worker, next, now + cycles);
                now + cycles
            }
            Instruction::Step => {
                self.advance_pc(worker, next, now + unit);
                now + unit
            }
            Instruction::JumpIf { reg, cond, target } => {
                let value = self.workers[worker].regs[reg];
                let to = if self.holds(worker, value, cond) { target } else { next };
                self.advance_pc(worker, to, now + unit);
                now + unit
            }
            Instruction::Read { class, .. } => {
                let var = var.expect("read names a variable");
                let cost = self.cost(class);
                self.workers[worker].last_read_cost = cost;
                self.workers[worker].reading = Some(InFlightRead {
                    var,
                    start: now,
                    until: now + cost,
                    cost,
                });
                self.vars[var].readers.push(worker);
                now + cost
            }
            Instruction::Write { value, class, .. } => {
                let var = var.expect("write names a variable");
                let cost = self.cost(class);
                let value = self.operand(worker, value);
                self.commit(var, value, now, cost);
                self.record(worker, var, AccessKind::Write, now, now + cost);
                self.advance_pc(worker, next, now + cost);
                now + cost
            }
            Instruction::GetAndSet { value, dst, class, .. } => {
                let var = var.expect("swap names a variable");
                let cost = self.cost(class);
                let value = self.operand(worker, value);
                self.workers[worker].regs[dst] = self.vars[var].value;
                self.commit(var, value, now, cost);
                self.record(worker, var, AccessKind::Rmw, now, now + cost);
                self.advance_pc(worker, next, now + cost);
                now + cost
            }
            Instruction::Cas {
                expected, new, dst, class, ..
            } => {
                let var = var.expect("cas names a variable");
                let cost = self.cost(class);
                let expected = self.operand(worker, expected);
                if self.vars[var].value == expected {
                    let new = self.operand(worker, new);
                    self.commit(var, new, now, cost);
                    self.workers[worker].regs[dst] = 1;
                    self.record(worker, var, AccessKind::Rmw, now, now + cost);
                    if let Some(issued) = self.workers[worker].cas_issued.take() {
                        let idle = self.measured(issued, now);
                        self.workers[worker].wait += idle;
                    }
                    self.advance_pc(worker, next, now + cost);
                    now + cost
                } else {
                    // A stalled CAS has been paying its cost since issue.
                    let issued = self.workers[worker].cas_issued.take().unwrap_or(now);
                    let end = (issued + cost).max(now);
                    self.workers[worker].regs[dst] = 0;
                    let wasted = self.workers[worker].last_read_cost;
                    let idle = self.measured(issued.saturating_sub(wasted), end);
                    self.workers[worker].wait += idle;
                    self.record(worker, var, AccessKind::FailedCas, issued, end);
                    self.advance_pc(worker, next, end);
                    end
                }
            }
            Instruction::SpinUntil { cond, dst, class, .. } => {
                let var = var.expect("spin names a variable");
                let version = self.vars[var].version;
                let cost = if self.workers[worker].seen[var] != version {
                    self.cost(class)
                } else {
                    1
                };
                self.workers[worker].seen[var] = version;
                let value = self.vars[var].value;
                self.record(worker, var, AccessKind::Probe, now, now + cost);
                if self.holds(worker, value, cond) {
                    self.workers[worker].regs[dst] = value;
                    self.advance_pc(worker, next, now + cost);
                    now + cost
                } else {
                    let idle = self.measured(now, now + cost);
                    let w = &mut self.workers[worker];
                    w.wait += idle;
                    w.parked_at = now + cost;
                    self.vars[var].parked.push((worker, now + cost));
                    return Ok(Flow::Parked);
                }
            }
        };
        Ok(if end == now {
            Flow::Continue
        } else {
            Flow::At(end)
        })
    }

    fn finish(self) -> SimTrace {
        let window = self.cfg.horizon - self.cfg.warmup;
        // Parked workers are idle until the horizon.
        let mut waits: Vec<u64> = self.workers.iter().map(|w| w.wait).collect();
        for v in &self.vars {
            for &(w, _) in &v.parked {
                waits[w] += self.measured(self.workers[w].parked_at, self.cfg.horizon);
            }
        }
        let per_worker_ops: Vec<u64> = self.workers.iter().map(|w| w.ops).collect();
        let total_ops = per_worker_ops.iter().sum();
        let wait_fraction =
            waits.iter().sum::<u64>() as f64 / (window as f64 * self.n as f64);
        let regime_observed = if wait_fraction > self.cfg.saturation_threshold {
            Regime::Saturated
        } else {
            Regime::ThreadBound
        };
        let mut var_names: Vec<String> = self.program.globals.clone();
        for w in 0..self.n {
            for f in &self.program.node_fields {
                var_names.push(format!("node{w}.{f}"));
            }
        }
        SimTrace {
            result: SimResult {
                total_ops,
                horizon_cycles: self.cfg.horizon,
                warmup_cycles: self.cfg.warmup,
                throughput_per_cycle: total_ops as f64 / window as f64,
                per_worker_ops,
                wait_fraction,
                regime_observed,
            },
            log: self.log,
            var_names,
        }
    }
}
