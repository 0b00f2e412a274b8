//! Annotated instruction sequences executed by the schedule simulator.

use std::fmt;

use crate::error::{Error, Result};

/// Number of per-worker registers.
pub const REGISTERS: usize = 4;

pub type Reg = usize;

/// Which cost of the [`CostModel`](crate::cost_model::CostModel) an access pays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostClass {
    W,
    RI,
    M,
    X,
    /// Local bookkeeping; charged the simulator's unit cost.
    Unit,
}

/// A shared variable as named by a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarRef {
    /// A global variable, by declaration index.
    Global(usize),
    /// A field of the executing worker's own queue node.
    Own(usize),
    /// A field of the node whose handle is held in a register.
    Via(Reg, usize),
}

/// Values that can be written or compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operand {
    Const(i64),
    Reg(Reg),
    /// Handle of the executing worker's node. Never 0, so 0 can mean null.
    SelfNode,
    /// A value never produced before in this run.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq(Operand),
    Ne(Operand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instruction {
    LocalWork(u64),
    Read {
        var: VarRef,
        dst: Reg,
        class: CostClass,
    },
    Write {
        var: VarRef,
        value: Operand,
        class: CostClass,
    },
    GetAndSet {
        var: VarRef,
        value: Operand,
        dst: Reg,
        class: CostClass,
    },
    /// Writes 1 to `dst` on success, 0 on failure.
    Cas {
        var: VarRef,
        expected: Operand,
        new: Operand,
        dst: Reg,
        class: CostClass,
    },
    /// Probes `var` until `cond` holds, leaving the final value in `dst`.
    SpinUntil {
        var: VarRef,
        cond: Cond,
        dst: Reg,
        class: CostClass,
    },
    /// Local branch; costs one unit.
    JumpIf { reg: Reg, cond: Cond, target: usize },
    /// Local bookkeeping such as a link update; costs one unit.
    Step,
}

impl Instruction {
    pub fn var(&self) -> Option<VarRef> {
        match *self {
            Instruction::Read { var, .. }
            | Instruction::Write { var, .. }
            | Instruction::GetAndSet { var, .. }
            | Instruction::Cas { var, .. }
            | Instruction::SpinUntil { var, .. } => Some(var),
            Instruction::LocalWork(_) | Instruction::JumpIf { .. } | Instruction::Step => None,
        }
    }

    pub fn class(&self) -> Option<CostClass> {
        match *self {
            Instruction::Read { class, .. }
            | Instruction::Write { class, .. }
            | Instruction::GetAndSet { class, .. }
            | Instruction::Cas { class, .. }
            | Instruction::SpinUntil { class, .. } => Some(class),
            Instruction::LocalWork(_) | Instruction::JumpIf { .. } => None,
            Instruction::Step => Some(CostClass::Unit),
        }
    }
}

/// One operation loop. Execution wraps from the last instruction back to
/// the first; an operation completes whenever a worker reaches
/// `op_boundary`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbstractProgram {
    pub name: String,
    pub globals: Vec<String>,
    /// Fields of the per-worker node (empty when the program uses none).
    pub node_fields: Vec<String>,
    pub instructions: Vec<Instruction>,
    pub op_boundary: usize,
}

impl AbstractProgram {
    /// Checks that every access names a declared variable and every jump
    /// and register is in range.
    pub fn validate(&self) -> Result<()> {
        let len = self.instructions.len();
        if len == 0 || self.op_boundary >= len {
            return Err(Error::InvalidParameter {
                name: "op_boundary",
                requirement: format!("must index one of {len} instructions"),
            });
        }
        let check_reg = |r: Reg| {
            if r >= REGISTERS {
                Err(Error::InvalidParameter {
                    name: "register",
                    requirement: format!("r{r} out of range (have {REGISTERS})"),
                })
            } else {
                Ok(())
            }
        };
        let check_operand = |o: Operand| match o {
            Operand::Reg(r) => check_reg(r),
            _ => Ok(()),
        };
        let check_cond = |c: Cond| match c {
            Cond::Eq(o) | Cond::Ne(o) => check_operand(o),
        };
        for (i, ins) in self.instructions.iter().enumerate() {
            if let Some(var) = ins.var() {
                match var {
                    VarRef::Global(g) if g >= self.globals.len() => {
                        return Err(Error::UndeclaredVariable(format!(
                            "global #{g} at instruction {i}"
                        )))
                    }
                    VarRef::Own(f) | VarRef::Via(_, f) if f >= self.node_fields.len() => {
                        return Err(Error::UndeclaredVariable(format!(
                            "node field #{f} at instruction {i}"
                        )))
                    }
                    VarRef::Via(r, _) => check_reg(r)?,
                    _ => {}
                }
            }
            match *ins {
                Instruction::Read { dst, .. } => check_reg(dst)?,
                Instruction::Write { value, .. } => check_operand(value)?,
                Instruction::GetAndSet { value, dst, .. } => {
                    check_operand(value)?;
                    check_reg(dst)?;
                }
                Instruction::Cas {
                    expected, new, dst, ..
                } => {
                    check_operand(expected)?;
                    check_operand(new)?;
                    check_reg(dst)?;
                }
                Instruction::SpinUntil { cond, dst, .. } => {
                    check_cond(cond)?;
                    check_reg(dst)?;
                }
                Instruction::JumpIf { reg, cond, target } => {
                    check_reg(reg)?;
                    check_cond(cond)?;
                    if target >= len {
                        return Err(Error::InvalidParameter {
                            name: "jump target",
                            requirement: format!("{target} past end of program at {i}"),
                        });
                    }
                }
                Instruction::LocalWork(_) | Instruction::Step => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for AbstractProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "program {}", self.name)?;
        for (i, ins) in self.instructions.iter().enumerate() {
            let marker = if i == self.op_boundary { "*" } else { " " };
            writeln!(f, "{marker}{i:3}: {ins:?}")?;
        }
        Ok(())
    }
}

pub mod mcs {
    //! Names used by [`build_mcs_program`](super::build_mcs_program).
    pub const TAIL: usize = 0;
    pub const LOCKED: usize = 0;
    pub const NEXT: usize = 1;
    pub const PRED: usize = 0;
    pub const CAS_OK: usize = 1;
    pub const SUCC: usize = 2;
}

/// The MCS lock loop with a critical section of `c` and a parallel section
/// of `p` cycles.
///
/// ```text
///  0  myNode.next = null                  UNIT
///  1  myNode.locked = true                W
///  2  pred = tail.getAndSet(myNode)       W
///  3  if pred == null goto 6
///  4  pred.next = myNode                  W
///  5  while myNode.locked                 R_I per observed change
///  6  critical section                    C
///  7  succ = myNode.next                  R_I
///  8  if succ != null goto 12
///  9  ok = tail.CAS(myNode, null)         W
/// 10  if ok goto 13
/// 11  while (succ = myNode.next) == null  R_I per observed change
/// 12  succ.locked = false                 W
/// 13* parallel section                    P
/// ```
pub fn build_mcs_program(c: u64, p: u64) -> AbstractProgram {
    use mcs::*;
    use CostClass::*;
    use Instruction::*;
    let instructions = vec![
        Write {
            var: VarRef::Own(NEXT),
            value: Operand::Const(0),
            class: Unit,
        },
        Write {
            var: VarRef::Own(LOCKED),
            value: Operand::Const(1),
            class: W,
        },
        GetAndSet {
            var: VarRef::Global(TAIL),
            value: Operand::SelfNode,
            dst: PRED,
            class: W,
        },
        JumpIf {
            reg: PRED,
            cond: Cond::Eq(Operand::Const(0)),
            target: 6,
        },
        Write {
            var: VarRef::Via(PRED, NEXT),
            value: Operand::SelfNode,
            class: W,
        },
        SpinUntil {
            var: VarRef::Own(LOCKED),
            cond: Cond::Eq(Operand::Const(0)),
            dst: CAS_OK,
            class: RI,
        },
        LocalWork(c),
        Read {
            var: VarRef::Own(NEXT),
            dst: SUCC,
            class: RI,
        },
        JumpIf {
            reg: SUCC,
            cond: Cond::Ne(Operand::Const(0)),
            target: 12,
        },
        Cas {
            var: VarRef::Global(TAIL),
            expected: Operand::SelfNode,
            new: Operand::Const(0),
            dst: CAS_OK,
            class: W,
        },
        JumpIf {
            reg: CAS_OK,
            cond: Cond::Eq(Operand::Const(1)),
            target: 13,
        },
        SpinUntil {
            var: VarRef::Own(NEXT),
            cond: Cond::Ne(Operand::Const(0)),
            dst: SUCC,
            class: RI,
        },
        Write {
            var: VarRef::Via(SUCC, LOCKED),
            value: Operand::Const(0),
            class: W,
        },
        LocalWork(p),
    ];
    AbstractProgram {
        name: format!("mcs(C={c},P={p})"),
        globals: vec!["tail".into()],
        node_fields: vec!["locked".into(), "next".into()],
        instructions,
        op_boundary: 13,
    }
}

pub mod treiber {
    //! Names used by [`build_treiber_program`](super::build_treiber_program).
    pub const HEAD: usize = 0;
    pub const OLD: usize = 0;
    pub const OK: usize = 1;
}

/// The generic Treiber retry loop followed by a parallel section of `p`
/// cycles.
///
/// ```text
/// 0  old = head                  M
/// 1  new.next = old              (local link update, one unit)
/// 2  ok = head.CAS(old, new)     W
/// 3  if !ok goto 0
/// 4* parallel section            P
/// ```
pub fn build_treiber_program(p: u64) -> AbstractProgram {
    use treiber::*;
    use CostClass::*;
    use Instruction::*;
    let instructions = vec![
        Read {
            var: VarRef::Global(HEAD),
            dst: OLD,
            class: M,
        },
        Step,
        Cas {
            var: VarRef::Global(HEAD),
            expected: Operand::Reg(OLD),
            new: Operand::Fresh,
            dst: OK,
            class: W,
        },
        JumpIf {
            reg: OK,
            cond: Cond::Eq(Operand::Const(0)),
            target: 0,
        },
        LocalWork(p),
    ];
    AbstractProgram {
        name: format!("treiber(P={p})"),
        globals: vec!["head".into()],
        node_fields: Vec::new(),
        instructions,
        op_boundary: 4,
    }
}
