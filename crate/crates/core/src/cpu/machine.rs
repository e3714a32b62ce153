// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use super::isa::{decode, Class, CostClass, Instruction, Op, Reg};
use super::{propagate_tag, MachineState, TaggedWord};
use crate::asm::{load_image, LoadError, Program};
use crate::crypt::generate_master_key;
use crate::mem::{MemConfig, MemError, MemorySystem};
use crate::os::OsShim;
use crate::report::ByteOracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MachineConfig {
    pub mem: MemConfig,
    pub seed: u64,
    /// Run the reference model and check soundness after every step.
    pub checking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Trap {
    #[error("illegal instruction {word:#010x} at pc {pc:#x}")]
    IllegalInstruction { pc: u64, word: u32 },
    #[error("memory fault at pc {pc:#x}: {source}")]
    Memory { pc: u64, source: MemError },
    #[error("breakpoint at pc {pc:#x}")]
    Breakpoint { pc: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Trap(#[from] Trap),
    #[error("instruction budget of {limit} exceeded")]
    BudgetExceeded { limit: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    Halt(i64),
}

/// One simulated machine: CPU state, memory hierarchy, syscall shim and the
/// byte-granular taint oracle running in lockstep.
pub struct Machine {
    pub st: MachineState,
    pub mem: MemorySystem,
    pub os: OsShim,
    pub oracle: ByteOracle,
    checking: bool,
    register_violations: u64,
}

fn alu(op: Op, a: u64, b: u64) -> u64 {
    use Op::*;
    let w = |x: u64| (x as i32) as i64 as u64;
    let (sa, sb) = (a as i64, b as i64);
    match op {
        Add | Addi => a.wrapping_add(b),
        Sub => a.wrapping_sub(b),
        Sll | Slli => a << (b & 63),
        Srl | Srli => a >> (b & 63),
        Sra | Srai => (sa >> (b & 63)) as u64,
        Slt | Slti => u64::from(sa < sb),
        Sltu | Sltiu => u64::from(a < b),
        Xor | Xori => a ^ b,
        Or | Ori => a | b,
        And | Andi => a & b,
        Addw | Addiw => w(a.wrapping_add(b)),
        Subw => w(a.wrapping_sub(b)),
        Sllw | Slliw => w(((a as u32) << (b & 31)) as u64),
        Srlw | Srliw => w(((a as u32) >> (b & 31)) as u64),
        Sraw | Sraiw => w(((a as i32) >> (b & 31)) as u64),
        Mul => a.wrapping_mul(b),
        Mulh => ((i128::from(sa) * i128::from(sb)) >> 64) as u64,
        Mulhsu => ((i128::from(sa) * (b as i128)) >> 64) as u64,
        Mulhu => ((u128::from(a) * u128::from(b)) >> 64) as u64,
        Div => match (sa, sb) {
            (_, 0) => u64::MAX,
            (i64::MIN, -1) => a,
            _ => (sa / sb) as u64,
        },
        Divu => a.checked_div(b).unwrap_or(u64::MAX),
        Rem => match (sa, sb) {
            (_, 0) => a,
            (i64::MIN, -1) => 0,
            _ => (sa % sb) as u64,
        },
        Remu => a.checked_rem(b).unwrap_or(a),
        Mulw => w((a as u32).wrapping_mul(b as u32) as u64),
        Divw => {
            let (x, y) = (a as i32, b as i32);
            match (x, y) {
                (_, 0) => u64::MAX,
                (i32::MIN, -1) => w(x as u32 as u64),
                _ => w((x / y) as u32 as u64),
            }
        }
        Divuw => match b as u32 {
            0 => u64::MAX,
            y => w(((a as u32) / y) as u64),
        },
        Remw => {
            let (x, y) = (a as i32, b as i32);
            match (x, y) {
                (_, 0) => w(x as u32 as u64),
                (i32::MIN, -1) => 0,
                _ => w((x % y) as u32 as u64),
            }
        }
        Remuw => match b as u32 {
            0 => w(a as u32 as u64),
            y => w(((a as u32) % y) as u64),
        },
        other => unreachable!("{other:?} is not an ALU operation"),
    }
}

fn branch_taken(op: Op, a: u64, b: u64) -> bool {
    match op {
        Op::Beq => a == b,
        Op::Bne => a != b,
        Op::Blt => (a as i64) < (b as i64),
        Op::Bge => (a as i64) >= (b as i64),
        Op::Bltu => a < b,
        Op::Bgeu => a >= b,
        other => unreachable!("{other:?} is not a branch"),
    }
}

impl Machine {
    pub fn new(cfg: &MachineConfig, os: OsShim) -> Self {
        let master = generate_master_key(cfg.seed);
        let mut mem = MemorySystem::new(cfg.mem);
        if cfg.checking {
            mem.enable_checking(master);
        }
        Machine {
            st: MachineState::new(master),
            mem,
            os,
            oracle: ByteOracle::default(),
            checking: cfg.checking,
            register_violations: 0,
        }
    }

    /// A machine with `program` loaded and ready to run.
    pub fn with_program(cfg: &MachineConfig, os: OsShim, program: &Program) -> Result<Self, LoadError> {
        let mut m = Machine::new(cfg, os);
        load_image(program, &mut m.mem, &mut m.st)?;
        Ok(m)
    }

    /// Registers holding an oracle-tainted byte without a tag, summed over
    /// every checked step.
    pub fn register_violations(&self) -> u64 {
        self.register_violations
    }

    fn check_registers(&mut self) {
        for i in 1..32u8 {
            let r = Reg::new(i).expect("valid index");
            if self.oracle.reg(r) != 0 && !self.st.reg(r).tag {
                self.register_violations += 1;
            }
        }
    }

    fn base_cost(&self, inst: &Instruction) -> u64 {
        let c = self.mem.config().costs;
        match inst.op.cost_class() {
            CostClass::Alu | CostClass::Ctag => c.alu,
            CostClass::Mul => c.mul,
            CostClass::Div => c.div,
            CostClass::Branch => c.branch,
            CostClass::Jump => c.jump,
            CostClass::System => c.system,
            // Included in the memory system's figure.
            CostClass::Load | CostClass::Store => 0,
        }
    }

    pub fn step(&mut self) -> Result<StepOutcome, Trap> {
        let pc = self.st.pc;
        let ctx = self.st.key_ctx();
        let fault = |source| Trap::Memory { pc, source };
        let (word, fetch_cycles) = self.mem.fetch(pc, ctx).map_err(fault)?;
        let inst = decode(word).map_err(|_| Trap::IllegalInstruction { pc, word })?;
        let costs = self.mem.config().costs;
        let mut cycles = fetch_cycles + self.base_cost(&inst);
        let mut next = pc.wrapping_add(4);
        let mut outcome = StepOutcome::Continue;
        let mut load_taint = 0u8;
        let (a, b) = (self.st.reg(inst.rs1), self.st.reg(inst.rs2));
        let imm = inst.imm as u64;
        let op = inst.op;

        match inst.class() {
            Class::AluRR => {
                let tag = propagate_tag(&inst, &[a.tag, b.tag]);
                self.st
                    .set_reg(inst.rd, TaggedWord::new(alu(op, a.value, b.value), tag));
            }
            Class::AluRI => {
                let tag = propagate_tag(&inst, &[a.tag]);
                self.st.set_reg(inst.rd, TaggedWord::new(alu(op, a.value, imm), tag));
            }
            Class::Upper => {
                let v = if op == Op::Lui { imm } else { pc.wrapping_add(imm) };
                self.st.set_reg(inst.rd, TaggedWord::plain(v));
            }
            Class::Load => {
                let width = op.mem_width().expect("load width");
                let r = self
                    .mem
                    .load(a.value.wrapping_add(imm), width, op.is_signed_load(), ctx)
                    .map_err(fault)?;
                cycles += r.cycles;
                load_taint = r.taint;
                self.st.set_reg(inst.rd, TaggedWord::new(r.value, r.tag));
            }
            Class::Store => {
                let width = op.mem_width().expect("store width");
                let taint = self.oracle.store_taint(&inst);
                cycles += self
                    .mem
                    .store(a.value.wrapping_add(imm), width, b.value, b.tag, taint, ctx)
                    .map_err(fault)?;
            }
            Class::Branch => {
                let taken = branch_taken(op, a.value, b.value);
                // Static predictor: backward taken, forward not taken.
                if taken != (inst.imm < 0) {
                    cycles += costs.mispredict_penalty;
                }
                if taken {
                    next = pc.wrapping_add(imm);
                }
            }
            Class::Jump => {
                next = if op == Op::Jal {
                    pc.wrapping_add(imm)
                } else {
                    a.value.wrapping_add(imm) & !1
                };
                self.st.set_reg(inst.rd, TaggedWord::plain(pc.wrapping_add(4)));
            }
            Class::System => match op {
                Op::Ecall => {
                    let out = self.os.handle_ecall(&mut self.st, &mut self.mem);
                    cycles += out.cycles;
                    if let Some(code) = out.exit {
                        outcome = StepOutcome::Halt(code);
                    }
                }
                Op::Ebreak => return Err(Trap::Breakpoint { pc }),
                _ => {}
            },
            Class::Ctag => match op {
                Op::CtagRdt => {
                    let (tag, c) = self.mem.read_tag(a.value, ctx).map_err(fault)?;
                    cycles += c;
                    self.st.set_reg(inst.rd, TaggedWord::plain(u64::from(tag)));
                }
                _ => {
                    cycles += self
                        .mem
                        .tag_range(a.value, b.value, op == Op::CtagSet, ctx)
                        .map_err(fault)?;
                }
            },
        }

        self.oracle.step(&inst, load_taint);
        self.st.pc = next;
        self.st.instret += 1;
        self.st.cycles += cycles;
        *self.st.histogram.entry(op.mnemonic()).or_insert(0) += 1;
        if let StepOutcome::Halt(code) = outcome {
            self.st.halted = Some(code);
        }
        if self.checking {
            self.mem.check_touched(self.st.key_ctx());
            self.check_registers();
        }
        Ok(outcome)
    }

    /// Step until the program exits or `max_instret` instructions retire.
    pub fn run(&mut self, max_instret: u64) -> Result<i64, RunError> {
        loop {
            if let Some(code) = self.st.halted {
                return Ok(code);
            }
            if self.st.instret >= max_instret {
                return Err(RunError::BudgetExceeded { limit: max_instret });
            }
            self.step()?;
        }
    }
}
