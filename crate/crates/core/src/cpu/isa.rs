// SPDX-License-Identifier: Apache-2.0

//! Instruction definitions shared by the assembler and the decoder: RV64I,
//! the M extension, and the CTAG tag-management group on custom-0.

use std::fmt;

use thiserror::Error;

pub const OPC_LUI: u32 = 0b011_0111;
pub const OPC_AUIPC: u32 = 0b001_0111;
pub const OPC_JAL: u32 = 0b110_1111;
pub const OPC_JALR: u32 = 0b110_0111;
pub const OPC_BRANCH: u32 = 0b110_0011;
pub const OPC_LOAD: u32 = 0b000_0011;
pub const OPC_STORE: u32 = 0b010_0011;
pub const OPC_OP_IMM: u32 = 0b001_0011;
pub const OPC_OP: u32 = 0b011_0011;
pub const OPC_OP_IMM_32: u32 = 0b001_1011;
pub const OPC_OP_32: u32 = 0b011_1011;
pub const OPC_MISC_MEM: u32 = 0b000_1111;
pub const OPC_SYSTEM: u32 = 0b111_0011;
/// custom-0 major opcode, home of the CTAG group.
pub const OPC_CUSTOM0: u32 = 0b000_1011;

pub const CTAG_FUNCT3_SET: u32 = 0b000;
pub const CTAG_FUNCT3_CLR: u32 = 0b001;
pub const CTAG_FUNCT3_RDT: u32 = 0b010;

const ECALL_WORD: u32 = 0x0000_0073;
const EBREAK_WORD: u32 = 0x0010_0073;
const FENCE_IORW: i64 = 0x0ff;

/// An integer register index, `x0..=x31`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Reg(u8);

impl Reg {
    pub const ZERO: Reg = Reg(0);
    pub const RA: Reg = Reg(1);
    pub const SP: Reg = Reg(2);
    pub const A0: Reg = Reg(10);
    pub const A7: Reg = Reg(17);

    pub fn new(index: u8) -> Option<Reg> {
        (index < 32).then_some(Reg(index))
    }

    pub fn a(n: u8) -> Reg {
        assert!(n < 8);
        Reg(10 + n)
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    fn from_field(word: u32, shift: u32) -> Reg {
        Reg(((word >> shift) & 0x1f) as u8)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

/// Encoding format of an operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    R,
    I,
    Shift64,
    Shift32,
    Load,
    Store,
    Branch,
    Upper,
    Jal,
    Jalr,
    Fence,
    System,
    Ctag,
}

/// Propagation class: selects exactly one tag rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    AluRR,
    AluRI,
    Load,
    Store,
    Branch,
    Jump,
    Upper,
    System,
    Ctag,
}

/// Cycle-cost category.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostClass {
    Alu,
    Mul,
    Div,
    Load,
    Store,
    Branch,
    Jump,
    System,
    Ctag,
}

macro_rules! ops {
    ($( $variant:ident => $mnem:literal, $fmt:ident, $opc:expr, $f3:expr, $f7:expr; )*) => {
        /// A supported operation.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum Op { $( $variant, )* }

        impl Op {
            pub const ALL: &'static [Op] = &[ $( Op::$variant, )* ];

            pub fn mnemonic(self) -> &'static str {
                match self { $( Op::$variant => $mnem, )* }
            }

            pub fn format(self) -> Format {
                match self { $( Op::$variant => Format::$fmt, )* }
            }

            /// (major opcode, funct3, funct7; funct6 for 64-bit shifts)
            fn fields(self) -> (u32, u32, u32) {
                match self { $( Op::$variant => ($opc, $f3, $f7), )* }
            }

            pub fn from_mnemonic(s: &str) -> Option<Op> {
                match s { $( $mnem => Some(Op::$variant), )* _ => None }
            }
        }
    };
}

ops! {
    Lui => "lui", Upper, OPC_LUI, 0, 0;
    Auipc => "auipc", Upper, OPC_AUIPC, 0, 0;
    Jal => "jal", Jal, OPC_JAL, 0, 0;
    Jalr => "jalr", Jalr, OPC_JALR, 0, 0;
    Beq => "beq", Branch, OPC_BRANCH, 0, 0;
    Bne => "bne", Branch, OPC_BRANCH, 1, 0;
    Blt => "blt", Branch, OPC_BRANCH, 4, 0;
    Bge => "bge", Branch, OPC_BRANCH, 5, 0;
    Bltu => "bltu", Branch, OPC_BRANCH, 6, 0;
    Bgeu => "bgeu", Branch, OPC_BRANCH, 7, 0;
    Lb => "lb", Load, OPC_LOAD, 0, 0;
    Lh => "lh", Load, OPC_LOAD, 1, 0;
    Lw => "lw", Load, OPC_LOAD, 2, 0;
    Ld => "ld", Load, OPC_LOAD, 3, 0;
    Lbu => "lbu", Load, OPC_LOAD, 4, 0;
    Lhu => "lhu", Load, OPC_LOAD, 5, 0;
    Lwu => "lwu", Load, OPC_LOAD, 6, 0;
    Sb => "sb", Store, OPC_STORE, 0, 0;
    Sh => "sh", Store, OPC_STORE, 1, 0;
    Sw => "sw", Store, OPC_STORE, 2, 0;
    Sd => "sd", Store, OPC_STORE, 3, 0;
    Addi => "addi", I, OPC_OP_IMM, 0, 0;
    Slti => "slti", I, OPC_OP_IMM, 2, 0;
    Sltiu => "sltiu", I, OPC_OP_IMM, 3, 0;
    Xori => "xori", I, OPC_OP_IMM, 4, 0;
    Ori => "ori", I, OPC_OP_IMM, 6, 0;
    Andi => "andi", I, OPC_OP_IMM, 7, 0;
    Slli => "slli", Shift64, OPC_OP_IMM, 1, 0b000000;
    Srli => "srli", Shift64, OPC_OP_IMM, 5, 0b000000;
    Srai => "srai", Shift64, OPC_OP_IMM, 5, 0b010000;
    Add => "add", R, OPC_OP, 0, 0b000_0000;
    Sub => "sub", R, OPC_OP, 0, 0b010_0000;
    Sll => "sll", R, OPC_OP, 1, 0;
    Slt => "slt", R, OPC_OP, 2, 0;
    Sltu => "sltu", R, OPC_OP, 3, 0;
    Xor => "xor", R, OPC_OP, 4, 0;
    Srl => "srl", R, OPC_OP, 5, 0b000_0000;
    Sra => "sra", R, OPC_OP, 5, 0b010_0000;
    Or => "or", R, OPC_OP, 6, 0;
    And => "and", R, OPC_OP, 7, 0;
    Addiw => "addiw", I, OPC_OP_IMM_32, 0, 0;
    Slliw => "slliw", Shift32, OPC_OP_IMM_32, 1, 0b000_0000;
    Srliw => "srliw", Shift32, OPC_OP_IMM_32, 5, 0b000_0000;
    Sraiw => "sraiw", Shift32, OPC_OP_IMM_32, 5, 0b010_0000;
    Addw => "addw", R, OPC_OP_32, 0, 0b000_0000;
    Subw => "subw", R, OPC_OP_32, 0, 0b010_0000;
    Sllw => "sllw", R, OPC_OP_32, 1, 0;
    Srlw => "srlw", R, OPC_OP_32, 5, 0b000_0000;
    Sraw => "sraw", R, OPC_OP_32, 5, 0b010_0000;
    Mul => "mul", R, OPC_OP, 0, 1;
    Mulh => "mulh", R, OPC_OP, 1, 1;
    Mulhsu => "mulhsu", R, OPC_OP, 2, 1;
    Mulhu => "mulhu", R, OPC_OP, 3, 1;
    Div => "div", R, OPC_OP, 4, 1;
    Divu => "divu", R, OPC_OP, 5, 1;
    Rem => "rem", R, OPC_OP, 6, 1;
    Remu => "remu", R, OPC_OP, 7, 1;
    Mulw => "mulw", R, OPC_OP_32, 0, 1;
    Divw => "divw", R, OPC_OP_32, 4, 1;
    Divuw => "divuw", R, OPC_OP_32, 5, 1;
    Remw => "remw", R, OPC_OP_32, 6, 1;
    Remuw => "remuw", R, OPC_OP_32, 7, 1;
    Fence => "fence", Fence, OPC_MISC_MEM, 0, 0;
    Ecall => "ecall", System, OPC_SYSTEM, 0, 0;
    Ebreak => "ebreak", System, OPC_SYSTEM, 0, 0;
    CtagSet => "ctag.set", Ctag, OPC_CUSTOM0, CTAG_FUNCT3_SET, 0;
    CtagClr => "ctag.clr", Ctag, OPC_CUSTOM0, CTAG_FUNCT3_CLR, 0;
    CtagRdt => "ctag.rdt", Ctag, OPC_CUSTOM0, CTAG_FUNCT3_RDT, 0;
}

impl Op {
    pub fn class(self) -> Class {
        match self.format() {
            Format::R => Class::AluRR,
            Format::I | Format::Shift64 | Format::Shift32 => Class::AluRI,
            Format::Load => Class::Load,
            Format::Store => Class::Store,
            Format::Branch => Class::Branch,
            Format::Upper => Class::Upper,
            Format::Jal | Format::Jalr => Class::Jump,
            Format::Fence | Format::System => Class::System,
            Format::Ctag => Class::Ctag,
        }
    }

    pub fn cost_class(self) -> CostClass {
        use Op::*;
        match self {
            Mul | Mulh | Mulhsu | Mulhu | Mulw => CostClass::Mul,
            Div | Divu | Rem | Remu | Divw | Divuw | Remw | Remuw => CostClass::Div,
            _ => match self.class() {
                Class::AluRR | Class::AluRI | Class::Upper => CostClass::Alu,
                Class::Load => CostClass::Load,
                Class::Store => CostClass::Store,
                Class::Branch => CostClass::Branch,
                Class::Jump => CostClass::Jump,
                Class::System => CostClass::System,
                Class::Ctag => CostClass::Ctag,
            },
        }
    }

    /// Access width in bytes for loads and stores.
    pub fn mem_width(self) -> Option<u64> {
        use Op::*;
        Some(match self {
            Lb | Lbu | Sb => 1,
            Lh | Lhu | Sh => 2,
            Lw | Lwu | Sw => 4,
            Ld | Sd => 8,
            _ => return None,
        })
    }

    pub fn is_signed_load(self) -> bool {
        matches!(self, Op::Lb | Op::Lh | Op::Lw)
    }

    fn reads_rs1(self) -> bool {
        !matches!(
            self.format(),
            Format::Upper | Format::Jal | Format::Fence | Format::System
        )
    }

    fn reads_rs2(self) -> bool {
        match self.format() {
            Format::R | Format::Store | Format::Branch => true,
            Format::Ctag => self != Op::CtagRdt,
            _ => false,
        }
    }
}

/// A decoded instruction. Fields an operation does not use are zero, so
/// `decode(i.encode()) == Ok(i)` for every valid `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub op: Op,
    pub rd: Reg,
    pub rs1: Reg,
    pub rs2: Reg,
    /// Sign-extended immediate. For `lui`/`auipc` this is the shifted value
    /// (`field << 12`, sign-extended); for `fence` it is the raw 12-bit field.
    pub imm: i64,
}

impl Instruction {
    pub fn new(op: Op, rd: Reg, rs1: Reg, rs2: Reg, imm: i64) -> Self {
        Instruction { op, rd, rs1, rs2, imm }
    }

    pub fn class(&self) -> Class {
        self.op.class()
    }

    /// Register sources actually read by this instruction.
    pub fn sources(&self) -> impl Iterator<Item = Reg> {
        let a = self.op.reads_rs1().then_some(self.rs1);
        let b = self.op.reads_rs2().then_some(self.rs2);
        a.into_iter().chain(b)
    }

    /// Whether the immediate is encodable for this operation.
    pub fn imm_in_range(&self) -> bool {
        let imm = self.imm;
        match self.op.format() {
            Format::I | Format::Load | Format::Store | Format::Jalr => (-2048..=2047).contains(&imm),
            Format::Shift64 => (0..64).contains(&imm),
            Format::Shift32 => (0..32).contains(&imm),
            Format::Branch => (-4096..=4094).contains(&imm) && imm % 2 == 0,
            Format::Jal => (-(1 << 20)..(1 << 20)).contains(&imm) && imm % 2 == 0,
            Format::Upper => imm & 0xfff == 0 && (i64::from(i32::MIN)..=i64::from(i32::MAX)).contains(&imm),
            Format::Fence => (0..4096).contains(&imm),
            Format::System | Format::R | Format::Ctag => imm == 0,
        }
    }

    /// Pack into a 32-bit word. The immediate must satisfy
    /// [`Instruction::imm_in_range`]; out-of-range bits are truncated.
    pub fn encode(&self) -> u32 {
        let (opc, f3, f7) = self.op.fields();
        let rd = (self.rd.0 as u32) << 7;
        let rs1 = (self.rs1.0 as u32) << 15;
        let rs2 = (self.rs2.0 as u32) << 20;
        let f3 = f3 << 12;
        let imm = self.imm as u32;
        match self.op.format() {
            Format::R | Format::Ctag => (f7 << 25) | rs2 | rs1 | f3 | rd | opc,
            Format::I | Format::Load | Format::Jalr => ((imm & 0xfff) << 20) | rs1 | f3 | rd | opc,
            Format::Shift64 => (f7 << 26) | ((imm & 0x3f) << 20) | rs1 | f3 | rd | opc,
            Format::Shift32 => (f7 << 25) | ((imm & 0x1f) << 20) | rs1 | f3 | rd | opc,
            Format::Store => (((imm >> 5) & 0x7f) << 25) | rs2 | rs1 | f3 | ((imm & 0x1f) << 7) | opc,
            Format::Branch => {
                (((imm >> 12) & 1) << 31)
                    | (((imm >> 5) & 0x3f) << 25)
                    | rs2
                    | rs1
                    | f3
                    | (((imm >> 1) & 0xf) << 8)
                    | (((imm >> 11) & 1) << 7)
                    | opc
            }
            Format::Upper => (imm & 0xffff_f000) | rd | opc,
            Format::Jal => {
                (((imm >> 20) & 1) << 31)
                    | (((imm >> 1) & 0x3ff) << 21)
                    | (((imm >> 11) & 1) << 20)
                    | (((imm >> 12) & 0xff) << 12)
                    | rd
                    | opc
            }
            Format::Fence => ((imm & 0xfff) << 20) | opc,
            Format::System => match self.op {
                Op::Ebreak => EBREAK_WORD,
                _ => ECALL_WORD,
            },
        }
    }
}

impl fmt::Display for Instruction {
    /// Assembler-compatible disassembly. Branch and jump targets print as
    /// pc-relative byte offsets.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.op.mnemonic();
        let Instruction { rd, rs1, rs2, imm, .. } = *self;
        match self.op.format() {
            Format::R | Format::Ctag => write!(f, "{m} {rd}, {rs1}, {rs2}"),
            Format::I | Format::Shift64 | Format::Shift32 => write!(f, "{m} {rd}, {rs1}, {imm}"),
            Format::Load | Format::Jalr => write!(f, "{m} {rd}, {imm}({rs1})"),
            Format::Store => write!(f, "{m} {rs2}, {imm}({rs1})"),
            Format::Branch => write!(f, "{m} {rs1}, {rs2}, {imm}"),
            Format::Upper => write!(f, "{m} {rd}, {:#x}", (imm >> 12) & 0xfffff),
            Format::Jal => write!(f, "{m} {rd}, {imm}"),
            Format::Fence | Format::System => f.write_str(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal instruction {0:#010x}")]
pub struct IllegalInstruction(pub u32);

fn sext(value: u32, bits: u32) -> i64 {
    let shift = 64 - bits;
    ((value as u64) << shift) as i64 >> shift
}

/// Decode a 32-bit instruction word.
pub fn decode(word: u32) -> Result<Instruction, IllegalInstruction> {
    let illegal = || IllegalInstruction(word);
    let opc = word & 0x7f;
    let f3 = (word >> 12) & 0x7;
    let f7 = word >> 25;
    let rd = Reg::from_field(word, 7);
    let rs1 = Reg::from_field(word, 15);
    let rs2 = Reg::from_field(word, 20);
    let i_imm = sext(word >> 20, 12);
    let z = Reg::ZERO;

    let find = |pred: &dyn Fn(Op) -> bool| Op::ALL.iter().copied().find(|&op| pred(op));

    let inst = match opc {
        OPC_LUI | OPC_AUIPC => {
            let op = if opc == OPC_LUI { Op::Lui } else { Op::Auipc };
            Instruction::new(op, rd, z, z, sext(word & 0xffff_f000, 32))
        }
        OPC_JAL => {
            let imm = ((word >> 31) << 20)
                | (((word >> 21) & 0x3ff) << 1)
                | (((word >> 20) & 1) << 11)
                | (((word >> 12) & 0xff) << 12);
            Instruction::new(Op::Jal, rd, z, z, sext(imm, 21))
        }
        OPC_JALR if f3 == 0 => Instruction::new(Op::Jalr, rd, rs1, z, i_imm),
        OPC_BRANCH => {
            let op = find(&|op| op.format() == Format::Branch && op.fields().1 == f3).ok_or_else(illegal)?;
            let imm = ((word >> 31) << 12)
                | (((word >> 25) & 0x3f) << 5)
                | (((word >> 8) & 0xf) << 1)
                | (((word >> 7) & 1) << 11);
            Instruction::new(op, z, rs1, rs2, sext(imm, 13))
        }
        OPC_LOAD => {
            let op = find(&|op| op.format() == Format::Load && op.fields().1 == f3).ok_or_else(illegal)?;
            Instruction::new(op, rd, rs1, z, i_imm)
        }
        OPC_STORE => {
            let op = find(&|op| op.format() == Format::Store && op.fields().1 == f3).ok_or_else(illegal)?;
            let imm = ((word >> 25) << 5) | ((word >> 7) & 0x1f);
            Instruction::new(op, z, rs1, rs2, sext(imm, 12))
        }
        OPC_OP_IMM | OPC_OP_IMM_32 => {
            let (shift_fmt, shamt_bits, funct) = if opc == OPC_OP_IMM {
                (Format::Shift64, 6, word >> 26)
            } else {
                (Format::Shift32, 5, word >> 25)
            };
            if f3 == 1 || f3 == 5 {
                let op = find(&|op| {
                    op.format() == shift_fmt && op.fields().0 == opc && op.fields().1 == f3 && op.fields().2 == funct
                })
                .ok_or_else(illegal)?;
                let shamt = (word >> 20) & ((1 << shamt_bits) - 1);
                Instruction::new(op, rd, rs1, z, i64::from(shamt))
            } else {
                let op = find(&|op| op.format() == Format::I && op.fields().0 == opc && op.fields().1 == f3)
                    .ok_or_else(illegal)?;
                Instruction::new(op, rd, rs1, z, i_imm)
            }
        }
        OPC_OP | OPC_OP_32 => {
            let op = find(&|op| op.format() == Format::R && op.fields() == (opc, f3, f7)).ok_or_else(illegal)?;
            Instruction::new(op, rd, rs1, rs2, 0)
        }
        OPC_MISC_MEM if f3 == 0 && rd == z && rs1 == z => Instruction::new(Op::Fence, z, z, z, i64::from(word >> 20)),
        OPC_SYSTEM if word == ECALL_WORD => Instruction::new(Op::Ecall, z, z, z, 0),
        OPC_SYSTEM if word == EBREAK_WORD => Instruction::new(Op::Ebreak, z, z, z, 0),
        OPC_CUSTOM0 if f7 == 0 => {
            let op = match f3 {
                CTAG_FUNCT3_SET => Op::CtagSet,
                CTAG_FUNCT3_CLR => Op::CtagClr,
                CTAG_FUNCT3_RDT => Op::CtagRdt,
                _ => return Err(illegal()),
            };
            Instruction::new(op, rd, rs1, rs2, 0)
        }
        _ => return Err(illegal()),
    };
    Ok(inst)
}

/// Canonical `fence` (iorw, iorw).
pub fn fence() -> Instruction {
    Instruction::new(Op::Fence, Reg::ZERO, Reg::ZERO, Reg::ZERO, FENCE_IORW)
}
