// SPDX-License-Identifier: Apache-2.0

//! A two-pass assembler for the supported RV64IM + CTAG subset.
//!
//! Pass one lays out every statement and collects labels; pass two encodes.
//! Pseudo-instructions expand to fixed sequences whose length depends only on
//! their literal operands, so layout never depends on label values.
//!
//! Numeric branch and jump operands are pc-relative byte offsets; labels
//! resolve to absolute addresses.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpu::isa::{fence, Format, Instruction, Op, Reg};
use crate::cpu::{MachineState, TaggedWord};
use crate::mem::MemorySystem;

pub const DEFAULT_TEXT_BASE: u64 = 0x8000_0000;
pub const DEFAULT_DATA_BASE: u64 = 0x8010_0000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmErrorKind {
    UnknownMnemonic(String),
    UnknownDirective(String),
    UndefinedLabel(String),
    DuplicateLabel(String),
    ImmediateOutOfRange(String),
    MisalignedTarget(u64),
    Syntax(String),
    SegmentOverlap(u64),
}

impl fmt::Display for AsmErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AsmErrorKind::UnknownMnemonic(m) => write!(f, "unknown mnemonic `{m}`"),
            AsmErrorKind::UnknownDirective(d) => write!(f, "unknown directive `{d}`"),
            AsmErrorKind::UndefinedLabel(l) => write!(f, "undefined label `{l}`"),
            AsmErrorKind::DuplicateLabel(l) => write!(f, "duplicate label `{l}`"),
            AsmErrorKind::ImmediateOutOfRange(what) => write!(f, "immediate out of range: {what}"),
            AsmErrorKind::MisalignedTarget(a) => write!(f, "target {a:#x} is not 4-byte aligned"),
            AsmErrorKind::Syntax(s) => write!(f, "syntax error: {s}"),
            AsmErrorKind::SegmentOverlap(a) => write!(f, "segment at {a:#x} overlaps another segment"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{origin}:{line}: {kind}")]
pub struct AsmError {
    pub origin: String,
    pub line: usize,
    pub kind: AsmErrorKind,
}

/// Source text split into numbered lines.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub origin: String,
    pub lines: Vec<(usize, String)>,
}

impl SourceUnit {
    pub fn new(origin: impl Into<String>, text: &str) -> Self {
        SourceUnit {
            origin: origin.into(),
            lines: text.lines().enumerate().map(|(i, l)| (i + 1, l.to_string())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Text,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub base: u64,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub kind: SegmentKind,
}

impl Segment {
    pub fn end(&self) -> u64 {
        self.base + self.bytes.len() as u64
    }
}

/// An assembled memory image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub segments: Vec<Segment>,
    pub entry: u64,
    pub symbols: BTreeMap<String, u64>,
}

const IMAGE_FORMAT: &str = "conch-image-v1";

#[derive(Serialize, Deserialize)]
struct ImageFile {
    format: String,
    #[serde(flatten)]
    program: Program,
}

impl Program {
    pub fn symbol(&self, name: &str) -> Option<u64> {
        self.symbols.get(name).copied()
    }

    /// Serialize as a JSON image file.
    pub fn to_image(&self) -> String {
        let file = ImageFile {
            format: IMAGE_FORMAT.to_string(),
            program: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("image serialization")
    }

    /// Parse a JSON image file; `None` if `text` is not one.
    pub fn from_image(text: &str) -> Option<Program> {
        let file: ImageFile = serde_json::from_str(text).ok()?;
        (file.format == IMAGE_FORMAT).then_some(file.program)
    }

    /// First pair of overlapping segments, if any.
    pub fn overlap(&self) -> Option<(&Segment, &Segment)> {
        let mut sorted: Vec<&Segment> = self.segments.iter().filter(|s| !s.bytes.is_empty()).collect();
        sorted.sort_by_key(|s| s.base);
        sorted.windows(2).find(|w| w[0].end() > w[1].base).map(|w| (w[0], w[1]))
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}

/// Register by architectural (`x7`) or ABI (`t2`) name.
pub fn parse_reg(s: &str) -> Option<Reg> {
    const ABI: [&str; 32] = [
        "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7",
        "s2", "s3", "s4", "s5", "s6", "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6",
    ];
    let s = s.trim();
    if let Some(n) = s.strip_prefix('x') {
        if let Ok(i) = n.parse::<u8>() {
            if !n.starts_with('+') && (n.len() == 1 || !n.starts_with('0')) {
                return Reg::new(i);
            }
        }
    }
    if s == "fp" {
        return Reg::new(8);
    }
    ABI.iter().position(|&a| a == s).and_then(|i| Reg::new(i as u8))
}

fn parse_int(s: &str) -> Option<i128> {
    let s = s.trim();
    if let Some(c) = s.strip_prefix('\'').and_then(|r| r.strip_suffix('\'')) {
        let bytes = unescape(c)?;
        return (bytes.len() == 1).then(|| i128::from(bytes[0]));
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let body = body.replace('_', "");
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()?
    } else if let Some(b) = body.strip_prefix("0b") {
        u64::from_str_radix(b, 2).ok()?
    } else {
        if body.is_empty() || !body.bytes().all(|c| c.is_ascii_digit()) {
            return None;
        }
        body.parse::<u64>().ok()?
    };
    Some(if neg { -i128::from(v) } else { i128::from(v) })
}

fn unescape(s: &str) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            let mut buf = [0u8; 4];
            out.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            continue;
        }
        out.push(match chars.next()? {
            'n' => b'\n',
            't' => b'\t',
            'r' => b'\r',
            '0' => 0,
            '\\' => b'\\',
            '"' => b'"',
            '\'' => b'\'',
            _ => return None,
        });
    }
    Some(out)
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

/// Strip a `#` comment, ignoring `#` inside string or char literals.
fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut in_char = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_str || in_char => escaped = true,
            '"' if !in_char => in_str = !in_str,
            '\'' if !in_str => in_char = !in_char,
            '#' if !in_str && !in_char => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Split operands on top-level commas (not inside quotes).
fn split_operands(s: &str) -> Vec<String> {
    let s = s.trim();
    if s.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_str = false;
    let mut escaped = false;
    for c in s.chars() {
        if escaped {
            escaped = false;
            cur.push(c);
            continue;
        }
        match c {
            '\\' if in_str => {
                escaped = true;
                cur.push(c);
            }
            '"' => {
                in_str = !in_str;
                cur.push(c);
            }
            ',' if !in_str => out.push(std::mem::take(&mut cur).trim().to_string()),
            _ => cur.push(c),
        }
    }
    out.push(cur.trim().to_string());
    out
}

#[derive(Debug, Clone)]
enum Stmt {
    Directive(String, Vec<String>),
    Instr(String, Vec<String>),
}

#[derive(Debug, Clone)]
struct Line {
    number: usize,
    labels: Vec<String>,
    stmt: Option<Stmt>,
}

fn parse_line(number: usize, text: &str) -> Result<Line, AsmErrorKind> {
    let mut rest = strip_comment(text).trim();
    let mut labels = Vec::new();
    while let Some(colon) = rest.find(':') {
        let head = rest[..colon].trim();
        if head.contains(char::is_whitespace) || head.contains('"') || head.contains('\'') {
            break;
        }
        if !is_label_name(head) {
            return Err(AsmErrorKind::Syntax(format!("invalid label `{head}`")));
        }
        labels.push(head.to_string());
        rest = rest[colon + 1..].trim();
    }
    if rest.is_empty() {
        return Ok(Line {
            number,
            labels,
            stmt: None,
        });
    }
    let (word, args) = match rest.find(char::is_whitespace) {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, ""),
    };
    let operands = split_operands(args);
    let stmt = if word.starts_with('.') {
        Stmt::Directive(word.to_ascii_lowercase(), operands)
    } else {
        Stmt::Instr(word.to_ascii_lowercase(), operands)
    };
    Ok(Line {
        number,
        labels,
        stmt: Some(stmt),
    })
}

type Res<T> = Result<T, AsmErrorKind>;

fn syntax<T>(msg: impl Into<String>) -> Res<T> {
    Err(AsmErrorKind::Syntax(msg.into()))
}

fn expect_n(ops: &[String], n: usize, m: &str) -> Res<()> {
    if ops.len() == n {
        Ok(())
    } else {
        syntax(format!("`{m}` takes {n} operand(s), got {}", ops.len()))
    }
}

fn reg(s: &str) -> Res<Reg> {
    parse_reg(s).ok_or_else(|| AsmErrorKind::Syntax(format!("expected register, got `{s}`")))
}

fn imm(s: &str) -> Res<i64> {
    let v = parse_int(s).ok_or_else(|| AsmErrorKind::Syntax(format!("expected integer, got `{s}`")))?;
    i64::try_from(v)
        .or_else(|_| u64::try_from(v).map(|u| u as i64))
        .map_err(|_| AsmErrorKind::ImmediateOutOfRange(s.to_string()))
}

/// `off(reg)` or `(reg)`.
fn mem_operand(s: &str) -> Res<(i64, Reg)> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| AsmErrorKind::Syntax(format!("expected offset(reg), got `{s}`")))?;
    let inner = s[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| AsmErrorKind::Syntax(format!("unterminated `{s}`")))?;
    let off = if s[..open].trim().is_empty() {
        0
    } else {
        imm(&s[..open])?
    };
    Ok((off, reg(inner)?))
}

/// Sequence loading a 64-bit constant, using only `lui`/`addi`/`addiw`/`slli`.
pub fn li_sequence(rd: Reg, value: i64) -> Vec<Instruction> {
    let z = Reg::ZERO;
    if (-2048..=2047).contains(&value) {
        return vec![Instruction::new(Op::Addi, rd, z, z, value)];
    }
    if i32::try_from(value).is_ok() {
        let hi = ((value + 0x800) >> 12) & 0xfffff;
        let lo = value - (((value + 0x800) >> 12) << 12);
        let upper = (((hi << 12) as u32) as i32) as i64;
        let mut seq = vec![Instruction::new(Op::Lui, rd, z, z, upper)];
        if lo != 0 {
            seq.push(Instruction::new(Op::Addiw, rd, rd, z, lo));
        }
        return seq;
    }
    let lo12 = (value << 52) >> 52;
    let hi52 = (value as u64).wrapping_add(0x800) >> 12;
    let shift = 12 + hi52.trailing_zeros();
    let hi = ((hi52 >> (shift - 12)) << shift) as i64 >> shift;
    let mut seq = li_sequence(rd, hi);
    seq.push(Instruction::new(Op::Slli, rd, rd, z, i64::from(shift)));
    if lo12 != 0 {
        seq.push(Instruction::new(Op::Addi, rd, rd, z, lo12));
    }
    seq
}

/// Number of machine words a statement expands to.
fn instr_len(m: &str, ops: &[String]) -> Res<u64> {
    Ok(match m {
        "li" => {
            expect_n(ops, 2, m)?;
            li_sequence(Reg::ZERO, imm(&ops[1])?).len() as u64
        }
        "la" => 2,
        _ if Op::from_mnemonic(m).is_some() || PSEUDO_ONE.contains(&m) => 1,
        _ => return Err(AsmErrorKind::UnknownMnemonic(m.to_string())),
    })
}

const PSEUDO_ONE: &[&str] = &[
    "nop", "mv", "not", "neg", "sext.w", "seqz", "snez", "j", "jr", "ret", "call", "beqz", "bnez", "blez", "bgez",
    "bltz", "bgtz", "bgt", "ble", "bgtu", "bleu",
];

struct Encoder<'a> {
    symbols: &'a BTreeMap<String, u64>,
    pc: u64,
}

impl Encoder<'_> {
    /// Branch/jump target as a pc-relative offset.
    fn target(&self, s: &str) -> Res<i64> {
        let s = s.trim();
        if let Some(v) = parse_int(s) {
            let off = i64::try_from(v).map_err(|_| AsmErrorKind::ImmediateOutOfRange(s.to_string()))?;
            if off % 4 != 0 {
                return Err(AsmErrorKind::MisalignedTarget(self.pc.wrapping_add(off as u64)));
            }
            return Ok(off);
        }
        let addr = self.address(s)?;
        if addr % 4 != 0 {
            return Err(AsmErrorKind::MisalignedTarget(addr));
        }
        Ok(addr.wrapping_sub(self.pc) as i64)
    }

    fn address(&self, label: &str) -> Res<u64> {
        self.symbols
            .get(label)
            .copied()
            .ok_or_else(|| AsmErrorKind::UndefinedLabel(label.to_string()))
    }

    fn check(&self, inst: Instruction, text: &str) -> Res<Instruction> {
        if inst.imm_in_range() {
            Ok(inst)
        } else {
            Err(AsmErrorKind::ImmediateOutOfRange(format!("{} in `{text}`", inst.imm)))
        }
    }

    fn real(&self, op: Op, ops: &[String]) -> Res<Instruction> {
        let m = op.mnemonic();
        let z = Reg::ZERO;
        let text = format!("{m} {}", ops.join(", "));
        let inst = match op.format() {
            Format::R | Format::Ctag => {
                expect_n(ops, 3, m)?;
                Instruction::new(op, reg(&ops[0])?, reg(&ops[1])?, reg(&ops[2])?, 0)
            }
            Format::I | Format::Shift64 | Format::Shift32 => {
                expect_n(ops, 3, m)?;
                Instruction::new(op, reg(&ops[0])?, reg(&ops[1])?, z, imm(&ops[2])?)
            }
            Format::Load => {
                expect_n(ops, 2, m)?;
                let (off, base) = mem_operand(&ops[1])?;
                Instruction::new(op, reg(&ops[0])?, base, z, off)
            }
            Format::Store => {
                expect_n(ops, 2, m)?;
                let (off, base) = mem_operand(&ops[1])?;
                Instruction::new(op, z, base, reg(&ops[0])?, off)
            }
            Format::Branch => {
                expect_n(ops, 3, m)?;
                Instruction::new(op, z, reg(&ops[0])?, reg(&ops[1])?, self.target(&ops[2])?)
            }
            Format::Upper => {
                expect_n(ops, 2, m)?;
                let field = imm(&ops[1])?;
                if !(-0x80000..=0xfffff).contains(&field) {
                    return Err(AsmErrorKind::ImmediateOutOfRange(text));
                }
                let upper = ((((field & 0xfffff) << 12) as u32) as i32) as i64;
                Instruction::new(op, reg(&ops[0])?, z, z, upper)
            }
            Format::Jal => match ops.len() {
                1 => Instruction::new(op, Reg::RA, z, z, self.target(&ops[0])?),
                2 => Instruction::new(op, reg(&ops[0])?, z, z, self.target(&ops[1])?),
                _ => return syntax("`jal` takes 1 or 2 operands"),
            },
            Format::Jalr => match ops.len() {
                1 => Instruction::new(op, Reg::RA, reg(&ops[0])?, z, 0),
                2 => {
                    let (off, base) = mem_operand(&ops[1])?;
                    Instruction::new(op, reg(&ops[0])?, base, z, off)
                }
                3 => Instruction::new(op, reg(&ops[0])?, reg(&ops[1])?, z, imm(&ops[2])?),
                _ => return syntax("`jalr` takes 1 to 3 operands"),
            },
            Format::Fence => {
                expect_n(ops, 0, m)?;
                fence()
            }
            Format::System => {
                expect_n(ops, 0, m)?;
                Instruction::new(op, z, z, z, 0)
            }
        };
        self.check(inst, &text)
    }

    fn expand(&self, m: &str, ops: &[String]) -> Res<Vec<Instruction>> {
        if let Some(op) = Op::from_mnemonic(m) {
            return Ok(vec![self.real(op, ops)?]);
        }
        let z = Reg::ZERO;
        let n = |k: usize| expect_n(ops, k, m);
        let one = |op: Op, rd: Reg, rs1: Reg, rs2: Reg, imm: i64| {
            self.check(Instruction::new(op, rd, rs1, rs2, imm), m).map(|i| vec![i])
        };
        match m {
            "nop" => {
                n(0)?;
                one(Op::Addi, z, z, z, 0)
            }
            "mv" => {
                n(2)?;
                one(Op::Addi, reg(&ops[0])?, reg(&ops[1])?, z, 0)
            }
            "not" => {
                n(2)?;
                one(Op::Xori, reg(&ops[0])?, reg(&ops[1])?, z, -1)
            }
            "neg" => {
                n(2)?;
                one(Op::Sub, reg(&ops[0])?, z, reg(&ops[1])?, 0)
            }
            "sext.w" => {
                n(2)?;
                one(Op::Addiw, reg(&ops[0])?, reg(&ops[1])?, z, 0)
            }
            "seqz" => {
                n(2)?;
                one(Op::Sltiu, reg(&ops[0])?, reg(&ops[1])?, z, 1)
            }
            "snez" => {
                n(2)?;
                one(Op::Sltu, reg(&ops[0])?, z, reg(&ops[1])?, 0)
            }
            "li" => {
                n(2)?;
                Ok(li_sequence(reg(&ops[0])?, imm(&ops[1])?))
            }
            "la" => {
                n(2)?;
                let rd = reg(&ops[0])?;
                let offset = self.address(&ops[1])?.wrapping_sub(self.pc) as i64;
                if i32::try_from(offset).is_err() {
                    return Err(AsmErrorKind::ImmediateOutOfRange(format!(
                        "`{}` is out of auipc reach",
                        ops[1]
                    )));
                }
                let hi = (offset + 0x800) >> 12;
                let lo = offset - (hi << 12);
                let upper = (((hi << 12) as u32) as i32) as i64;
                Ok(vec![
                    Instruction::new(Op::Auipc, rd, z, z, upper),
                    Instruction::new(Op::Addi, rd, rd, z, lo),
                ])
            }
            "j" => {
                n(1)?;
                one(Op::Jal, z, z, z, self.target(&ops[0])?)
            }
            "call" => {
                n(1)?;
                one(Op::Jal, Reg::RA, z, z, self.target(&ops[0])?)
            }
            "jr" => {
                n(1)?;
                one(Op::Jalr, z, reg(&ops[0])?, z, 0)
            }
            "ret" => {
                n(0)?;
                one(Op::Jalr, z, Reg::RA, z, 0)
            }
            "beqz" | "bnez" | "blez" | "bgez" | "bltz" | "bgtz" => {
                n(2)?;
                let (rs, t) = (reg(&ops[0])?, self.target(&ops[1])?);
                match m {
                    "beqz" => one(Op::Beq, z, rs, z, t),
                    "bnez" => one(Op::Bne, z, rs, z, t),
                    "blez" => one(Op::Bge, z, z, rs, t),
                    "bgez" => one(Op::Bge, z, rs, z, t),
                    "bltz" => one(Op::Blt, z, rs, z, t),
                    _ => one(Op::Blt, z, z, rs, t),
                }
            }
            "bgt" | "ble" | "bgtu" | "bleu" => {
                n(3)?;
                let (a, b, t) = (reg(&ops[0])?, reg(&ops[1])?, self.target(&ops[2])?);
                let op = match m {
                    "bgt" => Op::Blt,
                    "ble" => Op::Bge,
                    "bgtu" => Op::Bltu,
                    _ => Op::Bgeu,
                };
                one(op, z, b, a, t)
            }
            _ => Err(AsmErrorKind::UnknownMnemonic(m.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Text,
    Data,
}

struct Chunk {
    section: Section,
    base: u64,
    bytes: Vec<u8>,
    line: usize,
}

struct Layout {
    cursor: [u64; 2],
    current: Section,
}

impl Layout {
    fn new() -> Self {
        Layout {
            cursor: [DEFAULT_TEXT_BASE, DEFAULT_DATA_BASE],
            current: Section::Text,
        }
    }

    fn pc(&self) -> u64 {
        self.cursor[self.current as usize]
    }

    fn advance(&mut self, n: u64) {
        self.cursor[self.current as usize] += n;
    }

    fn set(&mut self, addr: u64) {
        self.cursor[self.current as usize] = addr;
    }
}

fn data_width(d: &str) -> Option<u64> {
    Some(match d {
        ".byte" => 1,
        ".half" => 2,
        ".word" => 4,
        ".dword" => 8,
        _ => return None,
    })
}

fn string_arg(ops: &[String], d: &str) -> Res<Vec<u8>> {
    expect_n(ops, 1, d)?;
    let s = ops[0].trim();
    let inner = s
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| AsmErrorKind::Syntax(format!("`{d}` expects a quoted string")))?;
    unescape(inner).ok_or_else(|| AsmErrorKind::Syntax(format!("bad escape in {s}")))
}

fn align_arg(ops: &[String]) -> Res<u64> {
    expect_n(ops, 1, ".align")?;
    let n = imm(&ops[0])?;
    if !(0..=12).contains(&n) {
        return Err(AsmErrorKind::ImmediateOutOfRange(format!(".align {n}")));
    }
    Ok(1 << n)
}

fn count_arg(ops: &[String], d: &str) -> Res<u64> {
    expect_n(ops, 1, d)?;
    u64::try_from(imm(&ops[0])?).map_err(|_| AsmErrorKind::ImmediateOutOfRange(ops[0].clone()))
}

/// Size in bytes a directive occupies at the current location. Applies
/// section switches and `.org` to `layout`.
fn directive_layout(d: &str, ops: &[String], layout: &mut Layout) -> Res<u64> {
    match d {
        ".text" => layout.current = Section::Text,
        ".data" => layout.current = Section::Data,
        ".org" => {
            expect_n(ops, 1, d)?;
            layout.set(imm(&ops[0])? as u64);
        }
        ".globl" | ".global" => {}
        ".align" => {
            let a = align_arg(ops)?;
            return Ok(layout.pc().next_multiple_of(a) - layout.pc());
        }
        ".asciz" | ".string" => return Ok(string_arg(ops, d)?.len() as u64 + 1),
        ".ascii" => return Ok(string_arg(ops, d)?.len() as u64),
        ".zero" | ".space" => return count_arg(ops, d),
        _ => match data_width(d) {
            Some(w) => {
                if ops.is_empty() {
                    return syntax(format!("`{d}` needs at least one value"));
                }
                return Ok(w * ops.len() as u64);
            }
            None => return Err(AsmErrorKind::UnknownDirective(d.to_string())),
        },
    }
    Ok(0)
}

fn data_value(s: &str, width: u64, symbols: &BTreeMap<String, u64>) -> Res<u64> {
    let v: i128 = match parse_int(s) {
        Some(v) => v,
        None if is_label_name(s.trim()) => i128::from(
            *symbols
                .get(s.trim())
                .ok_or_else(|| AsmErrorKind::UndefinedLabel(s.trim().to_string()))?,
        ),
        None => return syntax(format!("expected value, got `{s}`")),
    };
    let bits = 8 * width as u32;
    let min = -(1i128 << (bits - 1));
    let max = (1i128 << bits) - 1;
    if v < min || v > max {
        return Err(AsmErrorKind::ImmediateOutOfRange(format!(
            "{s} does not fit in {width} byte(s)"
        )));
    }
    Ok(v as u64)
}

/// Assemble a source unit into a program image.
pub fn assemble(src: &SourceUnit) -> Result<Program, AsmError> {
    let err = |line: usize, kind: AsmErrorKind| AsmError {
        origin: src.origin.clone(),
        line,
        kind,
    };

    let mut lines = Vec::with_capacity(src.lines.len());
    for (n, text) in &src.lines {
        lines.push(parse_line(*n, text).map_err(|k| err(*n, k))?);
    }

    // Pass one: layout and symbols.
    let mut symbols = BTreeMap::new();
    let mut globals = Vec::new();
    let mut layout = Layout::new();
    let mut addrs = Vec::with_capacity(lines.len());
    for line in &lines {
        for label in &line.labels {
            if symbols.insert(label.clone(), layout.pc()).is_some() {
                return Err(err(line.number, AsmErrorKind::DuplicateLabel(label.clone())));
            }
        }
        let size = match &line.stmt {
            None => 0,
            Some(Stmt::Directive(d, ops)) => {
                if d == ".globl" || d == ".global" {
                    globals.extend(ops.iter().map(|o| (line.number, o.clone())));
                }
                directive_layout(d, ops, &mut layout).map_err(|k| err(line.number, k))?
            }
            Some(Stmt::Instr(m, ops)) => 4 * instr_len(m, ops).map_err(|k| err(line.number, k))?,
        };
        addrs.push((layout.current, layout.pc()));
        layout.advance(size);
    }
    for (n, g) in globals {
        if !symbols.contains_key(&g) {
            return Err(err(n, AsmErrorKind::UndefinedLabel(g)));
        }
    }

    // Pass two: encode.
    let mut chunks: Vec<Chunk> = Vec::new();
    for (line, &(section, pc)) in lines.iter().zip(&addrs) {
        let bytes = match &line.stmt {
            None => continue,
            Some(Stmt::Directive(d, ops)) => emit_directive(d, ops, pc, &symbols).map_err(|k| err(line.number, k))?,
            Some(Stmt::Instr(m, ops)) => {
                if pc % 4 != 0 {
                    return Err(err(line.number, AsmErrorKind::MisalignedTarget(pc)));
                }
                let enc = Encoder { symbols: &symbols, pc };
                let seq = enc.expand(m, ops).map_err(|k| err(line.number, k))?;
                seq.iter().map(Instruction::encode).flat_map(u32::to_le_bytes).collect()
            }
        };
        if bytes.is_empty() {
            continue;
        }
        match chunks.last_mut() {
            Some(c) if c.section == section && c.base + c.bytes.len() as u64 == pc => c.bytes.extend(bytes),
            _ => {
                // Merge into an existing chunk of the same section if contiguous.
                if let Some(c) = chunks
                    .iter_mut()
                    .find(|c| c.section == section && c.base + c.bytes.len() as u64 == pc)
                {
                    c.bytes.extend(bytes);
                } else {
                    chunks.push(Chunk {
                        section,
                        base: pc,
                        bytes,
                        line: line.number,
                    });
                }
            }
        }
    }

    let mut sorted: Vec<&Chunk> = chunks.iter().collect();
    sorted.sort_by_key(|c| c.base);
    for w in sorted.windows(2) {
        if w[0].base + w[0].bytes.len() as u64 > w[1].base {
            let later = if w[0].line > w[1].line { w[0] } else { w[1] };
            return Err(err(later.line, AsmErrorKind::SegmentOverlap(later.base)));
        }
    }

    let entry = symbols.get("_start").copied().unwrap_or_else(|| {
        chunks
            .iter()
            .filter(|c| c.section == Section::Text)
            .map(|c| c.base)
            .min()
            .unwrap_or(DEFAULT_TEXT_BASE)
    });
    if entry % 4 != 0 {
        let line = lines
            .iter()
            .find(|l| l.labels.iter().any(|n| n == "_start"))
            .map_or(0, |l| l.number);
        return Err(err(line, AsmErrorKind::MisalignedTarget(entry)));
    }

    let segments = chunks
        .into_iter()
        .map(|c| Segment {
            base: c.base,
            bytes: c.bytes,
            kind: match c.section {
                Section::Text => SegmentKind::Text,
                Section::Data => SegmentKind::Data,
            },
        })
        .collect();
    Ok(Program {
        segments,
        entry,
        symbols,
    })
}

fn emit_directive(d: &str, ops: &[String], pc: u64, symbols: &BTreeMap<String, u64>) -> Res<Vec<u8>> {
    Ok(match d {
        ".align" => {
            let a = align_arg(ops)?;
            vec![0; (pc.next_multiple_of(a) - pc) as usize]
        }
        ".asciz" | ".string" => {
            let mut s = string_arg(ops, d)?;
            s.push(0);
            s
        }
        ".ascii" => string_arg(ops, d)?,
        ".zero" | ".space" => vec![0; count_arg(ops, d)? as usize],
        _ => match data_width(d) {
            Some(w) => {
                let mut out = Vec::with_capacity((w as usize) * ops.len());
                for o in ops {
                    let v = data_value(o, w, symbols)?;
                    out.extend_from_slice(&v.to_le_bytes()[..w as usize]);
                }
                out
            }
            None => Vec::new(),
        },
    })
}

/// Bytes left between the initial stack pointer and the top of DRAM.
pub const STACK_RESERVE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LoadError {
    #[error("segment at {base:#x} ({len} bytes) overlaps another segment or lies outside DRAM")]
    SegmentOutOfBounds { base: u64, len: u64 },
}

/// Copy `program` into a freshly initialized memory with all tags clear,
/// point `pc` at the entry and `sp` just below the top of DRAM.
pub fn load_image(program: &Program, mem: &mut MemorySystem, st: &mut MachineState) -> Result<(), LoadError> {
    let out_of_bounds = |s: &Segment| LoadError::SegmentOutOfBounds {
        base: s.base,
        len: s.bytes.len() as u64,
    };
    if let Some((_, later)) = program.overlap() {
        return Err(out_of_bounds(later));
    }
    for seg in &program.segments {
        mem.write_image(seg.base, &seg.bytes).map_err(|_| out_of_bounds(seg))?;
    }
    for i in 0..32 {
        let r = Reg::new(i).expect("valid index");
        st.set_reg(r, TaggedWord::plain(st.reg(r).value));
    }
    st.pc = program.entry;
    st.set_reg(Reg::SP, TaggedWord::plain(mem.end() - STACK_RESERVE));
    Ok(())
}

/// Encode a CTAG instruction (`kind` is one of the three CTAG operations).
pub fn encode_ctag(kind: Op, rd: u8, rs1: u8, rs2: u8) -> Option<u32> {
    if kind.format() != Format::Ctag {
        return None;
    }
    Some(Instruction::new(kind, Reg::new(rd)?, Reg::new(rs1)?, Reg::new(rs2)?, 0).encode())
}
