// SPDX-License-Identifier: Apache-2.0

//! The byte-granular taint oracle, over-tagging measurement and the merged
//! multi-model run report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::cpu::isa::{Class, Instruction, Op, Reg};
use crate::cpu::TaggedWord;
use crate::mem::{CheckLog, CycleModel, MemStats, MemorySystem, TagCensus};

/// Register half of the oracle: which bytes of each register hold sensitive
/// data. The memory half lives in the memory system next to the tags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteOracle {
    regs: [u8; 32],
}

impl ByteOracle {
    pub fn reg(&self, r: Reg) -> u8 {
        self.regs[r.index()]
    }

    /// Byte taints a store of `inst` writes to memory.
    pub fn store_taint(&self, inst: &Instruction) -> u8 {
        let width = inst.op.mem_width().unwrap_or(8);
        let mask = (0xffu16 >> (8 - width)) as u8;
        self.regs[inst.rs2.index()] & mask
    }

    /// Update register taints for `inst`; `load_taint` holds the loaded
    /// bytes' taints, positionally, for loads.
    pub fn step(&mut self, inst: &Instruction, load_taint: u8) {
        let rd = inst.rd.index();
        match inst.class() {
            Class::Load => {
                let width = inst.op.mem_width().expect("load width");
                let mask = (0xffu16 >> (8 - width)) as u8;
                let mut t = load_taint & mask;
                if inst.op.is_signed_load() && width < 8 && t >> (width - 1) & 1 == 1 {
                    t |= !mask;
                }
                self.regs[rd] = t;
            }
            Class::AluRR | Class::AluRI => {
                let any = inst.sources().any(|r| self.regs[r.index()] != 0);
                self.regs[rd] = if any { 0xff } else { 0 };
            }
            Class::Upper | Class::Jump => self.regs[rd] = 0,
            Class::Ctag if inst.op == Op::CtagRdt => self.regs[rd] = 0,
            Class::System if inst.op == Op::Ecall => self.regs[Reg::A0.index()] = 0,
            _ => {}
        }
        self.regs[0] = 0;
    }
}

/// Bytes inside tagged words that the oracle says are clean, and their share
/// of all bytes in tagged words.
pub fn compute_overtagging(mem: &MemorySystem) -> (u64, f64) {
    overtagging_of(&mem.tag_census())
}

fn overtagging_of(census: &TagCensus) -> (u64, f64) {
    let total = census.words_tagged * 8;
    if total == 0 {
        return (0, 0.0);
    }
    (
        census.overtagged_bytes,
        census.overtagged_bytes as f64 * 100.0 / total as f64,
    )
}

/// Invariant checks collected during a checked run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CheckSummary {
    pub memory: CheckLogView,
    pub register_under_tags: u64,
    pub under_tagged_words_at_halt: u64,
    pub write_barrier_violations: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CheckLogView {
    pub under_tagged_words: u64,
    pub plaintext_writebacks: u64,
    pub load_mismatches: u64,
    pub flush_mismatches: u64,
}

impl From<CheckLog> for CheckLogView {
    fn from(l: CheckLog) -> Self {
        CheckLogView {
            under_tagged_words: l.under_tagged_words,
            plaintext_writebacks: l.plaintext_writebacks,
            load_mismatches: l.load_mismatches,
            flush_mismatches: l.flush_mismatches,
        }
    }
}

impl CheckSummary {
    pub fn violations(&self) -> u64 {
        let m = self.memory;
        m.under_tagged_words
            + m.plaintext_writebacks
            + m.load_mismatches
            + m.flush_mismatches
            + self.register_under_tags
            + self.under_tagged_words_at_halt
            + self.write_barrier_violations
    }
}

/// Everything one model's run produced, captured after the final flush.
#[derive(Debug, Clone)]
pub struct ModelRun {
    pub model: CycleModel,
    pub exit_code: i64,
    pub instret: u64,
    pub cycles: u64,
    pub histogram: BTreeMap<String, u64>,
    pub mem_stats: MemStats,
    pub census: TagCensus,
    pub overtag_cycles: u64,
    pub leak_averted_bytes: u64,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub registers: Vec<TaggedWord>,
    /// Non-zero or tagged logical words: (address, value, tag).
    pub memory: Vec<(u64, u64, bool)>,
    pub check: Option<CheckSummary>,
}

/// Exit code, registers, logical memory and stdout of one run.
pub type Architectural<'a> = (i64, &'a [TaggedWord], &'a [(u64, u64, bool)], &'a [u8]);

impl ModelRun {
    /// Architectural outcome, for cross-model comparison.
    pub fn architectural(&self) -> Architectural<'_> {
        (self.exit_code, &self.registers, &self.memory, &self.stdout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerModel<T> {
    pub baseline: T,
    pub model_a: Option<T>,
    pub model_b: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Overhead {
    pub model_a_pct: Option<f64>,
    pub model_b_pct: Option<f64>,
}

pub const OVERTAG_BASIS: &str = "overtag_ratio_pct = bytes in tagged words with no oracle taint / all bytes in tagged words * 100; \
overtag_extra_cycles_pct = cipher cycles spent on tagged words with no oracle taint (model_b, else model_a) / baseline cycles * 100; \
the oracle marks every byte of an arithmetic result tainted when any source byte is";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagStats {
    pub words_tagged_final: u64,
    pub bytes_tainted_oracle_final: u64,
    pub overtagged_bytes: u64,
    pub overtag_ratio_pct: f64,
    pub overtag_extra_cycles_pct: Option<f64>,
    pub overtag_basis: &'static str,
}

/// The merged report. Field order is the serialized order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub instret: u64,
    pub histogram: BTreeMap<String, u64>,
    pub cycles: PerModel<u64>,
    pub overhead: Overhead,
    pub tag_stats: TagStats,
    pub mem_stats: PerModel<MemStats>,
    pub leak_averted_bytes: u64,
    pub seed: u64,
    pub exit_code: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("a baseline run is required")]
    MissingBaseline,
    #[error("model {0} disagrees with the baseline on architectural results")]
    Divergence(&'static str),
}

fn pct_over(model: u64, baseline: u64) -> f64 {
    (model as f64 - baseline as f64) * 100.0 / baseline as f64
}

impl RunReport {
    /// Merge per-model runs. The baseline supplies the architectural and
    /// tag figures; every other run must agree with it architecturally.
    pub fn merge(seed: u64, runs: &[ModelRun]) -> Result<RunReport, ReportError> {
        let find = |m: CycleModel| runs.iter().find(|r| r.model == m);
        let base = find(CycleModel::Baseline).ok_or(ReportError::MissingBaseline)?;
        let (a, b) = (find(CycleModel::ModelA), find(CycleModel::ModelB));
        for r in [a, b].into_iter().flatten() {
            if r.architectural() != base.architectural() || r.instret != base.instret {
                return Err(ReportError::Divergence(r.model.name()));
            }
        }
        let denom = base.cycles.max(1);
        let (overtagged_bytes, overtag_ratio_pct) = overtagging_of(&base.census);
        let extra = b.or(a).map(|r| r.overtag_cycles as f64 * 100.0 / denom as f64);
        Ok(RunReport {
            instret: base.instret,
            histogram: base.histogram.clone(),
            cycles: PerModel {
                baseline: base.cycles,
                model_a: a.map(|r| r.cycles),
                model_b: b.map(|r| r.cycles),
            },
            overhead: Overhead {
                model_a_pct: a.map(|r| pct_over(r.cycles, denom)),
                model_b_pct: b.map(|r| pct_over(r.cycles, denom)),
            },
            tag_stats: TagStats {
                words_tagged_final: base.census.words_tagged,
                bytes_tainted_oracle_final: base.census.bytes_tainted,
                overtagged_bytes,
                overtag_ratio_pct,
                overtag_extra_cycles_pct: extra,
                overtag_basis: OVERTAG_BASIS,
            },
            mem_stats: PerModel {
                baseline: base.mem_stats,
                model_a: a.map(|r| r.mem_stats),
                model_b: b.map(|r| r.mem_stats),
            },
            leak_averted_bytes: base.leak_averted_bytes,
            seed,
            exit_code: base.exit_code,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<u64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}%"));
        let _ = writeln!(out, "exit code      {}", self.exit_code);
        let _ = writeln!(out, "instructions   {}", self.instret);
        let _ = writeln!(out, "seed           {}", self.seed);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<10} {:>14} {:>10} {:>12} {:>12} {:>12}",
            "model", "cycles", "overhead", "dram data", "dram tag", "cipher"
        );
        let rows = [
            (
                "baseline",
                Some(self.cycles.baseline),
                Some(0.0),
                Some(self.mem_stats.baseline),
            ),
            (
                "a",
                self.cycles.model_a,
                self.overhead.model_a_pct,
                self.mem_stats.model_a,
            ),
            (
                "b",
                self.cycles.model_b,
                self.overhead.model_b_pct,
                self.mem_stats.model_b,
            ),
        ];
        for (name, cycles, over, stats) in rows {
            let _ = writeln!(
                out,
                "{:<10} {:>14} {:>10} {:>12} {:>12} {:>12}",
                name,
                opt(cycles),
                pct(over),
                opt(stats.map(|s| s.dram_data_accesses)),
                opt(stats.map(|s| s.dram_tag_accesses)),
                opt(stats.map(|s| s.cipher_blocks)),
            );
        }
        let t = &self.tag_stats;
        let _ = writeln!(out);
        let _ = writeln!(out, "tagged words   {}", t.words_tagged_final);
        let _ = writeln!(out, "tainted bytes  {}", t.bytes_tainted_oracle_final);
        let _ = writeln!(
            out,
            "over-tagged    {} bytes ({:.3}%)",
            t.overtagged_bytes, t.overtag_ratio_pct
        );
        let _ = writeln!(out, "over-tag cost  {}", pct(t.overtag_extra_cycles_pct));
        let _ = writeln!(out, "leaks averted  {} bytes", self.leak_averted_bytes);
        out
    }
}

#[cfg(test)]
mod tests;
