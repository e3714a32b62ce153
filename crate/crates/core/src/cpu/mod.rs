// SPDX-License-Identifier: Apache-2.0

//! Tagged architectural state and instruction execution.

pub mod isa;
mod machine;

use std::collections::BTreeMap;

use serde::Serialize;

use crate::crypt::{derive_thread_key, Key128};
use crate::mem::KeyCtx;
use isa::{Class, Instruction, Reg};

pub use machine::{Machine, MachineConfig, RunError, StepOutcome, Trap};

/// A 64-bit value and its sensitivity tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize)]
pub struct TaggedWord {
    pub value: u64,
    pub tag: bool,
}

impl TaggedWord {
    pub const ZERO: TaggedWord = TaggedWord { value: 0, tag: false };

    pub fn new(value: u64, tag: bool) -> Self {
        TaggedWord { value, tag }
    }

    pub fn plain(value: u64) -> Self {
        TaggedWord { value, tag: false }
    }
}

/// Destination tag of a register-writing instruction given the tags of the
/// registers it reads. Loads take their tag from memory instead.
pub fn propagate_tag(inst: &Instruction, src_tags: &[bool]) -> bool {
    match inst.class() {
        Class::AluRR | Class::AluRI => src_tags.iter().any(|&t| t),
        _ => false,
    }
}

#[derive(Debug, Clone)]
pub struct MachineState {
    pub pc: u64,
    regs: [TaggedWord; 32],
    master_key: Key128,
    thread_key: Key128,
    current_tid: u64,
    pub instret: u64,
    pub cycles: u64,
    pub histogram: BTreeMap<&'static str, u64>,
    pub halted: Option<i64>,
}

impl MachineState {
    /// Fresh state running thread 0 with a key derived from `master`.
    pub fn new(master: Key128) -> Self {
        MachineState {
            pc: 0,
            regs: [TaggedWord::ZERO; 32],
            master_key: master,
            thread_key: derive_thread_key(master, 0),
            current_tid: 0,
            instret: 0,
            cycles: 0,
            histogram: BTreeMap::new(),
            halted: None,
        }
    }

    pub fn reg(&self, r: Reg) -> TaggedWord {
        self.regs[r.index()]
    }

    /// Writes to `x0` are discarded.
    pub fn set_reg(&mut self, r: Reg, w: TaggedWord) {
        if r != Reg::ZERO {
            self.regs[r.index()] = w;
        }
    }

    pub fn regs(&self) -> &[TaggedWord; 32] {
        &self.regs
    }

    pub fn current_tid(&self) -> u64 {
        self.current_tid
    }

    pub fn key_ctx(&self) -> KeyCtx {
        KeyCtx {
            tid: self.current_tid,
            key: self.thread_key,
        }
    }

    pub(crate) fn master_key(&self) -> Key128 {
        self.master_key
    }

    pub(crate) fn switch_thread(&mut self, tid: u64, key: Key128) {
        self.current_tid = tid;
        self.thread_key = key;
    }
}

#[cfg(test)]
mod tests;
