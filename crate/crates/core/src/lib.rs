// SPDX-License-Identifier: Apache-2.0

//! A tagged RV64 simulator: one-bit sensitivity tags per memory word,
//! transparent encryption of tagged words at the cache/DRAM boundary and
//! per-thread keys, with cycle accounting under three CPU models.

pub mod asm;
pub mod cpu;
pub mod crypt;
pub mod demos;
pub mod harness;
pub mod mem;
pub mod os;
pub mod report;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::asm::{assemble, SourceUnit};
    use crate::cpu::{Machine, MachineConfig};
    use crate::mem::{CycleModel, MemConfig};
    use crate::os::OsShim;

    pub const SMALL_DRAM: u64 = 4 * 1024 * 1024;

    pub fn config(model: CycleModel) -> MachineConfig {
        MachineConfig {
            mem: MemConfig {
                size: SMALL_DRAM,
                model,
                ..MemConfig::default()
            },
            seed: 7,
            checking: true,
        }
    }

    pub fn machine_with(src: &str, model: CycleModel, os: OsShim) -> Machine {
        let p = assemble(&SourceUnit::new("test.s", src)).unwrap_or_else(|e| panic!("{e}"));
        Machine::with_program(&config(model), os, &p).expect("load")
    }

    pub fn machine(src: &str, model: CycleModel) -> Machine {
        machine_with(src, model, OsShim::new(7))
    }
}
