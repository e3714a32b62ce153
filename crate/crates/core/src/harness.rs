// SPDX-License-Identifier: Apache-2.0

//! Run one program under several cycle models and merge the results.

use thiserror::Error;

use crate::asm::{LoadError, Program};
use crate::cpu::{Machine, MachineConfig, RunError};
use crate::mem::{CycleModel, MemConfig};
use crate::os::OsShim;
use crate::report::{CheckSummary, ModelRun, ReportError, RunReport};

pub const DEFAULT_MAX_INSTRET: u64 = 50_000_000;

/// Everything that defines a run apart from the cycle model.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub program: Program,
    pub seed: u64,
    pub max_instret: u64,
    /// Model field is ignored; set per run.
    pub mem: MemConfig,
    pub files: Vec<(String, Vec<u8>)>,
    pub stdin: Vec<u8>,
    pub strict_write: bool,
    pub checking: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("{model} model: {source}")]
    Run { model: &'static str, source: RunError },
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl RunSpec {
    pub fn new(program: Program, seed: u64) -> Self {
        RunSpec {
            program,
            seed,
            max_instret: DEFAULT_MAX_INSTRET,
            mem: MemConfig::default(),
            files: Vec::new(),
            stdin: Vec::new(),
            strict_write: false,
            checking: false,
        }
    }

    /// A loaded machine for `model`, ready to run.
    pub fn machine(&self, model: CycleModel) -> Result<Machine, LoadError> {
        let mut os = OsShim::new(self.seed);
        for (path, bytes) in &self.files {
            os.add_file(path.clone(), bytes.clone());
        }
        os.set_stdin(self.stdin.clone());
        os.set_strict_write(self.strict_write);
        let cfg = MachineConfig {
            mem: MemConfig { model, ..self.mem },
            seed: self.seed,
            checking: self.checking,
        };
        Machine::with_program(&cfg, os, &self.program)
    }

    pub fn run_model(&self, model: CycleModel) -> Result<ModelRun, HarnessError> {
        let mut m = self.machine(model)?;
        let exit_code = m.run(self.max_instret).map_err(|source| HarnessError::Run {
            model: model.name(),
            source,
        })?;
        Ok(capture(&mut m, exit_code))
    }

    /// Run every model in `models` (baseline is always added) on its own
    /// thread and merge the results.
    pub fn run_models(&self, models: &[CycleModel]) -> Result<(RunReport, Vec<ModelRun>), HarnessError> {
        let mut wanted = vec![CycleModel::Baseline];
        for &m in models {
            if !wanted.contains(&m) {
                wanted.push(m);
            }
        }
        wanted.sort_by_key(|m| CycleModel::ALL.iter().position(|x| x == m));
        let results: Vec<Result<ModelRun, HarnessError>> = std::thread::scope(|s| {
            let handles: Vec<_> = wanted.iter().map(|&m| s.spawn(move || self.run_model(m))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("model run panicked"))
                .collect()
        });
        let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let report = RunReport::merge(self.seed, &runs)?;
        Ok((report, runs))
    }
}

/// Flush a halted machine and record its outcome. The final flush is not
/// charged to the run's cycles or traffic counters.
pub fn capture(m: &mut Machine, exit_code: i64) -> ModelRun {
    let ctx = m.st.key_ctx();
    let mem_stats = m.mem.stats();
    let overtag_cycles = m.mem.overtag_cycles();
    m.mem.flush(ctx);
    let check = m.mem.check_log().map(|log| CheckSummary {
        memory: log.into(),
        register_under_tags: m.register_violations(),
        under_tagged_words_at_halt: m.mem.under_tagged_words(ctx),
        write_barrier_violations: m.os.barrier_violations,
    });
    ModelRun {
        model: m.mem.model(),
        exit_code,
        instret: m.st.instret,
        cycles: m.st.cycles,
        histogram: m.st.histogram.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        mem_stats,
        census: m.mem.tag_census(),
        overtag_cycles,
        leak_averted_bytes: m.os.leak_averted_bytes,
        stdout: m.os.stdout().to_vec(),
        stderr: m.os.stderr().to_vec(),
        registers: m.st.regs().to_vec(),
        memory: m.mem.logical_image(ctx),
        check,
    }
}
