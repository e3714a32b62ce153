// SPDX-License-Identifier: Apache-2.0

//! Bundled demonstration programs with self-checking drivers.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::asm::{assemble, AsmError, SourceUnit};
use crate::cpu::isa::Reg;
use crate::crypt::{qarma_decrypt, Tweak};
use crate::harness::{HarnessError, RunSpec};
use crate::mem::{CycleModel, MemError, RawDump};
use crate::report::{ModelRun, RunReport};

pub const HEARTBLEED_SRC: &str = include_str!("../demos/heartbleed.s");
pub const GRANULARITY_SRC: &str = include_str!("../demos/granularity.s");
pub const THREADS_SRC: &str = include_str!("../demos/threads.s");

/// Private key served to the heartbleed responder.
pub const SERVER_KEY: &[u8; 32] = b"MC4CAQAwBQYDK2VwBCIEIHJpdmF0ZSE=";
/// Payload length the malicious request claims.
pub const CLAIMED_LEN: u64 = 48;
/// The request payload actually sent (fills the 16-byte buffer).
pub const PAYLOAD: &[u8; 16] = b"are you there?!!";
pub const PIN: &[u8; 4] = b"4921";
pub const THREAD_SECRETS: [&[u8; 8]; 2] = [b"alpha-k0", b"bravo-k1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Demo {
    Heartbleed,
    Granularity,
    Threads,
}

impl Demo {
    pub const ALL: [Demo; 3] = [Demo::Heartbleed, Demo::Granularity, Demo::Threads];

    pub fn name(self) -> &'static str {
        match self {
            Demo::Heartbleed => "heartbleed",
            Demo::Granularity => "granularity",
            Demo::Threads => "threads",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Demo::Heartbleed => HEARTBLEED_SRC,
            Demo::Granularity => GRANULARITY_SRC,
            Demo::Threads => THREADS_SRC,
        }
    }

    /// The assembled demo with its virtual files and input.
    pub fn spec(self, seed: u64) -> Result<RunSpec, AsmError> {
        let origin = format!("{}.s", self.name());
        let program = assemble(&SourceUnit::new(origin, self.source()))?;
        let mut spec = RunSpec::new(program, seed);
        spec.checking = true;
        match self {
            Demo::Heartbleed => {
                spec.files.push(("server.key".into(), SERVER_KEY.to_vec()));
                spec.stdin = CLAIMED_LEN.to_le_bytes().iter().chain(PAYLOAD).copied().collect();
            }
            Demo::Granularity => spec.files.push(("pin".into(), PIN.to_vec())),
            Demo::Threads => {
                spec.files.push(("thread0.key".into(), THREAD_SECRETS[0].to_vec()));
                spec.files.push(("thread1.key".into(), THREAD_SECRETS[1].to_vec()));
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for Demo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown demo `{0}` (expected heartbleed, granularity or threads)")]
pub struct UnknownDemo(pub String);

impl FromStr for Demo {
    type Err = UnknownDemo;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Demo::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| UnknownDemo(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Asm(#[from] AsmError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Memory(#[from] MemError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "[{mark}] {}: {}", self.name, self.detail)
    }
}

/// The attacker's view of a finished heartbleed run.
#[derive(Debug, Clone)]
pub struct Exposure {
    /// Raw DRAM over the whole data segment after the final flush.
    pub dump: RawDump,
    /// Bytes the responder sent.
    pub output: Vec<u8>,
    /// The private key recovered from the dump with the owning thread key.
    pub recovered: Vec<u8>,
    /// Where the key sits in memory.
    pub key_addr: u64,
    /// Where the over-read begins in the response.
    pub overread_offset: usize,
}

#[derive(Debug, Clone)]
pub struct DemoOutcome {
    pub demo: Demo,
    pub report: RunReport,
    pub runs: Vec<ModelRun>,
    pub checks: Vec<Check>,
    pub exposure: Option<Exposure>,
}

impl DemoOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// True if any `window`-byte run of `needle` occurs in `haystack`.
pub fn contains_fragment(haystack: &[u8], needle: &[u8], window: usize) -> bool {
    needle
        .windows(window.min(needle.len()))
        .any(|w| haystack.windows(w.len()).any(|h| h == w))
}

/// Run `demo` under all three models and check its claims.
pub fn run_demo(demo: Demo, seed: u64) -> Result<DemoOutcome, DemoError> {
    let spec = demo.spec(seed)?;
    let (report, runs) = spec.run_models(&CycleModel::ALL)?;
    let mut checks = Vec::new();
    let sound = runs.iter().all(|r| r.check.is_some_and(|c| c.violations() == 0));
    checks.push(Check::new(
        "soundness",
        sound,
        "no under-tagging at any step in any model",
    ));
    let mut exposure = None;
    match demo {
        Demo::Heartbleed => {
            let exp = heartbleed_exposure(&spec)?;
            heartbleed_checks(&report, &exp, &mut checks);
            exposure = Some(exp);
        }
        Demo::Granularity => {
            let t = &report.tag_stats;
            checks.push(Check::new(
                "overtagging",
                t.overtagged_bytes == 4 && t.overtag_ratio_pct == 50.0,
                format!(
                    "{} word tagged, {} bytes sensitive, {} bytes over-tagged ({:.1}%)",
                    t.words_tagged_final, t.bytes_tainted_oracle_final, t.overtagged_bytes, t.overtag_ratio_pct
                ),
            ));
        }
        Demo::Threads => threads_checks(&runs[0], &mut checks),
    }
    let c = &report.cycles;
    let ordered = c.model_b.is_some_and(|b| c.baseline <= b && Some(b) <= c.model_a);
    checks.push(Check::new(
        "cycle ordering",
        ordered,
        format!(
            "baseline {} <= b {} <= a {}",
            c.baseline,
            c.model_b.unwrap_or(0),
            c.model_a.unwrap_or(0)
        ),
    ));
    Ok(DemoOutcome {
        demo,
        report,
        runs,
        checks,
        exposure,
    })
}

fn heartbleed_exposure(spec: &RunSpec) -> Result<Exposure, DemoError> {
    let model = CycleModel::ModelB;
    let mut m = spec.machine(model).map_err(HarnessError::from)?;
    m.run(spec.max_instret).map_err(|source| HarnessError::Run {
        model: model.name(),
        source,
    })?;
    let ctx = m.st.key_ctx();
    let data = spec
        .program
        .segments
        .iter()
        .find(|s| s.kind == crate::asm::SegmentKind::Data)
        .expect("heartbleed has a data segment");
    let dump = m.mem.raw_dump(data.base, data.bytes.len() as u64, ctx)?;
    let key_addr = spec.program.symbol("key").expect("key symbol");
    let recovered = (0..SERVER_KEY.len() as u64 / 8)
        .flat_map(|i| {
            let wa = key_addr + 8 * i;
            let (raw, _) = dump.word_at(wa).expect("key inside dump");
            qarma_decrypt(ctx.key, Tweak(wa), raw).to_le_bytes()
        })
        .collect();
    Ok(Exposure {
        dump,
        output: m.os.stdout().to_vec(),
        recovered,
        key_addr,
        overread_offset: PAYLOAD.len(),
    })
}

fn heartbleed_checks(report: &RunReport, exp: &Exposure, checks: &mut Vec<Check>) {
    checks.push(Check::new(
        "response length",
        exp.output.len() as u64 == CLAIMED_LEN,
        format!("{} bytes sent for a {}-byte payload", exp.output.len(), PAYLOAD.len()),
    ));
    checks.push(Check::new(
        "leak averted",
        report.leak_averted_bytes > 0,
        format!("{} bytes left the machine encrypted", report.leak_averted_bytes),
    ));
    let over = &exp.output[exp.overread_offset.min(exp.output.len())..];
    checks.push(Check::new(
        "over-read is ciphertext",
        !over.is_empty() && !contains_fragment(&exp.output, SERVER_KEY, 4),
        format!("{} over-read bytes, no 4-byte fragment of the key", over.len()),
    ));
    checks.push(Check::new(
        "dram at rest",
        !contains_fragment(&exp.dump.bytes(), SERVER_KEY, 4),
        "raw dump of the data segment holds no fragment of the key",
    ));
    let tagged = (0..4).all(|i| exp.dump.word_at(exp.key_addr + 8 * i).is_some_and(|(_, t)| t));
    checks.push(Check::new(
        "owner can decrypt",
        exp.recovered == SERVER_KEY && tagged,
        "thread key and address tweaks recover the key exactly",
    ));
}

fn threads_checks(run: &ModelRun, checks: &mut Vec<Check>) {
    let reg = |i: u8| run.registers[Reg::new(i).expect("register").index()];
    let plain = THREAD_SECRETS.map(|s| u64::from_le_bytes(*s));
    let (own0, cross1, own1, cross0, again0) = (reg(8), reg(9), reg(18), reg(19), reg(20));
    checks.push(Check::new(
        "own data",
        own0.value == plain[0] && own1.value == plain[1],
        "each thread reads its own secret in plaintext",
    ));
    checks.push(Check::new(
        "cross-thread reads",
        cross1.value != plain[0] && cross0.value != plain[1] && cross1.value != plain[1] && cross0.value != plain[0],
        format!(
            "thread 1 sees {:#018x}, thread 0 sees {:#018x}",
            cross1.value, cross0.value
        ),
    ));
    checks.push(Check::new(
        "switch back",
        again0.value == plain[0],
        "thread 0 rereads its secret after the round trip",
    ));
}
