// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one pass/fail line per criterion.

mod common;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use conch_core::asm::{assemble, SourceUnit};
use conch_core::crypt::{qarma_decrypt, qarma_encrypt, Key128, Tweak, XorShift64};
use conch_core::demos::{contains_fragment, run_demo, Demo, SERVER_KEY};
use conch_core::harness::RunSpec;
use conch_core::mem::CycleModel;
use conch_core::report::{ModelRun, RunReport};

use common::{all_programs, corpus_sources, corpus_spec, SEED};

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

const CIPHER_BUDGET: Duration = Duration::from_secs(5);
const STREAM_BUDGET: Duration = Duration::from_secs(60);

fn cipher_conformance() -> Verdict {
    let start = Instant::now();
    let key = Key128::new(0x84be_85ce_9804_e94b, 0xec28_02d4_e0a4_88e9);
    let (p, t, c) = (
        0xfb62_3599_da6e_8127,
        Tweak(0x477d_469d_ec0b_8762),
        0x544b_0ab9_5bda_7c3a,
    );
    ensure(qarma_encrypt(key, t, p) == c, "published vector: encryption mismatch")?;
    ensure(qarma_decrypt(key, t, c) == p, "published vector: decryption mismatch")?;
    let mut rng = XorShift64::new(0x00ac_ce97);
    for i in 0..10_000 {
        let key = Key128::new(rng.next_u64(), rng.next_u64());
        let (tweak, plain) = (Tweak(rng.next_u64()), rng.next_u64());
        let ct = qarma_encrypt(key, tweak, plain);
        ensure(qarma_decrypt(key, tweak, ct) == plain, format!("round trip {i} failed"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < CIPHER_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("vector exact, 10000 round trips in {elapsed:.2?}"))
}

fn confidentiality() -> Verdict {
    let out = run_demo(Demo::Heartbleed, SEED).map_err(|e| e.to_string())?;
    let exp = out.exposure.ok_or("no exposure captured")?;
    ensure(out.report.leak_averted_bytes > 0, "nothing was averted")?;
    ensure(
        !contains_fragment(&exp.output, SERVER_KEY, 4),
        "plaintext fragment in output",
    )?;
    ensure(
        !contains_fragment(&exp.dump.bytes(), SERVER_KEY, 4),
        "plaintext fragment in DRAM dump",
    )?;
    ensure(exp.recovered == SERVER_KEY, "decryption did not recover the key")?;
    Ok(format!(
        "{} averted bytes, no 4-byte fragment in output or dump, key recovered",
        out.report.leak_averted_bytes
    ))
}

const COPIES: u64 = 100;

fn tweak_separation() -> Verdict {
    let src = format!(
        ".data\nsecret: .zero 8\ncopies: .zero {}\npath: .asciz \"secret.bin\"\n.text\n_start:\n li a0, -100\n la a1, path\n li a2, 0x2000000\n li a7, 56\n ecall\n la a1, secret\n li a2, 8\n li a7, 63\n ecall\n la t0, secret\n ld t1, 0(t0)\n la t2, copies\n li t3, {COPIES}\nloop:\n sd t1, 0(t2)\n addi t2, t2, 8\n addi t3, t3, -1\n bnez t3, loop\n li a0, 0\n li a7, 93\n ecall\n",
        8 * COPIES
    );
    let spec = corpus_spec("copies", &src, SEED);
    let mut m = spec.machine(CycleModel::ModelB).map_err(|e| e.to_string())?;
    m.run(spec.max_instret).map_err(|e| e.to_string())?;
    let ctx = m.st.key_ctx();
    let base = spec.program.symbol("copies").unwrap();
    let dump = m.mem.raw_dump(base, 8 * COPIES, ctx).map_err(|e| e.to_string())?;
    let secret = u64::from_le_bytes(common::secret_file()[..8].try_into().unwrap());
    let mut distinct = BTreeSet::new();
    for i in 0..COPIES {
        let wa = base + 8 * i;
        let (raw, tag) = dump.word_at(wa).ok_or("short dump")?;
        ensure(tag, format!("copy {i} untagged"))?;
        ensure(
            qarma_decrypt(ctx.key, Tweak(wa), raw) == secret,
            format!("copy {i} does not decrypt"),
        )?;
        distinct.insert(raw);
    }
    ensure(
        distinct.len() as u64 == COPIES,
        format!("only {} distinct ciphertexts", distinct.len()),
    )?;
    Ok(format!(
        "{} distinct ciphertexts, all decrypt to the secret",
        distinct.len()
    ))
}

type Outcome = Result<(RunReport, Vec<ModelRun>), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

/// Runs of every corpus program and demo under all models, with checking.
struct CorpusRuns(Vec<(String, Outcome)>);

impl CorpusRuns {
    fn collect() -> Self {
        CorpusRuns(
            all_programs(SEED)
                .into_iter()
                .map(|(name, spec)| {
                    let r = spec.run_models(&CycleModel::ALL).map_err(|e| e.to_string());
                    (name, r)
                })
                .collect(),
        )
    }

    fn ok(&self) -> Result<Vec<(&str, &[ModelRun])>, String> {
        self.0
            .iter()
            .map(|(name, r)| match r {
                Ok((_, runs)) => Ok((name.as_str(), runs.as_slice())),
                Err(e) => Err(format!("{name}: {e}")),
            })
            .collect()
    }
}

fn soundness(corpus: &CorpusRuns) -> Verdict {
    let mut steps = 0;
    for (name, runs) in corpus.ok()? {
        for run in runs {
            let check = run.check.ok_or(format!("{name}: checking was off"))?;
            ensure(check.violations() == 0, format!("{name} {:?}: {check:?}", run.model))?;
            steps += run.instret;
        }
    }
    Ok(format!(
        "{} programs, {steps} checked steps, 0 violations",
        corpus.0.len()
    ))
}

fn overtagging() -> Verdict {
    let out = run_demo(Demo::Granularity, SEED).map_err(|e| e.to_string())?;
    let t = &out.report.tag_stats;
    ensure(
        t.overtagged_bytes == 4 && t.overtag_ratio_pct == 50.0,
        format!(
            "conflicted word: {} bytes, {}%",
            t.overtagged_bytes, t.overtag_ratio_pct
        ),
    )?;
    let (name, src) = corpus_sources()
        .into_iter()
        .find(|(n, _)| n == "aligned_xor")
        .ok_or("aligned workload missing")?;
    let (report, _) = corpus_spec(&name, &src, SEED)
        .run_models(&CycleModel::ALL)
        .map_err(|e| e.to_string())?;
    let a = &report.tag_stats;
    ensure(a.words_tagged_final > 0, "aligned workload tagged nothing")?;
    ensure(
        a.overtagged_bytes == 0 && a.overtag_ratio_pct == 0.0,
        format!(
            "aligned workload: {} bytes, {}%",
            a.overtagged_bytes, a.overtag_ratio_pct
        ),
    )?;
    Ok(format!(
        "conflicted word 4 bytes / 50%, aligned workload 0 bytes / 0% over {} tagged words",
        a.words_tagged_final
    ))
}

fn overhead_ordering() -> Verdict {
    let start = Instant::now();
    let (name, src) = corpus_sources()
        .into_iter()
        .find(|(n, _)| n == "stream")
        .ok_or("stream workload missing")?;
    let (report, runs) = corpus_spec(&name, &src, SEED)
        .run_models(&CycleModel::ALL)
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let c = &report.cycles;
    let (a, b) = (c.model_a.unwrap(), c.model_b.unwrap());
    let (pa, pb) = (
        report.overhead.model_a_pct.unwrap(),
        report.overhead.model_b_pct.unwrap(),
    );
    let traffic = runs[2].mem_stats.cipher_blocks * 8;
    ensure(traffic >= 1 << 20, format!("only {traffic} bytes of tagged traffic"))?;
    ensure(
        a > b && b > c.baseline,
        format!("a {a}, b {b}, baseline {}", c.baseline),
    )?;
    ensure(
        pb < pa / 2.0,
        format!("b overhead {pb:.2}% not under half of a's {pa:.2}%"),
    )?;
    ensure(elapsed < STREAM_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} KiB tagged traffic; a +{pa:.2}% > b +{pb:.2}% > baseline {} cycles; {elapsed:.2?}",
        traffic / 1024,
        c.baseline
    ))
}

fn baseline_purity() -> Verdict {
    let variant = |tagged: u64| {
        let src = format!(
            ".data\nlen: .dword {tagged}\nbuf: .zero 4096\n.text\n_start:\n la s0, buf\n li t0, 0\n li t1, 512\ninit:\n slli t2, t0, 3\n add t2, s0, t2\n sd t0, 0(t2)\n addi t0, t0, 1\n blt t0, t1, init\n la t0, len\n ld a1, 0(t0)\n mv a0, s0\n ctag.set x0, a0, a1\n li t0, 0\n li s1, 0\nsum:\n slli t2, t0, 3\n add t2, s0, t2\n ld t3, 0(t2)\n add s1, s1, t3\n addi t3, t3, 1\n sd t3, 0(t2)\n addi t0, t0, 1\n blt t0, t1, sum\n li a0, 0\n li a7, 93\n ecall\n"
        );
        let program = assemble(&SourceUnit::new("purity.s", &src)).map_err(|e| e.to_string())?;
        let mut spec = RunSpec::new(program, SEED);
        spec.checking = true;
        spec.run_models(&CycleModel::ALL).map_err(|e| e.to_string())
    };
    let (none, _) = variant(0)?;
    let (half, _) = variant(2048)?;
    ensure(none.tag_stats.words_tagged_final == 0, "0% variant tagged words")?;
    ensure(
        half.tag_stats.words_tagged_final == 256,
        "50% variant did not tag half the buffer",
    )?;
    ensure(
        none.cycles.baseline == half.cycles.baseline,
        format!("baseline {} vs {}", none.cycles.baseline, half.cycles.baseline),
    )?;
    ensure(
        half.cycles.model_a > none.cycles.model_a,
        "tagging cost nothing in model a",
    )?;
    Ok(format!("baseline {} cycles at 0% and 50% tagged", none.cycles.baseline))
}

fn thread_isolation() -> Verdict {
    let out = run_demo(Demo::Threads, SEED).map_err(|e| e.to_string())?;
    for c in &out.checks {
        ensure(c.passed, c.to_string())?;
    }
    Ok(format!("{} checks passed", out.checks.len()))
}

fn semantics(corpus: &CorpusRuns) -> Verdict {
    for (name, runs) in corpus.ok()? {
        ensure(runs.len() == 3, format!("{name}: {} runs", runs.len()))?;
        for run in &runs[1..] {
            ensure(
                run.architectural() == runs[0].architectural(),
                format!("{name}: {:?} diverges from baseline", run.model),
            )?;
        }
    }
    Ok(format!("{} programs identical under baseline, a and b", corpus.0.len()))
}

fn determinism() -> Verdict {
    let mut n = 0;
    for ((name, a), (_, b)) in all_programs(SEED).into_iter().zip(all_programs(SEED)) {
        let ja = a.run_models(&CycleModel::ALL).map_err(|e| e.to_string())?.0.to_json();
        let jb = b.run_models(&CycleModel::ALL).map_err(|e| e.to_string())?.0.to_json();
        ensure(ja == jb, format!("{name}: reports differ"))?;
        n += 1;
    }
    Ok(format!("{n} programs, byte-identical reports"))
}

fn main() -> ExitCode {
    let corpus = CorpusRuns::collect();
    let criteria: [Criterion; 10] = [
        ("cipher conformance", Box::new(cipher_conformance)),
        ("confidentiality end to end", Box::new(confidentiality)),
        ("tweak separation", Box::new(tweak_separation)),
        ("soundness", Box::new(|| soundness(&corpus))),
        ("over-tagging", Box::new(overtagging)),
        ("overhead ordering", Box::new(overhead_ordering)),
        ("baseline purity", Box::new(baseline_purity)),
        ("thread-key isolation", Box::new(thread_isolation)),
        ("semantics preservation", Box::new(|| semantics(&corpus))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
