// SPDX-License-Identifier: Apache-2.0

use super::*;
use crate::asm::{assemble, SourceUnit};
use crate::cpu::isa::Op;
use crate::crypt::generate_master_key;
use crate::harness::RunSpec;
use crate::testutil::SMALL_DRAM;

const EXIT0: &str = "li a7, 93\nli a0, 0\necall\n";

fn r(i: u8) -> Reg {
    Reg::new(i).unwrap()
}

fn spec(src: &str, files: &[(&str, &[u8])]) -> RunSpec {
    let p = assemble(&SourceUnit::new("t.s", src)).unwrap_or_else(|e| panic!("{e}"));
    let mut s = RunSpec::new(p, 11);
    s.mem.size = SMALL_DRAM;
    s.checking = true;
    s.files = files.iter().map(|(p, b)| (p.to_string(), b.to_vec())).collect();
    s
}

#[test]
fn oracle_load_positions_and_sign_fill() {
    let mut o = ByteOracle::default();
    let lw = Instruction::new(Op::Lw, r(5), r(10), Reg::ZERO, 0);
    o.step(&lw, 0b0000_1000);
    assert_eq!(o.reg(r(5)), 0xf8);
    let lwu = Instruction::new(Op::Lwu, r(6), r(10), Reg::ZERO, 0);
    o.step(&lwu, 0b1111_1000);
    assert_eq!(o.reg(r(6)), 0b0000_1000);
    let lb = Instruction::new(Op::Lb, r(7), r(10), Reg::ZERO, 0);
    o.step(&lb, 0);
    assert_eq!(o.reg(r(7)), 0);
    let ld = Instruction::new(Op::Ld, r(0), r(10), Reg::ZERO, 0);
    o.step(&ld, 0xff);
    assert_eq!(o.reg(Reg::ZERO), 0);
}

#[test]
fn oracle_store_alu_and_upper() {
    let mut o = ByteOracle::default();
    o.step(&Instruction::new(Op::Ld, r(5), r(10), Reg::ZERO, 0), 0b0000_0110);
    let sb = Instruction::new(Op::Sb, Reg::ZERO, r(10), r(5), 0);
    assert_eq!(o.store_taint(&sb), 0);
    let sh = Instruction::new(Op::Sh, Reg::ZERO, r(10), r(5), 0);
    assert_eq!(o.store_taint(&sh), 0b10);
    let sd = Instruction::new(Op::Sd, Reg::ZERO, r(10), r(5), 0);
    assert_eq!(o.store_taint(&sd), 0b110);
    o.step(&Instruction::new(Op::Addi, r(6), r(5), Reg::ZERO, 1), 0);
    assert_eq!(o.reg(r(6)), 0xff);
    o.step(&Instruction::new(Op::Add, r(7), r(1), r(2), 0), 0);
    assert_eq!(o.reg(r(7)), 0);
    o.step(&Instruction::new(Op::Lui, r(6), Reg::ZERO, Reg::ZERO, 0x1000), 0);
    assert_eq!(o.reg(r(6)), 0);
    o.step(&Instruction::new(Op::Jal, r(5), Reg::ZERO, Reg::ZERO, 8), 0);
    assert_eq!(o.reg(r(5)), 0);
}

#[test]
fn overtagging_arithmetic() {
    assert_eq!(overtagging_of(&TagCensus::default()), (0, 0.0));
    let one = TagCensus {
        words_tagged: 1,
        bytes_tainted: 4,
        overtagged_bytes: 4,
    };
    assert_eq!(overtagging_of(&one), (4, 50.0));
}

fn fig2_source() -> String {
    format!(
        ".data\nw: .dword 0\npath: .asciz \"pin\"\n.text\n_start:\n la a1, path\n li a2, 0x2000000\n li a7, 56\n ecall\n la a1, w\n li a2, 4\n li a7, 63\n ecall\n la t0, w\n li t1, 0x11223344\n sw t1, 4(t0)\n{EXIT0}"
    )
}

#[test]
fn fig2_replay_overtags_four_bytes() {
    let s = spec(&fig2_source(), &[("pin", b"1234")]);
    let (report, runs) = s.run_models(&CycleModel::ALL).unwrap();
    let t = &report.tag_stats;
    assert_eq!((t.words_tagged_final, t.bytes_tainted_oracle_final), (1, 4));
    assert_eq!((t.overtagged_bytes, t.overtag_ratio_pct), (4, 50.0));
    for run in &runs {
        assert_eq!(run.check.unwrap().violations(), 0);
    }
}

#[test]
fn aligned_workload_has_no_overtagging() {
    let src = format!(
        ".data\nkey: .zero 32\nout: .zero 32\n.text\n_start:\n la a0, key\n li a1, 32\n li a2, 0\n li a7, 278\n ecall\n la t0, key\n la t1, out\n li t2, 4\ncopy:\n ld t3, 0(t0)\n xor t3, t3, t2\n sd t3, 0(t1)\n addi t0, t0, 8\n addi t1, t1, 8\n addi t2, t2, -1\n bnez t2, copy\n{EXIT0}"
    );
    let (report, _) = spec(&src, &[]).run_models(&CycleModel::ALL).unwrap();
    let t = &report.tag_stats;
    assert_eq!(t.words_tagged_final, 8);
    assert_eq!(t.bytes_tainted_oracle_final, 64);
    assert_eq!((t.overtagged_bytes, t.overtag_ratio_pct), (0, 0.0));
    assert_eq!(t.overtag_extra_cycles_pct, Some(0.0));
}

#[test]
fn bytewise_copy_moves_taint_exactly() {
    let src = format!(
        ".data\nsrc: .zero 16\ndst: .zero 16\n.text\n_start:\n la a0, src\n addi a0, a0, 3\n li a1, 5\n li a2, 0\n li a7, 278\n ecall\n la t0, src\n la t1, dst\n li t2, 16\ncopy:\n lbu t3, 0(t0)\n sb t3, 0(t1)\n addi t0, t0, 1\n addi t1, t1, 1\n addi t2, t2, -1\n bnez t2, copy\n{EXIT0}"
    );
    let s = spec(&src, &[]);
    let mut m = s.machine(CycleModel::ModelB).unwrap();
    m.run(100_000).unwrap();
    let dst = s.program.symbol("dst").unwrap();
    assert_eq!(m.mem.oracle_mask(dst), 0b1111_1000);
    assert_eq!(m.mem.oracle_mask(dst + 8), 0);
    assert!(m.mem.peek_word(dst, m.st.key_ctx()).1);
    assert!(!m.mem.peek_word(dst + 8, m.st.key_ctx()).1);
}

#[test]
fn reports_are_deterministic_and_keyless() {
    let s = spec(&fig2_source(), &[("pin", b"1234")]);
    let a = s.run_models(&CycleModel::ALL).unwrap().0.to_json();
    let b = s.run_models(&CycleModel::ALL).unwrap().0.to_json();
    assert_eq!(a, b);
    let master = generate_master_key(11);
    let thread = crate::crypt::derive_thread_key(master, 0);
    for k in [master.w0, master.k0, thread.w0, thread.k0] {
        for needle in [format!("{k:016x}"), format!("{k:x}"), k.to_string()] {
            assert!(!a.contains(&needle));
        }
    }
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    let order = [
        "instret",
        "histogram",
        "cycles",
        "overhead",
        "tag_stats",
        "mem_stats",
        "leak_averted_bytes",
        "seed",
        "exit_code",
    ];
    assert_eq!(v.as_object().unwrap().len(), order.len());
    let positions: Vec<usize> = order
        .iter()
        .map(|k| a.find(&format!("\n  \"{k}\":")).unwrap())
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    let hist_total: u64 = v["histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|x| x.as_u64().unwrap())
        .sum();
    assert_eq!(hist_total, v["instret"].as_u64().unwrap());
}

#[test]
fn baseline_only_has_null_models() {
    let s = spec(&fig2_source(), &[("pin", b"1234")]);
    let (report, runs) = s.run_models(&[CycleModel::Baseline]).unwrap();
    assert_eq!(runs.len(), 1);
    let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(v["cycles"]["model_a"].is_null() && v["cycles"]["model_b"].is_null());
    assert!(v["overhead"]["model_a_pct"].is_null() && v["overhead"]["model_b_pct"].is_null());
    assert!(v["tag_stats"]["overtag_extra_cycles_pct"].is_null());
    assert!(report.to_text().contains("baseline"));
}

#[test]
fn merge_requires_baseline_and_agreement() {
    let s = spec(&fig2_source(), &[("pin", b"1234")]);
    let b = s.run_model(CycleModel::ModelB).unwrap();
    assert_eq!(
        RunReport::merge(1, std::slice::from_ref(&b)),
        Err(ReportError::MissingBaseline)
    );
    let base = s.run_model(CycleModel::Baseline).unwrap();
    let mut bad = b;
    bad.exit_code = 9;
    assert_eq!(RunReport::merge(1, &[base, bad]), Err(ReportError::Divergence("b")));
}

#[test]
fn overheads_are_relative_to_baseline() {
    let s = spec(&fig2_source(), &[("pin", b"1234")]);
    let (report, _) = s.run_models(&CycleModel::ALL).unwrap();
    let base = report.cycles.baseline as f64;
    let a = report.cycles.model_a.unwrap() as f64;
    assert_eq!(report.overhead.model_a_pct, Some((a - base) * 100.0 / base));
    assert!(report.cycles.model_a >= report.cycles.model_b);
    assert!(report.cycles.model_b.unwrap() >= report.cycles.baseline);
}
