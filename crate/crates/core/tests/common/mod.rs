// SPDX-License-Identifier: Apache-2.0

//! Shared loader for the test-program corpus.

#![allow(dead_code)]

use std::path::PathBuf;

use conch_core::asm::{assemble, SourceUnit};
use conch_core::demos::Demo;
use conch_core::harness::RunSpec;

pub const SEED: u64 = 0x5eed;

/// Contents of `secret.bin`, which corpus programs open as sensitive.
pub fn secret_file() -> Vec<u8> {
    (0..64u8).map(|i| b'A' + i % 26).collect()
}

pub const STDIN: &[u8] = b"ABCD hello corpus\n";

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

/// Every corpus program as (name, source), sorted by name.
pub fn corpus_sources() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.expect("corpus entry").path())
        .filter(|p| p.extension().is_some_and(|x| x == "s"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).expect("corpus source"))
        })
        .collect();
    out.sort();
    out
}

pub fn corpus_spec(name: &str, src: &str, seed: u64) -> RunSpec {
    let program = assemble(&SourceUnit::new(format!("{name}.s"), src)).unwrap_or_else(|e| panic!("{e}"));
    let mut spec = RunSpec::new(program, seed);
    spec.files.push(("secret.bin".into(), secret_file()));
    spec.stdin = STDIN.to_vec();
    spec
}

/// The corpus plus the bundled demos, all with checking enabled.
pub fn all_programs(seed: u64) -> Vec<(String, RunSpec)> {
    let mut out: Vec<(String, RunSpec)> = corpus_sources()
        .into_iter()
        .map(|(name, src)| {
            let spec = corpus_spec(&name, &src, seed);
            (name, spec)
        })
        .collect();
    for demo in Demo::ALL {
        out.push((format!("demo/{demo}"), demo.spec(seed).unwrap()));
    }
    for (_, spec) in &mut out {
        spec.checking = true;
    }
    out
}
