// SPDX-License-Identifier: Apache-2.0

//! `conch`: assemble, run, dump and demo programs on the tagged-memory
//! simulator.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use conch_core::asm::{assemble, Program, SourceUnit};
use conch_core::cpu::RunError;
use conch_core::demos::{run_demo, Demo};
use conch_core::harness::{HarnessError, RunSpec, DEFAULT_MAX_INSTRET};
use conch_core::mem::{CycleModel, MemConfig};

mod exit {
    pub const USAGE: u8 = 2;
    pub const ASSEMBLY: u8 = 2;
    pub const TRAP: u8 = 3;
    pub const BUDGET: u8 = 4;
    pub const DEMO: u8 = 5;
    pub const INTERNAL: u8 = 1;
}

#[derive(Parser, Debug)]
#[command(
    name = "conch",
    version,
    about = "Tagged-memory RV64 simulator with transparent encryption of sensitive words"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble a source file into a loadable image.
    Asm {
        src: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a program under one or more cycle models and report.
    Run {
        /// Assembly source or image from `conch asm`.
        program: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
        /// Comma-separated subset of baseline,a,b. Baseline always runs.
        #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "baseline,a,b")]
        models: Vec<CycleModel>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run a program to completion and print raw DRAM over a range.
    Dump {
        program: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
        /// `addr:len`, either part decimal or 0x-prefixed hex.
        #[arg(long, value_parser = parse_range)]
        range: (u64, u64),
    },
    /// Run one of the bundled demonstrations.
    Demo {
        #[arg(value_parser = parse_demo)]
        name: Demo,
        #[arg(long, env = "CONCH_SEED", default_value = "0", value_parser = parse_u64)]
        seed: u64,
    },
}

#[derive(Args, Debug)]
struct RunOpts {
    #[arg(long, env = "CONCH_SEED", default_value = "0", value_parser = parse_u64)]
    seed: u64,
    /// Expose a host file to the program: `virt-path=host-path`.
    #[arg(long = "map", value_parser = parse_pair)]
    maps: Vec<(String, String)>,
    /// Expose literal bytes to the program: `virt-path=hex-bytes`.
    #[arg(long = "stream", value_parser = parse_pair)]
    streams: Vec<(String, String)>,
    #[arg(long, default_value_t = DEFAULT_MAX_INSTRET)]
    max_instret: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dram_latency: Option<u64>,
    /// Fail writes of tagged data with EACCES instead of emitting ciphertext.
    #[arg(long)]
    strict_write: bool,
}

fn parse_u64(s: &str) -> Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16),
        None => s.replace('_', "").parse(),
    };
    r.map_err(|e| format!("`{s}`: {e}"))
}

fn parse_model(s: &str) -> Result<CycleModel, String> {
    CycleModel::ALL
        .into_iter()
        .find(|m| m.name() == s.trim())
        .ok_or_else(|| format!("unknown model `{s}` (expected baseline, a or b)"))
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (addr, len) = s.split_once(':').ok_or("expected addr:len")?;
    let (addr, len) = (parse_u64(addr)?, parse_u64(len)?);
    if len == 0 {
        return Err("length must be positive".into());
    }
    Ok((addr, len))
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected virt-path=value, got `{s}`")),
    }
}

fn parse_demo(s: &str) -> Result<Demo, String> {
    s.parse().map_err(|e: conch_core::demos::UnknownDemo| e.to_string())
}

/// A failed command: what to print and how to exit.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::new(exit::USAGE, format!("{e:#}"))
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Run {
                source: RunError::Trap(_),
                ..
            } => exit::TRAP,
            HarnessError::Run {
                source: RunError::BudgetExceeded { .. },
                ..
            } => exit::BUDGET,
            HarnessError::Load(_) => exit::USAGE,
            HarnessError::Report(_) => exit::INTERNAL,
        };
        Failure::new(code, e)
    }
}

/// Load an image written by `conch asm`, or assemble the file as source.
fn load_program(path: &Path) -> Result<Program, Failure> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(p) = Program::from_image(&text) {
        return Ok(p);
    }
    assemble(&SourceUnit::new(path.display().to_string(), &text)).map_err(|e| Failure::new(exit::ASSEMBLY, e))
}

fn build_spec(path: &Path, opts: &RunOpts) -> Result<RunSpec, Failure> {
    let mut spec = RunSpec::new(load_program(path)?, opts.seed);
    spec.max_instret = opts.max_instret;
    if let Some(latency) = opts.dram_latency {
        spec.mem.costs = spec.mem.costs.with_dram_latency(latency);
    }
    spec.strict_write = opts.strict_write;
    for (virt, host) in &opts.maps {
        let bytes = std::fs::read(host).with_context(|| format!("--map {virt}: reading {host}"))?;
        spec.files.push((virt.clone(), bytes));
    }
    for (virt, hex_bytes) in &opts.streams {
        let bytes = hex::decode(hex_bytes).with_context(|| format!("--stream {virt}: invalid hex"))?;
        spec.files.push((virt.clone(), bytes));
    }
    Ok(spec)
}

fn cmd_asm(src: &Path, output: &Path) -> Result<u8, Failure> {
    let program = load_program(src)?;
    std::fs::write(output, program.to_image()).with_context(|| format!("writing {}", output.display()))?;
    Ok(0)
}

fn cmd_run(path: &Path, opts: &RunOpts, models: &[CycleModel], report: Option<&Path>) -> Result<u8, Failure> {
    let spec = build_spec(path, opts)?;
    let (merged, runs) = spec.run_models(models)?;
    let base = &runs[0];
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(&base.stdout);
    let _ = stdout.flush();
    let mut stderr = std::io::stderr().lock();
    let _ = stderr.write_all(&base.stderr);
    let _ = write!(stderr, "{}", merged.to_text());
    if let Some(out) = report {
        std::fs::write(out, merged.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(merged.exit_code as u8)
}

fn cmd_dump(path: &Path, opts: &RunOpts, (addr, len): (u64, u64)) -> Result<u8, Failure> {
    let spec = build_spec(path, opts)?;
    let MemConfig { base, size, .. } = spec.mem;
    let in_range = addr >= base && addr.checked_add(len).is_some_and(|end| end <= base + size);
    if !in_range {
        return Err(Failure::new(
            exit::USAGE,
            format!(
                "range {addr:#x}:{len} lies outside memory {base:#x}..{:#x}",
                base + size
            ),
        ));
    }
    let model = CycleModel::ModelB;
    let mut m = spec.machine(model).map_err(HarnessError::from)?;
    m.run(spec.max_instret).map_err(|source| HarnessError::Run {
        model: model.name(),
        source,
    })?;
    let ctx = m.st.key_ctx();
    let dump = m
        .mem
        .raw_dump(addr, len, ctx)
        .map_err(|e| Failure::new(exit::USAGE, e))?;
    print!("{dump}");
    Ok(0)
}

fn cmd_demo(demo: Demo, seed: u64) -> Result<u8, Failure> {
    let out = run_demo(demo, seed).map_err(|e| Failure::new(exit::DEMO, e))?;
    println!("demo {demo} (seed {seed})");
    if let Some(exp) = &out.exposure {
        let over = &exp.output[exp.overread_offset.min(exp.output.len())..];
        println!(
            "response payload : {}",
            hex::encode(&exp.output[..exp.overread_offset.min(exp.output.len())])
        );
        println!("over-read bytes  : {}", hex::encode(over));
        println!("the over-read covers the private key and left the machine encrypted");
    }
    for check in &out.checks {
        println!("{check}");
    }
    println!();
    print!("{}", out.report.to_text());
    if out.passed() {
        Ok(0)
    } else {
        Err(Failure::new(exit::DEMO, format!("demo {demo}: a check failed")))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Asm { src, output } => cmd_asm(src, output),
        Command::Run {
            program,
            opts,
            models,
            report,
        } => cmd_run(program, opts, models, report.as_deref()),
        Command::Dump { program, opts, range } => cmd_dump(program, opts, *range),
        Command::Demo { name, seed } => cmd_demo(*name, *seed),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("conch: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
