//! Command-line front end. `main` in the binary only forwards here so the
//! commands can be driven in-process.
//!
//! Exit codes: 0 ok, 1 traces differ, 2 compile error, 3 runtime trap,
//! 4 usage or I/O error, 5 step budget exhausted.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{self, Bins};
use crate::cipher::KeyContext;
use crate::client;
use crate::codegen::{compile_program, CompileOptions, Polarity, DEFAULT_KEY};
use crate::frontend::compile_source;
use crate::isa::{decode_object, encode_object, ObjectCode};
use crate::obfuscation::IoSchedule;
use crate::oracle;
use crate::value::{RunOutcome, Trap};
use crate::vm::{self, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DIFFER: i32 = 1;
pub const EXIT_COMPILE: i32 = 2;
pub const EXIT_TRAP: i32 = 3;
pub const EXIT_USAGE: i32 = 4;
pub const EXIT_BUDGET: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "fxa", version, about = "Obfuscating compiler and encrypted VM for the FxA instruction set")]
pub struct Cli {
    /// Key seed shared by the compiler (sealing constants) and the client
    /// (encrypting inputs, decrypting outputs).
    #[arg(long, global = true, default_value_t = DEFAULT_KEY)]
    pub key: u64,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Compile a C source file to an object file and its io schedule.
    Compile {
        src: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PolarityArg::Coin)]
        polarity: PolarityArg,
    },
    /// Run an object file on plaintext inputs (encrypted client-side).
    Run {
        obj: PathBuf,
        #[arg(long = "in", allow_hyphen_values = true)]
        inputs: Vec<String>,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, default_value_t = vm::DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Run a source file in the plaintext reference interpreter.
    OracleRun {
        src: PathBuf,
        #[arg(long = "in", allow_hyphen_values = true)]
        inputs: Vec<String>,
        #[arg(long, default_value_t = oracle::DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Compare the shapes of two trace files.
    DiffTrace { a: PathBuf, b: PathBuf },
    /// Recompile many times and test the target's offset for uniformity.
    Stats {
        src: PathBuf,
        #[arg(long, default_value_t = 2000)]
        seeds: u64,
        /// Schedule entry: an input name, `return` or `emitN`.
        #[arg(long, default_value = "return")]
        target: String,
        #[arg(long, default_value_t = 16)]
        bins: u32,
        /// Input for the branch-balance part of the report.
        #[arg(long = "in", allow_hyphen_values = true)]
        inputs: Vec<String>,
    },
    /// List the write storms a compilation emits.
    StormReport {
        src: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum PolarityArg {
    Coin,
    Truthteller,
    Liar,
}

impl From<PolarityArg> for Polarity {
    fn from(p: PolarityArg) -> Self {
        match p {
            PolarityArg::Coin => Polarity::Coin,
            PolarityArg::Truthteller => Polarity::Truthteller,
            PolarityArg::Liar => Polarity::Liar,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(&cli, out, err) {
        Ok(code) => code,
        Err((code, msg)) => {
            let _ = writeln!(err, "{msg}");
            code
        }
    }
}

type Res = Result<i32, (i32, String)>;

fn usage(m: impl ToString) -> (i32, String) {
    (EXIT_USAGE, m.to_string())
}

fn read(p: &Path) -> Result<String, (i32, String)> {
    std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<(), (i32, String)> {
    std::fs::write(p, bytes).map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn front(src: &Path) -> Result<crate::frontend::typed::Program, (i32, String)> {
    let text = read(src)?;
    compile_source(&text).map_err(|d| (EXIT_COMPILE, d.render(&src.display().to_string())))
}

fn status_code(status: &Result<(), Trap>) -> i32 {
    match status {
        Ok(()) => EXIT_OK,
        Err(Trap::Budget(_)) => EXIT_BUDGET,
        Err(_) => EXIT_TRAP,
    }
}

fn report(o: &RunOutcome, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let _ = write!(out, "{}", o.outputs);
    if let Err(t) = &o.status {
        let _ = writeln!(err, "{t}");
    }
    status_code(&o.status)
}

/// Schedule path next to an object: `a.fxa` -> `a.sched`.
pub fn schedule_path(obj: &Path) -> PathBuf {
    obj.with_extension("sched")
}

fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Res {
    let key = KeyContext::new(cli.key);
    match &cli.cmd {
        Cmd::Compile {
            src,
            seed,
            out: dst,
            polarity,
        } => {
            let prog = front(src)?;
            let opts = CompileOptions {
                polarity: (*polarity).into(),
                ..CompileOptions::seed(*seed)
            };
            let c = compile_program(&prog, &key, &opts).map_err(|e| (EXIT_COMPILE, e.to_string()))?;
            let dst = dst.clone().unwrap_or_else(|| src.with_extension("fxa"));
            write_file(&dst, &encode_object(&c.object))?;
            write_file(&schedule_path(&dst), c.object.schedule.to_text().as_bytes())?;
            let _ = writeln!(out, "{}: {} instructions", dst.display(), c.object.instructions.len());
            Ok(EXIT_OK)
        }
        Cmd::Run {
            obj,
            inputs,
            trace,
            budget,
        } => {
            let bytes = std::fs::read(obj).map_err(|e| usage(format!("{}: {e}", obj.display())))?;
            let mut o: ObjectCode = decode_object(&bytes).map_err(|e| usage(format!("{}: {e}", obj.display())))?;
            let sp = schedule_path(obj);
            if sp.exists() {
                o.schedule = IoSchedule::from_text(&read(&sp)?).map_err(usage)?;
            }
            let plain = client::parse_inputs(&o.schedule, inputs).map_err(usage)?;
            let cfg = RunConfig {
                budget: *budget,
                trace: trace.is_some(),
            };
            let (outcome, run) = client::run_plain(&key, &o, &plain, cfg).map_err(|e| (EXIT_TRAP, e.to_string()))?;
            if let Some(t) = trace {
                write_file(t, vm::trace_text(&run.trace).as_bytes())?;
            }
            Ok(report(&outcome, out, err))
        }
        Cmd::OracleRun { src, inputs, budget } => {
            let prog = front(src)?;
            let kinds: Vec<_> = prog.input_types().iter().map(|b| b.kind()).collect();
            if kinds.len() != inputs.len() {
                return Err(usage(format!("expected {} inputs, got {}", kinds.len(), inputs.len())));
            }
            let plain = kinds
                .iter()
                .zip(inputs)
                .map(|(k, s)| crate::value::Value::parse(*k, s).map(|v| v.bits))
                .collect::<Result<Vec<_>, _>>()
                .map_err(usage)?;
            let o = oracle::interpret_with_budget(&prog, &plain, *budget);
            Ok(report(&o, out, err))
        }
        Cmd::DiffTrace { a, b } => {
            let sa = analysis::shape_from_text(&read(a)?).map_err(|e| usage(format!("{}: {e}", a.display())))?;
            let sb = analysis::shape_from_text(&read(b)?).map_err(|e| usage(format!("{}: {e}", b.display())))?;
            match analysis::first_difference(&sa, &sb) {
                None => {
                    let _ = writeln!(out, "equal shapes ({} steps)", sa.len());
                    Ok(EXIT_OK)
                }
                Some(i) => {
                    let _ = writeln!(out, "shapes differ at step {i} ({} vs {} steps)", sa.len(), sb.len());
                    Ok(EXIT_DIFFER)
                }
            }
        }
        Cmd::Stats {
            src,
            seeds,
            target,
            bins,
            inputs,
        } => {
            if (*seeds as usize) < analysis::MIN_SAMPLES {
                return Err(usage(format!("too few seeds: {seeds} (need at least {})", analysis::MIN_SAMPLES)));
            }
            let bins = match bins {
                16 => Bins::Sixteen,
                256 => Bins::TwoFiftySix,
                _ => return Err(usage("--bins must be 16 or 256")),
            };
            let prog = front(src)?;
            let seed_list: Vec<u64> = (0..*seeds).collect();
            let base = CompileOptions::seed(0);
            let samples = analysis::schedule_offsets(&prog, &key, base, &seed_list, target).map_err(usage)?;
            let chi = analysis::offset_uniformity(&samples, bins).map_err(usage)?;
            let _ = writeln!(out, "target = {target}");
            let _ = writeln!(out, "samples = {}", samples.len());
            let _ = writeln!(out, "bins = {}", bins.count());
            let _ = writeln!(out, "chi_square = {:.4}", chi.statistic);
            let _ = writeln!(out, "df = {}", chi.df);
            let _ = writeln!(out, "p_value = {:.6}", chi.p_value);
            let kinds: Vec<_> = prog.input_types().iter().map(|b| b.kind()).collect();
            if kinds.len() == inputs.len() {
                let plain = kinds
                    .iter()
                    .zip(inputs)
                    .map(|(k, s)| crate::value::Value::parse(*k, s).map(|v| v.bits))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(usage)?;
                match analysis::branch_balance(&prog, &key, base, &seed_list, &[plain]) {
                    Ok(b) => {
                        let _ = writeln!(out, "taken_fraction = {:.4}", b.taken_fraction);
                    }
                    Err(analysis::AnalysisError::NoCondition) => {
                        let _ = writeln!(out, "taken_fraction = none");
                    }
                    Err(e) => return Err((EXIT_TRAP, e.to_string())),
                }
            }
            Ok(EXIT_OK)
        }
        Cmd::StormReport { src, seed } => {
            let prog = front(src)?;
            let c = compile_program(&prog, &key, &CompileOptions::seed(*seed)).map_err(|e| (EXIT_COMPILE, e.to_string()))?;
            let _ = writeln!(out, "var\tclass\tstores\tlooped\tkind");
            for s in &c.stats.storms {
                let _ = writeln!(out, "{}\t{}\t{}\t{}\t{:?}", s.var, s.class, s.words, s.looped, s.kind);
            }
            let _ = writeln!(out, "storms = {}", c.stats.storms.len());
            Ok(EXIT_OK)
        }
    }
}
