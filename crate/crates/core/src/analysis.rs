//! Statistics over traces and recompilations: shape equality, offset
//! uniformity and branch polarity balance.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::cipher::KeyContext;
use crate::client::{run_plain, ClientError};
use crate::codegen::{compile_program, CodegenError, CompileOptions};
use crate::frontend::typed::Program;
use crate::isa::{Opcode, Reg};
use crate::oracle::interpret;
use crate::vm::{RunConfig, TraceEntry};

pub const MIN_SAMPLES: usize = 500;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("too few samples: {0} (need at least {MIN_SAMPLES})")]
    TooFew(usize),
    #[error("no schedule entry named '{0}'")]
    UnknownTarget(String),
    #[error("no source condition executed")]
    NoCondition,
    #[error(transparent)]
    Compile(#[from] CodegenError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// What is left of a trace once constants and physical slots are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShapeEntry {
    pub op: Opcode,
    pub regs: Vec<Reg>,
    pub taken: Option<bool>,
    pub disp: i64,
}

pub type TraceShape = Vec<ShapeEntry>;

pub fn trace_shape(t: &[TraceEntry]) -> TraceShape {
    t.iter()
        .map(|e| ShapeEntry {
            op: e.op,
            regs: e.regs.clone(),
            taken: e.taken,
            disp: e.imm,
        })
        .collect()
}

/// Reads the shape back from a trace file.
pub fn shape_from_text(text: &str) -> Result<TraceShape, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = |m: &str| format!("line {}: {m}", i + 1);
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields"));
            }
            let op = *Opcode::all()
                .iter()
                .find(|o| o.mnemonic() == f[1])
                .ok_or_else(|| bad("unknown opcode"))?;
            let regs = f[2]
                .split(',')
                .filter(|r| !r.is_empty())
                .map(|r| r.strip_prefix('r').and_then(|n| n.parse().ok()).map(Reg))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| bad("bad register"))?;
            let taken = match f[4] {
                "1" => Some(true),
                "0" => Some(false),
                "-" => None,
                _ => return Err(bad("bad branch flag")),
            };
            let disp = f[6].parse().map_err(|_| bad("bad displacement"))?;
            Ok(ShapeEntry { op, regs, taken, disp })
        })
        .collect()
}

/// Index of the first entry where two shapes differ, if any.
pub fn first_difference(a: &TraceShape, b: &TraceShape) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bins {
    /// Top 4 bits.
    Sixteen,
    /// Top 8 bits.
    TwoFiftySix,
}

impl Bins {
    pub fn count(self) -> usize {
        match self {
            Bins::Sixteen => 16,
            Bins::TwoFiftySix => 256,
        }
    }

    fn of(self, x: u32) -> usize {
        match self {
            Bins::Sixteen => (x >> 28) as usize,
            Bins::TwoFiftySix => (x >> 24) as usize,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Pearson chi-square of the samples' top bits against the uniform law.
pub fn offset_uniformity(samples: &[u32], bins: Bins) -> Result<ChiSquare, AnalysisError> {
    if samples.len() < MIN_SAMPLES {
        return Err(AnalysisError::TooFew(samples.len()));
    }
    let k = bins.count();
    let mut counts = vec![0u64; k];
    for x in samples {
        counts[bins.of(*x)] += 1;
    }
    let expected = samples.len() as f64 / k as f64;
    let statistic: f64 = counts
        .iter()
        .map(|c| {
            let d = *c as f64 - expected;
            d * d / expected
        })
        .sum();
    let df = (k - 1) as f64;
    let p_value = ChiSquared::new(df).expect("positive degrees of freedom").sf(statistic);
    Ok(ChiSquare {
        statistic,
        df,
        p_value,
    })
}

/// The offset a schedule entry carries in each recompilation, one sample
/// per seed. 64-bit entries contribute their high half.
pub fn schedule_offsets(
    prog: &Program,
    key: &KeyContext,
    base: CompileOptions,
    seeds: &[u64],
    target: &str,
) -> Result<Vec<u32>, AnalysisError> {
    seeds
        .par_iter()
        .map(|s| {
            let c = compile_program(prog, key, &CompileOptions { seed: *s, ..base })?;
            let sched = &c.object.schedule;
            let e = sched
                .inputs
                .iter()
                .chain(&sched.outputs)
                .find(|e| e.name == target)
                .ok_or_else(|| AnalysisError::UnknownTarget(target.to_string()))?;
            Ok((e.delta.bits() >> if e.delta.is_wide() { 32 } else { 0 }) as u32)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Balance {
    pub samples: usize,
    pub taken_fraction: f64,
    /// Point-biserial correlation between the branch bit and the oracle's
    /// boolean. `None` when either side is constant.
    pub correlation: Option<f64>,
}

/// Branch bit of the first source condition executed in a run.
pub fn first_condition_bit(trace: &[TraceEntry], source_pcs: &[usize]) -> Option<bool> {
    trace
        .iter()
        .find(|e| source_pcs.binary_search(&e.pc).is_ok())
        .and_then(|e| e.taken)
}

/// Pearson correlation of two boolean series, which for a binary and a
/// dichotomous variable is the point-biserial coefficient.
pub fn correlation(xs: &[bool], ys: &[bool]) -> Option<f64> {
    let n = xs.len() as f64;
    let f = |v: &[bool]| v.iter().filter(|b| **b).count() as f64 / n;
    let (mx, my) = (f(xs), f(ys));
    let cov = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (f64::from(u8::from(*x)) - mx) * (f64::from(u8::from(*y)) - my))
        .sum::<f64>()
        / n;
    let var = mx * (1.0 - mx) * my * (1.0 - my);
    (var > 0.0).then(|| cov / var.sqrt())
}

/// Compiles once per seed and runs every input set, recording the first
/// source condition's branch bit. The program's designated condition must
/// be the first one executed; its truth is taken to be whether the oracle
/// returns nonzero.
pub fn branch_balance(
    prog: &Program,
    key: &KeyContext,
    base: CompileOptions,
    seeds: &[u64],
    inputs: &[Vec<u64>],
) -> Result<Balance, AnalysisError> {
    let truths: Vec<bool> = inputs
        .iter()
        .map(|i| interpret(prog, i).outputs.ret.is_some_and(|v| v.bits != 0))
        .collect();
    let bits: Vec<Vec<bool>> = seeds
        .par_iter()
        .map(|s| {
            let c = compile_program(prog, key, &CompileOptions { seed: *s, ..base })?;
            let mut pcs = c.stats.source_branch_pcs.clone();
            pcs.sort_unstable();
            inputs
                .iter()
                .map(|i| {
                    let (_, run) = run_plain(key, &c.object, i, RunConfig::default())?;
                    first_condition_bit(&run.trace, &pcs).ok_or(AnalysisError::NoCondition)
                })
                .collect::<Result<Vec<bool>, AnalysisError>>()
        })
        .collect::<Result<_, _>>()?;
    let taken: Vec<bool> = bits.iter().flatten().copied().collect();
    let truth: Vec<bool> = bits.iter().flat_map(|_| truths.iter().copied()).collect();
    Ok(Balance {
        samples: taken.len(),
        taken_fraction: taken.iter().filter(|b| **b).count() as f64 / taken.len().max(1) as f64,
        correlation: correlation(&taken, &truth),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_counts_give_zero() {
        let samples: Vec<u32> = (0..2000u32).map(|i| (i % 16) << 28).collect();
        let c = offset_uniformity(&samples, Bins::Sixteen).unwrap();
        assert_eq!(c.statistic, 0.0);
        assert!((c.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_samples_are_rejected() {
        let c = offset_uniformity(&[0; 2000], Bins::Sixteen).unwrap();
        // All mass in one bin: (2000 - 125)^2/125 + 15 * 125.
        assert!((c.statistic - 30000.0).abs() < 1e-9);
        assert!(c.p_value < 1e-9);
        assert!(matches!(offset_uniformity(&[0; 10], Bins::Sixteen), Err(AnalysisError::TooFew(10))));
    }

    #[test]
    fn correlation_extremes() {
        let a = [true, false, true, false];
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b: Vec<bool> = a.iter().map(|x| !x).collect();
        assert!((correlation(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(correlation(&a, &[true; 4]), None);
    }
}
