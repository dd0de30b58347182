#![allow(dead_code)]

use std::path::PathBuf;

use fxa::cipher::{KeyContext, NumKind};
use fxa::codegen::{compile_program, CompileOptions, Compiled, DEFAULT_KEY};
use fxa::frontend::compile_source;
use fxa::frontend::typed::Program;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub name: String,
    pub src: String,
    pub prog: Program,
}

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

pub fn corpus() -> Vec<Case> {
    let mut paths: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "c"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let src = std::fs::read_to_string(&p).unwrap();
            let prog = compile_source(&src).unwrap_or_else(|d| panic!("{}: {d}", p.display()));
            Case {
                name: p.file_stem().unwrap().to_string_lossy().into_owned(),
                src,
                prog,
            }
        })
        .collect()
}

pub fn key() -> KeyContext {
    KeyContext::new(DEFAULT_KEY)
}

pub fn build(prog: &Program, key: &KeyContext, seed: u64) -> Compiled {
    compile_program(prog, key, &CompileOptions::seed(seed)).unwrap()
}

/// Mostly small values with some full-range ones, in each input's kind.
pub fn random_input(kind: NumKind, rng: &mut ChaCha8Rng) -> u64 {
    let small = rng.gen_bool(0.7);
    match kind {
        NumKind::F32 => {
            let v = if small { rng.gen_range(-64..64) as f32 / 4.0 } else { f32::from_bits(rng.gen()) };
            u64::from(v.to_bits())
        }
        NumKind::F64 => {
            let v = if small { rng.gen_range(-64..64) as f64 / 8.0 } else { f64::from_bits(rng.gen()) };
            v.to_bits()
        }
        k => {
            let x: i64 = if small { rng.gen_range(-40..200) } else { rng.gen() };
            if k.is_wide() { x as u64 } else { x as u64 & 0xffff_ffff }
        }
    }
}

pub fn random_inputs(prog: &Program, rng: &mut ChaCha8Rng) -> Vec<u64> {
    prog.input_types().iter().map(|b| random_input(b.kind(), rng)).collect()
}

pub fn input_sets(prog: &Program, seed: u64, n: usize) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_inputs(prog, &mut rng)).collect()
}
