//! Shared pieces of the acceptance run: the corpus, input generation and
//! the verdict line each check prints.

use std::io::Write;
use std::path::PathBuf;

use fxa::cipher::{CtValue, KeyContext, NumKind};
use fxa::frontend::compile_source;
use fxa::frontend::typed::Program;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Case {
    pub name: String,
    pub prog: Program,
}

pub fn corpus() -> Vec<Case> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/corpus");
    let mut paths: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "c"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let src = std::fs::read_to_string(&p).unwrap();
            Case {
                name: p.file_stem().unwrap().to_string_lossy().into_owned(),
                prog: compile_source(&src).unwrap_or_else(|d| panic!("{}: {d}", p.display())),
            }
        })
        .collect()
}

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
            if k.is_wide() {
                x as u64
            } else {
                x as u64 & 0xffff_ffff
            }
        }
    }
}

pub fn input_sets(prog: &Program, seed: u64, n: usize) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| prog.input_types().iter().map(|b| random_input(b.kind(), &mut rng)).collect())
        .collect()
}

/// A fixed, modest input for runs that only need one.
pub fn fixed_input(prog: &Program) -> Vec<u64> {
    prog.input_types()
        .iter()
        .map(|b| match b.kind() {
            NumKind::F32 => u64::from(2.5f32.to_bits()),
            NumKind::F64 => 2.5f64.to_bits(),
            _ => 5,
        })
        .collect()
}

/// Plain word address the key holder reads out of an `lw`/`sw` entry:
/// the address register's value plus the instruction constant.
pub fn plain_address(key: &KeyContext, reg: &fxa::cipher::Ciphertext, k: &CtValue) -> u32 {
    let a = key.decrypt(reg).expect("address register");
    let k = key.decrypt_value(k).expect("address constant") as u32;
    a.wrapping_add(k)
}

/// Prints the verdict straight to the process's stdout so it shows even
/// when the test harness captures output.
pub fn verdict(n: u32, pass: bool, detail: &str) -> bool {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    pass
}
