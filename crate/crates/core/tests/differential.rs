//! The encrypted pipeline against the plaintext interpreter, over the
//! corpus, many seeds and random inputs.

mod common;

use fxa::client::run_plain;
use fxa::oracle::interpret;
use fxa::vm::RunConfig;
use rayon::prelude::*;

const SEEDS: u64 = 50;
const INPUTS: usize = 10;

#[test]
fn corpus_matches_oracle() {
    let key = common::key();
    let cases = common::corpus();
    assert!(cases.len() >= 20);
    let failures: Vec<String> = cases
        .par_iter()
        .flat_map(|case| {
            let inputs = common::input_sets(&case.prog, 7, INPUTS);
            let want: Vec<_> = inputs.iter().map(|i| interpret(&case.prog, i)).collect();
            (0..SEEDS)
                .into_par_iter()
                .flat_map_iter(|seed| {
                    let c = common::build(&case.prog, &key, seed);
                    let cfg = RunConfig { trace: false, ..RunConfig::default() };
                    inputs
                        .iter()
                        .zip(&want)
                        .filter_map(|(i, w)| {
                            let (got, _) = run_plain(&key, &c.object, i, cfg).unwrap();
                            (got != *w).then(|| format!("{} seed {seed} inputs {i:?}: got {got:?}, want {w:?}", case.name))
                        })
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        })
        .collect();
    assert!(failures.is_empty(), "{} mismatches, first: {}", failures.len(), failures[..failures.len().min(5)].join("\n"));
}

#[test]
fn traps_agree() {
    let key = common::key();
    let prog = fxa::frontend::compile_source("int main(int x) { emit(x); return 10 / x; }").unwrap();
    let c = common::build(&prog, &key, 3);
    let (got, _) = run_plain(&key, &c.object, &[0], RunConfig::default()).unwrap();
    assert_eq!(got, interpret(&prog, &[0]));
    assert_eq!(got.status, Err(fxa::value::Trap::Divide));
}
