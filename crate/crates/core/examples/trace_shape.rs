//! Traces of the same program from different seeds. With a fixed branch
//! polarity the shapes agree; with per-condition coins they need not.

use fxa::analysis::{first_difference, trace_shape};
use fxa::cipher::KeyContext;
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, Polarity, DEFAULT_KEY};
use fxa::vm::{RunConfig, TraceEntry};

const SRC: &str = "int main(int x) { int s = 0; int i; for (i = 0; i < 3; i++) if (x > i) s += x; return s; }";

fn trace(key: &KeyContext, seed: u64, polarity: Polarity) -> Vec<TraceEntry> {
    let opts = CompileOptions { polarity, ..CompileOptions::seed(seed) };
    let c = compile(SRC, key, &opts).unwrap();
    run_plain(key, &c.object, &[2], RunConfig::default()).unwrap().1.trace
}

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    for polarity in [Polarity::Truthteller, Polarity::Coin] {
        let a = trace_shape(&trace(&key, 1, polarity));
        let b = trace_shape(&trace(&key, 2, polarity));
        match first_difference(&a, &b) {
            None => println!("{polarity:?}: equal shapes over {} steps", a.len()),
            Some(i) => println!("{polarity:?}: shapes differ at step {i}"),
        }
    }
    for line in trace(&key, 1, Polarity::Coin).iter().take(10) {
        println!("{}", line.to_line());
    }
}
