//! How often the compiled branch for `x > 0` is taken across
//! recompilations, and whether that says anything about the condition.

use fxa::analysis::branch_balance;
use fxa::cipher::KeyContext;
use fxa::codegen::{CompileOptions, Polarity, DEFAULT_KEY};
use fxa::frontend::compile_source;

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let prog = compile_source("int main(int x) { if (x > 0) return 1; return 0; }").unwrap();
    let seeds: Vec<u64> = (0..2000).collect();
    let inputs = [vec![5], vec![(-3i32) as u32 as u64]];
    for polarity in [Polarity::Coin, Polarity::Truthteller, Polarity::Liar] {
        let opts = CompileOptions { polarity, ..CompileOptions::seed(0) };
        let b = branch_balance(&prog, &key, opts, &seeds, &inputs).unwrap();
        let corr = b.correlation.map_or("undefined".to_string(), |c| format!("{c:+.3}"));
        println!("{polarity:?}: taken {:.3} of {} runs, correlation with truth {corr}", b.taken_fraction, b.samples);
    }
}
