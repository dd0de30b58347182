//! Chi-square test of the offsets a program's return value carries over
//! many recompilations, against a generator stuck on one value.

use fxa::analysis::{offset_uniformity, schedule_offsets, Bins};
use fxa::cipher::KeyContext;
use fxa::codegen::{CompileOptions, DEFAULT_KEY};
use fxa::frontend::compile_source;
use fxa::obfuscation::OffsetSource;

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let prog = compile_source("int main(int x) { int y = x * 7 + 1; return y; }").unwrap();
    let seeds: Vec<u64> = (0..2000).collect();
    let fair = CompileOptions::seed(0);
    let stuck = CompileOptions { offset_source: OffsetSource::Constant(42), ..fair };
    for (name, opts) in [("seeded", fair), ("constant", stuck)] {
        let xs = schedule_offsets(&prog, &key, opts, &seeds, "return").unwrap();
        for bins in [Bins::Sixteen, Bins::TwoFiftySix] {
            let c = offset_uniformity(&xs, bins).unwrap();
            println!("{name:8} {:3} bins: chi2 {:10.2} df {:3} p {:.4e}", bins.count(), c.statistic, c.df, c.p_value);
        }
    }
}
