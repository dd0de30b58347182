//! Write storms: one write into an array rewrites every entry under a
//! new shared offset. Large arrays get a loop instead of unrolled stores.

use fxa::cipher::KeyContext;
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, DEFAULT_KEY};
use fxa::isa::Opcode;
use fxa::vm::RunConfig;

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    for n in [1, 8, 64, 100] {
        let src = format!("struct s {{ int a; int b; }}; struct s A[{n}]; int main(int i) {{ A[i].b = 3; return A[i].b; }}");
        let c = compile(&src, &key, &CompileOptions::seed(0)).unwrap();
        let (_, run) = run_plain(&key, &c.object, &[0], RunConfig::default()).unwrap();
        let stores = run.trace.iter().filter(|e| e.op == Opcode::Sw).count();
        println!("A[{n}]: {} code words, {stores} stores executed", c.object.instructions.len());
        for s in &c.stats.storms {
            println!("  {:?} over {}.{} ({} words{})", s.kind, s.var, s.class, s.words, if s.looped { ", looped" } else { "" });
        }
    }
}
