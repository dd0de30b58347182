//! The plaintext reference interpreter next to the VM, on the same inputs.

use fxa::cipher::KeyContext;
use fxa::client::run_plain;
use fxa::codegen::{compile_program, CompileOptions, DEFAULT_KEY};
use fxa::frontend::compile_source;
use fxa::oracle::interpret;
use fxa::vm::RunConfig;

const SRC: &str = "
struct pt { int x; int y; };
double main(int a, double s) {
    struct pt p[3];
    int i;
    for (i = 0; i < 3; i++) { p[i].x = a * i; p[i].y = a - i; }
    return s * (p[2].x + p[1].y);
}";

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let prog = compile_source(SRC).expect("parses");
    let inputs = [7, 0.5f64.to_bits()];
    let want = interpret(&prog, &inputs);
    print!("oracle:\n{}", want.outputs);
    for seed in 0..4 {
        let c = compile_program(&prog, &key, &CompileOptions::seed(seed)).expect("compiles");
        let (got, _) = run_plain(&key, &c.object, &inputs, RunConfig::default()).expect("runs");
        println!("seed {seed}: {}", if got == want { "agrees" } else { "DISAGREES" });
    }
    let bad = compile_source("int main(int x) { return x / 0; }").unwrap();
    println!("divide by zero: {:?}", interpret(&bad, &[1]).status);
}
