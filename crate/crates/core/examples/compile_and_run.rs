//! Compile a small program, run it on the encrypted VM and decode the result.
//!
//!     cargo run --example compile_and_run -- 12

use fxa::cipher::KeyContext;
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, DEFAULT_KEY};
use fxa::vm::RunConfig;

const SRC: &str = "
int fact(int n) { if (n < 2) return 1; return n * fact(n - 1); }
int main(int n) { int i; for (i = 1; i <= n; i++) emit(fact(i)); return fact(n); }
";

fn main() {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(6);
    let key = KeyContext::new(DEFAULT_KEY);
    let c = compile(SRC, &key, &CompileOptions::seed(1)).expect("compiles");
    println!("{} instructions, {} offsets drawn", c.object.instructions.len(), c.stats.offsets_drawn);
    print!("{}", c.object.schedule.to_text());
    let (out, run) = run_plain(&key, &c.object, &[n], RunConfig::default()).expect("runs");
    println!("{} steps", run.steps);
    print!("{}", out.outputs);
}
