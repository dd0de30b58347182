use super::*;
use crate::client::run_plain;
use crate::frontend::compile_source;
use crate::oracle::interpret;
use crate::vm::RunConfig;

fn agree(src: &str, inputs: &[u64], seeds: std::ops::Range<u64>) {
    let key = KeyContext::new(DEFAULT_KEY);
    let prog = compile_source(src).unwrap();
    let want = interpret(&prog, inputs);
    for seed in seeds {
        let c = compile_program(&prog, &key, &CompileOptions::seed(seed)).unwrap();
        c.object.validate().unwrap();
        let (got, _) = run_plain(&key, &c.object, inputs, RunConfig::default()).unwrap();
        assert_eq!(got, want, "seed {seed} inputs {inputs:?}\n{src}");
        assert_eq!(c.stats.join_failures, 0);
    }
}

#[test]
fn straight_line() {
    agree("int main(int x) { return x + 1; }", &[41], 0..5);
    agree("int main(int x, int y) { return x * y - 7 / 2 + (x ^ y); }", &[6, 9], 0..5);
    agree("int main() { return (short)70000; }", &[], 0..5);
    agree("unsigned main(unsigned x) { return x / 3u + (x >> 2); }", &[0xffff_fff0], 0..5);
}

#[test]
fn wide_and_float() {
    agree("long long main(long long a, long long b) { return a * b + (a >> 3) - -b; }", &[1 << 40, 12345], 0..5);
    agree("double main(double a) { return a * 2.5 - -a; }", &[1.25f64.to_bits()], 0..5);
    agree("float main(float a) { return a / 3.0f; }", &[u64::from(7.0f32.to_bits())], 0..5);
    agree("int main(double a) { if (a < 1.5) return (int)a; return (char)(a * 100.0); }", &[3.75f64.to_bits()], 0..5);
}

#[test]
fn control_flow() {
    let src = "int main(int n) { int s = 0; int i; for (i = 0; i < n; i++) { if (i % 3 == 0) continue; s += i; if (s > 40) break; } return s; }";
    for n in [0, 1, 5, 20] {
        agree(src, &[n], 0..4);
    }
    agree("int main(int n) { int i = 0; do { i += 2; } while (i < n); return i; }", &[7], 0..4);
    agree("int main(int a, int b) { return (a > 0 && b > 0) || a == b ? a - b : !a; }", &[3, 3], 0..4);
}

#[test]
fn calls_and_recursion() {
    let src = "int fib(int n) { if (n < 2) return n; return fib(n - 1) + fib(n - 2); }
               int main(int n) { int a[5]; int i; for (i = 0; i < 5; i++) a[i] = fib(n + i);
               emit(a[4]); return a[0] + a[1]; }";
    agree(src, &[3], 0..4);
}

#[test]
fn goto_and_interior() {
    let src = "int main(int n) { int s = 0; __label__ L;
               int add(int k) { s = s + k; return s; }
               add(n); if (s < 10) goto L; add(100); L: return s; }";
    agree(src, &[3], 0..4);
    agree(src, &[30], 0..4);
}

#[test]
fn shape_is_seed_independent() {
    let key = KeyContext::new(DEFAULT_KEY);
    let src = "int main(int n) { int a[4]; int i; for (i = 0; i < 4; i++) a[i] = i * n; return a[n & 3]; }";
    let shape = |seed| {
        let opts = CompileOptions {
            polarity: Polarity::Truthteller,
            ..CompileOptions::seed(seed)
        };
        let c = compile(src, &key, &opts).unwrap();
        let (_, run) = run_plain(&key, &c.object, &[5], RunConfig::default()).unwrap();
        run.trace.iter().map(|e| (e.op, e.regs.clone(), e.taken.is_some(), e.imm)).collect::<Vec<_>>()
    };
    let a = shape(1);
    assert!(!a.is_empty());
    for s in 2..6 {
        assert_eq!(a, shape(s));
    }
}
