use std::collections::{HashMap, HashSet};

use proptest::prelude::*;

use fxa::analysis::{first_difference, shape_from_text, trace_shape};
use fxa::cipher::{Evaluator, KeyContext, Origin};
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, Polarity, DEFAULT_KEY};
use fxa::frontend::compile_source;
use fxa::obfuscation::Offset;
use fxa::oracle::interpret;
use fxa::vm::{trace_text, RunConfig, Tlb};

fn key() -> KeyContext {
    KeyContext::new(DEFAULT_KEY)
}

fn int_expr() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("x".to_string()),
        Just("y".to_string()),
        (-50i32..50).prop_map(|c| format!("({c})")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        (inner.clone(), prop::sample::select(vec!["+", "-", "*", "^", "&", "|", "<", "=="]), inner)
            .prop_map(|(a, op, b)| format!("({a} {op} {b})"))
    })
}

fn agree(src: &str, seed: u64, inputs: &[u64]) -> Result<(), TestCaseError> {
    let k = key();
    let prog = compile_source(src).map_err(|e| TestCaseError::fail(format!("{e:?}")))?;
    let want = interpret(&prog, inputs);
    let c = compile(src, &k, &CompileOptions::seed(seed)).unwrap();
    let (got, _) = run_plain(&k, &c.object, inputs, RunConfig::default()).unwrap();
    prop_assert_eq!(got, want, "{}", src);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn int_expressions_match_oracle(e in int_expr(), x in any::<i32>(), y in any::<i32>(), seed in any::<u64>()) {
        let src = format!("int main(int x, int y) {{ return {e}; }}");
        agree(&src, seed, &[x as u32 as u64, y as u32 as u64])?;
    }

    #[test]
    fn wide_and_float_ops_match_oracle(
        a in any::<i64>(),
        b in any::<i64>(),
        f in -1e6f64..1e6,
        op in prop::sample::select(vec!["+", "-", "*", "^", "&", "|"]),
        seed in any::<u64>(),
    ) {
        let src = format!("long long main(long long a, long long b) {{ return a {op} b; }}");
        agree(&src, seed, &[a as u64, b as u64])?;
        let src = "double main(double f) { return f * 1.5 - f / 4.0; }";
        agree(src, seed, &[f.to_bits()])?;
    }

    #[test]
    fn replay_is_deterministic(x in any::<i32>(), seed in any::<u64>()) {
        let k = key();
        let src = "int main(int x) { int a[4]; int i; for (i = 0; i < 4; i++) a[i] = x + i; if (x > 0) emit(a[1]); return a[3]; }";
        let c = compile(src, &k, &CompileOptions::seed(seed)).unwrap();
        let input = [x as u32 as u64];
        let (o1, r1) = run_plain(&k, &c.object, &input, RunConfig::default()).unwrap();
        let (o2, r2) = run_plain(&k, &c.object, &input, RunConfig::default()).unwrap();
        prop_assert_eq!(o1, o2);
        prop_assert_eq!(trace_shape(&r1.trace), trace_shape(&r2.trace));
        let again = compile(src, &k, &CompileOptions::seed(seed)).unwrap();
        prop_assert_eq!(c.object, again.object);
    }

    #[test]
    fn trace_text_round_trips(x in any::<i32>(), seed in any::<u64>()) {
        let k = key();
        let src = "int main(int x) { int s = 0; while (x > 0 && s < 9) { s++; x = x / 2; } return s; }";
        let c = compile(src, &k, &CompileOptions::seed(seed)).unwrap();
        let (_, r) = run_plain(&k, &c.object, &[x as u32 as u64], RunConfig::default()).unwrap();
        prop_assert_eq!(shape_from_text(&trace_text(&r.trace)).unwrap(), trace_shape(&r.trace));
    }

    #[test]
    fn shape_difference_is_an_equivalence(xs in prop::collection::vec((0i32..20, any::<u64>()), 3)) {
        let k = key();
        let src = "int main(int x) { int s = 1; int i; for (i = 0; i < x; i++) s = s * 3; return s; }";
        let shapes: Vec<_> = xs
            .iter()
            .map(|(x, seed)| {
                let opts = CompileOptions { polarity: Polarity::Truthteller, ..CompileOptions::seed(*seed) };
                let c = compile(src, &k, &opts).unwrap();
                trace_shape(&run_plain(&k, &c.object, &[*x as u64], RunConfig::default()).unwrap().1.trace)
            })
            .collect();
        let eq = |i: usize, j: usize| first_difference(&shapes[i], &shapes[j]).is_none();
        for i in 0..3 {
            prop_assert!(eq(i, i));
            for j in 0..3 {
                prop_assert_eq!(eq(i, j), eq(j, i));
                prop_assert_eq!(first_difference(&shapes[i], &shapes[j]), first_difference(&shapes[j], &shapes[i]));
                prop_assert_eq!(eq(i, j), xs[i].0 == xs[j].0);
                for l in 0..3 {
                    prop_assert!(!(eq(i, j) && eq(j, l)) || eq(i, l));
                }
            }
        }
    }

    #[test]
    fn tlb_invariants(ops in prop::collection::vec((0u32..12, any::<bool>()), 1..80)) {
        let k = key();
        let mut t = Tlb::default();
        let mut memo: HashMap<u32, u64> = HashMap::new();
        let mut writes = 0u64;
        for (addr, write) in ops {
            let h = k.addr_handle(&k.encrypt(addr, Origin::Runtime)).unwrap();
            match t.translate(h, write) {
                Ok(slot) if write => {
                    prop_assert_eq!(slot, writes);
                    writes += 1;
                    memo.insert(addr, slot);
                }
                Ok(slot) => prop_assert_eq!(Some(&slot), memo.get(&addr)),
                Err(_) => prop_assert!(!write && !memo.contains_key(&addr)),
            }
            prop_assert_eq!(t.next_free(), writes);
            prop_assert_eq!(t.mapped(), memo.len());
            let slots: HashSet<u64> = memo.values().copied().collect();
            prop_assert_eq!(slots.len(), memo.len());
        }
    }

    #[test]
    fn offsets_apply_and_remove(bits in any::<u64>(), x in any::<u64>(), wide in any::<bool>()) {
        let o = Offset::from_bits(wide, bits);
        let x = if wide { x } else { x & 0xffff_ffff };
        prop_assert_eq!(o.remove(o.apply(x)), x);
        prop_assert_eq!(o.add(o.neg()), Offset::zero(wide));
        prop_assert_eq!(o.sub(o), Offset::zero(wide));
    }
}
