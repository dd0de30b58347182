//! One check per acceptance criterion. Each prints a PASS/FAIL line with
//! its measurements, then asserts.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use fxa::analysis::{self, Bins};
use fxa::cipher::{CtValue, KeyContext, Origin};
use fxa::client::run_plain;
use fxa::codegen::{compile, compile_program, CompileOptions, Polarity, StormKind, DEFAULT_KEY};
use fxa::frontend::compile_source;
use fxa::isa::Opcode;
use fxa::obfuscation::OffsetSource;
use fxa::oracle::interpret;
use fxa::vm::{RunConfig, TraceEntry};
use fxa_acceptance::{corpus, fixed_input, input_sets, plain_address, verdict};
use rayon::prelude::*;

fn key() -> KeyContext {
    KeyContext::new(DEFAULT_KEY)
}

fn traced(key: &KeyContext, src: &str, seed: u64, inputs: &[u64]) -> (fxa::codegen::Compiled, Vec<TraceEntry>) {
    let c = compile(src, key, &CompileOptions::seed(seed)).unwrap();
    let (o, run) = run_plain(key, &c.object, inputs, RunConfig::default()).unwrap();
    assert_eq!(o.status, Ok(()), "{src}");
    (c, run.trace)
}

#[test]
fn criterion_1_differential() {
    let key = key();
    let cases = corpus();
    let start = Instant::now();
    let runs: Vec<(usize, Vec<String>)> = cases
        .par_iter()
        .map(|case| {
            let inputs = input_sets(&case.prog, 11, 10);
            let want: Vec<_> = inputs.iter().map(|i| interpret(&case.prog, i)).collect();
            let bad: Vec<String> = (0..50u64)
                .into_par_iter()
                .flat_map_iter(|seed| {
                    let c = compile_program(&case.prog, &key, &CompileOptions::seed(seed)).unwrap();
                    let cfg = RunConfig {
                        trace: false,
                        ..RunConfig::default()
                    };
                    inputs
                        .iter()
                        .zip(&want)
                        .filter_map(|(i, w)| {
                            let (got, _) = run_plain(&key, &c.object, i, cfg).unwrap();
                            (got != *w).then(|| format!("{} seed {seed} {i:?}", case.name))
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            (50 * inputs.len(), bad)
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let total: usize = runs.iter().map(|r| r.0).sum();
    let bad: Vec<&String> = runs.iter().flat_map(|r| &r.1).collect();
    let pass = cases.len() >= 20 && bad.is_empty() && secs <= 300.0;
    let detail = format!(
        "{} programs, {total} runs, {} mismatches, {secs:.1}s{}",
        cases.len(),
        bad.len(),
        bad.first().map(|b| format!(", first: {b}")).unwrap_or_default()
    );
    assert!(verdict(1, pass, &detail));
}

fn shapes_agree(key: &KeyContext, prog: &fxa::frontend::typed::Program, polarity: Polarity) -> bool {
    let input = fixed_input(prog);
    let shapes: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let opts = CompileOptions {
                polarity,
                ..CompileOptions::seed(seed)
            };
            let c = compile_program(prog, key, &opts).unwrap();
            let (_, run) = run_plain(key, &c.object, &input, RunConfig::default()).unwrap();
            analysis::trace_shape(&run.trace)
        })
        .collect();
    shapes.iter().all(|s| *s == shapes[0])
}

#[test]
fn criterion_2_shape_invariance() {
    let key = key();
    let cases = corpus();
    let coin: Vec<&str> = cases
        .iter()
        .filter(|c| shapes_agree(&key, &c.prog, Polarity::Coin))
        .map(|c| c.name.as_str())
        .collect();
    let fixed = cases
        .iter()
        .filter(|c| shapes_agree(&key, &c.prog, Polarity::Truthteller))
        .count();
    let pass = coin.len() == cases.len();
    let detail = format!(
        "{}/{} programs invariant over 20 seeds with per-condition polarity coins; {fixed}/{} invariant with polarity fixed",
        coin.len(),
        cases.len(),
        cases.len()
    );
    assert!(verdict(2, pass, &detail));
}

#[test]
fn criterion_3_offset_equiprobability() {
    let key = key();
    let prog = compile_source("int main(int x) { int y = x * 7 + 1; emit(y); return y - x; }").unwrap();
    let seeds: Vec<u64> = (0..2000).collect();
    let base = CompileOptions::seed(0);
    let fair = analysis::schedule_offsets(&prog, &key, base, &seeds, "return").unwrap();
    let fair = analysis::offset_uniformity(&fair, Bins::Sixteen).unwrap();
    let bent = CompileOptions {
        offset_source: OffsetSource::Constant(0x1234_5678),
        ..base
    };
    let bad = analysis::schedule_offsets(&prog, &key, bent, &seeds, "return").unwrap();
    let bad = analysis::offset_uniformity(&bad, Bins::Sixteen).unwrap();
    let pass = fair.p_value > 0.001 && bad.p_value < 1e-6;
    let detail = format!(
        "2000 compilations: chi2 {:.2} p {:.4}; constant-offset mutant chi2 {:.0} p {:.2e}",
        fair.statistic, fair.p_value, bad.statistic, bad.p_value
    );
    assert!(verdict(3, pass, &detail));
}

#[test]
fn criterion_4_polarity_balance() {
    let key = key();
    let prog = compile_source("int main(int x) { if (x > 0) return 1; return 0; }").unwrap();
    let seeds: Vec<u64> = (0..2000).collect();
    let base = CompileOptions::seed(0);
    let fixed = analysis::branch_balance(&prog, &key, base, &seeds, &[vec![5]]).unwrap();
    let mixed = analysis::branch_balance(&prog, &key, base, &seeds, &[vec![5], vec![(-3i32) as u32 as u64]]).unwrap();
    let corr = mixed.correlation.unwrap_or(f64::NAN);
    let pass = (0.45..=0.55).contains(&fixed.taken_fraction) && corr.abs() < 0.1;
    let detail = format!(
        "taken fraction {:.4} over {} runs of a true condition; point-biserial correlation {corr:.4} over {} mixed runs",
        fixed.taken_fraction, fixed.samples, mixed.samples
    );
    assert!(verdict(4, pass, &detail));
}

#[test]
fn criterion_5_join_rule() {
    let key = key();
    let cases = corpus();
    let (checks, failures) = cases
        .par_iter()
        .flat_map(|c| (0..20u64).into_par_iter().map(move |s| (c, s)))
        .map(|(c, s)| {
            let st = compile_program(&c.prog, &key, &CompileOptions::seed(s)).unwrap().stats;
            (st.join_checks, st.join_failures)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let pass = checks > 0 && failures == 0;
    let detail = format!("{checks} joins reconciled across {} programs x 20 seeds, {failures} mismatches", cases.len());
    assert!(verdict(5, pass, &detail));
}

/// Stores in the trace, and the plain addresses of the last `n` of them.
fn stores(key: &KeyContext, trace: &[TraceEntry], n: usize) -> (usize, Vec<u32>) {
    let sw: Vec<&TraceEntry> = trace.iter().filter(|e| e.op == Opcode::Sw).collect();
    let tail = sw[sw.len().saturating_sub(n)..]
        .iter()
        .map(|e| plain_address(key, &e.reads[0], &e.consts[0]))
        .collect();
    (sw.len(), tail)
}

#[test]
fn criterion_6_write_storms() {
    let key = key();
    let mut notes = Vec::new();
    let mut pass = true;
    for n in [1usize, 4, 8, 64, 100] {
        let i = (n / 2) as u64;
        // Local int array, computed index.
        let base = format!("int main(int i, int v) {{ int a[{n}]; return v; }}");
        let write = format!("int main(int i, int v) {{ int a[{n}]; a[i] = v; return v; }}");
        let (_, t0) = traced(&key, &base, 1, &[i, 9]);
        let (c1, t1) = traced(&key, &write, 1, &[i, 9]);
        let (s0, _) = stores(&key, &t0, 0);
        let (s1, addrs) = stores(&key, &t1, n);
        let distinct: HashSet<u32> = addrs.iter().copied().collect();
        let looped = c1.stats.storms.iter().any(|s| s.kind == StormKind::Write && s.looped);
        let ok = s1 - s0 == n && distinct.len() == n && looped == (n > 64);
        pass &= ok;
        notes.push(format!("int[{n}] {} stores{}", s1 - s0, if looped { " looped" } else { "" }));

        // Global struct array, field b of {a, b, c}.
        let decl = format!("struct s {{ int a; int b; int c; }}; struct s A[{n}];");
        let base = format!("{decl} int main(int i, int v) {{ return v; }}");
        let write = format!("{decl} int main(int i, int v) {{ A[i].b = v; return v; }}");
        let (_, t0) = traced(&key, &base, 2, &[i, 9]);
        let (c1, t1) = traced(&key, &write, 2, &[i, 9]);
        let (s0, _) = stores(&key, &t0, 0);
        let (s1, addrs) = stores(&key, &t1, n);
        let origin = c1.layout["A"];
        let want: HashSet<u32> = (0..n as u32).map(|j| origin + 3 * j + 1).collect();
        let got: HashSet<u32> = addrs.iter().copied().collect();
        let looped = c1.stats.storms.iter().any(|s| s.kind == StormKind::Write && s.looped);
        let ok = s1 - s0 == n && got == want && looped == (n > 64);
        pass &= ok;
        notes.push(format!("struct[{n}].b {} stores{}{}", s1 - s0, if got == want { "" } else { " off-stripe" }, if looped { " looped" } else { "" }));
    }
    assert!(verdict(6, pass, &notes.join(", ")));
}

fn corpus_traces(key: &KeyContext, seeds: u64) -> Vec<(String, Vec<TraceEntry>)> {
    corpus()
        .par_iter()
        .flat_map(|c| (0..seeds).into_par_iter().map(move |s| (c, s)))
        .map(|(c, s)| {
            let obj = compile_program(&c.prog, key, &CompileOptions::seed(s)).unwrap();
            let (_, run) = run_plain(key, &obj.object, &fixed_input(&c.prog), RunConfig::default()).unwrap();
            (c.name.clone(), run.trace)
        })
        .collect()
}

#[test]
fn criterion_7_disjointness() {
    let key = key();
    let traces = corpus_traces(&key, 3);
    let mut consts = HashSet::new();
    let mut runtime = HashSet::new();
    let mut mislabelled = 0usize;
    for (_, t) in &traces {
        for e in t {
            for c in &e.consts {
                let words = match c {
                    CtValue::Word(w) => vec![*w],
                    CtValue::Pair(p) => vec![p.hi, p.lo],
                };
                for w in words {
                    mislabelled += usize::from(w.origin() != Origin::Constant);
                    consts.insert(*w.payload());
                }
            }
            for w in e.reads.iter().chain(&e.writes) {
                mislabelled += usize::from(w.origin() != Origin::Runtime);
                runtime.insert(*w.payload());
            }
        }
    }
    let collisions = consts.intersection(&runtime).count();
    let pass = collisions == 0 && mislabelled == 0 && !consts.is_empty() && !runtime.is_empty();
    let detail = format!(
        "{} constant and {} runtime ciphertexts over {} traces, {collisions} collisions, {mislabelled} wrong origin tags",
        consts.len(),
        runtime.len(),
        traces.len()
    );
    assert!(verdict(7, pass, &detail));
}

#[test]
fn criterion_8_tlb() {
    let key = key();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/corpus/pointer_chase.c")).unwrap();
    let mut pass = true;
    let mut writes = 0usize;
    let mut reads = 0usize;
    for seed in 0..5u64 {
        let (_, trace) = traced(&key, &src, seed, &[3, 13]);
        let mut next = 0u64;
        let mut last_write: HashMap<u32, u64> = HashMap::new();
        let mut first_touch = Vec::new();
        for e in &trace {
            let (Opcode::Sw | Opcode::Lw) = e.op else { continue };
            let addr = plain_address(&key, &e.reads[0], &e.consts[0]);
            let slot = e.slot.expect("memory entry has a slot");
            if e.op == Opcode::Sw {
                writes += 1;
                pass &= slot == next;
                next += 1;
                if !last_write.contains_key(&addr) {
                    first_touch.push(slot);
                }
                last_write.insert(addr, slot);
            } else {
                reads += 1;
                pass &= last_write.get(&addr) == Some(&slot);
            }
        }
        pass &= first_touch.iter().enumerate().all(|(i, s)| *s == i as u64);
    }
    let detail = format!("pointer_chase x 5 seeds: {writes} writes each on a fresh slot, {reads} reads on the last written slot, first touches on slots 0,1,2,...");
    assert!(verdict(8, pass, &detail));
}

#[test]
fn criterion_9_copy_preservation() {
    let key = key();
    let traces = corpus_traces(&key, 3);
    let mut movs = 0usize;
    let mut bad = 0usize;
    for (_, t) in &traces {
        for e in t.iter().filter(|e| e.op == Opcode::Mov) {
            movs += 1;
            bad += usize::from(e.reads != e.writes || e.reads.len() != 1);
        }
    }
    let pass = movs > 0 && bad == 0;
    assert!(verdict(9, pass, &format!("{movs} movs over {} traces, {bad} altered", traces.len())));
}
