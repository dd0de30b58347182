//! The memory front end: first touches take slots 0, 1, 2, ...; every
//! write moves the address to a fresh slot; reads follow the last write.

use fxa::cipher::{Evaluator, KeyContext, Origin};
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, DEFAULT_KEY};
use fxa::isa::Opcode;
use fxa::vm::{RunConfig, Tlb};

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let mut tlb = Tlb::default();
    for (addr, write) in [(100, true), (200, true), (100, false), (100, true), (100, false)] {
        let h = key.addr_handle(&key.encrypt(addr, Origin::Runtime)).unwrap();
        println!("{} {addr}: slot {:?}", if write { "write" } else { "read " }, tlb.translate(h, write));
    }

    let src = "int next[4]; int main(int s) { int i; for (i = 0; i < 4; i++) next[i] = (i + 1) & 3; return next[next[s]]; }";
    let c = compile(src, &key, &CompileOptions::seed(3)).unwrap();
    let (out, run) = run_plain(&key, &c.object, &[2], RunConfig::default()).unwrap();
    let slots: Vec<String> = run
        .trace
        .iter()
        .filter(|e| matches!(e.op, Opcode::Sw | Opcode::Lw))
        .map(|e| format!("{}{}", if e.op == Opcode::Sw { 'w' } else { 'r' }, e.slot.unwrap()))
        .collect();
    println!("{}", slots.join(" "));
    print!("{}", out.outputs);
}
