//! Serialise an object and its io schedule, read them back and run.

use fxa::cipher::KeyContext;
use fxa::client::run_plain;
use fxa::codegen::{compile, CompileOptions, DEFAULT_KEY};
use fxa::isa::{decode_object, encode_object};
use fxa::obfuscation::IoSchedule;
use fxa::vm::RunConfig;

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let c = compile("unsigned main(unsigned a, unsigned b) { return (a << 3) ^ b; }", &key, &CompileOptions::seed(5)).unwrap();
    let bytes = encode_object(&c.object);
    let sched = c.object.schedule.to_text();
    println!("object: {} bytes, magic {:?}", bytes.len(), String::from_utf8_lossy(&bytes[..4]));
    println!("schedule:\n{sched}");
    let mut back = decode_object(&bytes).unwrap();
    back.schedule = IoSchedule::from_text(&sched).unwrap();
    assert_eq!(back, c.object);
    let (out, _) = run_plain(&key, &back, &[5, 1], RunConfig::default()).unwrap();
    print!("{}", out.outputs);
    for ins in back.instructions.iter().take(8) {
        println!("  {ins}");
    }
}
