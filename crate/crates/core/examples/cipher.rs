//! The simulated cipher: fresh encryptions of one value differ, runtime and
//! constant ciphertexts never collide, and the evaluator computes without
//! the key's decrypt side.

use fxa::cipher::{CtOp, CtValue, Evaluator, KeyContext, Origin};
use fxa::codegen::DEFAULT_KEY;

fn main() {
    let key = KeyContext::new(DEFAULT_KEY);
    let a = key.encrypt(20, Origin::Runtime);
    let b = key.encrypt(20, Origin::Runtime);
    let k = key.encrypt(20, Origin::Constant);
    println!("E[20] twice: {}\n             {}", a.to_text(), b.to_text());
    println!("as constant: {} ({:?})", k.to_text(), k.origin());
    let ev: &dyn Evaluator = &key;
    let sum = ev.ct_op(CtOp::Add, &[CtValue::Word(a), CtValue::Word(b)]).unwrap();
    println!("E[20] [+] E[20] decrypts to {}", key.decrypt_value(&sum).unwrap());
    println!("same address handle: {}", ev.addr_handle(&a).unwrap() == ev.addr_handle(&b).unwrap());
}
