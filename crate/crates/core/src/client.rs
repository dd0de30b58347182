//! The key holder's side of a run: encrypt inputs under the schedule's
//! offsets, and decrypt and de-offset what comes back.

use thiserror::Error;

use crate::cipher::{CipherError, CipherPair, CtValue, KeyContext, Origin};
use crate::isa::ObjectCode;
use crate::obfuscation::{IoLoc, IoSchedule};
use crate::value::{Outputs, RunOutcome, Value};
use crate::vm::{self, RunConfig, VmRun};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("expected {expected} inputs, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("output on port {0} is not in the schedule")]
    UnknownPort(u32),
    #[error("half of a 64-bit output on port {0} is missing")]
    Torn(u32),
    #[error(transparent)]
    Cipher(#[from] CipherError),
}

/// Seals plain input bits (one `u64` per input, low 32 bits for words).
pub fn encrypt_inputs(key: &KeyContext, sched: &IoSchedule, inputs: &[u64]) -> Result<Vec<CtValue>, ClientError> {
    if inputs.len() != sched.inputs.len() {
        return Err(ClientError::Arity {
            expected: sched.inputs.len(),
            found: inputs.len(),
        });
    }
    Ok(sched
        .inputs
        .iter()
        .zip(inputs)
        .map(|(e, x)| {
            let bits = e.delta.apply(*x);
            if e.delta.is_wide() {
                CtValue::Pair(key.encrypt_pair(bits, Origin::Runtime))
            } else {
                CtValue::Word(key.encrypt(bits as u32, Origin::Runtime))
            }
        })
        .collect())
}

/// Parses plain inputs in the types the schedule declares.
pub fn parse_inputs(sched: &IoSchedule, text: &[String]) -> Result<Vec<u64>, String> {
    if text.len() != sched.inputs.len() {
        return Err(format!("expected {} inputs, got {}", sched.inputs.len(), text.len()));
    }
    sched
        .inputs
        .iter()
        .zip(text)
        .map(|(e, s)| Value::parse(e.kind, s).map(|v| v.bits))
        .collect()
}

/// Decrypts and de-offsets the emit stream and `main`'s return value.
pub fn decode(key: &KeyContext, sched: &IoSchedule, run: &VmRun) -> Result<Outputs, ClientError> {
    let mut out = Outputs::default();
    let mut pending = None;
    for (port, ct) in &run.outputs {
        let e = sched
            .outputs
            .iter()
            .find(|e| e.loc == IoLoc::Port(*port))
            .ok_or(ClientError::UnknownPort(*port))?;
        let runtime = if e.delta.is_wide() {
            match pending.take() {
                None => {
                    pending = Some((*port, *ct));
                    continue;
                }
                Some((p, hi)) if p == *port => key.decrypt_pair(&CipherPair { hi, lo: *ct })?,
                Some((p, _)) => return Err(ClientError::Torn(p)),
            }
        } else {
            u64::from(key.decrypt(ct)?)
        };
        out.emits.push(Value::new(e.kind, e.delta.remove(runtime)));
    }
    if let Some((p, _)) = pending {
        return Err(ClientError::Torn(p));
    }
    if run.status.is_ok() {
        for e in &sched.outputs {
            if let IoLoc::Reg(r) = e.loc {
                if let Some(v) = run.reg_value(r, e.delta.is_wide()) {
                    let runtime = key.decrypt_value(&v)?;
                    out.ret = Some(Value::new(e.kind, e.delta.remove(runtime)));
                }
            }
        }
    }
    Ok(out)
}

/// Encrypts, runs and decodes in one go. The outcome is comparable with
/// the plaintext interpreter's.
pub fn run_plain(
    key: &KeyContext,
    obj: &ObjectCode,
    inputs: &[u64],
    cfg: RunConfig,
) -> Result<(RunOutcome, VmRun), ClientError> {
    let cts = encrypt_inputs(key, &obj.schedule, inputs)?;
    let run = vm::run(obj, key, &cts, cfg);
    let outputs = decode(key, &obj.schedule, &run)?;
    Ok((
        RunOutcome {
            outputs,
            status: run.status.clone(),
        },
        run,
    ))
}
