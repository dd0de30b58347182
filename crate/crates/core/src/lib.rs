//! An obfuscating compiler for a C subset targeting the FxA encrypted
//! instruction set, a simulated-cipher virtual machine to run its output,
//! a plaintext reference interpreter, and statistics over traces.

pub mod analysis;
pub mod cipher;
pub mod cli;
pub mod client;
pub mod codegen;
pub mod isa;
pub mod frontend;
pub mod obfuscation;
pub mod oracle;
pub mod value;
pub mod vm;
