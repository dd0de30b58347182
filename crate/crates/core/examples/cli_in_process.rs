//! Drive the `fxa` command line from code: compile to files, run, diff traces.

use fxa::cli::main_with;

fn fxa(args: &[&str]) -> i32 {
    let argv: Vec<String> = std::iter::once("fxa").chain(args.iter().copied()).map(String::from).collect();
    let code = main_with(&argv, &mut std::io::stdout(), &mut std::io::stderr());
    println!("  -> exit {code}");
    code
}

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join(format!("fxa-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    std::fs::write(p("d.c"), "int main(int a, int b) { if (b == 0) return -1; return a / b; }")?;
    for seed in ["1", "2"] {
        fxa(&["compile", &p("d.c"), "--seed", seed, "--polarity", "truthteller", "-o", &p(&format!("d{seed}.fxa"))]);
        fxa(&["run", &p(&format!("d{seed}.fxa")), "--in", "17", "--in", "5", "--trace", &p(&format!("d{seed}.log"))]);
    }
    fxa(&["diff-trace", &p("d1.log"), &p("d2.log")]);
    fxa(&["oracle-run", &p("d.c"), "--in", "17", "--in", "0"]);
    fxa(&["storm-report", &p("d.c")]);
    std::fs::remove_dir_all(&dir)
}
