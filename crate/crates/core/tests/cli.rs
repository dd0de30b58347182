use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn fxa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fxa")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn source(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

const IDENT: &str = "int main(int x) { return x; }";
const DIV: &str = "int main(int a, int b) { return a / b; }";
const BRANCHY: &str = "int main(int x) { int s = 0; if (x > 2) s = x * 3; else s = 1; emit(s); return s + 1; }";

#[test]
fn compile_and_run_identity() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "a.c", IDENT);
    let obj = path(&d, "a.fxa");
    let o = fxa(&["compile", &src, "--seed", "1", "-o", &obj]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(Path::new(&path(&d, "a.sched")).exists());
    let o = fxa(&["run", &obj, "--in", "41"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("41"), "{}", stdout(&o));
}

#[test]
fn compile_is_deterministic() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "b.c", BRANCHY);
    let (o1, o2) = (path(&d, "one.fxa"), path(&d, "two.fxa"));
    assert_eq!(code(&fxa(&["compile", &src, "--seed", "9", "-o", &o1])), 0);
    assert_eq!(code(&fxa(&["compile", &src, "--seed", "9", "-o", &o2])), 0);
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    assert_eq!(
        std::fs::read(path(&d, "one.sched")).unwrap(),
        std::fs::read(path(&d, "two.sched")).unwrap()
    );
    let o3 = path(&d, "three.fxa");
    assert_eq!(code(&fxa(&["compile", &src, "--seed", "10", "-o", &o3])), 0);
    assert_ne!(std::fs::read(&o1).unwrap(), std::fs::read(&o3).unwrap());
}

#[test]
fn compile_errors_exit_2() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "bad.c", "int main( { return 0 }");
    let o = fxa(&["compile", &src]);
    assert_eq!(code(&o), 2);
    assert!(!o.stderr.is_empty());
    let src = source(&d, "undef.c", "int main() { return y; }");
    assert_eq!(code(&fxa(&["compile", &src])), 2);
    assert_eq!(code(&fxa(&["oracle-run", &src])), 2);
}

#[test]
fn divide_trap_exits_3() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "d.c", DIV);
    let obj = path(&d, "d.fxa");
    assert_eq!(code(&fxa(&["compile", &src, "-o", &obj])), 0);
    let o = fxa(&["run", &obj, "--in", "7", "--in", "0"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trap: divide"));
    assert_eq!(code(&fxa(&["oracle-run", &src, "--in", "7", "--in", "0"])), 3);
    let o = fxa(&["run", &obj, "--in", "-7", "--in", "2"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("-3"));
}

#[test]
fn usage_errors_exit_4() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&fxa(&[])), 4);
    assert_eq!(code(&fxa(&["frobnicate"])), 4);
    assert_eq!(code(&fxa(&["compile", "--no-such-flag", "x.c"])), 4);
    assert_eq!(code(&fxa(&["compile", &path(&d, "missing.c")])), 4);
    let src = source(&d, "i.c", IDENT);
    let obj = path(&d, "i.fxa");
    assert_eq!(code(&fxa(&["compile", &src, "-o", &obj])), 0);
    assert_eq!(code(&fxa(&["run", &obj])), 4);
    assert_eq!(code(&fxa(&["run", &obj, "--in", "seven"])), 4);
    assert_eq!(code(&fxa(&["--help"])), 0);
}

#[test]
fn budget_exit() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "l.c", "int main(int x) { while (x > 0) x = x + 1; return x; }");
    let obj = path(&d, "l.fxa");
    assert_eq!(code(&fxa(&["compile", &src, "-o", &obj])), 0);
    assert_eq!(code(&fxa(&["run", &obj, "--in", "1", "--budget", "5000"])), 5);
    assert_eq!(code(&fxa(&["oracle-run", &src, "--in", "1", "--budget", "5000"])), 5);
}

#[test]
fn trace_files_and_diff() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "t.c", BRANCHY);
    let mut traces = Vec::new();
    for (seed, pol) in [(1, "truthteller"), (2, "truthteller"), (3, "liar")] {
        let obj = path(&d, &format!("t{seed}.fxa"));
        let log = path(&d, &format!("t{seed}.log"));
        assert_eq!(code(&fxa(&["compile", &src, "--seed", &seed.to_string(), "--polarity", pol, "-o", &obj])), 0);
        let o = fxa(&["run", &obj, "--in", "5", "--trace", &log]);
        assert_eq!(code(&o), 0);
        assert!(stdout(&o).contains("emit 15"), "{}", stdout(&o));
        let text = std::fs::read_to_string(&log).unwrap();
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            assert_eq!(f.len(), 7, "{line}");
            assert_eq!(f[0], i.to_string());
            assert!(["0", "1", "-"].contains(&f[4]));
        }
        traces.push(log);
    }
    let o = fxa(&["diff-trace", &traces[0], &traces[1]]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).starts_with("equal shapes"));
    let o = fxa(&["diff-trace", &traces[0], &traces[2]]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).starts_with("shapes differ at step"));
    let junk = source(&d, "junk.log", "not a trace\n");
    assert_eq!(code(&fxa(&["diff-trace", &traces[0], &junk])), 4);
}

#[test]
fn oracle_run_prints_outputs() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "o.c", BRANCHY);
    let o = fxa(&["oracle-run", &src, "--in", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "emit 15\nreturn 16\n");
}

#[test]
fn stats_report_and_errors() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "s.c", "int main(int x) { if (x > 0) return 1; return 0; }");
    let o = fxa(&["stats", &src, "--seeds", "600", "--in", "5"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let field = |k: &str| {
        out.lines()
            .find_map(|l| l.strip_prefix(&format!("{k} = ")))
            .unwrap_or_else(|| panic!("{k} missing from {out}"))
            .to_string()
    };
    assert_eq!(field("samples"), "600");
    let p: f64 = field("p_value").parse().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let t: f64 = field("taken_fraction").parse().unwrap();
    assert!((0.35..0.65).contains(&t), "{t}");
    let o = fxa(&["stats", &src, "--seeds", "10"]);
    assert_eq!(code(&o), 4);
    assert!(String::from_utf8_lossy(&o.stderr).contains("too few seeds"));
    assert_eq!(code(&fxa(&["stats", &src, "--seeds", "600", "--target", "nope"])), 4);
    assert_eq!(code(&fxa(&["stats", &src, "--seeds", "600", "--bins", "7"])), 4);
}

#[test]
fn storm_report_lists_storms() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "w.c", "int main(int i, int v) { int a[8]; a[i] = v; return a[i]; }");
    let o = fxa(&["storm-report", &src, "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("a\t") && l.contains("\t8\tfalse\tWrite")), "{out}");
    assert!(out.lines().last().unwrap().starts_with("storms = "));
}

#[test]
fn key_mismatch_garbles_output() {
    let d = TempDir::new().unwrap();
    let src = source(&d, "k.c", IDENT);
    let obj = path(&d, "k.fxa");
    assert_eq!(code(&fxa(&["compile", &src, "--key", "1", "-o", &obj])), 0);
    let o = fxa(&["run", &obj, "--key", "1", "--in", "41"]);
    assert_eq!(stdout(&o), "return 41\n");
    let o = fxa(&["run", &obj, "--key", "2", "--in", "41"]);
    assert_ne!(stdout(&o), "return 41\n");
}
