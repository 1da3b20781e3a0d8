use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn repsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repsel")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TOY: &str = "3\n1,a\n2,b\n3,c\n6,6,3\n3,1,2,3\n2,2,1,3\n1,3,2,1\n";

/// 100 deterministic full rankings of 4 items.
fn synthetic() -> String {
    let perms = ["1,2,3,4", "2,1,3,4", "1,3,2,4", "4,3,2,1", "2,3,1,4"];
    let mut text = String::from("4\n1,w\n2,x\n3,y\n4,z\n100,100,5\n");
    for (i, p) in perms.iter().enumerate() {
        text.push_str(&format!("{},{p}\n", [40, 25, 15, 10, 10][i]));
    }
    text
}

#[test]
fn fit_writes_params() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.soc", TOY);
    let out = dir.path().join("pl.json");
    let res = repsel(&["fit", "--data", s(&data), "--model", "pl", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert!(fs::read_to_string(&out).unwrap().contains("\"model_kind\": \"pl\""));
    let log = String::from_utf8_lossy(&res.stderr);
    assert!(log.contains("seed: 0") && log.contains("train NLL per ranking"));
    assert!(res.stdout.is_empty());
}

#[test]
fn fit_usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.soc", TOY);
    let out = dir.path().join("p.json");
    assert_eq!(code(&repsel(&["fit", "--data", s(&data), "--model", "crs-factor", "--out", s(&out)])), 2);
    let empty = write(dir.path(), "empty.soc", "");
    assert_eq!(code(&repsel(&["fit", "--data", s(&empty), "--model", "pl", "--out", s(&out)])), 2);
    assert_eq!(code(&repsel(&["fit", "--data", s(&data), "--model", "pl", "--out", s(&out), "--bogus"])), 2);
}

#[test]
fn fit_divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "toy.soc", TOY);
    let out = dir.path().join("p.json");
    let res = repsel(&["fit", "--data", s(&data), "--model", "crs-full", "--lr", "1e308", "--batch", "full", "--out", s(&out)]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn eval_writes_summary_and_profile_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "syn.soc", &synthetic());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let res = repsel(&["eval", "--data", s(&data), "--model", "pl", "--folds", "5", "--seed", "3", "--out", s(out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    }
    let text = fs::read_to_string(&a).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "section,model,folds,position,value,sem,count");
    assert!(lines[1].starts_with("summary,pl,5,,"));
    assert_eq!(lines.iter().filter(|l| l.starts_with("position,")).count(), 3);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let toy = write(dir.path(), "toy.soc", TOY);
    assert_eq!(code(&repsel(&["eval", "--data", s(&toy), "--model", "pl", "--folds", "7", "--out", s(&a)])), 2);
}

#[test]
fn simulate_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("risk.csv");
    let res = repsel(&["simulate", "--model", "pl", "--n", "6", "--ell", "64,128,256", "--trials", "5", "--out", s(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 16);
    assert!(!dir.path().join("risk_summary.csv").exists());

    let res = repsel(&[
        "simulate", "--model", "crs-full", "--n", "4,5", "--ell", "30,60", "--trials", "10", "--epochs", "50",
        "--out", s(&out),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let table = fs::read_to_string(&out).unwrap();
    assert!(table.lines().any(|l| l.starts_with("crs_full,4,")));
    assert!(table.lines().any(|l| l.starts_with("crs_full,5,")));
    assert_eq!(fs::read_to_string(dir.path().join("risk_summary.csv")).unwrap().lines().count(), 5);

    assert_eq!(code(&repsel(&["simulate", "--model", "pl", "--n", "6", "--ell", "64", "--trials", "0", "--out", s(&out)])), 2);
}

#[test]
fn diagnose_certificates() {
    let dir = tempfile::tempdir().unwrap();
    let one = write(dir.path(), "one.soc", "4\n1,a\n2,b\n3,c\n4,d\n1,1,1\n1,1,2,3,4\n");
    let out = dir.path().join("cert.csv");
    assert_eq!(code(&repsel(&["diagnose", "--data", s(&one), "--model", "crs", "--out", s(&out)])), 0);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("cdm_gram,12,"));
    assert!(text.contains(",false,1.5,cdm_gram_floor,"));

    assert_eq!(code(&repsel(&["diagnose", "--data", s(&one), "--model", "pl", "--out", s(&out)])), 0);
    let text = fs::read_to_string(&out).unwrap();
    let crude = text.lines().find(|l| l.contains("crude_n_over_n_minus_1")).unwrap();
    assert!(crude.ends_with(",true"));

    let mut big = String::from("40\n");
    for i in 1..=40 {
        big.push_str(&format!("{i},c{i}\n"));
    }
    big.push_str("1,1,1\n1,1,2\n");
    let big = write(dir.path(), "big.soi", &big);
    assert_eq!(code(&repsel(&["diagnose", "--data", s(&big), "--model", "crs", "--out", s(&out)])), 4);
}

#[test]
fn cayley_export() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "syn.soc", &synthetic());
    let (pl, ml) = (dir.path().join("pl.json"), dir.path().join("ml.json"));
    assert_eq!(code(&repsel(&["fit", "--data", s(&data), "--model", "pl", "--out", s(&pl)])), 0);
    assert_eq!(code(&repsel(&["fit", "--data", s(&data), "--model", "mallows", "--out", s(&ml)])), 0);
    let dot = dir.path().join("g.dot");
    let both = format!("{},{}", s(&pl), s(&ml));
    assert_eq!(code(&repsel(&["cayley", "--n", "4", "--params", &both, "--out", s(&dot)])), 0);
    let text = fs::read_to_string(&dot).unwrap();
    assert_eq!(text.matches("p_pl=").count(), 24);
    assert_eq!(text.matches("p_mallows=").count(), 24);
    assert_eq!(text.matches(" -- ").count(), 36);
    assert!(dir.path().join("g.csv").exists());
    assert_eq!(code(&repsel(&["cayley", "--n", "7", "--out", s(&dot)])), 2);
    assert_eq!(code(&repsel(&["cayley", "--n", "5", "--params", s(&pl), "--out", s(&dot)])), 2);
}

#[test]
fn validate_reports_problems() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "toy.soc", TOY);
    assert_eq!(code(&repsel(&["validate", "--data", s(&good)])), 0);
    let dup = write(dir.path(), "dup.soc", "3\n1,a\n2,b\n3,c\n1,1,1\n1,1,1,2\n");
    let res = repsel(&["validate", "--data", s(&dup)]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 6"));
}

#[test]
fn help_lists_defaults() {
    let out = repsel(&["fit", "--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--epochs", "--lr", "--batch", "--seed", "--rank", "[default: 10]", "[default: 0.001]"] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn fit_is_thread_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "syn.soc", &synthetic());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for (threads, out) in [("1", &a), ("3", &b)] {
        let args = ["--threads", threads, "fit", "--data", s(&data), "--model", "crs-factor", "--rank", "2", "--seed", "4", "--out", s(out)];
        assert_eq!(code(&repsel(&args)), 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
