use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn overdict(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overdict"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: [&str; 12] = [
    "--set", "d=12", "--set", "p=16", "--set", "k=2", "--set", "n_test=100", "--set", "iterations=60", "--set",
    "n_train=120",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(&SMALL);
    v
}

#[test]
fn gen_train_distill_eval_bounds_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(overdict(dir, &with_small(&["gen", "--out", "data", "--seed", "3"])));
    for f in ["truth.mtx", "train.mtx", "test.mtx"] {
        assert!(dir.join("data").join(f).exists(), "{f}");
    }
    let header = fs::read_to_string(dir.join("data/train.mtx")).unwrap();
    assert!(header.starts_with("12 120\n"));

    ok(overdict(
        dir,
        &with_small(&["train", "--samples", "data/train.mtx", "--p-prime", "24", "--out", "model"]),
    ));
    let usage = fs::read_to_string(dir.join("model/usage.csv")).unwrap();
    assert!(usage.starts_with("atom_index,count\n"));
    assert_eq!(usage.lines().count(), 25);
    assert!(fs::read_to_string(dir.join("model/loss.csv")).unwrap().starts_with("checkpoint,loss\n"));

    let stdout = ok(overdict(
        dir,
        &with_small(&[
            "distill",
            "--dictionary",
            "model/dictionary.mtx",
            "--usage",
            "model/usage.csv",
            "--truth",
            "data/truth.mtx",
            "--out",
            "distilled",
        ]),
    ));
    assert!(stdout.contains("kept 16 atoms, oracle overlap"));
    let kept = fs::read_to_string(dir.join("distilled/kept.csv")).unwrap();
    assert_eq!(kept.lines().count(), 17);
    assert!(fs::read_to_string(dir.join("distilled/distilled.mtx")).unwrap().starts_with("12 16\n"));

    ok(overdict(
        dir,
        &with_small(&[
            "eval",
            "--truth",
            "data/truth.mtx",
            "--dictionary",
            "model/dictionary.mtx",
            "--usage",
            "model/usage.csv",
            "--out",
            "eval_over",
        ]),
    ));
    let diag = fs::read_to_string(dir.join("eval_over/diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 25);

    ok(overdict(
        dir,
        &with_small(&[
            "eval",
            "--truth",
            "data/truth.mtx",
            "--dictionary",
            "distilled/distilled.mtx",
            "--samples",
            "data/test.mtx",
            "--out",
            "eval_distilled",
        ]),
    ));
    let metrics = fs::read_to_string(dir.join("eval_distilled/metrics.csv")).unwrap();
    for m in ["dict_distance", "legacy_distance", "mu_truth", "nu", "risk_f1", "risk_fk"] {
        assert!(metrics.contains(&format!("\n{m},")), "{m} missing from {metrics}");
    }

    // the usage counts belong to the 24-atom dictionary
    let mismatch = overdict(
        dir,
        &with_small(&["eval", "--truth", "data/truth.mtx", "--dictionary", "distilled/distilled.mtx", "--usage", "model/usage.csv"]),
    );
    assert!(!mismatch.status.success());

    let stdout = ok(overdict(
        dir,
        &with_small(&[
            "bounds",
            "--truth",
            "data/truth.mtx",
            "--dictionary",
            "model/dictionary.mtx",
            "--n-mc",
            "2000",
            "--train",
            "data/train.mtx",
            "--eps",
            "0.1",
            "--out",
            "bounds",
        ]),
    ));
    assert!(stdout.contains("pruning threshold"));
    let bounds = fs::read_to_string(dir.join("bounds/bounds.csv")).unwrap();
    assert_eq!(bounds.lines().count(), 2);
    assert!(dir.join("bounds/threshold.csv").exists());
}

#[test]
fn sweep_and_phase_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = "d = 10\np = 12\nk = 2\nn_train = 60\nn_test = 50\niterations = 40\nrepeats = 2\np_prime_grid = [12, 16]\nsigma_grid = [0.0, 0.1]\n";
    fs::write(dir.join("exp.toml"), config).unwrap();
    for run in ["a", "b"] {
        ok(overdict(dir, &["noise", "--config", "exp.toml", "--out", run]));
        ok(overdict(dir, &["phase", "--config", "exp.toml", "--out", &format!("{run}/phase")]));
    }
    for f in ["sweep.csv", "summary.csv", "noise.csv", "phase/phase.csv"] {
        assert_eq!(
            fs::read(dir.join("a").join(f)).unwrap(),
            fs::read(dir.join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let saved = fs::read_to_string(dir.join("a/config.toml")).unwrap();
    assert!(saved.contains("output_dir = \"a\""), "{saved}");
    let sweep = fs::read_to_string(dir.join("a/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 2 * 2 * 2);

    ok(overdict(dir, &["sweep", "--config", "exp.toml", "--set", "sigma_grid=[0.0]", "--out", "c", "--seed", "7"]));
    let rows = fs::read_to_string(dir.join("c/sweep.csv")).unwrap();
    assert!(rows.lines().skip(1).all(|l| l.split(',').nth(3) == Some("7") || l.split(',').nth(3) == Some("8")));
}

#[test]
fn failures_print_a_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = overdict(tmp.path(), &["train", "--samples", "missing.mtx"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error kind=io message="), "{stderr}");

    let out = overdict(tmp.path(), &["sweep", "--set", "repeats=0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=config "));

    fs::write(tmp.path().join("bad.mtx"), "2 2\n1 0\n0\n").unwrap();
    let out = overdict(tmp.path(), &["train", "--samples", "bad.mtx"]);
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error kind=parse "));
}
