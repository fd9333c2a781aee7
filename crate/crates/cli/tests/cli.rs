use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ghjm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghjm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ghjm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, n: &str, seed: &str) {
    ok(&["simulate", "--scenario", "1", "--n", n, "--seed", seed, "--out", p(dir)]);
}

fn fit(data: &Path, config: &Path, out: &Path) -> String {
    ok(&[
        "fit", "--config", p(config), "--data", p(data), "--out", p(out), "--chains", "2", "--iterations", "300",
        "--burn-in", "150", "--seed", "3",
    ])
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "40", "11");
    simulate(&b, "40", "11");
    for f in ["longitudinal.csv", "survival.csv", "random_effects.csv", "truth.toml", "model.toml"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = tmp.path().join("c");
    simulate(&c, "40", "12");
    assert_ne!(fs::read(a.join("survival.csv")).unwrap(), fs::read(c.join("survival.csv")).unwrap());
}

#[test]
fn simulate_hits_the_requested_censoring() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "1", "--n", "200", "--censoring", "0.35", "--seed", "7", "--out", p(tmp.path())]);
    let surv = fs::read_to_string(tmp.path().join("survival.csv")).unwrap();
    let rows: Vec<&str> = surv.lines().skip(1).collect();
    let right = rows.iter().filter(|l| l.contains(",right,")).count();
    let rate = right as f64 / rows.len() as f64;
    assert_eq!(rows.len(), 200);
    assert!((rate - 0.35).abs() <= 0.02, "{rate}");
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ghjm(&["simulate", "--scenario", "1", "--n", "0", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n must be at least 1"));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[longitudinal]\ncolour = 2\n[[survival]]\nfamily = \"pgw\"\n").unwrap();
    let out = ghjm(&["fit", "--config", p(&bad), "--data", p(tmp.path()), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    assert_eq!(ghjm(&["predict"]).status.code(), Some(1));
    assert_eq!(ghjm(&["--help"]).status.code(), Some(0));
    assert_eq!(ghjm(&["compare", p(tmp.path())]).status.code(), Some(1));
}

#[test]
fn numeric_failures_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("huge.toml");
    // a baseline whose event times overflow every representable time
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios/scenario1.toml"))
        .unwrap()
        .replace("\"surv.event.mu\" = 1.0", "\"surv.event.mu\" = 800.0");
    fs::write(&scenario, text).unwrap();
    let out = ghjm(&["simulate", "--scenario", p(&scenario), "--n", "5", "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

/// simulate → fit → predict → compare on one small dataset.
#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "60", "5");
    let run = tmp.path().join("run");
    let summary = fit(&data, &data.join("model.toml"), &run);
    assert!(summary.starts_with("parameter,mean,median,q2.5,q97.5,p_positive"));
    assert!(summary.contains("surv.event.alpha1"));
    for f in ["run.toml", "model.toml", "summary.csv", "diagnostics.csv", "chain_0.csv", "chain_1_unconstrained.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    // refitting with the same seed reproduces the chains exactly
    let again = tmp.path().join("again");
    fit(&data, &data.join("model.toml"), &again);
    assert_eq!(fs::read(run.join("chain_1.csv")).unwrap(), fs::read(again.join("chain_1.csv")).unwrap());

    let curves = tmp.path().join("curves.csv");
    ok(&["predict", p(&run), "--grid", "0.1:6:25", "--out", p(&curves)]);
    let text = fs::read_to_string(&curves).unwrap();
    assert!(text.starts_with("t,statistic,value,cause\n"));
    assert!(text.contains("survival.q97.5") && text.contains("hazard.mean"));
    assert_eq!(text.lines().count(), 1 + 25 * 2 * 4);

    // the same model twice: equal evidence, so each gets probability 1/2
    let report = ok(&["compare", p(&run), p(&again), "--names", "a,b"]);
    let probs: Vec<f64> = report
        .lines()
        .skip(1)
        .take(2)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 2);
    assert!(probs.iter().all(|v| (v - 0.5).abs() < 1e-9), "{report}");

    // a run on other data cannot be compared
    let other = tmp.path().join("other");
    simulate(&other, "60", "6");
    let run_other = tmp.path().join("run_other");
    fit(&other, &other.join("model.toml"), &run_other);
    let out = ghjm(&["compare", p(&run), p(&run_other)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different datasets"));
}

#[test]
fn separate_table_paths_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "25", "8");
    let run = tmp.path().join("run");
    ok(&[
        "fit",
        "--config",
        p(&data.join("model.toml")),
        "--longitudinal",
        p(&data.join("longitudinal.csv")),
        "--survival",
        p(&data.join("survival.csv")),
        "--out",
        p(&run),
        "--iterations",
        "60",
        "--burn-in",
        "30",
        "--chains",
        "1",
    ]);
    assert!(run.join("summary.csv").is_file());
}
