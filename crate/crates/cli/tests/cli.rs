use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qsynth");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("QSYNTH_LOG", "error").output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    let mut out = vec![r.headers().unwrap().iter().map(String::from).collect()];
    out.extend(r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()));
    out
}

const TOY: &[&str] = &["--model", "toy", "--bits", "2", "--goal-vref", "2", "--goal-eps", "1"];

fn synth_toy(dir: &Path) -> PathBuf {
    let out = dir.to_str().unwrap();
    let o = run(&[&["synth"], TOY, &["--out", out]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    dir.join("toy_2bits_controller.c")
}

#[test]
fn models_lists_the_builtins() {
    let o = run(&["models"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["buck", "buck-robust", "multibuck", "multibuck-robust", "toy"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn robust_synthesis_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let o = run(&["synth", "--model", "buck-robust", "--bits", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "config.json",
        "stats.csv",
        "milp.csv",
        "abstraction.csv",
        "controller.csv",
        "region.csv",
        "report.txt",
        "buck-robust_4bits_controller.c",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("not comparable to reference hardware"));

    let milp = csv_rows(&out.join("milp.csv"));
    assert_eq!(milp[0], ["config_hash", "kind", "Num"]);
    let kinds: Vec<&str> = milp[1..].iter().map(|r| r[1].as_str()).collect();
    assert_eq!(kinds, ["1", "2", "3", "4", "5"]);

    let stats = csv_rows(&out.join("stats.csv"));
    assert_eq!(stats.len(), 2);
    let col = |name: &str| stats[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no {name} column"));
    assert_eq!(stats[1][col("b")], "4");
    assert_eq!(stats[1][col("cells")], "256");
    let arcs: u64 = stats[1][col("Arcs")].parse().unwrap();
    assert!(arcs > 0);

    // Every artifact row is tagged with the same configuration hash.
    let hash = &stats[1][0];
    for f in ["milp.csv", "abstraction.csv", "region.csv"] {
        assert!(csv_rows(&out.join(f))[1..].iter().all(|r| &r[0] == hash), "{f}");
    }
    let src = fs::read_to_string(out.join("buck-robust_4bits_controller.c")).unwrap();
    assert!(src.contains("int control_law(unsigned x0, unsigned x1)"));
    assert!(src.contains("int controllable_region(unsigned x0, unsigned x1)"));
}

#[test]
fn multi_input_actions_have_one_bit_per_switch() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let o = run(&["synth", "--model", "multibuck", "--inputs", "2", "--bits", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let abs = csv_rows(&out.join("abstraction.csv"));
    let col = abs[0].iter().position(|h| h == "action").unwrap();
    let mut seen: Vec<String> = abs[1..].iter().map(|r| r[col].clone()).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen, ["00", "01", "10", "11"]);
    assert!(out.join("multibuck-2_4bits_controller.c").is_file());
}

#[test]
fn goal_finer_than_cells_exits_with_its_own_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["synth", "--model", "buck", "--bits", "3", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), qsynth_cli::EXIT_NO_GOAL);
    assert!(String::from_utf8_lossy(&o.stdout).contains("NoSol"));
}

#[test]
fn bad_invocations_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(code(&run(&["synth", "--model", "nope", "--out", out])), 2);
    assert_eq!(code(&run(&["synth", "--model", "multibuck", "--out", out])), 2);
    assert_eq!(code(&run(&["synth", "--model", "buck", "--bits", "0", "--out", out])), 2);
    assert_eq!(code(&run(&["synth", "--variant", "median", "--out", out])), 2);
}

#[test]
fn controller_for_another_model_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let src = synth_toy(tmp.path());
    let o = run(&[
        "simulate",
        "--model",
        "buck",
        "--bits",
        "2",
        "--out",
        tmp.path().to_str().unwrap(),
        "--controller",
        src.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("model hash"));
    assert!(!tmp.path().join("trace.csv").exists());

    // Same model, different quantization.
    let o = run(&["simulate", "--model", "toy", "--bits", "3", "--controller", src.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn toy_closed_loop_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let src = synth_toy(tmp.path());
    let out = tmp.path().to_str().unwrap();
    let o = run(&[&["simulate"], TOY, &["--out", out, "--controller", src.to_str().unwrap(), "--initial", "0.25", "--steps", "6"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&tmp.path().join("trace.csv"));
    let xcol = rows[0].iter().position(|h| h == "x").unwrap();
    // x' = x + 2u - 1: cell 0 pushes up (u = 1), goal cell 1 takes the lowest action u = 0.
    let xs: Vec<f64> = rows[1..].iter().map(|r| r[xcol].parse().unwrap()).collect();
    let expected = [0.25, 1.25, 0.25, 1.25, 0.25, 1.25];
    assert!(xs.len() >= expected.len());
    for (x, e) in xs.iter().zip(expected) {
        assert!((x - e).abs() < 1e-12, "{xs:?}");
    }
}

#[test]
fn start_outside_the_region_is_a_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let o = run(&["synth", "--model", "buck", "--bits", "4", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let o = run(&[
        "simulate",
        "--model",
        "buck",
        "--bits",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--controller",
        out.join("buck_4bits_controller.c").to_str().unwrap(),
        "--initial",
        "3.9,6.9",
        "--steps",
        "5",
    ]);
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&out.join("trace.csv"));
    let fcol = rows[0].iter().position(|h| h == "fault").unwrap();
    assert_eq!(rows.last().unwrap()[fcol], "1");
}

#[test]
fn same_seed_same_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let src = synth_toy(tmp.path());
    let mut files = Vec::new();
    for (name, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let out = tmp.path().join(name);
        let o = run(&[
            &["simulate"],
            TOY,
            &["--out", out.to_str().unwrap(), "--controller", src.to_str().unwrap(), "--trials", "20", "--steps", "30", "--seed", seed],
        ]
        .concat());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        files.push(fs::read(out.join("trials.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
    assert_ne!(files[0], files[2]);
}

#[test]
fn toy_region_covers_the_whole_range() {
    let tmp = tempfile::tempdir().unwrap();
    let src = synth_toy(tmp.path());
    let out = tmp.path().join("region");
    let o = run(&[&["region"], TOY, &["--out", out.to_str().unwrap(), "--controller", src.to_str().unwrap()]].concat());
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&out.join("region.csv"));
    assert_eq!(rows[0], ["config_hash", "cell_x", "x_lo", "x_hi", "controllable"]);
    let got: Vec<(f64, f64, &str)> =
        rows[1..].iter().map(|r| (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].as_str())).collect();
    assert_eq!(got, [(0.0, 1.0, "1"), (1.0, 2.0, "1"), (2.0, 3.0, "1"), (3.0, 4.0, "1")]);
}

#[test]
fn json_model_file_end_to_end() {
    let model = concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/thermostat.json");
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let common = ["--model", model, "--bits", "4", "--goal-var", "x", "--goal-vref", "21", "--goal-eps", "1", "--out", out];
    let o = run(&[&["synth"], &common[..]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("μ = Sol"));
    let src = tmp.path().join("thermostat_4bits_controller.c");
    let o = run(&[&["simulate"], &common[..], &["--controller", src.to_str().unwrap(), "--initial", "15", "--steps", "40"]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    // Replay the trace with the thermostat dynamics: below 20 the room loses
    // 5% towards 10, above 20 it loses 10%; the heater adds 1.5.
    let rows = csv_rows(&tmp.path().join("trace.csv"));
    let col = |h: &str| rows[0].iter().position(|c| c == h).unwrap();
    let (xc, ac, gc) = (col("x"), col("action"), col("in_goal"));
    let mut reached = false;
    for w in rows[1..].windows(2) {
        let x: f64 = w[0][xc].parse().unwrap();
        let u = if w[0][ac] == "1" { 1.5 } else { 0.0 };
        let expected = if x < 20.0 { 0.95 * x + 0.5 + u } else { 0.9 * x + 1.0 + u };
        let next: f64 = w[1][xc].parse().unwrap();
        assert!((next - expected).abs() < 1e-9, "{x} -> {next}, expected {expected}");
        assert!((15.0..=25.0).contains(&next));
        reached |= w[1][gc] == "1";
    }
    assert!(reached);
}
