use std::path::{Path, PathBuf};
use std::process::Command;

use medtransport::{generate, StructuralParams};
use medtransport_cli::config::{parse_missingness, DataSection};
use medtransport_cli::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_medtransport"))
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn csv_body(n: usize, blank_c: usize) -> String {
    let mut s = String::from("s,a,w,r,c,y\n");
    for i in 0..n {
        let c = if i < blank_c { String::new() } else { format!("{}", i as f64 / 10.0) };
        s.push_str(&format!("{},{},{},{},{},{}\n", (i / 2) % 2, i % 2, (i / 4) % 2, 0.5, c, (i / 3) % 2));
    }
    s
}

#[test]
fn loads_well_formed_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &csv_body(100, 0));
    let loaded = load_csv(&p).unwrap();
    assert_eq!(loaded.table.len(), 100);
    assert!(loaded.table.iter().all(|r| r.m() == 1));
    assert!(loaded.table.iter().enumerate().all(|(i, r)| r.id == i as u64));
    // 25 rows per stratum
    assert_eq!(loaded.warnings.len(), 4);
}

#[test]
fn blank_mediator_cells_are_missing() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &csv_body(100, 30));
    let t = load_csv(&p).unwrap().table;
    assert_eq!(t.iter().filter(|r| r.m() == 0).count(), 30);
}

#[test]
fn missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", "S,A,W,R,C\n1,1,1,0.1,0.2\n");
    let err = load_csv(&p).unwrap_err();
    assert_eq!(err.to_string(), "schema error: missing required column: Y");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn non_binary_value_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = csv_body(100, 0);
    body.push_str("1,2,0,0.1,0.3,1\n");
    let p = write(dir.path(), "d.csv", &body);
    match load_csv(&p).unwrap_err() {
        CliError::Row { line, message } => {
            assert_eq!(line, 102);
            assert!(message.contains("column A"));
        }
        e => panic!("{e}"),
    }
}

#[test]
fn tiny_stratum_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "d.csv", &csv_body(30, 0));
    assert!(matches!(load_csv(&p), Err(CliError::Schema(_))));
}

#[test]
fn m_column_overrides_mediator() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("S,A,W,R,C,Y,M\n");
    for i in 0..200 {
        body.push_str(&format!("{},{},{},0.1,0.5,{},{}\n", (i / 2) % 2, i % 2, (i / 4) % 2, (i / 3) % 2, (i % 5 != 0) as u8));
    }
    let p = write(dir.path(), "d.csv", &body);
    let t = load_csv(&p).unwrap().table;
    assert_eq!(t.iter().filter(|r| r.c_obs.is_none()).count(), 40);
}

#[test]
fn simulate_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    for keep_truth in [false, true] {
        let mut cfg = RunConfig::new(Mode::Simulate);
        cfg.seed = 5;
        cfg.data = DataSection { n_source: 400, n_target: 400, keep_truth, ..Default::default() };
        cfg.missingness = parse_missingness("mnar:0.3").unwrap();
        cfg.output.out_dir = dir.path().join(format!("k{keep_truth}"));
        let art = compute(&cfg).unwrap();
        write_artifacts(&art, &cfg.output.out_dir).unwrap();
        let loaded = load_csv(&cfg.output.out_dir.join("dataset.csv")).unwrap().table;
        let original = art.dataset.unwrap();
        assert_eq!(loaded.len(), original.len());
        for (a, b) in loaded.iter().zip(original.iter()) {
            let expected_truth = if keep_truth { b.c_true } else { None };
            assert_eq!((a.id, a.s, a.a, a.w, a.r, a.c_obs, a.y), (b.id, b.s, b.a, b.w, b.r, b.c_obs, b.y));
            assert_eq!(a.c_true, expected_truth);
        }
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.toml", "mode = \"analyze\"\nseed = 1\n[sensitivity]\nalpha = 0.1\n");
    let flags = Flags {
        config: Some(p),
        mode: Some(Mode::Sweep),
        seed: Some(9),
        r2_grid: Some("0,0.5".into()),
        missingness: Some("mar:lambda=1.5".into()),
        target_group: Some(1),
        bootstrap: Some(200),
        ..Default::default()
    };
    let cfg = RunConfig::resolve(&flags).unwrap();
    assert_eq!(cfg.mode, Mode::Sweep);
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.sensitivity.alpha, 0.1);
    assert_eq!(cfg.sensitivity.r2_grid, vec![0.0, 0.5]);
    assert_eq!(cfg.sensitivity.n_bootstrap, 200);
    let m = cfg.missingness.unwrap();
    assert_eq!((m.lambda, m.target_group), (Some(1.5), 1));
}

#[test]
fn bad_configs_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "seed = 1\n",
        "mode = \"sweep\"\nbogus = 1\n",
        "mode = \"sweep\"\n[sensitivity]\nr2_grid = [0.5, 0.2]\n",
        "mode = \"sweep\"\n[sensitivity]\nn_bootstrap = 10\n",
        "mode = \"analyze\"\n[missingness]\nmechanism = \"mnar\"\nproportions = [0.1, 0.2]\n",
        "mode = \"sweep\"\n[dgp]\np_treat = 1.5\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let p = write(dir.path(), &format!("c{i}.toml"), text);
        let err = RunConfig::resolve(&Flags { config: Some(p), ..Default::default() }).unwrap_err();
        assert_eq!(err.exit_code(), 2, "case {i}: {err}");
    }
    assert!(parse_missingness("xnar:0.3").is_err());
    assert!(parse_missingness("mnar").is_err());
    assert_eq!(parse_missingness("none").unwrap(), None);
}

#[test]
fn exit_codes_from_binary() {
    let dir = tempfile::tempdir().unwrap();
    let status = |args: &[&str]| bin().args(args).current_dir(dir.path()).output().unwrap().status.code().unwrap();
    assert_eq!(status(&["--mode", "analyze", "--input", "missing.csv"]), 2);
    write(dir.path(), "noy.csv", "S,A,W,R,C\n1,1,1,0.1,0.2\n");
    assert_eq!(status(&["--mode", "analyze", "--input", "noy.csv"]), 3);
    // constant treatment in the source: no variation to fit the outcome on A
    let mut body = String::from("S,A,W,R,C,Y\n");
    for i in 0..400 {
        body.push_str(&format!("{},1,{},{},{},{}\n", i % 2, (i / 2) % 2, i as f64 / 100.0, (i % 7) as f64, (i % 3 == 0) as u8));
    }
    write(dir.path(), "flat.csv", &body);
    assert_eq!(status(&["--mode", "analyze", "--input", "flat.csv", "--bootstrap", "100"]), 4);
    assert_eq!(status(&["--mode", "oracle", "--out-dir", "o", "--n-mc", "10"]), 0);
}

#[test]
fn null_outcome_data_gives_null_effects() {
    let dir = tempfile::tempdir().unwrap();
    let p = StructuralParams {
        outcome_coefs: medtransport::dgp::OutcomeCoefs { a: 0.0, c: 0.0, w: 0.0 },
        ..Default::default()
    };
    let t = generate(&p, 3000, 3000, 21).unwrap();
    let path = dir.path().join("null.csv");
    write_csv(&t, &path, false).unwrap();
    let mut cfg = RunConfig::new(Mode::Analyze);
    cfg.data.input = Some(path);
    cfg.sensitivity.n_bootstrap = 100;
    let doc = compute(&cfg).unwrap().document;
    assert_eq!(doc.effects.len(), 2);
    for g in &doc.effects {
        for e in [&g.sde, &g.sie] {
            assert!(e.ci_low <= 0.0 && e.ci_high >= 0.0, "W={} {:?}", g.group_w, e.kind);
        }
    }
}

fn run_golden(out: &Path) {
    let cfg = golden_dir().join("config.toml");
    let o = bin()
        .args(["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn golden_curve_and_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    run_golden(&out);
    let read = |f: &str| std::fs::read_to_string(out.join(f)).unwrap();
    let first = (read("curve.csv"), read("results.json"));
    run_golden(&out);
    assert_eq!(read("curve.csv"), first.0);
    assert_eq!(read("results.json"), first.1);
    let golden = std::fs::read_to_string(golden_dir().join("curve.csv")).unwrap();
    assert_eq!(first.0, golden);
}

#[test]
fn echoed_config_reproduces_results() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    run_golden(&first);
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("results.json")).unwrap()).unwrap();
    let echo = dir.path().join("echo.json");
    std::fs::write(&echo, serde_json::to_string(&doc["config"]).unwrap()).unwrap();
    let second = dir.path().join("second");
    let o = bin()
        .args(["--config", echo.to_str().unwrap(), "--out-dir", second.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut redo: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(second.join("results.json")).unwrap()).unwrap();
    redo["config"]["output"] = doc["config"]["output"].clone();
    assert_eq!(redo, doc);
    assert_eq!(std::fs::read(first.join("curve.csv")).unwrap(), std::fs::read(second.join("curve.csv")).unwrap());
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = golden_dir().join("config.toml");
    let mut outs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(threads);
        let o = bin()
            .env("MEDTRANSPORT_THREADS", threads)
            .args(["--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(o.status.success());
        outs.push(std::fs::read(out.join("curve.csv")).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
}
