use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ion_readout::discrimination::read_surface_csv;
use ion_readout::monte_carlo::read_histogram_csv;
use ion_readout::tomography::{read_surface_csv as read_bloch_csv, ChiJson};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ion-readout"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config(dir: &Path, shots: u64) -> PathBuf {
    let text = format!(
        r#"{{
  "model": {{"rate_bright": 73500, "rate_dark": 1750, "lifetime": 0.39, "t_det": 2.8e-4}},
  "errors": {{"eps_down_tot": 6e-4, "eps_up_tot": 1e-3}},
  "optimize": {{"t_min_us": 100, "t_max_us": 400, "t_step_us": 20, "n_min": 2, "n_max": 9}},
  "simulate": {{"shots": {shots}, "seed": 7, "decay_law": "uniform_first_order"}}
}}"#
    );
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn optimize_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["optimize", "--config", s(&data("paper_model.json")), "--out", s(dir.path())]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("n_th = 5"));
    let j = json(&dir.path().join("optimum.json"));
    assert_eq!(j["t_det_us"], 280.0);
    assert_eq!(j["n_th"], 5);
    assert!((j["eps"].as_f64().unwrap() - 2.9e-4).abs() < 0.1e-4);
    assert_eq!(j["metadata"]["tool"], "ion-readout");
    assert_eq!(j["metadata"]["config_sha256"].as_str().unwrap().len(), 64);
    let surface = read_surface_csv(fs::File::open(dir.path().join("surface.csv")).unwrap()).unwrap();
    assert_eq!(surface.len(), 111 * 31);
}

#[test]
fn surface_rows_match_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 100);
    ok(&["optimize", "--config", s(&cfg), "--out", s(dir.path())]);
    let text = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert!(text.starts_with("t_det_us,n_th,eps\n"));
    assert_eq!(text.lines().count() - 1, 16 * 8);
}

#[test]
fn validation_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"model\": ").unwrap();
    for cmd in ["optimize", "simulate"] {
        let out = run(&[cmd, "--config", s(&bad), "--out", s(dir.path())]);
        assert_eq!(out.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&out.stderr).contains("json"));
    }
    let domain = dir.path().join("domain.json");
    fs::write(
        &domain,
        r#"{"model": {"rate_bright": 100, "rate_dark": 200, "lifetime": 0.39, "t_det": 2.8e-4}}"#,
    )
    .unwrap();
    assert_eq!(run(&["optimize", "--config", s(&domain)]).status.code(), Some(2));
    assert_eq!(run(&["budget", "--config", s(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "prepared,axis,shots,bright_count\n+z,z,0,0\n").unwrap();
    assert_eq!(run(&["tomo", "--records", s(&csv), "--out", s(dir.path())]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["optimize", "--config", s(&missing)]).status.code(), Some(1));
}

#[test]
fn simulate_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = data("paper_model.json");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&a), "--threads", "1"]);
    ok(&["simulate", "--config", s(&cfg), "--out", s(&b), "--threads", "4"]);
    for f in ["hist_down.csv", "hist_up.csv", "simulate.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    for f in ["hist_down.csv", "hist_up.csv"] {
        let h = read_histogram_csv(fs::File::open(a.join(f)).unwrap()).unwrap();
        assert_eq!(h.total_shots(), 300_000);
    }
    let c = dir.path().join("c");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&c), "--seed", "99"]);
    assert_ne!(fs::read(a.join("hist_up.csv")).unwrap(), fs::read(c.join("hist_up.csv")).unwrap());
    assert_eq!(json(&c.join("simulate.json"))["seed"], 99);
}

#[test]
fn traces_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"model": {"rate_bright": 73500, "rate_dark": 1750, "lifetime": 0.39, "t_det": 2.8e-4},
            "simulate": {"shots": 50, "seed": 3, "export_traces": true}}"#,
    )
    .unwrap();
    ok(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    let traces = ion_readout::monte_carlo::read_traces_csv(
        fs::File::open(dir.path().join("traces_down.csv")).unwrap(),
        50,
    )
    .unwrap();
    let hist = read_histogram_csv(fs::File::open(dir.path().join("hist_down.csv")).unwrap()).unwrap();
    let from_traces = ion_readout::monte_carlo::CountHistogram::from_counts(
        traces.iter().map(|t| t.count() as u64),
    );
    assert_eq!(from_traces, hist);
}

#[test]
fn fit_pipeline_recovers_injected_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 300_000);
    ok(&["simulate", "--config", s(&cfg), "--out", s(dir.path())]);
    let down = dir.path().join("hist_down.csv");
    let up = dir.path().join("hist_up.csv");
    ok(&["fit", "--config", s(&cfg), "--down", s(&down), "--up", s(&up), "--out", s(dir.path())]);
    let j = json(&dir.path().join("fit.json"));
    let r = &j["result"];
    let truth = [
        ("n_bar_b", 73500.0 * 2.8e-4),
        ("n_bar_d", 1750.0 * 2.8e-4),
        ("eps_down_tot", 6e-4),
        ("eps_up_tot", 1e-3),
    ];
    for (k, t) in truth {
        let v = r[k].as_f64().unwrap();
        let se = r["std_errors"][k].as_f64().unwrap();
        assert!((v - t).abs() <= 3.0 * se, "{k}: {v} vs {t} (se {se})");
    }
    assert_eq!(j["mode"], "joint");
    assert_eq!(j["metadata"]["inputs"].as_object().unwrap().len(), 2);

    let ind = dir.path().join("ind.json");
    let text = fs::read_to_string(&cfg).unwrap().replacen(
        "\"simulate\"",
        "\"fit\": {\"mode\": \"independent\"}, \"simulate\"",
        1,
    );
    fs::write(&ind, text).unwrap();
    ok(&["fit", "--config", s(&ind), "--down", s(&down), "--up", s(&up), "--out", s(dir.path())]);
    let j = json(&dir.path().join("fit.json"));
    assert!((j["result"]["up"]["eps_up_tot"].as_f64().unwrap() - 1e-3).abs() < 4e-4);
}

#[test]
fn tomo_state_on_bundled_records() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["tomo", "--records", s(&data("table2_records.csv")), "--out", s(dir.path())]);
    let j = json(&dir.path().join("fidelity.json"));
    assert!((j["average_fidelity"].as_f64().unwrap() - 0.9979).abs() < 1e-4);
    assert_eq!(j["rows"].as_array().unwrap().len(), 6);
    assert_eq!(j["rows"][0]["state"], "+z");
}

fn write_channel_records(path: &Path, shrink: f64, shots: u64) {
    // Depolarizing channel: every cardinal state keeps `shrink` of its axis.
    let mut text = String::from("prepared,axis,shots,bright_count\n");
    for (state, axis, sign) in [("+z", "z", 1.0), ("-z", "z", -1.0), ("+x", "x", 1.0), ("+y", "y", 1.0)] {
        for a in ["x", "y", "z"] {
            let p = if a == axis { sign * shrink } else { 0.0 };
            let bright = ((1.0 - p) * 0.5 * shots as f64).round() as u64;
            text.push_str(&format!("{state},{a},{shots},{bright}\n"));
        }
    }
    fs::write(path, text).unwrap();
}

#[test]
fn tomo_process_synthetic_channels() {
    let dir = tempfile::tempdir().unwrap();
    let rec = dir.path().join("identity.csv");
    write_channel_records(&rec, 1.0, 1000);
    ok(&["tomo", "--records", s(&rec), "--mode", "process", "--out", s(dir.path())]);
    let j = json(&dir.path().join("chi.json"));
    assert!((j["process_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let p = 0.08;
    write_channel_records(&rec, 1.0 - p, 10_000);
    ok(&["tomo", "--records", s(&rec), "--mode", "process", "--out", s(dir.path())]);
    let chi: ChiJson = serde_json::from_str(&fs::read_to_string(dir.path().join("chi.json")).unwrap()).unwrap();
    let want = [1.0 - 0.75 * p, 0.25 * p, 0.25 * p, 0.25 * p];
    for (m, wm) in want.iter().enumerate() {
        for n in 0..4 {
            let w = if m == n { *wm } else { 0.0 };
            assert!((chi.real[m][n] - w).abs() < 1e-9 && chi.imag[m][n].abs() < 1e-9);
        }
    }
    let surface = read_bloch_csv(fs::File::open(dir.path().join("bloch_error.csv")).unwrap()).unwrap();
    assert_eq!(surface.len(), 181 * 360);
    assert!(surface.iter().all(|e| (e.error - 0.5 * p).abs() < 1e-9));
}

#[test]
fn tomo_process_on_bundled_records() {
    let dir = tempfile::tempdir().unwrap();
    let rec = data("table2_records.csv");
    ok(&["tomo", "--records", s(&rec), "--mode", "process", "--out", s(dir.path())]);
    let j = json(&dir.path().join("chi.json"));
    assert_eq!(j["nulled"], true);
    assert_eq!(j["positive_semidefinite"], true);
    assert!((j["process_fidelity"].as_f64().unwrap() - 0.997).abs() <= 1e-3);

    ok(&["tomo", "--records", s(&rec), "--mode", "process", "--no-null", "--out", s(dir.path())]);
    let j = json(&dir.path().join("chi.json"));
    assert_eq!(j["nulled"], false);
    assert_eq!(j["positive_semidefinite"], false);
}

#[test]
fn budget_bundled_table() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["budget", "--config", s(&data("table1_budget.json")), "--out", s(dir.path())]);
    let j = json(&dir.path().join("budget.json"));
    let up = &j["reports"]["up"];
    let down = &j["reports"]["down"];
    assert!((up["shelving_total"].as_f64().unwrap() - 2.33416e-4).abs() < 1e-9);
    assert!((down["overall"].as_f64().unwrap() - 4.5e-4).abs() < 1e-12);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&["optimize", "--config", s(&data("paper_model.json")), "--out", s(out)]);
        ok(&["tomo", "--records", s(&data("table2_records.csv")), "--mode", "process", "--out", s(out)]);
        ok(&["budget", "--config", s(&data("table1_budget.json")), "--out", s(out)]);
    }
    for f in ["surface.csv", "optimum.json", "chi.json", "bloch_error.csv", "budget.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}
