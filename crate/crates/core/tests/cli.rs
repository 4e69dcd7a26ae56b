use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbv-charge"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr_line(out: &Output) -> String {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "expected a single error line, got {text:?}");
    lines[0].to_string()
}

#[test]
fn mechanism_writes_manifest_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["mechanism", "--out", "m"], dir.path());
    assert!(out.status.success(), "{out:?}");
    let m = dir.path().join("m");
    let csv = std::fs::read_to_string(m.join("photon_orders.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "transition,threshold_eV,wavelength_nm,photon_eV,order");
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(m.join("manifest.json")).unwrap()).unwrap();
    let files: Vec<&str> = manifest["files"].as_array().unwrap().iter().map(|f| f["file"].as_str().unwrap()).collect();
    assert_eq!(files, ["photon_orders.csv", "dark_state.json"]);
    assert!(m.join("timings.json").exists());
}

#[test]
fn missing_required_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[rates]\nk_shelve = 32.0\n").unwrap();
    let out = cli(&["--config", "c.toml", "mechanism", "--out", "m"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let line = stderr_line(&out);
    assert!(line.starts_with("error kind=config code=2:"), "{line}");
    assert!(line.contains("rates.k_repump"), "{line}");
}

#[test]
fn missing_config_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["--config", "absent.toml", "mechanism"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("error kind=io code=4:"));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("blocker"), "").unwrap();
    let out = cli(&["mechanism", "--out", "blocker/sub"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).contains("blocker"));
}

#[test]
fn malformed_input_csv_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.csv"), "time,value\n0,1\n").unwrap();
    let out = cli(&["fit-decay", "--input", "d.csv"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr_line(&out).starts_with("error kind=csv code=4:"));
}

#[test]
fn fit_decay_recovers_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("t_s,signal\n");
    for k in 0..16 {
        let t = k as f64 * 1e-3;
        csv += &format!("{t},{}\n", 12.0 * (-250.0 * t).exp() + 0.5);
    }
    std::fs::write(dir.path().join("d.csv"), csv).unwrap();
    let out = cli(&["fit-decay", "--input", "d.csv", "--out", "o"], dir.path());
    assert!(out.status.success(), "{out:?}");
    let rec: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o/decay_fit.json")).unwrap()).unwrap();
    let rate = rec["fit"]["parameters"][1]["value"].as_f64().unwrap();
    assert!((rate - 250.0).abs() < 1e-6, "{rate}");
}

#[test]
fn fit_power_modes() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("power_uW,rate_Hz,rate_err_Hz\n");
    for p in [20.0_f64, 30.0, 40.0, 50.0] {
        csv += &format!("{p},{},{}\n", 0.05 * p * p, 0.005 * p * p);
    }
    std::fs::write(dir.path().join("p.csv"), csv).unwrap();
    for (args, exponent) in [(vec![], 2.0), (vec!["--nonlinear"], 2.0), (vec!["--fixed-exponent", "2"], f64::NAN)] {
        let mut all = vec!["fit-power", "--input", "p.csv", "--out", "o", "--format", "json"];
        all.extend(args);
        let out = cli(&all, dir.path());
        assert!(out.status.success(), "{out:?}");
        let rec: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("o/power_fit.json")).unwrap()).unwrap();
        let params = rec["fit"]["parameters"].as_array().unwrap();
        assert!((params[0]["value"].as_f64().unwrap() - 0.05).abs() < 1e-6);
        if exponent.is_finite() {
            assert!((params[1]["value"].as_f64().unwrap() - exponent).abs() < 1e-6);
        }
    }
}

#[test]
fn simulate_then_histogram_and_population() {
    let dir = tempfile::tempdir().unwrap();
    let config = "n_reps = 50\n[rates]\nk_repump = 0.05\n[sequence]\nkind = \"shelving\"\n";
    std::fs::write(dir.path().join("c.toml"), config).unwrap();
    let out = cli(&["--config", "c.toml", "--seed", "3", "simulate", "--out", "s"], dir.path());
    assert!(out.status.success(), "{out:?}");
    let traces = std::fs::read_to_string(dir.path().join("s/traces.csv")).unwrap();
    assert_eq!(traces.lines().next().unwrap(), "rep,window_index,t_start_ms,t_stop_ms,count");
    assert_eq!(traces.lines().count(), 1 + 50 * 16);

    let out = cli(&["histogram", "--input", "s/traces.csv", "--window", "0", "--out", "h"], dir.path());
    assert!(out.status.success(), "{out:?}");
    let hist = std::fs::read_to_string(dir.path().join("h/histogram.csv")).unwrap();
    let total: u64 = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 50);

    let out = cli(&["population", "--input", "s/traces.csv", "--out", "p"], dir.path());
    assert!(out.status.success(), "{out:?}");
    let pop = std::fs::read_to_string(dir.path().join("p/population.csv")).unwrap();
    assert_eq!(pop.lines().count(), 17);
    // Every repetition starts bright.
    let first: Vec<&str> = pop.lines().nth(1).unwrap().split(',').collect();
    assert!(first[3].parse::<f64>().unwrap() > 0.9);
}

#[test]
fn same_seed_same_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for d in ["a", "b"] {
        let out = cli(&["reproduce", "fig2", "--seed", "11", "--out", d], dir.path());
        assert!(out.status.success(), "{out:?}");
    }
    let read = |d: &str| std::fs::read(dir.path().join(d).join("manifest.json")).unwrap();
    assert_eq!(read("a"), read("b"));
}

#[test]
fn unknown_figure_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["reproduce", "fig9"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_line(&out).starts_with("error kind=usage code=2:"));
}
