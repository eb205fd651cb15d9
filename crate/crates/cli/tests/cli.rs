use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn plants() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../plants")
}

fn drro(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drro"))
        .args(args)
        .env("DRRO_OUT_DIR", out)
        .env_remove("RUST_LOG")
        .output()
        .expect("run drro")
}

fn plant(name: &str) -> String {
    plants().join(format!("{name}.toml")).display().to_string()
}

fn error_record(o: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&o.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("json error record");
    serde_json::from_str(line).unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn synth_writes_cache_diagnostics_and_taps() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["synth", "--plant", &plant("toy"), "--radius", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synth_diagnostics.json")).unwrap()).unwrap();
    assert!(diag["kkt_residual"].as_f64().unwrap() <= 1e-6);
    assert!(diag["gamma_star"].as_f64().unwrap() > diag["gamma_ro"].as_f64().unwrap());
    assert!(diag["runtime_s"].as_f64().is_some());
    let cache = std::fs::read_to_string(dir.path().join("controller.cache")).unwrap();
    assert!(cache.starts_with("# drro controller cache v1"));
    let taps = read_csv(&dir.path().join("impulse_response.csv"));
    assert_eq!(taps[0], ["lag", "k_weighted_0", "k_physical_0"]);
    assert_eq!(taps.len(), 513);
}

#[test]
fn fixed_gamma_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["synth", "--plant", &plant("two_state"), "--gamma", "1e-3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("synth_diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["gamma_used"].as_f64(), Some(1e-3));
    assert!(diag["radius"].is_null());
}

#[test]
fn gamma_below_threshold_exits_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["synth", "--plant", &plant("two_state"), "--gamma", "1e-4"], dir.path());
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(error_record(&o)["error"]["class"], "infeasible");
}

#[test]
fn missing_plant_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["synth", "--plant", "no/such/plant.toml", "--radius", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let rec = error_record(&o);
    assert_eq!(rec["error"]["kind"], "ParseError");
    assert_eq!(rec["error"]["exit_code"], 2);
}

#[test]
fn config_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let p = plant("toy");
    for args in [
        vec!["synth", "--plant", &p, "--radius", "0"],
        vec!["synth", "--plant", &p, "--radius", "-1"],
        vec!["synth", "--plant", &p],
        vec!["synth", "--plant", &p, "--radius", "1", "--grid-k", "7"],
        vec!["synth", "--plant", &p, "--radius", "1", "--tol-fp", "0"],
        vec!["eval", "--plant", &p, "--radius", "1", "--radius", "2"],
        vec!["sweep", "--plant", &p],
        vec!["sweep", "--plant", &p, "--radius", "1", "--radius", "1"],
    ] {
        let o = drro(&args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(error_record(&o)["error"]["class"], "config");
    }
}

#[test]
fn malformed_plant_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "A = [[0.5]]\nB_u = [[1.0]]\nB_w = [[1.0, 1.0]]\nQ = [[1.0]]\nR = [[1.0]]\n").unwrap();
    let o = drro(&["synth", "--plant", bad.to_str().unwrap(), "--radius", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "DisturbanceNotScalar");
}

#[test]
fn eval_small_radius_dr_matches_h2() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["eval", "--plant", &plant("toy"), "--radius", "1e-3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("report.csv"));
    assert_eq!(rows[0], ["controller", "r", "gamma_star", "worst_case_regret", "nominal_regret"]);
    let cost = |label: &str| -> f64 { rows.iter().find(|r| r[0] == label).unwrap()[3].parse().unwrap() };
    assert!((cost("DR-RO") - cost("H2")).abs() <= 0.01 * cost("H2"));

    let cross = read_csv(&dir.path().join("cross.csv"));
    assert_eq!(cross.len(), 4);
    assert_eq!(cross[0], ["controller", "under_DR-RO", "under_H2", "under_RO"]);
    let profile = read_csv(&dir.path().join("profile.csv"));
    assert_eq!(profile.len(), 4096 + 1);
}

#[test]
fn eval_dr_row_is_minimal_and_imports_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    // A static gain in weighted coordinates, and a one-step delayed gain.
    let static_gain = dir.path().join("static.toml");
    std::fs::write(&static_gain, "D_c = [[-0.3]]\n").unwrap();
    let delayed = dir.path().join("delayed.toml");
    std::fs::write(
        &delayed,
        "A_c = [[0.0]]\nB_c = [[1.0]]\nC_c = [[-0.2]]\nD_c = [[0.0]]\ncoordinates = \"weighted\"\n",
    )
    .unwrap();
    let o = drro(
        &[
            "eval",
            "--plant",
            &plant("two_state"),
            "--radius",
            "1",
            "--import-controller",
            static_gain.to_str().unwrap(),
            "--import-controller",
            delayed.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&dir.path().join("report.csv"));
    let labels: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(labels, ["DR-RO", "H2", "RO", "imported:static.toml", "imported:delayed.toml"]);
    let worst: Vec<f64> = rows[1..].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(worst.iter().all(|w| worst[0] <= w * (1.0 + 1e-6)), "{worst:?}");
}

#[test]
fn eval_reuses_matching_cache_and_rejects_stale_hash() {
    let dir = tempfile::tempdir().unwrap();
    let o = drro(&["synth", "--plant", &plant("toy"), "--radius", "0.5"], dir.path());
    assert!(o.status.success());
    let before = std::fs::read(dir.path().join("controller.cache")).unwrap();
    let o = drro(&["eval", "--plant", &plant("toy"), "--radius", "0.5"], dir.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.path().join("controller.cache")).unwrap(), before);

    // Same file name, different content: the cache is rebuilt for the new plant.
    let edited = dir.path().join("toy.toml");
    let text = std::fs::read_to_string(plant("toy")).unwrap().replace("A = [[0.5]]", "A = [[0.6]]");
    std::fs::write(&edited, text).unwrap();
    let o = drro(&["eval", "--plant", edited.to_str().unwrap(), "--radius", "0.5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_ne!(std::fs::read(dir.path().join("controller.cache")).unwrap(), before);

    // Importing a cache built for another plant is refused.
    let other = tempfile::tempdir().unwrap();
    assert!(drro(&["synth", "--plant", &plant("toy"), "--radius", "0.5"], other.path()).status.success());
    let cache = other.path().join("controller.cache");
    let o = drro(
        &[
            "eval",
            "--plant",
            edited.to_str().unwrap(),
            "--radius",
            "0.5",
            "--import-controller",
            cache.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "PlantHashMismatch");
}

#[test]
fn sweep_table_dedup_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let p = plant("toy");
    let args = ["sweep", "--plant", &p, "--radius", "10", "--radius", "0.05", "--radius", "1", "--radius", "1"];
    let oa = drro(&[&args[..], &["--jobs", "1"]].concat(), a.path());
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    assert!(String::from_utf8_lossy(&oa.stderr).contains("duplicate dropped"));
    let ob = drro(&[&args[..], &["--jobs", "3"]].concat(), b.path());
    assert!(ob.status.success());

    let rows = read_csv(&a.path().join("sweep.csv"));
    assert_eq!(rows.len(), 1 + 3 * 3);
    assert_eq!(rows[0].last().unwrap(), "monotone_in_r");
    let radii: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(radii.windows(2).all(|w| w[0] <= w[1]));
    assert!(rows[1..].iter().all(|r| r[5] == "true"));
    let wide = read_csv(&a.path().join("sweep_wide.csv"));
    assert_eq!(wide.len(), 4);
    // Partial files are folded into the final table.
    assert!(!a.path().join("sweep.partial.000.csv").exists());

    for name in ["sweep.csv", "sweep_wide.csv"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
    // 17 significant digits.
    let mantissa = rows[1][3].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17);
}

#[test]
fn monte_carlo_column_is_seeded() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["eval", "--plant", &plant("toy"), "--radius", "1", "--mc-trials", "300", "--seed", "9"];
    assert!(drro(&args, a.path()).status.success());
    assert!(drro(&args, b.path()).status.success());
    let x = std::fs::read(a.path().join("monte_carlo.csv")).unwrap();
    assert_eq!(x, std::fs::read(b.path().join("monte_carlo.csv")).unwrap());
    assert_eq!(read_csv(&a.path().join("monte_carlo.csv")).len(), 4);
}
