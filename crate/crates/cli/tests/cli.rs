use std::path::Path;
use std::process::Command;

fn radioloc(args: &[&str], cwd: &Path) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_radioloc"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs");
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn dataset_scenario_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("ds.json"),
        r#"{"seed": 2, "maps": 3, "size_px": 32, "n_buildings": 5, "n_bs": 4,
            "ue_per_scene": 5, "split": {"train": 1, "val": 1, "test": 1}, "out_dir": "ds"}"#,
    )
    .unwrap();
    let (ok, _, err) = radioloc(&["make-dataset", "--config", "ds.json"], d);
    assert!(ok, "{err}");
    assert!(d.join("ds/manifest.json").is_file());

    let (ok, out, err) = radioloc(
        &[
            "run-scenario", "--dataset", "ds", "--scenario", "SIM-DPM2IRT", "--methods", "knn,heatmap,gtrs", "--seed",
            "3", "--out", "res",
        ],
        d,
    );
    assert!(ok, "{err}");
    assert!(out.contains("SIM-DPM2IRT") && out.contains("gtrs"));
    let rows = d.join("res/SIM-DPM2IRT_seed3_rows.csv");
    assert!(rows.is_file());
    assert!(d.join("res/SIM-DPM2IRT_seed3_errors.csv").is_file());

    let (ok, out, err) = radioloc(
        &["report", rows.to_str().unwrap(), "--out", "tables", "--format", "markdown"],
        d,
    );
    assert!(ok, "{err}");
    assert!(out.contains("| Method |"));
    assert!(d.join("tables/results.csv").is_file());
    assert!(d.join("tables/tables.md").is_file());

    let (ok, out, err) = radioloc(
        &["eval", "--method", "heatmap", "--sigma", "0.05", "--dataset", "ds", "--no-timing"],
        d,
    );
    assert!(ok, "{err}");
    assert!(out.contains("mae_m="));
}

#[test]
fn gen_maps_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (ok, _, err) = radioloc(&["gen-maps", "--count", "2", "--size", "32", "--buildings", "0", "--out", "maps"], d);
    assert!(ok, "{err}");
    let (ok, _, err) = radioloc(
        &["simulate", "--map", "maps/map_000.png", "--tx", "5,7", "--out", "sim", "--params", "perturbed"],
        d,
    );
    assert!(ok, "{err}");
    for ext in ["png", "json", "pld", "toa"] {
        assert!(d.join(format!("sim/radio.{ext}")).is_file(), "{ext}");
    }
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let (ok, _, err) = radioloc(&["run-scenario", "--dataset", "missing", "--methods", "knn"], dir.path());
    assert!(!ok);
    assert!(err.contains("error"));
    let (ok, _, _) = radioloc(&["eval", "--method", "sdp", "--dataset", "missing"], dir.path());
    assert!(!ok);
}
