//! End-to-end CLI tests: exit codes, output schemas, caching, determinism,
//! and the verify negative control.

use std::fs;
use std::path::Path;
use std::process::Command;

fn slowop() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slowop"))
}

/// Strips timing comments before byte comparison.
fn stable_content(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("# walltime"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn find_smoke_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("find.json");
    let cache = dir.path().join("cache");
    let run = || {
        slowop()
            .env("SLOWOP_CACHE_DIR", &cache)
            .args([
                "find",
                "--definition",
                "local",
                "--backend",
                "exact",
                "--g",
                "1.05",
                "--h",
                "0.1",
                "--N",
                "5",
                "--output",
            ])
            .arg(&out)
            .output()
            .unwrap()
    };
    let r1 = run();
    assert!(r1.status.success(), "stderr: {}", String::from_utf8_lossy(&r1.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let lam = doc["results"][0]["lambda"].as_f64().unwrap();
    assert!(lam > 0.0);
    assert_eq!(doc["results"][0]["definition"], "local");
    assert!(doc["errors"].as_array().unwrap().is_empty());
    let first = stable_content(&out);

    // Second run must be a cache hit with byte-identical output.
    let r2 = run();
    assert!(r2.status.success());
    assert!(String::from_utf8_lossy(&r2.stderr).contains("cache hit"));
    assert_eq!(first, stable_content(&out));
}

#[test]
fn deterministic_rerun_without_cache() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a.csv");
    let out2 = dir.path().join("b.csv");
    for out in [&out1, &out2] {
        let st = slowop()
            .args([
                "sweep-overlap",
                "--definition",
                "local",
                "--backend",
                "exact",
                "--g",
                "1.05",
                "--h",
                "0.1,0.4",
                "--N",
                "4",
                "--seed",
                "7",
                "--no-cache",
                "--output",
            ])
            .arg(out)
            .status()
            .unwrap();
        assert!(st.success());
    }
    // Identical rows modulo the walltime comment; the config hash comment
    // differs only through the output path, so compare data rows.
    let rows = |p: &Path| -> Vec<String> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect()
    };
    assert_eq!(rows(&out1), rows(&out2));
    let content = fs::read_to_string(&out1).unwrap();
    assert!(content.contains("g,h,N,probe,variant,value"));
    assert!(content.contains("diffusion_mode"));
    // 2 h-values x 5 probes
    assert_eq!(rows(&out1).iter().filter(|l| !l.is_empty() && !l.starts_with("g,")).count(), 10);
}

#[test]
fn invalid_config_exits_2() {
    let r = slowop()
        .args(["find", "--backend", "bogus", "--output", "/tmp/x.json", "--no-cache"])
        .output()
        .unwrap();
    assert_eq!(r.status.code(), Some(2));

    // missing output
    let r = slowop().args(["find", "--no-cache"]).output().unwrap();
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "definition=local\nbackend=exact\ng=1.05\nh=0.4\nN=3\nseed=3\n",
    )
    .unwrap();
    let out = dir.path().join("out.json");
    let st = slowop()
        .args(["find", "--config"])
        .arg(&cfg)
        .args(["--h", "0.2", "--no-cache", "--output"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["results"][0]["h"].as_f64().unwrap(), 0.2);
}

#[test]
fn scaling_sweep_writes_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("scaling.csv");
    let st = slowop()
        .args([
            "sweep-scaling",
            "--definition",
            "local",
            "--backend",
            "exact",
            "--g",
            "1.05",
            "--h",
            "0.1",
            "--N",
            "3,4,5",
            "--no-cache",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let slopes = dir.path().join("scaling.slopes.csv");
    let sl = fs::read_to_string(&slopes).unwrap();
    assert!(sl.contains("g,h,kind,N_low,N_high,slope"));
    assert!(sl.contains("slowest"));
    assert!(sl.contains("diffusion_opt"));
    let lam = fs::read_to_string(&out).unwrap();
    assert!(lam.lines().any(|l| l.starts_with("1.05,0.1,4,slowest,")));
}

#[test]
fn evolve_exact_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("evolve.csv");
    let st = slowop()
        .args([
            "evolve",
            "--definition",
            "local",
            "--backend",
            "exact",
            "--g",
            "1.05",
            "--h",
            "0.1",
            "--N",
            "3",
            "--L",
            "6",
            "--times",
            "0:1:0.5",
            "--method",
            "exact",
            "--no-cache",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("t,value"));
    assert!(text.contains("# observable=exact_correlator"));
    let first_row: Vec<&str> = text
        .lines()
        .find(|l| !l.starts_with('#') && !l.starts_with('t'))
        .unwrap()
        .split(',')
        .collect();
    let v: f64 = first_row[1].parse().unwrap();
    assert!((v - 1.0).abs() < 1e-9, "C(0) = {v}");
    assert!(dir.path().join("evolve.envelope.csv").exists());
}

#[test]
fn otoc_writes_per_series_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("otoc");
    let st = slowop()
        .args([
            "otoc",
            "--definition",
            "local",
            "--backend",
            "exact",
            "--g",
            "1.05",
            "--h",
            "0.1",
            "--N",
            "3",
            "--L",
            "7",
            "--times",
            "0:0.5:0.5",
            "--axes",
            "x,z",
            "--offsets",
            "0,2",
            "--no-cache",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    for name in ["otoc_x_centerp0.csv", "otoc_x_centerp2.csv", "otoc_z_centerp0.csv", "otoc_z_centerp2.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
}

#[test]
fn entropy_profile_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("entropy.csv");
    let st = slowop()
        .args([
            "entropy",
            "--definition",
            "local",
            "--g",
            "1.05",
            "--h",
            "0.1",
            "--N",
            "4",
            "--bond-dims",
            "4,8",
            "--inner-tol",
            "1e-8",
            "--no-cache",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("cut,entropy_nats,max_bound,log_d"));
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("cut")) {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        assert!(f[1] >= -1e-12 && f[1] <= f[2] + 1e-9);
    }
}

#[test]
fn verify_passes_clean_and_fails_corrupted_fixture() {
    let r = slowop().args(["verify"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(r.status.success(), "verify failed:\n{stdout}");
    assert!(stdout.lines().filter(|l| l.starts_with("PASS")).count() >= 7);
    assert!(stdout.contains("tolerance"));

    // Negative control: corrupt one MPO matrix entry.
    let dir = tempfile::tempdir().unwrap();
    let mpo = slowop::ising::hamiltonian_mpo(slowop::ising::IsingParams::new(1.05, 0.1).unwrap(), 3);
    let mut doc = serde_json::to_value(&mpo).unwrap();
    doc["matrices"][1][2][0][3] = serde_json::json!(9.9);
    let path = dir.path().join("bad_mpo.json");
    fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let r = slowop().args(["verify", "--fixture-mpo"]).arg(&path).output().unwrap();
    assert_eq!(r.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("FAIL mpo_vs_dense"), "{stdout}");
}

#[test]
fn transition_step_grid() {
    // A coarse, fast grid around the transition; full resolution is covered
    // by the acceptance suite.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trans.csv");
    let st = slowop()
        .args([
            "transition",
            "--definition",
            "ti",
            "--backend",
            "exact",
            "--g",
            "1.05",
            "--N",
            "4",
            "--h",
            "0.1:0.9:0.2",
            "--threshold",
            "0.05",
            "--no-cache",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let t = fs::read_to_string(dir.path().join("trans.transition.csv")).unwrap();
    assert!(t.contains("N,g,threshold,h_star"));
}
