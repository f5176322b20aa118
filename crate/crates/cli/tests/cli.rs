use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn nvsim(args: &[&str]) -> Output {
    nvsim_env(args, None)
}

fn nvsim_env(args: &[&str], data: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nvsim"));
    cmd.args(args).env_remove("NVSIM_DATA");
    if let Some(d) = data {
        cmd.env("NVSIM_DATA", d);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn bundled_protocol() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/protocol.toml")).unwrap()
}

fn core_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data")
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let j = lines.next().unwrap().split(',').position(|c| c == name).unwrap();
    lines.map(|l| l.split(',').nth(j).unwrap().parse().unwrap()).collect()
}

#[test]
fn help_and_version_exit_zero_and_bad_usage_exits_one() {
    let help = nvsim(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for name in ["pump", "dephase", "sweep-tau", "sweep-t", "dps-scan", "scaling", "ionization", "init-fidelity"] {
        assert!(text.contains(name), "{name} missing from --help");
    }
    assert_eq!(code(&nvsim(&["--version"])), 0);
    assert_eq!(code(&nvsim(&["no-such-experiment"])), 1);
}

#[test]
fn missing_config_field_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, bundled_protocol().replace("p_reset_needed = 0.5\n", "")).unwrap();
    let out = dir.path().join("out");
    let o = nvsim(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "dephase"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("p_reset_needed"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn invalid_config_value_and_unknown_field_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.toml");
    let out = dir.path().join("out");
    std::fs::write(&cfg, bundled_protocol().replace("trajectories = 2000", "trajectories = 0")).unwrap();
    let o = nvsim(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "ionization"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("trajectories"));

    std::fs::write(&cfg, format!("bogus_knob = 3\n{}", bundled_protocol())).unwrap();
    let o = nvsim(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "ionization"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("bogus_knob"));
    assert!(!out.exists());
}

#[test]
fn model_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    std::fs::write(&csv, "n,xy_len,xy_err,z,survival\n0,1,0,0,1\n").unwrap();
    let o = nvsim(&["--out", dir.path().join("out").to_str().unwrap(), "fit", "--input", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn dephase_spin5_trends_down_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let o = nvsim(&[
            "--seed", "7", "--threads", threads, "--out", out.to_str().unwrap(),
            "dephase", "--subspace", "5", "--n-reps", "400", "--step", "50",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    assert_eq!(manifest(&a)["outputs"], manifest(&b)["outputs"]);
    assert_eq!(manifest(&a)["seed"], 7);

    let csv = std::fs::read_to_string(a.join("dephase.csv")).unwrap();
    let n = column(&csv, "n");
    let xy = column(&csv, "xy_len");
    let err = column(&csv, "xy_err");
    assert_eq!(*n.last().unwrap(), 400.0);
    assert!(xy[0] > 0.99 && *xy.last().unwrap() < 0.2);
    for i in 1..xy.len() {
        assert!(xy[i] <= xy[i - 1] + 3.0 * (err[i] + err[i - 1]), "rise at n = {}", n[i]);
    }

    let other = dir.path().join("c");
    let o = nvsim(&["--seed", "8", "--out", other.to_str().unwrap(), "dephase", "--n-reps", "400", "--step", "50"]);
    assert_eq!(code(&o), 0);
    assert_ne!(manifest(&a)["outputs"], manifest(&other)["outputs"]);
}

#[test]
fn manifest_checksums_match_files() {
    use sha2::{Digest, Sha256};
    let dir = tempfile::tempdir().unwrap();
    let o = nvsim(&["--out", dir.path().to_str().unwrap(), "pump", "--duration-ns", "500"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(dir.path());
    let outputs = m["outputs"].as_object().unwrap();
    assert_eq!(outputs.len(), 2);
    for (name, sum) in outputs {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), sum.as_str().unwrap());
    }
    assert_eq!(m["experiment"], "pump-curve");
    assert!(m["version"].is_string() && m["wall_clock_s"].is_number());
    let csv = std::fs::read_to_string(dir.path().join("pump.csv")).unwrap();
    assert!(csv.starts_with("t_ns,p_0,p_m1,p_p1,p_ex,p_singlet\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn scaling_has_25_rows_ordered_by_coupling() {
    for extra in [&["--analytic"][..], &[][..]] {
        let dir = tempfile::tempdir().unwrap();
        let mut args = vec!["--trajectories", "50", "--out", dir.path().to_str().unwrap(), "scaling"];
        args.extend_from_slice(extra);
        let o = nvsim(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let csv = std::fs::read_to_string(dir.path().join("scaling.csv")).unwrap();
        assert!(csv.starts_with("subspace,delta_omega_khz,n_1e,err,model_n_1e\n"));
        let dw = column(&csv, "delta_omega_khz");
        assert_eq!(dw.len(), 25);
        assert!(dw.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn plotdata_picks_columns_by_schema() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = nvsim(&["--trajectories", "100", "--out", d.to_str().unwrap(), "dephase", "--n-reps", "100", "--step", "50"]);
    assert_eq!(code(&o), 0);
    let o = nvsim(&["--out", d.to_str().unwrap(), "plotdata", "--input", d.join("dephase.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dat = std::fs::read_to_string(d.join("dephase.dat")).unwrap();
    assert!(dat.starts_with("# N (repetitions) | xy_len | xy_err\n"));
    let rows: Vec<&str> = dat.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 3));

    let bad = d.join("bad.csv");
    std::fs::write(&bad, "x,y\n1,2\n").unwrap();
    let o = nvsim(&["--out", d.to_str().unwrap(), "plotdata", "--input", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn data_directory_overrides_bundled_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    std::fs::write(data.join("protocol.toml"), bundled_protocol().replace("seed = 1\n", "seed = 42\n")).unwrap();
    let out = dir.path().join("out");
    // no register.toml yet
    let o = nvsim_env(&["--out", out.to_str().unwrap(), "init-fidelity", "--shots", "100"], Some(&data));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("register.toml"));

    std::fs::copy(core_data().join("register.toml"), data.join("register.toml")).unwrap();
    let o = nvsim_env(&["--out", out.to_str().unwrap(), "init-fidelity", "--shots", "100"], Some(&data));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = manifest(&out);
    assert_eq!(m["seed"], 42);
    assert_eq!(m["data"], data.to_str().unwrap());
    let csv = std::fs::read_to_string(out.join("init_fidelity.csv")).unwrap();
    assert_eq!(column(&csv, "spin_id"), [1.0, 2.0, 3.0, 4.0, 5.0]);
}

#[test]
fn fit_reads_ionization_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = nvsim(&["--trajectories", "20000", "--out", d.to_str().unwrap(), "ionization"]);
    assert_eq!(code(&o), 0);
    let o = nvsim(&["--out", d.to_str().unwrap(), "fit", "--input", d.join("ionization.csv").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let n_d = v["params"]["n_1e"].as_f64().unwrap();
    assert!((n_d - 2820.0).abs() < 150.0, "{n_d}");
    assert!(d.join("ionization_fit.json").exists());
}
