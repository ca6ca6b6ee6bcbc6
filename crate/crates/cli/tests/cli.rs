use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"
n_y = 6
n_s = 6
kappa = 1e3
horizon = 2
disturbance = "sinusoid_mix"
dist_sigma = 0.05
dist_freqs = [5.0]
dist_amps = [1.0]
dist_modes = [0]
steps = 1024
bench_cycles = 1000
"#;

fn orbit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orbit-mpc"))
        .args(args)
        .output()
        .unwrap()
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

fn design(cfg: &Path, out: &Path) {
    let o = orbit(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn key(file: &Path, k: &str) -> f64 {
    let text = fs::read_to_string(file).unwrap();
    let line = text.lines().find(|l| l.starts_with(&format!("{k}="))).unwrap();
    line[k.len() + 1..].parse().unwrap()
}

#[test]
fn design_bundle_is_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    design(&cfg, &a);
    design(&cfg, &b);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 15);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn every_csv_carries_seed_and_schema() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("b");
    design(&cfg, &out);
    for e in fs::read_dir(&out).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "csv") {
            let first = fs::read_to_string(&p).unwrap().lines().next().unwrap().to_string();
            assert!(
                first.starts_with('#') && first.contains("seed=1") && first.contains("schema_version=1"),
                "{p:?}"
            );
        }
    }
}

#[test]
fn missing_response_file_exits_2_naming_the_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "plant = \"file\"\nR_path = \"nowhere/R.csv\"\n");
    let o = orbit(&["design", "--config", cfg.to_str().unwrap(), "--out", "unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere/R.csv"));
}

#[test]
fn response_of_wrong_shape_exits_3() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("R.csv"), "1,0\n0,1\n").unwrap();
    let cfg = config(tmp.path(), "plant = \"file\"\nR_path = \"R.csv\"\nn_y = 3\nn_s = 3\n");
    let o = orbit(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("b").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn saturated_weights_give_better_conditioning_than_imc_matched() {
    let tmp = TempDir::new().unwrap();
    let base = "n_y = 8\nn_s = 8\nkappa = 1e4\n";
    let sat = config(tmp.path(), &format!("{base}weights = \"saturated\"\n"));
    design(&sat, &tmp.path().join("sat"));
    let imc = tmp.path().join("imc.toml");
    fs::write(&imc, format!("{base}weights = \"imc_matched\"\n")).unwrap();
    design(&imc, &tmp.path().join("imc"));
    let k_sat = key(&tmp.path().join("sat/report.txt"), "kappa_J");
    let k_imc = key(&tmp.path().join("imc/report.txt"), "kappa_J");
    assert!(k_sat * 100.0 < k_imc, "{k_sat} vs {k_imc}");
    assert!(key(&tmp.path().join("sat/report.txt"), "observer_spectral_radius") < 1.0);
}

#[test]
fn zero_disturbance_gives_zero_ibm_for_every_controller() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(
        tmp.path(),
        "n_y = 4\nn_s = 4\nkappa = 10.0\ndist_sigma = 0.0\nsteps = 512\n",
    );
    let out = tmp.path().join("s");
    let o = orbit(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("ibm.csv")).unwrap();
    let mut lines = text.lines().skip(1);
    assert_eq!(
        lines.next().unwrap(),
        "freq_hz,ibm_off,ibm_imc,ibm_imc_constr,ibm_mpc_n1,ibm_mpc_n2"
    );
    for l in lines {
        assert!(l.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{l}");
    }
}

#[test]
fn simulate_writes_trace_and_observer_dump() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), &format!("{SMALL}observer_dump = true\n"));
    let out = tmp.path().join("s");
    let o = orbit(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    // comment, header, one row per step
    assert_eq!(trace.lines().count(), 2 + 1024);
    assert_eq!(trace.lines().nth(1).unwrap().split(',').count(), 1 + 6 + 6 + 6);
    let obs = fs::read_to_string(out.join("observer.csv")).unwrap();
    // x, z_1, z_2 and d for mu = 2
    assert_eq!(obs.lines().nth(1).unwrap().split(',').count(), 1 + 4 * 6);
}

#[test]
fn simulate_rejects_bundle_for_other_plant() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let bundle = tmp.path().join("b");
    design(&cfg, &bundle);
    let other = tmp.path().join("other.toml");
    fs::write(&other, SMALL.replace("n_y = 6\nn_s = 6", "n_y = 5\nn_s = 5")).unwrap();
    let o = orbit(&[
        "simulate",
        "--config",
        other.to_str().unwrap(),
        "--out",
        tmp.path().join("s").to_str().unwrap(),
        "--bundle",
        bundle.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bench_writes_one_stage_table_per_worker_count() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("bench");
    let o = orbit(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for w in 1..=2 {
        let text = fs::read_to_string(out.join(format!("bench_w{w}.csv"))).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows[0], "stage,mean_us,max_us");
        let stages: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
        assert_eq!(
            stages,
            [
                "observer",
                "q_update",
                "set_update",
                "gradient",
                "projection",
                "momentum",
                "total"
            ]
        );
        for r in &rows[1..] {
            let v: Vec<f64> = r.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            assert!(v[0] >= 0.0 && v[0] <= v[1]);
        }
    }
    let summary = fs::read_to_string(out.join("bench_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2 + 2);
}

#[test]
fn check_passes_on_fresh_bundle() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let b = tmp.path().join("b");
    design(&cfg, &b);
    let o = orbit(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--bundle",
        b.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}");
    assert!(!stdout.contains("FAIL"));
    assert!(stdout.contains("dare_residual") && stdout.contains("tol"));
}

#[test]
fn check_fails_on_corrupted_terminal_cost() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let b = tmp.path().join("b");
    design(&cfg, &b);
    let p = fs::read_to_string(b.join("P.csv")).unwrap();
    let mut lines: Vec<String> = p.lines().map(String::from).collect();
    let mut cells: Vec<f64> = lines[1].split(',').map(|c| c.parse().unwrap()).collect();
    cells[0] *= 1.01;
    lines[1] = cells.iter().map(|c| format!("{c:e}")).collect::<Vec<_>>().join(",");
    fs::write(b.join("P.csv"), lines.join("\n")).unwrap();
    let o = orbit(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--bundle",
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL dare_residual"));
}

#[test]
fn check_reports_delay_mismatch_as_inconsistency() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let b = tmp.path().join("b");
    design(&cfg, &b);
    let other = tmp.path().join("mu3.toml");
    fs::write(&other, format!("{SMALL}mu = 3\n")).unwrap();
    let o = orbit(&[
        "check",
        "--config",
        other.to_str().unwrap(),
        "--bundle",
        b.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mu: bundle 2, config 3"));
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("b");
    let o = orbit(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    assert!(o.status.success());
    assert!(fs::read_to_string(out.join("J.csv")).unwrap().starts_with("# seed=7"));
}
