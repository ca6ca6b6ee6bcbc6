use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use orbit_mpc::config::RunConfig;
use orbit_mpc::controller::{design_mpc, MpcController, MpcDesign, STAGES};
use orbit_mpc::design::{dare_residual, SetpointMap, TerminalCost, Weights};
use orbit_mpc::io::{comment_line, fmt_f64, read_matrix, read_vector};
use orbit_mpc::observer::{ObserverGain, ObserverState, CONSISTENCY_TOL};
use orbit_mpc::qp::CondensedQP;
use orbit_mpc::sim::{disturbance, ibm, simulate, Controller, DisturbanceSpec, ImcController, Monitor};
use orbit_mpc::{Error, Result};

use crate::bundle::{self, apply_bundle, csv_meta, read_meta, write_bundle, MATRICES};

/// Everything the subcommands share after flag overrides are applied.
pub struct Run {
    pub config: PathBuf,
    pub cfg: RunConfig,
    pub out: PathBuf,
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn design_for(cfg: &RunConfig, horizon: usize) -> Result<MpcDesign> {
    let mut settings = cfg.mpc_settings();
    settings.horizon = horizon;
    design_mpc(&cfg.plant_config()?, &settings)
}

pub fn design(run: &Run) -> Result<()> {
    let d = design_for(&run.cfg, run.cfg.horizon)?;
    write_bundle(&run.out, &run.cfg, &d)?;
    println!("kappa(J) = {}", fmt_f64(d.qp.kappa()));
    println!("I_max bound = {} (runtime {})", d.i_max_bound, d.i_max());
    println!("bundle written to {}", run.out.display());
    Ok(())
}

/// Records the stacked observer estimate after every MPC step.
struct Dump<'a> {
    inner: &'a mut MpcController,
    rows: Vec<DVector<f64>>,
}

impl Controller for Dump<'_> {
    fn control(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.inner.control(y)?;
        self.rows.push(self.inner.observer().stacked());
        Ok(u)
    }
    fn n_u(&self) -> usize {
        self.inner.n_u()
    }
    fn n_y(&self) -> usize {
        self.inner.n_y()
    }
}

fn table(meta: &[(&str, String)], head: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut s = comment_line(meta);
    s.push('\n');
    s.push_str(&head.join(","));
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|&v| fmt_f64(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn simulate_cmd(run: &Run, bundle_dir: Option<&Path>) -> Result<()> {
    let cfg = &run.cfg;
    let mut designs = [design_for(cfg, 1)?, design_for(cfg, 2)?];
    if let Some(dir) = bundle_dir {
        for d in &mut designs {
            apply_bundle(dir, d)?;
        }
    }
    let ss = &designs[0].ss;
    let basis = &designs[0].basis;
    let spec = cfg.disturbance_spec()?;
    let dist = disturbance(&spec, cfg.steps, ss.n_y(), ss.dt, Some(&basis.u))?;

    let mut traces = vec![("off", simulate(ss, None, &dist)?)];
    let mut imc = ImcController::new(basis, cfg.lambda, cfg.imc_bandwidth_hz, ss.dt, None)?;
    traces.push(("imc", simulate(ss, Some(&mut imc), &dist)?));
    let clip = Some((designs[0].alpha.clone(), designs[0].rho.clone()));
    let mut imc = ImcController::new(basis, cfg.lambda, cfg.imc_bandwidth_hz, ss.dt, clip)?;
    traces.push(("imc_constr", simulate(ss, Some(&mut imc), &dist)?));
    let mut dump = Vec::new();
    for (name, d) in [("mpc_n1", &designs[0]), ("mpc_n2", &designs[1])] {
        let mut mpc = MpcController::new(d, cfg.n_workers)?;
        let trace = if cfg.observer_dump && d.horizon() == cfg.horizon {
            let mut w = Dump {
                inner: &mut mpc,
                rows: Vec::new(),
            };
            let t = simulate(ss, Some(&mut w), &dist)?;
            dump = w.rows;
            t
        } else {
            simulate(ss, Some(&mut mpc), &dist)?
        };
        traces.push((name, trace));
    }

    mkdir(&run.out)?;
    let mut meta = csv_meta(cfg);
    meta.push(("dt", fmt_f64(ss.dt)));
    meta.push(("disturbance", cfg.disturbance.clone()));

    let main = &traces[if cfg.horizon == 1 { 3 } else { 4 }].1;
    let (n_y, n_u) = (ss.n_y(), ss.n_u());
    let mut head = vec!["step".to_string()];
    head.extend((0..n_y).map(|i| format!("y{i}")));
    head.extend((0..n_u).map(|i| format!("u{i}")));
    head.extend((0..n_y).map(|i| format!("d{i}")));
    let rows = (0..main.steps()).map(|k| {
        let mut r = vec![k as f64];
        r.extend(main.y.row(k).iter());
        r.extend(main.u.row(k).iter());
        r.extend(main.d.row(k).iter());
        r
    });
    let mut trace_meta = meta.clone();
    trace_meta.push(("controller", format!("mpc_n{}", cfg.horizon)));
    write(&run.out.join("trace.csv"), table(&trace_meta, &head, rows))?;

    let curves = traces
        .iter()
        .map(|(_, t)| ibm(&t.y, ss.dt, Monitor::Average))
        .collect::<Result<Vec<_>>>()?;
    let mut head = vec!["freq_hz".to_string()];
    head.extend(traces.iter().map(|(n, _)| format!("ibm_{n}")));
    let rows = (0..curves[0].freq_hz.len()).map(|i| {
        let mut r = vec![curves[0].freq_hz[i]];
        r.extend(curves.iter().map(|c| c.ibm[i]));
        r
    });
    let mut ibm_meta = meta.clone();
    ibm_meta.push(("spectrum", "one_sided_rms_mean_removed".into()));
    ibm_meta.push(("monitor", "average".into()));
    write(&run.out.join("ibm.csv"), table(&ibm_meta, &head, rows))?;

    if cfg.observer_dump {
        let width = dump.first().map_or(0, |r| r.len());
        let mut head = vec!["step".to_string()];
        head.extend((0..width).map(|i| format!("z{i}")));
        let rows = dump.iter().enumerate().map(|(k, z)| {
            let mut r = vec![k as f64];
            r.extend(z.iter());
            r
        });
        let mut obs_meta = meta.clone();
        obs_meta.push(("layout", "x_hat,z_hat_1..z_hat_mu,d_hat".into()));
        write(&run.out.join("observer.csv"), table(&obs_meta, &head, rows))?;
    }

    let probe = cfg.dist_freqs.iter().copied().fold(f64::INFINITY, f64::min);
    for ((name, _), c) in traces.iter().zip(&curves) {
        if probe.is_finite() {
            println!(
                "{name:>10}: IBM total {}  at {probe} Hz {}",
                fmt_f64(c.total()),
                fmt_f64(c.at(probe))
            );
        } else {
            println!("{name:>10}: IBM total {}", fmt_f64(c.total()));
        }
    }
    Ok(())
}

pub fn bench(run: &Run, bundle_dir: Option<&Path>, max_workers: usize) -> Result<()> {
    let cfg = &run.cfg;
    let mut d = design_for(cfg, cfg.horizon)?;
    if let Some(dir) = bundle_dir {
        apply_bundle(dir, &mut d)?;
    }
    let spec = cfg.disturbance_spec()?;
    let dist = disturbance(&spec, cfg.bench_cycles, d.ss.n_y(), d.ss.dt, Some(&d.basis.u))?;
    mkdir(&run.out)?;
    let mut meta = csv_meta(cfg);
    meta.push(("cycles", cfg.bench_cycles.to_string()));
    meta.push(("i_max", d.i_max().to_string()));
    meta.push(("unit", "microseconds".into()));
    let mut summary = Vec::new();
    for w in 1..=max_workers {
        let mut mpc = MpcController::new(&d, w)?;
        mpc.enable_timing();
        simulate(&d.ss, Some(&mut mpc), &dist)?;
        let stats = mpc.stage_stats().expect("timing enabled");
        let mut s = comment_line(&meta);
        s.push_str(&format!(" n_workers={w}\nstage,mean_us,max_us\n"));
        for (i, name) in STAGES.iter().enumerate() {
            s.push_str(&format!(
                "{name},{},{}\n",
                fmt_f64(stats.mean_us(i)),
                fmt_f64(stats.max_us(i))
            ));
        }
        let max_total: f64 = (0..STAGES.len()).map(|i| stats.max_us(i)).sum();
        s.push_str(&format!(
            "total,{},{}\n",
            fmt_f64(stats.mean_total_us()),
            fmt_f64(max_total)
        ));
        write(&run.out.join(format!("bench_w{w}.csv")), s)?;
        println!("workers {w}: mean cycle {:.2} us", stats.mean_total_us());
        summary.push(vec![
            w as f64,
            stats.mean_total_us(),
            stats.mean_us(3) + stats.mean_us(4) + stats.mean_us(5),
        ]);
    }
    let head = ["n_workers", "total_mean_us", "solver_mean_us"].map(String::from);
    write(
        &run.out.join("bench_summary.csv"),
        table(&meta, &head, summary.into_iter()),
    )
}

/// Result of `check`: `Ok` when every item passed.
pub enum CheckOutcome {
    Pass,
    /// At least one numerical check failed.
    Failed,
    /// The bundle does not belong to this configuration.
    Inconsistent,
}

struct Report {
    failed: bool,
}

impl Report {
    fn item(&mut self, name: &str, value: f64, tol: f64) {
        let ok = value <= tol;
        self.failed |= !ok;
        let tag = if ok { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} (tol {})", fmt_f64(value), fmt_f64(tol));
    }
}

pub fn check(run: &Run, bundle_dir: &Path) -> Result<CheckOutcome> {
    let cfg = &run.cfg;
    println!("PASS config: {} validated", run.config.display());
    let design = design_for(cfg, cfg.horizon)?;
    let ss = &design.ss;
    let meta = read_meta(bundle_dir)?;
    let mismatch = bundle::meta_mismatches(&meta, &design);
    if !mismatch.is_empty() {
        for m in &mismatch {
            println!("FAIL meta: {m}");
        }
        return Ok(CheckOutcome::Inconsistent);
    }
    println!(
        "PASS meta: n_y={} n_u={} mu={} horizon={}",
        meta.n_y, meta.n_u, meta.mu, meta.horizon
    );

    let m = |name: &str| bundle_dir.join(format!("{name}.csv"));
    let (n_u, n_y, nz) = (ss.n_u(), ss.n_y(), (ss.mu + 1) * ss.n_u() + ss.n_y());
    let n_dec = meta.horizon * n_u;
    let shapes = [
        (n_u, n_u),
        (n_u, n_u),
        (n_u, n_u),
        (0, 1),
        (0, 1),
        (nz, n_y),
        (2 * n_u, n_y),
        (n_dec, n_dec),
        (n_dec, n_u),
        (n_dec, n_y),
    ];
    let mut mats = Vec::new();
    for (name, want) in MATRICES.iter().zip(shapes) {
        let x = read_matrix(&m(name))?;
        if want.0 > 0 && x.shape() != want {
            println!("FAIL shape {name}: {:?}, expected {want:?}", x.shape());
            return Ok(CheckOutcome::Inconsistent);
        }
        mats.push(x);
    }
    println!("PASS shapes: {} matrices", MATRICES.len());
    let [p, q, r, _, _, l, m_sp, j, qx, qd]: [DMatrix<f64>; 10] = mats.try_into().expect("ten matrices");

    let mut rep = Report { failed: false };
    let res = dare_residual(&ss.a_dense(), &ss.b_dense(), &q, &r, &p)?;
    rep.item("dare_residual", res, 1e-8 * p.norm().max(1.0));

    let semantics = bundle::lookup(
        &bundle::read_text(&bundle_dir.join("meta.txt"))?,
        "setpoint_semantics",
        &bundle_dir.join("meta.txt"),
    )?
    .to_string();
    let full = semantics == "exact";
    rep.item("setpoint_residual", bundle::setpoint_residual(ss, &m_sp, full), 1e-8);

    let gain = ObserverGain::new(l, n_u, n_y, ss.mu)?;
    rep.item("observer_consistency", gain.consistency_error(&ss.a), CONSISTENCY_TOL);
    let probe_len = 100;
    let probe = disturbance(
        &DisturbanceSpec::white(1.0, cfg.seed),
        probe_len,
        n_u + n_y,
        ss.dt,
        None,
    )?;
    let mut naive = ObserverState::new(ss, gain)?;
    let mut fast = naive.clone();
    let mut worst: f64 = 0.0;
    for k in 0..probe_len {
        let row = probe.row(k).transpose();
        let u = row.rows(0, n_u).into_owned();
        let y = row.rows(n_u, n_y).into_owned();
        naive.update_naive(&u, &y);
        fast.update_fast(&u, &y)?;
        worst = worst.max((naive.stacked() - fast.stacked()).amax());
    }
    rep.item("observer_fast_vs_naive", worst, 1e-10);

    let weights = Weights {
        kind: cfg.weight_kind(),
        q_hat: read_vector(&m("q_hat"))?,
        r_hat: read_vector(&m("r_hat"))?,
        q,
        r,
    };
    let terminal = TerminalCost {
        p,
        p_hat: None,
        residual: 0.0,
        iterations: 0,
    };
    let sp = SetpointMap {
        m: m_sp,
        full_row_rank: full,
    };
    let rebuilt = CondensedQP::build(ss, &weights, &terminal, &sp, meta.horizon)?;
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1e-300);
    rep.item("hessian_rebuild", rel(&rebuilt.j, &j), 1e-10);
    rep.item("linear_map_x0_rebuild", rel(&rebuilt.q_map_x0, &qx), 1e-10);
    rep.item("linear_map_d_rebuild", rel(&rebuilt.q_map_d, &qd), 1e-10);
    if CondensedQP::from_parts(j, qx, qd, meta.horizon).is_err() {
        println!("FAIL hessian: not positive definite");
        rep.failed = true;
    }

    Ok(if rep.failed {
        CheckOutcome::Failed
    } else {
        CheckOutcome::Pass
    })
}
