//! Design bundle: every offline matrix as CSV plus `key=value` text files.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use orbit_mpc::config::{RunConfig, SCHEMA_VERSION};
use orbit_mpc::controller::MpcDesign;
use orbit_mpc::design::{error_spectral_radius, setpoint_system, WeightKind};
use orbit_mpc::io::{comment_line, fmt_f64, parse_key_values, read_matrix, write_column, write_matrix};
use orbit_mpc::model::StateSpace;
use orbit_mpc::observer::ObserverGain;
use orbit_mpc::qp::CondensedQP;
use orbit_mpc::{Error, Result};

pub const MATRICES: [&str; 10] = [
    "P",
    "Q",
    "R_w",
    "q_hat",
    "r_hat",
    "L",
    "M_setpoint",
    "J",
    "q_map_x0",
    "q_map_d",
];

pub fn csv_meta(cfg: &RunConfig) -> Vec<(&'static str, String)> {
    vec![
        ("seed", cfg.seed.to_string()),
        ("schema_version", SCHEMA_VERSION.to_string()),
    ]
}

fn write_text(path: &Path, header: &str, kv: &[(&str, String)]) -> Result<()> {
    let mut s = format!("{header}\n");
    for (k, v) in kv {
        s.push_str(&format!("{k}={v}\n"));
    }
    fs::write(path, s).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_text(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(parse_key_values(&text))
}

pub fn lookup<'a>(kv: &'a [(String, String)], key: &str, path: &Path) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("missing key {key}"),
        })
}

pub fn lookup_num<T: std::str::FromStr>(kv: &[(String, String)], key: &str, path: &Path) -> Result<T> {
    let v = lookup(kv, key, path)?;
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("{key}={v} is not a number"),
    })
}

/// Sizes recorded in `meta.txt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Meta {
    pub n_y: usize,
    pub n_u: usize,
    pub mu: usize,
    pub horizon: usize,
    pub dt: f64,
}

pub fn read_meta(dir: &Path) -> Result<Meta> {
    let path = dir.join("meta.txt");
    let kv = read_text(&path)?;
    Ok(Meta {
        n_y: lookup_num(&kv, "n_y", &path)?,
        n_u: lookup_num(&kv, "n_u", &path)?,
        mu: lookup_num(&kv, "mu", &path)?,
        horizon: lookup_num(&kv, "horizon", &path)?,
        dt: lookup_num(&kv, "dt", &path)?,
    })
}

/// Field-by-field differences between a bundle and the current design.
pub fn meta_mismatches(meta: &Meta, design: &MpcDesign) -> Vec<String> {
    let ss = &design.ss;
    let mut out = Vec::new();
    for (name, got, want) in [
        ("n_y", meta.n_y, ss.n_y()),
        ("n_u", meta.n_u, ss.n_u()),
        ("mu", meta.mu, ss.mu),
        ("horizon", meta.horizon, design.horizon()),
    ] {
        if got != want {
            out.push(format!("{name}: bundle {got}, config {want}"));
        }
    }
    if meta.dt != ss.dt {
        out.push(format!("dt: bundle {}, config {}", meta.dt, ss.dt));
    }
    out
}

pub fn write_bundle(dir: &Path, cfg: &RunConfig, d: &MpcDesign) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let meta = csv_meta(cfg);
    let m = |name: &str| dir.join(format!("{name}.csv"));
    write_matrix(&m("P"), &d.terminal.p, &meta)?;
    write_matrix(&m("Q"), &d.weights.q, &meta)?;
    write_matrix(&m("R_w"), &d.weights.r, &meta)?;
    write_column(&m("q_hat"), &d.weights.q_hat, &meta)?;
    write_column(&m("r_hat"), &d.weights.r_hat, &meta)?;
    write_matrix(&m("L"), &d.gain.l, &meta)?;
    let semantics = if d.setpoint.full_row_rank {
        "exact"
    } else {
        "least_squares"
    };
    let mut sp_meta = meta.clone();
    sp_meta.push(("semantics", semantics.into()));
    write_matrix(&m("M_setpoint"), &d.setpoint.m, &sp_meta)?;
    write_matrix(&m("J"), &d.qp.j, &meta)?;
    write_matrix(&m("q_map_x0"), &d.qp.q_map_x0, &meta)?;
    write_matrix(&m("q_map_d"), &d.qp.q_map_d, &meta)?;

    let header = comment_line(&meta);
    let parts: Vec<(String, String)> = d
        .gain
        .partition_offsets()
        .into_iter()
        .map(|(name, start, len)| (name, format!("{start},{len}")))
        .collect();
    let parts_ref: Vec<(&str, String)> = parts.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    write_text(
        &dir.join("L_partition.txt"),
        &format!("{header} format=start_row,rows"),
        &parts_ref,
    )?;

    let delta_source = if d.settings.delta.is_some() {
        "config"
    } else {
        "default_diameter_guess"
    };
    write_text(
        &dir.join("bounds.txt"),
        &header,
        &[
            ("lambda_min", fmt_f64(d.qp.lambda_min)),
            ("lambda_max", fmt_f64(d.qp.lambda_max)),
            ("beta", fmt_f64(d.qp.beta)),
            ("kappa", fmt_f64(d.qp.kappa())),
            ("I_max", d.i_max_bound.to_string()),
            ("epsilon", fmt_f64(d.settings.epsilon)),
            ("delta", fmt_f64(d.delta)),
            ("delta_source", delta_source.into()),
        ],
    )?;

    let ss = &d.ss;
    let weights = match d.settings.weights {
        WeightKind::ImcMatched { lambda } => format!("imc_matched(lambda={lambda})"),
        WeightKind::Saturated { q_min, q_max } => {
            format!("saturated(q_min={q_min},q_max={q_max})")
        }
    };
    write_text(
        &dir.join("meta.txt"),
        &header,
        &[
            ("n_y", ss.n_y().to_string()),
            ("n_u", ss.n_u().to_string()),
            ("n_s", cfg.n_s.to_string()),
            ("n_f", cfg.n_f.to_string()),
            ("mu", ss.mu.to_string()),
            ("horizon", d.horizon().to_string()),
            ("dt", fmt_f64(ss.dt)),
            ("weights", weights),
            ("setpoint_semantics", semantics.into()),
            ("observer_gain", "propagation_consistent".into()),
        ],
    )?;

    let setpoint_residual = setpoint_residual(ss, &d.setpoint.m, d.setpoint.full_row_rank);
    write_text(
        &dir.join("report.txt"),
        &header,
        &[
            ("kappa_R", fmt_f64(d.basis.spread())),
            ("kappa_J", fmt_f64(d.qp.kappa())),
            ("beta", fmt_f64(d.qp.beta)),
            ("I_max", d.i_max_bound.to_string()),
            ("I_max_runtime", d.i_max().to_string()),
            ("dare_residual", fmt_f64(d.terminal.residual)),
            ("dare_iterations", d.terminal.iterations.to_string()),
            ("setpoint_residual", fmt_f64(setpoint_residual)),
            ("observer_spectral_radius", fmt_f64(error_spectral_radius(ss, &d.gain))),
            ("delta_source", delta_source.into()),
        ],
    )?;
    fs::write(dir.join("config.toml"), cfg.to_toml()).map_err(|e| Error::Io {
        path: dir.join("config.toml"),
        source: e,
    })
}

/// `max |S M - [0; I]|`, restricted to disturbances in the range of `C`
/// when `M` only has least-squares semantics.
pub fn setpoint_residual(ss: &StateSpace, m: &DMatrix<f64>, full_row_rank: bool) -> f64 {
    let s = setpoint_system(ss);
    let n_y = m.ncols();
    let mut target = DMatrix::zeros(s.nrows(), n_y);
    target.rows_mut(s.nrows() - n_y, n_y).fill_with_identity();
    let r = s * m - target;
    if full_row_rank {
        r.amax()
    } else {
        (r * &ss.c).amax()
    }
}

/// Replaces the observer gain and, when the horizons agree, the condensed
/// QP of `design` with the bundle's matrices.
pub fn apply_bundle(dir: &Path, design: &mut MpcDesign) -> Result<()> {
    let meta = read_meta(dir)?;
    let mut mismatch = meta_mismatches(&meta, design);
    mismatch.retain(|m| !m.starts_with("horizon"));
    if !mismatch.is_empty() {
        return Err(Error::Dimension(format!(
            "bundle {} does not match the plant: {}",
            dir.display(),
            mismatch.join("; ")
        )));
    }
    let ss = &design.ss;
    design.gain = ObserverGain::new(read_matrix(&dir.join("L.csv"))?, ss.n_u(), ss.n_y(), ss.mu)?;
    if meta.horizon == design.horizon() {
        design.qp = CondensedQP::from_parts(
            read_matrix(&dir.join("J.csv"))?,
            read_matrix(&dir.join("q_map_x0.csv"))?,
            read_matrix(&dir.join("q_map_d.csv"))?,
            meta.horizon,
        )?;
        if design.qp.n_u != ss.n_u() {
            return Err(Error::Dimension(format!(
                "bundle Hessian has {} inputs per stage, plant has {}",
                design.qp.n_u,
                ss.n_u()
            )));
        }
    }
    Ok(())
}
