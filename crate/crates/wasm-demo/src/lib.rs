//! Browser bindings for the demo page in `www/`.

use nalgebra::DMatrix;
use orbit_mpc::controller::{design_mpc, MpcController, MpcSettings};
use orbit_mpc::design::WeightKind;
use orbit_mpc::model::synthetic_plant;
use orbit_mpc::sim::{
    disturbance, ibm, simulate, DisturbanceKind, DisturbanceSpec, ImcController, Monitor, SineComponent,
};
use wasm_bindgen::prelude::*;

fn err(e: orbit_mpc::Error) -> String {
    e.to_string()
}

/// Euclidean projection of `(t0, t1)` onto the two-stage set of one
/// actuator. Returns `[u0, u1]`.
#[wasm_bindgen]
pub fn project_hexagon(t0: f64, t1: f64, u_prev: f64, alpha: f64, rho: f64) -> Result<Vec<f64>, String> {
    orbit_mpc::qp::project_hexagon((t0, t1), u_prev, alpha, rho)
        .map(|(a, b)| vec![a, b])
        .ok_or_else(|| format!("empty set: |u_prev| = {} exceeds alpha + rho", u_prev.abs()))
}

/// Vertices of the same set, counter-clockwise, flattened `x, y` pairs.
#[wasm_bindgen]
pub fn hexagon_vertices(u_prev: f64, alpha: f64, rho: f64) -> Vec<f64> {
    let mut poly = vec![(-alpha, -alpha), (alpha, -alpha), (alpha, alpha), (-alpha, alpha)];
    // g . u <= h
    let planes = [
        ((1.0, 0.0), u_prev + rho),
        ((-1.0, 0.0), rho - u_prev),
        ((-1.0, 1.0), rho),
        ((1.0, -1.0), rho),
    ];
    for ((gx, gy), h) in planes {
        let side = |p: (f64, f64)| gx * p.0 + gy * p.1 - h;
        let mut next = Vec::new();
        for i in 0..poly.len() {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (sa, sb) = (side(a), side(b));
            if sa <= 0.0 {
                next.push(a);
            }
            if (sa < 0.0 && sb > 0.0) || (sa > 0.0 && sb < 0.0) {
                let t = sa / (sa - sb);
                next.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        poly = next;
    }
    poly.into_iter().flat_map(|(x, y)| [x, y]).collect()
}

/// Condition number of the condensed Hessian for saturated and
/// IMC-matched weights over `points` log-spaced plant spreads.
/// Rows are `kappa_R, kappa_J_saturated, kappa_J_imc` (NaN when the
/// IMC-matched design does not exist).
#[wasm_bindgen]
pub fn conditioning_sweep(
    n: usize,
    seed: u32,
    lambda: f64,
    log10_min: f64,
    log10_max: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(3 * points);
    for i in 0..points {
        let f = if points > 1 {
            i as f64 / (points - 1) as f64
        } else {
            0.0
        };
        let kappa = 10f64.powf(log10_min + f * (log10_max - log10_min));
        let plant = synthetic_plant(n, n, kappa, seed.into()).map_err(err)?;
        let kappa_j = |weights| {
            design_mpc(
                &plant,
                &MpcSettings {
                    weights,
                    ..MpcSettings::default()
                },
            )
            .map(|d| d.qp.kappa())
        };
        out.push(kappa);
        out.push(
            kappa_j(WeightKind::Saturated {
                q_min: 1e-2,
                q_max: 1.0,
            })
            .map_err(err)?,
        );
        out.push(kappa_j(WeightKind::ImcMatched { lambda }).unwrap_or(f64::NAN));
    }
    Ok(out)
}

/// Average-monitor IBM per controller for a sinusoid on the strongest mode
/// plus white noise. Rows are
/// `freq_hz, off, imc_clipped, mpc`.
#[wasm_bindgen]
pub fn ibm_curves(
    n: usize,
    kappa: f64,
    alpha: f64,
    rho: f64,
    freq_hz: f64,
    steps: usize,
    seed: u32,
) -> Result<Vec<f64>, String> {
    let mut plant = synthetic_plant(n, n, kappa, seed.into()).map_err(err)?;
    plant.alpha = vec![alpha; n];
    plant.rho = vec![rho; n];
    let settings = MpcSettings {
        horizon: 2,
        weights: WeightKind::ImcMatched { lambda: 0.1 },
        ..MpcSettings::default()
    };
    let d = design_mpc(&plant, &settings).map_err(err)?;
    let spec = DisturbanceSpec {
        kind: DisturbanceKind::SinusoidMix,
        sigma: 0.1,
        seed: seed.into(),
        components: vec![SineComponent {
            freq_hz,
            amplitude: 1.0,
            mode: 0,
        }],
        path: None,
    };
    let dist = disturbance(&spec, steps, n, d.ss.dt, Some(&d.basis.u)).map_err(err)?;
    let off = simulate(&d.ss, None, &dist).map_err(err)?;
    let mut imc =
        ImcController::new(&d.basis, 0.1, 200.0, d.ss.dt, Some((d.alpha.clone(), d.rho.clone()))).map_err(err)?;
    let imc = simulate(&d.ss, Some(&mut imc), &dist).map_err(err)?;
    let mut mpc = MpcController::new(&d, 1).map_err(err)?;
    let mpc = simulate(&d.ss, Some(&mut mpc), &dist).map_err(err)?;
    let curve = |y: &DMatrix<f64>| ibm(y, d.ss.dt, Monitor::Average).map_err(err);
    let curves = [curve(&off.y)?, curve(&imc.y)?, curve(&mpc.y)?];
    let mut out = Vec::with_capacity(4 * curves[0].freq_hz.len());
    for i in 0..curves[0].freq_hz.len() {
        out.push(curves[0].freq_hz[i]);
        out.extend(curves.iter().map(|c| c.ibm[i]));
    }
    Ok(out)
}
