//! Condensed MPC quadratic program and its constraint set.
//!
//! Decision vector layout is stage-major: `u = (u_0, ..., u_{N-1})`, each
//! block of length `n_u`. The horizon is limited to `N <= 2`, which keeps
//! the projection separable per actuator: an interval for `N = 1` and a
//! planar polygon (at most six edges) for `N = 2`.

use nalgebra::{DMatrix, DVector};

use crate::design::{extreme_eigenvalues, SetpointMap, TerminalCost, Weights};
use crate::model::StateSpace;
use crate::{Error, Result};

pub const MAX_HORIZON: usize = 2;

fn check_horizon(n: usize) -> Result<()> {
    if n == 0 || n > MAX_HORIZON {
        return Err(Error::Config(format!("horizon N = {n} must be 1 or 2")));
    }
    Ok(())
}

/// `x = G u + H x_0` over the stacked states `x_0..x_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub horizon: usize,
}

pub fn build_prediction(ss: &StateSpace, horizon: usize) -> Result<Prediction> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let n_u = ss.n_u();
    let mut g = DMatrix::zeros((horizon + 1) * n_u, horizon * n_u);
    let mut h = DMatrix::zeros((horizon + 1) * n_u, n_u);
    for i in 0..=horizon {
        let ai = ss.a_pow(i);
        for k in 0..n_u {
            h[(i * n_u + k, k)] = ai[k];
        }
        for j in 0..i {
            // A^{i-1-j} B
            let blk = ss.a_pow(i - 1 - j).component_mul(&ss.b);
            for k in 0..n_u {
                g[(i * n_u + k, j * n_u + k)] = blk[k];
            }
        }
    }
    Ok(Prediction { g, h, horizon })
}

/// `(I_N kron Q) (+) P`.
fn stage_weight(w: &Weights, p: &TerminalCost, horizon: usize) -> DMatrix<f64> {
    let n_u = w.q.nrows();
    let mut big = DMatrix::zeros((horizon + 1) * n_u, (horizon + 1) * n_u);
    for i in 0..horizon {
        big.view_mut((i * n_u, i * n_u), (n_u, n_u)).copy_from(&w.q);
    }
    big.view_mut((horizon * n_u, horizon * n_u), (n_u, n_u)).copy_from(&p.p);
    big
}

/// `J = G^T ((I_N kron Q) (+) P) G + I_N kron R`.
pub fn build_hessian(pred: &Prediction, w: &Weights, p: &TerminalCost) -> Result<DMatrix<f64>> {
    let n = pred.horizon;
    let n_u = w.q.nrows();
    if pred.g.nrows() != (n + 1) * n_u || p.p.shape() != (n_u, n_u) || w.r.shape() != (n_u, n_u) {
        return Err(Error::Dimension("Hessian operands".into()));
    }
    let big = stage_weight(w, p, n);
    let mut j = pred.g.transpose() * big * &pred.g;
    for i in 0..n {
        let mut blk = j.view_mut((i * n_u, i * n_u), (n_u, n_u));
        blk += &w.r;
    }
    let j = (&j + j.transpose()) * 0.5;
    extreme_eigenvalues(&j)
        .map_err(|e| Error::Numerical(format!("condensed Hessian is not positive definite: {e}")))?;
    Ok(j)
}

/// Maps from `x_hat_0` and `d_bar` to the linear term `q`, with the
/// setpoints `(x_bar, u_bar) = M d_bar` folded in.
pub fn build_linear_maps(
    pred: &Prediction,
    w: &Weights,
    p: &TerminalCost,
    sp: &SetpointMap,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = pred.horizon;
    let n_u = w.q.nrows();
    if sp.m.nrows() != 2 * n_u {
        return Err(Error::Dimension(format!(
            "setpoint map has {} rows, expected {}",
            sp.m.nrows(),
            2 * n_u
        )));
    }
    let big = stage_weight(w, p, n);
    let gt = pred.g.transpose();
    let q_map_x0 = &gt * &big * &pred.h;

    let mut stacked = DMatrix::zeros((n + 1) * n_u, n_u);
    for i in 0..n {
        stacked.view_mut((i * n_u, 0), (n_u, n_u)).copy_from(&w.q);
    }
    stacked.view_mut((n * n_u, 0), (n_u, n_u)).copy_from(&p.p);
    let m_x = sp.m.rows(0, n_u);
    let m_u = sp.m.rows(n_u, n_u);
    let mut q_map_d = -(&gt * stacked * m_x);
    let r_mu = &w.r * m_u;
    for i in 0..n {
        let mut blk = q_map_d.rows_mut(i * n_u, n_u);
        blk -= &r_mu;
    }
    Ok((q_map_x0, q_map_d))
}

/// `(lambda_min, lambda_max, beta)` with
/// `beta = (sqrt(l_max) - sqrt(l_min)) / (sqrt(l_max) + sqrt(l_min))`.
pub fn spectral_bounds(j: &DMatrix<f64>) -> Result<(f64, f64, f64)> {
    let (lo, hi) = extreme_eigenvalues(j)?;
    let (s_lo, s_hi) = (lo.sqrt(), hi.sqrt());
    Ok((lo, hi, (s_hi - s_lo) / (s_hi + s_lo)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQP {
    pub j: DMatrix<f64>,
    pub q_map_x0: DMatrix<f64>,
    pub q_map_d: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub beta: f64,
    pub horizon: usize,
    pub n_u: usize,
}

impl CondensedQP {
    pub fn build(ss: &StateSpace, w: &Weights, p: &TerminalCost, sp: &SetpointMap, horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        let pred = build_prediction(ss, horizon)?;
        let j = build_hessian(&pred, w, p)?;
        let (q_map_x0, q_map_d) = build_linear_maps(&pred, w, p, sp)?;
        CondensedQP::from_parts(j, q_map_x0, q_map_d, horizon)
    }

    pub fn from_parts(j: DMatrix<f64>, q_map_x0: DMatrix<f64>, q_map_d: DMatrix<f64>, horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        let n = j.nrows();
        if n % horizon != 0 || q_map_x0.nrows() != n || q_map_d.nrows() != n {
            return Err(Error::Dimension("condensed QP blocks".into()));
        }
        let (lambda_min, lambda_max, beta) = spectral_bounds(&j)?;
        Ok(CondensedQP {
            j,
            q_map_x0,
            q_map_d,
            lambda_min,
            lambda_max,
            beta,
            horizon,
            n_u: n / horizon,
        })
    }

    /// Hessian only, with empty linear maps; for solver studies.
    pub fn from_hessian(j: DMatrix<f64>, horizon: usize) -> Result<Self> {
        let n = j.nrows();
        CondensedQP::from_parts(j, DMatrix::zeros(n, 0), DMatrix::zeros(n, 0), horizon)
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn kappa(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    pub fn linear_term(&self, x0: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.q_map_x0 * x0 + &self.q_map_d * d
    }

    /// `1/2 u^T J u + q^T u`.
    pub fn objective(&self, u: &[f64], q: &[f64]) -> f64 {
        let u = DVector::from_column_slice(u);
        0.5 * u.dot(&(&self.j * &u)) + u.dot(&DVector::from_column_slice(q))
    }
}

/// Amplitude/slew-rate limits together with the last applied input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub horizon: usize,
}

/// Tolerance on `|u_applied| <= alpha` when updating the set.
pub const AMPLITUDE_SLACK: f64 = 1e-9;

impl ConstraintSet {
    pub fn new(alpha: Vec<f64>, rho: Vec<f64>, horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        if alpha.len() != rho.len() {
            return Err(Error::Dimension("alpha and rho lengths differ".into()));
        }
        if alpha.iter().chain(&rho).any(|x| !(*x > 0.0)) {
            return Err(Error::Config("alpha and rho must be positive".into()));
        }
        let n = alpha.len();
        Ok(ConstraintSet {
            alpha,
            rho,
            u_prev: vec![0.0; n],
            horizon,
        })
    }

    pub fn n_u(&self) -> usize {
        self.alpha.len()
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(ConstraintSet {
            horizon,
            ..self.clone()
        })
    }

    /// First-stage interval `[max(-a, u_prev - r), min(a, u_prev + r)]`.
    pub fn first_stage_bounds(&self, i: usize) -> (f64, f64) {
        let (a, r, up) = (self.alpha[i], self.rho[i], self.u_prev[i]);
        ((-a).max(up - r), a.min(up + r))
    }

    pub fn check_feasible(&self) -> Result<()> {
        for i in 0..self.n_u() {
            let (lo, hi) = self.first_stage_bounds(i);
            if lo > hi {
                return Err(Error::Infeasible(format!(
                    "actuator {i}: empty stage interval [{lo}, {hi}] (u_prev = {})",
                    self.u_prev[i]
                )));
            }
        }
        Ok(())
    }

    /// Records the applied input; it must respect the amplitude limits.
    pub fn update(&mut self, u_applied: &[f64]) -> Result<()> {
        if u_applied.len() != self.n_u() {
            return Err(Error::Dimension(format!(
                "applied input has {} entries, expected {}",
                u_applied.len(),
                self.n_u()
            )));
        }
        for (i, (&u, &a)) in u_applied.iter().zip(&self.alpha).enumerate() {
            if !(u.abs() <= a + AMPLITUDE_SLACK) {
                return Err(Error::Infeasible(format!(
                    "applied input {u} on actuator {i} violates amplitude limit {a}"
                )));
            }
        }
        self.u_prev.copy_from_slice(u_applied);
        Ok(())
    }

    /// Euclidean projection of `t` onto the horizon set.
    pub fn project(&self, t: &[f64], out: &mut [f64]) -> Result<()> {
        let n_u = self.n_u();
        if t.len() != self.horizon * n_u || out.len() != t.len() {
            return Err(Error::Dimension(format!(
                "projection of length {} for N={} and n_u={n_u}",
                t.len(),
                self.horizon
            )));
        }
        match self.horizon {
            1 => {
                for i in 0..n_u {
                    let (lo, hi) = self.first_stage_bounds(i);
                    out[i] = project_interval(t[i], lo, hi)
                        .ok_or_else(|| Error::Infeasible(format!("actuator {i}: empty stage interval [{lo}, {hi}]")))?;
                }
            }
            _ => {
                for i in 0..n_u {
                    let (u0, u1) = project_hexagon((t[i], t[n_u + i]), self.u_prev[i], self.alpha[i], self.rho[i])
                        .ok_or_else(|| {
                            Error::Infeasible(format!(
                                "actuator {i}: empty two-stage polygon (u_prev = {})",
                                self.u_prev[i]
                            ))
                        })?;
                    out[i] = u0;
                    out[n_u + i] = u1;
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any amplitude or slew-rate constraint by `u`.
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let n_u = self.n_u();
        let mut worst: f64 = 0.0;
        for i in 0..n_u {
            let (a, r) = (self.alpha[i], self.rho[i]);
            let mut prev = self.u_prev[i];
            for s in 0..self.horizon {
                let v = u[s * n_u + i];
                worst = worst.max(v.abs() - a).max((v - prev).abs() - r);
                prev = v;
            }
        }
        worst
    }
}

/// Clamp to `[lo, hi]`; `None` when the interval is empty.
pub fn project_interval(t: f64, lo: f64, hi: f64) -> Option<f64> {
    (lo <= hi).then(|| t.clamp(lo, hi))
}

/// Constraint `n . u <= b` of the two-stage polygon.
#[derive(Debug, Clone, Copy)]
struct HalfPlane {
    n: (f64, f64),
    b: f64,
}

impl HalfPlane {
    fn eval(&self, u: (f64, f64)) -> f64 {
        self.n.0 * u.0 + self.n.1 * u.1 - self.b
    }
}

/// The six half-planes of the per-actuator two-stage set:
/// `u0 <= hi0`, `u0 >= lo0`, `|u1| <= alpha`, `|u1 - u0| <= rho`, where
/// `[lo0, hi0]` already merges the amplitude and first slew-rate limit.
fn hexagon_faces(u_prev: f64, alpha: f64, rho: f64) -> [HalfPlane; 6] {
    let lo0 = (-alpha).max(u_prev - rho);
    let hi0 = alpha.min(u_prev + rho);
    [
        HalfPlane { n: (1.0, 0.0), b: hi0 },
        HalfPlane {
            n: (-1.0, 0.0),
            b: -lo0,
        },
        HalfPlane {
            n: (0.0, 1.0),
            b: alpha,
        },
        HalfPlane {
            n: (0.0, -1.0),
            b: alpha,
        },
        HalfPlane { n: (-1.0, 1.0), b: rho },
        HalfPlane { n: (1.0, -1.0), b: rho },
    ]
}

/// Exact Euclidean projection of `t = (t0, t1)` onto
/// `{|u0 - u_prev| <= rho, |u1 - u0| <= rho, |u0| <= alpha, |u1| <= alpha}`.
///
/// Candidates are the point itself (if inside), the orthogonal foot on each
/// violated edge (if it lies on the polygon) and every polygon vertex; the
/// nearest wins, ties going to the lowest candidate index. Returns `None`
/// when the set is empty.
pub fn project_hexagon(t: (f64, f64), u_prev: f64, alpha: f64, rho: f64) -> Option<(f64, f64)> {
    let faces = hexagon_faces(u_prev, alpha, rho);
    if faces[1].b < -faces[0].b {
        // lo0 > hi0
        return None;
    }
    let tol = 1e-12 * (alpha + rho + u_prev.abs());
    let inside = |u: (f64, f64)| faces.iter().all(|f| f.eval(u) <= tol);
    if inside(t) {
        return Some(t);
    }
    let dist2 = |u: (f64, f64)| (u.0 - t.0).powi(2) + (u.1 - t.1).powi(2);

    let mut best: Option<((f64, f64), f64)> = None;
    let mut offer = |u: (f64, f64)| {
        let d = dist2(u);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((u, d));
        }
    };
    for f in &faces {
        let viol = f.eval(t);
        if viol > 0.0 {
            let nn = f.n.0 * f.n.0 + f.n.1 * f.n.1;
            let foot = (t.0 - viol / nn * f.n.0, t.1 - viol / nn * f.n.1);
            if inside(foot) {
                offer(foot);
            }
        }
    }
    for i in 0..faces.len() {
        for j in i + 1..faces.len() {
            let (fi, fj) = (faces[i], faces[j]);
            let det = fi.n.0 * fj.n.1 - fi.n.1 * fj.n.0;
            if det == 0.0 {
                continue;
            }
            let v = (
                (fi.b * fj.n.1 - fi.n.1 * fj.b) / det,
                (fi.n.0 * fj.b - fi.b * fj.n.0) / det,
            );
            if inside(v) {
                offer(v);
            }
        }
    }
    best.map(|(u, _)| u)
}
