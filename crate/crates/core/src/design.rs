//! Offline controller synthesis.
//!
//! Everything the online loop consumes is computed here once: the Riccati
//! terminal cost, the modal state/input weights, the setpoint map, the
//! observer gain, and the iteration budget of the fast gradient method.

use nalgebra::{DMatrix, DVector};

use crate::model::{ModalBasis, StateSpace};
use crate::observer::{augmented_matrices, ObserverGain, CONSISTENCY_TOL};
use crate::{Error, Result};

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 10_000;
pub const KALMAN_TOL: f64 = 1e-10;
pub const KALMAN_MAX_ITER: usize = 100_000;

/// Bracket for the modal input weight search.
pub const R_MIN: f64 = 1e-12;
pub const R_MAX: f64 = 1e12;
const R_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightKind {
    /// Input weights chosen so each modal LQR gain equals the regularised
    /// IMC gain.
    ImcMatched { lambda: f64 },
    /// `r_hat = 1`, `q_hat = clamp(sigma^2, q_min, q_max)`.
    Saturated { q_min: f64, q_max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub kind: WeightKind,
    /// One entry per singular value.
    pub q_hat: Vec<f64>,
    /// One entry per actuator mode (columns of the completed input basis).
    pub r_hat: Vec<f64>,
    /// `V diag(q_hat) V^T`.
    pub q: DMatrix<f64>,
    /// `V_full diag(r_hat) V_full^T`.
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost {
    pub p: DMatrix<f64>,
    pub p_hat: Option<Vec<f64>>,
    /// Frobenius norm of the Riccati residual at `p`.
    pub residual: f64,
    pub iterations: usize,
}

/// `A^T P A - A^T P B (B^T P B + R)^{-1} B^T P A + Q - P`.
pub fn dare_residual_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    Ok(riccati_map(a, b, q, r, p)? - p)
}

pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    Ok(dare_residual_matrix(a, b, q, r, p)?.norm())
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = b.transpose() * &pb + r;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("B^T P B + R is not positive definite".into()))?;
    let k = chol.solve(&(b.transpose() * &pa));
    let next = a.transpose() * &pa - (a.transpose() * &pb) * k + q;
    Ok(symmetrize(&next))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Fixed-point iteration on the Riccati map from `P_0 = Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<TerminalCost> {
    let n = a.nrows();
    if a.shape() != (n, n) || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("inconsistent DARE operands".into()));
    }
    let mut p = symmetrize(q);
    for it in 1..=DARE_MAX_ITER {
        let next = riccati_map(a, b, q, r, &p)?;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("DARE iteration diverged at step {it}")));
        }
        let change = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        if change <= DARE_TOL * scale {
            return finish_dare(a, b, q, r, p, it);
        }
    }
    finish_dare(a, b, q, r, p, DARE_MAX_ITER)
}

fn finish_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: DMatrix<f64>,
    iterations: usize,
) -> Result<TerminalCost> {
    let residual = dare_residual(a, b, q, r, &p)?;
    if residual > 1e-8 * p.norm().max(f64::MIN_POSITIVE) {
        return Err(Error::Numerical(format!(
            "DARE residual {residual:.3e} exceeds 1e-8*|P| after {iterations} iterations"
        )));
    }
    Ok(TerminalCost {
        p,
        p_hat: None,
        residual,
        iterations,
    })
}

/// LQR gain `(B^T P B + R)^{-1} B^T P A`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = b.transpose() * p * b + r;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Numerical("B^T P B + R is not positive definite".into()))?;
    Ok(chol.solve(&(b.transpose() * p * a)))
}

/// Closed-form scalar DARE for the decoupled mode `x+ = a x + b u`.
///
/// For `b = 0` the limit `q / (1 - a^2)` is returned; for `a = 0` the
/// solution is `q` exactly.
pub fn solve_dare_modal(a: f64, b: f64, q_hat: f64, r_hat: f64) -> f64 {
    if a == 0.0 {
        return q_hat;
    }
    if b == 0.0 {
        return q_hat / (1.0 - a * a);
    }
    let b2 = b * b;
    let xi = r_hat * (1.0 - a * a) - b2 * q_hat;
    let disc = (xi * xi + 4.0 * b2 * q_hat * r_hat).sqrt();
    if xi > 0.0 {
        // same root, without cancellation between -xi and disc
        2.0 * q_hat * r_hat / (xi + disc)
    } else {
        (disc - xi) / (2.0 * b2)
    }
}

pub fn lqr_gain_modal(a: f64, b: f64, p_hat: f64, r_hat: f64) -> f64 {
    a * b * p_hat / (r_hat + b * b * p_hat)
}

/// Regularised modal inverse `sigma / (sigma^2 + lambda)`.
pub fn imc_gain(sigma: f64, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("IMC regularisation {lambda} < 0")));
    }
    let den = sigma * sigma + lambda;
    if den == 0.0 {
        return Err(Error::Config(
            "zero singular value needs a positive IMC regularisation".into(),
        ));
    }
    Ok(sigma / den)
}

pub fn imc_gains(s: &[f64], lambda: f64) -> Result<Vec<f64>> {
    s.iter().map(|&sigma| imc_gain(sigma, lambda)).collect()
}

/// Representative scalar pole used by the modal design: the median of the
/// diagonal of `A`, with `b = 1 - a`.
pub fn representative_pole(ss: &StateSpace) -> (f64, f64) {
    let mut a: Vec<f64> = ss.a.iter().copied().collect();
    a.sort_by(f64::total_cmp);
    let m = a[a.len() / 2];
    (m, 1.0 - m)
}

fn modal_lqr_gain_for(a: f64, b: f64, q_hat: f64, r_hat: f64) -> f64 {
    lqr_gain_modal(a, b, solve_dare_modal(a, b, q_hat, r_hat), r_hat)
}

/// Input weight `r_hat` that makes the modal LQR gain equal `target`, by
/// bisection on `ln r_hat` over `[R_MIN, R_MAX]`. The gain is decreasing in
/// `r_hat`; the upper end of the final bracket is returned.
pub fn match_input_weight(a: f64, b: f64, q_hat: f64, target: f64) -> Option<f64> {
    let g_lo = modal_lqr_gain_for(a, b, q_hat, R_MIN);
    let g_hi = modal_lqr_gain_for(a, b, q_hat, R_MAX);
    if !(target < g_lo && target > g_hi) {
        return None;
    }
    let (mut lo, mut hi) = (R_MIN.ln(), R_MAX.ln());
    while hi - lo > R_REL_TOL {
        let mid = 0.5 * (lo + hi);
        if modal_lqr_gain_for(a, b, q_hat, mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi.exp())
}

fn weights_from_modal(kind: WeightKind, basis: &ModalBasis, q_hat: Vec<f64>, r_hat: Vec<f64>) -> Weights {
    let q = &basis.v * DMatrix::from_diagonal(&DVector::from_column_slice(&q_hat)) * basis.v.transpose();
    let vf = basis.input_basis();
    let r = &vf * DMatrix::from_diagonal(&DVector::from_column_slice(&r_hat)) * vf.transpose();
    Weights {
        kind,
        q_hat,
        r_hat,
        q: symmetrize(&q),
        r: symmetrize(&r),
    }
}

/// Modal weights whose per-mode LQR gain reproduces the IMC gain, with
/// `q_hat = sigma^2`. Modes with zero singular value (including the null
/// space of a wide plant) get `r_hat = R_MAX` and gain zero.
pub fn design_weights_imc_matched(basis: &ModalBasis, a: f64, b: f64, lambda: f64) -> Result<Weights> {
    let n_u = basis.v.nrows();
    let q_hat: Vec<f64> = basis.s.iter().map(|s| s * s).collect();
    let mut r_hat = vec![R_MAX; n_u];
    let mut failed = Vec::new();
    for (i, &sigma) in basis.s.iter().enumerate() {
        if sigma == 0.0 {
            continue;
        }
        let target = imc_gain(sigma, lambda)?;
        match match_input_weight(a, b, q_hat[i], target) {
            Some(r) => r_hat[i] = r,
            None => failed.push(i),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Config(format!(
            "IMC gain not reachable by any input weight in [{R_MIN:e}, {R_MAX:e}] for modes {failed:?} \
             (increase the regularisation lambda)"
        )));
    }
    Ok(weights_from_modal(
        WeightKind::ImcMatched { lambda },
        basis,
        q_hat,
        r_hat,
    ))
}

pub fn design_weights_saturated(basis: &ModalBasis, q_min: f64, q_max: f64) -> Result<Weights> {
    if !(q_min > 0.0 && q_min <= q_max) {
        return Err(Error::Config(format!(
            "need 0 < q_min <= q_max, got q_min={q_min}, q_max={q_max}"
        )));
    }
    let q_hat = basis.s.iter().map(|s| (s * s).clamp(q_min, q_max)).collect();
    let r_hat = vec![1.0; basis.v.nrows()];
    Ok(weights_from_modal(
        WeightKind::Saturated { q_min, q_max },
        basis,
        q_hat,
        r_hat,
    ))
}

/// Terminal cost for the given weights via the dense fixed-point DARE, with
/// the modal closed form attached for reference.
pub fn terminal_cost(ss: &StateSpace, w: &Weights) -> Result<TerminalCost> {
    let mut tc = solve_dare(&ss.a_dense(), &ss.b_dense(), &w.q, &w.r)?;
    let (a, b) = representative_pole(ss);
    tc.p_hat = Some(
        w.q_hat
            .iter()
            .zip(&w.r_hat)
            .map(|(&q, &r)| solve_dare_modal(a, b, q, r))
            .collect(),
    );
    Ok(tc)
}

/// Last `n_y` columns of `pinv(S)`, `S = [[I - A, -B], [-C, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetpointMap {
    /// `2 n_u x n_y`; rows `0..n_u` give `x_bar`, rows `n_u..` give `u_bar`.
    pub m: DMatrix<f64>,
    /// False when `S` lacks full row rank; `M` then has least-squares
    /// semantics and `S M d = (0; d)` holds only for `d` in the range of `C`.
    pub full_row_rank: bool,
}

impl SetpointMap {
    pub fn n_u(&self) -> usize {
        self.m.nrows() / 2
    }

    /// `(x_bar, u_bar)` for a disturbance estimate.
    pub fn setpoints(&self, d: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let xu = &self.m * d;
        let n_u = self.n_u();
        (xu.rows(0, n_u).into_owned(), xu.rows(n_u, n_u).into_owned())
    }
}

pub fn setpoint_system(ss: &StateSpace) -> DMatrix<f64> {
    let (n_u, n_y) = (ss.n_u(), ss.n_y());
    let mut s = DMatrix::zeros(n_u + n_y, 2 * n_u);
    for i in 0..n_u {
        s[(i, i)] = 1.0 - ss.a[i];
        s[(i, n_u + i)] = -ss.b[i];
    }
    s.view_mut((n_u, 0), (n_y, n_u)).copy_from(&(-&ss.c));
    s
}

pub fn setpoint_matrix(ss: &StateSpace) -> Result<SetpointMap> {
    let (n_u, n_y) = (ss.n_u(), ss.n_y());
    let s = setpoint_system(ss);
    let svd = nalgebra::SVD::try_new(s, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD of setpoint system did not converge".into()))?;
    let smax = svd.singular_values.max();
    let tol = smax * (n_u + n_y).max(2 * n_u) as f64 * f64::EPSILON;
    let rank = svd.rank(tol);
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| Error::Numerical(format!("setpoint pseudo-inverse: {e}")))?;
    Ok(SetpointMap {
        m: pinv.columns(n_u, n_y).into_owned(),
        full_row_rank: rank == n_u + n_y,
    })
}

/// Noise intensities of the observer design model (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverNoise {
    /// Disturbance random-walk drive.
    pub sigma_v: f64,
    /// Actuator-state process noise.
    pub sigma_w: f64,
    /// Measurement noise.
    pub sigma_m: f64,
}

impl Default for ObserverNoise {
    fn default() -> Self {
        ObserverNoise {
            sigma_v: 1.0,
            sigma_w: 1e-4,
            sigma_m: 1e-2,
        }
    }
}

impl ObserverNoise {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_m > 0.0 && self.sigma_v > 0.0 && self.sigma_w >= 0.0) {
            return Err(Error::Config(format!(
                "observer noise needs sigma_m > 0, sigma_v > 0, sigma_w >= 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

/// Steady-state one-step predictor gain for `s+ = F s + w`, `y = H s + m`.
/// Returns `(L, P)`.
pub fn predictor_riccati(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = w.clone();
    for it in 1..=KALMAN_MAX_ITER {
        let ph = &p * h.transpose();
        let s = h * &ph + v;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
        // L = F P H^T S^{-1}
        let fph = f * &ph;
        let l = chol.solve(&fph.transpose()).transpose();
        let next = symmetrize(&(f * &p * f.transpose() + w - &l * fph.transpose()));
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("filter Riccati diverged at step {it}")));
        }
        let change = (&next - &p).norm();
        let scale = next.norm();
        p = next;
        if change <= KALMAN_TOL * scale {
            let ph = &p * h.transpose();
            let s = h * &ph + v;
            let chol = s
                .cholesky()
                .ok_or_else(|| Error::Numerical("innovation covariance not positive definite".into()))?;
            let l = chol.solve(&(f * &ph).transpose()).transpose();
            return Ok((l, p));
        }
    }
    Err(Error::Numerical(format!(
        "filter Riccati did not settle within {KALMAN_MAX_ITER} iterations"
    )))
}

fn noise_covariances(n_u: usize, n_y: usize, mu: usize, noise: &ObserverNoise) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = (mu + 1) * n_u + n_y;
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n_u {
        w[(i, i)] = noise.sigma_w * noise.sigma_w;
    }
    for i in 0..n_y {
        let j = (mu + 1) * n_u + i;
        w[(j, j)] = noise.sigma_v * noise.sigma_v;
    }
    let v = DMatrix::from_diagonal_element(n_y, n_y, noise.sigma_m * noise.sigma_m);
    (w, v)
}

/// Steady-state Kalman predictor gain of the full delay-augmented model,
/// without imposing any structure on its blocks. Cost grows with
/// `((mu + 1) n_u + n_y)^3` per iteration.
pub fn kalman_gain(ss: &StateSpace, noise: &ObserverNoise) -> Result<ObserverGain> {
    noise.validate()?;
    let (f, h) = augmented_matrices(ss);
    let (w, v) = noise_covariances(ss.n_u(), ss.n_y(), ss.mu, noise);
    let (l, _) = predictor_riccati(&f, &h, &w, &v)?;
    let gain = ObserverGain::new(l, ss.n_u(), ss.n_y(), ss.mu)?;
    check_error_dynamics(ss, &gain)?;
    Ok(gain)
}

/// `F_r = diag(A, I)`, `H_r = [C I]` for the state `(x_{k-mu}, d_k)`.
fn reduced_model(ss: &StateSpace) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n_u, n_y) = (ss.n_u(), ss.n_y());
    let n = n_u + n_y;
    let mut f = DMatrix::identity(n, n);
    for i in 0..n_u {
        f[(i, i)] = ss.a[i];
    }
    let mut h = DMatrix::zeros(n_y, n);
    h.view_mut((0, 0), (n_y, n_u)).copy_from(&ss.c);
    h.view_mut((0, n_u), (n_y, n_y)).fill_with_identity();
    (f, h)
}

/// Propagation-consistent gain from the reduced model of the pair
/// `(x_{k-mu}, d_k)`.
///
/// The measurement depends only on that pair, which is itself Markov, so
/// its Kalman gain equals the `(L_{z^mu}, L_d)` blocks of the augmented
/// gain. The remaining blocks are filled in as `A^{mu-i} L_{z^mu}`, which is
/// the structure the partitioned observer update requires.
pub fn kalman_gain_consistent(ss: &StateSpace, noise: &ObserverNoise) -> Result<ObserverGain> {
    noise.validate()?;
    let (n_u, n_y) = (ss.n_u(), ss.n_y());
    let (f, h) = reduced_model(ss);
    let (w, v) = noise_covariances(n_u, n_y, 0, noise);
    let (l, _) = predictor_riccati(&f, &h, &w, &v)?;
    let l_zmu = l.rows(0, n_u).into_owned();
    let l_d = l.rows(n_u, n_y).into_owned();
    let gain = ObserverGain::from_consistent_blocks(ss, &l_zmu, &l_d)?;
    check_error_dynamics(ss, &gain)?;
    Ok(gain)
}

/// Spectral radius by the Gelfand formula, `|M^(2^j)|^(1/2^j)` with the
/// power rescaled after every squaring. The estimate never falls below the
/// true radius, so stability checks built on it are conservative.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    const SQUARINGS: usize = 48;
    let mut m = m.clone();
    let mut log_rho = 0.0;
    let mut k = 1.0;
    for _ in 0..SQUARINGS {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        if !norm.is_finite() {
            return f64::INFINITY;
        }
        m /= norm;
        log_rho += norm.ln() / k;
        m = &m * &m;
        k *= 2.0;
    }
    log_rho.exp()
}

/// Reduced error system `(F_r - L_r H_r)` on `(x_{k-mu}, d)`.
fn reduced_error_matrix(ss: &StateSpace, l_zmu: &DMatrix<f64>, l_d: &DMatrix<f64>) -> DMatrix<f64> {
    let (f, h) = reduced_model(ss);
    let mut l = DMatrix::zeros(f.nrows(), ss.n_y());
    l.rows_mut(0, ss.n_u()).copy_from(l_zmu);
    l.rows_mut(ss.n_u(), ss.n_y()).copy_from(l_d);
    f - l * h
}

/// Spectral radius of the estimation error dynamics `F - L H`.
///
/// For a propagation-consistent gain the augmented spectrum is that of the
/// reduced `(x_{k-mu}, d)` error system together with the poles of `A` (and
/// zeros), so the much smaller reduced matrix is used.
pub fn error_spectral_radius(ss: &StateSpace, gain: &ObserverGain) -> f64 {
    if gain.consistency_error(&ss.a) <= CONSISTENCY_TOL {
        let e = reduced_error_matrix(ss, &gain.state_block(ss.mu), &gain.l_d());
        let a_max = if ss.mu > 0 { ss.a.amax() } else { 0.0 };
        spectral_radius(&e).max(a_max)
    } else {
        let (f, h) = augmented_matrices(ss);
        spectral_radius(&(f - &gain.l * h))
    }
}

fn check_error_dynamics(ss: &StateSpace, gain: &ObserverGain) -> Result<()> {
    let rho = error_spectral_radius(ss, gain);
    if rho >= 1.0 {
        return Err(Error::Config(format!(
            "observer error dynamics unstable (spectral radius {rho})"
        )));
    }
    Ok(())
}

/// `lambda_max / lambda_min` of a symmetric positive definite matrix.
pub fn condition_number(j: &DMatrix<f64>) -> Result<f64> {
    let (lo, hi) = extreme_eigenvalues(j)?;
    Ok(hi / lo)
}

pub(crate) fn extreme_eigenvalues(j: &DMatrix<f64>) -> Result<(f64, f64)> {
    if !j.is_square() || j.nrows() == 0 {
        return Err(Error::Dimension(format!("Hessian is {}x{}", j.nrows(), j.ncols())));
    }
    let eig = nalgebra::SymmetricEigen::try_new(symmetrize(j), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let lo = eig.eigenvalues.min();
    let hi = eig.eigenvalues.max();
    if !(lo > 0.0) {
        return Err(Error::Numerical(format!(
            "Hessian is not positive definite (lambda_min = {lo:e})"
        )));
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationBoundParams {
    pub epsilon: f64,
    pub delta: f64,
    pub kappa: f64,
}

/// Upper bound on the fast-gradient iterations needed for accuracy
/// `epsilon`: the smaller of the linear-rate and sublinear-rate bounds,
/// floored at zero. For `kappa = 1` only the sublinear bound applies.
pub fn iteration_bound(p: &IterationBoundParams) -> Result<u64> {
    let IterationBoundParams { epsilon, delta, kappa } = *p;
    if !(epsilon > 0.0 && delta >= 0.0 && kappa >= 1.0) {
        return Err(Error::Config(format!(
            "iteration bound needs epsilon > 0, delta >= 0, kappa >= 1 (got {p:?})"
        )));
    }
    if delta <= epsilon {
        return Ok(0);
    }
    let sublinear = (2.0 * (delta / epsilon).sqrt() - 2.0).ceil();
    let bound = if kappa > 1.0 {
        let linear = ((epsilon.ln() - delta.ln()) / (1.0 - (1.0 / kappa).sqrt()).ln()).ceil();
        linear.min(sublinear)
    } else {
        sublinear
    };
    Ok(bound.max(0.0) as u64)
}

/// Default `Delta = lambda_max D^2 / 2`, with `D` an upper bound on the
/// Euclidean diameter of the horizon constraint set. Per actuator, the first
/// stage spans at most `2 min(alpha, rho)` and each later stage at most
/// `min(2 alpha, previous + 2 rho)`.
pub fn default_delta(lambda_max: f64, alpha: &[f64], rho: &[f64], horizon: usize) -> f64 {
    let d2: f64 = alpha
        .iter()
        .zip(rho)
        .map(|(&a, &r)| {
            let mut w = 2.0 * a.min(r);
            let mut sum = w * w;
            for _ in 1..horizon {
                w = (2.0 * a).min(w + 2.0 * r);
                sum += w * w;
            }
            sum
        })
        .sum();
    0.5 * lambda_max * d2
}
