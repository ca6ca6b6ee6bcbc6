//! Plant realisation and its modal decomposition.
//!
//! Every actuator is modelled as a first-order lag followed by a transport
//! delay of `mu` samples, and the spatial coupling is a dense response
//! matrix `R = [R_s R_f]`. With the actuator field as state, `A` and `B` are
//! diagonal and `C = R`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

/// Physical plant parameters. Slow actuators occupy the first `n_s`
/// columns of `response`, fast ones the remaining `n_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub n_y: usize,
    pub n_s: usize,
    pub n_f: usize,
    /// `[R_s R_f]`, `n_y x n_u`.
    pub response: DMatrix<f64>,
    /// Per-actuator bandwidth in rad/s.
    pub bandwidth: Vec<f64>,
    /// Sampling time in seconds.
    pub dt: f64,
    /// Transport delay in samples.
    pub mu: usize,
    /// Amplitude limit per actuator.
    pub alpha: Vec<f64>,
    /// Slew-rate limit per actuator and sample.
    pub rho: Vec<f64>,
}

impl PlantConfig {
    /// Assembles a plant from the slow and fast response blocks with one
    /// bandwidth per actuator type and uniform limits.
    #[allow(clippy::too_many_arguments)]
    pub fn from_blocks(
        r_s: &DMatrix<f64>,
        r_f: &DMatrix<f64>,
        a_s: f64,
        a_f: f64,
        dt: f64,
        mu: usize,
        alpha: f64,
        rho: f64,
    ) -> Result<Self> {
        let n_y = r_s.nrows().max(r_f.nrows());
        if (r_s.ncols() > 0 && r_s.nrows() != n_y) || (r_f.ncols() > 0 && r_f.nrows() != n_y) {
            return Err(Error::Dimension(format!(
                "R_s has {} rows but R_f has {}",
                r_s.nrows(),
                r_f.nrows()
            )));
        }
        let (n_s, n_f) = (r_s.ncols(), r_f.ncols());
        let mut response = DMatrix::zeros(n_y, n_s + n_f);
        if n_s > 0 {
            response.columns_mut(0, n_s).copy_from(r_s);
        }
        if n_f > 0 {
            response.columns_mut(n_s, n_f).copy_from(r_f);
        }
        let bandwidth = std::iter::repeat_n(a_s, n_s)
            .chain(std::iter::repeat_n(a_f, n_f))
            .collect();
        let n_u = n_s + n_f;
        let cfg = PlantConfig {
            n_y,
            n_s,
            n_f,
            response,
            bandwidth,
            dt,
            mu,
            alpha: vec![alpha; n_u],
            rho: vec![rho; n_u],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn n_u(&self) -> usize {
        self.n_s + self.n_f
    }

    pub fn validate(&self) -> Result<()> {
        let n_u = self.n_u();
        if self.n_y == 0 || n_u == 0 {
            return Err(Error::Config(format!(
                "need at least one monitor and one actuator (n_y={}, n_u={n_u})",
                self.n_y
            )));
        }
        if self.response.shape() != (self.n_y, n_u) {
            return Err(Error::Dimension(format!(
                "response matrix is {}x{}, expected {}x{}",
                self.response.nrows(),
                self.response.ncols(),
                self.n_y,
                n_u
            )));
        }
        for (name, v) in [
            ("bandwidth", &self.bandwidth),
            ("alpha", &self.alpha),
            ("rho", &self.rho),
        ] {
            if v.len() != n_u {
                return Err(Error::Dimension(format!(
                    "{name} has {} entries, expected {n_u}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Config(format!("{name}[{i}] = {} must be positive", v[i])));
            }
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if self.response.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("response matrix has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Diagonal-A, diagonal-B, dense-C realisation with output delay `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub mu: usize,
    /// Sample time in seconds.
    pub dt: f64,
}

impl StateSpace {
    pub fn n_u(&self) -> usize {
        self.a.len()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Elementwise `A^k`.
    pub fn a_pow(&self, k: usize) -> DVector<f64> {
        self.a.map(|a| a.powi(k as i32))
    }

    pub fn a_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.a)
    }

    pub fn b_dense(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.b)
    }

    /// One step of the undelayed actuator recursion.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a.component_mul(x) + self.b.component_mul(u)
    }
}

/// Discretised first-order lag `(A_ii, B_ii)` for bandwidth `a` and sample
/// time `dt`; `B_ii` is formed as `1 - A_ii` so that `B = I - A` exactly.
pub fn actuator_pole(a: f64, dt: f64) -> (f64, f64) {
    let pole = (-a * dt).exp();
    (pole, 1.0 - pole)
}

pub fn build_state_space(cfg: &PlantConfig) -> Result<StateSpace> {
    cfg.validate()?;
    let (a, b): (Vec<f64>, Vec<f64>) = cfg.bandwidth.iter().map(|&bw| actuator_pole(bw, cfg.dt)).unzip();
    Ok(StateSpace {
        a: DVector::from_vec(a),
        b: DVector::from_vec(b),
        c: cfg.response.clone(),
        mu: cfg.mu,
        dt: cfg.dt,
    })
}

/// Thin SVD `C = U diag(s) V^T`, singular values descending.
///
/// Each pair of singular vectors is sign-normalised so that the entry of
/// largest magnitude in the `V` column is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalBasis {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl ModalBasis {
    pub fn rank_dim(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }

    /// Condition number `s_1 / s_r` (infinite when the smallest value is 0).
    pub fn spread(&self) -> f64 {
        let r = self.s.len();
        self.s[0] / self.s[r - 1]
    }

    /// Orthonormal `n_u x n_u` basis whose first `r` columns are `V`.
    ///
    /// When `n_u > n_y` the trailing columns span the null space of `C`;
    /// they are completed by Gram-Schmidt against the unit vectors, so the
    /// result is deterministic.
    pub fn input_basis(&self) -> DMatrix<f64> {
        let n_u = self.v.nrows();
        let r = self.v.ncols();
        let mut cols: Vec<DVector<f64>> = self.v.column_iter().map(|c| c.into_owned()).collect();
        let mut e = 0;
        while cols.len() < n_u && e < n_u {
            let mut w = DVector::zeros(n_u);
            w[e] = 1.0;
            // two passes of modified Gram-Schmidt
            for _ in 0..2 {
                for c in &cols {
                    let proj = c.dot(&w);
                    w.axpy(-proj, c, 1.0);
                }
            }
            let norm = w.norm();
            if norm > 1e-8 {
                cols.push(w / norm);
            }
            e += 1;
        }
        debug_assert_eq!(cols.len(), n_u, "basis completion from {r} columns");
        DMatrix::from_columns(&cols)
    }
}

pub fn modal_decompose(c: &DMatrix<f64>) -> Result<ModalBasis> {
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("cannot decompose a non-finite matrix".into()));
    }
    let svd = nalgebra::SVD::try_new(c.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let (Some(mut u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Numerical("SVD returned no singular vectors".into()));
    };
    let mut v = v_t.transpose();
    for j in 0..v.ncols() {
        let imax = v.column(j).iamax();
        if v[(imax, j)] < 0.0 {
            v.column_mut(j).neg_mut();
            u.column_mut(j).neg_mut();
        }
    }
    Ok(ModalBasis {
        u,
        s: svd.singular_values,
        v,
    })
}

/// Haar-distributed `n x k` matrix with orthonormal columns.
pub(crate) fn random_orthonormal(n: usize, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, k, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Singular values decaying geometrically from 1 to `1 / kappa`.
pub fn geometric_spectrum(r: usize, kappa: f64) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    (0..r).map(|i| kappa.powf(-(i as f64) / (r - 1) as f64)).collect()
}

/// Bandwidth used for synthetic plants (700 Hz correctors).
pub const SYNTHETIC_BANDWIDTH: f64 = 2.0 * std::f64::consts::PI * 700.0;
pub const SYNTHETIC_DT: f64 = 1e-4;
pub const SYNTHETIC_MU: usize = 2;

/// Random plant whose response matrix has `min(n_y, n_u)` singular values
/// spread geometrically over `kappa_target`. The spread is defined on the
/// smaller dimension; surplus actuators (`n_u > n_y`) add a null space.
///
/// All actuators are slow-typed with the synthetic bandwidth; limits are
/// `alpha = 1`, `rho = alpha / 10`.
pub fn synthetic_plant(n_y: usize, n_u: usize, kappa_target: f64, seed: u64) -> Result<PlantConfig> {
    if !(kappa_target.is_finite() && kappa_target >= 1.0) {
        return Err(Error::Config(format!("kappa_target = {kappa_target} must be >= 1")));
    }
    if n_y == 0 || n_u == 0 {
        return Err(Error::Config("synthetic plant needs n_y, n_u >= 1".into()));
    }
    let r = n_y.min(n_u);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_orthonormal(n_y, r, &mut rng);
    let v = random_orthonormal(n_u, r, &mut rng);
    let s = DVector::from_vec(geometric_spectrum(r, kappa_target));
    let response = &u * DMatrix::from_diagonal(&s) * v.transpose();
    let cfg = PlantConfig {
        n_y,
        n_s: n_u,
        n_f: 0,
        response,
        bandwidth: vec![SYNTHETIC_BANDWIDTH; n_u],
        dt: SYNTHETIC_DT,
        mu: SYNTHETIC_MU,
        alpha: vec![1.0; n_u],
        rho: vec![0.1; n_u],
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_exponent_pole_is_identity() {
        assert_eq!(actuator_pole(0.0, 1e-4), (1.0, 0.0));
    }

    #[test]
    fn large_exponent_pole_vanishes() {
        let (a, b) = actuator_pole(50.0, 1.0);
        assert!(a < 1e-20);
        assert!((b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn corrector_pole_at_700_hz() {
        // exp(-2*pi*700*1e-4) = exp(-0.43982297150257105...)
        // reference value from a 30-digit evaluation
        let (a, _) = actuator_pole(2.0 * PI * 700.0, 1e-4);
        assert!((a - 0.644_150_443_975_408_1).abs() < 1e-15, "{a}");
    }

    #[test]
    fn b_is_exactly_one_minus_a() {
        let cfg = synthetic_plant(5, 4, 100.0, 3).unwrap();
        let mut cfg = cfg;
        cfg.bandwidth = vec![1.0, 50.0, 4398.2, 62831.0];
        let ss = build_state_space(&cfg).unwrap();
        for i in 0..4 {
            assert_eq!(ss.b[i], 1.0 - ss.a[i]);
            assert!(ss.a[i] > 0.0 && ss.a[i] < 1.0);
        }
        assert_eq!(ss.c, cfg.response);
    }

    #[test]
    fn rejects_bad_timing() {
        let mut cfg = synthetic_plant(3, 3, 10.0, 1).unwrap();
        cfg.dt = 0.0;
        assert!(matches!(build_state_space(&cfg), Err(Error::Config(_))));
        let mut cfg = synthetic_plant(3, 3, 10.0, 1).unwrap();
        cfg.bandwidth[1] = -1.0;
        assert!(matches!(build_state_space(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn from_blocks_orders_slow_then_fast() {
        let r_s = DMatrix::from_element(4, 2, 1.0);
        let r_f = DMatrix::from_element(4, 1, 2.0);
        let cfg = PlantConfig::from_blocks(&r_s, &r_f, 10.0, 1000.0, 1e-4, 3, 1.0, 0.1).unwrap();
        assert_eq!(cfg.n_u(), 3);
        assert_eq!(cfg.bandwidth, vec![10.0, 10.0, 1000.0]);
        assert_eq!(cfg.response[(0, 2)], 2.0);
    }

    #[test]
    fn powers_match_repeated_multiplication() {
        let ss = build_state_space(&synthetic_plant(3, 3, 5.0, 0).unwrap()).unwrap();
        let mut acc = DVector::from_element(3, 1.0);
        for k in 0..40 {
            let p = ss.a_pow(k);
            for i in 0..3 {
                assert!((p[i] - acc[i]).abs() <= 1e-14 * acc[i].abs());
            }
            acc.component_mul_assign(&ss.a);
        }
    }

    #[test]
    fn svd_of_identity_and_diagonal() {
        let b = modal_decompose(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(b.s.as_slice(), &[1.0, 1.0, 1.0]);

        let b = modal_decompose(&DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]))).unwrap();
        assert!((b.s[0] - 3.0).abs() < 1e-15 && (b.s[1] - 1.0).abs() < 1e-15);
        for m in [&b.u, &b.v] {
            assert!((m.abs() - DMatrix::identity(2, 2)).amax() < 1e-15);
        }
    }

    #[test]
    fn svd_reconstructs_rectangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = DMatrix::from_fn(6, 4, |_, _| StandardNormal.sample(&mut rng));
        let b = modal_decompose(&c).unwrap();
        assert!((b.reconstruct() - &c).amax() < 1e-12);
        assert!((b.u.transpose() * &b.u - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!((b.v.transpose() * &b.v - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!(b.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
        // idempotent through reconstruction
        let b2 = modal_decompose(&b.reconstruct()).unwrap();
        assert!((b2.reconstruct() - b.reconstruct()).amax() < 1e-10);
    }

    #[test]
    fn input_basis_completes_wide_plants() {
        let cfg = synthetic_plant(3, 5, 10.0, 9).unwrap();
        let b = modal_decompose(&cfg.response).unwrap();
        let vf = b.input_basis();
        assert_eq!(vf.shape(), (5, 5));
        assert!((vf.transpose() * &vf - DMatrix::identity(5, 5)).amax() < 1e-12);
        assert!((vf.columns(0, 3) - &b.v).amax() == 0.0);
        assert!((&cfg.response * vf.columns(3, 2)).amax() < 1e-12);
    }

    #[test]
    fn synthetic_spread() {
        let cfg = synthetic_plant(8, 8, 1.0, 4).unwrap();
        let b = modal_decompose(&cfg.response).unwrap();
        assert!(b.s.iter().all(|s| (s - 1.0).abs() < 1e-12));

        let cfg = synthetic_plant(8, 8, 1e4, 4).unwrap();
        let b = modal_decompose(&cfg.response).unwrap();
        let ratio = b.s[0] / b.s[7];
        assert!((ratio / 1e4 - 1.0).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = synthetic_plant(6, 5, 1e3, 42).unwrap();
        let b = synthetic_plant(6, 5, 1e3, 42).unwrap();
        assert_eq!(a, b);
        let c = synthetic_plant(6, 5, 1e3, 43).unwrap();
        assert_ne!(a.response, c.response);
    }
}
