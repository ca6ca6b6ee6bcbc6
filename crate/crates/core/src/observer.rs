//! State and disturbance observer for the delay-augmented plant.
//!
//! The estimate is stacked as `[x; z^1; ...; z^mu; d]` where `z^i` stands
//! for `x_{k-i}` and `d` is the output disturbance (a random walk). Two
//! update paths are provided: a dense one that multiplies the full gain,
//! and a partitioned one that only touches `L_{z^mu}` and `L_d` and
//! propagates the correction with the precomputed diagonal powers of `A`.

use nalgebra::{DMatrix, DVector};

use crate::model::StateSpace;
use crate::{Error, Result};

/// `(F, H)` of the augmented model `s+ = F s + [B; 0] u`, `y = H s`.
pub fn augmented_matrices(ss: &StateSpace) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n_u, n_y, mu) = (ss.n_u(), ss.n_y(), ss.mu);
    let n = (mu + 1) * n_u + n_y;
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n_u {
        f[(i, i)] = ss.a[i];
    }
    for blk in 1..=mu {
        for i in 0..n_u {
            f[(blk * n_u + i, (blk - 1) * n_u + i)] = 1.0;
        }
    }
    let d0 = (mu + 1) * n_u;
    for i in 0..n_y {
        f[(d0 + i, d0 + i)] = 1.0;
    }
    let mut h = DMatrix::zeros(n_y, n);
    h.view_mut((0, mu * n_u), (n_y, n_u)).copy_from(&ss.c);
    h.view_mut((0, d0), (n_y, n_y)).fill_with_identity();
    (f, h)
}

/// Observer gain partitioned as `[L_x; L_{z^1}; ...; L_{z^mu}; L_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGain {
    pub l: DMatrix<f64>,
    pub n_u: usize,
    pub n_y: usize,
    pub mu: usize,
}

impl ObserverGain {
    pub fn new(l: DMatrix<f64>, n_u: usize, n_y: usize, mu: usize) -> Result<Self> {
        let n = (mu + 1) * n_u + n_y;
        if l.shape() != (n, n_y) {
            return Err(Error::Dimension(format!(
                "observer gain is {}x{}, expected {n}x{n_y}",
                l.nrows(),
                l.ncols()
            )));
        }
        Ok(ObserverGain { l, n_u, n_y, mu })
    }

    /// Builds `L_{z^i} = A^{mu-i} L_{z^mu}` and `L_x = A^mu L_{z^mu}`.
    pub fn from_consistent_blocks(ss: &StateSpace, l_zmu: &DMatrix<f64>, l_d: &DMatrix<f64>) -> Result<Self> {
        let (n_u, n_y, mu) = (ss.n_u(), ss.n_y(), ss.mu);
        if l_zmu.shape() != (n_u, n_y) || l_d.shape() != (n_y, n_y) {
            return Err(Error::Dimension("observer gain blocks".into()));
        }
        let mut l = DMatrix::zeros((mu + 1) * n_u + n_y, n_y);
        for blk in 0..=mu {
            let pow = ss.a_pow(mu - blk);
            let mut rows = l.rows_mut(blk * n_u, n_u);
            rows.copy_from(l_zmu);
            for (i, mut row) in rows.row_iter_mut().enumerate() {
                row *= pow[i];
            }
        }
        l.rows_mut((mu + 1) * n_u, n_y).copy_from(l_d);
        ObserverGain::new(l, n_u, n_y, mu)
    }

    /// Offsets (in rows) of the `x`, `z^1..z^mu` and `d` blocks.
    pub fn partition_offsets(&self) -> Vec<(String, usize, usize)> {
        let mut v = vec![("x".to_string(), 0, self.n_u)];
        for i in 1..=self.mu {
            v.push((format!("z{i}"), i * self.n_u, self.n_u));
        }
        v.push(("d".to_string(), (self.mu + 1) * self.n_u, self.n_y));
        v
    }

    /// Block for `x` (`blk = 0`) or `z^blk`.
    pub fn state_block(&self, blk: usize) -> DMatrix<f64> {
        self.l.rows(blk * self.n_u, self.n_u).into_owned()
    }

    pub fn l_d(&self) -> DMatrix<f64> {
        self.l.rows((self.mu + 1) * self.n_u, self.n_y).into_owned()
    }

    /// Largest deviation of the state blocks from `A^{mu-i} L_{z^mu}`.
    pub fn consistency_error(&self, a: &DVector<f64>) -> f64 {
        let l_zmu = self.state_block(self.mu);
        let scale = l_zmu.amax().max(f64::MIN_POSITIVE);
        let mut worst: f64 = 0.0;
        for blk in 0..self.mu {
            let pow = a.map(|ai| ai.powi((self.mu - blk) as i32));
            let expect = DMatrix::from_diagonal(&pow) * &l_zmu;
            worst = worst.max((self.state_block(blk) - expect).amax() / scale);
        }
        worst
    }
}

pub const CONSISTENCY_TOL: f64 = 1e-8;

/// Innovation mapped through the two gain blocks the fast path needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub dy: DVector<f64>,
    pub dd: DVector<f64>,
}

/// Runtime observer state: estimates plus the gain and the cached powers
/// `A^1..A^mu`.
#[derive(Debug, Clone)]
pub struct ObserverState {
    pub x_hat: DVector<f64>,
    /// `z_hat[i]` estimates `x_{k-i-1}`.
    pub z_hat: Vec<DVector<f64>>,
    pub d_hat: DVector<f64>,
    pub gain: ObserverGain,
    /// `a_powers[i] = A^{i+1}` elementwise.
    pub a_powers: Vec<DVector<f64>>,
    a: DVector<f64>,
    b: DVector<f64>,
    c: DMatrix<f64>,
    l_zmu: DMatrix<f64>,
    l_d: DMatrix<f64>,
    consistent: bool,
}

impl ObserverState {
    /// Zero-initialised estimates.
    pub fn new(ss: &StateSpace, gain: ObserverGain) -> Result<Self> {
        let (n_u, n_y, mu) = (ss.n_u(), ss.n_y(), ss.mu);
        if (gain.n_u, gain.n_y, gain.mu) != (n_u, n_y, mu) {
            return Err(Error::Dimension(format!(
                "observer gain built for (n_u, n_y, mu) = ({}, {}, {}), plant has ({n_u}, {n_y}, {mu})",
                gain.n_u, gain.n_y, gain.mu
            )));
        }
        let consistent = gain.consistency_error(&ss.a) <= CONSISTENCY_TOL;
        Ok(ObserverState {
            x_hat: DVector::zeros(n_u),
            z_hat: vec![DVector::zeros(n_u); mu],
            d_hat: DVector::zeros(n_y),
            a_powers: (1..=mu).map(|k| ss.a_pow(k)).collect(),
            a: ss.a.clone(),
            b: ss.b.clone(),
            c: ss.c.clone(),
            l_zmu: gain.state_block(mu),
            l_d: gain.l_d(),
            consistent,
            gain,
        })
    }

    pub fn mu(&self) -> usize {
        self.z_hat.len()
    }

    /// Whether the gain has the structure required by [`update_fast`].
    ///
    /// [`update_fast`]: ObserverState::update_fast
    pub fn is_consistent(&self) -> bool {
        self.consistent
    }

    fn delayed(&self) -> &DVector<f64> {
        self.z_hat.last().unwrap_or(&self.x_hat)
    }

    /// `y - C z^mu - d`.
    pub fn innovation(&self, y: &DVector<f64>) -> DVector<f64> {
        y - &self.c * self.delayed() - &self.d_hat
    }

    /// Dense update: block shift plus the full `L (y - C z^mu - d)`.
    pub fn update_naive(&mut self, u: &DVector<f64>, y: &DVector<f64>) {
        let e = self.innovation(y);
        let corr = &self.gain.l * e;
        let n_u = self.x_hat.len();
        let mu = self.mu();
        for i in (1..mu).rev() {
            self.z_hat[i] = &self.z_hat[i - 1] + corr.rows((i + 1) * n_u, n_u);
        }
        if mu > 0 {
            self.z_hat[0] = &self.x_hat + corr.rows(n_u, n_u);
        }
        self.x_hat = self.a.component_mul(&self.x_hat) + self.b.component_mul(u) + corr.rows(0, n_u);
        self.d_hat += corr.rows((mu + 1) * n_u, self.d_hat.len());
    }

    fn require_consistent(&self) -> Result<()> {
        if !self.consistent {
            return Err(Error::Config(format!(
                "observer gain is not propagation-consistent (deviation {:.3e} > {CONSISTENCY_TOL:e})",
                self.gain.consistency_error(&self.a)
            )));
        }
        Ok(())
    }

    /// Measurement half of the partitioned update: `dy = L_{z^mu} e` and
    /// `dd = L_d e`.
    pub fn correct_fast(&self, y: &DVector<f64>) -> Result<Correction> {
        self.require_consistent()?;
        let e = self.innovation(y);
        Ok(Correction {
            dy: &self.l_zmu * &e,
            dd: &self.l_d * &e,
        })
    }

    /// Filtered estimates `(x_{k|k}, d_{k|k})` given this step's correction.
    ///
    /// The predictor gain is `F K` for the filter gain `K`, and the shift
    /// structure of `F` gives `K_x = L_{z^1} = A^{mu-1} L_{z^mu}`
    /// (`A^{-1} L_x` when `mu = 0`).
    pub fn filtered(&self, corr: &Correction) -> (DVector<f64>, DVector<f64>) {
        let mu = self.mu();
        let dx = match mu {
            0 => corr.dy.component_div(&self.a),
            1 => corr.dy.clone(),
            _ => self.a_powers[mu - 2].component_mul(&corr.dy),
        };
        (&self.x_hat + dx, &self.d_hat + &corr.dd)
    }

    /// Time half of the partitioned update: the state correction reaches
    /// `z^i` as `A^{mu-i} dy` and `x` as `A^mu dy`.
    pub fn predict_fast(&mut self, u: &DVector<f64>, corr: &Correction) {
        let dy = &corr.dy;
        let mu = self.mu();
        for i in (1..mu).rev() {
            // z^{i+1} <- z^i + A^{mu-i-1} dy
            let prop = if i + 1 == mu {
                dy.clone()
            } else {
                self.a_powers[mu - i - 2].component_mul(dy)
            };
            self.z_hat[i] = &self.z_hat[i - 1] + prop;
        }
        if mu > 0 {
            let prop = if mu == 1 {
                dy.clone()
            } else {
                self.a_powers[mu - 2].component_mul(dy)
            };
            self.z_hat[0] = &self.x_hat + prop;
            self.x_hat =
                self.a.component_mul(&self.x_hat) + self.b.component_mul(u) + self.a_powers[mu - 1].component_mul(dy);
        } else {
            self.x_hat = self.a.component_mul(&self.x_hat) + self.b.component_mul(u) + dy;
        }
        self.d_hat += &corr.dd;
    }

    /// Partitioned update: the innovation enters through `L_{z^mu}` and
    /// `L_d` only. Requires a propagation-consistent gain.
    pub fn update_fast(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
        let corr = self.correct_fast(y)?;
        self.predict_fast(u, &corr);
        Ok(())
    }

    /// Flat `[x; z^1..z^mu; d]`.
    pub fn stacked(&self) -> DVector<f64> {
        let mut parts: Vec<f64> = self.x_hat.iter().copied().collect();
        for z in &self.z_hat {
            parts.extend(z.iter());
        }
        parts.extend(self.d_hat.iter());
        DVector::from_vec(parts)
    }

    pub fn reset(&mut self) {
        self.x_hat.fill(0.0);
        for z in &mut self.z_hat {
            z.fill(0.0);
        }
        self.d_hat.fill(0.0);
    }
}
