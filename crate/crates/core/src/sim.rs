//! Closed-loop simulation, disturbance generation, the IMC baseline and
//! the integrated beam motion (IBM) metric.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::design::imc_gains;
use crate::io::read_matrix;
use crate::model::{ModalBasis, StateSpace};
use crate::{Error, Result};

/// Maps the measurement `y_k` to the input `u_k`.
pub trait Controller {
    fn control(&mut self, y: &DVector<f64>) -> Result<DVector<f64>>;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
}

/// Open-loop input held constant at every step.
#[derive(Debug, Clone)]
pub struct ConstantInput {
    pub u: DVector<f64>,
    pub n_y: usize,
}

impl Controller for ConstantInput {
    fn control(&mut self, _y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.u.clone())
    }
    fn n_u(&self) -> usize {
        self.u.len()
    }
    fn n_y(&self) -> usize {
        self.n_y
    }
}

/// Time series of one run; row `k` is sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub y: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub dt: f64,
}

impl SimTrace {
    pub fn steps(&self) -> usize {
        self.y.nrows()
    }
}

/// Actuator states with an output delay line holding `x_{k-1}..x_{k-mu}`.
#[derive(Debug, Clone)]
pub struct Plant {
    ss: StateSpace,
    x: DVector<f64>,
    history: VecDeque<DVector<f64>>,
}

impl Plant {
    pub fn new(ss: &StateSpace) -> Self {
        let n_u = ss.n_u();
        Plant {
            ss: ss.clone(),
            x: DVector::zeros(n_u),
            history: std::iter::repeat_n(DVector::zeros(n_u), ss.mu).collect(),
        }
    }

    /// `C x_{k-mu} + d_k`.
    pub fn output(&self, d: &DVector<f64>) -> DVector<f64> {
        let delayed = self.history.back().unwrap_or(&self.x);
        &self.ss.c * delayed + d
    }

    pub fn advance(&mut self, u: &DVector<f64>) {
        let next = self.ss.step(&self.x, u);
        let prev = std::mem::replace(&mut self.x, next);
        if self.ss.mu > 0 {
            self.history.pop_back();
            self.history.push_front(prev);
        }
    }
}

/// Runs `steps` samples against the disturbance rows `dist` (`steps x n_y`).
/// Without a controller the input is held at zero.
pub fn simulate(ss: &StateSpace, controller: Option<&mut dyn Controller>, dist: &DMatrix<f64>) -> Result<SimTrace> {
    let (n_u, n_y) = (ss.n_u(), ss.n_y());
    let steps = dist.nrows();
    if steps == 0 || dist.ncols() != n_y {
        return Err(Error::Dimension(format!(
            "disturbance is {}x{}, expected at least one row of {n_y} columns",
            dist.nrows(),
            dist.ncols()
        )));
    }
    if let Some(c) = controller.as_ref() {
        if c.n_u() != n_u || c.n_y() != n_y {
            return Err(Error::Dimension(format!(
                "controller is {}x{} (n_u x n_y), plant is {n_u}x{n_y}",
                c.n_u(),
                c.n_y()
            )));
        }
    }
    let mut controller = controller;
    let mut plant = Plant::new(ss);
    let mut y_out = DMatrix::zeros(steps, n_y);
    let mut u_out = DMatrix::zeros(steps, n_u);
    let zero = DVector::zeros(n_u);
    for k in 0..steps {
        let d = dist.row(k).transpose();
        let y = plant.output(&d);
        let u = match controller.as_mut() {
            Some(c) => c
                .control(&y)
                .map_err(|e| Error::Numerical(format!("controller failed at step {k}: {e}")))?,
            None => zero.clone(),
        };
        if y.iter().chain(u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite signal at step {k}")));
        }
        y_out.set_row(k, &y.transpose());
        u_out.set_row(k, &u.transpose());
        plant.advance(&u);
    }
    Ok(SimTrace {
        y: y_out,
        u: u_out,
        d: dist.clone(),
        dt: ss.dt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisturbanceKind {
    White,
    RandomWalk,
    SinusoidMix,
    File,
}

impl std::str::FromStr for DisturbanceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(DisturbanceKind::White),
            "random_walk" => Ok(DisturbanceKind::RandomWalk),
            "sinusoid_mix" => Ok(DisturbanceKind::SinusoidMix),
            "file" => Ok(DisturbanceKind::File),
            other => Err(Error::Config(format!("unknown disturbance kind {other:?}"))),
        }
    }
}

/// One sinusoid of a `sinusoid_mix`. Its spatial shape across monitors is
/// `sqrt(n_y) U[:, m]` when output singular vectors are supplied, and the
/// Fourier pattern `cos(2 pi m i / n_y)` otherwise (`m = 0` is uniform).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineComponent {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub mode: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    pub kind: DisturbanceKind,
    /// White-noise standard deviation; also added under `sinusoid_mix`.
    pub sigma: f64,
    pub seed: u64,
    pub components: Vec<SineComponent>,
    pub path: Option<PathBuf>,
}

impl DisturbanceSpec {
    pub fn white(sigma: f64, seed: u64) -> Self {
        DisturbanceSpec {
            kind: DisturbanceKind::White,
            sigma,
            seed,
            components: Vec::new(),
            path: None,
        }
    }

    pub fn validate(&self, dt: f64) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::Config(format!("disturbance sigma {} < 0", self.sigma)));
        }
        let nyquist = 0.5 / dt;
        for c in &self.components {
            if !(c.freq_hz >= 0.0 && c.freq_hz < nyquist) {
                return Err(Error::Config(format!(
                    "sinusoid at {} Hz is outside [0, {nyquist}) Hz",
                    c.freq_hz
                )));
            }
        }
        if self.kind == DisturbanceKind::File && self.path.is_none() {
            return Err(Error::Config("file disturbance needs a path".into()));
        }
        Ok(())
    }
}

/// `steps x n_y` disturbance realisation, deterministic per seed.
/// `modes` optionally supplies output singular vectors (columns) for
/// shaping `sinusoid_mix` components.
pub fn disturbance(
    spec: &DisturbanceSpec,
    steps: usize,
    n_y: usize,
    dt: f64,
    modes: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    spec.validate(dt)?;
    if let Some(u) = modes {
        if u.nrows() != n_y {
            return Err(Error::Dimension(format!(
                "mode basis has {} rows, expected {n_y}",
                u.nrows()
            )));
        }
        if let Some(c) = spec.components.iter().find(|c| c.mode >= u.ncols()) {
            return Err(Error::Config(format!(
                "sinusoid mode {} out of range 0..{}",
                c.mode,
                u.ncols()
            )));
        }
    }
    let white = |sigma: f64| -> Result<DMatrix<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut m = DMatrix::zeros(steps, n_y);
        for k in 0..steps {
            for i in 0..n_y {
                m[(k, i)] = normal.sample(&mut rng);
            }
        }
        Ok(m)
    };
    match spec.kind {
        DisturbanceKind::White => white(spec.sigma),
        DisturbanceKind::RandomWalk => {
            let mut m = white(spec.sigma)?;
            for k in 1..steps {
                for i in 0..n_y {
                    m[(k, i)] += m[(k - 1, i)];
                }
            }
            Ok(m)
        }
        DisturbanceKind::SinusoidMix => {
            let mut m = white(spec.sigma)?;
            for c in &spec.components {
                let pattern: Vec<f64> = match modes {
                    Some(u) => {
                        let scale = (n_y as f64).sqrt();
                        u.column(c.mode).iter().map(|v| scale * v).collect()
                    }
                    None => (0..n_y)
                        .map(|i| (2.0 * PI * (c.mode * i) as f64 / n_y as f64).cos())
                        .collect(),
                };
                for k in 0..steps {
                    let s = c.amplitude * (2.0 * PI * c.freq_hz * k as f64 * dt).sin();
                    for i in 0..n_y {
                        m[(k, i)] += s * pattern[i];
                    }
                }
            }
            Ok(m)
        }
        DisturbanceKind::File => {
            let path = spec.path.as_ref().expect("validated");
            let m = read_matrix(path)?;
            if m.ncols() != n_y || m.nrows() < steps {
                return Err(Error::Dimension(format!(
                    "{}: disturbance file is {}x{}, need at least {steps}x{n_y}",
                    path.display(),
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(m.rows(0, steps).into_owned())
        }
    }
}

/// Modal IMC: `u = -V diag(k) c(z) U^T y` with `c(z) = g / (1 - z^-1)`.
///
/// The integrator gain `g = 1 - exp(-2 pi f_c dt)` places the closed loop
/// of a unit-gain mode at `f_c` when actuator lag and delay are ignored.
/// With clipping on, inputs are clamped to the amplitude and slew-rate
/// limits, and a mode stops integrating while its increment would push an
/// actuator that is already held at a limit further past it.
#[derive(Debug, Clone)]
pub struct ImcController {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub k: DVector<f64>,
    pub integrator: DVector<f64>,
    pub g: f64,
    pub clip: Option<(Vec<f64>, Vec<f64>)>,
    pub u_prev: DVector<f64>,
}

pub const DEFAULT_IMC_BANDWIDTH_HZ: f64 = 200.0;

impl ImcController {
    pub fn new(
        basis: &ModalBasis,
        lambda: f64,
        bandwidth_hz: f64,
        dt: f64,
        clip: Option<(Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        if !(bandwidth_hz > 0.0 && bandwidth_hz < 0.5 / dt) {
            return Err(Error::Config(format!("IMC bandwidth {bandwidth_hz} Hz out of range")));
        }
        let n_u = basis.v.nrows();
        if let Some((alpha, rho)) = &clip {
            if alpha.len() != n_u || rho.len() != n_u {
                return Err(Error::Dimension("IMC clip limits".into()));
            }
        }
        let k = DVector::from_vec(imc_gains(basis.s.as_slice(), lambda)?);
        Ok(ImcController {
            u: basis.u.clone(),
            v: basis.v.clone(),
            integrator: DVector::zeros(k.len()),
            k,
            g: 1.0 - (-2.0 * PI * bandwidth_hz * dt).exp(),
            clip,
            u_prev: DVector::zeros(n_u),
        })
    }

    fn bounds(&self, i: usize) -> Option<(f64, f64)> {
        self.clip.as_ref().map(|(alpha, rho)| {
            let (a, r, up) = (alpha[i], rho[i], self.u_prev[i]);
            ((-a).max(up - r), a.min(up + r))
        })
    }

    pub fn imc_step(&mut self, y: &DVector<f64>) -> DVector<f64> {
        let y_hat = self.u.transpose() * y;
        let inc = &y_hat * self.g;
        if self.clip.is_none() {
            self.integrator += &inc;
            return -(&self.v * self.integrator.component_mul(&self.k));
        }
        // actuators already held at a limit by the current integrator state:
        // +1 above hi, -1 below lo
        let held = -(&self.v * self.integrator.component_mul(&self.k));
        let n_u = held.len();
        let dir: Vec<f64> = (0..n_u)
            .map(|i| {
                let (lo, hi) = self.bounds(i).expect("clip set");
                if held[i] > hi {
                    1.0
                } else if held[i] < lo {
                    -1.0
                } else {
                    0.0
                }
            })
            .collect();
        for j in 0..self.integrator.len() {
            let worsens = (0..n_u).any(|i| dir[i] * (-self.v[(i, j)] * self.k[j] * inc[j]) > 0.0);
            if !worsens {
                self.integrator[j] += inc[j];
            }
        }
        let mut u = -(&self.v * self.integrator.component_mul(&self.k));
        for i in 0..n_u {
            let (lo, hi) = self.bounds(i).expect("clip set");
            u[i] = u[i].clamp(lo, hi);
        }
        self.u_prev.copy_from(&u);
        u
    }
}

impl Controller for ImcController {
    fn control(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.imc_step(y))
    }
    fn n_u(&self) -> usize {
        self.v.nrows()
    }
    fn n_y(&self) -> usize {
        self.u.nrows()
    }
}

/// Cumulative spectral amplitude against cutoff frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct IbmCurve {
    pub freq_hz: Vec<f64>,
    pub ibm: Vec<f64>,
}

impl IbmCurve {
    /// Value at the total (Nyquist) cutoff.
    pub fn total(&self) -> f64 {
        *self.ibm.last().unwrap_or(&0.0)
    }

    /// Value at the first grid cutoff at or above `f`.
    pub fn at(&self, f: f64) -> f64 {
        let i = self.freq_hz.partition_point(|&x| x < f);
        self.ibm[i.min(self.ibm.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    Index(usize),
    Average,
}

/// One-sided power per DFT bin of the mean-removed series, normalised so
/// the bins sum to the mean square (a sinusoid of amplitude `A` totals
/// `A^2 / 2`).
pub fn power_spectrum(x: &[f64]) -> Vec<f64> {
    let t = x.len();
    let mean = x.iter().sum::<f64>() / t as f64;
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    let t2 = (t * t) as f64;
    (0..=t / 2)
        .map(|j| {
            let edge = j == 0 || (t % 2 == 0 && j == t / 2);
            let c = if edge { 1.0 } else { 2.0 };
            c * buf[j].norm_sqr() / t2
        })
        .collect()
}

pub fn ibm(y: &DMatrix<f64>, dt: f64, monitor: Monitor) -> Result<IbmCurve> {
    let (t, n_y) = y.shape();
    if t < 2 {
        return Err(Error::Dimension(format!("IBM needs at least 2 samples, got {t}")));
    }
    let cols: Vec<usize> = match monitor {
        Monitor::Index(i) if i < n_y => vec![i],
        Monitor::Index(i) => {
            return Err(Error::Dimension(format!("monitor {i} out of range 0..{n_y}")));
        }
        Monitor::Average => (0..n_y).collect(),
    };
    let bins = t / 2 + 1;
    let mut acc = vec![0.0; bins];
    for &c in &cols {
        let col: Vec<f64> = y.column(c).iter().copied().collect();
        let mut cum = 0.0;
        for (a, p) in acc.iter_mut().zip(power_spectrum(&col)) {
            cum += p;
            *a += cum.sqrt();
        }
    }
    let n = cols.len() as f64;
    Ok(IbmCurve {
        freq_hz: (0..bins).map(|j| j as f64 / (t as f64 * dt)).collect(),
        ibm: acc.into_iter().map(|v| v / n).collect(),
    })
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// `rms(a - b) / rms(b)`.
pub fn rms_relative_difference(a: &[f64], b: &[f64]) -> f64 {
    rms(a.iter().zip(b).map(|(x, y)| x - y)) / rms(b.iter().copied())
}
