//! The MPC stack: offline design bundle and the per-sample control loop.

use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::design::{
    default_delta, design_weights_imc_matched, design_weights_saturated, iteration_bound, kalman_gain_consistent,
    representative_pole, setpoint_matrix, terminal_cost, IterationBoundParams, ObserverNoise, SetpointMap,
    TerminalCost, WeightKind, Weights,
};
use crate::fgm::{shift_warm_start, FgmSolver, SolveTiming, DEFAULT_I_MAX};
use crate::model::{build_state_space, modal_decompose, ModalBasis, PlantConfig, StateSpace};
use crate::observer::{ObserverGain, ObserverState};
use crate::qp::{CondensedQP, ConstraintSet};
use crate::sim::Controller;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSettings {
    pub weights: WeightKind,
    pub horizon: usize,
    /// Runtime iteration budget; `None` uses [`DEFAULT_I_MAX`].
    pub i_max: Option<u64>,
    pub noise: ObserverNoise,
    /// Accuracy target for the iteration bound.
    pub epsilon: f64,
    /// Initial-gap constant for the iteration bound; `None` uses
    /// [`default_delta`].
    pub delta: Option<f64>,
}

impl Default for MpcSettings {
    fn default() -> Self {
        MpcSettings {
            weights: WeightKind::Saturated {
                q_min: 1e-2,
                q_max: 1.0,
            },
            horizon: 1,
            i_max: None,
            noise: ObserverNoise::default(),
            epsilon: 1e-3,
            delta: None,
        }
    }
}

/// Everything computed offline for one plant and one set of settings.
#[derive(Debug, Clone)]
pub struct MpcDesign {
    pub ss: StateSpace,
    pub basis: ModalBasis,
    pub weights: Weights,
    pub terminal: TerminalCost,
    pub setpoint: SetpointMap,
    pub gain: ObserverGain,
    pub qp: CondensedQP,
    pub alpha: Vec<f64>,
    pub rho: Vec<f64>,
    pub settings: MpcSettings,
    pub delta: f64,
    /// Iteration bound for `settings.epsilon`.
    pub i_max_bound: u64,
}

impl MpcDesign {
    pub fn i_max(&self) -> u64 {
        self.settings.i_max.unwrap_or(DEFAULT_I_MAX)
    }

    pub fn horizon(&self) -> usize {
        self.qp.horizon
    }

    pub fn constraint_set(&self) -> Result<ConstraintSet> {
        ConstraintSet::new(self.alpha.clone(), self.rho.clone(), self.qp.horizon)
    }
}

pub fn design_weights(ss: &StateSpace, basis: &ModalBasis, kind: WeightKind) -> Result<Weights> {
    match kind {
        WeightKind::ImcMatched { lambda } => {
            let (a, b) = representative_pole(ss);
            design_weights_imc_matched(basis, a, b, lambda)
        }
        WeightKind::Saturated { q_min, q_max } => design_weights_saturated(basis, q_min, q_max),
    }
}

pub fn design_mpc(cfg: &PlantConfig, settings: &MpcSettings) -> Result<MpcDesign> {
    let ss = build_state_space(cfg)?;
    let basis = modal_decompose(&ss.c)?;
    let weights = design_weights(&ss, &basis, settings.weights)?;
    let terminal = terminal_cost(&ss, &weights)?;
    let setpoint = setpoint_matrix(&ss)?;
    let gain = kalman_gain_consistent(&ss, &settings.noise)?;
    let qp = CondensedQP::build(&ss, &weights, &terminal, &setpoint, settings.horizon)?;
    let delta = settings
        .delta
        .unwrap_or_else(|| default_delta(qp.lambda_max, &cfg.alpha, &cfg.rho, settings.horizon));
    let i_max_bound = iteration_bound(&IterationBoundParams {
        epsilon: settings.epsilon,
        delta,
        kappa: qp.kappa(),
    })?;
    Ok(MpcDesign {
        ss,
        basis,
        weights,
        terminal,
        setpoint,
        gain,
        qp,
        alpha: cfg.alpha.clone(),
        rho: cfg.rho.clone(),
        settings: settings.clone(),
        delta,
        i_max_bound,
    })
}

pub const STAGES: [&str; 6] = [
    "observer",
    "q_update",
    "set_update",
    "gradient",
    "projection",
    "momentum",
];

/// Per-sample durations of each control-loop stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageStats {
    pub samples: u64,
    pub total: [Duration; 6],
    pub max: [Duration; 6],
}

impl StageStats {
    fn record(&mut self, d: [Duration; 6]) {
        self.samples += 1;
        for i in 0..6 {
            self.total[i] += d[i];
            self.max[i] = self.max[i].max(d[i]);
        }
    }

    pub fn mean_us(&self, stage: usize) -> f64 {
        if self.samples == 0 {
            return 0.0;
        }
        self.total[stage].as_secs_f64() * 1e6 / self.samples as f64
    }

    pub fn max_us(&self, stage: usize) -> f64 {
        self.max[stage].as_secs_f64() * 1e6
    }

    pub fn mean_total_us(&self) -> f64 {
        (0..6).map(|i| self.mean_us(i)).sum()
    }
}

/// Observer and solver around one condensed QP. Each [`step`] maps `y_k` to
/// `u_k`, warm-starting from the previous plan.
///
/// [`step`]: MpcController::step
pub struct MpcController {
    observer: ObserverState,
    qp: CondensedQP,
    solver: FgmSolver,
    set: ConstraintSet,
    i_max: u64,
    warm: Vec<f64>,
    u_last: Vec<f64>,
    timing: Option<StageStats>,
}

impl MpcController {
    pub fn new(design: &MpcDesign, n_workers: usize) -> Result<Self> {
        let observer = ObserverState::new(&design.ss, design.gain.clone())?;
        if !observer.is_consistent() {
            return Err(Error::Config(
                "MPC controller needs a propagation-consistent observer gain".into(),
            ));
        }
        let n = design.qp.dim();
        let n_u = design.qp.n_u;
        Ok(MpcController {
            observer,
            solver: FgmSolver::new(&design.qp, n_workers)?,
            qp: design.qp.clone(),
            set: design.constraint_set()?,
            i_max: design.i_max(),
            warm: vec![0.0; n],
            u_last: vec![0.0; n_u],
            timing: None,
        })
    }

    pub fn with_i_max(mut self, i_max: u64) -> Self {
        self.i_max = i_max;
        self
    }

    pub fn enable_timing(&mut self) {
        self.timing = Some(StageStats::default());
    }

    pub fn stage_stats(&self) -> Option<&StageStats> {
        self.timing.as_ref()
    }

    pub fn observer(&self) -> &ObserverState {
        &self.observer
    }

    pub fn constraint_set(&self) -> &ConstraintSet {
        &self.set
    }

    pub fn step(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n_u = self.qp.n_u;
        let clock = self.timing.is_some();
        let now = || clock.then(Instant::now);
        let elapsed = |a: Option<Instant>, b: Option<Instant>| match (a, b) {
            (Some(a), Some(b)) => b - a,
            _ => Duration::ZERO,
        };

        let t0 = now();
        let corr = self.observer.correct_fast(y)?;
        let (x_hat, d_hat) = self.observer.filtered(&corr);
        let t1 = now();
        let q = self.qp.linear_term(&x_hat, &d_hat);
        let t2 = now();
        self.set.update(&self.u_last)?;
        let t3 = now();
        let mut st = SolveTiming::default();
        let u_star = if clock {
            self.solver
                .solve_timed(q.as_slice(), &self.set, &self.warm, self.i_max, &mut st)?
        } else {
            self.solver.solve(q.as_slice(), &self.set, &self.warm, self.i_max)?
        };
        let u = DVector::from_column_slice(&u_star[..n_u]);
        let t4 = now();
        self.observer.predict_fast(&u, &corr);
        let t5 = now();

        self.warm = shift_warm_start(&u_star, n_u);
        self.u_last.copy_from_slice(u.as_slice());
        if let Some(stats) = self.timing.as_mut() {
            stats.record([
                elapsed(t0, t1) + elapsed(t4, t5),
                elapsed(t1, t2),
                elapsed(t2, t3),
                st.gradient,
                st.projection,
                st.momentum,
            ]);
        }
        Ok(u)
    }
}

impl Controller for MpcController {
    fn control(&mut self, y: &DVector<f64>) -> Result<DVector<f64>> {
        self.step(y)
    }

    fn n_u(&self) -> usize {
        self.qp.n_u
    }

    fn n_y(&self) -> usize {
        self.observer.d_hat.len()
    }
}
