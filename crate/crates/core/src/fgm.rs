//! Fast gradient method with a fixed iteration budget.
//!
//! The gradient step `t = (I - J/l_max) v - q/l_max` is the only dense
//! operation. It runs either inline or on a pool of long-lived worker
//! threads, each owning a fixed slice of rows. Every row is reduced in the
//! same order in both paths, so the parallel result is bit-identical to the
//! serial one.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::qp::{CondensedQP, ConstraintSet};
use crate::{Error, Result};

/// Rows per cache line of `f64`.
pub const DEFAULT_ALIGNMENT: usize = 8;
pub const DEFAULT_I_MAX: u64 = 20;
pub const CONVERGENCE_CAP: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerPlan {
    pub n_workers: usize,
    /// `(start_row, row_count)`; empty slices are omitted.
    pub row_slices: Vec<(usize, usize)>,
}

impl WorkerPlan {
    /// Every row covered exactly once, in order.
    pub fn covers(&self, rows: usize) -> bool {
        let mut next = 0;
        for &(start, len) in &self.row_slices {
            if start != next || len == 0 {
                return false;
            }
            next += len;
        }
        next == rows
    }
}

/// Splits `rows` into near-equal slices whose lengths are multiples of
/// `alignment`; the last slice takes whatever remains.
pub fn make_worker_plan(rows: usize, n_workers: usize, alignment: usize) -> WorkerPlan {
    let n_workers = n_workers.max(1);
    let alignment = alignment.max(1);
    let mut row_slices = Vec::with_capacity(n_workers);
    let mut start = 0;
    for w in 0..n_workers {
        let remaining = rows - start;
        if remaining == 0 {
            break;
        }
        let len = if w + 1 == n_workers {
            remaining
        } else {
            let share = remaining.div_ceil(n_workers - w);
            (share.div_ceil(alignment) * alignment).min(remaining)
        };
        row_slices.push((start, len));
        start += len;
    }
    WorkerPlan { n_workers, row_slices }
}

/// Row reduction shared by every code path: ascending columns in groups of
/// four, each group summed left to right before joining the accumulator,
/// then the tail one element at a time.
#[inline]
pub fn row_dot(row: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut r4 = row.chunks_exact(4);
    let mut v4 = v.chunks_exact(4);
    for (r, x) in (&mut r4).zip(&mut v4) {
        acc += ((r[0] * x[0] + r[1] * x[1]) + r[2] * x[2]) + r[3] * x[3];
    }
    for (r, x) in r4.remainder().iter().zip(v4.remainder()) {
        acc += r * x;
    }
    acc
}

/// `M = I - J/l_max` stored row-major.
#[derive(Debug, Clone)]
pub struct GradientOperator {
    m: Arc<Vec<f64>>,
    n: usize,
    lambda_max: f64,
}

impl GradientOperator {
    pub fn new(qp: &CondensedQP) -> Self {
        let n = qp.dim();
        let mut m = Vec::with_capacity(n * n);
        for i in 0..n {
            for k in 0..n {
                let e = if i == k { 1.0 } else { 0.0 };
                m.push(e - qp.j[(i, k)] / qp.lambda_max);
            }
        }
        GradientOperator {
            m: Arc::new(m),
            n,
            lambda_max: qp.lambda_max,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `q / l_max`, computed once per solve.
    pub fn scale_linear(&self, q: &[f64]) -> Vec<f64> {
        q.iter().map(|x| x / self.lambda_max).collect()
    }

    fn rows_into(m: &[f64], n: usize, v: &[f64], qs: &[f64], start: usize, out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let i = start + r;
            *o = row_dot(&m[i * n..(i + 1) * n], v) - qs[i];
        }
    }

    pub fn apply(&self, v: &[f64], qs: &[f64], out: &mut [f64]) {
        GradientOperator::rows_into(&self.m, self.n, v, qs, 0, out);
    }
}

fn check_len(what: &str, got: usize, n: usize) -> Result<()> {
    if got != n {
        return Err(Error::Dimension(format!("{what} has length {got}, expected {n}")));
    }
    Ok(())
}

/// Serial reference gradient step.
pub fn gradient_step(qp: &CondensedQP, v: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let op = GradientOperator::new(qp);
    check_len("v", v.len(), op.n)?;
    check_len("q", q.len(), op.n)?;
    let mut t = vec![0.0; op.n];
    op.apply(v, &op.scale_linear(q), &mut t);
    Ok(t)
}

/// Gradient step on a temporary worker pool laid out by `plan`.
pub fn gradient_step_parallel(qp: &CondensedQP, v: &[f64], q: &[f64], plan: &WorkerPlan) -> Result<Vec<f64>> {
    let op = GradientOperator::new(qp);
    check_len("v", v.len(), op.n)?;
    check_len("q", q.len(), op.n)?;
    let pool = WorkerPool::new(op.clone(), plan.clone())?;
    let mut t = vec![0.0; op.n];
    pool.apply(v, &op.scale_linear(q), &mut t)?;
    Ok(t)
}

struct Job {
    v: Arc<Vec<f64>>,
    qs: Arc<Vec<f64>>,
}

struct Worker {
    jobs: Sender<Job>,
    results: Receiver<Vec<f64>>,
    slice: (usize, usize),
    handle: Option<JoinHandle<()>>,
}

/// Long-lived threads, one per row slice. `apply` is a dispatch, a blocking
/// gather from every worker, and only then a write into the output.
pub struct WorkerPool {
    op: GradientOperator,
    plan: WorkerPlan,
    workers: Vec<Worker>,
}

impl WorkerPool {
    pub fn new(op: GradientOperator, plan: WorkerPlan) -> Result<Self> {
        if !plan.covers(op.n) {
            return Err(Error::Config(format!(
                "worker plan {:?} does not cover {} rows",
                plan.row_slices, op.n
            )));
        }
        let mut workers = Vec::new();
        if plan.row_slices.len() > 1 {
            for (idx, &slice) in plan.row_slices.iter().enumerate() {
                let (job_tx, job_rx) = channel::<Job>();
                let (res_tx, res_rx) = channel::<Vec<f64>>();
                let m = Arc::clone(&op.m);
                let n = op.n;
                let handle = std::thread::Builder::new()
                    .name(format!("fgm-worker-{idx}"))
                    .spawn(move || {
                        let (start, len) = slice;
                        for job in job_rx {
                            let mut out = vec![0.0; len];
                            GradientOperator::rows_into(&m, n, &job.v, &job.qs, start, &mut out);
                            if res_tx.send(out).is_err() {
                                break;
                            }
                        }
                    })
                    .map_err(|e| Error::Worker(format!("spawn failed: {e}")))?;
                workers.push(Worker {
                    jobs: job_tx,
                    results: res_rx,
                    slice,
                    handle: Some(handle),
                });
            }
        }
        Ok(WorkerPool { op, plan, workers })
    }

    pub fn plan(&self) -> &WorkerPlan {
        &self.plan
    }

    pub fn apply(&self, v: &[f64], qs: &[f64], out: &mut [f64]) -> Result<()> {
        if self.workers.is_empty() {
            self.op.apply(v, qs, out);
            return Ok(());
        }
        let v = Arc::new(v.to_vec());
        let qs = Arc::new(qs.to_vec());
        for (idx, w) in self.workers.iter().enumerate() {
            w.jobs
                .send(Job {
                    v: Arc::clone(&v),
                    qs: Arc::clone(&qs),
                })
                .map_err(|_| Error::Worker(format!("worker {idx} is gone")))?;
        }
        let mut parts = Vec::with_capacity(self.workers.len());
        for (idx, w) in self.workers.iter().enumerate() {
            let part = w
                .results
                .recv()
                .map_err(|_| Error::Worker(format!("worker {idx} died during gradient step")))?;
            parts.push(part);
        }
        for (w, part) in self.workers.iter().zip(parts) {
            let (start, len) = w.slice;
            out[start..start + len].copy_from_slice(&part);
        }
        Ok(())
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        let handles: Vec<_> = self
            .workers
            .drain(..)
            .filter_map(|mut w| {
                drop(w.jobs);
                w.handle.take()
            })
            .collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

/// Wall-clock spent in each manager/worker stage of one or more solves.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveTiming {
    pub gradient: Duration,
    pub projection: Duration,
    pub momentum: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Convergence {
    pub iterations: u64,
    pub capped: bool,
}

/// Iterates and worker pool for one condensed QP. Not reentrant.
pub struct FgmSolver {
    pool: WorkerPool,
    beta: f64,
    n: usize,
    v: Vec<f64>,
    p: Vec<f64>,
    p_prev: Vec<f64>,
    t: Vec<f64>,
}

impl FgmSolver {
    pub fn new(qp: &CondensedQP, n_workers: usize) -> Result<Self> {
        FgmSolver::with_alignment(qp, n_workers, DEFAULT_ALIGNMENT)
    }

    pub fn with_alignment(qp: &CondensedQP, n_workers: usize, alignment: usize) -> Result<Self> {
        if n_workers == 0 {
            return Err(Error::Config("n_workers must be at least 1".into()));
        }
        let op = GradientOperator::new(qp);
        let n = op.n;
        let plan = make_worker_plan(n, n_workers, alignment);
        Ok(FgmSolver {
            pool: WorkerPool::new(op, plan)?,
            beta: qp.beta,
            n,
            v: vec![0.0; n],
            p: vec![0.0; n],
            p_prev: vec![0.0; n],
            t: vec![0.0; n],
        })
    }

    pub fn plan(&self) -> &WorkerPlan {
        self.pool.plan()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    fn start(&mut self, q: &[f64], set: &ConstraintSet, warm: &[f64]) -> Result<Vec<f64>> {
        check_len("q", q.len(), self.n)?;
        check_len("warm start", warm.len(), self.n)?;
        set.check_feasible()?;
        set.project(warm, &mut self.p)?;
        self.v.copy_from_slice(&self.p);
        Ok(self.pool.op.scale_linear(q))
    }

    /// One iteration; leaves the previous projected iterate in `p_prev`.
    fn iterate(
        &mut self,
        qs: &[f64],
        set: &ConstraintSet,
        iter: u64,
        timing: &mut Option<&mut SolveTiming>,
    ) -> Result<()> {
        let t0 = timing.as_ref().map(|_| Instant::now());
        self.pool.apply(&self.v, qs, &mut self.t)?;
        let t1 = timing.as_ref().map(|_| Instant::now());
        std::mem::swap(&mut self.p, &mut self.p_prev);
        set.project(&self.t, &mut self.p)?;
        let t2 = timing.as_ref().map(|_| Instant::now());
        let b = self.beta;
        for ((v, &p), &pp) in self.v.iter_mut().zip(&self.p).zip(&self.p_prev) {
            *v = (1.0 + b) * p - b * pp;
        }
        if let (Some(tm), Some(t0), Some(t1), Some(t2)) = (timing.as_mut(), t0, t1, t2) {
            let t3 = Instant::now();
            tm.gradient += t1 - t0;
            tm.projection += t2 - t1;
            tm.momentum += t3 - t2;
        }
        if self.v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at FGM iteration {iter}")));
        }
        Ok(())
    }

    /// Exactly `i_max` iterations starting from the projected warm start.
    pub fn solve(&mut self, q: &[f64], set: &ConstraintSet, warm: &[f64], i_max: u64) -> Result<Vec<f64>> {
        self.solve_inner(q, set, warm, i_max, None)
    }

    pub fn solve_timed(
        &mut self,
        q: &[f64],
        set: &ConstraintSet,
        warm: &[f64],
        i_max: u64,
        timing: &mut SolveTiming,
    ) -> Result<Vec<f64>> {
        self.solve_inner(q, set, warm, i_max, Some(timing))
    }

    fn solve_inner(
        &mut self,
        q: &[f64],
        set: &ConstraintSet,
        warm: &[f64],
        i_max: u64,
        mut timing: Option<&mut SolveTiming>,
    ) -> Result<Vec<f64>> {
        let qs = self.start(q, set, warm)?;
        for i in 1..=i_max {
            self.iterate(&qs, set, i, &mut timing)?;
        }
        Ok(self.p.clone())
    }

    /// Iterations until `|p+ - p|_inf < eps` and `|p+ - p|_inf <= eps |p|_inf`,
    /// capped at [`CONVERGENCE_CAP`]. Benchmarking only.
    pub fn converged_iterations(
        &mut self,
        q: &[f64],
        set: &ConstraintSet,
        warm: &[f64],
        epsilon: f64,
    ) -> Result<Convergence> {
        if !(epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        let qs = self.start(q, set, warm)?;
        for i in 1..=CONVERGENCE_CAP {
            self.iterate(&qs, set, i, &mut None)?;
            let mut diff: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for (&p, &pp) in self.p.iter().zip(&self.p_prev) {
                diff = diff.max((p - pp).abs());
                scale = scale.max(pp.abs());
            }
            if diff < epsilon && diff <= epsilon * scale {
                return Ok(Convergence {
                    iterations: i,
                    capped: false,
                });
            }
        }
        Ok(Convergence {
            iterations: CONVERGENCE_CAP,
            capped: true,
        })
    }
}

/// Shifted warm start: drop the applied stage and repeat the last one.
pub fn shift_warm_start(u_star: &[f64], n_u: usize) -> Vec<f64> {
    let mut w = Vec::with_capacity(u_star.len());
    w.extend_from_slice(&u_star[n_u.min(u_star.len())..]);
    let last = &u_star[u_star.len() - n_u..];
    w.extend_from_slice(last);
    w
}
