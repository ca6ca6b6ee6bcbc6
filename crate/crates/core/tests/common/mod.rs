//! Independent oracles shared by the integration tests. Nothing here calls
//! the projection or solver code under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Linear inequalities `G u <= h`.
#[derive(Debug, Clone)]
pub struct Polytope {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    /// Actuator owning each row.
    pub owner: Vec<usize>,
}

impl Polytope {
    pub fn violation(&self, u: &DVector<f64>) -> f64 {
        (&self.g * u - &self.h).max().max(0.0)
    }
}

/// Input constraints of one sample written out as half-planes, ordered
/// stage-major like the decision vector.
///
/// N = 1: `lo_i <= u_i <= hi_i` with `lo = max(-alpha, up - rho)`,
/// `hi = min(alpha, up + rho)`. N = 2 adds `|u1_i| <= alpha` and
/// `|u1_i - u0_i| <= rho`.
pub fn input_polytope(alpha: &[f64], rho: &[f64], u_prev: &[f64], horizon: usize) -> Polytope {
    let n_u = alpha.len();
    let n = n_u * horizon;
    let rows_per = if horizon == 1 { 2 } else { 6 };
    let mut g = DMatrix::zeros(n_u * rows_per, n);
    let mut h = DVector::zeros(n_u * rows_per);
    let mut owner = Vec::new();
    let mut r = 0;
    for i in 0..n_u {
        let lo = (-alpha[i]).max(u_prev[i] - rho[i]);
        let hi = alpha[i].min(u_prev[i] + rho[i]);
        g[(r, i)] = 1.0;
        h[r] = hi;
        g[(r + 1, i)] = -1.0;
        h[r + 1] = -lo;
        r += 2;
        if horizon == 2 {
            let j = n_u + i;
            g[(r, j)] = 1.0;
            h[r] = alpha[i];
            g[(r + 1, j)] = -1.0;
            h[r + 1] = alpha[i];
            g[(r + 2, j)] = 1.0;
            g[(r + 2, i)] = -1.0;
            h[r + 2] = rho[i];
            g[(r + 3, j)] = -1.0;
            g[(r + 3, i)] = 1.0;
            h[r + 3] = rho[i];
            r += 4;
        }
        owner.extend(std::iter::repeat_n(i, rows_per));
    }
    Polytope { g, h, owner }
}

/// Minimiser of `1/2 u'Ju + q'u` on the affine set `G_W u = h_W`, or
/// `None` when the KKT matrix is singular.
fn equality_qp(
    j: &DMatrix<f64>,
    q: &DVector<f64>,
    poly: &Polytope,
    active: &[usize],
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = j.nrows();
    let m = active.len();
    let mut k = DMatrix::zeros(n + m, n + m);
    let mut rhs = DVector::zeros(n + m);
    k.view_mut((0, 0), (n, n)).copy_from(j);
    rhs.rows_mut(0, n).copy_from(&(-q));
    for (a, &row) in active.iter().enumerate() {
        for c in 0..n {
            k[(n + a, c)] = poly.g[(row, c)];
            k[(c, n + a)] = poly.g[(row, c)];
        }
        rhs[n + a] = poly.h[row];
    }
    let lu = k.full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    let u = sol.rows(0, n).into_owned();
    // K [u; mu] = [-q; h] with mu = lambda for G u <= h
    let lambda = sol.rows(n, m).into_owned();
    Some((u, lambda))
}

/// Primal active-set method for strictly convex QPs, started from the
/// feasible point `x0`.
pub fn active_set_qp(j: &DMatrix<f64>, q: &DVector<f64>, poly: &Polytope, x0: &DVector<f64>) -> DVector<f64> {
    const TOL: f64 = 1e-12;
    let mut x = x0.clone();
    let mut work: Vec<usize> = Vec::new();
    for _ in 0..10_000 {
        let g = j * &x + q;
        // step p solves min 1/2 p'Jp + g'p with G_W p = 0
        let zero = Polytope {
            g: poly.g.clone(),
            h: DVector::zeros(poly.h.len()),
            owner: poly.owner.clone(),
        };
        let (p, lambda) = equality_qp(j, &g, &zero, &work).expect("working set stays independent");
        if p.amax() <= TOL * (1.0 + x.amax()) {
            let (idx, min) = lambda
                .iter()
                .enumerate()
                .fold((usize::MAX, 0.0), |acc, (i, &l)| if l < acc.1 { (i, l) } else { acc });
            if idx == usize::MAX || min >= -TOL {
                return x;
            }
            work.remove(idx);
            continue;
        }
        let gp = &poly.g * &p;
        let slack = &poly.h - &poly.g * &x;
        let mut step = 1.0;
        let mut blocking = None;
        for r in 0..poly.h.len() {
            if work.contains(&r) || gp[r] <= TOL {
                continue;
            }
            let s = (slack[r].max(0.0)) / gp[r];
            if s < step {
                step = s;
                blocking = Some(r);
            }
        }
        x += &p * step;
        if let Some(r) = blocking {
            work.push(r);
        }
    }
    panic!("active-set oracle did not terminate");
}

/// Exhaustive search over the face lattice: for every choice of active
/// constraints (at most two per actuator, and only those touching that
/// actuator) the equality-constrained minimiser is computed, and the best
/// feasible one is returned. Cost grows as `19^n_u` for N = 2.
pub fn enumerate_faces_qp(j: &DMatrix<f64>, q: &DVector<f64>, poly: &Polytope, n_u: usize) -> DVector<f64> {
    let mut per_actuator: Vec<Vec<Vec<usize>>> = Vec::new();
    for i in 0..n_u {
        let rows: Vec<usize> = (0..poly.owner.len()).filter(|&r| poly.owner[r] == i).collect();
        let mut faces = vec![vec![]];
        for (a, &r) in rows.iter().enumerate() {
            faces.push(vec![r]);
            for &s in &rows[a + 1..] {
                faces.push(vec![r, s]);
            }
        }
        per_actuator.push(faces);
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut idx = vec![0usize; n_u];
    loop {
        let active: Vec<usize> = (0..n_u).flat_map(|i| per_actuator[i][idx[i]].clone()).collect();
        if let Some((u, _)) = equality_qp(j, q, poly, &active) {
            if poly.violation(&u) <= 1e-10 {
                let f = 0.5 * u.dot(&(j * &u)) + q.dot(&u);
                if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                    best = Some((f, u));
                }
            }
        }
        let mut k = 0;
        loop {
            if k == n_u {
                return best.expect("feasible set is non-empty").1;
            }
            idx[k] += 1;
            if idx[k] < per_actuator[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Largest KKT violation of `u` with multipliers fitted by nonnegative
/// least squares on the active rows (small problems only).
pub fn kkt_residual(j: &DMatrix<f64>, q: &DVector<f64>, poly: &Polytope, u: &DVector<f64>) -> f64 {
    let grad = j * u + q;
    let active: Vec<usize> = (0..poly.h.len())
        .filter(|&r| (poly.g.row(r) * u)[0] >= poly.h[r] - 1e-9)
        .collect();
    // projected gradient: stationarity holds iff -grad lies in the cone of
    // active normals; solve that NNLS by active-set on the tiny system
    let normals = DMatrix::from_fn(u.len(), active.len(), |c, a| poly.g[(active[a], c)]);
    let lambda = nnls(&normals, &(-&grad));
    let stat = (&grad + &normals * &lambda).amax();
    stat.max(poly.violation(u))
}

/// Lawson-Hanson nonnegative least squares.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &x);
        let cand = (0..n)
            .filter(|&i| !passive[i] && w[i] > 1e-14)
            .max_by(|&i, &k| w[i].total_cmp(&w[k]));
        let Some(t) = cand else { break };
        passive[t] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = DMatrix::from_fn(a.nrows(), cols.len(), |r, c| a[(r, cols[c])]);
            let z = sub.clone().svd(true, true).solve(b, 1e-14).expect("svd solve");
            if z.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (c, &i) in cols.iter().enumerate() {
                    x[i] = z[c];
                }
                break;
            }
            let mut step = 1.0f64;
            for (c, &i) in cols.iter().enumerate() {
                if z[c] <= 0.0 {
                    step = step.min(x[i] / (x[i] - z[c]));
                }
            }
            for (c, &i) in cols.iter().enumerate() {
                x[i] += step * (z[c] - x[i]);
                if x[i] <= 1e-15 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Euclidean projection of `t` onto `{x : g x <= h}` in the plane by
/// enumerating every subset of at most two active rows.
pub fn project_polygon(t: [f64; 2], g: &[[f64; 2]], h: &[f64]) -> Option<[f64; 2]> {
    let feasible = |x: [f64; 2]| {
        g.iter()
            .zip(h)
            .all(|(gi, &hi)| gi[0] * x[0] + gi[1] * x[1] <= hi + 1e-12 * (1.0 + hi.abs()))
    };
    let mut cands = vec![t];
    for (a, ga) in g.iter().enumerate() {
        let nn = ga[0] * ga[0] + ga[1] * ga[1];
        let s = (ga[0] * t[0] + ga[1] * t[1] - h[a]) / nn;
        cands.push([t[0] - s * ga[0], t[1] - s * ga[1]]);
        for (b, gb) in g.iter().enumerate().skip(a + 1) {
            let det = ga[0] * gb[1] - ga[1] * gb[0];
            if det.abs() < 1e-14 {
                continue;
            }
            cands.push([(h[a] * gb[1] - ga[1] * h[b]) / det, (ga[0] * h[b] - h[a] * gb[0]) / det]);
        }
    }
    cands.into_iter().filter(|&x| feasible(x)).min_by(|x, y| {
        let dx = (x[0] - t[0]).powi(2) + (x[1] - t[1]).powi(2);
        let dy = (y[0] - t[0]).powi(2) + (y[1] - t[1]).powi(2);
        dx.total_cmp(&dy)
    })
}

/// The six half-planes of the two-stage set of one actuator.
pub fn hexagon_halfplanes(u_prev: f64, alpha: f64, rho: f64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let lo = (-alpha).max(u_prev - rho);
    let hi = alpha.min(u_prev + rho);
    (
        vec![
            [1.0, 0.0],
            [-1.0, 0.0],
            [0.0, 1.0],
            [0.0, -1.0],
            [-1.0, 1.0],
            [1.0, -1.0],
        ],
        vec![hi, -lo, alpha, alpha, rho, rho],
    )
}

pub fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Random SPD matrix with eigenvalues spread geometrically over `kappa`.
pub fn random_spd(n: usize, kappa: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = DVector::from_fn(n, |i, _| {
        if n == 1 {
            1.0
        } else {
            kappa.powf(-(i as f64) / (n - 1) as f64)
        }
    });
    let m = &q * DMatrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}
