mod common;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orbit_mpc::fgm::FgmSolver;
use orbit_mpc::qp::{CondensedQP, ConstraintSet};

struct Instance {
    qp: CondensedQP,
    set: ConstraintSet,
    q: DVector<f64>,
}

fn instance(rng: &mut ChaCha8Rng, horizon: usize, kappa: f64) -> Instance {
    let n_u = rng.random_range(2..=8);
    let n = n_u * horizon;
    let qp = CondensedQP::from_hessian(common::random_spd(n, kappa, rng), horizon).unwrap();
    let alpha: Vec<f64> = (0..n_u).map(|_| rng.random_range(0.5..2.0)).collect();
    let rho: Vec<f64> = alpha.iter().map(|a| a * rng.random_range(0.05..2.5)).collect();
    let u_prev: Vec<f64> = alpha.iter().map(|&a| rng.random_range(-a..=a)).collect();
    let mut set = ConstraintSet::new(alpha, rho, horizon).unwrap();
    set.update(&u_prev).unwrap();
    let q = common::random_vec(n, 2.0 * qp.lambda_max, rng);
    Instance { qp, set, q }
}

// Projected FGM with constant momentum is not monotone, even over windows
// of ten iterations, so the certified linear rate is checked instead:
// f(p_i) - f* <= (1 - 1/sqrt(kappa))^i (f(p_0) - f* + mu/2 |p_0 - x*|^2).
#[test]
fn objective_gap_obeys_linear_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..100 {
        let kappa = 10f64.powf(rng.random_range(0.5..3.0));
        let inst = instance(&mut rng, 1 + k % 2, kappa);
        let mut solver = FgmSolver::new(&inst.qp, 1).unwrap();
        let q = inst.q.as_slice();
        let warm = vec![0.0; inst.qp.dim()];
        let x_star = solver.solve(q, &inst.set, &warm, 20_000).unwrap();
        let f_star = inst.qp.objective(&x_star, q);
        let p0 = solver.solve(q, &inst.set, &warm, 0).unwrap();
        let dist2: f64 = p0.iter().zip(&x_star).map(|(a, b)| (a - b).powi(2)).sum();
        let c0 = inst.qp.objective(&p0, q) - f_star + 0.5 * inst.qp.lambda_min * dist2;
        let rate = 1.0 - (inst.qp.lambda_min / inst.qp.lambda_max).sqrt();
        for i in 1..=60u64 {
            let p = solver.solve(q, &inst.set, &warm, i).unwrap();
            let gap = inst.qp.objective(&p, q) - f_star;
            assert!(
                gap <= rate.powi(i as i32) * c0 + 1e-12 * (1.0 + f_star.abs()),
                "instance {k}, iteration {i}"
            );
        }
    }
}

#[test]
fn every_output_is_feasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..100 {
        let inst = instance(&mut rng, 1 + k % 2, 50.0);
        let mut solver = FgmSolver::new(&inst.qp, 1).unwrap();
        let warm = common::random_vec(inst.qp.dim(), 5.0, &mut rng);
        for i_max in [0, 1, 7, 20] {
            let u = solver
                .solve(inst.q.as_slice(), &inst.set, warm.as_slice(), i_max)
                .unwrap();
            assert!(inst.set.max_violation(&u) <= 1e-12);
        }
    }
}

#[test]
fn warm_start_rarely_needs_more_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 1000;
    let mut not_worse = 0;
    for k in 0..trials {
        let inst = instance(&mut rng, 1 + k % 2, 100.0);
        let n = inst.qp.dim();
        let mut solver = FgmSolver::new(&inst.qp, 1).unwrap();
        let optimum = solver.solve(inst.q.as_slice(), &inst.set, &vec![0.0; n], 3000).unwrap();
        let dq = common::random_vec(n, 1.0, &mut rng);
        let q2 = &inst.q + dq * (0.01 * inst.q.norm() / (n as f64).sqrt());
        let warm = solver
            .converged_iterations(q2.as_slice(), &inst.set, &optimum, 1e-3)
            .unwrap();
        let cold = solver
            .converged_iterations(q2.as_slice(), &inst.set, &vec![0.0; n], 1e-3)
            .unwrap();
        not_worse += (warm.iterations <= cold.iterations) as usize;
    }
    assert!(not_worse * 10 >= trials * 9, "{not_worse} / {trials}");
}

#[test]
fn looser_tolerance_never_needs_more_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..50 {
        let inst = instance(&mut rng, 1 + k % 2, 500.0);
        let mut solver = FgmSolver::new(&inst.qp, 1).unwrap();
        let warm = vec![0.0; inst.qp.dim()];
        let mut last = u64::MAX;
        for eps in [1e-8, 2e-8, 1e-6, 2e-6, 1e-4, 2e-4, 1e-2, 2e-2] {
            let c = solver
                .converged_iterations(inst.q.as_slice(), &inst.set, &warm, eps)
                .unwrap();
            assert!(c.iterations <= last);
            last = c.iterations;
        }
    }
}

#[test]
fn ill_conditioned_instances_need_more_iterations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut avg = |kappa: f64| {
        let mut total = 0;
        for k in 0..100 {
            let inst = instance(&mut rng, 1 + k % 2, kappa);
            let mut solver = FgmSolver::new(&inst.qp, 1).unwrap();
            let warm = vec![0.0; inst.qp.dim()];
            total += solver
                .converged_iterations(inst.q.as_slice(), &inst.set, &warm, 1e-3)
                .unwrap()
                .iterations;
        }
        total as f64 / 100.0
    };
    let (good, bad) = (avg(21.0), avg(7485.0));
    assert!(good < bad, "{good} vs {bad}");
}

#[test]
fn solves_are_bitwise_identical_across_worker_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 40;
    let qp = CondensedQP::from_hessian(common::random_spd(2 * n, 100.0, &mut rng), 2).unwrap();
    let set = ConstraintSet::new(vec![1.0; n], vec![0.3; n], 2).unwrap();
    let q = common::random_vec(2 * n, 10.0, &mut rng);
    let reference = FgmSolver::new(&qp, 1)
        .unwrap()
        .solve(q.as_slice(), &set, &vec![0.0; 2 * n], 50)
        .unwrap();
    for workers in 2..=6 {
        let mut solver = FgmSolver::with_alignment(&qp, workers, 4).unwrap();
        for _ in 0..3 {
            let u = solver.solve(q.as_slice(), &set, &vec![0.0; 2 * n], 50).unwrap();
            assert!(u.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
