use gcast::kernel::{
    solve, ConstraintTag, ConvexProgram, ExpConstraint, LinearEquality, NewtonMethod, QuadConstraint, SolverError,
    SolverOptions, SparseVec, VarKind,
};
use gcast::lp::simplex_max;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bound(i: usize) -> QuadConstraint {
    QuadConstraint::linear(ConstraintTag::Bound, SparseVec::from_pairs([(i, -1.0)]), 0.0)
}

fn le(pairs: Vec<(usize, f64)>, rhs: f64) -> QuadConstraint {
    QuadConstraint::linear(ConstraintTag::Generic, SparseVec::from_pairs(pairs), -rhs)
}

/// Stationarity residual `‖s ⊙ (c + Σλ∇f + Aᵀν)‖∞ / ‖s ⊙ c‖∞` computed from the raw program.
fn stationarity(p: &ConvexProgram, x: &[f64], lam: &[f64], nu: &[f64]) -> f64 {
    let mut r = p.objective.clone();
    for (q, l) in p.quadratic.iter().zip(lam) {
        for sq in &q.squares {
            let v = sq.dot(x);
            for (&i, a) in sq.idx.iter().zip(&sq.val) {
                r[i] += l * 2.0 * v * a;
            }
        }
        for (&i, a) in q.linear.idx.iter().zip(&q.linear.val) {
            r[i] += l * a;
        }
    }
    for (e, l) in p.exponential.iter().zip(&lam[p.quadratic.len()..]) {
        r[e.e] += l * std::f64::consts::LN_2 / e.bandwidth * (x[e.e] / e.bandwidth).exp2();
        r[e.u] -= l;
    }
    for (eq, v) in p.equalities.iter().zip(nu) {
        for (&i, a) in eq.row.idx.iter().zip(&eq.row.val) {
            r[i] += v * a;
        }
    }
    let num = r.iter().zip(&p.scale).fold(0.0f64, |m, (r, s)| m.max((r * s).abs()));
    let den = p
        .objective
        .iter()
        .zip(&p.scale)
        .fold(0.0f64, |m, (c, s)| m.max((c * s).abs()));
    num / den
}

#[test]
fn exponential_bound_reaches_log_capacity() {
    let b = 30_000.0;
    let mut p = ConvexProgram::new();
    let e = p.add_var(VarKind::Exponent, b);
    let u = p.add_var(VarKind::Aux, 1.0);
    p.objective[e] = -1.0;
    p.exponential.push(ExpConstraint { e, u, bandwidth: b });
    p.quadratic.push(le(vec![(u, 1.0)], 2.0));
    let sol = solve(&p, &[0.0, 1.5], &SolverOptions::default()).unwrap();
    assert!(sol.status.converged);
    assert!((sol.x[e] - b).abs() < 1e-6 * b, "e = {}", sol.x[e]);
    assert!((sol.x[u] - 2.0).abs() < 1e-6);
}

#[test]
fn projection_onto_unit_ball() {
    let w0 = [1.6, 0.0, -1.2, 0.0];
    let norm: f64 = w0.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 2.0).abs() < 1e-12);
    let mut p = ConvexProgram::new();
    let w: Vec<usize> = (0..4).map(|_| p.add_var(VarKind::Free, 1.0)).collect();
    let t = p.add_var(VarKind::Free, 1.0);
    p.objective[t] = 1.0;
    let mut dist = QuadConstraint::linear(ConstraintTag::Generic, SparseVec::from_pairs([(t, -1.0)]), 0.0);
    for (i, &wi) in w.iter().enumerate() {
        dist.add_affine_square(SparseVec::from_pairs([(wi, 1.0)]), -w0[i]);
    }
    p.quadratic.push(dist);
    let mut ball = QuadConstraint::linear(ConstraintTag::Power, SparseVec::new(), -1.0);
    for &wi in &w {
        ball.add_affine_square(SparseVec::from_pairs([(wi, 1.0)]), 0.0);
    }
    p.quadratic.push(ball);
    let sol = solve(&p, &[0.0, 0.0, 0.0, 0.0, 10.0], &SolverOptions::default()).unwrap();
    for (i, &wi) in w.iter().enumerate() {
        assert!((sol.x[wi] - w0[i] / 2.0).abs() < 1e-6, "{:?}", sol.x);
    }
    assert!((sol.x[t] - 1.0).abs() < 1e-6);
}

#[test]
fn equality_splits_rate_across_exponentials() {
    // max R s.t. R = e1 + e2, 2^{e_j} ≤ u_j ≤ c_j
    let caps = [3.0, 5.0];
    let mut p = ConvexProgram::new();
    let r = p.add_var(VarKind::Rate, 1.0);
    p.objective[r] = -1.0;
    p.quadratic.push(bound(r));
    let mut row = SparseVec::from_pairs([(r, 1.0)]);
    let mut start = vec![0.1];
    for &c in &caps {
        let e = p.add_var(VarKind::Exponent, 1.0);
        let u = p.add_var(VarKind::Aux, 1.0);
        p.exponential.push(ExpConstraint { e, u, bandwidth: 1.0 });
        p.quadratic.push(le(vec![(u, 1.0)], c));
        row.push(e, -1.0);
        start.extend([0.05, 1.5]);
    }
    p.equalities.push(LinearEquality { row, rhs: 0.0 });
    for method in [NewtonMethod::Structured, NewtonMethod::Dense] {
        let opts = SolverOptions {
            newton: method,
            ..Default::default()
        };
        let sol = solve(&p, &start, &opts).unwrap();
        let expect = caps.iter().map(|c: &f64| c.log2()).sum::<f64>();
        assert!((sol.x[r] - expect).abs() < 1e-7, "{method:?}: {}", sol.x[r]);
        assert!(stationarity(&p, &sol.x, &sol.ineq_duals, &sol.eq_duals) < 1e-7);
    }
}

#[test]
fn start_outside_domain_is_rejected() {
    let mut p = ConvexProgram::new();
    let x = p.add_var(VarKind::Free, 1.0);
    p.objective[x] = 1.0;
    p.quadratic.push(bound(x));
    let opts = SolverOptions::default();
    assert!(matches!(solve(&p, &[f64::NAN], &opts), Err(SolverError::OutsideDomain)));
    // infeasible, boundary and interior starts all reach the optimum
    for x0 in [-1.0, 0.0, 1.0] {
        let sol = solve(&p, &[x0], &opts).unwrap();
        assert!(sol.x[0].abs() < 1e-8, "from {x0}: {}", sol.x[0]);
    }
    // the exponential row needs u > 0
    let e = p.add_var(VarKind::Exponent, 1.0);
    let u = p.add_var(VarKind::Aux, 1.0);
    p.exponential.push(ExpConstraint { e, u, bandwidth: 1.0 });
    assert!(matches!(
        solve(&p, &[1.0, 0.0, -1.0], &opts),
        Err(SolverError::OutsideDomain)
    ));
}

/// Random bounded LP `max cᵀx, Ax ≤ b, x ≥ 0` with positive `A`, `b`.
fn random_lp(seed: u64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..7);
    let m = rng.random_range(1..7);
    let c = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();
    let a = (0..m)
        .map(|_| (0..n).map(|_| rng.random_range(0.05..1.0)).collect())
        .collect();
    let b = (0..m).map(|_| rng.random_range(0.5..3.0)).collect();
    (c, a, b)
}

fn lp_program(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> ConvexProgram {
    let mut p = ConvexProgram::new();
    for &cj in c {
        let v = p.add_var(VarKind::Free, 1.0);
        p.objective[v] = -cj;
        p.quadratic.push(bound(v));
    }
    for (row, &bi) in a.iter().zip(b) {
        p.quadratic.push(le(row.iter().copied().enumerate().collect(), bi));
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_matches_simplex(seed in any::<u64>(), dense in any::<bool>()) {
        let (c, a, b) = random_lp(seed);
        let oracle = simplex_max(&c, &a, &b).unwrap();
        let p = lp_program(&c, &a, &b);
        // strictly interior start
        let start = vec![1e-3; c.len()];
        let opts = SolverOptions {
            newton: if dense { NewtonMethod::Dense } else { NewtonMethod::Structured },
            ..Default::default()
        };
        let sol = solve(&p, &start, &opts).unwrap();
        let value = -sol.objective;
        prop_assert!((value - oracle.value).abs() <= 1e-7 * (1.0 + oracle.value.abs()),
            "ipm {value} simplex {}", oracle.value);
        // independent feasibility re-check
        prop_assert!(p.max_violation(&sol.x) <= 1e-8);
        // KKT residuals
        prop_assert!(stationarity(&p, &sol.x, &sol.ineq_duals, &sol.eq_duals) <= 1e-7);
        let comp = p.inequality_values(&sol.x).iter().zip(&sol.ineq_duals)
            .fold(0.0f64, |m, (f, l)| m.max((f * l).abs()));
        prop_assert!(comp <= 1e-7 * (1.0 + oracle.value.abs()));
        prop_assert!(sol.ineq_duals.iter().all(|l| *l > 0.0));
    }

    #[test]
    fn never_worse_than_start(seed in any::<u64>(), frac in 0.01f64..0.99) {
        let (c, a, b) = random_lp(seed);
        let p = lp_program(&c, &a, &b);
        // interior point along the ray toward the simplex optimum, nudged inside
        let opt = simplex_max(&c, &a, &b).unwrap();
        let start: Vec<f64> = opt.x.iter().map(|v| frac * v + 1e-6).collect();
        prop_assume!(p.inequality_values(&start).iter().all(|v| *v < 0.0));
        let sol = solve(&p, &start, &SolverOptions::default()).unwrap();
        prop_assert!(sol.objective <= p.objective_value(&start) + 1e-12);
    }
}
