//! Independent check of the KKT conditions at a returned point.
//!
//! Gradients are those of the auxiliary-variable problem itself (not of any
//! linearization), evaluated at the state. Residuals are measured in the
//! variable scales used by the solver and normalized by the objective gradient.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::subproblem::beam_forms;
use super::{variable_scales, Multipliers, Problem, SolutionState, VarLayout};
use crate::complex::inner;
use crate::error::Result;
use crate::region::{check_feasibility, link_gains, signal_and_interference, FeasibilityReport};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KktReport {
    pub tol: f64,
    pub feasibility: FeasibilityReport,
    /// Largest `|2^{e/B} − u| / u`.
    pub activity_gap: f64,
    /// `‖s ⊙ ∇ℒ‖∞ / ‖s ⊙ ∇f₀‖∞` with `s` the variable scales.
    pub stationarity: f64,
    /// `Σ λ_i |g_i| / max(|f₀|, 1)`.
    pub complementarity: f64,
    /// Whether the multipliers were re-estimated on the active set.
    pub refined: bool,
    pub feasible: bool,
    pub active: bool,
    pub stationary: bool,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.feasible && self.active && self.stationary
    }
}

/// Constraint values and scaled Jacobian of the auxiliary-variable problem,
/// rows ordered power, rate bounds, DC rows, exponential rows, equalities.
struct Linearization {
    values: Vec<f64>,
    /// Per-row magnitude used to judge activity.
    magnitudes: Vec<f64>,
    jac: DMatrix<f64>,
    grad_obj: DVector<f64>,
    inequalities: usize,
}

fn linearize(problem: &Problem, layout: &VarLayout, state: &SolutionState) -> Result<Linearization> {
    let scales = variable_scales(problem, layout);
    let x = state.to_vector(layout);
    let sets = problem.layers.decoding_sets()?;
    let subs = problem.layers.sub_messages();
    let (nl, ns) = (layout.layers, layout.subcarriers);
    let params = &problem.params;
    let cells = sets.len() * ns;
    let rows = 1 + subs.len() + 2 * cells + sets.len();
    let mut jac = DMatrix::zeros(rows, layout.len());
    let mut values = vec![0.0; rows];
    let mut magnitudes = vec![1.0; rows];

    values[0] = state.w.total_power() - params.power;
    magnitudes[0] = params.power;
    for i in 0..layout.beam_count() {
        jac[(0, i)] = 2.0 * x[i];
    }
    for s in 0..subs.len() {
        values[1 + s] = -x[layout.rate(s)];
        magnitudes[1 + s] = params.bandwidth;
        jac[(1 + s, layout.rate(s))] = -1.0;
    }
    let noise = params.noise;
    let dc0 = 1 + subs.len();
    let ex0 = dc0 + cells;
    let eq0 = ex0 + cells;
    for (j, d) in sets.iter().enumerate() {
        let user = d.user;
        for n in 0..ns {
            let r = dc0 + j * ns + n;
            let u = state.u[j * ns + n];
            let h = problem.channel.h(user, n);
            let gains = link_gains(&state.w, problem.channel, user, n);
            let (t, i) = signal_and_interference(&gains, problem.layers, user, &d.layers);
            let q = t + i + noise;
            values[r] = i + noise - q / u;
            magnitudes[r] = i + noise + q / u;
            for g in 0..nl {
                let inside = d.layers.contains(&g);
                let outside = !problem.layers.layers()[g].contains(user);
                let coef = match (inside, outside) {
                    (true, _) => -1.0 / u,
                    (false, true) => 1.0 - 1.0 / u,
                    (false, false) => continue,
                };
                let z = inner(h, state.w.get(g, n));
                let (a, b) = beam_forms(layout, h, g, n);
                for (&idx, &v) in a.idx.iter().zip(&a.val) {
                    jac[(r, idx)] += 2.0 * coef * z.re * v;
                }
                for (&idx, &v) in b.idx.iter().zip(&b.val) {
                    jac[(r, idx)] += 2.0 * coef * z.im * v;
                }
            }
            jac[(r, layout.u(j, n))] = q / (u * u);

            let r = ex0 + j * ns + n;
            let e = state.e[j * ns + n];
            let p = (e / params.bandwidth).exp2();
            values[r] = p - u;
            magnitudes[r] = u.abs().max(p);
            jac[(r, layout.e(j, n))] = p * std::f64::consts::LN_2 / params.bandwidth;
            jac[(r, layout.u(j, n))] = -1.0;
        }
        let r = eq0 + j;
        let mut total = 0.0;
        for (s, sm) in subs.iter().enumerate() {
            if d.layers.contains(&sm.layer) {
                jac[(r, layout.rate(s))] = 1.0;
                total += x[layout.rate(s)];
            }
        }
        for n in 0..ns {
            jac[(r, layout.e(j, n))] = -1.0;
            total -= x[layout.e(j, n)];
        }
        values[r] = total;
        magnitudes[r] = params.bandwidth;
    }
    let mut grad_obj = DVector::zeros(layout.len());
    for (s, sm) in subs.iter().enumerate() {
        grad_obj[layout.rate(s)] = -problem.weights[sm.group];
    }
    // move to scaled variables
    for (c, s) in scales.iter().enumerate() {
        jac.column_mut(c).scale_mut(*s);
        grad_obj[c] *= s;
    }
    Ok(Linearization {
        values,
        magnitudes,
        jac,
        grad_obj,
        inequalities: eq0,
    })
}

fn stationarity(lin: &Linearization, lambda: &DVector<f64>) -> f64 {
    let r = &lin.grad_obj + lin.jac.tr_mul(lambda);
    r.amax() / lin.grad_obj.amax().max(f64::MIN_POSITIVE)
}

fn complementarity(lin: &Linearization, lambda: &DVector<f64>, objective: f64) -> f64 {
    let sum: f64 = (0..lin.inequalities).map(|i| lambda[i] * lin.values[i].abs()).sum();
    sum / objective.abs().max(1.0)
}

/// Nonnegative least-squares estimate of the multipliers of the rows in
/// `active` (equality rows unsigned): Lawson–Hanson active-set iteration on
/// `min ½‖∇f₀ + Jᵀλ‖²`.
fn estimate_multipliers(lin: &Linearization, active: &[usize]) -> DVector<f64> {
    // rows normalized to unit length; multipliers are mapped back at the end
    let norms: Vec<f64> = active
        .iter()
        .map(|&i| lin.jac.row(i).norm().max(f64::MIN_POSITIVE))
        .collect();
    let a = DMatrix::from_fn(active.len(), lin.jac.ncols(), |k, c| lin.jac[(active[k], c)] / norms[k]);
    let gram = &a * a.transpose();
    let b = &a * &lin.grad_obj;
    let signed: Vec<bool> = active.iter().map(|&i| i < lin.inequalities).collect();
    let n = active.len();
    let ridge = 1e-13 * gram.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * b.amax().max(f64::MIN_POSITIVE);
    // minimizer over the passive set, others at zero
    let solve_on = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let mut z = DVector::zeros(n);
        if idx.is_empty() {
            return z;
        }
        let g = DMatrix::from_fn(idx.len(), idx.len(), |p, q| {
            gram[(idx[p], idx[q])] + if p == q { ridge } else { 0.0 }
        });
        let rhs = DVector::from_fn(idx.len(), |p, _| -b[idx[p]]);
        if let Some(ch) = g.cholesky() {
            for (p, v) in ch.solve(&rhs).iter().enumerate() {
                z[idx[p]] = *v;
            }
        }
        z
    };
    let mut passive: Vec<bool> = signed.iter().map(|s| !s).collect();
    let mut lambda = solve_on(&passive);
    for _ in 0..3 * n {
        let w = -(&gram * &lambda + &b);
        let Some(j) = (0..n)
            .filter(|&i| signed[i] && !passive[i] && w[i] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let z = solve_on(&passive);
            let blocking: Vec<usize> = (0..n).filter(|&i| signed[i] && passive[i] && z[i] <= 0.0).collect();
            if blocking.is_empty() {
                lambda = z;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&i| lambda[i] / (lambda[i] - z[i]))
                .fold(1.0f64, f64::min);
            lambda += (&z - &lambda) * alpha;
            for i in 0..n {
                if signed[i] && passive[i] && lambda[i] <= 0.0 {
                    passive[i] = false;
                    lambda[i] = 0.0;
                }
            }
        }
    }
    let mut full = DVector::zeros(lin.values.len());
    for (k, &i) in active.iter().enumerate() {
        full[i] = if signed[k] { lambda[k].max(0.0) } else { lambda[k] } / norms[k];
    }
    full
}

/// Checks feasibility, activity of the exponential constraints and
/// stationarity at `state`.
///
/// With `multipliers` (from the last subproblem) the residual is first
/// evaluated with those; if it exceeds `tol`, or none are given, the
/// multipliers are re-estimated on the constraints that are active within
/// `√tol` and the smaller residual is reported.
pub fn verify_kkt(
    problem: &Problem,
    state: &SolutionState,
    multipliers: Option<&Multipliers>,
    tol: f64,
) -> Result<KktReport> {
    problem.validate()?;
    let layout = VarLayout::new(problem)?;
    let feasibility = check_feasibility(
        &state.w,
        &state.rates,
        problem.channel,
        problem.layers,
        &problem.params,
        tol,
    )?;
    let activity_gap = state.activity_gap(problem.params.bandwidth);
    let lin = linearize(problem, &layout, state)?;
    let objective = state.rates.weighted_sum(problem.weights);

    let mut best: Option<(f64, f64)> = None;
    if let Some(mu) = multipliers {
        let lambda = DVector::from_iterator(
            lin.values.len(),
            std::iter::once(mu.power)
                .chain(mu.rate_bounds.iter().copied())
                .chain(mu.dc.iter().copied())
                .chain(mu.exp.iter().copied())
                .chain(mu.rate_sum.iter().copied()),
        );
        best = Some((stationarity(&lin, &lambda), complementarity(&lin, &lambda, objective)));
    }
    let mut refined = false;
    if best.is_none_or(|(s, _)| s > tol) {
        let act = tol.sqrt();
        let active: Vec<usize> = (0..lin.values.len())
            .filter(|&i| i >= lin.inequalities || lin.values[i].abs() <= act * lin.magnitudes[i])
            .collect();
        let lambda = estimate_multipliers(&lin, &active);
        let candidate = (stationarity(&lin, &lambda), complementarity(&lin, &lambda, objective));
        if best.is_none_or(|(s, _)| candidate.0 < s) {
            best = Some(candidate);
            refined = true;
        }
    }
    let (stationarity, complementarity) = best.expect("set above");
    Ok(KktReport {
        tol,
        feasible: feasibility.feasible,
        feasibility,
        activity_gap,
        active: activity_gap <= tol,
        stationarity,
        complementarity,
        refined,
        stationary: stationarity <= tol,
    })
}
