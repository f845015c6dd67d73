//! Convex approximation of the auxiliary-variable problem around an iterate.

use num_complex::Complex64;

use super::{Problem, SolutionState, VarLayout};
use crate::complex::inner;
use crate::error::{Error, Result};
use crate::kernel::{ConstraintTag, ConvexProgram, ExpConstraint, LinearEquality, QuadConstraint, SparseVec, VarKind};
use crate::region::{link_gains, signal_and_interference};

/// Real-stacked linear forms `a·x = Re(h^H w)` and `b·x = Im(h^H w)` for beam `(g, n)`.
pub(crate) fn beam_forms(layout: &VarLayout, h: &[Complex64], g: usize, n: usize) -> (SparseVec, SparseVec) {
    let mut a = SparseVec::new();
    let mut b = SparseVec::new();
    for (m, z) in h.iter().enumerate() {
        let (re, im) = (layout.beam(n, g, m, false), layout.beam(n, g, m, true));
        // conj(h)·w = (h_r w_r + h_i w_i) + j (h_r w_i − h_i w_r)
        a.push(re, z.re);
        a.push(im, z.im);
        b.push(re, -z.im);
        b.push(im, z.re);
    }
    (a, b)
}

/// Value of the difference-of-convex constraint
/// `I + σ² − (T + I + σ²)/u` at beams `w` and auxiliary `u`.
pub fn dc_constraint_value(
    problem: &Problem,
    w: &crate::region::BeamformerSet,
    u: f64,
    user: usize,
    n: usize,
    set: &[usize],
) -> f64 {
    let gains = link_gains(w, problem.channel, user, n);
    let (t, i) = signal_and_interference(&gains, problem.layers, user, set);
    let noise = problem.params.noise;
    i + noise - (t + i + noise) / u
}

/// Value of the linearized constraint `L(w, u; w0, u0)`: the convex part kept,
/// the quotient `(T + I + σ²)/u` replaced by its first-order expansion at `(w0, u0)`.
#[allow(clippy::too_many_arguments)]
pub fn linearized_dc_value(
    problem: &Problem,
    w: &crate::region::BeamformerSet,
    u: f64,
    w0: &crate::region::BeamformerSet,
    u0: f64,
    user: usize,
    n: usize,
    set: &[usize],
) -> f64 {
    let h = problem.channel.h(user, n);
    let noise = problem.params.noise;
    let outside: Vec<usize> = (0..problem.layers.layers().len())
        .filter(|&g| !problem.layers.layers()[g].contains(user))
        .collect();
    let interference: f64 = outside.iter().map(|&g| inner(h, w.get(g, n)).norm_sqr()).sum();
    let mut q0 = noise;
    let mut cross = 0.0;
    for &g in set.iter().chain(&outside) {
        let z0 = inner(h, w0.get(g, n));
        let z = inner(h, w.get(g, n));
        q0 += z0.norm_sqr();
        cross += (z0.conj() * z).re;
    }
    interference + noise + q0 * u / (u0 * u0) - (2.0 * cross + 2.0 * noise) / u0
}

/// Builds the convex subproblem around `prev` (minimization form: the
/// objective is the negated weighted sum rate).
pub fn build_subproblem(problem: &Problem, prev: &SolutionState) -> Result<ConvexProgram> {
    let layout = VarLayout::new(problem)?;
    if let Some(bad) = prev.u.iter().find(|u| !(**u > 0.0)) {
        return Err(Error::Config(format!(
            "auxiliary u must be positive at the expansion point, got {bad}"
        )));
    }
    let sets = problem.layers.decoding_sets()?;
    let nsub = problem.layers.sub_messages().len();
    let (nl, ns, m) = (layout.layers, layout.subcarriers, layout.antennas);
    let params = &problem.params;

    let mut p = ConvexProgram::new();
    let beam_scale = (params.power / (ns * nl) as f64).sqrt();
    for _ in 0..layout.beam_count() {
        p.add_var(VarKind::Beam, beam_scale);
    }
    for _ in 0..nsub {
        p.add_var(VarKind::Rate, params.bandwidth);
    }
    for _ in 0..sets.len() * ns {
        p.add_var(VarKind::Exponent, params.bandwidth);
    }
    for j in 0..sets.len() {
        for n in 0..ns {
            p.add_var(VarKind::Aux, prev.u[j * ns + n]);
        }
    }
    debug_assert_eq!(p.num_vars(), layout.len());

    for (s, sm) in problem.layers.sub_messages().iter().enumerate() {
        p.objective[layout.rate(s)] = -problem.weights[sm.group];
    }

    // total power
    let mut power = QuadConstraint::linear(ConstraintTag::Power, SparseVec::new(), -params.power);
    for i in 0..layout.beam_count() {
        power.squares.push(SparseVec::from_pairs([(i, 1.0)]));
    }
    p.quadratic.push(power);

    for s in 0..nsub {
        p.quadratic.push(QuadConstraint::linear(
            ConstraintTag::Bound,
            SparseVec::from_pairs([(layout.rate(s), -1.0)]),
            0.0,
        ));
    }

    // Σ_{G∈𝒳} R̃_G = Σ_n e
    for (j, d) in sets.iter().enumerate() {
        let mut row = SparseVec::new();
        for (s, sm) in problem.layers.sub_messages().iter().enumerate() {
            if d.layers.contains(&sm.layer) {
                row.push(layout.rate(s), 1.0);
            }
        }
        for n in 0..ns {
            row.push(layout.e(j, n), -1.0);
        }
        p.equalities.push(LinearEquality { row, rhs: 0.0 });
    }

    for j in 0..sets.len() {
        for n in 0..ns {
            p.exponential.push(ExpConstraint {
                e: layout.e(j, n),
                u: layout.u(j, n),
                bandwidth: params.bandwidth,
            });
        }
    }

    // linearized DC constraints
    let noise = params.noise;
    for (j, d) in sets.iter().enumerate() {
        let user = d.user;
        let outside: Vec<usize> = (0..nl)
            .filter(|&g| !problem.layers.layers()[g].contains(user))
            .collect();
        for n in 0..ns {
            let h = problem.channel.h(user, n);
            let u0 = prev.u[j * ns + n];
            let mut row = QuadConstraint::linear(ConstraintTag::Linearized, SparseVec::new(), 0.0);
            for &g in &outside {
                let (a, b) = beam_forms(&layout, h, g, n);
                row.squares.push(a);
                row.squares.push(b);
            }
            let mut q0 = noise;
            for &g in d.layers.iter().chain(&outside) {
                let z0 = inner(h, prev.w.get(g, n));
                q0 += z0.norm_sqr();
                let (a, b) = beam_forms(&layout, h, g, n);
                let k = -2.0 / u0;
                for (&i, &v) in a.idx.iter().zip(&a.val) {
                    row.linear.push(i, k * z0.re * v);
                }
                for (&i, &v) in b.idx.iter().zip(&b.val) {
                    row.linear.push(i, k * z0.im * v);
                }
            }
            row.linear.push(layout.u(j, n), q0 / (u0 * u0));
            row.constant = noise - 2.0 * noise / u0;
            debug_assert!(row.squares.iter().all(|q| q.len() == 2 * m));
            p.quadratic.push(row);
        }
    }
    Ok(p)
}
