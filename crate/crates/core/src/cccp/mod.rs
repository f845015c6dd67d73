//! Concave-convex procedure for weighted-sum-rate maximization.
//!
//! The rate constraints are rewritten with auxiliary variables `e` and `u`
//! (one pair per user, decoding set and subcarrier) as
//!
//! ```text
//! I + σ² − (T + I + σ²)/u ≤ 0,   Σ_{G∈𝒳} R̃_G = Σ_n e,   2^{e/B} ≤ u,
//! ```
//!
//! where `T` is the desired power of the decoding set and `I` the power of the
//! layers the user cannot decode. The quotient is convex, so linearizing it at
//! the current iterate yields a convex inner approximation; iterating gives a
//! non-decreasing objective and converges to a KKT point.

mod kkt;
mod subproblem;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::groupcast::{assemble_rates, LayerStructure, RateAllocation};
use crate::kernel::{self, SolveStatus, SolverOptions};
use crate::region::{check_dims, link_gains, signal_and_interference, BeamformerSet, SystemParams};

pub use kkt::{verify_kkt, KktReport};
pub use subproblem::{build_subproblem, dc_constraint_value, linearized_dc_value};

/// Everything that defines one weighted-sum-rate instance.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub layers: &'a LayerStructure,
    pub channel: &'a ChannelState,
    /// One weight per message unit, in the order of [`LayerStructure::groups`].
    pub weights: &'a [f64],
    pub params: SystemParams,
}

impl Problem<'_> {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.channel.users() != self.layers.users() {
            return Err(Error::Dimension(
                "channel and demands disagree on the user count".into(),
            ));
        }
        if self.weights.len() != self.layers.groups().len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} message units",
                self.weights.len(),
                self.layers.groups().len()
            )));
        }
        if self.weights.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::Config("weights must be nonnegative".into()));
        }
        self.layers.decoding_sets()?;
        Ok(())
    }
}

/// Positions of the variables in the stacked vector `(w, R, e, u)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct VarLayout {
    layers: usize,
    subcarriers: usize,
    antennas: usize,
    subs: usize,
    sets: usize,
}

impl VarLayout {
    pub(crate) fn new(problem: &Problem) -> Result<Self> {
        Ok(VarLayout {
            layers: problem.layers.layers().len(),
            subcarriers: problem.channel.subcarriers(),
            antennas: problem.channel.antennas(),
            subs: problem.layers.sub_messages().len(),
            sets: problem.layers.decoding_sets()?.len(),
        })
    }

    pub(crate) fn beam_count(&self) -> usize {
        2 * self.layers * self.subcarriers * self.antennas
    }

    pub(crate) fn beam(&self, n: usize, g: usize, m: usize, imag: bool) -> usize {
        ((n * self.layers + g) * self.antennas + m) * 2 + imag as usize
    }

    pub(crate) fn rate(&self, s: usize) -> usize {
        self.beam_count() + s
    }

    pub(crate) fn e(&self, j: usize, n: usize) -> usize {
        self.beam_count() + self.subs + j * self.subcarriers + n
    }

    pub(crate) fn u(&self, j: usize, n: usize) -> usize {
        self.beam_count() + self.subs + (self.sets + j) * self.subcarriers + n
    }

    pub(crate) fn len(&self) -> usize {
        self.beam_count() + self.subs + 2 * self.sets * self.subcarriers
    }
}

/// A point `(w, R, e, u)`; `e` and `u` are indexed by decoding set, then subcarrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionState {
    pub w: BeamformerSet,
    pub rates: RateAllocation,
    pub e: Vec<f64>,
    pub u: Vec<f64>,
    pub iteration: usize,
    /// `Σ_S α_S R_S`.
    pub objective: f64,
}

impl SolutionState {
    /// The stacked variable vector used by [`build_subproblem`].
    pub fn as_vector(&self, problem: &Problem) -> Result<Vec<f64>> {
        Ok(self.to_vector(&VarLayout::new(problem)?))
    }

    pub(crate) fn to_vector(&self, layout: &VarLayout) -> Vec<f64> {
        let mut x = vec![0.0; layout.len()];
        for n in 0..layout.subcarriers {
            for g in 0..layout.layers {
                for (m, z) in self.w.get(g, n).iter().enumerate() {
                    x[layout.beam(n, g, m, false)] = z.re;
                    x[layout.beam(n, g, m, true)] = z.im;
                }
            }
        }
        for (s, r) in self.rates.sub_rates.iter().enumerate() {
            x[layout.rate(s)] = *r;
        }
        let base = layout.e(0, 0);
        x[base..base + self.e.len()].copy_from_slice(&self.e);
        let base = layout.u(0, 0);
        x[base..base + self.u.len()].copy_from_slice(&self.u);
        x
    }

    pub(crate) fn from_vector(problem: &Problem, layout: &VarLayout, x: &[f64], iteration: usize) -> Result<Self> {
        let mut w = BeamformerSet::zeros(layout.layers, layout.subcarriers, layout.antennas);
        for n in 0..layout.subcarriers {
            for g in 0..layout.layers {
                for (m, z) in w.get_mut(g, n).iter_mut().enumerate() {
                    *z = Complex64::new(x[layout.beam(n, g, m, false)], x[layout.beam(n, g, m, true)]);
                }
            }
        }
        // interior-point iterates keep R > 0; clamp rounding only
        let sub_rates: Vec<f64> = (0..layout.subs).map(|s| x[layout.rate(s)].max(0.0)).collect();
        let rates = assemble_rates(problem.layers, &sub_rates)?;
        let ne = layout.sets * layout.subcarriers;
        let e = x[layout.e(0, 0)..layout.e(0, 0) + ne].to_vec();
        let u = x[layout.u(0, 0)..layout.u(0, 0) + ne].to_vec();
        let objective = rates.weighted_sum(problem.weights);
        Ok(SolutionState {
            w,
            rates,
            e,
            u,
            iteration,
            objective,
        })
    }

    /// Largest relative gap `|2^{e/B} − u| / u` of the exponential constraints.
    pub fn activity_gap(&self, bandwidth: f64) -> f64 {
        self.e
            .iter()
            .zip(&self.u)
            .map(|(e, u)| ((e / bandwidth).exp2() - u).abs() / u.abs())
            .fold(0.0, f64::max)
    }

    /// Sets `u = 2^{e/B}`, making every exponential constraint active.
    pub fn tighten(&mut self, bandwidth: f64) {
        for (e, u) in self.e.iter().zip(self.u.iter_mut()) {
            *u = (e / bandwidth).exp2();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CccpConfig {
    /// Stop when `‖x⁽ⁱ⁾ − x⁽ⁱ⁻¹⁾‖₂ ≤ ε·‖x⁽ⁱ⁻¹⁾‖₂`, with `x` measured in variable scales.
    pub epsilon: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Fraction of the rate capacity granted to the random starting points.
    pub start_margin: f64,
    pub solver: SolverOptions,
}

impl Default for CccpConfig {
    fn default() -> Self {
        CccpConfig {
            epsilon: 1e-4,
            max_iter: 100,
            restarts: 3,
            seed: 0,
            start_margin: 0.05,
            solver: SolverOptions::default(),
        }
    }
}

impl CccpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_iter == 0 || self.restarts == 0 {
            return Err(Error::Config("epsilon, max_iter and restarts must be positive".into()));
        }
        if !(self.start_margin > 0.0 && self.start_margin < 0.5) {
            return Err(Error::Config("start_margin must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    IterationCap,
    SubproblemFailure,
    /// Some rate constraint has zero capacity, so the feasible set has no interior.
    NoInterior,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub step_norm: f64,
    pub subproblem: SolveStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub restart: usize,
    pub seed: u64,
    /// Objective of the (interior) starting point.
    pub initial_objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    /// Diagnostic of a failed subproblem, if any.
    pub failure: Option<String>,
}

impl SolveTrace {
    pub fn objectives(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.iterations.iter().map(|r| r.objective))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Multipliers of the last subproblem, in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub power: f64,
    /// Per sub-message, for `R ≥ 0`.
    pub rate_bounds: Vec<f64>,
    /// Per decoding set and subcarrier, for the linearized constraints.
    pub dc: Vec<f64>,
    /// Per decoding set and subcarrier, for `2^{e/B} ≤ u`.
    pub exp: Vec<f64>,
    /// Per decoding set.
    pub rate_sum: Vec<f64>,
}

impl Multipliers {
    fn from_solution(sol: &kernel::Solution, subs: usize, cells: usize) -> Self {
        let q = &sol.ineq_duals;
        Multipliers {
            power: q[0],
            rate_bounds: q[1..1 + subs].to_vec(),
            // quadratic rows: power, bounds, linearized; then exponential rows
            dc: q[1 + subs..1 + subs + cells].to_vec(),
            exp: q[1 + subs + cells..].to_vec(),
            rate_sum: sol.eq_duals.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CccpOutcome {
    pub state: SolutionState,
    pub trace: SolveTrace,
    pub multipliers: Option<Multipliers>,
    /// Traces of every restart, best or not.
    pub restarts: Vec<SolveTrace>,
}

/// Seed of restart `r` derived from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the combined input
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn matched_direction(
    channel: &ChannelState,
    users: impl Iterator<Item = usize>,
    n: usize,
    mix: &[f64],
) -> Vec<Complex64> {
    let m = channel.antennas();
    let mut v = vec![Complex64::new(0.0, 0.0); m];
    for (k, c) in users.zip(mix) {
        let h = channel.h(k, n);
        let norm = crate::complex::norm_sqr(h).sqrt();
        if norm > 0.0 {
            v.iter_mut().zip(h).for_each(|(a, b)| *a += b * (c / norm));
        }
    }
    let norm = crate::complex::norm_sqr(&v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|a| *a /= norm);
    }
    v
}

/// A feasible starting point: beams along random convex mixtures of the
/// matched-filter directions of each layer's users, total power `0.9·P`,
/// `R = 0`, `e = 0`, `u = 1`.
pub fn initialize(problem: &Problem, seed: u64) -> Result<SolutionState> {
    problem.validate()?;
    let layers = problem.layers;
    let (nl, ns, m) = (
        layers.layers().len(),
        problem.channel.subcarriers(),
        problem.channel.antennas(),
    );
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut w = BeamformerSet::zeros(nl, ns, m);
    for n in 0..ns {
        for (g, set) in layers.layers().iter().enumerate() {
            let mix: Vec<f64> = set.users().map(|_| rng.random_range(0.05..1.0)).collect();
            let power: f64 = rng.random_range(0.05..1.0);
            let dir = matched_direction(problem.channel, set.users(), n, &mix);
            for (dst, d) in w.get_mut(g, n).iter_mut().zip(dir) {
                *dst = d * power.sqrt();
            }
        }
    }
    let total = w.total_power();
    if total > 0.0 {
        w.scale((0.9 * problem.params.power / total).sqrt());
    }
    let cells = layers.decoding_sets()?.len() * ns;
    Ok(SolutionState {
        w,
        rates: RateAllocation::zero(layers),
        e: vec![0.0; cells],
        u: vec![1.0; cells],
        iteration: 0,
        objective: 0.0,
    })
}

/// Moves `(w, R)` to a strictly feasible point of the auxiliary-variable
/// problem, shrinking the rates by a relative `margin` at most.
///
/// Layers with a zero beam get a faint matched beam so that every rate
/// constraint has positive capacity. Returns `None` when some capacity is
/// still zero (a user with an all-zero channel).
pub fn lift(problem: &Problem, state: &SolutionState, margin: f64) -> Result<Option<SolutionState>> {
    let layers = problem.layers;
    check_dims(&state.w, problem.channel, layers)?;
    let (nl, ns) = (layers.layers().len(), problem.channel.subcarriers());
    let params = &problem.params;
    let mut w = state.w.clone();
    let faint = 1e-10 * params.power / (ns * nl) as f64;
    for n in 0..ns {
        for (g, set) in layers.layers().iter().enumerate() {
            if crate::complex::norm_sqr(w.get(g, n)) < faint {
                let mix = vec![1.0; set.len()];
                let dir = matched_direction(problem.channel, set.users(), n, &mix);
                for (dst, d) in w.get_mut(g, n).iter_mut().zip(dir) {
                    *dst = d * faint.sqrt();
                }
            }
        }
    }
    let cap_power = (1.0 - margin.min(1e-3)) * params.power;
    let total = w.total_power();
    if total > cap_power {
        w.scale((cap_power / total).sqrt());
    }

    let sets = layers.decoding_sets()?;
    // b = (T + I + σ²)/(I + σ²) per decoding set and subcarrier
    let mut b = vec![0.0; sets.len() * ns];
    for user in 1..=layers.users() {
        for n in 0..ns {
            let gains = link_gains(&w, problem.channel, user, n);
            for (j, d) in sets.iter().enumerate().filter(|(_, d)| d.user == user) {
                let (t, i) = signal_and_interference(&gains, layers, user, &d.layers);
                b[j * ns + n] = (t + i + params.noise) / (i + params.noise);
            }
        }
    }
    let cap: Vec<f64> = (0..sets.len())
        .map(|j| (0..ns).map(|n| params.bandwidth * b[j * ns + n].log2()).sum())
        .collect();
    if cap.iter().any(|c: &f64| !(*c > 0.0)) {
        return Ok(None);
    }
    let subs = layers.sub_messages();
    let layer_sum = |rates: &[f64], j: usize| -> f64 {
        subs.iter()
            .zip(rates)
            .filter(|(sm, _)| sets[j].layers.contains(&sm.layer))
            .map(|(_, r)| r)
            .sum()
    };
    let rho = (0..sets.len())
        .map(|j| layer_sum(&state.rates.sub_rates, j) / cap[j])
        .fold(0.0, f64::max);
    let gamma = if rho > 0.0 {
        ((1.0 - 2.0 * margin) / rho).min(1.0)
    } else {
        1.0
    };
    let sub_rates: Vec<f64> = subs
        .iter()
        .zip(&state.rates.sub_rates)
        .map(|(sm, r)| {
            let tight = sets
                .iter()
                .zip(&cap)
                .filter(|(d, _)| d.layers.contains(&sm.layer))
                .map(|(_, c)| *c)
                .fold(f64::INFINITY, f64::min);
            gamma * r + margin * tight / subs.len() as f64
        })
        .collect();
    let mut e = vec![0.0; sets.len() * ns];
    let mut u = vec![0.0; sets.len() * ns];
    for j in 0..sets.len() {
        let total = layer_sum(&sub_rates, j);
        let theta = 0.5 * (1.0 + total / cap[j]);
        let slack = theta * cap[j] - total;
        let shrink = -slack / (2.0 * ns as f64 * params.bandwidth);
        for n in 0..ns {
            let log_u = theta * b[j * ns + n].log2() + shrink;
            u[j * ns + n] = log_u.exp2();
            e[j * ns + n] = params.bandwidth * log_u - slack / (2.0 * ns as f64);
        }
    }
    let rates = assemble_rates(layers, &sub_rates)?;
    let objective = rates.weighted_sum(problem.weights);
    Ok(Some(SolutionState {
        w,
        rates,
        e,
        u,
        iteration: state.iteration,
        objective,
    }))
}

/// Scaled Euclidean norm used by the stopping rule.
fn scaled_norm(x: &[f64], scale: &[f64]) -> f64 {
    x.iter().zip(scale).map(|(v, s)| (v / s).powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn variable_scales(problem: &Problem, layout: &VarLayout) -> Vec<f64> {
    let mut s = vec![1.0; layout.len()];
    let beam = (problem.params.power / (layout.subcarriers * layout.layers) as f64).sqrt();
    s[..layout.beam_count()].iter_mut().for_each(|v| *v = beam);
    s[layout.beam_count()..layout.u(0, 0)]
        .iter_mut()
        .for_each(|v| *v = problem.params.bandwidth);
    s
}

struct RunResult {
    state: SolutionState,
    trace: SolveTrace,
    multipliers: Option<Multipliers>,
}

/// One CCCP run from the strictly feasible point `start`.
fn run_from(
    problem: &Problem,
    start: SolutionState,
    config: &CccpConfig,
    restart: usize,
    seed: u64,
) -> Result<RunResult> {
    let layout = VarLayout::new(problem)?;
    let scales = variable_scales(problem, &layout);
    let subs = layout.subs;
    let cells = layout.sets * layout.subcarriers;
    let mut trace = SolveTrace {
        restart,
        seed,
        initial_objective: start.objective,
        iterations: Vec::new(),
        termination: Termination::IterationCap,
        failure: None,
    };
    let mut state = start;
    let mut x_prev = state.to_vector(&layout);
    let mut multipliers = None;
    for it in 1..=config.max_iter {
        let program = build_subproblem(problem, &state)?;
        let sol = match kernel::solve(&program, &x_prev, &config.solver) {
            Ok(sol) => sol,
            Err(err) => match err.partial() {
                Some(p) => {
                    trace.failure = Some(err.to_string());
                    p.clone()
                }
                None => {
                    trace.termination = Termination::SubproblemFailure;
                    trace.failure = Some(err.to_string());
                    return Err(Error::Subproblem {
                        iteration: it,
                        source: err,
                    });
                }
            },
        };
        let next = SolutionState::from_vector(problem, &layout, &sol.x, it)?;
        let diff: Vec<f64> = sol.x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
        let step = scaled_norm(&diff, &scales);
        let reference = scaled_norm(&x_prev, &scales);
        trace.iterations.push(IterationRecord {
            objective: next.objective,
            step_norm: step,
            subproblem: sol.status.clone(),
        });
        multipliers = Some(Multipliers::from_solution(&sol, subs, cells));
        state = next;
        if step <= config.epsilon * reference {
            trace.termination = Termination::Converged;
            break;
        }
        x_prev = sol.x;
    }
    state.tighten(problem.params.bandwidth);
    Ok(RunResult {
        state,
        trace,
        multipliers,
    })
}

/// Runs CCCP from `config.restarts` random starting points and returns the
/// best run (highest objective, then lowest restart id).
pub fn cccp_solve(problem: &Problem, config: &CccpConfig) -> Result<CccpOutcome> {
    cccp_solve_with_starts(problem, config, &[])
}

/// As [`cccp_solve`], additionally running from each of `warm` (feasible
/// points of this problem, e.g. solutions of a more restricted layer scheme).
/// Warm runs get restart ids after the random ones.
pub fn cccp_solve_with_starts(problem: &Problem, config: &CccpConfig, warm: &[SolutionState]) -> Result<CccpOutcome> {
    problem.validate()?;
    config.validate()?;
    let jobs: Vec<(usize, u64, Option<&SolutionState>)> = (0..config.restarts)
        .map(|r| (r, derive_seed(config.seed, r as u64), None))
        .chain(
            warm.iter()
                .enumerate()
                .map(|(i, s)| (config.restarts + i, config.seed, Some(s))),
        )
        .collect();
    let results: Vec<Result<RunResult>> = jobs
        .par_iter()
        .map(|&(r, seed, warm)| {
            let (base, margin) = match warm {
                Some(s) => (s.clone(), WARM_MARGIN),
                None => (initialize(problem, seed)?, config.start_margin),
            };
            match lift(problem, &base, margin)? {
                Some(start) => run_from(problem, start, config, r, seed),
                None => {
                    let mut state = base;
                    state.tighten(problem.params.bandwidth);
                    Ok(RunResult {
                        trace: SolveTrace {
                            restart: r,
                            seed,
                            initial_objective: state.objective,
                            iterations: Vec::new(),
                            termination: Termination::NoInterior,
                            failure: None,
                        },
                        state,
                        multipliers: None,
                    })
                }
            }
        })
        .collect();
    let mut best: Option<RunResult> = None;
    let mut traces = Vec::new();
    let mut last_err = None;
    for res in results {
        match res {
            Ok(run) => {
                traces.push(run.trace.clone());
                if best.as_ref().is_none_or(|b| run.state.objective > b.state.objective) {
                    best = Some(run);
                }
            }
            Err(e) => last_err = Some(e.to_string()),
        }
    }
    match best {
        Some(run) => Ok(CccpOutcome {
            state: run.state,
            trace: run.trace,
            multipliers: run.multipliers,
            restarts: traces,
        }),
        None => Err(Error::AllRestartsFailed {
            restarts: jobs.len(),
            last: last_err.unwrap_or_default(),
        }),
    }
}

/// Rate margin used when embedding a warm start.
pub const WARM_MARGIN: f64 = 1e-7;
