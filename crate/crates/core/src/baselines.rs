//! Comparison schemes: rate splitting over all layers, one common layer, no
//! splitting, and an OFDMA reference.
//!
//! The three rate-splitting schemes differ only in the layer structure handed
//! to the CCCP solver. Their layer sets are nested, so a solution of a coarser
//! scheme embeds into a finer one with the same objective; [`run_chain`] uses
//! this to warm-start each scheme from the previous one.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cccp::{cccp_solve_with_starts, CccpConfig, Problem, SolutionState, SolveTrace};
use crate::channel::ChannelState;
use crate::error::{Error, Result};
use crate::groupcast::{assemble_rates, build_layers, LayerScheme, LayerStructure, MessagePartition, RateAllocation};
use crate::region::{check_feasibility, max_rates_given_beams, BeamformerSet, SystemParams};
use crate::userset::UserSet;

/// Relative difference below which two OFDMA assignment gains tie.
const TIE_TOL: f64 = 1e-12;

/// Tolerance at which every reported result is checked.
pub const REPORT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "PropRS")]
    PropRs,
    #[serde(rename = "OneLayerRS")]
    OneLayerRs,
    #[serde(rename = "NoRS")]
    NoRs,
    #[serde(rename = "OFDMA")]
    Ofdma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::PropRs, Scheme::OneLayerRs, Scheme::NoRs, Scheme::Ofdma];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::PropRs => "PropRS",
            Scheme::OneLayerRs => "OneLayerRS",
            Scheme::NoRs => "NoRS",
            Scheme::Ofdma => "OFDMA",
        }
    }

    /// Layer scheme the rates are checked against. OFDMA transmits one
    /// unit per subcarrier without splitting.
    pub fn layer_scheme(self) -> LayerScheme {
        match self {
            Scheme::PropRs => LayerScheme::Full,
            Scheme::OneLayerRs => LayerScheme::OneLayer,
            Scheme::NoRs | Scheme::Ofdma => LayerScheme::NoSplit,
        }
    }

    /// Position in the warm-start chain, coarsest first; `None` for OFDMA.
    fn chain_rank(self) -> Option<usize> {
        match self {
            Scheme::NoRs => Some(0),
            Scheme::OneLayerRs => Some(1),
            Scheme::PropRs => Some(2),
            Scheme::Ofdma => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "proprs" | "full" => Ok(Scheme::PropRs),
            "onelayerrs" | "1lrs" | "onelayer" => Ok(Scheme::OneLayerRs),
            "nors" | "nosplit" => Ok(Scheme::NoRs),
            "ofdma" => Ok(Scheme::Ofdma),
            _ => Err(Error::Config(format!("unknown scheme {s:?}"))),
        }
    }
}

/// One channel realization with everything the schemes share.
#[derive(Clone, Copy, Debug)]
pub struct Instance<'a> {
    pub partition: &'a MessagePartition,
    pub channel: &'a ChannelState,
    /// One weight per message unit, in the order of [`MessagePartition::groups`].
    pub weights: &'a [f64],
    pub params: SystemParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub scheme: Scheme,
    /// Layer sets, indexing `w` and `rates.layer_rates`.
    pub layers: Vec<UserSet>,
    pub w: BeamformerSet,
    pub rates: RateAllocation,
    /// `Σ_S α_S R_S` in bit/s.
    pub objective: f64,
    /// Auxiliary variables of the CCCP schemes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<f64>>,
    /// Trace of the best CCCP run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SolveTrace>,
    /// Not persisted, so that result files depend on the inputs only.
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SchemeResult {
    /// `R_S` keyed by the unit's user set.
    pub fn unit_rates(&self, partition: &MessagePartition) -> Vec<(UserSet, f64)> {
        partition
            .groups()
            .into_iter()
            .zip(self.rates.unit_rates.iter().copied())
            .collect()
    }

    /// `R̃_G` keyed by the layer's user set.
    pub fn layer_rates(&self) -> Vec<(UserSet, f64)> {
        self.layers
            .iter()
            .copied()
            .zip(self.rates.layer_rates.iter().copied())
            .collect()
    }
}

fn problem<'a>(instance: &Instance<'a>, layers: &'a LayerStructure) -> Problem<'a> {
    Problem {
        layers,
        channel: instance.channel,
        weights: instance.weights,
        params: instance.params,
    }
}

fn verified(instance: &Instance, layers: &LayerStructure, result: SchemeResult) -> Result<SchemeResult> {
    let report = check_feasibility(
        &result.w,
        &result.rates,
        instance.channel,
        layers,
        &instance.params,
        REPORT_TOL,
    )?;
    if !report.feasible {
        return Err(Error::InvalidRates(format!(
            "{} result fails the feasibility check (power slack {:.3e}, {} rate violations)",
            result.scheme,
            report.power_slack,
            report.violations().count()
        )));
    }
    Ok(result)
}

/// Maps a solution of a coarser layer structure onto `to`: beams and
/// sub-message rates are carried over by user set, new layers start at zero.
pub fn embed(
    state: &SolutionState,
    from: &LayerStructure,
    to: &LayerStructure,
    weights: &[f64],
) -> Result<SolutionState> {
    if from.users() != to.users() || from.groups() != to.groups() {
        return Err(Error::InvalidLayers("embedding needs the same message units".into()));
    }
    let (ns, m) = (state.w.subcarriers(), state.w.antennas());
    let mut w = BeamformerSet::zeros(to.layers().len(), ns, m);
    for (g, set) in from.layers().iter().enumerate() {
        let Some(target) = to.layer_index(*set) else {
            return Err(Error::InvalidLayers(format!("layer {set} has no counterpart")));
        };
        for n in 0..ns {
            w.get_mut(target, n).copy_from_slice(state.w.get(g, n));
        }
    }
    let mut sub_rates = vec![0.0; to.sub_messages().len()];
    for (sm, r) in from.sub_messages().iter().zip(&state.rates.sub_rates) {
        let (group, layer) = (from.groups()[sm.group], from.layers()[sm.layer]);
        let idx = to
            .sub_message_index(group, layer)
            .ok_or_else(|| Error::InvalidLayers(format!("sub-message ({group}, {layer}) has no counterpart")))?;
        sub_rates[idx] = *r;
    }
    let rates = assemble_rates(to, &sub_rates)?;
    let cells = to.decoding_sets()?.len() * ns;
    Ok(SolutionState {
        objective: rates.weighted_sum(weights),
        w,
        rates,
        e: vec![0.0; cells],
        u: vec![1.0; cells],
        iteration: 0,
    })
}

/// Solves one rate-splitting scheme by CCCP, additionally starting from each
/// of `warm` (results of coarser schemes on the same instance).
pub fn run_scheme(
    scheme: Scheme,
    instance: &Instance,
    config: &CccpConfig,
    warm: &[&SchemeResult],
) -> Result<SchemeResult> {
    if scheme == Scheme::Ofdma {
        return ofdma_solve(instance);
    }
    let started = Instant::now();
    let layers = build_layers(instance.partition, scheme.layer_scheme())?;
    let problem = problem(instance, &layers);
    let mut starts = Vec::with_capacity(warm.len());
    for prev in warm {
        let from = build_layers(instance.partition, prev.scheme.layer_scheme())?;
        let state = SolutionState {
            w: prev.w.clone(),
            rates: prev.rates.clone(),
            e: Vec::new(),
            u: Vec::new(),
            iteration: 0,
            objective: prev.objective,
        };
        starts.push(embed(&state, &from, &layers, instance.weights)?);
    }
    let outcome = cccp_solve_with_starts(&problem, config, &starts)?;
    let state = outcome.state;
    let result = SchemeResult {
        scheme,
        layers: layers.layers().to_vec(),
        objective: state.objective,
        w: state.w,
        rates: state.rates,
        e: Some(state.e),
        u: Some(state.u),
        trace: Some(outcome.trace),
        wall_time: started.elapsed(),
    };
    verified(instance, &layers, result)
}

/// Runs `schemes` on one instance. The rate-splitting schemes run coarsest
/// first and each is warm-started from the finest finished one; results are
/// returned in the order of `schemes`.
pub fn run_chain(schemes: &[Scheme], instance: &Instance, config: &CccpConfig) -> Vec<Result<SchemeResult>> {
    let mut order: Vec<usize> = (0..schemes.len()).collect();
    order.sort_by_key(|&i| (schemes[i].chain_rank().unwrap_or(usize::MAX), i));
    let mut out: Vec<Option<Result<SchemeResult>>> = (0..schemes.len()).map(|_| None).collect();
    for i in order {
        // the finest finished scheme; it already dominates the coarser ones
        let warm: Vec<&SchemeResult> = out
            .iter()
            .flatten()
            .filter_map(|r| r.as_ref().ok())
            .filter(|r| r.scheme.chain_rank().is_some())
            .max_by_key(|r| r.scheme.chain_rank())
            .into_iter()
            .collect();
        let res = run_scheme(schemes[i], instance, config, &warm);
        out[i] = Some(res);
    }
    out.into_iter().map(|r| r.expect("every scheme ran")).collect()
}

/// Unit-norm dominant eigenvector of `Σ_k h_k h_kᴴ`.
fn dominant_direction(channels: &[&[Complex64]]) -> Vec<Complex64> {
    let m = channels[0].len();
    let cov = DMatrix::from_fn(m, m, |p, q| {
        channels.iter().map(|h| h[p] * h[q].conj()).sum::<Complex64>()
    });
    let eig = cov.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    eig.eigenvectors.column(best).iter().copied().collect()
}

/// Powers `p_n = (α_n·μ − 1/γ_n)⁺` with `Σ p_n = P`, the water level `μ` found
/// by bisection. Entries with `γ_n = 0` get no power.
pub fn water_fill(gains: &[f64], weights: &[f64], power: f64) -> Vec<f64> {
    let alloc = |mu: f64| -> Vec<f64> {
        gains
            .iter()
            .zip(weights)
            .map(|(g, a)| if *g > 0.0 { (a * mu - 1.0 / g).max(0.0) } else { 0.0 })
            .collect()
    };
    if !gains.iter().zip(weights).any(|(g, a)| *g > 0.0 && *a > 0.0) {
        return vec![0.0; gains.len()];
    }
    let total = |mu: f64| alloc(mu).iter().sum::<f64>();
    let (mut lo, mut hi) = (0.0, 1.0);
    while total(hi) < power {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < power {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let mut p = alloc(hi);
    // remove the bisection residue
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        p.iter_mut().for_each(|v| *v *= power / sum);
    }
    p
}

/// OFDMA with group matched beams.
///
/// Each subcarrier carries one message unit along the dominant eigenvector of
/// its users' channel covariance. Subcarriers are assigned greedily: each
/// step gives one free subcarrier to the unit with the largest weighted gain
/// in `min_k` of its users' accumulated rates, assuming an equal power split.
/// Ties go to the earlier unit in canonical order, then the lower subcarrier.
/// Power is then water-filled over the worst-user gains of the assigned units
/// and the rates are the best ones the resulting beams support.
pub fn ofdma_solve(instance: &Instance) -> Result<SchemeResult> {
    let started = Instant::now();
    let layers = build_layers(instance.partition, LayerScheme::NoSplit)?;
    let channel = instance.channel;
    let params = instance.params;
    let groups = instance.partition.groups();
    if instance.weights.len() != groups.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} message units",
            instance.weights.len(),
            groups.len()
        )));
    }
    if channel.users() != instance.partition.users {
        return Err(Error::Dimension(
            "channel and demands disagree on the user count".into(),
        ));
    }
    params.validate()?;
    let (ns, m) = (channel.subcarriers(), channel.antennas());

    // directions[s][n] and per-user normalized gains |hᴴv|²/σ²
    let mut directions = Vec::with_capacity(groups.len());
    let mut gains = Vec::with_capacity(groups.len());
    for set in &groups {
        let mut dirs = Vec::with_capacity(ns);
        let mut g = Vec::with_capacity(ns);
        for n in 0..ns {
            let hs: Vec<&[Complex64]> = set.users().map(|k| channel.h(k, n)).collect();
            let v = dominant_direction(&hs);
            g.push(
                hs.iter()
                    .map(|h| crate::complex::inner(h, &v).norm_sqr() / params.noise)
                    .collect::<Vec<f64>>(),
            );
            dirs.push(v);
        }
        directions.push(dirs);
        gains.push(g);
    }

    let p_eq = params.power / ns as f64;
    let rate = |gain: f64| params.bandwidth * (p_eq * gain).ln_1p() / std::f64::consts::LN_2;
    let mut accumulated: Vec<Vec<f64>> = groups.iter().map(|set| vec![0.0; set.len()]).collect();
    let mut owner: Vec<Option<usize>> = vec![None; ns];
    for _ in 0..ns {
        let mut best: Option<(f64, usize, usize)> = None;
        for (s, acc) in accumulated.iter().enumerate() {
            let before = acc.iter().copied().fold(f64::INFINITY, f64::min);
            for n in (0..ns).filter(|&n| owner[n].is_none()) {
                let after = acc
                    .iter()
                    .zip(&gains[s][n])
                    .map(|(a, g)| a + rate(*g))
                    .fold(f64::INFINITY, f64::min);
                let gain = instance.weights[s] * (after - before);
                // gains equal up to rounding count as ties
                if best.is_none_or(|(b, _, _)| gain > b + TIE_TOL * b.abs()) {
                    best = Some((gain, s, n));
                }
            }
        }
        let (_, s, n) = best.expect("a free subcarrier remains");
        owner[n] = Some(s);
        for (a, g) in accumulated[s].iter_mut().zip(&gains[s][n]) {
            *a += rate(*g);
        }
    }

    let worst: Vec<f64> = (0..ns)
        .map(|n| {
            let s = owner[n].expect("assigned");
            gains[s][n].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let unit_weights: Vec<f64> = (0..ns).map(|n| instance.weights[owner[n].expect("assigned")]).collect();
    let powers = water_fill(&worst, &unit_weights, params.power);

    let mut w = BeamformerSet::zeros(layers.layers().len(), ns, m);
    for n in 0..ns {
        let s = owner[n].expect("assigned");
        let g = layers.layer_index(groups[s]).expect("no-split layers are the units");
        for (dst, v) in w.get_mut(g, n).iter_mut().zip(&directions[s][n]) {
            *dst = v * powers[n].sqrt();
        }
    }
    let rates = max_rates_given_beams(&w, channel, &layers, &params, instance.weights)?;
    let result = SchemeResult {
        scheme: Scheme::Ofdma,
        layers: layers.layers().to_vec(),
        objective: rates.weighted_sum(instance.weights),
        w,
        rates,
        e: None,
        u: None,
        trace: None,
        wall_time: started.elapsed(),
    };
    verified(instance, &layers, result)
}
