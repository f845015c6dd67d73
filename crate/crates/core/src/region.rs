//! Joint-decoding achievable rate region and power constraint.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelState;
use crate::complex::{inner, norm_sqr, ComplexPair};
use crate::error::{Error, Result};
use crate::groupcast::{assemble_rates, LayerStructure, RateAllocation};
use crate::lp::simplex_max;

/// Power budget `P` (W), noise power `σ²` (W) and subcarrier bandwidth `B` (Hz).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub power: f64,
    pub noise: f64,
    pub bandwidth: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.noise > 0.0 && self.bandwidth > 0.0)
            || !(self.power.is_finite() && self.noise.is_finite() && self.bandwidth.is_finite())
        {
            return Err(Error::Config(format!(
                "power, noise and bandwidth must be positive and finite, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Beamformers `w_{G,n} ∈ C^M` for every layer `G` and subcarrier `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerSet {
    layers: usize,
    subcarriers: usize,
    antennas: usize,
    /// Indexed `(n, g, m)`.
    data: Vec<Complex64>,
}

impl BeamformerSet {
    pub fn zeros(layers: usize, subcarriers: usize, antennas: usize) -> Self {
        BeamformerSet {
            layers,
            subcarriers,
            antennas,
            data: vec![Complex64::new(0.0, 0.0); layers * subcarriers * antennas],
        }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    fn offset(&self, g: usize, n: usize) -> usize {
        (n * self.layers + g) * self.antennas
    }

    /// `w_{G,n}` for layer index `g`.
    pub fn get(&self, g: usize, n: usize) -> &[Complex64] {
        let o = self.offset(g, n);
        &self.data[o..o + self.antennas]
    }

    pub fn get_mut(&mut self, g: usize, n: usize) -> &mut [Complex64] {
        let o = self.offset(g, n);
        &mut self.data[o..o + self.antennas]
    }

    /// `Σ_n Σ_G ‖w_{G,n}‖²`.
    pub fn total_power(&self) -> f64 {
        norm_sqr(&self.data)
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|z| *z *= c);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct BeamRepr {
    layers: usize,
    subcarriers: usize,
    antennas: usize,
    /// `w[g][n][m]` as `[re, im]`.
    w: Vec<Vec<Vec<ComplexPair>>>,
}

impl Serialize for BeamformerSet {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let w = (0..self.layers)
            .map(|g| {
                (0..self.subcarriers)
                    .map(|n| self.get(g, n).iter().map(|&z| z.into()).collect())
                    .collect()
            })
            .collect();
        BeamRepr {
            layers: self.layers,
            subcarriers: self.subcarriers,
            antennas: self.antennas,
            w,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BeamformerSet {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = BeamRepr::deserialize(deserializer)?;
        let mut out = BeamformerSet::zeros(r.layers, r.subcarriers, r.antennas);
        if r.w.len() != r.layers {
            return Err(D::Error::custom("beamformer layer count mismatch"));
        }
        for (g, per_layer) in r.w.into_iter().enumerate() {
            if per_layer.len() != r.subcarriers {
                return Err(D::Error::custom("beamformer subcarrier count mismatch"));
            }
            for (n, v) in per_layer.into_iter().enumerate() {
                if v.len() != r.antennas {
                    return Err(D::Error::custom("beamformer antenna count mismatch"));
                }
                for (dst, src) in out.get_mut(g, n).iter_mut().zip(v) {
                    *dst = src.into();
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn check_dims(w: &BeamformerSet, h: &ChannelState, layers: &LayerStructure) -> Result<()> {
    if w.layers() != layers.layers().len()
        || w.subcarriers() != h.subcarriers()
        || w.antennas() != h.antennas()
        || h.users() != layers.users()
    {
        return Err(Error::Dimension(format!(
            "beams {}×{}×{}, channel K={} N={} M={}, {} layers for {} users",
            w.layers(),
            w.subcarriers(),
            w.antennas(),
            h.users(),
            h.subcarriers(),
            h.antennas(),
            layers.layers().len(),
            layers.users()
        )));
    }
    Ok(())
}

/// `|h_{k,n}^H w_{G,n}|²` for every layer `G`.
pub fn link_gains(w: &BeamformerSet, h: &ChannelState, user: usize, n: usize) -> Vec<f64> {
    let hk = h.h(user, n);
    (0..w.layers()).map(|g| inner(hk, w.get(g, n)).norm_sqr()).collect()
}

/// Desired power of `set` and out-of-`𝓖^(k)` interference seen by `user` on subcarrier `n`.
pub(crate) fn signal_and_interference(
    gains: &[f64],
    layers: &LayerStructure,
    user: usize,
    set: &[usize],
) -> (f64, f64) {
    let signal = set.iter().map(|&g| gains[g]).sum();
    let interference = layers
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.contains(user))
        .map(|(g, _)| gains[g])
        .sum();
    (signal, interference)
}

fn check_set(layers: &LayerStructure, user: usize, set: &[usize]) -> Result<()> {
    if user == 0 || user > layers.users() {
        return Err(Error::Dimension(format!("user {user} out of range")));
    }
    if set.is_empty() {
        return Err(Error::InvalidLayers("decoding set must be nonempty".into()));
    }
    let own = layers.layers_of_user(user);
    if set.iter().any(|g| !own.contains(g)) {
        return Err(Error::NotDecodable { user });
    }
    Ok(())
}

/// Right-hand side of the rate constraint of user `k` jointly decoding the
/// layers `set` (indices into [`LayerStructure::layers`]), in bit/s.
pub fn region_rhs(
    w: &BeamformerSet,
    h: &ChannelState,
    layers: &LayerStructure,
    params: &SystemParams,
    user: usize,
    set: &[usize],
) -> Result<f64> {
    check_dims(w, h, layers)?;
    check_set(layers, user, set)?;
    Ok((0..h.subcarriers())
        .map(|n| {
            let gains = link_gains(w, h, user, n);
            let (s, i) = signal_and_interference(&gains, layers, user, set);
            params.bandwidth * (s / (params.noise + i)).ln_1p() / std::f64::consts::LN_2
        })
        .sum())
}

/// All rate-constraint right-hand sides, in the order of [`LayerStructure::decoding_sets`].
pub fn region_rhs_all(
    w: &BeamformerSet,
    h: &ChannelState,
    layers: &LayerStructure,
    params: &SystemParams,
) -> Result<Vec<f64>> {
    check_dims(w, h, layers)?;
    let sets = layers.decoding_sets()?;
    let mut out = vec![0.0; sets.len()];
    for user in 1..=layers.users() {
        for n in 0..h.subcarriers() {
            let gains = link_gains(w, h, user, n);
            for (j, d) in sets.iter().enumerate().filter(|(_, d)| d.user == user) {
                let (s, i) = signal_and_interference(&gains, layers, user, &d.layers);
                out[j] += params.bandwidth * (s / (params.noise + i)).ln_1p() / std::f64::consts::LN_2;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSlack {
    pub user: usize,
    /// Layer indices of the decoding set.
    pub layers: Vec<usize>,
    /// `Σ_{G∈𝒳} R̃_G`.
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub total_power: f64,
    /// `P − Σ‖w‖²`.
    pub power_slack: f64,
    pub rate_slacks: Vec<RateSlack>,
    pub tol: f64,
    pub power_ok: bool,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Rate constraints violated beyond tolerance.
    pub fn violations(&self) -> impl Iterator<Item = &RateSlack> {
        self.rate_slacks.iter().filter(|r| !r.within(self.tol))
    }
}

impl RateSlack {
    fn within(&self, tol: f64) -> bool {
        self.slack >= -tol * self.rhs.abs().max(self.lhs.abs()).max(1.0)
    }
}

/// Checks the power budget and every rate constraint at relative tolerance `tol`.
///
/// Rate constraints use `tol·max(|lhs|, |rhs|, 1 bit/s)`; the power budget uses `tol·P`.
pub fn check_feasibility(
    w: &BeamformerSet,
    rates: &RateAllocation,
    h: &ChannelState,
    layers: &LayerStructure,
    params: &SystemParams,
    tol: f64,
) -> Result<FeasibilityReport> {
    check_dims(w, h, layers)?;
    if rates.layer_rates.len() != layers.layers().len() {
        return Err(Error::Dimension(
            "rate allocation does not match the layer structure".into(),
        ));
    }
    let total_power = w.total_power();
    let power_slack = params.power - total_power;
    let power_ok = power_slack >= -tol * params.power && w.is_finite();
    let rhs = region_rhs_all(w, h, layers, params)?;
    let rate_slacks: Vec<RateSlack> = layers
        .decoding_sets()?
        .iter()
        .zip(rhs)
        .map(|(d, rhs)| {
            let lhs: f64 = d.layers.iter().map(|&g| rates.layer_rates[g]).sum();
            RateSlack {
                user: d.user,
                layers: d.layers.clone(),
                lhs,
                rhs,
                slack: rhs - lhs,
            }
        })
        .collect();
    let rates_ok =
        rate_slacks.iter().all(|r| r.within(tol)) && rates.sub_rates.iter().all(|r| *r >= 0.0 && r.is_finite());
    Ok(FeasibilityReport {
        total_power,
        power_slack,
        rate_slacks,
        tol,
        power_ok,
        feasible: power_ok && rates_ok,
    })
}

/// Best sub-message rates for fixed beams: maximizes `Σ α_S R_S` over the
/// rate region, a linear program in the rates.
pub fn max_rates_given_beams(
    w: &BeamformerSet,
    h: &ChannelState,
    layers: &LayerStructure,
    params: &SystemParams,
    weights: &[f64],
) -> Result<RateAllocation> {
    check_dims(w, h, layers)?;
    if weights.len() != layers.groups().len() {
        return Err(Error::Dimension("one weight per message unit expected".into()));
    }
    let rhs = region_rhs_all(w, h, layers, params)?;
    let subs = layers.sub_messages();
    let sets = layers.decoding_sets()?;
    // Work in bit/s/Hz for conditioning.
    let c: Vec<f64> = subs.iter().map(|sm| weights[sm.group]).collect();
    let a: Vec<Vec<f64>> = sets
        .iter()
        .map(|d| {
            subs.iter()
                .map(|sm| if d.layers.contains(&sm.layer) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let b: Vec<f64> = rhs.iter().map(|r| (r / params.bandwidth).max(0.0)).collect();
    let sol = simplex_max(&c, &a, &b)?;
    let sub_rates: Vec<f64> = sol.x.iter().map(|x| (x * params.bandwidth).max(0.0)).collect();
    assemble_rates(layers, &sub_rates)
}
