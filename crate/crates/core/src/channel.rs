//! Seeded channel generation: i.i.d. Rayleigh or one-ring spatially correlated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::complex::ComplexPair;
use crate::error::{Error, Result};

/// Per-user, per-subcarrier channel vectors `h_{k,n} ∈ C^M`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    users: usize,
    subcarriers: usize,
    antennas: usize,
    data: Vec<Complex64>,
}

impl ChannelState {
    pub fn new(users: usize, subcarriers: usize, antennas: usize, data: Vec<Complex64>) -> Result<Self> {
        if users == 0 || subcarriers == 0 || antennas == 0 {
            return Err(Error::Dimension("channel dimensions must be positive".into()));
        }
        if data.len() != users * subcarriers * antennas {
            return Err(Error::Dimension(format!(
                "channel holds {} entries, expected {users}×{subcarriers}×{antennas}",
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Dimension("channel has non-finite entries".into()));
        }
        Ok(ChannelState {
            users,
            subcarriers,
            antennas,
            data,
        })
    }

    pub fn zeros(users: usize, subcarriers: usize, antennas: usize) -> Self {
        ChannelState {
            users,
            subcarriers,
            antennas,
            data: vec![Complex64::new(0.0, 0.0); users * subcarriers * antennas],
        }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// `h_{k,n}` for 1-based user `k` and 0-based subcarrier `n`.
    pub fn h(&self, user: usize, n: usize) -> &[Complex64] {
        let start = ((user - 1) * self.subcarriers + n) * self.antennas;
        &self.data[start..start + self.antennas]
    }

    pub fn h_mut(&mut self, user: usize, n: usize) -> &mut [Complex64] {
        let start = ((user - 1) * self.subcarriers + n) * self.antennas;
        &mut self.data[start..start + self.antennas]
    }

    pub fn scaled(&self, c: f64) -> Self {
        ChannelState {
            data: self.data.iter().map(|z| z * c).collect(),
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ChannelRepr {
    users: usize,
    subcarriers: usize,
    antennas: usize,
    /// `h[k][n][m]` as `[re, im]`.
    h: Vec<Vec<Vec<ComplexPair>>>,
}

impl Serialize for ChannelState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let h = (1..=self.users)
            .map(|k| {
                (0..self.subcarriers)
                    .map(|n| self.h(k, n).iter().map(|&z| ComplexPair::from(z)).collect())
                    .collect()
            })
            .collect();
        ChannelRepr {
            users: self.users,
            subcarriers: self.subcarriers,
            antennas: self.antennas,
            h,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChannelState {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = ChannelRepr::deserialize(deserializer)?;
        let data: Vec<Complex64> =
            r.h.into_iter()
                .flat_map(|per_user| per_user.into_iter().flat_map(|v| v.into_iter().map(Complex64::from)))
                .collect();
        ChannelState::new(r.users, r.subcarriers, r.antennas, data).map_err(serde::de::Error::custom)
    }
}

/// One-ring scattering parameters. Angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneRingConfig {
    /// Number of user groups `G`; users in a group share an azimuth.
    pub groups: usize,
    #[serde(default = "OneRingConfig::default_spread")]
    pub angular_spread_deg: f64,
    /// Group azimuths are the midpoints of `groups` equal bins of this range.
    #[serde(default = "OneRingConfig::default_range")]
    pub azimuth_range_deg: [f64; 2],
    /// Antenna spacing of the uniform linear array, in wavelengths.
    #[serde(default = "OneRingConfig::default_spacing")]
    pub antenna_spacing: f64,
    #[serde(default = "OneRingConfig::default_points")]
    pub quadrature_points: usize,
}

impl OneRingConfig {
    fn default_spread() -> f64 {
        10.0
    }
    fn default_range() -> [f64; 2] {
        [-60.0, 60.0]
    }
    fn default_spacing() -> f64 {
        0.5
    }
    fn default_points() -> usize {
        2048
    }

    pub fn with_groups(groups: usize) -> Self {
        OneRingConfig {
            groups,
            angular_spread_deg: Self::default_spread(),
            azimuth_range_deg: Self::default_range(),
            antenna_spacing: Self::default_spacing(),
            quadrature_points: Self::default_points(),
        }
    }

    pub fn validate(&self, users: usize) -> Result<()> {
        if self.groups == 0 || self.groups > users {
            return Err(Error::Config(format!(
                "one-ring group count {} must lie in 1..={users}",
                self.groups
            )));
        }
        if !(self.angular_spread_deg > 0.0) {
            return Err(Error::Config("angular spread must be positive".into()));
        }
        if !(self.antenna_spacing > 0.0) || self.quadrature_points == 0 {
            return Err(Error::Config(
                "antenna spacing and quadrature points must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Azimuth of group `g` (0-based), degrees.
    pub fn azimuth_deg(&self, g: usize) -> f64 {
        let [lo, hi] = self.azimuth_range_deg;
        lo + (hi - lo) * (g as f64 + 0.5) / self.groups as f64
    }

    /// Group of 1-based user `k`: contiguous, as even as possible.
    pub fn group_of(&self, user: usize, users: usize) -> usize {
        (user - 1) * self.groups / users
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelModel {
    Iid,
    OneRing(OneRingConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    #[serde(flatten)]
    pub model: ChannelModel,
    /// Large-scale power gain applied to every channel, in dB.
    #[serde(default)]
    pub path_gain_db: f64,
}

impl ChannelConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        if !self.path_gain_db.is_finite() {
            return Err(Error::Config("path gain must be finite".into()));
        }
        match &self.model {
            ChannelModel::Iid => Ok(()),
            ChannelModel::OneRing(c) => c.validate(users),
        }
    }
}

/// One-ring spatial covariance of a uniform linear array.
///
/// `C[p,q] = (1/2Δ) ∫_{θ−Δ}^{θ+Δ} exp(j·2π·d·(p−q)·sin φ) dφ`, evaluated by
/// the midpoint rule with `points` nodes. Angles in radians. The result is
/// Hermitian Toeplitz with unit diagonal; being an average of rank-one terms
/// it is PSD up to rounding.
pub fn one_ring_covariance(
    azimuth: f64,
    spread: f64,
    antennas: usize,
    spacing: f64,
    points: usize,
) -> Result<DMatrix<Complex64>> {
    if !(spread > 0.0) {
        return Err(Error::Config(format!("angular spread must be positive, got {spread}")));
    }
    if antennas == 0 || points == 0 {
        return Err(Error::Config("antenna and quadrature counts must be positive".into()));
    }
    let step = 2.0 * spread / points as f64;
    let sines: Vec<f64> = (0..points)
        .map(|i| (azimuth - spread + (i as f64 + 0.5) * step).sin())
        .collect();
    // c[δ] for δ = p − q ≥ 0
    let lags: Vec<Complex64> = (0..antennas)
        .map(|delta| {
            if delta == 0 {
                return Complex64::new(1.0, 0.0);
            }
            let k = 2.0 * PI * spacing * delta as f64;
            let sum = sines.iter().fold(Complex64::new(0.0, 0.0), |acc, s| {
                acc + Complex64::from_polar(1.0, k * s)
            });
            sum / points as f64
        })
        .collect();
    Ok(DMatrix::from_fn(antennas, antennas, |p, q| {
        if p >= q {
            lags[p - q]
        } else {
            lags[q - p].conj()
        }
    }))
}

/// Hermitian PSD square root with negative eigenvalues clipped to zero.
pub fn psd_sqrt(c: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let eig = c.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
    let u = &eig.eigenvectors;
    u * DMatrix::from_diagonal(&vals) * u.adjoint()
}

/// Draws a channel realization. Users of one-ring group `g` share the group's
/// covariance; small-scale fading is i.i.d. across users and subcarriers.
pub fn sample_channels(
    users: usize,
    antennas: usize,
    subcarriers: usize,
    config: &ChannelConfig,
    seed: u64,
) -> Result<ChannelState> {
    if users == 0 || antennas == 0 || subcarriers == 0 {
        return Err(Error::Config("channel dimensions must be positive".into()));
    }
    config.validate(users)?;
    let amplitude = 10f64.powf(config.path_gain_db / 20.0);
    let roots: Vec<Option<DMatrix<Complex64>>> = match &config.model {
        ChannelModel::Iid => vec![None],
        ChannelModel::OneRing(c) => (0..c.groups)
            .map(|g| {
                let cov = one_ring_covariance(
                    c.azimuth_deg(g).to_radians(),
                    c.angular_spread_deg.to_radians(),
                    antennas,
                    c.antenna_spacing,
                    c.quadrature_points,
                )?;
                Ok(Some(psd_sqrt(&cov)))
            })
            .collect::<Result<_>>()?,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut state = ChannelState::zeros(users, subcarriers, antennas);
    let half = std::f64::consts::FRAC_1_SQRT_2;
    for k in 1..=users {
        let root = match &config.model {
            ChannelModel::Iid => None,
            ChannelModel::OneRing(c) => roots[c.group_of(k, users)].as_ref(),
        };
        for n in 0..subcarriers {
            let g = DVector::from_fn(antennas, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * half, im * half)
            });
            let h = match root {
                Some(r) => r * g,
                None => g,
            };
            for (dst, src) in state.h_mut(k, n).iter_mut().zip(h.iter()) {
                *dst = src * amplitude;
            }
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eigenvalues(c: &DMatrix<Complex64>) -> Vec<f64> {
        let mut v: Vec<f64> = c.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    }

    #[test]
    fn unit_diagonal_and_trace() {
        for &(theta, spread, m) in &[(0.3, 0.2, 4usize), (-1.0, 0.05, 8), (0.0, 1.0, 3)] {
            let c = one_ring_covariance(theta, spread, m, 0.5, 512).unwrap();
            let trace: f64 = (0..m).map(|i| c[(i, i)].re).sum();
            assert!((trace - m as f64).abs() < 1e-12);
            for i in 0..m {
                assert_eq!(c[(i, i)], Complex64::new(1.0, 0.0));
            }
            assert!((c.clone() - c.adjoint()).norm() < 1e-14);
            assert!(eigenvalues(&c).iter().all(|&l| l >= -1e-10));
        }
    }

    #[test]
    fn vanishing_spread_is_rank_one() {
        let theta = 0.4;
        let m = 6;
        let c = one_ring_covariance(theta, 1e-6, m, 0.5, 64).unwrap();
        let a = DVector::from_fn(m, |p, _| {
            Complex64::from_polar(1.0, 2.0 * PI * 0.5 * p as f64 * theta.sin())
        });
        let outer = &a * a.adjoint();
        assert!((c.clone() - outer).norm() < 1e-5);
        let ev = eigenvalues(&c);
        assert!(ev[1] < 1e-4, "second eigenvalue {}", ev[1]);
    }

    #[test]
    fn quadrature_refinement_agrees() {
        let spread = 10f64.to_radians();
        let coarse = eigenvalues(&one_ring_covariance(0.0, spread, 4, 0.5, 2048).unwrap());
        let fine = eigenvalues(&one_ring_covariance(0.0, spread, 4, 0.5, 20480).unwrap());
        for (a, b) in coarse.iter().zip(&fine) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn negated_azimuth_conjugates() {
        let c = one_ring_covariance(0.5, 0.1, 5, 0.5, 256).unwrap();
        let d = one_ring_covariance(-0.5, 0.1, 5, 0.5, 256).unwrap();
        assert!((c.map(|z| z.conj()) - d).norm() < 1e-12);
    }

    #[test]
    fn non_positive_spread_rejected() {
        assert!(one_ring_covariance(0.0, 0.0, 4, 0.5, 16).is_err());
        assert!(one_ring_covariance(0.0, -0.1, 4, 0.5, 16).is_err());
    }

    #[test]
    fn sqrt_squares_back() {
        let c = one_ring_covariance(0.2, 0.3, 5, 0.5, 512).unwrap();
        let r = psd_sqrt(&c);
        assert!((&r * &r - &c).norm() < 1e-10);
    }

    fn one_ring(groups: usize) -> ChannelConfig {
        ChannelConfig {
            model: ChannelModel::OneRing(OneRingConfig::with_groups(groups)),
            path_gain_db: 0.0,
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_channels(3, 4, 2, &one_ring(3), 7).unwrap();
        let b = sample_channels(3, 4, 2, &one_ring(3), 7).unwrap();
        assert_eq!(a, b);
        let c = sample_channels(3, 4, 2, &one_ring(3), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn group_assignment_and_azimuths() {
        let c = OneRingConfig::with_groups(2);
        assert_eq!((1..=3).map(|k| c.group_of(k, 3)).collect::<Vec<_>>(), vec![0, 0, 1]);
        let c3 = OneRingConfig::with_groups(3);
        assert_eq!((1..=3).map(|k| c3.group_of(k, 3)).collect::<Vec<_>>(), vec![0, 1, 2]);
        let az: Vec<f64> = (0..3).map(|g| c3.azimuth_deg(g)).collect();
        assert!(az[0] < az[1] && az[1] < az[2]);
        assert_eq!(OneRingConfig::with_groups(1).azimuth_deg(0), 0.0);
        assert!(one_ring(4).validate(3).is_err());
        assert!(one_ring(0).validate(3).is_err());
    }

    fn empirical_covariance(state: &ChannelState, user: usize) -> DMatrix<Complex64> {
        let m = state.antennas();
        let mut acc = DMatrix::<Complex64>::zeros(m, m);
        for n in 0..state.subcarriers() {
            let h = DVector::from_column_slice(state.h(user, n));
            acc += &h * h.adjoint();
        }
        acc.unscale(state.subcarriers() as f64)
    }

    #[test]
    fn empirical_covariance_matches_model() {
        let cfg = one_ring(3);
        let samples = 100_000;
        let state = sample_channels(3, 4, samples, &cfg, 11).unwrap();
        let ChannelModel::OneRing(or) = &cfg.model else {
            unreachable!()
        };
        for k in 1..=3 {
            let g = or.group_of(k, 3);
            let c = one_ring_covariance(
                or.azimuth_deg(g).to_radians(),
                or.angular_spread_deg.to_radians(),
                4,
                0.5,
                or.quadrature_points,
            )
            .unwrap();
            let emp = empirical_covariance(&state, k);
            let rel = (emp - &c).norm() / c.norm();
            assert!(rel < 0.02, "user {k}: relative error {rel}");
        }
    }

    #[test]
    fn single_group_shares_covariance() {
        let state = sample_channels(3, 4, 50_000, &one_ring(1), 3).unwrap();
        let c1 = empirical_covariance(&state, 1);
        for k in 2..=3 {
            let ck = empirical_covariance(&state, k);
            assert!((ck - &c1).norm() / c1.norm() < 0.04);
        }
    }

    #[test]
    fn path_gain_scales_power() {
        let mut cfg = one_ring(2);
        let base = sample_channels(2, 3, 20_000, &cfg, 5).unwrap();
        cfg.path_gain_db = 20.0;
        let loud = sample_channels(2, 3, 20_000, &cfg, 5).unwrap();
        let power = |s: &ChannelState| -> f64 {
            (0..s.subcarriers())
                .map(|n| s.h(1, n).iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
                / s.subcarriers() as f64
        };
        assert!((power(&loud) / power(&base) - 100.0).abs() < 1e-9);
        // unit-diagonal covariance: mean ‖h‖² ≈ M
        assert!((power(&base) - 3.0).abs() < 0.1);
    }

    #[test]
    fn json_round_trip() {
        let a = sample_channels(2, 3, 2, &one_ring(2), 1).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        let b: ChannelState = serde_json::from_str(&s).unwrap();
        assert_eq!(a, b);
        let cfg = one_ring(2);
        let t = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ChannelConfig>(&t).unwrap(), cfg);
    }
}
