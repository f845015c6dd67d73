//! Scenario files, realization runs, parameter sweeps and result validation.
//!
//! Scenarios and results are JSON, sweeps are CSV. Complex numbers are stored
//! as `[re, im]`. Every output is a function of the scenario and its master
//! seed: channel and solver seeds are derived per realization, and wall times
//! are kept out of the files.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{run_chain, Instance, Scheme, SchemeResult, REPORT_TOL};
use crate::cccp::{derive_seed, CccpConfig};
use crate::channel::{sample_channels, ChannelConfig, ChannelModel, ChannelState, OneRingConfig};
use crate::error::{Error, Result};
use crate::groupcast::{assemble_rates, build_layers, compute_partition, Demands, MessagePartition};
use crate::region::{check_feasibility, SystemParams};
use crate::userset::UserSet;

/// Stream offsets separating channel and solver seeds.
const CHANNEL_STREAM: u64 = 0;
const SOLVER_STREAM: u64 = 1 << 32;

fn default_demands() -> Demands {
    Demands::new(vec![
        vec!["1", "4", "5", "7"],
        vec!["2", "4", "6", "7"],
        vec!["3", "5", "6", "7"],
    ])
    .expect("valid demands")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub demands: Demands,
    /// Transmit antennas `M`.
    pub antennas: usize,
    /// Subcarriers `N`.
    pub subcarriers: usize,
    /// Subcarrier bandwidth `B`, Hz.
    pub bandwidth: f64,
    /// Noise power `σ²`, W.
    pub noise: f64,
    /// Power budget `P`, W.
    pub power: f64,
    /// One weight per message unit in canonical order; uniform when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub channel: ChannelConfig,
    pub schemes: Vec<Scheme>,
    pub solver: CccpConfig,
    pub realizations: usize,
    pub seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            demands: default_demands(),
            antennas: 4,
            subcarriers: 4,
            bandwidth: 30e3,
            noise: 1e-9,
            power: 1.0,
            weights: None,
            channel: ChannelConfig {
                model: ChannelModel::OneRing(OneRingConfig::with_groups(3)),
                path_gain_db: -80.0,
            },
            schemes: Scheme::ALL.to_vec(),
            solver: CccpConfig::default(),
            realizations: 20,
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn params(&self) -> SystemParams {
        SystemParams {
            power: self.power,
            noise: self.noise,
            bandwidth: self.bandwidth,
        }
    }

    pub fn partition(&self) -> Result<MessagePartition> {
        compute_partition(&self.demands)
    }

    /// The weights, defaulting to `1/|𝓢|` per unit.
    pub fn unit_weights(&self) -> Result<Vec<f64>> {
        let units = self.partition()?.units.len();
        match &self.weights {
            Some(w) => Ok(w.clone()),
            None => Ok(vec![1.0 / units as f64; units]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let users = self.demands.users();
        let units = self.partition()?.units.len();
        if self.antennas == 0 || self.subcarriers == 0 {
            return Err(Error::Config("antennas and subcarriers must be positive".into()));
        }
        self.params().validate()?;
        if let Some(w) = &self.weights {
            if w.len() != units {
                return Err(Error::Config(format!("{} weights for {units} message units", w.len())));
            }
            if w.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                return Err(Error::Config("weights must be nonnegative".into()));
            }
        }
        self.channel.validate(users)?;
        if self.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        self.solver.validate()?;
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be positive".into()));
        }
        Ok(())
    }

    pub fn channel_seed(&self, realization: usize) -> u64 {
        derive_seed(self.seed, CHANNEL_STREAM + realization as u64)
    }

    pub fn solver_seed(&self, realization: usize) -> u64 {
        derive_seed(self.seed, SOLVER_STREAM + realization as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<SchemeResult>,
    /// Solver failure; the run continues with the other schemes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub index: usize,
    pub channel_seed: u64,
    pub channel: ChannelState,
    pub schemes: Vec<SchemeEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub mean_rate: f64,
    pub std_rate: f64,
    /// Realizations in which the scheme succeeded.
    pub n_realizations: usize,
    /// Mean `R̃_G` per layer set over those realizations.
    pub mean_layer_rates: Vec<(UserSet, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub scenario: Scenario,
    pub realizations: Vec<Realization>,
    pub summary: Vec<SummaryRow>,
}

impl RunResults {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn summary_row(&self, scheme: Scheme) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.scheme == scheme)
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summarize(schemes: &[Scheme], realizations: &[Realization], users: usize) -> Vec<SummaryRow> {
    schemes
        .iter()
        .map(|&scheme| {
            let results: Vec<&SchemeResult> = realizations
                .iter()
                .flat_map(|r| r.schemes.iter())
                .filter(|e| e.scheme == scheme)
                .filter_map(|e| e.result.as_ref())
                .collect();
            let objectives: Vec<f64> = results.iter().map(|r| r.objective).collect();
            let (mean_rate, std_rate) = mean_std(&objectives);
            let mean_layer_rates = UserSet::all_nonempty(users)
                .into_iter()
                .filter_map(|set| {
                    let values: Vec<f64> = results
                        .iter()
                        .filter_map(|r| r.layer_rates().into_iter().find(|(g, _)| *g == set).map(|(_, v)| v))
                        .collect();
                    (!values.is_empty()).then(|| (set, mean_std(&values).0))
                })
                .collect();
            SummaryRow {
                scheme,
                mean_rate,
                std_rate,
                n_realizations: results.len(),
                mean_layer_rates,
            }
        })
        .collect()
}

/// Runs one realization: samples its channel and solves every scheme.
pub fn run_realization(scenario: &Scenario, index: usize) -> Result<Realization> {
    let partition = scenario.partition()?;
    let weights = scenario.unit_weights()?;
    let channel_seed = scenario.channel_seed(index);
    let channel = sample_channels(
        scenario.demands.users(),
        scenario.antennas,
        scenario.subcarriers,
        &scenario.channel,
        channel_seed,
    )?;
    let instance = Instance {
        partition: &partition,
        channel: &channel,
        weights: &weights,
        params: scenario.params(),
    };
    let config = CccpConfig {
        seed: scenario.solver_seed(index),
        ..scenario.solver.clone()
    };
    let schemes = run_chain(&scenario.schemes, &instance, &config)
        .into_iter()
        .zip(&scenario.schemes)
        .map(|(res, &scheme)| match res {
            Ok(r) => SchemeEntry {
                scheme,
                result: Some(r),
                error: None,
            },
            Err(e) => SchemeEntry {
                scheme,
                result: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(Realization {
        index,
        channel_seed,
        channel,
        schemes,
    })
}

/// Runs every realization of `scenario`, in parallel over realizations.
pub fn run(scenario: &Scenario) -> Result<RunResults> {
    scenario.validate()?;
    let realizations = (0..scenario.realizations)
        .into_par_iter()
        .map(|i| run_realization(scenario, i))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&scenario.schemes, &realizations, scenario.demands.users());
    Ok(RunResults {
        scenario: scenario.clone(),
        realizations,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Transmit antennas.
    M,
    /// Power budget, W.
    P,
    /// One-ring user groups.
    G,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub scenario: Scenario,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: SweepSpec = serde_json::from_str(text).map_err(|e| Error::Config(format!("sweep: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("sweep values must be strictly increasing".into()));
        }
        for &v in &self.values {
            self.point(v)?.validate()?;
        }
        Ok(())
    }

    /// The scenario at one axis value.
    pub fn point(&self, value: f64) -> Result<Scenario> {
        let mut s = self.scenario.clone();
        let count = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(format!(
                    "{:?} axis needs positive integers, got {value}",
                    self.axis
                )))
            }
        };
        match self.axis {
            Axis::M => s.antennas = count()?,
            Axis::P => s.power = value,
            Axis::G => match &mut s.channel.model {
                ChannelModel::OneRing(c) => c.groups = count()?,
                ChannelModel::Iid => return Err(Error::Config("the G axis needs the one-ring channel model".into())),
            },
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub results: RunResults,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
}

/// Runs the scenario at every axis value. Realization `i` uses the same
/// seeds at every value.
pub fn sweep(spec: &SweepSpec) -> Result<SweepResults> {
    spec.validate()?;
    let points = spec
        .values
        .iter()
        .map(|&value| {
            Ok(SweepPoint {
                value,
                results: run(&spec.point(value)?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResults {
        axis: spec.axis,
        points,
    })
}

impl SweepResults {
    /// CSV with one row per value and scheme. The G axis adds one mean `R̃`
    /// column per user set, `rt_<users>`, empty where the scheme has no such
    /// layer.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let users = self
            .points
            .first()
            .map(|p| p.results.scenario.demands.users())
            .unwrap_or(0);
        let sets = if self.axis == Axis::G {
            UserSet::all_nonempty(users)
        } else {
            Vec::new()
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["axis_value", "scheme", "mean_rate", "std_rate", "n_realizations"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(sets.iter().map(|s| format!("rt_{}", s.label().replace(',', "_"))));
        w.write_record(&header).map_err(csv_error)?;
        for point in &self.points {
            for row in &point.results.summary {
                let mut rec = vec![
                    point.value.to_string(),
                    row.scheme.to_string(),
                    row.mean_rate.to_string(),
                    row.std_rate.to_string(),
                    row.n_realizations.to_string(),
                ];
                for set in &sets {
                    rec.push(
                        row.mean_layer_rates
                            .iter()
                            .find(|(g, _)| g == set)
                            .map(|(_, v)| v.to_string())
                            .unwrap_or_default(),
                    );
                }
                w.write_record(&rec).map_err(csv_error)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Stored layers differ from the structure the scheme implies.
    Structure {
        detail: String,
    },
    Power {
        total: f64,
        budget: f64,
    },
    /// A rate constraint of user `user` decoding `layers` fails.
    Rate {
        user: usize,
        layers: Vec<UserSet>,
        lhs: f64,
        rhs: f64,
    },
    /// Stored `R̃_G` or `R_S` differ from the sums of the sub-message rates.
    Bookkeeping {
        detail: String,
    },
    /// `|2^{e/B} − u| / u` above tolerance.
    Activity {
        gap: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub realization: usize,
    pub scheme: Scheme,
    pub violation: Violation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tol: f64,
    /// Stored solutions examined.
    pub checked: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.findings.is_empty()
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Re-checks every stored solution against its stored channel: power budget,
/// each rate constraint, rate bookkeeping and, where stored, activity of the
/// exponential constraints.
pub fn validate(results: &RunResults, tol: f64) -> Result<ValidationReport> {
    let scenario = &results.scenario;
    scenario.validate()?;
    let partition = scenario.partition()?;
    let params = scenario.params();
    let mut findings = Vec::new();
    let mut checked = 0;
    for real in &results.realizations {
        for entry in &real.schemes {
            let Some(res) = &entry.result else { continue };
            checked += 1;
            let mut push = |violation| {
                findings.push(Finding {
                    realization: real.index,
                    scheme: res.scheme,
                    violation,
                })
            };
            let layers = build_layers(&partition, res.scheme.layer_scheme())?;
            if layers.layers() != res.layers.as_slice()
                || res.rates.layer_rates.len() != res.layers.len()
                || res.rates.unit_rates.len() != layers.groups().len()
                || res.w.layers() != res.layers.len()
                || res.w.subcarriers() != real.channel.subcarriers()
                || res.w.antennas() != real.channel.antennas()
            {
                push(Violation::Structure {
                    detail: format!("stored solution does not match the {} layer structure", res.scheme),
                });
                continue;
            }
            match assemble_rates(&layers, &res.rates.sub_rates) {
                Ok(expected) => {
                    let stored = res.rates.layer_rates.iter().chain(&res.rates.unit_rates);
                    let fresh = expected.layer_rates.iter().chain(&expected.unit_rates);
                    if stored.zip(fresh).any(|(a, b)| !close(*a, *b, tol)) {
                        push(Violation::Bookkeeping {
                            detail: "transmission-unit or unit rates differ from the sub-message sums".into(),
                        });
                    }
                }
                Err(e) => push(Violation::Bookkeeping { detail: e.to_string() }),
            }
            let report = check_feasibility(&res.w, &res.rates, &real.channel, &layers, &params, tol)?;
            if !report.power_ok {
                push(Violation::Power {
                    total: report.total_power,
                    budget: params.power,
                });
            }
            for v in report.violations() {
                push(Violation::Rate {
                    user: v.user,
                    layers: v.layers.iter().map(|&g| res.layers[g]).collect(),
                    lhs: v.lhs,
                    rhs: v.rhs,
                });
            }
            if let (Some(e), Some(u)) = (&res.e, &res.u) {
                let gap = e
                    .iter()
                    .zip(u)
                    .map(|(e, u)| ((e / params.bandwidth).exp2() - u).abs() / u.abs())
                    .fold(0.0, f64::max);
                if !(gap <= tol) {
                    push(Violation::Activity { gap });
                }
            }
        }
    }
    Ok(ValidationReport { tol, checked, findings })
}

/// Default tolerance of [`validate`].
pub const VALIDATE_TOL: f64 = REPORT_TOL;

/// Mean `R̃_G` of `scheme` at each sweep point, for every layer set present.
pub fn layer_rate_trend(results: &SweepResults, scheme: Scheme) -> Vec<(f64, Vec<(UserSet, f64)>)> {
    results
        .points
        .iter()
        .filter_map(|p| {
            p.results
                .summary_row(scheme)
                .map(|r| (p.value, r.mean_layer_rates.clone()))
        })
        .collect()
}
