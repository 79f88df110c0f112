//! Monte-Carlo sweeps over snapshot count, model order or source spread.
//!
//! Every trial draws one snapshot set from its own ChaCha20 stream,
//! `(axis_index << 32) | trial`, and hands the same sample covariance to all
//! configured estimators. Trials run in parallel; results are gathered in
//! trial order, so tables do not depend on the thread count.
//!
//! Errors are normalized per metric: `(ω̂₀ − ω₀)/δω` (equal to `(ẑ₀ − z₀)/δz`),
//! `(σ̂² − σ²)/σ²` for the spread and `(P̂ − P)/P` for the power.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covmodel::{CovarianceMatrix, Parity};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimationResult, EstimatorConfig};
use crate::mle::{ml_estimate, MlConfig, MlInit};
use crate::shapes::{Family, ShapeSpec};
use crate::sim::{draw_snapshots, stream_rng, Scenario, ScenarioConfig};
use crate::stats::{sample_covariance, WeightSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rmse: f64,
    pub bias: f64,
    pub std: f64,
}

/// RMSE, bias and (population) standard deviation about `truth`.
pub fn rmse(estimates: &[f64], truth: f64) -> Result<Summary> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("rmse of an empty sample".into()));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let mse = estimates.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / n;
    let var = estimates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        rmse: mse.sqrt(),
        bias: mean - truth,
        std: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Z0,
    SigmaZ2,
    Power,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Z0, Metric::SigmaZ2, Metric::Power];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Z0 => "z0",
            Metric::SigmaZ2 => "sigma_z2",
            Metric::Power => "power",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "N")]
    Snapshots,
    #[serde(rename = "D")]
    Order,
    #[serde(rename = "sigma_z")]
    SigmaZ,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Snapshots => "N",
            Axis::Order => "D",
            Axis::SigmaZ => "sigma_z",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    /// Defaults to `D_max`; replaced by the axis value on a `D` sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    #[serde(default)]
    pub parity: Parity,
    #[serde(default)]
    pub weight: WeightSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlSpec {
    pub assume: Family,
    #[serde(default)]
    pub negative_tail: bool,
    #[serde(default)]
    pub init: MlInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EstimatorSpec {
    Moment(MomentSpec),
    Ml(MlSpec),
}

impl EstimatorSpec {
    pub fn moment(order: Option<usize>, parity: Parity) -> Self {
        EstimatorSpec::Moment(MomentSpec {
            order,
            parity,
            weight: WeightSpec::inverse(),
            label: None,
        })
    }

    pub fn ml(assume: Family) -> Self {
        EstimatorSpec::Ml(MlSpec {
            assume,
            negative_tail: false,
            init: MlInit::Grid,
            label: None,
        })
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorSpec::Moment(m) => m.label.clone().unwrap_or_else(|| {
                let stem = match m.parity {
                    Parity::AllOrders => "moment",
                    Parity::EvenOnly => "moment-even",
                };
                match m.order {
                    Some(d) => format!("{stem}-D{d}"),
                    None => format!("{stem}-Dmax"),
                }
            }),
            EstimatorSpec::Ml(m) => m.label.clone().unwrap_or_else(|| format!("ml-{}", m.assume)),
        }
    }

    fn run(&self, scenario: &Scenario, sample: &CovarianceMatrix, order_override: Option<usize>) -> Result<EstimationResult> {
        let geom = &scenario.geom;
        match self {
            EstimatorSpec::Moment(m) => {
                let order = match order_override.or(m.order) {
                    Some(d) => d,
                    None => geom.d_max()?,
                };
                let config = EstimatorConfig::new(order).with_parity(m.parity).with_weight(m.weight);
                estimate(geom, sample, &config)
            }
            EstimatorSpec::Ml(m) => {
                let mut config = MlConfig::new(m.assume).with_init(m.init);
                config.negative_tail = m.negative_tail;
                ml_estimate(geom, sample, &config)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub name: Axis,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenario: ScenarioConfig,
    pub axis: AxisSpec,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Appended to estimator labels as `label@tag`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

pub const DEFAULT_TRIALS: usize = 5000;
pub const SMOKE_TRIALS: usize = 200;

fn default_trials() -> usize {
    DEFAULT_TRIALS
}

impl SweepConfig {
    fn scenario_at(&self, base: &Scenario, value: f64) -> Result<(Scenario, Option<usize>)> {
        let mut s = base.clone();
        let mut order = None;
        match self.axis.name {
            Axis::Snapshots => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::InvalidArgument(format!("N axis value {value} is not a positive integer")));
                }
                s.snapshots = value as usize;
            }
            Axis::Order => {
                if !(value >= 2.0 && value.fract() == 0.0) {
                    return Err(Error::InvalidArgument(format!("D axis value {value} is not an integer >= 2")));
                }
                s.geom.check_order(value as usize)?;
                order = Some(value as usize);
            }
            Axis::SigmaZ => {
                let z_amb = s
                    .geom
                    .z_amb()
                    .ok_or_else(|| Error::InvalidArgument("sigma_z axis needs geometry.z_amb".into()))?;
                let sigma = crate::array::height_to_omega(value, z_amb)?;
                s.shape = ShapeSpec::new(s.shape.family(), sigma)?.with_orientation(s.shape.orientation() < 0.0);
            }
        }
        Ok((s, order))
    }

    pub fn validate(&self) -> Result<Scenario> {
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be at least 1".into()));
        }
        if self.axis.values.is_empty() {
            return Err(Error::InvalidArgument("sweep axis has no values".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("sweep has no estimators".into()));
        }
        let base = self.scenario.build()?;
        for &v in &self.axis.values {
            self.scenario_at(&base, v)?;
        }
        Ok(base)
    }

    pub fn labels(&self) -> Vec<String> {
        self.estimators
            .iter()
            .map(|e| match &self.tag {
                Some(tag) => format!("{}@{tag}", e.label()),
                None => e.label(),
            })
            .collect()
    }
}

/// One (estimator, axis value) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub estimator: String,
    pub axis_name: Axis,
    pub axis_value: f64,
    pub trials: usize,
    /// Estimator returned an error.
    pub failed: usize,
    /// Returned with at least one validity flag cleared.
    pub invalid: usize,
    pub nonconverged: usize,
    /// Normalized per-trial errors, `NaN` where the trial produced none.
    pub z0_errors: Vec<f64>,
    pub sigma_z2_errors: Vec<f64>,
    pub power_errors: Vec<f64>,
}

impl Cell {
    pub fn errors(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Z0 => &self.z0_errors,
            Metric::SigmaZ2 => &self.sigma_z2_errors,
            Metric::Power => &self.power_errors,
        }
    }

    /// Summary over the finite errors, with their count.
    pub fn summary(&self, metric: Metric) -> (Option<Summary>, usize) {
        let finite: Vec<f64> = self.errors(metric).iter().copied().filter(|e| e.is_finite()).collect();
        (rmse(&finite, 0.0).ok(), finite.len())
    }

    pub fn rmse(&self, metric: Metric) -> f64 {
        self.summary(metric).0.map_or(f64::NAN, |s| s.rmse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<Cell>,
}

impl SweepResult {
    pub fn cell(&self, estimator: &str, axis_value: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.estimator == estimator && c.axis_value == axis_value)
    }

    pub fn extend(&mut self, other: SweepResult) {
        self.cells.extend(other.cells);
    }

    /// CSV table for one metric.
    pub fn to_csv(&self, metric: Metric) -> String {
        let mut out = String::from("estimator,axis_name,axis_value,rmse,bias,std,n_trials,n_invalid\n");
        for c in &self.cells {
            let (summary, n) = c.summary(metric);
            let s = summary.unwrap_or(Summary {
                rmse: f64::NAN,
                bias: f64::NAN,
                std: f64::NAN,
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.estimator,
                c.axis_name.name(),
                c.axis_value,
                s.rmse,
                s.bias,
                s.std,
                n,
                c.failed + c.invalid
            );
        }
        out
    }
}

struct Outcome {
    z0: f64,
    sigma_z2: f64,
    power: f64,
    failed: bool,
    invalid: bool,
    nonconverged: bool,
}

fn outcome(scenario: &Scenario, result: Option<EstimationResult>) -> Outcome {
    match result {
        None => Outcome {
            z0: f64::NAN,
            sigma_z2: f64::NAN,
            power: f64::NAN,
            failed: true,
            invalid: false,
            nonconverged: true,
        },
        Some(est) => {
            let mut dw = est.omega0 - scenario.omega0;
            if let Some(p) = scenario.geom.omega_period() {
                dw -= p * (dw / p).round();
            }
            let s2 = scenario.shape.sigma_omega().powi(2);
            let ds = est.sigma_omega2 - s2;
            Outcome {
                z0: dw / scenario.geom.omega_resolution(),
                sigma_z2: if s2 > 0.0 { ds / s2 } else { ds },
                power: (est.power - scenario.power) / scenario.power,
                failed: false,
                invalid: !est.valid.all(),
                nonconverged: !est.valid.converged,
            }
        }
    }
}

pub fn trial_stream(axis_index: usize, trial: usize) -> u64 {
    ((axis_index as u64) << 32) | trial as u64
}

/// Runs every trial, sharing the snapshot set across estimators.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    let base = config.validate()?;
    let labels = config.labels();
    let mut cells = Vec::new();
    for (axis_index, &value) in config.axis.values.iter().enumerate() {
        let (scenario, order) = config.scenario_at(&base, value)?;
        let outcomes: Vec<Vec<Outcome>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let stream = trial_stream(axis_index, trial);
                let sample = draw_snapshots(&scenario, config.master_seed, stream).and_then(|s| sample_covariance(&s));
                config
                    .estimators
                    .iter()
                    .map(|spec| {
                        let result = sample.as_ref().ok().and_then(|r| spec.run(&scenario, r, order).ok());
                        outcome(&scenario, result)
                    })
                    .collect()
            })
            .collect();
        for (e, label) in labels.iter().enumerate() {
            let column = outcomes.iter().map(|o| &o[e]);
            cells.push(Cell {
                estimator: label.clone(),
                axis_name: config.axis.name,
                axis_value: value,
                trials: config.trials,
                failed: column.clone().filter(|o| o.failed).count(),
                invalid: column.clone().filter(|o| o.invalid).count(),
                nonconverged: column.clone().filter(|o| o.nonconverged).count(),
                z0_errors: column.clone().map(|o| o.z0).collect(),
                sigma_z2_errors: column.clone().map(|o| o.sigma_z2).collect(),
                power_errors: column.map(|o| o.power).collect(),
            });
        }
    }
    Ok(SweepResult { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval of a statistic of resampled trial indices.
///
/// Resampling indices (rather than values) keeps paired comparisons paired.
pub fn bootstrap_interval<F>(trials: usize, resamples: usize, level: f64, seed: u64, statistic: F) -> Interval
where
    F: Fn(&[usize]) -> f64,
{
    let mut rng = stream_rng(seed, u64::MAX);
    let mut idx = vec![0usize; trials];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.gen_range(0..trials);
            }
            statistic(&idx)
        })
        .filter(|v| v.is_finite())
        .collect();
    stats.sort_by(f64::total_cmp);
    if stats.is_empty() {
        return Interval {
            lo: f64::NAN,
            hi: f64::NAN,
        };
    }
    let tail = 0.5 * (1.0 - level);
    let pick = |q: f64| stats[((q * stats.len() as f64).floor() as usize).min(stats.len() - 1)];
    Interval {
        lo: pick(tail),
        hi: pick(1.0 - tail),
    }
}

/// RMSE of the finite entries of `errors` at the given indices.
pub fn rmse_at(errors: &[f64], idx: &[usize]) -> f64 {
    let (sum, n) = idx
        .iter()
        .map(|&i| errors[i])
        .filter(|e| e.is_finite())
        .fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (sum / n as f64).sqrt()
}

/// Interval on `RMSE(a) / RMSE(b)` for paired per-trial errors.
pub fn bootstrap_rmse_ratio(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Interval {
    assert_eq!(a.len(), b.len());
    bootstrap_interval(a.len(), resamples, 0.95, seed, |idx| rmse_at(a, idx) / rmse_at(b, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["fig2", "fig3", "fig4"];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
        }
    }

    /// Reference configuration: M = 7, z_amb = 100 m, z₀ = 30 m, σ_z = 5 m,
    /// SNR = 20 dB, `W = R̄⁻¹`.
    pub fn scenario(family: Family, snapshots: usize) -> ScenarioConfig {
        use crate::array::{GeometryConfig, UniformConfig};
        use crate::shapes::ShapeConfig;
        ScenarioConfig {
            geometry: GeometryConfig::Uniform {
                uniform: UniformConfig {
                    sensors: 7,
                    z_amb: Some(100.0),
                },
            },
            shape: ShapeConfig {
                family,
                sigma_omega: None,
                sigma_z: Some(5.0),
                negative_tail: None,
            },
            omega0: None,
            z0: Some(30.0),
            power: 1.0,
            noise_var: None,
            snr_db: Some(20.0),
            snapshots,
        }
    }

    pub fn sweeps(self, trials: usize, master_seed: u64) -> Vec<SweepConfig> {
        let baselines = || {
            vec![
                EstimatorSpec::ml(Family::Gaussian),
                EstimatorSpec::ml(Family::Exponential),
                EstimatorSpec::ml(Family::Uniform),
                EstimatorSpec::moment(None, Parity::AllOrders),
                EstimatorSpec::moment(None, Parity::EvenOnly),
            ]
        };
        match self {
            Preset::Fig2 => [Family::Gaussian, Family::Exponential]
                .into_iter()
                .map(|family| SweepConfig {
                    scenario: Self::scenario(family, 1000),
                    axis: AxisSpec {
                        name: Axis::Snapshots,
                        values: vec![100.0, 1000.0, 10000.0],
                    },
                    estimators: (2..=11).map(|d| EstimatorSpec::moment(Some(d), Parity::AllOrders)).collect(),
                    trials,
                    master_seed,
                    tag: Some(family.to_string()),
                })
                .collect(),
            Preset::Fig3 => vec![SweepConfig {
                scenario: Self::scenario(Family::Uniform, 1000),
                axis: AxisSpec {
                    name: Axis::Snapshots,
                    values: vec![100.0, 1000.0, 10000.0],
                },
                estimators: baselines(),
                trials,
                master_seed,
                tag: None,
            }],
            Preset::Fig4 => vec![SweepConfig {
                scenario: Self::scenario(Family::Uniform, 100),
                axis: AxisSpec {
                    name: Axis::SigmaZ,
                    values: vec![1.0, 2.0, 5.0, 10.0, 14.0, 20.0],
                },
                estimators: baselines(),
                trials,
                master_seed,
                tag: None,
            }],
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            "fig4" => Ok(Preset::Fig4),
            other => Err(Error::InvalidArgument(format!(
                "unknown preset '{other}', expected one of: {}",
                Preset::NAMES.join(", ")
            ))),
        }
    }
}

/// Runs a list of sweeps and concatenates their tables.
pub fn run_sweeps(configs: &[SweepConfig]) -> Result<SweepResult> {
    let mut all = SweepResult { cells: Vec::new() };
    for c in configs {
        all.extend(run_sweep(c)?);
    }
    Ok(all)
}
