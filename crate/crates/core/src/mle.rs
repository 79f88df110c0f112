//! Parametric maximum-likelihood baselines.
//!
//! The source shape is assumed known up to its spread, so the unknowns are
//! `(ω₀, σ_ω, P, σ²)` and the complex-Gaussian negative log-likelihood
//! `ln det R(θ) + tr(R(θ)⁻¹ R̄)` is minimized numerically: a coarse grid
//! over `(ω₀, σ_ω)`, then Nelder–Mead over all four parameters from the best
//! few grid points. The spread is confined to `[0, σ_max]`, one resolution
//! cell by default, beyond which the model is not identifiable.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::covmodel::{covariance_exact, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimationResult, EstimatorConfig, Validity};
use crate::optim::{nelder_mead, SimplexOptions};
use crate::shapes::{Family, ShapeSpec};

/// Relative distance to `σ_max` at which the spread counts as pinned.
pub const BOUNDARY_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlParams {
    pub omega0: f64,
    pub sigma_omega: f64,
    pub power: f64,
    pub noise_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlInit {
    #[default]
    Grid,
    FromMomentEstimator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlConfig {
    pub assumed_family: Family,
    #[serde(default)]
    pub negative_tail: bool,
    #[serde(default)]
    pub init: MlInit,
    /// Defaults to `20·M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_grid: Option<usize>,
    #[serde(default = "default_sigma_grid")]
    pub sigma_grid: usize,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Defaults to the array's ω resolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_max: Option<f64>,
    #[serde(default)]
    pub keep_trace: bool,
}

fn default_sigma_grid() -> usize {
    8
}
fn default_starts() -> usize {
    3
}
fn default_max_iterations() -> usize {
    1000
}
fn default_tolerance() -> f64 {
    1e-10
}

impl MlConfig {
    pub fn new(assumed_family: Family) -> Self {
        Self {
            assumed_family,
            negative_tail: false,
            init: MlInit::Grid,
            omega_grid: None,
            sigma_grid: default_sigma_grid(),
            starts: default_starts(),
            max_iterations: default_max_iterations(),
            tolerance: default_tolerance(),
            sigma_max: None,
            keep_trace: false,
        }
    }

    pub fn with_init(mut self, init: MlInit) -> Self {
        self.init = init;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    fn shape(&self, sigma_omega: f64) -> Result<ShapeSpec> {
        Ok(ShapeSpec::new(self.assumed_family, sigma_omega)?.with_orientation(self.negative_tail))
    }

    fn validate(&self, geom: &ArrayGeometry) -> Result<f64> {
        if self.assumed_family == Family::Point {
            return Err(Error::InvalidArgument("ML needs a distributed family".into()));
        }
        if self.omega_grid == Some(0) || self.sigma_grid == 0 || self.starts == 0 {
            return Err(Error::InvalidArgument("ML grids and start count must be non-empty".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("ML tolerance must be positive".into()));
        }
        let sigma_max = self.sigma_max.unwrap_or_else(|| geom.omega_resolution());
        if !(sigma_max > 0.0 && sigma_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma_max must be positive, got {sigma_max}")));
        }
        Ok(sigma_max)
    }
}

/// `ln det R + tr(R⁻¹ R̄)` for a model covariance `R`.
pub fn gaussian_nll(model: &CovarianceMatrix, sample: &CovarianceMatrix) -> Result<f64> {
    let chol = model.matrix().clone().cholesky().ok_or(Error::SingularModel)?;
    let l = chol.l_dirty();
    let m = model.size();
    let diag: Vec<f64> = (0..m).map(|i| l[(i, i)].re).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 1e-8 * hi) {
        return Err(Error::SingularModel);
    }
    let log_det = 2.0 * diag.iter().map(|v| v.ln()).sum::<f64>();
    let solved: DMatrix<Complex64> = chol.solve(sample.matrix());
    Ok(log_det + solved.trace().re)
}

pub fn negative_log_likelihood(
    geom: &ArrayGeometry,
    shape: &ShapeSpec,
    params: &MlParams,
    sample: &CovarianceMatrix,
) -> Result<f64> {
    if !(params.power > 0.0 && params.noise_var > 0.0) {
        return Err(Error::InvalidArgument("ML needs P > 0 and noise variance > 0".into()));
    }
    let shape = ShapeSpec::new(shape.family(), params.sigma_omega)?.with_orientation(shape.orientation() < 0.0);
    let model = covariance_exact(geom, params.omega0, params.power, params.noise_var, &shape);
    gaussian_nll(&model, sample)
}

struct Problem<'a> {
    geom: &'a ArrayGeometry,
    sample: &'a CovarianceMatrix,
    config: &'a MlConfig,
    sigma_max: f64,
}

impl Problem<'_> {
    fn nll(&self, p: &MlParams) -> f64 {
        if !(p.sigma_omega >= 0.0 && p.sigma_omega <= self.sigma_max) {
            return f64::INFINITY;
        }
        let Ok(shape) = self.config.shape(p.sigma_omega) else {
            return f64::INFINITY;
        };
        let model = covariance_exact(self.geom, p.omega0, p.power, p.noise_var, &shape);
        gaussian_nll(&model, self.sample).unwrap_or(f64::INFINITY)
    }

    fn unpack(x: &[f64]) -> MlParams {
        MlParams {
            omega0: x[0],
            sigma_omega: x[1],
            power: x[2].exp(),
            noise_var: x[3].exp(),
        }
    }

    fn refine(&self, start: &MlParams, omega_step: f64) -> Local {
        let x0 = [start.omega0, start.sigma_omega, start.power.ln(), start.noise_var.ln()];
        let s_step = 0.25 * self.sigma_max;
        let s_step = if start.sigma_omega + s_step > self.sigma_max { -s_step } else { s_step };
        let steps = [omega_step, s_step, 0.2, 0.5];
        let options = SimplexOptions {
            max_iterations: self.config.max_iterations,
            value_tolerance: self.config.tolerance,
            step_tolerance: 1e-9,
        };
        let opt = nelder_mead(|x| self.nll(&Self::unpack(x)), &x0, &steps, options);
        Local {
            params: Self::unpack(&opt.x),
            value: opt.value,
            converged: opt.converged,
            evaluations: opt.evaluations,
        }
    }
}

struct Local {
    params: MlParams,
    value: f64,
    converged: bool,
    evaluations: usize,
}

fn lexicographic(a: &MlParams, b: &MlParams) -> Ordering {
    a.omega0
        .total_cmp(&b.omega0)
        .then(a.sigma_omega.total_cmp(&b.sigma_omega))
        .then(a.power.total_cmp(&b.power))
        .then(a.noise_var.total_cmp(&b.noise_var))
}

/// Grid plus multi-start local descent.
///
/// The result's `objective` is the minimized negative log-likelihood and its
/// trace, if requested, holds `(ω, min over σ_ω grid of the NLL)`. Failure to
/// converge is reported through `valid.converged`, which is also cleared when
/// the spread ends on its upper bound.
pub fn ml_estimate(geom: &ArrayGeometry, sample: &CovarianceMatrix, config: &MlConfig) -> Result<EstimationResult> {
    let sigma_max = config.validate(geom)?;
    if sample.size() != geom.sensors() {
        return Err(Error::InvalidArgument(format!(
            "covariance is {}x{}, geometry has {} sensors",
            sample.size(),
            sample.size(),
            geom.sensors()
        )));
    }
    let problem = Problem {
        geom,
        sample,
        config,
        sigma_max,
    };
    let m = geom.sensors() as f64;
    let level = sample.trace() / m;
    let floor = sample.min_eigenvalue().max(1e-6 * level);
    let power0 = (level - floor).max(1e-3 * level);

    let period = geom.omega_period().unwrap_or(1.0);
    let omega_points = config.omega_grid.unwrap_or(20 * geom.sensors());
    let omega_step = period / omega_points as f64;
    let mut evaluations = 0;
    let mut trace = config.keep_trace.then(Vec::new);

    let starts: Vec<MlParams> = match config.init {
        MlInit::FromMomentEstimator => {
            let est = EstimatorConfig::max_order(geom).and_then(|c| estimate(geom, sample, &c))?;
            vec![MlParams {
                omega0: est.omega0,
                sigma_omega: est.sigma_omega2.max(0.0).sqrt().min(0.9 * sigma_max),
                power: if est.power > 0.0 { est.power } else { power0 },
                noise_var: if est.noise_var > 0.0 { est.noise_var } else { floor },
            }]
        }
        MlInit::Grid => {
            let sigmas: Vec<f64> = if config.sigma_grid == 1 {
                vec![0.5 * sigma_max]
            } else {
                (0..config.sigma_grid)
                    .map(|i| sigma_max * i as f64 / (config.sigma_grid - 1) as f64)
                    .collect()
            };
            // best σ per ω node
            let mut profile = Vec::with_capacity(omega_points);
            for i in 0..omega_points {
                let omega = -0.5 * period + omega_step * i as f64;
                let best = sigmas
                    .iter()
                    .map(|&s| {
                        let p = MlParams {
                            omega0: omega,
                            sigma_omega: s,
                            power: power0,
                            noise_var: floor,
                        };
                        (problem.nll(&p), p)
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .expect("sigma grid is non-empty");
                evaluations += sigmas.len();
                if let Some(t) = trace.as_mut() {
                    t.push((omega, best.0));
                }
                profile.push(best);
            }
            // local minima along the ω ring, best first
            let n = profile.len();
            let mut picks: Vec<usize> = (0..n)
                .filter(|&i| {
                    let v = profile[i].0;
                    n < 3 || (v <= profile[(i + n - 1) % n].0 && v <= profile[(i + 1) % n].0)
                })
                .collect();
            if picks.is_empty() {
                picks = (0..n).collect();
            }
            picks.sort_by(|&a, &b| profile[a].0.total_cmp(&profile[b].0).then(a.cmp(&b)));
            picks.truncate(config.starts);
            picks.into_iter().map(|i| profile[i].1).collect()
        }
    };

    let mut best: Option<Local> = None;
    for start in &starts {
        let local = problem.refine(start, omega_step);
        evaluations += local.evaluations;
        let better = match &best {
            None => true,
            Some(b) => match local.value.total_cmp(&b.value) {
                Ordering::Less => true,
                Ordering::Equal => lexicographic(&local.params, &b.params) == Ordering::Less,
                Ordering::Greater => false,
            },
        };
        if better {
            best = Some(local);
        }
    }
    let best = best.expect("at least one start");
    finish(geom, config, sigma_max, best, evaluations, trace)
}

/// Local descent from a given point, without the grid stage.
pub fn ml_refine(
    geom: &ArrayGeometry,
    sample: &CovarianceMatrix,
    config: &MlConfig,
    start: &MlParams,
) -> Result<EstimationResult> {
    let sigma_max = config.validate(geom)?;
    let problem = Problem {
        geom,
        sample,
        config,
        sigma_max,
    };
    let omega_step = geom.omega_period().unwrap_or(1.0) / config.omega_grid.unwrap_or(20 * geom.sensors()) as f64;
    let local = problem.refine(start, omega_step);
    let evaluations = local.evaluations;
    finish(geom, config, sigma_max, local, evaluations, None)
}

fn finish(
    geom: &ArrayGeometry,
    config: &MlConfig,
    sigma_max: f64,
    best: Local,
    evaluations: usize,
    trace: Option<Vec<(f64, f64)>>,
) -> Result<EstimationResult> {
    let mut p = best.params;
    if let Some(period) = geom.omega_period() {
        p.omega0 -= period * (p.omega0 / period).round();
    }
    let pinned = p.sigma_omega >= sigma_max * (1.0 - BOUNDARY_TOLERANCE);
    let finite = best.value.is_finite();
    let order = geom.d_max()?;
    let mu = if finite {
        config.shape(p.sigma_omega)?.central_moments(order)?
    } else {
        vec![f64::NAN; order - 1]
    };
    Ok(EstimationResult {
        method: format!("ml-{}", config.assumed_family),
        order: None,
        omega0: p.omega0,
        power: p.power,
        noise_var: p.noise_var,
        sigma_omega2: p.sigma_omega * p.sigma_omega,
        mu,
        nu: Vec::new(),
        objective: best.value,
        valid: Validity {
            power_positive: p.power > 0.0,
            dispersion_nonnegative: true,
            noise_nonnegative: true,
            converged: best.converged && finite && !pinned,
        },
        evaluations,
        search_trace: trace,
    })
}
