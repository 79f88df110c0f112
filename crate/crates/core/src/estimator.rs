//! Moment-based COMET estimation of a distributed source.
//!
//! The model covariance is `R̂(θ) = a(ω₀)a(ω₀)ᴴ ⊙ (P·B̂(μ)) + σ²I`, with the
//! form matrix expanded in central moments. With `ν = P·μ` the model is linear
//! in `α = (P, σ², ν)` for fixed `ω₀`, so the weighted least-squares fit
//!
//! ```text
//! J(ω₀, α) = ‖W^{1/2} (R̄ − R̂) W^{1/2}‖²
//! ```
//!
//! concentrates to `α̂(ω) = Y(ω)⁻¹ y(ω)` and a one-dimensional criterion
//! `y(ω)ᵀ Y(ω)⁻¹ y(ω)` to maximize over ω, where
//!
//! ```text
//! y_c(ω)    = ⟨X_c(ω), W R̄ W⟩,      Y_cd(ω) = ⟨X_c(ω), W X_d(ω) W⟩,
//! X_c(ω)    = Φ(ω) J_c Φ(ω)ᴴ,       Φ(ω) = diag a(ω).
//! ```
//!
//! Both are evaluated in the rotated frame `W̃ = Φᴴ W Φ`, which turns the
//! steering transform into an entrywise phase and never forms `Ψ(ω)`
//! explicitly. Every `J_c` is Hermitian, so `y` and `Y` are real up to
//! round-off; their real parts are used.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::covmodel::{ColumnKind, CovarianceMatrix, LinearParams, Parity, SelectionMatrix};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::optim::golden_section_max;
use crate::stats::{build_weight, sample_covariance, SnapshotSet, WeightSpec};

/// Normal equations above this (Jacobi-scaled) condition number are
/// reported as degenerate.
pub const NORMAL_EQUATIONS_CONDITION_LIMIT: f64 = 1e18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    #[default]
    GoldenSection,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub order: usize,
    #[serde(default)]
    pub parity: Parity,
    #[serde(default)]
    pub weight: WeightSpec,
    /// Defaults to one ambiguity period centered on 0, or `[-0.5, 0.5)`
    /// when the array is aperiodic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_interval: Option<(f64, f64)>,
    /// Defaults to `20·M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_points: Option<usize>,
    #[serde(default = "default_refine_tolerance")]
    pub refine_tolerance: f64,
    #[serde(default)]
    pub refine: Refinement,
    #[serde(default)]
    pub keep_trace: bool,
}

fn default_refine_tolerance() -> f64 {
    1e-7
}

impl EstimatorConfig {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            parity: Parity::AllOrders,
            weight: WeightSpec::inverse(),
            search_interval: None,
            grid_points: None,
            refine_tolerance: default_refine_tolerance(),
            refine: Refinement::GoldenSection,
            keep_trace: false,
        }
    }

    /// Largest admissible order for the geometry.
    pub fn max_order(geom: &ArrayGeometry) -> Result<Self> {
        Ok(Self::new(geom.d_max()?))
    }

    pub fn with_parity(mut self, parity: Parity) -> Self {
        self.parity = parity;
        self
    }

    pub fn with_weight(mut self, weight: WeightSpec) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_search_interval(mut self, lo: f64, hi: f64) -> Self {
        self.search_interval = Some((lo, hi));
        self
    }

    pub fn with_grid_points(mut self, points: usize) -> Self {
        self.grid_points = Some(points);
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    fn resolve(&self, geom: &ArrayGeometry) -> Result<Search> {
        geom.check_order(self.order)?;
        let (lo, hi) = self.search_interval.unwrap_or_else(|| {
            let period = geom.omega_period().unwrap_or(1.0);
            (-0.5 * period, 0.5 * period)
        });
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::EmptySearchInterval { lo, hi });
        }
        let points = self.grid_points.unwrap_or(20 * geom.sensors());
        if points < 3 {
            return Err(Error::InvalidArgument(format!(
                "grid_points must be at least 3, got {points}"
            )));
        }
        if !(self.refine_tolerance > 0.0) {
            return Err(Error::InvalidArgument("refine_tolerance must be positive".into()));
        }
        let periodic = geom
            .omega_period()
            .is_some_and(|p| ((hi - lo) - p).abs() <= 1e-12 * p);
        Ok(Search {
            lo,
            hi,
            points,
            periodic,
        })
    }
}

struct Search {
    lo: f64,
    hi: f64,
    points: usize,
    periodic: bool,
}

impl Search {
    fn step(&self) -> f64 {
        (self.hi - self.lo) / self.points as f64
    }

    fn node(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }

    fn wrap(&self, omega: f64) -> f64 {
        if self.periodic {
            let w = self.lo + (omega - self.lo).rem_euclid(self.hi - self.lo);
            // rem_euclid can round up to the period itself
            if w >= self.hi {
                self.lo
            } else {
                w
            }
        } else {
            omega.clamp(self.lo, self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub power_positive: bool,
    pub dispersion_nonnegative: bool,
    pub noise_nonnegative: bool,
    pub converged: bool,
}

impl Validity {
    pub fn all(&self) -> bool {
        self.power_positive && self.dispersion_nonnegative && self.noise_nonnegative && self.converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub method: String,
    pub order: Option<usize>,
    pub omega0: f64,
    pub power: f64,
    pub noise_var: f64,
    /// `(μ̂₂, …, μ̂_D)`.
    pub mu: Vec<f64>,
    /// `(ν̂₂, …, ν̂_D)`; empty for parametric estimators.
    pub nu: Vec<f64>,
    pub sigma_omega2: f64,
    pub objective: f64,
    pub valid: Validity,
    pub evaluations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_trace: Option<Vec<(f64, f64)>>,
}

impl EstimationResult {
    pub fn z0(&self, z_amb: f64) -> f64 {
        self.omega0 * z_amb
    }

    pub fn sigma_z2(&self, z_amb: f64) -> f64 {
        self.sigma_omega2 * z_amb * z_amb
    }

    pub fn report(&self, z_amb: Option<f64>) -> ResultReport {
        ResultReport {
            method: self.method.clone(),
            order: self.order,
            omega0: self.omega0,
            z0: z_amb.map(|z| self.z0(z)),
            power: self.power,
            sigma_eps2: self.noise_var,
            mu: self.mu.clone(),
            sigma_omega2: self.sigma_omega2,
            sigma_z2: z_amb.map(|z| self.sigma_z2(z)),
            objective: self.objective,
            valid: self.valid,
        }
    }
}

/// The JSON document emitted by the `estimate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultReport {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    pub omega0: f64,
    pub z0: Option<f64>,
    #[serde(rename = "P")]
    pub power: f64,
    pub sigma_eps2: f64,
    pub mu: Vec<f64>,
    pub sigma_omega2: f64,
    pub sigma_z2: Option<f64>,
    pub objective: f64,
    pub valid: Validity,
}

/// `y(ω)` and `Y(ω)` before the real-part projection.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub rhs: Vec<Complex64>,
    pub gram: DMatrix<Complex64>,
}

impl NormalEquations {
    /// Largest imaginary part relative to the Cauchy–Schwarz scale of each
    /// entry: `|Im y_c| / (√Y_cc · ‖R̄‖_W)` and `|Im Y_cd| / √(Y_cc Y_dd)`.
    pub fn imaginary_residue(&self, data_norm: f64) -> (f64, f64) {
        let k = self.rhs.len();
        let scale: Vec<f64> = (0..k).map(|c| self.gram[(c, c)].re.sqrt()).collect();
        let ry = (0..k)
            .map(|c| self.rhs[c].im.abs() / (scale[c] * data_norm))
            .fold(0.0, f64::max);
        let mut rg = 0.0f64;
        for c in 0..k {
            for d in 0..k {
                rg = rg.max(self.gram[(c, d)].im.abs() / (scale[c] * scale[d]));
            }
        }
        (ry, rg)
    }
}

/// Result of one concentrated evaluation at a fixed ω.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentratedStep {
    pub criterion: f64,
    pub linear: LinearParams,
}

/// Precomputed data for evaluating the concentrated criterion at many ω.
///
/// When the positions are integer multiples of a common gap, the rotated
/// frame only contributes a phase per lag difference, and `y(ω)`, `Y(ω)`
/// reduce to trigonometric polynomials whose coefficients are formed once.
/// Other geometries rotate `W` and `W R̄ W` at every ω.
#[derive(Debug, Clone)]
pub struct ConcentratedCriterion {
    selection: SelectionMatrix,
    kernel: Kernel,
    data_norm: f64,
    geom: ArrayGeometry,
    sample: CMatrix,
    weight: CMatrix,
}

#[derive(Debug, Clone)]
enum Kernel {
    Dense(DenseKernel),
    Lag(LagKernel),
}

#[derive(Debug, Clone)]
struct DenseKernel {
    m: usize,
    positions: Vec<f64>,
    /// Real pattern of each column; the column is `scale · pattern`.
    patterns: Vec<Vec<f64>>,
    scales: Vec<Complex64>,
    /// `W` and `W R̄ W`, column-major.
    weight: Vec<Complex64>,
    target: Vec<Complex64>,
}

#[derive(Debug, Clone)]
struct LagKernel {
    columns: usize,
    /// Phase advance per unit lag, `2π · gap`.
    step: f64,
    max_lag: usize,
    /// `y_c(ω) = Σ_p rhs[c][p + L] e^{-jθp}`, `p ∈ [-L, L]`.
    rhs: Vec<Vec<Complex64>>,
    /// `Y_cd(ω) = Σ_r gram[pair(c,d)][r + 2L] e^{-jθr}` for `c ≤ d`.
    gram: Vec<Vec<Complex64>>,
}

fn column_scales(selection: &SelectionMatrix) -> Vec<Complex64> {
    selection
        .columns()
        .iter()
        .map(|col| match col.kind {
            ColumnKind::Power | ColumnKind::Noise => Complex64::new(1.0, 0.0),
            ColumnKind::Moment(d) => {
                let fact: f64 = (2..=d).map(|k| k as f64).product();
                crate::linalg::j_pow(d) / fact
            }
        })
        .collect()
}

/// Real patterns: `11ᵀ`, `I`, then `U^(d)`.
fn column_patterns(geom: &ArrayGeometry, selection: &SelectionMatrix) -> Vec<DMatrix<f64>> {
    let m = geom.sensors();
    selection
        .columns()
        .iter()
        .map(|col| match col.kind {
            ColumnKind::Power => DMatrix::from_element(m, m, 1.0),
            ColumnKind::Noise => DMatrix::identity(m, m),
            ColumnKind::Moment(d) => geom.displacement_powers(d),
        })
        .collect()
}

fn pair_index(c: usize, d: usize) -> usize {
    debug_assert!(c <= d);
    d * (d + 1) / 2 + c
}

impl LagKernel {
    fn new(
        geom: &ArrayGeometry,
        selection: &SelectionMatrix,
        period: f64,
        weight: &CMatrix,
        target: &CMatrix,
    ) -> Self {
        let m = geom.sensors();
        let lag: Vec<i64> = geom.positions().iter().map(|u| (u * period).round() as i64).collect();
        let max_lag = lag[m - 1] as usize;
        let width = 2 * max_lag + 1;
        let at = |k: usize, l: usize| (lag[k] - lag[l] + max_lag as i64) as usize;

        let patterns = column_patterns(geom, selection);
        let scales = column_scales(selection);
        // f_c(p), read off any sensor pair at lag p
        let mut profile = vec![vec![0.0; width]; patterns.len()];
        for (c, pattern) in patterns.iter().enumerate() {
            for k in 0..m {
                for l in 0..m {
                    profile[c][at(k, l)] = pattern[(k, l)];
                }
            }
        }

        let mut g = vec![Complex64::new(0.0, 0.0); width];
        for l in 0..m {
            for k in 0..m {
                g[at(k, l)] += target[(k, l)];
            }
        }
        let rhs = (0..patterns.len())
            .map(|c| (0..width).map(|p| scales[c].conj() * profile[c][p] * g[p]).collect())
            .collect();

        // T[p][q] = Σ_{k-l=p, k'-l'=q} W[k,k'] W[l',l]
        let mut t = vec![Complex64::new(0.0, 0.0); width * width];
        for k in 0..m {
            for l in 0..m {
                let p = at(k, l);
                for kk in 0..m {
                    let wk = weight[(k, kk)];
                    for ll in 0..m {
                        t[p * width + at(kk, ll)] += wk * weight[(ll, l)];
                    }
                }
            }
        }
        let k = patterns.len();
        let span = 2 * width - 1;
        let mut gram = vec![vec![Complex64::new(0.0, 0.0); span]; k * (k + 1) / 2];
        for d in 0..k {
            for c in 0..=d {
                let s = scales[c].conj() * scales[d];
                let out = &mut gram[pair_index(c, d)];
                for p in 0..width {
                    let fp = profile[c][p];
                    if fp == 0.0 {
                        continue;
                    }
                    for q in 0..width {
                        let fq = profile[d][q];
                        if fq != 0.0 {
                            out[p + width - 1 - q] += t[p * width + q] * (fp * fq);
                        }
                    }
                }
                for v in out.iter_mut() {
                    *v *= s;
                }
            }
        }
        Self {
            columns: k,
            step: 2.0 * std::f64::consts::PI / period,
            max_lag,
            rhs,
            gram,
        }
    }

    /// `e^{-jθr}` for `r ∈ [-2L, 2L]`.
    fn phases(&self, omega: f64) -> Vec<Complex64> {
        let top = 2 * self.max_lag;
        let base = Complex64::from_polar(1.0, -self.step * omega);
        let mut out = vec![Complex64::new(1.0, 0.0); 2 * top + 1];
        let mut z = Complex64::new(1.0, 0.0);
        for r in 1..=top {
            z *= base;
            out[top + r] = z;
            out[top - r] = z.conj();
        }
        out
    }

    fn normal_equations(&self, omega: f64) -> NormalEquations {
        let phases = self.phases(omega);
        let (l, k) = (self.max_lag, self.columns);
        let lag_phases = &phases[l..l + 2 * l + 1];
        let rhs = self
            .rhs
            .iter()
            .map(|coef| coef.iter().zip(lag_phases).map(|(a, z)| a * z).sum())
            .collect();
        let mut gram = DMatrix::zeros(k, k);
        for d in 0..k {
            for c in 0..=d {
                let v: Complex64 = self.gram[pair_index(c, d)].iter().zip(&phases).map(|(a, z)| a * z).sum();
                gram[(c, d)] = v;
                gram[(d, c)] = v.conj();
            }
        }
        NormalEquations { rhs, gram }
    }

    fn real_normal_equations(&self, omega: f64) -> (DMatrix<f64>, Vec<f64>) {
        let phases = self.phases(omega);
        let (l, k) = (self.max_lag, self.columns);
        let lag_phases = &phases[l..l + 2 * l + 1];
        let re_dot = |coef: &[Complex64], z: &[Complex64]| -> f64 {
            coef.iter().zip(z).map(|(a, z)| a.re * z.re - a.im * z.im).sum()
        };
        let rhs = self.rhs.iter().map(|coef| re_dot(coef, lag_phases)).collect();
        let mut gram = DMatrix::zeros(k, k);
        for d in 0..k {
            for c in 0..=d {
                let v = re_dot(&self.gram[pair_index(c, d)], &phases);
                gram[(c, d)] = v;
                gram[(d, c)] = v;
            }
        }
        (gram, rhs)
    }
}

impl DenseKernel {
    fn new(geom: &ArrayGeometry, selection: &SelectionMatrix, weight: &CMatrix, target: &CMatrix) -> Self {
        Self {
            m: geom.sensors(),
            positions: geom.positions().to_vec(),
            patterns: column_patterns(geom, selection)
                .into_iter()
                .map(|p| p.as_slice().to_vec())
                .collect(),
            scales: column_scales(selection),
            weight: weight.as_slice().to_vec(),
            target: target.as_slice().to_vec(),
        }
    }

    /// Phases `conj(a_k) a_l` for the rotated frame.
    fn rotated(&self, omega: f64, source: &[Complex64], out: &mut [Complex64]) {
        let m = self.m;
        let a: Vec<Complex64> = self
            .positions
            .iter()
            .map(|u| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * u * omega))
            .collect();
        for l in 0..m {
            for k in 0..m {
                out[k + l * m] = a[k].conj() * source[k + l * m] * a[l];
            }
        }
    }

    fn normal_equations(&self, omega: f64) -> NormalEquations {
        let m = self.m;
        let mm = m * m;
        let k = self.patterns.len();
        let mut wt = vec![Complex64::new(0.0, 0.0); mm];
        let mut gt = vec![Complex64::new(0.0, 0.0); mm];
        self.rotated(omega, &self.weight, &mut wt);
        self.rotated(omega, &self.target, &mut gt);

        // y_c = conj(s_c) Σ P_c[kl] G̃[kl]
        let rhs: Vec<Complex64> = (0..k)
            .map(|c| {
                let acc: Complex64 = self.patterns[c].iter().zip(&gt).map(|(p, g)| g * *p).sum();
                self.scales[c].conj() * acc
            })
            .collect();

        // Q_d = W̃ P_d W̃, then Y_cd = conj(s_c) s_d Σ P_c Q_d
        let mut tmp = vec![Complex64::new(0.0, 0.0); mm];
        let mut q = vec![Complex64::new(0.0, 0.0); mm];
        let mut gram = DMatrix::<Complex64>::zeros(k, k);
        for d in 0..k {
            let pd = &self.patterns[d];
            for col in 0..m {
                for row in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..m {
                        acc += wt[row + i * m] * pd[i + col * m];
                    }
                    tmp[row + col * m] = acc;
                }
            }
            for col in 0..m {
                for row in 0..m {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..m {
                        acc += tmp[row + i * m] * wt[i + col * m];
                    }
                    q[row + col * m] = acc;
                }
            }
            for c in 0..=d {
                let acc: Complex64 = self.patterns[c].iter().zip(&q).map(|(p, v)| v * *p).sum();
                let value = self.scales[c].conj() * self.scales[d] * acc;
                gram[(c, d)] = value;
                if c != d {
                    gram[(d, c)] = value.conj();
                }
            }
        }
        NormalEquations { rhs, gram }
    }
}

impl ConcentratedCriterion {
    pub fn new(
        geom: &ArrayGeometry,
        sample: &CovarianceMatrix,
        weight: &CovarianceMatrix,
        order: usize,
        parity: Parity,
    ) -> Result<Self> {
        let m = geom.sensors();
        if sample.size() != m || weight.size() != m {
            return Err(Error::InvalidArgument(format!(
                "covariance is {}x{}, weight {}x{}, geometry has {m} sensors",
                sample.size(),
                sample.size(),
                weight.size(),
                weight.size()
            )));
        }
        let selection = SelectionMatrix::new(geom, order, parity)?;
        let w = weight.matrix();
        let target = w * sample.matrix() * w;
        let data_norm = crate::linalg::inner(&target, sample.matrix()).re.max(0.0).sqrt();
        let kernel = match geom.omega_period() {
            Some(period) => Kernel::Lag(LagKernel::new(geom, &selection, period, w, &target)),
            None => Kernel::Dense(DenseKernel::new(geom, &selection, w, &target)),
        };
        let criterion = Self {
            selection,
            kernel,
            data_norm,
            geom: geom.clone(),
            sample: sample.matrix().clone(),
            weight: w.clone(),
        };
        criterion.check_rank()?;
        Ok(criterion)
    }

    /// Forces the per-ω rotation path regardless of geometry.
    pub fn new_dense(
        geom: &ArrayGeometry,
        sample: &CovarianceMatrix,
        weight: &CovarianceMatrix,
        order: usize,
        parity: Parity,
    ) -> Result<Self> {
        let mut criterion = Self::new(geom, sample, weight, order, parity)?;
        let w = weight.matrix();
        let target = w * sample.matrix() * w;
        criterion.kernel = Kernel::Dense(DenseKernel::new(geom, &criterion.selection, w, &target));
        Ok(criterion)
    }

    pub fn selection(&self) -> &SelectionMatrix {
        &self.selection
    }

    /// `‖R̄‖_W = √⟨R̄, W R̄ W⟩`; the criterion never exceeds its square.
    pub fn data_norm(&self) -> f64 {
        self.data_norm
    }

    fn check_rank(&self) -> Result<()> {
        // Y(ω) depends on ω only through a congruence by unit phases, so one
        // spectral check is representative.
        let ne = self.normal_equations(0.0);
        let (scaled, _) = scaled_real_gram(ne.gram.map(|z| z.re));
        let eig = scaled.symmetric_eigenvalues();
        let (lo, hi) = eig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= NORMAL_EQUATIONS_CONDITION_LIMIT) {
            return Err(Error::DegenerateNormalEquations {
                order: self.selection.order(),
                condition,
            });
        }
        Ok(())
    }

    /// Complex `y(ω)` and `Y(ω)`.
    pub fn normal_equations(&self, omega: f64) -> NormalEquations {
        match &self.kernel {
            Kernel::Dense(k) => k.normal_equations(omega),
            Kernel::Lag(k) => k.normal_equations(omega),
        }
    }

    /// Solves the real normal equations at ω.
    pub fn evaluate(&self, omega: f64) -> Result<ConcentratedStep> {
        let (gram, rhs) = match &self.kernel {
            Kernel::Dense(k) => {
                let ne = k.normal_equations(omega);
                (ne.gram.map(|z| z.re), ne.rhs.iter().map(|z| z.re).collect())
            }
            Kernel::Lag(k) => k.real_normal_equations(omega),
        };
        let (scaled, scale) = scaled_real_gram(gram);
        let order = self.selection.order();
        let chol = scaled.cholesky().ok_or(Error::DegenerateNormalEquations {
            order,
            condition: f64::INFINITY,
        })?;
        let l = chol.l_dirty();
        let (lo, hi) = (0..l.nrows())
            .map(|i| l[(i, i)])
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let condition = (hi / lo).powi(2);
        if !(condition <= NORMAL_EQUATIONS_CONDITION_LIMIT) {
            return Err(Error::DegenerateNormalEquations { order, condition });
        }
        let rhs = nalgebra::DVector::from_iterator(
            scale.len(),
            rhs.iter().zip(&scale).map(|(y, s): (&f64, &f64)| y / s),
        );
        let beta = chol.solve(&rhs);
        let criterion = rhs.dot(&beta);
        let coefficients: Vec<f64> = beta.iter().zip(&scale).map(|(b, s)| b / s).collect();
        Ok(ConcentratedStep {
            criterion,
            linear: self.selection.linear_params(&coefficients),
        })
    }
}

impl ConcentratedCriterion {
    /// Weighted residual `⟨E, W E W⟩` with `E = R̄ - R̂(ω, α̂(ω))`, formed
    /// directly rather than as `‖R̄‖²_W` minus the criterion.
    pub fn residual(&self, omega: f64) -> Result<(f64, ConcentratedStep)> {
        let step = self.evaluate(omega)?;
        let linear = &step.linear;
        let a = self.geom.steering(omega).values;
        let m = a.len();
        let mut form = CMatrix::zeros(m, m);
        for col in self.selection.columns() {
            let coeff = match col.kind {
                ColumnKind::Power => linear.power,
                ColumnKind::Noise => linear.noise_var,
                ColumnKind::Moment(d) => linear.nu[d - 2],
            };
            if coeff != 0.0 {
                form.zip_apply(&col.matrix, |f, x| *f += x * coeff);
            }
        }
        let e = CMatrix::from_fn(m, m, |k, l| self.sample[(k, l)] - a[k] * a[l].conj() * form[(k, l)]);
        let value = crate::linalg::inner(&(&self.weight * &e * &self.weight), &e).re;
        Ok((value, step))
    }
}

/// Jacobi-scaled `Re Y` and the scale factors `√Y_cc`.
fn scaled_real_gram(mut gram: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let k = gram.nrows();
    let scale: Vec<f64> = (0..k).map(|c| gram[(c, c)].max(f64::MIN_POSITIVE).sqrt()).collect();
    for d in 0..k {
        for c in 0..k {
            gram[(c, d)] /= scale[c] * scale[d];
        }
    }
    (gram, scale)
}

/// One concentrated evaluation from scratch.
pub fn concentrated_step(
    geom: &ArrayGeometry,
    sample: &CovarianceMatrix,
    weight: &CovarianceMatrix,
    order: usize,
    parity: Parity,
    omega: f64,
) -> Result<ConcentratedStep> {
    ConcentratedCriterion::new(geom, sample, weight, order, parity)?.evaluate(omega)
}

pub fn estimate_snapshots(
    geom: &ArrayGeometry,
    snapshots: &SnapshotSet,
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    let sample = sample_covariance(snapshots)?;
    estimate(geom, &sample, config)
}

/// Grid search over ω, golden-section refinement, then the closed-form
/// linear parameters and `μ̂ = ν̂ / P̂`.
///
/// The grid maximum is taken over nodes with `P̂ > 0` when any exist. At the
/// saturated order `D = D_max` the criterion has exact-fit ties half a
/// period away from the source, where the fitted power is negative.
pub fn estimate(
    geom: &ArrayGeometry,
    sample: &CovarianceMatrix,
    config: &EstimatorConfig,
) -> Result<EstimationResult> {
    let search = config.resolve(geom)?;
    let weight = build_weight(&config.weight, sample)?;
    let criterion = ConcentratedCriterion::new(geom, sample, &weight, config.order, config.parity)?;

    let mut trace = config.keep_trace.then(|| Vec::with_capacity(search.points));
    let mut best: Option<(usize, f64)> = None;
    let mut best_any: Option<(usize, f64)> = None;
    let mut first_error = None;
    for i in 0..search.points {
        let omega = search.node(i);
        let step = match criterion.evaluate(omega) {
            Ok(s) => s,
            Err(e) => {
                // conditioning of Re Y varies with ω; skip locally degenerate nodes
                first_error.get_or_insert(e);
                if let Some(t) = trace.as_mut() {
                    t.push((omega, f64::NAN));
                }
                continue;
            }
        };
        if let Some(t) = trace.as_mut() {
            t.push((omega, step.criterion));
        }
        if best_any.is_none_or(|(_, v)| step.criterion > v) {
            best_any = Some((i, step.criterion));
        }
        if step.linear.power > 0.0 && best.is_none_or(|(_, v)| step.criterion > v) {
            best = Some((i, step.criterion));
        }
    }
    let Some((index, grid_value)) = best.or(best_any) else {
        return Err(first_error.expect("grid has at least 3 points"));
    };
    let mut evaluations = search.points;

    let node = search.node(index);
    let (omega, _) = match config.refine {
        Refinement::None => (node, grid_value),
        Refinement::GoldenSection => {
            let h = search.step();
            let (lo, hi) = if search.periodic {
                (node - h, node + h)
            } else {
                ((node - h).max(search.lo), (node + h).min(search.hi))
            };
            // near an exact fit the criterion loses the residual to cancellation
            let fit = |w: f64| criterion.residual(w).map_or(f64::NEG_INFINITY, |(r, _)| -r);
            let opt = golden_section_max(fit, lo, hi, config.refine_tolerance);
            evaluations += opt.evaluations + 1;
            if opt.value >= fit(node) {
                (search.wrap(opt.x), opt.value)
            } else {
                (node, grid_value)
            }
        }
    };

    let step = criterion.evaluate(omega)?;
    evaluations += 1;
    let linear = step.linear;
    let mu = linear
        .moments()
        .unwrap_or_else(|| vec![f64::NAN; linear.nu.len()]);
    let sigma_omega2 = mu[0];
    Ok(EstimationResult {
        method: match config.parity {
            Parity::AllOrders => "moment".into(),
            Parity::EvenOnly => "moment-even".into(),
        },
        order: Some(config.order),
        omega0: omega,
        power: linear.power,
        noise_var: linear.noise_var,
        sigma_omega2,
        valid: Validity {
            power_positive: linear.power > 0.0,
            dispersion_nonnegative: sigma_omega2 >= 0.0,
            noise_nonnegative: linear.noise_var >= 0.0,
            converged: true,
        },
        mu,
        nu: linear.nu,
        objective: step.criterion,
        evaluations,
        search_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodel::{covariance_exact, covariance_moment, SourceParams};
    use crate::shapes::{Family, ShapeSpec};
    use crate::sim::{draw_snapshots, Scenario};
    use proptest::prelude::*;

    fn ula7() -> ArrayGeometry {
        ArrayGeometry::uniform(7, Some(100.0)).unwrap()
    }

    fn random_hermitian_pd(m: usize, values: &[f64]) -> CovarianceMatrix {
        let g = CMatrix::from_fn(m, m, |i, j| Complex64::new(values[2 * (i * m + j)], values[2 * (i * m + j) + 1]));
        CovarianceMatrix::new(&g * g.adjoint() + CMatrix::identity(m, m).scale(0.1)).unwrap()
    }

    #[test]
    fn point_source_zero_residual_fit() {
        let g = ula7();
        let r = covariance_exact(&g, 0.2, 1.0, 0.01, &ShapeSpec::point());
        let step = concentrated_step(&g, &r, &CovarianceMatrix::identity(7), 2, Parity::AllOrders, 0.2).unwrap();
        assert!((step.linear.power - 1.0).abs() < 1e-8);
        assert!((step.linear.noise_var - 0.01).abs() < 1e-8);
        assert!(step.linear.nu[0].abs() < 1e-8);

        let config = EstimatorConfig::new(2).with_weight(WeightSpec::identity()).with_trace();
        let est = estimate(&g, &r, &config).unwrap();
        assert!((est.omega0 - 0.2).abs() < 1e-6, "{}", est.omega0);
        let trace = est.search_trace.unwrap();
        let peak = trace.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert!((peak.0 - 0.2).abs() < 1.0 / 140.0);
    }

    #[test]
    fn pure_noise_criterion_is_flat() {
        let g = ula7();
        let crit = ConcentratedCriterion::new(
            &g,
            &CovarianceMatrix::identity(7),
            &CovarianceMatrix::identity(7),
            5,
            Parity::AllOrders,
        )
        .unwrap();
        let values: Vec<f64> = (0..50).map(|i| crit.evaluate(-0.5 + i as f64 / 50.0).unwrap().criterion).collect();
        let expect = crit.data_norm().powi(2);
        for v in values {
            assert!((v - expect).abs() < 1e-9 * expect, "{v} vs {expect}");
        }
    }

    #[test]
    fn imaginary_residue_is_round_off() {
        let g = ula7();
        let values: Vec<f64> = (0..98).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        let r = random_hermitian_pd(7, &values);
        let w = build_weight(&WeightSpec::inverse(), &r).unwrap();
        let crit = ConcentratedCriterion::new(&g, &r, &w, 11, Parity::AllOrders).unwrap();
        for omega in [-0.43, 0.0, 0.17, 0.31] {
            let (ry, rg) = crit.normal_equations(omega).imaginary_residue(crit.data_norm());
            assert!(ry < 1e-10 && rg < 1e-10, "{ry} {rg}");
        }
    }

    #[test]
    fn gaussian_exact_covariance_recovery() {
        let g = ula7();
        let shape = ShapeSpec::new(Family::Gaussian, 0.01).unwrap();
        let r = covariance_exact(&g, 0.3, 1.0, 0.01, &shape);
        let est = estimate(&g, &r, &EstimatorConfig::new(11)).unwrap();
        assert!((est.omega0 - 0.3).abs() < 1e-6, "{}", est.omega0);
        assert!((est.power - 1.0).abs() < 1e-4, "{}", est.power);
        assert!(((est.sigma_omega2 - 1e-4) / 1e-4).abs() < 1e-3, "{}", est.sigma_omega2);
        assert!(est.valid.all());
    }

    #[test]
    fn moments_are_nu_over_power() {
        let g = ula7();
        let s = Scenario::new(g.clone(), ShapeSpec::new(Family::Exponential, 0.05).unwrap(), -0.1, 1.0, 0.01, 200).unwrap();
        let snaps = draw_snapshots(&s, 9, 0).unwrap();
        for order in [2, 6, 11] {
            let est = estimate_snapshots(&g, &snaps, &EstimatorConfig::new(order)).unwrap();
            assert_eq!(est.mu.len(), order - 1);
            for (m, n) in est.mu.iter().zip(&est.nu) {
                assert_eq!(*m, n / est.power);
            }
            assert_eq!(est.sigma_omega2, est.mu[0]);
        }
    }

    #[test]
    fn even_only_zeroes_odd_moments() {
        let g = ula7();
        let r = covariance_exact(&g, 0.1, 1.0, 0.01, &ShapeSpec::new(Family::Uniform, 0.04).unwrap());
        let est = estimate(&g, &r, &EstimatorConfig::new(11).with_parity(Parity::EvenOnly)).unwrap();
        assert_eq!(est.method, "moment-even");
        for (i, m) in est.mu.iter().enumerate() {
            if (i + 2) % 2 == 1 {
                assert_eq!(*m, 0.0);
            }
        }
        assert!((est.omega0 - 0.1).abs() < 1e-6);
    }

    #[test]
    fn config_errors() {
        let g = ula7();
        let r = CovarianceMatrix::identity(7);
        assert!(matches!(estimate(&g, &r, &EstimatorConfig::new(12)), Err(Error::OrderBound { d_max: 11, .. })));
        assert!(matches!(
            estimate(&g, &r, &EstimatorConfig::new(4).with_search_interval(0.2, 0.2)),
            Err(Error::EmptySearchInterval { .. })
        ));
        assert!(estimate(&g, &r, &EstimatorConfig::new(4).with_grid_points(2)).is_err());
        assert!(estimate(&g, &CovarianceMatrix::identity(5), &EstimatorConfig::new(4)).is_err());
    }

    #[test]
    fn near_degenerate_geometry_is_reported() {
        // almost uniform: the non-uniform order bound admits D = 11, but the
        // array only resolves as many lags as a 4-element ULA
        let g = ArrayGeometry::from_positions(vec![0.0, 1.0, 2.0, 3.0 + 1e-9], None).unwrap();
        assert_eq!(g.d_max().unwrap(), 11);
        let r = covariance_exact(&g, 0.1, 1.0, 0.1, &ShapeSpec::new(Family::Gaussian, 0.03).unwrap());
        let err = estimate(&g, &r, &EstimatorConfig::new(11)).unwrap_err();
        match err {
            Error::DegenerateNormalEquations { order, .. } => assert_eq!(order, 11),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn restricted_interval_is_respected() {
        let g = ula7();
        let r = covariance_exact(&g, 0.3, 1.0, 0.01, &ShapeSpec::new(Family::Gaussian, 0.02).unwrap());
        let est = estimate(&g, &r, &EstimatorConfig::new(6).with_search_interval(0.0, 0.25)).unwrap();
        assert!((0.0..=0.25).contains(&est.omega0));
    }

    #[test]
    fn irregular_array_zero_residual() {
        let g = ArrayGeometry::from_positions(vec![0.0, 0.7, 1.9, 3.1, 4.0], None).unwrap();
        let params = SourceParams {
            omega0: 0.12,
            power: 1.5,
            noise_var: 0.05,
            mu: ShapeSpec::new(Family::Gaussian, 0.03).unwrap().central_moments(6).unwrap(),
        };
        let r = covariance_moment(&g, &params).unwrap();
        let config = EstimatorConfig::new(6).with_search_interval(-0.5, 0.5).with_grid_points(400);
        let est = estimate(&g, &r, &config).unwrap();
        assert!((est.omega0 - 0.12).abs() < 1e-6, "{}", est.omega0);
        assert!((est.power - 1.5).abs() < 1e-6);
        assert!((est.sigma_omega2 - 9e-4).abs() < 1e-6 * 9e-4 * 1e3);
    }

    #[test]
    fn lag_kernel_matches_dense_rotation() {
        let values: Vec<f64> = (0..98).map(|i| ((i * 53 % 97) as f64 / 48.0) - 1.0).collect();
        let r = random_hermitian_pd(7, &values);
        let w = build_weight(&WeightSpec::inverse(), &r).unwrap();
        for positions in [vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0], vec![0.0, 1.0, 4.0, 6.0, 9.0, 10.0, 13.0]] {
            let g = ArrayGeometry::from_positions(positions, None).unwrap();
            for parity in [Parity::AllOrders, Parity::EvenOnly] {
                let order = 8;
                let fast = ConcentratedCriterion::new(&g, &r, &w, order, parity).unwrap();
                let slow = ConcentratedCriterion::new_dense(&g, &r, &w, order, parity).unwrap();
                for omega in [-0.41, -0.05, 0.0, 0.13, 0.37] {
                    let a = fast.normal_equations(omega);
                    let b = slow.normal_equations(omega);
                    for c in 0..a.rhs.len() {
                        let scale = a.gram[(c, c)].re.sqrt() * fast.data_norm();
                        assert!((a.rhs[c] - b.rhs[c]).norm() < 1e-11 * scale);
                        for d in 0..a.rhs.len() {
                            let scale = (a.gram[(c, c)].re * a.gram[(d, d)].re).sqrt();
                            assert!((a.gram[(c, d)] - b.gram[(c, d)]).norm() < 1e-11 * scale);
                        }
                    }
                    let (x, y) = (fast.evaluate(omega).unwrap(), slow.evaluate(omega).unwrap());
                    assert!((x.criterion - y.criterion).abs() < 1e-9 * y.criterion.abs());
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn normal_equations_are_real(values in proptest::collection::vec(-1.0f64..1.0, 98), omega in -0.5f64..0.5, order in 2usize..12) {
            let g = ula7();
            let r = random_hermitian_pd(7, &values);
            let w = build_weight(&WeightSpec::inverse(), &r).unwrap();
            let crit = ConcentratedCriterion::new(&g, &r, &w, order, Parity::AllOrders).unwrap();
            let (ry, rg) = crit.normal_equations(omega).imaginary_residue(crit.data_norm());
            prop_assert!(ry < 1e-10 && rg < 1e-10);
        }

        #[test]
        fn zero_residual_recovery(omega in -0.5f64..0.5, power in 0.5f64..2.0, snr_db in 10.0f64..30.0, sigma_z in 0.5f64..5.0, gaussian in any::<bool>()) {
            let g = ula7();
            let family = if gaussian { Family::Gaussian } else { Family::Uniform };
            let mu = ShapeSpec::new(family, sigma_z / 100.0).unwrap().central_moments(8).unwrap();
            let params = SourceParams { omega0: omega, power, noise_var: power / 10f64.powf(snr_db / 10.0), mu };
            let r = covariance_moment(&g, &params).unwrap();
            // truncated series can be slightly indefinite; any positive weight gives an exact fit
            let weight = if r.min_eigenvalue() > 0.0 { WeightSpec::inverse() } else { WeightSpec::identity() };
            let est = estimate(&g, &r, &EstimatorConfig::new(8).with_weight(weight)).unwrap();
            let dw = (est.omega0 - omega + 0.5).rem_euclid(1.0) - 0.5;
            prop_assert!(dw.abs() < 1e-6, "dw={}", dw);
            prop_assert!(((est.power - power) / power).abs() < 1e-6);
            prop_assert!(((est.mu[0] - params.mu[0]) / params.mu[0]).abs() < 1e-4);
        }

        #[test]
        fn shift_equivariance(delta in -0.3f64..0.3, seed in 0u64..1000) {
            let g = ula7();
            let s = Scenario::new(g.clone(), ShapeSpec::new(Family::Gaussian, 0.05).unwrap(), 0.1, 1.0, 0.01, 64).unwrap();
            let snaps = draw_snapshots(&s, seed, 0).unwrap();
            let a = g.steering(delta).values;
            let shifted = snaps.map_data(|y| CMatrix::from_fn(7, y.ncols(), |k, t| a[k] * y[(k, t)]));
            let config = EstimatorConfig::new(7);
            let base = estimate_snapshots(&g, &snaps, &config).unwrap();
            let moved = estimate_snapshots(&g, &shifted, &config).unwrap();
            let dw = (moved.omega0 - base.omega0 - delta + 0.5).rem_euclid(1.0) - 0.5;
            prop_assert!(dw.abs() < 1e-6, "dw={}", dw);
            prop_assert!((moved.power - base.power).abs() < 1e-6 * base.power.abs().max(1.0));
            prop_assert!((moved.noise_var - base.noise_var).abs() < 1e-6);
            for (x, y) in moved.mu.iter().zip(&base.mu) {
                prop_assert!((x - y).abs() < 1e-5 * y.abs().max(1e-3));
            }
        }

        #[test]
        fn scale_equivariance(c in 0.1f64..10.0, seed in 0u64..1000) {
            let g = ula7();
            let s = Scenario::new(g.clone(), ShapeSpec::new(Family::Uniform, 0.04).unwrap(), -0.2, 1.0, 0.02, 64).unwrap();
            let snaps = draw_snapshots(&s, seed, 3).unwrap();
            let scaled = snaps.map_data(|y| y.map(|z| z * c));
            let config = EstimatorConfig::new(9);
            let base = estimate_snapshots(&g, &snaps, &config).unwrap();
            let big = estimate_snapshots(&g, &scaled, &config).unwrap();
            prop_assert!((big.omega0 - base.omega0).abs() < 1e-6);
            prop_assert!((big.power / (c * c) - base.power).abs() < 1e-6 * base.power.abs().max(1.0));
            prop_assert!((big.noise_var / (c * c) - base.noise_var).abs() < 1e-6 * base.noise_var.abs().max(1e-2));
            for (x, y) in big.mu.iter().zip(&base.mu) {
                prop_assert!((x - y).abs() < 1e-5 * y.abs().max(1e-3));
            }
        }
    }
}
