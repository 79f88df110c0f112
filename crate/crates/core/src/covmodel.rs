//! Covariance structures: the exact form matrix `B`, the moment-expanded
//! `B̂(μ)`, the model covariance `R`, the selection matrix `J` that maps the
//! linear parameters into `vec(P·B̂ + σ²I)`, and the steering transform
//! `Ψ(ω)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::ArrayGeometry;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::shapes::ShapeSpec;

/// Which moment orders enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    #[default]
    AllOrders,
    /// Odd central moments are pinned to zero (symmetric distributions).
    EvenOnly,
}

impl Parity {
    pub fn includes(self, order: usize) -> bool {
        match self {
            Parity::AllOrders => true,
            Parity::EvenOnly => order.is_multiple_of(2),
        }
    }
}

/// A Hermitian `M×M` matrix: sample covariances, model covariances, form
/// matrices and weights all share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(CMatrix);

impl CovarianceMatrix {
    pub const HERMITIAN_RTOL: f64 = 1e-12;

    /// Checks squareness and Hermitian symmetry (relative to the largest
    /// entry), then scrubs the residual asymmetry.
    pub fn new(values: CMatrix) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "covariance must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("covariance has non-finite entries".into()));
        }
        let scale = linalg::max_abs(&values).max(f64::MIN_POSITIVE);
        let defect = linalg::hermitian_defect(&values);
        if defect > Self::HERMITIAN_RTOL * scale {
            return Err(Error::InvalidArgument(format!(
                "matrix is not Hermitian (defect {defect:.3e} relative to {scale:.3e})"
            )));
        }
        Ok(Self(linalg::hermitian_part(&values)))
    }

    /// Wraps a matrix that is Hermitian by construction.
    pub(crate) fn from_hermitian(values: CMatrix) -> Self {
        debug_assert!(linalg::hermitian_defect(&values) <= 1e-9 * linalg::max_abs(&values).max(1.0));
        Self(values)
    }

    pub fn identity(size: usize) -> Self {
        Self(CMatrix::identity(size, size))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_inner(self) -> CMatrix {
        self.0
    }

    pub fn size(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.size()).map(|k| self.0[(k, k)].re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.0)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.scale(factor))
    }

    pub fn to_csv(&self) -> String {
        linalg::matrix_to_csv(&self.0)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let m = linalg::matrix_from_csv(text)
            .ok_or_else(|| Error::Format("covariance CSV must be a square grid of re+imj cells".into()))?;
        Self::new(m)
    }
}

/// Full parameter vector `θ = (ω₀, P, σ², μ₂…μ_D)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    pub omega0: f64,
    pub power: f64,
    pub noise_var: f64,
    pub mu: Vec<f64>,
}

impl SourceParams {
    pub fn order(&self) -> usize {
        self.mu.len() + 1
    }

    pub fn linear(&self) -> LinearParams {
        LinearParams {
            power: self.power,
            noise_var: self.noise_var,
            nu: self.mu.iter().map(|m| m * self.power).collect(),
        }
    }
}

/// Linearly entering parameters `α = (P, σ², ν)` with `ν = P·μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub power: f64,
    pub noise_var: f64,
    pub nu: Vec<f64>,
}

impl LinearParams {
    /// `μ = ν / P`; `None` when `P = 0`.
    pub fn moments(&self) -> Option<Vec<f64>> {
        (self.power != 0.0).then(|| self.nu.iter().map(|v| v / self.power).collect())
    }
}

/// `B_{k,l} = φ(2π(u_k − u_l))`.
pub fn form_matrix_exact(geom: &ArrayGeometry, shape: &ShapeSpec) -> CovarianceMatrix {
    let u = geom.positions();
    let m = u.len();
    let mut b = CMatrix::identity(m, m);
    for l in 0..m {
        for k in (l + 1)..m {
            let v = shape.charfn(2.0 * std::f64::consts::PI * (u[k] - u[l]));
            b[(k, l)] = v;
            b[(l, k)] = v.conj();
        }
    }
    CovarianceMatrix::from_hermitian(b)
}

/// `B̂(μ) = 11ᵀ + Σ_{d=2}^{D} (j^d / d!) μ_d U^(d)` with `μ = (μ₂, …, μ_D)`.
pub fn form_matrix_moment(geom: &ArrayGeometry, mu: &[f64], order: usize) -> Result<CovarianceMatrix> {
    if order < 2 || mu.len() != order - 1 {
        return Err(Error::InvalidArgument(format!(
            "order {order} needs {} moments (μ₂…μ_D), got {}",
            order.saturating_sub(1),
            mu.len()
        )));
    }
    let m = geom.sensors();
    let mut b = CMatrix::from_element(m, m, Complex64::new(1.0, 0.0));
    let mut factorial = 1.0;
    for (idx, &moment) in mu.iter().enumerate() {
        let d = idx + 2;
        factorial *= d as f64;
        if moment == 0.0 {
            continue;
        }
        let coeff = linalg::j_pow(d) * (moment / factorial);
        let powers = geom.displacement_powers(d);
        for (z, p) in b.iter_mut().zip(powers.iter()) {
            *z += coeff * *p;
        }
    }
    Ok(CovarianceMatrix::from_hermitian(b))
}

fn steer_form(geom: &ArrayGeometry, omega0: f64, power: f64, noise_var: f64, form: &CMatrix) -> CovarianceMatrix {
    let a = geom.steering(omega0).values;
    let m = geom.sensors();
    let mut r = CMatrix::from_fn(m, m, |k, l| a[k] * a[l].conj() * form[(k, l)] * power);
    for k in 0..m {
        // the diagonal of a(ω)a(ω)ᴴ ⊙ B is exactly P
        r[(k, k)] = Complex64::new(power * form[(k, k)].re + noise_var, 0.0);
    }
    CovarianceMatrix::from_hermitian(r)
}

/// `R = a(ω₀)a(ω₀)ᴴ ⊙ P·B + σ²I` for a ground-truth shape.
pub fn covariance_exact(
    geom: &ArrayGeometry,
    omega0: f64,
    power: f64,
    noise_var: f64,
    shape: &ShapeSpec,
) -> CovarianceMatrix {
    let b = form_matrix_exact(geom, shape);
    steer_form(geom, omega0, power, noise_var, b.matrix())
}

/// `R̂(θ)` of the moment model.
pub fn covariance_moment(geom: &ArrayGeometry, params: &SourceParams) -> Result<CovarianceMatrix> {
    let b = form_matrix_moment(geom, &params.mu, params.order())?;
    Ok(steer_form(geom, params.omega0, params.power, params.noise_var, b.matrix()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Power,
    Noise,
    Moment(usize),
}

/// One column of `J`, kept in matrix (unvec'd) form.
#[derive(Debug, Clone)]
pub struct ModelColumn {
    pub kind: ColumnKind,
    pub matrix: CMatrix,
}

/// The selection matrix `J`: `vec(P·B̂(μ) + σ²I) = J·α`.
///
/// Columns are ordered `vec(11ᵀ)`, `vec(I)`, then `(j^d/d!) vec(U^(d))` for
/// each admitted order `d = 2…D`.
#[derive(Debug, Clone)]
pub struct SelectionMatrix {
    order: usize,
    parity: Parity,
    columns: Vec<ModelColumn>,
}

impl SelectionMatrix {
    pub fn new(geom: &ArrayGeometry, order: usize, parity: Parity) -> Result<Self> {
        geom.check_order(order)?;
        let m = geom.sensors();
        let mut columns = vec![
            ModelColumn {
                kind: ColumnKind::Power,
                matrix: CMatrix::from_element(m, m, Complex64::new(1.0, 0.0)),
            },
            ModelColumn {
                kind: ColumnKind::Noise,
                matrix: CMatrix::identity(m, m),
            },
        ];
        let mut factorial = 1.0;
        for d in 2..=order {
            factorial *= d as f64;
            if !parity.includes(d) {
                continue;
            }
            let coeff = linalg::j_pow(d) / factorial;
            let matrix = geom.displacement_powers(d).map(|p| coeff * p);
            columns.push(ModelColumn {
                kind: ColumnKind::Moment(d),
                matrix,
            });
        }
        Ok(Self {
            order,
            parity,
            columns,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn columns(&self) -> &[ModelColumn] {
        &self.columns
    }

    /// Dense `M²×K` form, for inspection and tests.
    pub fn dense(&self) -> CMatrix {
        let m2 = self.columns[0].matrix.len();
        CMatrix::from_fn(m2, self.columns.len(), |i, c| self.columns[c].matrix.as_slice()[i])
    }

    /// Maps the coefficients of the admitted columns back to `α`, filling
    /// excluded odd orders with zero.
    pub fn linear_params(&self, coefficients: &[f64]) -> LinearParams {
        let mut nu = vec![0.0; self.order - 1];
        for (col, &value) in self.columns.iter().zip(coefficients).skip(2) {
            if let ColumnKind::Moment(d) = col.kind {
                nu[d - 2] = value;
            }
        }
        LinearParams {
            power: coefficients[0],
            noise_var: coefficients[1],
            nu,
        }
    }
}

/// `J` for all orders `2…D`.
pub fn selection_matrix(geom: &ArrayGeometry, order: usize) -> Result<CMatrix> {
    Ok(SelectionMatrix::new(geom, order, Parity::AllOrders)?.dense())
}

/// `Ψ(ω) v` with `Ψ(ω) = Φ(ω)ᴴ ⊗ Φ(ω)` applied as the diagonal scaling
/// `X_{k,l} ↦ a_k(ω) conj(a_l(ω)) X_{k,l}`.
pub fn apply_steering_transform(geom: &ArrayGeometry, omega: f64, v: &CVector) -> Result<CVector> {
    let m = geom.sensors();
    if v.len() != m * m {
        return Err(Error::InvalidArgument(format!(
            "steering transform expects a vector of length {}, got {}",
            m * m,
            v.len()
        )));
    }
    let a = geom.steering(omega).values;
    let mut out = v.clone();
    for l in 0..m {
        let al = a[l].conj();
        for k in 0..m {
            out[k + l * m] *= a[k] * al;
        }
    }
    Ok(out)
}
