//! Equivalent linear array: sensor positions, steering vectors and the
//! displacement-power matrices used by the moment model.
//!
//! Positions are in wavelengths and normalized so that the first sensor sits
//! at 0. A uniform array built by [`ArrayGeometry::uniform`] has unit spacing,
//! so one ambiguity period in ω is `[-0.5, 0.5)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, CVector};

const UNIFORM_GAP_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
    is_uniform: bool,
    z_amb: Option<f64>,
}

impl ArrayGeometry {
    pub fn uniform(sensors: usize, z_amb: Option<f64>) -> Result<Self> {
        if sensors < 2 {
            return Err(Error::InvalidGeometry(format!(
                "an array needs at least 2 sensors, got {sensors}"
            )));
        }
        let positions = (0..sensors).map(|k| k as f64).collect();
        Self::from_positions(positions, z_amb)
    }

    /// Builds a geometry from arbitrary increasing positions; they are shifted
    /// so that the first one is 0.
    pub fn from_positions(mut positions: Vec<f64>, z_amb: Option<f64>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidGeometry(format!(
                "an array needs at least 2 sensors, got {}",
                positions.len()
            )));
        }
        if positions.iter().any(|u| !u.is_finite()) {
            return Err(Error::InvalidGeometry("positions must be finite".into()));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGeometry(
                "positions must be strictly increasing".into(),
            ));
        }
        if let Some(z) = z_amb {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "z_amb must be a positive length, got {z}"
                )));
            }
        }
        let origin = positions[0];
        positions.iter_mut().for_each(|u| *u -= origin);

        let first_gap = positions[1] - positions[0];
        let is_uniform = positions
            .windows(2)
            .all(|w| ((w[1] - w[0]) - first_gap).abs() <= UNIFORM_GAP_RTOL * first_gap);

        Ok(Self {
            positions,
            is_uniform,
            z_amb,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn sensors(&self) -> usize {
        self.positions.len()
    }

    pub fn is_uniform(&self) -> bool {
        self.is_uniform
    }

    pub fn z_amb(&self) -> Option<f64> {
        self.z_amb
    }

    pub fn with_z_amb(mut self, z_amb: Option<f64>) -> Result<Self> {
        if let Some(z) = z_amb {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::InvalidGeometry(format!(
                    "z_amb must be a positive length, got {z}"
                )));
            }
        }
        self.z_amb = z_amb;
        Ok(self)
    }

    /// Aperture `u_M - u_1` in wavelengths.
    pub fn span(&self) -> f64 {
        self.positions[self.positions.len() - 1]
    }

    /// Period of `ω ↦ a(ω)` when the positions are commensurate.
    ///
    /// Uniform arrays have period `1 / gap`; arrays on an integer lattice
    /// have period 1. Anything else is treated as aperiodic.
    pub fn omega_period(&self) -> Option<f64> {
        if self.is_uniform {
            return Some(1.0 / self.positions[1]);
        }
        let on_lattice = self
            .positions
            .iter()
            .all(|u| (u - u.round()).abs() <= 1e-12 * u.abs().max(1.0));
        on_lattice.then_some(1.0)
    }

    /// Resolution cell in ω, `δω = (M - 1) / (M · span)`.
    ///
    /// For a unit-spaced uniform array this is `1 / M`, which maps to
    /// `δz = z_amb / M` in elevation.
    pub fn omega_resolution(&self) -> f64 {
        let m = self.sensors() as f64;
        (m - 1.0) / (m * self.span())
    }

    /// Vertical resolution `z_amb / M` (meters), when `z_amb` is known.
    pub fn height_resolution(&self) -> Option<f64> {
        self.z_amb.map(|z| z * self.omega_resolution())
    }

    pub fn steering(&self, omega: f64) -> SteeringVector {
        let values = CVector::from_iterator(
            self.sensors(),
            self.positions
                .iter()
                .map(|u| Complex64::from_polar(1.0, 2.0 * PI * u * omega)),
        );
        SteeringVector { values }
    }

    /// `[U^(d)]_{k,l} = (2π (u_k - u_l))^d`.
    pub fn displacement_powers(&self, order: usize) -> DMatrix<f64> {
        let m = self.sensors();
        DMatrix::from_fn(m, m, |k, l| {
            let lag = 2.0 * PI * (self.positions[k] - self.positions[l]);
            powi(lag, order)
        })
    }

    /// Largest admissible moment order: `2M - 3` for uniform arrays,
    /// `M(M - 1) - 1` otherwise.
    pub fn d_max(&self) -> Result<usize> {
        let m = self.sensors();
        if m < 3 {
            return Err(Error::NotIdentifiable { sensors: m });
        }
        Ok(if self.is_uniform {
            2 * m - 3
        } else {
            m * (m - 1) - 1
        })
    }

    pub(crate) fn check_order(&self, order: usize) -> Result<usize> {
        let d_max = self.d_max()?;
        if order < 2 || order > d_max {
            let m = self.sensors();
            let (kind, formula) = if self.is_uniform {
                ("uniform", format!("2M - 3 = {}", d_max))
            } else {
                ("non-uniform", format!("M(M - 1) - 1 = {}", d_max))
            };
            return Err(Error::OrderBound {
                order,
                d_max,
                sensors: m,
                kind,
                formula,
            });
        }
        Ok(d_max)
    }
}

// Exact integer powers; `f64::powi` can differ from repeated products in the
// last ulp, which would break the exact (anti)symmetry of U^(d).
fn powi(x: f64, n: usize) -> f64 {
    let mut acc = 1.0;
    for _ in 0..n {
        acc *= x;
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub values: CVector,
}

impl SteeringVector {
    pub fn outer(&self) -> CMatrix {
        &self.values * self.values.adjoint()
    }
}

fn check_z_amb(z_amb: f64) -> Result<()> {
    if z_amb > 0.0 && z_amb.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "z_amb must be positive, got {z_amb}"
        )))
    }
}

pub fn omega_to_height(omega: f64, z_amb: f64) -> Result<f64> {
    check_z_amb(z_amb)?;
    Ok(omega * z_amb)
}

pub fn height_to_omega(height: f64, z_amb: f64) -> Result<f64> {
    check_z_amb(z_amb)?;
    Ok(height / z_amb)
}

/// JSON form of a geometry: explicit positions or a uniform shorthand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometryConfig {
    Positions {
        positions: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        z_amb: Option<f64>,
    },
    Uniform {
        uniform: UniformConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformConfig {
    #[serde(rename = "M")]
    pub sensors: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_amb: Option<f64>,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ArrayGeometry> {
        match self {
            GeometryConfig::Positions { positions, z_amb } => {
                ArrayGeometry::from_positions(positions.clone(), *z_amb)
            }
            GeometryConfig::Uniform { uniform } => {
                ArrayGeometry::uniform(uniform.sensors, uniform.z_amb)
            }
        }
    }
}

impl From<&ArrayGeometry> for GeometryConfig {
    fn from(geom: &ArrayGeometry) -> Self {
        GeometryConfig::Positions {
            positions: geom.positions.clone(),
            z_amb: geom.z_amb,
        }
    }
}
