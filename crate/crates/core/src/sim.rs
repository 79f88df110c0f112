//! Circular complex Gaussian snapshot simulation.
//!
//! Seeding: every snapshot set is drawn from `ChaCha20Rng::seed_from_u64(master_seed)`
//! moved to stream `stream` with `set_stream`. ChaCha is counter based, so
//! stream `i` is an independent sequence that does not depend on how many
//! values other streams consumed. Monte-Carlo trial `i` of a sweep uses its
//! own stream, which keeps parallel runs reproducible and order independent.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{ArrayGeometry, GeometryConfig};
use crate::covmodel::{covariance_exact, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::shapes::{ShapeConfig, ShapeSpec};
use crate::stats::{Provenance, SnapshotSet};

pub const PIVOT_TOLERANCE: f64 = 1e-12;
pub const INDEFINITE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub geom: ArrayGeometry,
    pub shape: ShapeSpec,
    pub omega0: f64,
    pub power: f64,
    pub noise_var: f64,
    pub snapshots: usize,
}

impl Scenario {
    pub fn new(
        geom: ArrayGeometry,
        shape: ShapeSpec,
        omega0: f64,
        power: f64,
        noise_var: f64,
        snapshots: usize,
    ) -> Result<Self> {
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::InvalidArgument(format!("power must be positive, got {power}")));
        }
        if !(noise_var >= 0.0 && noise_var.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be non-negative, got {noise_var}"
            )));
        }
        if !omega0.is_finite() {
            return Err(Error::InvalidArgument("omega0 must be finite".into()));
        }
        if snapshots == 0 {
            return Err(Error::InvalidArgument("snapshot count must be at least 1".into()));
        }
        Ok(Self {
            geom,
            shape,
            omega0,
            power,
            noise_var,
            snapshots,
        })
    }

    /// `P / σ²` in dB; infinite without noise.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_var).log10()
    }

    pub fn covariance(&self) -> CovarianceMatrix {
        covariance_exact(&self.geom, self.omega0, self.power, self.noise_var, &self.shape)
    }
}

/// JSON form of a scenario. Positions accept ω or z units when the geometry
/// carries `z_amb`; noise is either `noise_var` or `snr_db`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub geometry: GeometryConfig,
    pub shape: ShapeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0: Option<f64>,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub snapshots: usize,
}

fn default_power() -> f64 {
    1.0
}

impl ScenarioConfig {
    pub fn build(&self) -> Result<Scenario> {
        let geom = self.geometry.build()?;
        let shape = self.shape.build(geom.z_amb())?;
        let omega0 = match (self.omega0, self.z0) {
            (Some(w), None) => w,
            (None, Some(z)) => {
                let z_amb = geom
                    .z_amb()
                    .ok_or_else(|| Error::InvalidArgument("z0 requires geometry.z_amb".into()))?;
                crate::array::height_to_omega(z, z_amb)?
            }
            (None, None) => 0.0,
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("give either omega0 or z0, not both".into()))
            }
        };
        let noise_var = match (self.noise_var, self.snr_db) {
            (Some(v), None) => v,
            (None, Some(db)) => self.power / 10f64.powf(db / 10.0),
            (None, None) => {
                return Err(Error::InvalidArgument("missing noise_var or snr_db".into()))
            }
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument("give either noise_var or snr_db, not both".into()))
            }
        };
        Scenario::new(geom, shape, omega0, self.power, noise_var, self.snapshots)
    }
}

impl From<&Scenario> for ScenarioConfig {
    fn from(s: &Scenario) -> Self {
        ScenarioConfig {
            geometry: GeometryConfig::from(&s.geom),
            shape: ShapeConfig::from(&s.shape),
            omega0: Some(s.omega0),
            z0: None,
            power: s.power,
            noise_var: Some(s.noise_var),
            snr_db: None,
            snapshots: s.snapshots,
        }
    }
}

/// Lower-triangular `L` with `L Lᴴ = R`.
///
/// Pivots below `PIVOT_TOLERANCE · max diag` are treated as zero and their
/// column is dropped, which handles rank-deficient (e.g. noiseless point
/// source) covariances.
pub fn covariance_root(r: &CovarianceMatrix) -> Result<CMatrix> {
    let m = r.size();
    let trace = r.trace();
    let min_eig = r.min_eigenvalue();
    if min_eig < -INDEFINITE_TOLERANCE * trace.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidCovariance { min_eigenvalue: min_eig });
    }
    let a = r.matrix();
    let scale = (0..m).map(|k| a[(k, k)].re).fold(0.0f64, f64::max);
    let mut l = CMatrix::zeros(m, m);
    for j in 0..m {
        let mut pivot = a[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if pivot <= PIVOT_TOLERANCE * scale {
            continue;
        }
        let root = pivot.sqrt();
        l[(j, j)] = Complex64::new(root, 0.0);
        for i in (j + 1)..m {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / root;
        }
    }
    Ok(l)
}

/// The RNG for `(master_seed, stream)`.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Draws `N` snapshots `y(t) = L w(t)` with `w(t) ~ CN(0, I)`.
pub fn draw_snapshots(scenario: &Scenario, master_seed: u64, stream: u64) -> Result<SnapshotSet> {
    let root = covariance_root(&scenario.covariance())?;
    let mut rng = stream_rng(master_seed, stream);
    let data = draw_with_root(&root, scenario.snapshots, &mut rng);
    SnapshotSet::new(data, Some(Provenance { master_seed, stream }))
}

/// Snapshots from a precomputed root, for harnesses that reuse one `L`.
pub fn draw_with_root(root: &CMatrix, snapshots: usize, rng: &mut ChaCha20Rng) -> CMatrix {
    let m = root.nrows();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let mut w = vec![Complex64::new(0.0, 0.0); m];
    let mut out = CMatrix::zeros(m, snapshots);
    for t in 0..snapshots {
        for wk in w.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *wk = Complex64::new(re * scale, im * scale);
        }
        let mut col = out.column_mut(t);
        for i in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, wk) in w.iter().enumerate().take(i + 1) {
                acc += root[(i, k)] * wk;
            }
            col[i] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::shapes::Family;
    use crate::stats::sample_covariance;
    use proptest::prelude::*;

    fn reference_scenario(n: usize) -> Scenario {
        let geom = ArrayGeometry::uniform(7, Some(100.0)).unwrap();
        Scenario::new(geom, ShapeSpec::new(Family::Gaussian, 0.05).unwrap(), 0.3, 1.0, 0.01, n).unwrap()
    }

    #[test]
    fn root_examples() {
        let l = covariance_root(&CovarianceMatrix::identity(3)).unwrap();
        assert_eq!(l, CMatrix::identity(3, 3));
        let l = covariance_root(&CovarianceMatrix::identity(3).scaled(4.0)).unwrap();
        assert_eq!(l, CMatrix::identity(3, 3).scale(2.0));

        let mut bad = CMatrix::identity(2, 2);
        bad[(1, 1)] = Complex64::new(-1.0, 0.0);
        let bad = CovarianceMatrix::new(bad).unwrap();
        assert!(matches!(covariance_root(&bad), Err(Error::InvalidCovariance { .. })));
    }

    #[test]
    fn rank_one_root_and_snapshots() {
        let geom = ArrayGeometry::uniform(5, None).unwrap();
        let scenario = Scenario::new(geom.clone(), ShapeSpec::point(), 0.21, 2.0, 0.0, 20).unwrap();
        let l = covariance_root(&scenario.covariance()).unwrap();
        let back = &l * l.adjoint();
        assert!(linalg::max_abs(&(back - scenario.covariance().matrix())) < 1e-12);

        let snaps = draw_snapshots(&scenario, 3, 0).unwrap();
        let a = geom.steering(0.21).values;
        for t in 0..snaps.len() {
            let y = snaps.data().column(t);
            let ratio = y[0] / a[0];
            for k in 0..5 {
                assert!((y[k] - ratio * a[k]).norm() < 1e-12 * ratio.norm().max(1.0));
            }
        }
    }

    #[test]
    fn draws_are_deterministic_per_stream() {
        let s = reference_scenario(50);
        let a = draw_snapshots(&s, 42, 7).unwrap();
        let b = draw_snapshots(&s, 42, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance(), Some(Provenance { master_seed: 42, stream: 7 }));
        assert_ne!(a, draw_snapshots(&s, 42, 8).unwrap());
        assert_ne!(a, draw_snapshots(&s, 43, 7).unwrap());
    }

    #[test]
    fn sample_covariance_concentration() {
        let s = reference_scenario(100_000);
        let rbar = sample_covariance(&draw_snapshots(&s, 11, 0).unwrap()).unwrap();
        let err = linalg::max_abs(&(rbar.matrix() - s.covariance().matrix()));
        assert!(err < 5.0 * (1.0f64 / 100_000.0).sqrt() * (1.0 + 0.01), "{err}");
    }

    #[test]
    fn scalar_gaussian_fourth_moment_and_circularity() {
        let geom = ArrayGeometry::from_positions(vec![0.0, 1.0], None).unwrap();
        // one sensor carries unit-variance noise only: use the first entry
        let s = Scenario::new(geom, ShapeSpec::point(), 0.0, 1.0, 0.0, 1_000_000).unwrap();
        let y = draw_snapshots(&s, 5, 0).unwrap();
        let row = y.data().row(0);
        let n = row.len() as f64;
        let m2 = row.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        let m4 = row.iter().map(|z| z.norm_sqr().powi(2)).sum::<f64>() / n;
        let pseudo = row.iter().map(|z| z * z).sum::<Complex64>() / n;
        assert!((m2 - 1.0).abs() < 0.01);
        assert!((m4 - 2.0).abs() < 0.05 * 2.0, "{m4}");
        assert!(pseudo.norm() < 0.05, "{pseudo}");
    }

    #[test]
    fn scenario_json() {
        let text = r#"{"geometry":{"uniform":{"M":7,"z_amb":100.0}},
            "shape":{"family":"gaussian","sigma_z":5.0},"z0":30.0,"snr_db":20.0,"snapshots":100}"#;
        let s: ScenarioConfig = serde_json::from_str(text).unwrap();
        let s = s.build().unwrap();
        assert!((s.omega0 - 0.3).abs() < 1e-15);
        assert!((s.noise_var - 0.01).abs() < 1e-15);
        assert!((s.shape.sigma_omega() - 0.05).abs() < 1e-15);
        assert!((s.snr_db() - 20.0).abs() < 1e-12);
        let round: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&ScenarioConfig::from(&s)).unwrap()).unwrap();
        assert_eq!(round.build().unwrap(), s);
    }

    proptest! {
        #[test]
        fn root_reconstructs_psd(values in proptest::collection::vec(-1.0f64..1.0, 2 * 6 * 4), ridge in prop_oneof![Just(0.0), 0.0f64..0.5]) {
            // rank ≤ 4 plus a ridge: covers semidefinite and definite cases
            let g = CMatrix::from_fn(6, 4, |i, j| Complex64::new(values[2 * (i * 4 + j)], values[2 * (i * 4 + j) + 1]));
            let r = &g * g.adjoint() + CMatrix::identity(6, 6).scale(ridge);
            let r = CovarianceMatrix::new(r).unwrap();
            let l = covariance_root(&r).unwrap();
            for i in 0..6 {
                for j in (i + 1)..6 {
                    prop_assert_eq!(l[(i, j)], Complex64::new(0.0, 0.0));
                }
            }
            let err = linalg::max_abs(&(&l * l.adjoint() - r.matrix()));
            prop_assert!(err < 1e-10 * linalg::max_abs(r.matrix()).max(1.0), "{}", err);
        }
    }
}
