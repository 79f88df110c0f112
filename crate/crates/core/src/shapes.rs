//! Ground-truth scatterer distributions around the mean spatial frequency.
//!
//! Every family has zero mean and standard deviation `sigma_omega`:
//!
//! * `Point`: a Dirac at 0.
//! * `Gaussian`: `N(0, σ²)`.
//! * `Uniform`: uniform on `[-√3 σ, √3 σ]`.
//! * `Exponential`: `s · (X - σ)` with `X` exponential of mean `σ` and
//!   `s = ±1` the tail direction.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Point,
    Gaussian,
    Uniform,
    Exponential,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Point => "point",
            Family::Gaussian => "gaussian",
            Family::Uniform => "uniform",
            Family::Exponential => "exponential",
        }
    }

    pub fn is_symmetric(self) -> bool {
        !matches!(self, Family::Exponential)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "point" => Ok(Family::Point),
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "uniform" => Ok(Family::Uniform),
            "exponential" => Ok(Family::Exponential),
            other => Err(Error::InvalidArgument(format!(
                "unknown shape family {other:?} (expected point, gaussian, uniform or exponential)"
            ))),
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeSpec {
    family: Family,
    sigma_omega: f64,
    orientation: f64,
}

impl ShapeSpec {
    pub fn new(family: Family, sigma_omega: f64) -> Result<Self> {
        if !(sigma_omega >= 0.0 && sigma_omega.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_omega must be finite and non-negative, got {sigma_omega}"
            )));
        }
        Ok(Self {
            family,
            sigma_omega,
            orientation: 1.0,
        })
    }

    pub fn point() -> Self {
        Self {
            family: Family::Point,
            sigma_omega: 0.0,
            orientation: 1.0,
        }
    }

    /// Tail direction of the exponential family; ignored by the others.
    pub fn with_orientation(mut self, negative_tail: bool) -> Self {
        self.orientation = if negative_tail { -1.0 } else { 1.0 };
        self
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn sigma_omega(&self) -> f64 {
        match self.family {
            Family::Point => 0.0,
            _ => self.sigma_omega,
        }
    }

    pub fn orientation(&self) -> f64 {
        self.orientation
    }

    fn half_width(&self) -> f64 {
        3f64.sqrt() * self.sigma_omega
    }

    /// Characteristic function `E[exp(j ξ ω̃)]`.
    pub fn charfn(&self, xi: f64) -> Complex64 {
        let sigma = self.sigma_omega();
        match self.family {
            Family::Point => Complex64::new(1.0, 0.0),
            Family::Gaussian => Complex64::new((-0.5 * sigma * sigma * xi * xi).exp(), 0.0),
            Family::Uniform => {
                let x = self.half_width() * xi;
                let value = if x.abs() < 1e-4 {
                    // sin(x)/x, series to O(x^6)
                    let x2 = x * x;
                    1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
                } else {
                    x.sin() / x
                };
                Complex64::new(value, 0.0)
            }
            Family::Exponential => {
                let t = self.orientation * sigma * xi;
                Complex64::from_polar(1.0, -t) / Complex64::new(1.0, -t)
            }
        }
    }

    /// Exact central moments `(μ_2, …, μ_D)`.
    pub fn central_moments(&self, order: usize) -> Result<Vec<f64>> {
        if order < 2 {
            return Err(Error::InvalidArgument(format!(
                "moment order must be at least 2, got {order}"
            )));
        }
        let sigma = self.sigma_omega();
        let moments = (2..=order)
            .map(|d| match self.family {
                Family::Point => 0.0,
                Family::Gaussian => {
                    if d % 2 == 1 {
                        0.0
                    } else {
                        sigma.powi(d as i32) * double_factorial(d - 1)
                    }
                }
                Family::Uniform => {
                    if d % 2 == 1 {
                        0.0
                    } else {
                        self.half_width().powi(d as i32) / (d as f64 + 1.0)
                    }
                }
                Family::Exponential => {
                    // central moments of Exp(1) are the derangement numbers
                    (self.orientation * sigma).powi(d as i32) * derangements(d)
                }
            })
            .collect();
        Ok(moments)
    }

    /// `n` i.i.d. draws of the centered frequency offset.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sigma = self.sigma_omega();
        match self.family {
            Family::Point => vec![0.0; n],
            _ if sigma == 0.0 => vec![0.0; n],
            Family::Gaussian => (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sigma * z
                })
                .collect(),
            Family::Uniform => {
                let a = self.half_width();
                let dist = Uniform::new(-a, a);
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Family::Exponential => {
                let dist = Exp::new(1.0 / sigma).expect("positive rate");
                (0..n)
                    .map(|_| self.orientation * (dist.sample(&mut rng) - sigma))
                    .collect()
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        let sigma = self.sigma_omega();
        match self.family {
            Family::Point => {
                if x == 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            }
            Family::Gaussian => (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt()),
            Family::Uniform => {
                let a = self.half_width();
                if x.abs() <= a {
                    0.5 / a
                } else {
                    0.0
                }
            }
            Family::Exponential => {
                let y = self.orientation * x + sigma;
                if y >= 0.0 {
                    (-y / sigma).exp() / sigma
                } else {
                    0.0
                }
            }
        }
    }
}

fn double_factorial(n: usize) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

fn derangements(n: usize) -> f64 {
    let (mut prev, mut cur) = (1.0f64, 0.0f64);
    if n == 0 {
        return prev;
    }
    for k in 2..=n {
        let next = (k as f64 - 1.0) * (cur + prev);
        prev = cur;
        cur = next;
    }
    cur
}

/// JSON form: `{"family": "gaussian", "sigma_omega": 0.05}` or with
/// `"sigma_z"` (meters), which needs the geometry's `z_amb` to resolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_tail: Option<bool>,
}

impl ShapeConfig {
    pub fn build(&self, z_amb: Option<f64>) -> Result<ShapeSpec> {
        let sigma = match (self.sigma_omega, self.sigma_z, self.family) {
            (_, _, Family::Point) => 0.0,
            (Some(s), None, _) => s,
            (None, Some(sz), _) => {
                let z = z_amb.ok_or_else(|| {
                    Error::InvalidArgument("shape.sigma_z requires geometry.z_amb".into())
                })?;
                crate::array::height_to_omega(sz, z)?
            }
            (Some(_), Some(_), _) => {
                return Err(Error::InvalidArgument(
                    "shape: give either sigma_omega or sigma_z, not both".into(),
                ))
            }
            (None, None, _) => {
                return Err(Error::InvalidArgument(
                    "shape: missing sigma_omega or sigma_z".into(),
                ))
            }
        };
        Ok(ShapeSpec::new(self.family, sigma)?.with_orientation(self.negative_tail.unwrap_or(false)))
    }
}

impl From<&ShapeSpec> for ShapeConfig {
    fn from(shape: &ShapeSpec) -> Self {
        ShapeConfig {
            family: shape.family,
            sigma_omega: Some(shape.sigma_omega()),
            sigma_z: None,
            negative_tail: (shape.family == Family::Exponential && shape.orientation < 0.0)
                .then_some(true),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_shapes(sigma: f64) -> Vec<ShapeSpec> {
        vec![
            ShapeSpec::point(),
            ShapeSpec::new(Family::Gaussian, sigma).unwrap(),
            ShapeSpec::new(Family::Uniform, sigma).unwrap(),
            ShapeSpec::new(Family::Exponential, sigma).unwrap(),
            ShapeSpec::new(Family::Exponential, sigma).unwrap().with_orientation(true),
        ]
    }

    /// Trapezoidal nodes `(x_i, w_i p(x_i))` over the support, built in each
    /// family's natural variable so the endpoint jump is sampled exactly.
    fn quadrature(shape: &ShapeSpec, n: usize) -> Vec<(f64, f64)> {
        let sigma = shape.sigma_omega();
        let trap = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
        match shape.family() {
            Family::Gaussian => {
                let (lo, h) = (-14.0 * sigma, 28.0 * sigma / n as f64);
                (0..=n)
                    .map(|i| {
                        let x = lo + h * i as f64;
                        let p = (-0.5 * (x / sigma).powi(2)).exp() / (sigma * (2.0 * PI).sqrt());
                        (x, trap(i) * h * p)
                    })
                    .collect()
            }
            Family::Uniform => {
                let a = 3f64.sqrt() * sigma;
                let h = 2.0 * a / n as f64;
                (0..=n).map(|i| (-a + h * i as f64, trap(i) * h * 0.5 / a)).collect()
            }
            _ => {
                let h = 50.0 * sigma / n as f64;
                (0..=n)
                    .map(|i| {
                        let t = h * i as f64;
                        let x = shape.orientation() * (t - sigma);
                        (x, trap(i) * h * (-t / sigma).exp() / sigma)
                    })
                    .collect()
            }
        }
    }

    fn integrate_charfn(shape: &ShapeSpec, xi: f64) -> Complex64 {
        quadrature(shape, 400_000)
            .into_iter()
            .map(|(x, w)| Complex64::from_polar(w, xi * x))
            .sum()
    }

    #[test]
    fn charfn_at_origin_is_one() {
        for s in all_shapes(0.05) {
            assert!((s.charfn(0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn charfn_examples_match_integration() {
        let g = ShapeSpec::new(Family::Gaussian, 0.05).unwrap();
        let xi = 2.0 * PI * 6.0;
        let v = g.charfn(xi);
        assert!((v.re - 0.169225).abs() < 1e-6);
        assert!((v - integrate_charfn(&g, xi)).norm() < 1e-8);

        let u = ShapeSpec::new(Family::Uniform, 0.05).unwrap();
        let v = u.charfn(2.0 * PI);
        assert!((v.re - 0.951377).abs() < 1e-6);
        assert!((v - integrate_charfn(&u, 2.0 * PI)).norm() < 1e-8);

        for s in all_shapes(0.05).into_iter().skip(1) {
            for xi in [0.7, 2.0 * PI, 2.0 * PI * 3.0] {
                let diff = (s.charfn(xi) - integrate_charfn(&s, xi)).norm();
                assert!(diff < 1e-7, "{:?} ξ={xi} diff={diff}", s.family());
            }
        }
    }

    #[test]
    fn moment_examples() {
        let g = ShapeSpec::new(Family::Gaussian, 0.05).unwrap();
        let m = g.central_moments(4).unwrap();
        assert!((m[0] - 0.0025).abs() < 1e-15 && m[1] == 0.0 && (m[2] - 1.875e-5).abs() < 1e-18);

        let u = ShapeSpec::new(Family::Uniform, 0.05).unwrap();
        let m = u.central_moments(4).unwrap();
        assert!((m[0] - 0.0025).abs() < 1e-15 && m[1] == 0.0 && (m[2] - 1.125e-5).abs() < 1e-18);

        assert_eq!(ShapeSpec::point().central_moments(5).unwrap(), vec![0.0; 4]);
        assert!(g.central_moments(1).is_err());

        let e = ShapeSpec::new(Family::Exponential, 0.1).unwrap();
        let m = e.central_moments(5).unwrap();
        let expect = [1e-2, 2e-3, 9e-4, 44e-5];
        for (a, b) in m.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let flipped = e.with_orientation(true).central_moments(5).unwrap();
        assert!((flipped[1] + 2e-3).abs() < 1e-15 && (flipped[2] - 9e-4).abs() < 1e-15);
    }

    /// Moments from direct quadrature of `x^d p(x)`.
    #[test]
    fn moments_match_quadrature() {
        for s in all_shapes(0.07).into_iter().skip(1) {
            let exact = s.central_moments(6).unwrap();
            let sigma = s.sigma_omega();
            let nodes = quadrature(&s, 200_000);
            for (i, d) in (2..=6).enumerate() {
                let acc: f64 = nodes.iter().map(|(x, w)| w * x.powi(d)).sum();
                let scale = sigma.powi(d);
                assert!((acc - exact[i]).abs() < 1e-6 * scale, "{:?} d={d}", s.family());
            }
        }
    }

    #[test]
    fn sampling_contract() {
        assert_eq!(ShapeSpec::point().sample(5, 9), vec![0.0; 5]);
        let g = ShapeSpec::new(Family::Gaussian, 0.05).unwrap();
        let draws = g.sample(1_000_000, 1);
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((std - 0.05).abs() < 0.005 * 0.05);
        assert!(mean.abs() < 5.0 * 0.05 / n.sqrt());
        assert_eq!(g.sample(100, 3), g.sample(100, 3));
    }

    #[test]
    fn sample_moments_converge() {
        let n = 200_000;
        for s in all_shapes(0.05).into_iter().skip(1) {
            let draws = s.sample(n, 17);
            let exact = s.central_moments(3).unwrap();
            let m2 = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let m3 = draws.iter().map(|x| x * x * x).sum::<f64>() / n as f64;
            let sigma = s.sigma_omega();
            // the standard error of the empirical k-th moment is ~σ^k·c/√n
            let tol = 30.0 / (n as f64).sqrt();
            assert!((m2 - exact[0]).abs() < tol * sigma.powi(2), "{:?}", s.family());
            assert!((m3 - exact[1]).abs() < tol * sigma.powi(3), "{:?}", s.family());
        }
    }

    #[test]
    fn shape_json() {
        let c: ShapeConfig = serde_json::from_str(r#"{"family":"gaussian","sigma_omega":0.05}"#).unwrap();
        assert_eq!(c.build(None).unwrap().sigma_omega(), 0.05);
        let c: ShapeConfig = serde_json::from_str(r#"{"family":"uniform","sigma_z":5}"#).unwrap();
        assert!((c.build(Some(100.0)).unwrap().sigma_omega() - 0.05).abs() < 1e-15);
        assert!(c.build(None).is_err());
    }

    proptest! {
        #[test]
        fn charfn_is_bounded_and_hermitian(sigma in 0.0f64..0.3, xi in -60.0f64..60.0) {
            for s in all_shapes(sigma) {
                let v = s.charfn(xi);
                prop_assert!(v.norm() <= 1.0 + 1e-12);
                prop_assert!((s.charfn(-xi) - v.conj()).norm() < 1e-12);
                if s.family().is_symmetric() {
                    prop_assert_eq!(v.im, 0.0);
                }
            }
        }

        #[test]
        fn taylor_series_matches_charfn(sigma in 0.005f64..0.1, d in 2usize..9) {
            // at ξσ = 0.1 the truncation remainder is O((ξσ)^{D+1})
            let xi = 0.1 / sigma;
            for s in all_shapes(sigma).into_iter().skip(1) {
                let mu = s.central_moments(d).unwrap();
                let mut series = Complex64::new(1.0, 0.0);
                let mut fact = 1.0;
                for (i, m) in mu.iter().enumerate() {
                    let k = i + 2;
                    fact *= if k == 2 { 2.0 } else { k as f64 };
                    series += crate::linalg::j_pow(k) * (m * xi.powi(k as i32) / fact);
                }
                let remainder = (s.charfn(xi) - series).norm();
                // the exponential's moments grow like d!, so allow (d+2)·0.1^{d+1}
                prop_assert!(remainder < (d as f64 + 2.0) * 0.1f64.powi(d as i32 + 1));
            }
        }
    }
}
