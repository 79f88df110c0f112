//! Snapshot sets, the sample covariance and the COMET weight matrix.
//!
//! Snapshots travel on disk in a small little-endian container:
//!
//! ```text
//! "CSNP" | version: u32 = 1 | M: u32 | N: u32 | N·M × (re: f64, im: f64)
//! ```
//!
//! stored snapshot-major, so snapshot `t` occupies `M` consecutive values.
//! A CSV form with `2M` columns `re_1, im_1, …, re_M, im_M` (one snapshot per
//! row) is accepted as well.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::covmodel::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

pub const CSNP_MAGIC: &[u8; 4] = b"CSNP";
pub const CSNP_VERSION: u32 = 1;

/// How a simulated snapshot set was drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub stream: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    /// `M × N`; column `t` is `y(t)`.
    data: CMatrix,
    provenance: Option<Provenance>,
}

impl SnapshotSet {
    pub fn new(data: CMatrix, provenance: Option<Provenance>) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "a snapshot set needs at least one snapshot of length >= 1".into(),
            ));
        }
        Ok(Self { data, provenance })
    }

    pub fn from_vectors(snapshots: &[Vec<Complex64>]) -> Result<Self> {
        let m = snapshots.first().map(Vec::len).unwrap_or(0);
        if snapshots.iter().any(|y| y.len() != m) {
            return Err(Error::InvalidArgument("snapshots have different lengths".into()));
        }
        let flat: Vec<Complex64> = snapshots.iter().flatten().copied().collect();
        Self::new(CMatrix::from_column_slice(m, snapshots.len(), &flat), None)
    }

    pub fn data(&self) -> &CMatrix {
        &self.data
    }

    pub fn sensors(&self) -> usize {
        self.data.nrows()
    }

    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    pub fn provenance(&self) -> Option<Provenance> {
        self.provenance
    }

    pub fn map_data(&self, f: impl Fn(&CMatrix) -> CMatrix) -> Self {
        Self {
            data: f(&self.data),
            provenance: self.provenance,
        }
    }

    pub fn write_csnp<W: Write>(&self, mut out: W) -> Result<()> {
        let m = u32::try_from(self.sensors()).map_err(|_| Error::Format("M exceeds u32".into()))?;
        let n = u32::try_from(self.len()).map_err(|_| Error::Format("N exceeds u32".into()))?;
        let mut buf = Vec::with_capacity(16 + 16 * self.data.len());
        buf.extend_from_slice(CSNP_MAGIC);
        buf.extend_from_slice(&CSNP_VERSION.to_le_bytes());
        buf.extend_from_slice(&m.to_le_bytes());
        buf.extend_from_slice(&n.to_le_bytes());
        // column-major storage is already snapshot-major
        for z in self.data.iter() {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_csnp<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != CSNP_MAGIC {
            return Err(Error::Format("not a CSNP snapshot container".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CSNP_VERSION {
            return Err(Error::Format(format!("unsupported CSNP version {version}")));
        }
        let (m, n) = (word(8) as usize, word(12) as usize);
        let expected = 16 + 16 * m * n;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "CSNP payload is {} bytes, expected {expected} for M={m}, N={n}",
                bytes.len()
            )));
        }
        let values: Vec<Complex64> = bytes[16..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        Self::new(CMatrix::from_column_slice(m, n, &values), None)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut snapshots = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed: std::result::Result<Vec<f64>, _> = cells.iter().map(|c| c.parse::<f64>()).collect();
            let values = match parsed {
                Ok(v) => v,
                // tolerate one header line
                Err(_) if row == 0 => continue,
                Err(_) => return Err(Error::Format(format!("snapshot CSV row {}: not numeric", row + 1))),
            };
            if values.len() % 2 != 0 || values.is_empty() {
                return Err(Error::Format(format!(
                    "snapshot CSV row {} has {} columns, expected 2M",
                    row + 1,
                    values.len()
                )));
            }
            snapshots.push(values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect::<Vec<_>>());
        }
        if snapshots.is_empty() {
            return Err(Error::Format("snapshot CSV holds no rows".into()));
        }
        Self::from_vectors(&snapshots)
    }

    pub fn to_csv(&self) -> String {
        let m = self.sensors();
        let mut out = String::new();
        let header: Vec<String> = (1..=m).flat_map(|k| [format!("re_{k}"), format!("im_{k}")]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for t in 0..self.len() {
            let row: Vec<String> = self
                .data
                .column(t)
                .iter()
                .flat_map(|z| [z.re.to_string(), z.im.to_string()])
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// `R̄ = (1/N) Σ y(t) y(t)ᴴ`, symmetrized.
pub fn sample_covariance(snapshots: &SnapshotSet) -> Result<CovarianceMatrix> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("empty snapshot set".into()));
    }
    let y = snapshots.data();
    let m = y.nrows();
    let n = y.ncols();
    let mut r = CMatrix::zeros(m, m);
    for t in 0..n {
        let col = y.column(t);
        for l in 0..m {
            let yl = col[l].conj();
            for k in l..m {
                r[(k, l)] += col[k] * yl;
            }
        }
    }
    let inv_n = 1.0 / n as f64;
    for l in 0..m {
        r[(l, l)] = Complex64::new(r[(l, l)].re * inv_n, 0.0);
        for k in (l + 1)..m {
            let v = r[(k, l)] * inv_n;
            r[(k, l)] = v;
            r[(l, k)] = v.conj();
        }
    }
    Ok(CovarianceMatrix::from_hermitian(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Identity,
    #[default]
    InverseSampleCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kind: WeightKind,
    #[serde(default)]
    pub ridge: f64,
}

impl WeightSpec {
    pub const CONDITION_LIMIT: f64 = 1e12;

    pub fn identity() -> Self {
        Self {
            kind: WeightKind::Identity,
            ridge: 0.0,
        }
    }

    pub fn inverse() -> Self {
        Self {
            kind: WeightKind::InverseSampleCovariance,
            ridge: 0.0,
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }
}

/// `W = I` or `W = (R̄ + ridge·I)⁻¹`.
pub fn build_weight(spec: &WeightSpec, sample: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    if !(spec.ridge >= 0.0 && spec.ridge.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be non-negative, got {}",
            spec.ridge
        )));
    }
    let m = sample.size();
    match spec.kind {
        WeightKind::Identity => Ok(CovarianceMatrix::identity(m)),
        WeightKind::InverseSampleCovariance => {
            let mut r = sample.matrix().clone();
            for k in 0..m {
                r[(k, k)] += Complex64::new(spec.ridge, 0.0);
            }
            let eig = linalg::hermitian_part(&r).symmetric_eigen();
            let (lo, hi) = eig
                .eigenvalues
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            if condition > WeightSpec::CONDITION_LIMIT {
                return Err(Error::IllConditionedWeight {
                    condition,
                    limit: WeightSpec::CONDITION_LIMIT,
                });
            }
            let v = &eig.eigenvectors;
            let scaled = CMatrix::from_fn(m, m, |k, l| v[(k, l)] / eig.eigenvalues[l]);
            let w = scaled * v.adjoint();
            Ok(CovarianceMatrix::from_hermitian(linalg::hermitian_part(&w)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;
    use crate::covmodel::covariance_exact;
    use crate::shapes::{Family, ShapeSpec};
    use crate::sim::{draw_snapshots, Scenario};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn single_snapshot_outer_product() {
        let s = SnapshotSet::from_vectors(&[vec![c(1.0, 0.0), c(0.0, 1.0)]]).unwrap();
        let r = sample_covariance(&s).unwrap();
        let expect = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        assert_eq!(r.matrix(), &expect);

        let e1 = vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let s = SnapshotSet::from_vectors(&[e1.clone(), e1.clone(), e1]).unwrap();
        let r = sample_covariance(&s).unwrap();
        let mut expect = CMatrix::zeros(3, 3);
        expect[(0, 0)] = c(1.0, 0.0);
        assert_eq!(r.matrix(), &expect);

        assert!(SnapshotSet::from_vectors(&[]).is_err());
    }

    #[test]
    fn sample_covariance_concentrates() {
        let geom = ArrayGeometry::uniform(7, Some(100.0)).unwrap();
        let shape = ShapeSpec::new(Family::Gaussian, 0.05).unwrap();
        let scenario = Scenario::new(geom.clone(), shape, 0.3, 1.0, 0.01, 100_000).unwrap();
        let snaps = draw_snapshots(&scenario, 1, 0).unwrap();
        let rbar = sample_covariance(&snaps).unwrap();
        let r = covariance_exact(&geom, 0.3, 1.0, 0.01, &shape);
        let err = linalg::max_abs(&(rbar.matrix() - r.matrix()));
        assert!(err < 5.0 * (1e-5f64).sqrt() * linalg::max_abs(r.matrix()), "{err}");
    }

    #[test]
    fn weight_examples() {
        let r = CovarianceMatrix::identity(4).scaled(2.0);
        let w = build_weight(&WeightSpec::identity(), &r).unwrap();
        assert_eq!(w, CovarianceMatrix::identity(4));
        let w = build_weight(&WeightSpec::inverse(), &r).unwrap();
        assert!(linalg::max_abs(&(w.matrix() - CMatrix::identity(4, 4).scale(0.5))) < 1e-15);

        let geom = ArrayGeometry::uniform(7, None).unwrap();
        let scenario = Scenario::new(geom, ShapeSpec::new(Family::Gaussian, 0.05).unwrap(), 0.3, 1.0, 0.01, 3).unwrap();
        let rbar = sample_covariance(&draw_snapshots(&scenario, 5, 0).unwrap()).unwrap();
        let err = build_weight(&WeightSpec::inverse(), &rbar).unwrap_err();
        assert!(matches!(err, Error::IllConditionedWeight { .. }));
        assert!(err.to_string().contains("N >= M"));
        assert!(build_weight(&WeightSpec::inverse().with_ridge(0.1), &rbar).is_ok());
        assert!(build_weight(&WeightSpec::inverse().with_ridge(-1.0), &rbar).is_err());
    }

    #[test]
    fn csnp_container_layout() {
        let s = SnapshotSet::from_vectors(&[vec![c(1.0, 2.0), c(3.0, 4.0)], vec![c(5.0, 6.0), c(7.0, 8.0)]]).unwrap();
        let mut bytes = Vec::new();
        s.write_csnp(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"CSNP");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0]);
        // snapshot 0, sensor 1 imaginary part is the 4th float
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), 4.0);
        assert_eq!(SnapshotSet::read_csnp(&bytes[..]).unwrap(), s);

        assert!(SnapshotSet::read_csnp(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(SnapshotSet::read_csnp(&bad[..]).is_err());
    }

    #[test]
    fn csv_import() {
        let s = SnapshotSet::from_csv("re_1,im_1,re_2,im_2\n1,2,3,4\n5,6,7,8\n").unwrap();
        assert_eq!(s.sensors(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.data()[(1, 0)], c(3.0, 4.0));
        assert_eq!(SnapshotSet::from_csv(&s.to_csv()).unwrap(), s);
        assert!(SnapshotSet::from_csv("1,2,3\n").is_err());
    }

    proptest! {
        #[test]
        fn sample_covariance_is_hermitian_psd(values in proptest::collection::vec(-5.0f64..5.0, 2 * 4 * 6)) {
            let snaps: Vec<Vec<Complex64>> = values.chunks(8).map(|ch| ch.chunks(2).map(|p| c(p[0], p[1])).collect()).collect();
            let r = sample_covariance(&SnapshotSet::from_vectors(&snaps).unwrap()).unwrap();
            prop_assert_eq!(linalg::hermitian_defect(r.matrix()), 0.0);
            prop_assert!(r.min_eigenvalue() >= -1e-10 * r.trace().max(1e-300));
            prop_assert!(CovarianceMatrix::new(r.matrix().clone()).is_ok());
        }

        #[test]
        fn inverse_weight_inverts(values in proptest::collection::vec(-1.0f64..1.0, 2 * 5 * 20)) {
            let snaps: Vec<Vec<Complex64>> = values.chunks(10).map(|ch| ch.chunks(2).map(|p| c(p[0], p[1])).collect()).collect();
            let r = sample_covariance(&SnapshotSet::from_vectors(&snaps).unwrap()).unwrap();
            if let Ok(w) = build_weight(&WeightSpec::inverse(), &r) {
                let prod = w.matrix() * r.matrix();
                let err = linalg::max_abs(&(prod - CMatrix::identity(5, 5)));
                let cond = r.eigenvalues()[4] / r.eigenvalues()[0];
                if cond < 1e6 {
                    prop_assert!(err < 1e-8, "err={} cond={}", err, cond);
                }
            }
        }
    }
}
