//! Small dense complex helpers shared by the model, estimator and simulator.
//!
//! Matrices are `nalgebra::DMatrix<Complex64>`. `vec` stacks columns, and
//! every module goes through [`vec`] / [`unvec`] so that the index of entry
//! `(k, l)` is always `k + l * M`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

/// `j^d` without going through `powi` on a complex number.
pub fn j_pow(d: usize) -> Complex64 {
    match d % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

pub fn vec(m: &CMatrix) -> CVector {
    // nalgebra storage is already column-major.
    CVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &CVector, size: usize) -> CMatrix {
    assert_eq!(v.len(), size * size, "unvec: length is not a perfect square of size");
    CMatrix::from_column_slice(size, size, v.as_slice())
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Largest `|X - X^H|` entry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for l in 0..n {
        for k in 0..n {
            worst = worst.max((m[(k, l)] - m[(l, k)].conj()).norm());
        }
    }
    worst
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = hermitian_part(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .collect();
    values.sort_by(|a, b| a.total_cmp(b));
    values
}

/// Real trace of `A^H B`, i.e. the Frobenius inner product `<A, B>`.
pub fn inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn format_complex(z: Complex64) -> String {
    if z.im.is_sign_negative() {
        format!("{}-{}j", z.re, -z.im)
    } else {
        format!("{}+{}j", z.re, z.im)
    }
}

/// Parses the `re+imj` cell format written by [`format_complex`].
pub fn parse_complex(cell: &str) -> Option<Complex64> {
    let s = cell.trim();
    let body = s.strip_suffix('j').or_else(|| s.strip_suffix('i'));
    let Some(body) = body else {
        return s.parse::<f64>().ok().map(|re| Complex64::new(re, 0.0));
    };
    // Split at the last sign that is not part of an exponent.
    let bytes = body.as_bytes();
    let mut split = None;
    for idx in (1..bytes.len()).rev() {
        if (bytes[idx] == b'+' || bytes[idx] == b'-') && !matches!(bytes[idx - 1], b'e' | b'E') {
            split = Some(idx);
            break;
        }
    }
    match split {
        Some(idx) => {
            let re = body[..idx].parse::<f64>().ok()?;
            let im = body[idx..].parse::<f64>().ok()?;
            Some(Complex64::new(re, im))
        }
        None => body.parse::<f64>().ok().map(|im| Complex64::new(0.0, im)),
    }
}

/// Row-major CSV with `re+imj` cells.
pub fn matrix_to_csv(m: &CMatrix) -> String {
    let mut out = String::new();
    for k in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|l| format_complex(m[(k, l)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str) -> Option<CMatrix> {
    let rows: Vec<Vec<Complex64>> = text
        .lines()
        .filter(|line| !line.trim().is_empty())
        .map(|line| line.split(',').map(parse_complex).collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()?;
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return None;
    }
    Some(CMatrix::from_fn(n, n, |k, l| rows[k][l]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_stacking() {
        let m = CMatrix::from_fn(2, 2, |k, l| Complex64::new((k + 2 * l) as f64, 0.0));
        let v = vec(&m);
        for i in 0..4 {
            assert_eq!(v[i].re, i as f64);
        }
        assert_eq!(unvec(&v, 2), m);
    }

    #[test]
    fn complex_cells_round_trip() {
        for z in [
            Complex64::new(1.5, -2.0),
            Complex64::new(-3.0e-12, 4.5e7),
            Complex64::new(0.0, 0.0),
        ] {
            assert_eq!(parse_complex(&format_complex(z)), Some(z));
        }
        assert_eq!(parse_complex("2"), Some(Complex64::new(2.0, 0.0)));
        assert_eq!(parse_complex("-1e-3j"), Some(Complex64::new(0.0, -1e-3)));
        assert_eq!(parse_complex("abc"), None);
    }

    #[test]
    fn j_powers_cycle() {
        let mut z = Complex64::new(1.0, 0.0);
        for d in 0..9 {
            assert!((j_pow(d) - z).norm() < 1e-15);
            z *= J;
        }
    }
}
