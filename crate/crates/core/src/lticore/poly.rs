//! Real polynomials in descending-power coefficient order.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Drops leading zero coefficients. An all-zero input becomes `[0.0]`.
pub fn strip_leading_zeros(coeffs: &[f64]) -> Vec<f64> {
    match coeffs.iter().position(|&c| c != 0.0) {
        Some(i) => coeffs[i..].to_vec(),
        None => vec![0.0],
    }
}

pub fn degree(coeffs: &[f64]) -> usize {
    strip_leading_zeros(coeffs).len() - 1
}

pub fn conv(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Horner evaluation at a complex point.
pub fn polyval(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

pub fn poly_from_roots_complex(roots: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); out.len() + 1];
        for (i, &c) in out.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        out = next;
    }
    out
}

/// Monic polynomial with the given roots. Roots are expected to come in
/// conjugate pairs; the imaginary residue is discarded.
pub fn poly_from_roots(roots: &[Complex64]) -> Vec<f64> {
    poly_from_roots_complex(roots)
        .into_iter()
        .map(|c| c.re)
        .collect()
}

/// Roots via eigenvalues of the balanced companion matrix.
///
/// Trailing zero coefficients are split off as exact roots at the origin.
pub fn poly_roots(coeffs: &[f64]) -> Result<Vec<Complex64>> {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(
            "polynomial has non-finite coefficients".into(),
        ));
    }
    let p = strip_leading_zeros(coeffs);
    if p.len() == 1 {
        return Err(Error::InvalidArgument(if p[0] == 0.0 {
            "all-zero polynomial has no defined roots".into()
        } else {
            "constant polynomial has no roots".into()
        }));
    }
    let trailing = p.iter().rev().take_while(|&&c| c == 0.0).count();
    let core = &p[..p.len() - trailing];
    let mut roots = vec![Complex64::new(0.0, 0.0); trailing];
    let n = core.len() - 1;
    if n == 0 {
        return Ok(roots);
    }
    let lead = core[0];
    let mut companion = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        companion[(0, j)] = -core[j + 1] / lead;
    }
    for i in 1..n {
        companion[(i, i - 1)] = 1.0;
    }
    balance(&mut companion);
    roots.extend(companion.complex_eigenvalues().iter().copied());
    Ok(roots)
}

/// Parlett–Reinsch diagonal similarity balancing (in place, powers of two).
pub(crate) fn balance(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    let radix = 2.0_f64;
    let mut converged = false;
    while !converged {
        converged = true;
        for i in 0..n {
            let mut c = 0.0;
            let mut r = 0.0;
            for j in 0..n {
                if j != i {
                    c += m[(j, i)].abs();
                    r += m[(i, j)].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut cc = c;
            while cc < r / radix {
                cc *= radix;
                f *= radix;
            }
            while cc >= r * radix {
                cc /= radix;
                f /= radix;
            }
            if (cc + r / f) < 0.95 * s {
                converged = false;
                for j in 0..n {
                    m[(i, j)] /= f;
                    m[(j, i)] *= f;
                }
            }
        }
    }
}
