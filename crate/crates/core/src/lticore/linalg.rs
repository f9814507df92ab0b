use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Moore–Penrose pseudo-inverse from the SVD.
///
/// Singular values below `max(rows, cols) * eps * sigma_max` count as zero.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(cols, rows);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = rows.max(cols) as f64 * f64::EPSILON * smax;
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let k = svd.singular_values.len();
    let mut out = DMatrix::zeros(cols, rows);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > tol {
            out += (v_t.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

/// Eigenvalues with multiplicity (real Schur form).
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

pub fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    Ok(eigenvalues(a)?
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max))
}

/// Stability verdict for a discrete-time state matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub spectral_radius: f64,
    pub stable: bool,
    /// Set when the radius lies in `[1 - 1e-6, 1)`.
    pub marginal_warning: bool,
}

pub fn stability(a: &DMatrix<f64>) -> Result<StabilityVerdict> {
    let radius = spectral_radius(a)?;
    Ok(StabilityVerdict {
        spectral_radius: radius,
        stable: radius < 1.0,
        marginal_warning: (1.0 - 1e-6..1.0).contains(&radius),
    })
}

/// Column-stacking vectorization.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

pub fn unvec(v: &DVector<f64>, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, v.as_slice())
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Wire form of a dense matrix: `{rows, cols, data}` with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&DMatrix<f64>> for MatrixRecord {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl TryFrom<MatrixRecord> for DMatrix<f64> {
    type Error = Error;

    fn try_from(r: MatrixRecord) -> Result<Self> {
        if r.data.len() != r.rows * r.cols {
            return Err(Error::Dimension(format!(
                "matrix record {}x{} carries {} entries",
                r.rows,
                r.cols,
                r.data.len()
            )));
        }
        if r.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(DMatrix::from_row_slice(r.rows, r.cols, &r.data))
    }
}

/// `#[serde(with = "matrix_serde")]` adapter for `DMatrix<f64>` fields.
pub mod matrix_serde {
    use super::MatrixRecord;
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        MatrixRecord::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rec = MatrixRecord::deserialize(d)?;
        DMatrix::try_from(rec).map_err(serde::de::Error::custom)
    }
}
