//! SISO rational transfer functions, ZOH discretization and filtering.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::poly::{self, conv, poly_from_roots, poly_roots, polyval, strip_leading_zeros};
use crate::error::{Error, Result};

fn check_coeffs(num: &[f64], den: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if den.is_empty() || num.is_empty() {
        return Err(Error::InvalidArgument(
            "transfer function needs numerator and denominator coefficients".into(),
        ));
    }
    if num.iter().chain(den).any(|c| !c.is_finite()) {
        return Err(Error::InvalidArgument(
            "transfer function has non-finite coefficients".into(),
        ));
    }
    let num = strip_leading_zeros(num);
    let den = strip_leading_zeros(den);
    if den[0] == 0.0 {
        return Err(Error::InvalidArgument("denominator is identically zero".into()));
    }
    if num.len() > den.len() {
        return Err(Error::InvalidArgument(format!(
            "improper transfer function: numerator degree {} exceeds denominator degree {}",
            num.len() - 1,
            den.len() - 1
        )));
    }
    Ok((num, den))
}

/// Continuous-time transfer function in descending powers of `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ContinuousTfRecord")]
pub struct ContinuousTf {
    num: Vec<f64>,
    den: Vec<f64>,
}

#[derive(Deserialize)]
struct ContinuousTfRecord {
    num: Vec<f64>,
    den: Vec<f64>,
}

impl TryFrom<ContinuousTfRecord> for ContinuousTf {
    type Error = Error;
    fn try_from(r: ContinuousTfRecord) -> Result<Self> {
        ContinuousTf::new(r.num, r.den)
    }
}

impl ContinuousTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>) -> Result<Self> {
        let (num, den) = check_coeffs(&num, &den)?;
        Ok(ContinuousTf { num, den })
    }

    pub fn unity() -> Self {
        ContinuousTf {
            num: vec![1.0],
            den: vec![1.0],
        }
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        polyval(&self.num, s) / polyval(&self.den, s)
    }

    /// Gain at `s = 0`, or `None` when the origin is a pole.
    pub fn dc_gain(&self) -> Option<f64> {
        let d = *self.den.last().unwrap();
        (d != 0.0).then(|| self.num.last().unwrap() / d)
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        if self.den.len() == 1 {
            return Ok(Vec::new());
        }
        poly_roots(&self.den)
    }
}

/// Series connection `a · b`.
pub fn cascade(a: &ContinuousTf, b: &ContinuousTf) -> ContinuousTf {
    ContinuousTf {
        num: conv(&a.num, &b.num),
        den: conv(&a.den, &b.den),
    }
}

/// Discrete-time transfer function in descending powers of `z`, sample
/// period `h` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DiscreteTfRecord")]
pub struct DiscreteTf {
    num: Vec<f64>,
    den: Vec<f64>,
    h: f64,
}

#[derive(Deserialize)]
struct DiscreteTfRecord {
    num: Vec<f64>,
    den: Vec<f64>,
    h: f64,
}

impl TryFrom<DiscreteTfRecord> for DiscreteTf {
    type Error = Error;
    fn try_from(r: DiscreteTfRecord) -> Result<Self> {
        DiscreteTf::new(r.num, r.den, r.h)
    }
}

impl DiscreteTf {
    pub fn new(num: Vec<f64>, den: Vec<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {h}"
            )));
        }
        let (num, den) = check_coeffs(&num, &den)?;
        Ok(DiscreteTf { num, den, h })
    }

    pub fn unity(h: f64) -> Result<Self> {
        DiscreteTf::new(vec![1.0], vec![1.0], h)
    }

    pub fn num(&self) -> &[f64] {
        &self.num
    }

    pub fn den(&self) -> &[f64] {
        &self.den
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn order(&self) -> usize {
        self.den.len() - 1
    }

    /// Denominator degree minus numerator degree.
    pub fn relative_degree(&self) -> usize {
        self.den.len() - self.num.len()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        polyval(&self.num, z) / polyval(&self.den, z)
    }

    /// Frequency response at normalized angular frequency `omega` (rad/sample).
    pub fn freq_response(&self, omega: f64) -> Complex64 {
        self.eval(Complex64::from_polar(1.0, omega))
    }

    pub fn poles(&self) -> Result<Vec<Complex64>> {
        if self.den.len() == 1 {
            return Ok(Vec::new());
        }
        poly_roots(&self.den)
    }

    /// Finite zeros. An identically zero numerator has none.
    pub fn zeros(&self) -> Result<Vec<Complex64>> {
        if self.num.len() == 1 {
            return Ok(Vec::new());
        }
        poly_roots(&self.num)
    }

    pub fn spectral_radius(&self) -> Result<f64> {
        Ok(self.poles()?.iter().map(|p| p.norm()).fold(0.0, f64::max))
    }

    pub fn is_stable(&self) -> Result<bool> {
        Ok(self.spectral_radius()? < 1.0)
    }

    pub fn cascade(&self, other: &DiscreteTf) -> Result<DiscreteTf> {
        if (self.h - other.h).abs() > 1e-12 * self.h.max(other.h) {
            return Err(Error::InvalidArgument(format!(
                "cannot cascade filters with sample periods {} and {}",
                self.h, other.h
            )));
        }
        DiscreteTf::new(conv(&self.num, &other.num), conv(&self.den, &other.den), self.h)
    }

    /// Denominator scaled to a leading coefficient of one.
    pub fn normalized(&self) -> DiscreteTf {
        let d0 = self.den[0];
        DiscreteTf {
            num: self.num.iter().map(|c| c / d0).collect(),
            den: self.den.iter().map(|c| c / d0).collect(),
            h: self.h,
        }
    }
}

/// Controllable canonical realization `(A, B, C, D)` of a proper transfer
/// function given as (num, den) coefficient lists.
pub fn canonical_realization(
    num: &[f64],
    den: &[f64],
) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, f64) {
    let d0 = den[0];
    let den: Vec<f64> = den.iter().map(|c| c / d0).collect();
    let n = den.len() - 1;
    let mut b = vec![0.0; n + 1 - num.len()];
    b.extend(num.iter().map(|c| c / d0));
    let d = b[0];
    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        a[(0, j)] = -den[j + 1];
    }
    for i in 1..n {
        a[(i, i - 1)] = 1.0;
    }
    let mut bvec = DVector::zeros(n);
    if n > 0 {
        bvec[0] = 1.0;
    }
    let c = DMatrix::from_fn(1, n, |_, j| b[j + 1] - d * den[j + 1]);
    (a, bvec, c, d)
}

fn charpoly(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return vec![1.0];
    }
    let roots: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    poly_from_roots(&roots)
}

/// Transfer function of a SISO state-space model `(A, B, C, D)`.
pub fn ss_to_tf(a: &DMatrix<f64>, b: &DVector<f64>, c: &DMatrix<f64>, d: f64) -> (Vec<f64>, Vec<f64>) {
    let den = charpoly(a);
    let closed = a - b * c;
    let cp = charpoly(&closed);
    let num = cp
        .iter()
        .zip(&den)
        .map(|(x, y)| x - y + d * y)
        .collect();
    (num, den)
}

/// Zero-order-hold discretization via the matrix exponential of the
/// augmented `[A B; 0 0]` block.
pub fn discretize_zoh(ctf: &ContinuousTf, h: f64) -> Result<DiscreteTf> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sample period must be positive, got {h}"
        )));
    }
    let (a, b, c, d) = canonical_realization(&ctf.num, &ctf.den);
    let n = a.nrows();
    if n == 0 {
        return DiscreteTf::new(vec![d], vec![1.0], h);
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&a * h));
    aug.view_mut((0, n), (n, 1)).copy_from(&(&b * h));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    let (num, den) = ss_to_tf(&ad, &bd, &c, d);
    // Remove round-off residue in leading numerator coefficients so the
    // numerator degree reflects the true relative degree.
    let scale = num.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let lead = num
        .iter()
        .position(|x| x.abs() > 1e-13 * scale)
        .unwrap_or(num.len() - 1);
    let num = if scale == 0.0 { vec![0.0] } else { num[lead..].to_vec() };
    DiscreteTf::new(num, den, h)
}

/// Output of [`filter_series`].
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub output: Vec<f64>,
    /// The filter has a pole on or outside the unit circle.
    pub unstable: bool,
}

/// Runs `u` through `dtf` from a zero initial state (transposed direct
/// form II, a state-space realization of the recursion).
pub fn filter_series(dtf: &DiscreteTf, u: &[f64]) -> Filtered {
    let unstable = !dtf.is_stable().unwrap_or(false);
    Filtered {
        output: filter_raw(&dtf.num, &dtf.den, u),
        unstable,
    }
}

pub(crate) fn filter_raw(num: &[f64], den: &[f64], u: &[f64]) -> Vec<f64> {
    let d0 = den[0];
    let n = den.len() - 1;
    let a: Vec<f64> = den.iter().map(|c| c / d0).collect();
    let mut b = vec![0.0; n + 1 - num.len()];
    b.extend(num.iter().map(|c| c / d0));
    let mut state = vec![0.0; n];
    let mut out = Vec::with_capacity(u.len());
    for &x in u {
        let y = b[0] * x + state.first().copied().unwrap_or(0.0);
        for i in 0..n {
            let next = if i + 1 < n { state[i + 1] } else { 0.0 };
            state[i] = next + b[i + 1] * x - a[i + 1] * y;
        }
        out.push(y);
    }
    out
}

pub use poly::degree;

#[cfg(test)]
mod tests {
    use super::*;

    fn approx_eq(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn cascade_with_unity_is_identity() {
        let tf = ContinuousTf::new(vec![2.0, 1.0], vec![1.0, 3.0, 5.0]).unwrap();
        assert_eq!(cascade(&tf, &ContinuousTf::unity()), tf);
    }

    #[test]
    fn cascade_of_first_order_lags() {
        let a = ContinuousTf::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        let b = ContinuousTf::new(vec![1.0], vec![1.0, 2.0]).unwrap();
        let c = cascade(&a, &b);
        assert_eq!(c.num(), &[1.0]);
        assert_eq!(c.den(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn improper_and_degenerate_inputs_rejected() {
        assert!(ContinuousTf::new(vec![1.0, 0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(ContinuousTf::new(vec![1.0], vec![0.0]).is_err());
        assert!(DiscreteTf::new(vec![1.0], vec![1.0], 0.0).is_err());
        assert!(DiscreteTf::new(vec![1.0], vec![1.0], -1.0).is_err());
    }

    #[test]
    fn zoh_of_integrator() {
        let h = 0.1;
        let d = discretize_zoh(&ContinuousTf::new(vec![1.0], vec![1.0, 0.0]).unwrap(), h)
            .unwrap()
            .normalized();
        assert!(approx_eq(d.num(), &[h], 1e-14), "{:?}", d.num());
        assert!(approx_eq(d.den(), &[1.0, -1.0], 1e-14));
    }

    #[test]
    fn zoh_of_first_order_lag() {
        let (a, h) = (3.0_f64, 0.05_f64);
        let d = discretize_zoh(&ContinuousTf::new(vec![1.0], vec![1.0, a]).unwrap(), h)
            .unwrap()
            .normalized();
        let pole = (-a * h).exp();
        assert!(approx_eq(d.num(), &[(1.0 - pole) / a], 1e-14));
        assert!(approx_eq(d.den(), &[1.0, -pole], 1e-14));
    }

    #[test]
    fn zoh_rejects_bad_period() {
        let c = ContinuousTf::new(vec![1.0], vec![1.0, 1.0]).unwrap();
        assert!(discretize_zoh(&c, 0.0).is_err());
        assert!(discretize_zoh(&c, f64::NAN).is_err());
    }

    #[test]
    fn zoh_preserves_dc_gain() {
        let c = ContinuousTf::new(vec![2.0, 5.0], vec![1.0, 0.4, 4.0]).unwrap();
        let d = discretize_zoh(&c, 0.02).unwrap();
        let dc = d.eval(Complex64::new(1.0, 0.0)).re;
        let want = c.dc_gain().unwrap();
        assert!((dc - want).abs() <= 1e-9 * want.abs());
    }

    #[test]
    fn biproper_zoh_keeps_feedthrough() {
        let c = ContinuousTf::new(vec![3.0, 1.0], vec![1.0, 2.0]).unwrap();
        let d = discretize_zoh(&c, 0.1).unwrap().normalized();
        assert!((d.num()[0] - 3.0).abs() < 1e-13);
    }

    #[test]
    fn unity_filter_passes_input() {
        let u = [1.0, -2.0, 3.5, 0.25];
        let f = filter_series(&DiscreteTf::unity(1.0).unwrap(), &u);
        assert_eq!(f.output, u);
        assert!(!f.unstable);
    }

    #[test]
    fn fir_impulse_response() {
        let tf = DiscreteTf::new(vec![1.0, 2.0], vec![1.0, 0.0], 1.0).unwrap();
        let f = filter_series(&tf, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.output, vec![1.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn strictly_proper_filter_delays() {
        let tf = DiscreteTf::new(vec![1.0], vec![1.0, -0.5], 1.0).unwrap();
        let f = filter_series(&tf, &[1.0, 0.0, 0.0, 0.0]);
        assert!(approx_eq(&f.output, &[0.0, 1.0, 0.5, 0.25], 1e-15));
    }

    #[test]
    fn unstable_filter_is_flagged() {
        let tf = DiscreteTf::new(vec![1.0], vec![1.0, -1.5], 1.0).unwrap();
        assert!(filter_series(&tf, &[1.0, 0.0]).unstable);
    }

    #[test]
    fn step_response_reaches_dc_gain() {
        let c = ContinuousTf::new(vec![4.0], vec![1.0, 1.2, 4.0]).unwrap();
        let d = discretize_zoh(&c, 0.05).unwrap();
        let y = filter_series(&d, &vec![1.0; 2000]).output;
        let want = c.dc_gain().unwrap();
        assert!((y.last().unwrap() - want).abs() <= 1e-6 * want);
    }
}
