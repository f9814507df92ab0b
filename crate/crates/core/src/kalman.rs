//! Steady-state Kalman machinery for the model
//! `x_{k+1} = A x_k + G w_k`, `y_k = C x_k + v_k`.
//!
//! The observer is the current-estimator form: the a-posteriori update
//! uses gain `L`, and the one-step predictor `x_{k+1|k} = A x_{k|k-1} + A L e_k`
//! therefore has closed-loop matrix `A - A L C`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lticore::{fmt_f64, matrix_serde, pinv, poly_from_roots_complex, symmetrize, Rng};

fn check_symmetric_psd(m: &DMatrix<f64>, name: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    let scale = 1.0 + m.norm();
    if (m - m.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
    }
    if m.nrows() > 0 {
        let min = symmetrize(m).symmetric_eigenvalues().min();
        if min < -1e-10 * scale {
            return Err(Error::InvalidArgument(format!(
                "{name} is not positive semidefinite (min eigenvalue {min:e})"
            )));
        }
    }
    Ok(())
}

/// Linear model with process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyStateSpace {
    #[serde(with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub g: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub c: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub r: DMatrix<f64>,
    pub h: f64,
}

impl NoisyStateSpace {
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        h: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || g.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "A {:?}, G {:?}, C {:?} are inconsistent",
                a.shape(),
                g.shape(),
                c.shape()
            )));
        }
        if q.shape() != (g.ncols(), g.ncols()) || r.shape() != (c.nrows(), c.nrows()) {
            return Err(Error::Dimension(format!(
                "Q {:?} / R {:?} do not match G {:?} / C {:?}",
                q.shape(),
                r.shape(),
                g.shape(),
                c.shape()
            )));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidArgument("sample period must be positive".into()));
        }
        check_symmetric_psd(&q, "Q")?;
        check_symmetric_psd(&r, "R")?;
        Ok(NoisyStateSpace { a, g, c, q, r, h })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn disturbances(&self) -> usize {
        self.g.ncols()
    }

    /// Equivalent model with `G = I` and lumped covariance `G Q G^T`.
    pub fn lumped(&self) -> NoisyStateSpace {
        NoisyStateSpace {
            a: self.a.clone(),
            g: DMatrix::identity(self.n(), self.n()),
            c: self.c.clone(),
            q: self.effective_process_covariance(),
            r: self.r.clone(),
            h: self.h,
        }
    }

    pub fn effective_process_covariance(&self) -> DMatrix<f64> {
        symmetrize(&(&self.g * &self.q * self.g.transpose()))
    }

    pub fn with_covariances(&self, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        NoisyStateSpace::new(self.a.clone(), self.g.clone(), self.c.clone(), q, r, self.h)
    }

    /// Simulates `n` samples from `x_0 = 0`. Returns `(states n x N, outputs r x N)`.
    pub fn simulate(&self, samples: usize, rng: &mut Rng) -> (DMatrix<f64>, DMatrix<f64>) {
        let qs = psd_sqrt(&self.q);
        let rs = psd_sqrt(&self.r);
        let mut x = DVector::zeros(self.n());
        let mut xs = DMatrix::zeros(self.n(), samples);
        let mut ys = DMatrix::zeros(self.outputs(), samples);
        for k in 0..samples {
            let v = &rs * standard_normal(self.outputs(), rng);
            let y = &self.c * &x + v;
            xs.set_column(k, &x);
            ys.set_column(k, &y);
            let w = &qs * standard_normal(self.disturbances(), rng);
            x = &self.a * &x + &self.g * w;
        }
        (xs, ys)
    }
}

fn standard_normal(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Third-order position/velocity/acceleration model driven by a scalar
/// jerk disturbance.
pub fn build_abg_model(h: f64, sigma_w: f64, sigma_v: f64) -> Result<NoisyStateSpace> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("h must be positive, got {h}")));
    }
    if !(sigma_w >= 0.0 && sigma_v >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "standard deviations must be non-negative, got {sigma_w}, {sigma_v}"
        )));
    }
    let h2 = h * h / 2.0;
    NoisyStateSpace::new(
        DMatrix::from_row_slice(3, 3, &[1.0, h, h2, 0.0, 1.0, h, 0.0, 0.0, 1.0]),
        DMatrix::from_column_slice(3, 1, &[h2, h, 1.0]),
        DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]),
        DMatrix::from_element(1, 1, sigma_w * sigma_w),
        DMatrix::from_element(1, 1, sigma_v * sigma_v),
        h,
    )
}

/// A-posteriori observer gain `L` (n x r).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObserverGain(#[serde(with = "matrix_serde")] pub DMatrix<f64>);

impl ObserverGain {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `A - A L C`.
    pub fn closed_loop(&self, a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
        a - a * &self.0 * c
    }
}

fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let r = c.nrows();
    let mut o = DMatrix::zeros(n * r, n);
    let mut row = c.clone();
    for k in 0..n {
        o.view_mut((k * r, 0), (r, n)).copy_from(&row);
        row = &row * a;
    }
    o
}

/// Places the eigenvalues of `A - A L C` at `desired` (single-output
/// systems, Ackermann's formula on the dual pair).
pub fn pole_place_observer(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    desired: &[Complex64],
) -> Result<ObserverGain> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n {
        return Err(Error::Dimension("A must be square and match C".into()));
    }
    if c.nrows() != 1 {
        return Err(Error::InvalidArgument(
            "pole placement is implemented for single-output pairs".into(),
        ));
    }
    if desired.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} poles requested for a system of order {n}",
            desired.len()
        )));
    }
    let coeffs = poly_from_roots_complex(desired);
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidArgument(
            "complex poles must come in conjugate pairs".into(),
        ));
    }
    let o = observability_matrix(a, c);
    let sv = o.singular_values();
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::Unobservable);
    }
    // phi(A) by Horner.
    let mut phi = DMatrix::zeros(n, n);
    for coef in &coeffs {
        phi = &phi * a + DMatrix::identity(n, n) * coef.re;
    }
    let mut en = DVector::zeros(n);
    en[n - 1] = 1.0;
    let t = o
        .lu()
        .solve(&en)
        .ok_or(Error::Unobservable)?;
    let k = phi * t;
    let k = DMatrix::from_column_slice(n, 1, k.as_slice());
    gain_from_predictor_gain(a, &k).map(ObserverGain)
}

/// Solves `A L = K`, falling back to least squares when `A` is singular.
fn gain_from_predictor_gain(a: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sv = a.singular_values();
    if sv.min() > 1e-12 * sv.max() {
        if let Some(l) = a.clone().lu().solve(k) {
            return Ok(l);
        }
    }
    let l = pinv(a) * k;
    let resid = (a * &l - k).norm();
    if resid > 1e-8 * (1.0 + k.norm()) {
        return Err(Error::Singular(format!(
            "A L = K has no solution (residual {resid:e})"
        )));
    }
    Ok(l)
}

/// `P - (A P A^T - A P C^T (C P C^T + R)^{-1} C P A^T + Q)`, Frobenius norm.
pub fn dare_residual(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_step(a, c, q, r, p) {
        Some(next) => (p - next).norm(),
        None => f64::INFINITY,
    }
}

fn riccati_step(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let apc = a * p * c.transpose();
    let s = c * p * c.transpose() + r;
    let sinv = s.try_inverse()?;
    Some(symmetrize(&(a * p * a.transpose() - &apc * sinv * apc.transpose() + q)))
}

pub const DARE_MAX_ITERATIONS: usize = 100_000;

/// Stabilizing solution of the filtering DARE.
///
/// Starts from `P = Q`. With `R` positive definite the iteration is
/// accelerated by doubling (each step squares the number of Riccati
/// updates it represents); otherwise plain fixed-point updates are used.
/// A few plain updates polish the result, and the fixed-point residual is
/// checked against `1e-9 (1 + ||P||)` before returning.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || c.ncols() != n || q.shape() != (n, n) || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension("DARE operands have inconsistent shapes".into()));
    }
    check_symmetric_psd(q, "Q_eff")?;
    check_symmetric_psd(r, "R")?;
    let mut p = match r.clone().cholesky() {
        Some(chol) => doubling(a, c, q, &chol.inverse())?,
        None => fixed_point(a, c, q, r)?,
    };
    for _ in 0..8 {
        match riccati_step(a, c, q, r, &p) {
            Some(next) if next.iter().all(|x| x.is_finite()) => p = next,
            _ => break,
        }
    }
    let residual = dare_residual(a, c, q, r, &p);
    if !(residual <= 1e-9 * (1.0 + p.norm())) {
        return Err(Error::NotConverged {
            what: "DARE".into(),
            iterations: DARE_MAX_ITERATIONS,
            residual,
        });
    }
    Ok(p)
}

fn doubling(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.transpose();
    let mut gk = symmetrize(&(c.transpose() * r_inv * c));
    let mut hk = q.clone();
    // 2^60 Riccati updates is far beyond the plain-iteration cap.
    for _ in 0..60 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let winv_a = lu.solve(&ak).ok_or_else(|| Error::Singular("DARE doubling".into()))?;
        let winv_g = lu.solve(&gk).ok_or_else(|| Error::Singular("DARE doubling".into()))?;
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &winv_a));
        let g_next = symmetrize(&(&gk + &ak * winv_g * ak.transpose()));
        let a_next = &ak * winv_a;
        let change = (&h_next - &hk).norm();
        let bounded = h_next.iter().all(|x| x.is_finite());
        hk = h_next;
        gk = g_next;
        ak = a_next;
        if !bounded {
            return Err(Error::NotConverged {
                what: "DARE".into(),
                iterations: DARE_MAX_ITERATIONS,
                residual: f64::INFINITY,
            });
        }
        if change <= 1e-12 * (1.0 + hk.norm()) {
            break;
        }
    }
    Ok(hk)
}

fn fixed_point(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let mut change = f64::INFINITY;
    for _ in 0..DARE_MAX_ITERATIONS {
        let next = riccati_step(a, c, q, r, &p)
            .ok_or_else(|| Error::Singular("innovation covariance C P C^T + R".into()))?;
        change = (&next - &p).norm();
        p = next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-12 * (1.0 + p.norm()) {
            return Ok(p);
        }
    }
    Err(Error::NotConverged {
        what: "DARE".into(),
        iterations: DARE_MAX_ITERATIONS,
        residual: change,
    })
}

/// `L_K = P C^T (C P C^T + R)^{-1}`.
pub fn kalman_gain(p: &DMatrix<f64>, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<ObserverGain> {
    let s = c * p * c.transpose() + r;
    let sv = s.singular_values();
    if s.nrows() == 0 || sv.min() <= 1e-14 * sv.max().max(f64::MIN_POSITIVE) {
        return Err(Error::Singular("innovation covariance C P C^T + R".into()));
    }
    let sinv = s
        .try_inverse()
        .ok_or_else(|| Error::Singular("innovation covariance C P C^T + R".into()))?;
    Ok(ObserverGain(p * c.transpose() * sinv))
}

/// State estimates and innovations of one observer pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterRun {
    /// `x_{k|k-1}`, one column per sample.
    pub apriori: DMatrix<f64>,
    /// `x_{k|k}`.
    pub aposteriori: DMatrix<f64>,
    /// `e_k = y_k - C x_{k|k-1}`.
    pub innovations: DMatrix<f64>,
}

impl FilterRun {
    /// Writes `t,y,xhat_pos,xhat_vel,xhat_acc,innovation` for a scalar
    /// output; other state dimensions get `xhat_<i>` columns.
    pub fn write_csv<W: std::io::Write>(&self, w: W, h: f64, y: &[f64]) -> Result<()> {
        let n = self.aposteriori.nrows();
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        let mut header = vec!["t".to_string(), "y".to_string()];
        if n == 3 {
            header.extend(["xhat_pos", "xhat_vel", "xhat_acc"].map(String::from));
        } else {
            header.extend((0..n).map(|i| format!("xhat_{i}")));
        }
        header.push("innovation".into());
        wr.write_record(&header)?;
        for (k, &yk) in y.iter().enumerate().take(self.aposteriori.ncols()) {
            let mut row = vec![fmt_f64(k as f64 * h), fmt_f64(yk)];
            row.extend((0..n).map(|i| fmt_f64(self.aposteriori[(i, k)])));
            row.push(fmt_f64(self.innovations[(0, k)]));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs the two-step observer from `x_{0|-1} = 0`; `y` is `r x N`.
pub fn run_observer(
    model: &NoisyStateSpace,
    gain: &ObserverGain,
    y: &DMatrix<f64>,
) -> Result<FilterRun> {
    let n = model.n();
    let r = model.outputs();
    if y.nrows() != r {
        return Err(Error::Dimension(format!(
            "model has {r} outputs, data has {} channels",
            y.nrows()
        )));
    }
    if gain.0.shape() != (n, r) {
        return Err(Error::Dimension(format!(
            "gain is {:?}, expected ({n}, {r})",
            gain.0.shape()
        )));
    }
    let samples = y.ncols();
    let mut apriori = DMatrix::zeros(n, samples);
    let mut aposteriori = DMatrix::zeros(n, samples);
    let mut innovations = DMatrix::zeros(r, samples);
    let mut x = DVector::zeros(n);
    for k in 0..samples {
        let e = y.column(k) - &model.c * &x;
        let post = &x + &gain.0 * &e;
        apriori.set_column(k, &x);
        aposteriori.set_column(k, &post);
        innovations.set_column(k, &e);
        x = &model.a * post;
    }
    Ok(FilterRun {
        apriori,
        aposteriori,
        innovations,
    })
}

/// A-priori trajectory of the one-step form `x_{k+1|k} = A x_{k|k-1} + A L e_k`.
pub fn run_predictor(
    model: &NoisyStateSpace,
    gain: &ObserverGain,
    y: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if y.nrows() != model.outputs() || gain.0.shape() != (model.n(), model.outputs()) {
        return Err(Error::Dimension("predictor operands are inconsistent".into()));
    }
    let al = &model.a * &gain.0;
    let mut x = DVector::zeros(model.n());
    let mut out = DMatrix::zeros(model.n(), y.ncols());
    for k in 0..y.ncols() {
        out.set_column(k, &x);
        let e = y.column(k) - &model.c * &x;
        x = &model.a * &x + &al * e;
    }
    Ok(out)
}
