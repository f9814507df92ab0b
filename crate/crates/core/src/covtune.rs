//! Noise covariance estimation from innovation autocorrelations
//! (autocovariance least squares).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kalman::{
    kalman_gain, pole_place_observer, run_observer, solve_dare, NoisyStateSpace, ObserverGain,
};
use crate::lticore::{fmt_f64, kron, matrix_serde, pinv, spectral_radius, symmetrize, unvec, vec_of};
use num_complex::Complex64;

/// Normalization and summation range of the sample autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcfEstimator {
    /// `(1/N_A) sum_{i=0}^{N_A-j} e_i e_{i+j}^T`: only the first `N_A + 1`
    /// samples contribute.
    #[default]
    Literal,
    /// `(1/M) sum_{i=0}^{M-1-j} e_i e_{i+j}^T` over the whole record.
    Biased,
    /// `1/(M-j)` instead of `1/M`.
    Unbiased,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutocorrelationSet {
    /// `lags[j]` is the `r x r` estimate at lag `j`.
    pub lags: Vec<DMatrix<f64>>,
    pub sample_count: usize,
    pub estimator: AcfEstimator,
}

impl AutocorrelationSet {
    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    /// Stacks `vec` of each lag in the convention of the regressor
    /// (`E[e_{k+j} e_k^T]`), i.e. the transpose of the stored estimate.
    pub fn stacked(&self) -> DVector<f64> {
        let parts: Vec<DVector<f64>> = self.lags.iter().map(|m| vec_of(&m.transpose())).collect();
        let len = parts.iter().map(|p| p.len()).sum();
        let mut out = DVector::zeros(len);
        let mut at = 0;
        for p in parts {
            out.rows_mut(at, p.len()).copy_from(&p);
            at += p.len();
        }
        out
    }
}

/// Sample autocorrelations of an `r x M` innovation record up to lag `max_lag`.
pub fn estimate_autocorrelations(
    e: &DMatrix<f64>,
    max_lag: usize,
    estimator: AcfEstimator,
) -> Result<AutocorrelationSet> {
    let m = e.ncols();
    if max_lag == 0 {
        return Err(Error::InvalidArgument("lag count must be at least 1".into()));
    }
    if max_lag >= m {
        return Err(Error::InsufficientData(format!(
            "lag count {max_lag} needs more than {m} samples"
        )));
    }
    let r = e.nrows();
    let lags = (0..=max_lag)
        .map(|j| {
            let (terms, norm) = match estimator {
                AcfEstimator::Literal => (max_lag - j + 1, max_lag as f64),
                AcfEstimator::Biased => (m - j, m as f64),
                AcfEstimator::Unbiased => (m - j, (m - j) as f64),
            };
            // Column-major storage: sample k of channel a sits at k * r + a.
            let data = e.as_slice();
            DMatrix::from_fn(r, r, |a, b| {
                let mut sum = 0.0;
                for i in 0..terms {
                    sum += data[i * r + a] * data[(i + j) * r + b];
                }
                sum / norm
            })
        })
        .collect();
    Ok(AutocorrelationSet {
        lags,
        sample_count: m,
        estimator,
    })
}

/// Solves `P = F P F^T + W` by vectorization.
pub fn solve_discrete_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let rho = spectral_radius(f)?;
    if rho >= 1.0 {
        return Err(Error::Unstable {
            what: "Lyapunov operand".into(),
            radius: rho,
        });
    }
    let lhs = DMatrix::identity(n * n, n * n) - kron(f, f);
    let x = lhs
        .lu()
        .solve(&vec_of(w))
        .ok_or_else(|| Error::Singular("I - F (x) F".into()))?;
    Ok(symmetrize(&unvec(&x, n, n)))
}

fn closed_loop(model: &NoisyStateSpace, gain: &ObserverGain) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if gain.0.shape() != (model.n(), model.outputs()) {
        return Err(Error::Dimension(format!(
            "gain is {:?}, model needs ({}, {})",
            gain.0.shape(),
            model.n(),
            model.outputs()
        )));
    }
    let al = &model.a * &gain.0;
    let abar = &model.a - &al * &model.c;
    let rho = spectral_radius(&abar)?;
    if rho >= 1.0 {
        return Err(Error::Unstable {
            what: "observer error dynamics A - A L C".into(),
            radius: rho,
        });
    }
    Ok((abar, al))
}

/// Steady-state innovation autocorrelations `E[e_{k+j} e_k^T]`, `j = 0..=max_lag`.
pub fn theoretical_autocorrelations(
    model: &NoisyStateSpace,
    gain: &ObserverGain,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_lag: usize,
) -> Result<Vec<DMatrix<f64>>> {
    let (abar, al) = closed_loop(model, gain)?;
    let w = &model.g * q * model.g.transpose() + &al * r * al.transpose();
    let p = solve_discrete_lyapunov(&abar, &w)?;
    let c = &model.c;
    let pct = &p * c.transpose();
    let mut out = vec![c * &pct + r];
    let mut pow_prev = DMatrix::identity(model.n(), model.n());
    for _ in 1..=max_lag {
        let pow = &abar * &pow_prev;
        out.push(c * &pow * &pct - c * &pow_prev * &al * r);
        pow_prev = pow;
    }
    Ok(out)
}

/// Linear map from `[vec(Q); vec(R)]` to the stacked autocorrelations.
#[derive(Debug, Clone, PartialEq)]
pub struct AlsRegressor {
    pub h: DMatrix<f64>,
    pub n: usize,
    pub r: usize,
    pub s: usize,
    pub max_lag: usize,
}

impl AlsRegressor {
    pub fn apply(&self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.s * self.s + self.r * self.r);
        w.rows_mut(0, self.s * self.s).copy_from(&vec_of(q));
        w.rows_mut(self.s * self.s, self.r * self.r).copy_from(&vec_of(r));
        &self.h * w
    }
}

pub fn build_als_regressor(
    model: &NoisyStateSpace,
    gain: &ObserverGain,
    max_lag: usize,
) -> Result<AlsRegressor> {
    let (abar, al) = closed_loop(model, gain)?;
    let (n, r, s) = (model.n(), model.outputs(), model.disturbances());
    let c = &model.c;
    let a1 = kron(&abar, &abar);
    let g1 = kron(&model.g, &model.g);
    let a2 = kron(&al, &al);
    let c1 = kron(c, c);
    let lu = (DMatrix::identity(n * n, n * n) - a1).lu();
    let sol_g = lu
        .solve(&g1)
        .ok_or_else(|| Error::Singular("I - Abar (x) Abar".into()))?;
    let sol_a = lu
        .solve(&a2)
        .ok_or_else(|| Error::Singular("I - Abar (x) Abar".into()))?;
    let rr = r * r;
    let mut h = DMatrix::zeros((max_lag + 1) * rr, s * s + rr);
    h.view_mut((0, 0), (rr, s * s)).copy_from(&(&c1 * &sol_g));
    h.view_mut((0, s * s), (rr, rr))
        .copy_from(&(DMatrix::identity(rr, rr) + &c1 * &sol_a));
    let eye_r = DMatrix::identity(r, r);
    let mut pow_prev = DMatrix::identity(n, n);
    for j in 1..=max_lag {
        let pow = &abar * &pow_prev;
        let a3 = kron(c, &(c * &pow));
        let a4 = kron(&eye_r, &(c * &pow_prev * &al));
        h.view_mut((j * rr, 0), (rr, s * s)).copy_from(&(&a3 * &sol_g));
        h.view_mut((j * rr, s * s), (rr, rr))
            .copy_from(&(&a3 * &sol_a - a4));
        pow_prev = pow;
    }
    Ok(AlsRegressor { h, n, r, s, max_lag })
}

/// Box bounds on the covariance entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceBounds {
    /// Lower/upper bounds on the diagonal of `Q`.
    pub q_diag: Vec<(f64, f64)>,
    /// Symmetric bound on `|Q_ij|`, `i != j`.
    pub q_offdiag: f64,
    /// Lower/upper bounds on the diagonal of `R`.
    pub r_diag: Vec<(f64, f64)>,
}

impl CovarianceBounds {
    /// `[0, 1e6 * var]` on every diagonal entry and `1e6 * var` off-diagonal.
    pub fn default_for(s: usize, r: usize, output_variance: f64) -> Self {
        let hi = 1e6 * output_variance.max(f64::MIN_POSITIVE);
        CovarianceBounds {
            q_diag: vec![(0.0, hi); s],
            q_offdiag: hi,
            r_diag: vec![(0.0, hi); r],
        }
    }

    fn validate(&self, s: usize, r: usize) -> Result<()> {
        if self.q_diag.len() != s || self.r_diag.len() != r {
            return Err(Error::Dimension(format!(
                "bounds cover {}x{} / {}x{}, problem is {s}x{s} / {r}x{r}",
                self.q_diag.len(),
                self.q_diag.len(),
                self.r_diag.len(),
                self.r_diag.len()
            )));
        }
        for &(lo, hi) in self.q_diag.iter().chain(&self.r_diag) {
            if !(lo <= hi) || hi < 0.0 || !hi.is_finite() {
                return Err(Error::InfeasibleBounds(format!("[{lo}, {hi}]")));
            }
        }
        if !(self.q_offdiag >= 0.0) {
            return Err(Error::InfeasibleBounds(format!(
                "off-diagonal bound {} is negative",
                self.q_offdiag
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    #[serde(with = "matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(with = "matrix_serde")]
    pub r: DMatrix<f64>,
    /// `||a_hat - H w||_2`.
    pub residual: f64,
    pub iterations: usize,
    /// Projected gradient norm at the returned point (0 when the
    /// unconstrained fit was already feasible).
    pub projected_gradient: f64,
}

pub const SOLVER_MAX_ITERATIONS: usize = 500;

/// Smallest principal minor of orders 1 to 3.
pub fn principal_minor_slack(q: &DMatrix<f64>) -> f64 {
    let s = q.nrows();
    let mut worst = f64::INFINITY;
    for i in 0..s {
        worst = worst.min(q[(i, i)]);
        for j in i + 1..s {
            worst = worst.min(q[(i, i)] * q[(j, j)] - q[(i, j)] * q[(j, i)]);
            for k in j + 1..s {
                let idx = [i, j, k];
                let sub = DMatrix::from_fn(3, 3, |a, b| q[(idx[a], idx[b])]);
                worst = worst.min(sub.determinant());
            }
        }
    }
    worst
}

/// Unknowns of the reduced problem: the lower triangle of `Q` (row-wise)
/// followed by the diagonal of `R`.
struct Layout {
    s: usize,
    r: usize,
    /// Congruence scales making the diagonal columns unit norm.
    dq: Vec<f64>,
    dr: Vec<f64>,
}

impl Layout {
    fn tri(&self) -> usize {
        self.s * (self.s + 1) / 2
    }

    fn tri_index(i: usize, j: usize) -> usize {
        i * (i + 1) / 2 + j
    }

    /// Maps an unscaled `(Q, R)` pair to `w`.
    fn w_of(&self, q: &DMatrix<f64>, r: &DMatrix<f64>) -> DVector<f64> {
        let mut w = DVector::zeros(self.s * self.s + self.r * self.r);
        w.rows_mut(0, self.s * self.s).copy_from(&vec_of(q));
        w.rows_mut(self.s * self.s, self.r * self.r).copy_from(&vec_of(r));
        w
    }

    /// Scaled factor parameters to unscaled `(Q, R)`.
    fn covariances(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let lam = self.factor(theta);
        let qs = &lam * lam.transpose();
        let q = DMatrix::from_fn(self.s, self.s, |i, j| qs[(i, j)] / (self.dq[i] * self.dq[j]));
        let t = self.tri();
        let r = DMatrix::from_fn(self.r, self.r, |i, j| {
            if i == j {
                theta[t + i] * theta[t + i] / (self.dr[i] * self.dr[i])
            } else {
                0.0
            }
        });
        (symmetrize(&q), r)
    }

    fn factor(&self, theta: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.s, self.s, |i, j| {
            if j <= i {
                theta[Self::tri_index(i, j)]
            } else {
                0.0
            }
        })
    }
}

struct Problem<'a> {
    h: &'a DMatrix<f64>,
    a_hat: &'a DVector<f64>,
    layout: Layout,
    /// Per-parameter box in scaled factor coordinates.
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Row-norm limits of the scaled factor, from the bounds on `Q_ii`.
    row_floor: Vec<f64>,
    row_cap: Vec<f64>,
}

impl Problem<'_> {
    fn cost_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (q, r) = self.layout.covariances(theta);
        let w = self.layout.w_of(&q, &r);
        let resid = self.a_hat - self.h * &w;
        let cost = resid.norm_squared();
        let gw = -2.0 * self.h.transpose() * resid;
        let (s, rr) = (self.layout.s, self.layout.r);
        let gq = unvec(&gw.rows(0, s * s).into_owned(), s, s);
        // Chain rule through the congruence scaling Q = D^-1 Qs D^-1.
        let gqs = DMatrix::from_fn(s, s, |i, j| {
            (gq[(i, j)] + gq[(j, i)]) / (self.layout.dq[i] * self.layout.dq[j])
        });
        let lam = self.layout.factor(theta);
        let gl = gqs * lam;
        let mut g = vec![0.0; theta.len()];
        for i in 0..s {
            for j in 0..=i {
                g[Layout::tri_index(i, j)] = gl[(i, j)];
            }
        }
        let t = self.layout.tri();
        for i in 0..rr {
            let d = self.layout.dr[i];
            g[t + i] = 2.0 * theta[t + i] * gw[s * s + i * rr + i] / (d * d);
        }
        (cost, g)
    }

    fn project(&self, theta: &mut [f64]) {
        for (i, x) in theta.iter_mut().enumerate() {
            *x = x.clamp(self.lower[i], self.upper[i]);
        }
        for i in 0..self.layout.s {
            let idx: Vec<usize> = (0..=i).map(|j| Layout::tri_index(i, j)).collect();
            let norm = idx.iter().map(|&k| theta[k] * theta[k]).sum::<f64>().sqrt();
            if norm > self.row_cap[i] {
                let f = self.row_cap[i] / norm;
                for k in idx {
                    theta[k] *= f;
                }
            } else if norm < self.row_floor[i] {
                if norm > 0.0 {
                    let f = self.row_floor[i] / norm;
                    for k in idx {
                        theta[k] *= f;
                    }
                } else {
                    theta[Layout::tri_index(i, i)] = self.row_floor[i];
                }
            }
        }
    }

    fn projected_gradient(&self, theta: &[f64], g: &[f64]) -> f64 {
        let mut step: Vec<f64> = theta.iter().zip(g).map(|(x, gi)| x - gi).collect();
        self.project(&mut step);
        theta
            .iter()
            .zip(&step)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn within_bounds(q: &DMatrix<f64>, r: &DMatrix<f64>, b: &CovarianceBounds, tol: f64) -> bool {
    let s = q.nrows();
    for i in 0..s {
        let (lo, hi) = b.q_diag[i];
        if q[(i, i)] < lo - tol || q[(i, i)] > hi + tol {
            return false;
        }
        for j in 0..s {
            if i != j && q[(i, j)].abs() > b.q_offdiag + tol {
                return false;
            }
        }
    }
    for i in 0..r.nrows() {
        let (lo, hi) = b.r_diag[i];
        if r[(i, i)] < lo - tol || r[(i, i)] > hi + tol {
            return false;
        }
    }
    true
}

/// Shrinks off-diagonal entries of a PSD matrix toward its diagonal until
/// they satisfy `bound`; convex combinations with the diagonal stay PSD.
fn shrink_offdiag(q: &mut DMatrix<f64>, bound: f64) {
    let s = q.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            if i != j {
                worst = worst.max(q[(i, j)].abs());
            }
        }
    }
    if worst > bound {
        let t = bound / worst;
        for i in 0..s {
            for j in 0..s {
                if i != j {
                    q[(i, j)] *= t;
                }
            }
        }
    }
}

/// Least-squares fit of `(Q, R)` to stacked autocorrelations, subject to
/// `Q` PSD, `R` diagonal non-negative, and the box bounds.
pub fn solve_covariances(
    reg: &AlsRegressor,
    a_hat: &DVector<f64>,
    bounds: &CovarianceBounds,
) -> Result<CovarianceEstimate> {
    let (s, r) = (reg.s, reg.r);
    if !(1..=3).contains(&s) {
        return Err(Error::InvalidArgument(format!(
            "Q of size {s} is outside the supported 1..=3"
        )));
    }
    if a_hat.len() != reg.h.nrows() {
        return Err(Error::Dimension(format!(
            "data vector has {} entries, regressor {} rows",
            a_hat.len(),
            reg.h.nrows()
        )));
    }
    bounds.validate(s, r)?;

    // Reduced regressor over the free entries (symmetric Q, diagonal R).
    let layout0 = Layout { s, r, dq: vec![1.0; s], dr: vec![1.0; r] };
    let t = layout0.tri();
    let mut hred = DMatrix::zeros(reg.h.nrows(), t + r);
    for i in 0..s {
        for j in 0..=i {
            let mut col = reg.h.column(j * s + i).into_owned();
            if i != j {
                col += reg.h.column(i * s + j);
            }
            hred.set_column(Layout::tri_index(i, j), &col);
        }
    }
    for i in 0..r {
        hred.set_column(t + i, &reg.h.column(s * s + i * r + i));
    }
    let norm_or_one = |c: f64| if c > 0.0 { c.sqrt() } else { 1.0 };
    let dq: Vec<f64> = (0..s)
        .map(|i| norm_or_one(hred.column(Layout::tri_index(i, i)).norm()))
        .collect();
    let dr: Vec<f64> = (0..r).map(|i| norm_or_one(hred.column(t + i).norm())).collect();
    let residual_of = |q: &DMatrix<f64>, rm: &DMatrix<f64>| {
        (a_hat - &reg.h * layout0.w_of(q, rm)).norm()
    };

    // Unconstrained fit; optimal whenever it is feasible.
    let mut scale = DVector::zeros(t + r);
    for i in 0..s {
        for j in 0..=i {
            scale[Layout::tri_index(i, j)] = 1.0 / (dq[i] * dq[j]);
        }
    }
    for i in 0..r {
        scale[t + i] = 1.0 / (dr[i] * dr[i]);
    }
    let hs = &hred * DMatrix::from_diagonal(&scale);
    let z = pinv(&hs) * a_hat;
    let x0 = z.component_mul(&scale);
    let mut q0 = DMatrix::from_fn(s, s, |i, j| {
        let (a, b) = if i >= j { (i, j) } else { (j, i) };
        x0[Layout::tri_index(a, b)]
    });
    let r0 = DMatrix::from_fn(r, r, |i, j| if i == j { x0[t + i] } else { 0.0 });
    let qscale = 1.0 + q0.amax();
    let psd = symmetrize(&q0).symmetric_eigenvalues().min() >= 0.0;
    if psd && (0..r).all(|i| r0[(i, i)] >= 0.0) && within_bounds(&q0, &r0, bounds, 0.0) {
        q0 = symmetrize(&q0);
        return finish(q0.clone(), r0.clone(), residual_of(&q0, &r0), 0, 0.0, bounds, qscale);
    }

    // Constrained fit in scaled Cholesky-factor coordinates.
    let layout = Layout { s, r, dq: dq.clone(), dr: dr.clone() };
    let mut lower = vec![f64::NEG_INFINITY; t + r];
    let mut upper = vec![f64::INFINITY; t + r];
    let mut row_cap = vec![f64::INFINITY; s];
    let mut row_floor = vec![0.0; s];
    for i in 0..s {
        let (lo, hi) = bounds.q_diag[i];
        row_cap[i] = hi.sqrt() * dq[i];
        row_floor[i] = lo.max(0.0).sqrt() * dq[i];
        lower[Layout::tri_index(i, i)] = 0.0;
    }
    for i in 0..r {
        let (lo, hi) = bounds.r_diag[i];
        lower[t + i] = lo.max(0.0).sqrt() * dr[i];
        upper[t + i] = hi.sqrt() * dr[i];
    }
    let prob = Problem { h: &reg.h, a_hat, layout, lower, upper, row_floor, row_cap };

    // Start from the projection of the unconstrained fit, nudged off the
    // degenerate zero factor.
    let eig = symmetrize(&q0).symmetric_eigen();
    let qp = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)))
        * eig.eigenvectors.transpose();
    let qs0 = DMatrix::from_fn(s, s, |i, j| qp[(i, j)] * dq[i] * dq[j]);
    let bump = 1e-3 * (1.0 + qs0.amax());
    let chol = (symmetrize(&qs0) + DMatrix::identity(s, s) * bump)
        .cholesky()
        .ok_or_else(|| Error::Singular("initial factor".into()))?;
    let l0 = chol.l();
    let mut theta = vec![0.0; t + r];
    for i in 0..s {
        for j in 0..=i {
            theta[Layout::tri_index(i, j)] = l0[(i, j)];
        }
    }
    for i in 0..r {
        let v = r0[(i, i)].max(0.0) * dr[i] * dr[i];
        theta[t + i] = v.sqrt().max(1e-3);
    }
    prob.project(&mut theta);
    let (theta, iterations, pg) = minimize(&prob, theta);
    let (mut q, rm) = prob.layout.covariances(&theta);
    shrink_offdiag(&mut q, bounds.q_offdiag);
    let res = residual_of(&q, &rm);
    finish(q, rm, res, iterations, pg, bounds, qscale)
}

fn finish(
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    residual: f64,
    iterations: usize,
    projected_gradient: f64,
    bounds: &CovarianceBounds,
    qscale: f64,
) -> Result<CovarianceEstimate> {
    let slack = principal_minor_slack(&q);
    if slack < -1e-10 * qscale.powi(q.nrows() as i32) {
        return Err(Error::InvalidArgument(format!(
            "fitted Q fails the principal-minor test (slack {slack:e})"
        )));
    }
    if !within_bounds(&q, &r, bounds, 1e-9 * qscale) {
        return Err(Error::InfeasibleBounds(
            "fitted covariances violate the requested bounds".into(),
        ));
    }
    Ok(CovarianceEstimate {
        q,
        r,
        residual,
        iterations,
        projected_gradient,
    })
}

/// Projected BFGS with Armijo backtracking.
fn minimize(prob: &Problem, mut theta: Vec<f64>) -> (Vec<f64>, usize, f64) {
    let m = theta.len();
    let (mut f, mut g) = prob.cost_grad(&theta);
    let mut hinv = DMatrix::<f64>::identity(m, m);
    let mut pg = prob.projected_gradient(&theta, &g);
    for it in 0..SOLVER_MAX_ITERATIONS {
        if pg <= 1e-8 * (1.0 + f) {
            return (theta, it, pg);
        }
        let gv = DVector::from_column_slice(&g);
        let mut dir = -(&hinv * &gv);
        if dir.dot(&gv) >= 0.0 {
            hinv = DMatrix::identity(m, m);
            dir = -gv.clone();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(dir.iter()).map(|(x, d)| x + step * d).collect();
            prob.project(&mut trial);
            let moved: f64 = trial.iter().zip(&theta).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            let (ft, gt) = prob.cost_grad(&trial);
            if ft <= f + 1e-4 * moved.min(0.0) && ft <= f {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((next, fn_, gn)) = accepted else {
            if hinv != DMatrix::identity(m, m) {
                hinv = DMatrix::identity(m, m);
                continue;
            }
            return (theta, it, pg);
        };
        let sv = DVector::from_iterator(m, next.iter().zip(&theta).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(m, gn.iter().zip(&g).map(|(a, b)| a - b));
        let sy = sv.dot(&yv);
        if sy > 1e-16 * sv.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(m, m);
            let left = &eye - rho * &sv * yv.transpose();
            hinv = &left * &hinv * left.transpose() + rho * &sv * sv.transpose();
        }
        theta = next;
        f = fn_;
        g = gn;
        pg = prob.projected_gradient(&theta, &g);
    }
    (theta, SOLVER_MAX_ITERATIONS, pg)
}

/// Outcome of the innovation whiteness test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitenessReport {
    /// Normalized autocorrelation at lags `1..=N_A`.
    pub coefficients: Vec<f64>,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub exceed_count: usize,
    pub total: usize,
    pub exceedance_fraction: f64,
    pub pass: bool,
}

impl WhitenessReport {
    /// `lag,value,lower_bound,upper_bound`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["lag", "value", "lower_bound", "upper_bound"])?;
        for (j, v) in self.coefficients.iter().enumerate() {
            wr.write_record([
                (j + 1).to_string(),
                fmt_f64(*v),
                fmt_f64(self.lower_bound),
                fmt_f64(self.upper_bound),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Counts normalized autocorrelations of a scalar sequence outside
/// `+-z / sqrt(N)`; passes when at most `1 - confidence` of them do.
pub fn whiteness_test(e: &[f64], max_lag: usize, confidence: f64) -> Result<WhitenessReport> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence {confidence} not in (0, 1)")));
    }
    let m = DMatrix::from_row_slice(1, e.len(), e);
    let acf = estimate_autocorrelations(&m, max_lag, AcfEstimator::Biased)?;
    let a0 = acf.lags[0][(0, 0)];
    if !(a0 > 0.0) {
        return Err(Error::ZeroVariance("innovation sequence has zero variance".into()));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + confidence / 2.0);
    let bound = z / (e.len() as f64).sqrt();
    let coefficients: Vec<f64> = acf.lags[1..].iter().map(|a| a[(0, 0)] / a0).collect();
    let exceed_count = coefficients.iter().filter(|c| c.abs() > bound).count();
    let total = coefficients.len();
    let exceedance_fraction = exceed_count as f64 / total as f64;
    Ok(WhitenessReport {
        coefficients,
        lower_bound: -bound,
        upper_bound: bound,
        exceed_count,
        total,
        exceedance_fraction,
        pass: exceedance_fraction <= 1.0 - confidence + 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningOptions {
    pub max_lag: usize,
    pub iterations: usize,
    /// Leading innovations dropped before estimating autocorrelations.
    pub skip: usize,
    pub estimator: AcfEstimator,
    pub confidence: f64,
    /// `None` uses [`CovarianceBounds::default_for`] with the lower bound
    /// on each `Q_ii` raised to `q_floor` times the variance of the first
    /// pass's innovations.
    pub bounds: Option<CovarianceBounds>,
    /// Keeps `Q` away from zero so that the Riccati equation has a
    /// stabilizing solution for marginally stable models.
    pub q_floor: f64,
}

impl Default for TuningOptions {
    fn default() -> Self {
        TuningOptions {
            max_lag: 200,
            iterations: 10,
            skip: 50,
            estimator: AcfEstimator::Biased,
            confidence: 0.95,
            bounds: None,
            q_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    #[serde(rename = "Q", with = "matrix_serde")]
    pub q: DMatrix<f64>,
    #[serde(rename = "R", with = "matrix_serde")]
    pub r: DMatrix<f64>,
    pub residual: f64,
    /// Whiteness of the innovations produced by the gain used in this
    /// iteration.
    pub exceedance_fraction: f64,
    /// Gain computed at the end of this iteration.
    pub gain: ObserverGain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningResult {
    pub estimate: CovarianceEstimate,
    pub gain: ObserverGain,
    pub history: Vec<IterationRecord>,
    /// Whiteness of the innovations under the final gain.
    pub final_whiteness: WhitenessReport,
}

/// Pole placement followed by repeated (observe, fit, Riccati) passes.
/// `y` is `r x N`.
pub fn iterate_tuning(
    model: &NoisyStateSpace,
    y: &DMatrix<f64>,
    initial_poles: &[Complex64],
    opts: &TuningOptions,
) -> Result<TuningResult> {
    let gain = pole_place_observer(&model.a, &model.c, initial_poles)?;
    tune_from_gain(model, y, gain, opts)
}

/// As [`iterate_tuning`], starting from a given gain.
pub fn tune_from_gain(
    model: &NoisyStateSpace,
    y: &DMatrix<f64>,
    mut gain: ObserverGain,
    opts: &TuningOptions,
) -> Result<TuningResult> {
    if opts.iterations == 0 {
        return Err(Error::InvalidArgument("at least one iteration is required".into()));
    }
    if y.ncols() <= opts.skip + opts.max_lag {
        return Err(Error::InsufficientData(format!(
            "{} samples cannot cover {} skipped plus {} lags",
            y.ncols(),
            opts.skip,
            opts.max_lag
        )));
    }
    let variance = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64
    };
    let bounds = match &opts.bounds {
        Some(b) => b.clone(),
        None => {
            let row: Vec<f64> = y.row(0).iter().copied().collect();
            let mut b = CovarianceBounds::default_for(model.disturbances(), model.outputs(), variance(&row));
            let first = run_observer(model, &gain, y)?;
            let e: Vec<f64> = first.innovations.row(0).iter().skip(opts.skip).copied().collect();
            let floor = opts.q_floor * variance(&e);
            for d in &mut b.q_diag {
                d.0 = floor.min(d.1);
            }
            b
        }
    };
    let mut history = Vec::with_capacity(opts.iterations);
    let mut estimate = None;
    for iter in 1..=opts.iterations {
        let step = (|| -> Result<(CovarianceEstimate, ObserverGain, f64)> {
            let run = run_observer(model, &gain, y)?;
            let e = run.innovations.columns(opts.skip, y.ncols() - opts.skip).into_owned();
            let white = whiteness_test(
                &e.row(0).iter().copied().collect::<Vec<_>>(),
                opts.max_lag,
                opts.confidence,
            )?;
            let acf = estimate_autocorrelations(&e, opts.max_lag, opts.estimator)?;
            let reg = build_als_regressor(model, &gain, opts.max_lag)?;
            let est = solve_covariances(&reg, &acf.stacked(), &bounds)?;
            let qeff = &model.g * &est.q * model.g.transpose();
            let p = solve_dare(&model.a, &model.c, &symmetrize(&qeff), &est.r)?;
            let next = kalman_gain(&p, &model.c, &est.r)?;
            let rho = spectral_radius(&next.closed_loop(&model.a, &model.c))?;
            if rho >= 1.0 {
                return Err(Error::Unstable {
                    what: "tuned observer error dynamics".into(),
                    radius: rho,
                });
            }
            Ok((est, next, white.exceedance_fraction))
        })()
        .map_err(|e| Error::at_iteration(iter, e))?;
        let (est, next, frac) = step;
        history.push(IterationRecord {
            iter,
            q: est.q.clone(),
            r: est.r.clone(),
            residual: est.residual,
            exceedance_fraction: frac,
            gain: next.clone(),
        });
        gain = next;
        estimate = Some(est);
    }
    let run = run_observer(model, &gain, y)?;
    let e: Vec<f64> = run.innovations.row(0).iter().skip(opts.skip).copied().collect();
    let final_whiteness = whiteness_test(&e, opts.max_lag, opts.confidence)?;
    Ok(TuningResult {
        estimate: estimate.expect("at least one iteration"),
        gain,
        history,
        final_whiteness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::build_abg_model;
    use crate::lticore::{seeded_rng, Rng};
    use proptest::prelude::*;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn white(n: usize, rng: &mut Rng) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn poles(p: &[f64]) -> Vec<Complex64> {
        p.iter().map(|&x| Complex64::new(x, 0.0)).collect()
    }

    #[test]
    fn literal_estimator_on_constant_sequence() {
        let c = 3.0;
        let e = DMatrix::from_element(1, 10, c);
        let acf = estimate_autocorrelations(&e, 2, AcfEstimator::Literal).unwrap();
        let got: Vec<f64> = acf.lags.iter().map(|m| m[(0, 0)]).collect();
        assert_eq!(got, vec![1.5 * c * c, c * c, 0.5 * c * c]);
    }

    #[test]
    fn zero_sequence_and_short_input() {
        let e = DMatrix::zeros(1, 10);
        for est in [AcfEstimator::Literal, AcfEstimator::Biased, AcfEstimator::Unbiased] {
            let acf = estimate_autocorrelations(&e, 3, est).unwrap();
            assert!(acf.lags.iter().all(|m| m[(0, 0)] == 0.0));
        }
        assert!(matches!(
            estimate_autocorrelations(&e, 10, AcfEstimator::Literal),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn white_noise_lag_zero_near_expected() {
        let (n, na) = (50_000, 200);
        let mut literal = 0.0;
        for seed in 0..20 {
            let x = white(n, &mut seeded_rng(seed));
            let e = DMatrix::from_row_slice(1, n, &x);
            let full = estimate_autocorrelations(&e, na, AcfEstimator::Biased).unwrap();
            assert!((full.lags[0][(0, 0)] - 1.0).abs() < 0.05);
            let bound = 1.96 / (n as f64).sqrt();
            let beyond = full.lags[1..].iter().filter(|m| m[(0, 0)].abs() > bound).count();
            assert!(beyond <= 20, "{beyond}");
            literal += estimate_autocorrelations(&e, na, AcfEstimator::Literal).unwrap().lags[0][(0, 0)];
        }
        let expected = (na + 1) as f64 / na as f64;
        assert!((literal / 20.0 - expected).abs() < 0.05 * expected);
    }

    #[test]
    fn lyapunov_scalar_geometric() {
        let p = solve_discrete_lyapunov(&scalar(0.5), &scalar(2.0)).unwrap();
        assert!((p[(0, 0)] - 2.0 / 0.75).abs() < 1e-14);
        assert!(solve_discrete_lyapunov(&scalar(1.0), &scalar(1.0)).is_err());
    }

    #[test]
    fn scalar_open_loop_autocorrelations() {
        let (q, r) = (0.7, 0.3);
        let m = NoisyStateSpace::new(scalar(0.5), scalar(1.0), scalar(1.0), scalar(q), scalar(r), 1.0).unwrap();
        let acf = theoretical_autocorrelations(&m, &ObserverGain(scalar(0.0)), &scalar(q), &scalar(r), 5).unwrap();
        let p = q / 0.75;
        assert!((acf[0][(0, 0)] - (p + r)).abs() < 1e-14);
        for (j, a) in acf.iter().enumerate().skip(1) {
            assert!((a[(0, 0)] - 0.5f64.powi(j as i32) * p).abs() < 1e-14);
        }
    }

    #[test]
    fn no_process_noise_lags() {
        let m = build_abg_model(0.05, 0.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let r = scalar(2.0);
        let acf = theoretical_autocorrelations(&m, &l, &scalar(0.0), &r, 6).unwrap();
        let abar = l.closed_loop(&m.a, &m.c);
        let al = &m.a * &l.0;
        let p = solve_discrete_lyapunov(&abar, &(&al * &r * al.transpose())).unwrap();
        assert!((acf[0][(0, 0)] - (&m.c * &p * m.c.transpose())[(0, 0)] - 2.0).abs() < 1e-12);
        let mut pow = DMatrix::identity(3, 3);
        for a in acf.iter().skip(1) {
            let want = (&m.c * &abar * &pow * &p * m.c.transpose() - &m.c * &pow * &al * &r)[(0, 0)];
            assert!((a[(0, 0)] - want).abs() < 1e-12);
            pow = &abar * pow;
        }
    }

    #[test]
    fn optimal_gain_whitens_theoretical_innovations() {
        let m = build_abg_model(0.0177, 0.5, 1.0).unwrap();
        let p = solve_dare(&m.a, &m.c, &m.effective_process_covariance(), &m.r).unwrap();
        let l = kalman_gain(&p, &m.c, &m.r).unwrap();
        let acf = theoretical_autocorrelations(&m, &l, &m.q, &m.r, 30).unwrap();
        for a in &acf[1..] {
            assert!(a[(0, 0)].abs() <= 1e-9 * acf[0][(0, 0)]);
        }
    }

    #[test]
    fn lumped_and_structured_models_share_innovation_covariance() {
        let m = build_abg_model(0.0177, 0.5, 1.0).unwrap();
        let lm = m.lumped();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let a = theoretical_autocorrelations(&m, &l, &m.q, &m.r, 4).unwrap();
        let b = theoretical_autocorrelations(&lm, &l, &lm.q, &lm.r, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() <= 1e-9 * (1.0 + x.norm()));
        }
    }

    #[test]
    fn regressor_shape() {
        let m = build_abg_model(0.0177, 1.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let reg = build_als_regressor(&m, &l, 200).unwrap();
        assert_eq!(reg.h.shape(), (201, 2));
        assert!(build_als_regressor(&m, &ObserverGain(DMatrix::zeros(3, 1)), 5).is_err());
    }

    #[test]
    fn noiseless_inverse_recovers_scalars() {
        let m = build_abg_model(0.0177, 1.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let reg = build_als_regressor(&m, &l, 50).unwrap();
        let (q, r) = (scalar(0.25), scalar(1.7));
        let a_hat = reg.apply(&q, &r);
        let b = CovarianceBounds::default_for(1, 1, 100.0);
        let est = solve_covariances(&reg, &a_hat, &b).unwrap();
        assert!((est.q[(0, 0)] - 0.25).abs() <= 1e-6 * 0.25);
        assert!((est.r[(0, 0)] - 1.7).abs() <= 1e-6 * 1.7);
    }

    #[test]
    fn zero_data_gives_zero_covariances() {
        let m = build_abg_model(0.1, 1.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let reg = build_als_regressor(&m, &l, 20).unwrap();
        let b = CovarianceBounds::default_for(1, 1, 1.0);
        let est = solve_covariances(&reg, &DVector::zeros(21), &b).unwrap();
        assert!(est.q[(0, 0)].abs() < 1e-12 && est.r[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn negative_fit_is_projected_to_the_cone() {
        let m = build_abg_model(0.1, 1.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let reg = build_als_regressor(&m, &l, 20).unwrap();
        let a_hat = reg.apply(&scalar(-0.5), &scalar(1.0));
        let b = CovarianceBounds::default_for(1, 1, 10.0);
        let est = solve_covariances(&reg, &a_hat, &b).unwrap();
        assert!(est.q[(0, 0)] >= 0.0 && est.q[(0, 0)] < 0.05);
        assert!(est.r[(0, 0)] > 0.0);
        assert!(est.iterations > 0);
    }

    #[test]
    fn rank_one_two_by_two_stays_feasible() {
        // Random 2-state model, two disturbances, rank-one true Q.
        let mut rng = seeded_rng(11);
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.6]);
        let g = DMatrix::from_fn(2, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.3]);
        let (q11, q22) = (0.5_f64, 2.0_f64);
        let q = DMatrix::from_row_slice(2, 2, &[q11, (q11 * q22).sqrt(), (q11 * q22).sqrt(), q22]);
        let m = NoisyStateSpace::new(a, g, c, q.clone(), scalar(1.0), 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.2, 0.1])).unwrap();
        let reg = build_als_regressor(&m, &l, 30).unwrap();
        let mut a_hat = reg.apply(&q, &m.r);
        for (k, v) in a_hat.iter_mut().enumerate() {
            *v += 1e-3 * ((k * 7919) % 13) as f64 / 13.0;
        }
        let est = solve_covariances(&reg, &a_hat, &CovarianceBounds::default_for(2, 1, 10.0)).unwrap();
        let det = est.q[(0, 0)] * est.q[(1, 1)] - est.q[(0, 1)] * est.q[(1, 0)];
        assert!(det >= -1e-10);
        assert!(principal_minor_slack(&est.q) >= -1e-10);
    }

    #[test]
    fn inconsistent_bounds_rejected() {
        let m = build_abg_model(0.1, 1.0, 1.0).unwrap();
        let l = pole_place_observer(&m.a, &m.c, &poles(&[0.3, 0.4, 0.5])).unwrap();
        let reg = build_als_regressor(&m, &l, 5).unwrap();
        let b = CovarianceBounds { q_diag: vec![(2.0, 1.0)], q_offdiag: 0.0, r_diag: vec![(0.0, 1.0)] };
        assert!(matches!(
            solve_covariances(&reg, &DVector::zeros(6), &b),
            Err(Error::InfeasibleBounds(_))
        ));
    }

    #[test]
    fn minor_slack_of_known_matrices() {
        assert!(principal_minor_slack(&DMatrix::identity(3, 3)) >= 1.0 - 1e-15);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!((principal_minor_slack(&bad) + 3.0).abs() < 1e-15);
    }

    #[test]
    fn whiteness_calibration_over_seeds() {
        for seed in 0..20 {
            let x = white(50_000, &mut seeded_rng(100 + seed));
            let rep = whiteness_test(&x, 200, 0.95).unwrap();
            assert!((0.01..=0.10).contains(&rep.exceedance_fraction), "{}", rep.exceedance_fraction);
            assert!((rep.upper_bound - 1.959963984540054 / 50_000f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn ar1_fails_whiteness() {
        let w = white(50_000, &mut seeded_rng(3));
        let mut x = vec![0.0; w.len()];
        for k in 1..w.len() {
            x[k] = 0.95 * x[k - 1] + w[k];
        }
        let rep = whiteness_test(&x, 200, 0.95).unwrap();
        assert!(!rep.pass && rep.exceedance_fraction > 0.5);
    }

    #[test]
    fn zero_variance_rejected() {
        assert!(matches!(whiteness_test(&[0.0; 100], 10, 0.95), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn report_format_for_21_of_200() {
        let mut coefficients = vec![0.0_f64; 200];
        for c in coefficients.iter_mut().take(21) {
            *c = 1.0;
        }
        let exceed_count = coefficients.iter().filter(|c| c.abs() > 0.5).count();
        let frac = exceed_count as f64 / 200.0;
        assert_eq!(exceed_count, 21);
        assert!((frac - 0.105).abs() < 1e-15);
        assert!(frac > 0.05);
    }

    #[test]
    fn acf_csv_header() {
        let x = white(1000, &mut seeded_rng(1));
        let rep = whiteness_test(&x, 5, 0.95).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lag,value,lower_bound,upper_bound\n1,"));
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn optimal_gain_is_a_fixed_point_of_one_pass() {
        let m = build_abg_model(0.0177, 0.5, 1.0).unwrap();
        let p = solve_dare(&m.a, &m.c, &m.effective_process_covariance(), &m.r).unwrap();
        let l = kalman_gain(&p, &m.c, &m.r).unwrap();
        let reg = build_als_regressor(&m, &l, 200).unwrap();
        let theory = theoretical_autocorrelations(&m, &l, &m.q, &m.r, 200).unwrap();
        let a_hat = DVector::from_iterator(201, theory.iter().map(|t| t[(0, 0)]));
        let est = solve_covariances(&reg, &a_hat, &CovarianceBounds::default_for(1, 1, 10.0)).unwrap();
        let qeff = &m.g * &est.q * m.g.transpose();
        let p2 = solve_dare(&m.a, &m.c, &qeff, &est.r).unwrap();
        let l2 = kalman_gain(&p2, &m.c, &est.r).unwrap();
        assert!((&l2.0 - &l.0).norm() <= 1e-3 * l.0.norm());
    }

    #[test]
    fn one_data_pass_from_optimal_gain_stays_close() {
        let m = build_abg_model(0.0177, 0.5, 1.0).unwrap();
        let (_, y) = m.simulate(20_000, &mut seeded_rng(5));
        let p = solve_dare(&m.a, &m.c, &m.effective_process_covariance(), &m.r).unwrap();
        let l = kalman_gain(&p, &m.c, &m.r).unwrap();
        let opts = TuningOptions { iterations: 1, ..TuningOptions::default() };
        let res = tune_from_gain(&m, &y, l.clone(), &opts).unwrap();
        assert!((&res.gain.0 - &l.0).norm() <= 0.1 * l.0.norm());
    }

    #[test]
    fn measurement_only_data() {
        let m = build_abg_model(0.0177, 0.0, 1.0).unwrap();
        let (_, y) = m.simulate(20_000, &mut seeded_rng(6));
        let res = iterate_tuning(&m, &y, &poles(&[0.3, 0.4, 0.5]), &TuningOptions::default()).unwrap();
        let sw = res.estimate.q[(0, 0)].sqrt();
        let sv = res.estimate.r[(0, 0)].sqrt();
        assert!(sw <= 0.05 * sv, "{sw} {sv}");
    }

    #[test]
    fn recovers_noise_levels() {
        let m = build_abg_model(0.0177, 0.5, 1.0).unwrap();
        let (_, y) = m.simulate(20_000, &mut seeded_rng(7));
        let res = iterate_tuning(&m, &y, &poles(&[0.3, 0.4, 0.5]), &TuningOptions::default()).unwrap();
        let sw = res.estimate.q[(0, 0)].sqrt();
        let sv = res.estimate.r[(0, 0)].sqrt();
        assert!((sw - 0.5).abs() <= 0.1, "{sw}");
        assert!((sv - 1.0).abs() <= 0.2, "{sv}");
        assert_eq!(res.history.len(), 10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn regressor_matches_theory(seed in 0u64..10_000) {
            let mut rng = seeded_rng(seed);
            let n = rng.random_range(1..=4);
            let s = rng.random_range(1..=n.min(3));
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rho = spectral_radius(&a).unwrap();
            a *= 0.9 / rho.max(1e-9);
            let g = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
            let c = DMatrix::from_fn(1, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let fq = DMatrix::from_fn(s, s, |_, _| rng.sample::<f64, _>(StandardNormal));
            let q = &fq * fq.transpose();
            let r = scalar(rng.random_range(0.1..2.0));
            let m = NoisyStateSpace::new(a, g, c, q.clone(), r.clone(), 1.0).unwrap();
            let l = ObserverGain(DMatrix::from_fn(n, 1, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal)));
            prop_assume!(spectral_radius(&l.closed_loop(&m.a, &m.c)).unwrap() < 0.98);
            let reg = build_als_regressor(&m, &l, 15).unwrap();
            let theory = theoretical_autocorrelations(&m, &l, &q, &r, 15).unwrap();
            let stacked = DVector::from_iterator(16, theory.iter().map(|t| t[(0, 0)]));
            let fit = reg.apply(&q, &r);
            prop_assert!((fit - &stacked).norm() <= 1e-9 * (1.0 + stacked.norm()));
        }

        #[test]
        fn lyapunov_solution_symmetric_psd(seed in 0u64..10_000) {
            let mut rng = seeded_rng(seed);
            let n = rng.random_range(1..=4);
            let mut f = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let rho = spectral_radius(&f).unwrap();
            f *= 0.95 / rho.max(1e-9);
            let b = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let p = solve_discrete_lyapunov(&f, &(&b * b.transpose())).unwrap();
            prop_assert!((&p - p.transpose()).norm() <= 1e-10 * p.norm());
            prop_assert!(p.clone().symmetric_eigenvalues().min() >= -1e-10 * p.trace());
        }
    }
}
