//! Output-only subspace identification of innovation-form models
//!
//! ```text
//! x_{k+1} = Abar x_k + Ltilde y_k
//! y_k     = C x_k + e_k
//! ```
//!
//! Data matrices are `r x N` (one column per sample).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covtune::{whiteness_test, WhitenessReport};
use crate::error::{Error, Result};
use crate::lticore::{eigenvalues, fmt_f64, matrix_serde, pinv};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataMatrixSpec {
    pub i1: usize,
    pub i2: usize,
    pub l: usize,
}

/// Block-Hankel matrix whose column `j` stacks `y_{i1+j}, ..., y_{i2+j}`.
pub fn build_data_matrix(y: &DMatrix<f64>, spec: DataMatrixSpec) -> Result<DMatrix<f64>> {
    let DataMatrixSpec { i1, i2, l } = spec;
    if i2 < i1 {
        return Err(Error::InvalidArgument(format!("i2 = {i2} precedes i1 = {i1}")));
    }
    if i2 + l >= y.ncols() {
        return Err(Error::InsufficientData(format!(
            "window up to sample {} needs more than {} samples",
            i2 + l,
            y.ncols()
        )));
    }
    let r = y.nrows();
    let rows = i2 - i1 + 1;
    Ok(DMatrix::from_fn(r * rows, l + 1, |i, j| {
        y[(i % r, i1 + i / r + j)]
    }))
}

/// `Y_{p,p} pinv(Y_{0,p-1})` with `l = N - p - 1`; block `j` (from the
/// left) multiplies `y_{k-p+j}`.
pub fn estimate_markov(y: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    let n = y.ncols();
    if p == 0 {
        return Err(Error::InvalidArgument("past window must be at least 1".into()));
    }
    if n <= 2 * p + 1 {
        return Err(Error::InsufficientData(format!(
            "past window {p} needs more than {} samples, got {n}",
            2 * p + 1
        )));
    }
    let l = n - p - 1;
    let future = build_data_matrix(y, DataMatrixSpec { i1: p, i2: p, l })?;
    let past = build_data_matrix(y, DataMatrixSpec { i1: 0, i2: p - 1, l })?;
    Ok(future * pinv(&past))
}

/// One-step predictions `M_p [y_{k-p}; ...; y_{k-1}]` for `k = start..N`.
pub fn predict_with_markov(mp: &DMatrix<f64>, y: &DMatrix<f64>, start: usize) -> Result<DMatrix<f64>> {
    let r = y.nrows();
    let p = mp.ncols() / r.max(1);
    if mp.nrows() != r || mp.ncols() != p * r {
        return Err(Error::Dimension(format!(
            "Markov matrix {:?} does not fit {r} outputs",
            mp.shape()
        )));
    }
    if start < p || start > y.ncols() {
        return Err(Error::InsufficientData(format!(
            "prediction from sample {start} needs {p} preceding samples"
        )));
    }
    let count = y.ncols() - start;
    if count == 0 {
        return Ok(DMatrix::zeros(r, 0));
    }
    let past = build_data_matrix(y, DataMatrixSpec { i1: start - p, i2: start - 1, l: count - 1 })?;
    Ok(mp * past)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AicSweep {
    pub p_best: usize,
    /// `(p, AIC(p))`, ascending in `p`.
    pub curve: Vec<(usize, f64)>,
}

impl AicSweep {
    /// `p,aic`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv_writer(w);
        wr.write_record(["p", "aic"])?;
        for (p, a) in &self.curve {
            wr.write_record([p.to_string(), fmt_f64(*a)])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn covariance_logdet(e: &DMatrix<f64>) -> f64 {
    let n = e.ncols().max(1) as f64;
    let sigma = e * e.transpose() / n;
    let det = sigma.determinant();
    if det > 0.0 {
        det.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// `AIC(p) = N_val ln det(Sigma_e) + 2 p r^2`, with `Sigma_e` from
/// one-step Markov predictions of the validation samples. The validation
/// record is assumed to follow the identification record directly, so
/// its first predictions use the identification tail.
pub fn select_past_window(
    y_id: &DMatrix<f64>,
    y_val: &DMatrix<f64>,
    p_range: (usize, usize),
) -> Result<AicSweep> {
    let (lo, hi) = p_range;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidArgument(format!("empty past-window range {lo}..={hi}")));
    }
    if y_id.nrows() != y_val.nrows() {
        return Err(Error::Dimension("identification and validation channel counts differ".into()));
    }
    if y_val.ncols() == 0 {
        return Err(Error::InsufficientData("validation record is empty".into()));
    }
    let r = y_id.nrows();
    let joined = concat(y_id, y_val);
    let start = y_id.ncols();
    let nval = y_val.ncols() as f64;
    let curve: Vec<(usize, f64)> = (lo..=hi)
        .into_par_iter()
        .map(|p| -> Result<(usize, f64)> {
            let mp = estimate_markov(y_id, p)?;
            let pred = predict_with_markov(&mp, &joined, start)?;
            let e = y_val - pred;
            Ok((p, nval * covariance_logdet(&e) + 2.0 * (p * r * r) as f64))
        })
        .collect::<Result<_>>()?;
    let mut best = curve[0];
    for &(p, a) in &curve[1..] {
        if a < best.1 {
            best = (p, a);
        }
    }
    Ok(AicSweep { p_best: best.0, curve })
}

fn concat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Staircase of shifted Markov blocks: block row `i` is
/// `[0_{r x ir}, M_p(:, 0..(p-i) r)]`.
pub fn build_m_script(mp: &DMatrix<f64>, f: usize, r: usize) -> Result<DMatrix<f64>> {
    if r == 0 || mp.nrows() != r || mp.ncols() % r != 0 {
        return Err(Error::Dimension(format!("Markov matrix {:?} with r = {r}", mp.shape())));
    }
    let p = mp.ncols() / r;
    if f == 0 || f > p {
        return Err(Error::InvalidArgument(format!("future window {f} must lie in 1..={p}")));
    }
    let mut m = DMatrix::zeros(f * r, p * r);
    for i in 0..f {
        let width = (p - i) * r;
        m.view_mut((i * r, i * r), (r, width))
            .copy_from(&mp.columns(0, width));
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimate {
    /// `n x (l+1)`, column `j` is the state at sample `p + j`.
    pub states: DMatrix<f64>,
    /// All singular values of `M Y_{0,p-1}`, non-increasing.
    pub singular_values: Vec<f64>,
}

/// SVD of `D = M Y_past`; states are `Sigma_n^{1/2} V_n^T`.
pub fn estimate_states(
    m_script: &DMatrix<f64>,
    y_past: &DMatrix<f64>,
    n: usize,
) -> Result<StateEstimate> {
    if m_script.ncols() != y_past.nrows() {
        return Err(Error::Dimension(format!(
            "staircase {:?} cannot multiply past data {:?}",
            m_script.shape(),
            y_past.shape()
        )));
    }
    let d = m_script * y_past;
    let bound = d.nrows().min(d.ncols());
    if n == 0 || n > bound {
        return Err(Error::RankBound { requested: n, bound });
    }
    let (sv, vt) = sorted_svd(&d)?;
    let states = DMatrix::from_fn(n, d.ncols(), |i, j| sv[i].sqrt() * vt[(i, j)]);
    Ok(StateEstimate {
        states,
        singular_values: sv,
    })
}

/// Singular values (non-increasing) and the matching rows of `V^T`.
fn sorted_svd(d: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let svd = d.clone().svd(false, true);
    let vt = svd
        .v_t
        .ok_or_else(|| Error::Singular("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    // Deterministic sign: largest-magnitude entry of each row positive.
    let signs: Vec<f64> = order
        .iter()
        .map(|&i| {
            let pivot = vt.row(i).iter().copied().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if pivot < 0.0 { -1.0 } else { 1.0 }
        })
        .collect();
    let vt = DMatrix::from_fn(order.len(), vt.ncols(), |i, j| signs[i] * vt[(order[i], j)]);
    Ok((sv, vt))
}

/// Largest ratio gap `sigma_i / sigma_{i+1}` over the first `limit`
/// singular values; returns the order `i` (1-based).
pub fn select_order(singular_values: &[f64], limit: usize) -> Result<usize> {
    let k = singular_values.len().min(limit);
    if k < 2 {
        return Err(Error::InsufficientData("need at least two singular values".into()));
    }
    let mut best = (1, f64::NEG_INFINITY);
    for i in 0..k - 1 {
        let (a, b) = (singular_values[i], singular_values[i + 1]);
        let ratio = if b > 0.0 { a / b } else if a > 0.0 { f64::INFINITY } else { 1.0 };
        if ratio > best.1 {
            best = (i + 1, ratio);
        }
    }
    Ok(best.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemEstimate {
    pub abar: DMatrix<f64>,
    pub ltilde: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub a: DMatrix<f64>,
    /// `X_next - [Abar Ltilde] [X; Y]`, `n x l`.
    pub state_residuals: DMatrix<f64>,
    /// `Y - C X`, `r x (l+1)`.
    pub output_residuals: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Least-squares regression of the shifted states on current states and
/// outputs. `states` is `n x (l+1)` and `y_now` is `Y_{p,p}` (`r x (l+1)`).
pub fn estimate_system(states: &DMatrix<f64>, y_now: &DMatrix<f64>) -> Result<SystemEstimate> {
    let (n, cols) = states.shape();
    let r = y_now.nrows();
    if y_now.ncols() != cols {
        return Err(Error::Dimension(format!(
            "{cols} state columns but {} output columns",
            y_now.ncols()
        )));
    }
    if cols < 2 {
        return Err(Error::InsufficientData("need at least two state samples".into()));
    }
    let l = cols - 1;
    let mut x1 = DMatrix::zeros(n + r, l);
    x1.view_mut((0, 0), (n, l)).copy_from(&states.columns(0, l));
    x1.view_mut((n, 0), (r, l)).copy_from(&y_now.columns(0, l));
    let next = states.columns(1, l).into_owned();
    let mut warnings = Vec::new();
    let sv = x1.singular_values();
    let smax = sv.max();
    let tol = (n + r).max(l) as f64 * f64::EPSILON * smax;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < n + r {
        warnings.push(format!(
            "state/output regressor has rank {rank} < {}; least-squares solution is minimum-norm",
            n + r
        ));
    }
    let x2 = &next * pinv(&x1);
    let abar = x2.columns(0, n).into_owned();
    let ltilde = x2.columns(n, r).into_owned();
    let c = y_now * pinv(states);
    let a = &abar + &ltilde * &c;
    let state_residuals = next - &x2 * &x1;
    let output_residuals = y_now - &c * states;
    Ok(SystemEstimate {
        abar,
        ltilde,
        c,
        a,
        state_residuals,
        output_residuals,
        warnings,
    })
}

/// Single predictor steps from each supplied state:
/// `x_{k+1} - ((A - Ltilde C) x_k + Ltilde y_k)` and `y_k - C x_k`.
pub fn one_step_residuals(
    model: &IdentifiedModel,
    states: &DMatrix<f64>,
    y_now: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, cols) = states.shape();
    if n != model.n || y_now.ncols() != cols || y_now.nrows() != model.c.nrows() || cols < 2 {
        return Err(Error::Dimension("states/outputs do not match the model".into()));
    }
    let abar = &model.a - &model.ltilde * &model.c;
    let mut sres = DMatrix::zeros(n, cols - 1);
    for k in 0..cols - 1 {
        let pred = &abar * states.column(k) + &model.ltilde * y_now.column(k);
        sres.set_column(k, &(states.column(k + 1) - pred));
    }
    let ores = y_now - &model.c * states;
    Ok((sres, ores))
}

/// Variance accounted for, in percent, clipped below at 0.
pub fn vaf(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::Dimension(format!(
            "{} true vs {} predicted samples",
            y_true.len(),
            y_pred.len()
        )));
    }
    let var = |v: &mut dyn Iterator<Item = f64>| {
        let xs: Vec<f64> = v.collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
    };
    let vt = var(&mut y_true.iter().copied());
    if !(vt > 0.0) {
        return Err(Error::ZeroVariance("reference signal has zero variance".into()));
    }
    let ve = var(&mut y_true.iter().zip(y_pred).map(|(a, b)| a - b));
    Ok((1.0 - ve / vt).max(0.0) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "n")]
pub enum OrderSelection {
    Manual(usize),
    Gap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubidConfig {
    /// Fixed past window; `None` selects it by AIC over `p_range`.
    pub p: Option<usize>,
    pub p_range: (usize, usize),
    /// Future window; `None` uses `p`.
    pub f: Option<usize>,
    pub order: OrderSelection,
    /// Singular values considered by the gap heuristic.
    pub gap_limit: usize,
    /// Lags in the validation whiteness test (capped by the record).
    pub whiteness_lags: usize,
}

impl Default for SubidConfig {
    fn default() -> Self {
        SubidConfig {
            p: None,
            p_range: (1, 40),
            f: None,
            order: OrderSelection::Gap,
            gap_limit: 60,
            whiteness_lags: 100,
        }
    }
}

impl SubidConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self.p {
            if p == 0 {
                return Err(Error::InvalidArgument("p must be at least 1".into()));
            }
            if let Some(f) = self.f {
                if f == 0 || f > p {
                    return Err(Error::InvalidArgument(format!("f = {f} must lie in 1..={p}")));
                }
            }
        }
        if self.p_range.0 == 0 || self.p_range.1 < self.p_range.0 {
            return Err(Error::InvalidArgument(format!("bad p range {:?}", self.p_range)));
        }
        if let OrderSelection::Manual(0) = self.order {
            return Err(Error::InvalidArgument("state order must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub n_id: usize,
    pub n_val: usize,
}

impl Default for Split {
    fn default() -> Self {
        Split { n_id: 2000, n_val: 200 }
    }
}

/// Identified predictor. Outputs are modelled after subtracting `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    #[serde(rename = "Abar", with = "matrix_serde")]
    pub abar: DMatrix<f64>,
    #[serde(rename = "A", with = "matrix_serde")]
    pub a: DMatrix<f64>,
    #[serde(rename = "Ltilde", with = "matrix_serde")]
    pub ltilde: DMatrix<f64>,
    #[serde(rename = "C", with = "matrix_serde")]
    pub c: DMatrix<f64>,
    pub n: usize,
    pub p: usize,
    pub f: usize,
    pub h: f64,
    pub offset: Vec<f64>,
}

impl IdentifiedModel {
    pub fn from_matrices(
        abar: DMatrix<f64>,
        ltilde: DMatrix<f64>,
        c: DMatrix<f64>,
        p: usize,
        f: usize,
        h: f64,
    ) -> Result<Self> {
        let n = abar.nrows();
        let r = c.nrows();
        if !abar.is_square() || ltilde.shape() != (n, r) || c.ncols() != n {
            return Err(Error::Dimension("Abar, Ltilde, C are inconsistent".into()));
        }
        let a = &abar + &ltilde * &c;
        Ok(IdentifiedModel {
            abar,
            a,
            ltilde,
            c,
            n,
            p,
            f,
            h,
            offset: vec![0.0; r],
        })
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn open_loop_eigenvalues(&self) -> Result<Vec<Complex64>> {
        eigenvalues(&self.a)
    }

    pub fn closed_loop_eigenvalues(&self) -> Result<Vec<Complex64>> {
        eigenvalues(&self.abar)
    }

    /// One-step predictions `C x_k` of an `r x N` record (offset applied),
    /// starting from `x_0 = 0`.
    pub fn predict(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if y.nrows() != self.outputs() {
            return Err(Error::Dimension(format!(
                "model has {} outputs, data has {}",
                self.outputs(),
                y.nrows()
            )));
        }
        let mut x = nalgebra::DVector::zeros(self.n);
        let off = nalgebra::DVector::from_column_slice(&self.offset);
        let mut out = DMatrix::zeros(y.nrows(), y.ncols());
        for k in 0..y.ncols() {
            let yk = y.column(k) - &off;
            out.set_column(k, &(&self.c * &x + &off));
            x = &self.abar * x + &self.ltilde * yk;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub aic: Option<AicSweep>,
    pub singular_values: Vec<f64>,
    /// Per-channel VAF on the validation record, percent.
    pub vaf: Vec<f64>,
    /// Per-channel whiteness of validation residuals.
    pub whiteness: Vec<WhitenessReport>,
    pub open_loop: Vec<Complex64>,
    pub closed_loop: Vec<Complex64>,
    pub validation_prediction: DMatrix<f64>,
    pub validation_residuals: DMatrix<f64>,
    /// States, outputs and Step-3 residuals on the identification record.
    pub system: SystemEstimate,
    pub states: DMatrix<f64>,
    pub y_now: DMatrix<f64>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    /// `index,singular_value` (1-based index).
    pub fn write_singular_values_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv_writer(w);
        wr.write_record(["index", "singular_value"])?;
        for (i, s) in self.singular_values.iter().enumerate() {
            wr.write_record([(i + 1).to_string(), fmt_f64(*s)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// `lag,residual_autocorr` for the first channel, lag 0 included.
    pub fn write_residual_acf_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv_writer(w);
        wr.write_record(["lag", "residual_autocorr"])?;
        if let Some(rep) = self.whiteness.first() {
            wr.write_record(["0".to_string(), fmt_f64(1.0)])?;
            for (j, v) in rep.coefficients.iter().enumerate() {
                wr.write_record([(j + 1).to_string(), fmt_f64(*v)])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// `re,im,loop` with `loop` either `open` or `closed`.
    pub fn write_eigenvalues_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv_writer(w);
        wr.write_record(["re", "im", "loop"])?;
        for (tag, set) in [("open", &self.open_loop), ("closed", &self.closed_loop)] {
            for z in set {
                wr.write_record([fmt_f64(z.re), fmt_f64(z.im), tag.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub model: IdentifiedModel,
    pub diagnostics: Diagnostics,
}

/// Full pipeline on an `r x N` record: the first `n_id` samples identify,
/// the next `n_val` validate.
pub fn identify(y: &DMatrix<f64>, h: f64, config: &SubidConfig, split: Split) -> Result<Identification> {
    config.validate()?;
    if split.n_id + split.n_val > y.ncols() {
        return Err(Error::InsufficientData(format!(
            "split {} + {} exceeds {} samples",
            split.n_id,
            split.n_val,
            y.ncols()
        )));
    }
    if split.n_val < 2 {
        return Err(Error::InsufficientData("validation record needs at least 2 samples".into()));
    }
    let r = y.nrows();
    let raw_id = y.columns(0, split.n_id).into_owned();
    let offset: Vec<f64> = (0..r).map(|i| raw_id.row(i).mean()).collect();
    let centered = DMatrix::from_fn(r, split.n_id + split.n_val, |i, k| y[(i, k)] - offset[i]);
    let y_id = centered.columns(0, split.n_id).into_owned();
    let y_val = centered.columns(split.n_id, split.n_val).into_owned();

    let (p, aic) = match config.p {
        Some(p) => (p, None),
        None => {
            let hi = config.p_range.1.min((split.n_id.saturating_sub(2)) / 2);
            let sweep = select_past_window(&y_id, &y_val, (config.p_range.0, hi.max(config.p_range.0)))?;
            (sweep.p_best, Some(sweep))
        }
    };
    let f = config.f.unwrap_or(p).min(p);
    let mp = estimate_markov(&y_id, p)?;
    let ms = build_m_script(&mp, f, r)?;
    let l = split.n_id - p - 1;
    let y_past = build_data_matrix(&y_id, DataMatrixSpec { i1: 0, i2: p - 1, l })?;
    let y_now = build_data_matrix(&y_id, DataMatrixSpec { i1: p, i2: p, l })?;
    let n = match config.order {
        OrderSelection::Manual(n) => n,
        OrderSelection::Gap => {
            let d = &ms * &y_past;
            let sv = sorted_svd(&d)?.0;
            select_order(&sv, config.gap_limit.min(p * r))?
        }
    };
    let se = estimate_states(&ms, &y_past, n)?;
    let system = estimate_system(&se.states, &y_now)?;
    let mut model = IdentifiedModel::from_matrices(
        system.abar.clone(),
        system.ltilde.clone(),
        system.c.clone(),
        p,
        f,
        h,
    )?;
    model.offset = offset;

    let prediction = model.predict(&y.columns(0, split.n_id + split.n_val).into_owned())?;
    let val_true = y.columns(split.n_id, split.n_val).into_owned();
    let val_pred = prediction.columns(split.n_id, split.n_val).into_owned();
    let residuals = &val_true - &val_pred;
    let mut vafs = Vec::with_capacity(r);
    let mut whiteness = Vec::with_capacity(r);
    let lags = config.whiteness_lags.min(split.n_val - 1);
    for i in 0..r {
        let t: Vec<f64> = val_true.row(i).iter().copied().collect();
        let pr: Vec<f64> = val_pred.row(i).iter().copied().collect();
        vafs.push(vaf(&t, &pr)?);
        let e: Vec<f64> = residuals.row(i).iter().copied().collect();
        whiteness.push(whiteness_test(&e, lags, 0.95)?);
    }
    let warnings = system.warnings.clone();
    let diagnostics = Diagnostics {
        aic,
        singular_values: se.singular_values,
        vaf: vafs,
        whiteness,
        open_loop: model.open_loop_eigenvalues()?,
        closed_loop: model.closed_loop_eigenvalues()?,
        validation_prediction: val_pred,
        validation_residuals: residuals,
        system,
        states: se.states,
        y_now,
        warnings,
    };
    Ok(Identification { model, diagnostics })
}

/// Largest distance from a point of either set to the nearest point of the
/// other (Hausdorff distance).
pub fn eigenvalue_set_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    let directed = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Simulates `x_{k+1} = A x_k + Ltilde e_k`, `y_k = C x_k + e_k` with unit
/// white innovations scaled by `innovation_std`.
pub fn simulate_innovation_model(
    a: &DMatrix<f64>,
    ltilde: &DMatrix<f64>,
    c: &DMatrix<f64>,
    innovation_std: f64,
    samples: usize,
    burn_in: usize,
    rng: &mut crate::lticore::Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    use rand::Rng as _;
    let (n, r) = (a.nrows(), c.nrows());
    let mut x = nalgebra::DVector::zeros(n);
    let mut ys = DMatrix::zeros(r, samples);
    let mut es = DMatrix::zeros(r, samples);
    for k in 0..samples + burn_in {
        let e = nalgebra::DVector::from_fn(r, |_, _| {
            innovation_std * rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let y = c * &x + &e;
        if k >= burn_in {
            ys.set_column(k - burn_in, &y);
            es.set_column(k - burn_in, &e);
        }
        x = a * x + ltilde * e;
    }
    (ys, es)
}
