//! Python bindings for the spot jitter pipeline.
//!
//! Matrices cross the boundary as lists of rows, multichannel records as
//! one list per channel.

use nalgebra::DMatrix;
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use spotkal::bench::{self, BenchConfig, SpotImage};
use spotkal::covtune::{self, TuningOptions, WhitenessReport};
use spotkal::kalman;
use spotkal::lticore::{discretize_zoh, TimeSeries};
use spotkal::specfact::{self, JitterModel};
use spotkal::subid::{self, OrderSelection, Split, SubidConfig};

fn py_err(e: spotkal::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn whiteness_dict<'py>(py: Python<'py>, w: &WhitenessReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("coefficients", &w.coefficients)?;
    d.set_item("lower_bound", w.lower_bound)?;
    d.set_item("upper_bound", w.upper_bound)?;
    d.set_item("exceed_count", w.exceed_count)?;
    d.set_item("total", w.total)?;
    d.set_item("exceedance_fraction", w.exceedance_fraction)?;
    d.set_item("pass", w.pass)?;
    Ok(d)
}

/// Minimum-phase shaping filter `H` with white-noise variance `sv`.
#[pyclass(name = "SpectralFactor", module = "spotkal_py", skip_from_py_object)]
#[derive(Clone)]
struct PySpectralFactor {
    inner: specfact::SpectralFactor,
    boundary_roots: Vec<Complex64>,
}

#[pymethods]
impl PySpectralFactor {
    #[getter]
    fn num(&self) -> Vec<f64> {
        self.inner.filter.num().to_vec()
    }

    #[getter]
    fn den(&self) -> Vec<f64> {
        self.inner.filter.den().to_vec()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.filter.h()
    }

    #[getter]
    fn sv(&self) -> f64 {
        self.inner.sv
    }

    #[getter]
    fn boundary_roots(&self) -> Vec<Complex64> {
        self.boundary_roots.clone()
    }

    fn spectrum_at(&self, omega: f64) -> f64 {
        self.inner.spectrum_at(omega)
    }

    fn one_sided_psd(&self, f_hz: f64) -> f64 {
        self.inner.one_sided_psd(f_hz)
    }

    #[pyo3(signature = (n, seed, target_rms=None))]
    fn synthesize(&self, n: usize, seed: u64, target_rms: Option<f64>) -> PyResult<Vec<f64>> {
        let ts = specfact::synthesize_disturbance(&self.inner, n, seed, target_rms).map_err(py_err)?;
        Ok(ts.channels()[0].values.clone())
    }

    fn __repr__(&self) -> String {
        format!("SpectralFactor(order={}, h={}, sv={:e})", self.inner.filter.order(), self.h(), self.inner.sv)
    }
}

/// Discretizes the two-resonance jitter model and factors its spectrum.
#[pyfunction]
#[pyo3(signature = (h=0.025, f1_hz=2.0, zeta1=0.05, f2_hz=10.0, zeta2=0.05, gain=10.0))]
fn factorize_jitter(h: f64, f1_hz: f64, zeta1: f64, f2_hz: f64, zeta2: f64, gain: f64) -> PyResult<PySpectralFactor> {
    let model = JitterModel { f1_hz, zeta1, f2_hz, zeta2, gain };
    let dtf = discretize_zoh(&model.transfer_function().map_err(py_err)?, h).map_err(py_err)?;
    let fact = specfact::spectral_factorize(&specfact::spectrum_from_filter(&dtf)).map_err(py_err)?;
    Ok(PySpectralFactor { inner: fact.factor, boundary_roots: fact.boundary_roots })
}

/// Welch density estimate; returns `(freqs_hz, values)`.
#[pyfunction]
#[pyo3(signature = (x, h, segment_len=1024, overlap=0.5))]
fn estimate_psd(x: Vec<f64>, h: f64, segment_len: usize, overlap: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p = specfact::estimate_psd(&x, h, segment_len, overlap).map_err(py_err)?;
    Ok((p.freqs, p.values))
}

#[pyfunction]
fn solve_dare(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>, q: Vec<Vec<f64>>, r: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let p = kalman::solve_dare(&to_matrix(&a)?, &to_matrix(&c)?, &to_matrix(&q)?, &to_matrix(&r)?).map_err(py_err)?;
    Ok(to_rows(&p))
}

#[pyfunction]
fn kalman_gain(p: Vec<Vec<f64>>, c: Vec<Vec<f64>>, r: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let l = kalman::kalman_gain(&to_matrix(&p)?, &to_matrix(&c)?, &to_matrix(&r)?).map_err(py_err)?;
    Ok(to_rows(l.matrix()))
}

/// Observer gain `L` placing the eigenvalues of `A - A L C`.
#[pyfunction]
fn pole_place_observer(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>, poles: Vec<Complex64>) -> PyResult<Vec<Vec<f64>>> {
    let l = kalman::pole_place_observer(&to_matrix(&a)?, &to_matrix(&c)?, &poles).map_err(py_err)?;
    Ok(to_rows(l.matrix()))
}

/// Constant-jerk tracking model as a dict of `A`, `G`, `C`, `Q`, `R`.
#[pyfunction]
fn abg_model<'py>(py: Python<'py>, h: f64, sigma_w: f64, sigma_v: f64) -> PyResult<Bound<'py, PyDict>> {
    let m = kalman::build_abg_model(h, sigma_w, sigma_v).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("A", to_rows(&m.a))?;
    d.set_item("G", to_rows(&m.g))?;
    d.set_item("C", to_rows(&m.c))?;
    d.set_item("Q", to_rows(&m.q))?;
    d.set_item("R", to_rows(&m.r))?;
    d.set_item("h", m.h)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (e, max_lag, confidence=0.95))]
fn whiteness_test<'py>(py: Python<'py>, e: Vec<f64>, max_lag: usize, confidence: f64) -> PyResult<Bound<'py, PyDict>> {
    let w = covtune::whiteness_test(&e, max_lag, confidence).map_err(py_err)?;
    whiteness_dict(py, &w)
}

/// Tunes `Q`, `R` of the tracking model on a single-axis track.
#[pyfunction]
#[pyo3(signature = (y, h, initial_poles=vec![0.3, 0.4, 0.5], max_lag=200, iterations=10, skip=50))]
fn tune_tracking<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    h: f64,
    initial_poles: Vec<f64>,
    max_lag: usize,
    iterations: usize,
    skip: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let model = kalman::build_abg_model(h, 1.0, 1.0).map_err(py_err)?;
    let poles: Vec<Complex64> = initial_poles.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    let opts = TuningOptions { max_lag, iterations, skip, ..TuningOptions::default() };
    let y = DMatrix::from_row_slice(1, y.len(), &y);
    let res = covtune::iterate_tuning(&model, &y, &poles, &opts).map_err(py_err)?;
    let (q, r) = (&res.estimate.q, &res.estimate.r);
    let d = PyDict::new(py);
    d.set_item("Q", to_rows(q))?;
    d.set_item("R", to_rows(r))?;
    d.set_item("sigma_w", q[(0, 0)].max(0.0).sqrt())?;
    d.set_item("sigma_v", r[(0, 0)].max(0.0).sqrt())?;
    d.set_item("gain", to_rows(res.gain.matrix()))?;
    d.set_item("residual", res.estimate.residual)?;
    d.set_item("iterations", res.history.len())?;
    d.set_item("whiteness", whiteness_dict(py, &res.final_whiteness)?)?;
    Ok(d)
}

/// Innovation-form predictor
/// `x+ = Abar x + Ltilde y`, `yhat = C x`, around `offset`.
#[pyclass(name = "IdentifiedModel", module = "spotkal_py", skip_from_py_object)]
#[derive(Clone)]
struct PyIdentifiedModel {
    inner: subid::IdentifiedModel,
}

#[pymethods]
impl PyIdentifiedModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyIdentifiedModel { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn abar(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.abar)
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.a)
    }

    #[getter]
    fn ltilde(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.ltilde)
    }

    #[getter]
    fn c(&self) -> Vec<Vec<f64>> {
        to_rows(&self.inner.c)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p
    }

    #[getter]
    fn f(&self) -> usize {
        self.inner.f
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    #[getter]
    fn offset(&self) -> Vec<f64> {
        self.inner.offset.clone()
    }

    fn open_loop_eigenvalues(&self) -> PyResult<Vec<Complex64>> {
        self.inner.open_loop_eigenvalues().map_err(py_err)
    }

    fn closed_loop_eigenvalues(&self) -> PyResult<Vec<Complex64>> {
        self.inner.closed_loop_eigenvalues().map_err(py_err)
    }

    /// One-step predictions for a record given as one list per channel.
    fn predict(&self, y: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let p = self.inner.predict(&to_matrix(&y)?).map_err(py_err)?;
        Ok(to_rows(&p))
    }

    fn __repr__(&self) -> String {
        format!(
            "IdentifiedModel(n={}, p={}, f={}, outputs={})",
            self.inner.n,
            self.inner.p,
            self.inner.f,
            self.inner.outputs()
        )
    }
}

/// Output-only identification; `order=None` uses the singular value gap
/// and `p=None` selects the past window by AIC.
#[pyfunction]
#[pyo3(signature = (y, h, p=None, f=None, order=None, n_id=2000, n_val=200))]
#[allow(clippy::too_many_arguments)]
fn identify<'py>(
    py: Python<'py>,
    y: Vec<Vec<f64>>,
    h: f64,
    p: Option<usize>,
    f: Option<usize>,
    order: Option<usize>,
    n_id: usize,
    n_val: usize,
) -> PyResult<(PyIdentifiedModel, Bound<'py, PyDict>)> {
    let config = SubidConfig {
        p,
        f,
        order: order.map_or(OrderSelection::Gap, OrderSelection::Manual),
        ..SubidConfig::default()
    };
    let id = subid::identify(&to_matrix(&y)?, h, &config, Split { n_id, n_val }).map_err(py_err)?;
    let dg = &id.diagnostics;
    let d = PyDict::new(py);
    d.set_item("vaf", &dg.vaf)?;
    d.set_item("singular_values", &dg.singular_values)?;
    d.set_item("aic_p", dg.aic.as_ref().map(|a| a.p_best))?;
    d.set_item("open_loop", &dg.open_loop)?;
    d.set_item("closed_loop", &dg.closed_loop)?;
    let white = dg.whiteness.iter().map(|w| whiteness_dict(py, w)).collect::<PyResult<Vec<_>>>()?;
    d.set_item("whiteness", white)?;
    d.set_item("warnings", &dg.warnings)?;
    Ok((PyIdentifiedModel { inner: id.model }, d))
}

#[pyfunction]
fn vaf(y_true: Vec<f64>, y_pred: Vec<f64>) -> PyResult<f64> {
    subid::vaf(&y_true, &y_pred).map_err(py_err)
}

fn image_from_rows(rows: &[Vec<f64>]) -> PyResult<SpotImage> {
    let m = to_matrix(rows)?;
    let (height, width) = m.shape();
    let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    Ok(SpotImage { width, height, data })
}

fn image_rows(img: &SpotImage) -> Vec<Vec<f64>> {
    img.data.chunks(img.width).map(<[f64]>::to_vec).collect()
}

fn bench_config(width: usize, height: usize, spot_sigma: f64, peak: f64, pixel_noise: f64, h: f64, seed: u64) -> PyResult<BenchConfig> {
    let cfg = BenchConfig { width, height, spot_sigma, peak, pixel_noise, h, seed, ..BenchConfig::default() };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Noise-free spot image as a list of rows, centered at `(x, y)` pixels.
#[pyfunction]
#[pyo3(signature = (x, y, width=128, height=128, spot_sigma=2.0, peak=255.0))]
fn render_spot(x: f64, y: f64, width: usize, height: usize, spot_sigma: f64, peak: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = bench_config(width, height, spot_sigma, peak, 0.0, 0.0177, 0)?;
    Ok(image_rows(&bench::render_spot(&cfg, (x, y)).map_err(py_err)?))
}

/// Thresholded, background-subtracted centroid `(x, y)` of an image
/// given as a list of rows.
#[pyfunction]
#[pyo3(signature = (image, threshold=0.1))]
fn centroid(image: Vec<Vec<f64>>, threshold: f64) -> PyResult<(f64, f64)> {
    bench::centroid(&image_from_rows(&image)?, threshold).map_err(py_err)
}

/// Renders camera frames for disturbance records sampled at `h_in` and
/// returns the centroid track `(x, y)` in pixels.
#[pyfunction]
#[pyo3(signature = (dx, dy, h_in, seed, h=0.0177, pixel_scale=5.0, pixel_noise=2.0, width=128, height=128, spot_sigma=2.0, peak=255.0, threshold=0.1))]
#[allow(clippy::too_many_arguments)]
fn simulate_bench(
    dx: Vec<f64>,
    dy: Vec<f64>,
    h_in: f64,
    seed: u64,
    h: f64,
    pixel_scale: f64,
    pixel_noise: f64,
    width: usize,
    height: usize,
    spot_sigma: f64,
    peak: f64,
    threshold: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let mut cfg = bench_config(width, height, spot_sigma, peak, pixel_noise, h, seed)?;
    cfg.pixel_scale = pixel_scale;
    cfg.threshold = threshold;
    cfg.validate().map_err(py_err)?;
    let sx = TimeSeries::single("x", h_in, dx).map_err(py_err)?;
    let sy = TimeSeries::single("y", h_in, dy).map_err(py_err)?;
    let track = bench::simulate_bench(&cfg, &sx, &sy, None).map_err(py_err)?;
    let x = track.channel("x").map_err(py_err)?.to_vec();
    let y = track.channel("y").map_err(py_err)?.to_vec();
    Ok((x, y))
}

#[pymodule]
fn spotkal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectralFactor>()?;
    m.add_class::<PyIdentifiedModel>()?;
    m.add_function(wrap_pyfunction!(factorize_jitter, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_psd, m)?)?;
    m.add_function(wrap_pyfunction!(solve_dare, m)?)?;
    m.add_function(wrap_pyfunction!(kalman_gain, m)?)?;
    m.add_function(wrap_pyfunction!(pole_place_observer, m)?)?;
    m.add_function(wrap_pyfunction!(abg_model, m)?)?;
    m.add_function(wrap_pyfunction!(whiteness_test, m)?)?;
    m.add_function(wrap_pyfunction!(tune_tracking, m)?)?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(vaf, m)?)?;
    m.add_function(wrap_pyfunction!(render_spot, m)?)?;
    m.add_function(wrap_pyfunction!(centroid, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_bench, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
