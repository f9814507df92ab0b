//! Spectral densities, minimum-phase spectral factors and disturbance
//! synthesis.
//!
//! A rational spectrum is carried by a base filter `W_d` with
//! `S(z) = W_d(z) W_d(1/z)`. Factoring it reflects every root of `W_d`
//! lying outside the unit circle to `1/conj(root)`; the magnitude lost by
//! each reflection is moved into the white-noise variance `S_v`, and the
//! numerator is padded with roots at the origin (unit modulus on the
//! circle) so that `H` is biproper with a unit leading coefficient.

use num_complex::Complex64;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lticore::{
    cascade, filter_raw, filter_series, poly_from_roots, seeded_rng, ContinuousTf, DiscreteTf,
    TimeSeries,
};

/// Unit-circle grid size used for spectrum checks.
pub const GRID_POINTS: usize = 512;

/// Roots this close to the unit circle are left in place.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// Parameters of the two-resonance jitter model
/// `W = W_1 W_2`, `W_i = (g s + w_i^2) / (s^2 + 2 z_i w_i s + w_i^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterModel {
    pub f1_hz: f64,
    pub zeta1: f64,
    pub f2_hz: f64,
    pub zeta2: f64,
    pub gain: f64,
}

impl Default for JitterModel {
    fn default() -> Self {
        JitterModel {
            f1_hz: 2.0,
            zeta1: 0.05,
            f2_hz: 10.0,
            zeta2: 0.05,
            gain: 10.0,
        }
    }
}

impl JitterModel {
    pub fn resonator(&self, f_hz: f64, zeta: f64) -> Result<ContinuousTf> {
        let w = 2.0 * std::f64::consts::PI * f_hz;
        ContinuousTf::new(vec![self.gain, w * w], vec![1.0, 2.0 * zeta * w, w * w])
    }

    pub fn transfer_function(&self) -> Result<ContinuousTf> {
        if !(self.f1_hz > 0.0 && self.f2_hz > 0.0) {
            return Err(Error::InvalidArgument(
                "resonance frequencies must be positive".into(),
            ));
        }
        Ok(cascade(
            &self.resonator(self.f1_hz, self.zeta1)?,
            &self.resonator(self.f2_hz, self.zeta2)?,
        ))
    }
}

/// `S(z) = W_d(z) W_d(1/z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalSpectrum {
    base: DiscreteTf,
}

impl RationalSpectrum {
    pub fn base(&self) -> &DiscreteTf {
        &self.base
    }

    pub fn h(&self) -> f64 {
        self.base.h()
    }

    /// Spectrum at `z = e^{i omega}`.
    pub fn eval(&self, omega: f64) -> f64 {
        let z = Complex64::from_polar(1.0, omega);
        let zi = Complex64::from_polar(1.0, -omega);
        (self.base.eval(z) * self.base.eval(zi)).re
    }

    /// Values on `n` equally spaced frequencies in `[0, pi]`.
    pub fn on_grid(&self, n: usize) -> Vec<f64> {
        grid(n).map(|w| self.eval(w)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let values = self.on_grid(GRID_POINTS);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= -1e-9) {
            return Err(Error::NegativeSpectrum { min });
        }
        Ok(())
    }
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    let step = std::f64::consts::PI / (n.max(2) - 1) as f64;
    (0..n).map(move |k| k as f64 * step)
}

pub fn spectrum_from_filter(base: &DiscreteTf) -> RationalSpectrum {
    RationalSpectrum { base: base.clone() }
}

/// Minimum-phase shaping filter `H` and white-noise variance `S_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFactor {
    #[serde(rename = "H")]
    pub filter: DiscreteTf,
    #[serde(rename = "Sv")]
    pub sv: f64,
}

impl SpectralFactor {
    /// `|H(e^{i omega})|^2 S_v`.
    pub fn spectrum_at(&self, omega: f64) -> f64 {
        self.filter.freq_response(omega).norm_sqr() * self.sv
    }

    /// Analytic one-sided density per Hz at `f_hz`, scaled like
    /// [`estimate_psd`].
    pub fn one_sided_psd(&self, f_hz: f64) -> f64 {
        let h = self.filter.h();
        2.0 * h * self.spectrum_at(2.0 * std::f64::consts::PI * f_hz * h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub factor: SpectralFactor,
    /// Roots within [`BOUNDARY_TOL`] of the unit circle, kept unreflected.
    pub boundary_roots: Vec<Complex64>,
}

fn reflect(roots: &[Complex64], boundary: &mut Vec<Complex64>) -> (Vec<Complex64>, f64) {
    let mut gain = 1.0;
    let out = roots
        .iter()
        .map(|&r| {
            let m = r.norm();
            if (m - 1.0).abs() <= BOUNDARY_TOL {
                boundary.push(r);
                r
            } else if m > 1.0 {
                gain *= m * m;
                1.0 / r.conj()
            } else {
                r
            }
        })
        .collect();
    (out, gain)
}

/// Factors `S` into `H S_v H(1/z)` with `H` minimum phase and monic.
pub fn spectral_factorize(s: &RationalSpectrum) -> Result<Factorization> {
    s.validate()?;
    let base = s.base();
    let h = base.h();
    let num_lead = base.num()[0];
    let den_lead = base.den()[0];
    if num_lead == 0.0 {
        return Ok(Factorization {
            factor: SpectralFactor {
                filter: DiscreteTf::unity(h)?,
                sv: 0.0,
            },
            boundary_roots: Vec::new(),
        });
    }
    let mut boundary = Vec::new();
    let (zeros, zero_gain) = reflect(&base.zeros()?, &mut boundary);
    let (poles, pole_gain) = reflect(&base.poles()?, &mut boundary);
    let mut num = poly_from_roots(&zeros);
    num.resize(poles.len() + 1, 0.0);
    let den = poly_from_roots(&poles);
    let lead = num_lead / den_lead;
    let sv = lead * lead * zero_gain / pole_gain;
    Ok(Factorization {
        factor: SpectralFactor {
            filter: DiscreteTf::new(num, den, h)?,
            sv,
        },
        boundary_roots: boundary,
    })
}

/// Largest relative deviation `max |(|H|^2 S_v - S)| / max S` over the grid.
pub fn factorization_error(s: &RationalSpectrum, f: &SpectralFactor, n: usize) -> f64 {
    let target: Vec<f64> = s.on_grid(n);
    let peak = target.iter().copied().fold(0.0, f64::max);
    let worst = grid(n)
        .zip(&target)
        .map(|(w, t)| (f.spectrum_at(w) - t).abs())
        .fold(0.0, f64::max);
    if peak == 0.0 {
        worst
    } else {
        worst / peak
    }
}

/// Welch estimate, one-sided, density-scaled (power per Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub values: Vec<f64>,
    pub segment_len: usize,
    pub overlap: f64,
    pub window: String,
}

impl PsdEstimate {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        wr.write_record(["freq_hz", "psd"])?;
        for (f, p) in self.freqs.iter().zip(&self.values) {
            wr.write_record([crate::lticore::fmt_f64(*f), crate::lticore::fmt_f64(*p)])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Integral of the density over frequency.
    pub fn total_power(&self) -> f64 {
        if self.freqs.len() < 2 {
            return 0.0;
        }
        let df = self.freqs[1] - self.freqs[0];
        self.values.iter().sum::<f64>() * df
    }

    /// Frequencies of the `count` most prominent local maxima, most
    /// prominent first.
    pub fn prominent_peaks(&self, count: usize) -> Vec<f64> {
        let v = &self.values;
        let n = v.len();
        let mut peaks: Vec<(f64, usize)> = Vec::new();
        for i in 1..n.saturating_sub(1) {
            if v[i] > v[i - 1] && v[i] >= v[i + 1] {
                let left_min = v[..i]
                    .iter()
                    .rev()
                    .take_while(|&&x| x <= v[i])
                    .copied()
                    .fold(v[i], f64::min);
                let right_min = v[i + 1..]
                    .iter()
                    .take_while(|&&x| x <= v[i])
                    .copied()
                    .fold(v[i], f64::min);
                let base = left_min.max(right_min);
                peaks.push(((v[i] / base.max(f64::MIN_POSITIVE)).ln(), i));
            }
        }
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0));
        peaks.into_iter().take(count).map(|(_, i)| self.freqs[i]).collect()
    }
}

pub const DEFAULT_SEGMENT: usize = 1024;
pub const DEFAULT_OVERLAP: f64 = 0.5;

/// Welch averaged periodogram with a periodic Hann window and per-segment
/// mean removal.
pub fn estimate_psd(x: &[f64], h: f64, segment_len: usize, overlap: f64) -> Result<PsdEstimate> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap fraction must lie in [0, 1), got {overlap}"
        )));
    }
    if segment_len < 2 {
        return Err(Error::InvalidArgument("segment length must be at least 2".into()));
    }
    if x.len() < 2 * segment_len {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than two segments of {}",
            x.len(),
            segment_len
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("sample period must be positive".into()));
    }
    let window: Vec<f64> = (0..segment_len)
        .map(|n| {
            0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / segment_len as f64).cos()
        })
        .collect();
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let step = (segment_len - (overlap * segment_len as f64).round() as usize).max(1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut start = 0;
    while start + segment_len <= x.len() {
        let seg = &x[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new((s - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let fs = 1.0 / h;
    let scale = 1.0 / (fs * win_power * segments as f64);
    let values = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || (segment_len % 2 == 0 && k == bins - 1) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / segment_len as f64).collect();
    Ok(PsdEstimate {
        freqs,
        values,
        segment_len,
        overlap,
        window: "hann".into(),
    })
}

/// Samples to settle within 2% for the slowest pole, times ten.
fn warmup_samples(filter: &DiscreteTf, n: usize) -> Result<usize> {
    let cap = n / 4;
    let radius = filter.spectral_radius()?;
    if radius == 0.0 {
        return Ok(0);
    }
    if radius >= 1.0 {
        return Ok(cap);
    }
    let settle = (0.02_f64.ln() / radius.ln()).ceil();
    Ok(((10.0 * settle) as usize).min(cap))
}

/// Draws `N(0, S_v)` white noise, shapes it through `H` and drops the
/// warm-up transient. `target_rms` rescales the result exactly.
pub fn synthesize_disturbance(
    factor: &SpectralFactor,
    n: usize,
    seed: u64,
    target_rms: Option<f64>,
) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::InvalidArgument("requested zero samples".into()));
    }
    if let Some(rho) = target_rms {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target RMS must be finite and non-negative, got {rho}"
            )));
        }
    }
    if !(factor.sv >= 0.0) {
        return Err(Error::InvalidArgument("negative white-noise variance".into()));
    }
    let warmup = warmup_samples(&factor.filter, n)?;
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, factor.sv.sqrt())
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let noise: Vec<f64> = (0..n + warmup).map(|_| normal.sample(&mut rng)).collect();
    let mut d = filter_series(&factor.filter, &noise).output.split_off(warmup);
    if let Some(rho) = target_rms {
        let rms = (d.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
        if rho == 0.0 {
            d.iter_mut().for_each(|x| *x = 0.0);
        } else if rms == 0.0 {
            return Err(Error::ZeroVariance("synthesized signal cannot be rescaled".into()));
        } else {
            let k = rho / rms;
            d.iter_mut().for_each(|x| *x *= k);
        }
    }
    Ok(TimeSeries::single("d", factor.filter.h(), d)?.with_seed(seed))
}

/// Pre-filters `reference` by `1/H_a` so that the actuator output tracks
/// it. The inverse of a strictly proper actuator needs look-ahead; the
/// reference is recorded, so it is advanced by the relative degree and
/// the tail is held at its last value.
pub fn compensate_actuator(reference: &[f64], actuator: &DiscreteTf) -> Result<Vec<f64>> {
    if actuator.num().iter().all(|&c| c == 0.0) {
        return Err(Error::InvalidArgument("actuator transfer function is zero".into()));
    }
    let offending: Vec<Complex64> = actuator
        .zeros()?
        .into_iter()
        .filter(|z| z.norm() >= 1.0)
        .collect();
    if !offending.is_empty() {
        return Err(Error::NonMinimumPhase { zeros: offending });
    }
    let d = actuator.relative_degree();
    let mut inv_den = actuator.num().to_vec();
    inv_den.extend(std::iter::repeat_n(0.0, d));
    let advanced: Vec<f64> = (0..reference.len())
        .map(|k| reference[(k + d).min(reference.len().saturating_sub(1))])
        .collect();
    Ok(filter_raw(actuator.den(), &inv_den, &advanced))
}
