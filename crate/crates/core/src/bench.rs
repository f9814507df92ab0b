//! Virtual optical bench: Gaussian spot frames on a pixel grid and
//! center-of-mass tracking.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lticore::{filter_series, seeded_rng, Channel, DiscreteTf, TimeSeries};

/// Channels `x`, `y` in pixels.
pub type SpotTrack = TimeSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub width: usize,
    pub height: usize,
    pub spot_sigma: f64,
    pub peak: f64,
    pub pixel_noise: f64,
    /// Camera period in seconds.
    pub h: f64,
    pub actuator_x: Option<DiscreteTf>,
    pub actuator_y: Option<DiscreteTf>,
    /// Pixels per disturbance unit.
    pub pixel_scale: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            width: 128,
            height: 128,
            spot_sigma: 2.0,
            peak: 255.0,
            pixel_noise: 2.0,
            h: 0.0177,
            actuator_x: None,
            actuator_y: None,
            pixel_scale: 5.0,
            threshold: 0.1,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidArgument(format!(
                "image must be at least 16x16, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.spot_sigma > 0.0 && self.spot_sigma.is_finite()) {
            return Err(Error::InvalidArgument("spot sigma must be positive".into()));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidArgument("camera period must be positive".into()));
        }
        if !(self.pixel_noise >= 0.0 && self.peak.is_finite() && self.pixel_scale.is_finite()) {
            return Err(Error::InvalidArgument(
                "pixel noise must be non-negative; peak and pixel scale finite".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold fraction must lie in [0, 1), got {}",
                self.threshold
            )));
        }
        for tf in [&self.actuator_x, &self.actuator_y].into_iter().flatten() {
            if (tf.h() - self.h).abs() > 1e-9 * self.h {
                return Err(Error::InvalidArgument(format!(
                    "actuator sampled at {} s but camera runs at {} s",
                    tf.h(),
                    self.h
                )));
            }
        }
        Ok(())
    }

    /// Pixel coordinates of the frame center.
    pub fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

/// First-order lag `1/(tau s + 1)` at camera rate, in the form that maps a
/// command latched at the start of a frame to the position at exposure:
/// `(1 - p) z / (z - p)`, `p = exp(-h/tau)`.
pub fn first_order_lag(tau: f64, h: f64) -> Result<DiscreteTf> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("time constant must be positive, got {tau}")));
    }
    let p = (-h / tau).exp();
    DiscreteTf::new(vec![1.0 - p, 0.0], vec![1.0, -p], h)
}

/// Row-major intensity grid; pixel `(i, j)` has its center at `x = i`,
/// `y = j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl SpotImage {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.width + i]
    }

    pub fn scaled(&self, alpha: f64) -> SpotImage {
        SpotImage {
            data: self.data.iter().map(|v| v * alpha).collect(),
            ..self.clone()
        }
    }

    /// Binary PGM (P5), intensities rounded and clipped to 0..=255.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

fn render_with(config: &BenchConfig, center: (f64, f64), rng: Option<&mut crate::lticore::Rng>) -> SpotImage {
    let s2 = 2.0 * config.spot_sigma * config.spot_sigma;
    let gx: Vec<f64> = (0..config.width).map(|i| (-(i as f64 - center.0).powi(2) / s2).exp()).collect();
    let gy: Vec<f64> = (0..config.height).map(|j| (-(j as f64 - center.1).powi(2) / s2).exp()).collect();
    let mut data = Vec::with_capacity(config.width * config.height);
    for &wy in &gy {
        for &wx in &gx {
            data.push(config.peak * wx * wy);
        }
    }
    if let Some(rng) = rng {
        if config.pixel_noise > 0.0 {
            for v in &mut data {
                *v += config.pixel_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    for v in &mut data {
        *v = v.max(0.0);
    }
    SpotImage { width: config.width, height: config.height, data }
}

fn frame_rng(seed: u64, frame: usize) -> crate::lticore::Rng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(frame as u64);
    rng
}

/// Frame `frame` of the sequence seeded by `config.seed`. Each frame draws
/// its pixel noise from its own stream, so frames can be rendered in any
/// order.
pub fn render_frame(config: &BenchConfig, center: (f64, f64), frame: usize) -> Result<SpotImage> {
    if !(center.0.is_finite() && center.1.is_finite()) {
        return Err(Error::InvalidArgument(format!("spot center {center:?} is not finite")));
    }
    Ok(render_with(config, center, Some(&mut frame_rng(config.seed, frame))))
}

/// Frame 0 of the sequence; see [`render_frame`].
pub fn render_spot(config: &BenchConfig, center: (f64, f64)) -> Result<SpotImage> {
    render_frame(config, center, 0)
}

/// Center of mass over pixels at or above `threshold_fraction · max`, each
/// weighted by its excess over that threshold.
pub fn centroid(image: &SpotImage, threshold_fraction: f64) -> Result<(f64, f64)> {
    let max = image.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::InsufficientData("image has no foreground pixels".into()));
    }
    let thr = threshold_fraction * max;
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for j in 0..image.height {
        for i in 0..image.width {
            let v = image.at(i, j);
            if v >= thr {
                let w = v - thr;
                sw += w;
                sx += w * i as f64;
                sy += w * j as f64;
            }
        }
    }
    if !(sw > 0.0) {
        return Err(Error::InsufficientData("foreground carries no weight above threshold".into()));
    }
    Ok((sx / sw, sy / sw))
}

/// `r(t) = 0.1 sin(2t) + 0.05 sin(6t) + 2`.
pub fn sinusoid_value(t: f64) -> f64 {
    0.1 * (2.0 * t).sin() + 0.05 * (6.0 * t).sin() + 2.0
}

/// The sinusoidal reference sampled at `t0 + k h`, `k < n`.
pub fn sinusoid_reference(t0: f64, h: f64, n: usize, channel: &str) -> Result<TimeSeries> {
    let values = (0..n).map(|k| sinusoid_value(t0 + k as f64 * h)).collect();
    TimeSeries::new(t0, h, vec![Channel { name: channel.to_string(), values }])
}

fn single_channel(ts: &TimeSeries, what: &str) -> Result<Vec<f64>> {
    match ts.channels() {
        [c] => Ok(c.values.clone()),
        cs => Err(Error::Dimension(format!("{what} must have one channel, found {}", cs.len()))),
    }
}

/// Holds the most recent sample of `values` (period `h_in`) at each camera
/// instant.
fn hold(values: &[f64], h_in: f64, h_out: f64, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|k| {
            let idx = ((k as f64 * h_out) / h_in + 1e-9).floor() as usize;
            values[idx.min(values.len() - 1)]
        })
        .collect()
}

/// Camera frames covered by `samples` inputs at period `h_in`.
pub fn frame_count(samples: usize, h_in: f64, h_camera: f64) -> usize {
    if samples == 0 {
        return 0;
    }
    (((samples - 1) as f64 * h_in) / h_camera + 1e-9).floor() as usize + 1
}

/// Spot centers in pixels for every camera frame: command = reference +
/// disturbance, passed through the actuator, scaled and offset to the frame
/// center. Inputs at a different rate are resampled by zero-order hold. A
/// reference series contributes through channels named `x` and `y`.
pub fn spot_centers(
    config: &BenchConfig,
    disturbance_x: &TimeSeries,
    disturbance_y: &TimeSeries,
    reference: Option<&TimeSeries>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let dx = single_channel(disturbance_x, "x disturbance")?;
    let dy = single_channel(disturbance_y, "y disturbance")?;
    if dx.len() != dy.len() || (disturbance_x.h() - disturbance_y.h()).abs() > 1e-12 * disturbance_x.h() {
        return Err(Error::Dimension(format!(
            "x and y disturbances differ: {} samples at {} s vs {} at {} s",
            dx.len(),
            disturbance_x.h(),
            dy.len(),
            disturbance_y.h()
        )));
    }
    if dx.is_empty() {
        return Err(Error::InsufficientData("empty disturbance gives an empty track".into()));
    }
    let h_in = disturbance_x.h();
    let frames = frame_count(dx.len(), h_in, config.h);
    let mut cx = hold(&dx, h_in, config.h, frames);
    let mut cy = hold(&dy, h_in, config.h, frames);
    if let Some(r) = reference {
        if r.is_empty() {
            return Err(Error::InsufficientData("reference series is empty".into()));
        }
        for ch in r.channels() {
            let target = match ch.name.as_str() {
                "x" => &mut cx,
                "y" => &mut cy,
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "reference channel '{other}' is neither 'x' nor 'y'"
                    )))
                }
            };
            for (c, v) in target.iter_mut().zip(hold(&ch.values, r.h(), config.h, frames)) {
                *c += v;
            }
        }
    }
    let (ox, oy) = config.center();
    let place = |cmd: Vec<f64>, act: &Option<DiscreteTf>, origin: f64| {
        let pos = match act {
            Some(tf) => filter_series(tf, &cmd).output,
            None => cmd,
        };
        pos.into_iter().map(|p| config.pixel_scale * p + origin).collect::<Vec<f64>>()
    };
    Ok((place(cx, &config.actuator_x, ox), place(cy, &config.actuator_y, oy)))
}

/// Renders every frame and extracts its centroid.
pub fn simulate_bench(
    config: &BenchConfig,
    disturbance_x: &TimeSeries,
    disturbance_y: &TimeSeries,
    reference: Option<&TimeSeries>,
) -> Result<SpotTrack> {
    let (cx, cy) = spot_centers(config, disturbance_x, disturbance_y, reference)?;
    let points: Vec<(f64, f64)> = cx
        .par_iter()
        .zip(cy.par_iter())
        .enumerate()
        .map(|(k, (&x, &y))| centroid(&render_frame(config, (x, y), k)?, config.threshold))
        .collect::<Result<_>>()?;
    let (xs, ys) = points.into_iter().unzip();
    let track = TimeSeries::new(
        disturbance_x.t0(),
        config.h,
        vec![Channel { name: "x".into(), values: xs }, Channel { name: "y".into(), values: ys }],
    )?;
    Ok(track.with_seed(config.seed))
}

/// Writes the first `limit` frames as `frame_000000.pgm`, ... into `dir`.
pub fn dump_frames(config: &BenchConfig, centers: (&[f64], &[f64]), dir: &Path, limit: usize) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let width = centers.0.len().max(1).to_string().len().max(6);
    let mut paths = Vec::new();
    for (k, (&x, &y)) in centers.0.iter().zip(centers.1).take(limit).enumerate() {
        let path = dir.join(format!("frame_{k:0width$}.pgm"));
        let img = render_frame(config, (x, y), k)?;
        img.write_pgm(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
        paths.push(path);
    }
    Ok(paths)
}
