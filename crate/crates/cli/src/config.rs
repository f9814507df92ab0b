use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spotkal::bench::{first_order_lag, BenchConfig};
use spotkal::covtune::{AcfEstimator, TuningOptions};
use spotkal::specfact::JitterModel;
use spotkal::subid::{OrderSelection, Split, SubidConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default)]
    pub disturbance: DisturbanceSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub covariance: CovarianceSection,
    #[serde(default)]
    pub subid: SubidSection,
    #[serde(default)]
    pub validate: ValidateSection,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceSection {
    pub model: JitterModel,
    /// Sample period of the shaping filter, seconds.
    pub h: f64,
    pub samples: usize,
    /// Rescale each axis to this RMS; `rescale = false` keeps the raw
    /// amplitude.
    pub rescale: bool,
    pub target_rms: f64,
    pub psd_segment: usize,
}

impl Default for DisturbanceSection {
    fn default() -> Self {
        DisturbanceSection {
            model: JitterModel::default(),
            h: 0.025,
            samples: 20_000,
            rescale: true,
            target_rms: 1.0,
            psd_segment: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    None,
    Sinusoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axes {
    X,
    Y,
    Both,
}

impl Axes {
    pub fn names(self) -> &'static [&'static str] {
        match self {
            Axes::X => &["x"],
            Axes::Y => &["y"],
            Axes::Both => &["x", "y"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub width: usize,
    pub height: usize,
    pub spot_sigma: f64,
    pub peak: f64,
    pub pixel_noise: f64,
    pub h: f64,
    pub pixel_scale: f64,
    pub threshold: f64,
    /// Time constant of a first-order actuator lag on both axes.
    pub actuator_tau: Option<f64>,
    pub reference: ReferenceMode,
    pub reference_axes: Axes,
}

impl Default for BenchSection {
    fn default() -> Self {
        let b = BenchConfig::default();
        BenchSection {
            width: b.width,
            height: b.height,
            spot_sigma: b.spot_sigma,
            peak: b.peak,
            pixel_noise: b.pixel_noise,
            h: b.h,
            pixel_scale: b.pixel_scale,
            threshold: b.threshold,
            actuator_tau: None,
            reference: ReferenceMode::None,
            reference_axes: Axes::X,
        }
    }
}

impl BenchSection {
    pub fn to_bench_config(&self, seed: u64) -> Result<BenchConfig, CliError> {
        let actuator = match self.actuator_tau {
            Some(tau) => Some(first_order_lag(tau, self.h).map_err(|e| CliError::config(e.to_string()))?),
            None => None,
        };
        let cfg = BenchConfig {
            width: self.width,
            height: self.height,
            spot_sigma: self.spot_sigma,
            peak: self.peak,
            pixel_noise: self.pixel_noise,
            h: self.h,
            actuator_x: actuator.clone(),
            actuator_y: actuator,
            pixel_scale: self.pixel_scale,
            threshold: self.threshold,
            seed,
        };
        cfg.validate().map_err(|e| CliError::config(format!("bench: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    /// Expected sample period; `None` takes it from the track.
    pub h: Option<f64>,
    pub initial_poles: Vec<f64>,
    pub axes: Axes,
}

impl Default for TrackingSection {
    fn default() -> Self {
        TrackingSection {
            h: None,
            initial_poles: vec![0.3, 0.4, 0.5],
            axes: Axes::Both,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceSection {
    pub max_lag: usize,
    pub iterations: usize,
    pub skip: usize,
    pub estimator: AcfEstimator,
    pub confidence: f64,
    pub q_floor: f64,
}

impl Default for CovarianceSection {
    fn default() -> Self {
        let t = TuningOptions::default();
        CovarianceSection {
            max_lag: t.max_lag,
            iterations: t.iterations,
            skip: t.skip,
            estimator: t.estimator,
            confidence: t.confidence,
            q_floor: t.q_floor,
        }
    }
}

impl CovarianceSection {
    pub fn to_options(&self) -> TuningOptions {
        TuningOptions {
            max_lag: self.max_lag,
            iterations: self.iterations,
            skip: self.skip,
            estimator: self.estimator,
            confidence: self.confidence,
            bounds: None,
            q_floor: self.q_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubidSection {
    pub p: Option<usize>,
    pub p_range: (usize, usize),
    pub f: Option<usize>,
    pub order: OrderSelection,
    pub gap_limit: usize,
    pub whiteness_lags: usize,
    pub channels: Vec<String>,
    pub n_id: usize,
    pub n_val: usize,
}

impl Default for SubidSection {
    fn default() -> Self {
        let s = SubidConfig::default();
        let split = Split::default();
        SubidSection {
            p: s.p,
            p_range: s.p_range,
            f: s.f,
            order: s.order,
            gap_limit: s.gap_limit,
            whiteness_lags: s.whiteness_lags,
            channels: vec!["x".into(), "y".into()],
            n_id: split.n_id,
            n_val: split.n_val,
        }
    }
}

impl SubidSection {
    pub fn to_config(&self) -> SubidConfig {
        SubidConfig {
            p: self.p,
            p_range: self.p_range,
            f: self.f,
            order: self.order,
            gap_limit: self.gap_limit,
            whiteness_lags: self.whiteness_lags,
        }
    }

    pub fn split(&self) -> Split {
        Split { n_id: self.n_id, n_val: self.n_val }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateSection {
    /// Leading predictions excluded from the scores; `None` uses the
    /// model's past window.
    pub warmup: Option<usize>,
    pub whiteness_lags: usize,
    pub confidence: f64,
}

impl Default for ValidateSection {
    fn default() -> Self {
        ValidateSection { warmup: None, whiteness_lags: 100, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    /// Number of bench frames written as PGM images.
    pub frame_dump: usize,
    /// Relative paths resolve against the output directory.
    pub frame_dir: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { frame_dump: 0, frame_dir: PathBuf::from("frames") }
    }
}

impl IoSection {
    pub fn frame_dir_in(&self, out: &Path) -> PathBuf {
        if self.frame_dir.is_absolute() {
            self.frame_dir.clone()
        } else {
            out.join(&self.frame_dir)
        }
    }
}

impl PipelineConfig {
    pub fn with_seed(seed: u64) -> Self {
        PipelineConfig {
            seed,
            disturbance: DisturbanceSection::default(),
            bench: BenchSection::default(),
            tracking: TrackingSection::default(),
            covariance: CovarianceSection::default(),
            subid: SubidSection::default(),
            validate: ValidateSection::default(),
            io: IoSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| CliError::config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise starts from defaults; `seed`
    /// overrides the file. A seed must come from one of the two.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::with_seed(
                seed.ok_or_else(|| CliError::config("a seed is required: pass --seed or a config with `seed`"))?,
            ),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        let d = &self.disturbance;
        if d.samples == 0 {
            return Err(CliError::config("disturbance.samples must be positive"));
        }
        if !(d.h > 0.0 && d.h.is_finite()) {
            return Err(CliError::config("disturbance.h must be positive"));
        }
        if d.rescale && !(d.target_rms >= 0.0 && d.target_rms.is_finite()) {
            return Err(CliError::config("disturbance.target_rms must be non-negative"));
        }
        if d.psd_segment < 8 {
            return Err(CliError::config("disturbance.psd_segment must be at least 8"));
        }
        self.bench.to_bench_config(self.seed)?;
        if self.tracking.initial_poles.is_empty() {
            return Err(CliError::config("tracking.initial_poles is empty"));
        }
        if let Some(h) = self.tracking.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::config("tracking.h must be positive"));
            }
        }
        let c = &self.covariance;
        if c.iterations == 0 {
            return Err(CliError::config("covariance.iterations must be at least 1"));
        }
        if c.max_lag == 0 {
            return Err(CliError::config("covariance.max_lag must be at least 1"));
        }
        if !(c.confidence > 0.0 && c.confidence < 1.0) {
            return Err(CliError::config("covariance.confidence must lie in (0, 1)"));
        }
        if !(c.q_floor >= 0.0) {
            return Err(CliError::config("covariance.q_floor must be non-negative"));
        }
        self.subid
            .to_config()
            .validate()
            .map_err(|e| CliError::config(format!("subid: {e}")))?;
        if self.subid.channels.is_empty() {
            return Err(CliError::config("subid.channels is empty"));
        }
        if !(self.validate.confidence > 0.0 && self.validate.confidence < 1.0) {
            return Err(CliError::config("validate.confidence must lie in (0, 1)"));
        }
        Ok(())
    }
}
