use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};
use spotkal::bench::{frame_count, render_frame, simulate_bench, sinusoid_reference, spot_centers};
use spotkal::covtune::{iterate_tuning, whiteness_test, WhitenessReport};
use spotkal::kalman::build_abg_model;
use spotkal::lticore::{discretize_zoh, fmt_f64, stability, Channel, MatrixRecord, TimeSeries};
use spotkal::specfact::{estimate_psd, spectral_factorize, spectrum_from_filter, synthesize_disturbance};
use spotkal::subid::{identify, vaf, IdentifiedModel};

use crate::config::{PipelineConfig, ReferenceMode};
use crate::manifest::{sha256_hex, write_atomic, RunManifest};
use crate::CliError;

/// Files written by a command and their SHA-256 digests, keyed by path
/// relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub outputs: BTreeMap<String, String>,
}

struct Stages {
    timings: BTreeMap<String, f64>,
}

impl Stages {
    fn new() -> Self {
        Stages { timings: BTreeMap::new() }
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T, CliError>) -> Result<T, CliError> {
        let start = Instant::now();
        let out = f();
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

fn seed_for(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn config_digest(cfg: &PipelineConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("json value serializes");
    b.push(b'\n');
    b
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

fn with_writer(stage: &str, f: impl FnOnce(&mut Vec<u8>) -> spotkal::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| CliError::stage(stage, e))?;
    Ok(buf)
}

fn read_series(stage: &str, path: &Path) -> Result<TimeSeries, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::input(format!("{stage}: cannot open {}: {e}", path.display())))?;
    TimeSeries::read_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::input(format!("{stage}: {}: {e}", path.display())))
}

fn finish(
    command: &str,
    cfg: &PipelineConfig,
    out: &Path,
    inputs: &[PathBuf],
    files: Vec<(String, Vec<u8>)>,
    stages: Stages,
) -> Result<Outcome, CliError> {
    let mut outputs = BTreeMap::new();
    for (name, bytes) in files {
        write_atomic(&out.join(&name), &bytes)?;
        outputs.insert(name, sha256_hex(&bytes));
    }
    let mut manifest = RunManifest::load(out);
    manifest.record(command, config_digest(cfg), cfg.seed, inputs, outputs.clone(), stages.timings)?;
    manifest.save(out)?;
    Ok(Outcome { outputs })
}

fn whiteness_json(w: &WhitenessReport) -> Value {
    json!({
        "exceed_count": w.exceed_count,
        "total": w.total,
        "pass": w.pass,
        "exceedance_fraction": w.exceedance_fraction,
        "bound": w.upper_bound,
    })
}

fn complex_list(z: &[Complex64]) -> Value {
    Value::Array(z.iter().map(|c| json!([c.re, c.im])).collect())
}

/// Shapes white noise through the spectral factor of the configured
/// jitter model: `factor.json`, `disturbance.csv` (`t,x,y`), `psd.csv`.
pub fn cmd_synthesize(cfg: &PipelineConfig, out: &Path) -> Result<Outcome, CliError> {
    cfg.check()?;
    let d = &cfg.disturbance;
    let mut stages = Stages::new();
    let (ctf, dtf, fact) = stages.run("factorize", || {
        let ctf = d.model.transfer_function().map_err(|e| CliError::stage("synthesize: model", e))?;
        let dtf = discretize_zoh(&ctf, d.h).map_err(|e| CliError::stage("synthesize: discretize", e))?;
        let fact = spectral_factorize(&spectrum_from_filter(&dtf))
            .map_err(|e| CliError::stage("synthesize: factorize", e))?;
        Ok((ctf, dtf, fact))
    })?;
    let (axes, scale) = stages.run("synthesize", || {
        let mut axes = Vec::new();
        let mut scale = Vec::new();
        for (i, name) in ["x", "y"].into_iter().enumerate() {
            let raw = synthesize_disturbance(&fact.factor, d.samples, seed_for(cfg.seed, i as u64), None)
                .map_err(|e| CliError::stage("synthesize: noise shaping", e))?;
            let mut v = raw.channels()[0].values.clone();
            let k = if d.rescale {
                let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
                if !(rms > 0.0) {
                    return Err(CliError::stage(
                        "synthesize: rescale",
                        spotkal::Error::ZeroVariance("synthesized signal".into()),
                    ));
                }
                d.target_rms / rms
            } else {
                1.0
            };
            v.iter_mut().for_each(|x| *x *= k);
            axes.push(Channel { name: name.into(), values: v });
            scale.push(k);
        }
        Ok((axes, scale))
    })?;
    let series = TimeSeries::new(0.0, d.h, axes).map_err(|e| CliError::stage("synthesize", e))?;
    // Short records get shorter segments; below 16 samples there is no
    // estimate and psd.csv carries only its header.
    let segment = d.psd_segment.min(d.samples / 2);
    let psd = stages.run("psd", || {
        if segment < 8 {
            return Ok(Vec::new());
        }
        let est: Vec<_> = series
            .channels()
            .iter()
            .map(|c| estimate_psd(&c.values, d.h, segment, 0.5))
            .collect::<spotkal::Result<_>>()
            .map_err(|e| CliError::stage("synthesize: psd", e))?;
        Ok(est)
    })?;
    let factor_json = json!({
        "continuous": ctf,
        "discrete": dtf,
        "factor": fact.factor,
        "boundary_roots": complex_list(&fact.boundary_roots),
        "rescale": {"x": scale[0], "y": scale[1]},
    });
    let disturbance = with_writer("synthesize", |b| series.write_csv(b))?;
    let psd_rows = (0..psd.first().map_or(0, |p| p.freqs.len())).map(|i| {
        let f = psd[0].freqs[i];
        let model = fact.factor.one_sided_psd(f);
        vec![
            fmt_f64(f),
            fmt_f64(psd[0].values[i]),
            fmt_f64(psd[1].values[i]),
            fmt_f64(model * scale[0] * scale[0]),
            fmt_f64(model * scale[1] * scale[1]),
        ]
    });
    let psd_csv = csv_bytes(&["freq_hz", "psd_x", "psd_y", "model_x", "model_y"], psd_rows);
    finish(
        "synthesize",
        cfg,
        out,
        &[],
        vec![
            ("factor.json".into(), json_bytes(&factor_json)),
            ("disturbance.csv".into(), disturbance),
            ("psd.csv".into(), psd_csv),
        ],
        stages,
    )
}

/// Renders camera frames for the disturbance record and writes the
/// centroid track `track.csv` (`t,x,y`, pixels).
pub fn cmd_bench(cfg: &PipelineConfig, out: &Path, disturbance: &Path) -> Result<Outcome, CliError> {
    cfg.check()?;
    let mut stages = Stages::new();
    let input = read_series("bench", disturbance)?;
    if input.is_empty() {
        return Err(CliError::input("bench: disturbance record is empty, the track would be empty"));
    }
    let pick = |name: &str| -> Result<TimeSeries, CliError> {
        let values = match input.channel(name) {
            Ok(v) => v.to_vec(),
            Err(_) if input.channels().len() == 1 => input.channels()[0].values.clone(),
            Err(e) => return Err(CliError::input(format!("bench: {e}"))),
        };
        TimeSeries::new(input.t0(), input.h(), vec![Channel { name: name.into(), values }])
            .map_err(|e| CliError::stage("bench", e))
    };
    let (dx, dy) = (pick("x")?, pick("y")?);
    let bench = cfg.bench.to_bench_config(seed_for(cfg.seed, 2))?;
    let reference = match cfg.bench.reference {
        ReferenceMode::None => None,
        ReferenceMode::Sinusoid => {
            let frames = frame_count(input.len(), input.h(), bench.h);
            let mut channels = Vec::new();
            for name in cfg.bench.reference_axes.names() {
                let r = sinusoid_reference(input.t0(), bench.h, frames, name).map_err(|e| CliError::stage("bench", e))?;
                channels.extend(r.channels().iter().cloned());
            }
            Some(TimeSeries::new(input.t0(), bench.h, channels).map_err(|e| CliError::stage("bench", e))?)
        }
    };
    let track = stages.run("render", || {
        simulate_bench(&bench, &dx, &dy, reference.as_ref()).map_err(|e| CliError::stage("bench", e))
    })?;
    let mut files = vec![("track.csv".to_string(), with_writer("bench", |b| track.write_csv(b))?)];
    if cfg.io.frame_dump > 0 {
        let (cx, cy) = spot_centers(&bench, &dx, &dy, reference.as_ref()).map_err(|e| CliError::stage("bench", e))?;
        let dir = cfg.io.frame_dir_in(Path::new(""));
        for k in 0..cfg.io.frame_dump.min(cx.len()) {
            let img = render_frame(&bench, (cx[k], cy[k]), k).map_err(|e| CliError::stage("bench: frames", e))?;
            let bytes = with_writer("bench: frames", |b| img.write_pgm(b))?;
            files.push((dir.join(format!("frame_{k:06}.pgm")).display().to_string(), bytes));
        }
    }
    finish("bench", cfg, out, &[disturbance.to_path_buf()], files, stages)
}

fn track_h(stage: &str, cfg: &PipelineConfig, track: &TimeSeries) -> Result<f64, CliError> {
    if let Some(h) = cfg.tracking.h {
        if (h - track.h()).abs() > 1e-9 * h {
            return Err(CliError::input(format!(
                "{stage}: track sampled at {} s, config expects {h} s",
                track.h()
            )));
        }
    }
    Ok(track.h())
}

/// Covariance tuning of the constant-acceleration tracker on each selected
/// axis: `covariances.json`, `gain.json`, `innovation_acf.csv`,
/// `report.json`.
pub fn cmd_tune(cfg: &PipelineConfig, out: &Path, track_path: &Path) -> Result<Outcome, CliError> {
    cfg.check()?;
    let mut stages = Stages::new();
    let track = read_series("tune", track_path)?;
    let h = track_h("tune", cfg, &track)?;
    let opts = cfg.covariance.to_options();
    let poles: Vec<Complex64> = cfg.tracking.initial_poles.iter().map(|&p| Complex64::new(p, 0.0)).collect();
    let model = build_abg_model(h, 1.0, 1.0).map_err(|e| CliError::stage("tune: model", e))?;
    let (mut cov, mut gains, mut report) = (serde_json::Map::new(), serde_json::Map::new(), serde_json::Map::new());
    let mut acf_rows = Vec::new();
    for axis in cfg.tracking.axes.names() {
        let values = track.channel(axis).map_err(|e| CliError::input(format!("tune: {e}")))?;
        let y = DMatrix::from_row_slice(1, values.len(), values);
        let res = stages.run(&format!("tune_{axis}"), || {
            iterate_tuning(&model, &y, &poles, &opts).map_err(|e| CliError::stage(&format!("tune[{axis}]"), e))
        })?;
        let q = &res.estimate.q;
        let r = &res.estimate.r;
        cov.insert(
            axis.to_string(),
            json!({
                "Q": MatrixRecord::from(q),
                "R": MatrixRecord::from(r),
                "sigma_w": q[(0, 0)].max(0.0).sqrt(),
                "sigma_v": r[(0, 0)].max(0.0).sqrt(),
            }),
        );
        gains.insert(axis.to_string(), json!(MatrixRecord::from(res.gain.matrix())));
        let history: Vec<Value> = res
            .history
            .iter()
            .map(|it| {
                json!({
                    "iter": it.iter,
                    "sigma_w": it.q[(0, 0)].max(0.0).sqrt(),
                    "sigma_v": it.r[(0, 0)].max(0.0).sqrt(),
                    "residual": it.residual,
                    "exceedance_fraction": it.exceedance_fraction,
                })
            })
            .collect();
        report.insert(
            axis.to_string(),
            json!({
                "sigma_w": q[(0, 0)].max(0.0).sqrt(),
                "sigma_v": r[(0, 0)].max(0.0).sqrt(),
                "iterations": res.history.len(),
                "solver_iterations": res.estimate.iterations,
                "history": history,
                "whiteness": whiteness_json(&res.final_whiteness),
            }),
        );
        let w = &res.final_whiteness;
        for (j, v) in w.coefficients.iter().enumerate() {
            acf_rows.push(vec![
                axis.to_string(),
                (j + 1).to_string(),
                fmt_f64(*v),
                fmt_f64(w.lower_bound),
                fmt_f64(w.upper_bound),
            ]);
        }
    }
    let report = json!({
        "h": h,
        "initial_poles": cfg.tracking.initial_poles,
        "max_lag": opts.max_lag,
        "iterations": opts.iterations,
        "axes": Value::Object(report),
    });
    finish(
        "tune",
        cfg,
        out,
        &[track_path.to_path_buf()],
        vec![
            ("covariances.json".into(), json_bytes(&Value::Object(cov))),
            ("gain.json".into(), json_bytes(&Value::Object(gains))),
            (
                "innovation_acf.csv".into(),
                csv_bytes(&["axis", "lag", "value", "lower_bound", "upper_bound"], acf_rows),
            ),
            ("report.json".into(), json_bytes(&report)),
        ],
        stages,
    )
}

fn track_matrix(stage: &str, cfg: &PipelineConfig, track: &TimeSeries) -> Result<DMatrix<f64>, CliError> {
    let names: Vec<&str> = cfg.subid.channels.iter().map(String::as_str).collect();
    track.to_matrix(&names).map_err(|e| CliError::input(format!("{stage}: {e}")))
}

/// Subspace identification of the track: `model.json`, `aic.csv`,
/// `svals.csv`, `residual_acf.csv`, `eig.csv`, `report.json`.
pub fn cmd_identify(cfg: &PipelineConfig, out: &Path, track_path: &Path) -> Result<Outcome, CliError> {
    cfg.check()?;
    let mut stages = Stages::new();
    let track = read_series("identify", track_path)?;
    let y = track_matrix("identify", cfg, &track)?;
    let id = stages.run("identify", || {
        identify(&y, track.h(), &cfg.subid.to_config(), cfg.subid.split()).map_err(|e| CliError::stage("identify", e))
    })?;
    let (m, d) = (&id.model, &id.diagnostics);
    let aic = match &d.aic {
        Some(sweep) => with_writer("identify", |b| sweep.write_csv(b))?,
        None => b"p,aic\n".to_vec(),
    };
    let open = stability(&m.a).map_err(|e| CliError::stage("identify: stability", e))?;
    let closed = stability(&m.abar).map_err(|e| CliError::stage("identify: stability", e))?;
    let report = json!({
        "channels": cfg.subid.channels,
        "p": m.p,
        "f": m.f,
        "n": m.n,
        "triple": [m.p, m.f, m.n],
        "p_selected_by_aic": d.aic.is_some(),
        "vaf": d.vaf,
        "whiteness": d.whiteness.iter().map(whiteness_json).collect::<Vec<_>>(),
        "open_loop": open,
        "closed_loop": closed,
        "warnings": d.warnings,
    });
    let model_json = serde_json::to_value(m).map_err(|e| CliError::input(e.to_string()))?;
    finish(
        "identify",
        cfg,
        out,
        &[track_path.to_path_buf()],
        vec![
            ("model.json".into(), json_bytes(&model_json)),
            ("aic.csv".into(), aic),
            ("svals.csv".into(), with_writer("identify", |b| d.write_singular_values_csv(b))?),
            ("residual_acf.csv".into(), with_writer("identify", |b| d.write_residual_acf_csv(b))?),
            ("eig.csv".into(), with_writer("identify", |b| d.write_eigenvalues_csv(b))?),
            ("report.json".into(), json_bytes(&report)),
        ],
        stages,
    )
}

/// One-step prediction of the track by a stored model: `report.json` with
/// VAF, residual whiteness and stability verdicts.
pub fn cmd_validate(cfg: &PipelineConfig, out: &Path, model_path: &Path, track_path: &Path) -> Result<Outcome, CliError> {
    cfg.check()?;
    let mut stages = Stages::new();
    let text = std::fs::read(model_path)
        .map_err(|e| CliError::input(format!("validate: cannot read {}: {e}", model_path.display())))?;
    let model: IdentifiedModel = serde_json::from_slice(&text)
        .map_err(|e| CliError::input(format!("validate: {}: {e}", model_path.display())))?;
    let track = read_series("validate", track_path)?;
    if (model.h - track.h()).abs() > 1e-9 * model.h {
        return Err(CliError::input(format!(
            "validate: model sampled at {} s but track at {} s",
            model.h,
            track.h()
        )));
    }
    let y = track_matrix("validate", cfg, &track)?;
    if y.nrows() != model.outputs() {
        return Err(CliError::input(format!(
            "validate: model has {} outputs, config selects {} channels",
            model.outputs(),
            y.nrows()
        )));
    }
    let warmup = cfg.validate.warmup.unwrap_or(model.p);
    if y.ncols() < warmup + 3 {
        return Err(CliError::input(format!(
            "validate: {} samples leave nothing after a warm-up of {warmup}",
            y.ncols()
        )));
    }
    let scored = y.ncols() - warmup;
    let (vafs, whiteness) = stages.run("predict", || {
        let pred = model.predict(&y).map_err(|e| CliError::stage("validate", e))?;
        let mut vafs = Vec::new();
        let mut whiteness = Vec::new();
        for i in 0..y.nrows() {
            let truth: Vec<f64> = y.row(i).iter().skip(warmup).copied().collect();
            let guess: Vec<f64> = pred.row(i).iter().skip(warmup).copied().collect();
            vafs.push(vaf(&truth, &guess).map_err(|e| CliError::stage("validate", e))?);
            let resid: Vec<f64> = truth.iter().zip(&guess).map(|(a, b)| a - b).collect();
            let lags = cfg.validate.whiteness_lags.min(scored - 1);
            let w = whiteness_test(&resid, lags, cfg.validate.confidence).map_err(|e| CliError::stage("validate", e))?;
            whiteness.push(whiteness_json(&w));
        }
        Ok((vafs, whiteness))
    })?;
    let open = stability(&model.a).map_err(|e| CliError::stage("validate: stability", e))?;
    let closed = stability(&model.abar).map_err(|e| CliError::stage("validate: stability", e))?;
    let report = json!({
        "channels": cfg.subid.channels,
        "samples_scored": scored,
        "warmup": warmup,
        "vaf": vafs,
        "whiteness": whiteness,
        "open_loop": open,
        "closed_loop": closed,
        "predictor_stable": closed.stable,
    });
    finish(
        "validate",
        cfg,
        out,
        &[model_path.to_path_buf(), track_path.to_path_buf()],
        vec![("report.json".into(), json_bytes(&report))],
        stages,
    )
}
