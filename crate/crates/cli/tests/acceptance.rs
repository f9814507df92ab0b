//! End-to-end acceptance checks, one line per criterion. Run with
//! `cargo test -p spotkal-cli --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use spotkal::covtune::{build_als_regressor, iterate_tuning, theoretical_autocorrelations, whiteness_test, TuningOptions};
use spotkal::kalman::{build_abg_model, dare_residual, kalman_gain, solve_dare, NoisyStateSpace, ObserverGain};
use spotkal::lticore::{discretize_zoh, seeded_rng, spectral_radius, vec_of, DiscreteTf};
use spotkal::specfact::{
    estimate_psd, factorization_error, spectral_factorize, spectrum_from_filter, synthesize_disturbance, JitterModel,
    SpectralFactor,
};
use spotkal::subid::{
    eigenvalue_set_distance, identify, one_step_residuals, vaf, IdentifiedModel, OrderSelection, Split, SubidConfig,
};
use spotkal_cli::{cmd_bench, cmd_identify, cmd_synthesize, cmd_tune, cmd_validate, PipelineConfig};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn jitter_factor(h: f64) -> SpectralFactor {
    let w = JitterModel::default().transfer_function().unwrap();
    let wd = discretize_zoh(&w, h).unwrap();
    spectral_factorize(&spectrum_from_filter(&wd)).unwrap().factor
}

fn spectral_factor_reproduction() -> Check {
    let f = jitter_factor(0.025);
    let den_want = [1.0, -1.876, 1.831, -1.604, 0.8282];
    let num_want = [1.0, -0.05229, -0.3277, -0.06164, 0.0];
    let clean = |c: f64| if c.abs() < 1e-6 { 0.0 } else { c };
    let den_err = f.filter.den().iter().zip(den_want).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max);
    let mut num = f.filter.num().to_vec();
    while num.len() < num_want.len() {
        num.push(0.0);
    }
    let num_err = num.iter().zip(num_want).map(|(g, w)| (clean(*g) - w).abs()).fold(0.0, f64::max);
    ensure(f.filter.den().len() == 5, || format!("denominator {:?}", f.filter.den()))?;
    ensure(den_err <= 1e-3, || format!("denominator {:?}, max error {den_err:.2e}", f.filter.den()))?;
    ensure(num_err <= 1e-3, || format!("numerator {:?}, max error {num_err:.2e}", f.filter.num()))?;
    ensure((f.sv - 0.103).abs() <= 0.005, || format!("S_v = {}", f.sv))?;
    Ok(format!("den err {den_err:.1e}, num err {num_err:.1e}, S_v {:.4}", f.sv))
}

fn random_stable_filter(rng: &mut spotkal::lticore::Rng, order: usize) -> DiscreteTf {
    let mut poles = Vec::new();
    while poles.len() < order {
        let r: f64 = rng.random_range(0.05..0.95);
        if order - poles.len() >= 2 && rng.random_bool(0.6) {
            let t: f64 = rng.random_range(0.1..3.0);
            poles.push(Complex64::from_polar(r, t));
            poles.push(Complex64::from_polar(r, -t));
        } else {
            poles.push(Complex64::new(if rng.random_bool(0.5) { r } else { -r }, 0.0));
        }
    }
    let den = spotkal::lticore::poly_from_roots(&poles);
    let deg = rng.random_range(0..=order);
    let num: Vec<f64> = (0..=deg).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DiscreteTf::new(num, den, 1.0).unwrap()
}

fn factorization_identity() -> Check {
    let mut rng = seeded_rng(2024);
    let mut worst = 0.0_f64;
    let mut widest = 0.0_f64;
    for i in 0..20 {
        let order = 2 + i % 5;
        let base = random_stable_filter(&mut rng, order);
        let s = spectrum_from_filter(&base);
        let fact = spectral_factorize(&s).map_err(|e| format!("filter {i}: {e}"))?;
        let err = factorization_error(&s, &fact.factor, 4096);
        let radius = fact.factor.filter.spectral_radius().map_err(|e| e.to_string())?;
        ensure(err <= 1e-6, || format!("filter {i} (order {order}): relative error {err:.2e}"))?;
        ensure(radius < 1.0, || format!("filter {i}: factor pole radius {radius}"))?;
        worst = worst.max(err);
        widest = widest.max(radius);
    }
    Ok(format!("max rel error {worst:.1e}, max pole radius {widest:.3}"))
}

fn disturbance_spectrum() -> Check {
    let f = jitter_factor(0.025);
    let d = synthesize_disturbance(&f, 1 << 17, 3, None).map_err(|e| e.to_string())?;
    let psd = estimate_psd(d.channel("d").unwrap(), 0.025, 1024, 0.5).map_err(|e| e.to_string())?;
    let peaks = psd.prominent_peaks(2);
    for target in [2.0, 10.0] {
        ensure(peaks.iter().any(|p| (p - target).abs() <= 0.5), || {
            format!("no local maximum within 0.5 Hz of {target} Hz; peaks {peaks:?}")
        })?;
    }
    Ok(format!("peaks at {:.3} Hz and {:.3} Hz", peaks[0], peaks[1]))
}

fn dare_oracle() -> Check {
    let one = DMatrix::from_element(1, 1, 1.0);
    let p = solve_dare(&one, &one, &one, &one).map_err(|e| e.to_string())?;
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    ensure((p[(0, 0)] - golden).abs() <= 1e-9, || format!("scalar P = {}", p[(0, 0)]))?;
    let mut rng = seeded_rng(44);
    let mut worst = 0.0_f64;
    for i in 0..50 {
        let n = rng.random_range(1..=5);
        let r = rng.random_range(1..=2);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = spectral_radius(&a).unwrap().max(1e-9);
        a *= rng.random_range(0.3..1.5) / rho;
        let c = DMatrix::from_fn(r, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = &g * g.transpose() + DMatrix::identity(n, n) * 1e-3;
        let fr = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rr = &fr * fr.transpose() + DMatrix::identity(r, r) * 0.1;
        let p = solve_dare(&a, &c, &q, &rr).map_err(|e| format!("system {i}: {e}"))?;
        let res = dare_residual(&a, &c, &q, &rr, &p);
        let tol = 1e-9 * (1.0 + p.norm());
        ensure(res <= tol, || format!("system {i}: residual {res:.2e} > {tol:.2e}"))?;
        ensure(p.clone().symmetric_eigenvalues().min() >= -1e-9 * (1.0 + p.norm()), || format!("system {i}: P not PSD"))?;
        let k = kalman_gain(&p, &c, &rr).map_err(|e| e.to_string())?;
        let closed = spectral_radius(&k.closed_loop(&a, &c)).unwrap();
        ensure(closed < 1.0, || format!("system {i}: closed loop radius {closed}"))?;
        worst = worst.max(res / tol);
    }
    Ok(format!("P = {:.12}, worst residual/tolerance {worst:.1e}", p[(0, 0)]))
}

fn als_consistency() -> Check {
    let mut rng = seeded_rng(55);
    let mut worst = 0.0_f64;
    let mut done = 0;
    while done < 50 {
        let n = rng.random_range(1..=4);
        let r = rng.random_range(1..=2);
        let s = rng.random_range(1..=n);
        let mut a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        a *= rng.random_range(0.2..0.95) / spectral_radius(&a).unwrap().max(1e-9);
        let g = DMatrix::from_fn(n, s, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = DMatrix::from_fn(r, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let fq = DMatrix::from_fn(s, s, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = &fq * fq.transpose();
        let fr = DMatrix::from_fn(r, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rr = &fr * fr.transpose() + DMatrix::identity(r, r) * 0.1;
        let model = NoisyStateSpace::new(a, g, c, q.clone(), rr.clone(), 1.0).map_err(|e| e.to_string())?;
        let gain = ObserverGain(DMatrix::from_fn(n, r, |_, _| 0.1 * rng.sample::<f64, _>(StandardNormal)));
        if spectral_radius(&gain.closed_loop(&model.a, &model.c)).unwrap() >= 0.98 {
            continue;
        }
        let lags = 20;
        let reg = build_als_regressor(&model, &gain, lags).map_err(|e| e.to_string())?;
        let theory = theoretical_autocorrelations(&model, &gain, &q, &rr, lags).map_err(|e| e.to_string())?;
        let mut stacked = DVector::zeros((lags + 1) * r * r);
        for (j, t) in theory.iter().enumerate() {
            stacked.rows_mut(j * r * r, r * r).copy_from(&vec_of(t));
        }
        let fit = reg.apply(&q, &rr);
        let rel = (&fit - &stacked).norm() / stacked.norm().max(f64::MIN_POSITIVE);
        ensure(rel <= 1e-9, || format!("tuple {done} (n={n}, r={r}, s={s}): relative mismatch {rel:.2e}"))?;
        worst = worst.max(rel);
        done += 1;
    }
    Ok(format!("50 tuples, worst relative mismatch {worst:.1e}"))
}

fn covariance_recovery() -> Check {
    let h = 0.0177;
    let truth = build_abg_model(h, 0.5, 1.0).unwrap();
    let poles = [0.3, 0.4, 0.5].map(|p| Complex64::new(p, 0.0));
    let opts = TuningOptions::default();
    let mut improved = 0;
    let mut lines = Vec::new();
    let mut bad = Vec::new();
    for seed in 1..=10u64 {
        let (_, y) = truth.simulate(20_000, &mut seeded_rng(seed));
        let res = iterate_tuning(&truth, &y, &poles, &opts).map_err(|e| format!("seed {seed}: {e}"))?;
        let sw = res.estimate.q[(0, 0)].sqrt();
        let sv = res.estimate.r[(0, 0)].sqrt();
        let first = res.history[0].exceedance_fraction;
        let last = res.final_whiteness.exceedance_fraction;
        if last <= first {
            improved += 1;
        }
        if (sw / 0.5 - 1.0).abs() > 0.2 || (sv - 1.0).abs() > 0.2 {
            bad.push(format!("seed {seed}: sigma_w {sw:.3}, sigma_v {sv:.3}"));
        }
        lines.push(format!("{sw:.3}/{sv:.3}"));
    }
    ensure(bad.is_empty(), || bad.join("; "))?;
    ensure(improved >= 9, || format!("exceedance did not improve in {} of 10 seeds", 10 - improved))?;
    Ok(format!("sigma_w/sigma_v per seed [{}], whiteness improved in {improved}/10", lines.join(" ")))
}

fn whiteness_calibration() -> Check {
    let mut fracs = Vec::new();
    for seed in 0..20u64 {
        let mut rng = seeded_rng(7000 + seed);
        let e: Vec<f64> = (0..50_000).map(|_| rng.sample(StandardNormal)).collect();
        let rep = whiteness_test(&e, 200, 0.95).map_err(|err| err.to_string())?;
        ensure((rep.upper_bound - 1.959_963_984_540_054 / 50_000f64.sqrt()).abs() < 1e-12, || {
            format!("bound {}", rep.upper_bound)
        })?;
        ensure((0.01..=0.10).contains(&rep.exceedance_fraction), || {
            format!("seed {seed}: exceedance {}", rep.exceedance_fraction)
        })?;
        fracs.push(rep.exceedance_fraction);
    }
    let lo = fracs.iter().copied().fold(1.0, f64::min);
    let hi = fracs.iter().copied().fold(0.0, f64::max);
    Ok(format!("exceedance range [{lo:.3}, {hi:.3}] over 20 seeds"))
}

fn truth_config() -> SubidConfig {
    SubidConfig { p: Some(30), order: OrderSelection::Manual(4), ..SubidConfig::default() }
}

fn subspace_recovery() -> Check {
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let (a, lt, c) = common::fourth_order_truth(seed);
        let y = common::truth_output(seed, 2200);
        let id = identify(&y, common::CAMERA_H, &truth_config(), Split::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        let truth = spotkal::lticore::eigenvalues(&(&a - &lt * &c)).unwrap();
        let dist = eigenvalue_set_distance(&id.diagnostics.closed_loop, &truth);
        let v = id.diagnostics.vaf[0];
        let sv = &id.diagnostics.singular_values;
        let gap = sv[4] / sv[3];
        ensure(v >= 95.0, || format!("seed {seed}: validation VAF {v:.2}"))?;
        ensure(dist <= 0.02, || format!("seed {seed}: eigenvalue distance {dist:.4}"))?;
        ensure(gap <= 0.2, || format!("seed {seed}: sigma5/sigma4 {gap:.3}"))?;
        lines.push(format!("VAF {v:.1} dist {dist:.4} gap {gap:.3}"));
    }
    Ok(format!("p=30 f=30 n=4, seeds 1-5: {}", lines.join("; ")))
}

fn predictor_equivalence() -> Check {
    let mut worst = 0.0_f64;
    for seed in 1..=5u64 {
        let y = common::truth_output(seed, 2200);
        for cfg in [truth_config(), SubidConfig { order: OrderSelection::Manual(6), ..SubidConfig::default() }] {
            let id = identify(&y, common::CAMERA_H, &cfg, Split::default()).map_err(|e| format!("seed {seed}: {e}"))?;
            let d = &id.diagnostics;
            let (sres, ores) = one_step_residuals(&id.model, &d.states, &d.y_now).map_err(|e| e.to_string())?;
            let scale = 1.0 + d.states.norm();
            let gap = ((sres - &d.system.state_residuals).norm() + (ores - &d.system.output_residuals).norm()) / scale;
            ensure(gap <= 1e-8, || format!("seed {seed}: predictor replay differs by {gap:.2e}"))?;
            worst = worst.max(gap);
        }
    }
    let mut rng = seeded_rng(99);
    let mut eig_worst = 0.0_f64;
    let mut vaf_worst = 0.0_f64;
    for seed in 1..=5u64 {
        let (a, lt, c) = common::fourth_order_truth(seed);
        let y = common::truth_output(seed, 2200);
        let base = IdentifiedModel::from_matrices(&a - &lt * &c, lt.clone(), c.clone(), 1, 1, common::CAMERA_H).unwrap();
        let t = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal) * 0.5);
        let ti = t.clone().try_inverse().ok_or("singular transform")?;
        let moved = IdentifiedModel::from_matrices(&t * &base.abar * &ti, &t * &lt, &c * &ti, 1, 1, common::CAMERA_H).unwrap();
        let dist = eigenvalue_set_distance(&base.closed_loop_eigenvalues().unwrap(), &moved.closed_loop_eigenvalues().unwrap());
        let score = |m: &IdentifiedModel| {
            let p = m.predict(&y).unwrap();
            let truth: Vec<f64> = y.row(0).iter().skip(100).copied().collect();
            let pred: Vec<f64> = p.row(0).iter().skip(100).copied().collect();
            vaf(&truth, &pred).unwrap()
        };
        let dv = (score(&base) - score(&moved)).abs();
        ensure(dist <= 1e-6, || format!("seed {seed}: eigenvalues moved by {dist:.2e}"))?;
        ensure(dv <= 0.1, || format!("seed {seed}: VAF changed by {dv:.3}"))?;
        eig_worst = eig_worst.max(dist);
        vaf_worst = vaf_worst.max(dv);
    }
    Ok(format!(
        "replay gap {worst:.1e}; similarity: eigenvalue shift {eig_worst:.1e}, VAF shift {vaf_worst:.1e}"
    ))
}

fn pipeline_determinism() -> Check {
    let mut cfg = PipelineConfig::with_seed(2718);
    cfg.disturbance.samples = 3000;
    let run = || -> Result<Vec<(String, String)>, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = dir.path();
        let e = |e: spotkal_cli::CliError| e.message;
        let mut all = Vec::new();
        let syn = cmd_synthesize(&cfg, &root.join("syn")).map_err(e)?;
        let bench = cmd_bench(&cfg, &root.join("bench"), &root.join("syn/disturbance.csv")).map_err(e)?;
        let track = root.join("bench/track.csv");
        let tune = cmd_tune(&cfg, &root.join("tune"), &track).map_err(e)?;
        let ident = cmd_identify(&cfg, &root.join("identify"), &track).map_err(e)?;
        let val = cmd_validate(&cfg, &root.join("validate"), &root.join("identify/model.json"), &track).map_err(e)?;
        for (stage, out) in [("synthesize", syn), ("bench", bench), ("tune", tune), ("identify", ident), ("validate", val)] {
            all.extend(out.outputs.into_iter().map(|(k, v)| (format!("{stage}/{k}"), v)));
        }
        Ok(all)
    };
    let first = run()?;
    let second = run()?;
    ensure(first.len() >= 15, || format!("only {} artifacts", first.len()))?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name} differs between runs"))?;
    }
    ensure(first.len() == second.len(), || "artifact sets differ".into())?;
    Ok(format!("{} artifacts, identical digests", first.len()))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Check); 10] = [
        ("spectral-factor reproduction", Duration::from_secs(1), spectral_factor_reproduction),
        ("factorization identity", Duration::from_secs(10), factorization_identity),
        ("disturbance spectrum", Duration::from_secs(5), disturbance_spectrum),
        ("DARE oracle", Duration::from_secs(5), dare_oracle),
        ("ALS consistency", Duration::from_secs(10), als_consistency),
        ("covariance recovery", Duration::from_secs(120), covariance_recovery),
        ("whiteness calibration", Duration::from_secs(10), whiteness_calibration),
        ("subspace identification recovery", Duration::from_secs(30), subspace_recovery),
        ("predictor equivalence", Duration::from_secs(30), predictor_equivalence),
        ("end-to-end pipeline determinism", Duration::from_secs(120), pipeline_determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if took <= *budget {
                Ok(detail)
            } else {
                Err(format!("took {:.2} s, budget {} s ({detail})", took.as_secs_f64(), budget.as_secs()))
            }
        });
        match outcome {
            Ok(detail) => println!("criterion {:2} PASS {name} [{:.2} s]: {detail}", i + 1, took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {:2} FAIL {name} [{:.2} s]: {why}", i + 1, took.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
