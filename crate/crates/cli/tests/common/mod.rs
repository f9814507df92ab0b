#![allow(dead_code)]

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::StandardNormal;
use spotkal::kalman::{build_abg_model, pole_place_observer};
use spotkal::lticore::{seeded_rng, Channel, TimeSeries};
use spotkal::subid::simulate_innovation_model;

pub const CAMERA_H: f64 = 0.0177;

/// Fourth-order innovation-form truth: two lightly damped resonances, a
/// seeded random output map and predictor poles at radius 0.9 with seeded
/// random angles. Returns `(A, Ltilde, C)`.
pub fn fourth_order_truth(seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = seeded_rng(seed);
    let rot = |r: f64, t: f64| [r * t.cos(), -r * t.sin(), r * t.sin(), r * t.cos()];
    let (b1, b2) = (rot(0.99, 0.222), rot(0.98, 1.11));
    let mut a = DMatrix::zeros(4, 4);
    for (off, b) in [(0, b1), (2, b2)] {
        a[(off, off)] = b[0];
        a[(off, off + 1)] = b[1];
        a[(off + 1, off)] = b[2];
        a[(off + 1, off + 1)] = b[3];
    }
    let c = DMatrix::from_fn(1, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let t1: f64 = rng.random_range(0.3..0.8);
    let t2: f64 = rng.random_range(1.2..2.2);
    let poles = [t1, -t1, t2, -t2].map(|t| Complex64::from_polar(0.9, t));
    let l = pole_place_observer(&a, &c, &poles).expect("observable truth");
    let lt = &a * &l.0;
    (a, lt, c)
}

/// `samples` outputs of the truth after a 2000-sample burn-in.
pub fn truth_output(seed: u64, samples: usize) -> DMatrix<f64> {
    let (a, lt, c) = fourth_order_truth(seed);
    simulate_innovation_model(&a, &lt, &c, 1.0, samples, 2000, &mut seeded_rng(100 + seed)).0
}

pub fn single_track(values: Vec<f64>, h: f64) -> TimeSeries {
    TimeSeries::new(0.0, h, vec![Channel { name: "x".into(), values }]).unwrap()
}

/// Position measurements of the constant-acceleration truth.
pub fn abg_track(seed: u64, samples: usize, sigma_w: f64, sigma_v: f64) -> TimeSeries {
    let model = build_abg_model(CAMERA_H, sigma_w, sigma_v).unwrap();
    let (_, y) = model.simulate(samples, &mut seeded_rng(seed));
    single_track(y.row(0).iter().copied().collect(), CAMERA_H)
}

pub fn write_track(ts: &TimeSeries, path: &Path) {
    let mut buf = Vec::new();
    ts.write_csv(&mut buf).unwrap();
    std::fs::write(path, buf).unwrap();
}
