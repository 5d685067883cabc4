use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fixed Poisson input with three time-varying pseudo-targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTask {
    /// Binary `[T, n_in]` spike raster.
    pub input: Array2<f32>,
    /// Ramp, fast sinusoid and slow sinusoid, each of length `T` and in `[0, 1]`.
    pub targets: [Vec<f64>; 3],
    pub dt_ms: f64,
}

pub const FAST_HZ: f64 = 10.0;
pub const SLOW_HZ: f64 = 2.0;

/// Bernoulli(rate·dt) raster, identical for identical seeds.
pub fn poisson_regression_task(
    n_in: usize,
    rate_hz: f64,
    steps: usize,
    dt_ms: f64,
    seed: u64,
) -> Result<RegressionTask> {
    let p = rate_hz * dt_ms / 1000.0;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!(
            "rate {rate_hz} Hz gives spike probability {p} per {dt_ms} ms step"
        )));
    }
    if steps < 2 {
        return Err(Error::Config("regression task needs at least two steps".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Array2::from_shape_simple_fn((steps, n_in), || if rng.gen::<f64>() < p { 1.0 } else { 0.0 });
    let time = |k: usize| k as f64 * dt_ms / 1000.0;
    let wave = |hz: f64| -> Vec<f64> {
        (0..steps)
            .map(|k| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * hz * time(k)).sin())
            .collect()
    };
    let ramp = (0..steps).map(|k| k as f64 / (steps - 1) as f64).collect();
    Ok(RegressionTask {
        input,
        targets: [ramp, wave(FAST_HZ), wave(SLOW_HZ)],
        dt_ms,
    })
}
