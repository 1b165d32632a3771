#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pidboost::Series;

pub const HOUR: i64 = 3600;
pub const START: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

/// Smooth daily-like cycle with a slower weekly component.
pub fn periodic(len: usize, period: usize) -> Vec<f64> {
    let tau = std::f64::consts::TAU;
    (0..len)
        .map(|i| {
            let phase = (i % period) as f64 / period as f64;
            let slow = (i % (7 * period)) as f64 / (7 * period) as f64;
            100.0 + 20.0 * (tau * phase).sin() + 6.0 * (2.0 * tau * phase).cos() + 4.0 * (tau * slow).sin()
        })
        .collect()
}

pub fn gaussian_noise(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

pub fn noisy(len: usize, period: usize, sigma: f64, seed: u64) -> Vec<f64> {
    periodic(len, period)
        .into_iter()
        .zip(gaussian_noise(len, sigma, seed))
        .map(|(a, b)| a + b)
        .collect()
}

pub fn hourly(values: Vec<f64>, period: usize) -> Series {
    Series::from_values(values, period, START, HOUR).unwrap()
}
