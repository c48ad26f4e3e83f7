//! Seeded synthetic images shared by the integration suites.
#![allow(dead_code)]

use std::f64::consts::PI;

use ndarray::Array2;
use patchsvd::metrics::RegionMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in `[lo, hi)`.
pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Flat background with a disk of spiral texture (rings wound three times
/// around the centre) plus mild noise. Returns the image and the disk as ROI
/// mask.
pub fn textured_disk(seed: u64, size: usize) -> (Array2<f64>, RegionMask) {
    let mut rng = rng(seed);
    let n = size as f64;
    let radius = n * rng.random_range(0.25..0.32);
    let cy = n / 2.0 + rng.random_range(-0.1..0.1) * n;
    let cx = n / 2.0 + rng.random_range(-0.1..0.1) * n;
    let period = rng.random_range(6.0..10.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let background = rng.random_range(30.0..60.0);
    let mut roi = Array2::from_elem((size, size), false);
    let image = Array2::from_shape_fn((size, size), |(i, j)| {
        let (y, x) = (i as f64 - cy, j as f64 - cx);
        let noise = rng.random_range(-2.0..2.0);
        let r = y.hypot(x);
        if r <= radius {
            roi[[i, j]] = true;
            150.0 + 80.0 * (2.0 * PI * r / period + 3.0 * y.atan2(x) + phase).sin() + noise
        } else {
            background + noise
        }
    });
    (image, RegionMask::new(roi))
}

/// Sum of a few low-frequency sinusoids with seeded phases and frequencies.
pub fn smooth_sinusoids(seed: u64, size: usize) -> Array2<f64> {
    let mut rng = rng(seed);
    let terms: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(10.0..30.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let n = size as f64;
    Array2::from_shape_fn((size, size), |(i, j)| {
        let (y, x) = (i as f64 / n, j as f64 / n);
        128.0
            + terms
                .iter()
                .map(|&(a, fy, fx, ph)| a * (2.0 * PI * (fy * y + fx * x) + ph).sin())
                .sum::<f64>()
    })
}

/// Left half flat, right half high-variance noise.
pub fn flat_and_noise(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = rng(seed);
    Array2::from_shape_fn((rows, cols), |(_, j)| {
        if j < cols / 2 {
            10.0
        } else {
            rng.random_range(0.0..255.0)
        }
    })
}
