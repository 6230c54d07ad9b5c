//! Shared helpers for unit tests.

use crate::image::Image;
use crate::rng::{named_stream, normal_vec};

/// Band-limited blob: smooth wave content inside a radial window, constant
/// 0.5 outside, so rotations never interact with the periodic boundary.
pub(crate) fn windowed_blob(n: usize, seed: u64) -> Image {
    let mut rng = named_stream(seed, "windowed-blob");
    let c = normal_vec(&mut rng, 6);
    let center = (n as f64 - 1.0) / 2.0;
    let r_max = 0.38 * n as f64;
    let mut img = Image::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (y, x) = (i as f64 / n as f64, j as f64 / n as f64);
            let tau = std::f64::consts::TAU;
            let wave = 0.2 * c[0] * (tau * y).sin()
                + 0.2 * c[1] * (tau * x).cos()
                + 0.12 * c[2] * (tau * (x + 2.0 * y)).sin()
                + 0.1 * c[3] * (2.0 * tau * x).cos()
                + 0.08 * c[4] * (tau * (2.0 * x - y)).sin();
            let r = ((i as f64 - center).powi(2) + (j as f64 - center).powi(2)).sqrt();
            // smooth falloff to zero well before the boundary
            let window = if r >= r_max {
                0.0
            } else {
                let u = r / r_max;
                (1.0 - u * u).powi(2)
            };
            img.set(i, j, 0.5 + window * wave);
        }
    }
    img
}
