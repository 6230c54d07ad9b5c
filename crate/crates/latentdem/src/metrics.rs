//! Image and kernel quality metrics: PSNR, SSIM, MSE, MNC.

use crate::error::{Error, Result};
use crate::forward::Kernel;
use crate::image::Image;

/// PSNR is capped at 100 dB so identical inputs stay finite in reports.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
    pub mnc: Option<f64>,
    pub kernel_mse: Option<f64>,
}

/// Mean of squared differences.
pub fn mse_grid(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension("mse needs equal shapes".into()));
    }
    Ok(a.data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

/// 10·log10(peak²/MSE), capped at 100 dB when the MSE vanishes.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    let mse = mse_grid(a, b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

const SSIM_WINDOW: usize = 8;

/// Mean SSIM over all 8×8 sliding windows (stride 1), stabilizers
/// C1 = (0.01·peak)², C2 = (0.03·peak)², peak = 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Dimension("ssim needs equal shapes".into()));
    }
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images"
        )));
    }
    let c1 = 0.01f64.powi(2);
    let c2 = 0.03f64.powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=(a.height() - SSIM_WINDOW) {
        for j0 in 0..=(a.width() - SSIM_WINDOW) {
            let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in i0..i0 + SSIM_WINDOW {
                for j in j0..j0 + SSIM_WINDOW {
                    let (x, y) = (a.get(i, j), b.get(i, j));
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (mu_a, mu_b) = (sa / n, sb / n);
            let var_a = saa / n - mu_a * mu_a;
            let var_b = sbb / n - mu_b * mu_b;
            let cov = sab / n - mu_a * mu_b;
            let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += value;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Maximum over all circular shifts of the normalized correlation
/// ⟨shift(k̂, s), k*⟩ / (‖k̂‖·‖k*‖). Shift-invariant; scale-invariant in
/// each argument; 1 for identical (or purely shifted) kernels.
pub fn mnc(k_hat: &Kernel, k_true: &Kernel) -> Result<f64> {
    if k_hat.size() != k_true.size() {
        return Err(Error::Dimension("mnc needs equal kernel sizes".into()));
    }
    let n = k_hat.size();
    let denom = k_hat.norm() * k_true.norm();
    if denom == 0.0 {
        return Err(Error::InvalidParam("mnc undefined for a zero kernel".into()));
    }
    let mut best = f64::NEG_INFINITY;
    for du in 0..n {
        for dv in 0..n {
            let mut acc = 0.0;
            for u in 0..n {
                for v in 0..n {
                    acc += k_hat.get((u + du) % n, (v + dv) % n) * k_true.get(u, v);
                }
            }
            best = best.max(acc);
        }
    }
    Ok(best / denom)
}

/// Kernel mean-squared error without shift alignment.
pub fn kernel_mse(k_hat: &Kernel, k_true: &Kernel) -> Result<f64> {
    if k_hat.size() != k_true.size() {
        return Err(Error::Dimension("kernel mse needs equal sizes".into()));
    }
    Ok(k_hat
        .values()
        .iter()
        .zip(k_true.values().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / k_hat.values().len() as f64)
}

pub fn report(
    a: &Image,
    b: &Image,
    k_hat: Option<&Kernel>,
    k_true: Option<&Kernel>,
) -> Result<MetricReport> {
    let (mnc_value, kmse) = match (k_hat, k_true) {
        (Some(kh), Some(kt)) => (Some(mnc(kh, kt)?), Some(kernel_mse(kh, kt)?)),
        _ => (None, None),
    };
    Ok(MetricReport {
        psnr_db: psnr(a, b, 1.0)?,
        ssim: ssim(a, b)?,
        mse: mse_grid(a, b)?,
        mnc: mnc_value,
        kernel_mse: kmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{named_stream, normal_vec};
    use approx::assert_relative_eq;

    #[test]
    fn psnr_cap_and_arithmetic() {
        let a = Image::constant(8, 8, 0.5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), 100.0);
        let b = Image::constant(8, 8, 0.6);
        assert_relative_eq!(psnr(&a, &b, 1.0).unwrap(), 20.0, epsilon = 1e-9);
        let c = Image::constant(8, 8, 1.5);
        assert_relative_eq!(psnr(&a, &c, 1.0).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let a = Image::constant(8, 8, 0.5);
        let mut last = f64::INFINITY;
        for d in [0.01, 0.05, 0.1, 0.2] {
            let b = Image::constant(8, 8, 0.5 + d);
            let p = psnr(&a, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn mse_examples() {
        let a = Image::constant(4, 4, 0.2);
        assert_eq!(mse_grid(&a, &a).unwrap(), 0.0);
        let b = Image::constant(4, 4, 1.2);
        assert_relative_eq!(mse_grid(&a, &b).unwrap(), 1.0, epsilon = 1e-12);

        let mut rng = named_stream(80, "mse");
        let x = Image::new(4, 4, normal_vec(&mut rng, 16)).unwrap();
        let y = Image::new(4, 4, normal_vec(&mut rng, 16)).unwrap();
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += (x.get(i, j) - y.get(i, j)).powi(2);
            }
        }
        assert_relative_eq!(mse_grid(&x, &y).unwrap(), acc / 16.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let mut rng = named_stream(81, "ssim");
        let a = Image::new(12, 12, normal_vec(&mut rng, 144)).unwrap();
        assert_relative_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_negated_zero_mean_structure() {
        // zero-mean image against its negation: per-window value from the
        // direct formula, dominated by the sign-flipped covariance
        let mut rng = named_stream(82, "ssim2");
        let raw = normal_vec(&mut rng, 64);
        let mean = raw.iter().sum::<f64>() / 64.0;
        let a = Image::new(8, 8, raw.iter().map(|v| v - mean).collect()).unwrap();
        let b = a.scale(-1.0);
        let got = ssim(&a, &b).unwrap();

        // direct single-window evaluation
        let n = 64.0;
        let var = a.data().iter().map(|v| v * v).sum::<f64>() / n;
        let c1 = 1e-4;
        let c2 = 9e-4;
        let expect = c1 * (-2.0 * var + c2) / (c1 * (2.0 * var + c2));
        assert_relative_eq!(got, expect, epsilon = 1e-10);
        assert!(got < -0.9);
    }

    #[test]
    fn ssim_small_bias_stays_high() {
        let mut rng = named_stream(83, "ssim3");
        let vals: Vec<f64> = normal_vec(&mut rng, 256)
            .iter()
            .map(|v| 0.5 + 0.1 * v)
            .collect();
        let a = Image::new(16, 16, vals).unwrap();
        let b = a.map(|v| v + 0.01);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0 && s > 0.9, "ssim {s}");
    }

    #[test]
    fn mnc_identical_and_shifted() {
        let k = Kernel::gaussian2(5, 0.8, 1.1).unwrap();
        assert_relative_eq!(mnc(&k, &k).unwrap(), 1.0, epsilon = 1e-12);

        let mut a = Kernel::new(5, vec![0.0; 25]).unwrap();
        a.values_mut()[0] = 1.0; // delta at (0,0)
        let mut b = Kernel::new(5, vec![0.0; 25]).unwrap();
        b.values_mut()[5 + 2] = 1.0; // delta at (1,2)
        assert_relative_eq!(mnc(&a, &b).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mnc_delta_vs_uniform() {
        let d = Kernel::delta(3).unwrap();
        let u = Kernel::uniform(3).unwrap();
        assert_relative_eq!(mnc(&d, &u).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn mnc_symmetric_and_scale_invariant() {
        let mut rng = named_stream(84, "mnc");
        let a = Kernel::new(3, normal_vec(&mut rng, 9).iter().map(|v| v.abs()).collect()).unwrap();
        let b = Kernel::new(3, normal_vec(&mut rng, 9).iter().map(|v| v.abs()).collect()).unwrap();
        let ab = mnc(&a, &b).unwrap();
        assert_relative_eq!(ab, mnc(&b, &a).unwrap(), epsilon = 1e-12);
        let a2 = Kernel::new(3, a.values().iter().map(|v| 7.3 * v).collect()).unwrap();
        assert_relative_eq!(ab, mnc(&a2, &b).unwrap(), epsilon = 1e-12);
        assert!(ab <= 1.0 + 1e-12 && ab >= 0.0);
    }
}
