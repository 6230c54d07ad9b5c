//! 2D FFT helpers over row-major grids.

use num_complex::Complex;
use rustfft::FftPlanner;

use crate::image::Image;

/// Forward 2D DFT of a real grid (unnormalized).
pub fn fft2(img: &Image) -> Vec<Complex<f64>> {
    let buf: Vec<Complex<f64>> = img.data().iter().map(|&x| Complex::new(x, 0.0)).collect();
    transform2(buf, img.height(), img.width(), rustfft::FftDirection::Forward)
}

/// Inverse 2D DFT, normalized by 1/(H·W).
pub fn ifft2(spectrum: &[Complex<f64>], height: usize, width: usize) -> Vec<Complex<f64>> {
    let mut out = transform2(
        spectrum.to_vec(),
        height,
        width,
        rustfft::FftDirection::Inverse,
    );
    let scale = 1.0 / (height * width) as f64;
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Real part of the inverse transform as an image.
pub fn ifft2_real(spectrum: &[Complex<f64>], height: usize, width: usize) -> Image {
    let full = ifft2(spectrum, height, width);
    Image::new(height, width, full.iter().map(|c| c.re).collect())
        .expect("spectrum length matches grid")
}

fn transform2(
    mut buf: Vec<Complex<f64>>,
    height: usize,
    width: usize,
    direction: rustfft::FftDirection,
) -> Vec<Complex<f64>> {
    assert_eq!(buf.len(), height * width);
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for j in 0..width {
        for i in 0..height {
            col[i] = buf[i * width + j];
        }
        col_fft.process(&mut col);
        for i in 0..height {
            buf[i * width + j] = col[i];
        }
    }
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{named_stream, normal_vec};

    #[test]
    fn delta_has_flat_spectrum() {
        let img = Image::delta(4, 4, 0, 0);
        let spec = fft2(&img);
        for c in spec {
            assert!((c.re - 1.0).abs() < 1e-12 && c.im.abs() < 1e-12);
        }
    }

    #[test]
    fn constant_concentrates_in_dc_bin() {
        let img = Image::constant(4, 6, 0.5);
        let spec = fft2(&img);
        assert!((spec[0].re - 0.5 * 24.0).abs() < 1e-10);
        for c in spec.iter().skip(1) {
            assert!(c.norm() < 1e-10);
        }
    }

    #[test]
    fn roundtrip_and_parseval() {
        let mut rng = named_stream(3, "fft-roundtrip");
        let data = normal_vec(&mut rng, 8 * 16);
        let img = Image::new(8, 16, data).unwrap();
        let spec = fft2(&img);
        let back = ifft2_real(&spec, 8, 16);
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1e-10);
        }
        let spatial_energy: f64 = img.data().iter().map(|x| x * x).sum();
        let spectral_energy: f64 = spec.iter().map(|c| c.norm_sqr()).sum::<f64>() / (8.0 * 16.0);
        assert!((spatial_energy - spectral_energy).abs() < 1e-9);
    }
}
