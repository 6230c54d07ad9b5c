//! Parameterized forward operators: circular convolution for deblurring, a
//! toy in-plane view rotation for the pose task, plus noise injection.
//!
//! Convolution kernels are anchored at the grid origin under the FFT
//! embedding: the k×k kernel with center index c = (k−1)/2 maps entry
//! (u, v) to grid position ((u−c) mod H, (v−c) mod W). [`Kernel::embed`]
//! and [`Kernel::crop_from`] are exact inverses on that support, so kernel
//! comparisons stay shift-consistent across the pipeline.

use std::path::Path;

use num_complex::Complex;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::image::Image;

/// k×k convolution kernel, k odd. A physically valid kernel is
/// non-negative with unit sum; intermediate M-step grids may violate both,
/// so feasibility is checked only by [`Kernel::validate_feasible`].
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    values: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::InvalidParam(format!("kernel size {size} must be odd")));
        }
        if values.len() != size * size {
            return Err(Error::Dimension(format!(
                "kernel needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        Ok(Self { size, values })
    }

    pub fn delta(size: usize) -> Result<Self> {
        let mut k = Self::new(size, vec![0.0; size * size])?;
        let c = size / 2;
        k.values[c * size + c] = 1.0;
        Ok(k)
    }

    pub fn uniform(size: usize) -> Result<Self> {
        let n = size * size;
        Self::new(size, vec![1.0 / n as f64; n])
    }

    /// Unit-sum anisotropic Gaussian with per-axis widths.
    pub fn gaussian2(size: usize, sigma_row: f64, sigma_col: f64) -> Result<Self> {
        if sigma_row <= 0.0 || sigma_col <= 0.0 {
            return Err(Error::InvalidParam("gaussian widths must be positive".into()));
        }
        let c = (size / 2) as f64;
        let mut values = Vec::with_capacity(size * size);
        for u in 0..size {
            for v in 0..size {
                let du = u as f64 - c;
                let dv = v as f64 - c;
                values.push(
                    (-du * du / (2.0 * sigma_row * sigma_row)
                        - dv * dv / (2.0 * sigma_col * sigma_col))
                        .exp(),
                );
            }
        }
        let sum: f64 = values.iter().sum();
        for v in &mut values {
            *v /= sum;
        }
        Self::new(size, values)
    }

    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        Self::gaussian2(size, sigma, sigma)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[u * self.size + v]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the physical constraints: entries ≥ 0 and sum = 1 ± 1e−9.
    pub fn validate_feasible(&self) -> Result<()> {
        if self.values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParam("kernel has negative entries".into()));
        }
        if (self.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!(
                "kernel sum {} not within 1e-9 of 1",
                self.sum()
            )));
        }
        Ok(())
    }

    /// Embeds into an H×W grid with the kernel center at the origin.
    pub fn embed(&self, height: usize, width: usize) -> Result<Image> {
        if self.size > height || self.size > width {
            return Err(Error::Dimension(format!(
                "kernel {0}x{0} larger than image {1}x{2}",
                self.size, height, width
            )));
        }
        let c = (self.size / 2) as i64;
        let mut grid = Image::zeros(height, width);
        for u in 0..self.size {
            for v in 0..self.size {
                let r = (u as i64 - c).rem_euclid(height as i64) as usize;
                let cc = (v as i64 - c).rem_euclid(width as i64) as usize;
                grid.set(r, cc, self.get(u, v));
            }
        }
        Ok(grid)
    }

    /// Inverse of [`Kernel::embed`]: reads the k×k support back out of a grid.
    pub fn crop_from(grid: &Image, size: usize) -> Result<Self> {
        if size % 2 == 0 || size > grid.height() || size > grid.width() {
            return Err(Error::Dimension(format!(
                "cannot crop {size}x{size} kernel from {}x{} grid",
                grid.height(),
                grid.width()
            )));
        }
        let c = (size / 2) as i64;
        let mut values = vec![0.0; size * size];
        for u in 0..size {
            for v in 0..size {
                values[u * size + v] = grid.get_periodic(u as i64 - c, v as i64 - c);
            }
        }
        Self::new(size, values)
    }

    /// 180°-rotated copy; convolving with it applies the adjoint.
    pub fn flipped(&self) -> Kernel {
        let mut values = vec![0.0; self.size * self.size];
        for u in 0..self.size {
            for v in 0..self.size {
                values[u * self.size + v] = self.get(self.size - 1 - u, self.size - 1 - v);
            }
        }
        Kernel { size: self.size, values }
    }

    /// Text format: first line k, then k² whitespace-separated decimals.
    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut s = format!("{}\n", self.size);
        for row in self.values.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens = text.split_whitespace();
        let size: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("kernel file missing size".into()))?;
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad kernel value: {e}")))?;
        Self::new(size, values)
    }
}

/// Camera parameters for the toy view task. Only the in-plane angle is
/// estimated; the spherical fields are carried for interface completeness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParam {
    pub angle: f64,
    pub theta_polar: f64,
    pub azimuth: f64,
    pub radius: f64,
}

impl PoseParam {
    pub fn from_angle(angle: f64) -> Self {
        Self {
            angle: normalize_angle(angle),
            theta_polar: 0.0,
            azimuth: 0.0,
            radius: 1.0,
        }
    }

    pub fn identity() -> Self {
        Self::from_angle(0.0)
    }

    pub fn angle_degrees(&self) -> f64 {
        self.angle.to_degrees()
    }
}

/// Wraps into [0, 2π).
pub fn normalize_angle(angle: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut a = angle % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a
}

/// Circular 2D convolution via the FFT.
pub fn convolve(x: &Image, k: &Kernel) -> Result<Image> {
    let grid = k.embed(x.height(), x.width())?;
    let fx = fft2(x);
    let fk = fft2(&grid);
    let prod: Vec<Complex<f64>> = fx.iter().zip(fk.iter()).map(|(a, b)| a * b).collect();
    Ok(ifft2_real(&prod, x.height(), x.width()))
}

/// x + σ·ε with ε drawn elementwise from the given stream; σ = 0 is identity.
pub fn add_noise(x: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if sigma < 0.0 {
        return Err(Error::InvalidParam("noise sigma must be >= 0".into()));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let data = x
        .data()
        .iter()
        .map(|&v| {
            let e: f64 = StandardNormal.sample(rng);
            v + sigma * e
        })
        .collect();
    Image::new(x.height(), x.width(), data)
}

/// Rotates a square image about its center ((n−1)/2, (n−1)/2) by
/// `pose.angle`, bilinear interpolation with periodic padding.
pub fn view_transform(x: &Image, pose: &PoseParam) -> Result<Image> {
    if x.height() != x.width() {
        return Err(Error::Dimension(format!(
            "view transform needs a square image, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    let n = x.height();
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = pose.angle.sin_cos();
    let mut out = Image::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // inverse map: source position that lands on (i, j)
            let dy = i as f64 - c;
            let dx = j as f64 - c;
            let sy = c + cos * dy + sin * dx;
            let sx = c - sin * dy + cos * dx;
            out.set(i, j, bilinear_periodic(x, sy, sx));
        }
    }
    Ok(out)
}

/// Exact adjoint of [`view_transform`]: scatters with the same bilinear
/// weights the forward gather uses.
pub fn view_transform_transpose(v: &Image, pose: &PoseParam) -> Result<Image> {
    if v.height() != v.width() {
        return Err(Error::Dimension("view transform needs a square image".into()));
    }
    let n = v.height();
    let c = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = pose.angle.sin_cos();
    let mut out = Image::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let dy = i as f64 - c;
            let dx = j as f64 - c;
            let sy = c + cos * dy + sin * dx;
            let sx = c - sin * dy + cos * dx;
            let w = v.get(i, j);
            for (r, cc, weight) in bilinear_taps(n, sy, sx) {
                out.set(r, cc, out.get(r, cc) + weight * w);
            }
        }
    }
    Ok(out)
}

fn bilinear_taps(n: usize, y: f64, x: f64) -> [(usize, usize, f64); 4] {
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let wrap = |v: i64| v.rem_euclid(n as i64) as usize;
    let (r0, r1) = (wrap(y0 as i64), wrap(y0 as i64 + 1));
    let (c0, c1) = (wrap(x0 as i64), wrap(x0 as i64 + 1));
    [
        (r0, c0, (1.0 - fy) * (1.0 - fx)),
        (r0, c1, (1.0 - fy) * fx),
        (r1, c0, fy * (1.0 - fx)),
        (r1, c1, fy * fx),
    ]
}

fn bilinear_periodic(img: &Image, y: f64, x: f64) -> f64 {
    bilinear_taps(img.height(), y, x)
        .iter()
        .map(|&(r, c, w)| w * img.get(r, c))
        .sum()
}

/// Forward-model variants with a shared observation-noise level.
#[derive(Debug, Clone)]
pub enum OperatorKind {
    Convolution(Kernel),
    View(PoseParam),
    Identity,
    Zero,
}

/// A_φ with exact adjoint application and the noise level σ of Eq. y = A(x) + n.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    pub kind: OperatorKind,
    pub sigma: f64,
}

impl ForwardOperator {
    pub fn convolution(kernel: Kernel, sigma: f64) -> Self {
        Self { kind: OperatorKind::Convolution(kernel), sigma }
    }

    pub fn view(pose: PoseParam, sigma: f64) -> Self {
        Self { kind: OperatorKind::View(pose), sigma }
    }

    pub fn identity(sigma: f64) -> Self {
        Self { kind: OperatorKind::Identity, sigma }
    }

    pub fn zero(sigma: f64) -> Self {
        Self { kind: OperatorKind::Zero, sigma }
    }

    pub fn apply(&self, x: &Image) -> Result<Image> {
        match &self.kind {
            OperatorKind::Convolution(k) => convolve(x, k),
            OperatorKind::View(p) => view_transform(x, p),
            OperatorKind::Identity => Ok(x.clone()),
            OperatorKind::Zero => Ok(Image::zeros(x.height(), x.width())),
        }
    }

    pub fn transpose_apply(&self, v: &Image) -> Result<Image> {
        match &self.kind {
            OperatorKind::Convolution(k) => convolve(v, &k.flipped()),
            OperatorKind::View(p) => view_transform_transpose(v, p),
            OperatorKind::Identity => Ok(v.clone()),
            OperatorKind::Zero => Ok(Image::zeros(v.height(), v.width())),
        }
    }

    /// Observe x through the operator and add fresh noise.
    pub fn observe(&self, x: &Image, rng: &mut ChaCha8Rng) -> Result<Image> {
        add_noise(&self.apply(x)?, self.sigma, rng)
    }
}
