//! Forward-operator MAP updates: half-quadratic-splitting blur-kernel
//! estimation with a plug-and-play denoiser, and gradient-based pose
//! estimation for the toy view task.

use num_complex::Complex;

use crate::codec::LinearCodec;
use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2_real};
use crate::forward::{normalize_angle, view_transform, Kernel, PoseParam};
use crate::image::Image;

/// HQS weights and loop count. `sigma` is the observation-noise level of
/// the measurement the kernel is fit against.
#[derive(Debug, Clone, Copy)]
pub struct HqsConfig {
    pub lambda: f64,
    pub delta: f64,
    pub iterations: usize,
    pub sigma: f64,
}

impl HqsConfig {
    pub fn new(lambda: f64, delta: f64, iterations: usize, sigma: f64) -> Result<Self> {
        if lambda <= 0.0 || delta <= 0.0 {
            return Err(Error::InvalidParam("lambda and delta must be positive".into()));
        }
        if iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        if sigma < 0.0 {
            return Err(Error::InvalidParam("sigma must be >= 0".into()));
        }
        Ok(Self { lambda, delta, iterations, sigma })
    }

    /// λ = 1, δ = 5e6, 20 iterations.
    pub fn defaults(sigma: f64) -> Self {
        Self { lambda: 1.0, delta: 5e6, iterations: 20, sigma }
    }

    pub fn denoiser_sigma(&self) -> f64 {
        (self.lambda / self.delta).sqrt()
    }
}

/// Plug-and-play regularization step: maps a kernel-shaped grid to a
/// cleaned grid given the denoising level σ_d = √(λ/δ).
pub trait Denoiser {
    fn denoise(&self, noisy: &Kernel, sigma_d: f64) -> Result<Kernel>;
}

/// Projects onto the physical kernel constraints; always returns a
/// feasible kernel regardless of σ_d.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectionDenoiser;

impl Denoiser for ProjectionDenoiser {
    fn denoise(&self, noisy: &Kernel, _sigma_d: f64) -> Result<Kernel> {
        Ok(simplex_project(noisy))
    }
}

/// Gaussian smoothing of width σ_d followed by the simplex projection.
#[derive(Debug, Clone, Copy, Default)]
pub struct SmoothingDenoiser;

impl Denoiser for SmoothingDenoiser {
    fn denoise(&self, noisy: &Kernel, sigma_d: f64) -> Result<Kernel> {
        if sigma_d <= 0.0 {
            return Ok(simplex_project(noisy));
        }
        let k = noisy.size();
        let half = (k / 2) as i64;
        let mut smoothed = vec![0.0; k * k];
        for u in 0..k as i64 {
            for v in 0..k as i64 {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for du in -half..=half {
                    for dv in -half..=half {
                        let (su, sv) = (u + du, v + dv);
                        if su < 0 || sv < 0 || su >= k as i64 || sv >= k as i64 {
                            continue;
                        }
                        let w = (-((du * du + dv * dv) as f64)
                            / (2.0 * sigma_d.max(1e-3).powi(2)))
                        .exp();
                        acc += w * noisy.get(su as usize, sv as usize);
                        wsum += w;
                    }
                }
                smoothed[(u as usize) * k + v as usize] = acc / wsum;
            }
        }
        Ok(simplex_project(&Kernel::new(k, smoothed)?))
    }
}

/// Exact minimizer of (1/2σ²)‖x̂_0 ∗ Z − y‖² + (δ/2)‖Z − φ_prev‖² over the
/// full grid, solved per Fourier bin and cropped back to kernel support:
/// F(Z) = (conj(F(x̂_0))·F(y) + δσ²·F(φ_prev)) / (|F(x̂_0)|² + δσ²).
pub fn hqs_data_update(
    y: &Image,
    x0_hat: &Image,
    phi_prev: &Kernel,
    cfg: &HqsConfig,
) -> Result<Kernel> {
    if !y.same_shape(x0_hat) {
        return Err(Error::Dimension("y and x0_hat shapes differ".into()));
    }
    let (h, w) = (y.height(), y.width());
    let fy = fft2(y);
    let fx = fft2(x0_hat);
    let fphi = fft2(&phi_prev.embed(h, w)?);
    let reg = cfg.delta * cfg.sigma * cfg.sigma;
    let mut fz = vec![Complex::new(0.0, 0.0); h * w];
    for i in 0..h * w {
        let denom = fx[i].norm_sqr() + reg;
        if denom == 0.0 {
            return Err(Error::Singular(format!(
                "HQS data update: |F(x0_hat)|^2 + delta*sigma^2 = 0 at bin {i}"
            )));
        }
        fz[i] = (fx[i].conj() * fy[i] + fphi[i] * reg) / denom;
    }
    let grid = ifft2_real(&fz, h, w);
    Kernel::crop_from(&grid, phi_prev.size())
}

/// Euclidean projection onto {k : k ≥ 0, Σk = 1} (sort-based).
pub fn simplex_project_slice(v: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    let mut rho = 0usize;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let candidate = (cumsum - 1.0) / (i as f64 + 1.0);
        if u - candidate > 0.0 {
            rho = i + 1;
            tau = candidate;
        }
    }
    debug_assert!(rho > 0);
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

pub fn simplex_project(v: &Kernel) -> Kernel {
    Kernel::new(v.size(), simplex_project_slice(v.values())).expect("same shape")
}

/// HQS loop: alternate the Fourier data update with the plug-and-play
/// denoiser for `cfg.iterations` rounds, then project so the returned
/// kernel satisfies its physical constraints.
pub fn estimate_kernel(
    y: &Image,
    x0_hat: &Image,
    phi_prev: &Kernel,
    cfg: &HqsConfig,
    denoiser: &dyn Denoiser,
) -> Result<Kernel> {
    let sigma_d = cfg.denoiser_sigma();
    let mut phi = phi_prev.clone();
    for _ in 0..cfg.iterations {
        let z = hqs_data_update(y, x0_hat, &phi, cfg)?;
        phi = denoiser.denoise(&z, sigma_d)?;
    }
    let phi = simplex_project(&phi);
    phi.validate_feasible()?;
    Ok(phi)
}

/// Trace of a pose update; flatness indicates a degenerate (rotationally
/// symmetric) alignment target where the angle is unidentifiable.
#[derive(Debug, Clone)]
pub struct PoseEstimate {
    pub pose: PoseParam,
    pub loss_start: f64,
    pub loss_end: f64,
    pub flat: bool,
}

/// Alignment loss λ‖z(y2, φ) − z(x̂_0, 0)‖² + δ‖z(y2, φ) − z(y1, φ1)‖²
/// with z(y, φ) = encode(rotate(y, φ)).
pub fn pose_alignment_loss(
    angle: f64,
    y2: &Image,
    x0_hat: &Image,
    y1: &Image,
    phi1: &PoseParam,
    lambda: f64,
    delta: f64,
    codec: &LinearCodec,
) -> Result<f64> {
    let z2 = codec.encode(&view_transform(y2, &PoseParam::from_angle(angle))?)?;
    let z_synth = codec.encode(x0_hat)?;
    let z_ref = codec.encode(&view_transform(y1, phi1)?)?;
    Ok(lambda * (&z2 - z_synth).norm_squared() + delta * (&z2 - z_ref).norm_squared())
}

const POSE_FD_STEP: f64 = 1e-3;
const POSE_FLAT_GRAD: f64 = 1e-4;

/// Gradient descent on the scalar angle with a central-difference gradient
/// (step 1e−3 rad; the rotation's interpolation makes analytic gradients
/// brittle). Non-convergence is not an error; callers inspect the losses.
#[allow(clippy::too_many_arguments)]
pub fn estimate_pose(
    y2: &Image,
    x0_hat: &Image,
    y1: &Image,
    phi1: &PoseParam,
    phi2_prev: &PoseParam,
    lambda: f64,
    delta: f64,
    lr: f64,
    steps: usize,
    codec: &LinearCodec,
) -> Result<PoseEstimate> {
    if lr <= 0.0 {
        return Err(Error::InvalidParam("learning rate must be positive".into()));
    }
    let loss = |angle: f64| pose_alignment_loss(angle, y2, x0_hat, y1, phi1, lambda, delta, codec);
    let mut angle = phi2_prev.angle;
    let loss_start = loss(angle)?;
    let mut max_grad: f64 = 0.0;
    for _ in 0..steps {
        let g = (loss(angle + POSE_FD_STEP)? - loss(angle - POSE_FD_STEP)?) / (2.0 * POSE_FD_STEP);
        max_grad = max_grad.max(g.abs());
        angle = normalize_angle(angle - lr * g);
    }
    let loss_end = loss(angle)?;
    Ok(PoseEstimate {
        pose: PoseParam::from_angle(angle),
        loss_start,
        loss_end,
        flat: steps > 0 && max_grad < POSE_FLAT_GRAD,
    })
}

/// Balance schedule for the pose M-step: λ/δ rises linearly from
/// `ratio_start` at t = T to 1 at t = 0, with δ fixed at 1.
pub const LAMBDA_DELTA_RATIO_START: f64 = 0.05;

pub fn lambda_delta_schedule(t: usize, t_total: usize) -> (f64, f64) {
    let frac = 1.0 - t as f64 / t_total as f64;
    let ratio = LAMBDA_DELTA_RATIO_START + (1.0 - LAMBDA_DELTA_RATIO_START) * frac;
    (ratio, 1.0)
}
