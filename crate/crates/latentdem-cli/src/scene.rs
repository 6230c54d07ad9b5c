//! Synthetic ground-truth scenes with recorded seeds, so every benchmark
//! is self-contained and reproducible.

use anyhow::{bail, Context, Result};
use latentdem::rng::ChaCha8Rng;

use latentdem::codec::LinearCodec;
use latentdem::forward::{add_noise, view_transform, ForwardOperator, Kernel, PoseParam};
use latentdem::image::Image;
use latentdem::rng::{named_stream, normal_vec};

use crate::config::{parse_kernel_spec, AnalyticPrior, RunConfig};

/// Deterministic per-trial seed derived from the master seed.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    use rand::Rng;
    named_stream(master, &format!("trial-{trial}")).random()
}

pub struct DeblurScene {
    pub x_true: Image,
    pub kernel_true: Kernel,
    pub y: Image,
}

/// Samples z* from the prior, decodes, blurs with the spec'd kernel and
/// adds observation noise — all from the scene's own named stream.
pub fn synth_deblur_scene(
    cfg: &RunConfig,
    codec: &LinearCodec,
    prior: &AnalyticPrior,
    seed: u64,
) -> Result<DeblurScene> {
    let mut rng = named_stream(seed, "scene");
    let spec = cfg
        .scene
        .kernel
        .as_deref()
        .context("scene synthesis needs scene.kernel")?;
    let kernel_true = parse_kernel_spec(spec, &mut rng)?;
    let z_star = prior.sample(&mut rng);
    let x_true = codec.decode(&z_star)?;
    let op = ForwardOperator::convolution(kernel_true.clone(), cfg.scene.sigma);
    let y = op.observe(&x_true, &mut rng)?;
    Ok(DeblurScene { x_true, kernel_true, y })
}

pub struct PosefreeScene {
    pub y1: Image,
    pub y2: Image,
    pub phi1: PoseParam,
    pub theta_true: f64,
}

/// Reference view: band-limited blob, constant outside a radial window so
/// rotations never touch the periodic boundary. Second view: the reference
/// rotated by the planted angle, plus observation noise.
pub fn synth_posefree_scene(cfg: &RunConfig, seed: u64) -> Result<PosefreeScene> {
    let (h, w) = (cfg.scene.height, cfg.scene.width);
    if h != w {
        bail!("posefree scenes must be square");
    }
    let theta_true = cfg
        .scene
        .pose_deg
        .context("posefree scene needs scene.pose_deg")?
        .to_radians();
    let mut rng = named_stream(seed, "scene");
    let y1 = windowed_blob(h, &mut rng);
    let rotated = view_transform(&y1, &PoseParam::from_angle(theta_true))?;
    let y2 = add_noise(&rotated, cfg.scene.sigma, &mut rng)?;
    Ok(PosefreeScene { y1, y2, phi1: PoseParam::identity(), theta_true })
}

pub fn windowed_blob(n: usize, rng: &mut ChaCha8Rng) -> Image {
    let c = normal_vec(rng, 6);
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
