//! Annealed latent diffusion posterior sampling: one reverse step combines
//! the prior score, a scaled data-consistency gradient, and the gluing
//! penalty. Skipped steps run the prior diffusion only but still consume
//! exactly one noise draw, so trajectories with different skip settings
//! stay comparable draw-for-draw.

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;

use crate::codec::{gluing_residual, LinearCodec};
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::image::Image;
use crate::prior::ScoreModel;
use crate::rng::normal_vec;
use crate::sched::{reverse_coeffs, tweedie_estimate, NoiseSchedule};

/// Piecewise-linear annealing factor ζ_t: `zeta_start` for t ≥ `t_start`,
/// linear on [t_end, t_start], `zeta_end` held below `t_end`.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub t_start: usize,
    pub zeta_start: f64,
    pub t_end: usize,
    pub zeta_end: f64,
}

impl AnnealSchedule {
    pub fn new(t_start: usize, zeta_start: f64, t_end: usize, zeta_end: f64) -> Result<Self> {
        if t_start <= t_end {
            return Err(Error::InvalidParam("anneal needs t_start > t_end".into()));
        }
        if !(zeta_start >= zeta_end && zeta_end >= 1.0) {
            return Err(Error::InvalidParam(
                "anneal needs zeta_start >= zeta_end >= 1".into(),
            ));
        }
        Ok(Self { t_start, zeta_start, t_end, zeta_end })
    }

    /// 10 at t = 1000 annealing to 1 at t = 600, holding below.
    pub fn default_for(t_total: usize) -> Self {
        let t_end = (t_total as f64 * 0.6).round() as usize;
        Self {
            t_start: t_total,
            zeta_start: 10.0,
            t_end: t_end.max(1).min(t_total.saturating_sub(1).max(1)),
            zeta_end: 1.0,
        }
    }

    /// ζ ≡ 1: the non-annealed posterior-sampling coefficient.
    pub fn flat() -> Self {
        Self { t_start: 2, zeta_start: 1.0, t_end: 1, zeta_end: 1.0 }
    }

    pub fn scaled(self, factor: f64) -> Result<Self> {
        AnnealSchedule::new(
            self.t_start,
            self.zeta_start * factor,
            self.t_end,
            self.zeta_end * factor,
        )
    }
}

/// ζ_t evaluated at step t.
pub fn annealing_factor(a: &AnnealSchedule, t: usize) -> f64 {
    if t >= a.t_start {
        a.zeta_start
    } else if t <= a.t_end {
        a.zeta_end
    } else {
        let frac = (t - a.t_end) as f64 / (a.t_start - a.t_end) as f64;
        a.zeta_end + (a.zeta_start - a.zeta_end) * frac
    }
}

/// Annealing factor implied by a modeling-noise level: the likelihood
/// coefficient 1/(2(ν_t² + σ²)) rewritten as 1/(2 ζ_t σ²) gives
/// ζ_t = (ν_t² + σ²)/σ² ≥ 1.
pub fn zeta_from_model_noise(nu_t: f64, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParam("sigma must be positive".into()));
    }
    if nu_t < 0.0 {
        return Err(Error::InvalidParam("nu must be non-negative".into()));
    }
    Ok((nu_t * nu_t + sigma * sigma) / (sigma * sigma))
}

/// Latent sampler state: current z_t, its step index, the most recent
/// decoded estimate D(ẑ_0) (refreshed on full steps), and the owned
/// deterministic noise stream.
#[derive(Debug, Clone)]
pub struct EStepState {
    pub z: DVector<f64>,
    pub t: usize,
    pub x0_hat: Option<Image>,
    pub rng: ChaCha8Rng,
}

impl EStepState {
    pub fn new(z: DVector<f64>, t: usize, rng: ChaCha8Rng) -> Self {
        Self { z, t, x0_hat: None, rng }
    }

    /// Standard-normal initialization at t = T from the given stream.
    pub fn init_standard_normal(dim: usize, t_total: usize, mut rng: ChaCha8Rng) -> Self {
        let z = DVector::from_vec(normal_vec(&mut rng, dim));
        Self { z, t: t_total, x0_hat: None, rng }
    }
}

/// Knobs of the conditional part of a reverse step.
#[derive(Debug, Clone, Copy)]
pub struct EStepOptions {
    pub anneal: AnnealSchedule,
    pub gluing_weight: f64,
    /// Global multiplier on the data-consistency gradient. The literal
    /// coefficient is 1/(2 ζ_t σ²); this rescales it wholesale so the step
    /// size can be calibrated to the score regime of the analytic priors.
    pub dc_scale: f64,
}

impl EStepOptions {
    pub fn new(anneal: AnnealSchedule, gluing_weight: f64, dc_scale: f64) -> Result<Self> {
        if gluing_weight < 0.0 {
            return Err(Error::InvalidParam("gluing weight must be >= 0".into()));
        }
        if dc_scale <= 0.0 {
            return Err(Error::InvalidParam("dc_scale must be positive".into()));
        }
        Ok(Self { anneal, gluing_weight, dc_scale })
    }
}

/// Per-step trace record.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub t: usize,
    pub zeta: f64,
    pub residual_norm: Option<f64>,
    pub gluing_value: Option<f64>,
    pub skipped: bool,
}

/// (∂ẑ_0/∂z_t)ᵀ v = (v + (1−ᾱ_t)·Jᵀv)/√ᾱ_t, with J the score Jacobian.
/// Score Jacobians are symmetric, so the model's forward application works.
pub fn chain_through_tweedie(
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    z_t: &DVector<f64>,
    t: usize,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ab = sched.alpha_bar(t);
    let jv = model.jacobian_apply(sched, z_t, t, v)?;
    Ok((v + jv * (1.0 - ab)) / ab.sqrt())
}

/// Gradient of (1/(2 ζ_t σ²))‖y − A(D(ẑ_0(z_t)))‖² with respect to z_t,
/// differentiating through the score (ẑ_0 depends on z_t via the Tweedie
/// estimate). σ is taken from the operator.
pub fn data_consistency_gradient(
    y: &Image,
    a: &ForwardOperator,
    codec: &LinearCodec,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    state: &EStepState,
    zeta_t: f64,
) -> Result<DVector<f64>> {
    if a.sigma <= 0.0 {
        return Err(Error::InvalidParam(
            "data consistency needs sigma > 0".into(),
        ));
    }
    if zeta_t < 1.0 {
        return Err(Error::InvalidParam("zeta must be >= 1".into()));
    }
    let score = model.score(sched, &state.z, state.t)?;
    let z0_hat = tweedie_estimate(&state.z, &score, sched, state.t)?;
    let residual = y.sub(&a.apply(&codec.decode(&z0_hat)?)?)?;
    // ∂/∂ẑ_0 of the half-squared residual: −Wᵀ Aᵀ r / (ζ σ²)
    let pulled = codec.decode_transpose(&a.transpose_apply(&residual)?)?;
    let grad_wrt_z0 = pulled * (-1.0 / (zeta_t * a.sigma * a.sigma));
    chain_through_tweedie(model, sched, &state.z, state.t, &grad_wrt_z0)
}

/// The unconditional ancestral update z_{t−1} = c_z z_t + c_0 ẑ_0 + σ̃_t ε.
/// Draws exactly one ε from the state's stream. Returns the new latent and
/// the ẑ_0 it was built from.
pub fn prior_reverse_step(
    state: &mut EStepState,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if state.t == 0 {
        return Err(Error::StepOutOfRange { t: 0, max: sched.len() });
    }
    let score = model.score(sched, &state.z, state.t)?;
    let z0_hat = tweedie_estimate(&state.z, &score, sched, state.t)?;
    let (c_z, c_0, sigma_t) = reverse_coeffs(sched, state.t)?;
    let eps = DVector::from_vec(normal_vec(&mut state.rng, state.z.len()));
    let z_next = &state.z * c_z + &z0_hat * c_0 + eps * sigma_t;
    Ok((z_next, z0_hat))
}

/// Applies the annealed data-consistency and gluing gradients to a freshly
/// stepped latent. `x0_hat` must be the decode of `z0_hat`; the forward
/// operator is whatever the M-step currently believes.
#[allow(clippy::too_many_arguments)]
pub fn conditional_update(
    z_next: &mut DVector<f64>,
    state: &EStepState,
    z0_hat: &DVector<f64>,
    y: &Image,
    a: &ForwardOperator,
    codec: &LinearCodec,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    opts: &EStepOptions,
) -> Result<(f64, f64, f64)> {
    let zeta = annealing_factor(&opts.anneal, state.t);
    let dc = data_consistency_gradient(y, a, codec, model, sched, state, zeta)?;
    *z_next -= dc * opts.dc_scale;

    let x0 = codec.decode(z0_hat)?;
    let residual_norm = y.sub(&a.apply(&x0)?)?.norm();

    let gluing_value = if opts.gluing_weight > 0.0 {
        let (value, grad_z0) = gluing_residual(codec, z0_hat, y, a)?;
        let chained = chain_through_tweedie(model, sched, &state.z, state.t, &grad_z0)?;
        *z_next -= chained * opts.gluing_weight;
        value
    } else {
        gluing_residual(codec, z0_hat, y, a)?.0
    };
    Ok((zeta, residual_norm, gluing_value))
}

/// One full reverse step of the sampler: prior DDPM update, then (when
/// `run_full`) the data-consistency and gluing corrections with a fresh
/// `x0_hat` cache. Skipped steps do neither correction.
#[allow(clippy::too_many_arguments)]
pub fn estep_reverse_step(
    mut state: EStepState,
    y: &Image,
    a: &ForwardOperator,
    codec: &LinearCodec,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
    opts: &EStepOptions,
    run_full: bool,
) -> Result<(EStepState, StepRecord)> {
    let t = state.t;
    let (mut z_next, z0_hat) = prior_reverse_step(&mut state, model, sched)?;
    let record = if run_full {
        let (zeta, residual_norm, gluing_value) =
            conditional_update(&mut z_next, &state, &z0_hat, y, a, codec, model, sched, opts)?;
        state.x0_hat = Some(codec.decode(&z0_hat)?);
        StepRecord {
            t,
            zeta,
            residual_norm: Some(residual_norm),
            gluing_value: Some(gluing_value),
            skipped: false,
        }
    } else {
        StepRecord {
            t,
            zeta: annealing_factor(&opts.anneal, t),
            residual_norm: None,
            gluing_value: None,
            skipped: true,
        }
    };
    state.z = z_next;
    state.t = t - 1;
    Ok((state, record))
}
