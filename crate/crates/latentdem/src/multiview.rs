//! View-consistent score combination for the pose-free task.
//!
//! Two single-view reverse transitions, both Gaussian under the Langevin
//! discretization, multiply into one Gaussian whose mean uses the
//! weighted-average score (1−γ_t)s₁ + γ_t s₂ with γ_t = β_t/(2β_t + ν_t²)
//! and whose variance is β_t(β_t + ν_t²)/(2β_t + ν_t²). The reference view
//! carries variance β_t; the unposed view carries β_t + ν_t² to absorb
//! pose-model error, which vanishes as the pose estimate converges.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estep::EStepState;
use crate::prior::ScoreModel;
use crate::rng::normal_vec;
use crate::sched::NoiseSchedule;

/// Time-dependent pose-model error scale ν_t, linear in t by default:
/// ν_t = nu_max · t / T, so ν_0 = 0 and the weight γ_t grows to 1/2.
#[derive(Debug, Clone, Copy)]
pub struct ViewWeightSchedule {
    pub nu_max: f64,
    pub t_total: usize,
}

impl ViewWeightSchedule {
    pub fn new(nu_max: f64, t_total: usize) -> Result<Self> {
        if nu_max < 0.0 {
            return Err(Error::InvalidParam("nu_max must be >= 0".into()));
        }
        if t_total == 0 {
            return Err(Error::InvalidParam("t_total must be >= 1".into()));
        }
        Ok(Self { nu_max, t_total })
    }

    pub fn nu(&self, t: usize) -> f64 {
        if t == 0 {
            return 0.0;
        }
        if self.nu_max.is_infinite() {
            return f64::INFINITY;
        }
        self.nu_max * t as f64 / self.t_total as f64
    }
}

/// γ_t = β_t / (2β_t + ν_t²) ∈ (0, 1/2]; exactly 0 for infinite ν.
pub fn gamma_t(beta_t: f64, nu_t: f64) -> Result<f64> {
    if beta_t <= 0.0 {
        return Err(Error::InvalidParam("gamma_t needs beta_t > 0".into()));
    }
    if nu_t < 0.0 {
        return Err(Error::InvalidParam("nu_t must be >= 0".into()));
    }
    if nu_t.is_infinite() {
        return Ok(0.0);
    }
    Ok(beta_t / (2.0 * beta_t + nu_t * nu_t))
}

/// Variance of the combined reverse transition,
/// β_t(β_t + ν_t²)/(2β_t + ν_t²); exactly β_t for infinite ν.
pub fn combined_variance(beta_t: f64, nu_t: f64) -> Result<f64> {
    if beta_t <= 0.0 {
        return Err(Error::InvalidParam("combined_variance needs beta_t > 0".into()));
    }
    if nu_t.is_infinite() {
        return Ok(beta_t);
    }
    Ok(beta_t * (beta_t + nu_t * nu_t) / (2.0 * beta_t + nu_t * nu_t))
}

/// Convex combination (1−γ)s₁ + γs₂. The endpoints return the inputs
/// bitwise so reduction tests stay exact.
pub fn combine_scores(s1: &DVector<f64>, s2: &DVector<f64>, gamma: f64) -> Result<DVector<f64>> {
    if s1.len() != s2.len() {
        return Err(Error::Dimension("score dims differ".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParam(format!("gamma {gamma} outside [0, 1]")));
    }
    if gamma == 0.0 {
        return Ok(s1.clone());
    }
    if gamma == 1.0 {
        return Ok(s2.clone());
    }
    Ok(s1 * (1.0 - gamma) + s2 * gamma)
}

/// Precision-weighted combination for n views: view i contributes weight
/// 1/var_i, the pairwise product argument repeated against the reference.
/// Returns the combined score and the combined transition variance.
pub fn combine_scores_weighted(
    scores: &[DVector<f64>],
    variances: &[f64],
) -> Result<(DVector<f64>, f64)> {
    if scores.is_empty() || scores.len() != variances.len() {
        return Err(Error::Dimension("need matching, non-empty scores/variances".into()));
    }
    if variances.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidParam("variances must be positive".into()));
    }
    let dim = scores[0].len();
    if scores.iter().any(|s| s.len() != dim) {
        return Err(Error::Dimension("score dims differ".into()));
    }
    let mut precision = 0.0;
    let mut acc = DVector::zeros(dim);
    for (s, &v) in scores.iter().zip(variances.iter()) {
        if v.is_infinite() {
            continue;
        }
        precision += 1.0 / v;
        acc += s / v;
    }
    if precision == 0.0 {
        return Err(Error::InvalidParam("all views carry infinite variance".into()));
    }
    Ok((acc / precision, 1.0 / precision))
}

/// One Langevin-form reverse step with an explicit transition variance:
/// z_{t−1} = (z_t + β_t s)/√(1−β_t) + √var·ε.
pub fn langevin_step_with_variance(
    z: &DVector<f64>,
    score: &DVector<f64>,
    beta_t: f64,
    variance: f64,
    eps: &DVector<f64>,
) -> DVector<f64> {
    (z + score * beta_t) / (1.0 - beta_t).sqrt() + eps * variance.sqrt()
}

/// Single-view conditional reverse step (transition variance β_t). Draws
/// one ε from the state's stream and decrements t.
pub fn langevin_reverse_step(
    state: &mut EStepState,
    model: &dyn ScoreModel,
    sched: &NoiseSchedule,
) -> Result<()> {
    if state.t == 0 {
        return Err(Error::StepOutOfRange { t: 0, max: sched.len() });
    }
    let beta = sched.beta(state.t);
    let score = model.score(sched, &state.z, state.t)?;
    let eps = DVector::from_vec(normal_vec(&mut state.rng, state.z.len()));
    state.z = langevin_step_with_variance(&state.z, &score, beta, beta, &eps);
    state.t -= 1;
    Ok(())
}

/// Record of one view-consistent step.
#[derive(Debug, Clone)]
pub struct MergeRecord {
    pub t: usize,
    pub gamma: f64,
    pub nu: f64,
    pub variance: f64,
    /// Tweedie estimate under the combined score, for the pose M-step.
    pub z0_hat: DVector<f64>,
}

/// One reverse step of the shared latent under both conditional models:
/// evaluates both scores at the reference latent, mixes them with γ_t,
/// steps with the combined transition variance, and assigns the merged
/// latent back to both trajectories. Consumes one ε from state1's stream.
pub fn consistent_reverse_step(
    state1: &mut EStepState,
    state2: &mut EStepState,
    model1: &dyn ScoreModel,
    model2: &dyn ScoreModel,
    sched: &NoiseSchedule,
    vw: &ViewWeightSchedule,
) -> Result<MergeRecord> {
    if state1.t != state2.t {
        return Err(Error::InvalidParam(format!(
            "view trajectories disagree on t: {} vs {}",
            state1.t, state2.t
        )));
    }
    let t = state1.t;
    if t == 0 {
        return Err(Error::StepOutOfRange { t: 0, max: sched.len() });
    }
    let beta = sched.beta(t);
    let nu = vw.nu(t);
    let gamma = gamma_t(beta, nu)?;
    let variance = combined_variance(beta, nu)?;

    let s1 = model1.score(sched, &state1.z, t)?;
    let s2 = model2.score(sched, &state1.z, t)?;
    let combined = combine_scores(&s1, &s2, gamma)?;
    let z0_hat = crate::sched::tweedie_estimate(&state1.z, &combined, sched, t)?;

    let eps = DVector::from_vec(normal_vec(&mut state1.rng, state1.z.len()));
    let merged = langevin_step_with_variance(&state1.z, &combined, beta, variance, &eps);

    state1.z = merged.clone();
    state2.z = merged;
    state1.t = t - 1;
    state2.t = t - 1;
    Ok(MergeRecord { t, gamma, nu, variance, z0_hat })
}
