//! Discrete variance-preserving noise schedules and the reverse-transition
//! coefficients consumed by every sampler step.
//!
//! Steps are 1-based: the sampler loops t = T down to 1 and emits z_0.
//! ᾱ_0 is defined as 1 so the t = 1 transition is well formed.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Per-step arrays β_t, α_t = 1−β_t, ᾱ_t = ∏_{i≤t} α_i and the
/// reverse-transition standard deviations σ̃_t.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma_tilde: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step rates.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Schedule("T must be at least 1".into()));
        }
        for (i, &b) in beta.iter().enumerate() {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Schedule(format!(
                    "beta[{}] = {} outside [0, 1)",
                    i + 1,
                    b
                )));
            }
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        let mut sigma_tilde = Vec::with_capacity(beta.len());
        for t in 1..=beta.len() {
            let b = beta[t - 1];
            let ab_prev = if t == 1 { 1.0 } else { alpha_bar[t - 2] };
            let ab = alpha_bar[t - 1];
            // σ̃_t² = β_t (1−ᾱ_{t−1}) / (1−ᾱ_t); zero once the step adds no noise
            let var = if b == 0.0 || 1.0 - ab == 0.0 {
                0.0
            } else {
                b * (1.0 - ab_prev) / (1.0 - ab)
            };
            sigma_tilde.push(var.sqrt());
        }
        Ok(Self { beta, alpha, alpha_bar, sigma_tilde })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::StepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// ᾱ_t, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma_tilde(&self, t: usize) -> f64 {
        self.sigma_tilde[t - 1]
    }
}

/// Linear β discretization from `beta_min` (t = 1) to `beta_max` (t = T).
pub fn build_linear_schedule(t_count: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if t_count == 0 {
        return Err(Error::Schedule("T must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&beta_min) || beta_max >= 1.0 || beta_max < beta_min {
        return Err(Error::Schedule(format!(
            "need 0 <= beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let betas = if t_count == 1 {
        vec![beta_min]
    } else {
        (0..t_count)
            .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (t_count - 1) as f64)
            .collect()
    };
    NoiseSchedule::from_betas(betas)
}

/// Coefficients (c_z, c_0, σ̃_t) of the ancestral reverse transition
/// z_{t−1} = c_z·z_t + c_0·ẑ_0 + σ̃_t·ε.
pub fn reverse_coeffs(s: &NoiseSchedule, t: usize) -> Result<(f64, f64, f64)> {
    s.check_t(t)?;
    if s.beta(t) == 0.0 {
        // zero-noise step is the identity on z
        return Ok((1.0, 0.0, 0.0));
    }
    let ab = s.alpha_bar(t);
    let ab_prev = s.alpha_bar(t - 1);
    let denom = 1.0 - ab;
    if denom == 0.0 {
        return Err(Error::Schedule(format!(
            "degenerate schedule: 1 - alpha_bar({t}) = 0"
        )));
    }
    let c_z = s.alpha(t).sqrt() * (1.0 - ab_prev) / denom;
    let c_0 = ab_prev.sqrt() * s.beta(t) / denom;
    Ok((c_z, c_0, s.sigma_tilde(t)))
}

/// Posterior-mean estimate ẑ_0 = (z_t + (1−ᾱ_t)·score) / √ᾱ_t.
pub fn tweedie_estimate(
    z_t: &DVector<f64>,
    score: &DVector<f64>,
    s: &NoiseSchedule,
    t: usize,
) -> Result<DVector<f64>> {
    s.check_t(t)?;
    if score.len() != z_t.len() {
        return Err(Error::Dimension(format!(
            "score dim {} != latent dim {}",
            score.len(),
            z_t.len()
        )));
    }
    let ab = s.alpha_bar(t);
    if ab == 0.0 {
        return Err(Error::Schedule(format!(
            "alpha_bar({t}) underflowed to 0; schedule too aggressive"
        )));
    }
    Ok((z_t + score * (1.0 - ab)) / ab.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        assert_relative_eq!(s.alpha(1), 0.5);
        assert_relative_eq!(s.alpha_bar(1), 0.5);
    }

    #[test]
    fn two_step_products() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert_relative_eq!(s.alpha_bar(1), 0.9);
        assert_relative_eq!(s.alpha_bar(2), 0.72, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_no_noise_schedule() {
        let s = build_linear_schedule(3, 0.0, 0.0).unwrap();
        for t in 1..=3 {
            assert_eq!(s.alpha_bar(t), 1.0);
            assert_eq!(s.sigma_tilde(t), 0.0);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_linear_schedule(0, 0.1, 0.2).is_err());
        assert!(build_linear_schedule(10, 0.1, 1.0).is_err());
        assert!(build_linear_schedule(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::from_betas(vec![1.0]).is_err());
    }

    #[test]
    fn alpha_bar_is_nonincreasing_default() {
        let s = build_linear_schedule(1000, 1e-4, 0.02).unwrap();
        for t in 1..=1000 {
            assert!(s.alpha_bar(t) <= s.alpha_bar(t - 1) + 1e-15);
            assert!(s.alpha_bar(t) > 0.0 && s.alpha_bar(t) <= 1.0);
        }
    }

    #[test]
    fn reverse_coeffs_collapse_at_t1() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let (c_z, c_0, st) = reverse_coeffs(&s, 1).unwrap();
        assert_relative_eq!(c_z, 0.0);
        assert_relative_eq!(c_0, 1.0, epsilon = 1e-15);
        assert_eq!(st, 0.0);
    }

    #[test]
    fn reverse_coeffs_match_direct_evaluation() {
        // independent scalar evaluation of the same closed forms
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        let (c_z, c_0, st) = reverse_coeffs(&s, 2).unwrap();
        assert_relative_eq!(c_z, 0.8f64.sqrt() * 0.1 / 0.28, epsilon = 1e-12);
        assert_relative_eq!(c_0, 0.9f64.sqrt() * 0.2 / 0.28, epsilon = 1e-12);
        assert_relative_eq!(c_z, 0.31943828249996997, epsilon = 1e-10);
        assert_relative_eq!(c_0, 0.6776309271789387, epsilon = 1e-10);
        assert_relative_eq!(st, (0.2 * 0.1 / 0.28f64).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn zero_beta_step_is_identity() {
        let s = NoiseSchedule::from_betas(vec![0.2, 0.0, 0.1]).unwrap();
        let (c_z, c_0, st) = reverse_coeffs(&s, 2).unwrap();
        assert_eq!((c_z, c_0, st), (1.0, 0.0, 0.0));
    }

    #[test]
    fn reverse_coeffs_rejects_out_of_range() {
        let s = NoiseSchedule::from_betas(vec![0.1]).unwrap();
        assert!(reverse_coeffs(&s, 0).is_err());
        assert!(reverse_coeffs(&s, 2).is_err());
    }

    #[test]
    fn tweedie_is_identity_at_alpha_bar_one() {
        let s = build_linear_schedule(3, 0.0, 0.0).unwrap();
        let z = DVector::from_vec(vec![1.5, -2.0]);
        let sc = DVector::from_vec(vec![10.0, 3.0]);
        let out = tweedie_estimate(&z, &sc, &s, 2).unwrap();
        assert_eq!(out, z);
    }

    #[test]
    fn tweedie_arithmetic_case() {
        // alpha_bar(1) = 0.25
        let s = NoiseSchedule::from_betas(vec![0.75]).unwrap();
        let z = DVector::from_vec(vec![1.0, 0.0]);
        let sc = DVector::from_vec(vec![-2.0, 0.0]);
        let out = tweedie_estimate(&z, &sc, &s, 1).unwrap();
        assert_relative_eq!(out[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(out[1], 0.0);
    }

    #[test]
    fn tweedie_standard_normal_prior_scales_by_sqrt_alpha_bar() {
        // score(z) = -z for a unit Gaussian prior at any t; alpha_bar = 0.64
        let s = NoiseSchedule::from_betas(vec![0.36]).unwrap();
        let z = DVector::from_vec(vec![2.0]);
        let sc = -z.clone();
        let out = tweedie_estimate(&z, &sc, &s, 1).unwrap();
        assert_relative_eq!(out[0], 1.6, epsilon = 1e-14);
    }

    #[test]
    fn tweedie_rejects_dim_mismatch() {
        let s = NoiseSchedule::from_betas(vec![0.5]).unwrap();
        let z = DVector::from_vec(vec![1.0, 2.0]);
        let sc = DVector::from_vec(vec![1.0]);
        assert!(tweedie_estimate(&z, &sc, &s, 1).is_err());
    }
}
