//! Score models: the contract a sampler consumes plus analytic stand-ins
//! (Gaussian, Gaussian mixture, conditional-view Gaussian) whose diffused
//! marginals — and therefore scores and posteriors — are available in
//! closed form.
//!
//! Under the variance-preserving forward process, a prior p(z_0) diffuses
//! to p_t(z_t) = ∫ N(z_t; √ᾱ_t z_0, (1−ᾱ_t)I) p(z_0) dz_0. For a Gaussian
//! component N(μ, Σ) that marginal is N(√ᾱ_t μ, ᾱ_t Σ + (1−ᾱ_t) I).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::codec::LinearCodec;
use crate::error::{Error, Result};
use crate::forward::{view_transform, PoseParam};
use crate::image::Image;
use crate::sched::NoiseSchedule;

/// Contract every sampler step consumes: the score of the diffused prior
/// and, because the analytic setting affords it, the score Jacobian
/// (Hessian of log p_t) applied to a vector for exact chain rules.
pub trait ScoreModel {
    fn dim(&self) -> usize;

    /// ∇_z log p_t(z) at (z_t, t).
    fn score(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<DVector<f64>>;

    /// (∂ score / ∂ z) · v. Score Jacobians are Hessians of log p_t and
    /// hence symmetric, so this doubles as the transpose application.
    fn jacobian_apply(
        &self,
        sched: &NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>>;

    /// log p_t(z); used by finite-difference oracles and mixture weights.
    fn log_marginal(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<f64>;
}

/// N(μ, Σ) with Σ symmetric positive definite.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianPrior {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::Dimension("covariance shape != mean length".into()));
        }
        let max_asym = (&cov - cov.transpose()).amax();
        if max_asym > 1e-10 * cov.amax().max(1.0) {
            return Err(Error::InvalidParam("covariance not symmetric".into()));
        }
        if Cholesky::new(cov.clone()).is_none() {
            return Err(Error::InvalidParam("covariance not positive definite".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(dim: usize, mean: DVector<f64>, variance: f64) -> Result<Self> {
        if mean.len() != dim {
            return Err(Error::Dimension("mean length != dim".into()));
        }
        Self::new(mean, DMatrix::identity(dim, dim) * variance)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Mean and covariance of the diffused marginal at step t.
    pub fn marginal(&self, sched: &NoiseSchedule, t: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if t > sched.len() {
            return Err(Error::StepOutOfRange { t, max: sched.len() });
        }
        let ab = sched.alpha_bar(t);
        let n = self.dim();
        let mean = &self.mean * ab.sqrt();
        let cov = &self.cov * ab + DMatrix::identity(n, n) * (1.0 - ab);
        Ok((mean, cov))
    }

    fn marginal_chol(&self, sched: &NoiseSchedule, t: usize) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let (_, cov) = self.marginal(sched, t)?;
        Cholesky::new(cov).ok_or_else(|| Error::Singular("marginal covariance not SPD".into()))
    }

    /// Draws z_0 ~ N(μ, Σ).
    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
        let chol = Cholesky::new(self.cov.clone()).expect("validated SPD");
        let eps = DVector::from_vec(crate::rng::normal_vec(rng, self.dim()));
        &self.mean + chol.l() * eps
    }
}

/// −(ᾱ_t Σ + (1−ᾱ_t)I)⁻¹ (z_t − √ᾱ_t μ).
pub fn gaussian_score(
    p: &GaussianPrior,
    sched: &NoiseSchedule,
    z_t: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    if z_t.len() != p.dim() {
        return Err(Error::Dimension("latent dim != prior dim".into()));
    }
    let (mean, _) = p.marginal(sched, t)?;
    let chol = p.marginal_chol(sched, t)?;
    Ok(-chol.solve(&(z_t - mean)))
}

fn gaussian_log_marginal(
    p: &GaussianPrior,
    sched: &NoiseSchedule,
    z_t: &DVector<f64>,
    t: usize,
) -> Result<f64> {
    let (mean, _) = p.marginal(sched, t)?;
    let chol = p.marginal_chol(sched, t)?;
    let diff = z_t - mean;
    let quad = diff.dot(&chol.solve(&diff));
    let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let n = p.dim() as f64;
    Ok(-0.5 * (quad + logdet + n * (2.0 * std::f64::consts::PI).ln()))
}

impl ScoreModel for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        gaussian_score(self, sched, z_t, t)
    }

    fn jacobian_apply(
        &self,
        sched: &NoiseSchedule,
        _z_t: &DVector<f64>,
        t: usize,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let chol = self.marginal_chol(sched, t)?;
        Ok(-chol.solve(v))
    }

    fn log_marginal(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<f64> {
        gaussian_log_marginal(self, sched, z_t, t)
    }
}

/// Finite mixture Σ_j w_j N(μ_j, Σ_j), weights positive and summing to 1.
#[derive(Debug, Clone)]
pub struct GaussianMixturePrior {
    components: Vec<(f64, GaussianPrior)>,
}

impl GaussianMixturePrior {
    pub fn new(components: Vec<(f64, GaussianPrior)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParam("mixture needs at least one component".into()));
        }
        let dim = components[0].1.dim();
        if components.iter().any(|(w, _)| *w <= 0.0) {
            return Err(Error::InvalidParam("mixture weights must be positive".into()));
        }
        if components.iter().any(|(_, c)| c.dim() != dim) {
            return Err(Error::Dimension("mixture components disagree on dim".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParam(format!("mixture weights sum to {total}")));
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[(f64, GaussianPrior)] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    pub fn sample(&self, rng: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
        use rand::Rng;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, c) in &self.components {
            acc += w;
            if u <= acc {
                return c.sample(rng);
            }
        }
        self.components.last().unwrap().1.sample(rng)
    }

    /// Responsibilities at (z_t, t), computed in log space.
    fn responsibilities(
        &self,
        sched: &NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
    ) -> Result<Vec<f64>> {
        let mut logs = Vec::with_capacity(self.components.len());
        for (w, c) in &self.components {
            logs.push(w.ln() + gaussian_log_marginal(c, sched, z_t, t)?);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Underflow(
                "all mixture component densities underflowed".into(),
            ));
        }
        let unnorm: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = unnorm.iter().sum();
        Ok(unnorm.into_iter().map(|u| u / total).collect())
    }
}

/// Responsibility-weighted sum of per-component scores.
pub fn gmm_score(
    p: &GaussianMixturePrior,
    sched: &NoiseSchedule,
    z_t: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    let resp = p.responsibilities(sched, z_t, t)?;
    let mut score = DVector::zeros(p.dim());
    for (r, (_, c)) in resp.iter().zip(p.components.iter()) {
        score += gaussian_score(c, sched, z_t, t)? * *r;
    }
    Ok(score)
}

impl ScoreModel for GaussianMixturePrior {
    fn dim(&self) -> usize {
        self.components[0].1.dim()
    }

    fn score(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        gmm_score(self, sched, z_t, t)
    }

    fn jacobian_apply(
        &self,
        sched: &NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        // Hessian of log Σ w_j p_j: Σ_j r_j (−M_j⁻¹ + s_j s_jᵀ) − s sᵀ
        let resp = self.responsibilities(sched, z_t, t)?;
        let mut scores = Vec::with_capacity(self.components.len());
        for (_, c) in &self.components {
            scores.push(gaussian_score(c, sched, z_t, t)?);
        }
        let mut mix_score = DVector::zeros(self.dim());
        for (r, s) in resp.iter().zip(scores.iter()) {
            mix_score += s * *r;
        }
        let mut out = DVector::zeros(self.dim());
        for ((r, s), (_, c)) in resp.iter().zip(scores.iter()).zip(self.components.iter()) {
            let chol = c.marginal_chol(sched, t)?;
            out += (-chol.solve(v) + s * s.dot(v)) * *r;
        }
        out -= &mix_score * mix_score.dot(v);
        Ok(out)
    }

    fn log_marginal(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<f64> {
        let mut logs = Vec::with_capacity(self.components.len());
        for (w, c) in &self.components {
            logs.push(w.ln() + gaussian_log_marginal(c, sched, z_t, t)?);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Underflow("mixture density underflow".into()));
        }
        Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
    }
}

/// Toy conditional view model: the latent of the pose-transformed
/// conditioning image plus isotropic uncertainty τ, i.e. the prior
/// N(E(rotate(ref, pose)), τ²I) diffused like any other Gaussian.
#[derive(Debug, Clone)]
pub struct ConditionalViewPrior {
    latent_mean: DVector<f64>,
    tau: f64,
}

impl ConditionalViewPrior {
    pub fn new(ref_image: &Image, pose: &PoseParam, codec: &LinearCodec, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::InvalidParam("tau must be positive".into()));
        }
        let latent_mean = codec.encode(&view_transform(ref_image, pose)?)?;
        Ok(Self { latent_mean, tau })
    }

    pub fn latent_mean(&self) -> &DVector<f64> {
        &self.latent_mean
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    fn marginal_variance(&self, sched: &NoiseSchedule, t: usize) -> Result<f64> {
        if t > sched.len() {
            return Err(Error::StepOutOfRange { t, max: sched.len() });
        }
        let ab = sched.alpha_bar(t);
        Ok(ab * self.tau * self.tau + (1.0 - ab))
    }
}

impl ScoreModel for ConditionalViewPrior {
    fn dim(&self) -> usize {
        self.latent_mean.len()
    }

    fn score(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        if z_t.len() != self.dim() {
            return Err(Error::Dimension("latent dim != conditional prior dim".into()));
        }
        let ab = sched.alpha_bar(t);
        let var = self.marginal_variance(sched, t)?;
        Ok((z_t - &self.latent_mean * ab.sqrt()) * (-1.0 / var))
    }

    fn jacobian_apply(
        &self,
        sched: &NoiseSchedule,
        _z_t: &DVector<f64>,
        t: usize,
        v: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let var = self.marginal_variance(sched, t)?;
        Ok(v * (-1.0 / var))
    }

    fn log_marginal(&self, sched: &NoiseSchedule, z_t: &DVector<f64>, t: usize) -> Result<f64> {
        let ab = sched.alpha_bar(t);
        let var = self.marginal_variance(sched, t)?;
        let diff = z_t - &self.latent_mean * ab.sqrt();
        let n = self.dim() as f64;
        Ok(-0.5 * (diff.norm_squared() / var + n * (var * 2.0 * std::f64::consts::PI).ln()))
    }
}

/// Score of the Appendix-style conditional view model built on the fly.
pub fn conditional_view_score(
    ref_image: &Image,
    pose: &PoseParam,
    codec: &LinearCodec,
    tau: f64,
    sched: &NoiseSchedule,
    z_t: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    ConditionalViewPrior::new(ref_image, pose, codec, tau)?.score(sched, z_t, t)
}
