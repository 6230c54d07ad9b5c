//! The EM driver: interleaves posterior-sampling reverse steps with
//! forward-operator M-steps once per full step, under skip-gradient
//! scheduling. One named noise stream per trajectory; stream positions are
//! recorded in the trace so bit-exactness claims are auditable.

use nalgebra::DVector;

use crate::codec::LinearCodec;
use crate::error::{Error, Result};
use crate::estep::{
    conditional_update, prior_reverse_step, AnnealSchedule, EStepOptions, EStepState,
};
use crate::forward::{ForwardOperator, Kernel, PoseParam};
use crate::image::Image;
use crate::metrics::kernel_mse;
use crate::mstep::{
    estimate_kernel, estimate_pose, lambda_delta_schedule, simplex_project, Denoiser, HqsConfig,
};
use crate::multiview::{consistent_reverse_step, ViewWeightSchedule};
use crate::prior::{ConditionalViewPrior, ScoreModel};
use crate::rng::{named_stream, normal_vec};
use crate::sched::{build_linear_schedule, tweedie_estimate, NoiseSchedule};

/// Skip-gradient schedule: above the threshold S_T only every K-th step
/// runs the full EM machinery; at and below S_T every step does.
#[derive(Debug, Clone, Copy)]
pub struct SkipSchedule {
    pub s_t: usize,
    pub k: usize,
}

impl SkipSchedule {
    pub fn new(s_t: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParam("skip period K must be >= 1".into()));
        }
        Ok(Self { s_t, k })
    }
}

/// (t > S_T ∧ K | t) ∨ t ≤ S_T.
pub fn should_run_full(sk: &SkipSchedule, t: usize) -> bool {
    (t > sk.s_t && t % sk.k == 0) || t <= sk.s_t
}

/// Number of skipped steps over t = T..1.
pub fn skipped_step_count(sk: &SkipSchedule, t_total: usize) -> usize {
    (1..=t_total).filter(|&t| !should_run_full(sk, t)).count()
}

/// Kernel initialization for the blind task.
#[derive(Debug, Clone)]
pub enum KernelInit {
    /// 1/k² everywhere: deterministic and on-simplex.
    Uniform,
    /// |N(0,1)| draws from the "kernel-init" stream, projected feasible.
    Seeded,
}

/// How the M-step treats the kernel.
#[derive(Debug, Clone)]
pub enum KernelUpdate {
    /// HQS estimation every full step, warm-started from the previous kernel.
    Hqs,
    /// The operator is pinned; reduces the run to non-blind sampling.
    Fixed(Kernel),
}

/// All run parameters of the deblurring EM loop.
#[derive(Debug, Clone)]
pub struct EmConfig {
    pub t_total: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub anneal: AnnealSchedule,
    /// `None` selects the dedicated no-skip code path.
    pub skip: Option<SkipSchedule>,
    pub hqs: HqsConfig,
    pub gluing_weight: f64,
    pub dc_scale: f64,
    pub seed: u64,
    pub kernel_size: usize,
    pub kernel_init: KernelInit,
    pub kernel_update: KernelUpdate,
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_total == 0 {
            return Err(Error::InvalidParam("t_total must be >= 1".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::InvalidParam("kernel_size must be odd".into()));
        }
        if self.gluing_weight < 0.0 {
            return Err(Error::InvalidParam("gluing weight must be >= 0".into()));
        }
        if self.dc_scale <= 0.0 {
            return Err(Error::InvalidParam("dc_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_linear_schedule(self.t_total, self.beta_min, self.beta_max)
    }

    fn estep_options(&self) -> Result<EStepOptions> {
        EStepOptions::new(self.anneal, self.gluing_weight, self.dc_scale)
    }

    fn initial_kernel(&self) -> Result<Kernel> {
        match self.kernel_init {
            KernelInit::Uniform => Kernel::uniform(self.kernel_size),
            KernelInit::Seeded => {
                let mut rng = named_stream(self.seed, "kernel-init");
                let raw: Vec<f64> = normal_vec(&mut rng, self.kernel_size * self.kernel_size)
                    .iter()
                    .map(|v| v.abs())
                    .collect();
                Ok(simplex_project(&Kernel::new(self.kernel_size, raw)?))
            }
        }
    }
}

/// One row per reverse step; skipped rows carry no M-step fields.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub t: usize,
    pub zeta: f64,
    pub gamma: Option<f64>,
    pub residual: Option<f64>,
    pub gluing: Option<f64>,
    pub kernel_mse: Option<f64>,
    pub pose_deg: Option<f64>,
    pub skipped: bool,
    pub stream_pos: u128,
}

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from(
        "t,zeta_t,gamma_t,residual,gluing,kernel_mse,pose_deg,skipped,stream_pos\n",
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{:.17e},{},{},{},{},{},{},{}\n",
            r.t,
            r.zeta,
            fmt(r.gamma),
            fmt(r.residual),
            fmt(r.gluing),
            fmt(r.kernel_mse),
            fmt(r.pose_deg),
            u8::from(r.skipped),
            r.stream_pos
        ));
    }
    out
}

/// Everything a blind-deblurring run reads.
pub struct DeblurInputs<'a> {
    pub y: &'a Image,
    pub codec: &'a LinearCodec,
    pub model: &'a dyn ScoreModel,
    pub denoiser: &'a dyn Denoiser,
    /// Ground truth for trace enrichment only; never steers the run.
    pub kernel_truth: Option<&'a Kernel>,
}

pub struct DeblurOutcome {
    pub x0: Image,
    pub kernel: Kernel,
    pub trace: Vec<TraceRow>,
}

/// Blind deblurring: z_T ~ N(0, I) from the "trajectory" stream, kernel
/// from the configured init; each step runs the prior reverse update, and
/// full steps decode x̂_0, re-estimate the kernel, then apply the annealed
/// data-consistency and gluing corrections with the fresh operator.
pub fn run_blind_deblur(cfg: &EmConfig, inputs: &DeblurInputs) -> Result<DeblurOutcome> {
    cfg.validate()?;
    let (h, w) = inputs.codec.img_shape();
    if inputs.y.height() != h || inputs.y.width() != w {
        return Err(Error::Dimension(format!(
            "observation {}x{} does not match codec output {h}x{w}",
            inputs.y.height(),
            inputs.y.width()
        )));
    }
    let sched = cfg.schedule()?;
    let opts = cfg.estep_options()?;
    let mut state = EStepState::init_standard_normal(
        inputs.codec.latent_dim(),
        cfg.t_total,
        named_stream(cfg.seed, "trajectory"),
    );
    let mut kernel = cfg.initial_kernel()?;
    let mut trace = Vec::with_capacity(cfg.t_total);

    for t in (1..=cfg.t_total).rev() {
        debug_assert_eq!(state.t, t);
        let run_full = match &cfg.skip {
            None => true,
            Some(sk) => should_run_full(sk, t),
        };
        let (mut z_next, z0_hat) = prior_reverse_step(&mut state, inputs.model, &sched)?;
        if run_full {
            let x0 = inputs.codec.decode(&z0_hat)?;
            kernel = match &cfg.kernel_update {
                KernelUpdate::Hqs => {
                    estimate_kernel(inputs.y, &x0, &kernel, &cfg.hqs, inputs.denoiser)
                        .map_err(|e| Error::Singular(format!("M-step failed at t = {t}: {e}")))?
                }
                KernelUpdate::Fixed(k) => k.clone(),
            };
            let a = ForwardOperator::convolution(kernel.clone(), cfg.hqs.sigma);
            let (zeta, residual, gluing) = conditional_update(
                &mut z_next,
                &state,
                &z0_hat,
                inputs.y,
                &a,
                inputs.codec,
                inputs.model,
                &sched,
                &opts,
            )?;
            state.x0_hat = Some(x0);
            trace.push(TraceRow {
                t,
                zeta,
                gamma: None,
                residual: Some(residual),
                gluing: Some(gluing),
                kernel_mse: match inputs.kernel_truth {
                    Some(kt) => Some(kernel_mse(&kernel, kt)?),
                    None => None,
                },
                pose_deg: None,
                skipped: false,
                stream_pos: state.rng.get_word_pos(),
            });
        } else {
            trace.push(TraceRow {
                t,
                zeta: crate::estep::annealing_factor(&opts.anneal, t),
                gamma: None,
                residual: None,
                gluing: None,
                kernel_mse: None,
                pose_deg: None,
                skipped: true,
                stream_pos: state.rng.get_word_pos(),
            });
        }
        state.z = z_next;
        state.t = t - 1;
    }

    Ok(DeblurOutcome { x0: inputs.codec.decode(&state.z)?, kernel, trace })
}

/// Plain non-blind latent posterior sampling against a fixed operator:
/// every step is full, no M-step. The reduction target for the blind run
/// with a pinned kernel.
pub fn run_nonblind_dps(
    cfg: &EmConfig,
    y: &Image,
    codec: &LinearCodec,
    model: &dyn ScoreModel,
    operator: &ForwardOperator,
) -> Result<(Image, Vec<TraceRow>)> {
    cfg.validate()?;
    let sched = cfg.schedule()?;
    let opts = cfg.estep_options()?;
    let mut state = EStepState::init_standard_normal(
        codec.latent_dim(),
        cfg.t_total,
        named_stream(cfg.seed, "trajectory"),
    );
    let mut trace = Vec::with_capacity(cfg.t_total);
    for t in (1..=cfg.t_total).rev() {
        let (mut z_next, z0_hat) = prior_reverse_step(&mut state, model, &sched)?;
        let (zeta, residual, gluing) = conditional_update(
            &mut z_next,
            &state,
            &z0_hat,
            y,
            operator,
            codec,
            model,
            &sched,
            &opts,
        )?;
        state.x0_hat = Some(codec.decode(&z0_hat)?);
        trace.push(TraceRow {
            t,
            zeta,
            gamma: None,
            residual: Some(residual),
            gluing: Some(gluing),
            kernel_mse: None,
            pose_deg: None,
            skipped: false,
            stream_pos: state.rng.get_word_pos(),
        });
        state.z = z_next;
        state.t = t - 1;
    }
    Ok((codec.decode(&state.z)?, trace))
}

/// Run parameters of the pose-free task.
#[derive(Debug, Clone)]
pub struct PosefreeConfig {
    pub t_total: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub seed: u64,
    /// Conditional-model uncertainty τ.
    pub tau: f64,
    /// Pose-model error scale at t = T; anneals linearly to 0.
    pub nu_max: f64,
    pub pose_lr: f64,
    /// 0 disables the pose M-step.
    pub pose_steps: usize,
}

impl PosefreeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_total == 0 {
            return Err(Error::InvalidParam("t_total must be >= 1".into()));
        }
        if self.tau <= 0.0 {
            return Err(Error::InvalidParam("tau must be positive".into()));
        }
        if self.pose_lr <= 0.0 {
            return Err(Error::InvalidParam("pose_lr must be positive".into()));
        }
        Ok(())
    }
}

pub struct PosefreeOutcome {
    pub synth: Image,
    pub phi2: PoseParam,
    pub trace: Vec<TraceRow>,
}

/// Pose-free view synthesis: a shared latent trajectory conditioned on the
/// reference view (y1, φ1) and the unposed view (y2, φ2), merged every
/// step by the view-consistent combination; φ2 starts at 0 and is refined
/// by the pose M-step with the λ/δ balance schedule. Returns the decode of
/// the final combined-score Tweedie estimate and the final pose.
pub fn run_posefree(
    cfg: &PosefreeConfig,
    y1: &Image,
    phi1: &PoseParam,
    y2: &Image,
    codec: &LinearCodec,
) -> Result<PosefreeOutcome> {
    cfg.validate()?;
    let sched = build_linear_schedule(cfg.t_total, cfg.beta_min, cfg.beta_max)?;
    let vw = ViewWeightSchedule::new(cfg.nu_max, cfg.t_total)?;
    let model1 = ConditionalViewPrior::new(y1, phi1, codec, cfg.tau)?;
    let mut phi2 = PoseParam::identity();

    let mut state1 = EStepState::init_standard_normal(
        codec.latent_dim(),
        cfg.t_total,
        named_stream(cfg.seed, "trajectory"),
    );
    // the auxiliary trajectory adopts the merged latent every step; its own
    // stream exists but is never drawn from
    let mut state2 = EStepState::new(
        state1.z.clone(),
        cfg.t_total,
        named_stream(cfg.seed, "trajectory-aux"),
    );

    let mut trace = Vec::with_capacity(cfg.t_total);
    let mut last_z0: Option<DVector<f64>> = None;
    for t in (1..=cfg.t_total).rev() {
        let model2 = ConditionalViewPrior::new(y2, &phi2, codec, cfg.tau)?;
        let rec = consistent_reverse_step(&mut state1, &mut state2, &model1, &model2, &sched, &vw)?;
        let x0 = codec.decode(&rec.z0_hat)?;

        let (pose_deg, residual) = if cfg.pose_steps > 0 {
            let (lambda, delta) = lambda_delta_schedule(t, cfg.t_total);
            let est = estimate_pose(
                y2,
                &x0,
                y1,
                phi1,
                &phi2,
                lambda,
                delta,
                cfg.pose_lr,
                cfg.pose_steps,
                codec,
            )?;
            phi2 = est.pose;
            (Some(phi2.angle_degrees()), Some(est.loss_end))
        } else {
            (None, None)
        };

        trace.push(TraceRow {
            t,
            zeta: 1.0,
            gamma: Some(rec.gamma),
            residual,
            gluing: None,
            kernel_mse: None,
            pose_deg,
            skipped: false,
            stream_pos: state1.rng.get_word_pos(),
        });
        state1.x0_hat = Some(x0);
        last_z0 = Some(rec.z0_hat);
    }

    let synth = codec.decode(&last_z0.expect("t_total >= 1"))?;
    Ok(PosefreeOutcome { synth, phi2, trace })
}

/// Single-view conditional sampling with the same stream discipline as
/// `run_posefree`; the reduction target for ν ≡ ∞ with the M-step off.
pub fn run_single_view(
    cfg: &PosefreeConfig,
    y1: &Image,
    phi1: &PoseParam,
    codec: &LinearCodec,
) -> Result<Image> {
    cfg.validate()?;
    let sched = build_linear_schedule(cfg.t_total, cfg.beta_min, cfg.beta_max)?;
    let model = ConditionalViewPrior::new(y1, phi1, codec, cfg.tau)?;
    let mut state = EStepState::init_standard_normal(
        codec.latent_dim(),
        cfg.t_total,
        named_stream(cfg.seed, "trajectory"),
    );
    let mut last_z0 = None;
    for t in (1..=cfg.t_total).rev() {
        let beta = sched.beta(t);
        let score = model.score(&sched, &state.z, t)?;
        last_z0 = Some(tweedie_estimate(&state.z, &score, &sched, t)?);
        let eps = DVector::from_vec(normal_vec(&mut state.rng, state.z.len()));
        state.z =
            crate::multiview::langevin_step_with_variance(&state.z, &score, beta, beta, &eps);
        state.t = t - 1;
    }
    codec.decode(&last_z0.expect("t_total >= 1"))
}
