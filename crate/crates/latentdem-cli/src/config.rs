//! Run configuration: a versioned TOML schema with hard errors on unknown
//! keys, plus builders that turn the declarative sections into library
//! objects. All randomness flows from the single seed through named
//! sub-streams.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use latentdem::codec::{read_matrix_text, LinearCodec};
use latentdem::em::{EmConfig, KernelInit, KernelUpdate, PosefreeConfig, SkipSchedule};
use latentdem::estep::AnnealSchedule;
use latentdem::forward::Kernel;
use latentdem::mstep::{Denoiser, HqsConfig, ProjectionDenoiser, SmoothingDenoiser};
use latentdem::prior::{GaussianMixturePrior, GaussianPrior, ScoreModel};
use latentdem::rng::{named_stream, normal_vec};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub run: RunSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub anneal: Option<AnnealSection>,
    #[serde(default)]
    pub skip: Option<SkipSection>,
    #[serde(default)]
    pub estep: EstepSection,
    #[serde(default)]
    pub hqs: Option<HqsSection>,
    pub scene: SceneSection,
    pub codec: CodecSection,
    #[serde(default)]
    pub prior: Option<PriorSection>,
    #[serde(default)]
    pub posefree: Option<PosefreeSection>,
    #[serde(default)]
    pub kernel_estimation: KernelEstimationSection,
    #[serde(default)]
    pub bench: Option<BenchSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub task: TaskKind,
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default = "one")]
    pub jobs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Deblur,
    Posefree,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub t: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnealSection {
    pub t_start: usize,
    pub zeta_start: f64,
    pub t_end: usize,
    pub zeta_end: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipSection {
    pub s_t: usize,
    pub k: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstepSection {
    #[serde(default)]
    pub gluing_weight: f64,
    #[serde(default = "one_f64")]
    pub dc_scale: f64,
}

impl Default for EstepSection {
    fn default() -> Self {
        Self { gluing_weight: 0.0, dc_scale: 1.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HqsSection {
    #[serde(default = "one_f64")]
    pub lambda: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_hqs_iters")]
    pub iterations: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    pub height: usize,
    pub width: usize,
    pub sigma: f64,
    #[serde(default)]
    pub kernel: Option<String>,
    #[serde(default)]
    pub kernel_size: Option<usize>,
    #[serde(default)]
    pub pose_deg: Option<f64>,
    /// Pre-existing observation; synthesized per-trial when absent.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default = "one")]
    pub count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecSection {
    pub kind: CodecKind,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default = "default_smooth_sigma")]
    pub smooth_sigma: f64,
    #[serde(default = "default_offset")]
    pub offset: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Identity,
    SmoothRandom,
    File,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub kind: PriorKind,
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub cov: Option<Vec<Vec<f64>>>,
    /// Seeded mixture: component means drawn from the "prior-means" stream.
    #[serde(default)]
    pub components: Option<usize>,
    #[serde(default)]
    pub mean_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Isotropic,
    Gaussian,
    GmmSeeded,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosefreeSection {
    pub tau: f64,
    #[serde(default)]
    pub nu_max: f64,
    pub pose_lr: f64,
    pub pose_steps: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelEstimationSection {
    #[serde(default)]
    pub init: KernelInitKind,
    #[serde(default)]
    pub denoiser: DenoiserKind,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelInitKind {
    #[default]
    Uniform,
    Seeded,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    #[default]
    Projection,
    Smoothing,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub seeds: usize,
    pub sweep: Vec<SkipSection>,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    5e6
}

fn default_hqs_iters() -> usize {
    20
}

fn default_smooth_sigma() -> f64 {
    2.0
}

fn default_offset() -> f64 {
    0.5
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            bail!(
                "{}: schema version {} unsupported (expected {SCHEMA_VERSION})",
                path.display(),
                self.schema
            );
        }
        if self.run.trials == 0 || self.run.jobs == 0 {
            bail!("trials and jobs must be >= 1");
        }
        if let Some(input) = &self.scene.input {
            let resolved = resolve_relative(path, input);
            if !resolved.exists() {
                bail!("scene input file not found: {}", resolved.display());
            }
        }
        if self.codec.kind == CodecKind::File {
            let Some(p) = &self.codec.path else {
                bail!("codec.kind = \"file\" requires codec.path");
            };
            let resolved = resolve_relative(path, p);
            if !resolved.exists() {
                bail!("codec matrix file not found: {}", resolved.display());
            }
        }
        if self.run.task == TaskKind::Posefree && self.posefree.is_none() {
            bail!("task = \"posefree\" requires a [posefree] section");
        }
        Ok(())
    }

    pub fn anneal(&self) -> Result<AnnealSchedule> {
        match &self.anneal {
            None => Ok(AnnealSchedule::default_for(self.schedule.t)),
            Some(a) => {
                AnnealSchedule::new(a.t_start, a.zeta_start, a.t_end, a.zeta_end)
                    .map_err(Into::into)
            }
        }
    }

    pub fn skip(&self) -> Result<Option<SkipSchedule>> {
        match &self.skip {
            None => Ok(None),
            Some(s) => Ok(Some(SkipSchedule::new(s.s_t, s.k)?)),
        }
    }

    pub fn kernel_size(&self) -> Result<usize> {
        if let Some(k) = self.scene.kernel_size {
            return Ok(k);
        }
        if let Some(spec) = &self.scene.kernel {
            return Ok(parse_kernel_spec(spec, &mut named_stream(0, "unused"))?.size());
        }
        bail!("deblur needs scene.kernel or scene.kernel_size")
    }

    pub fn em_config(&self, seed: u64) -> Result<EmConfig> {
        let hqs = match &self.hqs {
            Some(h) => HqsConfig::new(h.lambda, h.delta, h.iterations, self.scene.sigma)?,
            None => HqsConfig::defaults(self.scene.sigma),
        };
        Ok(EmConfig {
            t_total: self.schedule.t,
            beta_min: self.schedule.beta_min,
            beta_max: self.schedule.beta_max,
            anneal: self.anneal()?,
            skip: self.skip()?,
            hqs,
            gluing_weight: self.estep.gluing_weight,
            dc_scale: self.estep.dc_scale,
            seed,
            kernel_size: self.kernel_size()?,
            kernel_init: match self.kernel_estimation.init {
                KernelInitKind::Uniform => KernelInit::Uniform,
                KernelInitKind::Seeded => KernelInit::Seeded,
            },
            kernel_update: KernelUpdate::Hqs,
        })
    }

    pub fn posefree_config(&self, seed: u64) -> Result<PosefreeConfig> {
        let Some(pf) = &self.posefree else {
            bail!("missing [posefree] section");
        };
        Ok(PosefreeConfig {
            t_total: self.schedule.t,
            beta_min: self.schedule.beta_min,
            beta_max: self.schedule.beta_max,
            seed,
            tau: pf.tau,
            nu_max: pf.nu_max,
            pose_lr: pf.pose_lr,
            pose_steps: pf.pose_steps,
        })
    }

    pub fn build_codec(&self, config_path: &Path) -> Result<LinearCodec> {
        let (h, w) = (self.scene.height, self.scene.width);
        match self.codec.kind {
            CodecKind::Identity => Ok(LinearCodec::identity(h, w)),
            CodecKind::SmoothRandom => {
                let n = self
                    .codec
                    .latent_dim
                    .context("codec.kind = \"smooth_random\" requires codec.latent_dim")?;
                LinearCodec::random_smooth(
                    h,
                    w,
                    n,
                    self.codec.smooth_sigma,
                    self.codec.offset,
                    self.run.seed,
                )
                .map_err(Into::into)
            }
            CodecKind::File => {
                let path = resolve_relative(config_path, self.codec.path.as_ref().unwrap());
                let m = read_matrix_text(&path)?;
                let d = m.nrows();
                let offset = DVector::from_element(d, self.codec.offset);
                LinearCodec::new(m, offset, h, w).map_err(Into::into)
            }
        }
    }

    pub fn build_prior(&self, latent_dim: usize) -> Result<AnalyticPrior> {
        let Some(p) = &self.prior else {
            bail!("this task requires a [prior] section");
        };
        match p.kind {
            PriorKind::Isotropic => {
                let var = p.variance.context("prior.kind = \"isotropic\" needs variance")?;
                let mean = match &p.mean {
                    None => DVector::zeros(latent_dim),
                    Some(v) if v.len() == 1 => DVector::from_element(latent_dim, v[0]),
                    Some(v) => DVector::from_vec(v.clone()),
                };
                if mean.len() != latent_dim {
                    bail!("prior mean length {} != latent dim {latent_dim}", mean.len());
                }
                Ok(AnalyticPrior::Gaussian(GaussianPrior::isotropic(latent_dim, mean, var)?))
            }
            PriorKind::Gaussian => {
                let mean = DVector::from_vec(
                    p.mean.clone().context("prior.kind = \"gaussian\" needs mean")?,
                );
                let cov_rows = p.cov.clone().context("prior.kind = \"gaussian\" needs cov")?;
                let n = mean.len();
                if cov_rows.len() != n || cov_rows.iter().any(|r| r.len() != n) {
                    bail!("prior cov must be {n}x{n}");
                }
                let cov = DMatrix::from_row_iterator(n, n, cov_rows.into_iter().flatten());
                Ok(AnalyticPrior::Gaussian(GaussianPrior::new(mean, cov)?))
            }
            PriorKind::GmmSeeded => {
                let k = p.components.context("prior.kind = \"gmm_seeded\" needs components")?;
                let var = p.variance.context("prior.kind = \"gmm_seeded\" needs variance")?;
                let scale = p.mean_scale.unwrap_or(1.0);
                let mut rng = named_stream(self.run.seed, "prior-means");
                let mut comps = Vec::with_capacity(k);
                for _ in 0..k {
                    let mean = DVector::from_vec(normal_vec(&mut rng, latent_dim)) * scale;
                    comps.push((1.0 / k as f64, GaussianPrior::isotropic(latent_dim, mean, var)?));
                }
                Ok(AnalyticPrior::Mixture(GaussianMixturePrior::new(comps)?))
            }
        }
    }

    pub fn build_denoiser(&self) -> Box<dyn Denoiser + Sync> {
        match self.kernel_estimation.denoiser {
            DenoiserKind::Projection => Box::new(ProjectionDenoiser),
            DenoiserKind::Smoothing => Box::new(SmoothingDenoiser),
        }
    }
}

/// A prior the CLI can both score against and draw scene samples from.
#[derive(Debug, Clone)]
pub enum AnalyticPrior {
    Gaussian(GaussianPrior),
    Mixture(GaussianMixturePrior),
}

impl AnalyticPrior {
    pub fn sample(&self, rng: &mut latentdem::rng::ChaCha8Rng) -> DVector<f64> {
        match self {
            AnalyticPrior::Gaussian(g) => g.sample(rng),
            AnalyticPrior::Mixture(m) => m.sample(rng),
        }
    }
}

impl ScoreModel for AnalyticPrior {
    fn dim(&self) -> usize {
        match self {
            AnalyticPrior::Gaussian(g) => g.dim(),
            AnalyticPrior::Mixture(m) => m.dim(),
        }
    }

    fn score(
        &self,
        sched: &latentdem::sched::NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
    ) -> latentdem::Result<DVector<f64>> {
        match self {
            AnalyticPrior::Gaussian(g) => g.score(sched, z_t, t),
            AnalyticPrior::Mixture(m) => m.score(sched, z_t, t),
        }
    }

    fn jacobian_apply(
        &self,
        sched: &latentdem::sched::NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
        v: &DVector<f64>,
    ) -> latentdem::Result<DVector<f64>> {
        match self {
            AnalyticPrior::Gaussian(g) => g.jacobian_apply(sched, z_t, t, v),
            AnalyticPrior::Mixture(m) => m.jacobian_apply(sched, z_t, t, v),
        }
    }

    fn log_marginal(
        &self,
        sched: &latentdem::sched::NoiseSchedule,
        z_t: &DVector<f64>,
        t: usize,
    ) -> latentdem::Result<f64> {
        match self {
            AnalyticPrior::Gaussian(g) => g.log_marginal(sched, z_t, t),
            AnalyticPrior::Mixture(m) => m.log_marginal(sched, z_t, t),
        }
    }
}

/// Paths inside a config resolve relative to the config file's directory.
pub fn resolve_relative(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Kernel spec strings: "delta,K" | "uniform,K" | "gaussian,K,SIGMA" |
/// "gaussian2,K,SY,SX" | "random,K" (per-scene random anisotropic widths).
pub fn parse_kernel_spec(spec: &str, rng: &mut latentdem::rng::ChaCha8Rng) -> Result<Kernel> {
    use rand::Rng;
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let usage = "kernel spec: delta,K | uniform,K | gaussian,K,SIGMA | gaussian2,K,SY,SX | random,K";
    let size: usize = parts
        .get(1)
        .and_then(|s| s.parse().ok())
        .with_context(|| usage.to_string())?;
    let kernel = match parts[0] {
        "delta" => Kernel::delta(size)?,
        "uniform" => Kernel::uniform(size)?,
        "gaussian" => {
            let sigma: f64 = parts
                .get(2)
                .and_then(|s| s.parse().ok())
                .with_context(|| usage.to_string())?;
            Kernel::gaussian(size, sigma)?
        }
        "gaussian2" => {
            let sy: f64 = parts.get(2).and_then(|s| s.parse().ok()).with_context(|| usage)?;
            let sx: f64 = parts.get(3).and_then(|s| s.parse().ok()).with_context(|| usage)?;
            Kernel::gaussian2(size, sy, sx)?
        }
        "random" => {
            let sy = rng.random_range(0.55..1.3);
            let sx = rng.random_range(0.55..1.3);
            Kernel::gaussian2(size, sy, sx)?
        }
        other => bail!("unknown kernel spec \"{other}\"; {usage}"),
    };
    Ok(kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_deblur_toml() -> String {
        r#"
schema = 1

[run]
task = "deblur"
seed = 42

[schedule]
t = 50
beta_min = 1e-3
beta_max = 0.1

[scene]
height = 8
width = 8
sigma = 0.05
kernel = "gaussian,3,0.8"

[codec]
kind = "smooth_random"
latent_dim = 6

[prior]
kind = "isotropic"
variance = 1.0
"#
        .to_string()
    }

    #[test]
    fn minimal_config_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, minimal_deblur_toml()).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.run.seed, 42);
        assert_eq!(cfg.kernel_size().unwrap(), 3);
        let em = cfg.em_config(7).unwrap();
        assert_eq!(em.t_total, 50);
        assert_eq!(em.hqs.iterations, 20);
        let codec = cfg.build_codec(&path).unwrap();
        assert_eq!(codec.latent_dim(), 6);
        cfg.build_prior(6).unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        let text = minimal_deblur_toml() + "\n[typo_section]\nx = 1\n";
        std::fs::write(&path, text).unwrap();
        assert!(RunConfig::load(&path).is_err());

        let text = minimal_deblur_toml().replace("sigma = 0.05", "sigma = 0.05\nsgima = 0.1");
        std::fs::write(&path, text).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        std::fs::write(&path, minimal_deblur_toml().replace("schema = 1", "schema = 2")).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn missing_input_path_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.toml");
        let text = minimal_deblur_toml()
            .replace("[codec]", "input = \"missing.f32\"\n\n[codec]");
        std::fs::write(&path, text).unwrap();
        let err = RunConfig::load(&path).unwrap_err().to_string();
        assert!(err.contains("missing.f32"), "{err}");
    }

    #[test]
    fn kernel_specs_parse() {
        let mut rng = named_stream(1, "kspec");
        assert_eq!(parse_kernel_spec("delta,3", &mut rng).unwrap().size(), 3);
        assert_eq!(parse_kernel_spec("uniform,5", &mut rng).unwrap().size(), 5);
        let g = parse_kernel_spec("gaussian,5,1.0", &mut rng).unwrap();
        assert_eq!(g.size(), 5);
        g.validate_feasible().unwrap();
        let g2 = parse_kernel_spec("gaussian2,5,0.7,1.3", &mut rng).unwrap();
        g2.validate_feasible().unwrap();
        let r = parse_kernel_spec("random,5", &mut rng).unwrap();
        r.validate_feasible().unwrap();
        assert!(parse_kernel_spec("bogus,3", &mut rng).is_err());
    }
}
