//! Subcommand implementations. Every artifact written here is re-readable
//! by this binary; trials run in a bounded rayon pool with per-trial
//! output directories.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;

use latentdem::em::{
    run_blind_deblur, run_posefree, trace_to_csv, DeblurInputs, DeblurOutcome, PosefreeOutcome,
    SkipSchedule,
};
use latentdem::forward::{Kernel, PoseParam};
use latentdem::image::Image;
use latentdem::metrics;
use latentdem::mstep::{pose_alignment_loss, HqsConfig};
use latentdem::oracle;
use latentdem::prior::GaussianPrior;
use latentdem::rng::named_stream;

use crate::config::{resolve_relative, RunConfig, TaskKind};
use crate::scene::{synth_deblur_scene, synth_posefree_scene, trial_seed, windowed_blob};

/// Flag overrides shared by the config-driven subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub trace: bool,
}

fn effective_out(cfg: &RunConfig, config_path: &Path, ov: &Overrides) -> Result<PathBuf> {
    let out = ov
        .out
        .clone()
        .or_else(|| cfg.run.out.as_ref().map(|p| resolve_relative(config_path, p)))
        .context("no output directory: set run.out in the config or pass --out")?;
    std::fs::create_dir_all(&out)?;
    Ok(out)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("cannot build worker pool")
}

fn write_image_pair(dir: &Path, stem: &str, img: &Image) -> Result<()> {
    img.write_f32(&dir.join(format!("{stem}.f32")))?;
    img.write_pgm(&dir.join(format!("{stem}.pgm")))?;
    Ok(())
}

pub fn read_image_auto(path: &Path) -> Result<Image> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let img = match ext {
        "pgm" => Image::read_pgm(path)?,
        _ => Image::read_f32(path)?,
    };
    Ok(img)
}

pub fn cmd_deblur(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    if cfg.run.task != TaskKind::Deblur {
        bail!("config task is not \"deblur\"");
    }
    let out = effective_out(&cfg, config_path, ov)?;
    let jobs = ov.jobs.unwrap_or(cfg.run.jobs);
    let codec = cfg.build_codec(config_path)?;
    let prior = cfg.build_prior(codec.latent_dim())?;
    let denoiser = cfg.build_denoiser();

    let preloaded_y = match &cfg.scene.input {
        Some(p) => Some(read_image_auto(&resolve_relative(config_path, p))?),
        None => None,
    };

    let pool = thread_pool(jobs)?;
    let trials: Vec<usize> = (0..cfg.run.trials).collect();
    let results: Vec<Result<()>> = pool.install(|| {
        trials
            .par_iter()
            .map(|&i| {
                let seed = trial_seed(cfg.run.seed, i);
                let dir = out.join(format!("trial-{i:03}"));
                std::fs::create_dir_all(&dir)?;
                let started = Instant::now();

                let (y, truth) = match &preloaded_y {
                    Some(y) => (y.clone(), None),
                    None => {
                        let scene = synth_deblur_scene(&cfg, &codec, &prior, seed)?;
                        write_image_pair(&dir, "truth", &scene.x_true)?;
                        scene.kernel_true.write_text(&dir.join("kernel_true.txt"))?;
                        (scene.y.clone(), Some((scene.x_true, scene.kernel_true)))
                    }
                };
                write_image_pair(&dir, "y", &y)?;

                let em = cfg.em_config(seed)?;
                let inputs = DeblurInputs {
                    y: &y,
                    codec: &codec,
                    model: &prior,
                    denoiser: denoiser.as_ref(),
                    kernel_truth: truth.as_ref().map(|(_, k)| k),
                };
                let DeblurOutcome { x0, kernel, trace } = run_blind_deblur(&em, &inputs)?;
                let wall_ms = started.elapsed().as_secs_f64() * 1e3;

                write_image_pair(&dir, "x0", &x0)?;
                kernel.write_text(&dir.join("kernel.txt"))?;
                if ov.trace {
                    std::fs::write(dir.join("trace.csv"), trace_to_csv(&trace))?;
                }

                let report = match &truth {
                    Some((x_true, k_true)) => {
                        metrics::report(&x0, x_true, Some(&kernel), Some(k_true))?
                    }
                    None => metrics::report(&x0, &y, None, None)?,
                };
                let residual = y
                    .sub(&latentdem::forward::convolve(&x0, &kernel)?)?
                    .norm();
                let payload = json!({
                    "psnr": report.psnr_db,
                    "ssim": report.ssim,
                    "mse": report.mse,
                    "kernel_mse": report.kernel_mse,
                    "mnc": report.mnc,
                    "residual": residual,
                    "wall_ms": wall_ms,
                    "seed": seed,
                });
                std::fs::write(
                    dir.join("metrics.json"),
                    serde_json::to_string_pretty(&payload)?,
                )?;
                log::info!(
                    "trial {i}: psnr {:.2} dB, mnc {:?}, {:.0} ms",
                    report.psnr_db,
                    report.mnc,
                    wall_ms
                );
                Ok(())
            })
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

pub fn cmd_posefree(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    if cfg.run.task != TaskKind::Posefree {
        bail!("config task is not \"posefree\"");
    }
    let out = effective_out(&cfg, config_path, ov)?;
    let jobs = ov.jobs.unwrap_or(cfg.run.jobs);
    let codec = cfg.build_codec(config_path)?;

    let pool = thread_pool(jobs)?;
    let trials: Vec<usize> = (0..cfg.run.trials).collect();
    let results: Vec<Result<()>> = pool.install(|| {
        trials
            .par_iter()
            .map(|&i| {
                let seed = trial_seed(cfg.run.seed, i);
                let dir = out.join(format!("trial-{i:03}"));
                std::fs::create_dir_all(&dir)?;
                let started = Instant::now();

                let scene = synth_posefree_scene(&cfg, seed)?;
                write_image_pair(&dir, "y1", &scene.y1)?;
                write_image_pair(&dir, "y2", &scene.y2)?;

                let pf = cfg.posefree_config(seed)?;
                let PosefreeOutcome { synth, phi2, trace } =
                    run_posefree(&pf, &scene.y1, &scene.phi1, &scene.y2, &codec)?;
                let wall_ms = started.elapsed().as_secs_f64() * 1e3;

                write_image_pair(&dir, "synth", &synth)?;
                if ov.trace {
                    std::fs::write(dir.join("trace.csv"), trace_to_csv(&trace))?;
                }
                let payload = json!({
                    "angle_rad": phi2.angle,
                    "angle_deg": phi2.angle_degrees(),
                    "planted_deg": scene.theta_true.to_degrees(),
                    "wall_ms": wall_ms,
                    "seed": seed,
                });
                std::fs::write(
                    dir.join("pose.json"),
                    serde_json::to_string_pretty(&payload)?,
                )?;
                log::info!("trial {i}: recovered {:.2} deg", phi2.angle_degrees());
                Ok(())
            })
            .collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

pub fn cmd_bench(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    let out = effective_out(&cfg, config_path, ov)?;
    let Some(bench) = &cfg.bench else {
        bail!("bench needs a [bench] section");
    };
    if bench.sweep.is_empty() {
        bail!("bench sweep list is empty");
    }
    if bench.seeds == 0 {
        bail!("bench needs seeds >= 1");
    }
    let codec = cfg.build_codec(config_path)?;
    let prior = cfg.build_prior(codec.latent_dim())?;
    let denoiser = cfg.build_denoiser();

    let mut rows = Vec::new();
    for entry in &bench.sweep {
        let skip = SkipSchedule::new(entry.s_t, entry.k)?;
        let skipped = latentdem::em::skipped_step_count(&skip, cfg.schedule.t);
        let method = format!("skip-grad s_t={} k={} m={}", entry.s_t, entry.k, skipped);
        for trial in 0..bench.seeds {
            let seed = trial_seed(cfg.run.seed, trial);
            let scene = synth_deblur_scene(&cfg, &codec, &prior, seed)?;
            let mut em = cfg.em_config(seed)?;
            em.skip = Some(skip);
            let inputs = DeblurInputs {
                y: &scene.y,
                codec: &codec,
                model: &prior,
                denoiser: denoiser.as_ref(),
                kernel_truth: Some(&scene.kernel_true),
            };
            let started = Instant::now();
            let outcome = run_blind_deblur(&em, &inputs)?;
            let wall_ms = started.elapsed().as_secs_f64() * 1e3;
            let psnr = metrics::psnr(&outcome.x0, &scene.x_true, 1.0)?;
            let kmse = metrics::kernel_mse(&outcome.kernel, &scene.kernel_true)?;
            rows.push((method.clone(), wall_ms, psnr, kmse));
            log::info!("{method} seed {seed}: {wall_ms:.0} ms, psnr {psnr:.2}");
        }
    }

    let mut csv = String::from("method,wall_ms,psnr,kernel_mse\n");
    for (method, wall_ms, psnr, kmse) in &rows {
        csv.push_str(&format!("{method},{wall_ms:.3},{psnr:.6},{kmse:.9e}\n"));
    }
    let path = out.join("bench.csv");
    std::fs::write(&path, csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_metrics(
    a: &Path,
    b: &Path,
    kernel: Option<&Path>,
    kernel_truth: Option<&Path>,
) -> Result<()> {
    let img_a = read_image_auto(a)?;
    let img_b = read_image_auto(b)?;
    let k_hat = kernel.map(Kernel::read_text).transpose()?;
    let k_true = kernel_truth.map(Kernel::read_text).transpose()?;
    let report = metrics::report(&img_a, &img_b, k_hat.as_ref(), k_true.as_ref())?;
    let payload = json!({
        "psnr": report.psnr_db,
        "ssim": report.ssim,
        "mse": report.mse,
        "kernel_mse": report.kernel_mse,
        "mnc": report.mnc,
    });
    println!("{}", serde_json::to_string_pretty(&payload)?);
    Ok(())
}

/// Ad-hoc access to the reference implementations.
pub enum OracleRequest<'a> {
    Simplex(Vec<f64>),
    Hqs {
        y: &'a Path,
        x0: &'a Path,
        kernel: &'a Path,
        lambda: f64,
        delta: f64,
        sigma: f64,
    },
    Posterior {
        y: &'a Path,
        a_matrix: &'a Path,
        mean: f64,
        variance: f64,
        sigma: f64,
    },
    PoseGrid {
        y1: &'a Path,
        y2: &'a Path,
        resolution_deg: f64,
    },
}

pub fn cmd_oracle(req: OracleRequest) -> Result<()> {
    match req {
        OracleRequest::Simplex(values) => {
            let exact = oracle::simplex_project_bruteforce(&values)?;
            let fast = latentdem::mstep::simplex_project_slice(&values);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "bruteforce": exact,
                    "sort_based": fast,
                }))?
            );
        }
        OracleRequest::Hqs { y, x0, kernel, lambda, delta, sigma } => {
            let y = read_image_auto(y)?;
            let x0 = read_image_auto(x0)?;
            let k = Kernel::read_text(kernel)?;
            let cfg = HqsConfig::new(lambda, delta, 1, sigma)?;
            let dense = oracle::dense_hqs_solve(&y, &x0, &k, &cfg)?;
            let fourier = latentdem::mstep::hqs_data_update(&y, &x0, &k, &cfg)?;
            let max_rel = dense
                .values()
                .iter()
                .zip(fourier.values().iter())
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-12))
                .fold(0.0, f64::max);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "dense": dense.values(),
                    "fourier": fourier.values(),
                    "max_rel_diff": max_rel,
                }))?
            );
        }
        OracleRequest::Posterior { y, a_matrix, mean, variance, sigma } => {
            let y = read_image_auto(y)?.to_vector();
            let a = latentdem::codec::read_matrix_text(a_matrix)?;
            let n = a.ncols();
            let prior = GaussianPrior::isotropic(
                n,
                nalgebra::DVector::from_element(n, mean),
                variance,
            )?;
            let post = oracle::analytic_gaussian_posterior(&prior, &a, &y, sigma)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "mean": post.mean().as_slice(),
                    "cov_diag": post.cov().diagonal().as_slice(),
                }))?
            );
        }
        OracleRequest::PoseGrid { y1, y2, resolution_deg } => {
            let y1 = read_image_auto(y1)?;
            let y2 = read_image_auto(y2)?;
            let codec = latentdem::codec::LinearCodec::identity(y1.height(), y1.width());
            let phi1 = PoseParam::identity();
            let mut loss = |angle: f64| -> latentdem::Result<f64> {
                pose_alignment_loss(angle, &y2, &y1, &y1, &phi1, 1.0, 1.0, &codec)
            };
            let (best, flat) = oracle::pose_grid_search(&mut loss, resolution_deg)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "angle_rad": best.angle,
                    "angle_deg": best.angle_degrees(),
                    "flat": flat,
                }))?
            );
        }
    }
    Ok(())
}

pub fn cmd_synth(config_path: &Path, ov: &Overrides) -> Result<()> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = ov.seed {
        cfg.run.seed = seed;
    }
    let out = effective_out(&cfg, config_path, ov)?;
    match cfg.run.task {
        TaskKind::Deblur => {
            let codec = cfg.build_codec(config_path)?;
            let prior = cfg.build_prior(codec.latent_dim())?;
            for i in 0..cfg.scene.count {
                let seed = trial_seed(cfg.run.seed, i);
                let dir = out.join(format!("scene-{i:03}"));
                std::fs::create_dir_all(&dir)?;
                let scene = synth_deblur_scene(&cfg, &codec, &prior, seed)?;
                write_image_pair(&dir, "truth", &scene.x_true)?;
                write_image_pair(&dir, "y", &scene.y)?;
                scene.kernel_true.write_text(&dir.join("kernel.txt"))?;
                let meta = json!({
                    "seed": seed,
                    "sigma": cfg.scene.sigma,
                    "kernel_spec": cfg.scene.kernel,
                    "height": cfg.scene.height,
                    "width": cfg.scene.width,
                });
                std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
            }
        }
        TaskKind::Posefree => {
            for i in 0..cfg.scene.count {
                let seed = trial_seed(cfg.run.seed, i);
                let dir = out.join(format!("scene-{i:03}"));
                std::fs::create_dir_all(&dir)?;
                let scene = synth_posefree_scene(&cfg, seed)?;
                write_image_pair(&dir, "y1", &scene.y1)?;
                write_image_pair(&dir, "y2", &scene.y2)?;
                let meta = json!({
                    "seed": seed,
                    "sigma": cfg.scene.sigma,
                    "planted_deg": scene.theta_true.to_degrees(),
                });
                std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
            }
        }
    }
    println!("wrote {} scene(s) under {}", cfg.scene.count, out.display());
    Ok(())
}
