//! Statistical checks against closed-form Gaussian oracles: the sampler's
//! terminal mean versus the analytic posterior, the two-view combination
//! versus the product posterior, and gluing gradients versus finite
//! differences on random instances.

use latentdem::codec::{gluing_residual, LinearCodec};
use latentdem::em::{run_nonblind_dps, EmConfig, KernelInit, KernelUpdate, SkipSchedule};
use latentdem::estep::{AnnealSchedule, EStepState};
use latentdem::forward::{ForwardOperator, Kernel, PoseParam};
use latentdem::image::Image;
use latentdem::mstep::HqsConfig;
use latentdem::multiview::{consistent_reverse_step, ViewWeightSchedule};
use latentdem::oracle::analytic_gaussian_posterior;
use latentdem::prior::{ConditionalViewPrior, GaussianPrior};
use latentdem::rng::{named_stream, normal_vec};
use latentdem::sched::build_linear_schedule;
use nalgebra::{DMatrix, DVector};

fn broad_prior(n: usize, scale: f64, seed: u64) -> GaussianPrior {
    let mut rng = named_stream(seed, "prior-cov");
    let q = DMatrix::from_vec(n, n, normal_vec(&mut rng, n * n));
    let cov = (&q * q.transpose() / n as f64 + DMatrix::identity(n, n) * 1.2) * scale;
    let mu = DVector::from_vec(normal_vec(&mut rng, n));
    GaussianPrior::new(mu, cov).unwrap()
}

/// Dense matrix of a forward operator acting on h×w images.
fn materialize(op: &ForwardOperator, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut e = Image::zeros(h, w);
        e.data_mut()[j] = 1.0;
        m.set_column(j, &op.apply(&e).unwrap().to_vector());
    }
    m
}

fn dps_config(t_total: usize, seed: u64, sigma: f64) -> EmConfig {
    EmConfig {
        t_total,
        beta_min: 5e-4,
        beta_max: 0.1,
        anneal: AnnealSchedule::default_for(t_total),
        skip: None,
        hqs: HqsConfig::new(1.0, 5e6, 1, sigma).unwrap(),
        gluing_weight: 0.0,
        dc_scale: 1.0,
        seed,
        kernel_size: 1,
        kernel_init: KernelInit::Uniform,
        kernel_update: KernelUpdate::Hqs,
    }
}

#[test]
fn dps_terminal_mean_matches_analytic_posterior() {
    // 9-dim latent as a 3x3 image, identity codec, linear operator through
    // the convolution path. The prior is broad so the posterior is
    // likelihood-dominated, which is the regime where the literal
    // 1/(2ζσ²) step lands on the posterior mean.
    let (h, w) = (3, 3);
    let n = h * w;
    let codec = LinearCodec::identity(h, w);
    let prior = broad_prior(n, 10.0, 300);
    let sigma = 1.0;
    let kernel = Kernel::delta(1).unwrap();
    let op = ForwardOperator::convolution(kernel, sigma);

    let mut rng = named_stream(301, "scene");
    let x_true = prior.sample(&mut rng);
    let y_img = op
        .observe(&Image::from_vector(h, w, &x_true).unwrap(), &mut rng)
        .unwrap();

    let a_dense = materialize(&op, h, w);
    let posterior =
        analytic_gaussian_posterior(&prior, &a_dense, &y_img.to_vector(), sigma).unwrap();

    let t_total = 200;
    let seeds: u32 = 256;
    let mut mean = DVector::zeros(n);
    for s in 0..seeds {
        let cfg = dps_config(t_total, 9000 + u64::from(s), sigma);
        let (x0, _) = run_nonblind_dps(&cfg, &y_img, &codec, &prior, &op).unwrap();
        mean += x0.to_vector();
    }
    mean /= f64::from(seeds);
    let rel = (&mean - posterior.mean()).norm() / posterior.mean().norm();
    assert!(rel < 0.10, "relative error {rel}");
}

#[test]
fn two_view_terminal_mean_matches_product_posterior() {
    // nu = 0 throughout: the combined process samples the geometric-mean
    // posterior; for equal isotropic conditionals that mean is the average
    // of the two latent means
    let n_img = 8;
    let codec = LinearCodec::random_smooth(n_img, n_img, 6, 1.5, 0.5, 302).unwrap();
    let dim = codec.latent_dim();
    let y1 = {
        let mut rng = named_stream(303, "viewgen");
        let z = DVector::from_vec(normal_vec(&mut rng, dim));
        codec.decode(&z).unwrap()
    };
    let y2 = {
        let mut rng = named_stream(304, "viewgen");
        let z = DVector::from_vec(normal_vec(&mut rng, dim));
        codec.decode(&z).unwrap()
    };
    let tau = 0.5;
    let pose = PoseParam::identity();
    let m1 = ConditionalViewPrior::new(&y1, &pose, &codec, tau).unwrap();
    let m2 = ConditionalViewPrior::new(&y2, &pose, &codec, tau).unwrap();
    let target = (m1.latent_mean() + m2.latent_mean()) / 2.0;

    let t_total = 200;
    let sched = build_linear_schedule(t_total, 5e-4, 0.1).unwrap();
    let vw = ViewWeightSchedule::new(0.0, t_total).unwrap();
    let seeds: u32 = 256;
    let mut mean = DVector::zeros(dim);
    for s in 0..seeds {
        let mut s1 = EStepState::init_standard_normal(
            dim,
            t_total,
            named_stream(7000 + u64::from(s), "trajectory"),
        );
        let mut s2 = EStepState::new(s1.z.clone(), t_total, named_stream(7000 + u64::from(s), "aux"));
        for _ in 0..t_total {
            consistent_reverse_step(&mut s1, &mut s2, &m1, &m2, &sched, &vw).unwrap();
        }
        mean += &s1.z;
    }
    mean /= f64::from(seeds);
    let rel = (&mean - &target).norm() / target.norm();
    assert!(rel < 0.10, "relative error {rel}");
}

#[test]
fn gluing_gradient_matches_finite_differences_many_instances() {
    let mut rng = named_stream(305, "gluing-sweep");
    for trial in 0..50 {
        let (h, w) = (4, 4);
        let d = h * w;
        let n = 3 + (trial % 4);
        let mut w_mat = DMatrix::from_vec(d, n, normal_vec(&mut rng, d * n));
        if trial % 3 == 0 && n >= 2 {
            // rank-deficient decoders exercise the one-to-many pathology
            let c0 = w_mat.column(0).into_owned();
            w_mat.set_column(n - 1, &c0);
        }
        let b = DVector::from_vec(normal_vec(&mut rng, d));
        let codec = LinearCodec::new(w_mat, b, h, w).unwrap();
        let op = match trial % 3 {
            0 => ForwardOperator::convolution(Kernel::gaussian(3, 0.7).unwrap(), 0.1),
            1 => ForwardOperator::identity(0.1),
            _ => ForwardOperator::view(PoseParam::from_angle(0.5), 0.1),
        };
        let z0 = DVector::from_vec(normal_vec(&mut rng, n));
        let y = Image::new(h, w, normal_vec(&mut rng, d)).unwrap();
        let (_, grad) = gluing_residual(&codec, &z0, &y, &op).unwrap();
        let f = |zv: &DVector<f64>| gluing_residual(&codec, zv, &y, &op).unwrap().0;
        let step = 1e-6;
        for i in 0..n {
            let mut zp = z0.clone();
            let mut zm = z0.clone();
            zp[i] += step;
            zm[i] -= step;
            let fd = (f(&zp) - f(&zm)) / (2.0 * step);
            let rel = (grad[i] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "trial {trial} coord {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn annealed_run_reduces_to_flat_when_zeta_is_one() {
    // zeta_start = zeta_end = 1 must equal the flat schedule bit-for-bit
    let (h, w) = (3, 3);
    let codec = LinearCodec::identity(h, w);
    let prior = broad_prior(9, 4.0, 306);
    let op = ForwardOperator::identity(1.0);
    let mut rng = named_stream(307, "y");
    let y = Image::new(h, w, normal_vec(&mut rng, 9)).unwrap();

    let mut cfg_a = dps_config(60, 17, 1.0);
    cfg_a.anneal = AnnealSchedule::new(50, 1.0, 20, 1.0).unwrap();
    let mut cfg_b = dps_config(60, 17, 1.0);
    cfg_b.anneal = AnnealSchedule::flat();
    let (xa, ta) = run_nonblind_dps(&cfg_a, &y, &codec, &prior, &op).unwrap();
    let (xb, tb) = run_nonblind_dps(&cfg_b, &y, &codec, &prior, &op).unwrap();
    assert_eq!(xa.data(), xb.data());
    assert_eq!(ta.len(), tb.len());
}

#[test]
fn skip_schedule_is_usable_inside_nonblind_runs() {
    // smoke check that the skip plumbing composes with the sampler loop
    let sk = SkipSchedule::new(30, 4).unwrap();
    assert!(latentdem::em::should_run_full(&sk, 30));
    assert!(!latentdem::em::should_run_full(&sk, 33));
}
