//! Independent reference implementations used by tests and the `oracle`
//! CLI subcommand: closed-form posteriors, dense solvers, exhaustive
//! searches. Deliberately slow and deliberately sharing no numerical
//! machinery with the paths they check (the dense HQS solve never touches
//! an FFT).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward::{normalize_angle, Kernel, PoseParam};
use crate::image::Image;
use crate::mstep::HqsConfig;
use crate::prior::GaussianPrior;

/// Closed-form Bayes for the linear-Gaussian model y = A x + n,
/// n ~ N(0, σ²I): posterior covariance (Σ⁻¹ + AᵀA/σ²)⁻¹ and mean
/// cov·(Σ⁻¹μ + Aᵀy/σ²).
pub fn analytic_gaussian_posterior(
    prior: &GaussianPrior,
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma: f64,
) -> Result<GaussianPrior> {
    if sigma <= 0.0 {
        return Err(Error::InvalidParam("sigma must be positive".into()));
    }
    if a.ncols() != prior.dim() || a.nrows() != y.len() {
        return Err(Error::Dimension("operator shape mismatch".into()));
    }
    let prior_prec = Cholesky::new(prior.cov().clone())
        .ok_or_else(|| Error::Singular("prior covariance not SPD".into()))?
        .inverse();
    let post_prec = &prior_prec + a.transpose() * a / (sigma * sigma);
    let post_cov = Cholesky::new(post_prec)
        .ok_or_else(|| Error::Singular("posterior precision not SPD".into()))?
        .inverse();
    let post_mean = &post_cov * (&prior_prec * prior.mean() + a.transpose() * y / (sigma * sigma));
    GaussianPrior::new(post_mean, symmetrize(post_cov))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Materializes the circular-convolution-by-x̂ matrix and solves the HQS
/// quadratic by dense normal equations:
/// (XᵀX + δσ²I) z = Xᵀy + δσ²·vec(φ_emb), then crops to kernel support.
pub fn dense_hqs_solve(
    y: &Image,
    x0_hat: &Image,
    phi_prev: &Kernel,
    cfg: &HqsConfig,
) -> Result<Kernel> {
    if !y.same_shape(x0_hat) {
        return Err(Error::Dimension("y and x0_hat shapes differ".into()));
    }
    let (h, w) = (y.height(), y.width());
    let n = h * w;
    // column j of X: x̂ circularly shifted so that X · vec(Z) = x̂ ⊛ Z
    let mut x_mat = DMatrix::zeros(n, n);
    for sj in 0..h {
        for sk in 0..w {
            let col = sj * w + sk;
            for i in 0..h {
                for j in 0..w {
                    let v = x0_hat.get_periodic(i as i64 - sj as i64, j as i64 - sk as i64);
                    x_mat[(i * w + j, col)] = v;
                }
            }
        }
    }
    let reg = cfg.delta * cfg.sigma * cfg.sigma;
    let lhs = x_mat.transpose() * &x_mat + DMatrix::identity(n, n) * reg;
    let rhs = x_mat.transpose() * y.to_vector() + phi_prev.embed(h, w)?.to_vector() * reg;
    let solution = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("dense HQS normal equations singular".into()))?;
    let grid = Image::from_vector(h, w, &solution)?;
    Kernel::crop_from(&grid, phi_prev.size())
}

/// Exhaustive 1-D search over [0, 2π) at the given resolution. Returns the
/// argmin and a flatness flag (loss range below an absolute epsilon).
pub fn pose_grid_search(
    loss: &mut dyn FnMut(f64) -> Result<f64>,
    resolution_deg: f64,
) -> Result<(PoseParam, bool)> {
    if resolution_deg <= 0.0 || resolution_deg > 360.0 {
        return Err(Error::InvalidParam("resolution must be in (0, 360]".into()));
    }
    let steps = (360.0 / resolution_deg).round().max(1.0) as usize;
    let mut best_angle = 0.0;
    let mut best = f64::INFINITY;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..steps {
        let angle = normalize_angle((i as f64 * resolution_deg).to_radians());
        let value = loss(angle)?;
        if value < best {
            best = value;
            best_angle = angle;
        }
        worst = worst.max(value);
    }
    let flat = (worst - best) <= 1e-12 * worst.abs().max(1.0);
    Ok((PoseParam::from_angle(best_angle), flat))
}

/// Simplex projection by support enumeration: for every support set S,
/// shift the S-entries by a common offset to sum to 1, keep feasible
/// candidates, return the closest. Exponential; intended for ≤ 6 entries.
pub fn simplex_project_bruteforce(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 || n > 20 {
        return Err(Error::InvalidParam("bruteforce projection needs 1..=20 entries".into()));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sum_s: f64 = support.iter().map(|&i| v[i]).sum();
        let shift = (sum_s - 1.0) / support.len() as f64;
        let mut candidate = vec![0.0; n];
        let mut feasible = true;
        for &i in &support {
            let x = v[i] - shift;
            if x < -1e-12 {
                feasible = false;
                break;
            }
            candidate[i] = x.max(0.0);
        }
        if !feasible {
            continue;
        }
        let dist: f64 = v
            .iter()
            .zip(candidate.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, candidate));
        }
    }
    Ok(best.expect("full support is always feasible after shifting").1)
}
