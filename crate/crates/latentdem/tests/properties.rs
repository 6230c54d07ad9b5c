//! Property-style invariants across modules.

use latentdem::em::{should_run_full, skipped_step_count, SkipSchedule};
use latentdem::estep::{annealing_factor, AnnealSchedule};
use latentdem::forward::{ForwardOperator, Kernel, PoseParam};
use latentdem::image::Image;
use latentdem::metrics::mnc;
use latentdem::mstep::simplex_project_slice;
use latentdem::multiview::{combine_scores, combined_variance, gamma_t};
use latentdem::oracle::simplex_project_bruteforce;
use latentdem::rng::{named_stream, normal_vec};
use latentdem::sched::{build_linear_schedule, reverse_coeffs};
use nalgebra::DVector;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_alpha_bar_nonincreasing(
        t_total in 1usize..400,
        beta_min in 0.0f64..0.5,
        spread in 0.0f64..0.4,
    ) {
        let beta_max = (beta_min + spread).min(0.999);
        let s = build_linear_schedule(t_total, beta_min, beta_max).unwrap();
        for t in 1..=t_total {
            prop_assert!(s.alpha_bar(t) <= s.alpha_bar(t - 1) + 1e-15);
            prop_assert!(s.alpha_bar(t) >= 0.0 && s.alpha_bar(t) <= 1.0);
            prop_assert!(s.sigma_tilde(t) >= 0.0);
        }
    }

    #[test]
    fn simplex_projection_feasible_idempotent(values in prop::collection::vec(-3.0f64..3.0, 1..30)) {
        let p = simplex_project_slice(&values);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let q = simplex_project_slice(&p);
        for (a, b) in p.iter().zip(q.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn simplex_projection_matches_bruteforce(values in prop::collection::vec(-2.0f64..2.0, 1..7)) {
        let fast = simplex_project_slice(&values);
        let slow = simplex_project_bruteforce(&values).unwrap();
        for (a, b) in fast.iter().zip(slow.iter()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mnc_symmetry_and_scale_invariance(
        a_vals in prop::collection::vec(0.0f64..1.0, 9),
        b_vals in prop::collection::vec(0.0f64..1.0, 9),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(a_vals.iter().any(|&v| v > 1e-6));
        prop_assume!(b_vals.iter().any(|&v| v > 1e-6));
        let a = Kernel::new(3, a_vals.clone()).unwrap();
        let b = Kernel::new(3, b_vals).unwrap();
        let ab = mnc(&a, &b).unwrap();
        let ba = mnc(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let scaled = Kernel::new(3, a_vals.iter().map(|v| c * v).collect()).unwrap();
        prop_assert!((mnc(&scaled, &b).unwrap() - ab).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn anneal_factor_bounded_and_monotone(
        zeta_start in 1.0f64..50.0,
        t_start in 10usize..1000,
    ) {
        let t_end = t_start / 2;
        let a = AnnealSchedule::new(t_start, zeta_start, t_end.max(1), 1.0).unwrap();
        let mut last = f64::INFINITY;
        for t in (1..=t_start + 10).rev() {
            let z = annealing_factor(&a, t);
            prop_assert!((1.0..=zeta_start).contains(&z));
            prop_assert!(z <= last + 1e-12);
            last = z;
        }
    }

    #[test]
    fn gamma_and_variance_relations(beta in 1e-5f64..0.5, nu in 0.0f64..10.0) {
        let g = gamma_t(beta, nu).unwrap();
        prop_assert!(g > 0.0 && g <= 0.5);
        let v = combined_variance(beta, nu).unwrap();
        prop_assert!(v <= beta + 1e-15);
        // two-view product: variance = gamma * (beta + nu^2) = (1-gamma) * beta... both equal beta(beta+nu2)/(2beta+nu2)
        prop_assert!((v - g * (beta + nu * nu)).abs() < 1e-12);
    }

    #[test]
    fn combine_scores_linear_permutation(
        s1_vals in prop::collection::vec(-5.0f64..5.0, 4),
        s2_vals in prop::collection::vec(-5.0f64..5.0, 4),
        gamma in 0.0f64..=1.0,
    ) {
        let s1 = DVector::from_vec(s1_vals);
        let s2 = DVector::from_vec(s2_vals);
        let a = combine_scores(&s1, &s2, gamma).unwrap();
        let b = combine_scores(&s2, &s1, 1.0 - gamma).unwrap();
        prop_assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn skip_count_matches_predicate(s_t in 0usize..1500, k in 1usize..32, t_total in 1usize..1500) {
        let sk = SkipSchedule::new(s_t, k).unwrap();
        let direct = (1..=t_total).filter(|&t| !should_run_full(&sk, t)).count();
        prop_assert_eq!(skipped_step_count(&sk, t_total), direct);
    }
}

#[test]
fn zero_noise_schedule_composes_to_identity() {
    let s = build_linear_schedule(25, 0.0, 0.0).unwrap();
    let z = DVector::from_vec(vec![0.7, -1.3, 2.2]);
    let mut current = z.clone();
    for t in (1..=25).rev() {
        let (c_z, c_0, st) = reverse_coeffs(&s, t).unwrap();
        // hat z0 is irrelevant with c_0 = 0
        current = &current * c_z + DVector::from_vec(vec![9.0, 9.0, 9.0]) * c_0;
        assert_eq!(st, 0.0);
    }
    assert_eq!(current, z);
}

#[test]
fn adjoint_holds_for_random_kernels_and_poses() {
    let mut rng = named_stream(200, "adjoint-sweep");
    for trial in 0..20 {
        let n = 12;
        let x = Image::new(n, n, normal_vec(&mut rng, n * n)).unwrap();
        let y = Image::new(n, n, normal_vec(&mut rng, n * n)).unwrap();
        let op = if trial % 2 == 0 {
            let k = Kernel::new(5, normal_vec(&mut rng, 25)).unwrap();
            ForwardOperator::convolution(k, 0.0)
        } else {
            let angle = normal_vec(&mut rng, 1)[0];
            ForwardOperator::view(PoseParam::from_angle(angle), 0.0)
        };
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.transpose_apply(&y).unwrap());
        assert!((lhs - rhs).abs() < 1e-10, "trial {trial}: {lhs} vs {rhs}");
    }
}

#[test]
fn simplex_projection_exhaustive_small_lattice() {
    // every grid with entries from a fixed lattice, sizes 1..=4, plus the
    // random sweep in the proptest above
    let lattice = [-0.6, 0.0, 0.3, 1.2];
    for n in 1usize..=4 {
        let mut idx = vec![0usize; n];
        loop {
            let v: Vec<f64> = idx.iter().map(|&i| lattice[i]).collect();
            let fast = simplex_project_slice(&v);
            let slow = simplex_project_bruteforce(&v).unwrap();
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-9, "v={v:?}");
            }
            // odometer increment
            let mut pos = 0;
            loop {
                idx[pos] += 1;
                if idx[pos] < lattice.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
                if pos == n {
                    break;
                }
            }
            if pos == n {
                break;
            }
        }
    }
}
