use nalgebra::{DMatrix, DVector};
use oic_core::channel::{epsilon_rank, reduce, ChannelMatrix, DEFAULT_RANK_TOL};
use oic_core::io::fmt_g9;
use oic_core::low_snr::{ladder_best_beta, solve_bc_allocation, v_max_ec};
use oic_core::maxent::{gamma_b, gamma_e, max_entropy_unit_bounded, max_entropy_unit_mean};
use oic_core::scenarios::{lambertian_gain, rotation_matrix};
use oic_core::zonotope::{decompose_matrix, FiberMap};
use oic_core::{IntensityProfile, QuadratureConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(max_r: usize, max_t: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_r, 1..=max_t).prop_flat_map(|(r, t)| {
        prop::collection::vec(0.01f64..1.0, r * t).prop_map(move |v| DMatrix::from_row_slice(r, t, &v))
    })
}

fn alpha_for(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..0.99, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduction_reconstructs(h in matrix(4, 5)) {
        let ch = ChannelMatrix::new(h.clone()).unwrap();
        let rc = reduce(&ch, DEFAULT_RANK_TOL).unwrap();
        prop_assert!((rc.reconstruct() - &h).amax() <= 1e-10);
        let vtv = rc.v.transpose() * &rc.v;
        prop_assert!((vtv - DMatrix::identity(h.ncols(), h.ncols())).amax() <= 1e-10);
        prop_assert!(rc.v1.column(0).sum() > 0.0);
        prop_assert!(rc.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn eps_rank_is_monotone(h in matrix(4, 4), e1 in 0.05f64..1.0, e2 in 0.05f64..1.0) {
        let ch = ChannelMatrix::new(h).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(epsilon_rank(&ch, lo).unwrap() <= epsilon_rank(&ch, hi).unwrap());
    }

    #[test]
    fn zonotope_cells_cover_samples(seed in 0u64..1000, r in 1usize..=3, extra in 0usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(r, r + extra, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let zd = decompose_matrix(&g).unwrap();
        let sum: f64 = zd.cells.iter().map(|c| c.det_abs).sum();
        prop_assert!((sum - zd.volume).abs() <= 1e-12 * zd.volume.max(1.0));
        for _ in 0..20 {
            let s = zd.sample_uniform(&mut rng);
            prop_assert!(zd.contains(&s, 1e-9));
        }
    }

    #[test]
    fn fiber_contains_the_input_segment(h in prop::collection::vec(0.01f64..1.0, 3), t in 0.0f64..1.0) {
        let ch = ChannelMatrix::new(DMatrix::from_row_slice(1, 3, &h)).unwrap();
        let ch2 = ChannelMatrix::new(DMatrix::from_row_slice(2, 3, &[h[0], h[1], h[2], h[2], h[0], h[1]]));
        for ch in [Some(ch), ch2.ok()].into_iter().flatten() {
            let rc = reduce(&ch, DEFAULT_RANK_TOL).unwrap();
            if rc.r + 1 != 3 {
                continue;
            }
            let fiber = FiberMap::new(&rc).unwrap();
            let x = DVector::from_element(3, t);
            let s = &rc.h_tilde * &x;
            let lam = rc.v_tail.as_ref().unwrap().dot(&x);
            let f = fiber.fiber(&s).unwrap();
            prop_assert!(f.lo <= lam + 1e-10 && lam <= f.hi + 1e-10);
        }
    }

    #[test]
    fn bounded_cost_dominates_equal_cost(h in prop::collection::vec(0.05f64..1.0, 2), a in alpha_for(2)) {
        let ch = ChannelMatrix::new(DMatrix::from_row_slice(1, 2, &h)).unwrap();
        let rc = reduce(&ch, DEFAULT_RANK_TOL).unwrap();
        let alpha = IntensityProfile::new(a).unwrap();
        let cfg = QuadratureConfig::default();
        let e = gamma_e(&rc, &alpha, &cfg).unwrap();
        let b = gamma_b(&rc, &alpha, &cfg).unwrap();
        prop_assert!(e.is_converged() && b.is_converged());
        prop_assert!(e.gamma <= b.gamma + 1e-9);
        prop_assert!(b.gamma <= (rc.sigma[0] * rc.v1.column(0).sum()).ln() + 1e-9);
    }

    #[test]
    fn low_snr_orderings(h in matrix(3, 4), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha: Vec<f64> = (0..h.ncols()).map(|_| rand::Rng::random_range(&mut rng, 0.0..1.0)).collect();
        let g = h.transpose() * &h;
        let at_alpha = v_max_ec(&g, &alpha);
        prop_assert!(at_alpha >= -1e-15);
        let opt = solve_bc_allocation(&g, &alpha).unwrap();
        let (_, ladder) = ladder_best_beta(&g, &alpha).unwrap();
        prop_assert!(opt.value >= at_alpha - 1e-12);
        prop_assert!(opt.value >= ladder - 1e-12);
        prop_assert!(opt.x.iter().zip(&alpha).all(|(x, a)| *x >= -1e-15 && *x <= a + 1e-15));
    }

    #[test]
    fn scalar_entropies(a in 0.0f64..=1.0) {
        let h = max_entropy_unit_mean(a);
        prop_assert!(h <= 1e-15);
        prop_assert!((h - max_entropy_unit_mean(1.0 - a)).abs() <= 1e-9);
        prop_assert!(max_entropy_unit_bounded(a) >= h - 1e-15);
    }

    #[test]
    fn g9_round_trips(x in prop::num::f64::NORMAL) {
        let back: f64 = fmt_g9(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs());
    }

    #[test]
    fn rotations_are_proper(y in -10.0f64..10.0, p in -10.0f64..10.0, r in -10.0f64..10.0) {
        let m = rotation_matrix(y, p, r);
        prop_assert!((m.transpose() * m - nalgebra::Matrix3::identity()).amax() <= 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn lambertian_inverse_square_along_a_ray(x in -1.0f64..1.0, y in -1.0f64..1.0, t in 0.5f64..2.0, k in 1.0f64..3.0) {
        let led = [0.0, 0.0, 3.2];
        let at = |scale: f64| [led[0] + scale * x, led[1] + scale * y, led[2] - scale];
        let near = lambertian_gain(led, at(t), [0.0, 0.0, 1.0], 1.0, 60.0).unwrap();
        let far = lambertian_gain(led, at(t * k), [0.0, 0.0, 1.0], 1.0, 60.0).unwrap();
        prop_assert!((far * k * k - near).abs() <= 1e-12 * near.max(1e-300));
    }
}
