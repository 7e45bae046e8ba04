use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilt_core::numkernel;
use tilt_core::proxcore::{self, mat_to_vec, vec_to_mat, NonsmoothTerm, TermKind};
use tilt_core::rng::{normal_vector, unit_vector};

fn term(kind: u8, p: usize, q: usize) -> NonsmoothTerm {
    match kind % 3 {
        0 => NonsmoothTerm::spectral(p, q),
        1 => NonsmoothTerm::l1(p * q),
        _ => NonsmoothTerm::nonpositive_orthant(p * q),
    }
}

/// Projection onto the unit ball of the dual norm (or the polar cone for the orthant).
fn dual_projection(g: &NonsmoothTerm, a: &DVector<f64>) -> DVector<f64> {
    match g.kind {
        TermKind::SpectralNorm { p, q } => {
            mat_to_vec(&proxcore::project_nuclear_ball(&vec_to_mat(a, p, q)).unwrap())
        }
        TermKind::L1Norm { .. } => a.map(|v| v.clamp(-1.0, 1.0)),
        TermKind::NonpositiveOrthant { .. } => a.map(|v| v.max(0.0)),
    }
}

/// A point of `dom g` with some exactly active coordinates.
fn domain_point(g: &NonsmoothTerm, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let mut x = normal_vector(rng, g.dim());
    for v in x.iter_mut() {
        if rng.random_bool(0.3) {
            *v = 0.0;
        }
    }
    if g.is_indicator() {
        x = x.map(|v| -v.abs());
    }
    x
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn moreau_decomposition(seed in any::<u64>(), kind in 0u8..3, p in 1usize..=4, q in 1usize..=4) {
        let g = term(kind, p, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = normal_vector(&mut rng, g.dim()) * rng.random_range(0.2..3.0);
        let prox = proxcore::prox_apply(&g, &a).unwrap();
        let resid = (&prox + dual_projection(&g, &a) - &a).amax();
        prop_assert!(resid <= 1e-12 * (1.0 + a.amax()), "residual {resid:e}");
    }

    #[test]
    fn prox_is_firmly_nonexpansive(seed in any::<u64>(), kind in 0u8..3, p in 1usize..=4, q in 1usize..=4) {
        let g = term(kind, p, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = normal_vector(&mut rng, g.dim()) * 2.0;
        let b = normal_vector(&mut rng, g.dim()) * 2.0;
        let pa = proxcore::prox_apply(&g, &a).unwrap();
        let pb = proxcore::prox_apply(&g, &b).unwrap();
        let d = &pa - &pb;
        prop_assert!(d.norm_squared() <= d.dot(&(&a - &b)) + 1e-10);
    }

    #[test]
    fn l1_ball_projection_is_optimal(seed in any::<u64>(), n in 1usize..=8, scale in 0.1f64..4.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = normal_vector(&mut rng, n) * scale;
        let p = proxcore::project_l1_ball(&v);
        prop_assert!(p.lp_norm(1) <= 1.0 + 1e-12);
        for _ in 0..20 {
            let z = unit_vector(&mut rng, n);
            let z = &z * (rng.random_range(0.0..1.0) / z.lp_norm(1));
            prop_assert!((&v - &p).dot(&(&z - &p)) <= 1e-8);
        }
    }

    #[test]
    fn moreau_gradient_matches_finite_differences(seed in any::<u64>(), kind in 0u8..3, sigma in 0.3f64..2.0) {
        let g = term(kind, 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normal_vector(&mut rng, g.dim()) * 1.5;
        let (_, grad) = proxcore::moreau_envelope(&g, sigma, &x).unwrap();
        let h = 1e-6;
        let fd = DVector::from_fn(x.len(), |i, _| {
            let mut e = DVector::zeros(x.len());
            e[i] = h;
            let up = proxcore::moreau_envelope(&g, sigma, &(&x + &e)).unwrap().0;
            let dn = proxcore::moreau_envelope(&g, sigma, &(&x - &e)).unwrap().0;
            (up - dn) / (2.0 * h)
        });
        prop_assert!((&fd - &grad).norm() <= 1e-5 * grad.norm().max(1.0));
    }

    #[test]
    fn subderivative_is_positively_homogeneous(seed in any::<u64>(), kind in 0u8..3, t in 0.05f64..20.0) {
        let g = term(kind, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = domain_point(&g, &mut rng);
        let d = normal_vector(&mut rng, g.dim());
        let base = proxcore::subderivative(&g, &x, &d).unwrap();
        let scaled = proxcore::subderivative(&g, &x, &(&d * t)).unwrap();
        if base.is_infinite() {
            prop_assert!(scaled.is_infinite());
        } else {
            prop_assert!((scaled - t * base).abs() <= 1e-9 * (1.0 + t * base.abs()));
        }
    }

    #[test]
    fn projected_subgradients_satisfy_the_subgradient_inequality(seed in any::<u64>(), kind in 0u8..3, p in 1usize..=3, q in 1usize..=4) {
        let g = term(kind, p, q);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = domain_point(&g, &mut rng);
        let w = proxcore::subdiff_project(&g, &x, &normal_vector(&mut rng, g.dim())).unwrap();
        prop_assert!(proxcore::subdiff_distance(&g, &x, &w).unwrap() <= 1e-9);
        for _ in 0..20 {
            let y = domain_point(&g, &mut rng);
            prop_assert!(g.value(&y) >= g.value(&x) + w.dot(&(&y - &x)) - 1e-7);
        }
    }

    #[test]
    fn nuclear_projection_lands_in_the_ball(seed in any::<u64>(), p in 1usize..=5, q in 1usize..=7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = tilt_core::rng::normal_matrix(&mut rng, p, q);
        let pa = proxcore::project_nuclear_ball(&a).unwrap();
        prop_assert!(numkernel::nuclear_norm(&pa) <= 1.0 + 1e-10);
        // the residual is a normal vector of the ball at the projection
        let r = &a - &pa;
        let b = tilt_core::rng::normal_matrix(&mut rng, p, q);
        let z = &b / numkernel::nuclear_norm(&b).max(1.0);
        prop_assert!(r.dot(&(z - &pa)) <= 1e-9 * (1.0 + a.norm()));
    }
}
