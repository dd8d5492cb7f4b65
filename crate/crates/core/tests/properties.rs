//! Property-based invariants: norm symmetries, hull sandwiches, classifier
//! monotonicity, Bihari monotonicity, and the truncation clamp algebra.

use bsde_core::model::{
    norms_from_path_stats, DiscreteSolution, EnsembleId, TimeGrid,
};
use bsde_core::modulus::{
    bihari_bound, concave_majorant, discrete_concavity_holds, lift_order, osgood_classifier,
    star_shape_holds, Divergence, ModulusFn, OsgoodVariant,
};
use bsde_core::generators::truncate_vector;
use proptest::prelude::*;

fn toy_solution(paths: usize, nodes: usize, y: Vec<f64>, z: Vec<f64>) -> DiscreteSolution {
    let grid_nodes: Vec<f64> = (0..=nodes).map(|i| i as f64 / nodes as f64).collect();
    DiscreteSolution {
        grid: TimeGrid::new(grid_nodes).unwrap(),
        k: 1,
        d: 1,
        paths,
        y,
        z,
        ensemble: EnsembleId { seed: 0, d: 1, paths, n_nodes: nodes + 1, antithetic: false },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn norms_invariant_under_path_permutation(
        values in prop::collection::vec(-5.0f64..5.0, 24),
        rotation in 0usize..6,
    ) {
        // 6 paths, 3 nodes for Y (4 nodes incl. terminal... use 3 nodes);
        // reuse the same raw values for Z.
        let paths = 6;
        let nodes = 3;
        let y = values.clone();
        let z = values.clone();
        let sol = toy_solution(paths, nodes, y.clone(), z.clone());
        let n = bsde_core::model::empirical_norms(&sol, 2.0).unwrap();

        // Rotate the paths.
        let stride = nodes + 1;
        let mut y_rot = vec![0.0; y.len()];
        let mut z_rot = vec![0.0; z.len()];
        for m in 0..paths {
            let src = (m + rotation) % paths;
            y_rot[m * stride..(m + 1) * stride]
                .copy_from_slice(&y[src * stride..(src + 1) * stride]);
            z_rot[m * stride..(m + 1) * stride]
                .copy_from_slice(&z[src * stride..(src + 1) * stride]);
        }
        let sol_rot = toy_solution(paths, nodes, y_rot, z_rot);
        let n_rot = bsde_core::model::empirical_norms(&sol_rot, 2.0).unwrap();
        prop_assert!((n.s_p - n_rot.s_p).abs() <= 1e-12 * n.s_p.max(1e-12));
        prop_assert!((n.m_p - n_rot.m_p).abs() <= 1e-12 * n.m_p.max(1e-12));
    }

    #[test]
    fn norms_are_positively_homogeneous(
        values in prop::collection::vec(-5.0f64..5.0, 24),
        scale in 0.01f64..100.0,
    ) {
        let paths = 6;
        let nodes = 3;
        let sol = toy_solution(paths, nodes, values.clone(), values.clone());
        let n = bsde_core::model::empirical_norms(&sol, 2.0).unwrap();
        let scaled: Vec<f64> = values.iter().map(|v| v * scale).collect();
        let sol_s = toy_solution(paths, nodes, scaled.clone(), scaled);
        let n_s = bsde_core::model::empirical_norms(&sol_s, 2.0).unwrap();
        prop_assert!((n_s.s_p - scale * n.s_p).abs() <= 1e-9 * (1.0 + scale * n.s_p));
        prop_assert!((n_s.m_p - scale * n.m_p).abs() <= 1e-9 * (1.0 + scale * n.m_p));
    }

    #[test]
    fn s_p_is_monotone_in_the_order(
        u in prop::collection::vec(0.0f64..10.0, 8),
    ) {
        // Power-mean inequality on the path statistics.
        let (p, q) = (1.5f64, 3.0f64);
        let up: Vec<f64> = u.iter().map(|x| x.powf(p)).collect();
        let uq: Vec<f64> = u.iter().map(|x| x.powf(q)).collect();
        let v = vec![0.0; u.len()];
        let np = norms_from_path_stats(&up, &v, p).unwrap();
        let nq = norms_from_path_stats(&uq, &v, q).unwrap();
        prop_assert!(np.s_p <= nq.s_p * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn hull_sandwich_on_random_star_shaped_functions(
        raw in prop::collection::vec(0.01f64..1.0, 16),
    ) {
        // Build a star-shaped nondecreasing f from raw increments.
        let n = raw.len();
        let grid: Vec<f64> = (1..=n).map(|i| i as f64).collect();
        let mut vals = Vec::with_capacity(n);
        let mut acc = 0.0;
        let mut ratio_prev = f64::INFINITY;
        for (i, r) in raw.iter().enumerate() {
            acc += r;
            let capped = acc.min(ratio_prev * grid[i]);
            let v: f64 = if i > 0 { capped.max(vals[i - 1]) } else { capped };
            vals.push(v);
            acc = v;
            ratio_prev = v / grid[i];
        }
        prop_assert!(star_shape_holds(&grid, &vals).is_ok());
        let hull = concave_majorant(&grid, &vals).unwrap();
        for (&x, &f) in grid.iter().zip(&vals) {
            let h = hull.eval(x).unwrap();
            prop_assert!(h >= f - 1e-12 * f.abs());
            prop_assert!(h <= 2.0 * f + 1e-12 * f.abs());
        }
        // Lemma-2a direction: the hull is concave, so hull(x)/x is
        // nonincreasing.
        let hull_vals: Vec<f64> = grid.iter().map(|&x| hull.eval(x).unwrap()).collect();
        prop_assert!(star_shape_holds(&grid, &hull_vals).is_ok());
        prop_assert!(discrete_concavity_holds(&grid, &hull_vals));
    }

    #[test]
    fn lifted_moduli_are_concave_and_star_shaped(
        mu in 0.2f64..4.0,
        q in 2.0f64..4.0,
    ) {
        let rho = ModulusFn::linear(mu).unwrap();
        let lifted = lift_order(&rho, 1.0, q).unwrap();
        prop_assert!(lifted.concave_verified());
        let grid = lifted.evaluation_grid();
        let vals: Vec<f64> = grid.iter().map(|&x| lifted.eval(x).unwrap()).collect();
        prop_assert!(star_shape_holds(&grid, &vals).is_ok());
    }

    #[test]
    fn truncation_clamp_algebra(
        x in prop::collection::vec(-30.0f64..30.0, 3),
        n in 0.5f64..20.0,
        m_extra in 0.1f64..10.0,
    ) {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let clamped = truncate_vector(&x, n);
        // Norm of the output is min(|x|, n).
        prop_assert!((norm(&clamped) - norm(&x).min(n)).abs() <= 1e-12 * (1.0 + n));
        // Idempotent at the same level.
        let twice = truncate_vector(&clamped, n);
        for (a, b) in clamped.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        // Stabilization: levels beyond |x| act as the identity.
        let big = norm(&x) + m_extra;
        prop_assert_eq!(truncate_vector(&x, big), x.clone());
        // 1-Lipschitz on a random pair.
        let y: Vec<f64> = x.iter().map(|v| v * 0.7 + 0.3).collect();
        let cy = truncate_vector(&y, n);
        let dist_in: f64 = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let dist_out: f64 =
            norm(&clamped.iter().zip(&cy).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!(dist_out <= dist_in * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn bihari_bound_is_monotone(
        a in 0.05f64..2.0,
        bump in 0.01f64..1.0,
        horizon in 0.1f64..2.0,
    ) {
        let rho = ModulusFn::power(0.5).unwrap();
        let base = bihari_bound(a, &rho, horizon, 1.0).unwrap();
        let larger_a = bihari_bound(a + bump, &rho, horizon, 1.0).unwrap();
        let longer = bihari_bound(a, &rho, horizon + bump, 1.0).unwrap();
        prop_assert!(larger_a >= base - 1e-9 * base);
        prop_assert!(longer >= base - 1e-9 * base);
    }
}

#[test]
fn classifier_monotone_under_nodewise_domination() {
    // rho1 <= rho2 nodewise with rho2 divergent: rho1 must never classify
    // as convergent.
    let grid = bsde_core::modulus::log_grid(1.0, 256);
    let rho2_vals: Vec<f64> = grid.to_vec();
    let rho1_vals: Vec<f64> = grid.iter().map(|&x| 0.5 * x).collect();
    let rho2 = ModulusFn::tabulated(grid.clone(), rho2_vals).unwrap();
    let rho1 = ModulusFn::tabulated(grid, rho1_vals).unwrap();
    let v2 = osgood_classifier(&rho2, 1.0, OsgoodVariant::Osgood).unwrap();
    assert_eq!(v2.verdict, Divergence::Diverges);
    let v1 = osgood_classifier(&rho1, 1.0, OsgoodVariant::Osgood).unwrap();
    assert_ne!(v1.verdict, Divergence::Converges);

    // Same implication for the power family below the linear envelope.
    let p15 = osgood_classifier(
        &ModulusFn::power(1.5).unwrap(),
        1.0,
        OsgoodVariant::Osgood,
    )
    .unwrap();
    assert_ne!(p15.verdict, Divergence::Converges);
}

#[test]
fn constantin_divergence_descends_in_the_order() {
    // If the order-q Costantin integral diverges then so does the order-p
    // one for p < q.
    let pbar = 2.0;
    let rho = ModulusFn::log_osgood_default_delta(1.0 / pbar).unwrap();
    let at_q = osgood_classifier(&rho, pbar, OsgoodVariant::ConstantinP).unwrap();
    assert_eq!(at_q.verdict, Divergence::Diverges);
    for p in [1.0, 1.3, 1.7] {
        let at_p = osgood_classifier(&rho, p, OsgoodVariant::ConstantinP).unwrap();
        assert_eq!(at_p.verdict, Divergence::Diverges, "p = {p}");
    }
    // Above the critical order the integral converges, so the implication
    // cannot be reversed.
    let above = osgood_classifier(&rho, 3.0, OsgoodVariant::ConstantinP).unwrap();
    assert_eq!(above.verdict, Divergence::Converges);
}
