//! End-to-end solver checks on closed-form benchmarks: martingale
//! representation, deterministic drift decay, scheme agreement, determinism
//! across reruns and worker counts, and the truncation sequence.

use bsde_core::brownian::simulate_ensemble;
use bsde_core::generators::{
    make_affine, make_example2, make_zero, HFunctionParams, TerminalConfig,
};
use bsde_core::model::{empirical_norms, make_uniform_grid, TerminalSpec};
use bsde_core::solver::{
    node_mean_z, picard_truncation_sequence, solution_distance, solve_backward,
    solve_backward_with_model, y0_with_batch_stderr, SchemeSpec, SolverError,
};
use std::sync::Arc;

fn constant_terminal(value: f64) -> TerminalSpec {
    TerminalConfig::Constant { k: 1, value: vec![value], p: 2.0 }
        .build()
        .unwrap()
}

#[test]
fn martingale_representation_recovers_unit_z() {
    // g = 0, xi = B_T: Y_t = B_t and Z = 1.
    let gen = make_zero(1, 1).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let grid = make_uniform_grid(1.0, 16).unwrap();
    let ens = simulate_ensemble(&grid, 1, 20_000, 7).unwrap();
    let (sol, _model) = solve_backward_with_model(&gen, &xi, &ens, &SchemeSpec::explicit()).unwrap();

    let mean_z = node_mean_z(&sol);
    let worst = mean_z
        .iter()
        .take(grid.n_cells())
        .map(|row| (row[0] - 1.0).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 0.05, "worst node |mean Z - 1| = {worst}");

    // Y tracks B: a straight line in B_t explains almost all variance of
    // the solved Y at a middle node.
    let i = 8;
    let n = ens.paths as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for m in 0..ens.paths {
        let x = ens.state(m, i)[0];
        let yv = sol.y(m, i)[0];
        sx += x;
        sy += yv;
        sxx += x * x;
        sxy += x * yv;
        syy += yv * yv;
    }
    let cov = sxy / n - sx / n * (sy / n);
    let var_x = sxx / n - (sx / n) * (sx / n);
    let var_y = syy / n - (sy / n) * (sy / n);
    let r2 = cov * cov / (var_x * var_y);
    let slope = cov / var_x;
    assert!(r2 > 0.99, "R^2 = {r2}");
    assert!((slope - 1.0).abs() < 0.05, "slope = {slope}");
}

#[test]
fn drift_decay_reaches_exponential() {
    // g = -y, xi = 1: y_0 = e^{-T} exactly.
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.0]).unwrap();
    let xi = constant_terminal(1.0);
    let grid = make_uniform_grid(1.0, 32).unwrap();
    let ens = simulate_ensemble(&grid, 1, 4_000, 3).unwrap();
    // The trapezoidal implicit step is second order in time; explicit Euler
    // carries its first-order bias of about dt/2 e^{-1}.
    let cases = [(SchemeSpec::implicit(), 1e-3), (SchemeSpec::explicit(), 1e-2)];
    for (scheme, tol) in cases {
        let sol = solve_backward(&gen, &xi, &ens, &scheme).unwrap();
        let y0 = sol.y0_mean()[0];
        let err = (y0 - (-1.0f64).exp()).abs();
        assert!(err <= tol, "{:?}: err {err}", scheme.stepping);
    }
}

#[test]
fn terminal_slab_is_exact() {
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.5]).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let grid = make_uniform_grid(1.0, 8).unwrap();
    let ens = simulate_ensemble(&grid, 1, 500, 11).unwrap();
    let sol = solve_backward(&gen, &xi, &ens, &SchemeSpec::explicit()).unwrap();
    for m in 0..ens.paths {
        let view = ens.path_view(m);
        let want = xi.eval(view.terminal(), view);
        assert_eq!(sol.y(m, 8), want.as_slice());
    }
}

#[test]
fn reruns_and_worker_counts_agree_bitwise() {
    let gen = make_affine(1, 1, &[-1.0], &[0.3], &[0.2]).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let grid = make_uniform_grid(1.0, 12).unwrap();
    let ens = simulate_ensemble(&grid, 1, 6_000, 42).unwrap();
    let scheme = SchemeSpec::implicit();

    let base = solve_backward(&gen, &xi, &ens, &scheme).unwrap();
    let again = solve_backward(&gen, &xi, &ens, &scheme).unwrap();
    assert_eq!(base.y, again.y);
    assert_eq!(base.z, again.z);

    for threads in [1usize, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let sol = pool.install(|| solve_backward(&gen, &xi, &ens, &scheme).unwrap());
        assert_eq!(sol.y, base.y, "threads = {threads}");
        assert_eq!(sol.z, base.z, "threads = {threads}");
    }
}

#[test]
fn implicit_agrees_with_explicit_within_refinement_gap() {
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.0]).unwrap();
    let xi = constant_terminal(1.0);
    let fine = make_uniform_grid(1.0, 64).unwrap();
    let coarse = make_uniform_grid(1.0, 32).unwrap();
    let ens_fine = simulate_ensemble(&fine, 1, 2_000, 5).unwrap();
    let ens_coarse = simulate_ensemble(&coarse, 1, 2_000, 5).unwrap();

    let y_exp = solve_backward(&gen, &xi, &ens_fine, &SchemeSpec::explicit())
        .unwrap()
        .y0_mean()[0];
    let y_imp = solve_backward(&gen, &xi, &ens_fine, &SchemeSpec::implicit())
        .unwrap()
        .y0_mean()[0];
    let y_exp_coarse = solve_backward(&gen, &xi, &ens_coarse, &SchemeSpec::explicit())
        .unwrap()
        .y0_mean()[0];
    let gap = (y_exp - y_exp_coarse).abs();
    assert!(
        (y_exp - y_imp).abs() <= 3.0 * gap,
        "schemes differ by {} against refinement gap {gap}",
        (y_exp - y_imp).abs()
    );
}

#[test]
fn refinement_decreases_deterministic_error() {
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.0]).unwrap();
    let xi = constant_terminal(1.0);
    let exact = (-1.0f64).exp();
    let mut prev = f64::INFINITY;
    for n in [8usize, 16, 32, 64] {
        let grid = make_uniform_grid(1.0, n).unwrap();
        let ens = simulate_ensemble(&grid, 1, 500, 2).unwrap();
        let y0 = solve_backward(&gen, &xi, &ens, &SchemeSpec::implicit())
            .unwrap()
            .y0_mean()[0];
        let err = (y0 - exact).abs();
        assert!(err < prev * 1.000001, "error must not grow: {err} after {prev}");
        prev = err;
    }
    assert!(prev < 1e-4);
}

#[test]
fn step_size_guard_rejects_coarse_grids_for_stiff_moduli() {
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.0])
        .unwrap()
        .with_modulus(bsde_core::modulus::ModulusFn::linear(100.0).unwrap());
    let xi = constant_terminal(1.0);
    let grid = make_uniform_grid(1.0, 4).unwrap();
    let ens = simulate_ensemble(&grid, 1, 100, 1).unwrap();
    match solve_backward(&gen, &xi, &ens, &SchemeSpec::implicit()) {
        Err(SolverError::StepSizeGuard { .. }) => {}
        other => panic!("expected the step-size guard, got {other:?}"),
    }
}

#[test]
fn example2_two_dimensional_implicit_solve_is_stable_across_seeds() {
    let gen = make_example2(2, HFunctionParams::with_defaults(2.0).unwrap()).unwrap();
    let xi = TerminalConfig::BrownianLinear {
        k: 2,
        d: 1,
        weights: vec![1.0, -0.5],
        shift: vec![0.0, 0.2],
        p: 2.0,
    }
    .build()
    .unwrap();
    let grid = make_uniform_grid(1.0, 16).unwrap();
    let scheme = SchemeSpec::default_for(&gen);
    assert_eq!(scheme.stepping, bsde_core::solver::Stepping::ImplicitY);

    let ens_a = simulate_ensemble(&grid, 1, 8_000, 100).unwrap();
    let ens_b = simulate_ensemble(&grid, 1, 8_000, 200).unwrap();
    let (y0_a, se_a) = y0_with_batch_stderr(&gen, &xi, &ens_a, &scheme, 8).unwrap();
    let (y0_b, se_b) = y0_with_batch_stderr(&gen, &xi, &ens_b, &scheme, 8).unwrap();
    let gap: f64 = y0_a
        .iter()
        .zip(&y0_b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(
        gap <= 3.0 * (se_a + se_b),
        "independent-seed gap {gap} exceeds noise floor {}",
        3.0 * (se_a + se_b)
    );
}

#[test]
fn distance_examples() {
    let gen = make_zero(1, 1).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let grid = make_uniform_grid(1.0, 8).unwrap();
    let ens = simulate_ensemble(&grid, 1, 2_000, 9).unwrap();
    let scheme = SchemeSpec::explicit();
    let a = solve_backward(&gen, &xi, &ens, &scheme).unwrap();

    // Identical solutions are at distance zero.
    let d0 = solution_distance(&a, &a, 2.0).unwrap();
    assert_eq!(d0.s_p, 0.0);
    assert_eq!(d0.m_p, 0.0);

    // Shifting Y by a constant moves s_p by exactly that constant.
    let mut b = a.clone();
    for v in b.y.iter_mut() {
        *v += 0.75;
    }
    let d = solution_distance(&a, &b, 2.0).unwrap();
    assert!((d.s_p - 0.75).abs() < 1e-12);

    // Positive homogeneity of the distance.
    let mut c = a.clone();
    for v in c.y.iter_mut() {
        *v *= 2.0;
    }
    for v in c.z.iter_mut() {
        *v *= 2.0;
    }
    let half = solution_distance(&a, &c, 2.0).unwrap();
    let norms_a = empirical_norms(&a, 2.0).unwrap();
    // a - c = -a, so the distance equals the norms of a.
    assert!((half.s_p - norms_a.s_p).abs() < 1e-12);
    assert!((half.m_p - norms_a.m_p).abs() < 1e-12);
}

#[test]
fn truncation_sequence_stabilizes_for_bounded_data() {
    // Bounded problem: once n dominates both bounds the truncation is a
    // bit-exact no-op and all solutions coincide.
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.5]).unwrap();
    let xi = TerminalConfig::BoundedSine {
        k: 1,
        d: 1,
        amplitude: 1.0,
        shift: vec![1.0],
        p: 2.0,
    }
    .build()
    .unwrap();
    let grid = make_uniform_grid(1.0, 8).unwrap();
    let ens = simulate_ensemble(&grid, 1, 1_000, 4).unwrap();
    let sols =
        picard_truncation_sequence(&gen, &xi, &[4.0, 8.0, 16.0], &ens, &SchemeSpec::implicit())
            .unwrap();
    assert_eq!(sols[0].y, sols[1].y);
    assert_eq!(sols[1].y, sols[2].y);
    assert_eq!(sols[0].z, sols[2].z);
}

#[test]
fn truncation_error_matches_closed_form_for_constant_terminal() {
    // g = 0, xi = 3: the level-1 solution is constant 1, the level-4
    // solution is constant 3, so the distance is exactly |q_1(3) - 3| = 2.
    let gen = make_zero(1, 1).unwrap();
    let xi = constant_terminal(3.0);
    let grid = make_uniform_grid(1.0, 8).unwrap();
    let ens = simulate_ensemble(&grid, 1, 500, 21).unwrap();
    let sols = picard_truncation_sequence(&gen, &xi, &[1.0, 4.0], &ens, &SchemeSpec::explicit())
        .unwrap();
    let d = solution_distance(&sols[0], &sols[1], 2.0).unwrap();
    assert!((d.s_p - 2.0).abs() < 1e-12, "distance {}", d.s_p);
}

#[test]
fn antithetic_ensemble_solves_and_halves_terminal_mean() {
    let gen = make_zero(1, 1).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let grid = make_uniform_grid(1.0, 4).unwrap();
    let base = simulate_ensemble(&grid, 1, 700, 77).unwrap();
    let doubled = bsde_core::brownian::antithetic_pairing(&base);
    let sol = solve_backward(&gen, &xi, &doubled, &SchemeSpec::explicit()).unwrap();
    // Terminal mean over the doubled ensemble vanishes exactly when
    // accumulated pair by pair.
    let mut mean_xi = 0.0;
    for m in 0..base.paths {
        mean_xi += sol.y(m, 4)[0] + sol.y(m + base.paths, 4)[0];
    }
    assert_eq!(mean_xi, 0.0);
}

#[test]
fn non_uniform_grids_use_per_cell_widths() {
    // A grid graded toward the time origin; the deterministic decay
    // benchmark must still land on e^{-T} because every update uses its own
    // cell width.
    let nodes: Vec<f64> = (0..=32).map(|i| (i as f64 / 32.0).powi(2)).collect();
    let grid = bsde_core::model::TimeGrid::new(nodes).unwrap();
    let gen = make_affine(1, 1, &[-1.0], &[0.0], &[0.0]).unwrap();
    let xi = constant_terminal(1.0);
    let ens = simulate_ensemble(&grid, 1, 400, 13).unwrap();
    let y0 = solve_backward(&gen, &xi, &ens, &SchemeSpec::implicit())
        .unwrap()
        .y0_mean()[0];
    assert!((y0 - (-1.0f64).exp()).abs() < 1e-3, "y0 = {y0}");
}

#[test]
fn forcing_enters_through_exact_cell_integrals() {
    // g = 0 plus declared forcing t^{-1/3}: y_0 = xi + integral of forcing.
    let eval = Arc::new(|_: f64, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]| {
        out.fill(0.0);
    });
    let gen = bsde_core::model::GeneratorSpec::new("forced", 1, 1, eval)
        .unwrap()
        .with_forcing(
            bsde_core::model::SingularForcing::power_law(vec![1.0], -1.0 / 3.0).unwrap(),
        );
    let xi = constant_terminal(0.0);
    let grid = make_uniform_grid(1.0, 16).unwrap();
    let ens = simulate_ensemble(&grid, 1, 200, 6).unwrap();
    let sol = solve_backward(&gen, &xi, &ens, &SchemeSpec::explicit()).unwrap();
    let y0 = sol.y0_mean()[0];
    assert!(
        (y0 - 1.5).abs() < 1e-12,
        "forcing integral must enter exactly: y0 = {y0}"
    );
}
