//! The condition falsifiers against fixtures with known verdicts: monotone
//! and expansive drifts, square-root cusps, discontinuities, unintegrable
//! drifts and heavy-tailed terminal data, plus the per-sample hierarchy
//! implications between the condition families.

use bsde_core::brownian::simulate_ensemble;
use bsde_core::conditions::{
    check_a1, check_a2, check_continuity_y, check_general_growth, check_integrability,
    check_lipschitz_z, check_one_sided, check_two_sided, check_weak_monotonicity,
    integrability_estimate, OneSidedVariant, SamplerSpec, TwoSidedVariant,
};
use bsde_core::generators::{
    make_affine, make_example1, make_example2, truncate_problem, HFunctionParams, TerminalConfig,
};
use bsde_core::model::{make_uniform_grid, GeneratorSpec, ProcessFn, TerminalSpec};
use bsde_core::modulus::{lift_order, linear_growth_bound, ModulusFn};
use std::sync::Arc;

fn scalar_gen(name: &str, f: impl Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync + 'static) -> GeneratorSpec {
    GeneratorSpec::new(
        name,
        1,
        1,
        Arc::new(move |t, b, y: &[f64], z: &[f64], out: &mut [f64]| {
            out[0] = f(t, b, y[0], z);
        }),
    )
    .unwrap()
}

fn sampler(count: usize) -> SamplerSpec {
    SamplerSpec::new(0xfeed, count, 1.0)
}

fn zero_proc() -> ProcessFn {
    Arc::new(|_, _| 0.0)
}

#[test]
fn decaying_drift_passes_weak_monotonicity_with_negative_slack() {
    let gen = scalar_gen("decay", |_, _, y, _| -y);
    let rho = ModulusFn::linear(1.0).unwrap();
    let report = check_weak_monotonicity(&gen, &rho, 2.0, &sampler(20_000)).unwrap();
    assert!(report.passed);
    assert!(report.max_slack <= 0.0, "slack {}", report.max_slack);
}

#[test]
fn quadratic_drift_is_falsified_with_a_reusable_witness() {
    let gen = scalar_gen("square", |_, _, y, _| y * y);
    let rho = ModulusFn::linear(5.0).unwrap();
    let report = check_weak_monotonicity(&gen, &rho, 2.0, &sampler(20_000)).unwrap();
    assert!(!report.passed);
    assert!(report.violation_count > 0);
    // Soundness: every recorded witness re-evaluates to a true violation.
    for v in &report.violations {
        let dy = v.y1[0] - v.y2[0];
        let g1 = gen.eval_vec(v.t, &v.b, &v.y1, &v.z1);
        let g2 = gen.eval_vec(v.t, &v.b, &v.y2, &v.z1);
        let lhs = dy.abs() * (dy / dy.abs()) * (g1[0] - g2[0]);
        let rhs = 5.0 * dy.abs().powi(2);
        assert!(lhs > rhs + 1e-12, "witness must replay: {lhs} vs {rhs}");
    }
}

#[test]
fn square_root_cusp_needs_a_cusp_modulus() {
    // The sharp constant for sqrt(|y|) sign(y) is sqrt(2): opposite-sign
    // pairs give |dg| = sqrt(|y1|) + sqrt(|y2|) <= sqrt(2) sqrt(|y1 - y2|),
    // with equality at |y1| = |y2|. A plain sqrt modulus is falsified there.
    let gen = scalar_gen("cusp", |_, _, y, _| y.abs().sqrt() * y.signum());
    let plain_sqrt = ModulusFn::power(0.5).unwrap();
    let report =
        check_one_sided(&gen, &plain_sqrt, 1.0, OneSidedVariant::Osgood, &sampler(20_000))
            .unwrap();
    assert!(!report.passed, "opposite-sign pairs exceed the unscaled bound");

    let sqrt_rho = ModulusFn::scaled(2f64.sqrt(), ModulusFn::power(0.5).unwrap()).unwrap();
    let report =
        check_one_sided(&gen, &sqrt_rho, 1.0, OneSidedVariant::Osgood, &sampler(20_000)).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);

    let linear = ModulusFn::linear(4.0).unwrap();
    let report =
        check_one_sided(&gen, &linear, 1.0, OneSidedVariant::Osgood, &sampler(20_000)).unwrap();
    assert!(!report.passed, "violations must appear near the origin");
    let near_origin = report
        .violations
        .iter()
        .any(|v| v.y1[0].abs().max(v.y2[0].abs()) < 0.1);
    assert!(near_origin);
}

#[test]
fn quadratic_z_growth_breaks_any_lipschitz_constant() {
    let gen = GeneratorSpec::new(
        "zsquare",
        1,
        1,
        Arc::new(|_t: f64, _b: &[f64], _y: &[f64], z: &[f64], out: &mut [f64]| {
            out[0] = z.iter().map(|v| v * v).sum::<f64>();
        }),
    )
    .unwrap();
    let report = check_lipschitz_z(&gen, 10.0, &sampler(10_000)).unwrap();
    assert!(!report.passed, "|z|^2 growth must be falsified");
    // A witness lives at large z.
    assert!(report
        .violations
        .iter()
        .any(|v| v.z1.iter().chain(v.z2.as_ref().unwrap()).any(|x| x.abs() > 2.0)));
}

#[test]
fn decaying_drift_passes_the_one_sided_osgood_display() {
    let gen = scalar_gen("decay", |_, _, y, _| -y);
    let rho = ModulusFn::linear(1.0).unwrap();
    let report =
        check_one_sided(&gen, &rho, 1.0, OneSidedVariant::Osgood, &sampler(10_000)).unwrap();
    assert!(report.passed);
    assert!(report.max_slack <= 0.0, "the directional difference is nonpositive");
}

#[test]
fn example1_passes_its_claimed_costantin_condition() {
    let params = HFunctionParams::with_defaults(2.0).unwrap();
    let gen = make_example1(params).unwrap();
    let rho = gen.modulus.clone().unwrap();
    let report =
        check_one_sided(&gen, &rho, 2.0, OneSidedVariant::Constantin, &sampler(30_000)).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
    let report = check_lipschitz_z(&gen, 1.0, &sampler(30_000)).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
}

#[test]
fn example2_passes_weak_monotonicity_with_its_lifted_modulus() {
    let params = HFunctionParams::with_defaults(2.0).unwrap();
    let gen = make_example2(2, params).unwrap();
    let rho = gen.modulus.clone().unwrap();
    let kappa = lift_order(&rho, 1.0, 2.0).unwrap();
    let report = check_weak_monotonicity(&gen, &kappa, 2.0, &sampler(30_000)).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
}

#[test]
fn two_sided_variants_and_the_order_one_degeneracy() {
    // A Lipschitz fixture passes the two-sided Osgood check.
    let gen = scalar_gen("lip", |_, _, y, _| -y + y.sin());
    let rho = ModulusFn::linear(2.0).unwrap();
    let report =
        check_two_sided(&gen, &rho, 1.0, TwoSidedVariant::Osgood, &sampler(10_000)).unwrap();
    assert!(report.passed);

    // An exponential perturbation breaks any linear two-sided bound on a
    // large box.
    let gen_exp = scalar_gen("exp", |_, _, y, _| -y + y.exp());
    let report =
        check_two_sided(&gen_exp, &rho, 1.0, TwoSidedVariant::Osgood, &sampler(10_000)).unwrap();
    assert!(!report.passed);

    // At p = 1 the two-sided weak-monotonicity display and the two-sided
    // Osgood display are the same formula, bit for bit.
    let a = check_two_sided(&gen, &rho, 1.0, TwoSidedVariant::WeakMonotonicity, &sampler(5_000))
        .unwrap();
    let b = check_two_sided(&gen, &rho, 1.0, TwoSidedVariant::Osgood, &sampler(5_000)).unwrap();
    assert_eq!(a.passed, b.passed);
    assert_eq!(a.max_slack, b.max_slack);
}

#[test]
fn continuity_checker_separates_jumps_from_steep_slopes() {
    for gen in [
        scalar_gen("smooth", |_, b, y, _| -(b[0].abs() * y).exp()),
        scalar_gen("null", |_, _, _, _| 0.0),
    ] {
        let report = check_continuity_y(&gen, &sampler(2_000)).unwrap();
        assert!(report.passed, "{} flagged: {}", report.condition_id, report.max_slack);
    }
    let step = scalar_gen("sign", |_, _, y, _| y.signum());
    let report = check_continuity_y(&step, &sampler(2_000)).unwrap();
    assert!(!report.passed, "a jump at the origin must be flagged");
    // Oscillation of the sign function across the origin is 2.
    assert!(report.violations.iter().any(|v| (v.lhs - 2.0).abs() < 1e-9));
}

#[test]
fn general_growth_gate() {
    let grid = make_uniform_grid(1.0, 16).unwrap();
    let ens = simulate_ensemble(&grid, 1, 64, 5).unwrap();

    // Linear drift: the growth functional is about alpha T.
    let gen = scalar_gen("decay", |_, _, y, _| -y);
    let report = check_general_growth(&gen, &[2.0], &ens).unwrap();
    assert!(report.passed);

    // Example 1 has finite growth.
    let ex1 = make_example1(HFunctionParams::with_defaults(2.0).unwrap()).unwrap();
    let report = check_general_growth(&ex1, &[2.0], &ens).unwrap();
    assert!(report.passed);

    // A y-coupled 1/t drift is not time-integrable and must be flagged
    // under quadrature refinement.
    let bad = scalar_gen("unintegrable", |t, _, y, _| y / t);
    let report = check_general_growth(&bad, &[2.0], &ens).unwrap();
    assert!(!report.passed, "slack {}", report.max_slack);
}

#[test]
fn integrability_gate_and_estimates() {
    let grid = make_uniform_grid(1.0, 16).unwrap();
    let ens = simulate_ensemble(&grid, 1, 40_000, 9).unwrap();

    // xi = B_T with zero drift: the estimate is E|B_1|^2 = 1.
    let gen = scalar_gen("null", |_, _, _, _| 0.0);
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let report = check_integrability(&xi, &gen, 2.0, &ens).unwrap();
    assert!(report.passed);
    let est = integrability_estimate(&xi, &gen, 2.0, &ens);
    assert!((est - 1.0).abs() < 0.05, "estimate {est}");

    // Example 1: the t^{-1/3} forcing enters through exact cell integrals.
    let ex1 = make_example1(HFunctionParams::with_defaults(2.0).unwrap()).unwrap();
    let report = check_integrability(&xi, &ex1, 2.0, &ens).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
    let est = integrability_estimate(&xi, &ex1, 2.0, &ens);
    assert!(est.is_finite());
    // E|B_1|^2 + (integral of |t^{-1/3} - 1|)^2; the forcing part alone
    // integrates to 3/2 exactly.
    assert!(est > 1.0 && est < 3.0, "estimate {est}");

    // Terminal data without a second moment must be flagged by the
    // subsample-growth test.
    let heavy = TerminalSpec::new(
        "heavy",
        1,
        2.0,
        Arc::new(|b: &[f64], _| vec![(b[0] * b[0]).exp()]),
    )
    .unwrap();
    let report = check_integrability(&heavy, &gen, 2.0, &ens).unwrap();
    assert!(!report.passed, "heavy tails must be flagged");
}

#[test]
fn drift_inner_product_bounds() {
    let s = sampler(10_000);
    // g = -y: mu = 0 suffices.
    let gen = scalar_gen("decay", |_, _, y, _| -y);
    let report = check_a1(&gen, 0.0, 0.0, &zero_proc(), &zero_proc(), 2.0, &s).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);

    // Constant drift c: f = |c| by Cauchy-Schwarz.
    let gen_c = scalar_gen("const", |_, _, _, _| 0.7);
    let f: ProcessFn = Arc::new(|_, _| 0.7);
    let report = check_a1(&gen_c, 0.0, 0.0, &f, &zero_proc(), 2.0, &s).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);

    // Truncated Example 1 with the constants from the growth bound of the
    // order-2 lifted modulus: mu = A, phi = A, f = |g_n(t,0,0)|.
    let ex1 = make_example1(HFunctionParams::with_defaults(2.0).unwrap()).unwrap();
    let xi = TerminalConfig::scalar_brownian(2.0).build().unwrap();
    let n_level = 4.0;
    let (_, g_n) = truncate_problem(&xi, &ex1, n_level).unwrap();
    let rho2 = lift_order(ex1.modulus.as_ref().unwrap(), 1.0, 2.0).unwrap();
    let a = linear_growth_bound(&rho2).unwrap();
    let gn = g_n.clone();
    let f_n: ProcessFn = Arc::new(move |t, b| {
        let mut out = vec![0.0];
        gn.eval_total_into(t, b, &[0.0], &[0.0], &mut out);
        out[0].abs()
    });
    let phi: ProcessFn = Arc::new(move |_, _| a);
    let report = check_a1(&g_n, a, 1.0, &f_n, &phi, 2.0, &s).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
}

#[test]
fn drift_radial_power_bounds() {
    let s = sampler(10_000);
    // g = -y with a tiny admissible concave bound.
    let gen = scalar_gen("decay", |_, _, y, _| -y);
    let psi = ModulusFn::linear(1e-6).unwrap();
    let report = check_a2(&gen, &psi, 0.0, &zero_proc(), 2.0, &s).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);

    // Expansive drift violates a half-slope bound.
    let gen_up = scalar_gen("expand", |_, _, y, _| y);
    let psi_half = ModulusFn::linear(0.5).unwrap();
    let report = check_a2(&gen_up, &psi_half, 0.0, &zero_proc(), 2.0, &s).unwrap();
    assert!(!report.passed);

    // Example 1 with psi the order-2 lift of its modulus, lambda = 1 and
    // f = |g(t,0,0)| (infinite at the time origin, which the sampler
    // tolerates by exclusion of t = 0). The tabulated lift is exact at its
    // nodes and can undershoot the true majorant between them by a few
    // 1e-4 relative; a 0.1% inflation is again a valid concave bound.
    let ex1 = make_example1(HFunctionParams::with_defaults(2.0).unwrap()).unwrap();
    let psi = ModulusFn::scaled(
        1.001,
        lift_order(ex1.modulus.as_ref().unwrap(), 1.0, 2.0).unwrap(),
    )
    .unwrap();
    let e = ex1.clone();
    let f: ProcessFn = Arc::new(move |t, b| {
        let mut out = vec![0.0];
        e.eval_total_into(t, b, &[0.0], &[0.0], &mut out);
        out[0].abs()
    });
    let report = check_a2(&ex1, &psi, 1.0, &f, 2.0, &s).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
}

#[test]
fn reports_are_deterministic() {
    let gen = scalar_gen("decay", |_, _, y, _| -y + y.sin());
    let rho = ModulusFn::linear(2.0).unwrap();
    let a = check_weak_monotonicity(&gen, &rho, 2.0, &sampler(8_000)).unwrap();
    let b = check_weak_monotonicity(&gen, &rho, 2.0, &sampler(8_000)).unwrap();
    assert_eq!(a.max_slack, b.max_slack);
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.violation_count, b.violation_count);

    let pool = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
    let c = pool.install(|| check_weak_monotonicity(&gen, &rho, 2.0, &sampler(8_000)).unwrap());
    assert_eq!(a.max_slack, c.max_slack);
}

#[test]
fn osgood_pass_lifts_to_weak_monotonicity_on_the_same_samples() {
    // 0.9 h(|y|) drift against the h modulus: one-sided Osgood passes with
    // 10% slack, and the order-lifted modulus passes the p = 2 check on the
    // same sample stream.
    let params = HFunctionParams::with_defaults(2.0).unwrap();
    let gen = scalar_gen("h_drift", move |_, _, y, _| {
        0.9 * bsde_core::generators::h_function(y.abs(), &params)
    });
    let rho = params.modulus().unwrap();
    let s = sampler(20_000);
    let osgood = check_one_sided(&gen, &rho, 1.0, OneSidedVariant::Osgood, &s).unwrap();
    assert!(osgood.passed, "slack {}", osgood.max_slack);
    let kappa = lift_order(&rho, 1.0, 2.0).unwrap();
    let lifted = check_weak_monotonicity(&gen, &kappa, 2.0, &s).unwrap();
    assert!(lifted.passed, "slack {}", lifted.max_slack);
}

#[test]
fn linear_modulus_degenerates_to_classical_monotonicity_across_orders() {
    // With a linear modulus the weak-monotonicity display divides out to
    // the classical inequality, so the accepted sample set is order-free.
    let rho = ModulusFn::linear(1.0).unwrap();
    let expanding = scalar_gen("mild_expand", |_, _, y, _| 1.1 * y);
    let contracting = scalar_gen("mild_contract", |_, _, y, _| 0.9 * y);
    let s = sampler(10_000);
    let mut counts_expanding = Vec::new();
    for p in [1.0, 1.5, 2.0, 3.0] {
        let bad = check_weak_monotonicity(&expanding, &rho, p, &s).unwrap();
        counts_expanding.push(bad.violation_count);
        let good = check_weak_monotonicity(&contracting, &rho, p, &s).unwrap();
        assert!(good.passed, "p = {p}");
    }
    assert!(counts_expanding.iter().all(|&c| c == counts_expanding[0]));
    assert!(counts_expanding[0] > 0);
}

#[test]
fn affine_metadata_passes_its_own_sampler() {
    let gen = make_affine(2, 2, &[-1.0, 0.2, 0.0, -0.5], &[0.1; 8], &[0.0, 0.3]).unwrap();
    let rho = gen.modulus.clone().unwrap();
    let report = check_weak_monotonicity(&gen, &rho, 2.0, &sampler(10_000)).unwrap();
    assert!(report.passed, "slack {}", report.max_slack);
}
