//! Backward time-stepping Monte Carlo solver.
//!
//! Conditional expectations are least-squares projections onto polynomials
//! of the current Brownian state. At each node the martingale-increment
//! regression estimates Z from the centered product (Y_{i+1} - E[Y_{i+1}])
//! dB / dt (centering is a zero-mean control variate and does not change
//! the estimand), then Y is stepped either explicitly or by solving a
//! per-path fixed point in y.
//!
//! The implicit step is the implicit midpoint rule in y,
//!     Y = E[Y_{i+1}] + dt g(t_i, B_i, (Y + E[Y_{i+1}]) / 2, Z_i) + forcing,
//! solved by damped fixed-point iteration with a bisection fallback along
//! the scalar direction when k = 1. The midpoint form is second order in
//! the drift without projecting generator values, which matters for
//! generators whose raw values have no finite moments along the terminal
//! data. Declared singular forcings are always integrated exactly per
//! cell, never sampled pointwise.
//!
//! Determinism: normal-equation assembly runs over fixed-size path chunks
//! with an ordered reduction, so results do not depend on the worker count.

use crate::model::{
    norms_from_path_stats, DiscreteSolution, EmpiricalNorms, GeneratorSpec, ModelError,
    PathEnsemble, TerminalSpec,
};
use crate::modulus::{linear_growth_bound, ModulusError};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid scheme: {0}")]
    InvalidScheme(String),
    #[error(
        "step-size guard: cell width {width} times modulus slope {slope} exceeds {limit}; refine the grid"
    )]
    StepSizeGuard { width: f64, slope: f64, limit: f64 },
    #[error(
        "implicit step failed to converge at node {node} on {failures} paths (first {first_path}); worst residual {worst_residual:.3e}"
    )]
    ImplicitNoConvergence {
        node: usize,
        failures: usize,
        first_path: usize,
        worst_residual: f64,
    },
    #[error("regression collapsed at node {node}: no basis direction above the cutoff")]
    RankCollapse { node: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
}

type Result<T> = std::result::Result<T, SolverError>;

// ---------------------------------------------------------------------------
// Scheme
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    Explicit,
    ImplicitY,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub stepping: Stepping,
    pub basis_degree: usize,
    pub implicit_tol: f64,
    pub implicit_max_iter: usize,
    pub damping: f64,
}

impl SchemeSpec {
    pub fn explicit() -> Self {
        SchemeSpec {
            stepping: Stepping::Explicit,
            basis_degree: 3,
            implicit_tol: 1e-10,
            implicit_max_iter: 100,
            damping: 0.5,
        }
    }

    pub fn implicit() -> Self {
        SchemeSpec { stepping: Stepping::ImplicitY, ..SchemeSpec::explicit() }
    }

    /// Implicit stepping for generators that claim a modulus-type condition
    /// without being Lipschitz in y; explicit Euler is unstable for stiff
    /// monotone drifts.
    pub fn default_for(gen: &GeneratorSpec) -> Self {
        use crate::conditions::ConditionId::*;
        let monotone_family = gen.claimed_conditions.iter().any(|c| {
            matches!(
                c,
                WeakMonotonicity { .. }
                    | OneSidedMao { .. }
                    | OneSidedConstantin { .. }
                    | OneSidedOsgood
            )
        });
        let lipschitz_like = matches!(
            gen.modulus.as_ref().map(|m| m.family()),
            Some(crate::modulus::ModulusFamily::Linear { .. })
        );
        if monotone_family && !lipschitz_like {
            SchemeSpec::implicit()
        } else {
            SchemeSpec::explicit()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::InvalidScheme(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if !(self.implicit_tol > 0.0) {
            return Err(SolverError::InvalidScheme("tolerance must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Regression machinery
// ---------------------------------------------------------------------------

/// Exponent tuples of all monomials in d variables with total degree <= deg,
/// in graded order with the constant first.
fn monomial_exponents(d: usize, deg: usize) -> Vec<Vec<u32>> {
    fn rec(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(cur.clone());
            cur[pos] = 0;
            return;
        }
        for e in 0..=remaining {
            cur[pos] = e;
            rec(out, cur, pos + 1, remaining - e);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![0u32; d];
    for total in 0..=deg as u32 {
        rec(&mut out, &mut cur, 0, total);
    }
    out
}

fn eval_basis(exponents: &[Vec<u32>], state: &[f64], out: &mut [f64]) {
    for (o, exps) in out.iter_mut().zip(exponents) {
        let mut v = 1.0;
        for (x, &e) in state.iter().zip(exps) {
            for _ in 0..e {
                v *= x;
            }
        }
        *o = v;
    }
}

/// Per-node diagnostics and coefficients of the two projections.
#[derive(Debug, Clone)]
pub struct NodeRegression {
    pub node: usize,
    pub rank: usize,
    pub condition: f64,
    pub r_squared_y: f64,
    /// n_basis x k coefficients of the Y projection.
    pub y_coeffs: Vec<f64>,
    /// n_basis x (k d) coefficients of the Z projection.
    pub z_coeffs: Vec<f64>,
}

/// Basis description plus per-node coefficient matrices.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    pub basis_degree: usize,
    pub n_basis: usize,
    pub nodes: Vec<NodeRegression>,
}

const REG_CHUNK: usize = 8192;

/// Pseudo-inverse of the Gram matrix through its SVD with relative cutoff
/// 1e-10; near-collinear bases at early nodes are handled by dropping the
/// directions below the cutoff.
struct GramSolver {
    pinv: DMatrix<f64>,
    rank: usize,
    condition: f64,
}

impl GramSolver {
    fn new(gram: DMatrix<f64>, node: usize) -> Result<Self> {
        let nb = gram.nrows();
        let svd = gram.svd(true, true);
        let smax = svd.singular_values.max();
        if !(smax > 0.0) {
            return Err(SolverError::RankCollapse { node });
        }
        let cutoff = 1e-10 * smax;
        let mut inv_s = DMatrix::zeros(nb, nb);
        let mut rank = 0;
        let mut smin_kept = smax;
        for i in 0..nb {
            let s = svd.singular_values[i];
            if s > cutoff {
                inv_s[(i, i)] = 1.0 / s;
                rank += 1;
                smin_kept = smin_kept.min(s);
            }
        }
        let u = svd.u.as_ref().unwrap();
        let v_t = svd.v_t.as_ref().unwrap();
        let pinv = v_t.transpose() * inv_s * u.transpose();
        Ok(GramSolver { pinv, rank, condition: smax / smin_kept })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        &self.pinv * rhs
    }
}

/// Assemble the Gram matrix and right-hand sides over fixed-size path
/// chunks with an ordered reduction, independent of the worker count.
fn assemble_normal_equations(
    basis: &[f64],
    n_basis: usize,
    targets: &[f64],
    n_targets: usize,
    paths: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_chunks = paths.div_ceil(REG_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REG_CHUNK;
            let hi = (lo + REG_CHUNK).min(paths);
            let mut gram = vec![0.0; n_basis * n_basis];
            let mut rhs = vec![0.0; n_basis * n_targets];
            for m in lo..hi {
                let phi = &basis[m * n_basis..(m + 1) * n_basis];
                let tg = &targets[m * n_targets..(m + 1) * n_targets];
                for a in 0..n_basis {
                    let pa = phi[a];
                    for b in a..n_basis {
                        gram[a * n_basis + b] += pa * phi[b];
                    }
                    for (j, t) in tg.iter().enumerate() {
                        rhs[a * n_targets + j] += pa * t;
                    }
                }
            }
            (gram, rhs)
        })
        .collect();

    let mut gram = vec![0.0; n_basis * n_basis];
    let mut rhs = vec![0.0; n_basis * n_targets];
    for (g, r) in partials {
        for (acc, v) in gram.iter_mut().zip(&g) {
            *acc += v;
        }
        for (acc, v) in rhs.iter_mut().zip(&r) {
            *acc += v;
        }
    }
    for a in 0..n_basis {
        for b in 0..a {
            gram[a * n_basis + b] = gram[b * n_basis + a];
        }
    }
    (
        DMatrix::from_row_slice(n_basis, n_basis, &gram),
        DMatrix::from_row_slice(n_basis, n_targets, &rhs),
    )
}

// ---------------------------------------------------------------------------
// Backward solve
// ---------------------------------------------------------------------------

/// Solve the BSDE backward on the ensemble; returns the solution and the
/// per-node regression model.
pub fn solve_backward_with_model(
    gen: &GeneratorSpec,
    xi: &TerminalSpec,
    ensemble: &PathEnsemble,
    scheme: &SchemeSpec,
) -> Result<(DiscreteSolution, RegressionModel)> {
    scheme.validate()?;
    if gen.d != ensemble.d {
        return Err(SolverError::Dimension(format!(
            "generator expects d = {}, ensemble has d = {}",
            gen.d, ensemble.d
        )));
    }
    if xi.k != gen.k {
        return Err(SolverError::Dimension(format!(
            "terminal condition has k = {}, generator k = {}",
            xi.k, gen.k
        )));
    }
    step_size_guard(gen, ensemble, scheme)?;

    let k = gen.k;
    let d = gen.d;
    let kd = k * d;
    let paths = ensemble.paths;
    let grid = &ensemble.grid;
    let n_nodes = grid.n_nodes();
    let n_cells = grid.n_cells();
    let implicit = scheme.stepping == Stepping::ImplicitY;

    let exponents = monomial_exponents(d, scheme.basis_degree);
    let n_basis = exponents.len();

    let mut y = vec![0.0; paths * n_nodes * k];
    let mut z = vec![0.0; paths * n_nodes * kd];

    // Terminal slab: Y_N = xi exactly, Z_N = 0 by convention.
    for m in 0..paths {
        let view = ensemble.path_view(m);
        let val = xi.eval(view.terminal(), view);
        debug_assert_eq!(val.len(), k);
        let base = (m * n_nodes + n_cells) * k;
        y[base..base + k].copy_from_slice(&val);
    }

    let mut model = RegressionModel {
        basis_degree: scheme.basis_degree,
        n_basis,
        nodes: Vec::with_capacity(n_cells),
    };

    let n_t1 = k;
    let mut basis = vec![0.0; paths * n_basis];
    let mut targets = vec![0.0; paths * n_t1];
    let mut z_targets = vec![0.0; paths * kd];
    let mut increments = vec![0.0; paths * d];

    for i in (0..n_cells).rev() {
        let t_i = grid.nodes()[i];
        let dt = grid.cell_width(i);
        let forcing_cell: Option<Vec<f64>> =
            gen.forcing.as_ref().map(|f| f.cell_integral(t_i, t_i + dt));

        basis
            .par_chunks_mut(n_basis)
            .enumerate()
            .for_each(|(m, row)| eval_basis(&exponents, ensemble.state(m, i), row));
        increments
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(m, row)| ensemble.increment_into(m, i, row));

        // Projection of Y_{i+1} on the current state.
        {
            let y_ref = &y;
            targets.par_chunks_mut(n_t1).enumerate().for_each(|(m, row)| {
                let ybase = (m * n_nodes + i + 1) * k;
                row.copy_from_slice(&y_ref[ybase..ybase + k]);
            });
        }
        let (gram, rhs1) = assemble_normal_equations(&basis, n_basis, &targets, n_t1, paths);
        let solver = GramSolver::new(gram, i)?;
        let mut coeff1 = DMatrix::zeros(n_basis, n_t1);
        for j in 0..n_t1 {
            coeff1.set_column(j, &solver.solve(&rhs1.column(j).into_owned()));
        }

        // Fitted conditional expectation c_y.
        let mut cond = vec![0.0; paths * n_t1];
        cond.par_chunks_mut(n_t1).enumerate().for_each(|(m, row)| {
            let phi = &basis[m * n_basis..(m + 1) * n_basis];
            for (j, r) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for a in 0..n_basis {
                    acc += phi[a] * coeff1[(a, j)];
                }
                *r = acc;
            }
        });

        // R^2 of the Y projection (first component).
        let mean_y: f64 = (0..paths).map(|m| targets[m * n_t1]).sum::<f64>() / paths as f64;
        let mut ss_tot = 0.0;
        let mut ss_res = 0.0;
        for m in 0..paths {
            let t = targets[m * n_t1];
            let f = cond[m * n_t1];
            ss_tot += (t - mean_y) * (t - mean_y);
            ss_res += (t - f) * (t - f);
        }
        let r_squared_y = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

        // Martingale-increment targets for Z, centered by c_y.
        {
            let y_ref = &y;
            let cond_ref = &cond;
            let inc_ref = &increments;
            z_targets.par_chunks_mut(kd).enumerate().for_each(|(m, row)| {
                let ybase = (m * n_nodes + i + 1) * k;
                let db = &inc_ref[m * d..(m + 1) * d];
                for l in 0..k {
                    let resid = y_ref[ybase + l] - cond_ref[m * n_t1 + l];
                    for j in 0..d {
                        row[l * d + j] = resid * db[j] / dt;
                    }
                }
            });
        }
        let (_, rhs2) = assemble_normal_equations(&basis, n_basis, &z_targets, kd, paths);
        let mut coeff2 = DMatrix::zeros(n_basis, kd);
        for j in 0..kd {
            coeff2.set_column(j, &solver.solve(&rhs2.column(j).into_owned()));
        }

        // Fitted Z at this node.
        let z_node: Vec<f64> = {
            let basis_ref = &basis;
            let coeff2_ref = &coeff2;
            (0..paths)
                .into_par_iter()
                .flat_map_iter(move |m| {
                    let phi = &basis_ref[m * n_basis..(m + 1) * n_basis];
                    (0..kd).map(move |j| {
                        let mut acc = 0.0;
                        for a in 0..n_basis {
                            acc += phi[a] * coeff2_ref[(a, j)];
                        }
                        acc
                    })
                })
                .collect()
        };

        // Step Y backwards.
        let y_node: Vec<f64> = if !implicit {
            let cond_ref = &cond;
            let z_ref = &z_node;
            let fc_ref = &forcing_cell;
            (0..paths)
                .into_par_iter()
                .flat_map_iter(move |m| {
                    let c_y = &cond_ref[m * n_t1..m * n_t1 + k];
                    let zi = &z_ref[m * kd..(m + 1) * kd];
                    let mut g = vec![0.0; k];
                    gen.eval_into(t_i, ensemble.state(m, i), c_y, zi, &mut g);
                    (0..k)
                        .map(|l| {
                            let mut v = c_y[l] + dt * g[l];
                            if let Some(fc) = fc_ref {
                                v += fc[l];
                            }
                            v
                        })
                        .collect::<Vec<f64>>()
                })
                .collect()
        } else {
            let cond_ref = &cond;
            let z_ref = &z_node;
            let fc_ref = &forcing_cell;
            let results: Vec<std::result::Result<Vec<f64>, f64>> = (0..paths)
                .into_par_iter()
                .map(move |m| {
                    let c_y = &cond_ref[m * n_t1..m * n_t1 + k];
                    let zi = &z_ref[m * kd..(m + 1) * kd];
                    let mut rhs0 = vec![0.0; k];
                    for l in 0..k {
                        rhs0[l] = c_y[l];
                        if let Some(fc) = fc_ref {
                            rhs0[l] += fc[l];
                        }
                    }
                    implicit_step(gen, t_i, ensemble.state(m, i), zi, &rhs0, c_y, dt, scheme)
                })
                .collect();
            let mut y_node = Vec::with_capacity(paths * k);
            let mut failures = 0usize;
            let mut first_path = 0usize;
            let mut worst = 0.0f64;
            for (m, r) in results.into_iter().enumerate() {
                match r {
                    Ok(v) => y_node.extend(v),
                    Err(res) => {
                        if failures == 0 {
                            first_path = m;
                        }
                        failures += 1;
                        worst = worst.max(res);
                        y_node.extend(std::iter::repeat_n(f64::NAN, k));
                    }
                }
            }
            if failures > 0 {
                return Err(SolverError::ImplicitNoConvergence {
                    node: i,
                    failures,
                    first_path,
                    worst_residual: worst,
                });
            }
            y_node
        };

        // Write the node slabs.
        for m in 0..paths {
            let yb = (m * n_nodes + i) * k;
            y[yb..yb + k].copy_from_slice(&y_node[m * k..(m + 1) * k]);
            let zb = (m * n_nodes + i) * kd;
            z[zb..zb + kd].copy_from_slice(&z_node[m * kd..(m + 1) * kd]);
        }

        model.nodes.push(NodeRegression {
            node: i,
            rank: solver.rank,
            condition: solver.condition,
            r_squared_y,
            y_coeffs: coeff1.columns(0, k).iter().cloned().collect(),
            z_coeffs: coeff2.iter().cloned().collect(),
        });
    }

    model.nodes.reverse();
    let solution = DiscreteSolution {
        grid: grid.clone(),
        k,
        d,
        paths,
        y,
        z,
        ensemble: ensemble.id(),
    };
    Ok((solution, model))
}

/// Solve the BSDE backward on the ensemble.
pub fn solve_backward(
    gen: &GeneratorSpec,
    xi: &TerminalSpec,
    ensemble: &PathEnsemble,
    scheme: &SchemeSpec,
) -> Result<DiscreteSolution> {
    solve_backward_with_model(gen, xi, ensemble, scheme).map(|(sol, _)| sol)
}

/// Damped fixed point for the implicit midpoint step
/// y = rhs0 + dt g(t, b, (y + c) / 2, z), with a bisection fallback along
/// the scalar direction when k = 1. Returns the solved y, or the final
/// residual norm on failure.
#[allow(clippy::too_many_arguments)]
fn implicit_step(
    gen: &GeneratorSpec,
    t: f64,
    b: &[f64],
    z: &[f64],
    rhs0: &[f64],
    c: &[f64],
    dt: f64,
    scheme: &SchemeSpec,
) -> std::result::Result<Vec<f64>, f64> {
    let k = gen.k;
    let mut theta = scheme.damping;
    let mut y_cur = c.to_vec();
    let mut y_mid = vec![0.0; k];
    let mut g = vec![0.0; k];
    let eval_mid = |y: &[f64], mid: &mut [f64], g: &mut [f64]| {
        for l in 0..k {
            mid[l] = 0.5 * (y[l] + c[l]);
        }
        gen.eval_into(t, b, mid, z, g);
    };
    let mut prev_delta = f64::INFINITY;
    let mut restarts = 0;
    let mut iter = 0;
    while iter < scheme.implicit_max_iter {
        iter += 1;
        eval_mid(&y_cur, &mut y_mid, &mut g);
        let mut delta = 0.0f64;
        let mut norm = 0.0f64;
        for l in 0..k {
            let target = rhs0[l] + dt * g[l];
            let next = (1.0 - theta) * y_cur[l] + theta * target;
            delta = delta.max((next - y_cur[l]).abs());
            norm = norm.max(next.abs());
            y_cur[l] = next;
        }
        if delta <= scheme.implicit_tol * (1.0 + norm) {
            return Ok(y_cur);
        }
        if (!delta.is_finite() || (delta > 4.0 * prev_delta && iter > 2)) && restarts < 6 {
            theta *= 0.5;
            y_cur.copy_from_slice(c);
            prev_delta = f64::INFINITY;
            restarts += 1;
            continue;
        }
        prev_delta = delta;
    }

    // Residual r(y) = y - rhs0 - dt g((y + c)/2) is monotone increasing in
    // y for the dissipative scalar drifts this fallback targets.
    if k == 1 {
        let residual = |yv: f64| {
            let mut gg = [0.0];
            gen.eval_into(t, b, &[0.5 * (yv + c[0])], z, &mut gg);
            yv - rhs0[0] - dt * gg[0]
        };
        let mut step = 1.0 + c[0].abs();
        let (mut lo, mut hi) = (c[0] - step, c[0] + step);
        let mut expand = 0;
        while residual(lo) > 0.0 && expand < 80 {
            step *= 2.0;
            lo -= step;
            expand += 1;
        }
        while residual(hi) < 0.0 && expand < 160 {
            step *= 2.0;
            hi += step;
            expand += 1;
        }
        if residual(lo) <= 0.0 && residual(hi) >= 0.0 {
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if residual(mid) > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if hi - lo <= scheme.implicit_tol * (1.0 + hi.abs()) {
                    break;
                }
            }
            return Ok(vec![0.5 * (lo + hi)]);
        }
    }

    eval_mid(&y_cur.clone(), &mut y_mid, &mut g);
    let worst = (0..k)
        .map(|l| (y_cur[l] - rhs0[l] - dt * g[l]).abs())
        .fold(0.0, f64::max);
    Err(worst)
}

/// Implicit stepping requires the cell width to stay below the reciprocal
/// affine slope of the declared modulus (split growth bound at m = 1), so
/// the per-path fixed point stays contraction-like.
fn step_size_guard(
    gen: &GeneratorSpec,
    ensemble: &PathEnsemble,
    scheme: &SchemeSpec,
) -> Result<()> {
    if scheme.stepping != Stepping::ImplicitY {
        return Ok(());
    }
    let Some(rho) = &gen.modulus else { return Ok(()) };
    let a = linear_growth_bound(rho)?;
    let slope = 1.0 + 2.0 * a;
    let max_width = (0..ensemble.grid.n_cells())
        .map(|i| ensemble.grid.cell_width(i))
        .fold(0.0, f64::max);
    if max_width * slope > 0.5 {
        return Err(SolverError::StepSizeGuard { width: max_width, slope, limit: 0.5 });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Truncation sequence and distances
// ---------------------------------------------------------------------------

/// Solve the radially truncated problems for each level in `n_list`.
pub fn picard_truncation_sequence(
    gen: &GeneratorSpec,
    xi: &TerminalSpec,
    n_list: &[f64],
    ensemble: &PathEnsemble,
    scheme: &SchemeSpec,
) -> Result<Vec<DiscreteSolution>> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SolverError::InvalidScheme(
            "truncation levels must be strictly increasing".into(),
        ));
    }
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let (xi_n, g_n) = crate::generators::truncate_problem(xi, gen, n)
            .map_err(|e| SolverError::InvalidScheme(e.to_string()))?;
        out.push(solve_backward(&g_n, &xi_n, ensemble, scheme)?);
    }
    Ok(out)
}

fn check_comparable(a: &DiscreteSolution, b: &DiscreteSolution) -> Result<()> {
    if a.grid.nodes() != b.grid.nodes() {
        return Err(SolverError::Dimension("solutions live on different grids".into()));
    }
    if a.ensemble != b.ensemble {
        return Err(SolverError::Dimension(
            "solutions were computed on different ensembles".into(),
        ));
    }
    if a.k != b.k || a.d != b.d || a.paths != b.paths {
        return Err(SolverError::Dimension("solution shapes differ".into()));
    }
    Ok(())
}

fn diff_path_stats(a: &DiscreteSolution, b: &DiscreteSolution, p: f64) -> (Vec<f64>, Vec<f64>) {
    let n_nodes = a.grid.n_nodes();
    let mut u = Vec::with_capacity(a.paths);
    let mut v = Vec::with_capacity(a.paths);
    for m in 0..a.paths {
        let mut sup = 0.0f64;
        for i in 0..n_nodes {
            let diff: f64 = a
                .y(m, i)
                .iter()
                .zip(b.y(m, i))
                .map(|(x, w)| (x - w) * (x - w))
                .sum::<f64>()
                .sqrt();
            sup = sup.max(diff);
        }
        let mut quad_var = 0.0;
        for i in 0..n_nodes - 1 {
            let diff2: f64 = a
                .z(m, i)
                .iter()
                .zip(b.z(m, i))
                .map(|(x, w)| (x - w) * (x - w))
                .sum();
            quad_var += diff2 * a.grid.cell_width(i);
        }
        u.push(sup.powf(p));
        v.push(quad_var.powf(p / 2.0));
    }
    (u, v)
}

/// Empirical norms of the difference of two solutions on the same grid and
/// ensemble.
pub fn solution_distance(
    a: &DiscreteSolution,
    b: &DiscreteSolution,
    p: f64,
) -> Result<EmpiricalNorms> {
    check_comparable(a, b)?;
    let (u, v) = diff_path_stats(a, b, p);
    Ok(norms_from_path_stats(&u, &v, p)?)
}

/// The gap metric E[sup |dy|^p + (integral |dz|^2)^{p/2}] of two solutions
/// sharing an ensemble, with a bootstrap standard error.
pub fn pathwise_gap_metric(
    a: &DiscreteSolution,
    b: &DiscreteSolution,
    p: f64,
) -> Result<(f64, f64)> {
    check_comparable(a, b)?;
    let (u, v) = diff_path_stats(a, b, p);
    let totals: Vec<f64> = u.iter().zip(&v).map(|(x, w)| x + w).collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    Ok((mean, bootstrap_mean_stderr(&totals)))
}

fn bootstrap_mean_stderr(xs: &[f64]) -> f64 {
    let m = xs.len();
    let rng = crate::rng::CounterRng::new(0x6d65_7472_6963);
    let resamples = 200;
    let mut means = Vec::with_capacity(resamples);
    for b in 0..resamples {
        let mut acc = 0.0;
        for j in 0..m {
            acc += xs[rng.index(m, b as u64, j as u64, 2)];
        }
        means.push(acc / m as f64);
    }
    let mu = means.iter().sum::<f64>() / resamples as f64;
    (means.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (resamples - 1) as f64).sqrt()
}

/// Mean per-node Z over paths, one row per node; handy for martingale
/// benchmarks with known Z.
pub fn node_mean_z(sol: &DiscreteSolution) -> Vec<Vec<f64>> {
    let kd = sol.k * sol.d;
    let mut out = vec![vec![0.0; kd]; sol.grid.n_nodes()];
    for m in 0..sol.paths {
        for (i, row) in out.iter_mut().enumerate() {
            for (acc, v) in row.iter_mut().zip(sol.z(m, i)) {
                *acc += v;
            }
        }
    }
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v /= sol.paths as f64;
        }
    }
    out
}

/// Batch estimate of Y_0 and its standard error: the ensemble is split into
/// `batches` path blocks, each solved independently; the stderr of the full
/// estimate is sd(batch means) / sqrt(batches).
pub fn y0_with_batch_stderr(
    gen: &GeneratorSpec,
    xi: &TerminalSpec,
    ensemble: &PathEnsemble,
    scheme: &SchemeSpec,
    batches: usize,
) -> Result<(Vec<f64>, f64)> {
    let full = solve_backward(gen, xi, ensemble, scheme)?;
    let y0 = full.y0_mean();
    if batches < 2 || ensemble.paths < 2 * batches {
        return Ok((y0, f64::NAN));
    }
    let block = ensemble.paths / batches;
    let mut batch_norms = Vec::with_capacity(batches);
    for bidx in 0..batches {
        let sub = ensemble.slice_paths(bidx * block, block);
        let sol = solve_backward(gen, xi, &sub, scheme)?;
        let m = sol.y0_mean();
        let norm: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
        batch_norms.push(norm);
    }
    let mu = batch_norms.iter().sum::<f64>() / batches as f64;
    let sd = (batch_norms.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>()
        / (batches - 1) as f64)
        .sqrt();
    Ok((y0, sd / (batches as f64).sqrt()))
}
