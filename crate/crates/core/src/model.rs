//! Core domain types shared by every other module: time grids, Brownian
//! path ensembles, generators, terminal data, discrete solutions and their
//! empirical norms.
//!
//! Everything here is immutable after construction and safe to share across
//! workers. Y and Z are stored node-major within each path, so a backward
//! sweep touches one contiguous slab per path and node.

use crate::conditions::ConditionId;
use crate::modulus::ModulusFn;
use crate::quad;
use crate::rng::CounterRng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty ensemble")]
    EmptyEnsemble,
}

type Result<T> = std::result::Result<T, ModelError>;

// ---------------------------------------------------------------------------
// Time grid
// ---------------------------------------------------------------------------

/// Ordered time nodes t_0 = 0 < t_1 < ... < t_N = T. Grids may be
/// non-uniform; all quadrature downstream uses per-cell widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(ModelError::InvalidGrid("need at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(ModelError::InvalidGrid(format!(
                "grid must start at 0, starts at {}",
                nodes[0]
            )));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) {
                return Err(ModelError::InvalidGrid(format!(
                    "nodes must be strictly increasing: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(TimeGrid { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Number of cells N; the grid has N + 1 nodes.
    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell_width(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }
}

/// N + 1 equally spaced nodes on [0, T] with exact endpoints.
pub fn make_uniform_grid(t_horizon: f64, n_cells: usize) -> Result<TimeGrid> {
    if !(t_horizon > 0.0) || !t_horizon.is_finite() {
        return Err(ModelError::InvalidGrid(format!(
            "horizon must be positive and finite, got {t_horizon}"
        )));
    }
    if n_cells == 0 {
        return Err(ModelError::InvalidGrid("need at least one cell".into()));
    }
    let nodes = (0..=n_cells)
        .map(|i| t_horizon * (i as f64 / n_cells as f64))
        .collect();
    TimeGrid::new(nodes)
}

// ---------------------------------------------------------------------------
// Path ensemble
// ---------------------------------------------------------------------------

/// Identity of an ensemble; solutions carry it so that pathwise comparisons
/// can insist on shared randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleId {
    pub seed: u64,
    pub d: usize,
    pub paths: usize,
    pub n_nodes: usize,
    pub antithetic: bool,
}

/// M d-dimensional Brownian paths sampled on a time grid. Values are stored
/// node-major per path: `values[(m * n_nodes + i) * d + j]`.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub grid: TimeGrid,
    pub d: usize,
    pub paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub(crate) values: Vec<f64>,
}

impl PathEnsemble {
    #[inline]
    pub fn state(&self, m: usize, i: usize) -> &[f64] {
        let base = (m * self.grid.n_nodes() + i) * self.d;
        &self.values[base..base + self.d]
    }

    /// Increment over cell i of path m, written into `out`.
    #[inline]
    pub fn increment_into(&self, m: usize, i: usize, out: &mut [f64]) {
        let a = self.state(m, i);
        let b = self.state(m, i + 1);
        for j in 0..self.d {
            out[j] = b[j] - a[j];
        }
    }

    pub fn id(&self) -> EnsembleId {
        EnsembleId {
            seed: self.seed,
            d: self.d,
            paths: self.paths,
            n_nodes: self.grid.n_nodes(),
            antithetic: self.antithetic,
        }
    }

    pub fn path_view(&self, m: usize) -> PathView<'_> {
        let base = m * self.grid.n_nodes() * self.d;
        PathView {
            grid: &self.grid,
            d: self.d,
            values: &self.values[base..base + self.grid.n_nodes() * self.d],
        }
    }

    /// Copy of a contiguous block of paths, for batch estimates.
    pub fn slice_paths(&self, start: usize, count: usize) -> PathEnsemble {
        assert!(start + count <= self.paths);
        let stride = self.grid.n_nodes() * self.d;
        PathEnsemble {
            grid: self.grid.clone(),
            d: self.d,
            paths: count,
            seed: self.seed,
            antithetic: self.antithetic,
            values: self.values[start * stride..(start + count) * stride].to_vec(),
        }
    }
}

/// Borrowed view of a single path.
#[derive(Clone, Copy)]
pub struct PathView<'a> {
    pub grid: &'a TimeGrid,
    pub d: usize,
    values: &'a [f64],
}

impl<'a> PathView<'a> {
    #[inline]
    pub fn node(&self, i: usize) -> &'a [f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.node(self.grid.n_nodes() - 1)
    }
}

// ---------------------------------------------------------------------------
// Singular forcing
// ---------------------------------------------------------------------------

/// Additive t-only drift terms that are exactly time-integrable on [0, T].
/// Solvers integrate these per cell and never sample them pointwise at
/// t = 0.
#[derive(Clone)]
pub enum SingularForcing {
    /// coef * t^exponent with exponent in (-1, 0).
    PowerLaw { coef: Vec<f64>, exponent: f64 },
    /// Radial clamp of `base + inner(t)` at norm `bound`; cell integrals by
    /// adaptive quadrature of the bounded integrand.
    Clamped {
        base: Vec<f64>,
        inner: Box<SingularForcing>,
        bound: f64,
    },
}

impl std::fmt::Debug for SingularForcing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SingularForcing::PowerLaw { coef, exponent } => {
                write!(f, "PowerLaw(coef={coef:?}, exponent={exponent})")
            }
            SingularForcing::Clamped { bound, .. } => write!(f, "Clamped(bound={bound})"),
        }
    }
}

impl SingularForcing {
    pub fn power_law(coef: Vec<f64>, exponent: f64) -> Result<Self> {
        if !(exponent > -1.0) || !(exponent < 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "power-law forcing exponent must lie in (-1, 0), got {exponent}"
            )));
        }
        Ok(SingularForcing::PowerLaw { coef, exponent })
    }

    pub fn dim(&self) -> usize {
        match self {
            SingularForcing::PowerLaw { coef, .. } => coef.len(),
            SingularForcing::Clamped { base, .. } => base.len(),
        }
    }

    /// Pointwise value; may be infinite at t = 0 for the unclamped law.
    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        match self {
            SingularForcing::PowerLaw { coef, exponent } => {
                let s = t.powf(*exponent); // infinite at t = 0
                for (o, c) in out.iter_mut().zip(coef) {
                    *o = if *c == 0.0 { 0.0 } else { c * s };
                }
            }
            SingularForcing::Clamped { base, inner, bound } => {
                inner.value_into(t, out);
                for (o, b) in out.iter_mut().zip(base) {
                    let v = *o + b;
                    // Large enough to saturate any clamp, small enough that
                    // its square stays finite.
                    *o = if v.is_finite() { v } else { v.signum() * 1e150 };
                }
                let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > *bound {
                    let scale = bound / norm;
                    for o in out.iter_mut() {
                        *o *= scale;
                    }
                }
            }
        }
    }

    /// Exact (or tolerance-1e-10) integral over the cell [a, b].
    pub fn cell_integral(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            SingularForcing::PowerLaw { coef, exponent } => {
                let e1 = exponent + 1.0;
                let w = (b.powf(e1) - a.powf(e1)) / e1;
                coef.iter().map(|c| c * w).collect()
            }
            SingularForcing::Clamped { base, .. } => {
                let k = base.len();
                (0..k)
                    .map(|j| {
                        quad::adaptive(
                            |t| {
                                let mut local = vec![0.0; k];
                                self.value_into(t, &mut local);
                                local[j]
                            },
                            a,
                            b,
                            1e-10,
                        )
                    })
                    .collect()
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

pub type GeneratorEval = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// A scalar progressively-measurable process sampled as a function of time
/// and the current Brownian state.
pub type ProcessFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A vector-valued additive drift term depending on time and the Brownian
/// state only.
pub type AdditiveTerm = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A BSDE generator: the drift map g(t, b, y, z) plus declared structural
/// metadata. `eval` covers the regular part; an optional additive t-only
/// singular forcing is declared separately with exact cell integrals.
#[derive(Clone)]
pub struct GeneratorSpec {
    pub name: String,
    pub k: usize,
    pub d: usize,
    eval: GeneratorEval,
    pub lipschitz_z: Option<f64>,
    pub modulus: Option<ModulusFn>,
    pub order: Option<f64>,
    pub forcing: Option<SingularForcing>,
    pub claimed_conditions: Vec<ConditionId>,
}

impl std::fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("d", &self.d)
            .field("lipschitz_z", &self.lipschitz_z)
            .field("order", &self.order)
            .field("claimed_conditions", &self.claimed_conditions)
            .finish()
    }
}

impl GeneratorSpec {
    pub fn new(
        name: impl Into<String>,
        k: usize,
        d: usize,
        eval: GeneratorEval,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(ModelError::InvalidParameter(
                "generator dimensions must be positive".into(),
            ));
        }
        Ok(GeneratorSpec {
            name: name.into(),
            k,
            d,
            eval,
            lipschitz_z: None,
            modulus: None,
            order: None,
            forcing: None,
            claimed_conditions: Vec::new(),
        })
    }

    pub fn with_lipschitz_z(mut self, lambda: f64) -> Self {
        self.lipschitz_z = Some(lambda);
        self
    }

    pub fn with_modulus(mut self, rho: ModulusFn) -> Self {
        self.modulus = Some(rho);
        self
    }

    pub fn with_order(mut self, p: f64) -> Self {
        self.order = Some(p);
        self
    }

    pub fn with_forcing(mut self, forcing: SingularForcing) -> Self {
        self.forcing = Some(forcing);
        self
    }

    pub fn with_claims(mut self, claims: Vec<ConditionId>) -> Self {
        self.claimed_conditions = claims;
        self
    }

    /// Regular part of the drift, excluding any declared singular forcing.
    #[inline]
    pub fn eval_into(&self, t: f64, b: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(b.len(), self.d);
        debug_assert_eq!(y.len(), self.k);
        debug_assert_eq!(z.len(), self.k * self.d);
        debug_assert_eq!(out.len(), self.k);
        (self.eval)(t, b, y, z, out);
    }

    pub fn eval_vec(&self, t: f64, b: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.eval_into(t, b, y, z, &mut out);
        out
    }

    /// Full drift including the declared forcing; may be infinite at t = 0.
    pub fn eval_total_into(&self, t: f64, b: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        self.eval_into(t, b, y, z, out);
        if let Some(forcing) = &self.forcing {
            let mut s = vec![0.0; self.k];
            forcing.value_into(t, &mut s);
            for (o, v) in out.iter_mut().zip(&s) {
                *o += v;
            }
        }
    }

    /// g + term(t, b): an additive drift term independent of (y, z), which
    /// leaves all difference-based structural metadata intact. At scale 0
    /// the values agree with g bit for bit.
    pub fn with_additive_term(
        &self,
        suffix: &str,
        scale: f64,
        term: AdditiveTerm,
    ) -> GeneratorSpec {
        let base = self.clone();
        let k = self.k;
        let eval: GeneratorEval = Arc::new(move |t, b, y, z, out: &mut [f64]| {
            base.eval_into(t, b, y, z, out);
            let mut extra = vec![0.0; k];
            term(t, b, &mut extra);
            for (o, e) in out.iter_mut().zip(&extra) {
                *o += scale * e;
            }
        });
        GeneratorSpec {
            name: format!("{}+{}", self.name, suffix),
            k: self.k,
            d: self.d,
            eval,
            lipschitz_z: self.lipschitz_z,
            modulus: self.modulus.clone(),
            order: self.order,
            forcing: self.forcing.clone(),
            claimed_conditions: self.claimed_conditions.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Terminal condition
// ---------------------------------------------------------------------------

pub type TerminalEval = Arc<dyn Fn(&[f64], PathView<'_>) -> Vec<f64> + Send + Sync>;

/// Terminal data xi evaluated from the terminal Brownian state and the full
/// path, with declared integrability order p > 1.
#[derive(Clone)]
pub struct TerminalSpec {
    pub name: String,
    pub k: usize,
    pub p: f64,
    eval: TerminalEval,
}

impl std::fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalSpec")
            .field("name", &self.name)
            .field("k", &self.k)
            .field("p", &self.p)
            .finish()
    }
}

impl TerminalSpec {
    pub fn new(name: impl Into<String>, k: usize, p: f64, eval: TerminalEval) -> Result<Self> {
        if !(p > 1.0) {
            return Err(ModelError::InvalidParameter(format!(
                "integrability order must exceed 1, got {p}"
            )));
        }
        if k == 0 {
            return Err(ModelError::InvalidParameter("k must be positive".into()));
        }
        Ok(TerminalSpec { name: name.into(), k, p, eval })
    }

    pub fn eval(&self, terminal_state: &[f64], path: PathView<'_>) -> Vec<f64> {
        (self.eval)(terminal_state, path)
    }

    /// xi + delta, componentwise.
    pub fn shifted(&self, delta: Vec<f64>) -> Result<TerminalSpec> {
        if delta.len() != self.k {
            return Err(ModelError::DimensionMismatch(
                "terminal shift dimension".into(),
            ));
        }
        let inner = self.clone();
        TerminalSpec::new(
            format!("{}+shift", self.name),
            self.k,
            self.p,
            Arc::new(move |b, path| {
                let mut v = inner.eval(b, path);
                for (x, dlt) in v.iter_mut().zip(&delta) {
                    *x += dlt;
                }
                v
            }),
        )
    }

    /// xi + eps * eta; at eps = 0 the values agree with xi bit for bit.
    pub fn plus_scaled(&self, eta: &TerminalSpec, eps: f64) -> Result<TerminalSpec> {
        if eta.k != self.k {
            return Err(ModelError::DimensionMismatch(
                "terminal perturbation dimension".into(),
            ));
        }
        let base = self.clone();
        let pert = eta.clone();
        TerminalSpec::new(
            format!("{}+{}*{}", self.name, eps, eta.name),
            self.k,
            self.p,
            Arc::new(move |b, path| {
                let mut v = base.eval(b, path);
                let w = pert.eval(b, path);
                for (x, e) in v.iter_mut().zip(&w) {
                    *x += eps * e;
                }
                v
            }),
        )
    }
}

// ---------------------------------------------------------------------------
// Discrete solution and empirical norms
// ---------------------------------------------------------------------------

/// Per-path, per-node (Y, Z) values approximating a BSDE solution. Z at the
/// terminal node is stored as zero; it never enters the time integrals.
#[derive(Debug, Clone)]
pub struct DiscreteSolution {
    pub grid: TimeGrid,
    pub k: usize,
    pub d: usize,
    pub paths: usize,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub ensemble: EnsembleId,
}

impl DiscreteSolution {
    #[inline]
    pub fn y(&self, m: usize, i: usize) -> &[f64] {
        let base = (m * self.grid.n_nodes() + i) * self.k;
        &self.y[base..base + self.k]
    }

    #[inline]
    pub fn z(&self, m: usize, i: usize) -> &[f64] {
        let kd = self.k * self.d;
        let base = (m * self.grid.n_nodes() + i) * kd;
        &self.z[base..base + kd]
    }

    /// Mean of Y over paths at node 0.
    pub fn y0_mean(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.k];
        for m in 0..self.paths {
            for (a, v) in acc.iter_mut().zip(self.y(m, 0)) {
                *a += v;
            }
        }
        for a in acc.iter_mut() {
            *a /= self.paths as f64;
        }
        acc
    }
}

/// Empirical S^p / M^p norms with path-level bootstrap standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNorms {
    pub s_p: f64,
    pub m_p: f64,
    pub stderr_s: f64,
    pub stderr_m: f64,
    pub p: f64,
}

pub(crate) fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-path statistics feeding the norms: u_m = max_i |Y|^p and
/// v_m = (sum_i |Z_i|^2 cell_i)^{p/2}.
pub fn path_statistics(sol: &DiscreteSolution, p: f64) -> (Vec<f64>, Vec<f64>) {
    let n_nodes = sol.grid.n_nodes();
    let mut u = Vec::with_capacity(sol.paths);
    let mut v = Vec::with_capacity(sol.paths);
    for m in 0..sol.paths {
        let mut sup = 0.0f64;
        for i in 0..n_nodes {
            sup = sup.max(euclidean_norm(sol.y(m, i)));
        }
        let mut quad_var = 0.0;
        for i in 0..n_nodes - 1 {
            let z = sol.z(m, i);
            let z2: f64 = z.iter().map(|x| x * x).sum();
            quad_var += z2 * sol.grid.cell_width(i);
        }
        u.push(sup.powf(p));
        v.push(quad_var.powf(p / 2.0));
    }
    (u, v)
}

const BOOTSTRAP_RESAMPLES: usize = 200;
const BOOTSTRAP_STREAM: u64 = 0x626f_6f74_7374_7261; // dedicated seed stream

/// Norms from per-path statistics; bootstrap over paths for the stderrs.
pub fn norms_from_path_stats(u: &[f64], v: &[f64], p: f64) -> Result<EmpiricalNorms> {
    let m = u.len();
    if m == 0 {
        return Err(ModelError::EmptyEnsemble);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let s_p = mean(u).powf(1.0 / p);
    let m_p = mean(v).powf(1.0 / p);

    let rng = CounterRng::new(BOOTSTRAP_STREAM);
    let mut s_boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut m_boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for b in 0..BOOTSTRAP_RESAMPLES {
        let mut su = 0.0;
        let mut sv = 0.0;
        for j in 0..m {
            let idx = rng.index(m, b as u64, j as u64, 1);
            su += u[idx];
            sv += v[idx];
        }
        s_boot.push((su / m as f64).powf(1.0 / p));
        m_boot.push((sv / m as f64).powf(1.0 / p));
    }
    let sd = |xs: &[f64]| {
        let mu = mean(xs);
        (xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
    };
    Ok(EmpiricalNorms {
        s_p,
        m_p,
        stderr_s: sd(&s_boot),
        stderr_m: sd(&m_boot),
        p,
    })
}

/// Empirical norms of a discrete solution.
pub fn empirical_norms(sol: &DiscreteSolution, p: f64) -> Result<EmpiricalNorms> {
    if !(p > 1.0) {
        return Err(ModelError::InvalidParameter(format!(
            "norm order must exceed 1, got {p}"
        )));
    }
    if sol.paths == 0 {
        return Err(ModelError::EmptyEnsemble);
    }
    let (u, v) = path_statistics(sol, p);
    norms_from_path_stats(&u, &v, p)
}
