//! Configuration schema, run functions and output management for the `bsde`
//! binary.
//!
//! One strict TOML config drives all four subcommands; unknown keys are
//! rejected. Every run writes its resolved config next to its outputs as
//! `manifest.toml`, all floats in CSV tables are formatted at 12
//! significant digits with a fixed row order, and reruns of a manifest are
//! byte-identical regardless of the worker count.

use bsde_core::brownian::simulate_ensemble;
use bsde_core::conditions::{self, ConditionReport, SamplerSpec};
use bsde_core::harness::{run_experiment, ExperimentKind, NumericSpec, ProblemSpec};
use bsde_core::model::{empirical_norms, make_uniform_grid};
use bsde_core::modulus::{
    bihari_bound, constantin_to_mao, lift_order, linear_growth_bound, mao_to_constantin,
    osgood_classifier, split_growth_bound, subadditive_envelope, ModulusFamily, ModulusFn,
    OsgoodVariant,
};
use bsde_core::solver::{solve_backward, y0_with_batch_stderr};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml: {0}")]
    Toml(String),
    #[error(transparent)]
    Harness(#[from] bsde_core::harness::HarnessError),
    #[error(transparent)]
    Solver(#[from] bsde_core::solver::SolverError),
    #[error(transparent)]
    Generator(#[from] bsde_core::generators::GeneratorError),
    #[error(transparent)]
    Model(#[from] bsde_core::model::ModelError),
    #[error(transparent)]
    Condition(#[from] bsde_core::conditions::ConditionError),
    #[error(transparent)]
    Modulus(#[from] bsde_core::modulus::ModulusError),
}

type Result<T> = std::result::Result<T, CliError>;

/// Environment variable naming the default output root.
pub const OUTDIR_ENV: &str = "BSDE_OUTDIR";

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub numeric: Option<NumericSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    /// Samples per condition.
    pub count: usize,
    /// Check every condition the generator claims.
    #[serde(default)]
    pub use_claims: bool,
    /// Explicit condition list, merged with the claims when both given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<conditions::ConditionId>,
    /// Modulus for the explicit conditions; defaults to the generator's
    /// declared one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<ModulusFamily>,
    /// Lipschitz constant override for the z-check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub queries: Vec<ModulusQuery>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModulusQuery {
    Eval { rho: ModulusFamily, points: Vec<f64> },
    Classify {
        rho: ModulusFamily,
        variant: OsgoodVariant,
        #[serde(default = "default_order")]
        p: f64,
    },
    GrowthBound { rho: ModulusFamily },
    SplitGrowth { rho: ModulusFamily, m: f64 },
    Lift { rho: ModulusFamily, p: f64, q: f64 },
    MaoToConstantin { rho: ModulusFamily, p: f64 },
    ConstantinToMao { rho: ModulusFamily, p: f64 },
    Envelope { grid: Vec<f64>, values: Vec<f64> },
    Bihari {
        rho: ModulusFamily,
        a: f64,
        horizon: f64,
        multiplier: f64,
    },
}

fn default_order() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outdir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Scalar flag overrides applied after loading the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub outdir: Option<PathBuf>,
    pub label: Option<String>,
}

pub fn load_config(path: &Path) -> Result<CliConfig> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| CliError::Toml(e.to_string()))
}

pub fn apply_overrides(mut cfg: CliConfig, ov: &Overrides) -> CliConfig {
    if let Some(seed) = ov.seed {
        if let Some(numeric) = cfg.numeric.as_mut() {
            numeric.seed = seed;
        }
    }
    let output = cfg.output.get_or_insert_with(OutputConfig::default);
    if let Some(dir) = &ov.outdir {
        output.outdir = Some(dir.clone());
    }
    if let Some(label) = &ov.label {
        output.label = Some(label.clone());
    }
    cfg
}

// ---------------------------------------------------------------------------
// Output management
// ---------------------------------------------------------------------------

/// Twelve significant digits, fixed locale; the byte-stable float format
/// used in every CSV cell and summary value.
pub fn fmt12(x: f64) -> String {
    format!("{:.11e}", x)
}

pub struct RunDir {
    pub root: PathBuf,
    pub tables: PathBuf,
}

/// <outdir>/<kind>/<label-or-timestamp>/{manifest.toml, tables/, summary.toml}
pub fn prepare_run_dir(cfg: &CliConfig, kind: &str) -> Result<RunDir> {
    let output = cfg.output.clone().unwrap_or_default();
    let root_base = output
        .outdir
        .or_else(|| std::env::var_os(OUTDIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let label = output.label.unwrap_or_else(|| {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        format!("run-{now}")
    });
    let root = root_base.join(kind).join(label);
    let tables = root.join("tables");
    fs::create_dir_all(&tables)?;
    Ok(RunDir { root, tables })
}

fn write_manifest(cfg: &CliConfig, dir: &RunDir) -> Result<()> {
    let text = toml::to_string_pretty(cfg).map_err(|e| CliError::Toml(e.to_string()))?;
    fs::write(dir.root.join("manifest.toml"), text)?;
    Ok(())
}

fn write_csv(path: &Path, columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&columns.join(","));
    text.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|&v| fmt12(v)).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_summary(dir: &RunDir, summary: &impl Serialize) -> Result<()> {
    let text = toml::to_string_pretty(summary).map_err(|e| CliError::Toml(e.to_string()))?;
    fs::write(dir.root.join("summary.toml"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct SolveSummary {
    y0: Vec<String>,
    y0_stderr: String,
    s_p: String,
    m_p: String,
    stderr_s: String,
    stderr_m: String,
    p: f64,
    steps: usize,
    paths: usize,
    seed: u64,
    scheme: String,
    basis_degree: usize,
}

pub fn run_solve(cfg: &CliConfig) -> Result<bool> {
    let problem = cfg
        .problem
        .as_ref()
        .ok_or_else(|| CliError::Config("solve needs a [problem] block".into()))?;
    let numeric = cfg
        .numeric
        .as_ref()
        .ok_or_else(|| CliError::Config("solve needs a [numeric] block".into()))?;
    let dir = prepare_run_dir(cfg, "solve")?;
    write_manifest(cfg, &dir)?;

    let (gen, xi) = problem.build()?;
    let scheme = numeric.scheme.resolve(&gen, numeric.basis_degree);
    let grid = make_uniform_grid(numeric.t_horizon, numeric.steps)?;
    let ensemble = simulate_ensemble(&grid, gen.d, numeric.paths, numeric.seed)?;
    let sol = solve_backward(&gen, &xi, &ensemble, &scheme)?;
    let (y0, y0_stderr) = y0_with_batch_stderr(&gen, &xi, &ensemble, &scheme, 8)?;
    let norms = empirical_norms(&sol, problem.p)?;

    // Solution table: path, node, t, Y components, Z components.
    let mut columns = vec!["path".to_string(), "node".to_string(), "t".to_string()];
    for c in 0..sol.k {
        columns.push(format!("y{c}"));
    }
    for l in 0..sol.k {
        for j in 0..sol.d {
            columns.push(format!("z{l}_{j}"));
        }
    }
    let mut rows = Vec::with_capacity(sol.paths * grid.n_nodes());
    for m in 0..sol.paths {
        for i in 0..grid.n_nodes() {
            let mut row = vec![m as f64, i as f64, grid.nodes()[i]];
            row.extend_from_slice(sol.y(m, i));
            row.extend_from_slice(sol.z(m, i));
            rows.push(row);
        }
    }
    write_csv(&dir.tables.join("solution.csv"), &columns, &rows)?;

    let summary = SolveSummary {
        y0: y0.iter().map(|&v| fmt12(v)).collect(),
        y0_stderr: fmt12(y0_stderr),
        s_p: fmt12(norms.s_p),
        m_p: fmt12(norms.m_p),
        stderr_s: fmt12(norms.stderr_s),
        stderr_m: fmt12(norms.stderr_m),
        p: problem.p,
        steps: numeric.steps,
        paths: numeric.paths,
        seed: numeric.seed,
        scheme: format!("{:?}", scheme.stepping),
        basis_degree: scheme.basis_degree,
    };
    write_summary(&dir, &summary)?;

    println!(
        "Y0 = {} (stderr {}), S^p = {}, M^p = {}",
        fmt12(y0[0]),
        fmt12(y0_stderr),
        fmt12(norms.s_p),
        fmt12(norms.m_p)
    );
    println!("outputs: {}", dir.root.display());
    Ok(true)
}

// ---------------------------------------------------------------------------
// check
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct CheckSummary {
    conditions: Vec<CheckRow>,
    all_passed: bool,
}

#[derive(Debug, Serialize)]
struct CheckRow {
    condition: String,
    passed: bool,
    samples: usize,
    violations: usize,
    max_slack: String,
}

pub fn run_check(cfg: &CliConfig) -> Result<bool> {
    let problem = cfg
        .problem
        .as_ref()
        .ok_or_else(|| CliError::Config("check needs a [problem] block".into()))?;
    let check = cfg
        .check
        .as_ref()
        .ok_or_else(|| CliError::Config("check needs a [check] block".into()))?;
    let numeric = cfg
        .numeric
        .as_ref()
        .ok_or_else(|| CliError::Config("check needs a [numeric] block".into()))?;

    let (gen, xi) = problem.build()?;
    let mut ids = check.conditions.clone();
    if check.use_claims {
        ids.extend(gen.claimed_conditions.iter().cloned());
    }
    if ids.is_empty() {
        return Err(CliError::Config(
            "check needs a nonempty condition list or use_claims = true".into(),
        ));
    }

    let dir = prepare_run_dir(cfg, "check")?;
    write_manifest(cfg, &dir)?;

    let mut sampler = SamplerSpec::new(numeric.seed, check.count, numeric.t_horizon);
    if let Some(r) = check.y_radius {
        sampler.y_radius = r;
    }
    if let Some(r) = check.z_radius {
        sampler.z_radius = r;
    }

    let rho_override = check
        .rho
        .as_ref()
        .map(|f| ModulusFn::from_family(f.clone()))
        .transpose()?;
    let require_modulus = |claims: &bsde_core::model::GeneratorSpec| -> Result<ModulusFn> {
        if let Some(rho) = &rho_override {
            return Ok(rho.clone());
        }
        claims
            .modulus
            .clone()
            .ok_or_else(|| CliError::Config("generator declares no modulus".into()))
    };

    let mut reports: Vec<ConditionReport> = Vec::new();
    for id in &ids {
        use conditions::ConditionId::*;
        let report = match id {
            WeakMonotonicity { p } => conditions::check_weak_monotonicity(
                &gen,
                &require_modulus(&gen)?,
                *p,
                &sampler,
            )?,
            OneSidedMao { p } => conditions::check_one_sided(
                &gen,
                &require_modulus(&gen)?,
                *p,
                conditions::OneSidedVariant::Mao,
                &sampler,
            )?,
            OneSidedConstantin { p } => conditions::check_one_sided(
                &gen,
                &require_modulus(&gen)?,
                *p,
                conditions::OneSidedVariant::Constantin,
                &sampler,
            )?,
            OneSidedOsgood => conditions::check_one_sided(
                &gen,
                &require_modulus(&gen)?,
                1.0,
                conditions::OneSidedVariant::Osgood,
                &sampler,
            )?,
            TwoSidedWeakMonotonicity { p } => conditions::check_two_sided(
                &gen,
                &require_modulus(&gen)?,
                *p,
                conditions::TwoSidedVariant::WeakMonotonicity,
                &sampler,
            )?,
            TwoSidedMao { p } => conditions::check_two_sided(
                &gen,
                &require_modulus(&gen)?,
                *p,
                conditions::TwoSidedVariant::Mao,
                &sampler,
            )?,
            TwoSidedConstantin { p } => conditions::check_two_sided(
                &gen,
                &require_modulus(&gen)?,
                *p,
                conditions::TwoSidedVariant::Constantin,
                &sampler,
            )?,
            TwoSidedOsgood => conditions::check_two_sided(
                &gen,
                &require_modulus(&gen)?,
                1.0,
                conditions::TwoSidedVariant::Osgood,
                &sampler,
            )?,
            ContinuityY => conditions::check_continuity_y(&gen, &sampler)?,
            LipschitzZ => {
                let lambda = check.lambda.or(gen.lipschitz_z).ok_or_else(|| {
                    CliError::Config("generator declares no Lipschitz constant".into())
                })?;
                conditions::check_lipschitz_z(&gen, lambda, &sampler)?
            }
            GeneralGrowth => {
                let grid = make_uniform_grid(numeric.t_horizon, numeric.steps)?;
                let ens = simulate_ensemble(&grid, gen.d, numeric.paths.min(256), numeric.seed)?;
                conditions::check_general_growth(&gen, &[1.0, 2.0], &ens)?
            }
            Integrability { p } => {
                let grid = make_uniform_grid(numeric.t_horizon, numeric.steps)?;
                let ens = simulate_ensemble(&grid, gen.d, numeric.paths, numeric.seed)?;
                conditions::check_integrability(&xi, &gen, *p, &ens)?
            }
            DriftInnerProductBound | DriftRadialPowerBound { .. } => {
                return Err(CliError::Config(format!(
                    "{id} needs process parameters not expressible in a config; use the library"
                )));
            }
        };
        reports.push(report);
    }

    // Witness table, capped rows per condition.
    let mut witness_lines = String::from("condition,t,lhs,rhs,y1,y2\n");
    for report in &reports {
        for v in report.violations.iter().take(8) {
            let _ = writeln!(
                witness_lines,
                "{},{},{},{},{},{}",
                report.condition_id,
                fmt12(v.t),
                fmt12(v.lhs),
                fmt12(v.rhs),
                fmt12(v.y1.first().copied().unwrap_or(f64::NAN)),
                fmt12(v.y2.first().copied().unwrap_or(f64::NAN)),
            );
        }
    }
    fs::write(dir.tables.join("witnesses.csv"), witness_lines)?;

    let all_passed = reports.iter().all(|r| r.passed);
    let summary = CheckSummary {
        conditions: reports
            .iter()
            .map(|r| CheckRow {
                condition: r.condition_id.clone(),
                passed: r.passed,
                samples: r.samples,
                violations: r.violation_count,
                max_slack: fmt12(r.max_slack),
            })
            .collect(),
        all_passed,
    };
    write_summary(&dir, &summary)?;

    for r in &reports {
        println!(
            "{}: {} ({} samples, {} violations, max slack {})",
            r.condition_id,
            if r.passed { "pass" } else { "FAIL" },
            r.samples,
            r.violation_count,
            fmt12(r.max_slack)
        );
        if !r.passed {
            if let Some(v) = r.violations.first() {
                println!(
                    "  first witness: t = {}, y1 = {:?}, y2 = {:?}, lhs = {} > rhs = {}",
                    fmt12(v.t),
                    v.y1,
                    v.y2,
                    fmt12(v.lhs),
                    fmt12(v.rhs)
                );
            }
        }
    }
    println!("outputs: {}", dir.root.display());
    Ok(all_passed)
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ExperimentSummary {
    kind: String,
    gates: Vec<GateRow>,
    all_passed: bool,
}

#[derive(Debug, Serialize)]
struct GateRow {
    name: String,
    passed: bool,
    value: String,
    bound: String,
}

pub fn run_experiment_cmd(cfg: &CliConfig) -> Result<bool> {
    let problem = cfg
        .problem
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment needs a [problem] block".into()))?;
    let numeric = cfg
        .numeric
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment needs a [numeric] block".into()))?;
    let kind = cfg
        .experiment
        .as_ref()
        .ok_or_else(|| CliError::Config("experiment needs an [experiment] block".into()))?;

    let kind_name = match kind {
        ExperimentKind::Uniqueness { .. } => "uniqueness",
        ExperimentKind::Stability { .. } => "stability",
        ExperimentKind::Comparison { .. } => "comparison",
        ExperimentKind::Convergence { .. } => "convergence",
    };
    let dir = prepare_run_dir(cfg, kind_name)?;
    write_manifest(cfg, &dir)?;

    let manifest = bsde_core::harness::ExperimentManifest {
        kind: kind.clone(),
        problem: problem.clone(),
        numeric: *numeric,
        label: cfg.output.as_ref().and_then(|o| o.label.clone()),
    };
    let result = run_experiment(&manifest)?;

    for table in &result.tables {
        write_csv(
            &dir.tables.join(format!("{}.csv", table.name)),
            &table.columns,
            &table.rows,
        )?;
    }
    let summary = ExperimentSummary {
        kind: kind_name.into(),
        gates: result
            .gates
            .iter()
            .map(|g| GateRow {
                name: g.name.clone(),
                passed: g.passed,
                value: fmt12(g.value),
                bound: fmt12(g.bound),
            })
            .collect(),
        all_passed: result.all_passed(),
    };
    write_summary(&dir, &summary)?;

    for g in &result.gates {
        println!(
            "gate {}: {} (value {}, bound {})",
            g.name,
            if g.passed { "pass" } else { "FAIL" },
            fmt12(g.value),
            fmt12(g.bound)
        );
    }
    println!("outputs: {}", dir.root.display());
    Ok(result.all_passed())
}

// ---------------------------------------------------------------------------
// modulus
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct ModulusSummary {
    results: Vec<String>,
}

pub fn run_modulus(cfg: &CliConfig) -> Result<bool> {
    let queries = cfg
        .modulus
        .as_ref()
        .ok_or_else(|| CliError::Config("modulus needs a [modulus] block".into()))?;
    if queries.queries.is_empty() {
        return Err(CliError::Config("modulus needs at least one query".into()));
    }
    let dir = prepare_run_dir(cfg, "modulus")?;
    write_manifest(cfg, &dir)?;

    let mut results = Vec::new();
    for (idx, query) in queries.queries.iter().enumerate() {
        let line = execute_modulus_query(idx, query, &dir)?;
        println!("{line}");
        results.push(line);
    }
    write_summary(&dir, &ModulusSummary { results })?;
    println!("outputs: {}", dir.root.display());
    Ok(true)
}

fn tabulate_to_csv(idx: usize, rho: &ModulusFn, dir: &RunDir) -> Result<()> {
    let grid = rho.evaluation_grid();
    let rows: Vec<Vec<f64>> = grid
        .iter()
        .map(|&x| vec![x, rho.eval(x).unwrap_or(f64::NAN)])
        .collect();
    write_csv(
        &dir.tables.join(format!("query{idx}.csv")),
        &["u".to_string(), "value".to_string()],
        &rows,
    )
}

fn execute_modulus_query(idx: usize, query: &ModulusQuery, dir: &RunDir) -> Result<String> {
    Ok(match query {
        ModulusQuery::Eval { rho, points } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let vals: Vec<String> = points
                .iter()
                .map(|&u| rho.eval(u).map(fmt12))
                .collect::<std::result::Result<_, _>>()?;
            format!("query {idx}: eval -> [{}]", vals.join(", "))
        }
        ModulusQuery::Classify { rho, variant, p } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let verdict = osgood_classifier(&rho, *p, *variant)?;
            let rows: Vec<Vec<f64>> = verdict
                .partial_integrals
                .iter()
                .map(|&(e, v)| vec![e, v])
                .collect();
            write_csv(
                &dir.tables.join(format!("query{idx}.csv")),
                &["epsilon".to_string(), "partial_integral".to_string()],
                &rows,
            )?;
            format!("query {idx}: classify -> {:?}", verdict.verdict)
        }
        ModulusQuery::GrowthBound { rho } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let a = linear_growth_bound(&rho)?;
            format!("query {idx}: growth_bound -> A = {}", fmt12(a))
        }
        ModulusQuery::SplitGrowth { rho, m } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let (slope, offset) = split_growth_bound(&rho, *m)?;
            format!(
                "query {idx}: split_growth -> slope = {}, offset = {}",
                fmt12(slope),
                fmt12(offset)
            )
        }
        ModulusQuery::Lift { rho, p, q } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let out = lift_order(&rho, *p, *q)?;
            tabulate_to_csv(idx, &out, dir)?;
            format!("query {idx}: lift({p} -> {q}) tabulated, concave = {}", out.concave_verified())
        }
        ModulusQuery::MaoToConstantin { rho, p } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let out = mao_to_constantin(&rho, *p)?;
            tabulate_to_csv(idx, &out, dir)?;
            format!("query {idx}: mao_to_constantin(p = {p}) tabulated")
        }
        ModulusQuery::ConstantinToMao { rho, p } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let out = constantin_to_mao(&rho, *p)?;
            tabulate_to_csv(idx, &out, dir)?;
            format!("query {idx}: constantin_to_mao(p = {p}) tabulated")
        }
        ModulusQuery::Envelope { grid, values } => {
            let out = subadditive_envelope(grid, values)?;
            tabulate_to_csv(idx, &out, dir)?;
            format!("query {idx}: envelope tabulated, concave = {}", out.concave_verified())
        }
        ModulusQuery::Bihari { rho, a, horizon, multiplier } => {
            let rho = ModulusFn::from_family(rho.clone())?;
            let bound = bihari_bound(*a, &rho, *horizon, *multiplier)?;
            format!("query {idx}: bihari -> {}", fmt12(bound))
        }
    })
}
