//! Batch front-end: a JSON config lists scenarios, each scenario produces one
//! entry of `report.json` plus optional CSV curves and lattice dumps.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::Parser;
use num_rational::Rational64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::filtstab::{
    self, bogomolov_screen, central_c, enumerate_subobjects, equivalence_brute, instance_grid, run_batch, slope_test,
    Instance, SearchBounds, SlopeVerdict,
};
use crate::kempfness::{self, central_level, minimize_psi, psi, stability_test, MinimizeOpts, StabilityVerdict};
use crate::liecore::{AlgebraElement, AnchorRep, CMat, GroupElement, C64};
use crate::targets::{ExtendedWeight, Target, TargetKind, TargetPoint};
use crate::vortexlat::{self, SolveOpts, SolveOutcome, TorusLattice};

#[derive(Parser, Debug, Clone)]
#[command(name = "momentmap", version, about = "Run moment-map, stability and vortex scenarios from a JSON config")]
pub struct Args {
    /// Scenario config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for scenario-level parallelism.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenarios: Vec<Scenario>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    Moment {
        name: String,
        seed: Option<u64>,
        target: TargetSpec,
        #[serde(default)]
        inputs: Inputs,
    },
    Weight {
        name: String,
        seed: Option<u64>,
        target: TargetSpec,
        #[serde(default)]
        inputs: Inputs,
        #[serde(default = "default_t_max")]
        t_max: f64,
        #[serde(default = "default_slope_tol")]
        slope_tol: f64,
    },
    Psi {
        name: String,
        seed: Option<u64>,
        target: TargetSpec,
        #[serde(default)]
        inputs: Inputs,
        #[serde(default = "default_quad_tol")]
        quad_tol: f64,
        #[serde(default = "default_t_grid")]
        t_grid: Vec<f64>,
    },
    Flow {
        name: String,
        seed: Option<u64>,
        target: TargetSpec,
        #[serde(default)]
        inputs: Inputs,
        #[serde(default)]
        c_level: f64,
        #[serde(default)]
        opts: MinimizeOpts,
    },
    Stability {
        name: String,
        seed: Option<u64>,
        target: TargetSpec,
        #[serde(default)]
        inputs: Inputs,
        #[serde(default)]
        c_level: f64,
        #[serde(default)]
        opts: MinimizeOpts,
    },
    Filt {
        name: String,
        #[serde(default)]
        instances: Vec<Instance>,
        #[serde(default)]
        bounds: SearchBounds,
        grid: Option<GridSpec>,
    },
    Vortex {
        name: String,
        lattice: TorusLattice,
        d: i64,
        c: f64,
        #[serde(default)]
        opts: SolveOpts,
        #[serde(default)]
        refinement: Vec<usize>,
        #[serde(default)]
        dump: bool,
    },
}

impl Scenario {
    pub fn name(&self) -> &str {
        match self {
            Scenario::Moment { name, .. }
            | Scenario::Weight { name, .. }
            | Scenario::Psi { name, .. }
            | Scenario::Flow { name, .. }
            | Scenario::Stability { name, .. }
            | Scenario::Filt { name, .. }
            | Scenario::Vortex { name, .. } => name,
        }
    }

    pub fn command(&self) -> &'static str {
        match self {
            Scenario::Moment { .. } => "moment",
            Scenario::Weight { .. } => "weight",
            Scenario::Psi { .. } => "psi",
            Scenario::Flow { .. } => "flow",
            Scenario::Stability { .. } => "stability",
            Scenario::Filt { .. } => "filt",
            Scenario::Vortex { .. } => "vortex",
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Scenario::Moment { seed, .. }
            | Scenario::Weight { seed, .. }
            | Scenario::Psi { seed, .. }
            | Scenario::Flow { seed, .. }
            | Scenario::Stability { seed, .. } => *seed,
            _ => None,
        }
    }
}

fn default_t_max() -> f64 {
    50.0
}

fn default_slope_tol() -> f64 {
    1e-6
}

fn default_quad_tol() -> f64 {
    kempfness::DEFAULT_QUAD_TOL
}

fn default_t_grid() -> Vec<f64> {
    (0..=20).map(|k| k as f64 * 0.25).collect()
}

fn default_scale() -> f64 {
    1.0
}

/// Complex matrix as rows of `[re, im]` pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupSpec {
    #[default]
    Unitary,
    TracelessTorus,
    /// Diagonal weights of the torus generators.
    Torus(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub m: usize,
    #[serde(default)]
    pub group: GroupSpec,
    pub space: TargetKind,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Frames (columns span the point).
    #[serde(default)]
    pub points: Vec<MatrixSpec>,
    #[serde(default)]
    pub random_points: usize,
    /// Skew-Hermitian elements of the acting algebra.
    #[serde(default)]
    pub generators: Vec<MatrixSpec>,
    #[serde(default)]
    pub random_generators: usize,
    #[serde(default = "default_scale")]
    pub random_scale: f64,
}

impl Default for Inputs {
    fn default() -> Self {
        Self { points: Vec::new(), random_points: 0, generators: Vec::new(), random_generators: 0, random_scale: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub max_rank: usize,
    pub max_abs_degree: i64,
    pub max_steps: usize,
    #[serde(with = "filtstab::qstr::vec")]
    pub taus: Vec<Rational64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub scenario: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: &'static str,
    pub scenario: Option<String>,
    pub message: String,
}

impl CliError {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self { kind, scenario: None, message: message.to_string() }
    }

    fn runtime(message: impl ToString) -> Self {
        Self::new("runtime", message)
    }

    fn invalid(message: impl ToString) -> Self {
        Self::new("validation", message)
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "runtime" | "io" => 1,
            _ => 2,
        }
    }

    pub fn to_json(&self) -> String {
        let body = ErrorReport { kind: self.kind, scenario: self.scenario.clone(), message: self.message.clone() };
        serde_json::to_string(&json!({ "error": body })).expect("error report serializes")
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn matrix_from_spec(spec: &MatrixSpec) -> CliResult<CMat> {
    let rows = spec.len();
    let cols = spec.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || spec.iter().any(|r| r.len() != cols) {
        return Err(CliError::invalid("matrices must be non-empty and rectangular"));
    }
    Ok(CMat::from_fn(rows, cols, |i, j| C64::new(spec[i][j][0], spec[i][j][1])))
}

pub fn matrix_to_spec(m: &CMat) -> MatrixSpec {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn build_target(spec: &TargetSpec) -> CliResult<Target> {
    let anchor = match &spec.group {
        GroupSpec::Unitary => AnchorRep::standard(spec.m),
        GroupSpec::TracelessTorus => AnchorRep::traceless_torus(spec.m),
        GroupSpec::Torus(w) => AnchorRep::torus(spec.m, w.clone()),
    }
    .map_err(CliError::invalid)?;
    Target::new(spec.space.clone(), anchor).map_err(CliError::invalid)
}

fn build_points(target: &Target, inputs: &Inputs, rng: &mut ChaCha8Rng) -> CliResult<Vec<TargetPoint>> {
    let mut out = Vec::new();
    for p in &inputs.points {
        let frame = matrix_from_spec(p)?;
        let point = match target.kind() {
            TargetKind::Grassmann { .. } | TargetKind::Flag { .. } => target.point_from_spanning(frame),
            _ => target.point(frame),
        };
        out.push(point.map_err(CliError::invalid)?);
    }
    out.extend((0..inputs.random_points).map(|_| target.random_point(rng)));
    Ok(out)
}

fn build_generators(target: &Target, inputs: &Inputs, rng: &mut ChaCha8Rng) -> CliResult<Vec<AlgebraElement>> {
    let m = target.ambient_dim();
    let mut out = Vec::new();
    for g in &inputs.generators {
        let mat = matrix_from_spec(g)?;
        if mat.nrows() != m || mat.ncols() != m {
            return Err(CliError::invalid(format!("generator must be {m}x{m}")));
        }
        out.push(AlgebraElement::skew_hermitian(mat).map_err(CliError::invalid)?);
    }
    for _ in 0..inputs.random_generators {
        let h = target.anchor().random_hermitian(rng, inputs.random_scale);
        out.push(AlgebraElement::from_weight_operator(&h).map_err(CliError::runtime)?);
    }
    Ok(out)
}

fn weight_json(w: &ExtendedWeight) -> Value {
    serde_json::to_value(w).expect("weights serialize")
}

struct Ctx<'a> {
    out: &'a Path,
    name: &'a str,
}

impl Ctx<'_> {
    fn file(&self, suffix: &str) -> PathBuf {
        self.out.join(format!("{}_{suffix}", sanitize(self.name)))
    }

    fn rel(&self, path: &Path) -> String {
        path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn io_err(e: impl ToString) -> CliError {
    CliError::new("io", e)
}

fn run_scenario(sc: &Scenario, seed: u64, out: &Path) -> CliResult<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ctx = Ctx { out, name: sc.name() };
    match sc {
        Scenario::Moment { target, inputs, .. } => {
            let target = build_target(target)?;
            let points = build_points(&target, inputs, &mut rng)?;
            let gens = build_generators(&target, inputs, &mut rng)?;
            let mut rows = Vec::new();
            for (i, x) in points.iter().enumerate() {
                let mu = target.moment_element(x).map_err(CliError::runtime)?;
                let pairs = gens
                    .iter()
                    .map(|s| target.moment_pair(x, s).map_err(CliError::runtime))
                    .collect::<CliResult<Vec<f64>>>()?;
                rows.push(json!({ "point": i, "moment": matrix_to_spec(mu.mat()), "pairs": pairs }));
            }
            Ok(json!({ "rows": rows }))
        }
        Scenario::Weight { target, inputs, t_max, slope_tol, .. } => {
            let target = build_target(target)?;
            let points = build_points(&target, inputs, &mut rng)?;
            let gens = build_generators(&target, inputs, &mut rng)?;
            let mut rows = Vec::new();
            for (i, x) in points.iter().enumerate() {
                for (j, s) in gens.iter().enumerate() {
                    let closed = target.maximal_weight(x, s).map_err(CliError::runtime)?;
                    let numeric = target.numeric_maximal_weight(x, s, *t_max, *slope_tol);
                    let (numeric, agree) = match &numeric {
                        Ok(w) => {
                            let agree = match (closed, *w) {
                                (ExtendedWeight::Infinite, ExtendedWeight::Infinite) => true,
                                (ExtendedWeight::Finite { value: a, .. }, ExtendedWeight::Finite { value: b, .. }) => {
                                    (a - b).abs() <= 1e-4 * a.abs().max(1.0)
                                }
                                _ => false,
                            };
                            (weight_json(w), agree)
                        }
                        Err(e) => (json!({ "kind": "inconclusive", "message": e.to_string() }), false),
                    };
                    rows.push(json!({
                        "point": i,
                        "generator": j,
                        "closed_form": weight_json(&closed),
                        "numeric": numeric,
                        "agree": agree,
                    }));
                }
            }
            Ok(json!({ "rows": rows }))
        }
        Scenario::Psi { target, inputs, quad_tol, t_grid, .. } => {
            let target = build_target(target)?;
            let points = build_points(&target, inputs, &mut rng)?;
            let gens = build_generators(&target, inputs, &mut rng)?;
            let mut rows = Vec::new();
            let path = ctx.file("lambda.csv");
            let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
            w.write_record(["point", "generator", "t", "lambda"]).map_err(io_err)?;
            for (i, x) in points.iter().enumerate() {
                for (j, s) in gens.iter().enumerate() {
                    let h = s.weight_operator().map_err(CliError::runtime)?;
                    let g = GroupElement::exp_hermitian(&h);
                    let rec = psi(&target, x, &g, *quad_tol).map_err(CliError::runtime)?;
                    rows.push(json!({
                        "point": i,
                        "generator": j,
                        "value": rec.value,
                        "error": rec.error,
                        "converged": rec.converged,
                    }));
                    for &t in t_grid {
                        let l = target.lambda_t(x, s, t).map_err(CliError::runtime)?;
                        w.write_record([i.to_string(), j.to_string(), t.to_string(), l.to_string()]).map_err(io_err)?;
                    }
                }
            }
            w.flush().map_err(io_err)?;
            Ok(json!({ "rows": rows, "lambda_csv": ctx.rel(&path) }))
        }
        Scenario::Flow { target, inputs, c_level, opts, .. } => {
            let target = build_target(target)?;
            let points = build_points(&target, inputs, &mut rng)?;
            let c = central_level(target.ambient_dim(), *c_level);
            let mut rows = Vec::new();
            for (i, x) in points.iter().enumerate() {
                let res = minimize_psi(&target, x, &c, opts).map_err(CliError::runtime)?;
                let path = ctx.file(&format!("trace_{i}.csv"));
                kempfness::write_trace_csv(BufWriter::new(File::create(&path).map_err(io_err)?), &res.trace)
                    .map_err(io_err)?;
                rows.push(json!({
                    "point": i,
                    "status": res.status,
                    "residual": res.residual,
                    "iterations": res.iterations,
                    "psi": res.psi,
                    "length_log": res.length_log,
                    "witness": res.witness.as_ref().map(|s| matrix_to_spec(s.mat())),
                    "stabilizer_dim": res.stabilizer_dim,
                    "final_point": matrix_to_spec(res.point.frame()),
                    "diagnostics": res.diagnostics,
                    "trace_csv": ctx.rel(&path),
                }));
            }
            Ok(json!({ "rows": rows }))
        }
        Scenario::Stability { target, inputs, c_level, opts, .. } => {
            let target = build_target(target)?;
            let points = build_points(&target, inputs, &mut rng)?;
            let c = central_level(target.ambient_dim(), *c_level);
            let mut rows = Vec::new();
            for (i, x) in points.iter().enumerate() {
                let v = stability_test(&target, x, &c, opts).map_err(CliError::runtime)?;
                let detail = match &v {
                    StabilityVerdict::Stable { minimizer } => json!({
                        "residual": minimizer.residual,
                        "iterations": minimizer.iterations,
                        "stabilizer_dim": minimizer.stabilizer_dim,
                    }),
                    StabilityVerdict::Unstable { s, weight } => json!({
                        "direction": matrix_to_spec(s.mat()),
                        "weight": weight_json(weight),
                    }),
                    StabilityVerdict::Inconclusive { diagnostics } => json!({ "diagnostics": diagnostics }),
                };
                rows.push(json!({ "point": i, "verdict": v.label(), "detail": detail }));
            }
            Ok(json!({ "rows": rows }))
        }
        Scenario::Filt { instances, bounds, grid, .. } => {
            let mut rows = Vec::new();
            for inst in instances {
                let subs = enumerate_subobjects(&inst.bundle, &inst.filtration, bounds).map_err(CliError::invalid)?;
                let mut verdict = SlopeVerdict::StrictPass;
                let mut slopes = Vec::new();
                for sub in &subs {
                    let v = slope_test(&inst.bundle, &inst.filtration, sub).map_err(CliError::runtime)?;
                    verdict = match (verdict, v) {
                        (SlopeVerdict::Violated, _) | (_, SlopeVerdict::Violated) => SlopeVerdict::Violated,
                        (SlopeVerdict::Equality, _) | (_, SlopeVerdict::Equality) => SlopeVerdict::Equality,
                        _ => SlopeVerdict::StrictPass,
                    };
                    slopes.push(json!({ "subobject": sub, "verdict": v }));
                }
                let screen = bogomolov_screen(&inst.bundle, &inst.filtration).map_err(CliError::runtime)?;
                let eq = equivalence_brute(&inst.bundle, &inst.filtration, bounds).map_err(CliError::runtime)?;
                rows.push(json!({
                    "bundle": inst.bundle,
                    "filtration": inst.filtration,
                    "central_c": central_c(&inst.bundle, &inst.filtration).to_string(),
                    "verdict": verdict,
                    "bogomolov_residual": screen.residual.to_string(),
                    "no_solution_expected": screen.no_solution_expected,
                    "slopes": slopes,
                    "equivalence": eq,
                }));
            }
            let mut out = json!({ "rows": rows });
            if let Some(g) = grid {
                let insts = instance_grid(g.max_rank, g.max_abs_degree, g.max_steps, &g.taus);
                let batch = run_batch(&insts, bounds).map_err(CliError::runtime)?;
                let path = ctx.file("batch.csv");
                let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
                for (row, _) in &batch {
                    w.serialize(row).map_err(io_err)?;
                }
                w.flush().map_err(io_err)?;
                let failures = batch.iter().filter(|(r, _)| !r.holds || r.counterexamples > 0).count();
                out["grid"] = json!({
                    "instances": batch.len(),
                    "stable": batch.iter().filter(|(r, _)| r.stable).count(),
                    "failures": failures,
                    "batch_csv": ctx.rel(&path),
                });
            }
            Ok(out)
        }
        Scenario::Vortex { lattice, d, c, opts, refinement, dump, .. } => {
            let lat = TorusLattice::new(lattice.n, lattice.l).map_err(CliError::invalid)?;
            let bound = vortexlat::mean_constraint_bound(&lat, *d, *c);
            let outcome = vortexlat::solve(&lat, *d, *c, opts);
            let mut out = json!({
                "outcome": outcome.label(),
                "bound": bound,
                "bogomolov_residual": bound / vortexlat::DEGREE_UNIT,
            });
            match &outcome {
                SolveOutcome::NoSolution { reason, .. } => {
                    out["reason"] = json!(reason);
                }
                SolveOutcome::Solution { state, residuals, trace } | SolveOutcome::MaxIter { state, residuals, trace } => {
                    let b = vortexlat::ymh(&lat, &state.conn, &state.section, *c).map_err(CliError::runtime)?;
                    let dec = vortexlat::decomposition_check(&lat, &state.conn, &state.section, *c)
                        .map_err(CliError::runtime)?;
                    let path = ctx.file("trace.csv");
                    vortexlat::write_solve_trace_csv(BufWriter::new(File::create(&path).map_err(io_err)?), trace)
                        .map_err(io_err)?;
                    out["residuals"] = json!(residuals);
                    out["ymh"] = json!(b);
                    out["decomposition_residual"] = json!(dec);
                    out["charge"] = json!(vortexlat::topological_charge(&lat, &state.conn));
                    out["trace_csv"] = json!(ctx.rel(&path));
                    if *dump {
                        let stem = ctx.file("state");
                        vortexlat::write_state(&stem, state).map_err(io_err)?;
                        out["dump"] = json!(ctx.rel(&stem.with_extension("json")));
                    }
                }
            }
            if !refinement.is_empty() {
                let mut rows = Vec::new();
                let mut prev: Option<f64> = None;
                for &n in refinement {
                    let l = TorusLattice::new(n, lat.l).map_err(CliError::invalid)?;
                    let st = vortexlat::smooth_state(&l, *d);
                    let r = vortexlat::decomposition_check(&l, &st.conn, &st.section, *c).map_err(CliError::runtime)?;
                    let order = prev.map(|p| (p / r).log2());
                    rows.push(json!({ "n": n, "residual": r, "order": order }));
                    prev = Some(r);
                }
                out["refinement"] = json!(rows);
            }
            Ok(out)
        }
    }
}

/// Parses and validates a config file.
pub fn load_config(path: &Path) -> CliResult<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
    let cfg: Config = serde_json::from_str(&text).map_err(|e| CliError::new("config", e))?;
    for sc in &cfg.scenarios {
        let fail = |e: CliError| CliError { scenario: Some(sc.name().to_string()), ..e };
        match sc {
            Scenario::Moment { target, .. }
            | Scenario::Weight { target, .. }
            | Scenario::Psi { target, .. }
            | Scenario::Flow { target, .. }
            | Scenario::Stability { target, .. } => {
                build_target(target).map_err(fail)?;
            }
            Scenario::Filt { instances, .. } => {
                for inst in instances {
                    filtstab::validate(&inst.bundle, &inst.filtration).map_err(|e| fail(CliError::invalid(e)))?;
                }
            }
            Scenario::Vortex { lattice, .. } => {
                TorusLattice::new(lattice.n, lattice.l).map_err(|e| fail(CliError::invalid(e)))?;
            }
        }
    }
    let mut names: Vec<&str> = cfg.scenarios.iter().map(Scenario::name).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(CliError::new("config", format!("duplicate scenario name {:?}", w[0])));
    }
    Ok(cfg)
}

/// Runs every scenario and writes `report.json` and `metadata.json` into `out`.
pub fn run(args: &Args) -> CliResult<Value> {
    let cfg = load_config(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&args.out).map_err(io_err)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.unwrap_or(0))
        .build()
        .map_err(CliError::runtime)?;
    let results: Vec<CliResult<Value>> = pool.install(|| {
        cfg.scenarios
            .par_iter()
            .enumerate()
            .map(|(i, sc)| {
                let s = sc.seed().unwrap_or_else(|| seed.wrapping_add(i as u64));
                run_scenario(sc, s, &args.out)
                    .map(|result| json!({ "name": sc.name(), "command": sc.command(), "seed": s, "result": result }))
                    .map_err(|e| CliError { scenario: Some(sc.name().to_string()), ..e })
            })
            .collect()
    });
    let scenarios = results.into_iter().collect::<CliResult<Vec<Value>>>()?;
    let report = json!({ "seed": seed, "scenarios": scenarios });
    let text = serde_json::to_string_pretty(&report).map_err(CliError::runtime)? + "\n";
    std::fs::write(args.out.join("report.json"), text).map_err(io_err)?;
    let generated = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or_default();
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "generated_unix": generated,
        "config": args.config.display().to_string(),
    });
    std::fs::write(args.out.join("metadata.json"), serde_json::to_string_pretty(&meta).map_err(CliError::runtime)? + "\n")
        .map_err(io_err)?;
    Ok(report)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with(args: Args) -> i32 {
    match run(&args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}
