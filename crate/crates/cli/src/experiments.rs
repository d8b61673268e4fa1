//! Experiment drivers. Every run is keyed by its grid coordinates, and the
//! instance seed is derived from those coordinates, so results do not depend
//! on scheduling.

use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use tucreg::init::spectral_init;
use tucreg::ldp::{correlated_expectation, gap_table, mc_verify_expectation, GapRow, HermiteDegreeProfile};
use tucreg::random::{derive_seed, gaussian_vec, rng_from_seed};
use tucreg::regression::{estimate_trip, generate_gaussian_instance, trip_constant};
use tucreg::solvers::{solve, IterRecord};
use tucreg::tucker::{feasible_ranks, thosvd};
use tucreg::{Algorithm, DesignKind, Error, ProblemInstance, RunTrace, SolverConfig, Termination, TuckerTensor};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::report::{fmt_f64, Report, TRACE_HEADER};
use crate::CliError;

/// Tag mixed into the seeds of the LDP Monte Carlo checks.
const LDP_TAG: u64 = 0x1d9;

#[derive(Clone, Debug)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub n: usize,
    pub r: usize,
    pub replicate: u64,
    pub seed: u64,
    pub trace: RunTrace,
}

impl RunResult {
    pub fn succeeded(&self, threshold: f64) -> bool {
        self.trace.final_rel_rmse() < threshold
    }
}

#[derive(Clone, Debug)]
pub struct ProfileCheck {
    pub profile: HermiteDegreeProfile,
    pub exact: f64,
    pub estimate: f64,
    pub stderr: f64,
}

impl ProfileCheck {
    pub fn passed(&self) -> bool {
        let diff = (self.exact - self.estimate).abs();
        if self.stderr == 0.0 {
            diff <= 1e-12
        } else {
            diff <= 3.0 * self.stderr
        }
    }
}

/// Seed of the instance for replicate `rep` at sample size `n`.
pub fn replicate_seed(base: u64, n: usize, rep: u64) -> u64 {
    derive_seed(base, &[n as u64, rep])
}

fn library_error(e: Error) -> CliError {
    match e {
        Error::Io(e) => CliError::Io(e.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub fn build_instance(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<ProblemInstance, CliError> {
    let m = &cfg.model;
    let (kind, d) = m.design();
    let r_star = feasible_ranks(&m.dims, &vec![m.r_star; m.dims.len()]);
    generate_gaussian_instance(kind, &m.dims, d, &r_star, m.sigma, n, seed)
        .map_err(|e| CliError::Config(format!("model: {e}")))
}

/// Spectral initialization for the model, or a truncated HOSVD of `A*(y)`
/// for general designs with tensor responses.
pub fn initialize(inst: &ProblemInstance, r: &[usize], hooi_inplace: bool) -> tucreg::Result<TuckerTensor> {
    if inst.design.kind() == DesignKind::General && inst.design.m() > 0 {
        return thosvd(&inst.design.adjoint(&inst.observations)?, r);
    }
    spectral_init(inst, r, hooi_inplace)
}

pub fn solver_config(cfg: &ExperimentConfig, algorithm: Algorithm, r: usize) -> Result<SolverConfig, CliError> {
    let s = &cfg.solver;
    let mut sc = SolverConfig::new(algorithm, vec![r; cfg.model.dims.len()]);
    sc.max_iters = s.max_iters;
    sc.tol_rel_rmse = s.tol;
    sc.retraction = s.retraction_method()?;
    sc.stepsize = s.stepsize;
    sc.baseline_stepsizes = s.baseline_stepsizes.clone();
    sc.ridge_eps = s.ridge_eps;
    sc.vector_closed_form = s.vector_closed_form;
    sc.divergence_factor = s.divergence_factor;
    sc.validate().map_err(|e| CliError::Config(format!("solver: {e}")))?;
    Ok(sc)
}

fn failed_trace(termination: Termination, message: String) -> RunTrace {
    RunTrace {
        records: Vec::new(),
        termination,
        diverged: false,
        selected_stepsize: None,
        message: Some(message),
    }
}

/// Generates one instance and runs every (rank, algorithm) pair on it.
fn run_cell(
    cfg: &ExperimentConfig,
    algorithms: &[Algorithm],
    n: usize,
    rep: u64,
) -> Result<Vec<RunResult>, CliError> {
    let seed = replicate_seed(cfg.seeds.base, n, rep);
    let inst = build_instance(cfg, n, seed)?;
    let mut out = Vec::new();
    for &r in &cfg.grid.r {
        let ranks = feasible_ranks(inst.dims(), &vec![r; inst.dims().len()]);
        let x0 = match initialize(&inst, &ranks, cfg.solver.hooi_inplace) {
            Ok(x) => Some(x),
            Err(e @ (Error::DegenerateDesign(_) | Error::DegeneratePoint(_))) => {
                let t = failed_trace(Termination::Degenerate, format!("initialization: {e}"));
                out.extend(algorithms.iter().map(|&algorithm| RunResult {
                    algorithm,
                    n,
                    r,
                    replicate: rep,
                    seed,
                    trace: t.clone(),
                }));
                None
            }
            Err(Error::NumericalFailure(m)) => {
                let t = failed_trace(Termination::NumericalFailure, format!("initialization: {m}"));
                out.extend(algorithms.iter().map(|&algorithm| RunResult {
                    algorithm,
                    n,
                    r,
                    replicate: rep,
                    seed,
                    trace: t.clone(),
                }));
                None
            }
            Err(e) => return Err(library_error(e)),
        };
        let Some(x0) = x0 else { continue };
        for &algorithm in algorithms {
            let sc = solver_config(cfg, algorithm, r)?;
            let (_, trace) = solve(&inst, &sc, &x0).map_err(library_error)?;
            out.push(RunResult {
                algorithm,
                n,
                r,
                replicate: rep,
                seed,
                trace,
            });
        }
    }
    Ok(out)
}

/// Runs the full (n, replicate, r, algorithm) grid. Cells run in parallel on
/// the current rayon pool; results come back in grid order.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<Vec<RunResult>, CliError> {
    cfg.validate_runs()?;
    let algorithms = cfg.algorithms()?;
    let cells: Vec<(usize, u64)> = cfg
        .grid
        .n
        .iter()
        .flat_map(|&n| cfg.seeds.replicates().into_iter().map(move |rep| (n, rep)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(n, rep)| run_cell(cfg, &algorithms, n, rep))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

fn base_metadata(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let mut meta = vec![
        ("tucreg_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("seed_derivation".to_string(), "splitmix64 fold of (n, replicate) xor seeds.base".to_string()),
    ];
    meta.extend(cfg.flatten());
    meta
}

fn run_metadata(run: &RunResult) -> (String, String) {
    let t = &run.trace;
    let mut v = format!("termination:{} diverged:{}", t.termination, t.diverged);
    if let Some(s) = t.selected_stepsize {
        v.push_str(&format!(" selected_stepsize:{}", fmt_f64(s)));
    }
    if let Some(m) = &t.message {
        v.push_str(&format!(" message:{}", m.replace(['\n', '\r'], " ")));
    }
    (
        format!("run.{}.seed{}.n{}.r{}", run.algorithm, run.seed, run.n, run.r),
        v,
    )
}

fn trace_row(cfg: &ExperimentConfig, run: &RunResult, rec: &IterRecord) -> Vec<String> {
    vec![
        cfg.experiment.id.clone(),
        cfg.model.kind.name().to_string(),
        run.algorithm.to_string(),
        run.seed.to_string(),
        run.n.to_string(),
        run.r.to_string(),
        cfg.model.r_star.to_string(),
        fmt_f64(cfg.model.sigma),
        rec.iter.to_string(),
        fmt_f64(rec.rel_rmse),
        fmt_f64(rec.loss),
        fmt_f64(rec.stepsize),
        format!("{:.3}", rec.elapsed_ns as f64 / 1e6),
    ]
}

/// Success statistics of one (algorithm, n, r) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub algorithm: Algorithm,
    pub n: usize,
    pub r: usize,
    pub runs: usize,
    pub successes: usize,
    pub median_rel_rmse: f64,
    pub elapsed_ms: f64,
}

impl CellSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.runs as f64
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

pub fn summarize(cfg: &ExperimentConfig, runs: &[RunResult]) -> Result<Vec<CellSummary>, CliError> {
    let mut out = Vec::new();
    for alg in cfg.algorithms()? {
        for &n in &cfg.grid.n {
            for &r in &cfg.grid.r {
                let cell: Vec<&RunResult> = runs
                    .iter()
                    .filter(|x| x.algorithm == alg && x.n == n && x.r == r)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                out.push(CellSummary {
                    algorithm: alg,
                    n,
                    r,
                    runs: cell.len(),
                    successes: cell.iter().filter(|x| x.succeeded(cfg.grid.success_threshold)).count(),
                    median_rel_rmse: median(cell.iter().map(|x| x.trace.final_rel_rmse()).collect()),
                    elapsed_ms: cell
                        .iter()
                        .filter_map(|x| x.trace.records.last())
                        .map(|rec| rec.elapsed_ns as f64 / 1e6)
                        .sum(),
                });
            }
        }
    }
    Ok(out)
}

/// Smallest `n` in the grid whose cell reaches the configured success rate,
/// per (algorithm, r).
pub fn minimal_successful_n(cfg: &ExperimentConfig, cells: &[CellSummary]) -> Vec<(Algorithm, usize, Option<usize>)> {
    let mut out = Vec::new();
    let mut keys: Vec<(Algorithm, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.algorithm, c.r)) {
            keys.push((c.algorithm, c.r));
        }
    }
    for (alg, r) in keys {
        let n = cells
            .iter()
            .filter(|c| c.algorithm == alg && c.r == r && c.success_rate() >= cfg.grid.success_rate)
            .map(|c| c.n)
            .min();
        out.push((alg, r, n));
    }
    out
}

fn summary_row(cfg: &ExperimentConfig, c: &CellSummary) -> Vec<String> {
    vec![
        format!("{}:summary", cfg.experiment.id),
        cfg.model.kind.name().to_string(),
        c.algorithm.to_string(),
        String::new(),
        c.n.to_string(),
        c.r.to_string(),
        cfg.model.r_star.to_string(),
        fmt_f64(cfg.model.sigma),
        c.runs.to_string(),
        fmt_f64(c.success_rate()),
        fmt_f64(c.median_rel_rmse),
        String::new(),
        format!("{:.3}", c.elapsed_ms),
    ]
}

fn min_n_row(cfg: &ExperimentConfig, alg: Algorithm, r: usize, n: Option<usize>) -> Vec<String> {
    let mut row = vec![String::new(); TRACE_HEADER.len()];
    row[0] = format!("{}:min_n", cfg.experiment.id);
    row[1] = cfg.model.kind.name().to_string();
    row[2] = alg.to_string();
    row[4] = n.map(|n| n.to_string()).unwrap_or_default();
    row[5] = r.to_string();
    row[6] = cfg.model.r_star.to_string();
    row[7] = fmt_f64(cfg.model.sigma);
    row
}

fn solver_report(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    let runs = run_grid(cfg)?;
    let mut report = Report::new(TRACE_HEADER.iter().map(|s| s.to_string()).collect());
    report.metadata = base_metadata(cfg);
    report.metadata.extend(runs.iter().map(run_metadata));
    let kind = cfg.experiment.kind;
    for run in &runs {
        if kind == ExperimentKind::Phase {
            if let Some(rec) = run.trace.records.last() {
                report.rows.push(trace_row(cfg, run, rec));
            }
        } else {
            report
                .rows
                .extend(run.trace.records.iter().map(|rec| trace_row(cfg, run, rec)));
        }
    }
    if matches!(kind, ExperimentKind::Phase | ExperimentKind::RankSweep) {
        let cells = summarize(cfg, &runs)?;
        report.rows.extend(cells.iter().map(|c| summary_row(cfg, c)));
        if kind == ExperimentKind::RankSweep {
            for (alg, r, n) in minimal_successful_n(cfg, &cells) {
                report.rows.push(min_n_row(cfg, alg, r, n));
            }
        }
    }
    report.runs = runs;
    Ok(report)
}

pub const LDP_HEADER: [&str; 17] = [
    "experiment_id",
    "table",
    "d",
    "p",
    "r_star",
    "degree",
    "stat_proxy",
    "degrees_of_freedom",
    "alg_proxy",
    "ld_threshold",
    "alpha",
    "beta",
    "u",
    "exact",
    "mc_estimate",
    "stderr",
    "status",
];

/// Random degree profile with small degrees. Half of the draws split `alpha`
/// across the `beta_j` so the expectation is nonzero.
fn random_profile(rng: &mut tucreg::random::Rng, cfg: &ExperimentConfig) -> HermiteDegreeProfile {
    let l = &cfg.ldp;
    let width = rng.random_range(1..=l.max_width);
    let alpha = rng.random_range(0..=l.max_degree);
    let beta = if rng.random_bool(0.5) {
        let mut b = vec![0; width];
        for _ in 0..alpha {
            b[rng.random_range(0..width)] += 1;
        }
        b
    } else {
        (0..width).map(|_| rng.random_range(0..=l.max_degree)).collect()
    };
    let dir = gaussian_vec(rng, width);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let radius = (l.u_norm_sq * rng.random_range(0.05..=1.0f64)).sqrt();
    let u = dir.iter().map(|v| v / norm * radius).collect();
    HermiteDegreeProfile::new(alpha, beta, u).expect("profile within bounds")
}

pub fn ldp_checks(cfg: &ExperimentConfig) -> Result<Vec<ProfileCheck>, CliError> {
    let mut rng = rng_from_seed(derive_seed(cfg.seeds.base, &[LDP_TAG]));
    let profiles: Vec<HermiteDegreeProfile> = (0..cfg.ldp.profiles).map(|_| random_profile(&mut rng, cfg)).collect();
    profiles
        .into_par_iter()
        .enumerate()
        .map(|(i, profile)| {
            let seed = derive_seed(cfg.seeds.base, &[LDP_TAG, i as u64]);
            let (estimate, stderr) =
                mc_verify_expectation(&profile, cfg.ldp.samples, seed).map_err(library_error)?;
            Ok(ProfileCheck {
                exact: correlated_expectation(&profile),
                profile,
                estimate,
                stderr,
            })
        })
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn ldp_report(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    cfg.validate_ldp()?;
    let l = &cfg.ldp;
    let mut report = Report::new(LDP_HEADER.iter().map(|s| s.to_string()).collect());
    report.metadata = base_metadata(cfg);
    for &d in &l.orders {
        let rows: Vec<GapRow> =
            gap_table(&l.p_grid, d, l.r_star, l.degree, l.delta, l.sigma_sq).map_err(library_error)?;
        for g in rows {
            let mut row = vec![String::new(); LDP_HEADER.len()];
            row[0] = cfg.experiment.id.clone();
            row[1] = "gap".into();
            row[2] = d.to_string();
            row[3] = g.p.to_string();
            row[4] = l.r_star.to_string();
            row[5] = l.degree.to_string();
            row[6] = fmt_f64(g.stat_proxy);
            row[7] = fmt_f64(g.degrees_of_freedom);
            row[8] = fmt_f64(g.alg_proxy);
            row[9] = fmt_f64(g.ld_threshold);
            report.rows.push(row);
            report.gap.push((d, g));
        }
    }
    let checks = ldp_checks(cfg)?;
    for c in &checks {
        let mut row = vec![String::new(); LDP_HEADER.len()];
        row[0] = cfg.experiment.id.clone();
        row[1] = "moment".into();
        row[10] = c.profile.alpha.to_string();
        row[11] = join(&c.profile.beta);
        row[12] = c.profile.u.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(";");
        row[13] = fmt_f64(c.exact);
        row[14] = fmt_f64(c.estimate);
        row[15] = fmt_f64(c.stderr);
        row[16] = if c.passed() { "PASS" } else { "FAIL" }.into();
        report.rows.push(row);
    }
    report.checks = checks;
    Ok(report)
}

/// Runs the configured experiment on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report, CliError> {
    match cfg.experiment.kind {
        ExperimentKind::Ldp => ldp_report(cfg),
        _ => solver_report(cfg),
    }
}

/// Runs the experiment on a pool with `jobs` threads, or rayon's default.
pub fn run_with_jobs(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<Report, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("jobs: {e}")))?;
    pool.install(|| run_experiment(cfg))
}

/// Writes the first replicate at the first sample size to `dir`.
pub fn gen_instance(cfg: &ExperimentConfig, dir: &Path) -> Result<u64, CliError> {
    cfg.validate_runs()?;
    let n = cfg.grid.n[0];
    let seed = replicate_seed(cfg.seeds.base, n, cfg.seeds.replicates()[0]);
    let inst = build_instance(cfg, n, seed)?;
    inst.export(dir)
        .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Ok(seed)
}

pub const TRIP_HEADER: [&str; 9] = [
    "experiment_id",
    "model",
    "seed",
    "n",
    "r",
    "trials",
    "rmin",
    "rmax",
    "trip_constant",
];

/// Sampled restricted isometry bounds, for a stored instance or for the
/// configured grid.
pub fn trip_report(cfg: &ExperimentConfig, instance: Option<&Path>) -> Result<Report, CliError> {
    let mut report = Report::new(TRIP_HEADER.iter().map(|s| s.to_string()).collect());
    report.metadata = base_metadata(cfg);
    let trials = cfg.grid.trip_trials;
    if trials == 0 {
        return Err(CliError::Config("grid.trip_trials must be at least 1".into()));
    }
    if cfg.grid.r.is_empty() || cfg.grid.r.contains(&0) {
        return Err(CliError::Config("grid.r must be a nonempty list of positive ranks".into()));
    }
    let insts: Vec<(String, u64, ProblemInstance)> = match instance {
        Some(dir) => {
            let inst = ProblemInstance::import(dir).map_err(|e| match e {
                Error::Io(e) => CliError::Io(format!("{}: {e}", dir.display())),
                other => CliError::Config(format!("{}: {other}", dir.display())),
            })?;
            let seed = inst.seed.unwrap_or(cfg.seeds.base);
            vec![(inst.design.kind().to_string(), seed, inst)]
        }
        None => {
            cfg.validate_runs()?;
            let mut v = Vec::new();
            for &n in &cfg.grid.n {
                for rep in cfg.seeds.replicates() {
                    let seed = replicate_seed(cfg.seeds.base, n, rep);
                    v.push((cfg.model.kind.name().to_string(), seed, build_instance(cfg, n, seed)?));
                }
            }
            v
        }
    };
    for (model, seed, inst) in &insts {
        for &r in &cfg.grid.r {
            let ranks = feasible_ranks(inst.dims(), &vec![r; inst.dims().len()]);
            let (lo, hi) = estimate_trip(&inst.design, &ranks, trials, derive_seed(*seed, &[r as u64]))
                .map_err(library_error)?;
            report.rows.push(vec![
                cfg.experiment.id.clone(),
                model.clone(),
                seed.to_string(),
                inst.design.n().to_string(),
                r.to_string(),
                trials.to_string(),
                fmt_f64(lo),
                fmt_f64(hi),
                fmt_f64(trip_constant(lo, hi)),
            ]);
        }
    }
    Ok(report)
}
