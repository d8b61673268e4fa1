//! Experiment configuration: TOML sections with defaults, plus
//! `--section.key=value` overrides.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use tucreg::tucker::RetractionMethod;
use tucreg::{Algorithm, DesignKind};

use crate::CliError;

pub const SECTIONS: [&str; 7] = ["experiment", "model", "grid", "seeds", "solver", "ldp", "output"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Convergence,
    Phase,
    RankSweep,
    Compare,
    Ldp,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Phase => "phase",
            ExperimentKind::RankSweep => "rank-sweep",
            ExperimentKind::Compare => "compare",
            ExperimentKind::Ldp => "ldp",
        }
    }

    fn default_algorithms(self) -> Vec<String> {
        let algs: &[&str] = match self {
            ExperimentKind::Compare => &["RGN", "RGD", "PGD", "FACTORED_GD"],
            ExperimentKind::Phase => &["RGN"],
            _ => &["RGN", "RGD"],
        };
        algs.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    ScalarTensor,
    TensorVector,
    MatrixTrace,
    General,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::ScalarTensor => "scalar-tensor",
            ModelKind::TensorVector => "tensor-vector",
            ModelKind::MatrixTrace => "matrix-trace",
            ModelKind::General => "general",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    pub id: String,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kind: ExperimentKind::Convergence,
            id: "run".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub dims: Vec<usize>,
    /// Number of covariate modes; only read for the general model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub r_star: usize,
    pub sigma: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::ScalarTensor,
            dims: vec![30, 30, 30],
            d: None,
            r_star: 3,
            sigma: 0.0,
        }
    }
}

impl ModelSection {
    /// Design kind and number of covariate modes.
    pub fn design(&self) -> (DesignKind, usize) {
        match self.kind {
            ModelKind::ScalarTensor => (DesignKind::General, self.dims.len()),
            ModelKind::TensorVector => (DesignKind::Vector, 1),
            ModelKind::MatrixTrace => (DesignKind::MatrixTrace, 2),
            ModelKind::General => (DesignKind::General, self.d.unwrap_or(self.dims.len())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: Vec<usize>,
    /// Input ranks, used for every mode.
    pub r: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<String>>,
    /// A run succeeds when its final relative RMSE is below this.
    pub success_threshold: f64,
    /// A cell counts as successful when this fraction of its runs succeed.
    pub success_rate: f64,
    /// Number of random low-rank tensors drawn by `trip-estimate`.
    pub trip_trials: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n: vec![3944],
            r: vec![10],
            algorithms: None,
            success_threshold: 0.01,
            success_rate: 0.5,
            trip_trials: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub count: usize,
    pub base: u64,
    /// Explicit replicate indices; replaces `0..count` when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            count: 10,
            base: 0,
            list: None,
        }
    }
}

impl SeedSection {
    pub fn replicates(&self) -> Vec<u64> {
        match &self.list {
            Some(l) => l.clone(),
            None => (0..self.count as u64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub max_iters: usize,
    pub tol: f64,
    pub retraction: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stepsize: Option<f64>,
    pub baseline_stepsizes: Vec<f64>,
    pub ridge_eps: f64,
    pub vector_closed_form: bool,
    pub divergence_factor: f64,
    pub hooi_inplace: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = tucreg::SolverConfig::new(Algorithm::Rgn, vec![1]);
        Self {
            max_iters: s.max_iters,
            tol: s.tol_rel_rmse,
            retraction: "sthosvd".into(),
            stepsize: None,
            baseline_stepsizes: s.baseline_stepsizes,
            ridge_eps: s.ridge_eps,
            vector_closed_form: s.vector_closed_form,
            divergence_factor: s.divergence_factor,
            hooi_inplace: false,
        }
    }
}

impl SolverSection {
    pub fn retraction_method(&self) -> Result<RetractionMethod, CliError> {
        match self.retraction.to_ascii_lowercase().as_str() {
            "thosvd" => Ok(RetractionMethod::Thosvd),
            "sthosvd" => Ok(RetractionMethod::Sthosvd),
            "matrix-svd" | "svd" => Ok(RetractionMethod::MatrixSvd),
            other => Err(CliError::Config(format!(
                "solver.retraction: unknown method {other:?} (thosvd, sthosvd, matrix-svd)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdpSection {
    pub p_grid: Vec<usize>,
    pub orders: Vec<usize>,
    pub r_star: usize,
    pub degree: usize,
    pub delta: f64,
    pub sigma_sq: f64,
    /// Number of random degree profiles checked by Monte Carlo.
    pub profiles: usize,
    pub samples: usize,
    pub max_degree: usize,
    pub max_width: usize,
    /// Upper bound on the sum of squared correlations of a profile.
    pub u_norm_sq: f64,
}

impl Default for LdpSection {
    fn default() -> Self {
        Self {
            p_grid: vec![30, 60, 90, 120],
            orders: vec![2, 3, 4],
            r_star: 1,
            degree: 5,
            delta: 0.5,
            sigma_sq: 0.0,
            profiles: 50,
            samples: 1_000_000,
            max_degree: 3,
            max_width: 3,
            u_norm_sq: 0.9,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub grid: GridSection,
    pub seeds: SeedSection,
    pub solver: SolverSection,
    pub ldp: LdpSection,
    pub output: OutputSection,
}

fn section<T: DeserializeOwned + Default>(table: &Table, name: &str) -> Result<T, CliError> {
    match table.get(name) {
        None => Ok(T::default()),
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{name}: {}", e.message()))),
    }
}

impl ExperimentConfig {
    pub fn from_table(table: &Table) -> Result<Self, CliError> {
        if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(CliError::Config(format!("{k}: unknown section")));
        }
        Ok(Self {
            experiment: section(table, "experiment")?,
            model: section(table, "model")?,
            grid: section(table, "grid")?,
            seeds: section(table, "seeds")?,
            solver: section(table, "solver")?,
            ldp: section(table, "ldp")?,
            output: section(table, "output")?,
        })
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CliError> {
        let table: Table = s
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Self::from_table(&table)
    }

    /// Reads `path` (if any) and applies the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                text.parse::<Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            apply_override(&mut table, key, value)?;
        }
        Self::from_table(&table)
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>, CliError> {
        self.grid
            .algorithms
            .clone()
            .unwrap_or_else(|| self.experiment.kind.default_algorithms())
            .iter()
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::Config(format!("grid.algorithms: unknown algorithm {s:?}")))
            })
            .collect()
    }

    /// Checks the fields read by solver experiments.
    pub fn validate_runs(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let m = &self.model;
        if m.dims.is_empty() || m.dims.contains(&0) {
            return bad("model.dims must be a nonempty list of positive sizes".into());
        }
        match m.kind {
            ModelKind::MatrixTrace if m.dims.len() != 2 => {
                return bad("model.dims must have two entries for the matrix-trace model".into())
            }
            ModelKind::TensorVector if m.dims.len() < 2 => {
                return bad("model.dims needs a response mode for the tensor-vector model".into())
            }
            ModelKind::General => {
                let d = m.d.unwrap_or(m.dims.len());
                if d == 0 || d > m.dims.len() {
                    return bad(format!("model.d = {d} must lie in 1..={}", m.dims.len()));
                }
            }
            _ => {}
        }
        if m.r_star == 0 {
            return bad("model.r_star must be at least 1".into());
        }
        if !(m.sigma >= 0.0) || !m.sigma.is_finite() {
            return bad("model.sigma must be finite and nonnegative".into());
        }
        if self.grid.n.is_empty() || self.grid.n.contains(&0) {
            return bad("grid.n must be a nonempty list of positive sample sizes".into());
        }
        if self.grid.r.is_empty() || self.grid.r.contains(&0) {
            return bad("grid.r must be a nonempty list of positive ranks".into());
        }
        if self.algorithms()?.is_empty() {
            return bad("grid.algorithms must not be empty".into());
        }
        if !(self.grid.success_threshold > 0.0) {
            return bad("grid.success_threshold must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.grid.success_rate) {
            return bad("grid.success_rate must lie in [0, 1]".into());
        }
        if self.seeds.replicates().is_empty() {
            return bad("seeds: at least one replicate is required (seeds.count or seeds.list)".into());
        }
        let s = &self.solver;
        if s.max_iters == 0 {
            return bad("solver.max_iters must be at least 1".into());
        }
        if !(s.tol >= 0.0) {
            return bad("solver.tol must be nonnegative".into());
        }
        if s.stepsize.is_none() && s.baseline_stepsizes.is_empty() {
            return bad("solver.baseline_stepsizes must not be empty".into());
        }
        if s.baseline_stepsizes.iter().chain(&s.stepsize).any(|&v| !(v > 0.0)) {
            return bad("solver.stepsize values must be positive".into());
        }
        if !(s.ridge_eps > 0.0) {
            return bad("solver.ridge_eps must be positive".into());
        }
        if !(s.divergence_factor > 1.0) {
            return bad("solver.divergence_factor must exceed 1".into());
        }
        let method = s.retraction_method()?;
        if method == RetractionMethod::MatrixSvd && m.dims.len() != 2 {
            return bad("solver.retraction: matrix-svd needs a two-mode parameter".into());
        }
        Ok(())
    }

    pub fn validate_ldp(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        let l = &self.ldp;
        if l.p_grid.is_empty() || l.p_grid.contains(&0) {
            return bad("ldp.p_grid must be a nonempty list of positive sizes");
        }
        if l.orders.is_empty() || l.orders.contains(&0) {
            return bad("ldp.orders must be a nonempty list of positive orders");
        }
        if l.r_star == 0 || l.p_grid.iter().any(|&p| p < l.r_star) {
            return bad("ldp.r_star must be positive and at most every entry of ldp.p_grid");
        }
        if l.degree == 0 {
            return bad("ldp.degree must be at least 1");
        }
        if !(l.delta > 0.0 && l.delta < 1.0) {
            return bad("ldp.delta must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&l.sigma_sq) {
            return bad("ldp.sigma_sq must lie in [0, 1)");
        }
        if l.profiles > 0 && l.samples < 1000 {
            return bad("ldp.samples must be at least 1000");
        }
        if l.max_width == 0 {
            return bad("ldp.max_width must be at least 1");
        }
        if !(l.u_norm_sq > 0.0 && l.u_norm_sq <= 1.0) {
            return bad("ldp.u_norm_sq must lie in (0, 1]");
        }
        Ok(())
    }

    /// Flattened `section.key = value` pairs of every section that can change
    /// results. `output` (path, jobs) is left out.
    pub fn flatten(&self) -> Vec<(String, String)> {
        let value = Value::try_from(self).expect("config serializes");
        let mut out = Vec::new();
        if let Value::Table(t) = value {
            for (name, sec) in t.into_iter().filter(|(name, _)| name != "output") {
                if let Value::Table(fields) = sec {
                    for (k, v) in fields {
                        out.push((format!("{name}.{k}"), v.to_string()));
                    }
                }
            }
        }
        out
    }
}

/// Parses a command-line value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<(), CliError> {
    let (sec, field) = key
        .split_once('.')
        .filter(|(s, f)| !s.is_empty() && !f.is_empty() && !f.contains('.'))
        .ok_or_else(|| CliError::Config(format!("{key}: overrides take the form --section.key=value")))?;
    if !SECTIONS.contains(&sec) {
        return Err(CliError::Config(format!("{sec}: unknown section in override --{key}")));
    }
    let entry = table
        .entry(sec.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    match entry {
        Value::Table(t) => {
            t.insert(field.to_string(), parse_value(raw));
            Ok(())
        }
        _ => Err(CliError::Config(format!("{sec}: expected a table"))),
    }
}

/// Splits `--section.key=value` arguments from the rest of the command line.
pub fn split_overrides(args: impl IntoIterator<Item = String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let parsed = a.strip_prefix("--").and_then(|body| {
            let (k, v) = body.split_once('=')?;
            let (sec, _) = k.split_once('.')?;
            SECTIONS.contains(&sec).then(|| (k.to_string(), v.to_string()))
        });
        match parsed {
            Some(kv) => overrides.push(kv),
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate_runs().unwrap();
        cfg.validate_ldp().unwrap();
        assert_eq!(cfg.algorithms().unwrap(), vec![Algorithm::Rgn, Algorithm::Rgd]);
    }

    #[test]
    fn overrides_are_typed() {
        let (rest, ov) = split_overrides(
            ["tucreg", "phase", "--grid.n=[100, 600]", "--model.kind=matrix-trace", "--out=x.csv"]
                .map(String::from),
        );
        assert_eq!(rest, vec!["tucreg", "phase", "--out=x.csv"]);
        let cfg = ExperimentConfig::load(None, &ov).unwrap();
        assert_eq!(cfg.grid.n, vec![100, 600]);
        assert_eq!(cfg.model.kind, ModelKind::MatrixTrace);
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::load(None, &[("seeds.list".into(), "[]".into())])
            .unwrap()
            .validate_runs()
            .unwrap_err();
        assert!(e.to_string().contains("seeds"));
        let e = ExperimentConfig::from_toml_str("[grid]\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("grid") && e.to_string().contains("bogus"), "{e}");
        let e = ExperimentConfig::from_toml_str("[nope]\n").unwrap_err();
        assert!(e.to_string().contains("nope"));
        let e = ExperimentConfig::from_toml_str("[ldp]\np_grid = []\n").unwrap().validate_ldp().unwrap_err();
        assert!(e.to_string().contains("ldp.p_grid"));
    }

    #[test]
    fn flatten_is_sorted_and_complete() {
        let flat = ExperimentConfig::default().flatten();
        assert!(flat.iter().any(|(k, v)| k == "model.dims" && v == "[30, 30, 30]"));
        assert!(flat.iter().any(|(k, _)| k == "solver.max_iters"));
        let keys: Vec<_> = flat.iter().map(|(k, _)| k.clone()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }
}
