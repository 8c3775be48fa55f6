//! The experiment document: one JSON object with a versioned `schema` field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::energy::OperatorParams;
use crate::error::{Error, Result};
use crate::grid::{DomainSpec, Grid};
use crate::kernels::KernelParams;
use crate::solver::{SolverConfig, SourceSpec};

pub const SCHEMA: &str = "mixlap/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Solve,
    Extremal,
    Verify,
    Sweep,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub p: f64,
    pub s: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

impl OperatorSpec {
    pub fn build(&self, dim: usize) -> Result<OperatorParams> {
        OperatorParams::new(KernelParams::new(self.p, self.s, dim)?, self.alpha, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub delta: f64,
    pub source: SourceSpec,
}

/// Lists of values to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub delta: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl SweepAxes {
    pub fn is_empty(&self) -> bool {
        self.delta.is_empty() && self.p.is_empty() && self.s.is_empty() && self.nodes.is_empty()
    }
}

/// Sampling sizes for the extremal checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtremalSpec {
    pub samples: usize,
    pub c_factor: f64,
    pub starts: usize,
}

impl Default for ExtremalSpec {
    fn default() -> Self {
        ExtremalSpec {
            samples: 1000,
            c_factor: 0.99,
            starts: 8,
        }
    }
}

fn default_out() -> String {
    "out".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    pub grid: DomainSpec,
    pub operator: OperatorSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    pub task: Task,
    #[serde(default, skip_serializing_if = "SweepAxes::is_empty")]
    pub sweep: SweepAxes,
    #[serde(default)]
    pub extremal: ExtremalSpec,
    #[serde(default = "default_out")]
    pub output_dir: String,
    #[serde(default)]
    pub deterministic: bool,
    #[serde(default)]
    pub seed: u64,
    /// Directory that relative source paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn at(path: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

fn check_delta(delta: f64, task: Task, path: &str) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::config(path, format!("δ > 0 is required, got {delta}")));
    }
    if task == Task::Extremal && delta >= 1.0 {
        return Err(Error::config(
            path,
            format!("the extremal problem is posed for 0 < δ < 1 only, got {delta}"),
        ));
    }
    Ok(())
}

impl ExperimentConfig {
    /// Checks every precondition the solvers would otherwise raise later.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::config("schema", format!("expected \"{SCHEMA}\", got \"{}\"", self.schema)));
        }
        let grid = Grid::new(self.grid.clone()).map_err(at("grid"))?;
        let dim = grid.dim();
        self.operator.build(dim).map_err(at("operator"))?;
        check_delta(self.problem.delta, self.task, "problem.delta")?;
        self.problem.source.validate(dim).map_err(at("problem.source"))?;
        self.solver.validate().map_err(at("solver"))?;
        let ex = &self.extremal;
        if ex.samples == 0 {
            return Err(Error::config("extremal.samples", "at least one sample is needed"));
        }
        if ex.starts < 2 {
            return Err(Error::config("extremal.starts", "at least two starts are needed"));
        }
        if !(ex.c_factor > 0.0 && ex.c_factor <= 1.0) {
            return Err(Error::config("extremal.c_factor", format!("must lie in (0, 1], got {}", ex.c_factor)));
        }
        if self.task == Task::Sweep && self.sweep.is_empty() {
            return Err(Error::config("sweep", "a sweep needs at least one non-empty axis"));
        }
        for (k, &d) in self.sweep.delta.iter().enumerate() {
            check_delta(d, self.task, &format!("sweep.delta[{k}]"))?;
        }
        for (k, &p) in self.sweep.p.iter().enumerate() {
            let spec = OperatorSpec { p, ..self.operator };
            spec.build(dim).map_err(at(&format!("sweep.p[{k}]")))?;
        }
        for (k, &s) in self.sweep.s.iter().enumerate() {
            let spec = OperatorSpec { s, ..self.operator };
            spec.build(dim).map_err(at(&format!("sweep.s[{k}]")))?;
        }
        for (k, &n) in self.sweep.nodes.iter().enumerate() {
            let spec = DomainSpec {
                nodes_per_axis: n,
                ..self.grid.clone()
            };
            Grid::new(spec).map_err(at(&format!("sweep.nodes[{k}]")))?;
        }
        if self.output_dir.is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Same config with another task, revalidated.
    pub fn with_task(mut self, task: Task) -> Result<Self> {
        self.task = task;
        self.validate()?;
        Ok(self)
    }

    /// Normalized document; parses back to an equal config.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }
}

/// Parses and validates a config document. Errors carry the field path.
pub fn parse_config(doc: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(doc);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file; relative source paths resolve next to it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": "mixlap/v1",
        "grid": {"shape": {"kind": "interval"}, "bounds": [[0, 1]], "nodes_per_axis": 41, "collar": 1},
        "operator": {"p": 2, "s": 0.5},
        "problem": {"delta": 0.5, "source": {"kind": "constant", "value": 1}},
        "task": "solve"
    }"#;

    fn path_of(e: Error) -> String {
        match e {
            Error::Config { path, .. } => path,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn minimal_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!((c.operator.alpha, c.operator.beta), (1.0, 1.0));
        assert_eq!(c.extremal, ExtremalSpec::default());
        assert_eq!(c.output_dir, "out");
        assert!(!c.deterministic);
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let c = parse_config(MINIMAL).unwrap();
        let again = parse_config(&c.to_document()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.to_document(), again.to_document());
    }

    #[test]
    fn errors_name_the_field() {
        let bad = MINIMAL.replace("\"delta\": 0.5", "\"delta\": -1");
        let e = parse_config(&bad).unwrap_err();
        assert!(e.to_string().contains("δ > 0"));
        assert_eq!(path_of(e), "problem.delta");

        let ext = MINIMAL
            .replace("\"delta\": 0.5", "\"delta\": 1.5")
            .replace("\"solve\"", "\"extremal\"");
        let e = parse_config(&ext).unwrap_err();
        assert!(e.to_string().contains("0 < δ < 1"));

        let typo = MINIMAL.replace("\"s\": 0.5", "\"s\": 0.5, \"q\": 1");
        assert_eq!(path_of(parse_config(&typo).unwrap_err()), "operator.q");

        let wrong_type = MINIMAL.replace("\"p\": 2", "\"p\": \"two\"");
        assert_eq!(path_of(parse_config(&wrong_type).unwrap_err()), "operator.p");

        let s_out = MINIMAL.replace("\"s\": 0.5", "\"s\": 1.0");
        assert_eq!(path_of(parse_config(&s_out).unwrap_err()), "operator");

        let schema = MINIMAL.replace("mixlap/v1", "mixlap/v0");
        assert_eq!(path_of(parse_config(&schema).unwrap_err()), "schema");

        let sweep = MINIMAL.replace("\"solve\"", "\"sweep\"");
        assert_eq!(path_of(parse_config(&sweep).unwrap_err()), "sweep");

        let bad_axis = sweep.replace("\"task\"", "\"sweep\": {\"delta\": [0.5, 0]}, \"task\"");
        assert_eq!(path_of(parse_config(&bad_axis).unwrap_err()), "sweep.delta[1]");

        assert!(parse_config("{").is_err());
        assert!(parse_config("[]").is_err());
    }

    #[test]
    fn task_override_revalidates() {
        let c = parse_config(&MINIMAL.replace("\"delta\": 0.5", "\"delta\": 2")).unwrap();
        assert!(c.clone().with_task(Task::Verify).is_ok());
        assert!(c.with_task(Task::Extremal).is_err());
    }
}
