//! Experiment configuration: TOML with `[model]`, `[grid]`, `[flow]`, `[preservation]` and `[run]` tables.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    FlatCone,
    Warped,
    DoublyWarped,
    Product,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Warp,
    FiberShape,
    OffBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Identities,
    Flow,
    Evolution,
    Preservation,
    BackwardConsistency,
    Convergence,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Identities => "identities",
            Suite::Flow => "flow",
            Suite::Evolution => "evolution",
            Suite::Preservation => "preservation",
            Suite::BackwardConsistency => "backward-consistency",
            Suite::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CaseKind {
    Einstein,
    NonEinstein,
    MultiplyWarped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Fiber dimension; the first fiber for `doubly-warped`.
    pub m: usize,
    /// Second fiber dimension for `doubly-warped`.
    pub m2: usize,
    pub perturbation: Option<PerturbationKind>,
    pub epsilon: f64,
    /// `"product"` or `"factor:K"`.
    pub split: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::Warped, m: 2, m2: 1, perturbation: None, epsilon: 0.05, split: "factor:0".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub ladder: Vec<usize>,
    /// Points per fiber axis; unset keeps the suite default.
    pub fiber_points: Option<usize>,
    pub order: u32,
    pub commutators: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { ladder: vec![24, 48, 96], fiber_points: None, order: 4, commutators: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowParams {
    pub t_final: f64,
    /// Step at the coarsest level; halved with each ladder level.
    pub dt: f64,
    pub stride: usize,
    /// Export the flow relabeled backward with an evolved splitting.
    pub backward: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams { t_final: 0.05, dt: 0.0025, stride: 1, backward: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreservationConfig {
    pub case: CaseKind,
    pub points: usize,
}

impl Default for PreservationConfig {
    fn default() -> Self {
        PreservationConfig { case: CaseKind::Einstein, points: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub suites: Vec<Suite>,
    pub output: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { suites: vec![], output: PathBuf::from("splitflow-out"), seed: 7 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub flow: FlowParams,
    pub preservation: PreservationConfig,
    pub run: RunConfig,
}

/// A configuration problem, with the 1-based line it refers to when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.source, self.message),
            None => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the first `key = ...` assignment, if any.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('='))).map(|i| i + 1)
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError {
            source: source.into(),
            line: e.span().map(|s| line_of_offset(text, s.start)),
            message: e.message().trim().replace('\n', "; "),
        })?;
        cfg.validate().map_err(|(key, message)| ConfigError {
            source: source.into(),
            line: key.and_then(|k| line_of_key(text, k)),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError { source: source.clone(), line: None, message: e.to_string() })?;
        Self::parse(&text, &source)
    }

    /// Checks the invariants; the error names the offending key.
    pub fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        let ladder = &self.grid.ladder;
        if ladder.is_empty() {
            return Err((Some("ladder"), "ladder must not be empty".into()));
        }
        if ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err((Some("ladder"), format!("ladder must be strictly increasing, got {ladder:?}")));
        }
        if ladder[0] < 8 {
            return Err((Some("ladder"), "grids need at least 8 points per axis".into()));
        }
        if self.grid.order != 2 && self.grid.order != 4 {
            return Err((Some("order"), format!("order must be 2 or 4, got {}", self.grid.order)));
        }
        if self.model.m == 0 || self.model.m2 == 0 {
            return Err((Some("m"), "fiber dimensions must be positive".into()));
        }
        self.split().map_err(|e| (Some("split"), e))?;
        if !(self.flow.t_final > 0.0) || !(self.flow.dt > 0.0) || self.flow.dt > self.flow.t_final {
            return Err((Some("dt"), "need 0 < dt <= t_final".into()));
        }
        if self.flow.stride == 0 {
            return Err((Some("stride"), "stride must be positive".into()));
        }
        if self.preservation.points < 8 {
            return Err((Some("points"), "preservation needs at least 8 points".into()));
        }
        let needs_two = [Suite::Identities, Suite::Evolution];
        if ladder.len() < 2 && self.run.suites.iter().any(|s| needs_two.contains(s)) {
            return Err((Some("ladder"), "identities and evolution need at least two ladder levels".into()));
        }
        Ok(())
    }

    pub fn split(&self) -> Result<splitflow::verifier::SplitChoice, String> {
        use splitflow::verifier::SplitChoice;
        match self.model.split.as_str() {
            "product" => Ok(SplitChoice::Product),
            s => s
                .strip_prefix("factor:")
                .and_then(|k| k.parse().ok())
                .map(SplitChoice::Factor)
                .ok_or_else(|| format!("split must be \"product\" or \"factor:K\", got {s:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::parse(&text, "x").unwrap(), cfg);
    }

    #[test]
    fn syntax_error_has_line() {
        let err = ExperimentConfig::parse("[model]\nkind = \"warped\"\nm = \n", "c.toml").unwrap_err();
        assert_eq!(err.line, Some(3));
    }

    #[test]
    fn unknown_key_has_line() {
        let err = ExperimentConfig::parse("[grid]\norder = 4\nstencil = 2\n", "c.toml").unwrap_err();
        assert_eq!(err.line, Some(3));
        assert!(err.message.contains("stencil"), "{err}");
    }

    #[test]
    fn unknown_suite_rejected() {
        let err = ExperimentConfig::parse("[run]\nsuites = [\"identities\", \"bogus\"]\n", "c.toml").unwrap_err();
        assert_eq!(err.line, Some(2));
    }

    #[test]
    fn ladder_must_increase() {
        let err = ExperimentConfig::parse("[model]\nm = 2\n[grid]\nladder = [48, 24]\n", "c.toml").unwrap_err();
        assert_eq!(err.line, Some(4));
        assert!(err.to_string().starts_with("c.toml:4:"), "{err}");
    }

    #[test]
    fn split_parses() {
        let mut cfg = ExperimentConfig::default();
        cfg.model.split = "factor:1".into();
        assert!(cfg.split().is_ok());
        cfg.model.split = "diagonal".into();
        assert!(cfg.split().is_err());
    }
}
