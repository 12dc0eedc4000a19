//! Experiment configuration: a TOML tree with strict keys, validated into
//! engine types with every problem reported by its dotted path.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ConfigIssue, Error, Result};
use crate::law::Law;
use crate::manipulation::{ManipulationModel, StyleLaw};
use crate::metrics::SplitMode;
use crate::model::{LabelRule, PopulationSpec};
use crate::schemes::{GroupModels, SchemeKind};
use crate::scoring::{LinearScorer, PiecewiseLinear, Scorer};
use crate::threshold::DEFAULT_EPSILON;

/// A law written either compactly (`"uniform(0,2)"`) or as a table
/// (`{ law = "uniform", low = 0, high = 2 }`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawEntry {
    Compact(String),
    Table(Law),
}

impl LawEntry {
    fn resolve(&self, path: &str, issues: &mut Vec<ConfigIssue>) -> Option<Law> {
        let law = match self {
            LawEntry::Compact(s) => match Law::from_str(s) {
                Ok(l) => l,
                Err(e) => {
                    issues.push(issue(path, e.to_string()));
                    return None;
                }
            },
            LawEntry::Table(l) => l.clone(),
        };
        match law.validate(path) {
            Ok(()) => Some(law),
            Err(e) => {
                issues.push(issue(path, strip_path(e)));
                None
            }
        }
    }
}

fn issue(path: &str, message: impl Into<String>) -> ConfigIssue {
    ConfigIssue {
        path: path.to_string(),
        message: message.into(),
    }
}

fn strip_path(e: Error) -> String {
    match e {
        Error::Config { message, .. } => message,
        other => other.to_string(),
    }
}

fn absorb(e: Error, issues: &mut Vec<ConfigIssue>) {
    match e {
        Error::Config { path, message } => issues.push(ConfigIssue { path, message }),
        Error::Validation(v) => issues.extend(v),
        other => issues.push(issue("", other.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub count: usize,
    #[serde(default = "half")]
    pub p_fraction: f64,
    #[serde(default)]
    pub fundamental: Vec<LawEntry>,
    #[serde(default)]
    pub style: Vec<LawEntry>,
    pub label: LabelRule,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub clip: Option<[f64; 2]>,
    /// Optional monotone link per dimension, as `[[input, output], ...]` knots.
    #[serde(default)]
    pub links: Option<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Null,
    /// Independent style marginals.
    Parametric {
        style: Vec<LawEntry>,
    },
    /// Style marginals driven by one shared uniform.
    Comonotone {
        style: Vec<LawEntry>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub p: ModelConfig,
    pub u: ModelConfig,
    #[serde(default = "null_model")]
    pub hirer: ModelConfig,
}

fn null_model() -> ModelConfig {
    ModelConfig::Null
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NTicketConfig {
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    /// Candidates streamed when tracing the disparity curve.
    #[serde(default = "default_curve_candidates")]
    pub candidates: usize,
}

fn default_n_max() -> usize {
    10
}

fn default_curve_candidates() -> usize {
    4_000_000
}

impl Default for NTicketConfig {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            candidates: default_curve_candidates(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::config("output.format", format!("unknown format `{other}`"))),
        }
    }
}

impl OutputFormat {
    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    #[serde(default = "default_probes")]
    pub count: usize,
}

fn default_probes() -> usize {
    50
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            count: default_probes(),
        }
    }
}

/// `"learned"` picks the zero-false-positive threshold on each training
/// split; a number fixes the threshold for every scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdPolicy {
    Fixed(f64),
    Named(String),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Named("learned".into())
    }
}

impl ThresholdPolicy {
    pub fn fixed(&self) -> Option<f64> {
        match self {
            ThresholdPolicy::Fixed(t) => Some(*t),
            ThresholdPolicy::Named(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_name")]
    pub name: String,
    pub schemes: Vec<String>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_splits")]
    pub splits: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Monte Carlo budget for score laws and per-probe disparities.
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub target_fpr: f64,
    #[serde(default)]
    pub split_mode: SplitMode,
    #[serde(default)]
    pub threshold: ThresholdPolicy,
    pub population: PopulationConfig,
    pub scorer: ScorerConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub nticket: NTicketConfig,
    #[serde(default)]
    pub probes: ProbeConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_splits() -> usize {
    500
}

fn default_confidence() -> f64 {
    0.95
}

fn default_replications() -> usize {
    10_000
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

/// A configuration after validation, holding engine types.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub population: PopulationSpec,
    pub scorer: Scorer,
    pub models: GroupModels,
    pub hirer: ManipulationModel,
    pub schemes: Vec<SchemeKind>,
}

impl Experiment {
    pub fn max_tickets(&self) -> usize {
        self.schemes.iter().map(|s| s.hirer_tickets()).max().unwrap_or(0)
    }
}

/// Expands `"n-ticket:a..b"` ranges; other entries parse as single schemes.
pub fn parse_scheme_list(entries: &[String]) -> std::result::Result<Vec<SchemeKind>, Vec<ConfigIssue>> {
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for (i, raw) in entries.iter().enumerate() {
        let path = format!("schemes[{i}]");
        let s = raw.trim();
        if let Some((lo, hi)) = s.strip_prefix("n-ticket:").and_then(|r| r.split_once("..")) {
            match (
                lo.trim().parse::<u32>(),
                hi.trim().trim_start_matches('=').parse::<u32>(),
            ) {
                (Ok(lo), Ok(hi)) if lo >= 1 && lo <= hi => out.extend((lo..=hi).map(SchemeKind::NTicket)),
                _ => issues.push(issue(
                    &path,
                    format!("`{raw}` is not a range n-ticket:a..b with 1 <= a <= b"),
                )),
            }
            continue;
        }
        match SchemeKind::from_str(s) {
            Ok(k) => out.push(k),
            Err(e) => issues.push(issue(&path, strip_path(e))),
        }
    }
    if entries.is_empty() {
        issues.push(issue("schemes", "list at least one scheme"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for k in &out {
        // two-ticket and n-ticket:1 are the same game
        if !seen.insert(k.hirer_tickets()) {
            issues.push(issue("schemes", format!("scheme `{k}` listed twice")));
        }
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(issues)
    }
}

fn resolve_laws(entries: &[LawEntry], path: &str, issues: &mut Vec<ConfigIssue>) -> Option<Vec<Law>> {
    let laws: Vec<Option<Law>> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| e.resolve(&format!("{path}[{i}]"), issues))
        .collect();
    laws.into_iter().collect()
}

fn build_model(cfg: &ModelConfig, d2: usize, path: &str, issues: &mut Vec<ConfigIssue>) -> Option<ManipulationModel> {
    let (entries, comonotone) = match cfg {
        ModelConfig::Null => return Some(ManipulationModel::Null),
        ModelConfig::Parametric { style } => (style, false),
        ModelConfig::Comonotone { style } => (style, true),
    };
    let laws = resolve_laws(entries, &format!("{path}.style"), issues)?;
    if laws.len() != d2 {
        issues.push(issue(
            &format!("{path}.style"),
            format!(
                "model has {} style laws, population has {d2} style dimensions",
                laws.len()
            ),
        ));
        return None;
    }
    if laws.is_empty() {
        issues.push(issue(
            &format!("{path}.style"),
            "a parametric model needs at least one style dimension",
        ));
        return None;
    }
    Some(ManipulationModel::Parametric(if comonotone {
        StyleLaw::Comonotone(laws)
    } else {
        StyleLaw::Independent(laws)
    }))
}

fn build_scorer(cfg: &ScorerConfig, dims: usize, issues: &mut Vec<ConfigIssue>) -> Option<Scorer> {
    let linear = match LinearScorer::new(cfg.weights.clone(), cfg.offset, cfg.clip.map(|[a, b]| (a, b))) {
        Ok(l) => l,
        Err(e) => {
            absorb(e, issues);
            return None;
        }
    };
    let scorer = match &cfg.links {
        None => Scorer::Linear(linear),
        Some(links) => {
            let mut built = Vec::new();
            for (i, knots) in links.iter().enumerate() {
                match PiecewiseLinear::new(knots.iter().map(|[a, b]| (*a, *b)).collect()) {
                    Ok(p) => built.push(p),
                    Err(e) => issues.push(issue(&format!("scorer.links[{i}]"), strip_path(e))),
                }
            }
            if built.len() != links.len() {
                return None;
            }
            Scorer::Table { links: built, linear }
        }
    };
    if let Err(e) = scorer.validate_for(dims) {
        absorb(e, issues);
        return None;
    }
    Some(scorer)
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Checks every field and builds the engine types. All problems are
    /// returned together.
    pub fn validate(&self) -> Result<Experiment> {
        let mut issues = Vec::new();
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            issues.push(issue("train_fraction", "must lie strictly inside (0, 1)"));
        }
        if self.splits < 2 {
            issues.push(issue("splits", "need at least two splits"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            issues.push(issue("confidence", "must lie strictly inside (0, 1)"));
        }
        if self.replications == 0 {
            issues.push(issue("replications", "must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            issues.push(issue("epsilon", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.target_fpr) {
            issues.push(issue("target_fpr", "must lie in [0, 1)"));
        }
        match &self.threshold {
            ThresholdPolicy::Fixed(t) if !t.is_finite() => {
                issues.push(issue("threshold", "a fixed threshold must be finite"))
            }
            ThresholdPolicy::Named(s) if s != "learned" => issues.push(issue(
                "threshold",
                format!("expected \"learned\" or a number, got `{s}`"),
            )),
            _ => {}
        }
        if self.population.count < 2 {
            issues.push(issue("population.count", "need at least two candidates to split"));
        }
        if self.nticket.n_max < 1 {
            issues.push(issue("nticket.n_max", "must be at least 1"));
        }
        if self.nticket.candidates == 0 {
            issues.push(issue("nticket.candidates", "must be at least 1"));
        }
        if self.probes.count == 0 {
            issues.push(issue("probes.count", "must be at least 1"));
        }

        let schemes = match parse_scheme_list(&self.schemes) {
            Ok(s) => s,
            Err(v) => {
                issues.extend(v);
                Vec::new()
            }
        };

        let fundamental = resolve_laws(&self.population.fundamental, "population.fundamental", &mut issues);
        let style = resolve_laws(&self.population.style, "population.style", &mut issues);
        let d1 = self.population.fundamental.len();
        let d2 = self.population.style.len();
        let population = match (fundamental, style) {
            (Some(f), Some(s)) => {
                match PopulationSpec::new(f, s, self.population.label.clone(), self.population.p_fraction) {
                    Ok(p) => Some(p),
                    Err(e) => {
                        absorb(e, &mut issues);
                        None
                    }
                }
            }
            _ => None,
        };
        let scorer = build_scorer(&self.scorer, d1 + d2, &mut issues);
        let p = build_model(&self.models.p, d2, "models.p", &mut issues);
        let u = build_model(&self.models.u, d2, "models.u", &mut issues);
        let hirer = build_model(&self.models.hirer, d2, "models.hirer", &mut issues);
        if schemes.iter().any(|k| k.hirer_tickets() > 0) && matches!(self.models.hirer, ModelConfig::Null) {
            issues.push(issue(
                "models.hirer",
                "schemes with hirer tickets need a non-null hirer model",
            ));
        }

        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        Ok(Experiment {
            config: self.clone(),
            population: population.expect("validated"),
            scorer: scorer.expect("validated"),
            models: GroupModels {
                p: p.expect("validated"),
                u: u.expect("validated"),
            },
            hirer: hirer.expect("validated"),
            schemes,
        })
    }
}
