//! Candidates, feature vectors and the population distribution.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::law::Law;
use crate::rng::{open_unit, SeedStream, StreamRng};

/// A resume: `fundamental` features survive every manipulation, `style`
/// features are the block a manipulation overwrites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub fundamental: Vec<f64>,
    pub style: Vec<f64>,
}

impl FeatureVector {
    pub fn new(fundamental: Vec<f64>, style: Vec<f64>) -> Result<Self> {
        if fundamental.is_empty() && style.is_empty() {
            return Err(Error::config("features", "need at least one feature"));
        }
        if fundamental.iter().chain(&style).any(|v| !v.is_finite()) {
            return Err(Error::config("features", "feature values must be finite"));
        }
        Ok(Self { fundamental, style })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.fundamental.len(), self.style.len())
    }

    /// Fundamental block followed by the style block.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.fundamental.iter().chain(&self.style).copied()
    }

    pub fn len(&self) -> usize {
        self.fundamental.len() + self.style.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    P,
    U,
}

impl Group {
    pub const BOTH: [Group; 2] = [Group::P, Group::U];
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::P => "P",
            Group::U => "U",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Unqualified,
    Qualified,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Qualified
    }

    pub fn as_u8(self) -> u8 {
        self.is_positive() as u8
    }

    pub fn from_bool(qualified: bool) -> Self {
        if qualified {
            Label::Qualified
        } else {
            Label::Unqualified
        }
    }
}

/// The triplet (features, group, label) plus a stable id used to address
/// the candidate's random streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub features: FeatureVector,
    pub group: Group,
    pub label: Label,
}

/// Hook for correlated feature or style draws. Implementations must be pure
/// functions of the stream they are handed.
pub trait JointSampler: fmt::Debug + Send + Sync {
    fn dims(&self) -> usize;
    fn sample(&self, rng: &mut StreamRng) -> Vec<f64>;
}

/// Probability that a candidate is qualified, as a function of features only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LabelRule {
    /// `1[w . x + offset >= cutoff]`.
    Step {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
        cutoff: f64,
    },
    /// `sigmoid(slope * (w . x + offset))`.
    Logistic {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
        slope: f64,
    },
    Constant {
        probability: f64,
    },
}

impl LabelRule {
    pub fn probability(&self, x: &FeatureVector) -> f64 {
        let dot = |w: &[f64], b: f64| w.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>() + b;
        match self {
            LabelRule::Step {
                weights,
                offset,
                cutoff,
            } => {
                if dot(weights, *offset) >= *cutoff {
                    1.0
                } else {
                    0.0
                }
            }
            LabelRule::Logistic { weights, offset, slope } => 1.0 / (1.0 + (-slope * dot(weights, *offset)).exp()),
            LabelRule::Constant { probability } => *probability,
        }
    }

    fn validate(&self, dims: usize, path: &str) -> Result<()> {
        match self {
            LabelRule::Step {
                weights,
                offset,
                cutoff,
            } => {
                check_weights(weights, dims, path)?;
                if !offset.is_finite() || !cutoff.is_finite() {
                    return Err(Error::config(path, "offset and cutoff must be finite"));
                }
            }
            LabelRule::Logistic { weights, offset, slope } => {
                check_weights(weights, dims, path)?;
                if !offset.is_finite() || !slope.is_finite() {
                    return Err(Error::config(path, "offset and slope must be finite"));
                }
            }
            LabelRule::Constant { probability } => {
                if !(0.0..=1.0).contains(probability) {
                    return Err(Error::config(path, "probability must lie in [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

fn check_weights(weights: &[f64], dims: usize, path: &str) -> Result<()> {
    if weights.len() != dims {
        return Err(Error::config(
            format!("{path}.weights"),
            format!("expected {dims} weights, got {}", weights.len()),
        ));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::config(format!("{path}.weights"), "weights must be finite"));
    }
    Ok(())
}

/// The population distribution: features are drawn independently of group,
/// and the label rule never sees the group.
#[derive(Clone, Debug)]
pub struct PopulationSpec {
    pub fundamental: Vec<Law>,
    pub style: Vec<Law>,
    /// Replaces the per-dimension laws when present; must yield d1 + d2 values.
    pub joint: Option<Arc<dyn JointSampler>>,
    pub label_rule: LabelRule,
    /// P(G = P); P(G = U) is the complement.
    pub p_fraction: f64,
}

impl PopulationSpec {
    pub fn new(fundamental: Vec<Law>, style: Vec<Law>, label_rule: LabelRule, p_fraction: f64) -> Result<Self> {
        let spec = Self {
            fundamental,
            style,
            joint: None,
            label_rule,
            p_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_joint(mut self, joint: Arc<dyn JointSampler>) -> Result<Self> {
        self.joint = Some(joint);
        self.validate()?;
        Ok(self)
    }

    pub fn d1(&self) -> usize {
        self.fundamental.len()
    }

    pub fn d2(&self) -> usize {
        self.style.len()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.d1() + self.d2();
        if dims == 0 {
            return Err(Error::config("population", "need at least one feature dimension"));
        }
        if !(self.p_fraction > 0.0 && self.p_fraction < 1.0) {
            return Err(Error::config(
                "population.p_fraction",
                "both groups need positive probability: P(G=P) must lie strictly inside (0, 1)",
            ));
        }
        for (i, law) in self.fundamental.iter().enumerate() {
            law.validate(&format!("population.fundamental[{i}]"))?;
        }
        for (i, law) in self.style.iter().enumerate() {
            law.validate(&format!("population.style[{i}]"))?;
        }
        if let Some(joint) = &self.joint {
            if joint.dims() != dims {
                return Err(Error::config(
                    "population.joint",
                    format!("joint sampler yields {} values, population has {dims}", joint.dims()),
                ));
            }
        }
        self.label_rule.validate(dims, "population.label")
    }

    /// Draws a single candidate from its own stream.
    ///
    /// Draw order is fixed: group, then features, then label.
    pub fn sample_candidate(&self, id: u64, stream: &SeedStream) -> Candidate {
        let mut rng = stream.child(id).rng();
        let group = if open_unit(&mut rng) < self.p_fraction {
            Group::P
        } else {
            Group::U
        };
        let features = match &self.joint {
            Some(joint) => {
                let mut all = joint.sample(&mut rng);
                let style = all.split_off(self.d1());
                FeatureVector {
                    fundamental: all,
                    style,
                }
            }
            None => FeatureVector {
                fundamental: self.fundamental.iter().map(|l| l.sample(&mut rng)).collect(),
                style: self.style.iter().map(|l| l.sample(&mut rng)).collect(),
            },
        };
        let label = Label::from_bool(open_unit(&mut rng) < self.label_rule.probability(&features));
        Candidate {
            id,
            features,
            group,
            label,
        }
    }
}

/// Samples `count` candidates with ids `0..count`. The result does not depend
/// on the number of worker threads.
pub fn sample_population(spec: &PopulationSpec, count: usize, stream: &SeedStream) -> Result<Vec<Candidate>> {
    if count == 0 {
        return Err(Error::config("population.count", "count must be at least 1"));
    }
    spec.validate()?;
    Ok((0..count as u64)
        .into_par_iter()
        .map(|id| spec.sample_candidate(id, stream))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareTest {
    pub name: String,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndependenceReport {
    /// X independent of G, one test per non-constant feature dimension.
    pub feature_group: Vec<ChiSquareTest>,
    /// Y independent of G given the binned feature, one stratified test per dimension.
    pub label_group: Vec<ChiSquareTest>,
    pub alpha: f64,
    pub passed: bool,
}

/// Chi-square diagnostics for the population's independence assumptions.
///
/// Each feature dimension is cut into `bins` quantile bins of the pooled
/// sample. `X ⊥ G` is tested per dimension on the bins × groups table; `Y ⊥ G | X`
/// is tested with 2x2 group × label tables inside each bin, summed over bins.
/// The run passes when every p-value clears `alpha` divided by the number of
/// tests (Bonferroni).
pub fn chi_square_independence_check(candidates: &[Candidate], bins: usize, alpha: f64) -> Result<IndependenceReport> {
    if candidates.is_empty() {
        return Err(Error::Diagnostic("no candidates to test".into()));
    }
    if bins < 2 {
        return Err(Error::Diagnostic("need at least two bins".into()));
    }
    if !Group::BOTH.iter().all(|g| candidates.iter().any(|c| c.group == *g)) {
        return Err(Error::Diagnostic("independence tests need both groups present".into()));
    }
    let dims = candidates[0].features.len();
    let mut feature_group = Vec::new();
    let mut label_group = Vec::new();

    for d in 0..dims {
        let values: Vec<f64> = candidates
            .iter()
            .map(|c| c.features.iter().nth(d).expect("uniform dimensions"))
            .collect();
        let Some(edges) = quantile_edges(&values, bins) else {
            continue;
        };
        let nb = edges.len() + 1;
        let bin_of = |v: f64| edges.partition_point(|e| *e < v);

        let mut table = vec![[0.0f64; 2]; nb];
        let mut strata = vec![[[0.0f64; 2]; 2]; nb];
        for (c, &v) in candidates.iter().zip(&values) {
            let b = bin_of(v);
            let g = (c.group == Group::U) as usize;
            table[b][g] += 1.0;
            strata[b][g][c.label.as_u8() as usize] += 1.0;
        }
        let (stat, dof) = pearson(&table);
        if dof > 0 {
            feature_group.push(test(format!("feature[{d}] vs group"), stat, dof));
        }

        let mut stat = 0.0;
        let mut dof = 0;
        for s in &strata {
            let rows: Vec<[f64; 2]> = s.to_vec();
            let (st, df) = pearson(&rows);
            stat += st;
            dof += df;
        }
        if dof > 0 {
            label_group.push(test(format!("label vs group | feature[{d}]"), stat, dof));
        }
    }

    let n_tests = (feature_group.len() + label_group.len()).max(1) as f64;
    let passed = feature_group
        .iter()
        .chain(&label_group)
        .all(|t| t.p_value >= alpha / n_tests);
    Ok(IndependenceReport {
        feature_group,
        label_group,
        alpha,
        passed,
    })
}

fn test(name: String, statistic: f64, dof: usize) -> ChiSquareTest {
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    ChiSquareTest {
        name,
        statistic,
        dof,
        p_value,
    }
}

/// Interior bin edges at pooled quantiles; `None` for a constant column.
fn quantile_edges(values: &[f64], bins: usize) -> Option<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| sorted[(k * sorted.len() / bins).min(sorted.len() - 1)])
        .collect();
    edges.dedup();
    // Bins of the form (e_{i-1}, e_i]; drop an edge equal to the max so no bin is empty by construction.
    let max = *sorted.last()?;
    edges.retain(|e| *e < max);
    if edges.is_empty() {
        None
    } else {
        Some(edges)
    }
}

/// Pearson statistic for an r x 2 table, ignoring empty rows and columns.
fn pearson(table: &[[f64; 2]]) -> (f64, usize) {
    let rows: Vec<&[f64; 2]> = table.iter().filter(|r| r[0] + r[1] > 0.0).collect();
    let col = [
        rows.iter().map(|r| r[0]).sum::<f64>(),
        rows.iter().map(|r| r[1]).sum::<f64>(),
    ];
    let total = col[0] + col[1];
    if rows.len() < 2 || col[0] == 0.0 || col[1] == 0.0 {
        return (0.0, 0);
    }
    let mut stat = 0.0;
    for r in &rows {
        let row_total = r[0] + r[1];
        for j in 0..2 {
            let expected = row_total * col[j] / total;
            stat += (r[j] - expected).powi(2) / expected;
        }
    }
    (stat, rows.len() - 1)
}
