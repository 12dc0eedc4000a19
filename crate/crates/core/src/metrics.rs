//! Performance and disparity metrics, split-based confidence intervals and
//! geometric decay fitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::std_normal_quantile;
use crate::manipulation::ManipulationModel;
use crate::model::{Candidate, FeatureVector, Group, Label};
use crate::rng::SeedStream;
use crate::schemes::{analytic_acceptance, realize, GroupModels, PlayRecord};
use crate::scoring::{LawMethod, McBudget, Scorer};

/// Rates of one scheme on one evaluation set. Fields are `None` when their
/// denominator is empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub positives_p: usize,
    pub positives_u: usize,
    pub negatives: usize,
    pub tpr_p: Option<f64>,
    pub tpr_u: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub accuracy: Option<f64>,
    pub tpr_disparity: Option<f64>,
}

impl MetricsReport {
    /// Named scalar view used for interval aggregation.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        let fields = [
            ("tpr_p", self.tpr_p),
            ("tpr_u", self.tpr_u),
            ("tpr", self.tpr),
            ("fpr", self.fpr),
            ("accuracy", self.accuracy),
            ("tpr_disparity", self.tpr_disparity),
        ];
        for (k, v) in fields {
            if let Some(v) = v {
                out.insert(k.to_string(), v);
            }
        }
        out
    }
}

fn ratio(a: usize, b: usize) -> Option<f64> {
    (b > 0).then(|| a as f64 / b as f64)
}

/// Counts decisions exactly. Pooled TPR weighs groups by their share of
/// positives, so `tpr = w_P tpr_p + w_U tpr_u` holds on the sample.
pub fn evaluate(records: &[PlayRecord]) -> MetricsReport {
    let (mut tp_p, mut tp_u, mut pos_p, mut pos_u, mut fp, mut neg, mut correct) = (0, 0, 0, 0, 0, 0, 0);
    for r in records {
        match (r.label, r.group) {
            (Label::Qualified, Group::P) => {
                pos_p += 1;
                tp_p += r.decision as usize;
            }
            (Label::Qualified, Group::U) => {
                pos_u += 1;
                tp_u += r.decision as usize;
            }
            (Label::Unqualified, _) => {
                neg += 1;
                fp += r.decision as usize;
            }
        }
        correct += (r.decision == r.label.is_positive()) as usize;
    }
    let tpr_p = ratio(tp_p, pos_p);
    let tpr_u = ratio(tp_u, pos_u);
    MetricsReport {
        count: records.len(),
        positives_p: pos_p,
        positives_u: pos_u,
        negatives: neg,
        tpr_p,
        tpr_u,
        tpr: ratio(tp_p + tp_u, pos_p + pos_u),
        fpr: ratio(fp, neg),
        accuracy: ratio(correct, records.len()),
        tpr_disparity: tpr_p.zip(tpr_u).map(|(p, u)| p - u),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum DisparityMode {
    /// Product formula; score laws fall back to Monte Carlo with this budget.
    Analytic(McBudget),
    /// Paired replays of the game for a P and a U candidate on common streams.
    MonteCarlo { replications: usize, stream: SeedStream },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DisparityEstimate {
    pub delta: f64,
    pub stderr: f64,
    pub method: LawMethod,
}

/// `P(accept | x, P) - P(accept | x, U)` at a shared threshold.
pub fn resume_outcome_disparity(
    x: &FeatureVector,
    models: &GroupModels,
    hirer: &ManipulationModel,
    tickets: usize,
    scorer: &Scorer,
    tau: f64,
    mode: DisparityMode,
) -> Result<DisparityEstimate> {
    match mode {
        DisparityMode::Analytic(budget) => {
            let p = analytic_acceptance(x, &models.p, hirer, tickets, scorer, tau, &budget)?;
            let u = analytic_acceptance(x, &models.u, hirer, tickets, scorer, tau, &budget)?;
            let stderr = p.stderr.hypot(u.stderr);
            let method = if p.method.is_exact() && u.method.is_exact() {
                LawMethod::Exact
            } else {
                LawMethod::MonteCarlo {
                    samples: budget.samples,
                    stderr,
                }
            };
            Ok(DisparityEstimate {
                delta: p.probability - u.probability,
                stderr,
                method,
            })
        }
        DisparityMode::MonteCarlo { replications, stream } => {
            if replications < 2 {
                return Err(Error::config("replications", "need at least two replications"));
            }
            let make = |group| Candidate {
                id: 0,
                features: x.clone(),
                group,
                label: Label::Qualified,
            };
            let (cp, cu) = (make(Group::P), make(Group::U));
            let diffs = (0..replications as u64)
                .into_par_iter()
                .map(|r| {
                    let s = stream.child(r);
                    let a = realize(&cp, models, hirer, tickets, scorer, &s)?
                        .decide(tickets, tau)
                        .decision;
                    let b = realize(&cu, models, hirer, tickets, scorer, &s)?
                        .decide(tickets, tau)
                        .decision;
                    Ok(a as i32 - b as i32)
                })
                .collect::<Result<Vec<i32>>>()?;
            let n = replications as f64;
            let mean = diffs.iter().map(|d| f64::from(*d)).sum::<f64>() / n;
            let var = diffs.iter().map(|d| (f64::from(*d) - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let stderr = (var / n).sqrt();
            Ok(DisparityEstimate {
                delta: mean,
                stderr,
                method: LawMethod::MonteCarlo {
                    samples: replications,
                    stderr,
                },
            })
        }
    }
}

/// How evaluation rows are resampled for each interval replicate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Shuffle, then cut at the train fraction.
    #[default]
    RandomSplit,
    /// Train on a with-replacement resample of every row, test on the rows it missed.
    Bootstrap,
}

/// Row indices of one train/test replicate. Deterministic given the stream.
pub fn split_indices(n: usize, train_fraction: f64, mode: SplitMode, stream: &SeedStream) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream.rng();
    match mode {
        SplitMode::RandomSplit => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let cut = ((n as f64) * train_fraction).round() as usize;
            let test = idx.split_off(cut.min(n));
            (idx, test)
        }
        SplitMode::Bootstrap => {
            let mut seen = vec![false; n];
            let train: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    seen[i] = true;
                    i
                })
                .collect();
            let test = (0..n).filter(|&i| !seen[i]).collect();
            (train, test)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    /// `z * sd / sqrt(n)`; `None` with fewer than two values.
    pub half_width: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl Interval {
    pub fn from_values(values: &[f64], z: f64) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.len() > 1).then(|| {
            let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            (ss / (n - 1.0)).sqrt()
        });
        Some(Interval {
            mean,
            half_width: sd.map(|s| z * s / n.sqrt()),
            sd,
            n: values.len(),
        })
    }

    pub fn lower(&self) -> Option<f64> {
        self.half_width.map(|h| self.mean - h)
    }

    pub fn upper(&self) -> Option<f64> {
        self.half_width.map(|h| self.mean + h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CiReport {
    pub confidence: f64,
    pub splits: usize,
    /// Replicates the experiment rejected as degenerate.
    pub skipped: usize,
    pub metrics: BTreeMap<String, Interval>,
}

/// Two-sided normal critical value for `confidence`.
pub fn z_value(confidence: f64) -> f64 {
    std_normal_quantile(0.5 + confidence / 2.0)
}

/// Runs `experiment` once per split on `stream.child(split)` and reports
/// `mean ± z sd / sqrt(splits)` for every metric it returns. `Ok(None)` from
/// the experiment marks a degenerate split, which is skipped and counted.
pub fn bootstrap_ci<F>(splits: usize, confidence: f64, stream: &SeedStream, experiment: F) -> Result<CiReport>
where
    F: Fn(usize, &SeedStream) -> Result<Option<BTreeMap<String, f64>>> + Sync,
{
    if splits < 2 {
        return Err(Error::config("splits", "need at least two splits"));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::config("confidence", "confidence must lie in (0, 1)"));
    }
    let runs = (0..splits)
        .into_par_iter()
        .map(|i| experiment(i, &stream.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&runs, confidence))
}

/// Interval summary of per-split metric maps, in split order.
pub fn aggregate(runs: &[Option<BTreeMap<String, f64>>], confidence: f64) -> CiReport {
    let z = z_value(confidence);
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut skipped = 0;
    for run in runs {
        match run {
            Some(m) => {
                for (k, v) in m {
                    columns.entry(k.clone()).or_default().push(*v);
                }
            }
            None => skipped += 1,
        }
    }
    CiReport {
        confidence,
        splits: runs.len(),
        skipped,
        metrics: columns
            .into_iter()
            .filter_map(|(k, v)| Interval::from_values(&v, z).map(|i| (k, i)))
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum DecayFit {
    Fitted {
        /// `exp(slope)` of the least-squares line through `(n, ln |delta|)`.
        rate: f64,
        slope: f64,
        intercept: f64,
        r2: f64,
        points: usize,
    },
    AlreadyConverged,
}

/// Fits `|delta_n| ≈ c k^n` by least squares on the log scale, using the
/// strictly positive entries.
pub fn fit_geometric_decay(sequence: &[(usize, f64)]) -> Result<DecayFit> {
    if sequence.iter().any(|(_, v)| !v.is_finite()) {
        return Err(Error::Diagnostic("decay sequence has non-finite values".into()));
    }
    let pts: Vec<(f64, f64)> = sequence
        .iter()
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(n, v)| (*n as f64, v.abs().ln()))
        .collect();
    if pts.is_empty() {
        return Ok(DecayFit::AlreadyConverged);
    }
    if pts.len() < 3 {
        return Err(Error::Diagnostic(format!(
            "need at least 3 non-zero disparities to fit a decay, got {}",
            pts.len()
        )));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx = pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let sxy = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>();
    let syy = pts.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>();
    if sxx == 0.0 {
        return Err(Error::Diagnostic("decay sequence needs distinct n values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(DecayFit::Fitted {
        rate: slope.exp(),
        slope,
        intercept,
        r2,
        points: pts.len(),
    })
}
