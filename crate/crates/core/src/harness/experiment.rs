//! The split pipeline shared by simulation and replay.
//!
//! A run realizes every candidate's game once, with as many hirer draws as the
//! largest scheme needs. Each split then learns a threshold per scheme on the
//! training rows' considered scores and evaluates the test rows. Replay feeds
//! score-table rows through the same code, so a dumped simulation replays to
//! identical metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::harness::config::{Experiment, ExperimentConfig};
use crate::harness::replay::ScoreTable;
use crate::harness::report::{CurveRow, ExperimentReport, ResumeDisparitySummary, SchemeReport, VERSION};
use crate::law::Law;
use crate::manipulation::ManipulationModel;
use crate::metrics::{
    aggregate, evaluate, fit_geometric_decay, resume_outcome_disparity, split_indices, CiReport, DisparityMode,
    SplitMode,
};
use crate::model::{chi_square_independence_check, sample_population, FeatureVector, Label, PopulationSpec};
use crate::rng::SeedStream;
use crate::schemes::{realize_all, Realization, SchemeKind};
use crate::scoring::{passes, score_law, McBudget, Scorer};
use crate::threshold::learn_threshold;

use rayon::prelude::*;

/// Split and threshold settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitSettings {
    pub train_fraction: f64,
    pub splits: usize,
    pub confidence: f64,
    pub epsilon: f64,
    pub target_fpr: f64,
    pub split_mode: SplitMode,
    /// Fixed threshold for every scheme; `None` learns one per split.
    pub fixed_threshold: Option<f64>,
}

impl SplitSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            train_fraction: cfg.train_fraction,
            splits: cfg.splits,
            confidence: cfg.confidence,
            epsilon: cfg.epsilon,
            target_fpr: cfg.target_fpr,
            split_mode: cfg.split_mode,
            fixed_threshold: cfg.threshold.fixed(),
        }
    }
}

fn key(scheme: SchemeKind, metric: &str) -> String {
    format!("{scheme}/{metric}")
}

fn has_both_labels(rows: &[Realization], idx: &[usize]) -> bool {
    let mut seen = [false; 2];
    for &i in idx {
        seen[rows[i].label.as_u8() as usize] = true;
        if seen[0] && seen[1] {
            return true;
        }
    }
    false
}

/// Metrics of one split, or `None` if the split is degenerate: with learned
/// thresholds both parts need both labels, with a fixed threshold the test
/// part needs a positive.
fn evaluate_split(
    rows: &[Realization],
    considered: &[Vec<f64>],
    schemes: &[SchemeKind],
    settings: &SplitSettings,
    stream: &SeedStream,
) -> Result<Option<BTreeMap<String, f64>>> {
    let (train, test) = split_indices(rows.len(), settings.train_fraction, settings.split_mode, stream);
    let usable = match settings.fixed_threshold {
        Some(_) => test.iter().any(|&i| rows[i].label.is_positive()),
        None => has_both_labels(rows, &train) && has_both_labels(rows, &test),
    };
    if !usable {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    let test_rows: Vec<&Realization> = test.iter().map(|&i| &rows[i]).collect();
    for (s, scheme) in schemes.iter().enumerate() {
        let tau = match settings.fixed_threshold {
            Some(t) => t,
            None => {
                let scores: Vec<(f64, Label)> = train.iter().map(|&i| (considered[s][i], rows[i].label)).collect();
                learn_threshold(&scores, settings.epsilon, settings.target_fpr)?.tau_star
            }
        };
        let tickets = scheme.hirer_tickets();
        let records: Vec<_> = test_rows.iter().map(|r| r.decide(tickets, tau)).collect();
        out.insert(key(*scheme, "tau"), tau);
        for (m, v) in evaluate(&records).scalars() {
            out.insert(key(*scheme, &m), v);
        }
    }
    if schemes.contains(&SchemeKind::Traditional) {
        let base = |m: &str| out.get(&key(SchemeKind::Traditional, m)).copied();
        let mut gains = Vec::new();
        for scheme in schemes.iter().filter(|s| **s != SchemeKind::Traditional) {
            let here = |m: &str| out.get(&key(*scheme, m)).copied();
            if let (Some(a), Some(b)) = (here("tpr"), base("tpr")) {
                gains.push((key(*scheme, "vs/tpr_gain"), a - b));
            }
            if let (Some(a), Some(b)) = (here("accuracy"), base("accuracy")) {
                gains.push((key(*scheme, "vs/accuracy_gain"), a - b));
            }
            if let (Some(a), Some(b)) = (here("tpr_disparity"), base("tpr_disparity")) {
                gains.push((key(*scheme, "vs/abs_disparity_change"), a.abs() - b.abs()));
            }
        }
        out.extend(gains);
    }
    Ok(Some(out))
}

/// Runs every split and summarizes. Split `i` uses `stream.child(i)`.
pub fn evaluate_splits(
    rows: &[Realization],
    schemes: &[SchemeKind],
    settings: &SplitSettings,
    stream: &SeedStream,
) -> Result<CiReport> {
    if settings.splits < 2 {
        return Err(Error::config("splits", "need at least two splits"));
    }
    if rows.len() < 2 {
        return Err(Error::config("population.count", "need at least two rows to split"));
    }
    let considered: Vec<Vec<f64>> = schemes
        .iter()
        .map(|s| rows.iter().map(|r| r.considered_score(s.hirer_tickets())).collect())
        .collect();
    let runs = (0..settings.splits)
        .into_par_iter()
        .map(|i| evaluate_split(rows, &considered, schemes, settings, &stream.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(&runs, settings.confidence))
}

fn scheme_reports(ci: &CiReport, schemes: &[SchemeKind]) -> Vec<SchemeReport> {
    schemes
        .iter()
        .map(|s| {
            let prefix = format!("{s}/");
            let vs_prefix = format!("{s}/vs/");
            let mut metrics = BTreeMap::new();
            let mut versus = BTreeMap::new();
            for (k, v) in &ci.metrics {
                if let Some(m) = k.strip_prefix(&vs_prefix) {
                    versus.insert(m.to_string(), v.clone());
                } else if let Some(m) = k.strip_prefix(&prefix) {
                    metrics.insert(m.to_string(), v.clone());
                }
            }
            SchemeReport {
                scheme: s.to_string(),
                tickets: s.hirer_tickets(),
                metrics,
                versus_traditional: versus,
                resume_disparity: None,
            }
        })
        .collect()
}

/// Curve of mean TPR disparity against ticket count, from the schemes present.
fn split_curve(reports: &[SchemeReport], k: Option<f64>) -> Vec<CurveRow> {
    let mut rows: Vec<CurveRow> = reports
        .iter()
        .filter_map(|s| {
            let d = s.mean("tpr_disparity")?;
            Some(CurveRow {
                n: s.tickets,
                delta_tpr: d,
                delta_tpr_abs: d.abs(),
                tpr_p: s.mean("tpr_p")?,
                tpr_u: s.mean("tpr_u")?,
                analytic_envelope: None,
            })
        })
        .collect();
    rows.sort_by_key(|r| r.n);
    if rows.len() < 2 {
        return Vec::new();
    }
    if let (Some(k), Some(base)) = (k, rows.iter().find(|r| r.n == 0).map(|r| r.delta_tpr_abs)) {
        for r in &mut rows {
            r.analytic_envelope = Some(k.powi(r.n as i32) * base);
        }
    }
    rows
}

/// Probe vectors at evenly spaced quantiles `(i + 0.5) / count`, every
/// dimension at the same quantile level.
pub fn probe_panel(population: &PopulationSpec, count: usize) -> Vec<FeatureVector> {
    let at = |laws: &[Law], u: f64| laws.iter().map(|l| l.quantile(u)).collect::<Vec<f64>>();
    (0..count)
        .map(|i| {
            let u = (i as f64 + 0.5) / count as f64;
            FeatureVector {
                fundamental: at(&population.fundamental, u),
                style: at(&population.style, u),
            }
        })
        .collect()
}

/// Largest per-ticket hirer rejection probability `q_H(x)` over probes whose
/// original score misses `tau`; 0 when every probe passes.
pub fn contraction_coefficient(
    probes: &[FeatureVector],
    hirer: &ManipulationModel,
    scorer: &Scorer,
    tau: f64,
    budget: &McBudget,
) -> Result<f64> {
    let mut k: f64 = 0.0;
    for (i, x) in probes.iter().enumerate() {
        if passes(scorer.score(x), tau) {
            continue;
        }
        let q = score_law(
            scorer,
            hirer,
            x,
            tau,
            &McBudget::new(budget.samples, budget.stream.child(i as u64)),
        )?;
        k = k.max(q.prob_below);
    }
    Ok(k)
}

fn probe_disparity(
    exp: &Experiment,
    probes: &[FeatureVector],
    tickets: usize,
    tau: f64,
    stream: &SeedStream,
) -> Result<ResumeDisparitySummary> {
    let mut vals = Vec::with_capacity(probes.len());
    let mut exact = true;
    for (i, x) in probes.iter().enumerate() {
        let d = resume_outcome_disparity(
            x,
            &exp.models,
            &exp.hirer,
            tickets,
            &exp.scorer,
            tau,
            DisparityMode::Analytic(McBudget::new(exp.config.replications, stream.child(i as u64))),
        )?;
        exact &= d.method.is_exact();
        vals.push(d.delta);
    }
    Ok(ResumeDisparitySummary {
        tau,
        probes: vals.len(),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        exact,
    })
}

/// Output of a simulated experiment: the report and every realized game.
#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub table: ScoreTable,
}

/// Samples the population, realizes all games, runs the splits, and
/// summarizes each scheme, including probe-panel resume disparities.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentRun> {
    let cfg = &exp.config;
    let root = SeedStream::new(cfg.seed);
    let population = sample_population(&exp.population, cfg.population.count, &root.named("population"))?;
    let independence = chi_square_independence_check(&population, 10, 1e-3).ok();
    let tickets = exp.max_tickets();
    let hirer = if tickets == 0 {
        ManipulationModel::Null
    } else {
        exp.hirer.clone()
    };
    let rows = realize_all(
        &population,
        &exp.models,
        &hirer,
        tickets,
        &exp.scorer,
        &root.named("game"),
    )?;
    drop(population);

    let settings = SplitSettings::from_config(cfg);
    let ci = evaluate_splits(&rows, &exp.schemes, &settings, &root.named("splits"))?;
    let mut schemes = scheme_reports(&ci, &exp.schemes);

    let probes = probe_panel(&exp.population, cfg.probes.count);
    let probe_stream = root.named("probes");
    for s in &mut schemes {
        let Some(tau) = s.mean("tau").filter(|t| t.is_finite()) else {
            continue;
        };
        s.resume_disparity = Some(probe_disparity(exp, &probes, s.tickets, tau, &probe_stream)?);
    }
    let k = match schemes.iter().find(|s| s.tickets == 0).and_then(|s| s.mean("tau")) {
        Some(tau) if tau.is_finite() && !exp.hirer.is_null() => Some(contraction_coefficient(
            &probes,
            &exp.hirer,
            &exp.scorer,
            tau,
            &McBudget::new(cfg.replications, root.named("contraction")),
        )?),
        _ => None,
    };
    let disparity_curve = split_curve(&schemes, k);
    let decay_fit = {
        let seq: Vec<(usize, f64)> = disparity_curve
            .iter()
            .filter(|r| r.n > 0)
            .map(|r| (r.n, r.delta_tpr_abs))
            .collect();
        fit_geometric_decay(&seq).ok()
    };

    let report = ExperimentReport {
        name: cfg.name.clone(),
        mode: "simulate".into(),
        seed: cfg.seed,
        config_digest: Some(cfg.digest()),
        version: VERSION.into(),
        candidates: rows.len(),
        confidence: ci.confidence,
        splits: ci.splits,
        skipped_splits: ci.skipped,
        schemes,
        independence,
        disparity_curve,
        decay_fit,
    };
    Ok(ExperimentRun {
        report,
        table: ScoreTable::new(rows),
    })
}

/// Re-runs the split pipeline on a score table. With the simulation's seed
/// and settings this reproduces the simulation's metrics exactly.
pub fn replay(
    table: &ScoreTable,
    schemes: &[SchemeKind],
    settings: &SplitSettings,
    seed: u64,
    name: &str,
) -> Result<ExperimentReport> {
    if schemes.is_empty() {
        return Err(Error::config("schemes", "list at least one scheme"));
    }
    table.check_schemes(schemes)?;
    let root = SeedStream::new(seed);
    let ci = evaluate_splits(&table.rows, schemes, settings, &root.named("splits"))?;
    let reports = scheme_reports(&ci, schemes);
    let disparity_curve = split_curve(&reports, None);
    Ok(ExperimentReport {
        name: name.to_string(),
        mode: "replay".into(),
        seed,
        config_digest: None,
        version: VERSION.into(),
        candidates: table.rows.len(),
        confidence: ci.confidence,
        splits: ci.splits,
        skipped_splits: ci.skipped,
        schemes: reports,
        independence: None,
        disparity_curve,
        decay_fit: None,
    })
}
