//! Streaming TPR-disparity curve over hirer ticket counts.
//!
//! Candidates are generated, played with `n_max` hirer draws and reduced to
//! the index of their first passing ticket, so memory stays O(n_max) for any
//! number of candidates. Ticket prefixes are shared, so TPR is exactly
//! non-decreasing in `n` within a run.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::Experiment;
use crate::harness::experiment::{contraction_coefficient, probe_panel};
use crate::harness::report::CurveRow;
use crate::manipulation::ManipulationModel;
use crate::metrics::{fit_geometric_decay, DecayFit};
use crate::model::{sample_population, Group, Label};
use crate::rng::SeedStream;
use crate::schemes::realize;
use crate::scoring::McBudget;
use crate::threshold::learn_threshold;

#[derive(Clone, Debug, Serialize)]
pub struct NTicketCurve {
    pub tau: f64,
    /// Analytic contraction coefficient used by the envelope.
    pub k: f64,
    pub candidates: usize,
    pub positives_p: u64,
    pub positives_u: u64,
    pub rows: Vec<CurveRow>,
    /// Fit over `n >= 1`; `None` when too few non-zero points remain.
    pub fit: Option<DecayFit>,
    pub note: Option<String>,
}

impl NTicketCurve {
    pub fn converged(&self) -> bool {
        matches!(self.fit, Some(DecayFit::AlreadyConverged))
    }

    pub fn json(&self) -> Result<Vec<u8>> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        Ok(v)
    }

    pub fn fitted_rate(&self) -> Option<f64> {
        match self.fit {
            Some(DecayFit::Fitted { rate, .. }) => Some(rate),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Counts {
    positives: [u64; 2],
    /// `first[g][j]`: positives of group `g` whose first pass is ticket `j`;
    /// the last slot counts those that never pass.
    first: [Vec<u64>; 2],
}

impl Counts {
    fn new(n_max: usize) -> Self {
        Self {
            positives: [0; 2],
            first: [vec![0; n_max + 2], vec![0; n_max + 2]],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for g in 0..2 {
            self.positives[g] += other.positives[g];
            for (a, b) in self.first[g].iter_mut().zip(&other.first[g]) {
                *a += b;
            }
        }
        self
    }
}

fn group_slot(g: Group) -> usize {
    match g {
        Group::P => 0,
        Group::U => 1,
    }
}

/// The threshold the curve is traced at: the fixed threshold if configured,
/// otherwise one learned on a traditional-scheme sample of `population.count`
/// candidates and held fixed for every `n`.
pub fn curve_threshold(exp: &Experiment) -> Result<f64> {
    if let Some(t) = exp.config.threshold.fixed() {
        return Ok(t);
    }
    let root = SeedStream::new(exp.config.seed);
    let pop = sample_population(&exp.population, exp.config.population.count, &root.named("population"))?;
    let rows = crate::schemes::realize_all(
        &pop,
        &exp.models,
        &ManipulationModel::Null,
        0,
        &exp.scorer,
        &root.named("game"),
    )?;
    let scores: Vec<_> = rows.iter().map(|r| (r.considered_score(0), r.label)).collect();
    Ok(learn_threshold(&scores, exp.config.epsilon, exp.config.target_fpr)?.tau_star)
}

pub fn run_nticket_curve(exp: &Experiment, n_max: usize, candidates: usize) -> Result<NTicketCurve> {
    if n_max < 2 {
        return Err(Error::config("--n-max", "n-max must be at least 2"));
    }
    if candidates == 0 {
        return Err(Error::config("nticket.candidates", "must be at least 1"));
    }
    if exp.hirer.is_null() {
        return Err(Error::config(
            "models.hirer",
            "the n-ticket curve needs a non-null hirer model",
        ));
    }
    let tau = curve_threshold(exp)?;
    let root = SeedStream::new(exp.config.seed).named("nticket");
    let pop_stream = root.named("population");
    let game_stream = root.named("game");
    let counts = (0..candidates as u64)
        .into_par_iter()
        .try_fold(
            || Counts::new(n_max),
            |mut acc, id| -> Result<Counts> {
                let c = exp.population.sample_candidate(id, &pop_stream);
                if c.label != Label::Qualified {
                    return Ok(acc);
                }
                let r = realize(&c, &exp.models, &exp.hirer, n_max, &exp.scorer, &game_stream.child(id))?;
                let g = group_slot(c.group);
                acc.positives[g] += 1;
                let slot = r.first_pass(tau).unwrap_or(n_max + 1);
                acc.first[g][slot] += 1;
                Ok(acc)
            },
        )
        .try_reduce(|| Counts::new(n_max), |a, b| Ok(a.merge(b)))?;

    let [pos_p, pos_u] = counts.positives;
    if pos_p == 0 || pos_u == 0 {
        return Err(Error::Diagnostic(
            "the curve sample has no positives in one group".into(),
        ));
    }
    let probes = probe_panel(&exp.population, exp.config.probes.count);
    let k = contraction_coefficient(
        &probes,
        &exp.hirer,
        &exp.scorer,
        tau,
        &McBudget::new(exp.config.replications, root.named("contraction")),
    )?;

    let mut rows = Vec::with_capacity(n_max + 1);
    let (mut acc_p, mut acc_u) = (0u64, 0u64);
    for n in 0..=n_max {
        acc_p += counts.first[0][n];
        acc_u += counts.first[1][n];
        let tpr_p = acc_p as f64 / pos_p as f64;
        let tpr_u = acc_u as f64 / pos_u as f64;
        let d = tpr_p - tpr_u;
        rows.push(CurveRow {
            n,
            delta_tpr: d,
            delta_tpr_abs: d.abs(),
            tpr_p,
            tpr_u,
            analytic_envelope: None,
        });
    }
    let base = rows[0].delta_tpr_abs;
    for r in &mut rows {
        r.analytic_envelope = Some(k.powi(r.n as i32) * base);
    }
    let seq: Vec<(usize, f64)> = rows[1..].iter().map(|r| (r.n, r.delta_tpr_abs)).collect();
    let (fit, note) = match fit_geometric_decay(&seq) {
        Ok(DecayFit::AlreadyConverged) => (
            Some(DecayFit::AlreadyConverged),
            Some("converged: disparity is zero for every n >= 1".to_string()),
        ),
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(NTicketCurve {
        tau,
        k,
        candidates,
        positives_p: pos_p,
        positives_u: pos_u,
        rows,
        fit,
        note,
    })
}
