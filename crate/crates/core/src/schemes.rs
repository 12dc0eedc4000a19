//! The hiring games: best response, Traditional / Two-Ticket / n-Ticket play,
//! and acceptance probabilities by simulation and in closed form.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manipulation::{Manipulated, ManipulationModel};
use crate::model::{Candidate, FeatureVector, Group, Label};
use crate::rng::SeedStream;
use crate::scoring::{passes, score_law, LawMethod, McBudget, Scorer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeKind {
    Traditional,
    TwoTicket,
    NTicket(u32),
}

impl SchemeKind {
    /// Hirer manipulations applied after submission.
    pub fn hirer_tickets(&self) -> usize {
        match self {
            SchemeKind::Traditional => 0,
            SchemeKind::TwoTicket => 1,
            SchemeKind::NTicket(n) => *n as usize,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Traditional => f.write_str("traditional"),
            SchemeKind::TwoTicket => f.write_str("two-ticket"),
            SchemeKind::NTicket(n) => write!(f, "n-ticket:{n}"),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "traditional" => Ok(SchemeKind::Traditional),
            "two-ticket" => Ok(SchemeKind::TwoTicket),
            other => {
                let n = other
                    .strip_prefix("n-ticket:")
                    .and_then(|n| n.parse::<u32>().ok())
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| {
                        Error::config(
                            "schemes",
                            format!("unknown scheme `{other}` (traditional, two-ticket, n-ticket:N with N >= 1)"),
                        )
                    })?;
                Ok(SchemeKind::NTicket(n))
            }
        }
    }
}

/// Manipulation model available to each candidate group.
#[derive(Clone, Debug)]
pub struct GroupModels {
    pub p: ManipulationModel,
    pub u: ManipulationModel,
}

impl GroupModels {
    pub fn get(&self, g: Group) -> &ManipulationModel {
        match g {
            Group::P => &self.p,
            Group::U => &self.u,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchemeSpec {
    pub kind: SchemeKind,
    pub hirer: ManipulationModel,
    pub candidates: GroupModels,
    pub threshold: f64,
}

impl SchemeSpec {
    pub fn new(kind: SchemeKind, hirer: ManipulationModel, candidates: GroupModels, threshold: f64) -> Result<Self> {
        if kind == SchemeKind::Traditional && !hirer.is_null() {
            return Err(Error::config(
                "scheme.hirer",
                "the traditional scheme uses the null hirer model",
            ));
        }
        if threshold.is_nan() {
            return Err(Error::config("scheme.threshold", "threshold must not be NaN"));
        }
        Ok(Self {
            kind,
            hirer,
            candidates,
            threshold,
        })
    }

    pub fn traditional(candidates: GroupModels, threshold: f64) -> Self {
        Self {
            kind: SchemeKind::Traditional,
            hirer: ManipulationModel::Null,
            candidates,
            threshold,
        }
    }
}

/// Stream slots inside a candidate's stream.
const CANDIDATE_SLOT: u64 = 0;
const HIRER_SLOT: u64 = 1;

/// The candidate's submission: the higher-scoring of the original and one
/// draw from the group model. Ties keep the original.
#[derive(Clone, Debug, PartialEq)]
pub struct BestResponse {
    pub submitted: FeatureVector,
    pub submitted_score: f64,
    pub original_score: f64,
    /// Score of the manipulation draw; `None` for the null model.
    pub manipulated_score: Option<f64>,
}

pub fn best_response(
    candidate: &Candidate,
    model: &ManipulationModel,
    scorer: &Scorer,
    stream: &SeedStream,
) -> Result<BestResponse> {
    let original_score = scorer.score(&candidate.features);
    let draw = model.apply(&candidate.features, &mut stream.rng())?;
    Ok(match draw {
        Manipulated::Resume(x) => {
            let s = scorer.score(&x);
            if s > original_score {
                BestResponse {
                    submitted: x,
                    submitted_score: s,
                    original_score,
                    manipulated_score: Some(s),
                }
            } else {
                BestResponse {
                    submitted: candidate.features.clone(),
                    submitted_score: original_score,
                    original_score,
                    manipulated_score: Some(s),
                }
            }
        }
        Manipulated::NullOutput => BestResponse {
            submitted: candidate.features.clone(),
            submitted_score: original_score,
            original_score,
            manipulated_score: None,
        },
    })
}

/// Every score a game produced for one candidate, before any threshold.
///
/// Hirer draws are applied in sequence to the currently considered resume,
/// drawn from one stream, so the first `n` draws of a realization with more
/// tickets coincide with a realization with `n` tickets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub candidate_id: String,
    pub group: Group,
    pub label: Label,
    pub original_score: f64,
    pub candidate_llm_score: Option<f64>,
    pub hirer_scores: Vec<f64>,
}

impl Realization {
    pub fn submitted_score(&self) -> f64 {
        match self.candidate_llm_score {
            Some(s) if s > self.original_score => s,
            _ => self.original_score,
        }
    }

    /// Max of the submitted score and the first `tickets` hirer scores.
    pub fn considered_score(&self, tickets: usize) -> f64 {
        self.hirer_scores
            .iter()
            .take(tickets)
            .fold(self.submitted_score(), |m, &s| m.max(s))
    }

    /// Index of the first ticket that clears `tau`: 0 for the submission,
    /// `j` for the j-th hirer draw.
    pub fn first_pass(&self, tau: f64) -> Option<usize> {
        if passes(self.submitted_score(), tau) {
            return Some(0);
        }
        self.hirer_scores.iter().position(|&s| passes(s, tau)).map(|j| j + 1)
    }

    pub fn decide(&self, tickets: usize, tau: f64) -> PlayRecord {
        let considered = self.considered_score(tickets);
        let hirer_draws = self.hirer_scores.len().min(tickets);
        PlayRecord {
            candidate_id: self.candidate_id.clone(),
            group: self.group,
            label: self.label,
            submitted_score: self.submitted_score(),
            considered_score: considered,
            decision: passes(considered, tau),
            draws_used: self.candidate_llm_score.is_some() as usize + hirer_draws,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlayRecord {
    pub candidate_id: String,
    pub group: Group,
    pub label: Label,
    pub submitted_score: f64,
    pub considered_score: f64,
    pub decision: bool,
    pub draws_used: usize,
}

/// Plays the candidate side and `tickets` hirer draws for one candidate.
pub fn realize(
    candidate: &Candidate,
    models: &GroupModels,
    hirer: &ManipulationModel,
    tickets: usize,
    scorer: &Scorer,
    stream: &SeedStream,
) -> Result<Realization> {
    let br = best_response(
        candidate,
        models.get(candidate.group),
        scorer,
        &stream.child(CANDIDATE_SLOT),
    )?;
    let mut hirer_scores = Vec::new();
    if !hirer.is_null() && tickets > 0 {
        let mut rng = stream.child(HIRER_SLOT).rng();
        let mut current = br.submitted.clone();
        let mut current_score = br.submitted_score;
        hirer_scores.reserve(tickets);
        for _ in 0..tickets {
            if let Manipulated::Resume(x) = hirer.apply(&current, &mut rng)? {
                let s = scorer.score(&x);
                hirer_scores.push(s);
                if s > current_score {
                    current = x;
                    current_score = s;
                }
            }
        }
    }
    Ok(Realization {
        candidate_id: candidate.id.to_string(),
        group: candidate.group,
        label: candidate.label,
        original_score: br.original_score,
        candidate_llm_score: br.manipulated_score,
        hirer_scores,
    })
}

/// Realizes every candidate; candidate `c` uses `stream.child(c.id)`.
pub fn realize_all(
    candidates: &[Candidate],
    models: &GroupModels,
    hirer: &ManipulationModel,
    tickets: usize,
    scorer: &Scorer,
    stream: &SeedStream,
) -> Result<Vec<Realization>> {
    candidates
        .par_iter()
        .map(|c| realize(c, models, hirer, tickets, scorer, &stream.child(c.id)))
        .collect()
}

/// Plays the scheme for every candidate.
pub fn play(
    spec: &SchemeSpec,
    candidates: &[Candidate],
    scorer: &Scorer,
    stream: &SeedStream,
) -> Result<Vec<PlayRecord>> {
    if !spec.threshold.is_finite() {
        return Err(Error::config("scheme.threshold", "play needs a finite threshold"));
    }
    let tickets = spec.kind.hirer_tickets();
    Ok(
        realize_all(candidates, &spec.candidates, &spec.hirer, tickets, scorer, stream)?
            .iter()
            .map(|r| r.decide(tickets, spec.threshold))
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AcceptanceEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub method: LawMethod,
}

/// Fraction of accepted outcomes over independent replays of the whole game.
pub fn acceptance_probability_mc(
    spec: &SchemeSpec,
    candidate: &Candidate,
    scorer: &Scorer,
    replications: usize,
    stream: &SeedStream,
) -> Result<AcceptanceEstimate> {
    if replications == 0 {
        return Err(Error::config("replications", "need at least one replication"));
    }
    let tickets = spec.kind.hirer_tickets();
    let accepted = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            realize(
                candidate,
                &spec.candidates,
                &spec.hirer,
                tickets,
                scorer,
                &stream.child(r),
            )
            .map(|real| real.decide(tickets, spec.threshold).decision as usize)
        })
        .sum::<Result<usize>>()?;
    let n = replications as f64;
    let p = accepted as f64 / n;
    Ok(AcceptanceEstimate {
        probability: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        method: LawMethod::MonteCarlo {
            samples: replications,
            stderr: (p * (1.0 - p) / n).sqrt(),
        },
    })
}

/// Closed-form acceptance: `1 - 1[s(x) < tau] * q_g * q_H^n`, with
/// `q = P(s(L(x)) < tau)` for the candidate's group model and the hirer model.
pub fn acceptance_probability_analytic(
    spec: &SchemeSpec,
    candidate: &Candidate,
    scorer: &Scorer,
    budget: &McBudget,
) -> Result<AcceptanceEstimate> {
    analytic_acceptance(
        &candidate.features,
        spec.candidates.get(candidate.group),
        &spec.hirer,
        spec.kind.hirer_tickets(),
        scorer,
        spec.threshold,
        budget,
    )
}

pub(crate) fn analytic_acceptance(
    x: &FeatureVector,
    group_model: &ManipulationModel,
    hirer: &ManipulationModel,
    tickets: usize,
    scorer: &Scorer,
    tau: f64,
    budget: &McBudget,
) -> Result<AcceptanceEstimate> {
    if passes(scorer.score(x), tau) {
        return Ok(AcceptanceEstimate {
            probability: 1.0,
            stderr: 0.0,
            method: LawMethod::Exact,
        });
    }
    let qg = score_law(
        scorer,
        group_model,
        x,
        tau,
        &McBudget::new(budget.samples, budget.stream.named("group")),
    )?;
    let (qh_p, qh_method) = if tickets == 0 {
        (1.0, LawMethod::Exact)
    } else {
        let qh = score_law(
            scorer,
            hirer,
            x,
            tau,
            &McBudget::new(budget.samples, budget.stream.named("hirer")),
        )?;
        (qh.prob_below, qh.method)
    };
    let n = tickets as i32;
    let qhn = qh_p.powi(n);
    let reject = qg.prob_below * qhn;
    // Delta-method error when either factor is estimated.
    let var = (qhn * qg.method.stderr()).powi(2)
        + if n > 0 {
            (qg.prob_below * f64::from(n) * qh_p.powi(n - 1) * qh_method.stderr()).powi(2)
        } else {
            0.0
        };
    let stderr = var.sqrt();
    let method = if qg.method.is_exact() && qh_method.is_exact() {
        LawMethod::Exact
    } else {
        LawMethod::MonteCarlo {
            samples: budget.samples,
            stderr,
        }
    };
    Ok(AcceptanceEstimate {
        probability: 1.0 - reject,
        stderr,
        method,
    })
}

/// Per-candidate acceptance dynamics under repeated hirer tickets.
///
/// One more ticket maps an acceptance probability `z` to `z + h (1 - z)`, a
/// contraction on [0, 1] with coefficient `k = 1 - h` whenever `h > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NTicketDynamics {
    /// P(s(L_H(x)) >= tau) for one hirer draw.
    pub h: f64,
    /// P(s(L_g(x)) >= tau): one raw draw of the group model.
    pub raw_baseline: f64,
    /// Acceptance before any hirer ticket, including the original resume.
    pub baseline: f64,
    pub k: f64,
    pub original_passes: bool,
    pub outcome_limit: u8,
}

impl NTicketDynamics {
    pub fn step(&self, z: f64) -> f64 {
        z + self.h * (1.0 - z)
    }

    /// `T^n(z)` by repeated application.
    pub fn iterate(&self, z: f64, n: usize) -> f64 {
        (0..n).fold(z, |acc, _| self.step(acc))
    }

    /// `T^n(z) = 1 - (1 - h)^n (1 - z)`.
    pub fn closed_form(&self, z: f64, n: usize) -> f64 {
        1.0 - self.k.powi(n as i32) * (1.0 - z)
    }

    /// Acceptance probabilities `T^1(baseline) ..= T^n(baseline)`.
    pub fn trajectory(&self, n: usize) -> Vec<f64> {
        let mut z = self.baseline;
        (0..n)
            .map(|_| {
                z = self.step(z);
                z
            })
            .collect()
    }

    /// `k^n (1 - z)`, the distance bound to the limit when `h > 0`.
    pub fn bound(&self, z: f64, n: usize) -> f64 {
        self.k.powi(n as i32) * (1.0 - z)
    }
}

pub fn nticket_dynamics(
    x: &FeatureVector,
    group_model: &ManipulationModel,
    hirer: &ManipulationModel,
    scorer: &Scorer,
    tau: f64,
    budget: &McBudget,
) -> Result<NTicketDynamics> {
    let qh = score_law(
        scorer,
        hirer,
        x,
        tau,
        &McBudget::new(budget.samples, budget.stream.named("hirer")),
    )?;
    let qg = score_law(
        scorer,
        group_model,
        x,
        tau,
        &McBudget::new(budget.samples, budget.stream.named("group")),
    )?;
    let original_passes = passes(scorer.score(x), tau);
    let h = 1.0 - qh.prob_below;
    let baseline = if original_passes { 1.0 } else { 1.0 - qg.prob_below };
    Ok(NTicketDynamics {
        h,
        raw_baseline: 1.0 - qg.prob_below,
        baseline,
        k: 1.0 - h,
        original_passes,
        outcome_limit: (h > 0.0 || original_passes) as u8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::Law;

    fn cand(group: Group, style: f64) -> Candidate {
        Candidate {
            id: 0,
            features: FeatureVector::new(vec![], vec![style]).unwrap(),
            group,
            label: Label::Qualified,
        }
    }

    fn point(v: f64) -> ManipulationModel {
        ManipulationModel::independent(vec![Law::point(v)]).unwrap()
    }

    fn id_scorer() -> Scorer {
        Scorer::linear(vec![1.0], 0.0).unwrap()
    }

    fn models(p: ManipulationModel, u: ManipulationModel) -> GroupModels {
        GroupModels { p, u }
    }

    #[test]
    fn best_response_takes_the_argmax() {
        let s = SeedStream::new(1);
        let c = cand(Group::P, 5.0);
        let lower = best_response(&c, &point(4.0), &id_scorer(), &s).unwrap();
        assert_eq!((lower.submitted_score, lower.submitted.style[0]), (5.0, 5.0));
        let higher = best_response(&c, &point(7.0), &id_scorer(), &s).unwrap();
        assert_eq!((higher.submitted_score, higher.submitted.style[0]), (7.0, 7.0));
        let tie = best_response(&c, &point(5.0), &id_scorer(), &s).unwrap();
        assert_eq!(tie.submitted, c.features);
        let null = best_response(&c, &ManipulationModel::Null, &id_scorer(), &s).unwrap();
        assert_eq!((null.submitted_score, null.manipulated_score), (5.0, None));
    }

    #[test]
    fn traditional_rejects_a_hirer_model() {
        let m = models(ManipulationModel::Null, ManipulationModel::Null);
        assert!(SchemeSpec::new(SchemeKind::Traditional, point(1.0), m, 0.0).is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in [SchemeKind::Traditional, SchemeKind::TwoTicket, SchemeKind::NTicket(7)] {
            assert_eq!(k.to_string().parse::<SchemeKind>().unwrap(), k);
        }
        assert!("n-ticket:0".parse::<SchemeKind>().is_err());
        assert!("three-ticket".parse::<SchemeKind>().is_err());
    }

    fn realization(submitted: f64, hirer: &[f64]) -> Realization {
        Realization {
            candidate_id: "c".into(),
            group: Group::U,
            label: Label::Qualified,
            original_score: submitted,
            candidate_llm_score: None,
            hirer_scores: hirer.to_vec(),
        }
    }

    #[test]
    fn max_rule_and_closed_boundary() {
        let two = realization(4.0, &[6.0]).decide(1, 6.0);
        assert!(two.decision);
        assert_eq!(two.considered_score, 6.0);
        let three = realization(4.0, &[5.0, 5.5, 5.9]).decide(3, 6.0);
        assert!(!three.decision);
        assert_eq!(three.considered_score, 5.9);
        // Traditional ignores hirer draws
        assert!(!realization(4.0, &[9.0]).decide(0, 6.0).decision);
    }

    #[test]
    fn traditional_play_matches_classifier() {
        let m = models(point(7.0), ManipulationModel::Null);
        let spec = SchemeSpec::traditional(m, 6.0);
        let cands: Vec<Candidate> = (0..20)
            .map(|i| Candidate {
                id: i,
                features: FeatureVector::new(vec![], vec![i as f64 * 0.5]).unwrap(),
                group: if i % 2 == 0 { Group::P } else { Group::U },
                label: Label::Qualified,
            })
            .collect();
        let recs = play(&spec, &cands, &id_scorer(), &SeedStream::new(3)).unwrap();
        for (r, c) in recs.iter().zip(&cands) {
            assert_eq!(r.considered_score, r.submitted_score);
            assert_eq!(r.decision, r.submitted_score >= 6.0);
            let expect = if c.group == Group::P {
                c.features.style[0].max(7.0)
            } else {
                c.features.style[0]
            };
            assert_eq!(r.submitted_score, expect);
        }
    }

    #[test]
    fn monte_carlo_edge_cases() {
        let s = SeedStream::new(4);
        let m = models(ManipulationModel::Null, ManipulationModel::Null);
        let spec = SchemeSpec::new(SchemeKind::TwoTicket, point(0.0), m, 6.0).unwrap();
        let passing = acceptance_probability_mc(&spec, &cand(Group::U, 6.0), &id_scorer(), 57, &s).unwrap();
        assert_eq!(passing.probability, 1.0);
        let never = acceptance_probability_mc(&spec, &cand(Group::U, 5.0), &id_scorer(), 500, &s).unwrap();
        assert_eq!(never.probability, 0.0);
    }

    #[test]
    fn monte_carlo_matches_bernoulli_oracle() {
        // q_P = P(U(0,10) < 3) = 0.3 so the pass probability is 0.7.
        let m = models(
            ManipulationModel::independent(vec![Law::uniform(0.0, 10.0)]).unwrap(),
            ManipulationModel::Null,
        );
        let spec = SchemeSpec::traditional(m, 3.0);
        let est =
            acceptance_probability_mc(&spec, &cand(Group::P, 0.0), &id_scorer(), 100_000, &SeedStream::new(8)).unwrap();
        let sigma = (0.7f64 * 0.3 / 1e5).sqrt();
        assert!((est.probability - 0.7).abs() <= 4.0 * sigma, "{}", est.probability);
    }

    #[test]
    fn analytic_product_formula() {
        let budget = McBudget::new(1000, SeedStream::new(1));
        // s(x) = 4 < 6, q_g = P(U(0,10) < 6) = 0.6 ... pick laws giving q_g = 0.3, q_H = 0.5
        let g = ManipulationModel::independent(vec![Law::uniform(3.0, 13.0)]).unwrap(); // P(<6) = 0.3
        let h = ManipulationModel::independent(vec![Law::uniform(5.0, 7.0)]).unwrap(); // P(<6) = 0.5
        let m = models(g, ManipulationModel::Null);
        let two = SchemeSpec::new(SchemeKind::TwoTicket, h.clone(), m.clone(), 6.0).unwrap();
        let est = acceptance_probability_analytic(&two, &cand(Group::P, 4.0), &id_scorer(), &budget).unwrap();
        assert!((est.probability - 0.85).abs() < 1e-12);
        assert!(est.method.is_exact());

        let passing = acceptance_probability_analytic(&two, &cand(Group::P, 6.0), &id_scorer(), &budget).unwrap();
        assert_eq!(passing.probability, 1.0);

        // baseline z = 0 (null group model), h = 0.5, three tickets
        let three = SchemeSpec::new(SchemeKind::NTicket(3), h, m, 6.0).unwrap();
        let est = acceptance_probability_analytic(&three, &cand(Group::U, 4.0), &id_scorer(), &budget).unwrap();
        assert!((est.probability - 0.875).abs() < 1e-12);
    }

    #[test]
    fn dynamics_edge_cases() {
        let budget = McBudget::new(1000, SeedStream::new(1));
        let x = FeatureVector::new(vec![], vec![4.0]).unwrap();
        let dead = nticket_dynamics(&x, &ManipulationModel::Null, &point(5.0), &id_scorer(), 6.0, &budget).unwrap();
        assert_eq!((dead.h, dead.baseline, dead.outcome_limit), (0.0, 0.0, 0));
        assert!(dead.trajectory(10).iter().all(|&z| z == 0.0));

        let half = ManipulationModel::independent(vec![Law::uniform(5.0, 7.0)]).unwrap();
        let d = nticket_dynamics(&x, &ManipulationModel::Null, &half, &id_scorer(), 6.0, &budget).unwrap();
        assert_eq!(d.trajectory(3), vec![0.5, 0.75, 0.875]);
        assert_eq!(d.outcome_limit, 1);

        let sure = nticket_dynamics(&x, &ManipulationModel::Null, &point(6.0), &id_scorer(), 6.0, &budget).unwrap();
        assert_eq!(sure.h, 1.0);
        assert_eq!(sure.trajectory(1), vec![1.0]);
    }

    #[test]
    fn extra_tickets_never_hurt_under_coupled_streams() {
        let m = models(
            ManipulationModel::independent(vec![Law::uniform(0.0, 4.0)]).unwrap(),
            ManipulationModel::Null,
        );
        let hirer = ManipulationModel::independent(vec![Law::gaussian(3.0, 2.0)]).unwrap();
        let s = SeedStream::new(21);
        for i in 0..500u64 {
            let c = Candidate {
                id: i,
                features: FeatureVector::new(vec![], vec![(i % 7) as f64]).unwrap(),
                group: if i % 3 == 0 { Group::P } else { Group::U },
                label: Label::Qualified,
            };
            let r = realize(&c, &m, &hirer, 12, &id_scorer(), &s.child(i)).unwrap();
            let decisions: Vec<bool> = (0..=12).map(|n| r.decide(n, 6.0).decision).collect();
            assert!(decisions.windows(2).all(|w| w[1] >= w[0]));
            let short = realize(&c, &m, &hirer, 5, &id_scorer(), &s.child(i)).unwrap();
            assert_eq!(short.hirer_scores[..], r.hirer_scores[..5]);
        }
    }
}
