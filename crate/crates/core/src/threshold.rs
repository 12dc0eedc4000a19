//! Zero-false-positive threshold learning and the threshold-consistency check.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manipulation::{dominates_analytic, ManipulationModel};
use crate::model::{Candidate, Label};
use crate::rng::SeedStream;
use crate::scoring::{passes, Scorer};

/// Default strict-exceedance margin in score units.
pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Per-channel maxima of negative scores: original resumes (`m`), each
/// candidate model and each hirer model.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelMaxima {
    pub m: f64,
    pub m_p: f64,
    pub m_u: f64,
    pub m_h: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdDerivation {
    pub tau_star: f64,
    /// Highest negative score left above the threshold's reach; the max
    /// negative score in zero-FPR mode.
    pub max_negative_score: f64,
    pub epsilon: f64,
    pub target_fpr: f64,
    pub negatives: usize,
    pub positives: usize,
    /// Training TPR at `tau_star`; `None` without positives.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// Set when there were no negatives and every candidate is accepted.
    pub no_negatives: bool,
    pub components: Option<ChannelMaxima>,
}

/// Smallest representable threshold strictly above `max + epsilon`'s base.
fn exceed(max: f64, epsilon: f64) -> f64 {
    let t = max + epsilon;
    if t > max {
        t
    } else {
        max.next_up()
    }
}

/// Learns the minimal threshold that maximizes TPR subject to the FPR target.
///
/// With `target_fpr = 0` the threshold sits `epsilon` above the highest
/// negative score, so no training negative is accepted under the `s >= tau`
/// rule while lowering it to that score admits one. A positive
/// `target_fpr` tolerates up to `floor(target_fpr * negatives)` false
/// positives. Without negatives the threshold is −∞.
pub fn learn_threshold(scores: &[(f64, Label)], epsilon: f64, target_fpr: f64) -> Result<ThresholdDerivation> {
    if scores.is_empty() {
        return Err(Error::config("threshold", "need at least one scored example"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config("epsilon", "epsilon must be positive and finite"));
    }
    if !(0.0..1.0).contains(&target_fpr) {
        return Err(Error::config("target_fpr", "target FPR must lie in [0, 1)"));
    }
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::config("threshold", "scores must not be NaN"));
    }
    let mut neg: Vec<f64> = scores
        .iter()
        .filter(|(_, l)| !l.is_positive())
        .map(|(s, _)| *s)
        .collect();
    let positives = scores.len() - neg.len();
    let (tau_star, max_negative_score, no_negatives) = if neg.is_empty() {
        (f64::NEG_INFINITY, f64::NEG_INFINITY, true)
    } else {
        neg.sort_by(|a, b| b.total_cmp(a));
        let allowed = (target_fpr * neg.len() as f64).floor() as usize;
        let pivot = neg[allowed.min(neg.len() - 1)];
        (exceed(pivot, epsilon), pivot, false)
    };
    let (tpr, fpr) = rates(scores, tau_star);
    Ok(ThresholdDerivation {
        tau_star,
        max_negative_score,
        epsilon,
        target_fpr,
        negatives: neg.len(),
        positives,
        tpr,
        fpr,
        no_negatives,
        components: None,
    })
}

/// (TPR, FPR) of `s >= tau` on labeled scores.
pub fn rates(scores: &[(f64, Label)], tau: f64) -> (Option<f64>, Option<f64>) {
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (s, l) in scores {
        let accept = passes(*s, tau);
        if l.is_positive() {
            pos += 1;
            tp += accept as usize;
        } else {
            neg += 1;
            fp += accept as usize;
        }
    }
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    (ratio(tp, pos), ratio(fp, neg))
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsistencyReport {
    pub maxima: ChannelMaxima,
    /// `max(M, M_P, M_U, M_H^(k))` for each hirer model.
    pub tau_star: Vec<f64>,
    pub max_abs_difference: f64,
    /// Whether every hirer model is analytically dominated by the P model.
    pub lemma_applies: bool,
    pub tolerance: f64,
}

/// Estimates the channel maxima over the negatives of a population sample
/// and reports whether the learned threshold depends on the hirer model.
///
/// Every channel draws negative `i`'s `j`-th manipulation from the same
/// sub-stream, so models are compared under common random numbers. When
/// `L_P` analytically dominates every hirer model the check asserts
/// `M_P >= M_H^(k) - tolerance` and returns a lemma violation otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_threshold_consistency(
    scorer: &Scorer,
    population: &[Candidate],
    l_p: &ManipulationModel,
    l_u: &ManipulationModel,
    hirers: &[ManipulationModel],
    draws: usize,
    tolerance: f64,
    stream: &SeedStream,
) -> Result<ConsistencyReport> {
    if hirers.is_empty() {
        return Err(Error::config("hirers", "need at least one hirer model"));
    }
    if draws == 0 {
        return Err(Error::config("draws", "need at least one draw per channel"));
    }
    let negatives: Vec<&Candidate> = population.iter().filter(|c| !c.label.is_positive()).collect();
    if negatives.is_empty() {
        return Err(Error::Diagnostic("population sample has no negatives".into()));
    }
    let channel_max = |model: &ManipulationModel| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for c in &negatives {
            for j in 0..draws as u64 {
                let out = model.apply(&c.features, &mut stream.child(c.id).child(j).rng())?;
                best = best.max(scorer.score_output(&out));
            }
        }
        Ok(best)
    };
    let m = negatives
        .iter()
        .map(|c| scorer.score(&c.features))
        .fold(f64::NEG_INFINITY, f64::max);
    let m_p = channel_max(l_p)?;
    let m_u = channel_max(l_u)?;
    let m_h = hirers.iter().map(channel_max).collect::<Result<Vec<f64>>>()?;

    let base = m.max(m_p).max(m_u);
    let tau_star: Vec<f64> = m_h.iter().map(|h| base.max(*h)).collect();
    let lo = tau_star.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tau_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut lemma_applies = true;
    for h in hirers {
        if !dominates_analytic(l_p, h)?.a_dominates() {
            lemma_applies = false;
        }
    }
    let report = ConsistencyReport {
        maxima: ChannelMaxima { m, m_p, m_u, m_h },
        tau_star,
        max_abs_difference: hi - lo,
        lemma_applies,
        tolerance,
    };
    if lemma_applies {
        if let Some((k, h)) = report
            .maxima
            .m_h
            .iter()
            .enumerate()
            .find(|(_, h)| **h > report.maxima.m_p + tolerance)
        {
            return Err(Error::LemmaViolation(format!(
                "L_P dominates every hirer model yet M_H^({}) = {h} exceeds M_P = {} by more than {tolerance}",
                k + 1,
                report.maxima.m_p
            )));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::law::Law;
    use crate::model::{FeatureVector, Group};

    fn labeled(neg: &[f64], pos: &[f64]) -> Vec<(f64, Label)> {
        neg.iter()
            .map(|s| (*s, Label::Unqualified))
            .chain(pos.iter().map(|s| (*s, Label::Qualified)))
            .collect()
    }

    #[test]
    fn enumerated_example() {
        let d = learn_threshold(&labeled(&[3.2, 6.0, 4.5], &[5.5, 7.0]), 1e-9, 0.0).unwrap();
        assert_eq!(d.tau_star, 6.0 + 1e-9);
        assert_eq!(d.max_negative_score, 6.0);
        assert_eq!(d.tpr, Some(0.5));
        assert_eq!(d.fpr, Some(0.0));
        // brute force over every candidate threshold: none with FPR 0 beats TPR 0.5
        let scores = labeled(&[3.2, 6.0, 4.5], &[5.5, 7.0]);
        for &(t, _) in &scores {
            let (tpr, fpr) = rates(&scores, t);
            if fpr == Some(0.0) {
                assert!(tpr.unwrap() <= 0.5);
            }
        }
        assert_eq!(rates(&scores, d.max_negative_score).1, Some(1.0 / 3.0));
    }

    #[test]
    fn all_positive_gives_accept_all() {
        let d = learn_threshold(&labeled(&[], &[1.0, 2.0]), 1e-9, 0.0).unwrap();
        assert_eq!(d.tau_star, f64::NEG_INFINITY);
        assert!(d.no_negatives);
        assert_eq!(d.tpr, Some(1.0));
    }

    #[test]
    fn input_errors() {
        assert!(learn_threshold(&[], 1e-9, 0.0).is_err());
        assert!(learn_threshold(&labeled(&[1.0], &[]), 0.0, 0.0).is_err());
        assert!(learn_threshold(&labeled(&[1.0], &[]), 1e-9, 1.0).is_err());
    }

    #[test]
    fn epsilon_below_resolution_still_exceeds() {
        let d = learn_threshold(&labeled(&[1e12], &[2e12]), 1e-9, 0.0).unwrap();
        assert!(d.tau_star > 1e12);
        assert_eq!(d.fpr, Some(0.0));
    }

    #[test]
    fn relaxed_target_admits_false_positives() {
        let neg: Vec<f64> = (0..10).map(f64::from).collect();
        let d = learn_threshold(&labeled(&neg, &[8.5]), 1e-9, 0.2).unwrap();
        // two false positives allowed: threshold just above the third-highest negative
        assert_eq!(d.max_negative_score, 7.0);
        assert_eq!(d.fpr, Some(0.2));
        assert_eq!(d.tpr, Some(1.0));
    }

    fn negative(id: u64, f: f64) -> Candidate {
        Candidate {
            id,
            features: FeatureVector::new(vec![f], vec![0.0]).unwrap(),
            group: Group::U,
            label: Label::Unqualified,
        }
    }

    #[test]
    fn single_negative_exact_maxima() {
        let scorer = Scorer::linear(vec![1.0, 1.0], 0.0).unwrap();
        let pt = |v| ManipulationModel::independent(vec![Law::point(v)]).unwrap();
        let pop = vec![negative(0, 2.0)];
        let r = check_threshold_consistency(
            &scorer,
            &pop,
            &pt(1.0),
            &ManipulationModel::Null,
            &[ManipulationModel::Null, pt(0.5)],
            3,
            0.0,
            &SeedStream::new(1),
        )
        .unwrap();
        assert_eq!(r.maxima.m, 2.0);
        assert_eq!(r.maxima.m_p, 3.0);
        assert_eq!(r.maxima.m_u, f64::NEG_INFINITY);
        assert_eq!(r.maxima.m_h, vec![f64::NEG_INFINITY, 2.5]);
        assert_eq!(r.tau_star, vec![3.0, 3.0]);
        assert!(r.lemma_applies);
    }

    #[test]
    fn dominant_hirer_moves_the_threshold() {
        let scorer = Scorer::linear(vec![1.0, 1.0], 0.0).unwrap();
        let pt = |v| ManipulationModel::independent(vec![Law::point(v)]).unwrap();
        let pop: Vec<Candidate> = (0..50).map(|i| negative(i, i as f64 / 10.0)).collect();
        let r = check_threshold_consistency(
            &scorer,
            &pop,
            &pt(1.0),
            &ManipulationModel::Null,
            &[ManipulationModel::Null, pt(2.0)],
            1,
            0.0,
            &SeedStream::new(1),
        )
        .unwrap();
        assert!(!r.lemma_applies);
        assert!(r.maxima.m_h[1] > r.maxima.m_p);
        assert!((r.max_abs_difference - 1.0).abs() < 1e-12);
    }
}
