//! LLM manipulations as stochastic style-overwriting maps, the null model,
//! and the stochastic-dominance order between models.

use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::law::{fosd, CdfWitness, Law};
use crate::model::{FeatureVector, JointSampler};
use crate::rng::{open_unit, SeedStream, StreamRng};

/// How a parametric model draws the overwritten style block.
#[derive(Clone, Debug)]
pub enum StyleLaw {
    /// One catalog law per style dimension, drawn independently.
    Independent(Vec<Law>),
    /// Every dimension driven by the same uniform (perfectly positively dependent).
    Comonotone(Vec<Law>),
    Joint(Arc<dyn JointSampler>),
}

impl StyleLaw {
    pub fn dims(&self) -> usize {
        match self {
            StyleLaw::Independent(laws) | StyleLaw::Comonotone(laws) => laws.len(),
            StyleLaw::Joint(j) => j.dims(),
        }
    }

    fn sample(&self, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            StyleLaw::Independent(laws) => laws.iter().map(|l| l.sample(rng)).collect(),
            StyleLaw::Comonotone(laws) => {
                let u = open_unit(rng);
                laws.iter().map(|l| l.quantile(u)).collect()
            }
            StyleLaw::Joint(j) => j.sample(rng),
        }
    }
}

#[derive(Clone, Debug)]
pub enum ManipulationModel {
    /// No LLM access. Its output never wins an argmax.
    Null,
    Parametric(StyleLaw),
}

/// Output of a manipulation: a rewritten resume, or the null sentinel.
#[derive(Clone, Debug, PartialEq)]
pub enum Manipulated {
    Resume(FeatureVector),
    NullOutput,
}

impl ManipulationModel {
    pub fn independent(laws: Vec<Law>) -> Result<Self> {
        for (i, l) in laws.iter().enumerate() {
            l.validate(&format!("style[{i}]"))?;
        }
        if laws.is_empty() {
            return Err(Error::config(
                "style",
                "a parametric model needs at least one style law",
            ));
        }
        Ok(ManipulationModel::Parametric(StyleLaw::Independent(laws)))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, ManipulationModel::Null)
    }

    /// Style dimensions the model writes; `None` for the null model.
    pub fn style_dims(&self) -> Option<usize> {
        match self {
            ManipulationModel::Null => None,
            ManipulationModel::Parametric(s) => Some(s.dims()),
        }
    }

    /// Per-dimension marginals when the model draws them independently.
    pub fn independent_laws(&self) -> Option<&[Law]> {
        match self {
            ManipulationModel::Parametric(StyleLaw::Independent(laws)) => Some(laws),
            _ => None,
        }
    }

    /// Applies the model: keeps the fundamental block bit for bit and
    /// overwrites the style block with a fresh draw.
    pub fn apply(&self, input: &FeatureVector, rng: &mut StreamRng) -> Result<Manipulated> {
        match self {
            ManipulationModel::Null => Ok(Manipulated::NullOutput),
            ManipulationModel::Parametric(style) => {
                if style.dims() != input.style.len() {
                    return Err(Error::config(
                        "manipulation",
                        format!(
                            "model writes {} style features, resume has {}",
                            style.dims(),
                            input.style.len()
                        ),
                    ));
                }
                Ok(Manipulated::Resume(FeatureVector {
                    fundamental: input.fundamental.clone(),
                    style: style.sample(rng),
                }))
            }
        }
    }

    pub fn validate_for(&self, d2: usize, path: &str) -> Result<()> {
        match self.style_dims() {
            Some(d) if d != d2 => Err(Error::config(
                path,
                format!("model writes {d} style features, population has {d2}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Relation {
    Dominates,
    DominatedBy,
    Equivalent,
    Incomparable,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DominanceMethod {
    Analytic,
    EmpiricalCdf,
}

/// Where `a ⪰ b` fails: a style dimension and a point with `F_a > F_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Witness {
    pub dimension: usize,
    pub point: f64,
    pub cdf_a: f64,
    pub cdf_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominanceVerdict {
    pub relation: Relation,
    pub method: DominanceMethod,
    pub witness: Option<Witness>,
    /// Empirical verdicts only.
    pub tolerance: Option<f64>,
    pub samples: Option<(usize, usize)>,
}

impl DominanceVerdict {
    fn analytic(relation: Relation, witness: Option<Witness>) -> Self {
        Self {
            relation,
            method: DominanceMethod::Analytic,
            witness,
            tolerance: None,
            samples: None,
        }
    }

    /// `a ⪰ b` holds (strictly or as an equivalence).
    pub fn a_dominates(&self) -> bool {
        matches!(self.relation, Relation::Dominates | Relation::Equivalent)
    }
}

impl std::fmt::Display for DominanceVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let method = match self.method {
            DominanceMethod::Analytic => "Analytic",
            DominanceMethod::EmpiricalCdf => "EmpiricalCDF",
        };
        write!(f, "{:?} ({method})", self.relation)?;
        if let Some(w) = &self.witness {
            write!(
                f,
                ", witness a={} on style[{}]: F_a={:.4} > F_b={:.4}",
                w.point, w.dimension, w.cdf_a, w.cdf_b
            )?;
        }
        Ok(())
    }
}

/// Exact dominance between two models.
///
/// For independent marginals, `a ⪰ b` holds iff every style marginal of `a`
/// first-order dominates the matching marginal of `b`: the componentwise
/// quantile coupling is monotone, and every marginal lower set is a lower set
/// of the joint law. Joint-sampler models yield `Unknown`.
pub fn dominates_analytic(a: &ManipulationModel, b: &ManipulationModel) -> Result<DominanceVerdict> {
    use ManipulationModel::Null;
    let rel = |r| Ok(DominanceVerdict::analytic(r, None));
    match (a, b) {
        (Null, Null) => return rel(Relation::Equivalent),
        (Null, _) => return rel(Relation::DominatedBy),
        (_, Null) => return rel(Relation::Dominates),
        _ => {}
    }
    let (Some(la), Some(lb)) = (a.independent_laws(), b.independent_laws()) else {
        return rel(Relation::Unknown);
    };
    if la.len() != lb.len() {
        return Err(Error::config(
            "dominance",
            format!("models write {} and {} style features", la.len(), lb.len()),
        ));
    }
    let mut forward: Option<Witness> = None;
    let mut backward = true;
    for (d, (x, y)) in la.iter().zip(lb).enumerate() {
        let (cx, cy) = (x.canonical(), y.canonical());
        if let Err(CdfWitness { point, cdf_a, cdf_b }) = fosd(&cx, &cy) {
            forward.get_or_insert(Witness {
                dimension: d,
                point,
                cdf_a,
                cdf_b,
            });
        }
        if fosd(&cy, &cx).is_err() {
            backward = false;
        }
    }
    Ok(match (forward, backward) {
        (None, true) => DominanceVerdict::analytic(Relation::Equivalent, None),
        (None, false) => DominanceVerdict::analytic(Relation::Dominates, None),
        (Some(_), true) => DominanceVerdict::analytic(Relation::DominatedBy, None),
        (Some(w), false) => DominanceVerdict::analytic(Relation::Incomparable, Some(w)),
    })
}

/// Default tolerance for empirical CDF comparisons.
pub const DEFAULT_EMPIRICAL_TOLERANCE: f64 = 0.01;
/// Default sample size for empirical CDF comparisons.
pub const DEFAULT_EMPIRICAL_SAMPLES: usize = 100_000;

/// Univariate dominance from samples: `a` dominates when its empirical CDF
/// never exceeds that of `b` by more than `tolerance` on the merged support.
pub fn dominates_empirical(a_samples: &[f64], b_samples: &[f64], tolerance: f64) -> Result<DominanceVerdict> {
    if a_samples.is_empty() || b_samples.is_empty() {
        return Err(Error::Diagnostic("empirical dominance needs non-empty samples".into()));
    }
    if a_samples.iter().chain(b_samples).any(|v| v.is_nan()) {
        return Err(Error::Diagnostic("samples contain NaN".into()));
    }
    let mut a = a_samples.to_vec();
    let mut b = b_samples.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);

    // Walk the merged support; at each distinct value compare F_a and F_b.
    let (mut i, mut j) = (0, 0);
    let mut worst_ab = (f64::NEG_INFINITY, 0.0, 0.0, 0.0);
    let mut worst_ba = f64::NEG_INFINITY;
    while i < a.len() || j < b.len() {
        let t = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        let (fa, fb) = (i as f64 / na, j as f64 / nb);
        if fa - fb > worst_ab.0 {
            worst_ab = (fa - fb, t, fa, fb);
        }
        worst_ba = worst_ba.max(fb - fa);
    }
    let a_dom = worst_ab.0 <= tolerance;
    let b_dom = worst_ba <= tolerance;
    let relation = match (a_dom, b_dom) {
        (true, true) => Relation::Equivalent,
        (true, false) => Relation::Dominates,
        (false, true) => Relation::DominatedBy,
        (false, false) => Relation::Incomparable,
    };
    let witness = (!a_dom).then_some(Witness {
        dimension: 0,
        point: worst_ab.1,
        cdf_a: worst_ab.2,
        cdf_b: worst_ab.3,
    });
    Ok(DominanceVerdict {
        relation,
        method: DominanceMethod::EmpiricalCdf,
        witness,
        tolerance: Some(tolerance),
        samples: Some((a.len(), b.len())),
    })
}

/// A non-negative combination of upper-orthant indicators on the style block:
/// `u(c) = sum_k w_k 1[c >= t_k componentwise]`. Every such function is
/// non-decreasing.
#[derive(Clone, Debug, Serialize)]
pub struct MonotoneStep {
    pub steps: Vec<(f64, Vec<f64>)>,
}

impl MonotoneStep {
    pub fn eval(&self, style: &[f64]) -> f64 {
        self.steps
            .iter()
            .filter(|(_, t)| style.iter().zip(t).all(|(c, t)| c >= t))
            .map(|(w, _)| w)
            .sum()
    }

    /// Null output lies below every resume.
    pub fn eval_output(&self, out: &Manipulated) -> f64 {
        match out {
            Manipulated::Resume(x) => self.eval(&x.style),
            Manipulated::NullOutput => 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct UtilityGap {
    pub utility: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub gap: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct UtilityReport {
    pub trials: usize,
    pub gaps: Vec<UtilityGap>,
    pub violations: Vec<usize>,
    pub passed: bool,
}

/// Monte Carlo check that `E[u(a(x))] >= E[u(b(x))] - 3 stderr` for random
/// monotone step utilities `u`.
///
/// Trial `i` draws both models from the same sub-stream (common random
/// numbers), so the gap is estimated from paired differences. Step
/// thresholds are placed at quantiles of a pilot draw from both models.
pub fn utility_dominance_check(
    a: &ManipulationModel,
    b: &ManipulationModel,
    input: &FeatureVector,
    trials: usize,
    utilities: usize,
    stream: &SeedStream,
) -> Result<UtilityReport> {
    let verdict = dominates_analytic(a, b)?;
    if !verdict.a_dominates() {
        return Err(Error::Contract(format!(
            "utility check requires a ⪰ b, analytic verdict is {:?}",
            verdict.relation
        )));
    }
    if trials < 2 {
        return Err(Error::config("trials", "need at least two trials"));
    }
    let d2 = input.style.len();
    let draw = |model: &ManipulationModel, s: SeedStream| model.apply(input, &mut s.rng());

    // Pilot sample to place thresholds where both laws have mass.
    let pilot_stream = stream.named("pilot");
    let mut pilot: Vec<Vec<f64>> = Vec::new();
    for i in 0..256u64 {
        for model in [a, b] {
            if let Manipulated::Resume(x) = draw(model, pilot_stream.child(i))? {
                pilot.push(x.style);
            }
        }
    }
    let util_stream = stream.named("utilities");
    let mut fns = Vec::with_capacity(utilities);
    for k in 0..utilities as u64 {
        let mut rng = util_stream.child(k).rng();
        let n_steps = 1 + (rng.next_u32() % 4) as usize;
        let steps = (0..n_steps)
            .map(|_| {
                let w = open_unit(&mut rng);
                let t = (0..d2)
                    .map(|d| {
                        if pilot.is_empty() {
                            0.0
                        } else {
                            let mut col: Vec<f64> = pilot.iter().map(|p| p[d]).collect();
                            col.sort_by(f64::total_cmp);
                            let q = open_unit(&mut rng);
                            col[((q * col.len() as f64) as usize).min(col.len() - 1)]
                        }
                    })
                    .collect();
                (w, t)
            })
            .collect();
        fns.push(MonotoneStep { steps });
    }

    let trial_stream = stream.named("trials");
    let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64); utilities];
    for i in 0..trials as u64 {
        let s = trial_stream.child(i);
        let (oa, ob) = (draw(a, s)?, draw(b, s)?);
        for (u, acc) in fns.iter().zip(sums.iter_mut()) {
            let (ua, ub) = (u.eval_output(&oa), u.eval_output(&ob));
            let diff = ua - ub;
            acc.0 += ua;
            acc.1 += ub;
            acc.2 += diff;
            acc.3 += diff * diff;
        }
    }
    let n = trials as f64;
    let gaps: Vec<UtilityGap> = sums
        .iter()
        .enumerate()
        .map(|(k, &(sa, sb, sd, sdd))| {
            let mean = sd / n;
            let var = ((sdd - n * mean * mean) / (n - 1.0)).max(0.0);
            UtilityGap {
                utility: k,
                mean_a: sa / n,
                mean_b: sb / n,
                gap: mean,
                stderr: (var / n).sqrt(),
            }
        })
        .collect();
    let violations: Vec<usize> = gaps
        .iter()
        .filter(|g| g.gap < -3.0 * g.stderr)
        .map(|g| g.utility)
        .collect();
    Ok(UtilityReport {
        trials,
        passed: violations.is_empty(),
        gaps,
        violations,
    })
}
