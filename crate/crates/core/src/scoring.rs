//! Monotone resume scorers and the threshold classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::law::{std_normal_cdf, Canonical};
use crate::manipulation::{Manipulated, ManipulationModel};
use crate::model::FeatureVector;
use crate::rng::SeedStream;

/// `offset + w . x`, optionally clipped, with `w >= 0` over the concatenated
/// fundamental and style blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearScorer {
    weights: Vec<f64>,
    offset: f64,
    clip: Option<(f64, f64)>,
}

impl LinearScorer {
    pub fn new(weights: Vec<f64>, offset: f64, clip: Option<(f64, f64)>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("scorer.weights", "need at least one weight"));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::config(
                format!("scorer.weights[{i}]"),
                format!("weight {w} must be finite and non-negative to keep the scorer monotone"),
            ));
        }
        if !offset.is_finite() {
            return Err(Error::config("scorer.offset", "offset must be finite"));
        }
        if let Some((lo, hi)) = clip {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config("scorer.clip", "clip needs finite lo <= hi"));
            }
        }
        Ok(Self { weights, offset, clip })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn clip(&self) -> Option<(f64, f64)> {
        self.clip
    }

    fn combine(&self, values: impl Iterator<Item = f64>) -> f64 {
        let raw = self.offset + self.weights.iter().zip(values).map(|(w, v)| w * v).sum::<f64>();
        match self.clip {
            Some((lo, hi)) => raw.clamp(lo, hi),
            None => raw,
        }
    }
}

/// Non-decreasing piecewise-linear map, flat outside its knots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::config("scorer.links", "a link needs at least one knot"));
        }
        for pair in knots.windows(2) {
            let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
            if x1 <= x0 {
                return Err(Error::config("scorer.links", "knot inputs must be strictly increasing"));
            }
            if y1 < y0 {
                return Err(Error::config("scorer.links", "knot outputs must be non-decreasing"));
            }
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::config("scorer.links", "knots must be finite"));
        }
        Ok(Self { knots })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        if x >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let i = k.partition_point(|(kx, _)| *kx <= x);
        let ((x0, y0), (x1, y1)) = (k[i - 1], k[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scorer {
    Linear(LinearScorer),
    /// Per-dimension monotone links feeding a linear scorer.
    Table {
        links: Vec<PiecewiseLinear>,
        linear: LinearScorer,
    },
}

impl Scorer {
    pub fn linear(weights: Vec<f64>, offset: f64) -> Result<Self> {
        Ok(Scorer::Linear(LinearScorer::new(weights, offset, None)?))
    }

    pub fn dims(&self) -> usize {
        match self {
            Scorer::Linear(l) => l.weights.len(),
            Scorer::Table { linear, .. } => linear.weights.len(),
        }
    }

    pub fn validate_for(&self, dims: usize) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::config(
                "scorer.weights",
                format!("scorer expects {} features, population has {dims}", self.dims()),
            ));
        }
        if let Scorer::Table { links, .. } = self {
            if links.len() != dims {
                return Err(Error::config("scorer.links", format!("expected {dims} links")));
            }
        }
        Ok(())
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        match self {
            Scorer::Linear(l) => l.combine(x.iter()),
            Scorer::Table { links, linear } => linear.combine(x.iter().zip(links).map(|(v, link)| link.eval(v))),
        }
    }

    /// Scores a manipulation output; the null sentinel scores −∞.
    pub fn score_output(&self, out: &Manipulated) -> f64 {
        match out {
            Manipulated::Resume(x) => self.score(x),
            Manipulated::NullOutput => f64::NEG_INFINITY,
        }
    }
}

/// `f_tau(x) = 1[s(x) >= tau]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdClassifier {
    pub scorer: Scorer,
    pub tau: f64,
}

impl ThresholdClassifier {
    pub fn classify(&self, x: &Manipulated) -> bool {
        passes(self.scorer.score_output(x), self.tau)
    }
}

/// The closed-boundary acceptance rule.
#[inline]
pub fn passes(score: f64, tau: f64) -> bool {
    score >= tau
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum LawMethod {
    Exact,
    MonteCarlo { samples: usize, stderr: f64 },
}

impl LawMethod {
    pub fn is_exact(&self) -> bool {
        matches!(self, LawMethod::Exact)
    }

    pub fn stderr(&self) -> f64 {
        match self {
            LawMethod::Exact => 0.0,
            LawMethod::MonteCarlo { stderr, .. } => *stderr,
        }
    }
}

/// `P(s(L(x)) < tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScoreLaw {
    pub prob_below: f64,
    pub method: LawMethod,
}

/// Sample budget for score laws without a closed form.
#[derive(Clone, Copy, Debug)]
pub struct McBudget {
    pub samples: usize,
    pub stream: SeedStream,
}

impl McBudget {
    pub fn new(samples: usize, stream: SeedStream) -> Self {
        Self { samples, stream }
    }
}

/// Distribution of the manipulated score relative to `tau`.
///
/// Closed form when the scorer is linear and unclipped and the weighted
/// random part of the style block is a single uniform, any number of
/// Gaussians, or nothing (all point masses). Everything else falls back to
/// Monte Carlo with the given budget.
pub fn score_law(
    scorer: &Scorer,
    model: &ManipulationModel,
    input: &FeatureVector,
    tau: f64,
    budget: &McBudget,
) -> Result<ScoreLaw> {
    if model.is_null() {
        return Ok(ScoreLaw {
            prob_below: if tau > f64::NEG_INFINITY { 1.0 } else { 0.0 },
            method: LawMethod::Exact,
        });
    }
    model.validate_for(input.style.len(), "manipulation")?;
    if let Some(p) = exact_prob_below(scorer, model, input, tau) {
        return Ok(ScoreLaw {
            prob_below: p,
            method: LawMethod::Exact,
        });
    }
    if budget.samples == 0 {
        return Err(Error::config(
            "replications",
            "Monte Carlo score law needs a positive sample budget",
        ));
    }
    let mut below = 0usize;
    for i in 0..budget.samples as u64 {
        let out = model.apply(input, &mut budget.stream.child(i).rng())?;
        if scorer.score_output(&out) < tau {
            below += 1;
        }
    }
    let n = budget.samples as f64;
    let p = below as f64 / n;
    Ok(ScoreLaw {
        prob_below: p,
        method: LawMethod::MonteCarlo {
            samples: budget.samples,
            stderr: (p * (1.0 - p) / n).sqrt(),
        },
    })
}

fn exact_prob_below(scorer: &Scorer, model: &ManipulationModel, input: &FeatureVector, tau: f64) -> Option<f64> {
    let Scorer::Linear(lin) = scorer else {
        return None;
    };
    if lin.clip.is_some() {
        return None;
    }
    let laws = model.independent_laws()?;
    let d1 = input.fundamental.len();
    let (wf, ws) = lin.weights.split_at(d1);
    let mut base = lin.offset + wf.iter().zip(&input.fundamental).map(|(w, v)| w * v).sum::<f64>();
    let mut uniform: Option<(f64, f64)> = None;
    let mut gauss_mean = 0.0;
    let mut gauss_var = 0.0;
    let mut n_gauss = 0;
    for (w, law) in ws.iter().zip(laws) {
        match law.canonical() {
            Canonical::Point(c) => base += w * c,
            _ if *w == 0.0 => {}
            Canonical::Uniform(a, b) => {
                if uniform.is_some() {
                    return None;
                }
                uniform = Some((w * a, w * b));
            }
            Canonical::Gaussian(m, s) => {
                gauss_mean += w * m;
                gauss_var += (w * s).powi(2);
                n_gauss += 1;
            }
        }
    }
    Some(match (uniform, n_gauss) {
        (None, 0) => {
            if base < tau {
                1.0
            } else {
                0.0
            }
        }
        (Some((lo, hi)), 0) => ((tau - (base + lo)) / (hi - lo)).clamp(0.0, 1.0),
        (None, _) => std_normal_cdf((tau - (base + gauss_mean)) / gauss_var.sqrt()),
        (Some(_), _) => return None,
    })
}
