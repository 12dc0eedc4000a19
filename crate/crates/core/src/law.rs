//! Univariate distribution catalog.
//!
//! Population features and manipulation style marginals both draw from this
//! catalog so that first-order stochastic dominance between any two members
//! can be decided exactly.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::rng::open_unit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Law {
    Point { value: f64 },
    Uniform { low: f64, high: f64 },
    Gaussian { mean: f64, sd: f64 },
    Shifted { base: Box<Law>, delta: f64 },
}

/// A catalog law with every shift folded into its location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Canonical {
    Point(f64),
    Uniform(f64, f64),
    Gaussian(f64, f64),
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

impl Law {
    pub fn point(value: f64) -> Self {
        Law::Point { value }
    }

    pub fn uniform(low: f64, high: f64) -> Self {
        Law::Uniform { low, high }
    }

    pub fn gaussian(mean: f64, sd: f64) -> Self {
        Law::Gaussian { mean, sd }
    }

    pub fn shifted(base: Law, delta: f64) -> Self {
        Law::Shifted {
            base: Box::new(base),
            delta,
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            Law::Point { value } if !value.is_finite() => Err(Error::config(path, "point value must be finite")),
            Law::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low < high) => {
                Err(Error::config(path, "uniform needs finite low < high"))
            }
            Law::Gaussian { mean, sd } if !(mean.is_finite() && sd.is_finite() && *sd > 0.0) => {
                Err(Error::config(path, "gaussian needs finite mean and sd > 0"))
            }
            Law::Shifted { delta, .. } if !delta.is_finite() => Err(Error::config(path, "shift must be finite")),
            Law::Shifted { base, .. } => base.validate(&format!("{path}.base")),
            _ => Ok(()),
        }
    }

    pub fn canonical(&self) -> Canonical {
        match self {
            Law::Point { value } => Canonical::Point(*value),
            Law::Uniform { low, high } => Canonical::Uniform(*low, *high),
            Law::Gaussian { mean, sd } => Canonical::Gaussian(*mean, *sd),
            Law::Shifted { base, delta } => match base.canonical() {
                Canonical::Point(c) => Canonical::Point(c + delta),
                Canonical::Uniform(a, b) => Canonical::Uniform(a + delta, b + delta),
                Canonical::Gaussian(m, s) => Canonical::Gaussian(m + delta, s),
            },
        }
    }

    pub fn is_point(&self) -> bool {
        matches!(self.canonical(), Canonical::Point(_))
    }

    /// Inverse CDF at `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        self.canonical().quantile(u)
    }

    /// Draws by inversion, consuming exactly one uniform from `rng`.
    ///
    /// Every catalog law consumes the same amount of randomness, so two laws
    /// sampled from clones of one stream are comonotone.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open_unit(rng);
        self.quantile(u)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.canonical().cdf(t)
    }

    pub fn mean(&self) -> f64 {
        match self.canonical() {
            Canonical::Point(c) => c,
            Canonical::Uniform(a, b) => 0.5 * (a + b),
            Canonical::Gaussian(m, _) => m,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.canonical() {
            Canonical::Point(_) => 0.0,
            Canonical::Uniform(a, b) => (b - a).powi(2) / 12.0,
            Canonical::Gaussian(_, s) => s * s,
        }
    }
}

impl Canonical {
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Canonical::Point(c) => c,
            Canonical::Uniform(a, b) => a + (b - a) * u,
            Canonical::Gaussian(m, s) => m + s * std_normal_quantile(u),
        }
    }

    /// P(X <= t).
    pub fn cdf(&self, t: f64) -> f64 {
        match *self {
            Canonical::Point(c) => {
                if t >= c {
                    1.0
                } else {
                    0.0
                }
            }
            Canonical::Uniform(a, b) => ((t - a) / (b - a)).clamp(0.0, 1.0),
            Canonical::Gaussian(m, s) => std_normal_cdf((t - m) / s),
        }
    }

    /// P(X < t).
    pub fn cdf_left(&self, t: f64) -> f64 {
        match *self {
            Canonical::Point(c) => {
                if t > c {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.cdf(t),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Canonical::Point(c) => vec![c],
            Canonical::Uniform(a, b) => vec![a, b],
            Canonical::Gaussian(..) => Vec::new(),
        }
    }

    fn bounded(&self) -> bool {
        !matches!(self, Canonical::Gaussian(..))
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            Canonical::Point(c) => (c, c),
            Canonical::Uniform(a, b) => (a, b),
            Canonical::Gaussian(..) => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }
}

/// A point where `F_a(t) > F_b(t)`, i.e. where `a` fails to dominate `b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CdfWitness {
    pub point: f64,
    pub cdf_a: f64,
    pub cdf_b: f64,
}

/// Exact first-order dominance test: `Ok(())` when `F_a <= F_b` everywhere.
pub fn fosd(a: &Canonical, b: &Canonical) -> std::result::Result<(), CdfWitness> {
    let witness = |t: f64| CdfWitness {
        point: t,
        cdf_a: a.cdf(t),
        cdf_b: b.cdf(t),
    };
    match (*a, *b) {
        (Canonical::Gaussian(m1, s1), Canonical::Gaussian(m2, s2)) => {
            if s1 == s2 {
                if m1 >= m2 {
                    Ok(())
                } else {
                    Err(witness(0.5 * (m1 + m2)))
                }
            } else {
                // The CDFs cross once, at `cross`.
                let cross = (m1 * s2 - m2 * s1) / (s2 - s1);
                let t = if s1 < s2 {
                    (m1 + 3.0 * s1).max(cross + s1)
                } else {
                    (m1 - 3.0 * s1).min(cross - s1)
                };
                Err(witness(t))
            }
        }
        (Canonical::Gaussian(m, s), bounded) => {
            // A Gaussian puts mass below any bounded support.
            let (lo, _) = bounded.support();
            Err(witness((lo - 1.0).min(m - 3.0 * s)))
        }
        (bounded, Canonical::Gaussian(m, s)) => {
            let (_, hi) = bounded.support();
            Err(witness(hi.max(m + 3.0 * s)))
        }
        _ => {
            debug_assert!(a.bounded() && b.bounded());
            // Both CDFs are piecewise linear with kinks or jumps only at the
            // breakpoints, so checking values and left limits there is exact.
            let mut points = a.breakpoints();
            points.extend(b.breakpoints());
            points.sort_by(f64::total_cmp);
            for &t in &points {
                if a.cdf(t) > b.cdf(t) {
                    return Err(witness(t));
                }
                if a.cdf_left(t) > b.cdf_left(t) {
                    // The gap is linear on (left, t), non-positive at `left`
                    // (already checked) and positive at t-. Probe past its root.
                    let left = points
                        .iter()
                        .copied()
                        .filter(|&p| p < t)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let probe = if left.is_finite() {
                        let g0 = a.cdf(left) - b.cdf(left);
                        let g1 = a.cdf_left(t) - b.cdf_left(t);
                        let root = left + (t - left) * (-g0) / (g1 - g0);
                        0.5 * (root + t)
                    } else {
                        t - 1.0
                    };
                    return Err(CdfWitness {
                        point: probe,
                        cdf_a: a.cdf(probe),
                        cdf_b: b.cdf(probe),
                    });
                }
            }
            Ok(())
        }
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Point { value } => write!(f, "point({value})"),
            Law::Uniform { low, high } => write!(f, "uniform({low},{high})"),
            Law::Gaussian { mean, sd } => write!(f, "gaussian({mean},{sd})"),
            Law::Shifted { base, delta } => write!(f, "shifted({base},{delta})"),
        }
    }
}

impl FromStr for Law {
    type Err = Error;

    /// Parses the compact form used on the command line, e.g. `uniform(0,2)`,
    /// `gaussian(1,1)`, `point(7)` or `shifted(uniform(0,1),0.5)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: &str| Error::config("law", format!("`{s}`: {msg}"));
        let open = s.find('(').ok_or_else(|| bad("expected name(args)"))?;
        if !s.ends_with(')') {
            return Err(bad("missing closing parenthesis"));
        }
        let name = s[..open].trim().to_ascii_lowercase();
        let inner = &s[open + 1..s.len() - 1];
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("`{}` is not a number", t.trim())))
        };
        let law = match name.as_str() {
            "shifted" | "shift" => {
                let comma = inner.rfind(',').ok_or_else(|| bad("shifted needs (law, delta)"))?;
                Law::shifted(inner[..comma].parse()?, num(&inner[comma + 1..])?)
            }
            _ => {
                let args = inner.split(',').map(num).collect::<Result<Vec<f64>>>()?;
                match (name.as_str(), args.as_slice()) {
                    ("point", [c]) => Law::point(*c),
                    ("uniform", [a, b]) => Law::uniform(*a, *b),
                    ("gaussian" | "normal", [m, sd]) => Law::gaussian(*m, *sd),
                    _ => return Err(bad("unknown law or wrong argument count")),
                }
            }
        };
        law.validate("law")?;
        Ok(law)
    }
}
