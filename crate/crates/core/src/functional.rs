//! Real-valued test functions on the response space.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound on `|g|` over the response space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    Bounded(f64),
    Unbounded,
}

impl Envelope {
    pub fn bound(&self) -> Option<f64> {
        match *self {
            Envelope::Bounded(b) => Some(b),
            Envelope::Unbounded => None,
        }
    }
}

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A user-supplied functional. `envelope` is trusted, not checked.
#[derive(Clone)]
pub struct CustomFunctional {
    pub id: String,
    pub envelope: Envelope,
    eval: Arc<EvalFn>,
}

impl CustomFunctional {
    pub fn new<F>(id: impl Into<String>, envelope: Envelope, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        CustomFunctional {
            id: id.into(),
            envelope,
            eval: Arc::new(eval),
        }
    }
}

impl fmt::Debug for CustomFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunctional")
            .field("id", &self.id)
            .field("envelope", &self.envelope)
            .finish_non_exhaustive()
    }
}

/// Test function `g` applied to a response `y`. Scalar variants read the
/// first response component.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Functional {
    Constant(f64),
    Identity,
    Square,
    /// `1{y <= t}`.
    Indicator(f64),
    /// `y[j]` for vector responses.
    Coordinate(usize),
    /// `sum a_i g_i`.
    Linear(Vec<(f64, Functional)>),
    Product(Box<Functional>, Box<Functional>),
    Custom(CustomFunctional),
}

impl Functional {
    pub fn indicator(t: f64) -> Self {
        Functional::Indicator(t)
    }

    pub fn product(a: Functional, b: Functional) -> Self {
        Functional::Product(Box::new(a), Box::new(b))
    }

    pub fn id(&self) -> String {
        match self {
            Functional::Constant(c) => format!("const:{c}"),
            Functional::Identity => "identity".into(),
            Functional::Square => "square".into(),
            Functional::Indicator(t) => format!("cdf:{t}"),
            Functional::Coordinate(j) => format!("coord:{j}"),
            Functional::Linear(terms) => {
                let parts: Vec<String> = terms
                    .iter()
                    .map(|(a, g)| format!("{a}*{}", g.id()))
                    .collect();
                format!("lin({})", parts.join("+"))
            }
            Functional::Product(a, b) => format!("prod({},{})", a.id(), b.id()),
            Functional::Custom(c) => c.id.clone(),
        }
    }

    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Functional::Constant(c) => *c,
            Functional::Identity => y[0],
            Functional::Square => y[0] * y[0],
            Functional::Indicator(t) => {
                if y[0] <= *t {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::Coordinate(j) => y[*j],
            Functional::Linear(terms) => terms.iter().map(|(a, g)| a * g.eval(y)).sum(),
            Functional::Product(a, b) => a.eval(y) * b.eval(y),
            Functional::Custom(c) => (c.eval)(y),
        }
    }

    pub fn envelope(&self) -> Envelope {
        match self {
            Functional::Constant(c) => Envelope::Bounded(c.abs()),
            Functional::Indicator(_) => Envelope::Bounded(1.0),
            Functional::Identity | Functional::Square | Functional::Coordinate(_) => {
                Envelope::Unbounded
            }
            Functional::Linear(terms) => terms
                .iter()
                .try_fold(0.0, |acc, (a, g)| g.envelope().bound().map(|b| acc + a.abs() * b))
                .map_or(Envelope::Unbounded, Envelope::Bounded),
            Functional::Product(a, b) => match (a.envelope(), b.envelope()) {
                (Envelope::Bounded(x), Envelope::Bounded(y)) => Envelope::Bounded(x * y),
                _ => Envelope::Unbounded,
            },
            Functional::Custom(c) => c.envelope,
        }
    }

    /// Smallest response dimension this functional can be applied to.
    pub fn min_response_dim(&self) -> usize {
        match self {
            Functional::Constant(_) => 0,
            Functional::Coordinate(j) => j + 1,
            Functional::Linear(terms) => terms
                .iter()
                .map(|(_, g)| g.min_response_dim())
                .max()
                .unwrap_or(0),
            Functional::Product(a, b) => a.min_response_dim().max(b.min_response_dim()),
            _ => 1,
        }
    }
}

impl fmt::Display for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Functional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad number in functional `{s}`")))
        };
        match s.split_once(':') {
            None => match s {
                "identity" | "mean" | "y" => Ok(Functional::Identity),
                "square" => Ok(Functional::Square),
                other => Err(Error::invalid(format!("unknown functional `{other}`"))),
            },
            Some(("cdf" | "indicator", t)) => parse_num(t).map(Functional::Indicator),
            Some(("const", c)) => parse_num(c).map(Functional::Constant),
            Some(("coord", j)) => j
                .trim()
                .parse::<usize>()
                .map(Functional::Coordinate)
                .map_err(|_| Error::invalid(format!("bad coordinate in `{s}`"))),
            Some(_) => Err(Error::invalid(format!("unknown functional `{s}`"))),
        }
    }
}

impl TryFrom<String> for Functional {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Functional> for String {
    fn from(g: Functional) -> String {
        g.id()
    }
}
