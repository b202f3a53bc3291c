//! Synthetic models with analytic ground truth and reproducible sampling.
//!
//! Every model lives on the unit cube `[0, 1]^d` and has responses
//! `Y = m(X) + s(X) * eps` with a known noise law, so conditional means of
//! polynomial-times-indicator functionals have closed forms.
//!
//! | id     | density                         | m(x)           | noise                    |
//! |--------|---------------------------------|----------------|--------------------------|
//! | m0     | uniform                         | 0              | Uniform(-1, 1)           |
//! | m1     | uniform                         | sin(2 pi x_1)  | N(0, 0.5^2)              |
//! | m2     | 0.25 on x_1 < 1/2, 1.75 above   | sin(2 pi x_1)  | N(0, 0.5^2)              |
//! | m3     | uniform                         | sin(2 pi x_1)  | N(0, (0.25 + 0.5 x_1)^2) |
//! | linear | uniform                         | x_1            | N(0, 0.5^2)              |
//!
//! Support constants: on the cube, `lambda(S ∩ B(x, r)) >= 2^-d lambda(B(x, r))`
//! holds for `r <= 1` under the max norm (every axis keeps an interval of
//! length at least `r`) and for `r <= 1/2` under the Euclidean norm (the
//! orthant facing the far side of each axis fits inside the cube). In one
//! dimension both norms coincide and `T = 1`.

use std::f64::consts::PI;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::geometry::{Norm, NormKind, PointCloud};
use crate::measure::SampleSet;
use crate::special::{normal_cdf, normal_pdf, normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    #[serde(alias = "M0")]
    M0,
    #[serde(alias = "M1")]
    M1,
    #[serde(alias = "M2")]
    M2,
    #[serde(alias = "M3")]
    M3,
    Linear,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::M0, ModelId::M1, ModelId::M2, ModelId::M3, ModelId::Linear];

    pub fn name(&self) -> &'static str {
        match self {
            ModelId::M0 => "m0",
            ModelId::M1 => "m1",
            ModelId::M2 => "m2",
            ModelId::M3 => "m3",
            ModelId::Linear => "linear",
        }
    }
}

impl std::str::FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`")))
    }
}

/// Conditional law of `Y - m(x)` given `X = x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum NoiseLaw {
    Gaussian { sigma: f64 },
    /// Gaussian with scale `base + slope * clamp(x_1, 0, 1)`.
    HeteroGaussian { base: f64, slope: f64 },
    Uniform { a: f64, b: f64 },
}

/// Density bounds and support regularity constants of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportConstants {
    pub b_x: f64,
    pub u_x: f64,
    pub c: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: ModelId,
    dim: usize,
    norm: Norm,
    pub noise: NoiseLaw,
    pub constants: SupportConstants,
}

/// Reproducible stream selector: master seed plus replication id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub replication: u64,
}

const M2_LOW: f64 = 0.25;
const M2_HIGH: f64 = 1.75;

impl GroundTruth {
    pub fn new(model: ModelId, dim: usize, norm: NormKind) -> Result<Self> {
        let norm = Norm::new(norm, dim)?;
        let noise = match model {
            ModelId::M0 => NoiseLaw::Uniform { a: -1.0, b: 1.0 },
            ModelId::M1 | ModelId::M2 | ModelId::Linear => NoiseLaw::Gaussian { sigma: 0.5 },
            ModelId::M3 => NoiseLaw::HeteroGaussian {
                base: 0.25,
                slope: 0.5,
            },
        };
        let (b_x, u_x) = match model {
            ModelId::M2 => (M2_LOW, M2_HIGH),
            _ => (1.0, 1.0),
        };
        let t = if dim == 1 || norm.kind == NormKind::Chebyshev {
            1.0
        } else {
            0.5
        };
        Ok(GroundTruth {
            model,
            dim,
            norm,
            noise,
            constants: SupportConstants {
                b_x,
                u_x,
                c: 0.5f64.powi(dim as i32),
                t,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn support(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.dim]
    }

    pub fn density(&self, z: &[f64]) -> f64 {
        if z.iter().any(|&c| !(0.0..=1.0).contains(&c)) {
            return 0.0;
        }
        match self.model {
            ModelId::M2 => {
                if z[0] < 0.5 {
                    M2_LOW
                } else {
                    M2_HIGH
                }
            }
            _ => 1.0,
        }
    }

    pub fn regression(&self, z: &[f64]) -> f64 {
        match self.model {
            ModelId::M0 => 0.0,
            ModelId::Linear => z[0],
            ModelId::M1 | ModelId::M2 | ModelId::M3 => (2.0 * PI * z[0]).sin(),
        }
    }

    /// Standard deviation of the noise at `z`.
    pub fn noise_scale(&self, z: &[f64]) -> f64 {
        match self.noise {
            NoiseLaw::Gaussian { sigma } => sigma,
            NoiseLaw::HeteroGaussian { base, slope } => base + slope * z[0].clamp(0.0, 1.0),
            NoiseLaw::Uniform { a, b } => (b - a) / 12f64.sqrt(),
        }
    }

    /// `Var(Y | X = z)`.
    pub fn residual_variance(&self, z: &[f64]) -> f64 {
        self.noise_scale(z).powi(2)
    }

    /// Analytic `mu_z(g) = E[g(Y) | X = z]`.
    pub fn conditional_mean(&self, z: &[f64], g: &Functional) -> Result<f64> {
        let terms = expand(g).ok_or_else(|| {
            Error::Unsupported(format!("no closed form for functional `{}`", g.id()))
        })?;
        let m = self.regression(z);
        Ok(terms
            .iter()
            .map(|t| t.coef * self.truncated_moment(m, z, t.power, t.threshold))
            .sum())
    }

    /// Analytic `cov_z(g1, g2) = mu_z(g1 g2) - mu_z(g1) mu_z(g2)`.
    pub fn conditional_cov(&self, z: &[f64], g1: &Functional, g2: &Functional) -> Result<f64> {
        let joint = self.conditional_mean(z, &Functional::product(g1.clone(), g2.clone()))?;
        Ok(joint - self.conditional_mean(z, g1)? * self.conditional_mean(z, g2)?)
    }

    /// Lipschitz constant of `z -> mu_z(g)` on the support. These are
    /// analytic upper bounds, checked against grid estimates in the tests.
    pub fn lipschitz(&self, g: &Functional) -> Option<f64> {
        let two_pi = 2.0 * PI;
        let (identity, square, indicator) = match self.model {
            ModelId::M0 => (0.0, Some(0.0), 0.0),
            // sin' is at most 2 pi; mu_z(1{y<=t}) = Phi((t - m)/s) moves at
            // most phi(0) |m'| / s.
            ModelId::M1 | ModelId::M2 => (two_pi, Some(two_pi), two_pi * normal_pdf(0.0) / 0.5),
            // With s(z) = 0.25 + 0.5 z_1: |d/dz Phi(u)| <= phi(u)(|m'|/s + |u| s'/s).
            ModelId::M3 => (
                two_pi,
                Some(two_pi + 2.0 * 0.75 * 0.5),
                normal_pdf(0.0) * two_pi / 0.25 + normal_pdf(1.0) * 0.5 / 0.25,
            ),
            // z^2 + 1/4 is not globally Lipschitz.
            ModelId::Linear => (1.0, None, normal_pdf(0.0) / 0.5),
        };
        match g {
            Functional::Constant(_) => Some(0.0),
            Functional::Identity | Functional::Coordinate(0) => Some(identity),
            Functional::Square => square,
            Functional::Indicator(_) => Some(indicator),
            Functional::Linear(terms) => terms
                .iter()
                .try_fold(0.0, |acc, (a, g)| self.lipschitz(g).map(|l| acc + a.abs() * l)),
            _ => None,
        }
    }

    /// `E[Y^p 1{Y <= t}]` given `X = z`, where `Y = m + noise`.
    fn truncated_moment(&self, m: f64, z: &[f64], p: u32, t: f64) -> f64 {
        match self.noise {
            NoiseLaw::Uniform { a, b } => {
                let lo = m + a;
                let hi = t.min(m + b);
                if hi <= lo {
                    return 0.0;
                }
                let q = (p + 1) as i32;
                (hi.powi(q) - lo.powi(q)) / (q as f64 * (b - a))
            }
            NoiseLaw::Gaussian { .. } | NoiseLaw::HeteroGaussian { .. } => {
                let s = self.noise_scale(z);
                let u = (t - m) / s;
                let zm = std_normal_truncated_moments(u, p);
                (0..=p)
                    .map(|j| binomial(p, j) * m.powi((p - j) as i32) * s.powi(j as i32) * zm[j as usize])
                    .sum()
            }
        }
    }

    /// Draws `Y | X = z` from one uniform in (0, 1).
    pub fn response_from_uniform(&self, z: &[f64], u: f64) -> f64 {
        let m = self.regression(z);
        match self.noise {
            NoiseLaw::Uniform { a, b } => m + a + (b - a) * u,
            _ => m + self.noise_scale(z) * normal_quantile(u),
        }
    }

    /// Maps a uniform draw to the first covariate by inverting its marginal.
    fn first_coordinate(&self, u: f64) -> f64 {
        match self.model {
            ModelId::M2 => {
                let low_mass = 0.5 * M2_LOW;
                if u < low_mass {
                    u / M2_LOW
                } else {
                    (0.5 + (u - low_mass) / M2_HIGH).min(1.0)
                }
            }
            _ => u,
        }
    }

    /// Draws `n` i.i.d. pairs. Sample `i` consumes exactly `d + 1` 64-bit
    /// outputs of the ChaCha stream selected by `rng`, so it is a function of
    /// `(seed, replication, i)` alone.
    pub fn draw_sample(&self, n: usize, rng: RngSpec) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::invalid("sample size must be positive"));
        }
        let d = self.dim;
        let mut stream = rng.stream();
        let mut coords = Vec::with_capacity(n * d);
        let mut ys = Vec::with_capacity(n);
        let mut z = vec![0.0; d];
        for _ in 0..n {
            z[0] = self.first_coordinate(unit_open(stream.next_u64()));
            for c in z.iter_mut().skip(1) {
                *c = unit_open(stream.next_u64());
            }
            ys.push(self.response_from_uniform(&z, unit_open(stream.next_u64())));
            coords.extend_from_slice(&z);
        }
        let cloud = PointCloud::new(coords, d)?;
        Ok(SampleSet::scalar(cloud, ys)?.with_norm(self.norm.kind))
    }
}

/// The catalog of synthetic models in dimension `dim` under `norm`.
pub fn model_catalog(dim: usize, norm: NormKind) -> Result<Vec<GroundTruth>> {
    ModelId::ALL
        .into_iter()
        .map(|m| GroundTruth::new(m, dim, norm))
        .collect()
}

impl RngSpec {
    pub fn new(seed: u64, replication: u64) -> Self {
        RngSpec { seed, replication }
    }

    /// Independent stream for a sub-task of the same replication.
    pub fn derive(&self, tag: u64) -> RngSpec {
        RngSpec {
            seed: splitmix64(self.seed ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
            replication: self.replication,
        }
    }

    pub fn stream(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.replication);
        rng
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Uniform in the open interval (0, 1) from the top 53 bits.
#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, Copy)]
struct Term {
    coef: f64,
    power: u32,
    threshold: f64,
}

/// Writes `g` as `sum coef * y^power * 1{y <= threshold}`.
fn expand(g: &Functional) -> Option<Vec<Term>> {
    let unit = |power, threshold| Term {
        coef: 1.0,
        power,
        threshold,
    };
    match g {
        Functional::Constant(c) => Some(vec![Term {
            coef: *c,
            power: 0,
            threshold: f64::INFINITY,
        }]),
        Functional::Identity | Functional::Coordinate(0) => Some(vec![unit(1, f64::INFINITY)]),
        Functional::Square => Some(vec![unit(2, f64::INFINITY)]),
        Functional::Indicator(t) => Some(vec![unit(0, *t)]),
        Functional::Linear(parts) => {
            let mut out = Vec::new();
            for (a, g) in parts {
                out.extend(expand(g)?.into_iter().map(|t| Term {
                    coef: a * t.coef,
                    ..t
                }));
            }
            Some(out)
        }
        Functional::Product(a, b) => {
            let (a, b) = (expand(a)?, expand(b)?);
            let mut out = Vec::with_capacity(a.len() * b.len());
            for s in &a {
                for t in &b {
                    out.push(Term {
                        coef: s.coef * t.coef,
                        power: s.power + t.power,
                        threshold: s.threshold.min(t.threshold),
                    });
                }
            }
            Some(out)
        }
        _ => None,
    }
}

/// `E[Z^j 1{Z <= u}]` for `j = 0..=p`, `Z ~ N(0, 1)`.
fn std_normal_truncated_moments(u: f64, p: u32) -> Vec<f64> {
    let (cdf, pdf) = if u == f64::INFINITY {
        (1.0, 0.0)
    } else if u == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        (normal_cdf(u), normal_pdf(u))
    };
    let mut out = Vec::with_capacity(p as usize + 1);
    for j in 0..=p as usize {
        let tail = if pdf == 0.0 { 0.0 } else { u.powi(j as i32 - 1) * pdf };
        let v = match j {
            0 => cdf,
            1 => -pdf,
            _ => -tail + (j - 1) as f64 * out[j - 2],
        };
        out.push(v);
    }
    out
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
