//! Closed-form finite-sample quantities: population k-NN radii, the uniform
//! error bound for the k-NN measure over a VC class, its admissible range of
//! `k`, and the concentration inequalities it is built from.
//!
//! Negative brackets are returned as computed; callers clamp if they need to.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants entering the uniform bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    /// VC exponent of the function class.
    pub v: f64,
    /// VC constant, at least 1.
    pub a: f64,
    /// Supremum of the conditional variances over the class and the support.
    pub sigma2: f64,
    /// Uniform Lipschitz constant of `x -> mu_x(g)`.
    pub lipschitz: f64,
    pub b_x: f64,
    pub u_x: f64,
    pub c: f64,
    pub t: f64,
    pub ball_volume: f64,
    /// Stand-in for the unspecified universal constant.
    pub k_const: f64,
    /// Covariate density at the query point, for pointwise radii.
    pub f_x: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        BoundInputs {
            d: 1,
            n: 1,
            k: 1,
            delta: 0.05,
            v: 1.0,
            a: 1.0,
            sigma2: 0.25,
            lipschitz: 0.0,
            b_x: 1.0,
            u_x: 1.0,
            c: 1.0,
            t: 1.0,
            ball_volume: 2.0,
            k_const: 1.0,
            f_x: 1.0,
        }
    }
}

impl BoundInputs {
    /// `U_X / (c b_X)`.
    pub fn kappa(&self) -> f64 {
        self.u_x / (self.c * self.b_x)
    }

    /// `d + 1 + v`.
    pub fn theta(&self) -> f64 {
        self.d as f64 + 1.0 + self.v
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("delta", self.delta),
            ("v", self.v),
            ("b_x", self.b_x),
            ("u_x", self.u_x),
            ("c", self.c),
            ("t", self.t),
            ("ball_volume", self.ball_volume),
            ("f_x", self.f_x),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be positive")));
            }
        }
        if self.d == 0 || self.n == 0 {
            return Err(Error::invalid("d and n must be positive"));
        }
        if self.k == 0 || self.k > self.n {
            return Err(Error::invalid(format!("k = {} outside [1, {}]", self.k, self.n)));
        }
        if self.delta >= 1.0 {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        if self.a < 1.0 {
            return Err(Error::invalid("VC constant A must be >= 1"));
        }
        if self.c > 1.0 {
            return Err(Error::invalid("c must lie in (0, 1]"));
        }
        if self.b_x > self.u_x {
            return Err(Error::invalid("b_x must not exceed u_x"));
        }
        if !(self.sigma2 >= 0.0) || !(self.lipschitz >= 0.0) {
            return Err(Error::invalid("sigma2 and lipschitz must be >= 0"));
        }
        if !(self.k_const > 0.0) {
            return Err(Error::invalid("universal constant must be positive"));
        }
        Ok(())
    }
}

/// Population k-NN radius `(k / (n f_x V_d))^(1/d)`.
pub fn deterministic_radius(inp: &BoundInputs) -> f64 {
    (inp.k as f64 / (inp.n as f64 * inp.f_x * inp.ball_volume)).powf(1.0 / inp.d as f64)
}

/// High-probability cap on every k-NN radius over the support,
/// `(2k / (n b_X c V_d))^(1/d)`.
pub fn uniform_radius_bound(inp: &BoundInputs) -> f64 {
    (2.0 * inp.k as f64 / (inp.n as f64 * inp.b_x * inp.c * inp.ball_volume)).powf(1.0 / inp.d as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KWindow {
    /// `24 d log(24 n / delta)`.
    pub k_min: f64,
    /// `n min(8 / (sigma2 kappa), T^d b_X c V_d / 2)`.
    pub k_max: f64,
    /// Lower end `24 d log(12 n / delta)` of the window on which the radius
    /// cap holds.
    pub radius_k_min: f64,
    /// Upper end `T^d n b_X c V_d / 2` of the radius-cap window.
    pub radius_k_max: f64,
}

impl KWindow {
    pub fn is_empty(&self) -> bool {
        self.k_min > self.k_max
    }

    pub fn contains(&self, k: usize) -> bool {
        let k = k as f64;
        k >= self.k_min && k <= self.k_max
    }

    pub fn radius_contains(&self, k: usize) -> bool {
        let k = k as f64;
        k >= self.radius_k_min && k <= self.radius_k_max
    }
}

pub fn admissible_k_window(inp: &BoundInputs) -> KWindow {
    let d = inp.d as f64;
    let n = inp.n as f64;
    let variance_cap = if inp.sigma2 == 0.0 {
        f64::INFINITY
    } else {
        8.0 / (inp.sigma2 * inp.kappa())
    };
    let t_cap = inp.t.powi(inp.d as i32) * inp.b_x * inp.c * inp.ball_volume / 2.0;
    KWindow {
        k_min: 24.0 * d * (24.0 * n / inp.delta).ln(),
        k_max: n * variance_cap.min(t_cap),
        radius_k_min: 24.0 * d * (12.0 * n / inp.delta).ln(),
        radius_k_max: n * t_cap,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub value: f64,
    pub variance_term: f64,
    pub deviation_term: f64,
    pub bias_term: f64,
    /// `k` lies in the admissible window; outside it the value is still
    /// reported but carries no guarantee.
    pub in_window: bool,
}

/// Uniform bound on `sup_{g, x} |(mu_hat_{n,k,x} - mu_x)(g)|` holding with
/// probability `1 - delta`:
/// `K (sqrt(sigma2 theta/k log(K A n/delta)) + theta/k log(K A n/delta) + L (k/(n c b_X V_d))^(1/d))`.
pub fn uniform_error_bound(inp: &BoundInputs) -> ErrorBound {
    let k = inp.k as f64;
    let theta = inp.theta();
    // K n (A / delta): the bound depends on A and delta only through A / delta.
    let log_term = (inp.k_const * inp.n as f64 * (inp.a / inp.delta)).ln();
    let variance_term = (inp.sigma2 * theta / k * log_term).sqrt();
    let deviation_term = theta / k * log_term;
    let bias_term = inp.lipschitz
        * (k / (inp.n as f64 * inp.c * inp.b_x * inp.ball_volume)).powf(1.0 / inp.d as f64);
    ErrorBound {
        value: inp.k_const * (variance_term + deviation_term + bias_term),
        variance_term,
        deviation_term,
        bias_term,
        in_window: admissible_k_window(inp).contains(inp.k),
    }
}

/// With probability `1 - delta`, a Binomial sum with mean `mu` is at least
/// `(1 - sqrt(2 log(1/delta) / mu)) mu`.
pub fn chernoff_lower(mu: f64, delta: f64) -> f64 {
    (1.0 - (2.0 * (1.0 / delta).ln() / mu).sqrt()) * mu
}

/// With probability `1 - delta`, the sum is at most
/// `(1 + sqrt(3 log(1/delta) / mu)) mu`.
pub fn chernoff_upper(mu: f64, delta: f64) -> f64 {
    (1.0 + (3.0 * (1.0 / delta).ln() / mu).sqrt()) * mu
}

/// Lower bound, uniform over all closed balls, on the empirical mass of a
/// ball with probability `p_ball`:
/// `P(B) (1 - sqrt(12 d log(12 n / delta) / (n P(B))))`.
pub fn uniform_ball_bound(p_ball: f64, n: usize, d: usize, delta: f64) -> f64 {
    let n = n as f64;
    p_ball * (1.0 - (12.0 * d as f64 * (12.0 * n / delta).ln() / (n * p_ball)).sqrt())
}

/// Bound on `sup_g |sum_i g(Z_i) - E g(Z)|` for a VC class with envelope `u`
/// and variance proxy `sigma <= 2u`:
/// `K' (sigma sqrt(v n log(K' theta / delta)) + u v log(K' theta / delta))`,
/// `theta = A u / sigma`.
pub fn vc_concentration_bound(
    n: usize,
    v: f64,
    a: f64,
    u: f64,
    sigma: f64,
    delta: f64,
    k_prime: f64,
) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma = {sigma} must be positive")));
    }
    if sigma > 2.0 * u {
        return Err(Error::invalid(format!("sigma = {sigma} exceeds 2U = {}", 2.0 * u)));
    }
    let theta = a * u / sigma;
    let log_term = (k_prime * theta / delta).ln();
    Ok(k_prime * (sigma * (v * n as f64 * log_term).sqrt() + u * v * log_term))
}
