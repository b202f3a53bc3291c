//! Estimators built on the k-NN measure.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::measure::{knn_measure, LocalMeasure, SampleSet};
use crate::special::normal_quantile;

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PINV_RELATIVE_TOLERANCE: f64 = 1e-12;

/// k-NN regression estimate `k^-1 sum_{i in ball} Y_i`.
pub fn knn_regression(sample: &SampleSet, x: &[f64], k: usize) -> Result<f64> {
    if !sample.is_scalar() {
        return Err(Error::invalid("k-NN regression needs scalar responses"));
    }
    knn_measure(sample, x, k)?.integrate(&Functional::Identity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalDegree {
    /// Intercept only; reproduces k-NN regression.
    Constant,
    Linear,
}

/// Least-squares fit of `Y ~ alpha + beta^T (X - x)` under the k-NN measure.
#[derive(Debug, Clone, Serialize)]
pub struct LocalLinearFit {
    pub alpha: f64,
    pub beta: Vec<f64>,
    /// `G_x = mu_hat(a a^T)` with `a(X) = (1, (X - x)^T)^T`.
    pub gram: DMatrix<f64>,
    pub gram_pinv: DMatrix<f64>,
    /// Known residual variance `sigma^2(x)` supplied by the caller.
    pub variance_scale: f64,
    pub rank: usize,
    pub rank_deficient: bool,
}

impl LocalLinearFit {
    /// Plug-in covariance estimate `sigma^2(x) G_x^+` of `(alpha, beta)`.
    pub fn variance(&self) -> DMatrix<f64> {
        &self.gram_pinv * self.variance_scale
    }

    /// Value of `mu_hat((Y - alpha - beta^T (X - x))^2)` at the given
    /// coefficients.
    pub fn objective(sample: &SampleSet, x: &[f64], k: usize, alpha: f64, beta: &[f64]) -> Result<f64> {
        let m = knn_measure(sample, x, k)?;
        let mut sum = 0.0;
        for &i in m.support() {
            let p = sample.covariates().point(i);
            let pred = alpha + beta.iter().zip(p.iter().zip(x)).map(|(b, (p, x))| b * (p - x)).sum::<f64>();
            sum += (sample.response(i)[0] - pred).powi(2);
        }
        Ok(sum / m.denominator())
    }
}

pub fn local_linear_fit(sample: &SampleSet, x: &[f64], k: usize, sigma2: f64) -> Result<LocalLinearFit> {
    local_fit(sample, x, k, sigma2, LocalDegree::Linear)
}

/// Minimum-norm solution of the k-NN weighted normal equations
/// `G_x theta = mu_hat(a Y)`.
pub fn local_fit(
    sample: &SampleSet,
    x: &[f64],
    k: usize,
    sigma2: f64,
    degree: LocalDegree,
) -> Result<LocalLinearFit> {
    if !sample.is_scalar() {
        return Err(Error::invalid("local fit needs scalar responses"));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::invalid(format!("sigma2 = {sigma2} must be >= 0")));
    }
    let m = knn_measure(sample, x, k)?;
    let d = sample.dim();
    let p = match degree {
        LocalDegree::Constant => 1,
        LocalDegree::Linear => d + 1,
    };

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut a = vec![0.0; p];
    for &i in m.support() {
        a[0] = 1.0;
        let pt = sample.covariates().point(i);
        for j in 1..p {
            a[j] = pt[j - 1] - x[j - 1];
        }
        let y = sample.response(i)[0];
        for r in 0..p {
            rhs[r] += a[r] * y;
            for c in 0..p {
                gram[(r, c)] += a[r] * a[c];
            }
        }
    }
    let den = m.denominator();
    gram /= den;
    rhs /= den;

    let (pinv, rank) = pseudo_inverse(&gram);
    let theta = &pinv * &rhs;
    let mut beta = vec![0.0; d];
    if degree == LocalDegree::Linear {
        beta.copy_from_slice(&theta.as_slice()[1..]);
    }
    Ok(LocalLinearFit {
        alpha: theta[0],
        beta,
        gram,
        gram_pinv: pinv,
        variance_scale: sigma2,
        rank,
        rank_deficient: rank < p,
    })
}

/// Moore-Penrose inverse of a symmetric PSD matrix via its eigendecomposition.
/// Returns the inverse and the numerical rank.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cutoff = PINV_RELATIVE_TOLERANCE * largest;
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut rank = 0;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if largest == 0.0 || lambda.abs() <= cutoff {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(j);
        out += (v * v.transpose()) / lambda;
    }
    (out, rank)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub center: f64,
    pub half_width: f64,
    pub level: f64,
    /// Plug-in conditional variance used for the width.
    pub variance: f64,
    /// The plug-in variance came out negative (possible under boundary ties)
    /// and was replaced by zero.
    pub variance_clamped: bool,
}

impl ConfidenceInterval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn contains(&self, value: f64) -> bool {
        (value - self.center).abs() <= self.half_width
    }
}

/// Normal-approximation interval `mu_hat(g) +- z sqrt(cov_hat(g, g) / k)`.
/// Ignores the bias term, so it targets `mu_x(g)` only when `k` grows slowly
/// enough for the bias to vanish at the `sqrt(k)` scale.
pub fn functional_ci(
    sample: &SampleSet,
    x: &[f64],
    k: usize,
    g: &Functional,
    level: f64,
) -> Result<ConfidenceInterval> {
    let m = knn_measure(sample, x, k)?;
    ci_from_measure(&m, g, level)
}

pub fn ci_from_measure<M: LocalMeasure + ?Sized>(
    m: &M,
    g: &Functional,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level {level} not in (0, 1)")));
    }
    let center = m.integrate(g)?;
    let raw = m.covariance(g, g)?;
    let variance = raw.max(0.0);
    let z = normal_quantile((1.0 + level) / 2.0);
    Ok(ConfidenceInterval {
        center,
        half_width: z * (variance / m.denominator()).sqrt(),
        level,
        variance,
        variance_clamped: raw < 0.0,
    })
}
