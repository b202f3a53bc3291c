//! The k-NN empirical measure, its Nadaraya-Watson counterpart, and the
//! functionals derived from them.
//!
//! Both measures put equal mass on a set of sample indices (their support).
//! Integrals are computed as `sum / denominator` with `denominator = k` for
//! the k-NN measure and the in-ball count for Nadaraya-Watson, so the total
//! mass of a tie-free k-NN measure is exactly 1 in floating point.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::functional::Functional;
use crate::geometry::{Norm, NormKind, NeighborQuery, PointCloud};
use crate::synthetic::GroundTruth;

/// An i.i.d. sample `(X_i, Y_i)` with the norm used for neighbor queries.
#[derive(Debug, Clone)]
pub struct SampleSet {
    covariates: PointCloud,
    responses: Vec<f64>,
    response_dim: usize,
    norm: Norm,
}

impl SampleSet {
    /// `responses` is row-major with `response_dim` values per sample.
    pub fn new(covariates: PointCloud, responses: Vec<f64>, response_dim: usize) -> Result<Self> {
        if response_dim == 0 {
            return Err(Error::invalid("response dimension must be positive"));
        }
        if responses.len() != covariates.len() * response_dim {
            return Err(Error::invalid(format!(
                "{} covariates but {} response values (dimension {response_dim})",
                covariates.len(),
                responses.len()
            )));
        }
        let norm = Norm::euclidean(covariates.dim());
        Ok(SampleSet {
            covariates,
            responses,
            response_dim,
            norm,
        })
    }

    pub fn scalar(covariates: PointCloud, responses: Vec<f64>) -> Result<Self> {
        Self::new(covariates, responses, 1)
    }

    pub fn with_norm(mut self, kind: NormKind) -> Self {
        self.norm = Norm {
            kind,
            dim: self.covariates.dim(),
        };
        self
    }

    pub fn len(&self) -> usize {
        self.covariates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariates.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.covariates.dim()
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn covariates(&self) -> &PointCloud {
        &self.covariates
    }

    pub fn response_dim(&self) -> usize {
        self.response_dim
    }

    pub fn response(&self, i: usize) -> &[f64] {
        &self.responses[i * self.response_dim..(i + 1) * self.response_dim]
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn is_scalar(&self) -> bool {
        self.response_dim == 1
    }

    /// Writes `x_1..x_d,y` (or `y_1..y_m` for vector responses) CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x_{j}")).collect();
        if self.is_scalar() {
            header.push("y".into());
        } else {
            header.extend((1..=self.response_dim).map(|j| format!("y_{j}")));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .covariates
                .point(i)
                .iter()
                .chain(self.response(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`SampleSet::write_csv`]. Columns
    /// named `x_*` are covariates, everything else is a response.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let is_x: Vec<bool> = header.iter().map(|h| h.trim().starts_with("x_")).collect();
        let dim = is_x.iter().filter(|&&b| b).count();
        let response_dim = is_x.len() - dim;
        if dim == 0 || response_dim == 0 {
            return Err(Error::invalid(
                "CSV needs at least one x_* column and one response column",
            ));
        }
        let mut coords = Vec::new();
        let mut responses = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for (field, &x) in rec.iter().zip(&is_x) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid(format!("row {}: cannot parse `{field}`", line + 1))
                })?;
                if x {
                    coords.push(v);
                } else {
                    responses.push(v);
                }
            }
        }
        let cloud = PointCloud::new(coords, dim)?;
        SampleSet::new(cloud, responses, response_dim)
    }
}

/// Common interface of equal-weight local measures.
pub trait LocalMeasure {
    fn sample(&self) -> &SampleSet;

    /// Indices carrying mass, in increasing order.
    fn support(&self) -> &[usize];

    /// Each support point has mass `1 / denominator`.
    fn denominator(&self) -> f64;

    fn weight(&self) -> f64 {
        1.0 / self.denominator()
    }

    /// Dense weight vector of length `n`.
    fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.sample().len()];
        let v = self.weight();
        for &i in self.support() {
            w[i] = v;
        }
        w
    }

    fn total_mass(&self) -> f64 {
        self.support().len() as f64 / self.denominator()
    }

    /// `sum_i w_i g(Y_i)`.
    fn integrate(&self, g: &Functional) -> Result<f64> {
        // Summing c k times need not return c k exactly.
        if let Functional::Constant(c) = g {
            return Ok(c * self.total_mass());
        }
        let sample = self.sample();
        let mut sum = 0.0;
        for &i in self.support() {
            let v = g.eval(sample.response(i));
            if !v.is_finite() {
                return Err(Error::NonFinite { index: i, value: v });
            }
            sum += v;
        }
        Ok(sum / self.denominator())
    }

    /// Plug-in conditional covariance `m(g1 g2) - m(g1) m(g2)`.
    fn covariance(&self, g1: &Functional, g2: &Functional) -> Result<f64> {
        match (g1, g2) {
            (Functional::Constant(c), g) | (g, Functional::Constant(c)) => {
                let m = self.integrate(g)?;
                return Ok(c * m - (c * self.total_mass()) * m);
            }
            _ => {}
        }
        let sample = self.sample();
        let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
        for &i in self.support() {
            let y = sample.response(i);
            let (a, b) = (g1.eval(y), g2.eval(y));
            if !a.is_finite() {
                return Err(Error::NonFinite { index: i, value: a });
            }
            if !b.is_finite() {
                return Err(Error::NonFinite { index: i, value: b });
            }
            s1 += a;
            s2 += b;
            s12 += a * b;
        }
        let den = self.denominator();
        Ok(s12 / den - (s1 / den) * (s2 / den))
    }
}

/// The k-NN empirical measure at `x`: mass `1/k` on every response whose
/// covariate lies in the closed k-NN ball.
#[derive(Debug, Clone)]
pub struct KnnMeasure<'a> {
    sample: &'a SampleSet,
    pub query: NeighborQuery,
}

impl<'a> KnnMeasure<'a> {
    pub fn x(&self) -> &[f64] {
        &self.query.center
    }

    pub fn k(&self) -> usize {
        self.query.k
    }

    pub fn radius(&self) -> f64 {
        self.query.radius
    }

    /// Conditional CDF estimate at `y`. Requires scalar responses.
    pub fn conditional_cdf(&self, y: f64) -> Result<f64> {
        self.require_scalar()?;
        let count = self
            .query
            .in_ball
            .iter()
            .filter(|&&i| self.sample.response(i)[0] <= y)
            .count();
        Ok(count as f64 / self.query.k as f64)
    }

    /// Generalized inverse `inf { y : F(y) >= u }` of the conditional CDF.
    pub fn conditional_quantile(&self, u: f64) -> Result<f64> {
        self.require_scalar()?;
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::invalid(format!("quantile level {u} not in (0, 1)")));
        }
        let mut ys = self.in_ball_responses();
        ys.sort_by(f64::total_cmp);
        let k = self.query.k as f64;
        let j = ys
            .iter()
            .enumerate()
            .position(|(j, _)| (j + 1) as f64 / k >= u)
            .expect("in-ball count is at least k, so F reaches 1 >= u");
        Ok(ys[j])
    }

    /// Scalar responses of the in-ball points, in index order.
    pub fn in_ball_responses(&self) -> Vec<f64> {
        self.query
            .in_ball
            .iter()
            .map(|&i| self.sample.response(i)[0])
            .collect()
    }

    fn require_scalar(&self) -> Result<()> {
        if self.sample.is_scalar() {
            Ok(())
        } else {
            Err(Error::invalid("operation needs scalar responses"))
        }
    }
}

impl LocalMeasure for KnnMeasure<'_> {
    fn sample(&self) -> &SampleSet {
        self.sample
    }

    fn support(&self) -> &[usize] {
        &self.query.in_ball
    }

    fn denominator(&self) -> f64 {
        self.query.k as f64
    }
}

/// Nadaraya-Watson measure with the uniform kernel on `B(x, bandwidth)`.
#[derive(Debug, Clone)]
pub struct NwMeasure<'a> {
    sample: &'a SampleSet,
    pub x: Vec<f64>,
    pub bandwidth: f64,
    support: Vec<usize>,
}

impl LocalMeasure for NwMeasure<'_> {
    fn sample(&self) -> &SampleSet {
        self.sample
    }

    fn support(&self) -> &[usize] {
        &self.support
    }

    fn denominator(&self) -> f64 {
        self.support.len() as f64
    }
}

pub fn knn_measure<'a>(sample: &'a SampleSet, x: &[f64], k: usize) -> Result<KnnMeasure<'a>> {
    let query = sample.covariates.knn_radius(x, k, sample.norm)?;
    Ok(KnnMeasure { sample, query })
}

pub fn nw_measure<'a>(sample: &'a SampleSet, x: &[f64], bandwidth: f64) -> Result<NwMeasure<'a>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth {bandwidth} must be positive")));
    }
    let support = sample.covariates.ball(x, bandwidth, sample.norm)?;
    if support.is_empty() {
        return Err(Error::EmptyBall { radius: bandwidth });
    }
    Ok(NwMeasure {
        sample,
        x: x.to_vec(),
        bandwidth,
        support,
    })
}

pub fn integrate<M: LocalMeasure + ?Sized>(measure: &M, g: &Functional) -> Result<f64> {
    measure.integrate(g)
}

pub fn empirical_conditional_cov<M: LocalMeasure + ?Sized>(
    measure: &M,
    g1: &Functional,
    g2: &Functional,
) -> Result<f64> {
    measure.covariance(g1, g2)
}

/// Grid approximation of `sup_{z in B(x, radius)} |mu_x(g) - mu_z(g)|` under
/// the truth's norm. Evaluates `x` itself plus a lattice of about `grid`
/// points over the bounding cube, keeping those inside the closed ball. The
/// result never exceeds the true supremum.
pub fn modulus_of_continuity(
    truth: &GroundTruth,
    g: &Functional,
    x: &[f64],
    radius: f64,
    grid: usize,
) -> Result<f64> {
    let d = truth.dim();
    if x.len() != d {
        return Err(Error::invalid("query point dimension mismatch"));
    }
    if !(radius >= 0.0) {
        return Err(Error::invalid(format!("radius {radius} must be >= 0")));
    }
    let at_x = truth.conditional_mean(x, g)?;
    if radius == 0.0 || grid < 2 {
        return Ok(0.0);
    }
    let per_axis = ((grid as f64).powf(1.0 / d as f64).round() as usize).max(2);
    let norm = truth.norm();
    let step = 2.0 * radius / (per_axis - 1) as f64;
    let mut idx = vec![0usize; d];
    let mut z = vec![0.0; d];
    let mut best: f64 = 0.0;
    loop {
        for j in 0..d {
            z[j] = if idx[j] == per_axis - 1 {
                x[j] + radius
            } else {
                x[j] - radius + step * idx[j] as f64
            };
        }
        if norm.distance(x, &z) <= radius * (1.0 + 1e-12) {
            best = best.max((at_x - truth.conditional_mean(&z, g)?).abs());
        }
        // Odometer increment over the lattice.
        let mut j = 0;
        while j < d {
            idx[j] += 1;
            if idx[j] < per_axis {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == d {
            break;
        }
    }
    Ok(best)
}
