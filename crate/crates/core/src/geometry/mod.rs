//! Norms, unit-ball volumes and exact k-NN radius queries.
//!
//! Distances are compared in a reduced form (squared for the Euclidean norm,
//! plain for the max norm) and only converted to a true distance when a
//! radius is reported. The kd-tree and the brute-force oracle share the same
//! reduced-distance routine, so both return bit-identical radii.

mod kdtree;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kdtree::KdTree;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Euclidean,
    Chebyshev,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(NormKind::Euclidean),
            "chebyshev" | "max" | "linf" => Ok(NormKind::Chebyshev),
            other => Err(Error::invalid(format!("unknown norm `{other}`"))),
        }
    }
}

/// A norm on R^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Norm {
    pub kind: NormKind,
    pub dim: usize,
}

impl Norm {
    pub fn new(kind: NormKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        Ok(Norm { kind, dim })
    }

    pub fn euclidean(dim: usize) -> Self {
        Norm { kind: NormKind::Euclidean, dim }
    }

    pub fn chebyshev(dim: usize) -> Self {
        Norm { kind: NormKind::Chebyshev, dim }
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        self.to_distance(self.reduced(a, b))
    }

    /// Monotone surrogate of the distance used for all comparisons.
    #[inline]
    pub(crate) fn reduced(&self, a: &[f64], b: &[f64]) -> f64 {
        match self.kind {
            NormKind::Euclidean => a
                .iter()
                .zip(b)
                .fold(0.0, |acc, (x, y)| acc + (x - y) * (x - y)),
            NormKind::Chebyshev => a
                .iter()
                .zip(b)
                .fold(0.0, |acc, (x, y)| f64::max(acc, (x - y).abs())),
        }
    }

    #[inline]
    pub(crate) fn axis_term(&self, diff: f64) -> f64 {
        match self.kind {
            NormKind::Euclidean => diff * diff,
            NormKind::Chebyshev => diff.abs(),
        }
    }

    #[inline]
    pub(crate) fn combine(&self, acc: f64, term: f64) -> f64 {
        match self.kind {
            NormKind::Euclidean => acc + term,
            NormKind::Chebyshev => acc.max(term),
        }
    }

    #[inline]
    pub(crate) fn to_distance(&self, reduced: f64) -> f64 {
        match self.kind {
            NormKind::Euclidean => reduced.sqrt(),
            NormKind::Chebyshev => reduced,
        }
    }

    #[inline]
    pub(crate) fn to_reduced(&self, distance: f64) -> f64 {
        match self.kind {
            NormKind::Euclidean => distance * distance,
            NormKind::Chebyshev => distance,
        }
    }
}

/// Volume of the unit ball of a norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallVolume {
    pub norm: Norm,
    pub volume: f64,
}

pub fn unit_ball_volume(norm: Norm) -> BallVolume {
    let volume = match norm.kind {
        // V_d = V_{d-2} 2 pi / d, exact at d = 1, 2.
        NormKind::Euclidean => {
            let mut v = if norm.dim % 2 == 0 { 1.0 } else { 2.0 };
            let mut j = norm.dim % 2;
            while j < norm.dim {
                j += 2;
                v *= 2.0 * PI / j as f64;
            }
            v
        }
        NormKind::Chebyshev => 2f64.powi(norm.dim as i32),
    };
    BallVolume { norm, volume }
}

/// Result of a k-NN radius query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborQuery {
    pub center: Vec<f64>,
    pub k: usize,
    /// Smallest radius whose closed ball holds at least `k` sample points.
    pub radius: f64,
    /// Every sample index inside the closed ball, in increasing order.
    pub in_ball: Vec<usize>,
    /// Number of in-ball points lying exactly on the boundary.
    pub tie_count: usize,
}

impl NeighborQuery {
    /// True when the ball holds more than `k` points because of boundary ties.
    pub fn has_excess_ties(&self) -> bool {
        self.in_ball.len() > self.k
    }
}

/// An immutable set of points in R^d with a kd-tree built over it.
#[derive(Debug, Clone)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    tree: KdTree,
}

impl PointCloud {
    /// Builds a cloud from row-major coordinates (`n * dim` values).
    pub fn new(coords: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if coords.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if coords.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if let Some(pos) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid(format!(
                "point {} has a non-finite coordinate",
                pos / dim
            )));
        }
        let tree = KdTree::build(&coords, dim);
        Ok(PointCloud { dim, coords, tree })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            coords.extend_from_slice(row);
        }
        if rows.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        Self::new(coords, dim)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    fn check_query(&self, x: &[f64], k: usize, norm: Norm) -> Result<()> {
        if x.len() != self.dim || norm.dim != self.dim {
            return Err(Error::invalid(format!(
                "query of dimension {} (norm {}) against cloud of dimension {}",
                x.len(),
                norm.dim,
                self.dim
            )));
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("query point is not finite"));
        }
        if k == 0 || k > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} outside [1, {}]",
                self.len()
            )));
        }
        Ok(())
    }

    /// Exact k-NN radius query through the kd-tree.
    pub fn knn_radius(&self, x: &[f64], k: usize, norm: Norm) -> Result<NeighborQuery> {
        self.check_query(x, k, norm)?;
        let kth = self.tree.kth_reduced(x, k, norm);
        let mut in_ball = Vec::with_capacity(k + 4);
        let mut tie_count = 0;
        self.tree.within(x, kth, norm, |i, r| {
            in_ball.push(i);
            if r == kth {
                tie_count += 1;
            }
        });
        in_ball.sort_unstable();
        Ok(NeighborQuery {
            center: x.to_vec(),
            k,
            radius: norm.to_distance(kth),
            in_ball,
            tie_count,
        })
    }

    /// Same contract as [`PointCloud::knn_radius`], answered by sorting all
    /// `n` distances.
    pub fn knn_radius_brute_force(
        &self,
        x: &[f64],
        k: usize,
        norm: Norm,
    ) -> Result<NeighborQuery> {
        self.check_query(x, k, norm)?;
        let dists: Vec<f64> = (0..self.len())
            .map(|i| norm.reduced(x, self.point(i)))
            .collect();
        let mut sorted = dists.clone();
        sorted.sort_by(f64::total_cmp);
        let kth = sorted[k - 1];
        let in_ball: Vec<usize> = (0..self.len()).filter(|&i| dists[i] <= kth).collect();
        let tie_count = in_ball.iter().filter(|&&i| dists[i] == kth).count();
        Ok(NeighborQuery {
            center: x.to_vec(),
            k,
            radius: norm.to_distance(kth),
            in_ball,
            tie_count,
        })
    }

    /// Indices of all points in the closed ball `B(x, radius)`, sorted.
    pub fn ball(&self, x: &[f64], radius: f64, norm: Norm) -> Result<Vec<usize>> {
        if x.len() != self.dim || norm.dim != self.dim {
            return Err(Error::invalid("dimension mismatch in ball query"));
        }
        if !(radius >= 0.0) {
            return Err(Error::invalid(format!("radius {radius} must be >= 0")));
        }
        // Membership is decided on the true distance so that a radius
        // reported by `knn_radius` reproduces the same closed ball; the
        // reduced limit is padded to cover the rounding of the square.
        let limit = norm.to_reduced(radius) * (1.0 + 1e-14);
        let mut out = Vec::new();
        self.tree.within(x, limit, norm, |i, r| {
            if norm.to_distance(r) <= radius {
                out.push(i);
            }
        });
        out.sort_unstable();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f64]) -> PointCloud {
        PointCloud::new(points.to_vec(), 1).unwrap()
    }

    #[test]
    fn ordered_line_radius() {
        let cloud = line(&[0.0, 1.0, 2.0, 3.0]);
        let q = cloud.knn_radius(&[0.0], 2, Norm::euclidean(1)).unwrap();
        assert_eq!(q.radius, 1.0);
        assert_eq!(q.in_ball, vec![0, 1]);
        assert_eq!(q.tie_count, 1);
    }

    #[test]
    fn square_corners_keep_boundary_ties() {
        let cloud =
            PointCloud::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
        let q = cloud.knn_radius(&[0.0, 0.0], 3, Norm::euclidean(2)).unwrap();
        assert_eq!(q.radius, 1.0);
        assert_eq!(q.in_ball, vec![0, 1, 2]);
        assert_eq!(q.tie_count, 2);

        // k = 2 has the same radius: both unit-distance points are kept.
        let q = cloud.knn_radius(&[0.0, 0.0], 2, Norm::euclidean(2)).unwrap();
        assert_eq!(q.in_ball.len(), 3);
        assert!(q.has_excess_ties());

        // Under the max norm (1,1) is also at distance 1.
        let q = cloud.knn_radius(&[0.0, 0.0], 2, Norm::chebyshev(2)).unwrap();
        assert_eq!(q.in_ball, vec![0, 1, 2, 3]);
        assert_eq!(q.tie_count, 3);
    }

    #[test]
    fn ball_volumes() {
        assert_eq!(unit_ball_volume(Norm::euclidean(1)).volume, 2.0);
        assert!((unit_ball_volume(Norm::euclidean(2)).volume - PI).abs() < 1e-15);
        assert!((unit_ball_volume(Norm::euclidean(3)).volume - 4.0 * PI / 3.0).abs() < 1e-14);
        assert_eq!(unit_ball_volume(Norm::chebyshev(3)).volume, 8.0);
        assert_eq!(unit_ball_volume(Norm::chebyshev(1)).volume, 2.0);
    }

    #[test]
    fn rejects_bad_queries() {
        let cloud = line(&[0.0, 1.0]);
        let norm = Norm::euclidean(1);
        assert!(cloud.knn_radius(&[0.0], 0, norm).is_err());
        assert!(cloud.knn_radius(&[0.0], 3, norm).is_err());
        assert!(cloud.knn_radius(&[f64::NAN], 1, norm).is_err());
        assert!(cloud.knn_radius(&[0.0, 0.0], 1, Norm::euclidean(2)).is_err());
        assert!(PointCloud::new(vec![], 1).is_err());
        assert!(PointCloud::new(vec![0.0, f64::INFINITY], 1).is_err());
        assert!(Norm::new(NormKind::Euclidean, 0).is_err());
    }

    #[test]
    fn duplicate_points_are_all_in_ball() {
        let cloud = line(&[0.5; 40]);
        let q = cloud.knn_radius(&[0.0], 3, Norm::euclidean(1)).unwrap();
        assert_eq!(q.in_ball.len(), 40);
        assert_eq!(q.tie_count, 40);
        assert_eq!(q.radius, 0.5);
    }

    fn cloud_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, usize, bool)> {
        (1usize..=4, 1usize..=300, any::<bool>()).prop_flat_map(|(d, n, cheb)| {
            (
                Just(d),
                prop::collection::vec(-2.0f64..2.0, n * d),
                prop::collection::vec(-2.5f64..2.5, d),
                1usize..=n,
                Just(cheb),
            )
        })
    }

    fn norm_for(d: usize, cheb: bool) -> Norm {
        if cheb {
            Norm::chebyshev(d)
        } else {
            Norm::euclidean(d)
        }
    }

    proptest! {
        #[test]
        fn tree_agrees_with_brute_force((d, coords, x, k, cheb) in cloud_strategy()) {
            let cloud = PointCloud::new(coords, d).unwrap();
            let norm = norm_for(d, cheb);
            let fast = cloud.knn_radius(&x, k, norm).unwrap();
            let slow = cloud.knn_radius_brute_force(&x, k, norm).unwrap();
            prop_assert_eq!(fast.radius.to_bits(), slow.radius.to_bits());
            prop_assert_eq!(fast.in_ball, slow.in_ball);
            prop_assert_eq!(fast.tie_count, slow.tie_count);
        }

        #[test]
        fn radius_monotone_in_k((d, coords, x, _k, cheb) in cloud_strategy()) {
            let cloud = PointCloud::new(coords, d).unwrap();
            let norm = norm_for(d, cheb);
            let mut prev = 0.0;
            for k in 1..=cloud.len() {
                let r = cloud.knn_radius(&x, k, norm).unwrap().radius;
                prop_assert!(r >= prev);
                prev = r;
            }
        }

        #[test]
        fn radius_translation_invariant(
            (d, coords, x, k, cheb) in cloud_strategy(),
            shift in -10.0f64..10.0,
        ) {
            let cloud = PointCloud::new(coords.clone(), d).unwrap();
            let moved = PointCloud::new(coords.iter().map(|c| c + shift).collect(), d).unwrap();
            let xs: Vec<f64> = x.iter().map(|c| c + shift).collect();
            let norm = norm_for(d, cheb);
            let a = cloud.knn_radius(&x, k, norm).unwrap().radius;
            let b = moved.knn_radius(&xs, k, norm).unwrap().radius;
            // Shifting re-rounds every coordinate, so allow the absolute
            // rounding error of the shifted coordinates as well.
            prop_assert!((a - b).abs() <= 1e-12 * a.max(b) + 1e-14 * (1.0 + shift.abs()));
        }

        #[test]
        fn norm_axioms(
            a in prop::collection::vec(-5.0f64..5.0, 3),
            b in prop::collection::vec(-5.0f64..5.0, 3),
            c in prop::collection::vec(-5.0f64..5.0, 3),
            cheb in any::<bool>(),
        ) {
            let norm = norm_for(3, cheb);
            prop_assert_eq!(norm.distance(&a, &a), 0.0);
            prop_assert_eq!(norm.distance(&a, &b), norm.distance(&b, &a));
            prop_assert!(norm.distance(&a, &c) <= norm.distance(&a, &b) + norm.distance(&b, &c) + 1e-12);
        }
    }
}
