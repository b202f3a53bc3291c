use std::collections::BinaryHeap;

use super::Norm;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { axis: u32, value: f64, right: u32 },
}

/// Static kd-tree over a row-major coordinate buffer. Points are copied in
/// tree order so leaves scan contiguous memory; `ids` maps back to the
/// caller's indices. The left child of a split node is always the next node.
#[derive(Debug, Clone)]
pub(super) struct KdTree {
    dim: usize,
    points: Vec<f64>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl KdTree {
    pub(super) fn build(coords: &[f64], dim: usize) -> Self {
        let n = coords.len() / dim;
        let mut ids: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / LEAF_SIZE + 1);
        build_node(coords, dim, &mut ids, 0, &mut nodes);
        let mut points = Vec::with_capacity(coords.len());
        for &i in &ids {
            let i = i as usize;
            points.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
        }
        KdTree {
            dim,
            points,
            ids,
            nodes,
        }
    }

    #[inline]
    fn point(&self, slot: usize) -> &[f64] {
        &self.points[slot * self.dim..(slot + 1) * self.dim]
    }

    /// The k-th smallest reduced distance from `x` to the points.
    pub(super) fn kth_reduced(&self, x: &[f64], k: usize, norm: Norm) -> f64 {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        let mut offsets = vec![0.0; self.dim];
        self.knn_node(0, x, k, norm, &mut offsets, &mut heap);
        heap.peek().map(|d| d.0).unwrap_or(f64::INFINITY)
    }

    fn knn_node(
        &self,
        node: usize,
        x: &[f64],
        k: usize,
        norm: Norm,
        offsets: &mut [f64],
        heap: &mut BinaryHeap<Dist>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let d = norm.reduced(x, self.point(slot));
                    if heap.len() < k {
                        heap.push(Dist(d));
                    } else if d < heap.peek().unwrap().0 {
                        heap.pop();
                        heap.push(Dist(d));
                    }
                }
            }
            Node::Split { axis, value, right } => {
                let axis = axis as usize;
                let diff = x[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (node + 1, right as usize)
                } else {
                    (right as usize, node + 1)
                };
                self.knn_node(near, x, k, norm, offsets, heap);

                let saved = offsets[axis];
                offsets[axis] = norm.axis_term(diff);
                let bound = box_bound(norm, offsets);
                let visit = heap.len() < k || bound < heap.peek().unwrap().0;
                if visit {
                    self.knn_node(far, x, k, norm, offsets, heap);
                }
                offsets[axis] = saved;
            }
        }
    }

    /// Calls `visit(id, reduced_distance)` for every point within reduced
    /// distance `limit` (inclusive) of `x`.
    pub(super) fn within<F: FnMut(usize, f64)>(&self, x: &[f64], limit: f64, norm: Norm, mut visit: F) {
        let mut offsets = vec![0.0; self.dim];
        self.within_node(0, x, limit, norm, &mut offsets, &mut visit);
    }

    fn within_node<F: FnMut(usize, f64)>(
        &self,
        node: usize,
        x: &[f64],
        limit: f64,
        norm: Norm,
        offsets: &mut [f64],
        visit: &mut F,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let d = norm.reduced(x, self.point(slot));
                    if d <= limit {
                        visit(self.ids[slot] as usize, d);
                    }
                }
            }
            Node::Split { axis, value, right } => {
                let axis = axis as usize;
                let diff = x[axis] - value;
                let (near, far) = if diff <= 0.0 {
                    (node + 1, right as usize)
                } else {
                    (right as usize, node + 1)
                };
                self.within_node(near, x, limit, norm, offsets, visit);

                let saved = offsets[axis];
                offsets[axis] = norm.axis_term(diff);
                if box_bound(norm, offsets) <= limit {
                    self.within_node(far, x, limit, norm, offsets, visit);
                }
                offsets[axis] = saved;
            }
        }
    }
}

/// Lower bound on the reduced distance to any point of a cell whose
/// per-axis gaps are `offsets`. Accumulated in axis order, exactly like
/// `Norm::reduced`, so floating-point monotonicity keeps it a true lower
/// bound of every computed point distance in the cell.
#[inline]
fn box_bound(norm: Norm, offsets: &[f64]) -> f64 {
    offsets.iter().fold(0.0, |acc, &t| norm.combine(acc, t))
}

fn build_node(coords: &[f64], dim: usize, ids: &mut [u32], offset: usize, nodes: &mut Vec<Node>) {
    let len = ids.len();
    let coord = |i: u32, axis: usize| coords[i as usize * dim + axis];

    let leaf = Node::Leaf {
        start: offset as u32,
        end: (offset + len) as u32,
    };
    if len <= LEAF_SIZE {
        nodes.push(leaf);
        return;
    }

    let mut axis = 0;
    let mut widest = -1.0;
    for a in 0..dim {
        let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            let c = coord(i, a);
            (lo.min(c), hi.max(c))
        });
        if hi - lo > widest {
            widest = hi - lo;
            axis = a;
        }
    }
    if widest <= 0.0 {
        // All points coincide.
        nodes.push(leaf);
        return;
    }

    let mid = len / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| coord(a, axis).total_cmp(&coord(b, axis)));
    let value = coord(ids[mid], axis);

    let me = nodes.len();
    nodes.push(Node::Split {
        axis: axis as u32,
        value,
        right: 0,
    });
    let (left_ids, right_ids) = ids.split_at_mut(mid);
    build_node(coords, dim, left_ids, offset, nodes);
    let right = nodes.len() as u32;
    build_node(coords, dim, right_ids, offset + mid, nodes);
    if let Node::Split { right: r, .. } = &mut nodes[me] {
        *r = right;
    }
}
