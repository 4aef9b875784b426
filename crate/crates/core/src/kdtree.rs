//! Exact nearest-neighbor search over a static 3D point set.

use std::cmp::Ordering;

use crate::geometry::{dist2, Point3, PointCloud};

pub const DEFAULT_LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable k-d tree. Queries return the exact nearest stored point;
/// equal distances resolve to the lowest original index.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    leaf_size: usize,
}

impl SpatialIndex {
    pub fn new(pc: &PointCloud) -> Self {
        Self::with_leaf_size(pc, DEFAULT_LEAF_SIZE)
    }

    pub fn with_leaf_size(pc: &PointCloud, leaf_size: usize) -> Self {
        let leaf_size = leaf_size.max(1);
        let points = pc.points().to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build(&points, &mut order, 0, points.len(), leaf_size, &mut nodes);
        Self {
            points,
            order,
            nodes,
            leaf_size,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Returns `(index, squared_distance)` of the closest stored point.
    pub fn nearest(&self, q: &Point3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, usize::MAX, &mut best);
        best
    }

    /// Nearest stored point to stored point `i`, other than `i` itself.
    /// Returns `None` when the index holds a single point.
    pub fn nearest_other(&self, i: usize) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, &self.points[i], i, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, node: usize, q: &Point3, skip: usize, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if i == skip {
                        continue;
                    }
                    let d = dist2(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, skip, best);
                // `<=` keeps equal-distance candidates reachable for the tie rule.
                if diff * diff <= best.1 {
                    self.search(far, q, skip, best);
                }
            }
        }
    }
}

fn build(
    points: &[Point3],
    order: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if end - start <= leaf_size {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut order[start..end];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in slice.iter() {
        for k in 0..3 {
            lo[k] = lo[k].min(points[i][k]);
            hi[k] = hi[k].max(points[i][k]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap_or(0);
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        match points[a][axis].total_cmp(&points[b][axis]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        }
    });
    let value = points[slice[mid]][axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let left = build(points, order, start, start + mid, leaf_size, nodes);
    let right = build(points, order, start + mid, end, leaf_size, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

/// Linear-scan reference used by tests and tiny inputs.
pub fn nearest_brute_force(points: &[Point3], q: &Point3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}
