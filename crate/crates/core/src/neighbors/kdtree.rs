use std::collections::BinaryHeap;

use super::{check_query, Candidate, NeighborOrdering};
use crate::data::{sq_dist, Dataset};
use crate::error::Result;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    start: usize,
    end: usize,
    // Child node ids; `None` for leaves.
    children: Option<(usize, usize)>,
}

/// Exact k-d tree over a fixed set of rows.
///
/// Points are stored permuted into leaf order; `ids` maps each stored slot
/// back to its row in the source dataset. Bounding boxes are axis-aligned
/// and tight.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    ids: Vec<usize>,
    nodes: Vec<Node>,
    // 2 * dim values per node: lower corner then upper corner.
    bounds: Vec<f64>,
}

impl KdTree {
    pub fn build(data: &Dataset) -> Self {
        let dim = data.dim();
        let mut ids: Vec<usize> = (0..data.len()).collect();
        let mut nodes = Vec::new();
        let mut bounds = Vec::new();
        build_node(data, &mut ids, 0, &mut nodes, &mut bounds);
        let mut points = Vec::with_capacity(data.len() * dim);
        for &i in &ids {
            points.extend_from_slice(data.row(i));
        }
        Self {
            dim,
            points,
            ids,
            nodes,
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The `m` nearest rows to `x`, identical to
    /// [`order_neighbors`](super::order_neighbors) on the source dataset.
    pub fn order(&self, x: &[f64], m: usize) -> Result<NeighborOrdering> {
        check_query(self.dim, self.len(), x, m)?;
        let mut heap = BinaryHeap::with_capacity(m + 1);
        let mut stack = vec![(0usize, self.box_distance(0, x))];
        while let Some((node, lower)) = stack.pop() {
            if heap.len() == m {
                let worst: &Candidate = heap.peek().expect("heap is full");
                // Equal distances may still win on index, so only a strictly
                // larger bound prunes.
                if lower > worst.dist {
                    continue;
                }
            }
            let n = &self.nodes[node];
            match n.children {
                None => {
                    for slot in n.start..n.end {
                        let cand = Candidate {
                            dist: sq_dist(x, self.point(slot)),
                            index: self.ids[slot],
                        };
                        if heap.len() < m {
                            heap.push(cand);
                        } else if cand < *heap.peek().expect("heap is full") {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
                Some((a, b)) => {
                    let (da, db) = (self.box_distance(a, x), self.box_distance(b, x));
                    // Push the farther child first so the nearer is explored first.
                    if da <= db {
                        stack.push((b, db));
                        stack.push((a, da));
                    } else {
                        stack.push((a, da));
                        stack.push((b, db));
                    }
                }
            }
        }
        Ok(NeighborOrdering::from_sorted(heap.into_sorted_vec()))
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.points[slot * self.dim..(slot + 1) * self.dim]
    }

    /// Lower bound on the squared distance from `x` to any point in `node`.
    ///
    /// Accumulates per-coordinate gaps in the same order as `sq_dist`; since
    /// rounding is monotone, the bound never exceeds the computed distance of
    /// a contained point.
    fn box_distance(&self, node: usize, x: &[f64]) -> f64 {
        let b = &self.bounds[node * 2 * self.dim..(node + 1) * 2 * self.dim];
        let (lo, hi) = b.split_at(self.dim);
        let mut acc = 0.0;
        for j in 0..self.dim {
            let t = if x[j] < lo[j] {
                lo[j] - x[j]
            } else if x[j] > hi[j] {
                x[j] - hi[j]
            } else {
                0.0
            };
            acc += t * t;
        }
        acc
    }
}

fn build_node(
    data: &Dataset,
    ids: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
    bounds: &mut Vec<f64>,
) -> usize {
    let dim = data.dim();
    let id = nodes.len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for &i in ids.iter() {
        for (j, &v) in data.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    bounds.extend_from_slice(&lo);
    bounds.extend_from_slice(&hi);
    nodes.push(Node {
        start: offset,
        end: offset + ids.len(),
        children: None,
    });

    let (axis, spread) = (0..dim)
        .map(|j| (j, hi[j] - lo[j]))
        .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best });
    if ids.len() <= LEAF_SIZE || spread <= 0.0 {
        return id;
    }

    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        data.row(a)[axis].total_cmp(&data.row(b)[axis])
    });
    let (left, right) = ids.split_at_mut(mid);
    let l = build_node(data, left, offset, nodes, bounds);
    let r = build_node(data, right, offset + mid, nodes, bounds);
    nodes[id].children = Some((l, r));
    id
}
