//! Exact nearest-neighbor orderings.
//!
//! Two interchangeable backends produce the same [`NeighborOrdering`]: a
//! brute-force scan and a k-d tree. Ties in distance are broken by ascending
//! row index, so both backends agree exactly, not just up to ties.

mod kdtree;

use std::cmp::Ordering;

pub use kdtree::KdTree;

use crate::data::{sq_dist, Dataset};
use crate::error::{Error, Result};

/// The `m` training rows closest to a query, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborOrdering {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl NeighborOrdering {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    fn from_sorted(cands: Vec<Candidate>) -> Self {
        let (distances, indices) = cands.into_iter().map(|c| (c.dist, c.index)).unzip();
        Self { indices, distances }
    }
}

/// `(squared distance, row index)` compared lexicographically.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub index: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.index.cmp(&other.index))
    }
}

pub(crate) fn check_query(data_dim: usize, n: usize, x: &[f64], m: usize) -> Result<()> {
    if x.len() != data_dim {
        return Err(Error::DimensionMismatch {
            expected: data_dim,
            actual: x.len(),
        });
    }
    if m == 0 || m > n {
        return Err(Error::out_of_range("m", m, format!("1 <= m <= {n}")));
    }
    Ok(())
}

/// Brute-force ordering: scores every row, keeps the `m` best.
pub fn order_neighbors(data: &Dataset, x: &[f64], m: usize) -> Result<NeighborOrdering> {
    check_query(data.dim(), data.len(), x, m)?;
    let mut cands: Vec<Candidate> = data
        .rows()
        .enumerate()
        .map(|(index, row)| Candidate {
            dist: sq_dist(x, row),
            index,
        })
        .collect();
    if m < cands.len() {
        cands.select_nth_unstable(m - 1);
        cands.truncate(m);
    }
    cands.sort_unstable();
    Ok(NeighborOrdering::from_sorted(cands))
}

/// Tree-accelerated ordering. Builds a throwaway [`KdTree`]; callers that
/// issue many queries against the same data should build the tree once.
pub fn order_neighbors_tree(data: &Dataset, x: &[f64], m: usize) -> Result<NeighborOrdering> {
    KdTree::build(data).order(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use rand::Rng;

    fn random_dataset(rng: &mut SeededRng, n: usize, d: usize, grid: Option<f64>) -> Dataset {
        let features: Vec<f64> = (0..n * d)
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                match grid {
                    Some(g) => (v / g).round() * g,
                    None => v,
                }
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        Dataset::new(features, labels, d).unwrap()
    }

    fn full_sort(data: &Dataset, x: &[f64]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.sort_by(|&a, &b| {
            sq_dist(x, data.row(a))
                .partial_cmp(&sq_dist(x, data.row(b)))
                .unwrap()
                .then(a.cmp(&b))
        });
        idx
    }

    #[test]
    fn one_dimensional_example() {
        let data = Dataset::new(vec![0.0, 1.0, 10.0], vec![0, 1, 1], 1).unwrap();
        let o = order_neighbors(&data, &[0.4], 2).unwrap();
        assert_eq!(o.indices, vec![0, 1]);
        let t = order_neighbors_tree(&data, &[0.4], 2).unwrap();
        assert_eq!(o, t);
    }

    #[test]
    fn ties_resolve_to_lower_index() {
        let data = Dataset::new(vec![1.0, 5.0, -1.0, 1.0], vec![0, 1, 1, 0], 1).unwrap();
        let o = order_neighbors(&data, &[0.0], 4).unwrap();
        assert_eq!(o.indices, vec![0, 2, 3, 1]);
        let o = order_neighbors(&data, &[0.0], 2).unwrap();
        assert_eq!(o.indices, vec![0, 2]);
        assert_eq!(order_neighbors_tree(&data, &[0.0], 2).unwrap(), o);
    }

    #[test]
    fn out_of_range_m_is_rejected() {
        let data = Dataset::new(vec![0.0, 1.0], vec![0, 1], 1).unwrap();
        assert!(order_neighbors(&data, &[0.0], 0).is_err());
        assert!(order_neighbors(&data, &[0.0], 3).is_err());
        assert!(order_neighbors_tree(&data, &[0.0], 3).is_err());
        assert!(order_neighbors(&data, &[0.0, 1.0], 1).is_err());
    }

    #[test]
    fn single_point() {
        let data = Dataset::new(vec![3.0, 4.0], vec![1], 2).unwrap();
        let o = order_neighbors_tree(&data, &[0.0, 0.0], 1).unwrap();
        assert_eq!(o.indices, vec![0]);
        assert_eq!(o.distances, vec![25.0]);
    }

    #[test]
    fn brute_force_matches_full_sort() {
        let mut rng = SeededRng::new(3, 0);
        let data = random_dataset(&mut rng, 50, 3, None);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let o = order_neighbors(&data, &x, 50).unwrap();
            assert_eq!(o.indices, full_sort(&data, &x));
            assert!(o.distances.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn tree_matches_brute_force_including_ties() {
        let mut rng = SeededRng::new(5, 0);
        for case in 0..300 {
            let n = rng.random_range(1..=200);
            let d = rng.random_range(1..=6);
            // Coarse grids force many exact ties.
            let grid = if case % 2 == 0 { Some(0.5) } else { None };
            let data = random_dataset(&mut rng, n, d, grid);
            let tree = KdTree::build(&data);
            let m = rng.random_range(1..=n);
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let v: f64 = rng.random_range(-1.2..1.2);
                    grid.map_or(v, |g| (v / g).round() * g)
                })
                .collect();
            assert_eq!(
                tree.order(&x, m).unwrap(),
                order_neighbors(&data, &x, m).unwrap(),
                "case {case}"
            );
        }
    }

    #[test]
    fn prefix_consistency() {
        let mut rng = SeededRng::new(9, 0);
        let data = random_dataset(&mut rng, 120, 4, Some(0.25));
        let tree = KdTree::build(&data);
        let x = [0.1, -0.2, 0.3, 0.0];
        let full = tree.order(&x, 120).unwrap();
        for m in [1, 5, 17, 60, 119] {
            let o = tree.order(&x, m).unwrap();
            assert_eq!(o.indices[..], full.indices[..m]);
        }
    }
}
