//! Exact Euclidean nearest-neighbor search.
//!
//! [`KnnIndex`] is a balanced KD-tree (median split, axis cycling with depth).
//! [`BruteForceIndex`] scans every point and is both the verification oracle
//! and the fallback for high-dimensional corpora where the tree degrades to
//! a linear scan anyway.
//!
//! Both order results by squared distance computed in `f64`, then by
//! ascending ordinal, so they agree exactly including ties.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position of the point in the indexed corpus.
    pub ordinal: usize,
    pub distance: f64,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Exact neighbor queries over an immutable point set.
pub trait NeighborSearch: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dim(&self) -> usize;

    fn point(&self, ordinal: usize) -> &[f64];

    /// The `k` nearest points, ascending by distance then ordinal.
    fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>>;

    /// Every point with `distance <= radius`, ascending by distance then ordinal.
    fn query_radius(&self, query: &[f64], radius: f64) -> Result<Vec<Neighbor>>;

    /// Every indexed point, ascending by distance then ordinal.
    fn query_all(&self, query: &[f64]) -> Result<Vec<Neighbor>> {
        self.query_knn(query, self.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    fn from_vectors<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut data = Vec::new();
        let mut dim = None;
        for v in vectors {
            match dim {
                None => {
                    if v.is_empty() {
                        return Err(Error::InvalidArgument("dimension must be positive".into()));
                    }
                    dim = Some(v.len());
                }
                Some(d) if d != v.len() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: v.len(),
                    })
                }
                _ => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument("non-finite vector component".into()));
            }
            data.extend_from_slice(v);
        }
        let dim =
            dim.ok_or_else(|| Error::InvalidArgument("cannot index an empty corpus".into()))?;
        Ok(PointSet { data, dim })
    }

    fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn check_query(&self, query: &[f64]) -> Result<()> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        if query.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("non-finite query component".into()));
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}, got {k}",
                self.len()
            )));
        }
        Ok(())
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "radius must be >= 0, got {radius}"
        )));
    }
    Ok(())
}

/// Heap entry ordered by (squared distance, ordinal).
#[derive(Debug, Clone, Copy)]
struct Candidate {
    sq: f64,
    ordinal: usize,
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
        self.sq
            .total_cmp(&other.sq)
            .then(self.ordinal.cmp(&other.ordinal))
    }
}

impl From<Candidate> for Neighbor {
    fn from(c: Candidate) -> Self {
        Neighbor {
            ordinal: c.ordinal,
            distance: c.sq.sqrt(),
        }
    }
}

fn into_sorted_neighbors(mut candidates: Vec<Candidate>) -> Vec<Neighbor> {
    candidates.sort();
    candidates.into_iter().map(Neighbor::from).collect()
}

#[derive(Debug, Clone, PartialEq)]
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

/// Balanced KD-tree over a fixed point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    points: PointSet,
    // Ordinals permuted so every node covers a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KnnIndex {
    pub fn build<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let points = PointSet::from_vectors(vectors)?;
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::new();
        build_node(&points, &mut order, 0, 0, &mut nodes);
        Ok(KnnIndex {
            points,
            order,
            nodes,
        })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        Self::build(corpus.vectors())
    }

    fn search_knn(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &ordinal in &self.order[start..end] {
                    let c = Candidate {
                        sq: squared_distance(query, self.points.point(ordinal)),
                        ordinal,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_knn(near, query, k, heap);
                // Every point on the far side has squared distance >= diff².
                // Equality cannot prune: a tie may still win on ordinal.
                let bound = diff * diff;
                let full = heap.len() == k;
                if !full || bound <= heap.peek().expect("heap is full").sq {
                    self.search_knn(far, query, k, heap);
                }
            }
        }
    }

    fn search_radius(&self, node: usize, query: &[f64], radius: f64, out: &mut Vec<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &ordinal in &self.order[start..end] {
                    let sq = squared_distance(query, self.points.point(ordinal));
                    if sq.sqrt() <= radius {
                        out.push(Candidate { sq, ordinal });
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = query[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search_radius(near, query, radius, out);
                if (diff * diff).sqrt() <= radius {
                    self.search_radius(far, query, radius, out);
                }
            }
        }
    }
}

fn build_node(
    points: &PointSet,
    order: &mut [usize],
    offset: usize,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return id;
    }
    let axis = depth % points.dim;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points.point(a)[axis]
            .total_cmp(&points.point(b)[axis])
            .then(a.cmp(&b))
    });
    let value = points.point(order[mid])[axis];
    // Placeholder, patched once the children exist.
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(points, lo, offset, depth + 1, nodes);
    let right = build_node(points, hi, offset + mid, depth + 1, nodes);
    nodes[id] = Node::Split {
        axis,
        value,
        left,
        right,
    };
    id
}

impl NeighborSearch for KnnIndex {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn dim(&self) -> usize {
        self.points.dim
    }

    fn point(&self, ordinal: usize) -> &[f64] {
        self.points.point(ordinal)
    }

    fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.points.check_query(query)?;
        self.points.check_k(k)?;
        if k == self.len() {
            return Ok(brute_scan(&self.points, query, k));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search_knn(0, query, k, &mut heap);
        Ok(into_sorted_neighbors(heap.into_vec()))
    }

    fn query_radius(&self, query: &[f64], radius: f64) -> Result<Vec<Neighbor>> {
        self.points.check_query(query)?;
        check_radius(radius)?;
        let mut out = Vec::new();
        self.search_radius(0, query, radius, &mut out);
        Ok(into_sorted_neighbors(out))
    }
}

/// Linear-scan exact search.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceIndex {
    points: PointSet,
}

impl BruteForceIndex {
    pub fn build<'a>(vectors: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        Ok(BruteForceIndex {
            points: PointSet::from_vectors(vectors)?,
        })
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        Self::build(corpus.vectors())
    }
}

fn brute_scan(points: &PointSet, query: &[f64], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Candidate> = (0..points.len())
        .map(|ordinal| Candidate {
            sq: squared_distance(query, points.point(ordinal)),
            ordinal,
        })
        .collect();
    all.sort();
    all.truncate(k);
    all.into_iter().map(Neighbor::from).collect()
}

impl NeighborSearch for BruteForceIndex {
    fn len(&self) -> usize {
        self.points.len()
    }

    fn dim(&self) -> usize {
        self.points.dim
    }

    fn point(&self, ordinal: usize) -> &[f64] {
        self.points.point(ordinal)
    }

    fn query_knn(&self, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        self.points.check_query(query)?;
        self.points.check_k(k)?;
        Ok(brute_scan(&self.points, query, k))
    }

    fn query_radius(&self, query: &[f64], radius: f64) -> Result<Vec<Neighbor>> {
        self.points.check_query(query)?;
        check_radius(radius)?;
        let hits = (0..self.points.len())
            .filter_map(|ordinal| {
                let sq = squared_distance(query, self.points.point(ordinal));
                (sq.sqrt() <= radius).then_some(Candidate { sq, ordinal })
            })
            .collect();
        Ok(into_sorted_neighbors(hits))
    }
}

/// One-shot linear-scan k-NN over `vectors`.
pub fn brute_force_knn<'a>(
    vectors: impl IntoIterator<Item = &'a [f64]>,
    query: &[f64],
    k: usize,
) -> Result<Vec<Neighbor>> {
    BruteForceIndex::build(vectors)?.query_knn(query, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn slices(v: &[Vec<f64>]) -> impl Iterator<Item = &[f64]> {
        v.iter().map(Vec::as_slice)
    }

    #[test]
    fn three_four_five() {
        let pts = vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![6.0, 8.0]];
        let index = KnnIndex::build(slices(&pts)).unwrap();
        assert_eq!(index.len(), 3);
        let got = index.query_knn(&[0.0, 0.0], 2).unwrap();
        assert_eq!(
            got,
            vec![
                Neighbor {
                    ordinal: 0,
                    distance: 0.0
                },
                Neighbor {
                    ordinal: 1,
                    distance: 5.0
                }
            ]
        );
    }

    #[test]
    fn duplicates_keep_distinct_ordinals() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        let index = KnnIndex::build(slices(&pts)).unwrap();
        let got = index.query_all(&[1.0, 1.0]).unwrap();
        assert_eq!(
            got.iter().map(|n| n.ordinal).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(got.iter().all(|n| n.distance == 0.0));
    }

    #[test]
    fn singleton_corpus() {
        let pts = vec![vec![2.0, -1.0, 0.5]];
        let index = KnnIndex::build(slices(&pts)).unwrap();
        let got = index.query_all(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].ordinal, 0);
        let bf = brute_force_knn(slices(&pts), &[2.0, -1.0, 0.5], 1).unwrap();
        assert_eq!(
            bf,
            vec![Neighbor {
                ordinal: 0,
                distance: 0.0
            }]
        );
    }

    #[test]
    fn rejects_bad_arguments() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let index = KnnIndex::build(slices(&pts)).unwrap();
        assert!(matches!(
            index.query_knn(&[0.0, 0.0], 0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            index.query_knn(&[0.0, 0.0], 3),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            index.query_knn(&[0.0], 1),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
        assert!(brute_force_knn(slices(&pts), &[0.0, 0.0], 0).is_err());
        let empty: Vec<Vec<f64>> = vec![];
        assert!(KnnIndex::build(slices(&empty)).is_err());
        let zero_dim = vec![vec![]];
        assert!(KnnIndex::build(slices(&zero_dim)).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let pts: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64])
            .collect();
        let a = KnnIndex::build(slices(&pts)).unwrap();
        let b = KnnIndex::build(slices(&pts)).unwrap();
        assert_eq!(a, b);
    }

    fn grid_points() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
        (1usize..4, 1usize..120).prop_flat_map(|(dim, n)| {
            (
                prop::collection::vec(prop::collection::vec(-3i32..4, dim), n),
                prop::collection::vec(-3i32..4, dim),
                1..=n,
            )
                .prop_map(|(pts, q, k)| {
                    let to_f = |v: Vec<i32>| v.into_iter().map(|x| x as f64 * 0.5).collect();
                    (pts.into_iter().map(to_f).collect(), to_f(q), k)
                })
        })
    }

    proptest! {
        // Integer grids force many exact ties, exercising the ordinal tie-break.
        #[test]
        fn kd_tree_matches_brute_force((pts, q, k) in grid_points()) {
            let index = KnnIndex::build(slices(&pts)).unwrap();
            let oracle = BruteForceIndex::build(slices(&pts)).unwrap();
            prop_assert_eq!(index.query_knn(&q, k).unwrap(), oracle.query_knn(&q, k).unwrap());
        }

        #[test]
        fn radius_matches_brute_force((pts, q, _k) in grid_points(), r in 0.0f64..4.0) {
            let index = KnnIndex::build(slices(&pts)).unwrap();
            let oracle = BruteForceIndex::build(slices(&pts)).unwrap();
            prop_assert_eq!(index.query_radius(&q, r).unwrap(), oracle.query_radius(&q, r).unwrap());
        }

        #[test]
        fn metric_sanity(a in prop::collection::vec(-10.0f64..10.0, 5),
                         b in prop::collection::vec(-10.0f64..10.0, 5),
                         c in prop::collection::vec(-10.0f64..10.0, 5)) {
            prop_assert_eq!(euclidean_distance(&a, &a), 0.0);
            prop_assert_eq!(euclidean_distance(&a, &b), euclidean_distance(&b, &a));
            prop_assert!(euclidean_distance(&a, &c)
                <= euclidean_distance(&a, &b) + euclidean_distance(&b, &c) + 1e-9);
        }
    }
}
