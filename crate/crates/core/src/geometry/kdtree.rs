use super::{dist2, Vec3};
use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 12;

/// k nearest neighbors of a query, closest first.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f64, left: usize, right: usize },
}

/// Static 3-d tree with exact k-nearest-neighbor and radius queries.
///
/// Candidates are ordered by `(squared distance, index)`, so equidistant
/// points resolve to the lowest index regardless of tree layout.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut tree = KdTree { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // split along the widest extent
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let extent = hi - lo;
        let dim = extent.imax();
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| points[a][dim].total_cmp(&points[b][dim]));
        let value = self.points[self.order[mid]][dim];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { dim, value, left, right };
        id
    }

    /// Exact k nearest neighbors; ties broken by lower index.
    pub fn knn(&self, query: &Vec3, k: usize) -> Result<KnnResult> {
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if k > self.points.len() {
            return Err(Error::TooFewPoints { k, size: self.points.len() });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search_knn(0, query, k, &mut heap);
        let sorted = heap.into_sorted_vec();
        Ok(KnnResult {
            indices: sorted.iter().map(|c| c.index).collect(),
            distances: sorted.iter().map(|c| c.d2.sqrt()).collect(),
        })
    }

    /// Index of the nearest point (lowest index among ties).
    pub fn nearest(&self, query: &Vec3) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        let mut heap = BinaryHeap::with_capacity(2);
        self.search_knn(0, query, 1, &mut heap);
        heap.pop().map(|c| c.index)
    }

    fn search_knn(&self, node: usize, query: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Candidate { d2: dist2(query, &self.points[i]), index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_knn(near, query, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search_knn(far, query, k, heap);
                }
            }
        }
    }

    /// All points with distance <= radius, sorted by (distance, index).
    pub fn within_radius(&self, query: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if !self.points.is_empty() {
            self.search_radius(0, query, radius * radius, &mut out);
        }
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out.into_iter().map(|(i, d2)| (i, d2.sqrt())).collect()
    }

    fn search_radius(&self, node: usize, query: &Vec3, r2: f64, out: &mut Vec<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d2 = dist2(query, &self.points[i]);
                    if d2 <= r2 {
                        out.push((i, d2));
                    }
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search_radius(near, query, r2, out);
                if diff * diff <= r2 {
                    self.search_radius(far, query, r2, out);
                }
            }
        }
    }
}
