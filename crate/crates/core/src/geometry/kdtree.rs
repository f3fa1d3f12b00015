//! Static 2-d KD-tree with index-limited k-nearest-neighbor queries.
//!
//! Every node records the smallest point index in its subtree, so a query
//! restricted to indices `< limit` skips whole subtrees of later points. This
//! is what lets one tree serve the "nearest predecessors" queries of the
//! training graph.
//!
//! Candidates are ranked by `(squared distance, index)`. A subtree is pruned
//! only when its box distance strictly exceeds the current k-th distance, so
//! ties resolve exactly as in a brute-force scan.

use super::dist2;

const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug)]
struct Node {
    lo: [f64; 2],
    hi: [f64; 2],
    min_idx: usize,
    /// Leaf: `start..end` into `perm`. Inner: children at `left`, `right`.
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

impl Node {
    fn is_leaf(&self) -> bool {
        self.left == usize::MAX
    }

    #[inline]
    fn box_dist2(&self, q: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for k in 0..2 {
            let d = if q[k] < self.lo[k] {
                self.lo[k] - q[k]
            } else if q[k] > self.hi[k] {
                q[k] - self.hi[k]
            } else {
                0.0
            };
            acc += d * d;
        }
        acc
    }
}

#[derive(Clone, Debug)]
pub struct KdTree<'a> {
    points: &'a [[f64; 2]],
    perm: Vec<usize>,
    nodes: Vec<Node>,
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 2]]) -> Self {
        let mut tree = Self { points, perm: (0..points.len()).collect(), nodes: Vec::new() };
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

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        let mut min_idx = usize::MAX;
        for &i in &self.perm[start..end] {
            let p = self.points[i];
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            min_idx = min_idx.min(i);
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, min_idx, start, end, left: usize::MAX, right: usize::MAX });
        if end - start > LEAF_SIZE {
            let axis = if hi[0] - lo[0] >= hi[1] - lo[1] { 0 } else { 1 };
            let mid = start + (end - start) / 2;
            let pts = self.points;
            self.perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
            });
            let left = self.build(start, mid);
            let right = self.build(mid, end);
            self.nodes[id].left = left;
            self.nodes[id].right = right;
        }
        id
    }

    /// The `k` nearest points to `q` among indices `< limit`, sorted by
    /// `(squared distance, index)`. Returns fewer than `k` only when fewer
    /// points are eligible.
    pub fn nearest(&self, q: [f64; 2], k: usize, limit: usize) -> Vec<(f64, usize)> {
        let mut best = Vec::with_capacity(k + 1);
        if k > 0 && !self.nodes.is_empty() {
            self.search(0, q, k, limit, &mut best);
        }
        best
    }

    fn search(&self, node: usize, q: [f64; 2], k: usize, limit: usize, best: &mut Vec<(f64, usize)>) {
        let n = &self.nodes[node];
        if n.min_idx >= limit {
            return;
        }
        if best.len() == k && n.box_dist2(q) > best[k - 1].0 {
            return;
        }
        if n.is_leaf() {
            for &i in &self.perm[n.start..n.end] {
                if i < limit {
                    offer(best, k, (dist2(q, self.points[i]), i));
                }
            }
            return;
        }
        let (l, r) = (&self.nodes[n.left], &self.nodes[n.right]);
        let (first, second) = if l.box_dist2(q) <= r.box_dist2(q) { (n.left, n.right) } else { (n.right, n.left) };
        self.search(first, q, k, limit, best);
        self.search(second, q, k, limit, best);
    }
}

#[inline]
fn less(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Inserts into a sorted list capped at `k`.
#[inline]
fn offer(best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    if best.len() == k {
        if !less(cand, best[k - 1]) {
            return;
        }
        best.pop();
    }
    let pos = best.iter().position(|&b| less(cand, b)).unwrap_or(best.len());
    best.insert(pos, cand);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(points: &[[f64; 2]], q: [f64; 2], k: usize, limit: usize) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = (0..limit.min(points.len())).map(|i| (dist2(q, points[i]), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn integer_grid_ties_match_brute_force() {
        let pts: Vec<[f64; 2]> = (0..400).map(|i| [(i % 20) as f64, (i / 20) as f64]).collect();
        let tree = KdTree::new(&pts);
        for (qi, &q) in pts.iter().enumerate().step_by(7) {
            for k in [1, 4, 9, 20] {
                assert_eq!(tree.nearest(q, k, qi), brute(&pts, q, k, qi));
                assert_eq!(tree.nearest(q, k, pts.len()), brute(&pts, q, k, pts.len()));
            }
        }
    }

    #[test]
    fn duplicate_points() {
        let pts = vec![[0.5, 0.5]; 40];
        let tree = KdTree::new(&pts);
        let got = tree.nearest([0.5, 0.5], 5, 30);
        assert_eq!(got.iter().map(|p| p.1).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn empty_and_zero_k() {
        let pts: Vec<[f64; 2]> = Vec::new();
        assert!(KdTree::new(&pts).nearest([0.0, 0.0], 3, 10).is_empty());
        let pts = vec![[0.0, 0.0]];
        assert!(KdTree::new(&pts).nearest([0.0, 0.0], 0, 10).is_empty());
    }
}
