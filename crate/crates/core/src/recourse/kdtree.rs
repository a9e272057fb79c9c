//! Static kd-tree over the rows of a matrix with caller-supplied metrics.
//!
//! Queries return the admissible point minimizing `(distance, index)`
//! lexicographically. A subtree is skipped only when its lower bound is
//! strictly larger than the current best, so equal-distance points with a
//! smaller index are never missed.

use nalgebra::DMatrix;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec<f64>,
    hi: Vec<f64>,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Split { left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(points: &DMatrix<f64>) -> Self {
        let mut tree = KdTree {
            nodes: Vec::new(),
            order: (0..points.nrows()).collect(),
        };
        if points.nrows() > 0 {
            let n = points.nrows();
            tree.grow(points, 0, n);
        }
        tree
    }

    fn grow(&mut self, pts: &DMatrix<f64>, start: usize, end: usize) -> usize {
        let d = pts.ncols();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in &self.order[start..end] {
            for j in 0..d {
                lo[j] = lo[j].min(pts[(i, j)]);
                hi[j] = hi[j].max(pts[(i, j)]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            lo: lo.clone(),
            hi: hi.clone(),
            kind: NodeKind::Leaf { start, end },
        });
        let widest = (0..d).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])));
        let Some(dim) = widest else { return id };
        if end - start <= LEAF_SIZE || hi[dim] <= lo[dim] {
            return id;
        }
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| pts[(a, dim)].total_cmp(&pts[(b, dim)]));
        let left = self.grow(pts, start, mid);
        let right = self.grow(pts, mid, end);
        self.nodes[id].kind = NodeKind::Split { left, right };
        id
    }

    /// `bound(lo, hi)` must never exceed `dist(i)` for any point `i` inside the
    /// box `[lo, hi]`.
    pub fn nearest(
        &self,
        bound: &dyn Fn(&[f64], &[f64]) -> f64,
        dist: &dyn Fn(usize) -> f64,
        admit: &dyn Fn(usize) -> bool,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        if !self.nodes.is_empty() {
            self.visit(0, bound, dist, admit, &mut best);
        }
        best
    }

    fn visit(
        &self,
        id: usize,
        bound: &dyn Fn(&[f64], &[f64]) -> f64,
        dist: &dyn Fn(usize) -> f64,
        admit: &dyn Fn(usize) -> bool,
        best: &mut Option<(usize, f64)>,
    ) {
        let node = &self.nodes[id];
        if let Some((_, bd)) = best {
            if bound(&node.lo, &node.hi) > *bd {
                return;
            }
        }
        match node.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !admit(i) {
                        continue;
                    }
                    let d = dist(i);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d < *bd || (d == *bd && i < *bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
            NodeKind::Split { left, right } => {
                let bl = bound(&self.nodes[left].lo, &self.nodes[left].hi);
                let br = bound(&self.nodes[right].lo, &self.nodes[right].hi);
                let (first, second) = if bl <= br { (left, right) } else { (right, left) };
                self.visit(first, bound, dist, admit, best);
                self.visit(second, bound, dist, admit, best);
            }
        }
    }
}
