//! Bounding-volume hierarchy over boxes with median splits.

use crate::geom::{Aabb, Vec3};

#[derive(Clone, Debug)]
struct Node {
    bounds: Aabb,
    // Leaf: items[start..start+count]; inner: children at left, left+1.
    left: usize,
    start: usize,
    count: usize,
}

#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    items: Vec<usize>,
    boxes: Vec<Aabb>,
}

const LEAF: usize = 4;

impl Bvh {
    pub fn build(boxes: Vec<Aabb>) -> Bvh {
        let mut items: Vec<usize> = (0..boxes.len()).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() / LEAF + 1);
        if !boxes.is_empty() {
            nodes.push(Node { bounds: Aabb::empty(), left: 0, start: 0, count: boxes.len() });
            let mut stack = vec![0usize];
            while let Some(ni) = stack.pop() {
                let (start, count) = (nodes[ni].start, nodes[ni].count);
                let mut b = Aabb::empty();
                let mut cb = Aabb::empty();
                for &i in &items[start..start + count] {
                    b = b.merge(&boxes[i]);
                    cb.grow(&boxes[i].center());
                }
                nodes[ni].bounds = b;
                if count <= LEAF {
                    continue;
                }
                let ext = cb.max - cb.min;
                let axis = if ext.x >= ext.y && ext.x >= ext.z { 0 } else if ext.y >= ext.z { 1 } else { 2 };
                let mid = count / 2;
                items[start..start + count].select_nth_unstable_by(mid, |&a, &c| {
                    boxes[a].center()[axis].total_cmp(&boxes[c].center()[axis]).then(a.cmp(&c))
                });
                let left = nodes.len();
                nodes.push(Node { bounds: Aabb::empty(), left: 0, start, count: mid });
                nodes.push(Node { bounds: Aabb::empty(), left: 0, start: start + mid, count: count - mid });
                nodes[ni].left = left;
                nodes[ni].count = 0;
                stack.push(left);
                stack.push(left + 1);
            }
        }
        Bvh { nodes, items, boxes }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn is_leaf(&self, n: usize) -> bool {
        self.nodes[n].count > 0 || self.nodes[n].left == 0
    }

    /// All pairs `(i, j)`, `i < j`, whose boxes overlap, sorted.
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            if !self.nodes[a].bounds.overlaps(&self.nodes[b].bounds) {
                continue;
            }
            match (self.is_leaf(a), self.is_leaf(b)) {
                (true, true) => {
                    let na = &self.nodes[a];
                    let nb = &self.nodes[b];
                    for &i in &self.items[na.start..na.start + na.count] {
                        for &j in &self.items[nb.start..nb.start + nb.count] {
                            if (a != b || i < j) && i != j && self.boxes[i].overlaps(&self.boxes[j]) {
                                out.push((i.min(j), i.max(j)));
                            }
                        }
                    }
                }
                (false, _) if a == b => {
                    let l = self.nodes[a].left;
                    stack.push((l, l));
                    stack.push((l + 1, l + 1));
                    stack.push((l, l + 1));
                }
                (false, true) => {
                    let l = self.nodes[a].left;
                    stack.push((l, b));
                    stack.push((l + 1, b));
                }
                (_, false) => {
                    let l = self.nodes[b].left;
                    stack.push((a, l));
                    stack.push((a, l + 1));
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Items whose boxes overlap `query`.
    pub fn query(&self, query: &Aabb) -> Vec<usize> {
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds.overlaps(query) {
                continue;
            }
            if self.is_leaf(n) {
                out.extend(self.items[node.start..node.start + node.count].iter().filter(|&&i| self.boxes[i].overlaps(query)));
            } else {
                stack.push(node.left);
                stack.push(node.left + 1);
            }
        }
        out.sort_unstable();
        out
    }

    /// Smallest `dist(p, item)` using an exact per-item distance, pruned by boxes.
    pub fn nearest<F: Fn(usize) -> f64>(&self, p: &Vec3, dist: F) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        if self.nodes.is_empty() {
            return best;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if best.is_some_and(|(_, d)| node.bounds.distance(p) >= d) {
                continue;
            }
            if self.is_leaf(n) {
                for &i in &self.items[node.start..node.start + node.count] {
                    let d = dist(i);
                    if best.is_none_or(|(bi, bd)| d < bd || (d == bd && i < bi)) {
                        best = Some((i, d));
                    }
                }
            } else {
                let (l, r) = (node.left, node.left + 1);
                let (dl, dr) = (self.nodes[l].bounds.distance(p), self.nodes[r].bounds.distance(p));
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::v3;

    fn unit(c: Vec3, r: f64) -> Aabb {
        Aabb { min: c - Vec3::repeat(r), max: c + Vec3::repeat(r) }
    }

    #[test]
    fn pairs_match_brute_force() {
        let boxes: Vec<Aabb> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                unit(v3(t.sin() * 3.0, (1.3 * t).cos() * 3.0, (0.7 * t).sin()), 0.2 + 0.1 * (i % 3) as f64)
            })
            .collect();
        let mut brute = Vec::new();
        for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if boxes[i].overlaps(&boxes[j]) {
                    brute.push((i, j));
                }
            }
        }
        let bvh = Bvh::build(boxes.clone());
        assert_eq!(bvh.overlapping_pairs(), brute);
        let q = unit(v3(0.0, 0.0, 0.0), 1.0);
        let direct: Vec<usize> = (0..boxes.len()).filter(|&i| boxes[i].overlaps(&q)).collect();
        assert_eq!(bvh.query(&q), direct);
        let p = v3(0.3, -2.0, 0.1);
        let (i, d) = bvh.nearest(&p, |i| (boxes[i].center() - p).norm()).unwrap();
        let best = (0..boxes.len()).map(|i| (boxes[i].center() - p).norm()).fold(f64::INFINITY, f64::min);
        assert_eq!(d, best);
        assert_eq!((boxes[i].center() - p).norm(), best);
    }
}
