//! Farthest-point sampling, k-nearest-neighbour search and neighbourhood
//! grouping.
//!
//! All selections depend on the point *set* only. Distance ties are broken by
//! the lexicographic order of the coordinates, and the FPS seed point is the
//! point farthest from the centroid (itself summed in lexicographic order), so
//! permuting the input never changes which coordinates are selected.

use std::cmp::Ordering;

use crate::cloud::{dist2, lex_cmp, Point};
use crate::error::{Error, Result};

pub const DEFAULT_Q1: usize = 2048;
pub const DEFAULT_Q2: usize = 256;
pub const DEFAULT_K: usize = 10;

/// Indices of query points into a parent set, in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySet {
    pub indices: Vec<usize>,
    pub level: u8,
}

impl QuerySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn points(&self, parent: &[Point]) -> Vec<Point> {
        self.indices.iter().map(|&i| parent[i]).collect()
    }
}

/// `k` neighbour indices per query, flattened row-major, each row sorted by
/// ascending distance and then by coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborTable {
    pub k: usize,
    pub indices: Vec<usize>,
}

impl NeighborTable {
    pub fn queries(&self) -> usize {
        self.indices.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn row(&self, q: usize) -> &[usize] {
        &self.indices[q * self.k..(q + 1) * self.k]
    }
}

fn lex_order(points: &[Point]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| lex_cmp(&points[a], &points[b]).then(a.cmp(&b)));
    order
}

/// Greedy max–min subset selection of `m` points (all points when `m >= N`).
pub fn farthest_point_sampling(points: &[Point], m: usize) -> Result<QuerySet> {
    farthest_point_sampling_level(points, m, 1)
}

pub fn farthest_point_sampling_level(points: &[Point], m: usize, level: u8) -> Result<QuerySet> {
    if points.is_empty() {
        return Err(Error::Empty("farthest point sampling input"));
    }
    if m == 0 {
        return Err(Error::param("farthest point sampling needs m >= 1"));
    }
    let n = points.len();
    // Work in lexicographic order: the first strict maximum found is then the
    // lexicographically smallest of any tie.
    let order = lex_order(points);
    let sorted: Vec<Point> = order.iter().map(|&i| points[i]).collect();
    let m = m.min(n);

    let mut centroid = [0.0f64; 3];
    for p in &sorted {
        for a in 0..3 {
            centroid[a] += p[a];
        }
    }
    for c in centroid.iter_mut() {
        *c /= n as f64;
    }

    let mut first = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in sorted.iter().enumerate() {
        let d = dist2(p, &centroid);
        if d > best {
            best = d;
            first = i;
        }
    }

    // Struct-of-arrays copy for the inner loop. A selected point's running
    // minimum drops to zero, so it can only win again when every remaining
    // distance is zero (duplicates); that case falls back to the first
    // unselected point in lexicographic order.
    let xs: Vec<f64> = sorted.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = sorted.iter().map(|p| p[1]).collect();
    let zs: Vec<f64> = sorted.iter().map(|p| p[2]).collect();
    let mut selected = Vec::with_capacity(m);
    let mut min_d = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = first;
    loop {
        selected.push(order[current]);
        taken[current] = true;
        min_d[current] = 0.0;
        if selected.len() == m {
            break;
        }
        let (cx, cy, cz) = (xs[current], ys[current], zs[current]);
        let mut next = 0;
        let mut best = f64::NEG_INFINITY;
        for i in 0..n {
            let dx = xs[i] - cx;
            let dy = ys[i] - cy;
            let dz = zs[i] - cz;
            let d = dx * dx + dy * dy + dz * dz;
            let md = if d < min_d[i] { d } else { min_d[i] };
            min_d[i] = md;
            if md > best {
                best = md;
                next = i;
            }
        }
        if best <= 0.0 || taken[next] {
            next = (0..n).find(|&i| !taken[i]).expect("m <= n");
        }
        current = next;
    }
    Ok(QuerySet {
        indices: selected,
        level,
    })
}

#[inline]
fn neighbor_cmp(points: &[Point], a: (f64, usize), b: (f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| lex_cmp(&points[a.1], &points[b.1]))
        .then(a.1.cmp(&b.1))
}

/// The `min(k, N)` nearest points of `points` to each query.
///
/// Uses a k-d tree; the result is identical to [`knn_exhaustive`] because
/// subtrees are pruned only when their box is strictly farther than the
/// current k-th candidate, and candidates are ranked by the same total order.
pub fn knn(points: &[Point], queries: &[Point], k: usize) -> Result<NeighborTable> {
    check_knn_args(points, k)?;
    let k = k.min(points.len());
    let tree = KdTree::build(points);
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    let mut stack = Vec::new();
    for q in queries {
        best.clear();
        tree.query(q, k, &mut best, &mut stack);
        indices.extend(best.iter().map(|x| x.1));
    }
    Ok(NeighborTable { k, indices })
}

/// Reference implementation scanning every point for every query.
pub fn knn_exhaustive(points: &[Point], queries: &[Point], k: usize) -> Result<NeighborTable> {
    check_knn_args(points, k)?;
    let k = k.min(points.len());
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for q in queries {
        best.clear();
        for i in 0..points.len() {
            offer(points, &mut best, k, (dist2(&points[i], q), i));
        }
        indices.extend(best.iter().map(|x| x.1));
    }
    Ok(NeighborTable { k, indices })
}

fn check_knn_args(points: &[Point], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::Empty("nearest neighbour search set"));
    }
    if k == 0 {
        return Err(Error::param("nearest neighbour search needs k >= 1"));
    }
    Ok(())
}

/// Insert `cand` into the sorted candidate list `best` of capacity `k`.
#[inline]
fn offer(points: &[Point], best: &mut Vec<(f64, usize)>, k: usize, cand: (f64, usize)) {
    if best.len() == k {
        let worst = best[k - 1];
        if cand.0 > worst.0 || neighbor_cmp(points, cand, worst) != Ordering::Less {
            return;
        }
        best.pop();
    }
    let pos = best
        .binary_search_by(|x| neighbor_cmp(points, *x, cand))
        .unwrap_or_else(|e| e);
    best.insert(pos, cand);
}

const LEAF_SIZE: usize = 16;

struct KdNode {
    lo: Point,
    hi: Point,
    start: usize,
    end: usize,
    /// Child node indices; `usize::MAX` for leaves.
    children: (usize, usize),
}

struct KdTree<'a> {
    points: &'a [Point],
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl<'a> KdTree<'a> {
    fn build(points: &'a [Point]) -> Self {
        let mut tree = Self {
            points,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        tree.build_node(0, points.len());
        tree
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(KdNode {
            lo,
            hi,
            start,
            end,
            children: (usize::MAX, usize::MAX),
        });
        if end - start > LEAF_SIZE {
            let axis = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap();
            let mid = start + (end - start) / 2;
            let pts = self.points;
            self.order[start..end]
                .select_nth_unstable_by(mid - start, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
            let left = self.build_node(start, mid);
            let right = self.build_node(mid, end);
            self.nodes[id].children = (left, right);
        }
        id
    }

    /// Squared distance from `q` to the node's box; never exceeds the
    /// computed squared distance to any point inside it.
    #[inline]
    fn box_dist2(node: &KdNode, q: &Point) -> f64 {
        let mut d = [0.0f64; 3];
        for a in 0..3 {
            d[a] = if q[a] < node.lo[a] {
                node.lo[a] - q[a]
            } else if q[a] > node.hi[a] {
                q[a] - node.hi[a]
            } else {
                0.0
            };
        }
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    }

    fn query(&self, q: &Point, k: usize, best: &mut Vec<(f64, usize)>, stack: &mut Vec<(f64, usize)>) {
        stack.clear();
        stack.push((Self::box_dist2(&self.nodes[0], q), 0));
        while let Some((bound, id)) = stack.pop() {
            if best.len() == k && bound > best[k - 1].0 {
                continue;
            }
            let node = &self.nodes[id];
            if node.children.0 == usize::MAX {
                for &i in &self.order[node.start..node.end] {
                    offer(self.points, best, k, (dist2(&self.points[i], q), i));
                }
            } else {
                let (l, r) = node.children;
                let dl = Self::box_dist2(&self.nodes[l], q);
                let dr = Self::box_dist2(&self.nodes[r], q);
                if dl <= dr {
                    stack.push((dr, r));
                    stack.push((dl, l));
                } else {
                    stack.push((dl, l));
                    stack.push((dr, r));
                }
            }
        }
    }
}

/// Neighbour coordinates relative to their query, `[Q × K]` row-major. Each
/// row is re-sorted into canonical order (distance, then coordinates).
pub fn group_normalize(points: &[Point], queries: &[Point], table: &NeighborTable) -> Result<Vec<Point>> {
    if table.queries() != queries.len() {
        return Err(Error::Shape(format!(
            "neighbour table has {} rows for {} queries",
            table.queries(),
            queries.len()
        )));
    }
    let mut out = Vec::with_capacity(table.indices.len());
    let mut row: Vec<(f64, usize)> = Vec::with_capacity(table.k);
    for (qi, q) in queries.iter().enumerate() {
        row.clear();
        for &i in table.row(qi) {
            let p = points
                .get(i)
                .ok_or_else(|| Error::Shape(format!("neighbour index {i} out of range")))?;
            row.push((dist2(p, q), i));
        }
        row.sort_by(|a, b| neighbor_cmp(points, *a, *b));
        for &(_, i) in &row {
            let p = points[i];
            out.push([p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
        }
    }
    Ok(out)
}

/// Points in canonical (lexicographic) order, reduced to at most `budget`
/// points. The reduction keeps the points with the smallest coordinate hash,
/// which depends on the point set only.
pub fn canonical_subsample(points: &[Point], budget: usize) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    if pts.len() > budget {
        let key = |p: &Point| {
            let mut h = 0u64;
            for v in p {
                h = crate::rng::splitmix64(h ^ v.to_bits());
            }
            h
        };
        let mut keyed: Vec<(u64, Point)> = pts.iter().map(|p| (key(p), *p)).collect();
        keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| lex_cmp(&a.1, &b.1)));
        keyed.truncate(budget);
        pts = keyed.into_iter().map(|x| x.1).collect();
    }
    pts.sort_by(lex_cmp);
    pts
}
