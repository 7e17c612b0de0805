//! Reference implementations shared by the integration and acceptance tests.
//! They favour the obvious algorithm over speed and share no code with the
//! library beyond the point type.
#![allow(dead_code)]

use std::cmp::Ordering;

use pcreal_core::Point;

pub fn sq(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn lex(a: &Point, b: &Point) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

/// Candidate `i` beats `j` at distances `di`, `dj`: larger distance, then the
/// lexicographically smaller point, then the smaller index.
fn beats(points: &[Point], (di, i): (f64, usize), (dj, j): (f64, usize)) -> bool {
    match di.total_cmp(&dj) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => lex(&points[i], &points[j]).then(i.cmp(&j)) == Ordering::Less,
    }
}

/// Farthest-point sampling by definition: start at the point farthest from
/// the centroid (summed in lexicographic point order), then repeatedly take
/// the unselected point whose distance to the selected set is largest.
pub fn fps(points: &[Point], m: usize) -> Vec<usize> {
    let n = points.len();
    let m = m.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| lex(&points[a], &points[b]).then(a.cmp(&b)));
    let mut c = [0.0; 3];
    for &i in &order {
        for a in 0..3 {
            c[a] += points[i][a];
        }
    }
    for v in c.iter_mut() {
        *v /= n as f64;
    }
    let mut best = (sq(&points[0], &c), 0);
    for i in 1..n {
        let cand = (sq(&points[i], &c), i);
        if beats(points, cand, best) {
            best = cand;
        }
    }
    let mut selected = vec![best.1];
    let mut gap: Vec<f64> = points.iter().map(|p| sq(p, &points[best.1])).collect();
    while selected.len() < m {
        let mut pick: Option<(f64, usize)> = None;
        for i in 0..n {
            if selected.contains(&i) {
                continue;
            }
            let cand = (gap[i], i);
            if pick.is_none_or(|p| beats(points, cand, p)) {
                pick = Some(cand);
            }
        }
        let s = pick.unwrap().1;
        selected.push(s);
        for i in 0..n {
            gap[i] = gap[i].min(sq(&points[i], &points[s]));
        }
    }
    selected
}

/// k nearest neighbours of each query by full sort: distance, then
/// lexicographic point order, then index.
pub fn knn(points: &[Point], queries: &[Point], k: usize) -> Vec<Vec<usize>> {
    queries
        .iter()
        .map(|q| {
            let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (sq(q, p), i)).collect();
            all.sort_by(|a, b| {
                a.0.total_cmp(&b.0)
                    .then(lex(&points[a.1], &points[b.1]))
                    .then(a.1.cmp(&b.1))
            });
            all.into_iter().take(k).map(|(_, i)| i).collect()
        })
        .collect()
}

fn directed(from: &[Point], to: &[Point]) -> f64 {
    let mut sum = 0.0;
    for a in from {
        let mut best = f64::INFINITY;
        for b in to {
            let d = sq(a, b);
            if d < best {
                best = d;
            }
        }
        sum += best;
    }
    sum / from.len() as f64
}

/// Symmetric Chamfer distance with two nested loops per direction.
pub fn chamfer(a: &[Point], b: &[Point]) -> f64 {
    directed(a, b) + directed(b, a)
}

/// Relative error of two gradient vectors, `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = probe[i];
            probe[i] = v + h;
            let up = f(&probe);
            probe[i] = v - h;
            let down = f(&probe);
            probe[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central differences that skip coordinates where `x ± h` leaves the linear
/// piece `f` reports for `x` (its second result). Returns the gradient with
/// skipped entries as `None`.
pub fn numeric_gradient_on_piece(
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> (f64, Vec<u32>),
) -> Vec<Option<f64>> {
    let (_, here) = f(x);
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let v = probe[i];
            probe[i] = v + h;
            let (up, s_up) = f(&probe);
            probe[i] = v - h;
            let (down, s_down) = f(&probe);
            probe[i] = v;
            (s_up == here && s_down == here).then(|| (up - down) / (2.0 * h))
        })
        .collect()
}

/// Relative error over the entries `numeric` kept, and how many it skipped.
pub fn rel_error_kept(analytic: &[f64], numeric: &[Option<f64>]) -> (f64, usize) {
    let (a, n): (Vec<f64>, Vec<f64>) = analytic
        .iter()
        .zip(numeric)
        .filter_map(|(a, n)| n.map(|n| (*a, n)))
        .unzip();
    (rel_error(&a, &n), analytic.len() - a.len())
}

pub mod gradcheck;
