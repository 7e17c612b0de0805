//! Controlled distortions: global range noise and azimuth-patch anomalies.

use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};

use crate::cloud::{norm, Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Ranges are clamped to this value so that large negative noise draws keep
/// the point on its own ray instead of flipping it through the sensor.
pub const MIN_RANGE: f64 = 1e-3;

/// Move `p` along its own ray by `eps` meters. `None` for the origin.
pub fn displace_along_ray(p: &Point, eps: f64) -> Option<Point> {
    let r = norm(p);
    if r == 0.0 {
        return None;
    }
    if eps == 0.0 {
        return Some(*p);
    }
    let s = (r + eps).max(MIN_RANGE) / r;
    Some([p[0] * s, p[1] * s, p[2] * s])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Noised {
    pub cloud: PointCloud,
    /// Points at the exact origin, left untouched.
    pub skipped: usize,
}

/// Draw ε ~ N(0, σ²) for every point in order and move it along its ray.
pub fn add_range_noise(pc: &PointCloud, sigma: f64, seed: u64) -> Result<Noised> {
    apply_masked_noise(pc, sigma, seed, |_| true)
}

fn apply_masked_noise(
    pc: &PointCloud,
    sigma: f64,
    seed: u64,
    mut selected: impl FnMut(&Point) -> bool,
) -> Result<Noised> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let mut skipped = 0;
    let mut out = pc.clone();
    for p in out.points.iter_mut() {
        let eps = normal.sample(&mut rng);
        if !selected(p) {
            continue;
        }
        match displace_along_ray(p, eps) {
            Some(q) => *p = q,
            None => skipped += 1,
        }
    }
    Ok(Noised { cloud: out, skipped })
}

/// Half-open azimuth interval `[start, start + width)`, wrapping at 2π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AzimuthInterval {
    pub start: f64,
    pub width: f64,
}

impl AzimuthInterval {
    pub fn new(start: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !start.is_finite() {
            return Err(Error::param("empty azimuth interval"));
        }
        Ok(Self { start, width })
    }

    pub fn contains(&self, p: &Point) -> bool {
        if self.width >= TAU {
            return true;
        }
        let az = p[1].atan2(p[0]);
        (az - self.start).rem_euclid(TAU) < self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchAnomaly {
    pub cloud: PointCloud,
    /// `true` for every point inside the interval.
    pub mask: Vec<bool>,
    pub skipped: usize,
}

/// Range noise restricted to the points whose azimuth lies in `interval`.
/// Uses the same per-point noise draws as [`add_range_noise`] with `seed`.
pub fn inject_patch_anomaly(
    pc: &PointCloud,
    interval: AzimuthInterval,
    sigma: f64,
    seed: u64,
) -> Result<PatchAnomaly> {
    let mask: Vec<bool> = pc.points.iter().map(|p| interval.contains(p)).collect();
    let mut it = mask.iter();
    let noised = apply_masked_noise(pc, sigma, seed, |_| *it.next().unwrap())?;
    Ok(PatchAnomaly {
        cloud: noised.cloud,
        mask,
        skipped: noised.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize, r: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let a = TAU * i as f64 / n as f64;
                    [r * a.cos(), r * a.sin(), 0.3 * (i % 5) as f64]
                })
                .collect(),
        )
    }

    #[test]
    fn zero_sigma_is_identity() {
        let pc = ring(100, 7.0);
        let out = add_range_noise(&pc, 0.0, 1).unwrap();
        assert_eq!(out.cloud, pc);
    }

    #[test]
    fn forced_displacement_scales_ray() {
        let q = displace_along_ray(&[3.0, 4.0, 0.0], 1.0).unwrap();
        assert!((q[0] - 3.6).abs() < 1e-12 && (q[1] - 4.8).abs() < 1e-12 && q[2] == 0.0);
        assert!(displace_along_ray(&[0.0, 0.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn origin_points_are_skipped_and_counted() {
        let pc = PointCloud::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0; 3]]);
        let out = add_range_noise(&pc, 0.5, 3).unwrap();
        assert_eq!(out.skipped, 2);
        assert_eq!(out.cloud.points[0], [0.0; 3]);
    }

    #[test]
    fn noise_keeps_directions() {
        let pc = ring(500, 20.0);
        let out = add_range_noise(&pc, 0.3, 2).unwrap();
        for (p, q) in pc.points.iter().zip(&out.cloud.points) {
            let (np, nq) = (norm(p), norm(q));
            for i in 0..3 {
                assert!((p[i] / np - q[i] / nq).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let pc = ring(20_000, 30.0);
        let out = add_range_noise(&pc, 0.03, 4).unwrap();
        let d: Vec<f64> = pc
            .points
            .iter()
            .zip(&out.cloud.points)
            .map(|(p, q)| norm(q) - norm(p))
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 4.0 * 0.03 / n.sqrt());
        assert!((sd - 0.03).abs() < 0.03 * 0.03);
    }

    #[test]
    fn empty_patch_leaves_cloud_untouched() {
        let pc = PointCloud::new(vec![[1.0, 0.0, 0.0], [-1.0, 0.1, 0.0]]);
        let iv = AzimuthInterval::new(1.0, 0.2).unwrap();
        let out = inject_patch_anomaly(&pc, iv, 1.0, 5).unwrap();
        assert_eq!(out.cloud, pc);
        assert!(out.mask.iter().all(|m| !m));
    }

    #[test]
    fn full_interval_matches_global_noise() {
        let pc = ring(300, 10.0);
        let iv = AzimuthInterval::new(0.0, TAU).unwrap();
        let a = inject_patch_anomaly(&pc, iv, 0.4, 6).unwrap();
        let b = add_range_noise(&pc, 0.4, 6).unwrap();
        assert_eq!(a.cloud, b.cloud);
        assert!(a.mask.iter().all(|m| *m));
    }

    #[test]
    fn only_masked_points_move() {
        let pc = ring(400, 10.0);
        let iv = AzimuthInterval::new(1.0, std::f64::consts::FRAC_PI_4).unwrap();
        let out = inject_patch_anomaly(&pc, iv, 0.5, 7).unwrap();
        let inside = out.mask.iter().filter(|m| **m).count();
        assert!(inside > 0 && inside < pc.len());
        for ((p, q), m) in pc.points.iter().zip(&out.cloud.points).zip(&out.mask) {
            assert_eq!(p != q, *m);
        }
    }

    #[test]
    fn rejects_empty_interval() {
        assert!(AzimuthInterval::new(0.0, 0.0).is_err());
        assert!(add_range_noise(&ring(3, 1.0), -1.0, 0).is_err());
    }
}
