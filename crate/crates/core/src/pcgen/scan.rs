use std::f64::consts::TAU;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};

/// Virtual rotating LiDAR.
///
/// Row 0 is the top beam (`elevation_max`), the last row is `elevation_min`.
/// Column `j` fires at `azimuth_start + azimuth_span * j / cols`, so for a full
/// revolution column 0 looks along +x.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPattern {
    pub rows: usize,
    pub cols: usize,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_start: f64,
    pub azimuth_span: f64,
    pub max_range: f64,
}

impl Default for ScanPattern {
    fn default() -> Self {
        Self::hdl64()
    }
}

impl ScanPattern {
    /// 64 × 1024, −24.8° to +2°, 120 m.
    pub fn hdl64() -> Self {
        Self {
            rows: 64,
            cols: 1024,
            elevation_min: (-24.8f64).to_radians(),
            elevation_max: 2.0f64.to_radians(),
            azimuth_start: 0.0,
            azimuth_span: TAU,
            max_range: 120.0,
        }
    }

    pub fn with_resolution(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::param("scan pattern needs rows >= 1 and cols >= 1"));
        }
        if !(self.elevation_min < self.elevation_max) {
            return Err(Error::param("elevation_min must be below elevation_max"));
        }
        if !(self.max_range > 0.0) || !self.max_range.is_finite() {
            return Err(Error::param("max_range must be positive"));
        }
        if !(self.azimuth_span > 0.0 && self.azimuth_span <= TAU + 1e-12) {
            return Err(Error::param("azimuth span must lie in (0, 2π]"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn row_step(&self) -> f64 {
        if self.rows > 1 {
            (self.elevation_max - self.elevation_min) / (self.rows - 1) as f64
        } else {
            self.elevation_max - self.elevation_min
        }
    }

    pub fn col_step(&self) -> f64 {
        self.azimuth_span / self.cols as f64
    }

    pub fn elevation(&self, row: usize) -> f64 {
        if self.rows == 1 {
            0.5 * (self.elevation_min + self.elevation_max)
        } else {
            self.elevation_max - self.row_step() * row as f64
        }
    }

    pub fn azimuth(&self, col: usize) -> f64 {
        self.azimuth_start + self.col_step() * col as f64
    }

    pub fn direction(&self, row: usize, col: usize) -> Point {
        direction_from_angles(self.elevation(row), self.azimuth(col))
    }

    /// Nearest (row, col) bin of a direction, or `None` when the elevation lies
    /// more than half a row outside the span or the azimuth outside a partial
    /// scan.
    pub fn cell_of(&self, p: &Point) -> Option<(usize, usize)> {
        let horiz = (p[0] * p[0] + p[1] * p[1]).sqrt();
        let elev = p[2].atan2(horiz);
        let row_f = if self.rows == 1 {
            (0.5 * (self.elevation_min + self.elevation_max) - elev) / self.row_step()
        } else {
            (self.elevation_max - elev) / self.row_step()
        };
        let row = row_f.round();
        if row < 0.0 || row > (self.rows - 1) as f64 {
            return None;
        }
        let az = (p[1].atan2(p[0]) - self.azimuth_start).rem_euclid(TAU);
        let col_f = (az / self.col_step()).round();
        let col = if self.azimuth_span >= TAU - 1e-12 {
            (col_f as usize) % self.cols
        } else {
            if col_f > (self.cols - 1) as f64 {
                return None;
            }
            col_f as usize
        };
        Some((row as usize, col))
    }
}

pub(crate) fn direction_from_angles(elevation: f64, azimuth: f64) -> Point {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    [ce * ca, ce * sa, se]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Sphere {
        center: Point,
        radius: f64,
    },
    /// Axis-aligned box.
    Cuboid {
        center: Point,
        half_extents: [f64; 3],
    },
}

impl Primitive {
    /// Absolute distance from `p` to the primitive's surface.
    pub fn surface_distance(&self, p: &Point) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => (crate::cloud::norm(&sub(p, center)) - radius).abs(),
            Primitive::Cuboid { center, half_extents } => {
                let d = sub(p, center);
                let q: Vec<f64> = (0..3).map(|i| d[i].abs() - half_extents[i]).collect();
                let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                (outside + inside).abs()
            }
        }
    }

    fn lowest_z(&self) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => center[2] - radius,
            Primitive::Cuboid { center, half_extents } => center[2] - half_extents[2],
        }
    }

    fn highest_z(&self) -> f64 {
        match self {
            Primitive::Sphere { center, radius } => center[2] + radius,
            Primitive::Cuboid { center, half_extents } => center[2] + half_extents[2],
        }
    }

    /// Nearest positive hit distance and outward surface normal.
    fn intersect(&self, dir: &Point) -> Option<(f64, Point)> {
        match self {
            Primitive::Sphere { center, radius } => {
                // |t d - c|^2 = r^2 with |d| = 1
                let b = dot(dir, center);
                let c = dot(center, center) - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = if b - s > EPS { b - s } else { b + s };
                if t <= EPS {
                    return None;
                }
                let hit = scale(dir, t);
                let n = scale(&sub(&hit, center), 1.0 / radius);
                Some((t, n))
            }
            Primitive::Cuboid { center, half_extents } => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                let mut near_axis = 0;
                let mut far_axis = 0;
                for i in 0..3 {
                    let lo = center[i] - half_extents[i];
                    let hi = center[i] + half_extents[i];
                    if dir[i] == 0.0 {
                        if 0.0 < lo || 0.0 > hi {
                            return None;
                        }
                        continue;
                    }
                    let a = lo / dir[i];
                    let b = hi / dir[i];
                    let (t0, t1) = if a < b { (a, b) } else { (b, a) };
                    if t0 > t_near {
                        t_near = t0;
                        near_axis = i;
                    }
                    if t1 < t_far {
                        t_far = t1;
                        far_axis = i;
                    }
                }
                if t_near > t_far || t_far <= EPS {
                    return None;
                }
                let (t, axis, entering) = if t_near > EPS {
                    (t_near, near_axis, true)
                } else {
                    (t_far, far_axis, false)
                };
                let mut n = [0.0; 3];
                let s = if entering {
                    -dir[axis].signum()
                } else {
                    dir[axis].signum()
                };
                n[axis] = s;
                Some((t, n))
            }
        }
    }
}

/// Ground plane plus scattered primitives.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneDescription {
    /// Height of the horizontal ground plane `z = h`, if present.
    pub ground: Option<f64>,
    pub primitives: Vec<Primitive>,
}

impl SceneDescription {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            let ok = match p {
                Primitive::Sphere { radius, .. } => *radius > 0.0,
                Primitive::Cuboid { half_extents, .. } => half_extents.iter().all(|h| *h > 0.0),
            };
            if !ok {
                return Err(Error::param(format!("primitive {i} has non-positive size")));
            }
            if let Some(g) = self.ground {
                if p.highest_z() <= g {
                    return Err(Error::param(format!("primitive {i} lies below the ground plane")));
                }
            }
            let _ = p.lowest_z();
        }
        Ok(())
    }

    /// Nearest surface hit along unit direction `dir` from the origin.
    pub fn trace(&self, dir: &Point, max_range: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if let Some(h) = self.ground {
            if dir[2] != 0.0 {
                let t = h / dir[2];
                if t > EPS && t <= max_range {
                    best = Some(Hit {
                        range: t,
                        normal: [0.0, 0.0, 1.0],
                        ground: true,
                    });
                }
            }
        }
        for p in &self.primitives {
            if let Some((t, normal)) = p.intersect(dir) {
                if t <= max_range && best.as_ref().is_none_or(|b| t < b.range) {
                    best = Some(Hit {
                        range: t,
                        normal,
                        ground: false,
                    });
                }
            }
        }
        best
    }

    pub fn nearest_surface_distance(&self, p: &Point) -> f64 {
        let mut d = f64::INFINITY;
        if let Some(h) = self.ground {
            d = (p[2] - h).abs();
        }
        for prim in &self.primitives {
            d = d.min(prim.surface_distance(p));
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub range: f64,
    pub normal: Point,
    pub ground: bool,
}

/// Ray-traced return tied to its scan cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CellReturn {
    pub row: usize,
    pub col: usize,
    pub dir: Point,
    pub hit: Hit,
}

/// Trace every (row, col) ray of `pattern` through `scene`. Rays that miss
/// produce no point; the cloud is ordered row-major by cell.
pub fn raytrace(scene: &SceneDescription, pattern: &ScanPattern) -> Result<PointCloud> {
    let returns = trace_cells(scene, pattern, |_, _, dir| dir)?;
    Ok(returns_to_cloud(&returns))
}

pub(crate) fn trace_cells(
    scene: &SceneDescription,
    pattern: &ScanPattern,
    mut steer: impl FnMut(usize, usize, Point) -> Point,
) -> Result<Vec<CellReturn>> {
    scene.validate()?;
    pattern.validate()?;
    let mut out = Vec::new();
    for row in 0..pattern.rows {
        for col in 0..pattern.cols {
            let dir = steer(row, col, pattern.direction(row, col));
            if let Some(hit) = scene.trace(&dir, pattern.max_range) {
                out.push(CellReturn { row, col, dir, hit });
            }
        }
    }
    Ok(out)
}

pub(crate) fn returns_to_cloud(returns: &[CellReturn]) -> PointCloud {
    let mut pc = PointCloud::new(returns.iter().map(|r| scale(&r.dir, r.hit.range)).collect());
    pc.provenance.empty_scan = pc.points.is_empty();
    pc
}

const EPS: f64 = 1e-9;

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: &Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}
