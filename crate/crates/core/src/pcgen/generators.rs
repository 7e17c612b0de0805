//! Scene builders and the per-category generators.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::distort::displace_along_ray;
use super::scan::{
    direction_from_angles, returns_to_cloud, scale, trace_cells, CellReturn, Primitive, ScanPattern,
    SceneDescription,
};
use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{substream, Rng};

/// Sensor mounting height above the ground (KITTI's HDL-64 sits at 1.73 m).
pub const DEFAULT_GROUND: f64 = -1.73;

fn uniform(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.gen_range(range.0..range.1)
    }
}

fn uniform_count(rng: &mut Rng, range: (usize, usize)) -> usize {
    if range.0 >= range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

fn disc_position(rng: &mut Rng, radii: (f64, f64)) -> (f64, f64) {
    let r = uniform(rng, (radii.0 * radii.0, radii.1 * radii.1)).sqrt();
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    (r * a.cos(), r * a.sin())
}

// ---------------------------------------------------------------------------
// GeometricSet

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricSetParams {
    pub pattern: ScanPattern,
    pub objects: usize,
    /// Sphere radius / cube half-size range, meters.
    pub size_range: (f64, f64),
    /// Inner and outer radius of the placement disc.
    pub placement: (f64, f64),
    pub ground_height: f64,
    /// Probability that an object is a cube rather than a sphere.
    pub cube_fraction: f64,
}

impl Default for GeometricSetParams {
    fn default() -> Self {
        Self {
            pattern: ScanPattern::hdl64(),
            objects: 20,
            size_range: (0.5, 2.0),
            placement: (5.0, 40.0),
            ground_height: DEFAULT_GROUND,
            cube_fraction: 0.5,
        }
    }
}

pub fn geometric_scene(params: &GeometricSetParams, rng: &mut Rng) -> SceneDescription {
    let g = params.ground_height;
    let primitives = (0..params.objects)
        .map(|_| {
            let (x, y) = disc_position(rng, params.placement);
            let s = uniform(rng, params.size_range);
            if rng.gen_bool(params.cube_fraction.clamp(0.0, 1.0)) {
                Primitive::Cuboid {
                    center: [x, y, g + s],
                    half_extents: [s, s, s],
                }
            } else {
                Primitive::Sphere {
                    center: [x, y, g + s],
                    radius: s,
                }
            }
        })
        .collect();
    SceneDescription {
        ground: Some(g),
        primitives,
    }
}

/// Spheres and cubes scattered on a ground plane, ray-traced without any
/// sensor artifacts.
pub fn gen_geometric_set(params: &GeometricSetParams, seed: u64) -> Result<PointCloud> {
    let scene = geometric_scene(params, &mut substream(seed, 0));
    super::scan::raytrace(&scene, &params.pattern)
}

// ---------------------------------------------------------------------------
// Street-like scenes shared by the Real surrogates and the simulated city

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateStyle {
    /// Dense street canyon: building façades, parked cars, poles.
    Urban,
    /// Sparse open terrain: vegetation blobs and a few buildings.
    Rural,
}

impl SurrogateStyle {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "urban" => Some(Self::Urban),
            "rural" => Some(Self::Rural),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Urban => "urban",
            Self::Rural => "rural",
        }
    }
}

pub fn street_scene(style: SurrogateStyle, clutter: f64, rng: &mut Rng) -> SceneDescription {
    let g = DEFAULT_GROUND;
    let mut prims = Vec::new();
    let scaled = |n: (usize, usize)| {
        (
            (n.0 as f64 * clutter).round() as usize,
            (n.1 as f64 * clutter).round() as usize,
        )
    };
    match style {
        SurrogateStyle::Urban => {
            for side in [-1.0f64, 1.0] {
                let mut x = -70.0 + uniform(rng, (0.0, 8.0));
                while x < 70.0 {
                    let len = uniform(rng, (6.0, 20.0));
                    let depth = uniform(rng, (4.0, 8.0));
                    let face = uniform(rng, (7.0, 11.0));
                    let height = uniform(rng, (4.0, 15.0));
                    prims.push(Primitive::Cuboid {
                        center: [x + len / 2.0, side * (face + depth), g + height / 2.0],
                        half_extents: [len / 2.0, depth, height / 2.0],
                    });
                    x += len + uniform(rng, (1.0, 6.0));
                }
            }
            for _ in 0..uniform_count(rng, scaled((4, 12))) {
                let along = uniform(rng, (-45.0, 45.0));
                if along.abs() < 3.5 {
                    continue;
                }
                let lane = if rng.gen_bool(0.5) { -1.0 } else { 1.0 } * uniform(rng, (2.0, 5.5));
                prims.push(Primitive::Cuboid {
                    center: [along, lane, g + 0.75],
                    half_extents: [2.2, 0.9, 0.75],
                });
            }
            for _ in 0..uniform_count(rng, scaled((3, 8))) {
                let along = uniform(rng, (-50.0, 50.0));
                let side = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
                let h = uniform(rng, (2.5, 4.0));
                prims.push(Primitive::Cuboid {
                    center: [along, side * uniform(rng, (6.0, 6.8)), g + h],
                    half_extents: [0.12, 0.12, h],
                });
            }
        }
        SurrogateStyle::Rural => {
            for _ in 0..uniform_count(rng, scaled((8, 16))) {
                let (x, y) = disc_position(rng, (6.0, 50.0));
                let r = uniform(rng, (1.0, 3.0));
                let lift = uniform(rng, (0.6, 1.4));
                prims.push(Primitive::Sphere {
                    center: [x, y, g + r * lift],
                    radius: r,
                });
            }
            for _ in 0..uniform_count(rng, scaled((1, 3))) {
                let (x, y) = disc_position(rng, (15.0, 50.0));
                let h = uniform(rng, (2.5, 4.0));
                prims.push(Primitive::Cuboid {
                    center: [x, y, g + h],
                    half_extents: [uniform(rng, (3.0, 6.0)), uniform(rng, (3.0, 6.0)), h],
                });
            }
        }
    }
    SceneDescription {
        ground: Some(g),
        primitives: prims,
    }
}

/// Noise-free ray trace of an urban street scene (the simulator stand-in).
pub fn gen_sim_city(pattern: &ScanPattern, clutter: f64, seed: u64) -> Result<PointCloud> {
    let scene = street_scene(SurrogateStyle::Urban, clutter, &mut substream(seed, 0));
    super::scan::raytrace(&scene, pattern)
}

// ---------------------------------------------------------------------------
// Real surrogates

/// Sensor artifacts applied on top of the ray trace.
///
/// Dropout probability per return is
/// `clamp(dropout_base + dropout_slope * (1 - cos θ_inc), 0, dropout_max)` with
/// θ_inc the angle between the ray and the surface normal. Azimuth jitter
/// offsets each ray by `jitter_max * col_step * k / jitter_levels` for an
/// integer `k` drawn uniformly from `[-jitter_levels, jitter_levels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorArtifacts {
    pub range_sigma: f64,
    pub dropout_base: f64,
    pub dropout_slope: f64,
    pub dropout_max: f64,
    pub jitter_levels: u32,
    pub jitter_max: f64,
}

impl Default for SensorArtifacts {
    fn default() -> Self {
        Self {
            range_sigma: 0.02,
            dropout_base: 0.05,
            dropout_slope: 0.5,
            dropout_max: 0.9,
            jitter_levels: 4,
            jitter_max: 0.25,
        }
    }
}

impl SensorArtifacts {
    pub fn none() -> Self {
        Self {
            range_sigma: 0.0,
            dropout_base: 0.0,
            dropout_slope: 0.0,
            dropout_max: 0.0,
            jitter_levels: 0,
            jitter_max: 0.0,
        }
    }

    pub fn dropout_probability(&self, cos_incidence: f64) -> f64 {
        (self.dropout_base + self.dropout_slope * (1.0 - cos_incidence.abs()))
            .clamp(0.0, self.dropout_max.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealSurrogateParams {
    pub pattern: ScanPattern,
    pub style: SurrogateStyle,
    pub clutter: f64,
    pub artifacts: SensorArtifacts,
}

impl RealSurrogateParams {
    pub fn new(style: SurrogateStyle) -> Self {
        Self {
            pattern: ScanPattern::hdl64(),
            style,
            clutter: 1.0,
            artifacts: SensorArtifacts::default(),
        }
    }
}

/// Street scene with range noise, incidence-dependent dropout and quantised
/// azimuth jitter. The scene uses sub-stream 0 of `seed`, the sensor sub-stream
/// 1, so two calls differing only in artifacts share the same geometry.
pub fn gen_real_surrogate(params: &RealSurrogateParams, seed: u64) -> Result<PointCloud> {
    let scene = street_scene(params.style, params.clutter, &mut substream(seed, 0));
    let mut rng = substream(seed, 1);
    let art = &params.artifacts;
    let pattern = &params.pattern;
    let step = pattern.col_step();
    let levels = art.jitter_levels as i64;
    let returns = trace_cells(&scene, pattern, |row, col, dir| {
        if levels == 0 || art.jitter_max == 0.0 {
            return dir;
        }
        let k = rng.gen_range(-levels..=levels);
        if k == 0 {
            return dir;
        }
        let az = pattern.azimuth(col) + art.jitter_max * step * k as f64 / levels as f64;
        direction_from_angles(pattern.elevation(row), az)
    })?;
    let noise =
        Normal::new(0.0, art.range_sigma.max(0.0)).map_err(|e| Error::param(format!("range sigma: {e}")))?;
    let mut kept: Vec<CellReturn> = Vec::with_capacity(returns.len());
    for mut r in returns {
        let p_drop = art.dropout_probability(super::scan::dot(&r.dir, &r.hit.normal));
        let u: f64 = rng.gen();
        let eps = noise.sample(&mut rng);
        if u < p_drop {
            continue;
        }
        if eps != 0.0 {
            r.hit.range = (r.hit.range + eps).max(super::distort::MIN_RANGE);
        }
        kept.push(r);
    }
    Ok(returns_to_cloud(&kept))
}

// ---------------------------------------------------------------------------
// Misc

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiscKind {
    /// Depth increases linearly over the rows.
    RowRamp = 1,
    /// Depth increases linearly over the columns.
    ColumnRamp = 2,
    /// Isotropic Gaussian blob.
    Gaussian = 3,
    /// Constant-distance rectangular patches over a scan.
    Patches = 4,
}

impl MiscKind {
    pub fn from_number(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Self::RowRamp),
            2 => Ok(Self::ColumnRamp),
            3 => Ok(Self::Gaussian),
            4 => Ok(Self::Patches),
            _ => Err(Error::param(format!("misc kind must be 1..=4, got {k}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiscParams {
    pub ramp_min: f64,
    pub ramp_max: f64,
    /// Range-noise σ for kinds 1, 2 and 4 is drawn uniformly from this interval.
    pub noise_sigma_range: (f64, f64),
    /// Blob σ for kind 3 is drawn uniformly from this interval.
    pub gaussian_sigma_range: (f64, f64),
    pub gaussian_points: usize,
    pub patch_count: (usize, usize),
    pub patch_rows: (usize, usize),
    pub patch_cols: (usize, usize),
    pub patch_distance: (f64, f64),
}

impl Default for MiscParams {
    fn default() -> Self {
        Self {
            ramp_min: 2.0,
            ramp_max: 50.0,
            noise_sigma_range: (0.0, 1.0),
            gaussian_sigma_range: (1.0, 30.0),
            gaussian_points: 16384,
            patch_count: (1, 4),
            patch_rows: (4, 32),
            patch_cols: (32, 256),
            patch_distance: (2.0, 50.0),
        }
    }
}

fn ramp_image(kind: MiscKind, pattern: &ScanPattern, params: &MiscParams) -> Vec<Option<f64>> {
    let span = params.ramp_max - params.ramp_min;
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut img = Vec::with_capacity(pattern.cells());
    for row in 0..pattern.rows {
        for col in 0..pattern.cols {
            let t = match kind {
                MiscKind::ColumnRamp => frac(col, pattern.cols),
                _ => frac(row, pattern.rows),
            };
            img.push(Some(params.ramp_min + span * t));
        }
    }
    img
}

fn image_to_cloud(
    img: &[Option<f64>],
    pattern: &ScanPattern,
    sigma: f64,
    rng: &mut Rng,
) -> Result<PointCloud> {
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::param(format!("noise sigma: {e}")))?;
    let mut points = Vec::with_capacity(img.len());
    for (cell, r) in img.iter().enumerate() {
        let Some(r) = r else { continue };
        let dir = pattern.direction(cell / pattern.cols, cell % pattern.cols);
        let eps = noise.sample(rng);
        points.push(displace_along_ray(&scale(&dir, *r), eps).unwrap_or(scale(&dir, *r)));
    }
    Ok(PointCloud::new(points))
}

pub fn gen_misc(kind: u32, pattern: &ScanPattern, params: &MiscParams, seed: u64) -> Result<PointCloud> {
    let kind = MiscKind::from_number(kind)?;
    let mut rng = substream(seed, 0);
    match kind {
        MiscKind::Gaussian => {
            let sigma = uniform(&mut rng, params.gaussian_sigma_range);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::param(format!("sigma: {e}")))?;
            let points: Vec<Point> = (0..params.gaussian_points)
                .map(|_| {
                    [
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    ]
                })
                .collect();
            Ok(PointCloud::new(points))
        }
        MiscKind::RowRamp | MiscKind::ColumnRamp => {
            pattern.validate()?;
            let img = ramp_image(kind, pattern, params);
            let sigma = uniform(&mut rng, params.noise_sigma_range);
            image_to_cloud(&img, pattern, sigma, &mut rng)
        }
        MiscKind::Patches => {
            pattern.validate()?;
            let mut img = if rng.gen_bool(0.5) {
                let gp = GeometricSetParams {
                    pattern: pattern.clone(),
                    ..Default::default()
                };
                let scene = geometric_scene(&gp, &mut rng);
                let mut img = vec![None; pattern.cells()];
                for r in trace_cells(&scene, pattern, |_, _, d| d)? {
                    img[r.row * pattern.cols + r.col] = Some(r.hit.range);
                }
                img
            } else {
                let ramp = if rng.gen_bool(0.5) {
                    MiscKind::RowRamp
                } else {
                    MiscKind::ColumnRamp
                };
                ramp_image(ramp, pattern, params)
            };
            for _ in 0..uniform_count(&mut rng, params.patch_count) {
                let h = uniform_count(&mut rng, params.patch_rows).clamp(1, pattern.rows);
                let w = uniform_count(&mut rng, params.patch_cols).clamp(1, pattern.cols);
                let top = rng.gen_range(0..=pattern.rows - h);
                let left = rng.gen_range(0..=pattern.cols - w);
                let d = uniform(&mut rng, params.patch_distance);
                for row in top..top + h {
                    for col in left..left + w {
                        img[row * pattern.cols + col] = Some(d);
                    }
                }
            }
            let sigma = uniform(&mut rng, params.noise_sigma_range);
            image_to_cloud(&img, pattern, sigma, &mut rng)
        }
    }
}
