//! Baseline measures: cylindrical range images, bilinear up-sampling,
//! Chamfer distance and masked reconstruction errors, plus the noise sweep
//! that scores increasingly distorted clouds.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::cloud::{dist2, norm, Point, PointCloud};
use crate::error::{Error, Result};
use crate::net::MetricModel;
use crate::pcgen::{add_range_noise, GeneratorKind, ScanPattern};
use crate::rng::derive_seed;
use crate::score::score_cloud;
use crate::spatial::knn;

/// Value stored in unmeasured pixels.
pub const SENTINEL: f32 = 0.0;

pub const RANGE_IMAGE_MAGIC: &[u8; 8] = b"PCRLRIMG";
pub const RANGE_IMAGE_VERSION: u32 = 1;

/// Supported vertical up-sampling factors.
pub const UPSAMPLE_FACTORS: [usize; 3] = [2, 4, 8];

/// Dense `rows × cols` range image with per-pixel measured mask and the
/// elevation / azimuth of every row and column (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub rows: usize,
    pub cols: usize,
    pub ranges: Vec<f32>,
    pub mask: Vec<bool>,
    pub elevations: Vec<f64>,
    pub azimuths: Vec<f64>,
}

impl RangeImage {
    /// Fully masked image with the calibration of `pattern`.
    pub fn empty(pattern: &ScanPattern) -> Self {
        let n = pattern.cells();
        Self {
            rows: pattern.rows,
            cols: pattern.cols,
            ranges: vec![SENTINEL; n],
            mask: vec![false; n],
            elevations: (0..pattern.rows).map(|r| pattern.elevation(r)).collect(),
            azimuths: (0..pattern.cols).map(|c| pattern.azimuth(c)).collect(),
        }
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let i = row * self.cols + col;
        self.mask[i].then_some(self.ranges[i])
    }

    pub fn measured(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Layout (little-endian):
    /// magic `PCRLRIMG`, `u32` version, `u32` rows, `u32` cols,
    /// `rows` × `f64` elevations, `cols` × `f64` azimuths,
    /// `rows·cols` × `f32` ranges (row-major),
    /// `ceil(rows·cols / 8)` mask bytes, pixel `i` in bit `i % 8` of byte `i / 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(RANGE_IMAGE_MAGIC);
        out.extend_from_slice(&RANGE_IMAGE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in self.elevations.iter().chain(&self.azimuths) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for r in &self.ranges {
            out.extend_from_slice(&r.to_le_bytes());
        }
        let mut packed = vec![0u8; self.mask.len().div_ceil(8)];
        for (i, m) in self.mask.iter().enumerate() {
            if *m {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::malformed(
                    "range image",
                    pos as u64,
                    format!("truncated: needed {n} more bytes"),
                ));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != RANGE_IMAGE_MAGIC {
            return Err(Error::malformed("range image", 0, "bad magic"));
        }
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != RANGE_IMAGE_VERSION {
            return Err(Error::malformed(
                "range image",
                8,
                format!("unsupported version {version}"),
            ));
        }
        let rows = u32_at(take(4)?) as usize;
        let cols = u32_at(take(4)?) as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::malformed("range image", 12, "image too large"))?;
        let f64s = |s: &[u8]| -> Vec<f64> {
            s.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        let elevations = f64s(take(rows * 8)?);
        let azimuths = f64s(take(cols * 8)?);
        let ranges: Vec<f32> = take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let packed = take(n.div_ceil(8))?;
        let mask = (0..n).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
        if pos != bytes.len() {
            return Err(Error::malformed("range image", pos as u64, "trailing bytes"));
        }
        Ok(Self {
            rows,
            cols,
            ranges,
            mask,
            elevations,
            azimuths,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub image: RangeImage,
    /// Points outside the pattern's angular span or at the origin.
    pub dropped: usize,
}

/// Nearest-bin cylindrical projection. When several points fall into one
/// pixel the smallest range is kept.
pub fn project(pc: &PointCloud, pattern: &ScanPattern) -> Result<Projection> {
    pattern.validate()?;
    let mut image = RangeImage::empty(pattern);
    let mut dropped = 0;
    for p in &pc.points {
        let r = norm(p);
        if !(r > 0.0) || !r.is_finite() {
            dropped += 1;
            continue;
        }
        match pattern.cell_of(p) {
            Some((row, col)) => {
                let i = row * image.cols + col;
                let r = r as f32;
                if !image.mask[i] || r < image.ranges[i] {
                    image.ranges[i] = r;
                    image.mask[i] = true;
                }
            }
            None => dropped += 1,
        }
    }
    Ok(Projection { image, dropped })
}

/// Measured pixels back to points, row-major.
pub fn unproject(img: &RangeImage) -> PointCloud {
    let mut points = Vec::with_capacity(img.measured());
    for row in 0..img.rows {
        let (se, ce) = img.elevations[row].sin_cos();
        for col in 0..img.cols {
            if let Some(r) = img.get(row, col) {
                let (sa, ca) = img.azimuths[col].sin_cos();
                let r = r as f64;
                points.push([r * ce * ca, r * ce * sa, r * se]);
            }
        }
    }
    PointCloud::new(points)
}

/// Source row position of output row `i` under align-corners resampling
/// from `rows` to `rows * factor` rows.
fn source_position(i: usize, rows: usize, factor: usize) -> f64 {
    if rows == 1 {
        0.0
    } else {
        i as f64 * (rows - 1) as f64 / (rows * factor - 1) as f64
    }
}

/// Vertical linear interpolation to `rows · factor` rows with aligned
/// corners: the first and last output rows coincide with the first and last
/// input rows. An output pixel is measured iff every input pixel with a
/// non-zero weight is measured. Elevations are interpolated the same way.
pub fn bilinear_upsample(img: &RangeImage, factor: usize) -> Result<RangeImage> {
    if !UPSAMPLE_FACTORS.contains(&factor) {
        return Err(Error::param(format!(
            "unsupported up-sampling factor {factor}, expected one of {UPSAMPLE_FACTORS:?}"
        )));
    }
    if img.rows == 0 {
        return Err(Error::Empty("range image"));
    }
    let rows = img.rows * factor;
    let cols = img.cols;
    let mut out = RangeImage {
        rows,
        cols,
        ranges: vec![SENTINEL; rows * cols],
        mask: vec![false; rows * cols],
        elevations: Vec::with_capacity(rows),
        azimuths: img.azimuths.clone(),
    };
    for i in 0..rows {
        let s = source_position(i, img.rows, factor);
        let lo = (s.floor() as usize).min(img.rows - 1);
        let t = s - lo as f64;
        let hi = if t > 0.0 { lo + 1 } else { lo };
        out.elevations
            .push(img.elevations[lo] + t * (img.elevations[hi] - img.elevations[lo]));
        for c in 0..cols {
            let a = lo * cols + c;
            let b = hi * cols + c;
            if img.mask[a] && img.mask[b] {
                let (ra, rb) = (img.ranges[a] as f64, img.ranges[b] as f64);
                out.ranges[i * cols + c] = (ra + t * (rb - ra)) as f32;
                out.mask[i * cols + c] = true;
            }
        }
    }
    Ok(out)
}

/// Symmetric Chamfer distance: the mean squared nearest-neighbour distance
/// from `a` to `b` plus the same from `b` to `a`.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer input"));
    }
    Ok(directed_mean_sq(&a.points, &b.points)? + directed_mean_sq(&b.points, &a.points)?)
}

fn directed_mean_sq(from: &[Point], to: &[Point]) -> Result<f64> {
    let nn = knn(to, from, 1)?;
    let sum: f64 = from.iter().zip(&nn.indices).map(|(p, &j)| dist2(p, &to[j])).sum();
    Ok(sum / from.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Mse,
    Mae,
}

/// Mean squared or absolute range difference over pixels measured in both
/// images.
pub fn masked_error(pred: &RangeImage, gt: &RangeImage, kind: ErrorKind) -> Result<f64> {
    if pred.rows != gt.rows || pred.cols != gt.cols {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, ground truth {}x{}",
            pred.rows, pred.cols, gt.rows, gt.cols
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..pred.ranges.len() {
        if pred.mask[i] && gt.mask[i] {
            let d = pred.ranges[i] as f64 - gt.ranges[i] as f64;
            sum += match kind {
                ErrorKind::Mse => d * d,
                ErrorKind::Mae => d.abs(),
            };
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("common measured pixels"));
    }
    Ok(sum / n as f64)
}

/// Mean and population standard deviation of the scene scores at one noise
/// level.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub sigma: f64,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

/// Score `clouds` clouds from `generator` after adding range noise of each
/// σ. The same base clouds and noise seeds are used at every level.
pub fn noise_sweep(
    model: &MetricModel<f32>,
    generator: &GeneratorKind,
    pattern: &ScanPattern,
    sigmas: &[f64],
    clouds: usize,
    seed: u64,
) -> Result<Vec<NoiseRow>> {
    if clouds == 0 {
        return Err(Error::param("noise sweep needs at least one cloud"));
    }
    let base = (0..clouds as u64)
        .into_par_iter()
        .map(|i| generator.generate(pattern, derive_seed(derive_seed(seed, 0), i)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let scores = base
            .par_iter()
            .enumerate()
            .map(|(i, pc)| {
                let noisy = add_range_noise(pc, sigma, derive_seed(derive_seed(seed, 1), i as u64))?;
                Ok(score_cloud(model, &noisy.cloud)?.scene)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = scores.len() as f64;
        let mut mean = [0.0; 3];
        for s in &scores {
            for c in 0..3 {
                mean[c] += s[c] / n;
            }
        }
        let mut std = [0.0; 3];
        for s in &scores {
            for c in 0..3 {
                std[c] += (s[c] - mean[c]).powi(2) / n;
            }
        }
        rows.push(NoiseRow {
            sigma,
            mean,
            std: std.map(f64::sqrt),
        });
    }
    Ok(rows)
}

pub fn noise_sweep_csv(rows: &[NoiseRow]) -> String {
    let mut s = String::from("sigma,real_mean,real_std,synthetic_mean,synthetic_std,misc_mean,misc_std\n");
    for r in rows {
        let _ = write!(s, "{}", r.sigma);
        for c in 0..3 {
            let _ = write!(s, ",{:.6},{:.6}", r.mean[c], r.std[c]);
        }
        s.push('\n');
    }
    s
}

/// Per-scan comparison of ground truth against its bilinear reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub scan: usize,
    pub mse: f64,
    pub mae: f64,
    pub chamfer: f64,
    /// Realism of the ground-truth and the reconstructed cloud, when a model
    /// is supplied.
    pub realism: Option<(f64, f64)>,
}

/// Up-sampling baseline on procedural scans.
///
/// Ground truth is scan `i` of `generator` on `pattern`. The low-resolution
/// input is the same scene seen by a sensor with `pattern.rows / factor`
/// beams over the same elevation span, so that align-corners up-sampling
/// lands exactly on the ground-truth rows.
pub fn upsampling_baseline(
    model: Option<&MetricModel<f32>>,
    generator: &GeneratorKind,
    pattern: &ScanPattern,
    factor: usize,
    scans: usize,
    seed: u64,
) -> Result<Vec<BaselineRow>> {
    if !pattern.rows.is_multiple_of(factor) || pattern.rows / factor < 2 {
        return Err(Error::param(format!(
            "{} rows cannot be reduced by a factor of {factor}",
            pattern.rows
        )));
    }
    let low = pattern
        .clone()
        .with_resolution(pattern.rows / factor, pattern.cols);
    (0..scans)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let gt_cloud = generator.generate(pattern, s)?;
            let gt = project(&gt_cloud, pattern)?.image;
            let lr = project(&generator.generate(&low, s)?, &low)?.image;
            let up = bilinear_upsample(&lr, factor)?;
            let up_cloud = unproject(&up);
            let realism = match model {
                Some(m) => Some((
                    score_cloud(m, &gt_cloud)?.realism(),
                    score_cloud(m, &up_cloud)?.realism(),
                )),
                None => None,
            };
            Ok(BaselineRow {
                scan: i,
                mse: masked_error(&up, &gt, ErrorKind::Mse)?,
                mae: masked_error(&up, &gt, ErrorKind::Mae)?,
                chamfer: chamfer(&up_cloud, &gt_cloud)?,
                realism,
            })
        })
        .collect()
}

pub fn baseline_csv(rows: &[BaselineRow]) -> String {
    let mut s = String::from("scan,mse,mae,chamfer,realism_gt,realism_upsampled\n");
    for r in rows {
        let (a, b) = match r.realism {
            Some((a, b)) => (format!("{a:.6}"), format!("{b:.6}")),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{a},{b}", r.scan, r.mse, r.mae, r.chamfer);
    }
    s
}
