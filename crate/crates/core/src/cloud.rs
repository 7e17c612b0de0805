//! Point clouds and their on-disk formats.
//!
//! Three formats are supported:
//!
//! - ASCII XYZ: one `x y z` line per point, values written as the shortest
//!   decimal that round-trips the `f32` value. Blank lines and lines starting
//!   with `#` are ignored on load.
//! - Binary: little-endian `f32` records, 3 columns (`x y z`) or 4 columns
//!   (`x y z intensity`, KITTI-style; intensity is discarded on load).
//!   Written files always use 3 columns.
//! - PLY (ASCII, write-only): `x y z` as `float`, `red green blue` as `uchar`.
//!
//! All formats store single precision, so saving a cloud, loading it back and
//! saving again yields byte-identical files.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the sensor frame, in meters.
pub type Point = [f64; 3];

/// The three proxy-task categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Category {
    Real = 0,
    Synthetic = 1,
    Misc = 2,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Real, Category::Synthetic, Category::Misc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Real => "real",
            Category::Synthetic => "synthetic",
            Category::Misc => "misc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "0" => Some(Category::Real),
            "synthetic" | "1" => Some(Category::Synthetic),
            "misc" | "2" => Some(Category::Misc),
            _ => None,
        }
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a cloud came from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub dataset: Option<usize>,
    pub category: Option<Category>,
    /// Set by the ray tracer when no ray hit any geometry.
    pub empty_scan: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub provenance: Provenance,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self {
            points,
            provenance: Provenance::default(),
        }
    }

    pub fn with_provenance(mut self, dataset: Option<usize>, category: Option<Category>) -> Self {
        self.provenance.dataset = dataset;
        self.provenance.category = category;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Apply a fixed permutation of the point order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn translated(&self, offset: Point) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
            provenance: self.provenance.clone(),
        }
    }

    // ---- ASCII XYZ ----

    pub fn to_xyz_string(&self) -> String {
        let mut out = String::with_capacity(self.points.len() * 24);
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32);
        }
        out
    }

    pub fn parse_xyz(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut offset = 0u64;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len() as u64;
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            let mut fields = body.split_whitespace();
            let mut p = [0.0f64; 3];
            for slot in p.iter_mut() {
                let tok = fields
                    .next()
                    .ok_or_else(|| Error::malformed("xyz file", start, "expected 3 columns"))?;
                let v: f32 = tok
                    .parse()
                    .map_err(|_| Error::malformed("xyz file", start, format!("not a number: {tok:?}")))?;
                if !v.is_finite() {
                    return Err(Error::malformed("xyz file", start, "non-finite coordinate"));
                }
                *slot = v as f64;
            }
            points.push(p);
        }
        Ok(Self::new(points))
    }

    pub fn save_xyz(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_xyz_string())?;
        Ok(())
    }

    pub fn load_xyz(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::malformed("xyz file", e.valid_up_to() as u64, "invalid utf-8"))?;
        Self::parse_xyz(text)
    }

    // ---- binary float32 ----

    /// Little-endian `f32` records of x, y, z and a zero intensity, the
    /// layout [`Self::load_auto`] expects for `.bin`.
    pub fn to_bin_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.points.len() * 16);
        for p in &self.points {
            for v in p {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            out.extend_from_slice(&0f32.to_le_bytes());
        }
        out
    }

    /// Decode little-endian `f32` records of `columns` values (3 or 4).
    pub fn parse_bin(bytes: &[u8], columns: usize) -> Result<Self> {
        if columns != 3 && columns != 4 {
            return Err(Error::param(format!(
                "binary columns must be 3 or 4, got {columns}"
            )));
        }
        let stride = columns * 4;
        let whole = bytes.len() / stride * stride;
        if whole != bytes.len() {
            return Err(Error::malformed(
                "binary point file",
                whole as u64,
                format!(
                    "trailing {} bytes do not form a {columns}-column record",
                    bytes.len() - whole
                ),
            ));
        }
        let mut points = Vec::with_capacity(bytes.len() / stride);
        for (r, rec) in bytes.chunks_exact(stride).enumerate() {
            let mut p = [0.0f64; 3];
            for (c, slot) in p.iter_mut().enumerate() {
                let at = c * 4;
                let v = f32::from_le_bytes(rec[at..at + 4].try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::malformed(
                        "binary point file",
                        (r * stride + at) as u64,
                        "non-finite coordinate",
                    ));
                }
                *slot = v as f64;
            }
            points.push(p);
        }
        Ok(Self::new(points))
    }

    pub fn save_bin(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bin_bytes())?;
        Ok(())
    }

    pub fn load_bin(path: impl AsRef<Path>, columns: usize) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::parse_bin(&bytes, columns)
    }

    /// Load by extension: `.xyz`/`.txt` as ASCII, `.bin` as 4-column binary
    /// (KITTI convention), anything else as 3-column binary.
    pub fn load_auto(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(e) if e == "xyz" || e == "txt" => Self::load_xyz(path),
            Some(e) if e == "bin" => Self::load_bin(path, 4),
            _ => Self::load_bin(path, 3),
        }
    }

    // ---- PLY ----

    /// ASCII PLY with one RGB colour per point.
    pub fn write_ply<W: Write>(&self, colors: &[[u8; 3]], mut w: W) -> Result<()> {
        if colors.len() != self.points.len() {
            return Err(Error::Shape(format!(
                "{} colours for {} points",
                colors.len(),
                self.points.len()
            )));
        }
        writeln!(w, "ply")?;
        writeln!(w, "format ascii 1.0")?;
        writeln!(w, "element vertex {}", self.points.len())?;
        writeln!(w, "property float x")?;
        writeln!(w, "property float y")?;
        writeln!(w, "property float z")?;
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
        writeln!(w, "end_header")?;
        for (p, c) in self.points.iter().zip(colors) {
            writeln!(
                w,
                "{} {} {} {} {} {}",
                p[0] as f32, p[1] as f32, p[2] as f32, c[0], c[1], c[2]
            )?;
        }
        Ok(())
    }

    pub fn save_ply(&self, path: impl AsRef<Path>, colors: &[[u8; 3]]) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_ply(colors, f)
    }
}

pub(crate) fn norm(p: &Point) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

pub(crate) fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Total lexicographic order on coordinates.
pub(crate) fn lex_cmp(a: &Point, b: &Point) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}
