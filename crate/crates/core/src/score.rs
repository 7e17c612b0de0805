//! Inference: per-query category probabilities, scene scores, anomaly maps
//! and latent-feature export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::{Category, Point, PointCloud};
use crate::error::{Error, Result};
use crate::net::{feature_extractor_forward, Geometry, MetricModel, Scalar};
use crate::spatial::knn;

/// Number of queries each point interpolates from in an anomaly map.
pub const MAP_NEIGHBORS: usize = 4;

/// Probabilities in category order (Real, Synthetic, Misc).
pub type Probs = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScores {
    pub queries: Vec<Point>,
    pub probs: Vec<Probs>,
    /// Mean of `probs` over all queries.
    pub scene: Probs,
}

impl QueryScores {
    fn from_rows(queries: Vec<Point>, rows: &[f32]) -> Self {
        let probs: Vec<Probs> = rows
            .chunks_exact(3)
            .map(|r| [r[0] as f64, r[1] as f64, r[2] as f64])
            .collect();
        let mut scene = [0.0; 3];
        for p in &probs {
            for c in 0..3 {
                scene[c] += p[c];
            }
        }
        let n = probs.len().max(1) as f64;
        scene.iter_mut().for_each(|s| *s /= n);
        Self {
            queries,
            probs,
            scene,
        }
    }

    /// The realism score: mean Real probability.
    pub fn realism(&self) -> f64 {
        self.scene[Category::Real.index()]
    }

    pub fn scene_category(&self) -> Category {
        let mut best = 0;
        for c in 1..3 {
            if self.scene[c] > self.scene[best] {
                best = c;
            }
        }
        Category::from_index(best).unwrap()
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ScoresDoc {
            scene: SceneDoc {
                real: self.scene[0],
                synthetic: self.scene[1],
                misc: self.scene[2],
            },
            queries: self
                .queries
                .iter()
                .zip(&self.probs)
                .map(|(q, p)| QueryDoc { xyz: *q, p: *p })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScoresDoc = serde_json::from_str(text)?;
        Ok(Self {
            queries: doc.queries.iter().map(|q| q.xyz).collect(),
            probs: doc.queries.iter().map(|q| q.p).collect(),
            scene: [doc.scene.real, doc.scene.synthetic, doc.scene.misc],
        })
    }

    /// `x,y,z,p_real,p_synthetic,p_misc`, one row per query.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,p_real,p_synthetic,p_misc\n");
        for (q, p) in self.queries.iter().zip(&self.probs) {
            let _ = writeln!(s, "{},{},{},{},{},{}", q[0], q[1], q[2], p[0], p[1], p[2]);
        }
        s
    }
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    real: f64,
    synthetic: f64,
    misc: f64,
}

#[derive(Serialize, Deserialize)]
struct QueryDoc {
    xyz: Point,
    p: Probs,
}

#[derive(Serialize, Deserialize)]
struct ScoresDoc {
    scene: SceneDoc,
    queries: Vec<QueryDoc>,
}

/// Score a cloud with dropout disabled.
pub fn score_cloud(model: &MetricModel<f32>, pc: &PointCloud) -> Result<QueryScores> {
    if pc.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let geom = model.geometry(&pc.points)?;
    Ok(score_geometry(model, &geom))
}

pub fn score_geometry(model: &MetricModel<f32>, geom: &Geometry) -> QueryScores {
    let inf = model.infer(geom);
    QueryScores::from_rows(geom.level2_queries.clone(), &inf.classifier)
}

/// Per-point category probabilities interpolated from the query scores.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    pub points: Vec<Point>,
    pub probs: Vec<Probs>,
    /// Queries each point draws from (`min(4, Q)`).
    pub neighbors: usize,
    /// Weights are `1 / d^power`.
    pub power: f64,
}

impl AnomalyMap {
    /// Misc → red, Real → green, Synthetic → blue.
    pub fn colors(&self) -> Vec<[u8; 3]> {
        let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        self.probs
            .iter()
            .map(|p| [ch(p[2]), ch(p[0]), ch(p[1])])
            .collect()
    }

    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<()> {
        PointCloud::new(self.points.clone()).save_ply(path, &self.colors())
    }

    /// Mean probabilities over the points selected by `mask`.
    pub fn mean_where(&self, mask: &[bool]) -> Option<Probs> {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (p, _) in self.probs.iter().zip(mask).filter(|(_, m)| **m) {
            for c in 0..3 {
                acc[c] += p[c];
            }
            n += 1;
        }
        (n > 0).then(|| acc.map(|a| a / n as f64))
    }
}

/// Inverse-square-distance interpolation of query probabilities onto
/// `points` from the `min(4, Q)` nearest queries. A point that coincides with
/// a query takes that query's probabilities exactly.
pub fn interpolate(scores: &QueryScores, points: &[Point]) -> Result<AnomalyMap> {
    if scores.queries.is_empty() {
        return Err(Error::Empty("query scores"));
    }
    let k = MAP_NEIGHBORS.min(scores.queries.len());
    let power = 2.0;
    let mut probs = Vec::with_capacity(points.len());
    if !points.is_empty() {
        let table = knn(&scores.queries, points, k)?;
        for (i, p) in points.iter().enumerate() {
            let row = table.row(i);
            let d2: Vec<f64> = row
                .iter()
                .map(|&q| {
                    let s = &scores.queries[q];
                    (0..3).map(|a| (p[a] - s[a]) * (p[a] - s[a])).sum()
                })
                .collect();
            // rows are sorted by distance, so an exact hit is first
            if d2[0] == 0.0 {
                probs.push(scores.probs[row[0]]);
                continue;
            }
            let w: Vec<f64> = d2.iter().map(|d| 1.0 / d.powf(power / 2.0)).collect();
            let total: f64 = w.iter().sum();
            let mut out = [0.0; 3];
            for (wi, &q) in w.iter().zip(row) {
                for c in 0..3 {
                    out[c] += wi / total * scores.probs[q][c];
                }
            }
            probs.push(out);
        }
    }
    Ok(AnomalyMap {
        points: points.to_vec(),
        probs,
        neighbors: k,
        power,
    })
}

pub fn anomaly_map(model: &MetricModel<f32>, pc: &PointCloud) -> Result<AnomalyMap> {
    let scores = score_cloud(model, pc)?;
    interpolate(&scores, &pc.points)
}

/// Labels attached to exported feature rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLabel {
    pub dataset: usize,
    pub category: Category,
}

/// Latent feature rows, one per query per cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub width: usize,
    /// `[rows × width]`
    pub features: Vec<f32>,
    /// Index of the source cloud of each row.
    pub cloud: Vec<usize>,
    pub labels: Vec<FeatureLabel>,
}

impl FeatureTable {
    pub fn rows(&self) -> usize {
        self.cloud.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    /// Rows of one category only.
    pub fn restrict(&self, category: Category) -> Self {
        let keep: Vec<usize> = (0..self.rows())
            .filter(|&i| self.labels[i].category == category)
            .collect();
        Self {
            width: self.width,
            features: keep.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            cloud: keep.iter().map(|&i| self.cloud[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `cloud,dataset,category,z0,…`; values are written in shortest
    /// round-trip form, so parsing gives back the same table.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cloud,dataset,category");
        for j in 0..self.width {
            let _ = write!(s, ",z{j}");
        }
        s.push('\n');
        for i in 0..self.rows() {
            let l = self.labels[i];
            let _ = write!(s, "{},{},{}", self.cloud[i], l.dataset, l.category.name());
            for v in self.row(i) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n');
        let header = lines
            .next()
            .ok_or_else(|| Error::malformed("feature table", 0, "missing header"))?;
        let cols = header.trim_end().split(',').count();
        if cols < 3 || !header.starts_with("cloud,dataset,category") {
            return Err(Error::malformed("feature table", 0, "bad header"));
        }
        offset += header.len() as u64;
        let width = cols - 3;
        let mut table = Self {
            width,
            features: Vec::new(),
            cloud: Vec::new(),
            labels: Vec::new(),
        };
        for line in lines {
            let at = offset;
            offset += line.len() as u64;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::malformed("feature table", at, msg);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(bad("wrong number of columns"));
            }
            table
                .cloud
                .push(fields[0].parse().map_err(|_| bad("bad cloud index"))?);
            let dataset = fields[1].parse().map_err(|_| bad("bad dataset id"))?;
            let category = Category::parse(fields[2]).ok_or_else(|| bad("bad category"))?;
            table.labels.push(FeatureLabel { dataset, category });
            for f in &fields[3..] {
                table
                    .features
                    .push(f.parse().map_err(|_| bad("bad feature value"))?);
            }
        }
        Ok(table)
    }
}

/// Latent features of every query of every cloud, in input order.
pub fn export_features(
    model: &MetricModel<f32>,
    clouds: &[(PointCloud, FeatureLabel)],
) -> Result<FeatureTable> {
    let width = model.config.feature_width();
    let mut table = FeatureTable {
        width,
        features: Vec::new(),
        cloud: Vec::new(),
        labels: Vec::new(),
    };
    for (i, (pc, label)) in clouds.iter().enumerate() {
        let lf = feature_extractor_forward(model, pc)?;
        let rows = lf.z.rows();
        table.features.extend_from_slice(&lf.z.data);
        table.cloud.extend(std::iter::repeat_n(i, rows));
        table.labels.extend(std::iter::repeat_n(*label, rows));
    }
    Ok(table)
}

/// Leave-one-cloud-out k-nearest-neighbour classification of the dataset id
/// in feature space. Each row is classified by majority vote of its `k`
/// nearest rows from other clouds (ties go to the class of the nearest
/// tied neighbour); returns the fraction classified correctly.
pub fn knn_feature_probe(table: &FeatureTable, k: usize) -> Result<f64> {
    let n = table.rows();
    if n == 0 {
        return Err(Error::Empty("feature table"));
    }
    if k == 0 {
        return Err(Error::param("probe needs k >= 1"));
    }
    let mut ids: Vec<usize> = table.labels.iter().map(|l| l.dataset).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::param("probe needs at least two datasets"));
    }
    let w = table.width;
    let x: Vec<f64> = table.features.iter().map(|v| *v as f64).collect();
    let sq: Vec<f64> = x.chunks_exact(w).map(|r| r.iter().map(|v| v * v).sum()).collect();

    const BLOCK: usize = 256;
    let mut correct = 0usize;
    let mut dots = vec![0.0f64; BLOCK * n];
    for start in (0..n).step_by(BLOCK) {
        let m = BLOCK.min(n - start);
        f64::gemm(
            m,
            w,
            n,
            &x[start * w..(start + m) * w],
            false,
            &x,
            true,
            &mut dots[..m * n],
            false,
        );
        for r in 0..m {
            let i = start + r;
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for j in 0..n {
                if table.cloud[j] == table.cloud[i] {
                    continue;
                }
                let d = (sq[i] + sq[j] - 2.0 * dots[r * n + j]).max(0.0);
                if best.len() == k && d >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|b| b.0 <= d);
                best.insert(pos, (d, j));
                best.truncate(k);
            }
            if best.is_empty() {
                continue;
            }
            let mut votes: Vec<(usize, usize)> = Vec::new();
            for &(_, j) in &best {
                let id = table.labels[j].dataset;
                match votes.iter_mut().find(|v| v.0 == id) {
                    Some(v) => v.1 += 1,
                    None => votes.push((id, 1)),
                }
            }
            // `votes` is in order of first (nearest) appearance
            let mut winner = votes[0];
            for v in &votes[1..] {
                if v.1 > winner.1 {
                    winner = *v;
                }
            }
            if winner.0 == table.labels[i].dataset {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / n as f64)
}
