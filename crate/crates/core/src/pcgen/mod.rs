//! Procedural point-cloud generation.
//!
//! Every generator is a pure function of its parameters and a `u64` seed.
//! [`DatasetSuite`] bundles the labelled support sets used for training: each
//! dataset id maps to one category and one generator.

mod distort;
mod generators;
mod scan;

pub use distort::{
    add_range_noise, displace_along_ray, inject_patch_anomaly, AzimuthInterval, Noised, PatchAnomaly,
    MIN_RANGE,
};
pub use generators::{
    gen_geometric_set, gen_misc, gen_real_surrogate, gen_sim_city, geometric_scene, street_scene,
    GeometricSetParams, MiscKind, MiscParams, RealSurrogateParams, SensorArtifacts, SurrogateStyle,
    DEFAULT_GROUND,
};
pub use scan::{raytrace, Hit, Primitive, ScanPattern, SceneDescription};

use crate::cloud::{Category, PointCloud};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorKind {
    RealSurrogate {
        style: SurrogateStyle,
        clutter: f64,
        artifacts: SensorArtifacts,
    },
    SimCity {
        clutter: f64,
    },
    GeometricSet(GeometricSetParams),
    Misc {
        kind: u32,
        params: MiscParams,
    },
}

impl GeneratorKind {
    /// Default generator for a config name (`real_surrogate`, `sim_city`,
    /// `geometric_set`, `misc1` … `misc4`).
    pub fn from_name(name: &str) -> Option<Self> {
        let g = match name.trim().to_ascii_lowercase().as_str() {
            "real_surrogate" => GeneratorKind::RealSurrogate {
                style: SurrogateStyle::Urban,
                clutter: 1.0,
                artifacts: SensorArtifacts::default(),
            },
            "sim_city" => GeneratorKind::SimCity { clutter: 1.0 },
            "geometric_set" => GeneratorKind::GeometricSet(GeometricSetParams::default()),
            "misc1" => Self::misc(1),
            "misc2" => Self::misc(2),
            "misc3" => Self::misc(3),
            "misc4" => Self::misc(4),
            _ => return None,
        };
        Some(g)
    }

    pub fn name(&self) -> String {
        match self {
            GeneratorKind::RealSurrogate { .. } => "real_surrogate".into(),
            GeneratorKind::SimCity { .. } => "sim_city".into(),
            GeneratorKind::GeometricSet(_) => "geometric_set".into(),
            GeneratorKind::Misc { kind, .. } => format!("misc{kind}"),
        }
    }

    fn misc(kind: u32) -> Self {
        GeneratorKind::Misc {
            kind,
            params: MiscParams::default(),
        }
    }

    pub fn generate(&self, pattern: &ScanPattern, seed: u64) -> Result<PointCloud> {
        match self {
            GeneratorKind::RealSurrogate {
                style,
                clutter,
                artifacts,
            } => gen_real_surrogate(
                &RealSurrogateParams {
                    pattern: pattern.clone(),
                    style: *style,
                    clutter: *clutter,
                    artifacts: artifacts.clone(),
                },
                seed,
            ),
            GeneratorKind::SimCity { clutter } => gen_sim_city(pattern, *clutter, seed),
            GeneratorKind::GeometricSet(p) => gen_geometric_set(
                &GeometricSetParams {
                    pattern: pattern.clone(),
                    ..p.clone()
                },
                seed,
            ),
            GeneratorKind::Misc { kind, params } => gen_misc(*kind, pattern, params, seed),
        }
    }
}

/// One labelled support set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub id: usize,
    pub name: String,
    pub category: Category,
    pub generator: GeneratorKind,
    /// `None` for an unbounded stream.
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSuite {
    pub pattern: ScanPattern,
    pub datasets: Vec<DatasetSpec>,
}

impl Default for DatasetSuite {
    fn default() -> Self {
        Self::standard(ScanPattern::hdl64())
    }
}

impl DatasetSuite {
    /// The seven default support sets: two Real surrogates, two Synthetic
    /// sets, and the three training Misc kinds.
    pub fn standard(pattern: ScanPattern) -> Self {
        use Category::*;
        let spec = |id, name: &str, category, generator| DatasetSpec {
            id,
            name: name.to_string(),
            category,
            generator,
            samples: None,
        };
        let datasets = vec![
            spec(
                0,
                "real-urban",
                Real,
                GeneratorKind::RealSurrogate {
                    style: SurrogateStyle::Urban,
                    clutter: 1.0,
                    artifacts: SensorArtifacts::default(),
                },
            ),
            spec(
                1,
                "real-rural",
                Real,
                GeneratorKind::RealSurrogate {
                    style: SurrogateStyle::Rural,
                    clutter: 1.0,
                    artifacts: SensorArtifacts::default(),
                },
            ),
            spec(2, "sim-city", Synthetic, GeneratorKind::SimCity { clutter: 1.0 }),
            spec(
                3,
                "geometric-set",
                Synthetic,
                GeneratorKind::GeometricSet(GeometricSetParams::default()),
            ),
            spec(4, "misc-rows", Misc, GeneratorKind::misc(1)),
            spec(5, "misc-columns", Misc, GeneratorKind::misc(2)),
            spec(6, "misc-noise", Misc, GeneratorKind::misc(3)),
        ];
        Self { pattern, datasets }
    }

    pub fn validate(&self) -> Result<()> {
        self.pattern.validate()?;
        for (i, d) in self.datasets.iter().enumerate() {
            if d.id != i {
                return Err(Error::param(format!(
                    "dataset ids must be 0..{} in order, found {} at position {i}",
                    self.datasets.len(),
                    d.id
                )));
            }
        }
        for c in Category::ALL {
            if !self.datasets.iter().any(|d| d.category == c) {
                return Err(Error::param(format!("no dataset in category {c}")));
            }
        }
        if self.real_ids().len() < 2 {
            return Err(Error::param("at least two Real datasets are required"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }

    pub fn get(&self, id: usize) -> Result<&DatasetSpec> {
        self.datasets.get(id).ok_or(Error::UnknownDataset(id))
    }

    pub fn real_ids(&self) -> Vec<usize> {
        self.ids_in(Category::Real)
    }

    pub fn ids_in(&self, category: Category) -> Vec<usize> {
        self.datasets
            .iter()
            .filter(|d| d.category == category)
            .map(|d| d.id)
            .collect()
    }

    /// Seed of sample `index` of dataset `id` under run seed `seed`.
    pub fn sample_seed(seed: u64, id: usize, index: u64) -> u64 {
        derive_seed(derive_seed(seed, id as u64), index)
    }

    /// Generate sample `index` of dataset `id`, tagged with its provenance.
    pub fn generate(&self, id: usize, seed: u64, index: u64) -> Result<PointCloud> {
        let d = self.get(id)?;
        let pc = d
            .generator
            .generate(&self.pattern, Self::sample_seed(seed, id, index))?;
        Ok(pc.with_provenance(Some(id), Some(d.category)))
    }
}
