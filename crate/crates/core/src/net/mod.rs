//! The metric network and its training machinery.
//!
//! Layers carry hand-written backward passes; there is no general autodiff.
//! Everything is generic over [`Scalar`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod scalar;
pub mod tensor;

pub use adam::{adam_update, Adam, AdamConfig, AdamState, LrSchedule};
pub use checkpoint::Checkpoint;
pub use layers::{Dense, GradientReversal, LEAKY_SLOPE};
pub use loss::weighted_cross_entropy;
pub use model::{
    CloudLosses, ExtractorTrace, FeatureExtractor, Geometry, Head, HeadTrace, Inference, Init, Labels,
    MetricModel, ModelConfig,
};
pub use scalar::Scalar;
pub use tensor::Tensor;

use crate::cloud::{Point, PointCloud};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Latent features `z` (`[Q × U_F]`) and the level-2 query coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFeatures {
    pub z: Tensor<f32>,
    pub queries: Vec<Point>,
}

/// Logits and softmax probabilities of a head, both `[Q × U]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub logits: Tensor<f32>,
    pub probs: Tensor<f32>,
}

/// Run the two abstraction levels on a cloud.
pub fn feature_extractor_forward(model: &MetricModel<f32>, pc: &PointCloud) -> Result<LatentFeatures> {
    if pc.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let geom = model.geometry(&pc.points)?;
    let trace = model.extractor.forward(&geom);
    let rows = geom.q2();
    Ok(LatentFeatures {
        z: Tensor::new(vec![rows, model.config.feature_width()], trace.z)?,
        queries: geom.level2_queries,
    })
}

/// Evaluate one head on latent features. With `dropout_on` the hidden layer
/// is masked (inverted dropout) using `seed`.
pub fn head_forward(
    head: &Head<f32>,
    z: &Tensor<f32>,
    dropout: f64,
    dropout_on: bool,
    seed: u64,
) -> Result<HeadOutput> {
    if z.cols() != head.hidden.inputs {
        return Err(Error::Shape(format!(
            "head expects {} features, got {}",
            head.hidden.inputs,
            z.cols()
        )));
    }
    let rows = z.rows();
    let mut rng = rng_from_seed(seed);
    let trace = head.forward(&z.data, rows, dropout_on.then_some((dropout, &mut rng)));
    let u = head.units();
    Ok(HeadOutput {
        logits: Tensor::new(vec![rows, u], trace.logits)?,
        probs: Tensor::new(vec![rows, u], trace.probs)?,
    })
}
