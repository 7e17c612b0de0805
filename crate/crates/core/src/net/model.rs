//! The metric network: two-level point-set feature extractor, classifier head
//! and adversary head.

use std::fmt::Write as _;

use super::layers::{
    dropout_mask, leaky_relu_backward, leaky_relu_inplace, max_over_neighbors, max_over_neighbors_backward,
    softmax_rows, Dense, GradientReversal,
};
use super::loss::weighted_cross_entropy;
use super::scalar::Scalar;
use crate::cloud::Point;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, substream, Rng};
use crate::spatial::{
    canonical_subsample, farthest_point_sampling_level, group_normalize, knn, DEFAULT_K, DEFAULT_Q1,
    DEFAULT_Q2,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub q1: usize,
    pub q2: usize,
    pub k1: usize,
    pub k2: usize,
    pub level1_widths: Vec<usize>,
    pub level2_widths: Vec<usize>,
    pub head_hidden: usize,
    pub dropout: f64,
    pub categories: usize,
    pub datasets: usize,
    /// Adversary gradient factor of the reversal connector.
    pub lambda: f64,
    /// Clouds are reduced to at most this many points before sampling.
    pub point_budget: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            q1: DEFAULT_Q1,
            q2: DEFAULT_Q2,
            k1: DEFAULT_K,
            k2: DEFAULT_K,
            level1_widths: vec![64, 64, 128],
            level2_widths: vec![128, 128, 256],
            head_hidden: 128,
            dropout: 0.5,
            categories: 3,
            datasets: 7,
            lambda: 0.3,
            point_budget: 16384,
        }
    }
}

fn parse_list(s: &str) -> Option<Vec<usize>> {
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

impl ModelConfig {
    pub fn feature_width(&self) -> usize {
        *self.level2_widths.last().unwrap_or(&0)
    }

    pub fn level1_width(&self) -> usize {
        *self.level1_widths.last().unwrap_or(&0)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("q1", self.q1),
            ("q2", self.q2),
            ("k1", self.k1),
            ("k2", self.k2),
            ("head_hidden", self.head_hidden),
            ("point_budget", self.point_budget),
            ("datasets", self.datasets),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::param(format!("model.{name} must be >= 1")));
            }
        }
        if self.categories != 3 {
            return Err(Error::param("the classifier has exactly 3 categories"));
        }
        if self.level1_widths.is_empty() || self.level2_widths.is_empty() {
            return Err(Error::param("each abstraction level needs at least one layer"));
        }
        if self
            .level1_widths
            .iter()
            .chain(&self.level2_widths)
            .any(|w| *w == 0)
        {
            return Err(Error::param("layer widths must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout must lie in [0, 1)"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::param("lambda must be >= 0"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "q1 = {}", self.q1);
        let _ = writeln!(s, "q2 = {}", self.q2);
        let _ = writeln!(s, "k1 = {}", self.k1);
        let _ = writeln!(s, "k2 = {}", self.k2);
        let _ = writeln!(s, "level1_widths = {}", list(&self.level1_widths));
        let _ = writeln!(s, "level2_widths = {}", list(&self.level2_widths));
        let _ = writeln!(s, "head_hidden = {}", self.head_hidden);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "categories = {}", self.categories);
        let _ = writeln!(s, "datasets = {}", self.datasets);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "point_budget = {}", self.point_budget);
        s
    }

    /// Apply one `key = value` setting (keys as written by [`Self::to_kv`]).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |msg: &str| Error::InvalidValue {
            key: key.to_string(),
            msg: msg.to_string(),
        };
        let int = || {
            value
                .trim()
                .parse::<usize>()
                .map_err(|_| bad("expected an integer"))
        };
        let float = || value.trim().parse::<f64>().map_err(|_| bad("expected a number"));
        match key {
            "q1" => self.q1 = int()?,
            "q2" => self.q2 = int()?,
            "k1" => self.k1 = int()?,
            "k2" => self.k2 = int()?,
            "level1_widths" => {
                self.level1_widths = parse_list(value).ok_or_else(|| bad("expected a list"))?
            }
            "level2_widths" => {
                self.level2_widths = parse_list(value).ok_or_else(|| bad("expected a list"))?
            }
            "head_hidden" => self.head_hidden = int()?,
            "dropout" => self.dropout = float()?,
            "categories" => self.categories = int()?,
            "datasets" => self.datasets = int()?,
            "lambda" => self.lambda = float()?,
            "point_budget" => self.point_budget = int()?,
            _ => return Err(Error::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

/// Everything about a cloud the network needs that does not depend on the
/// weights: query points, neighbour tables and normalised neighbourhoods of
/// both abstraction levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub level1_queries: Vec<Point>,
    /// `[Q1 × K1]` neighbour offsets from their query.
    pub level1_local: Vec<Point>,
    pub k1: usize,
    pub level2_queries: Vec<Point>,
    /// `[Q2 × K2]` indices into `level1_queries`.
    pub level2_neighbors: Vec<usize>,
    pub level2_local: Vec<Point>,
    pub k2: usize,
}

impl Geometry {
    pub fn build(points: &[Point], cfg: &ModelConfig) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud"));
        }
        let pts = canonical_subsample(points, cfg.point_budget);
        let q1 = farthest_point_sampling_level(&pts, cfg.q1, 1)?;
        let q1_pts = q1.points(&pts);
        let t1 = knn(&pts, &q1_pts, cfg.k1)?;
        let local1 = group_normalize(&pts, &q1_pts, &t1)?;

        let q2 = farthest_point_sampling_level(&q1_pts, cfg.q2, 2)?;
        let q2_pts = q2.points(&q1_pts);
        let t2 = knn(&q1_pts, &q2_pts, cfg.k2)?;
        let local2 = group_normalize(&q1_pts, &q2_pts, &t2)?;
        Ok(Self {
            level1_queries: q1_pts,
            level1_local: local1,
            k1: t1.k,
            level2_queries: q2_pts,
            level2_neighbors: t2.indices,
            level2_local: local2,
            k2: t2.k,
        })
    }

    pub fn q1(&self) -> usize {
        self.level1_queries.len()
    }

    pub fn q2(&self) -> usize {
        self.level2_queries.len()
    }
}

fn flatten<T: Scalar>(points: &[Point]) -> Vec<T> {
    points.iter().flat_map(|p| p.iter().map(|v| T::of(*v))).collect()
}

fn mlp_forward<T: Scalar>(layers: &[Dense<T>], x: &[T], rows: usize) -> Vec<Vec<T>> {
    let mut outs: Vec<Vec<T>> = Vec::with_capacity(layers.len());
    for layer in layers {
        let input = outs.last().map(|v| v.as_slice()).unwrap_or(x);
        let mut y = layer.forward(input, rows);
        leaky_relu_inplace(&mut y);
        outs.push(y);
    }
    outs
}

fn mlp_backward<T: Scalar>(
    layers: &[Dense<T>],
    x: &[T],
    outs: &[Vec<T>],
    dy_last: Vec<T>,
    rows: usize,
    grads: &mut [Dense<T>],
    want_dx: bool,
) -> Option<Vec<T>> {
    let mut dy = dy_last;
    for i in (0..layers.len()).rev() {
        leaky_relu_backward(&outs[i], &mut dy);
        let input = if i == 0 { x } else { &outs[i - 1] };
        {
            let dx = layers[i].backward(input, &dy, rows, &mut grads[i], i > 0 || want_dx)?;
            dy = dx
        }
    }
    Some(dy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor<T> {
    pub level1: Vec<Dense<T>>,
    pub level2: Vec<Dense<T>>,
}

/// Intermediate values of one extractor pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ExtractorTrace<T> {
    l1_in: Vec<T>,
    l1_outs: Vec<Vec<T>>,
    l1_arg: Vec<u32>,
    l2_in: Vec<T>,
    l2_outs: Vec<Vec<T>>,
    l2_arg: Vec<u32>,
    /// `[Q2 × U_F]` latent features.
    pub z: Vec<T>,
}

fn sign_bits<T: Scalar>(outs: &[Vec<T>]) -> impl Iterator<Item = u32> + '_ {
    outs.iter()
        .flat_map(|o| o.iter().map(|v| u32::from(*v > T::zero())))
}

impl<T: Scalar> ExtractorTrace<T> {
    /// The linear piece the pass ran on: the sign of every activation and the
    /// winning slot of every max. Parameters giving the same signature lie on
    /// one piece, so finite differences between them are exact.
    pub fn signature(&self) -> Vec<u32> {
        sign_bits(&self.l1_outs)
            .chain(self.l1_arg.iter().copied())
            .chain(sign_bits(&self.l2_outs))
            .chain(self.l2_arg.iter().copied())
            .collect()
    }
}

impl<T: Scalar> FeatureExtractor<T> {
    fn build(cfg: &ModelConfig, mut make: impl FnMut(usize, usize) -> Dense<T>) -> Self {
        let mut level1 = Vec::new();
        let mut inputs = 3;
        for &w in &cfg.level1_widths {
            level1.push(make(inputs, w));
            inputs = w;
        }
        let mut level2 = Vec::new();
        let mut inputs = 3 + cfg.level1_width();
        for &w in &cfg.level2_widths {
            level2.push(make(inputs, w));
            inputs = w;
        }
        Self { level1, level2 }
    }

    fn c1(&self) -> usize {
        self.level1.last().map_or(0, |d| d.outputs)
    }

    fn c2(&self) -> usize {
        self.level2.last().map_or(0, |d| d.outputs)
    }

    pub fn forward(&self, geom: &Geometry) -> ExtractorTrace<T> {
        let (q1, k1) = (geom.q1(), geom.k1);
        let (q2, k2) = (geom.q2(), geom.k2);
        let c1 = self.c1();

        let l1_in = flatten::<T>(&geom.level1_local);
        let l1_outs = mlp_forward(&self.level1, &l1_in, q1 * k1);
        let (f1, l1_arg) = max_over_neighbors(l1_outs.last().unwrap(), q1, k1, c1);

        let width = 3 + c1;
        let mut l2_in = Vec::with_capacity(q2 * k2 * width);
        for (r, &j) in geom.level2_neighbors.iter().enumerate() {
            let p = geom.level2_local[r];
            l2_in.extend(p.iter().map(|v| T::of(*v)));
            l2_in.extend_from_slice(&f1[j * c1..(j + 1) * c1]);
        }
        let l2_outs = mlp_forward(&self.level2, &l2_in, q2 * k2);
        let (z, l2_arg) = max_over_neighbors(l2_outs.last().unwrap(), q2, k2, self.c2());
        ExtractorTrace {
            l1_in,
            l1_outs,
            l1_arg,
            l2_in,
            l2_outs,
            l2_arg,
            z,
        }
    }

    /// Accumulate parameter gradients for an upstream gradient `dz` on `z`.
    pub fn backward(
        &self,
        geom: &Geometry,
        trace: &ExtractorTrace<T>,
        dz: &[T],
        grads: &mut FeatureExtractor<T>,
    ) {
        let (q1, k1) = (geom.q1(), geom.k1);
        let (q2, k2) = (geom.q2(), geom.k2);
        let (c1, c2) = (self.c1(), self.c2());
        let d_out2 = max_over_neighbors_backward(dz, &trace.l2_arg, q2, k2, c2);
        let d_in2 = mlp_backward(
            &self.level2,
            &trace.l2_in,
            &trace.l2_outs,
            d_out2,
            q2 * k2,
            &mut grads.level2,
            true,
        )
        .expect("input gradient requested");
        let width = 3 + c1;
        let mut df1 = vec![T::zero(); q1 * c1];
        for (r, &j) in geom.level2_neighbors.iter().enumerate() {
            let src = &d_in2[r * width + 3..(r + 1) * width];
            let dst = &mut df1[j * c1..(j + 1) * c1];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = *d + *s;
            }
        }
        let d_out1 = max_over_neighbors_backward(&df1, &trace.l1_arg, q1, k1, c1);
        mlp_backward(
            &self.level1,
            &trace.l1_in,
            &trace.l1_outs,
            d_out1,
            q1 * k1,
            &mut grads.level1,
            false,
        );
    }
}

/// Dense + leaky ReLU → dropout → dense → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T> {
    pub hidden: Dense<T>,
    pub output: Dense<T>,
}

#[derive(Debug, Clone)]
pub struct HeadTrace<T> {
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
    dropped: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Scalar> HeadTrace<T> {
    /// Sign of every hidden activation; see [`ExtractorTrace::signature`].
    pub fn signature(&self) -> Vec<u32> {
        sign_bits(std::slice::from_ref(&self.hidden)).collect()
    }
}

impl<T: Scalar> Head<T> {
    pub fn units(&self) -> usize {
        self.output.outputs
    }

    /// `dropout` carries the rate and the mask generator when dropout is on.
    pub fn forward(&self, z: &[T], rows: usize, dropout: Option<(f64, &mut Rng)>) -> HeadTrace<T> {
        let mut hidden = self.hidden.forward(z, rows);
        leaky_relu_inplace(&mut hidden);
        let (mask, dropped) = match dropout {
            Some((rate, rng)) if rate > 0.0 => {
                let m: Vec<T> = dropout_mask(hidden.len(), rate, rng);
                let d = hidden.iter().zip(&m).map(|(h, k)| *h * *k).collect();
                (Some(m), d)
            }
            _ => (None, hidden.clone()),
        };
        let logits = self.output.forward(&dropped, rows);
        let probs = softmax_rows(&logits, self.units());
        HeadTrace {
            hidden,
            mask,
            dropped,
            logits,
            probs,
        }
    }

    pub fn backward(
        &self,
        z: &[T],
        trace: &HeadTrace<T>,
        dlogits: &[T],
        rows: usize,
        grads: &mut Head<T>,
    ) -> Vec<T> {
        let mut d = self
            .output
            .backward(&trace.dropped, dlogits, rows, &mut grads.output, true)
            .unwrap();
        if let Some(mask) = &trace.mask {
            for (g, m) in d.iter_mut().zip(mask) {
                *g = *g * *m;
            }
        }
        leaky_relu_backward(&trace.hidden, &mut d);
        self.hidden
            .backward(z, &d, rows, &mut grads.hidden, true)
            .unwrap()
    }
}

/// How the untrained weights are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform everywhere except zero output layers, so every head starts
    /// at the uniform distribution.
    Symmetric,
    /// He-uniform everywhere.
    Random,
}

/// Labels and loss weights of one training cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labels {
    pub category: usize,
    pub dataset: usize,
    pub classifier_weight: f64,
    /// `w_d`: 1 for Real-category datasets, 0 otherwise.
    pub adversary_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudLosses<T> {
    pub classifier: T,
    pub adversary: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricModel<T = f32> {
    pub config: ModelConfig,
    pub extractor: FeatureExtractor<T>,
    pub classifier: Head<T>,
    pub adversary: Head<T>,
}

/// Forward results without dropout.
#[derive(Debug, Clone)]
pub struct Inference<T> {
    /// `[Q × U_F]`
    pub z: Vec<T>,
    /// `[Q × U_C]`
    pub classifier: Vec<T>,
    /// `[Q × U_A]`
    pub adversary: Vec<T>,
}

impl<T: Scalar> MetricModel<T> {
    pub fn new(config: ModelConfig, seed: u64, init: Init) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut he = |i, o| Dense::he_uniform(i, o, &mut rng);
        let extractor = FeatureExtractor::build(&config, &mut he);
        let uf = config.feature_width();
        let mut head = |units: usize| {
            let hidden = he(uf, config.head_hidden);
            let output = match init {
                Init::Symmetric => Dense::zeros(config.head_hidden, units),
                Init::Random => he(config.head_hidden, units),
            };
            Head { hidden, output }
        };
        let classifier = head(config.categories);
        let adversary = head(config.datasets);
        Ok(Self {
            config,
            extractor,
            classifier,
            adversary,
        })
    }

    /// Same architecture, all parameters zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for d in out.denses_mut() {
            d.weight.iter_mut().for_each(|v| *v = T::zero());
            d.bias.iter_mut().for_each(|v| *v = T::zero());
        }
        out
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> MetricModel<U> {
        let conv = |d: &Dense<T>| Dense {
            inputs: d.inputs,
            outputs: d.outputs,
            weight: d.weight.iter().map(|v| f(*v)).collect(),
            bias: d.bias.iter().map(|v| f(*v)).collect(),
        };
        let head = |h: &Head<T>| Head {
            hidden: conv(&h.hidden),
            output: conv(&h.output),
        };
        MetricModel {
            config: self.config.clone(),
            extractor: FeatureExtractor {
                level1: self.extractor.level1.iter().map(conv).collect(),
                level2: self.extractor.level2.iter().map(conv).collect(),
            },
            classifier: head(&self.classifier),
            adversary: head(&self.adversary),
        }
    }

    /// Every dense layer with its parameter-name prefix, in a fixed order.
    pub fn denses(&self) -> Vec<(String, &Dense<T>)> {
        let mut v = Vec::new();
        for (i, d) in self.extractor.level1.iter().enumerate() {
            v.push((format!("extractor.level1.{i}"), d));
        }
        for (i, d) in self.extractor.level2.iter().enumerate() {
            v.push((format!("extractor.level2.{i}"), d));
        }
        v.push(("classifier.hidden".into(), &self.classifier.hidden));
        v.push(("classifier.output".into(), &self.classifier.output));
        v.push(("adversary.hidden".into(), &self.adversary.hidden));
        v.push(("adversary.output".into(), &self.adversary.output));
        v
    }

    pub fn denses_mut(&mut self) -> Vec<&mut Dense<T>> {
        let mut v: Vec<&mut Dense<T>> = Vec::new();
        v.extend(self.extractor.level1.iter_mut());
        v.extend(self.extractor.level2.iter_mut());
        v.push(&mut self.classifier.hidden);
        v.push(&mut self.classifier.output);
        v.push(&mut self.adversary.hidden);
        v.push(&mut self.adversary.output);
        v
    }

    /// Flat parameter arrays (`weight` then `bias` per layer), in the order of
    /// [`Self::denses`].
    pub fn param_arrays_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.denses_mut()
            .into_iter()
            .flat_map(|d| [&mut d.weight, &mut d.bias])
            .collect()
    }

    pub fn param_arrays(&self) -> Vec<(String, Vec<usize>, &Vec<T>)> {
        self.denses()
            .into_iter()
            .flat_map(|(name, d)| {
                [
                    (format!("{name}.weight"), vec![d.inputs, d.outputs], &d.weight),
                    (format!("{name}.bias"), vec![d.outputs], &d.bias),
                ]
            })
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.denses()
            .iter()
            .map(|(_, d)| d.weight.len() + d.bias.len())
            .sum()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        let src: Vec<&Dense<T>> = other.denses().into_iter().map(|(_, d)| d).collect();
        for (dst, s) in self.denses_mut().into_iter().zip(src) {
            for (a, b) in dst.weight.iter_mut().zip(&s.weight) {
                *a = *a + scale * *b;
            }
            for (a, b) in dst.bias.iter_mut().zip(&s.bias) {
                *a = *a + scale * *b;
            }
        }
    }

    pub fn geometry(&self, points: &[Point]) -> Result<Geometry> {
        Geometry::build(points, &self.config)
    }

    /// Dropout-free forward pass of both heads.
    pub fn infer(&self, geom: &Geometry) -> Inference<T> {
        let trace = self.extractor.forward(geom);
        let rows = geom.q2();
        let c = self.classifier.forward(&trace.z, rows, None);
        let a = self.adversary.forward(&trace.z, rows, None);
        Inference {
            z: trace.z,
            classifier: c.probs,
            adversary: a.probs,
        }
    }

    /// Dropout-free losses of one cloud.
    pub fn losses(&self, geom: &Geometry, labels: &Labels) -> CloudLosses<T> {
        let trace = self.extractor.forward(geom);
        let rows = geom.q2();
        let c = self.classifier.forward(&trace.z, rows, None);
        let a = self.adversary.forward(&trace.z, rows, None);
        CloudLosses {
            classifier: weighted_cross_entropy(
                &c.logits,
                self.classifier.units(),
                labels.category,
                T::of(labels.classifier_weight),
            )
            .0,
            adversary: weighted_cross_entropy(
                &a.logits,
                self.adversary.units(),
                labels.dataset,
                T::of(labels.adversary_weight),
            )
            .0,
        }
    }

    /// One combined forward/backward pass of a cloud, accumulating
    /// `scale · ∇` into `grads`.
    ///
    /// The classifier gradient reaches the extractor directly. The adversary
    /// head receives its own (non-reversed) gradient, and its gradient on `z`
    /// passes through the reversal connector (factor `−λ`) before reaching
    /// the extractor. Clouds with zero adversary weight skip the adversary.
    pub fn accumulate_gradients(
        &self,
        geom: &Geometry,
        labels: &Labels,
        dropout_seed: Option<u64>,
        grads: &mut MetricModel<T>,
        scale: T,
    ) -> Result<CloudLosses<T>> {
        if labels.category >= self.classifier.units() {
            return Err(Error::param(format!("category {} out of range", labels.category)));
        }
        if labels.dataset >= self.adversary.units() {
            return Err(Error::UnknownDataset(labels.dataset));
        }
        let trace = self.extractor.forward(geom);
        let rows = geom.q2();
        let rate = self.config.dropout;
        let mut rng_c = dropout_seed.map(|s| substream(s, 0));
        let mut rng_a = dropout_seed.map(|s| substream(s, 1));

        let c = self
            .classifier
            .forward(&trace.z, rows, rng_c.as_mut().map(|r| (rate, r)));
        let (loss_c, mut dlog_c) = weighted_cross_entropy(
            &c.logits,
            self.classifier.units(),
            labels.category,
            T::of(labels.classifier_weight),
        );
        dlog_c.iter_mut().for_each(|g| *g = *g * scale);
        let mut dz = self
            .classifier
            .backward(&trace.z, &c, &dlog_c, rows, &mut grads.classifier);

        let mut loss_a = T::zero();
        if labels.adversary_weight != 0.0 {
            let reversal = GradientReversal::new(self.config.lambda);
            let z_adv = reversal.forward(&trace.z);
            let a = self
                .adversary
                .forward(z_adv, rows, rng_a.as_mut().map(|r| (rate, r)));
            let (l, mut dlog_a) = weighted_cross_entropy(
                &a.logits,
                self.adversary.units(),
                labels.dataset,
                T::of(labels.adversary_weight),
            );
            loss_a = l;
            dlog_a.iter_mut().for_each(|g| *g = *g * scale);
            let dz_adv = self
                .adversary
                .backward(z_adv, &a, &dlog_a, rows, &mut grads.adversary);
            if self.config.lambda != 0.0 {
                for (d, r) in dz.iter_mut().zip(reversal.backward(&dz_adv)) {
                    *d = *d + r;
                }
            }
        }
        self.extractor.backward(geom, &trace, &dz, &mut grads.extractor);
        Ok(CloudLosses {
            classifier: loss_c,
            adversary: loss_a,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            q1: 12,
            q2: 4,
            k1: 4,
            k2: 3,
            level1_widths: vec![5, 6],
            level2_widths: vec![7, 8],
            head_hidden: 6,
            datasets: 4,
            ..Default::default()
        }
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        use rand::Rng as _;
        let mut rng = rng_from_seed(seed);
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect()
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = tiny_config();
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(matches!(
            ModelConfig::from_kv("bogus = 1"),
            Err(Error::UnknownKey(k)) if k == "bogus"
        ));
    }

    #[test]
    fn default_parameter_count() {
        let m = MetricModel::<f32>::new(ModelConfig::default(), 0, Init::Symmetric).unwrap();
        // 12 736 extractor level 1, 66 432 level 2, 33 283 classifier, 33 799 adversary
        assert_eq!(m.parameter_count(), 12_736 + 66_432 + 33_283 + 33_799);
    }

    #[test]
    fn symmetric_init_gives_uniform_heads() {
        let m = MetricModel::<f64>::new(tiny_config(), 3, Init::Symmetric).unwrap();
        let g = m.geometry(&cloud(40, 1)).unwrap();
        let inf = m.infer(&g);
        for p in &inf.classifier {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        for p in &inf.adversary {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn shrinks_with_small_clouds() {
        let m = MetricModel::<f64>::new(tiny_config(), 3, Init::Random).unwrap();
        let g = m.geometry(&cloud(3, 2)).unwrap();
        assert_eq!(g.q1(), 3);
        assert_eq!(g.k1, 3);
        assert_eq!(g.q2(), 3);
        let inf = m.infer(&g);
        assert_eq!(inf.z.len(), 3 * 8);
    }

    #[test]
    fn repeated_point_is_finite() {
        let m = MetricModel::<f32>::new(tiny_config(), 3, Init::Random).unwrap();
        let g = m.geometry(&vec![[1.0, 2.0, 3.0]; 30]).unwrap();
        let inf = m.infer(&g);
        assert!(inf.z.iter().all(|v| v.is_finite()));
        assert!(inf.classifier.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_adversary_weight_leaves_adversary_untouched() {
        let m = MetricModel::<f64>::new(tiny_config(), 4, Init::Random).unwrap();
        let g = m.geometry(&cloud(50, 3)).unwrap();
        let mut grads = m.zeros_like();
        let labels = Labels {
            category: 2,
            dataset: 3,
            classifier_weight: 1.0,
            adversary_weight: 0.0,
        };
        let l = m
            .accumulate_gradients(&g, &labels, Some(1), &mut grads, 1.0)
            .unwrap();
        assert_eq!(l.adversary, 0.0);
        assert_eq!(grads.adversary, m.zeros_like().adversary);
    }

    #[test]
    fn unknown_dataset_is_rejected() {
        let m = MetricModel::<f64>::new(tiny_config(), 4, Init::Random).unwrap();
        let g = m.geometry(&cloud(20, 3)).unwrap();
        let mut grads = m.zeros_like();
        let labels = Labels {
            category: 0,
            dataset: 9,
            classifier_weight: 1.0,
            adversary_weight: 1.0,
        };
        assert!(matches!(
            m.accumulate_gradients(&g, &labels, None, &mut grads, 1.0),
            Err(Error::UnknownDataset(9))
        ));
    }
}
