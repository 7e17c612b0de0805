//! Finite-difference checks of every layer. Each function builds a random
//! instance from `seed` and compares the analytic gradient with central
//! differences.
//!
//! Single layers are fed inputs that keep every ±step probe on one linear
//! piece. Composite networks cannot be steered that way, so their checks
//! skip the (rare) coordinates whose probe crosses a leaky-ReLU kink or
//! changes a max winner, and report how many were skipped.
#![allow(dead_code)]

use pcreal_core::net::layers::{
    leaky_relu_backward, leaky_relu_inplace, max_over_neighbors, max_over_neighbors_backward,
};
use pcreal_core::net::{
    weighted_cross_entropy, Dense, Geometry, Head, Init, Labels, MetricModel, ModelConfig,
};
use pcreal_core::rng::{rng_from_seed, Rng};
use pcreal_core::Point;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{numeric_gradient, numeric_gradient_on_piece, rel_error, rel_error_kept};

pub const STEP: f64 = 1e-3;

fn uniform(rng: &mut Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-a..a)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_dense(rng: &mut Rng, inputs: usize, outputs: usize) -> Dense<f64> {
    let mut d = Dense::<f64>::he_uniform(inputs, outputs, rng);
    d.bias = uniform(rng, outputs, 0.5);
    d
}

/// Dense layer: gradients of `⟨r, x W + b⟩` with respect to `W`, `b` and `x`.
pub fn dense(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (rows, inputs, outputs) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..9));
    let layer = random_dense(&mut rng, inputs, outputs);
    let x = uniform(&mut rng, rows * inputs, 1.0);
    let r = uniform(&mut rng, rows * outputs, 1.0);

    let mut grad = layer.zero_like();
    let dx = layer.backward(&x, &r, rows, &mut grad, true).unwrap();

    let nw = numeric_gradient(&layer.weight, STEP, |w| {
        let l = Dense {
            weight: w.to_vec(),
            ..layer.clone()
        };
        dot(&l.forward(&x, rows), &r)
    });
    let nb = numeric_gradient(&layer.bias, STEP, |b| {
        let l = Dense {
            bias: b.to_vec(),
            ..layer.clone()
        };
        dot(&l.forward(&x, rows), &r)
    });
    let nx = numeric_gradient(&x, STEP, |x| dot(&layer.forward(x, rows), &r));
    rel_error(&grad.weight, &nw)
        .max(rel_error(&grad.bias, &nb))
        .max(rel_error(&dx, &nx))
}

/// Leaky ReLU, with inputs kept clear of the kink.
pub fn leaky_relu(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(1..40);
    let x: Vec<f64> = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.01..2.0);
            if rng.gen() {
                v
            } else {
                -v
            }
        })
        .collect();
    let r = uniform(&mut rng, n, 1.0);
    let f = |x: &[f64]| {
        let mut y = x.to_vec();
        leaky_relu_inplace(&mut y);
        dot(&y, &r)
    };
    let mut y = x.clone();
    leaky_relu_inplace(&mut y);
    let mut g = r.clone();
    leaky_relu_backward(&y, &mut g);
    rel_error(&g, &numeric_gradient(&x, STEP, f))
}

/// Max over neighbours, with distinct inputs spaced wider than the step.
pub fn max_pool(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (q, k, c) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));
    let mut x: Vec<f64> = (0..q * k * c).map(|i| i as f64 * 0.01).collect();
    x.shuffle(&mut rng);
    let r = uniform(&mut rng, q * c, 1.0);
    let (_, arg) = max_over_neighbors(&x, q, k, c);
    let g = max_over_neighbors_backward(&r, &arg, q, k, c);
    let n = numeric_gradient(&x, STEP, |x| dot(&max_over_neighbors(x, q, k, c).0, &r));
    rel_error(&g, &n)
}

/// Softmax cross-entropy with a random loss weight.
pub fn cross_entropy(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (rows, u) = (rng.gen_range(1..6), rng.gen_range(2..8));
    let target = rng.gen_range(0..u);
    let w: f64 = rng.gen_range(0.1..2.0);
    let logits = uniform(&mut rng, rows * u, 4.0);
    let (_, g) = weighted_cross_entropy(&logits, u, target, w);
    let n = numeric_gradient(&logits, STEP, |l| weighted_cross_entropy(l, u, target, w).0);
    rel_error(&g, &n)
}

/// Classifier-style head (dense, leaky ReLU, dropout, dense) under
/// cross-entropy; the dropout mask is fixed by reseeding.
pub fn head(seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let (rows, width, hidden, u) = (
        rng.gen_range(1..5),
        rng.gen_range(2..8),
        rng.gen_range(2..8),
        rng.gen_range(2..6),
    );
    let h = Head {
        hidden: random_dense(&mut rng, width, hidden),
        output: random_dense(&mut rng, hidden, u),
    };
    let z = uniform(&mut rng, rows * width, 1.0);
    let target = rng.gen_range(0..u);
    let mask_seed: u64 = rng.gen();
    let loss = |h: &Head<f64>, z: &[f64]| {
        let mut mr = rng_from_seed(mask_seed);
        let t = h.forward(z, rows, Some((0.5, &mut mr)));
        weighted_cross_entropy(&t.logits, u, target, 1.0)
    };
    let mut mr = rng_from_seed(mask_seed);
    let t = h.forward(&z, rows, Some((0.5, &mut mr)));
    let (_, dlog) = weighted_cross_entropy(&t.logits, u, target, 1.0);
    let mut grads = Head {
        hidden: h.hidden.zero_like(),
        output: h.output.zero_like(),
    };
    let dz = h.backward(&z, &t, &dlog, rows, &mut grads);

    let mut worst = rel_error(&dz, &numeric_gradient(&z, STEP, |z| loss(&h, z).0));
    let params: [(&dyn Fn(&mut Head<f64>) -> &mut Vec<f64>, &Vec<f64>); 4] = [
        (&|h| &mut h.hidden.weight, &grads.hidden.weight),
        (&|h| &mut h.hidden.bias, &grads.hidden.bias),
        (&|h| &mut h.output.weight, &grads.output.weight),
        (&|h| &mut h.output.bias, &grads.output.bias),
    ];
    for (field, analytic) in params {
        let mut probe = h.clone();
        let base = field(&mut probe).clone();
        let n = numeric_gradient(&base, STEP, |p| {
            *field(&mut probe) = p.to_vec();
            loss(&probe, &z).0
        });
        worst = worst.max(rel_error(analytic, &n));
    }
    worst
}

/// A small random architecture and a cloud to run it on.
pub fn small_model(seed: u64) -> (MetricModel<f64>, Geometry) {
    let mut rng = rng_from_seed(seed);
    let w = |rng: &mut Rng| rng.gen_range(3..8);
    let cfg = ModelConfig {
        q1: rng.gen_range(6..14),
        q2: rng.gen_range(2..5),
        k1: rng.gen_range(2..5),
        k2: rng.gen_range(2..4),
        level1_widths: vec![w(&mut rng), w(&mut rng)],
        level2_widths: vec![w(&mut rng), w(&mut rng)],
        head_hidden: w(&mut rng),
        datasets: rng.gen_range(2..6),
        lambda: rng.gen_range(0.05..2.0),
        ..ModelConfig::default()
    };
    let mut model = MetricModel::<f64>::new(cfg, rng.gen(), Init::Random).unwrap();
    // Zero biases put every neighbour at offset zero exactly on the leaky-ReLU
    // kink, where finite differences are meaningless.
    for d in model.denses_mut() {
        d.bias = uniform(&mut rng, d.outputs, 0.5);
    }
    let n = rng.gen_range(30..80);
    let points: Vec<Point> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let geom = model.geometry(&points).unwrap();
    (model, geom)
}

fn extractor_params(m: &MetricModel<f64>) -> Vec<f64> {
    m.extractor
        .level1
        .iter()
        .chain(&m.extractor.level2)
        .flat_map(|d| d.weight.iter().chain(&d.bias).copied())
        .collect()
}

fn with_extractor_params(m: &MetricModel<f64>, flat: &[f64]) -> MetricModel<f64> {
    let mut out = m.clone();
    let mut it = flat.iter().copied();
    for d in out
        .extractor
        .level1
        .iter_mut()
        .chain(out.extractor.level2.iter_mut())
    {
        for v in d.weight.iter_mut().chain(d.bias.iter_mut()) {
            *v = it.next().unwrap();
        }
    }
    out
}

/// Result of a composite check.
#[derive(Debug, Clone, Copy)]
pub struct PieceCheck {
    pub error: f64,
    pub skipped: usize,
    pub total: usize,
}

/// Both abstraction levels: gradient of `⟨r, z⟩` with respect to every
/// extractor parameter.
pub fn extractor(seed: u64) -> PieceCheck {
    let (model, geom) = small_model(seed);
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    let trace = model.extractor.forward(&geom);
    let r = uniform(&mut rng, trace.z.len(), 1.0);
    let mut grads = model.zeros_like();
    model.extractor.backward(&geom, &trace, &r, &mut grads.extractor);
    let theta = extractor_params(&model);
    let n = numeric_gradient_on_piece(&theta, STEP, |p| {
        let t = with_extractor_params(&model, p).extractor.forward(&geom);
        (dot(&t.z, &r), t.signature())
    });
    let (error, skipped) = rel_error_kept(&extractor_params(&grads), &n);
    PieceCheck {
        error,
        skipped,
        total: theta.len(),
    }
}

/// Outcome of one reversal check.
#[derive(Debug, Clone, Copy)]
pub struct ReversalCheck {
    pub lambda: f64,
    /// Reversed extractor gradient against `-λ` times the finite-difference
    /// gradient of the adversary loss.
    pub numeric: f64,
    /// Extractor coordinates skipped by the finite differences, of `total`.
    pub skipped: usize,
    pub total: usize,
    /// Reversed extractor gradient against `-λ` times the analytic gradient
    /// computed without reversal.
    pub analytic: f64,
    /// Adversary-head gradient against finite differences (never reversed).
    pub adversary_head: f64,
}

/// Gradient reversal on a small random model: with only the adversary loss
/// active, the extractor receives `-λ` times the true gradient of that loss
/// while the adversary head receives the true gradient.
pub fn reversal(seed: u64) -> ReversalCheck {
    let (model, geom) = small_model(seed);
    let lambda = model.config.lambda;
    let labels = Labels {
        category: 0,
        dataset: (seed as usize) % model.config.datasets,
        classifier_weight: 0.0,
        adversary_weight: 1.0,
    };
    let grad_with = |m: &MetricModel<f64>| {
        let mut g = m.zeros_like();
        m.accumulate_gradients(&geom, &labels, None, &mut g, 1.0).unwrap();
        g
    };
    let reversed = grad_with(&model);
    let mut plain_model = model.clone();
    plain_model.config.lambda = -1.0;
    let plain = grad_with(&plain_model);

    let scaled = |v: Vec<f64>| v.into_iter().map(|x| -lambda * x).collect::<Vec<_>>();
    let theta = extractor_params(&model);
    let n = numeric_gradient_on_piece(&theta, STEP, |p| {
        let m = with_extractor_params(&model, p);
        let t = m.extractor.forward(&geom);
        let a = m.adversary.forward(&t.z, geom.q2(), None);
        let mut sig = t.signature();
        sig.extend(a.signature());
        (m.losses(&geom, &labels).adversary, sig)
    });
    let rev = extractor_params(&reversed);

    let head = &model.adversary.output.weight;
    let nh = numeric_gradient(head, STEP, |w| {
        let mut m = model.clone();
        m.adversary.output.weight = w.to_vec();
        m.losses(&geom, &labels).adversary
    });
    let neg: Vec<Option<f64>> = n.iter().map(|v| v.map(|x| -lambda * x)).collect();
    let (numeric, skipped) = rel_error_kept(&rev, &neg);
    ReversalCheck {
        lambda,
        numeric,
        skipped,
        total: theta.len(),
        analytic: rel_error(&rev, &scaled(extractor_params(&plain))),
        adversary_head: rel_error(&reversed.adversary.output.weight, &nh),
    }
}
