//! Layer primitives with hand-written backward passes.

use rand::Rng as _;

use super::scalar::Scalar;
use crate::rng::Rng;

/// Negative-side slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Fully connected layer `y = x W + b`, applied row-wise. A 1×1 convolution
/// over (query, neighbour) pairs is exactly this layer applied to every pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `inputs × outputs`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// He-style uniform fan-in initialisation, zero bias.
    pub fn he_uniform(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| T::of(rng.gen_range(-limit..limit)))
            .collect();
        Self {
            inputs,
            outputs,
            weight,
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.inputs);
        let mut y = Vec::with_capacity(rows * self.outputs);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias);
        }
        T::gemm(
            rows,
            self.inputs,
            self.outputs,
            x,
            false,
            &self.weight,
            false,
            &mut y,
            true,
        );
        y
    }

    /// Accumulate `dW += xᵀ dy`, `db += Σ dy` into `grad`; return `dy Wᵀ` when
    /// `want_dx`.
    pub fn backward(
        &self,
        x: &[T],
        dy: &[T],
        rows: usize,
        grad: &mut Dense<T>,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), rows * self.outputs);
        T::gemm(
            self.inputs,
            rows,
            self.outputs,
            x,
            true,
            dy,
            false,
            &mut grad.weight,
            true,
        );
        for r in dy.chunks_exact(self.outputs) {
            for (g, d) in grad.bias.iter_mut().zip(r) {
                *g = *g + *d;
            }
        }
        want_dx.then(|| {
            let mut dx = vec![T::zero(); rows * self.inputs];
            T::gemm(
                rows,
                self.outputs,
                self.inputs,
                dy,
                false,
                &self.weight,
                true,
                &mut dx,
                false,
            );
            dx
        })
    }

    pub fn zero_like(&self) -> Self {
        Self::zeros(self.inputs, self.outputs)
    }
}

pub fn leaky_relu_inplace<T: Scalar>(v: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for x in v.iter_mut() {
        if *x < T::zero() {
            *x = *x * s;
        }
    }
}

/// Multiply `dy` by the leaky-ReLU derivative, read off the activation output
/// `y` (the sign is preserved by a positive slope).
pub fn leaky_relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    let s = T::of(LEAKY_SLOPE);
    for (g, out) in dy.iter_mut().zip(y) {
        if *out <= T::zero() {
            *g = *g * s;
        }
    }
}

/// Maximum over the neighbour axis of a `[Q × K × C]` block. Returns the
/// `[Q × C]` maxima and, per output, the neighbour slot that produced it
/// (the first maximal slot in neighbour order).
pub fn max_over_neighbors<T: Scalar>(x: &[T], q: usize, k: usize, c: usize) -> (Vec<T>, Vec<u32>) {
    debug_assert_eq!(x.len(), q * k * c);
    let mut out = Vec::with_capacity(q * c);
    let mut arg = Vec::with_capacity(q * c);
    for block in x.chunks_exact(k * c) {
        let first = &block[..c];
        let start = out.len();
        out.extend_from_slice(first);
        arg.extend(std::iter::repeat_n(0u32, c));
        for slot in 1..k {
            let row = &block[slot * c..(slot + 1) * c];
            for ch in 0..c {
                if row[ch] > out[start + ch] {
                    out[start + ch] = row[ch];
                    arg[start + ch] = slot as u32;
                }
            }
        }
    }
    (out, arg)
}

/// Route each output gradient to its maximising neighbour slot.
pub fn max_over_neighbors_backward<T: Scalar>(dy: &[T], arg: &[u32], q: usize, k: usize, c: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); q * k * c];
    for qi in 0..q {
        for ch in 0..c {
            let i = qi * c + ch;
            let slot = arg[i] as usize;
            dx[(qi * k + slot) * c + ch] = dy[i];
        }
    }
    dx
}

/// Row-wise softmax of a `[rows × u]` matrix.
pub fn softmax_rows<T: Scalar>(logits: &[T], u: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(u) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let start = out.len();
        let mut sum = T::zero();
        for &v in row {
            let e = (v - m).exp();
            sum = sum + e;
            out.push(e);
        }
        for p in &mut out[start..] {
            *p = *p / sum;
        }
    }
    out
}

/// Inverted dropout mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut Rng) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    (0..len)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { T::zero() })
        .collect()
}

/// Gradient reversal connector: identity forward, `-λ` times the upstream
/// gradient backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReversal {
    pub lambda: f64,
}

impl GradientReversal {
    pub fn new(lambda: f64) -> Self {
        Self { lambda }
    }

    pub fn forward<'a, T>(&self, z: &'a [T]) -> &'a [T] {
        z
    }

    pub fn backward<T: Scalar>(&self, upstream: &[T]) -> Vec<T> {
        let f = T::of(-self.lambda);
        upstream.iter().map(|g| *g * f).collect()
    }
}
