//! Minimal CPU neural-network substrate with explicit forward/backward
//! passes.
//!
//! Built for desk-scale models (32x32 images, a few hundred thousand
//! parameters) where reproducibility matters more than throughput: all
//! kernels are single-threaded and deterministic, so identical seeds give
//! bit-identical parameter digests. Attacks need gradients with respect to
//! the *input*, so every layer's `backward` returns dL/dx in addition to
//! accumulating parameter gradients.

mod act;
mod attn;
mod conv;
mod dense;
mod loss;
mod norm;
pub mod optim;
mod pool;
pub mod serial;

pub use act::{Gelu, LeakyRelu, Relu, Sigmoid, Tanh};
pub use attn::{MeanPoolTokens, MultiHeadSelfAttention, PositionalEmbedding, TokensFromMap};
pub use conv::{Conv2d, ConvTranspose2d, DepthwiseConv2d};
pub use dense::{Flatten, Linear};
pub use loss::{bce_with_logits, softmax, softmax_cross_entropy};
pub use norm::{BatchNorm2d, LayerNorm, MinibatchStdDev};
pub use pool::{GlobalAvgPool, MaxPool2d};

use ndarray::ArrayD;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self {
            value,
            grad,
            trainable: true,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// How to draw initial weights.
#[derive(Debug, Clone, Copy)]
pub enum WeightInit {
    /// Normal with std sqrt(2 / fan_in).
    KaimingNormal,
    /// Normal with a fixed std (0.02 for the GAN pair).
    Normal(f32),
}

impl WeightInit {
    pub fn sample(&self, rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> ArrayD<f32> {
        let std = match self {
            WeightInit::KaimingNormal => (2.0 / fan_in as f32).sqrt(),
            WeightInit::Normal(s) => *s,
        };
        let dist = Normal::new(0.0f32, std).expect("valid normal");
        let n: usize = shape.iter().product();
        let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
        ArrayD::from_shape_vec(ndarray::IxDyn(shape), data).expect("shape matches data")
    }
}

/// One differentiable stage. `forward` caches whatever `backward` needs;
/// `backward` accumulates parameter gradients and returns the gradient with
/// respect to the layer input.
///
/// Layers are plain data (`Send + Sync`); concurrent use goes through
/// clones, since `forward` mutates the internal cache.
pub trait Layer: Send + Sync {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32>;
    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32>;

    /// Visit trainable parameters in a fixed order (for optimizers).
    fn visit_params(&mut self, _f: &mut dyn FnMut(&mut Param)) {}

    /// Visit every persistent tensor (parameters *and* buffers such as
    /// batch-norm running stats) for serialization and digests.
    fn visit_tensors(&mut self, _prefix: &str, _f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {}

    fn clone_layer(&self) -> Box<dyn Layer>;
}

impl Clone for Box<dyn Layer> {
    fn clone(&self) -> Self {
        self.clone_layer()
    }
}

/// A straight-line chain of layers. Also usable as a layer itself, which is
/// how residual blocks and transformer blocks compose.
#[derive(Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.value.len());
        n
    }

    /// Mark the parameters of layers `[0, upto)` as frozen (or trainable).
    pub fn set_trainable_below(&mut self, upto: usize, trainable: bool) {
        for layer in self.layers.iter_mut().take(upto) {
            layer.visit_params(&mut |p| p.trainable = trainable);
        }
    }

    /// SHA-256 over all persistent tensors, in visitation order.
    pub fn param_digest(&mut self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        self.visit_tensors("", &mut |name, t| {
            hasher.update(name.as_bytes());
            for v in t.iter() {
                hasher.update(v.to_le_bytes());
            }
        });
        hex::encode(hasher.finalize())
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        self.layers
            .iter_mut()
            .fold(x, |acc, layer| layer.forward(acc, train))
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        self.layers
            .iter_mut()
            .rev()
            .fold(grad_out, |acc, layer| layer.backward(acc))
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for layer in &mut self.layers {
            layer.visit_params(f);
        }
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let child = if prefix.is_empty() {
                format!("{i}")
            } else {
                format!("{prefix}.{i}")
            };
            layer.visit_tensors(&child, f);
        }
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// y = inner(x) + shortcut(x), with an identity shortcut when none is given.
#[derive(Clone)]
pub struct Residual {
    pub inner: Sequential,
    pub shortcut: Option<Sequential>,
}

impl Residual {
    pub fn identity(inner: Sequential) -> Self {
        Self {
            inner,
            shortcut: None,
        }
    }

    pub fn projected(inner: Sequential, shortcut: Sequential) -> Self {
        Self {
            inner,
            shortcut: Some(shortcut),
        }
    }
}

impl Layer for Residual {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let branch = self.inner.forward(x.clone(), train);
        let skip = match &mut self.shortcut {
            Some(proj) => proj.forward(x, train),
            None => x,
        };
        branch + skip
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let d_branch = self.inner.backward(grad_out.clone());
        let d_skip = match &mut self.shortcut {
            Some(proj) => proj.backward(grad_out),
            None => grad_out,
        };
        d_branch + d_skip
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.inner.visit_params(f);
        if let Some(proj) = &mut self.shortcut {
            proj.visit_params(f);
        }
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        self.inner.visit_tensors(&format!("{prefix}.main"), f);
        if let Some(proj) = &mut self.shortcut {
            proj.visit_tensors(&format!("{prefix}.skip"), f);
        }
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Finite-difference oracle used by the per-layer tests.

    use super::*;
    use ndarray::ArrayD;

    /// Compare analytic input gradients against central differences of a
    /// scalar objective sum(y * probe).
    pub fn check_input_grad(layer: &mut dyn Layer, x: &ArrayD<f32>, train: bool) {
        let probe = make_probe(&layer.forward(x.clone(), train));
        let analytic = layer.backward(probe.clone());

        let eps = 1e-2f32;
        let mut max_err = 0.0f32;
        let mut max_ref = 0.0f32;
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += eps;
            xm.as_slice_mut().unwrap()[idx] -= eps;
            let yp = layer.forward(xp, train);
            let ym = layer.forward(xm, train);
            let fp: f32 = yp.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            let fm: f32 = ym.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            let numeric = (fp - fm) / (2.0 * eps);
            let a = analytic.as_slice().unwrap()[idx];
            max_err = max_err.max((a - numeric).abs());
            max_ref = max_ref.max(numeric.abs()).max(a.abs());
        }
        let tol = 1e-2 * max_ref.max(1.0);
        assert!(
            max_err < tol,
            "input gradcheck failed: max err {max_err}, scale {max_ref}"
        );
    }

    /// Compare analytic parameter gradients against central differences.
    pub fn check_param_grads(layer: &mut dyn Layer, x: &ArrayD<f32>, train: bool) {
        let probe = make_probe(&layer.forward(x.clone(), train));
        layer.visit_params(&mut |p| p.zero_grad());
        let _ = layer.forward(x.clone(), train);
        let _ = layer.backward(probe.clone());

        let mut analytic: Vec<ArrayD<f32>> = Vec::new();
        layer.visit_params(&mut |p| analytic.push(p.grad.clone()));

        let eps = 1e-2f32;
        for pi in 0..analytic.len() {
            let n = analytic[pi].len();
            for idx in (0..n).step_by((n / 16).max(1)) {
                let set = |delta: f32, layer: &mut dyn Layer| {
                    let mut k = 0;
                    layer.visit_params(&mut |p| {
                        if k == pi {
                            p.value.as_slice_mut().unwrap()[idx] += delta;
                        }
                        k += 1;
                    });
                };
                set(eps, layer);
                let yp = layer.forward(x.clone(), train);
                set(-2.0 * eps, layer);
                let ym = layer.forward(x.clone(), train);
                set(eps, layer);
                let fp: f32 = yp.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
                let fm: f32 = ym.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
                let numeric = (fp - fm) / (2.0 * eps);
                let a = analytic[pi].as_slice().unwrap()[idx];
                let tol = 1e-2 * numeric.abs().max(a.abs()).max(1.0);
                assert!(
                    (a - numeric).abs() < tol,
                    "param gradcheck failed at param {pi} idx {idx}: analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    fn make_probe(y: &ArrayD<f32>) -> ArrayD<f32> {
        // deterministic pseudo-random probe so the scalar objective exercises
        // every output coordinate differently
        let mut v = 0.37f32;
        y.mapv(|_| {
            v = (v * 1.7 + 0.31).rem_euclid(2.0) - 1.0;
            v
        })
    }
}
