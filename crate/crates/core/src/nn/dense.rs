//! Fully-connected layer and the flatten adapter.

use super::{Layer, Param, WeightInit};
use ndarray::{Array2, ArrayD, Ix2};
use rand::Rng;

/// y = x W^T + b with weight (out, in).
///
/// Accepts (N, in) or (N, T, in) inputs; the token dimension is folded into
/// the batch for the matmul.
#[derive(Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    cached_x: Option<Array2<f32>>,
    cached_shape: Vec<usize>,
}

impl Linear {
    pub fn new(
        in_features: usize,
        out_features: usize,
        init: WeightInit,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = init.sample(rng, &[out_features, in_features], in_features);
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[out_features]))),
            cached_x: None,
            cached_shape: Vec::new(),
        }
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let shape = x.shape().to_vec();
        let in_features = *shape.last().expect("nonempty shape");
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let x2 = x
            .into_shape_with_order((rows, in_features))
            .expect("contiguous input")
            .into_dimensionality::<Ix2>()
            .unwrap();
        let wmat = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let mut y = x2.dot(&wmat.t());
        let out_features = self.weight.value.shape()[0];
        let bias = self
            .bias
            .value
            .view()
            .into_shape_with_order(out_features)
            .unwrap();
        y += &bias;
        self.cached_x = Some(x2);
        self.cached_shape = shape;
        let mut out_shape = self.cached_shape.clone();
        *out_shape.last_mut().unwrap() = out_features;
        y.into_shape_with_order(ndarray::IxDyn(&out_shape))
            .unwrap()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let x2 = self.cached_x.take().expect("forward before backward");
        let out_features = self.weight.value.shape()[0];
        let rows = x2.dim().0;
        let dy = grad_out
            .into_shape_with_order((rows, out_features))
            .expect("grad shape")
            .into_dimensionality::<Ix2>()
            .unwrap();
        self.weight.grad += &dy.t().dot(&x2).into_dyn();
        self.bias.grad += &dy.sum_axis(ndarray::Axis(0)).into_dyn();
        let wmat = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let dx = dy.dot(&wmat);
        dx.into_shape_with_order(ndarray::IxDyn(&self.cached_shape))
            .unwrap()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.linear.w"), &mut self.weight.value);
        f(&format!("{prefix}.linear.b"), &mut self.bias.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// (N, ...) -> (N, prod(...)).
#[derive(Clone, Default)]
pub struct Flatten {
    cached_shape: Vec<usize>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Flatten {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        self.cached_shape = x.shape().to_vec();
        let n = self.cached_shape[0];
        let rest: usize = self.cached_shape[1..].iter().product();
        x.into_shape_with_order(ndarray::IxDyn(&[n, rest]))
            .expect("contiguous")
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        grad_out
            .into_shape_with_order(ndarray::IxDyn(&self.cached_shape))
            .expect("shape round-trip")
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn linear_gradcheck_2d() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut lin = Linear::new(5, 4, WeightInit::KaimingNormal, &mut rng);
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[3, 5]), |i| {
            (i[0] as f32 - i[1] as f32) * 0.3
        });
        gradcheck::check_input_grad(&mut lin, &x, true);
        gradcheck::check_param_grads(&mut lin, &x, true);
    }

    #[test]
    fn linear_gradcheck_tokens() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new(6, 3, WeightInit::KaimingNormal, &mut rng);
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 4, 6]), |i| {
            ((i[0] + 2 * i[1] + 3 * i[2]) as f32 * 0.11).sin()
        });
        gradcheck::check_input_grad(&mut lin, &x, true);
    }

    #[test]
    fn flatten_round_trip() {
        let mut fl = Flatten::new();
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3, 4, 4]), |i| i[3] as f32);
        let y = fl.forward(x.clone(), true);
        assert_eq!(y.shape(), &[2, 48]);
        let back = fl.backward(y);
        assert_eq!(back, x);
    }
}
