//! Elementwise activations.

use super::Layer;
use ndarray::ArrayD;

#[derive(Clone, Default)]
pub struct Relu {
    cached_mask: Option<ArrayD<f32>>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Relu {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let y = &x * &mask;
        self.cached_mask = Some(mask);
        y
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        grad_out * self.cached_mask.take().expect("forward before backward")
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Clone)]
pub struct LeakyRelu {
    pub slope: f32,
    cached_mask: Option<ArrayD<f32>>,
}

impl LeakyRelu {
    pub fn new(slope: f32) -> Self {
        Self {
            slope,
            cached_mask: None,
        }
    }
}

impl Layer for LeakyRelu {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let slope = self.slope;
        let mask = x.mapv(|v| if v > 0.0 { 1.0 } else { slope });
        let y = &x * &mask;
        self.cached_mask = Some(mask);
        y
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        grad_out * self.cached_mask.take().expect("forward before backward")
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Default)]
pub struct Tanh {
    cached_y: Option<ArrayD<f32>>,
}

impl Tanh {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Tanh {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let y = x.mapv(f32::tanh);
        self.cached_y = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let y = self.cached_y.take().expect("forward before backward");
        grad_out * y.mapv(|v| 1.0 - v * v)
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Default)]
pub struct Sigmoid {
    cached_y: Option<ArrayD<f32>>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Sigmoid {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let y = x.mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.cached_y = Some(y.clone());
        y
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let y = self.cached_y.take().expect("forward before backward");
        grad_out * y.mapv(|v| v * (1.0 - v))
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Gaussian error linear unit (tanh approximation).
#[derive(Clone, Default)]
pub struct Gelu {
    cached_x: Option<ArrayD<f32>>,
}

impl Gelu {
    pub fn new() -> Self {
        Self::default()
    }

    fn phi(v: f32) -> f32 {
        const C: f32 = 0.797_884_6; // sqrt(2/pi)
        0.5 * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh())
    }
}

impl Layer for Gelu {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let y = x.mapv(|v| v * Self::phi(v));
        self.cached_x = Some(x);
        y
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        const C: f32 = 0.797_884_6;
        let x = self.cached_x.take().expect("forward before backward");
        let dydx = x.mapv(|v| {
            let inner = C * (v + 0.044715 * v * v * v);
            let t = inner.tanh();
            let sech2 = 1.0 - t * t;
            0.5 * (1.0 + t) + 0.5 * v * sech2 * C * (1.0 + 3.0 * 0.044715 * v * v)
        });
        grad_out * dydx
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;

    fn input() -> ArrayD<f32> {
        // keep values away from the ReLU kink at 0 so finite differences
        // never straddle it
        ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3, 4]), |i| {
            let v = ((i[0] * 12 + i[1] * 4 + i[2]) as f32 * 0.37 + 0.21).sin() * 2.0;
            if v.abs() < 0.1 {
                v + 0.2
            } else {
                v
            }
        })
    }

    #[test]
    fn relu_gradcheck() {
        gradcheck::check_input_grad(&mut Relu::new(), &input(), true);
    }

    #[test]
    fn leaky_relu_gradcheck() {
        gradcheck::check_input_grad(&mut LeakyRelu::new(0.2), &input(), true);
    }

    #[test]
    fn tanh_gradcheck() {
        gradcheck::check_input_grad(&mut Tanh::new(), &input(), true);
    }

    #[test]
    fn sigmoid_gradcheck() {
        gradcheck::check_input_grad(&mut Sigmoid::new(), &input(), true);
    }

    #[test]
    fn gelu_gradcheck() {
        gradcheck::check_input_grad(&mut Gelu::new(), &input(), true);
    }

    #[test]
    fn tanh_range() {
        let y = Tanh::new().forward(input() * 50.0, true);
        for v in y.iter() {
            assert!(*v >= -1.0 && *v <= 1.0);
        }
    }
}
