//! Batch and layer normalization.

use super::{Layer, Param};
use ndarray::{Array1, Array4, ArrayD, Axis, Ix4};

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with batch statistics and updates running stats
/// (unbiased variance, torch-style); eval mode uses the running stats, which
/// makes the layer affine and keeps attack-time gradients simple.
#[derive(Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: ArrayD<f32>,
    pub running_var: ArrayD<f32>,
    pub momentum: f32,
    pub eps: f32,
    cache: Option<BnCache>,
}

#[derive(Clone)]
struct BnCache {
    xhat: Array4<f32>,
    inv_std: Array1<f32>, // per channel
    train: bool,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::from_elem(ndarray::IxDyn(&[channels]), 1.0)),
            beta: Param::new(ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(ndarray::IxDyn(&[channels])),
            running_var: ArrayD::from_elem(ndarray::IxDyn(&[channels]), 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        let m = (n * h * w) as f32;

        // frozen layers keep their running statistics fixed
        let train = train && self.gamma.trainable;
        let (mean, var) = if train {
            let mut mean = Array1::<f32>::zeros(c);
            let mut var = Array1::<f32>::zeros(c);
            for ci in 0..c {
                let slice = x.index_axis(Axis(1), ci);
                let mu = slice.sum() / m;
                mean[ci] = mu;
                var[ci] = slice.mapv(|v| (v - mu) * (v - mu)).sum() / m;
            }
            // running stats use the unbiased variance
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            for ci in 0..c {
                self.running_mean[[ci]] =
                    (1.0 - self.momentum) * self.running_mean[[ci] ] + self.momentum * mean[ci];
                self.running_var[[ci]] = (1.0 - self.momentum) * self.running_var[[ci]]
                    + self.momentum * var[ci] * unbias;
            }
            (mean, var)
        } else {
            let mean = Array1::from_shape_fn(c, |ci| self.running_mean[[ci]]);
            let var = Array1::from_shape_fn(c, |ci| self.running_var[[ci]]);
            (mean, var)
        };

        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut xhat = Array4::<f32>::zeros(x.dim());
        let mut y = Array4::<f32>::zeros(x.dim());
        for ci in 0..c {
            let mu = mean[ci];
            let is = inv_std[ci];
            let g = self.gamma.value[[ci]];
            let b = self.beta.value[[ci]];
            let xc = x.index_axis(Axis(1), ci);
            let mut xh = xhat.index_axis_mut(Axis(1), ci);
            xh.assign(&xc.mapv(|v| (v - mu) * is));
            y.index_axis_mut(Axis(1), ci)
                .assign(&xh.mapv(|v| g * v + b));
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            train,
        });
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = grad_out.into_dimensionality::<Ix4>().expect("NCHW grad");
        let cache = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = dy.dim();
        let m = (n * h * w) as f32;
        let mut dx = Array4::<f32>::zeros(dy.dim());

        for ci in 0..c {
            let dy_c = dy.index_axis(Axis(1), ci);
            let xhat_c = cache.xhat.index_axis(Axis(1), ci);
            let g = self.gamma.value[[ci]];
            let is = cache.inv_std[ci];

            let dbeta: f32 = dy_c.sum();
            let dgamma: f32 = (&dy_c * &xhat_c).sum();
            self.beta.grad[[ci]] += dbeta;
            self.gamma.grad[[ci]] += dgamma;

            let mut dx_c = dx.index_axis_mut(Axis(1), ci);
            if cache.train {
                // dx = g*is/m * (m*dy - sum(dy) - xhat * sum(dy*xhat))
                let term = dy_c.mapv(|v| v * m) - dbeta - xhat_c.mapv(|v| v * dgamma);
                dx_c.assign(&term.mapv(|v| v * g * is / m));
            } else {
                dx_c.assign(&dy_c.mapv(|v| v * g * is));
            }
        }
        dx.into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.bn.gamma"), &mut self.gamma.value);
        f(&format!("{prefix}.bn.beta"), &mut self.beta.value);
        f(&format!("{prefix}.bn.rmean"), &mut self.running_mean);
        f(&format!("{prefix}.bn.rvar"), &mut self.running_var);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Normalization over the last axis, for (N, T, D) token streams.
#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
    pub eps: f32,
    cache: Option<(ArrayD<f32>, ArrayD<f32>)>, // (xhat, inv_std rows)
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::from_elem(ndarray::IxDyn(&[dim]), 1.0)),
            beta: Param::new(ArrayD::zeros(ndarray::IxDyn(&[dim]))),
            eps: 1e-5,
            cache: None,
        }
    }
}

impl Layer for LayerNorm {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let shape = x.shape().to_vec();
        let d = *shape.last().unwrap();
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let x2 = x.into_shape_with_order((rows, d)).expect("contiguous");
        let mut xhat = x2.clone();
        let mut inv_std = ndarray::Array1::<f32>::zeros(rows);
        for r in 0..rows {
            let mut row = xhat.row_mut(r);
            let mu = row.sum() / d as f32;
            let var = row.mapv(|v| (v - mu) * (v - mu)).sum() / d as f32;
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[r] = is;
            row.mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = xhat.clone();
        for r in 0..rows {
            let mut row = y.row_mut(r);
            for j in 0..d {
                row[j] = row[j] * self.gamma.value[[j]] + self.beta.value[[j]];
            }
        }
        self.cache = Some((xhat.into_dyn(), inv_std.into_dyn()));
        y.into_shape_with_order(ndarray::IxDyn(&shape)).unwrap()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let shape = grad_out.shape().to_vec();
        let d = *shape.last().unwrap();
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let dy = grad_out.into_shape_with_order((rows, d)).unwrap();
        let (xhat, inv_std) = self.cache.take().expect("forward before backward");
        let xhat = xhat.into_shape_with_order((rows, d)).unwrap();
        let inv_std = inv_std.into_shape_with_order(rows).unwrap();

        let mut dx = ndarray::Array2::<f32>::zeros((rows, d));
        for r in 0..rows {
            let dy_r = dy.row(r);
            let xh_r = xhat.row(r);
            // dxhat = dy * gamma
            let dxhat: Vec<f32> = (0..d).map(|j| dy_r[j] * self.gamma.value[[j]]).collect();
            let mean_dxhat: f32 = dxhat.iter().sum::<f32>() / d as f32;
            let mean_dxhat_xhat: f32 =
                dxhat.iter().zip(xh_r.iter()).map(|(a, b)| a * b).sum::<f32>() / d as f32;
            let is = inv_std[r];
            for j in 0..d {
                dx[[r, j]] = is * (dxhat[j] - mean_dxhat - xh_r[j] * mean_dxhat_xhat);
                self.gamma.grad[[j]] += dy_r[j] * xh_r[j];
                self.beta.grad[[j]] += dy_r[j];
            }
        }
        dx.into_shape_with_order(ndarray::IxDyn(&shape)).unwrap()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.ln.gamma"), &mut self.gamma.value);
        f(&format!("{prefix}.ln.beta"), &mut self.beta.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Appends one channel holding the batch's mean feature standard deviation
/// (anti-mode-collapse signal for discriminators). With a single-element
/// batch the channel is zero.
#[derive(Clone, Default)]
pub struct MinibatchStdDev {
    cache: Option<(Array4<f32>, Array4<f32>, f32)>, // (x, per-cell std, eps-guarded s)
    pub eps: f32,
}

impl MinibatchStdDev {
    pub fn new() -> Self {
        Self {
            cache: None,
            eps: 1e-8,
        }
    }
}

impl Layer for MinibatchStdDev {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        let mut std_map = Array4::<f32>::zeros((1, c, h, w));
        if n > 1 {
            for ci in 0..c {
                for y in 0..h {
                    for xi in 0..w {
                        let mut mean = 0.0f32;
                        for ni in 0..n {
                            mean += x[[ni, ci, y, xi]];
                        }
                        mean /= n as f32;
                        let mut var = 0.0f32;
                        for ni in 0..n {
                            let d = x[[ni, ci, y, xi]] - mean;
                            var += d * d;
                        }
                        var /= n as f32;
                        std_map[[0, ci, y, xi]] = (var + self.eps).sqrt();
                    }
                }
            }
        }
        let s = if n > 1 {
            std_map.sum() / (c * h * w) as f32
        } else {
            0.0
        };
        let mut out = Array4::<f32>::zeros((n, c + 1, h, w));
        out.slice_mut(ndarray::s![.., ..c, .., ..]).assign(&x);
        out.slice_mut(ndarray::s![.., c.., .., ..]).fill(s);
        self.cache = Some((x, std_map, s));
        out.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = grad_out.into_dimensionality::<Ix4>().expect("NCHW grad");
        let (x, std_map, _s) = self.cache.take().expect("forward before backward");
        let (n, c, h, w) = x.dim();
        let mut dx = dy.slice(ndarray::s![.., ..c, .., ..]).to_owned();
        if n > 1 {
            // gradient of s = mean_chw std_chw, std over the batch axis
            let g_s: f32 = dy.slice(ndarray::s![.., c.., .., ..]).sum();
            let scale = g_s / (c * h * w) as f32;
            for ci in 0..c {
                for y in 0..h {
                    for xi in 0..w {
                        let std = std_map[[0, ci, y, xi]];
                        let mut mean = 0.0f32;
                        for ni in 0..n {
                            mean += x[[ni, ci, y, xi]];
                        }
                        mean /= n as f32;
                        for ni in 0..n {
                            dx[[ni, ci, y, xi]] +=
                                scale * (x[[ni, ci, y, xi]] - mean) / (n as f32 * std);
                        }
                    }
                }
            }
        }
        dx.into_dyn()
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck;
    use super::*;

    fn input4() -> ArrayD<f32> {
        ArrayD::from_shape_fn(ndarray::IxDyn(&[3, 2, 4, 4]), |i| {
            ((i[0] * 32 + i[1] * 16 + i[2] * 4 + i[3]) as f32 * 0.23).cos() * 1.5
        })
    }

    #[test]
    fn batchnorm_train_normalizes() {
        let mut bn = BatchNorm2d::new(2);
        let y = bn
            .forward(input4(), true)
            .into_dimensionality::<Ix4>()
            .unwrap();
        for ci in 0..2 {
            let slice = y.index_axis(Axis(1), ci);
            let m = slice.sum() / slice.len() as f32;
            let v = slice.mapv(|x| (x - m) * (x - m)).sum() / slice.len() as f32;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn batchnorm_gradcheck_train() {
        let mut bn = BatchNorm2d::new(2);
        // scale/shift away from the identity so the check is non-trivial
        bn.gamma.value[[0]] = 1.3;
        bn.gamma.value[[1]] = 0.7;
        bn.beta.value[[0]] = 0.2;
        let x = input4();
        gradcheck::check_input_grad(&mut bn, &x, true);
        gradcheck::check_param_grads(&mut bn, &x, true);
    }

    #[test]
    fn batchnorm_gradcheck_eval() {
        let mut bn = BatchNorm2d::new(2);
        // populate running stats
        let _ = bn.forward(input4(), true);
        let x = input4() * 0.8;
        gradcheck::check_input_grad(&mut bn, &x, false);
    }

    #[test]
    fn minibatch_stddev_gradcheck() {
        let mut layer = MinibatchStdDev::new();
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[3, 2, 2, 2]), |i| {
            ((i[0] * 8 + i[1] * 4 + i[2] * 2 + i[3]) as f32 * 0.31).sin() * 1.2
        });
        gradcheck::check_input_grad(&mut layer, &x, true);
    }

    #[test]
    fn minibatch_stddev_constant_batch_appends_zero() {
        let mut layer = MinibatchStdDev::new();
        // identical items -> stddev ~ 0 (eps-guarded)
        let x = ArrayD::from_elem(ndarray::IxDyn(&[4, 2, 2, 2]), 0.7f32);
        let y = layer.forward(x, true).into_dimensionality::<Ix4>().unwrap();
        assert_eq!(y.dim(), (4, 3, 2, 2));
        assert!(y[[0, 2, 0, 0]] < 1e-3);
        // single-element batch -> exactly zero
        let x1 = ArrayD::from_elem(ndarray::IxDyn(&[1, 2, 2, 2]), 0.7f32);
        let y1 = layer.forward(x1, true).into_dimensionality::<Ix4>().unwrap();
        assert_eq!(y1[[0, 2, 1, 1]], 0.0);
    }

    #[test]
    fn layernorm_gradcheck() {
        let mut ln = LayerNorm::new(6);
        ln.gamma.value[[2]] = 1.4;
        ln.beta.value[[4]] = -0.3;
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3, 6]), |i| {
            ((i[0] * 18 + i[1] * 6 + i[2]) as f32 * 0.41).sin() * 2.0
        });
        gradcheck::check_input_grad(&mut ln, &x, true);
        gradcheck::check_param_grads(&mut ln, &x, true);
    }
}
