//! Spatial pooling.

use super::Layer;
use ndarray::{Array2, Array4, ArrayD, Ix4};

/// Non-overlapping max pooling (kernel = stride). Ties route the gradient to
/// the first maximal element in scan order.
#[derive(Clone)]
pub struct MaxPool2d {
    pub k: usize,
    cached_argmax: Option<Vec<(usize, usize)>>, // (iy, ix) per output element
    cached_in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            cached_argmax: None,
            cached_in_dim: (0, 0, 0, 0),
        }
    }
}

impl Layer for MaxPool2d {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        let k = self.k;
        let (oh, ow) = (h / k, w / k);
        let mut y = Array4::<f32>::zeros((n, c, oh, ow));
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_pos = (oy * k, ox * k);
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = (oy * k + ky, ox * k + kx);
                                let v = x[[ni, ci, iy, ix]];
                                if v > best {
                                    best = v;
                                    best_pos = (iy, ix);
                                }
                            }
                        }
                        y[[ni, ci, oy, ox]] = best;
                        argmax.push(best_pos);
                    }
                }
            }
        }
        self.cached_argmax = Some(argmax);
        self.cached_in_dim = (n, c, h, w);
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = grad_out.into_dimensionality::<Ix4>().expect("NCHW grad");
        let (n, c, oh, ow) = dy.dim();
        let argmax = self.cached_argmax.take().expect("forward before backward");
        let (in_n, in_c, h, w) = self.cached_in_dim;
        assert_eq!((n, c), (in_n, in_c));
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let mut i = 0;
        for ni in 0..n {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let (iy, ix) = argmax[i];
                        dx[[ni, ci, iy, ix]] += dy[[ni, ci, oy, ox]];
                        i += 1;
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

/// (N, C, H, W) -> (N, C) spatial mean.
#[derive(Clone, Default)]
pub struct GlobalAvgPool {
    cached_in_dim: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        self.cached_in_dim = (n, c, h, w);
        let mut y = Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                y[[ni, ci]] = x.index_axis(ndarray::Axis(0), ni)
                    .index_axis(ndarray::Axis(0), ci)
                    .sum()
                    / (h * w) as f32;
            }
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let (n, c, h, w) = self.cached_in_dim;
        let dy = grad_out
            .into_shape_with_order((n, c))
            .expect("grad shape");
        let scale = 1.0 / (h * w) as f32;
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                dx.index_axis_mut(ndarray::Axis(0), ni)
                    .index_axis_mut(ndarray::Axis(0), ci)
                    .fill(dy[[ni, ci]] * scale);
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

    fn input() -> ArrayD<f32> {
        ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3, 4, 4]), |i| {
            ((i[0] * 48 + i[1] * 16 + i[2] * 4 + i[3]) as f32 * 0.7).sin()
        })
    }

    #[test]
    fn maxpool_halves_spatial() {
        let mut mp = MaxPool2d::new(2);
        let y = mp.forward(input(), true);
        assert_eq!(y.shape(), &[2, 3, 2, 2]);
    }

    #[test]
    fn maxpool_gradcheck() {
        // strictly distinct values avoid tie ambiguity in finite differences
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[1, 2, 4, 4]), |i| {
            (i[0] * 32 + i[1] * 16 + i[2] * 4 + i[3]) as f32 * 0.21
        });
        gradcheck::check_input_grad(&mut MaxPool2d::new(2), &x, true);
    }

    #[test]
    fn gap_gradcheck() {
        gradcheck::check_input_grad(&mut GlobalAvgPool::new(), &input(), true);
    }
}
