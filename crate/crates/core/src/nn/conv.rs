//! Convolution layers via im2col + matmul, plus the transposed variant used
//! by the generator and a direct depthwise kernel.

use super::{Layer, Param, WeightInit};
use ndarray::{Array1, Array2, Array4, ArrayD, Ix4};
use rand::Rng;

/// Unfold `x` (N,C,H,W) into (N*Hout*Wout, C*Kh*Kw) patch rows.
///
/// `out_h`/`out_w` must satisfy out = (in + 2p - k)/s + 1.
fn im2col(
    x: &Array4<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let mut col = Array2::<f32>::zeros((n * out_h * out_w, c * kh * kw));
    for ni in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let row = (ni * out_h + oy) * out_w + ox;
                let mut col_idx = 0;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            col_idx += kw;
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                col[[row, col_idx]] = x[[ni, ci, iy as usize, ix as usize]];
                            }
                            col_idx += 1;
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into an (N,C,H,W)
/// image.
fn col2im(
    col: &Array2<f32>,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
) -> Array4<f32> {
    let mut img = Array4::<f32>::zeros((n, c, h, w));
    for ni in 0..n {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let row = (ni * out_h + oy) * out_w + ox;
                let mut col_idx = 0;
                for ci in 0..c {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            col_idx += kw;
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                img[[ni, ci, iy as usize, ix as usize]] += col[[row, col_idx]];
                            }
                            col_idx += 1;
                        }
                    }
                }
            }
        }
    }
    img
}

fn to4(x: ArrayD<f32>) -> Array4<f32> {
    x.into_dimensionality::<Ix4>().expect("expected NCHW input")
}

/// (rows of (N,Hout,Wout) x Cout) -> (N, Cout, Hout, Wout)
fn rows_to_nchw(mat: Array2<f32>, n: usize, cout: usize, h: usize, w: usize) -> Array4<f32> {
    let nhwc = mat
        .into_shape_with_order((n, h, w, cout))
        .expect("row count matches");
    nhwc.permuted_axes([0, 3, 1, 2]).as_standard_layout().to_owned()
}

/// (N, Cout, H, W) -> (N*H*W, Cout)
fn nchw_to_rows(x: &Array4<f32>) -> Array2<f32> {
    let (n, c, h, w) = x.dim();
    let nhwc = x.view().permuted_axes([0, 2, 3, 1]);
    nhwc.as_standard_layout()
        .to_owned()
        .into_shape_with_order((n * h * w, c))
        .expect("contiguous")
}

/// Standard 2-D convolution.
#[derive(Clone)]
pub struct Conv2d {
    pub weight: Param, // (Cout, Cin, Kh, Kw)
    pub bias: Param,   // (Cout)
    stride: usize,
    pad: usize,
    cached_col: Option<Array2<f32>>,
    cached_in_dim: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = init.sample(rng, &[cout, cin, k, k], fan_in);
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[cout]))),
            stride,
            pad,
            cached_col: None,
            cached_in_dim: (0, 0, 0, 0),
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.value.shape()[2];
        (
            (h + 2 * self.pad - k) / self.stride + 1,
            (w + 2 * self.pad - k) / self.stride + 1,
        )
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = to4(x);
        let (n, cin, h, w) = x.dim();
        let wshape = self.weight.value.shape().to_vec();
        let (cout, kh, kw) = (wshape[0], wshape[2], wshape[3]);
        assert_eq!(cin, wshape[1], "conv input channels mismatch");
        let (oh, ow) = self.out_spatial(h, w);
        let col = im2col(&x, kh, kw, self.stride, self.pad, oh, ow);
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .expect("contiguous weight");
        let mut out = col.dot(&wmat.t()); // (N*oh*ow, Cout)
        let bias = self.bias.value.view().into_shape_with_order(cout).unwrap();
        out += &bias;
        self.cached_col = Some(col);
        self.cached_in_dim = (n, cin, h, w);
        rows_to_nchw(out, n, cout, oh, ow).into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = to4(grad_out);
        let (n, cout, oh, ow) = dy.dim();
        let col = self.cached_col.take().expect("forward before backward");
        let (_, cin, h, w) = self.cached_in_dim;
        let wshape = self.weight.value.shape().to_vec();
        let (kh, kw) = (wshape[2], wshape[3]);

        let dy_mat = nchw_to_rows(&dy); // (N*oh*ow, Cout)
        // dW = dY^T . col
        let dw = dy_mat.t().dot(&col);
        self.weight.grad += &dw
            .into_shape_with_order((cout, cin, kh, kw))
            .unwrap()
            .into_dyn();
        // db
        let db: Array1<f32> = dy_mat.sum_axis(ndarray::Axis(0));
        self.bias.grad += &db.into_dyn();
        // dX
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap();
        let dcol = dy_mat.dot(&wmat);
        col2im(&dcol, n, cin, h, w, kh, kw, self.stride, self.pad, oh, ow).into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.conv.w"), &mut self.weight.value);
        f(&format!("{prefix}.conv.b"), &mut self.bias.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Fractionally-strided (transposed) convolution; the generator's
/// upsampling primitive. Output spatial size is (in-1)*stride - 2*pad + k.
#[derive(Clone)]
pub struct ConvTranspose2d {
    pub weight: Param, // (Cin, Cout, Kh, Kw)
    pub bias: Param,   // (Cout)
    stride: usize,
    pad: usize,
    cached_x_mat: Option<Array2<f32>>,
    cached_in_dim: (usize, usize, usize, usize),
}

impl ConvTranspose2d {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let weight = init.sample(rng, &[cin, cout, k, k], fan_in);
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[cout]))),
            stride,
            pad,
            cached_x_mat: None,
            cached_in_dim: (0, 0, 0, 0),
        }
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.value.shape()[2];
        (
            (h - 1) * self.stride + k - 2 * self.pad,
            (w - 1) * self.stride + k - 2 * self.pad,
        )
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = to4(x);
        let (n, cin, h, w) = x.dim();
        let wshape = self.weight.value.shape().to_vec();
        let (cout, kh, kw) = (wshape[1], wshape[2], wshape[3]);
        assert_eq!(cin, wshape[0], "convT input channels mismatch");
        let (oh, ow) = self.out_spatial(h, w);

        let x_mat = nchw_to_rows(&x); // (N*h*w, Cin)
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((cin, cout * kh * kw))
            .unwrap();
        let col = x_mat.dot(&wmat); // (N*h*w, Cout*Kh*Kw)
        // scatter: input position (iy,ix) writes into y at iy*s+ky-p
        let mut y = col2im(&col, n, cout, oh, ow, kh, kw, self.stride, self.pad, h, w);
        for ci in 0..cout {
            let b = self.bias.value[[ci]];
            y.index_axis_mut(ndarray::Axis(1), ci).mapv_inplace(|v| v + b);
        }
        self.cached_x_mat = Some(x_mat);
        self.cached_in_dim = (n, cin, h, w);
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = to4(grad_out);
        let (n, cout, _oh, _ow) = dy.dim();
        let x_mat = self.cached_x_mat.take().expect("forward before backward");
        let (_, cin, h, w) = self.cached_in_dim;
        let wshape = self.weight.value.shape().to_vec();
        let (kh, kw) = (wshape[2], wshape[3]);

        // gather: dcol[row=(n,iy,ix), (cout,ky,kx)] = dY[n,cout,iy*s+ky-p,...]
        let dcol = im2col(&dy, kh, kw, self.stride, self.pad, h, w);
        // dW = X^T . dcol -> (Cin, Cout*Kh*Kw)
        let dw = x_mat.t().dot(&dcol);
        self.weight.grad += &dw
            .into_shape_with_order((cin, cout, kh, kw))
            .unwrap()
            .into_dyn();
        // db: sum dY over N,H,W
        let mut db = Array1::<f32>::zeros(cout);
        for ci in 0..cout {
            db[ci] = dy.index_axis(ndarray::Axis(1), ci).sum();
        }
        self.bias.grad += &db.into_dyn();
        // dX = dcol . W^T
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((cin, cout * kh * kw))
            .unwrap();
        let dx_mat = dcol.dot(&wmat.t()); // (N*h*w, Cin)
        let dx = dx_mat
            .into_shape_with_order((n, h, w, cin))
            .unwrap()
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned();
        dx.into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.convt.w"), &mut self.weight.value);
        f(&format!("{prefix}.convt.b"), &mut self.bias.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Per-channel KxK convolution (groups = channels), the first half of a
/// depthwise-separable block.
#[derive(Clone)]
pub struct DepthwiseConv2d {
    pub weight: Param, // (C, Kh, Kw)
    pub bias: Param,   // (C)
    stride: usize,
    pad: usize,
    cached_x: Option<Array4<f32>>,
}

impl DepthwiseConv2d {
    pub fn new(
        channels: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: WeightInit,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = init.sample(rng, &[channels, k, k], k * k);
        Self {
            weight: Param::new(weight),
            bias: Param::new(ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            stride,
            pad,
            cached_x: None,
        }
    }
}

impl Layer for DepthwiseConv2d {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = to4(x);
        let (n, c, h, w) = x.dim();
        let k = self.weight.value.shape()[1];
        let (s, p) = (self.stride, self.pad);
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (w + 2 * p - k) / s + 1;
        let mut y = Array4::<f32>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                let b = self.bias.value[[ci]];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    acc += self.weight.value[[ci, ky, kx]]
                                        * x[[ni, ci, iy as usize, ix as usize]];
                                }
                            }
                        }
                        y[[ni, ci, oy, ox]] = acc;
                    }
                }
            }
        }
        self.cached_x = Some(x);
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = to4(grad_out);
        let x = self.cached_x.take().expect("forward before backward");
        let (n, c, h, w) = x.dim();
        let k = self.weight.value.shape()[1];
        let (s, p) = (self.stride, self.pad);
        let (oh, ow) = (dy.dim().2, dy.dim().3);
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let mut db = 0.0;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = dy[[ni, ci, oy, ox]];
                        db += g;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - p as isize;
                                if ix >= 0 && ix < w as isize {
                                    self.weight.grad[[ci, ky, kx]] +=
                                        g * x[[ni, ci, iy as usize, ix as usize]];
                                    dx[[ni, ci, iy as usize, ix as usize]] +=
                                        g * self.weight.value[[ci, ky, kx]];
                                }
                            }
                        }
                    }
                }
                self.bias.grad[[ci]] += db;
            }
        }
        dx.into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.dwconv.w"), &mut self.weight.value);
        f(&format!("{prefix}.dwconv.b"), &mut self.bias.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}
