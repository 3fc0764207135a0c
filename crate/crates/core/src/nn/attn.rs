//! Token-stream layers for the patch-attention classifier.

use super::{Layer, Param, WeightInit};
use ndarray::{Array2, Array3, ArrayD, Ix3, Ix4};
use rand::Rng;

/// (N, C, H, W) -> (N, H*W, C): feature-map cells become tokens.
#[derive(Clone, Default)]
pub struct TokensFromMap {
    cached_dim: (usize, usize, usize, usize),
}

impl TokensFromMap {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for TokensFromMap {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix4>().expect("NCHW input");
        let (n, c, h, w) = x.dim();
        self.cached_dim = (n, c, h, w);
        let nhwc = x.permuted_axes([0, 2, 3, 1]).as_standard_layout().to_owned();
        nhwc.into_shape_with_order((n, h * w, c))
            .expect("contiguous")
            .into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let (n, c, h, w) = self.cached_dim;
        let dy = grad_out
            .into_shape_with_order((n, h, w, c))
            .expect("grad shape");
        dy.permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
            .into_dyn()
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Learned additive positional embedding for (N, T, D) tokens.
#[derive(Clone)]
pub struct PositionalEmbedding {
    pub emb: Param, // (T, D)
}

impl PositionalEmbedding {
    pub fn new(tokens: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let emb = WeightInit::Normal(0.02).sample(rng, &[tokens, dim], dim);
        Self {
            emb: Param::new(emb),
        }
    }
}

impl Layer for PositionalEmbedding {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let mut x = x.into_dimensionality::<Ix3>().expect("NTD input");
        let (n, t, d) = x.dim();
        assert_eq!(&[t, d], self.emb.value.shape(), "token grid mismatch");
        for ni in 0..n {
            let mut slice = x.index_axis_mut(ndarray::Axis(0), ni);
            for ti in 0..t {
                for di in 0..d {
                    slice[[ti, di]] += self.emb.value[[ti, di]];
                }
            }
        }
        x.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = grad_out.view().into_dimensionality::<Ix3>().expect("NTD grad");
        let (n, t, d) = dy.dim();
        for ni in 0..n {
            for ti in 0..t {
                for di in 0..d {
                    self.emb.grad[[ti, di]] += dy[[ni, ti, di]];
                }
            }
        }
        grad_out
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.emb);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.pos.emb"), &mut self.emb.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// Multi-head scaled dot-product self-attention over (N, T, D).
#[derive(Clone)]
pub struct MultiHeadSelfAttention {
    pub wq: Param, // (D, D)
    pub wk: Param,
    pub wv: Param,
    pub wo: Param,
    pub heads: usize,
    cache: Option<AttnCache>,
}

#[derive(Clone)]
struct AttnCache {
    x: Array3<f32>,
    q: Array3<f32>,
    k: Array3<f32>,
    v: Array3<f32>,
    attn: Vec<Array2<f32>>, // per (n*heads): (T, T)
    concat: Array3<f32>,    // pre-output-projection
}

impl MultiHeadSelfAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(dim % heads == 0, "dim must divide evenly into heads");
        let init = WeightInit::Normal((1.0 / dim as f32).sqrt());
        let wq = Param::new(init.sample(rng, &[dim, dim], dim));
        let wk = Param::new(init.sample(rng, &[dim, dim], dim));
        let wv = Param::new(init.sample(rng, &[dim, dim], dim));
        let wo = Param::new(init.sample(rng, &[dim, dim], dim));
        Self {
            wq,
            wk,
            wv,
            wo,
            heads,
            cache: None,
        }
    }

    fn project(x: &Array3<f32>, w: &Param) -> Array3<f32> {
        let (n, t, d) = x.dim();
        let x2 = x
            .view()
            .into_shape_with_order((n * t, d))
            .expect("contiguous");
        let w2 = w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        x2.dot(&w2.t())
            .into_shape_with_order((n, t, d))
            .unwrap()
    }

    /// d/dW of y = x W^T given dy, accumulating into the param grad; returns dx.
    fn project_backward(x: &Array3<f32>, w: &mut Param, dy: &Array3<f32>) -> Array3<f32> {
        let (n, t, d) = x.dim();
        let x2 = x.view().into_shape_with_order((n * t, d)).unwrap();
        let dy2 = dy.view().into_shape_with_order((n * t, d)).unwrap();
        let w2 = w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        w.grad += &dy2.t().dot(&x2).into_dyn();
        dy2.dot(&w2).into_shape_with_order((n, t, d)).unwrap()
    }
}

impl Layer for MultiHeadSelfAttention {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix3>().expect("NTD input");
        let (n, t, d) = x.dim();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();

        let q = Self::project(&x, &self.wq);
        let k = Self::project(&x, &self.wk);
        let v = Self::project(&x, &self.wv);

        let mut concat = Array3::<f32>::zeros((n, t, d));
        let mut attns = Vec::with_capacity(n * h);
        for ni in 0..n {
            for hi in 0..h {
                let lo = hi * dh;
                let qs = q.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let ks = k.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let vs = v.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let mut scores = qs.dot(&ks.t());
                scores.mapv_inplace(|s| s * scale);
                // rowwise softmax
                for mut row in scores.rows_mut() {
                    let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|s| (s - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|s| s / sum);
                }
                let out = scores.dot(&vs); // (T, dh)
                concat
                    .slice_mut(ndarray::s![ni, .., lo..lo + dh])
                    .assign(&out);
                attns.push(scores);
            }
        }
        let y = Self::project(&concat, &self.wo);
        self.cache = Some(AttnCache {
            x,
            q,
            k,
            v,
            attn: attns,
            concat,
        });
        y.into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let dy = grad_out.into_dimensionality::<Ix3>().expect("NTD grad");
        let cache = self.cache.take().expect("forward before backward");
        let (n, t, d) = cache.x.dim();
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();

        // output projection
        let d_concat = Self::project_backward(&cache.concat, &mut self.wo, &dy);

        let mut dq = Array3::<f32>::zeros((n, t, d));
        let mut dk = Array3::<f32>::zeros((n, t, d));
        let mut dv = Array3::<f32>::zeros((n, t, d));
        for ni in 0..n {
            for hi in 0..h {
                let lo = hi * dh;
                let attn = &cache.attn[ni * h + hi]; // (T, T)
                let d_out = d_concat.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let vs = cache.v.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let qs = cache.q.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();
                let ks = cache.k.slice(ndarray::s![ni, .., lo..lo + dh]).to_owned();

                // dV = A^T dOut
                dv.slice_mut(ndarray::s![ni, .., lo..lo + dh])
                    .assign(&attn.t().dot(&d_out));
                // dA = dOut V^T
                let d_attn = d_out.dot(&vs.t()); // (T, T)
                // softmax backward per row: dS = A o (dA - rowsum(dA o A))
                let mut d_scores = Array2::<f32>::zeros((t, t));
                for r in 0..t {
                    let a_row = attn.row(r);
                    let da_row = d_attn.row(r);
                    let dot: f32 = a_row.iter().zip(da_row.iter()).map(|(a, b)| a * b).sum();
                    for cidx in 0..t {
                        d_scores[[r, cidx]] = a_row[cidx] * (da_row[cidx] - dot);
                    }
                }
                d_scores.mapv_inplace(|s| s * scale);
                // dQ = dS K ; dK = dS^T Q
                dq.slice_mut(ndarray::s![ni, .., lo..lo + dh])
                    .assign(&d_scores.dot(&ks));
                dk.slice_mut(ndarray::s![ni, .., lo..lo + dh])
                    .assign(&d_scores.t().dot(&qs));
            }
        }

        let dx_q = Self::project_backward(&cache.x, &mut self.wq, &dq);
        let dx_k = Self::project_backward(&cache.x, &mut self.wk, &dk);
        let dx_v = Self::project_backward(&cache.x, &mut self.wv, &dv);
        (dx_q + dx_k + dx_v).into_dyn()
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.wq);
        f(&mut self.wk);
        f(&mut self.wv);
        f(&mut self.wo);
    }

    fn visit_tensors(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f32>)) {
        f(&format!("{prefix}.attn.wq"), &mut self.wq.value);
        f(&format!("{prefix}.attn.wk"), &mut self.wk.value);
        f(&format!("{prefix}.attn.wv"), &mut self.wv.value);
        f(&format!("{prefix}.attn.wo"), &mut self.wo.value);
    }

    fn clone_layer(&self) -> Box<dyn Layer> {
        Box::new(self.clone())
    }
}

/// (N, T, D) -> (N, D) mean over tokens.
#[derive(Clone, Default)]
pub struct MeanPoolTokens {
    cached_dim: (usize, usize, usize),
}

impl MeanPoolTokens {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for MeanPoolTokens {
    fn forward(&mut self, x: ArrayD<f32>, _train: bool) -> ArrayD<f32> {
        let x = x.into_dimensionality::<Ix3>().expect("NTD input");
        self.cached_dim = x.dim();
        x.mean_axis(ndarray::Axis(1))
            .expect("nonzero tokens")
            .into_dyn()
    }

    fn backward(&mut self, grad_out: ArrayD<f32>) -> ArrayD<f32> {
        let (n, t, d) = self.cached_dim;
        let dy = grad_out.into_shape_with_order((n, d)).expect("grad shape");
        let mut dx = Array3::<f32>::zeros((n, t, d));
        let scale = 1.0 / t as f32;
        for ni in 0..n {
            for ti in 0..t {
                for di in 0..d {
                    dx[[ni, ti, di]] = dy[[ni, di]] * scale;
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
    use rand::SeedableRng;

    fn tokens(n: usize, t: usize, d: usize) -> ArrayD<f32> {
        ArrayD::from_shape_fn(ndarray::IxDyn(&[n, t, d]), |i| {
            ((i[0] * 31 + i[1] * 7 + i[2] * 3) as f32 * 0.29).sin()
        })
    }

    #[test]
    fn tokens_from_map_round_trip() {
        let mut tf = TokensFromMap::new();
        let x = ArrayD::from_shape_fn(ndarray::IxDyn(&[2, 3, 2, 2]), |i| {
            (i[0] * 100 + i[1] * 10 + i[2] * 2 + i[3]) as f32
        });
        let y = tf.forward(x.clone(), true);
        assert_eq!(y.shape(), &[2, 4, 3]);
        // token (oy*w+ox) carries channel vector at that cell
        assert_eq!(y[[0, 1, 2]], x[[0, 2, 0, 1]]);
        let back = tf.backward(y);
        assert_eq!(back, x);
    }

    #[test]
    fn positional_embedding_gradcheck() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut pe = PositionalEmbedding::new(4, 3, &mut rng);
        let x = tokens(2, 4, 3);
        gradcheck::check_input_grad(&mut pe, &x, true);
        gradcheck::check_param_grads(&mut pe, &x, true);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut attn = MultiHeadSelfAttention::new(8, 2, &mut rng);
        let y = attn.forward(tokens(1, 5, 8), true);
        assert_eq!(y.shape(), &[1, 5, 8]);
        let cache = attn.cache.as_ref().unwrap();
        for a in &cache.attn {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn attention_gradcheck() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut attn = MultiHeadSelfAttention::new(6, 2, &mut rng);
        let x = tokens(2, 4, 6);
        gradcheck::check_input_grad(&mut attn, &x, true);
        gradcheck::check_param_grads(&mut attn, &x, true);
    }

    #[test]
    fn mean_pool_gradcheck() {
        gradcheck::check_input_grad(&mut MeanPoolTokens::new(), &tokens(2, 5, 3), true);
    }
}
