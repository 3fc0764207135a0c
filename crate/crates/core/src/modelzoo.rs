//! Classifier training and inference for the three model roles: the target
//! under assessment, the independently trained evaluation model, and the
//! reconstruction-fine-tuned proxy.
//!
//! Four desk-scale architecture families are available, mirroring the usual
//! plain / depthwise-separable / residual / patch-attention spread so
//! architecture sweeps are runnable end-to-end. Width and depth are
//! configurable; all training is seeded and deterministic.

use crate::data::{verify_disjoint, LabeledDataset};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::imgproc;
use crate::nn::{
    optim::Sgd, softmax, softmax_cross_entropy, BatchNorm2d, Conv2d, DepthwiseConv2d, Flatten,
    Gelu, GlobalAvgPool, Layer, LayerNorm, Linear, MaxPool2d, MeanPoolTokens,
    MultiHeadSelfAttention, PositionalEmbedding, Relu, Residual, Sequential, TokensFromMap,
    WeightInit,
};
use crate::riskcore::{per_class_accuracy, ClassId};
use ndarray::{Array1, Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    Target,
    Evaluation,
    Proxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchFamily {
    /// Plain stacked 3x3 convolutions with max pooling.
    PlainCnn,
    /// Depthwise-separable convolution blocks.
    MobileCnn,
    /// Residual blocks with projection shortcuts.
    ResidualCnn,
    /// Patch embedding plus self-attention blocks.
    PatchAttention,
}

impl ArchFamily {
    pub fn name(self) -> &'static str {
        match self {
            ArchFamily::PlainCnn => "plain_cnn",
            ArchFamily::MobileCnn => "mobile_cnn",
            ArchFamily::ResidualCnn => "residual_cnn",
            ArchFamily::PatchAttention => "patch_attention",
        }
    }
}

/// Architecture family with width/depth knobs, parseable from text like
/// `plain_cnn:w16:d2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArchDescriptor {
    pub family: ArchFamily,
    pub width: usize,
    pub depth: usize,
}

impl ArchDescriptor {
    pub fn new(family: ArchFamily, width: usize, depth: usize) -> Self {
        Self {
            family,
            width,
            depth,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut parts = text.split(':');
        let family = match parts.next().unwrap_or("") {
            "plain_cnn" => ArchFamily::PlainCnn,
            "mobile_cnn" => ArchFamily::MobileCnn,
            "residual_cnn" => ArchFamily::ResidualCnn,
            "patch_attention" => ArchFamily::PatchAttention,
            other => {
                return Err(Error::config(format!(
                    "unknown architecture family {other:?} \
                     (expected plain_cnn|mobile_cnn|residual_cnn|patch_attention)"
                )))
            }
        };
        let mut width = 16;
        let mut depth = 2;
        for part in parts {
            if let Some(v) = part.strip_prefix('w') {
                width = v
                    .parse()
                    .map_err(|_| Error::config(format!("bad width in descriptor {text:?}")))?;
            } else if let Some(v) = part.strip_prefix('d') {
                depth = v
                    .parse()
                    .map_err(|_| Error::config(format!("bad depth in descriptor {text:?}")))?;
            } else {
                return Err(Error::config(format!(
                    "unknown descriptor component {part:?} in {text:?}"
                )));
            }
        }
        if width == 0 || depth == 0 {
            return Err(Error::config("architecture width/depth must be positive"));
        }
        Ok(Self {
            family,
            width,
            depth,
        })
    }

    pub fn descriptor_string(&self) -> String {
        format!("{}:w{}:d{}", self.family.name(), self.width, self.depth)
    }

    /// Build an untrained network for the given input shape and class count.
    pub fn build(
        &self,
        input_shape: (usize, usize, usize),
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sequential> {
        let (h, w, c) = input_shape;
        if h < 8 || w < 8 {
            return Err(Error::config(format!(
                "classifier input must be at least 8x8, got {h}x{w}"
            )));
        }
        let init = WeightInit::KaimingNormal;
        let width = self.width;
        let mut net = Sequential::default();
        match self.family {
            ArchFamily::PlainCnn => {
                let mut ch = c;
                let mut spatial = (h, w);
                for block in 0..self.depth {
                    let out = width << block.min(2);
                    net.push(Conv2d::new(ch, out, 3, 1, 1, init, rng));
                    net.push(Relu::new());
                    net.push(Conv2d::new(out, out, 3, 1, 1, init, rng));
                    net.push(Relu::new());
                    if spatial.0 >= 4 && spatial.1 >= 4 {
                        net.push(MaxPool2d::new(2));
                        spatial = (spatial.0 / 2, spatial.1 / 2);
                    }
                    ch = out;
                }
                net.push(Flatten::new());
                let feat = ch * spatial.0 * spatial.1;
                net.push(Linear::new(feat, width * 4, init, rng));
                net.push(Relu::new());
                net.push(Linear::new(width * 4, classes, init, rng));
            }
            ArchFamily::MobileCnn => {
                net.push(Conv2d::new(c, width, 3, 1, 1, init, rng));
                net.push(BatchNorm2d::new(width));
                net.push(Relu::new());
                let mut ch = width;
                let mut spatial = (h, w);
                for block in 0..self.depth {
                    let stride = if spatial.0 > 4 && spatial.1 > 4 { 2 } else { 1 };
                    net.push(DepthwiseConv2d::new(ch, 3, stride, 1, init, rng));
                    let out = width << (block + 1).min(2);
                    net.push(Conv2d::new(ch, out, 1, 1, 0, init, rng));
                    net.push(BatchNorm2d::new(out));
                    net.push(Relu::new());
                    if stride == 2 {
                        spatial = (spatial.0.div_ceil(2), spatial.1.div_ceil(2));
                    }
                    ch = out;
                }
                net.push(GlobalAvgPool::new());
                net.push(Linear::new(ch, classes, init, rng));
            }
            ArchFamily::ResidualCnn => {
                net.push(Conv2d::new(c, width, 3, 1, 1, init, rng));
                net.push(BatchNorm2d::new(width));
                net.push(Relu::new());
                let mut ch = width;
                let mut spatial = (h, w);
                for stage in 0..self.depth {
                    let out = width << stage.min(2);
                    let stride = if stage > 0 && spatial.0 > 4 && spatial.1 > 4 {
                        2
                    } else {
                        1
                    };
                    let mut inner = Sequential::default();
                    inner.push(Conv2d::new(ch, out, 3, stride, 1, init, rng));
                    inner.push(BatchNorm2d::new(out));
                    inner.push(Relu::new());
                    inner.push(Conv2d::new(out, out, 3, 1, 1, init, rng));
                    inner.push(BatchNorm2d::new(out));
                    let block = if ch == out && stride == 1 {
                        Residual::identity(inner)
                    } else {
                        let mut proj = Sequential::default();
                        proj.push(Conv2d::new(ch, out, 1, stride, 0, init, rng));
                        proj.push(BatchNorm2d::new(out));
                        Residual::projected(inner, proj)
                    };
                    net.push(block);
                    net.push(Relu::new());
                    if stride == 2 {
                        spatial = (spatial.0.div_ceil(2), spatial.1.div_ceil(2));
                    }
                    ch = out;
                }
                net.push(GlobalAvgPool::new());
                net.push(Linear::new(ch, classes, init, rng));
            }
            ArchFamily::PatchAttention => {
                if h % 4 != 0 || w % 4 != 0 {
                    return Err(Error::config(
                        "patch_attention requires input sides divisible by 4",
                    ));
                }
                let dim = if width % 2 == 0 { width } else { width + 1 };
                let tokens = (h / 4) * (w / 4);
                net.push(Conv2d::new(c, dim, 4, 4, 0, init, rng));
                net.push(TokensFromMap::new());
                net.push(PositionalEmbedding::new(tokens, dim, rng));
                for _ in 0..self.depth {
                    let mut attn = Sequential::default();
                    attn.push(LayerNorm::new(dim));
                    attn.push(MultiHeadSelfAttention::new(dim, 2, rng));
                    net.push(Residual::identity(attn));
                    let mut mlp = Sequential::default();
                    mlp.push(LayerNorm::new(dim));
                    mlp.push(Linear::new(dim, dim * 2, init, rng));
                    mlp.push(Gelu::new());
                    mlp.push(Linear::new(dim * 2, dim, init, rng));
                    net.push(Residual::identity(mlp));
                }
                net.push(LayerNorm::new(dim));
                net.push(MeanPoolTokens::new());
                net.push(Linear::new(dim, classes, init, rng));
            }
        }
        Ok(net)
    }
}

impl TryFrom<String> for ArchDescriptor {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        ArchDescriptor::parse(&s)
    }
}

impl From<ArchDescriptor> for String {
    fn from(a: ArchDescriptor) -> String {
        a.descriptor_string()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// Epochs at which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    pub weight_decay: f32,
    pub momentum: f32,
    pub seed: u64,
    /// Fraction of feature-extractor layers frozen during fine-tuning.
    pub frozen_prefix_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.01,
            lr_decay_epochs: vec![],
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            momentum: 0.9,
            seed: 0,
            frozen_prefix_fraction: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.frozen_prefix_fraction) {
            return Err(Error::config("frozen_prefix_fraction must be in [0,1]"));
        }
        Ok(())
    }

    pub fn config_digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub train_dataset_digest: String,
    pub test_dataset_digest: Option<String>,
    pub config_digest: String,
}

/// A trained classifier with its role, preprocessing constants, and
/// measured accuracies.
#[derive(Clone)]
pub struct ModelHandle {
    pub role: ModelRole,
    pub arch: ArchDescriptor,
    pub class_names: BTreeMap<ClassId, String>,
    /// (H, W, C) the network expects; other sizes are resized on the way in.
    pub input_shape: (usize, usize, usize),
    /// Per-channel (mean, std) applied after resize.
    pub normalization: (Vec<f32>, Vec<f32>),
    pub net: Sequential,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub provenance: ModelProvenance,
}

impl ModelHandle {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.class_names.keys().copied().collect()
    }

    pub fn param_digest(&mut self) -> String {
        self.net.param_digest()
    }

    /// Resize + normalize a unit-range HWC image into a 1-element CHW batch.
    fn preprocess(&self, image: &Array3<f32>) -> Array4<f32> {
        let (h, w, _c) = self.input_shape;
        let resized;
        let img = if image.dim().0 != h || image.dim().1 != w {
            resized = imgproc::resize_bilinear(&image.view(), h, w);
            &resized
        } else {
            image
        };
        let mut batch = imgproc::hwc_to_chw_batch(&[img]);
        let (mean, std) = &self.normalization;
        for ch in 0..mean.len() {
            let m = mean[ch];
            let s = std[ch];
            batch
                .index_axis_mut(ndarray::Axis(1), ch)
                .mapv_inplace(|v| (v - m) / s);
        }
        batch
    }

    /// Eval-mode logits for one unit-range HWC image, leaving caches in
    /// place so [`Self::backward_to_unit_image`] can run.
    pub fn logits_for_unit_image(&mut self, image: &Array3<f32>) -> Array1<f32> {
        let batch = self.preprocess(image);
        let out = self.net.forward(batch.into_dyn(), false);
        Array1::from_iter(out.iter().copied())
    }

    /// Backpropagate a logit-space gradient to the original unit-range HWC
    /// image, undoing normalization and any resize.
    pub fn backward_to_unit_image(
        &mut self,
        grad_logits: &Array1<f32>,
        original_hw: (usize, usize),
    ) -> Array3<f32> {
        let k = self.num_classes();
        let grad = grad_logits
            .clone()
            .into_shape_with_order(ndarray::IxDyn(&[1, k]))
            .expect("logit grad shape");
        let grad_in = self.net.backward(grad);
        let grad4: Array4<f32> = grad_in.into_dimensionality().expect("NCHW grad");
        let (_, std) = &self.normalization;
        let mut grad4 = grad4;
        for ch in 0..std.len() {
            let s = std[ch];
            grad4
                .index_axis_mut(ndarray::Axis(1), ch)
                .mapv_inplace(|v| v / s);
        }
        let chw = grad4.index_axis(ndarray::Axis(0), 0);
        let hwc = imgproc::chw_to_hwc(&chw);
        if original_hw == (self.input_shape.0, self.input_shape.1) {
            hwc
        } else {
            imgproc::resize_bilinear_backward(&hwc.view(), original_hw.0, original_hw.1)
        }
    }
}

/// Batched argmax predictions plus softmax confidence vectors.
///
/// Images are resized and normalized per the handle's metadata. Ties argmax
/// to the lowest class index, deterministically.
pub fn infer(
    model: &ModelHandle,
    images: &[&Array3<f32>],
) -> Result<(Vec<ClassId>, Vec<Vec<f32>>)> {
    if images.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut net = model.net.clone();
    let mut preds = Vec::with_capacity(images.len());
    let mut confs = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let batches: Vec<Array4<f32>> = chunk.iter().map(|img| model.preprocess(img)).collect();
        let views: Vec<_> = batches.iter().map(|b| b.view()).collect();
        let batch = ndarray::concatenate(ndarray::Axis(0), &views)
            .map_err(|e| Error::input(format!("image batch assembly failed: {e}")))?;
        let out = net.forward(batch.into_dyn(), false);
        let logits = out
            .into_dimensionality::<ndarray::Ix2>()
            .expect("classifier emits (N, K) logits");
        let probs = softmax(&logits.view());
        for row in probs.rows() {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            preds.push(best);
            confs.push(row.to_vec());
        }
    }
    Ok((preds, confs))
}

fn accuracy_on(model: &ModelHandle, data: &LabeledDataset) -> Result<f64> {
    let refs: Vec<&Array3<f32>> = data.items.iter().map(|it| &it.image).collect();
    let (preds, _) = infer(model, &refs)?;
    let truth: Vec<ClassId> = data.items.iter().map(|it| it.label).collect();
    let classes = model.class_ids();
    Ok(per_class_accuracy(&preds, &truth, &classes)?.overall)
}

fn per_channel_stats(data: &LabeledDataset) -> (Vec<f32>, Vec<f32>) {
    let (_, _, c) = data.image_shape().expect("nonempty dataset");
    let mut mean = vec![0.0f64; c];
    let mut count = 0usize;
    for it in &data.items {
        for ch in 0..c {
            mean[ch] += it.image.index_axis(ndarray::Axis(2), ch).sum() as f64;
        }
        count += it.image.len() / c;
    }
    let mean: Vec<f64> = mean.into_iter().map(|m| m / count as f64).collect();
    let mut var = vec![0.0f64; c];
    for it in &data.items {
        for ch in 0..c {
            var[ch] += it
                .image
                .index_axis(ndarray::Axis(2), ch)
                .mapv(|v| (v as f64 - mean[ch]).powi(2))
                .sum();
        }
    }
    let std: Vec<f32> = var
        .into_iter()
        .map(|v| ((v / count as f64).sqrt() as f32).max(1e-3))
        .collect();
    (mean.into_iter().map(|m| m as f32).collect(), std)
}

struct Split {
    train_indices: Vec<usize>,
    val_indices: Vec<usize>,
}

/// Deterministic 80/20 split by seed.
fn seeded_split(n: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b17);
    order.shuffle(&mut rng);
    let cut = ((n as f64) * 0.8).ceil() as usize;
    let cut = cut.clamp(1, n);
    Split {
        train_indices: order[..cut].to_vec(),
        val_indices: order[cut..].to_vec(),
    }
}

/// Train a classifier from scratch.
///
/// When `test_data` is absent, an internal 80/20 validation split (seeded)
/// stands in for it. Fixed seeds give identical parameter digests.
pub fn train_classifier(
    train_data: &LabeledDataset,
    test_data: Option<&LabeledDataset>,
    arch: &ArchDescriptor,
    config: &TrainConfig,
) -> Result<ModelHandle> {
    config.validate()?;
    if train_data.items.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if let Some(test) = test_data {
        if test.class_names != train_data.class_names {
            return Err(Error::config(
                "train/test class sets differ; both splits must share class names",
            ));
        }
    }
    let input_shape = train_data.image_shape().expect("nonempty dataset");
    let classes = train_data.class_names.len();
    let normalization = per_channel_stats(train_data);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let net = arch.build(input_shape, classes, &mut rng)?;

    let mut handle = ModelHandle {
        role: ModelRole::Target,
        arch: *arch,
        class_names: train_data.class_names.clone(),
        input_shape,
        normalization,
        net,
        train_accuracy: 0.0,
        test_accuracy: None,
        provenance: ModelProvenance {
            train_dataset_digest: train_data.dataset_digest(),
            test_dataset_digest: test_data.map(|d| d.dataset_digest()),
            config_digest: config.config_digest(),
        },
    };

    let split = match test_data {
        Some(_) => None,
        None => Some(seeded_split(train_data.items.len(), config.seed)),
    };
    let fit_indices: Vec<usize> = match &split {
        Some(s) => s.train_indices.clone(),
        None => (0..train_data.items.len()).collect(),
    };

    fit(&mut handle.net, train_data, &fit_indices, config, &handle.normalization, &mut rng)?;

    handle.train_accuracy = accuracy_on(&handle, train_data)?;
    handle.test_accuracy = match (test_data, &split) {
        (Some(test), _) => Some(accuracy_on(&handle, test)?),
        (None, Some(s)) if !s.val_indices.is_empty() => {
            let subset = LabeledDataset {
                name: format!("{}-val", train_data.name),
                items: s
                    .val_indices
                    .iter()
                    .map(|&i| train_data.items[i].clone())
                    .collect(),
                class_names: train_data.class_names.clone(),
                split_tag: train_data.split_tag,
            };
            Some(accuracy_on(&handle, &subset)?)
        }
        _ => None,
    };
    Ok(handle)
}

/// Inner SGD loop shared by training and fine-tuning.
fn fit(
    net: &mut Sequential,
    data: &LabeledDataset,
    indices: &[usize],
    config: &TrainConfig,
    normalization: &(Vec<f32>, Vec<f32>),
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut opt = Sgd::new(config.learning_rate, config.momentum, config.weight_decay);
    let (mean, std) = normalization;
    let mut order = indices.to_vec();
    for epoch in 0..config.epochs {
        if config.lr_decay_epochs.contains(&epoch) {
            opt.lr *= config.lr_decay_factor;
        }
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Array3<f32>> = chunk.iter().map(|&i| &data.items[i].image).collect();
            let mut batch = imgproc::hwc_to_chw_batch(&refs);
            for ch in 0..mean.len() {
                let (m, s) = (mean[ch], std[ch]);
                batch
                    .index_axis_mut(ndarray::Axis(1), ch)
                    .mapv_inplace(|v| (v - m) / s);
            }
            let targets: Vec<usize> = chunk.iter().map(|&i| data.items[i].label).collect();
            net.zero_grad();
            let out = net.forward(batch.into_dyn(), true);
            let logits = out
                .into_dimensionality::<ndarray::Ix2>()
                .expect("classifier emits (N, K) logits");
            let (loss, grad) = softmax_cross_entropy(&logits.view(), &targets);
            if !loss.is_finite() {
                return Err(Error::stage(format!(
                    "non-finite training loss at epoch {epoch} (lr {}, batch {})",
                    opt.lr,
                    chunk.len()
                )));
            }
            net.backward(grad.into_dyn());
            opt.step(net);
        }
    }
    Ok(())
}

/// Train the evaluation-role model, enforcing the construction-time
/// constraints: a different architecture family than the target and
/// training data content-disjoint from the target's training set.
pub fn train_evaluation(
    target: &ModelHandle,
    eval_train: &LabeledDataset,
    eval_test: Option<&LabeledDataset>,
    target_train: &LabeledDataset,
    arch: &ArchDescriptor,
    config: &TrainConfig,
) -> Result<ModelHandle> {
    if arch.family == target.arch.family {
        return Err(Error::config(format!(
            "evaluation model must use a different architecture family than the target ({})",
            target.arch.family.name()
        )));
    }
    let overlap = verify_disjoint(eval_train, target_train);
    if !overlap.is_disjoint() {
        return Err(Error::config(format!(
            "evaluation training data shares {} item(s) with the target training set",
            overlap.overlap.len()
        )));
    }
    let mut handle = train_classifier(eval_train, eval_test, arch, config)?;
    handle.role = ModelRole::Evaluation;
    Ok(handle)
}

/// Fine-tune the evaluation model on reconstructions to create the proxy.
///
/// Weights start from `base`; the first `frozen_prefix_fraction` of the
/// feature extractor's parameter-carrying layers are frozen (the
/// classification head always trains). Frozen batch-norm layers also stop
/// updating their running statistics.
pub fn fine_tune(
    base: &ModelHandle,
    dataset: &LabeledDataset,
    heldout: Option<&LabeledDataset>,
    config: &TrainConfig,
) -> Result<ModelHandle> {
    config.validate()?;
    if base.role != ModelRole::Evaluation {
        return Err(Error::config(format!(
            "proxy fine-tuning requires an evaluation-role base, got {:?}",
            base.role
        )));
    }
    if dataset.items.is_empty() {
        return Err(Error::config("fine-tuning dataset is empty"));
    }
    for (id, name) in &dataset.class_names {
        match base.class_names.get(id) {
            Some(base_name) if base_name == name => {}
            _ => {
                return Err(Error::config(format!(
                    "fine-tuning class {id}:{name} not present in the base model's class set"
                )))
            }
        }
    }

    let mut handle = base.clone();
    handle.role = ModelRole::Proxy;
    handle.provenance = ModelProvenance {
        train_dataset_digest: dataset.dataset_digest(),
        test_dataset_digest: heldout.map(|d| d.dataset_digest()),
        config_digest: config.config_digest(),
    };

    // freeze the leading fraction of parameter-carrying layers, head excluded
    let mut param_layers: Vec<usize> = Vec::new();
    for (i, layer) in handle.net.layers.iter_mut().enumerate() {
        let mut has = false;
        layer.visit_params(&mut |_| has = true);
        if has {
            param_layers.push(i);
        }
    }
    if param_layers.len() > 1 {
        let feature_layers = &param_layers[..param_layers.len() - 1];
        let k = (config.frozen_prefix_fraction * feature_layers.len() as f64).round() as usize;
        let k = k.min(feature_layers.len());
        if k > 0 {
            handle.net.set_trainable_below(feature_layers[k - 1] + 1, false);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let indices: Vec<usize> = (0..dataset.items.len()).collect();
    let normalization = handle.normalization.clone();
    fit(&mut handle.net, dataset, &indices, config, &normalization, &mut rng)?;

    // thaw so downstream users see a normal handle
    let layer_count = handle.net.layers.len();
    handle.net.set_trainable_below(layer_count, true);

    handle.train_accuracy = accuracy_on(&handle, dataset)?;
    handle.test_accuracy = match heldout {
        Some(h) => Some(accuracy_on(&handle, h)?),
        None => None,
    };
    Ok(handle)
}

/// Checkpoint sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpointMeta {
    pub role: ModelRole,
    pub arch: ArchDescriptor,
    pub class_names: BTreeMap<ClassId, String>,
    pub input_shape: (usize, usize, usize),
    pub normalization: (Vec<f32>, Vec<f32>),
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub provenance: ModelProvenance,
}

pub fn save_model(dir: &Path, model: &mut ModelHandle) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::serial::save(&mut model.net, &dir.join("params.bin"))?;
    let meta = ModelCheckpointMeta {
        role: model.role,
        arch: model.arch,
        class_names: model.class_names.clone(),
        input_shape: model.input_shape,
        normalization: model.normalization.clone(),
        train_accuracy: model.train_accuracy,
        test_accuracy: model.test_accuracy,
        provenance: model.provenance.clone(),
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("serializable"),
    )?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ModelHandle> {
    let meta: ModelCheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| Error::stage(format!("model meta unreadable: {e}")))?,
    )
    .map_err(|e| Error::stage(format!("model meta invalid: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = meta
        .arch
        .build(meta.input_shape, meta.class_names.len(), &mut rng)?;
    crate::nn::serial::load(&mut net, &dir.join("params.bin"))?;
    Ok(ModelHandle {
        role: meta.role,
        arch: meta.arch,
        class_names: meta.class_names,
        input_shape: meta.input_shape,
        normalization: meta.normalization,
        net,
        train_accuracy: meta.train_accuracy,
        test_accuracy: meta.test_accuracy,
        provenance: meta.provenance,
    })
}
