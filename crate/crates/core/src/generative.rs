//! The generative prior: a DCGAN-style generator/discriminator pair trained
//! on public data, used by both attack families.
//!
//! The generator maps a standard-normal latent to an image in [-1,1]
//! (tanh output); conversion to the pipeline's [0,1] convention happens at
//! the module boundary. The target model never participates in GAN
//! training; it enters only through the attack objectives.

use crate::data::LabeledDataset;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::imgproc;
use crate::nn::{
    bce_with_logits, optim::Adam, BatchNorm2d, Conv2d, ConvTranspose2d, Flatten, Layer,
    LeakyRelu, MinibatchStdDev, Relu, Sequential, Tanh, WeightInit,
};
use ndarray::{Array1, Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_generator: f32,
    pub lr_discriminator: f32,
    pub seed: u64,
    /// Channel multiplier; base width is 8 * architecture_scale.
    pub architecture_scale: usize,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            epochs: 30,
            batch_size: 32,
            lr_generator: 2e-4,
            lr_discriminator: 2e-4,
            seed: 0,
            architecture_scale: 4,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0
            || self.epochs == 0
            || self.batch_size == 0
            || self.architecture_scale == 0
        {
            return Err(Error::config("GAN config fields must be positive"));
        }
        if self.lr_generator <= 0.0 || self.lr_discriminator <= 0.0 {
            return Err(Error::config("GAN learning rates must be positive"));
        }
        Ok(())
    }

    pub fn config_digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("serializable").as_bytes())
    }
}

/// Where a handle's weights came from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingProvenance {
    pub dataset_name: String,
    pub dataset_digest: String,
    pub config_digest: String,
}

/// A trained generator. Cloning is cheap relative to training; workers that
/// sample concurrently should clone the handle.
#[derive(Clone)]
pub struct GeneratorHandle {
    pub latent_dim: usize,
    /// (H, W, C) of produced images.
    pub output_shape: (usize, usize, usize),
    pub net: Sequential,
    pub training_provenance: TrainingProvenance,
}

impl GeneratorHandle {
    /// Deterministic sample for a latent vector; output is HWC in [0,1].
    pub fn sample(&mut self, z: &[f32]) -> Result<Array3<f32>> {
        if z.len() != self.latent_dim {
            return Err(Error::input(format!(
                "latent length {} does not match latent_dim {}",
                z.len(),
                self.latent_dim
            )));
        }
        let raw = self.raw_forward(z);
        Ok(self.to_unit_image(&raw))
    }

    pub fn sample_batch(&mut self, latents: &[Vec<f32>]) -> Result<Vec<Array3<f32>>> {
        latents.iter().map(|z| self.sample(z)).collect()
    }

    /// Eval-mode forward producing the raw (1, C, H, W) tanh output.
    pub fn raw_forward(&mut self, z: &[f32]) -> Array4<f32> {
        let input = Array4::from_shape_vec((1, self.latent_dim, 1, 1), z.to_vec())
            .expect("latent shape");
        self.net
            .forward(input.into_dyn(), false)
            .into_dimensionality()
            .expect("generator output is NCHW")
    }

    /// Backward through the generator for an image-space gradient.
    pub fn backward_to_latent(&mut self, grad_raw: Array4<f32>) -> Vec<f32> {
        let grad = self.net.backward(grad_raw.into_dyn());
        grad.iter().copied().collect()
    }

    /// Convert a raw [-1,1] CHW output to the [0,1] HWC convention.
    pub fn to_unit_image(&self, raw: &Array4<f32>) -> Array3<f32> {
        let chw = raw.index_axis(ndarray::Axis(0), 0);
        let hwc = imgproc::chw_to_hwc(&chw);
        hwc.mapv(|v| ((v + 1.0) * 0.5).clamp(0.0, 1.0))
    }

    pub fn param_digest(&mut self) -> String {
        self.net.param_digest()
    }
}

/// A trained discriminator producing one realism logit per image.
#[derive(Clone)]
pub struct DiscriminatorHandle {
    pub input_shape: (usize, usize, usize),
    pub net: Sequential,
}

impl DiscriminatorHandle {
    /// Realism logits for HWC [0,1] images (converted to the GAN's [-1,1]
    /// range internally). Higher = more real.
    pub fn realism_scores(&mut self, images: &[&Array3<f32>]) -> Result<Vec<f32>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let mut batch = imgproc::hwc_to_chw_batch(images);
        batch.mapv_inplace(|v| v * 2.0 - 1.0);
        let out = self.net.forward(batch.into_dyn(), false);
        let scores: Vec<f32> = out.iter().copied().collect();
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::stage("discriminator produced non-finite score"));
        }
        Ok(scores)
    }

    /// Eval forward on a raw [-1,1] CHW batch, keeping caches for backward.
    pub fn raw_forward(&mut self, batch: ndarray::ArrayD<f32>) -> ndarray::ArrayD<f32> {
        self.net.forward(batch, false)
    }

    pub fn param_digest(&mut self) -> String {
        self.net.param_digest()
    }
}

/// Number of stride-2 upsampling stages between the 4x4 seed and `h`.
fn upsample_stages(h: usize, w: usize) -> Result<usize> {
    if h != w {
        return Err(Error::config(format!("GAN requires square images, got {h}x{w}")));
    }
    if h < 8 || !h.is_power_of_two() {
        return Err(Error::config(format!(
            "GAN image side must be a power of two >= 8, got {h}"
        )));
    }
    Ok((h / 4).trailing_zeros() as usize)
}

/// DCGAN generator: latent -> 4x4 seed -> stride-2 transposed convs -> tanh.
pub fn build_generator(
    latent_dim: usize,
    out_shape: (usize, usize, usize),
    scale: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sequential> {
    let (h, w, c) = out_shape;
    let stages = upsample_stages(h, w)?;
    let base = 8 * scale;
    let init = WeightInit::Normal(0.02);
    let mut net = Sequential::default();
    let mut ch = base << (stages - 1);
    net.push(ConvTranspose2d::new(latent_dim, ch, 4, 1, 0, init, rng));
    net.push(BatchNorm2d::new(ch));
    net.push(Relu::new());
    for _ in 1..stages {
        let next = ch / 2;
        net.push(ConvTranspose2d::new(ch, next, 4, 2, 1, init, rng));
        net.push(BatchNorm2d::new(next));
        net.push(Relu::new());
        ch = next;
    }
    net.push(ConvTranspose2d::new(ch, c, 4, 2, 1, init, rng));
    net.push(Tanh::new());
    Ok(net)
}

/// DCGAN discriminator: stride-2 convs with LeakyReLU down to a 4x4 map,
/// then a valid conv to one logit. No batch norm: with tiny datasets and
/// separate real/fake passes, a normalized discriminator separates the
/// batches on their statistics alone and starves the generator.
pub fn build_discriminator(
    in_shape: (usize, usize, usize),
    scale: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Sequential> {
    let (h, w, c) = in_shape;
    let stages = upsample_stages(h, w)?;
    let base = 8 * scale;
    let init = WeightInit::Normal(0.02);
    let mut net = Sequential::default();
    net.push(Conv2d::new(c, base, 4, 2, 1, init, rng));
    net.push(LeakyRelu::new(0.2));
    let mut ch = base;
    for _ in 1..stages {
        let next = ch * 2;
        net.push(Conv2d::new(ch, next, 4, 2, 1, init, rng));
        net.push(LeakyRelu::new(0.2));
        ch = next;
    }
    net.push(MinibatchStdDev::new());
    net.push(Conv2d::new(ch + 1, 1, 4, 1, 0, init, rng));
    net.push(Flatten::new());
    Ok(net)
}

/// Per-epoch loss curve, persisted next to the checkpoint.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GanTrainingLog {
    pub generator_loss: Vec<f32>,
    pub discriminator_loss: Vec<f32>,
}

/// Adversarial training on public data.
///
/// Aborts with a mode-collapse stage error when the discriminator loss stays
/// below 1e-4 for three consecutive epochs.
pub fn train_prior(
    public_data: &LabeledDataset,
    config: &GanTrainConfig,
) -> Result<(GeneratorHandle, DiscriminatorHandle, GanTrainingLog)> {
    config.validate()?;
    if public_data.items.is_empty() {
        return Err(Error::config("GAN training data is empty"));
    }
    let (h, w, c) = public_data.image_shape().expect("nonempty dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut g_net = build_generator(config.latent_dim, (h, w, c), config.architecture_scale, &mut rng)?;
    let mut d_net = build_discriminator((h, w, c), config.architecture_scale, &mut rng)?;
    let mut g_opt = Adam::new(config.lr_generator, 0.5, 0.999);
    let mut d_opt = Adam::new(config.lr_discriminator, 0.5, 0.999);

    let n = public_data.items.len();
    let mut log = GanTrainingLog::default();
    let mut collapse_streak = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut d_epoch = 0.0f32;
        let mut g_epoch = 0.0f32;
        let mut batches = 0usize;
        // instance noise on discriminator inputs, decaying to zero, keeps D
        // from memorizing a tiny training set and starving the generator
        let noise_sigma = 0.15 * (1.0 - epoch as f32 / config.epochs as f32);

        for chunk in order.chunks(config.batch_size) {
            let refs: Vec<&Array3<f32>> =
                chunk.iter().map(|&i| &public_data.items[i].image).collect();
            let mut real = imgproc::hwc_to_chw_batch(&refs);
            real.mapv_inplace(|v| v * 2.0 - 1.0);
            if noise_sigma > 0.0 {
                real.mapv_inplace(|v| v + noise_sigma * rng.sample::<f32, _>(StandardNormal));
            }
            let bs = chunk.len();

            // discriminator update: real then fake, grads accumulate;
            // one-sided label smoothing keeps D from saturating on tiny data
            d_net.zero_grad();
            let out_real = d_net.forward(real.into_dyn(), true);
            let logits_real = flatten_logits(&out_real);
            let ones = Array1::from_elem(bs, 1.0f32);
            let smoothed = Array1::from_elem(bs, 0.9f32);
            let (loss_real, grad_real) = bce_with_logits(&logits_real, &smoothed);
            d_net.backward(reshape_like(&grad_real, &out_real));

            let z = sample_latents(&mut rng, bs, config.latent_dim);
            let mut fake = g_net.forward(z.clone().into_dyn(), true);
            if noise_sigma > 0.0 {
                fake.mapv_inplace(|v| v + noise_sigma * rng.sample::<f32, _>(StandardNormal));
            }
            let out_fake = d_net.forward(fake, true);
            let logits_fake = flatten_logits(&out_fake);
            let zeros = Array1::from_elem(bs, 0.0f32);
            let (loss_fake, grad_fake) = bce_with_logits(&logits_fake, &zeros);
            d_net.backward(reshape_like(&grad_fake, &out_fake));
            d_opt.step(&mut d_net);
            let d_loss = 0.5 * (loss_real + loss_fake);

            // generator update: non-saturating loss, fresh latents
            g_net.zero_grad();
            let z = sample_latents(&mut rng, bs, config.latent_dim);
            let fake = g_net.forward(z.into_dyn(), true);
            let out = d_net.forward(fake, true);
            let logits = flatten_logits(&out);
            let (g_loss, grad) = bce_with_logits(&logits, &ones);
            let grad_fake_img = d_net.backward(reshape_like(&grad, &out));
            g_net.backward(grad_fake_img);
            g_opt.step(&mut g_net);

            if !d_loss.is_finite() || !g_loss.is_finite() {
                return Err(Error::stage("GAN training produced non-finite loss"));
            }
            d_epoch += d_loss;
            g_epoch += g_loss;
            batches += 1;
        }

        let d_mean = d_epoch / batches as f32;
        let g_mean = g_epoch / batches as f32;
        log.discriminator_loss.push(d_mean);
        log.generator_loss.push(g_mean);

        if d_mean < 1e-4 {
            collapse_streak += 1;
            if collapse_streak >= 3 {
                return Err(Error::stage(
                    "mode collapse: discriminator loss < 1e-4 for 3 consecutive epochs",
                ));
            }
        } else {
            collapse_streak = 0;
        }
    }

    let provenance = TrainingProvenance {
        dataset_name: public_data.name.clone(),
        dataset_digest: public_data.dataset_digest(),
        config_digest: config.config_digest(),
    };
    Ok((
        GeneratorHandle {
            latent_dim: config.latent_dim,
            output_shape: (h, w, c),
            net: g_net,
            training_provenance: provenance,
        },
        DiscriminatorHandle {
            input_shape: (h, w, c),
            net: d_net,
        },
        log,
    ))
}

fn sample_latents(rng: &mut ChaCha8Rng, batch: usize, latent_dim: usize) -> Array4<f32> {
    Array4::from_shape_fn((batch, latent_dim, 1, 1), |_| rng.sample(StandardNormal))
}

/// Draw one latent vector from the standard-normal prior.
pub fn draw_latent(rng: &mut ChaCha8Rng, latent_dim: usize) -> Vec<f32> {
    (0..latent_dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn flatten_logits(out: &ndarray::ArrayD<f32>) -> Array1<f32> {
    Array1::from_iter(out.iter().copied())
}

fn reshape_like(grad: &Array1<f32>, like: &ndarray::ArrayD<f32>) -> ndarray::ArrayD<f32> {
    grad.clone()
        .into_shape_with_order(like.raw_dim())
        .expect("logit count matches")
}

/// Checkpoint metadata sidecar.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GanCheckpointMeta {
    pub latent_dim: usize,
    pub output_shape: (usize, usize, usize),
    pub architecture_scale: usize,
    pub seed: u64,
    pub training_provenance: TrainingProvenance,
}

/// Persist generator + discriminator + metadata under `dir`.
pub fn save_checkpoint(
    dir: &Path,
    generator: &mut GeneratorHandle,
    discriminator: &mut DiscriminatorHandle,
    config: &GanTrainConfig,
    log: &GanTrainingLog,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::nn::serial::save(&mut generator.net, &dir.join("generator.bin"))?;
    crate::nn::serial::save(&mut discriminator.net, &dir.join("discriminator.bin"))?;
    let meta = GanCheckpointMeta {
        latent_dim: generator.latent_dim,
        output_shape: generator.output_shape,
        architecture_scale: config.architecture_scale,
        seed: config.seed,
        training_provenance: generator.training_provenance.clone(),
    };
    std::fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta).expect("serializable"),
    )?;
    std::fs::write(
        dir.join("training_log.json"),
        serde_json::to_string_pretty(log).expect("serializable"),
    )?;
    Ok(())
}

/// Rebuild handles from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<(GeneratorHandle, DiscriminatorHandle)> {
    let meta: GanCheckpointMeta = serde_json::from_str(
        &std::fs::read_to_string(dir.join("meta.json"))
            .map_err(|e| Error::stage(format!("GAN checkpoint meta unreadable: {e}")))?,
    )
    .map_err(|e| Error::stage(format!("GAN checkpoint meta invalid: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(meta.seed);
    let mut g_net = build_generator(
        meta.latent_dim,
        meta.output_shape,
        meta.architecture_scale,
        &mut rng,
    )?;
    let mut d_net = build_discriminator(meta.output_shape, meta.architecture_scale, &mut rng)?;
    crate::nn::serial::load(&mut g_net, &dir.join("generator.bin"))?;
    crate::nn::serial::load(&mut d_net, &dir.join("discriminator.bin"))?;
    Ok((
        GeneratorHandle {
            latent_dim: meta.latent_dim,
            output_shape: meta.output_shape,
            net: g_net,
            training_provenance: meta.training_provenance,
        },
        DiscriminatorHandle {
            input_shape: meta.output_shape,
            net: d_net,
        },
    ))
}
