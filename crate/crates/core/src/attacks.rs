//! The two inversion attack families that produce per-class training-data
//! surrogates: feature visualization through the generative prior (gradient
//! ascent on the target class logit over the latent) and generative model
//! inversion (latent descent balancing discriminator realism against target
//! confidence).
//!
//! Candidate images are snapped to the 8-bit grid before scoring and
//! acceptance, so what acceptance saw, what lands on disk as PNG, and what
//! any post-hoc re-check reads are the same pixels.

use crate::data::LabeledDataset;
use crate::digest::{derive_seed, sha256_f32_hex};
use crate::error::{Error, Result};
use crate::generative::{draw_latent, DiscriminatorHandle, GeneratorHandle};
use crate::imgproc;
use crate::modelzoo::ModelHandle;
use crate::nn::{softmax, Layer};
use crate::riskcore::ClassId;
use ndarray::{Array1, Array3, Array4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FvConfig {
    pub steps: usize,
    pub step_size: f32,
    pub latent_l2_weight: f32,
    pub jitter_pixels: u32,
    /// 0 disables momentum; 0.9 is the conventional choice.
    pub momentum: f32,
    pub seed: u64,
}

impl Default for FvConfig {
    fn default() -> Self {
        Self {
            steps: 60,
            step_size: 0.05,
            latent_l2_weight: 0.01,
            jitter_pixels: 1,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmiConfig {
    pub iterations: usize,
    /// Combined-score acceptance threshold in [0,1]; compared closed (>=).
    pub score_threshold: f64,
    /// Weight of the identity (target-confidence) loss against the prior.
    pub prior_weight: f32,
    pub step_size: f32,
    pub restarts_per_image: usize,
    pub momentum: f32,
    pub seed: u64,
}

impl Default for GmiConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            score_threshold: 0.7,
            prior_weight: 1.0,
            step_size: 0.02,
            restarts_per_image: 1,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fv,
    Gmi,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fv => "fv",
            AttackKind::Gmi => "gmi",
        }
    }
}

/// Attack selection plus hyperparameters, as configured per experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Fv(FvConfig),
    Gmi(GmiConfig),
}

impl AttackSpec {
    pub fn kind(&self) -> AttackKind {
        match self {
            AttackSpec::Fv(_) => AttackKind::Fv,
            AttackSpec::Gmi(_) => AttackKind::Gmi,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            AttackSpec::Fv(c) => c.seed,
            AttackSpec::Gmi(c) => c.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> AttackSpec {
        match self {
            AttackSpec::Fv(c) => AttackSpec::Fv(FvConfig { seed, ..c.clone() }),
            AttackSpec::Gmi(c) => AttackSpec::Gmi(GmiConfig { seed, ..c.clone() }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AttackSpec::Fv(c) => {
                if c.steps == 0 {
                    return Err(Error::config("fv steps must be >= 1"));
                }
                if c.step_size <= 0.0 {
                    return Err(Error::config("fv step_size must be positive"));
                }
                if c.latent_l2_weight < 0.0 {
                    return Err(Error::config("fv latent_l2_weight must be >= 0"));
                }
            }
            AttackSpec::Gmi(c) => {
                if c.iterations == 0 {
                    return Err(Error::config("gmi iterations must be >= 1"));
                }
                if !(0.0..=1.0).contains(&c.score_threshold) {
                    return Err(Error::config("gmi score_threshold must be in [0,1]"));
                }
                if c.prior_weight < 0.0 {
                    return Err(Error::config("gmi prior_weight must be >= 0"));
                }
                if c.restarts_per_image == 0 {
                    return Err(Error::config("gmi restarts_per_image must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// One inversion attempt's outcome.
#[derive(Debug, Clone)]
pub struct Candidate {
    /// Unit-range HWC pixels, already snapped to the 8-bit grid.
    pub image: Array3<f32>,
    pub class_id: ClassId,
    pub attack: AttackKind,
    /// Target softmax confidence for `class_id` on the final image.
    pub target_confidence: f64,
    /// Target argmax on the final image.
    pub predicted_class: ClassId,
    /// Raw discriminator logit (GMI only).
    pub realism: Option<f64>,
    /// Calibrated combined score (GMI only).
    pub combined_score: Option<f64>,
    pub latent_seed: u64,
    /// Clean (jitter-free) objective per step; index 0 is the initial value.
    pub objective_log: Vec<f64>,
}

/// Logistic squashing of raw discriminator logits, fit on real public
/// images, so GMI score thresholds are comparable across priors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealismCalibration {
    pub center: f64,
    pub scale: f64,
    pub fit_samples: usize,
}

impl RealismCalibration {
    /// Fit center/scale to the discriminator's logits on real public data.
    pub fn fit(
        discriminator: &DiscriminatorHandle,
        public_data: &LabeledDataset,
        max_samples: usize,
    ) -> Result<Self> {
        let refs: Vec<&Array3<f32>> = public_data
            .items
            .iter()
            .take(max_samples.max(2))
            .map(|it| &it.image)
            .collect();
        if refs.len() < 2 {
            return Err(Error::config(
                "realism calibration needs at least 2 public images",
            ));
        }
        let mut disc = discriminator.clone();
        let scores = disc.realism_scores(&refs)?;
        let n = scores.len() as f64;
        let mean = scores.iter().map(|&s| s as f64).sum::<f64>() / n;
        let var = scores
            .iter()
            .map(|&s| (s as f64 - mean).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let scale = var.sqrt().max(1e-3);
        Ok(Self {
            center: mean,
            scale,
            fit_samples: scores.len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() || !self.scale.is_finite() || self.scale <= 0.0 {
            return Err(Error::config(format!(
                "invalid realism calibration (center {}, scale {})",
                self.center, self.scale
            )));
        }
        Ok(())
    }

    /// Monotone map of a raw logit into [0,1].
    pub fn squash(&self, realism: f64) -> f64 {
        1.0 / (1.0 + (-(realism - self.center) / self.scale).exp())
    }
}

/// Equal mix of target confidence and calibrated realism; monotone
/// nondecreasing in both arguments.
pub fn combined_score(
    target_confidence: f64,
    realism: f64,
    calibration: &RealismCalibration,
) -> Result<f64> {
    calibration.validate()?;
    if !(0.0..=1.0).contains(&target_confidence) {
        return Err(Error::input(format!(
            "target confidence must be in [0,1], got {target_confidence}"
        )));
    }
    Ok(0.5 * target_confidence + 0.5 * calibration.squash(realism))
}

/// Target softmax confidence and argmax for a unit-range image.
fn confidence_and_argmax(target: &mut ModelHandle, image: &Array3<f32>, class_id: ClassId) -> (f64, ClassId) {
    let logits = target.logits_for_unit_image(image);
    let probs = softmax(
        &logits
            .view()
            .into_shape_with_order((1, logits.len()))
            .expect("logit row"),
    );
    let row = probs.row(0);
    let mut best = 0usize;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    (row[class_id] as f64, best)
}

/// Clean FV objective (no jitter): class logit minus the latent L2 penalty.
fn fv_objective(
    target: &mut ModelHandle,
    generator: &mut GeneratorHandle,
    z: &[f32],
    class_id: ClassId,
    l2_weight: f32,
) -> f64 {
    let raw = generator.raw_forward(z);
    let img = unit_image_from_raw(&raw);
    let logits = target.logits_for_unit_image(&img);
    let z_norm2: f32 = z.iter().map(|v| v * v).sum();
    logits[class_id] as f64 - (l2_weight * z_norm2) as f64
}

fn unit_image_from_raw(raw: &Array4<f32>) -> Array3<f32> {
    let chw = raw.index_axis(ndarray::Axis(0), 0);
    imgproc::chw_to_hwc(&chw).mapv(|v| (v + 1.0) * 0.5)
}

fn hwc_grad_to_raw(grad: &Array3<f32>) -> Array4<f32> {
    // d unit / d raw = 0.5
    let (h, w, c) = grad.dim();
    let mut out = Array4::<f32>::zeros((1, c, h, w));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[[0, ch, y, x]] = grad[[y, x, ch]] * 0.5;
            }
        }
    }
    out
}

/// Feature visualization with the generative prior: maximize the target
/// class logit over the latent, with an L2 latent penalty and per-step
/// random jitter for transformation robustness.
///
/// The returned candidate is the best point of the trajectory under the
/// clean objective, so its final logged objective is never below the
/// initial one. Restarts from a fresh seed (up to 3) absorb non-finite
/// objectives; persistent non-finiteness is a stage error.
pub fn fv_invert(
    target: &ModelHandle,
    generator: &GeneratorHandle,
    class_id: ClassId,
    config: &FvConfig,
) -> Result<Candidate> {
    let mut target = target.clone();
    let mut generator = generator.clone();
    let mut seed = config.seed;

    'restarts: for restart in 0..=3u32 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = draw_latent(&mut rng, generator.latent_dim);
        let mut velocity = vec![0.0f32; z.len()];
        let mut log = Vec::with_capacity(config.steps + 1);

        let initial = fv_objective(&mut target, &mut generator, &z, class_id, config.latent_l2_weight);
        if !initial.is_finite() {
            seed = derive_seed(config.seed, &format!("fv-restart-{}", restart + 1));
            continue 'restarts;
        }
        log.push(initial);
        let mut best_z = z.clone();
        let mut best_obj = initial;

        for _step in 0..config.steps {
            let raw = generator.raw_forward(&z);
            let img = unit_image_from_raw(&raw);
            let (dy, dx) = if config.jitter_pixels > 0 {
                let j = config.jitter_pixels as i64;
                (rng.gen_range(-j..=j), rng.gen_range(-j..=j))
            } else {
                (0, 0)
            };
            let jittered = imgproc::shift_wrap(&img.view(), dy, dx);
            let _ = target.logits_for_unit_image(&jittered);
            let mut seed_grad = Array1::<f32>::zeros(target.num_classes());
            seed_grad[class_id] = 1.0;
            let g_jittered =
                target.backward_to_unit_image(&seed_grad, (jittered.dim().0, jittered.dim().1));
            let g_img = imgproc::shift_wrap(&g_jittered.view(), -dy, -dx);
            let g_raw = hwc_grad_to_raw(&g_img);
            let mut g_z = generator.backward_to_latent(g_raw);
            for i in 0..z.len() {
                g_z[i] -= 2.0 * config.latent_l2_weight * z[i];
            }

            for i in 0..z.len() {
                velocity[i] = config.momentum * velocity[i] + g_z[i];
                z[i] += config.step_size * velocity[i];
            }

            let obj =
                fv_objective(&mut target, &mut generator, &z, class_id, config.latent_l2_weight);
            if !obj.is_finite() {
                if restart == 3 {
                    return Err(Error::stage(format!(
                        "fv objective non-finite for class {class_id} after 3 restarts"
                    )));
                }
                seed = derive_seed(config.seed, &format!("fv-restart-{}", restart + 1));
                continue 'restarts;
            }
            log.push(obj);
            if obj > best_obj {
                best_obj = obj;
                best_z = z.clone();
            }
        }

        // snap the winning image to the 8-bit grid and score that exact image
        let raw = generator.raw_forward(&best_z);
        let image = imgproc::quantize_u8(&unit_image_from_raw(&raw).view());
        let (confidence, predicted) = confidence_and_argmax(&mut target, &image, class_id);
        // log reflects best-of-trajectory selection
        log.push(best_obj);
        return Ok(Candidate {
            image,
            class_id,
            attack: AttackKind::Fv,
            target_confidence: confidence,
            predicted_class: predicted,
            realism: None,
            combined_score: None,
            latent_seed: seed,
            objective_log: log,
        });
    }
    Err(Error::stage(format!(
        "fv inversion for class {class_id} failed to produce a finite objective"
    )))
}

/// Generative model inversion: minimize
/// `-D(G(z)) + prior_weight * (-log p_target(class | G(z)))`
/// over the latent, best of `restarts_per_image` restarts by combined score.
pub fn gmi_invert(
    target: &ModelHandle,
    generator: &GeneratorHandle,
    discriminator: &DiscriminatorHandle,
    class_id: ClassId,
    config: &GmiConfig,
    calibration: &RealismCalibration,
) -> Result<Candidate> {
    calibration.validate()?;
    let mut target = target.clone();
    let mut generator = generator.clone();
    let mut discriminator = discriminator.clone();

    let mut best: Option<Candidate> = None;
    let mut fault_budget = 3u32;

    for restart in 0..config.restarts_per_image {
        let mut restart_seed = derive_seed(config.seed, &format!("gmi-restart-{restart}"));

        let candidate = loop {
            match gmi_single_descent(
                &mut target,
                &mut generator,
                &mut discriminator,
                class_id,
                config,
                calibration,
                restart_seed,
            )? {
                Some(c) => break c,
                None => {
                    if fault_budget == 0 {
                        return Err(Error::stage(format!(
                            "gmi objective non-finite for class {class_id} after 3 restarts"
                        )));
                    }
                    fault_budget -= 1;
                    restart_seed = derive_seed(restart_seed, "gmi-refault");
                }
            }
        };

        let better = match &best {
            None => true,
            Some(b) => candidate.combined_score > b.combined_score,
        };
        if better {
            best = Some(candidate);
        }
    }
    Ok(best.expect("restarts_per_image >= 1"))
}

/// One GMI descent; `None` signals a non-finite objective (caller reseeds).
#[allow(clippy::too_many_arguments)]
fn gmi_single_descent(
    target: &mut ModelHandle,
    generator: &mut GeneratorHandle,
    discriminator: &mut DiscriminatorHandle,
    class_id: ClassId,
    config: &GmiConfig,
    calibration: &RealismCalibration,
    seed: u64,
) -> Result<Option<Candidate>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = draw_latent(&mut rng, generator.latent_dim);
    let mut velocity = vec![0.0f32; z.len()];
    let mut log = Vec::with_capacity(config.iterations + 1);

    for step in 0..=config.iterations {
        let raw = generator.raw_forward(&z);
        let img = unit_image_from_raw(&raw);

        // realism branch
        let d_out = discriminator.raw_forward(raw.clone().into_dyn());
        let realism = d_out.iter().copied().next().expect("one logit") as f64;

        // identity branch
        let logits = target.logits_for_unit_image(&img);
        let probs = softmax(
            &logits
                .view()
                .into_shape_with_order((1, logits.len()))
                .expect("logit row"),
        );
        let p_class = probs[[0, class_id]].max(1e-12);
        let loss = -realism + config.prior_weight as f64 * (-(p_class as f64).ln());
        if !loss.is_finite() {
            return Ok(None);
        }
        log.push(loss);
        if step == config.iterations {
            break;
        }

        // d loss / d raw via the discriminator
        let mut d_seed = ndarray::ArrayD::<f32>::zeros(d_out.raw_dim());
        d_seed.fill(-1.0);
        let g_raw_d = discriminator.net.backward(d_seed);
        let g_raw_d: Array4<f32> = g_raw_d.into_dimensionality().expect("NCHW grad");

        // d loss / d logits = prior_weight * (p - onehot)
        let mut logit_grad = Array1::<f32>::zeros(logits.len());
        for j in 0..logits.len() {
            let delta = if j == class_id { 1.0 } else { 0.0 };
            logit_grad[j] = config.prior_weight * (probs[[0, j]] - delta);
        }
        let g_img = target.backward_to_unit_image(&logit_grad, (img.dim().0, img.dim().1));
        let g_raw_t = hwc_grad_to_raw(&g_img);

        let g_raw = &g_raw_d + &g_raw_t;
        let g_z = generator.backward_to_latent(g_raw);

        for i in 0..z.len() {
            velocity[i] = config.momentum * velocity[i] + g_z[i];
            z[i] -= config.step_size * velocity[i];
        }
    }

    let raw = generator.raw_forward(&z);
    let image = imgproc::quantize_u8(&unit_image_from_raw(&raw).view());
    let (confidence, predicted) = confidence_and_argmax(target, &image, class_id);
    let realism = discriminator.realism_scores(&[&image])?[0] as f64;
    let score = combined_score(confidence, realism, calibration)?;
    Ok(Some(Candidate {
        image,
        class_id,
        attack: AttackKind::Gmi,
        target_confidence: confidence,
        predicted_class: predicted,
        realism: Some(realism),
        combined_score: Some(score),
        latent_seed: seed,
        objective_log: log,
    }))
}

/// Acceptance rule, re-derived from the target model (not trusted from the
/// candidate): FV accepts on argmax correctness; GMI additionally requires
/// combined score >= threshold (closed comparison).
pub fn accept(target: &ModelHandle, candidate: &Candidate, spec: &AttackSpec) -> Result<bool> {
    if candidate.attack != spec.kind() {
        return Err(Error::input(format!(
            "candidate from {} attack checked against {} spec",
            candidate.attack.name(),
            spec.kind().name()
        )));
    }
    let mut target = target.clone();
    let (_, predicted) = confidence_and_argmax(&mut target, &candidate.image, candidate.class_id);
    let correct = predicted == candidate.class_id;
    match spec {
        AttackSpec::Fv(_) => Ok(correct),
        AttackSpec::Gmi(c) => {
            let score = candidate.combined_score.ok_or_else(|| {
                Error::input("gmi candidate is missing its combined score")
            })?;
            Ok(correct && score >= c.score_threshold)
        }
    }
}

/// One attempted reconstruction. Only accepted attempts keep pixels; every
/// attempt keeps its scores and seed for the index file.
#[derive(Debug, Clone)]
pub struct ReconItem {
    pub image: Option<Array3<f32>>,
    pub class_id: ClassId,
    pub attack_name: String,
    pub final_combined_score: Option<f64>,
    pub target_confidence: f64,
    pub accepted: bool,
    pub latent_seed: u64,
    pub objective_log: Vec<f64>,
}

/// The attack output for one trial.
#[derive(Debug, Clone, Default)]
pub struct ReconstructionSet {
    pub items: Vec<ReconItem>,
    pub requested_per_class: usize,
    pub attack_wall_clock_seconds: f64,
}

impl ReconstructionSet {
    pub fn accepted_by_class(&self) -> BTreeMap<ClassId, Vec<&ReconItem>> {
        let mut map: BTreeMap<ClassId, Vec<&ReconItem>> = BTreeMap::new();
        for it in self.items.iter().filter(|it| it.accepted) {
            map.entry(it.class_id).or_default().push(it);
        }
        map
    }

    pub fn accepted_counts(&self) -> BTreeMap<ClassId, usize> {
        self.accepted_by_class()
            .into_iter()
            .map(|(c, v)| (c, v.len()))
            .collect()
    }

    /// Classes from `class_set` with zero accepted reconstructions.
    pub fn inversion_failed_classes(&self, class_set: &[ClassId]) -> Vec<ClassId> {
        let counts = self.accepted_counts();
        class_set
            .iter()
            .copied()
            .filter(|c| counts.get(c).copied().unwrap_or(0) == 0)
            .collect()
    }

    pub fn attempts_per_class(&self) -> BTreeMap<ClassId, usize> {
        let mut map: BTreeMap<ClassId, usize> = BTreeMap::new();
        for it in &self.items {
            *map.entry(it.class_id).or_default() += 1;
        }
        map
    }
}

/// Default multiple of `n_per_class` bounding attempts per class.
pub const ATTEMPT_BUDGET_FACTOR: usize = 10;

/// Run invert+accept per class until the quota is filled or the attempt
/// budget (10 x n_per_class) is exhausted. Classes are processed in
/// parallel; per-attempt seeds derive from (seed, class, attempt), so the
/// result is reproducible item-for-item regardless of scheduling.
pub fn generate_reconstructions(
    target: &ModelHandle,
    generator: &GeneratorHandle,
    discriminator: Option<&DiscriminatorHandle>,
    calibration: Option<&RealismCalibration>,
    spec: &AttackSpec,
    n_per_class: usize,
    class_set: &[ClassId],
) -> Result<ReconstructionSet> {
    if n_per_class == 0 {
        return Err(Error::config("n_per_class must be >= 1"));
    }
    spec.validate()?;
    if spec.kind() == AttackKind::Gmi {
        if discriminator.is_none() {
            return Err(Error::config("gmi attack requires a discriminator"));
        }
        if calibration.is_none() {
            return Err(Error::config("gmi attack requires a realism calibration"));
        }
    }
    let started = std::time::Instant::now();
    let budget = ATTEMPT_BUDGET_FACTOR * n_per_class;

    let per_class: Result<Vec<Vec<ReconItem>>> = class_set
        .par_iter()
        .map(|&class_id| {
            let mut items = Vec::new();
            let mut accepted = 0usize;
            for attempt in 0..budget {
                if accepted == n_per_class {
                    break;
                }
                let attempt_seed =
                    derive_seed(spec.seed(), &format!("class-{class_id}/attempt-{attempt}"));
                let attempt_spec = spec.with_seed(attempt_seed);
                let candidate = match &attempt_spec {
                    AttackSpec::Fv(c) => fv_invert(target, generator, class_id, c)?,
                    AttackSpec::Gmi(c) => gmi_invert(
                        target,
                        generator,
                        discriminator.expect("checked above"),
                        class_id,
                        c,
                        calibration.expect("checked above"),
                    )?,
                };
                let ok = accept(target, &candidate, &attempt_spec)?;
                if ok {
                    accepted += 1;
                }
                items.push(ReconItem {
                    image: if ok { Some(candidate.image) } else { None },
                    class_id,
                    attack_name: candidate.attack.name().to_string(),
                    final_combined_score: candidate.combined_score,
                    target_confidence: candidate.target_confidence,
                    accepted: ok,
                    latent_seed: candidate.latent_seed,
                    objective_log: candidate.objective_log,
                });
            }
            Ok(items)
        })
        .collect();

    let items = per_class?.into_iter().flatten().collect();
    Ok(ReconstructionSet {
        items,
        requested_per_class: n_per_class,
        attack_wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Index row persisted for every attempt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconIndexRow {
    pub class_id: ClassId,
    pub attack_name: String,
    pub final_combined_score: Option<f64>,
    pub target_confidence: f64,
    pub accepted: bool,
    pub latent_seed: u64,
    /// Path of the accepted PNG relative to the reconstruction dir.
    pub png: Option<String>,
    pub image_digest: Option<String>,
    pub objective_log: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconIndex {
    pub requested_per_class: usize,
    pub rows: Vec<ReconIndexRow>,
}

/// Wall clock lives beside the index, not in it: the index participates in
/// content digests and determinism comparisons, timing must not.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReconTiming {
    pub attack_wall_clock_seconds: f64,
}

/// Persist accepted images as PNG under `<dir>/<class_name>/<seq>.png` and
/// every attempt into `<dir>/index.json`.
pub fn persist_reconstructions(
    set: &ReconstructionSet,
    class_names: &BTreeMap<ClassId, String>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rows = Vec::with_capacity(set.items.len());
    let mut seq: BTreeMap<ClassId, usize> = BTreeMap::new();
    for item in &set.items {
        let mut png = None;
        let mut image_digest = None;
        if let Some(image) = &item.image {
            let class_name = class_names
                .get(&item.class_id)
                .ok_or_else(|| Error::input(format!("class {} unnamed", item.class_id)))?;
            let n = seq.entry(item.class_id).or_insert(0);
            let rel = format!("{class_name}/{n:04}.png");
            *n += 1;
            let path = dir.join(&rel);
            std::fs::create_dir_all(path.parent().expect("class dir"))?;
            std::fs::write(&path, imgproc::encode_png(&image.view())?)?;
            image_digest = Some(sha256_f32_hex(image.as_slice().expect("contiguous")));
            png = Some(rel);
        }
        rows.push(ReconIndexRow {
            class_id: item.class_id,
            attack_name: item.attack_name.clone(),
            final_combined_score: item.final_combined_score,
            target_confidence: item.target_confidence,
            accepted: item.accepted,
            latent_seed: item.latent_seed,
            png,
            image_digest,
            objective_log: item.objective_log.clone(),
        });
    }
    let index = ReconIndex {
        requested_per_class: set.requested_per_class,
        rows,
    };
    std::fs::write(
        dir.join("index.json"),
        serde_json::to_string_pretty(&index).expect("serializable"),
    )?;
    let timing = ReconTiming {
        attack_wall_clock_seconds: set.attack_wall_clock_seconds,
    };
    std::fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&timing).expect("serializable"),
    )?;
    Ok(())
}

/// Reload a persisted reconstruction set. Accepted rows must resolve to a
/// PNG whose pixels hash back to the recorded digest.
pub fn load_reconstructions(dir: &Path) -> Result<ReconstructionSet> {
    let index: ReconIndex = serde_json::from_str(
        &std::fs::read_to_string(dir.join("index.json"))
            .map_err(|e| Error::stage(format!("reconstruction index unreadable: {e}")))?,
    )
    .map_err(|e| Error::stage(format!("reconstruction index invalid: {e}")))?;
    let timing: ReconTiming = std::fs::read_to_string(dir.join("timing.json"))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok())
        .unwrap_or_default();
    let mut items = Vec::with_capacity(index.rows.len());
    for row in index.rows {
        let image = match (&row.png, &row.image_digest) {
            (Some(rel), Some(expected)) => {
                let img = imgproc::load_image(&dir.join(rel))?;
                let digest = sha256_f32_hex(img.as_slice().expect("contiguous"));
                if &digest != expected {
                    return Err(Error::stage(format!(
                        "reconstruction {rel} digest mismatch (tampered or corrupt)"
                    )));
                }
                Some(img)
            }
            _ => None,
        };
        items.push(ReconItem {
            image,
            class_id: row.class_id,
            attack_name: row.attack_name,
            final_combined_score: row.final_combined_score,
            target_confidence: row.target_confidence,
            accepted: row.accepted,
            latent_seed: row.latent_seed,
            objective_log: row.objective_log,
        });
    }
    Ok(ReconstructionSet {
        items,
        requested_per_class: index.requested_per_class,
        attack_wall_clock_seconds: timing.attack_wall_clock_seconds,
    })
}
