//! The four risk dimensions computed from reconstructions, captions,
//! models, and datasets. Field names keep the "loss" convention even though
//! the values are accuracies; every score reads as "higher = more
//! private-data leakage".
//!
//! Classes whose inversion produced no accepted reconstructions are
//! excluded from denominators (and surfaced in report metadata) rather than
//! silently scored 0.

use crate::attacks::ReconstructionSet;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::modelzoo::{infer, ModelHandle, ModelRole};
use crate::riskcore::{AccuracyRecord, ClassId, DimensionScore, RiskDimension};
use crate::vlm::{
    labels_match, zero_shot_image_classify, zero_shot_text_classify, CandidateLabelSet,
    CaptionRecord, ImageTextSimilarityBackend, SynonymMap, TextZeroShotBackend,
};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How the label-loss candidate list is chosen.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "labels")]
pub enum LabelLossMode {
    /// Known class names as candidates (the benchmarking convention).
    #[default]
    Benchmark,
    /// Candidates distilled from captions; falls back to the full
    /// vocabulary when the derived set is empty.
    FromCandidates,
    /// A user-supplied decoy list for unknown-class scenarios. Scored with
    /// the same accuracy metric, without further interpretation.
    Decoy(Vec<String>),
}

/// Per-class-group scoring for label loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupScoring {
    /// Fraction of the group assigned the true class.
    #[default]
    PerImageFraction,
    /// 1.0 when the plurality vote lands on the true class, else 0.0.
    MajorityVote,
}

/// Everything the metric stage consumes, wired per the evaluation pipeline.
pub struct MetricInputs<'a> {
    pub reconstruction_set: &'a ReconstructionSet,
    pub caption_records: &'a [CaptionRecord],
    pub candidate_labels: &'a CandidateLabelSet,
    pub evaluation_model: &'a ModelHandle,
    pub proxy_model: &'a ModelHandle,
    pub target_train_set: &'a LabeledDataset,
    pub class_names: &'a BTreeMap<ClassId, String>,
    pub vocabulary: &'a [String],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub scores: BTreeMap<RiskDimension, DimensionScore>,
    pub label_unreachable_classes: Vec<ClassId>,
    pub inversion_failed_classes: Vec<ClassId>,
}

/// Accuracy of the independently trained evaluation model on accepted
/// reconstructions, per labeled class.
pub fn quality_loss(
    evaluation_model: &ModelHandle,
    reconstruction_set: &ReconstructionSet,
) -> Result<DimensionScore> {
    if evaluation_model.role != ModelRole::Evaluation {
        return Err(Error::config(format!(
            "quality loss requires an evaluation-role model, got {:?}",
            evaluation_model.role
        )));
    }
    let mut images: Vec<&Array3<f32>> = Vec::new();
    let mut truth: Vec<ClassId> = Vec::new();
    for item in reconstruction_set.items.iter().filter(|it| it.accepted) {
        images.push(item.image.as_ref().expect("accepted items carry pixels"));
        truth.push(item.class_id);
    }
    if images.is_empty() {
        return Err(Error::input(
            "quality loss needs at least one accepted reconstruction",
        ));
    }
    let (preds, _) = infer(evaluation_model, &images)?;
    let record = crate::riskcore::per_class_accuracy(&preds, &truth, &evaluation_model.class_ids())?;
    Ok(DimensionScore::from_record(RiskDimension::Quality, record))
}

/// Accuracy of class inference from captions: each caption is zero-shot
/// classified against the known class names; a caption whose top score is 0
/// (no label matched at all) counts as incorrect.
pub fn feature_loss(
    caption_records: &[CaptionRecord],
    text_backend: &dyn TextZeroShotBackend,
    class_names: &BTreeMap<ClassId, String>,
    synonyms: Option<&SynonymMap>,
) -> Result<DimensionScore> {
    if caption_records.is_empty() {
        return Err(Error::input("feature loss needs caption records"));
    }
    let labels: Vec<String> = class_names.values().cloned().collect();
    let mut counts: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    for record in caption_records {
        let true_class = record.image_ref.class_id;
        let true_name = class_names.get(&true_class).ok_or_else(|| {
            Error::input(format!("caption references unknown class {true_class}"))
        })?;
        let ranked = zero_shot_text_classify(text_backend, &record.caption, &labels)?;
        let correct = match ranked.first() {
            Some((label, score)) if *score > 0.0 => labels_match(label, true_name, synonyms),
            _ => false,
        };
        let entry = counts.entry(true_class).or_insert((0, 0));
        entry.1 += 1;
        if correct {
            entry.0 += 1;
        }
    }
    let record = AccuracyRecord::from_counts(&counts)?;
    Ok(DimensionScore::from_record(RiskDimension::Feature, record))
}

/// Zero-shot image classification of each class's reconstruction group over
/// the candidate labels. Classes whose name is absent from the candidates
/// score 0 and are flagged label-unreachable.
pub fn label_loss(
    reconstruction_set: &ReconstructionSet,
    similarity_backend: &dyn ImageTextSimilarityBackend,
    candidate_labels: &[String],
    class_names: &BTreeMap<ClassId, String>,
    template: &str,
    scoring: GroupScoring,
    synonyms: Option<&SynonymMap>,
) -> Result<(DimensionScore, Vec<ClassId>)> {
    if candidate_labels.is_empty() {
        return Err(Error::input("label loss needs candidate labels"));
    }
    let groups = reconstruction_set.accepted_by_class();
    if groups.is_empty() {
        return Err(Error::input(
            "label loss needs at least one accepted reconstruction",
        ));
    }
    let mut counts: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
    let mut unreachable = Vec::new();
    for (&class_id, group) in &groups {
        let class_name = class_names
            .get(&class_id)
            .ok_or_else(|| Error::input(format!("class {class_id} unnamed")))?;
        let reachable = candidate_labels
            .iter()
            .any(|l| labels_match(l, class_name, synonyms));
        if !reachable {
            unreachable.push(class_id);
            counts.insert(class_id, (0, group.len()));
            continue;
        }
        let images: Vec<&Array3<f32>> = group
            .iter()
            .map(|it| it.image.as_ref().expect("accepted items carry pixels"))
            .collect();
        let predictions =
            zero_shot_image_classify(similarity_backend, &images, candidate_labels, template)?;
        let mut correct = 0usize;
        let mut scored = 0usize;
        for prediction in predictions {
            match prediction {
                Ok(label) => {
                    scored += 1;
                    if labels_match(&label, class_name, synonyms) {
                        correct += 1;
                    }
                }
                Err(_) => {
                    // item-level backend failure: excluded from denominators
                }
            }
        }
        if scored == 0 {
            continue;
        }
        match scoring {
            GroupScoring::PerImageFraction => {
                counts.insert(class_id, (correct, scored));
            }
            GroupScoring::MajorityVote => {
                let majority = correct * 2 > scored;
                counts.insert(class_id, (if majority { scored } else { 0 }, scored));
            }
        }
    }
    let record = AccuracyRecord::from_counts(&counts)?;
    Ok((
        DimensionScore::from_record(RiskDimension::Label, record),
        unreachable,
    ))
}

/// Accuracy of the reconstruction-fine-tuned proxy on the target's training
/// dataset (the knowledge-extraction measure).
pub fn model_stealing_loss(
    proxy_model: &ModelHandle,
    target_train_set: &LabeledDataset,
) -> Result<DimensionScore> {
    if proxy_model.role != ModelRole::Proxy {
        return Err(Error::config(format!(
            "model stealing loss requires a proxy-role model, got {:?}",
            proxy_model.role
        )));
    }
    if proxy_model.class_names != target_train_set.class_names {
        return Err(Error::config(
            "proxy and target training set disagree on the class set",
        ));
    }
    let images: Vec<&Array3<f32>> = target_train_set.items.iter().map(|it| &it.image).collect();
    if images.is_empty() {
        return Err(Error::input("target training set is empty"));
    }
    let truth: Vec<ClassId> = target_train_set.items.iter().map(|it| it.label).collect();
    let (preds, _) = infer(proxy_model, &images)?;
    let record = crate::riskcore::per_class_accuracy(&preds, &truth, &proxy_model.class_ids())?;
    Ok(DimensionScore::from_record(RiskDimension::Stealing, record))
}

/// Resolve the effective label-loss candidate list for a mode.
pub fn resolve_label_candidates(
    mode: &LabelLossMode,
    candidate_labels: &CandidateLabelSet,
    class_names: &BTreeMap<ClassId, String>,
    vocabulary: &[String],
) -> Vec<String> {
    match mode {
        LabelLossMode::Benchmark => class_names.values().cloned().collect(),
        LabelLossMode::FromCandidates => {
            if candidate_labels.empty_flagged {
                vocabulary.to_vec()
            } else {
                candidate_labels.labels.clone()
            }
        }
        LabelLossMode::Decoy(labels) => labels.clone(),
    }
}

/// Compute all four dimensions. Each dimension is independent; inputs are
/// never mutated.
#[allow(clippy::too_many_arguments)]
pub fn compute_all(
    inputs: &MetricInputs<'_>,
    text_backend: &dyn TextZeroShotBackend,
    similarity_backend: &dyn ImageTextSimilarityBackend,
    label_mode: &LabelLossMode,
    template: &str,
    scoring: GroupScoring,
    synonyms: Option<&SynonymMap>,
) -> Result<MetricsBundle> {
    let quality = quality_loss(inputs.evaluation_model, inputs.reconstruction_set)?;
    let feature = feature_loss(
        inputs.caption_records,
        text_backend,
        inputs.class_names,
        synonyms,
    )?;
    let candidates = resolve_label_candidates(
        label_mode,
        inputs.candidate_labels,
        inputs.class_names,
        inputs.vocabulary,
    );
    let (label, unreachable) = label_loss(
        inputs.reconstruction_set,
        similarity_backend,
        &candidates,
        inputs.class_names,
        template,
        scoring,
        synonyms,
    )?;
    let stealing = model_stealing_loss(inputs.proxy_model, inputs.target_train_set)?;

    let class_set: Vec<ClassId> = inputs.class_names.keys().copied().collect();
    let failed = inputs.reconstruction_set.inversion_failed_classes(&class_set);
    let mut scores = BTreeMap::new();
    scores.insert(RiskDimension::Quality, quality);
    scores.insert(RiskDimension::Feature, feature);
    scores.insert(RiskDimension::Label, label);
    scores.insert(RiskDimension::Stealing, stealing);
    Ok(MetricsBundle {
        scores,
        label_unreachable_classes: unreachable,
        inversion_failed_classes: failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::ReconItem;
    use crate::data::{DataItem, SplitTag};
    use crate::modelzoo::{ArchDescriptor, ModelProvenance};
    use crate::nn::{Flatten, Layer, Linear, Sequential, WeightInit};
    use crate::vlm::stub::{
        fixture_tag, FixedCaptionStub, StubTextZeroShot, TagCaptionStub, TagSimilarityStub,
    };
    use crate::vlm::{caption, ImageRef};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn class_names() -> BTreeMap<ClassId, String> {
        [(0, "cat".to_string()), (1, "dog".to_string())].into_iter().collect()
    }

    /// Deterministic 2-class model on 2x2x3 images: logit k reads pixel
    /// (0,k) of channel 0.
    fn pixel_readout_model(role: ModelRole) -> ModelHandle {
        let mut net = Sequential::default();
        net.push(Flatten::new());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = Linear::new(12, 2, WeightInit::Normal(0.0), &mut rng);
        head.weight.value.fill(0.0);
        head.weight.value[[0, 0]] = 1.0;
        head.weight.value[[1, 1]] = 1.0;
        net.push(head);
        ModelHandle {
            role,
            arch: ArchDescriptor::parse("plain_cnn:w4:d1").unwrap(),
            class_names: class_names(),
            input_shape: (2, 2, 3),
            normalization: (vec![0.0; 3], vec![1.0; 3]),
            net,
            train_accuracy: 1.0,
            test_accuracy: None,
            provenance: ModelProvenance::default(),
        }
    }

    /// Image the pixel-readout model classifies as `class`.
    fn image_for(class: ClassId) -> Array3<f32> {
        let mut img = Array3::zeros((2, 2, 3));
        img[[0, class.min(1), 0]] = 1.0;
        img
    }

    fn recon_set(items: Vec<(ClassId, Array3<f32>)>) -> ReconstructionSet {
        ReconstructionSet {
            items: items
                .into_iter()
                .map(|(class_id, image)| ReconItem {
                    image: Some(image),
                    class_id,
                    attack_name: "fv".into(),
                    final_combined_score: None,
                    target_confidence: 1.0,
                    accepted: true,
                    latent_seed: 0,
                    objective_log: vec![],
                })
                .collect(),
            requested_per_class: 10,
            attack_wall_clock_seconds: 0.0,
        }
    }

    #[test]
    fn quality_loss_counts_seven_of_ten() {
        let eval = pixel_readout_model(ModelRole::Evaluation);
        // 10 class-0 reconstructions, 7 of which the model reads as class 0
        let mut items = Vec::new();
        for i in 0..10 {
            let img = image_for(if i < 7 { 0 } else { 1 });
            items.push((0usize, img));
        }
        let set = recon_set(items);
        let score = quality_loss(&eval, &set).unwrap();
        assert_eq!(score.per_class[&0], 0.7);
        assert_eq!(score.overall, 0.7);
        assert_eq!(score.dimension, RiskDimension::Quality);
    }

    #[test]
    fn quality_loss_perfect_oracle() {
        let eval = pixel_readout_model(ModelRole::Evaluation);
        let items: Vec<_> = (0..10).map(|i| (i % 2, image_for(i % 2))).collect();
        let score = quality_loss(&eval, &recon_set(items)).unwrap();
        assert_eq!(score.overall, 1.0);
    }

    #[test]
    fn quality_loss_requires_evaluation_role() {
        let target = pixel_readout_model(ModelRole::Target);
        let set = recon_set(vec![(0, image_for(0))]);
        assert!(matches!(quality_loss(&target, &set), Err(Error::Config(_))));
    }

    #[test]
    fn quality_loss_excludes_failed_classes() {
        let eval = pixel_readout_model(ModelRole::Evaluation);
        // only class 0 produced reconstructions
        let set = recon_set(vec![(0, image_for(0)), (0, image_for(0))]);
        let score = quality_loss(&eval, &set).unwrap();
        assert!(score.per_class.contains_key(&0));
        assert!(!score.per_class.contains_key(&1));
        assert_eq!(set.inversion_failed_classes(&[0, 1]), vec![1]);
    }

    fn tagged(class: ClassId) -> Array3<f32> {
        let mut img = Array3::from_elem((2, 2, 3), 0.4f32);
        fixture_tag::encode(&mut img, class);
        img
    }

    fn records_from(backend: &dyn crate::vlm::CaptionBackend, images: &[(ClassId, Array3<f32>)]) -> Vec<CaptionRecord> {
        images
            .iter()
            .enumerate()
            .map(|(i, (class, img))| {
                caption(backend, img, ImageRef { class_id: *class, index: i }, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn feature_loss_oracle_stub_is_exactly_one() {
        let oracle = TagCaptionStub::new(class_names());
        let images: Vec<_> = (0..10).map(|i| (i % 2, tagged(i % 2))).collect();
        let records = records_from(&oracle, &images);
        let score =
            feature_loss(&records, &StubTextZeroShot::new(), &class_names(), None).unwrap();
        assert_eq!(score.overall, 1.0);
        assert_eq!(score.per_class[&0], 1.0);
        assert_eq!(score.per_class[&1], 1.0);
    }

    #[test]
    fn feature_loss_adversarial_stub_is_exactly_zero() {
        let adversarial = FixedCaptionStub::new("a photo of a xylophone");
        let images: Vec<_> = (0..10).map(|i| (i % 2, tagged(i % 2))).collect();
        let records = records_from(&adversarial, &images);
        let score =
            feature_loss(&records, &StubTextZeroShot::new(), &class_names(), None).unwrap();
        assert_eq!(score.overall, 0.0);
        assert_eq!(score.per_class[&0], 0.0);
        assert_eq!(score.per_class[&1], 0.0);
    }

    #[test]
    fn feature_loss_mixed_captions_count() {
        // 6 of 10 class-0 captions carry the true token
        let mut records = Vec::new();
        for i in 0..10 {
            records.push(CaptionRecord {
                image_ref: ImageRef { class_id: 0, index: i },
                caption: if i < 6 {
                    "a photo of a cat".to_string()
                } else {
                    "a muddy scene".to_string()
                },
                prompt: None,
                backend_identity: "test".into(),
            });
        }
        let score =
            feature_loss(&records, &StubTextZeroShot::new(), &class_names(), None).unwrap();
        assert_eq!(score.per_class[&0], 0.6);
    }

    #[test]
    fn label_loss_oracle_stub() {
        let set = recon_set((0..10).map(|i| (i % 2, tagged(i % 2))).collect());
        let backend = TagSimilarityStub::new(class_names());
        let candidates: Vec<String> = class_names().values().cloned().collect();
        let (score, unreachable) = label_loss(
            &set,
            &backend,
            &candidates,
            &class_names(),
            "a photo of a {}",
            GroupScoring::PerImageFraction,
            None,
        )
        .unwrap();
        assert_eq!(score.overall, 1.0);
        assert!(unreachable.is_empty());
    }

    #[test]
    fn label_loss_missing_candidate_flags_class() {
        let set = recon_set(vec![(0, tagged(0)), (1, tagged(1))]);
        let backend = TagSimilarityStub::new(class_names());
        let candidates = vec!["cat".to_string()]; // dog missing
        let (score, unreachable) = label_loss(
            &set,
            &backend,
            &candidates,
            &class_names(),
            "a photo of a {}",
            GroupScoring::PerImageFraction,
            None,
        )
        .unwrap();
        assert_eq!(score.per_class[&1], 0.0);
        assert_eq!(unreachable, vec![1]);
        assert_eq!(score.per_class[&0], 1.0);
    }

    #[test]
    fn label_loss_nine_of_ten() {
        // 9 tagged correctly, 1 carries the other class's tag
        let mut items: Vec<(ClassId, Array3<f32>)> =
            (0..9).map(|_| (0usize, tagged(0))).collect();
        items.push((0, tagged(1)));
        let set = recon_set(items);
        let backend = TagSimilarityStub::new(class_names());
        let candidates: Vec<String> = class_names().values().cloned().collect();
        let (score, _) = label_loss(
            &set,
            &backend,
            &candidates,
            &class_names(),
            "a photo of a {}",
            GroupScoring::PerImageFraction,
            None,
        )
        .unwrap();
        assert_eq!(score.per_class[&0], 0.9);
    }

    #[test]
    fn label_loss_majority_vote_toggle() {
        let mut items: Vec<(ClassId, Array3<f32>)> =
            (0..6).map(|_| (0usize, tagged(0))).collect();
        items.extend((0..4).map(|_| (0usize, tagged(1))));
        let set = recon_set(items);
        let backend = TagSimilarityStub::new(class_names());
        let candidates: Vec<String> = class_names().values().cloned().collect();
        let (fraction, _) = label_loss(
            &set,
            &backend,
            &candidates,
            &class_names(),
            "a photo of a {}",
            GroupScoring::PerImageFraction,
            None,
        )
        .unwrap();
        assert_eq!(fraction.per_class[&0], 0.6);
        let (majority, _) = label_loss(
            &set,
            &backend,
            &candidates,
            &class_names(),
            "a photo of a {}",
            GroupScoring::MajorityVote,
            None,
        )
        .unwrap();
        assert_eq!(majority.per_class[&0], 1.0);
    }

    fn toy_train_set() -> LabeledDataset {
        let items: Vec<DataItem> = (0..20)
            .map(|i| DataItem {
                image: image_for(i % 2),
                label: i % 2,
                digest: format!("t-{i}"),
                rel_path: format!("{}/{i}", i % 2),
            })
            .collect();
        LabeledDataset {
            name: "toy".into(),
            items,
            class_names: class_names(),
            split_tag: SplitTag::TargetTrain,
        }
    }

    #[test]
    fn stealing_loss_perfect_proxy() {
        let proxy = pixel_readout_model(ModelRole::Proxy);
        let score = model_stealing_loss(&proxy, &toy_train_set()).unwrap();
        assert_eq!(score.overall, 1.0);
    }

    #[test]
    fn stealing_loss_degenerate_proxy_predicts_one_class() {
        let mut proxy = pixel_readout_model(ModelRole::Proxy);
        // bias everything toward class 0
        proxy.net.visit_params(&mut |p| {
            if p.value.ndim() == 1 && p.value.len() == 2 {
                p.value[[0]] = 10.0;
            }
        });
        let score = model_stealing_loss(&proxy, &toy_train_set()).unwrap();
        assert_eq!(score.per_class[&0], 1.0);
        assert_eq!(score.per_class[&1], 0.0);
        assert_eq!(score.overall, 0.5);
    }

    #[test]
    fn stealing_loss_role_and_class_checks() {
        let eval = pixel_readout_model(ModelRole::Evaluation);
        assert!(matches!(
            model_stealing_loss(&eval, &toy_train_set()),
            Err(Error::Config(_))
        ));
        let proxy = pixel_readout_model(ModelRole::Proxy);
        let mut mismatched = toy_train_set();
        mismatched.class_names.insert(2, "ship".to_string());
        assert!(matches!(
            model_stealing_loss(&proxy, &mismatched),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quality_and_stealing_are_order_invariant() {
        let eval = pixel_readout_model(ModelRole::Evaluation);
        let mut items: Vec<(ClassId, Array3<f32>)> =
            (0..12).map(|i| ((i % 2) as ClassId, image_for(i % 3 % 2))).collect();
        let a = quality_loss(&eval, &recon_set(items.clone())).unwrap();
        items.reverse();
        let b = quality_loss(&eval, &recon_set(items)).unwrap();
        assert_eq!(a.overall, b.overall);
        assert_eq!(a.per_class, b.per_class);
    }

    #[test]
    fn resolve_candidates_modes() {
        let set = CandidateLabelSet {
            labels: vec!["cat".into()],
            support: Default::default(),
            backend_identity: "t".into(),
            vocabulary_digest: "d".into(),
            empty_flagged: false,
        };
        let names = class_names();
        let vocab = vec!["cat".into(), "dog".into(), "ship".into()];
        assert_eq!(
            resolve_label_candidates(&LabelLossMode::Benchmark, &set, &names, &vocab),
            vec!["cat".to_string(), "dog".to_string()]
        );
        assert_eq!(
            resolve_label_candidates(&LabelLossMode::FromCandidates, &set, &names, &vocab),
            vec!["cat".to_string()]
        );
        let empty = CandidateLabelSet {
            empty_flagged: true,
            labels: vec![],
            ..set.clone()
        };
        assert_eq!(
            resolve_label_candidates(&LabelLossMode::FromCandidates, &empty, &names, &vocab),
            vocab
        );
        let decoy = LabelLossMode::Decoy(vec!["submarine".into()]);
        assert_eq!(
            resolve_label_candidates(&decoy, &set, &names, &vocab),
            vec!["submarine".to_string()]
        );
    }
}
