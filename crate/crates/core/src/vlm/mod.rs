//! Pluggable interpretation backends: image captioning, zero-shot text
//! classification, and joint image-text similarity.
//!
//! Two implementations ship for each interface: deterministic stubs driven
//! by fixture metadata and keyword containment (hermetic tests and
//! `--stub-backends` runs), and HTTP clients against a model-serving
//! endpoint. All backends are referentially transparent per
//! (identity, inputs); caption backends must decode greedily
//! (temperature zero).

pub mod http;
pub mod stub;

use crate::data::fill_template;
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::riskcore::ClassId;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Name + model digest identifying one backend build, plus its declared
/// concurrency tolerance (None = fully concurrent).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub name: String,
    pub model_digest: String,
    pub max_concurrency: Option<usize>,
}

impl BackendIdentity {
    pub fn display(&self) -> String {
        let digest = if self.model_digest.len() > 12 {
            &self.model_digest[..12]
        } else {
            &self.model_digest
        };
        format!("{}@{}", self.name, digest)
    }
}

/// Reference to one reconstructed image: its labeled class and position
/// within that class's accepted group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ImageRef {
    pub class_id: ClassId,
    pub index: usize,
}

/// The caption text and provenance for one reconstructed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_ref: ImageRef,
    pub caption: String,
    pub prompt: Option<String>,
    pub backend_identity: String,
}

pub trait CaptionBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    fn supports_prompting(&self) -> bool;
    fn caption(&self, image: &Array3<f32>, prompt: Option<&str>) -> Result<String>;
}

pub trait TextZeroShotBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    /// One score in [0,1] per candidate label; scores need not sum to 1.
    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>>;
}

pub trait ImageTextSimilarityBackend: Send + Sync {
    fn identity(&self) -> BackendIdentity;
    /// One finite similarity per text; higher = more similar.
    fn scores(&self, image: &Array3<f32>, texts: &[String]) -> Result<Vec<f64>>;
}

/// Caption one image. Prompts are rejected for backends that do not
/// support them; an empty caption is an item-level error for the caller to
/// record.
pub fn caption(
    backend: &dyn CaptionBackend,
    image: &Array3<f32>,
    image_ref: ImageRef,
    prompt: Option<&str>,
) -> Result<CaptionRecord> {
    if prompt.is_some() && !backend.supports_prompting() {
        return Err(Error::config(format!(
            "backend {} does not support prompting",
            backend.identity().display()
        )));
    }
    let text = backend.caption(image, prompt)?;
    if text.trim().is_empty() {
        return Err(Error::stage(format!(
            "backend {} returned an empty caption",
            backend.identity().display()
        )));
    }
    Ok(CaptionRecord {
        image_ref,
        caption: text,
        prompt: prompt.map(str::to_string),
        backend_identity: backend.identity().display(),
    })
}

/// Zero-shot classify text against candidate labels, ranked by descending
/// score with ties kept in input label order.
pub fn zero_shot_text_classify(
    backend: &dyn TextZeroShotBackend,
    text: &str,
    candidate_labels: &[String],
) -> Result<Vec<(String, f64)>> {
    if candidate_labels.is_empty() {
        return Err(Error::input("zero-shot text classification needs candidate labels"));
    }
    let scores = backend.classify(text, candidate_labels)?;
    if scores.len() != candidate_labels.len() {
        return Err(Error::stage(format!(
            "backend {} returned {} scores for {} labels",
            backend.identity().display(),
            scores.len(),
            candidate_labels.len()
        )));
    }
    let mut ranked: Vec<(String, f64)> = candidate_labels
        .iter()
        .cloned()
        .zip(scores)
        .collect();
    // stable sort keeps input order on ties
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(ranked)
}

/// The candidate-label set distilled from captions, ordered by support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateLabelSet {
    pub labels: Vec<String>,
    pub support: BTreeMap<String, f64>,
    pub backend_identity: String,
    pub vocabulary_digest: String,
    /// Set when no label cleared the support threshold; the label-loss
    /// stage then falls back to the full vocabulary.
    pub empty_flagged: bool,
}

/// Aggregate per-caption top-k zero-shot labels into a candidate set.
///
/// A label enters iff it appears in some caption's top-k with nonzero score
/// and its support (fraction of captions where that happens) reaches
/// `support_threshold`. Output order: support descending, ties by
/// vocabulary order. Invariant to caption ordering.
pub fn derive_candidate_labels(
    backend: &dyn TextZeroShotBackend,
    caption_records: &[CaptionRecord],
    vocabulary: &[String],
    per_caption_top_k: usize,
    support_threshold: f64,
) -> Result<CandidateLabelSet> {
    if caption_records.is_empty() {
        return Err(Error::input("derive_candidate_labels needs caption records"));
    }
    if vocabulary.is_empty() {
        return Err(Error::input("derive_candidate_labels needs a vocabulary"));
    }
    // dedupe vocabulary after normalization, keeping first spelling
    let mut vocab: Vec<String> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for v in vocabulary {
        if seen.insert(normalize_label(v)) {
            vocab.push(v.clone());
        }
    }

    let mut appearances: BTreeMap<usize, usize> = BTreeMap::new(); // vocab idx -> count
    for record in caption_records {
        let ranked = zero_shot_text_classify(backend, &record.caption, &vocab)?;
        for (label, score) in ranked.into_iter().take(per_caption_top_k) {
            if score > 0.0 {
                let idx = vocab.iter().position(|v| *v == label).expect("from vocab");
                *appearances.entry(idx).or_default() += 1;
            }
        }
    }

    let n = caption_records.len() as f64;
    let mut entries: Vec<(usize, f64)> = appearances
        .into_iter()
        .map(|(idx, count)| (idx, count as f64 / n))
        .filter(|(_, support)| *support >= support_threshold && *support > 0.0)
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });

    let labels: Vec<String> = entries.iter().map(|&(idx, _)| vocab[idx].clone()).collect();
    let support: BTreeMap<String, f64> = entries
        .iter()
        .map(|&(idx, s)| (vocab[idx].clone(), s))
        .collect();
    let empty_flagged = labels.is_empty();
    Ok(CandidateLabelSet {
        labels,
        support,
        backend_identity: backend.identity().display(),
        vocabulary_digest: sha256_hex(vocabulary.join("\n").as_bytes()),
        empty_flagged,
    })
}

/// Zero-shot image classification over template-expanded label texts.
/// Returns one per-image result; failures are item-level and excluded from
/// metric denominators by the caller. Ties break by label order.
pub fn zero_shot_image_classify(
    backend: &dyn ImageTextSimilarityBackend,
    images: &[&Array3<f32>],
    candidate_labels: &[String],
    template: &str,
) -> Result<Vec<Result<String>>> {
    if images.is_empty() {
        return Err(Error::input("zero-shot image classification needs images"));
    }
    if candidate_labels.is_empty() {
        return Err(Error::input("zero-shot image classification needs labels"));
    }
    let texts: Vec<String> = candidate_labels
        .iter()
        .map(|label| fill_template(template, label))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(images.len());
    for image in images {
        let result = backend.scores(image, &texts).and_then(|scores| {
            if scores.len() != texts.len() {
                return Err(Error::stage(format!(
                    "backend {} returned {} scores for {} texts",
                    backend.identity().display(),
                    scores.len(),
                    texts.len()
                )));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::stage("similarity backend returned non-finite score"));
            }
            let mut best = 0usize;
            for (j, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = j;
                }
            }
            Ok(candidate_labels[best].clone())
        });
        out.push(result);
    }
    Ok(out)
}

/// Normalized form used whenever captions or predicted labels are compared
/// to class names: lowercase, trimmed, final plural stripped.
pub fn normalize_label(s: &str) -> String {
    let lower = s.trim().to_lowercase();
    singularize(&lower)
}

fn singularize(word: &str) -> String {
    if let Some(stem) = word.strip_suffix("ies") {
        if !stem.is_empty() {
            return format!("{stem}y");
        }
    }
    for suffix in ["ches", "shes", "sses", "xes", "zes"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            return format!("{stem}{}", &suffix[..suffix.len() - 2]);
        }
    }
    if word.len() > 1 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Optional user-supplied synonym map, applied after normalization.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SynonymMap(pub BTreeMap<String, String>);

impl SynonymMap {
    fn canonical(&self, normalized: &str) -> String {
        self.0
            .get(normalized)
            .map(|s| normalize_label(s))
            .unwrap_or_else(|| normalized.to_string())
    }
}

/// Normalized exact match with optional synonym folding.
pub fn labels_match(a: &str, b: &str, synonyms: Option<&SynonymMap>) -> bool {
    let na = normalize_label(a);
    let nb = normalize_label(b);
    match synonyms {
        Some(map) => map.canonical(&na) == map.canonical(&nb),
        None => na == nb,
    }
}
