//! Deterministic stub backends for hermetic runs.
//!
//! Two families: tag stubs read a class id embedded in a corner pixel
//! (exact oracles for metric tests), palette stubs map an image to the
//! nearest per-class mean color (meaningful on GAN reconstructions, used by
//! `--stub-backends` runs). Text scoring is keyword containment.

use super::{
    normalize_label, BackendIdentity, CaptionBackend, ImageTextSimilarityBackend,
    TextZeroShotBackend,
};
use crate::data::{fill_template, LabeledDataset};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::riskcore::ClassId;
use ndarray::Array3;
use std::collections::BTreeMap;

/// Class-id codec over the top-left pixel of channel 0. Survives the 8-bit
/// PNG round-trip exactly; supports ids 0..32.
pub mod fixture_tag {
    use super::*;

    pub const MAX_CLASSES: usize = 32;

    pub fn encode(image: &mut Array3<f32>, class_id: ClassId) {
        assert!(class_id < MAX_CLASSES, "fixture tag supports ids < 32");
        image[[0, 0, 0]] = (class_id * 8 + 4) as f32 / 255.0;
    }

    pub fn decode(image: &Array3<f32>) -> Option<ClassId> {
        let byte = (image[[0, 0, 0]] * 255.0).round() as i64;
        if byte < 4 || (byte - 4) % 8 != 0 {
            return None;
        }
        let id = ((byte - 4) / 8) as usize;
        (id < MAX_CLASSES).then_some(id)
    }
}

fn class_names_digest(class_names: &BTreeMap<ClassId, String>) -> String {
    let joined = class_names
        .iter()
        .map(|(k, v)| format!("{k}:{v}"))
        .collect::<Vec<_>>()
        .join("\n");
    sha256_hex(joined.as_bytes())
}

/// Oracle caption stub: emits "a photo of a <class>" for the embedded tag.
#[derive(Debug, Clone)]
pub struct TagCaptionStub {
    class_names: BTreeMap<ClassId, String>,
}

impl TagCaptionStub {
    pub fn new(class_names: BTreeMap<ClassId, String>) -> Self {
        Self { class_names }
    }
}

impl CaptionBackend for TagCaptionStub {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-caption-tag".into(),
            model_digest: class_names_digest(&self.class_names),
            max_concurrency: None,
        }
    }

    fn supports_prompting(&self) -> bool {
        false
    }

    fn caption(&self, image: &Array3<f32>, _prompt: Option<&str>) -> Result<String> {
        let class_id = fixture_tag::decode(image)
            .ok_or_else(|| Error::stage("image carries no fixture tag"))?;
        let name = self
            .class_names
            .get(&class_id)
            .ok_or_else(|| Error::stage(format!("tag {class_id} outside the class set")))?;
        fill_template("a photo of a {}", name)
    }
}

/// Adversarial caption stub: a fixed text regardless of the image.
#[derive(Debug, Clone)]
pub struct FixedCaptionStub {
    text: String,
}

impl FixedCaptionStub {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }
}

impl CaptionBackend for FixedCaptionStub {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-caption-fixed".into(),
            model_digest: sha256_hex(self.text.as_bytes()),
            max_concurrency: None,
        }
    }

    fn supports_prompting(&self) -> bool {
        false
    }

    fn caption(&self, _image: &Array3<f32>, _prompt: Option<&str>) -> Result<String> {
        Ok(self.text.clone())
    }
}

/// Per-class mean colors, the fixture metadata driving the palette stubs.
#[derive(Debug, Clone)]
pub struct ClassPalette {
    pub class_names: BTreeMap<ClassId, String>,
    pub mean_colors: BTreeMap<ClassId, Vec<f32>>,
}

impl ClassPalette {
    /// Mean color per class over a dataset, in ingest order.
    pub fn from_dataset(dataset: &LabeledDataset) -> Result<Self> {
        let (_, _, channels) = dataset
            .image_shape()
            .ok_or_else(|| Error::input("palette needs a nonempty dataset"))?;
        let mut sums: BTreeMap<ClassId, (Vec<f64>, usize)> = BTreeMap::new();
        for item in &dataset.items {
            let entry = sums
                .entry(item.label)
                .or_insert_with(|| (vec![0.0; channels], 0));
            for ch in 0..channels {
                entry.0[ch] += item.image.index_axis(ndarray::Axis(2), ch).mean().unwrap() as f64;
            }
            entry.1 += 1;
        }
        let mean_colors = sums
            .into_iter()
            .map(|(class, (sum, count))| {
                (class, sum.iter().map(|s| (*s / count as f64) as f32).collect())
            })
            .collect();
        Ok(Self {
            class_names: dataset.class_names.clone(),
            mean_colors,
        })
    }

    fn digest(&self) -> String {
        let mut text = class_names_digest(&self.class_names);
        for (class, color) in &self.mean_colors {
            text.push_str(&format!("|{class}:{color:?}"));
        }
        sha256_hex(text.as_bytes())
    }

    fn nearest_class(&self, image: &Array3<f32>) -> ClassId {
        let channels = image.dim().2;
        let mut mean = vec![0.0f32; channels];
        for (ch, m) in mean.iter_mut().enumerate() {
            *m = image.index_axis(ndarray::Axis(2), ch).mean().unwrap();
        }
        let mut best = *self.mean_colors.keys().next().expect("nonempty palette");
        let mut best_dist = f32::INFINITY;
        for (&class, color) in &self.mean_colors {
            let dist: f32 = color
                .iter()
                .zip(&mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best_dist {
                best_dist = dist;
                best = class;
            }
        }
        best
    }

    fn distance_to(&self, image: &Array3<f32>, class: ClassId) -> f32 {
        let channels = image.dim().2;
        let mut mean = vec![0.0f32; channels];
        for (ch, m) in mean.iter_mut().enumerate() {
            *m = image.index_axis(ndarray::Axis(2), ch).mean().unwrap();
        }
        self.mean_colors[&class]
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Caption stub keyed on the nearest palette class; works on reconstructions
/// where no embedded tag survives.
#[derive(Debug, Clone)]
pub struct PaletteCaptionStub {
    palette: ClassPalette,
}

impl PaletteCaptionStub {
    pub fn new(palette: ClassPalette) -> Self {
        Self { palette }
    }
}

impl CaptionBackend for PaletteCaptionStub {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-caption-palette".into(),
            model_digest: self.palette.digest(),
            max_concurrency: None,
        }
    }

    fn supports_prompting(&self) -> bool {
        false
    }

    fn caption(&self, image: &Array3<f32>, _prompt: Option<&str>) -> Result<String> {
        let class = self.palette.nearest_class(image);
        let name = &self.palette.class_names[&class];
        fill_template("a photo of a {}", name)
    }
}

/// Keyword-containment text scorer: 1.0 when the normalized label occurs in
/// the normalized text on word boundaries, else 0.0.
#[derive(Debug, Clone, Default)]
pub struct StubTextZeroShot;

impl StubTextZeroShot {
    pub fn new() -> Self {
        Self
    }
}

fn normalize_text_words(text: &str) -> String {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(normalize_label)
        .collect();
    words.join(" ")
}

impl TextZeroShotBackend for StubTextZeroShot {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-zeroshot-text".into(),
            model_digest: "keyword-containment-v1".into(),
            max_concurrency: None,
        }
    }

    fn classify(&self, text: &str, labels: &[String]) -> Result<Vec<f64>> {
        let haystack = format!(" {} ", normalize_text_words(text));
        Ok(labels
            .iter()
            .map(|label| {
                let needle = format!(" {} ", normalize_text_words(label));
                if haystack.contains(&needle) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// Similarity stub keyed on embedded fixture tags: 1.0 when the text
/// mentions the tagged class name, else 0.0.
#[derive(Debug, Clone)]
pub struct TagSimilarityStub {
    class_names: BTreeMap<ClassId, String>,
}

impl TagSimilarityStub {
    pub fn new(class_names: BTreeMap<ClassId, String>) -> Self {
        Self { class_names }
    }
}

impl ImageTextSimilarityBackend for TagSimilarityStub {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-similarity-tag".into(),
            model_digest: class_names_digest(&self.class_names),
            max_concurrency: None,
        }
    }

    fn scores(&self, image: &Array3<f32>, texts: &[String]) -> Result<Vec<f64>> {
        let tagged = fixture_tag::decode(image).and_then(|id| self.class_names.get(&id));
        Ok(texts
            .iter()
            .map(|text| match tagged {
                Some(name) => {
                    let haystack = format!(" {} ", normalize_text_words(text));
                    let needle = format!(" {} ", normalize_text_words(name));
                    if haystack.contains(&needle) {
                        1.0
                    } else {
                        0.0
                    }
                }
                None => 0.0,
            })
            .collect())
    }
}

/// Similarity stub for reconstructions: the score of (image, text) is the
/// negated palette distance to the class the text mentions; texts matching
/// no class score a large negative constant.
#[derive(Debug, Clone)]
pub struct PaletteSimilarityStub {
    palette: ClassPalette,
}

impl PaletteSimilarityStub {
    pub fn new(palette: ClassPalette) -> Self {
        Self { palette }
    }
}

impl ImageTextSimilarityBackend for PaletteSimilarityStub {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            name: "stub-similarity-palette".into(),
            model_digest: self.palette.digest(),
            max_concurrency: None,
        }
    }

    fn scores(&self, image: &Array3<f32>, texts: &[String]) -> Result<Vec<f64>> {
        Ok(texts
            .iter()
            .map(|text| {
                let haystack = format!(" {} ", normalize_text_words(text));
                let mentioned = self.palette.class_names.iter().find(|(_, name)| {
                    let needle = format!(" {} ", normalize_text_words(name));
                    haystack.contains(&needle)
                });
                match mentioned {
                    Some((&class, _)) => -(self.palette.distance_to(image, class) as f64),
                    None => -1e9,
                }
            })
            .collect())
    }
}
