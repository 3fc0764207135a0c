//! Dataset ingestion, split disjointness, NearMiss-1 class balancing, and
//! the template-caption dataset builder.
//!
//! Datasets follow the class-per-subdirectory layout
//! `<root>/<class_name>/<image files>` (PNG, JPEG, BMP). Class ids are
//! assigned by sorted class-directory name; items are ordered
//! lexicographically by relative path, so ingesting the same tree twice
//! yields identical datasets and digests.

use crate::digest::{combine_digests, sha256_hex};
use crate::error::{Error, Result};
use crate::imgproc;
use crate::riskcore::ClassId;
use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    TargetTrain,
    TargetTest,
    Public,
    Reconstructed,
}

/// One labeled image with its provenance.
#[derive(Debug, Clone)]
pub struct DataItem {
    /// HWC pixels in [0,1].
    pub image: Array3<f32>,
    pub label: ClassId,
    /// SHA-256 of the source file bytes.
    pub digest: String,
    pub rel_path: String,
}

/// An immutable labeled image dataset.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub name: String,
    pub items: Vec<DataItem>,
    pub class_names: BTreeMap<ClassId, String>,
    pub split_tag: SplitTag,
}

impl LabeledDataset {
    /// Common (H, W, C) shape of all items.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.items.first().map(|it| it.image.dim())
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.class_names.keys().copied().collect()
    }

    /// Items grouped per class, preserving ingest order.
    pub fn items_by_class(&self) -> BTreeMap<ClassId, Vec<&DataItem>> {
        let mut map: BTreeMap<ClassId, Vec<&DataItem>> =
            self.class_names.keys().map(|&c| (c, Vec::new())).collect();
        for it in &self.items {
            map.get_mut(&it.label).expect("label in class set").push(it);
        }
        map
    }

    pub fn class_counts(&self) -> BTreeMap<ClassId, usize> {
        let mut counts: BTreeMap<ClassId, usize> =
            self.class_names.keys().map(|&c| (c, 0)).collect();
        for it in &self.items {
            *counts.get_mut(&it.label).unwrap() += 1;
        }
        counts
    }

    /// Order-independent digest over item content digests.
    pub fn dataset_digest(&self) -> String {
        combine_digests(self.items.iter().map(|it| it.digest.as_str()))
    }

    pub fn digest_set(&self) -> BTreeSet<&str> {
        self.items.iter().map(|it| it.digest.as_str()).collect()
    }
}

/// Declared ingest layout plus normalization options.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestManifest {
    /// Resize every image to (h, w) on ingest. Without this, all files must
    /// already share one shape; deviants become item errors.
    pub resize_to: Option<(usize, usize)>,
    /// Where to write the manifest sidecar; skipped when unset.
    pub manifest_out: Option<PathBuf>,
}

/// Per-item problems collected (not fatal) during ingest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub item_errors: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

/// Manifest sidecar row: one per successfully ingested item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub rel_path: String,
    pub digest: String,
    pub class_id: ClassId,
    pub shape: (usize, usize, usize),
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Ingest a class-per-subdirectory image tree.
pub fn ingest(
    root: &Path,
    name: &str,
    split_tag: SplitTag,
    manifest: &IngestManifest,
) -> Result<(LabeledDataset, IngestReport)> {
    if !root.is_dir() {
        return Err(Error::config(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut class_dirs: Vec<(String, PathBuf)> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    class_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if class_dirs.is_empty() {
        return Err(Error::config(format!(
            "dataset root {} has no class directories",
            root.display()
        )));
    }

    let class_names: BTreeMap<ClassId, String> = class_dirs
        .iter()
        .enumerate()
        .map(|(i, (n, _))| (i, n.clone()))
        .collect();

    let mut warnings = Vec::new();
    let mut files: Vec<(ClassId, String, PathBuf)> = Vec::new();
    for (class_id, (class_name, dir)) in class_dirs.iter().enumerate() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| {
                            IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_lowercase().as_str())
                        })
                        .unwrap_or(false)
            })
            .collect();
        entries.sort();
        if entries.is_empty() {
            warnings.push(format!("class directory {class_name} is empty"));
        }
        for p in entries {
            let rel = format!(
                "{}/{}",
                class_name,
                p.file_name().unwrap_or_default().to_string_lossy()
            );
            files.push((class_id, rel, p));
        }
    }

    // decode in parallel; order is preserved by indexed collect
    let decoded: Vec<std::result::Result<DataItem, (String, String)>> = files
        .par_iter()
        .map(|(class_id, rel, path)| {
            let bytes = std::fs::read(path).map_err(|e| (rel.clone(), e.to_string()))?;
            let digest = sha256_hex(&bytes);
            let mut image =
                imgproc::decode_image(&bytes).map_err(|e| (rel.clone(), e.to_string()))?;
            if let Some((h, w)) = manifest.resize_to {
                image = imgproc::resize_bilinear(&image.view(), h, w);
            }
            Ok(DataItem {
                image,
                label: *class_id,
                digest,
                rel_path: rel.clone(),
            })
        })
        .collect();

    let mut items = Vec::new();
    let mut item_errors = Vec::new();
    let mut shape: Option<(usize, usize, usize)> = None;
    let mut seen_digests: BTreeSet<String> = BTreeSet::new();
    for result in decoded {
        match result {
            Ok(item) => {
                let dim = item.image.dim();
                match shape {
                    None => shape = Some(dim),
                    Some(s) if s != dim => {
                        item_errors.push((
                            item.rel_path.clone(),
                            format!("shape {dim:?} differs from dataset shape {s:?}"),
                        ));
                        continue;
                    }
                    _ => {}
                }
                if !seen_digests.insert(item.digest.clone()) {
                    warnings.push(format!(
                        "{} duplicates another item's content (digest {})",
                        item.rel_path,
                        &item.digest[..12]
                    ));
                    continue;
                }
                items.push(item);
            }
            Err((rel, msg)) => item_errors.push((rel, msg)),
        }
    }

    if items.is_empty() {
        return Err(Error::config(format!(
            "dataset {} ingested zero readable images",
            root.display()
        )));
    }

    let dataset = LabeledDataset {
        name: name.to_string(),
        items,
        class_names,
        split_tag,
    };

    if let Some(out) = &manifest.manifest_out {
        write_manifest(&dataset, out)?;
    }

    Ok((dataset, IngestReport {
        item_errors,
        warnings,
    }))
}

/// Emit the manifest sidecar: one JSON row per item.
pub fn write_manifest(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let entries: Vec<ManifestEntry> = dataset
        .items
        .iter()
        .map(|it| ManifestEntry {
            rel_path: it.rel_path.clone(),
            digest: it.digest.clone(),
            class_id: it.label,
            shape: it.image.dim(),
        })
        .collect();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let json = serde_json::to_string_pretty(&entries)
        .map_err(|e| Error::stage(format!("manifest serialize: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Content-digest overlap between two datasets. Symmetric.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisjointnessReport {
    pub overlap: BTreeSet<String>,
    pub a_size: usize,
    pub b_size: usize,
}

impl DisjointnessReport {
    pub fn is_disjoint(&self) -> bool {
        self.overlap.is_empty()
    }
}

/// Report which content digests two datasets share.
pub fn verify_disjoint(a: &LabeledDataset, b: &LabeledDataset) -> DisjointnessReport {
    let da = a.digest_set();
    let db = b.digest_set();
    let overlap = da
        .intersection(&db)
        .map(|s| s.to_string())
        .collect::<BTreeSet<_>>();
    DisjointnessReport {
        overlap,
        a_size: a.items.len(),
        b_size: b.items.len(),
    }
}

/// NearMiss version-1 undersampling.
///
/// Every class is brought down to the minority-class count. For each
/// majority class, the retained samples are those with the smallest average
/// Euclidean distance to their `neighbors` nearest minority-class samples,
/// computed on images resized (bilinear) to `feature_size` and flattened.
/// Ties break by lowest ingest index, so results are deterministic.
pub fn nearmiss_undersample(
    dataset: &LabeledDataset,
    version: u32,
    neighbors: usize,
    feature_size: (usize, usize),
) -> Result<LabeledDataset> {
    if version != 1 {
        return Err(Error::Unsupported(format!(
            "NearMiss version {version} not implemented (only version 1)"
        )));
    }
    if neighbors == 0 {
        return Err(Error::config("neighbors must be >= 1"));
    }
    let counts = dataset.class_counts();
    if counts.len() < 2 {
        return Err(Error::config("NearMiss requires at least 2 classes"));
    }
    if counts.values().any(|&c| c == 0) {
        return Err(Error::config("NearMiss requires every class to be populated"));
    }
    let min_count = *counts.values().min().unwrap();
    // lowest class id among the min-count classes anchors the distance pool
    let minority_class = *counts
        .iter()
        .find(|(_, &c)| c == min_count)
        .map(|(k, _)| k)
        .unwrap();

    if neighbors > min_count {
        return Err(Error::config(format!(
            "neighbors ({neighbors}) exceeds minority class count ({min_count})"
        )));
    }

    // feature vectors in ingest order
    let features: Vec<Vec<f32>> = dataset
        .items
        .iter()
        .map(|it| {
            imgproc::resize_bilinear(&it.image.view(), feature_size.0, feature_size.1)
                .into_iter()
                .collect()
        })
        .collect();

    let minority_indices: Vec<usize> = dataset
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.label == minority_class)
        .map(|(i, _)| i)
        .collect();

    let mut keep: Vec<usize> = Vec::new();
    for (&class, &count) in &counts {
        let class_indices: Vec<usize> = dataset
            .items
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label == class)
            .map(|(i, _)| i)
            .collect();
        if count == min_count {
            keep.extend(class_indices);
            continue;
        }
        // score each candidate by mean distance to its k nearest minority samples
        let mut scored: Vec<(f64, usize)> = class_indices
            .iter()
            .map(|&idx| {
                let mut dists: Vec<f64> = minority_indices
                    .iter()
                    .map(|&mi| euclidean(&features[idx], &features[mi]))
                    .collect();
                dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let avg = dists[..neighbors].iter().sum::<f64>() / neighbors as f64;
                (avg, idx)
            })
            .collect();
        scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        keep.extend(scored[..min_count].iter().map(|&(_, idx)| idx));
    }
    keep.sort_unstable();

    let items = keep.into_iter().map(|i| dataset.items[i].clone()).collect();
    Ok(LabeledDataset {
        name: format!("{}-nearmiss1", dataset.name),
        items,
        class_names: dataset.class_names.clone(),
        split_tag: dataset.split_tag,
    })
}

fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// A dataset of (image, caption) pairs for caption-model workflows.
#[derive(Debug, Clone)]
pub struct CaptionedDataset {
    pub items: Vec<(Array3<f32>, String)>,
    pub class_names: BTreeMap<ClassId, String>,
}

/// Fill a one-placeholder template with a class name, fixing the preceding
/// "a"/"an" article for vowel-initial names.
pub fn fill_template(template: &str, class_name: &str) -> Result<String> {
    let placeholder_count = template.matches("{}").count();
    if placeholder_count != 1 {
        return Err(Error::config(format!(
            "template must contain exactly one {{}} placeholder, found {placeholder_count}"
        )));
    }
    let filled = template.replacen("{}", class_name, 1);
    Ok(normalize_article(&filled, class_name))
}

/// Adjust "a"/"an" immediately before `class_name` to match its leading
/// vowel.
fn normalize_article(text: &str, class_name: &str) -> String {
    let Some(pos) = text.find(class_name) else {
        return text.to_string();
    };
    let prefix = &text[..pos];
    let starts_with_vowel = class_name
        .chars()
        .next()
        .map(|c| "aeiouAEIOU".contains(c))
        .unwrap_or(false);
    let trimmed = prefix.trim_end();
    let Some(last_word_start) = trimmed.rfind(char::is_whitespace).map(|i| i + 1).or(Some(0))
    else {
        return text.to_string();
    };
    let last_word = &trimmed[last_word_start..];
    let replacement = match (last_word, starts_with_vowel) {
        ("a", true) => Some("an"),
        ("an", false) => Some("a"),
        ("A", true) => Some("An"),
        ("An", false) => Some("A"),
        _ => None,
    };
    match replacement {
        Some(article) => {
            let mut out = String::with_capacity(text.len() + 1);
            out.push_str(&trimmed[..last_word_start]);
            out.push_str(article);
            out.push_str(&text[trimmed.len()..]);
            out
        }
        None => text.to_string(),
    }
}

/// Build the template-caption dataset: one caption per image with the class
/// name substituted into the template.
pub fn build_caption_dataset(
    dataset: &LabeledDataset,
    template: &str,
) -> Result<CaptionedDataset> {
    // validate the template up front, even for empty datasets
    fill_template(template, "probe")?;
    let mut items = Vec::with_capacity(dataset.items.len());
    for it in &dataset.items {
        let class_name = dataset
            .class_names
            .get(&it.label)
            .ok_or_else(|| Error::input(format!("label {} missing from class names", it.label)))?;
        items.push((it.image.clone(), fill_template(template, class_name)?));
    }
    Ok(CaptionedDataset {
        items,
        class_names: dataset.class_names.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn write_png(path: &Path, w: u32, h: u32, rgb: [u8; 3]) {
        let img = image::RgbImage::from_pixel(w, h, image::Rgb(rgb));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        img.save(path).unwrap();
    }

    fn make_root(dir: &TempDir) -> PathBuf {
        let root = dir.path().join("data");
        write_png(&root.join("cat/1.png"), 8, 8, [200, 10, 10]);
        write_png(&root.join("dog/1.png"), 8, 8, [10, 200, 10]);
        root
    }

    #[test]
    fn ingest_assigns_sorted_class_ids() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        let (ds, report) = ingest(&root, "toy", SplitTag::Public, &Default::default()).unwrap();
        assert_eq!(ds.items.len(), 2);
        assert_eq!(ds.class_names[&0], "cat");
        assert_eq!(ds.class_names[&1], "dog");
        assert!(report.item_errors.is_empty());
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        let (a, _) = ingest(&root, "toy", SplitTag::Public, &Default::default()).unwrap();
        let (b, _) = ingest(&root, "toy", SplitTag::Public, &Default::default()).unwrap();
        assert_eq!(a.dataset_digest(), b.dataset_digest());
        assert_eq!(
            a.items.iter().map(|i| &i.rel_path).collect::<Vec<_>>(),
            b.items.iter().map(|i| &i.rel_path).collect::<Vec<_>>()
        );
    }

    #[test]
    fn ingest_collects_corrupt_files_as_item_errors() {
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("data");
        for i in 0..9 {
            write_png(&root.join(format!("a/{i}.png")), 4, 4, [i as u8 * 20, 0, 0]);
        }
        std::fs::write(root.join("a/corrupt.png"), b"\x89PNG\r\n\x1a\nnot really").unwrap();
        write_png(&root.join("b/0.png"), 4, 4, [0, 0, 255]);
        let (ds, report) = ingest(&root, "toy", SplitTag::Public, &Default::default()).unwrap();
        assert_eq!(ds.items.len(), 10);
        assert_eq!(report.item_errors.len(), 1);
        assert!(report.item_errors[0].0.contains("corrupt.png"));
    }

    #[test]
    fn ingest_warns_on_empty_class_dir() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        std::fs::create_dir_all(root.join("empty_class")).unwrap();
        let (_, report) = ingest(&root, "toy", SplitTag::Public, &Default::default()).unwrap();
        assert!(report.warnings.iter().any(|w| w.contains("empty_class")));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        let out = dir.path().join("manifest.json");
        let manifest = IngestManifest {
            resize_to: None,
            manifest_out: Some(out.clone()),
        };
        let (ds, _) = ingest(&root, "toy", SplitTag::Public, &manifest).unwrap();
        let rows: Vec<ManifestEntry> =
            serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        assert_eq!(rows.len(), ds.items.len());
        assert_eq!(rows[0].digest, ds.items[0].digest);
    }

    #[test]
    fn disjoint_identity_and_empty() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        let (a, _) = ingest(&root, "a", SplitTag::TargetTrain, &Default::default()).unwrap();
        let same = verify_disjoint(&a, &a);
        assert_eq!(same.overlap.len(), a.items.len());

        let dir2 = TempDir::new().unwrap();
        let root2 = dir2.path().join("data");
        write_png(&root2.join("cat/1.png"), 8, 8, [1, 2, 3]);
        write_png(&root2.join("dog/1.png"), 8, 8, [4, 5, 6]);
        let (b, _) = ingest(&root2, "b", SplitTag::Public, &Default::default()).unwrap();
        assert!(verify_disjoint(&a, &b).is_disjoint());
    }

    #[test]
    fn disjoint_detects_single_shared_file() {
        let dir = TempDir::new().unwrap();
        let root = make_root(&dir);
        let dir2 = TempDir::new().unwrap();
        let root2 = dir2.path().join("data");
        // same bytes as cat/1.png in root -> same digest
        write_png(&root2.join("cat/слон.png"), 8, 8, [200, 10, 10]);
        write_png(&root2.join("dog/other.png"), 8, 8, [9, 9, 9]);
        let (a, _) = ingest(&root, "a", SplitTag::TargetTrain, &Default::default()).unwrap();
        let (b, _) = ingest(&root2, "b", SplitTag::Public, &Default::default()).unwrap();
        let report = verify_disjoint(&a, &b);
        assert_eq!(report.overlap.len(), 1);
        // symmetric
        let rev = verify_disjoint(&b, &a);
        assert_eq!(report.overlap, rev.overlap);
    }

    /// 1x1 grayscale dataset whose pixel values stand in for 1-D features.
    fn toy_1d(minority: &[f32], majority: &[f32]) -> LabeledDataset {
        let mut items = Vec::new();
        // interleave so ingest indices match spec examples (minority first)
        for (i, &v) in minority.iter().enumerate() {
            items.push(DataItem {
                image: Array3::from_elem((1, 1, 1), v),
                label: 0,
                digest: format!("min-{i}"),
                rel_path: format!("min/{i}"),
            });
        }
        for (i, &v) in majority.iter().enumerate() {
            items.push(DataItem {
                image: Array3::from_elem((1, 1, 1), v),
                label: 1,
                digest: format!("maj-{i}"),
                rel_path: format!("maj/{i}"),
            });
        }
        LabeledDataset {
            name: "toy1d".into(),
            items,
            class_names: [(0, "min".to_string()), (1, "maj".to_string())]
                .into_iter()
                .collect(),
            split_tag: SplitTag::TargetTrain,
        }
    }

    #[test]
    fn nearmiss_balanced_is_noop() {
        let ds = toy_1d(&[0.0, 1.0], &[2.0, 3.0]);
        let out = nearmiss_undersample(&ds, 1, 1, (1, 1)).unwrap();
        assert_eq!(out.items.len(), 4);
        let digests: Vec<_> = out.items.iter().map(|i| &i.digest).collect();
        let orig: Vec<_> = ds.items.iter().map(|i| &i.digest).collect();
        assert_eq!(digests, orig);
    }

    #[test]
    fn nearmiss_spec_toy_case() {
        // minority {0, 10}, majority {2, 7, 20}, k=1:
        // distances to nearest minority: 2, 3, 10 -> keep {2, 7}
        let ds = toy_1d(&[0.0, 10.0], &[2.0, 7.0, 20.0]);
        let out = nearmiss_undersample(&ds, 1, 1, (1, 1)).unwrap();
        let kept: Vec<f32> = out
            .items
            .iter()
            .filter(|i| i.label == 1)
            .map(|i| i.image[[0, 0, 0]])
            .collect();
        assert_eq!(kept, vec![2.0, 7.0]);
    }

    #[test]
    fn nearmiss_tie_breaks_by_ingest_index() {
        // minority {0, 10}, majority {1, 2, 7, 20}, k=2:
        // scores: 1 -> (1+9)/2=5, 2 -> (2+8)/2=5, 7 -> (7+3)/2=5, 20 -> 15
        // three-way tie at 5.0 -> keep the two earliest: {1, 2}
        let ds = toy_1d(&[0.0, 10.0], &[1.0, 2.0, 7.0, 20.0]);
        let out = nearmiss_undersample(&ds, 1, 2, (1, 1)).unwrap();
        let kept: Vec<f32> = out
            .items
            .iter()
            .filter(|i| i.label == 1)
            .map(|i| i.image[[0, 0, 0]])
            .collect();
        assert_eq!(kept, vec![1.0, 2.0]);
    }

    #[test]
    fn nearmiss_config_errors() {
        let ds = toy_1d(&[0.0, 10.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            nearmiss_undersample(&ds, 2, 1, (1, 1)),
            Err(Error::Unsupported(_))
        ));
        assert!(nearmiss_undersample(&ds, 1, 3, (1, 1)).is_err()); // k > minority count
    }

    #[test]
    fn nearmiss_balances_all_class_counts() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut items = Vec::new();
        for (class, count) in [(0usize, 4usize), (1, 9), (2, 7)] {
            for i in 0..count {
                items.push(DataItem {
                    image: Array3::from_shape_fn((2, 2, 1), |_| rng.gen_range(0.0..1.0)),
                    label: class,
                    digest: format!("{class}-{i}"),
                    rel_path: format!("{class}/{i}"),
                });
            }
        }
        let ds = LabeledDataset {
            name: "multi".into(),
            items,
            class_names: [(0, "a".into()), (1, "b".into()), (2, "c".into())]
                .into_iter()
                .collect(),
            split_tag: SplitTag::TargetTrain,
        };
        let out = nearmiss_undersample(&ds, 1, 2, (2, 2)).unwrap();
        let counts = out.class_counts();
        assert!(counts.values().all(|&c| c == 4), "{counts:?}");
    }

    #[test]
    fn template_fills_and_normalizes_articles() {
        assert_eq!(
            fill_template("a photo of a {}", "tank").unwrap(),
            "a photo of a tank"
        );
        assert_eq!(
            fill_template("a photo of a {}", "air defense").unwrap(),
            "a photo of an air defense"
        );
        assert_eq!(
            fill_template("a photo of an {}", "tank").unwrap(),
            "a photo of a tank"
        );
        assert_eq!(fill_template("{} in a field", "tank").unwrap(), "tank in a field");
    }

    #[test]
    fn template_rejects_malformed() {
        assert!(fill_template("no placeholder", "x").is_err());
        assert!(fill_template("two {} and {}", "x").is_err());
    }

    #[test]
    fn caption_dataset_builds_per_item() {
        let ds = toy_1d(&[0.1], &[0.9]);
        let cd = build_caption_dataset(&ds, "a photo of a {}").unwrap();
        assert_eq!(cd.items.len(), 2);
        assert_eq!(cd.items[0].1, "a photo of a min");
        assert_eq!(cd.items[1].1, "a photo of a maj");
    }

    #[test]
    fn caption_dataset_empty_input() {
        let ds = LabeledDataset {
            name: "empty".into(),
            items: vec![],
            class_names: [(0, "cat".to_string())].into_iter().collect(),
            split_tag: SplitTag::Public,
        };
        let cd = build_caption_dataset(&ds, "a photo of a {}").unwrap();
        assert!(cd.items.is_empty());
    }
}
