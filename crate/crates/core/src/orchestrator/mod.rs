//! The run engine: executes stages A-G in order with persistence and
//! resumability, repeats trials, and emits the risk report.
//!
//! Every stage writes its artifacts into the run directory and records a
//! completion marker with an artifact digest in the state journal. Stage
//! functions skip completed work (verifying the recorded digests), so a
//! killed run resumes from its last marker and reproduces the uninterrupted
//! result byte-for-byte.

pub mod config;
pub mod report;
pub mod state;

pub use config::{validate_config, ConfigFile, ExperimentConfig};
pub use report::{emit_report, ReportFormat};
pub use state::RunState;

use crate::attacks::{
    generate_reconstructions, load_reconstructions, persist_reconstructions, AttackSpec,
    RealismCalibration, ReconstructionSet,
};
use crate::data::{ingest, nearmiss_undersample, verify_disjoint, LabeledDataset, SplitTag};
use crate::digest::{derive_seed, sha256_hex};
use crate::error::{Error, Result};
use crate::generative::{
    load_checkpoint, save_checkpoint, train_prior, DiscriminatorHandle, GeneratorHandle,
};
use crate::metrics::{compute_all, MetricInputs, MetricsBundle};
use crate::modelzoo::{
    fine_tune, load_model, save_model, train_classifier, train_evaluation, ModelHandle,
};
use crate::riskcore::{
    aggregate_trials, bin_risk, wcal, AccuracyRecord, ClassId, DimensionScore, ReportMetadata,
    ReportTiming, RiskDimension, RiskReport,
};
use crate::vlm::stub::{ClassPalette, PaletteCaptionStub, PaletteSimilarityStub, StubTextZeroShot};
use crate::vlm::{
    caption, derive_candidate_labels, CandidateLabelSet, CaptionBackend, CaptionRecord, ImageRef,
    ImageTextSimilarityBackend, TextZeroShotBackend,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

/// How far to drive the pipeline; each point implies everything before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum StagePoint {
    Target,
    Gan,
    Attack,
    Caption,
    Evaluate,
    Report,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub run_dir: Option<PathBuf>,
    pub resume: bool,
    pub force_stub_backends: bool,
    pub seed_override: Option<u64>,
    pub workers: Option<usize>,
}

/// The ingested splits, post NearMiss where configured.
pub struct Datasets {
    pub target_train: LabeledDataset,
    pub target_test: LabeledDataset,
    pub public: LabeledDataset,
    pub evaluation_train: LabeledDataset,
}

struct Backends {
    caption: Box<dyn CaptionBackend>,
    text: Box<dyn TextZeroShotBackend>,
    similarity: Box<dyn ImageTextSimilarityBackend>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaptionsFile {
    backend_identity: String,
    records: Vec<CaptionRecord>,
    item_errors: Vec<(ImageRef, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrialMetricsFile {
    scores: BTreeMap<RiskDimension, DimensionScore>,
    wcal: f64,
    label_unreachable_classes: Vec<ClassId>,
    inversion_failed_classes: Vec<ClassId>,
    accepted_counts: BTreeMap<ClassId, usize>,
    requested_per_class: usize,
}

pub struct Engine {
    config: ExperimentConfig,
    config_dir: PathBuf,
    run_dir: PathBuf,
    state: RunState,
}

/// Validate options, prepare the run directory, and execute to `point`.
pub fn run_pipeline_to(
    mut config: ExperimentConfig,
    config_dir: &Path,
    options: &RunOptions,
    point: StagePoint,
) -> Result<Option<RiskReport>> {
    if let Some(seed) = options.seed_override {
        config.master_seed = seed;
    }
    if options.force_stub_backends {
        config.backends = config::BackendSection::Stub;
    }
    if let Some(workers) = options.workers.or(config.workers) {
        // the global pool can only be built once per process; later calls
        // keep the first size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }

    let run_dir = match &options.run_dir {
        Some(dir) => dir.clone(),
        None => config::resolve_path(config_dir, &config.output_root).join(config.run_id()),
    };

    let state = if RunState::exists(&run_dir) {
        if !options.resume {
            return Err(Error::config(format!(
                "run directory {} already has state; use `resume` to continue it",
                run_dir.display()
            )));
        }
        let state = RunState::load(&run_dir)?;
        if state.config_digest != config.config_digest() {
            return Err(Error::config(
                "run state belongs to a different config; refusing to resume",
            ));
        }
        state
    } else {
        std::fs::create_dir_all(&run_dir)?;
        let state = RunState::new(&config.run_id(), &config.config_digest());
        state.save(&run_dir)?;
        std::fs::write(
            run_dir.join("config.json"),
            serde_json::to_string_pretty(&config).expect("config serializes"),
        )?;
        state
    };

    let mut engine = Engine {
        config,
        config_dir: config_dir.to_path_buf(),
        run_dir,
        state,
    };
    engine.execute_until(point)
}

/// Convenience wrapper: full pipeline, returning the report.
pub fn run_pipeline(
    config: ExperimentConfig,
    config_dir: &Path,
    options: &RunOptions,
) -> Result<RiskReport> {
    let report = run_pipeline_to(config, config_dir, options, StagePoint::Report)?;
    Ok(report.expect("report point yields a report"))
}

/// Run every cell of a sweep and write a cross-cell summary table.
pub fn run_sweep(
    cells: Vec<ExperimentConfig>,
    config_dir: &Path,
    options: &RunOptions,
) -> Result<Vec<RiskReport>> {
    if options.run_dir.is_some() && cells.len() > 1 {
        return Err(Error::config(
            "--run-dir cannot be combined with a sweep config; each cell owns a run directory",
        ));
    }
    let mut reports = Vec::new();
    for cell in &cells {
        let report = run_pipeline(cell.clone(), config_dir, options)?;
        reports.push(report);
    }
    if cells.len() > 1 {
        let root = config::resolve_path(config_dir, &cells[0].output_root);
        let mut table = String::from("# Sweep summary\n\n");
        table.push_str("| cell | quality | feature | label | stealing | wcal | ci95 | bin |\n");
        table.push_str("|---|---|---|---|---|---|---|---|\n");
        for (cell, report) in cells.iter().zip(&reports) {
            let mean = |d: RiskDimension| {
                report
                    .dimension_trial_means
                    .get(&d)
                    .map(|a| format!("{:.4}", a.mean))
                    .unwrap_or_default()
            };
            table.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {} |\n",
                cell.name,
                mean(RiskDimension::Quality),
                mean(RiskDimension::Feature),
                mean(RiskDimension::Label),
                mean(RiskDimension::Stealing),
                report.wcal.mean,
                report.wcal.ci95_half_width,
                report.bin.level.name()
            ));
        }
        std::fs::write(root.join("sweep_summary.md"), table)?;
    }
    Ok(reports)
}

impl Engine {
    fn seed_for(&self, label: &str) -> u64 {
        derive_seed(self.config.master_seed, label)
    }

    fn trial_label(&self, trial: usize) -> String {
        format!("trial-{trial:03}")
    }

    /// Stage suffix for shared-vs-per-trial model stages.
    fn shared_suffix(&self, trial: usize) -> String {
        if self.config.retrain_models_per_trial {
            format!("-{}", self.trial_label(trial))
        } else {
            String::new()
        }
    }

    pub fn execute_until(&mut self, point: StagePoint) -> Result<Option<RiskReport>> {
        let data = self.ensure_ingest()?;
        if point == StagePoint::Target && !self.config.retrain_models_per_trial {
            self.ensure_target(&data, 0)?;
            return Ok(None);
        }
        if point == StagePoint::Gan && !self.config.retrain_models_per_trial {
            self.ensure_target(&data, 0)?;
            self.ensure_gan(&data, 0)?;
            self.ensure_calibration(&data, 0)?;
            return Ok(None);
        }

        let trials = self.config.n_trials;
        let mut trial_metrics: Vec<TrialMetricsFile> = Vec::with_capacity(trials);
        for trial in 0..trials {
            let target = self.ensure_target(&data, trial)?;
            let (generator, discriminator) = self.ensure_gan(&data, trial)?;
            let calibration = self.ensure_calibration(&data, trial)?;
            let recon = self.ensure_reconstructions(&data, &target, &generator, &discriminator, &calibration, trial)?;
            if point == StagePoint::Attack {
                continue;
            }
            let captions = self.ensure_captions(&data, &recon, trial)?;
            let candidates = self.ensure_candidates(&data, &captions, trial)?;
            if point == StagePoint::Caption {
                continue;
            }
            let evaluation = self.ensure_evaluation(&data, &target, trial)?;
            let proxy = self.ensure_proxy(&data, &evaluation, &recon, trial)?;
            let metrics =
                self.ensure_metrics(&data, &target, &evaluation, &proxy, &recon, &captions, &candidates, trial)?;
            trial_metrics.push(metrics);
        }
        if point < StagePoint::Report {
            return Ok(None);
        }
        let report = self.build_report(&data, trial_metrics)?;
        Ok(Some(report))
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        config::resolve_path(&self.config_dir, path)
    }

    fn mark_stage(&mut self, stage: &str, files: &[PathBuf], elapsed: f64) -> Result<()> {
        let digest = state::digest_files(&self.run_dir, files)?;
        self.state.mark(&self.run_dir, stage, digest, elapsed)
    }

    fn stage_done(&self, stage: &str, files: &[PathBuf]) -> Result<bool> {
        if self.state.is_complete(stage) {
            self.state.verify(&self.run_dir, stage, files)?;
            return Ok(true);
        }
        Ok(false)
    }

    fn ensure_ingest(&mut self) -> Result<Datasets> {
        let started = std::time::Instant::now();
        let manifest_dir = self.run_dir.join("manifests");
        std::fs::create_dir_all(&manifest_dir)?;
        let load = |field: &str, path: &Path, tag: SplitTag| -> Result<LabeledDataset> {
            let mut options = self.config.ingest_manifest();
            options.manifest_out = Some(manifest_dir.join(format!("{field}.json")));
            let (dataset, report) = ingest(&self.resolve(path), field, tag, &options)?;
            for (path, err) in &report.item_errors {
                log::warn!("{field}: item error at {path}: {err}");
            }
            for warning in &report.warnings {
                log::warn!("{field}: {warning}");
            }
            Ok(dataset)
        };
        let mut target_train = load(
            "target_train",
            &self.config.datasets.target_train.clone(),
            SplitTag::TargetTrain,
        )?;
        let target_test = load(
            "target_test",
            &self.config.datasets.target_test.clone(),
            SplitTag::TargetTest,
        )?;
        let public = load("public", &self.config.datasets.public.clone(), SplitTag::Public)?;

        // independence requirement: public data must not contain target
        // training items
        let overlap = verify_disjoint(&target_train, &public);
        if !overlap.is_disjoint() {
            return Err(Error::config(format!(
                "public dataset shares {} item(s) with target_train; the splits must be disjoint",
                overlap.overlap.len()
            )));
        }

        if let Some(nm) = &self.config.datasets.nearmiss {
            target_train = nearmiss_undersample(&target_train, nm.version, nm.neighbors, nm.feature_size)?;
            crate::data::write_manifest(&target_train, &manifest_dir.join("target_train.json"))?;
        }

        let evaluation_train = match &self.config.datasets.evaluation_train {
            Some(path) => load("evaluation_train", &path.clone(), SplitTag::Public)?,
            // default: the target's test split stands in as adversary data
            None => {
                let mut ds = target_test.clone();
                ds.name = "evaluation_train".into();
                crate::data::write_manifest(&ds, &manifest_dir.join("evaluation_train.json"))?;
                ds
            }
        };

        let files: Vec<PathBuf> = ["target_train", "target_test", "public", "evaluation_train"]
            .iter()
            .map(|f| PathBuf::from(format!("manifests/{f}.json")))
            .collect();
        let stage = "ingest";
        if self.state.is_complete(stage) {
            // inputs must not have drifted under a resumed run
            self.state.verify(&self.run_dir, stage, &files)?;
        } else {
            self.mark_stage(stage, &files, started.elapsed().as_secs_f64())?;
        }
        Ok(Datasets {
            target_train,
            target_test,
            public,
            evaluation_train,
        })
    }

    fn ensure_target(&mut self, data: &Datasets, trial: usize) -> Result<ModelHandle> {
        let suffix = self.shared_suffix(trial);
        let stage = format!("target{suffix}");
        let dir = PathBuf::from(format!("models/target{suffix}"));
        let files = vec![dir.join("params.bin"), dir.join("meta.json")];
        if self.stage_done(&stage, &files)? {
            return load_model(&self.run_dir.join(&dir));
        }
        let started = std::time::Instant::now();
        let mut train_config = self.config.target.train.clone();
        train_config.seed = self.seed_for(&stage);
        let mut model = train_classifier(
            &data.target_train,
            Some(&data.target_test),
            &self.config.target.arch,
            &train_config,
        )?;
        save_model(&self.run_dir.join(&dir), &mut model)?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        log::info!(
            "target trained: train_acc {:.3}, test_acc {:?}",
            model.train_accuracy,
            model.test_accuracy
        );
        Ok(model)
    }

    fn ensure_gan(
        &mut self,
        data: &Datasets,
        trial: usize,
    ) -> Result<(GeneratorHandle, DiscriminatorHandle)> {
        let suffix = self.shared_suffix(trial);
        let stage = format!("gan{suffix}");
        let dir = PathBuf::from(format!("gan{suffix}"));
        let files = vec![
            dir.join("generator.bin"),
            dir.join("discriminator.bin"),
            dir.join("meta.json"),
        ];
        if self.stage_done(&stage, &files)? {
            return load_checkpoint(&self.run_dir.join(&dir));
        }
        let started = std::time::Instant::now();
        let (mut generator, mut discriminator, log_data, train_config) =
            match (&self.config.gan.train, &self.config.gan.checkpoint) {
                (Some(config), None) => {
                    let mut config = config.clone();
                    config.seed = self.seed_for(&stage);
                    let (g, d, log_data) = train_prior(&data.public, &config)?;
                    (g, d, log_data, config)
                }
                (None, Some(path)) => {
                    let (g, d) = load_checkpoint(&self.resolve(path))?;
                    (g, d, Default::default(), Default::default())
                }
                _ => unreachable!("config validation enforces exactly one"),
            };
        save_checkpoint(
            &self.run_dir.join(&dir),
            &mut generator,
            &mut discriminator,
            &train_config,
            &log_data,
        )?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok((generator, discriminator))
    }

    fn ensure_calibration(&mut self, data: &Datasets, trial: usize) -> Result<RealismCalibration> {
        let suffix = self.shared_suffix(trial);
        let stage = format!("calibration{suffix}");
        let file = PathBuf::from(format!("gan{suffix}/calibration.json"));
        let files = vec![file.clone()];
        if self.stage_done(&stage, &files)? {
            let text = std::fs::read_to_string(self.run_dir.join(&file))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::stage(format!("calibration file invalid: {e}")));
        }
        let started = std::time::Instant::now();
        let (_, discriminator) = load_checkpoint(&self.run_dir.join(format!("gan{suffix}")))?;
        let calibration = RealismCalibration::fit(&discriminator, &data.public, 256)?;
        std::fs::write(
            self.run_dir.join(&file),
            serde_json::to_string_pretty(&calibration).expect("serializable"),
        )?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(calibration)
    }

    fn ensure_evaluation(
        &mut self,
        data: &Datasets,
        target: &ModelHandle,
        trial: usize,
    ) -> Result<ModelHandle> {
        let suffix = self.shared_suffix(trial);
        let stage = format!("evaluation{suffix}");
        let dir = PathBuf::from(format!("models/evaluation{suffix}"));
        let files = vec![dir.join("params.bin"), dir.join("meta.json")];
        if self.stage_done(&stage, &files)? {
            return load_model(&self.run_dir.join(&dir));
        }
        let started = std::time::Instant::now();
        let mut train_config = self.config.evaluation.train.clone();
        train_config.seed = self.seed_for(&stage);
        let mut model = train_evaluation(
            target,
            &data.evaluation_train,
            Some(&data.target_test),
            &data.target_train,
            &self.config.evaluation.arch,
            &train_config,
        )?;
        save_model(&self.run_dir.join(&dir), &mut model)?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(model)
    }

    fn ensure_reconstructions(
        &mut self,
        data: &Datasets,
        target: &ModelHandle,
        generator: &GeneratorHandle,
        discriminator: &DiscriminatorHandle,
        calibration: &RealismCalibration,
        trial: usize,
    ) -> Result<ReconstructionSet> {
        let label = self.trial_label(trial);
        let stage = format!("{label}/reconstructions");
        let dir = PathBuf::from(format!("reconstructions/{label}"));
        let files = vec![dir.join("index.json")];
        if self.stage_done(&stage, &files)? {
            return load_reconstructions(&self.run_dir.join(&dir));
        }
        let started = std::time::Instant::now();
        let attack_seed = self.seed_for(&format!("{label}/attack"));
        let spec = self.config.attack.with_seed(attack_seed);
        let class_set: Vec<ClassId> = target.class_ids();
        let set = generate_reconstructions(
            target,
            generator,
            Some(discriminator),
            Some(calibration),
            &spec,
            self.config.n_per_class,
            &class_set,
        )?;
        persist_reconstructions(&set, &data.target_train.class_names, &self.run_dir.join(&dir))?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        let failed = set.inversion_failed_classes(&class_set);
        if !failed.is_empty() {
            log::warn!("{label}: inversion-failed classes {failed:?}");
        }
        Ok(set)
    }

    fn build_backends(&self, data: &Datasets) -> Result<Backends> {
        match &self.config.backends {
            config::BackendSection::Stub => {
                let palette = ClassPalette::from_dataset(&data.target_train)?;
                Ok(Backends {
                    caption: Box::new(PaletteCaptionStub::new(palette.clone())),
                    text: Box::new(StubTextZeroShot::new()),
                    similarity: Box::new(PaletteSimilarityStub::new(palette)),
                })
            }
            config::BackendSection::Http {
                caption_url,
                text_url,
                similarity_url,
            } => {
                let caption = crate::vlm::http::HttpBackend::connect(caption_url)?;
                let text = crate::vlm::http::HttpBackend::connect(text_url)?;
                let similarity = crate::vlm::http::HttpBackend::connect(similarity_url)?;
                Ok(Backends {
                    caption: Box::new(caption),
                    text: Box::new(text),
                    similarity: Box::new(similarity),
                })
            }
        }
    }

    fn ensure_captions(
        &mut self,
        data: &Datasets,
        recon: &ReconstructionSet,
        trial: usize,
    ) -> Result<CaptionsFile> {
        let label = self.trial_label(trial);
        let stage = format!("{label}/captions");
        let file = PathBuf::from(format!("captions/{label}.captions.json"));
        let files = vec![file.clone()];
        if self.stage_done(&stage, &files)? {
            let text = std::fs::read_to_string(self.run_dir.join(&file))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::stage(format!("captions file invalid: {e}")));
        }
        let started = std::time::Instant::now();
        let backends = self.build_backends(data)?;
        let prompt = self.config.caption_prompt.as_deref();
        if prompt.is_some() && !backends.caption.supports_prompting() {
            return Err(Error::config(
                "caption_prompt set but the caption backend does not support prompting",
            ));
        }

        let mut work: Vec<(ImageRef, &ndarray::Array3<f32>)> = Vec::new();
        for (class_id, group) in recon.accepted_by_class() {
            for (index, item) in group.iter().enumerate() {
                work.push((
                    ImageRef { class_id, index },
                    item.image.as_ref().expect("accepted items carry pixels"),
                ));
            }
        }

        let serial = backends.caption.identity().max_concurrency == Some(1);
        let backend = backends.caption.as_ref();
        let results: Vec<(ImageRef, Result<CaptionRecord>)> = if serial {
            work.iter()
                .map(|(r, img)| (*r, caption(backend, img, *r, prompt)))
                .collect()
        } else {
            work.par_iter()
                .map(|(r, img)| (*r, caption(backend, img, *r, prompt)))
                .collect()
        };

        let mut records = Vec::new();
        let mut item_errors = Vec::new();
        for (image_ref, result) in results {
            match result {
                Ok(record) => records.push(record),
                Err(Error::Config(msg)) => return Err(Error::Config(msg)),
                Err(e) => item_errors.push((image_ref, e.to_string())),
            }
        }
        let out = CaptionsFile {
            backend_identity: backends.caption.identity().display(),
            records,
            item_errors,
        };
        std::fs::create_dir_all(self.run_dir.join("captions"))?;
        std::fs::write(
            self.run_dir.join(&file),
            serde_json::to_string_pretty(&out).expect("serializable"),
        )?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(out)
    }

    fn ensure_candidates(
        &mut self,
        data: &Datasets,
        captions: &CaptionsFile,
        trial: usize,
    ) -> Result<CandidateLabelSet> {
        let label = self.trial_label(trial);
        let stage = format!("{label}/candidates");
        let file = PathBuf::from(format!("captions/{label}.candidates.json"));
        let files = vec![file.clone()];
        if self.stage_done(&stage, &files)? {
            let text = std::fs::read_to_string(self.run_dir.join(&file))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::stage(format!("candidates file invalid: {e}")));
        }
        let started = std::time::Instant::now();
        let backends = self.build_backends(data)?;
        let class_names: Vec<String> = data.target_train.class_names.values().cloned().collect();
        let vocabulary = self.config.effective_vocabulary(&class_names);
        let set = if captions.records.is_empty() {
            CandidateLabelSet {
                labels: vec![],
                support: BTreeMap::new(),
                backend_identity: backends.text.identity().display(),
                vocabulary_digest: sha256_hex(vocabulary.join("\n").as_bytes()),
                empty_flagged: true,
            }
        } else {
            derive_candidate_labels(
                backends.text.as_ref(),
                &captions.records,
                &vocabulary,
                self.config.per_caption_top_k,
                self.config.support_threshold,
            )?
        };
        std::fs::write(
            self.run_dir.join(&file),
            serde_json::to_string_pretty(&set).expect("serializable"),
        )?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(set)
    }

    fn ensure_proxy(
        &mut self,
        data: &Datasets,
        evaluation: &ModelHandle,
        recon: &ReconstructionSet,
        trial: usize,
    ) -> Result<ModelHandle> {
        let label = self.trial_label(trial);
        let stage = format!("{label}/proxy");
        let dir = PathBuf::from(format!("models/proxy-{label}"));
        let files = vec![dir.join("params.bin"), dir.join("meta.json")];
        if self.stage_done(&stage, &files)? {
            return load_model(&self.run_dir.join(&dir));
        }
        let started = std::time::Instant::now();
        let recon_data = reconstruction_dataset(recon, &data.target_train.class_names);
        if recon_data.items.is_empty() {
            return Err(Error::stage(format!(
                "{label}: no accepted reconstructions in any class; cannot fine-tune the proxy"
            )));
        }
        let mut train_config = self.config.proxy.train.clone();
        train_config.seed = self.seed_for(&stage);
        let mut proxy = fine_tune(evaluation, &recon_data, Some(&data.target_test), &train_config)?;
        save_model(&self.run_dir.join(&dir), &mut proxy)?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(proxy)
    }

    #[allow(clippy::too_many_arguments)]
    fn ensure_metrics(
        &mut self,
        data: &Datasets,
        _target: &ModelHandle,
        evaluation: &ModelHandle,
        proxy: &ModelHandle,
        recon: &ReconstructionSet,
        captions: &CaptionsFile,
        candidates: &CandidateLabelSet,
        trial: usize,
    ) -> Result<TrialMetricsFile> {
        let label = self.trial_label(trial);
        let stage = format!("{label}/metrics");
        let file = PathBuf::from(format!("metrics/{label}.json"));
        let files = vec![file.clone()];
        if self.stage_done(&stage, &files)? {
            let text = std::fs::read_to_string(self.run_dir.join(&file))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::stage(format!("metrics file invalid: {e}")));
        }
        let started = std::time::Instant::now();
        let backends = self.build_backends(data)?;
        let class_names: Vec<String> = data.target_train.class_names.values().cloned().collect();
        let vocabulary = self.config.effective_vocabulary(&class_names);
        let inputs = MetricInputs {
            reconstruction_set: recon,
            caption_records: &captions.records,
            candidate_labels: candidates,
            evaluation_model: evaluation,
            proxy_model: proxy,
            target_train_set: &data.target_train,
            class_names: &data.target_train.class_names,
            vocabulary: &vocabulary,
        };
        let bundle: MetricsBundle = compute_all(
            &inputs,
            backends.text.as_ref(),
            backends.similarity.as_ref(),
            &self.config.label_loss,
            &self.config.caption_template,
            self.config.group_scoring,
            self.config.synonyms.as_ref(),
        )?;
        let overall: BTreeMap<RiskDimension, f64> = bundle
            .scores
            .iter()
            .map(|(&d, s)| (d, s.overall))
            .collect();
        let trial_wcal = wcal(&self.config.weights, &overall)?;
        let out = TrialMetricsFile {
            scores: bundle.scores,
            wcal: trial_wcal,
            label_unreachable_classes: bundle.label_unreachable_classes,
            inversion_failed_classes: bundle.inversion_failed_classes,
            accepted_counts: recon.accepted_counts(),
            requested_per_class: recon.requested_per_class,
        };
        std::fs::create_dir_all(self.run_dir.join("metrics"))?;
        std::fs::write(
            self.run_dir.join(&file),
            serde_json::to_string_pretty(&out).expect("serializable"),
        )?;
        self.mark_stage(&stage, &files, started.elapsed().as_secs_f64())?;
        Ok(out)
    }

    fn build_report(
        &mut self,
        data: &Datasets,
        trial_metrics: Vec<TrialMetricsFile>,
    ) -> Result<RiskReport> {
        let trials = self.config.n_trials;
        assert_eq!(trial_metrics.len(), trials, "metrics for every trial");

        let per_trial_wcal: Vec<f64> = trial_metrics.iter().map(|m| m.wcal).collect();
        let wcal_agg = aggregate_trials(&per_trial_wcal)?;

        let mut dimension_trial_means = BTreeMap::new();
        let mut dimension_scores = Vec::new();
        for dimension in RiskDimension::ALL {
            let values: Vec<f64> = trial_metrics
                .iter()
                .map(|m| m.scores[&dimension].overall)
                .collect();
            dimension_trial_means.insert(dimension, aggregate_trials(&values)?);

            // pool per-class counts across trials for the class breakdown
            let mut counts: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
            for m in &trial_metrics {
                let score = &m.scores[&dimension];
                for (&class, &fraction) in &score.per_class {
                    let n = score.sample_counts[&class];
                    let correct = (fraction * n as f64).round() as usize;
                    let entry = counts.entry(class).or_insert((0, 0));
                    entry.0 += correct;
                    entry.1 += n;
                }
            }
            let record = AccuracyRecord::from_counts(&counts)?;
            dimension_scores.push(DimensionScore::from_record(dimension, record));
        }

        let bin = bin_risk(wcal_agg.mean)?;

        // provenance closure: digest -> relative path for principal artifacts
        let mut artifacts = BTreeMap::new();
        let mut register = |rel: PathBuf| -> Result<()> {
            let bytes = std::fs::read(self.run_dir.join(&rel))?;
            artifacts.insert(sha256_hex(&bytes), rel.to_string_lossy().into_owned());
            Ok(())
        };
        register(PathBuf::from("config.json"))?;
        if !self.config.retrain_models_per_trial {
            register(PathBuf::from("models/target/params.bin"))?;
            register(PathBuf::from("models/evaluation/params.bin"))?;
            register(PathBuf::from("gan/generator.bin"))?;
            register(PathBuf::from("gan/discriminator.bin"))?;
            register(PathBuf::from("gan/calibration.json"))?;
        }
        for trial in 0..trials {
            let label = self.trial_label(trial);
            register(PathBuf::from(format!("reconstructions/{label}/index.json")))?;
            register(PathBuf::from(format!("captions/{label}.captions.json")))?;
            register(PathBuf::from(format!("captions/{label}.candidates.json")))?;
            register(PathBuf::from(format!("models/proxy-{label}/params.bin")))?;
            register(PathBuf::from(format!("metrics/{label}.json")))?;
        }

        let mut shortfalls: BTreeMap<ClassId, (usize, usize)> = BTreeMap::new();
        for m in &trial_metrics {
            for &class in data.target_train.class_names.keys() {
                let accepted = m.accepted_counts.get(&class).copied().unwrap_or(0);
                let entry = shortfalls.entry(class).or_insert((0, 0));
                entry.0 += accepted;
                entry.1 += m.requested_per_class;
            }
        }
        shortfalls.retain(|_, (accepted, requested)| accepted < requested);

        let label_unreachable: BTreeSet<ClassId> = trial_metrics
            .iter()
            .flat_map(|m| m.label_unreachable_classes.iter().copied())
            .collect();

        let backends = self.build_backends(data)?;
        let mut backend_identities = BTreeMap::new();
        backend_identities.insert("caption".to_string(), backends.caption.identity().display());
        backend_identities.insert("text_zero_shot".to_string(), backends.text.identity().display());
        backend_identities.insert(
            "image_similarity".to_string(),
            backends.similarity.identity().display(),
        );

        let target = self.ensure_target(data, 0)?;
        let target_descriptor = format!(
            "{} (train_acc {:.4}, test_acc {})",
            target.arch.descriptor_string(),
            target.train_accuracy,
            target
                .test_accuracy
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".into()),
        );
        let attack_descriptor = match &self.config.attack {
            AttackSpec::Fv(c) => format!(
                "fv(steps={}, step_size={}, l2={}, jitter={}, n_per_class={})",
                c.steps, c.step_size, c.latent_l2_weight, c.jitter_pixels, self.config.n_per_class
            ),
            AttackSpec::Gmi(c) => format!(
                "gmi(iterations={}, threshold={}, lambda={}, restarts={}, n_per_class={})",
                c.iterations,
                c.score_threshold,
                c.prior_weight,
                c.restarts_per_image,
                self.config.n_per_class
            ),
        };

        let mut notes = vec![
            format!(
                "risk bins use a closed medium interval: low < {:.2} <= medium <= {:.2} < high",
                crate::riskcore::BIN_LOW_UPPER,
                crate::riskcore::BIN_HIGH_LOWER
            ),
            "all dimension values are accuracies; higher = more private-data leakage".to_string(),
        ];
        if self.config.datasets.evaluation_train.is_none() {
            notes.push("evaluation model trained on the target's test split (default)".to_string());
        }

        let metadata = ReportMetadata {
            master_seed: self.config.master_seed,
            trial_seeds: (0..trials)
                .map(|t| self.seed_for(&self.trial_label(t)))
                .collect(),
            backend_identities,
            artifacts,
            reconstruction_shortfalls: shortfalls,
            label_unreachable_classes: label_unreachable.into_iter().collect(),
            notes,
            class_names: data.target_train.class_names.clone(),
        };

        let mut stage_wall_clock = BTreeMap::new();
        let mut earliest = None;
        for (stage, record) in &self.state.completed {
            stage_wall_clock.insert(stage.clone(), record.wall_clock_seconds);
            if earliest.is_none() {
                earliest = Some(record.completed_at.clone());
            }
        }
        let timing = ReportTiming {
            started_at: earliest.unwrap_or_default(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            stage_wall_clock_seconds: stage_wall_clock,
        };

        let report = RiskReport {
            target_descriptor,
            attack_descriptor,
            dimension_scores,
            dimension_trial_means,
            weights: self.config.weights.clone(),
            wcal: wcal_agg,
            bin,
            per_trial_wcal,
            metadata,
            timing,
        };
        report.validate()?;

        let written = emit_report(&report, &self.run_dir, &ReportFormat::ALL.into_iter().collect())?;
        let files: Vec<PathBuf> = written.iter().map(PathBuf::from).collect();
        let stage = "report";
        if self.state.is_complete(stage) {
            self.state.verify(&self.run_dir, stage, &files)?;
        } else {
            self.mark_stage(stage, &files, 0.0)?;
        }
        Ok(report)
    }
}

/// Accepted reconstructions as a labeled dataset (proxy fine-tuning input).
pub fn reconstruction_dataset(
    recon: &ReconstructionSet,
    class_names: &BTreeMap<ClassId, String>,
) -> LabeledDataset {
    let mut items = Vec::new();
    for (class_id, group) in recon.accepted_by_class() {
        for (index, item) in group.iter().enumerate() {
            let image = item.image.clone().expect("accepted items carry pixels");
            let pixel_digest =
                crate::digest::sha256_f32_hex(image.as_slice().expect("contiguous"));
            items.push(crate::data::DataItem {
                image,
                label: class_id,
                digest: format!("{pixel_digest}:{class_id}:{index}"),
                rel_path: format!("reconstructions/{class_id}/{index}"),
            });
        }
    }
    LabeledDataset {
        name: "reconstructions".into(),
        items,
        class_names: class_names.clone(),
        split_tag: SplitTag::Reconstructed,
    }
}
