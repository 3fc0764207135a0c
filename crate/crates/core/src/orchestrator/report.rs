//! Report emission: canonical JSON, per-class CSV, and the human-readable
//! summary with the risk bin and per-trial metric trends.

use crate::error::{Error, Result};
use crate::riskcore::{RiskDimension, RiskReport};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Json,
    Csv,
    Summary,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::Json,
        ReportFormat::Csv,
        ReportFormat::Summary,
    ];
}

/// Write the requested report artifacts into the run directory. Returns the
/// relative paths written.
pub fn emit_report(
    report: &RiskReport,
    run_dir: &Path,
    formats: &BTreeSet<ReportFormat>,
) -> Result<Vec<String>> {
    report.validate()?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::stage(format!("report serialization failed: {e}")))?;
        std::fs::write(run_dir.join("report.json"), json + "\n")?;
        written.push("report.json".to_string());
    }
    if formats.contains(&ReportFormat::Csv) {
        write_csv(report, &run_dir.join("report.csv"))?;
        written.push("report.csv".to_string());
    }
    if formats.contains(&ReportFormat::Summary) {
        std::fs::write(run_dir.join("summary.md"), render_summary(report))?;
        written.push("summary.md".to_string());
    }
    Ok(written)
}

/// One row per (class, dimension): |classes| x 4 rows.
fn write_csv(report: &RiskReport, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::stage(format!("cannot write {}: {e}", path.display())))?;
    writer
        .write_record(["dimension", "class_id", "class_name", "score", "samples", "status"])
        .map_err(|e| Error::stage(format!("csv write failed: {e}")))?;
    for dimension in RiskDimension::ALL {
        let score = report
            .dimension_scores
            .iter()
            .find(|s| s.dimension == dimension)
            .ok_or_else(|| Error::input(format!("report missing {}", dimension.name())))?;
        for (class_id, class_name) in &report.metadata.class_names {
            let row = match score.per_class.get(class_id) {
                Some(value) => [
                    dimension.name().to_string(),
                    class_id.to_string(),
                    class_name.clone(),
                    format!("{value:.6}"),
                    score.sample_counts[class_id].to_string(),
                    "included".to_string(),
                ],
                None => [
                    dimension.name().to_string(),
                    class_id.to_string(),
                    class_name.clone(),
                    String::new(),
                    "0".to_string(),
                    "excluded".to_string(),
                ],
            };
            writer
                .write_record(&row)
                .map_err(|e| Error::stage(format!("csv write failed: {e}")))?;
        }
    }
    writer
        .flush()
        .map_err(|e| Error::stage(format!("csv flush failed: {e}")))?;
    Ok(())
}

fn render_summary(report: &RiskReport) -> String {
    let mut out = String::new();
    let wcal = &report.wcal;
    let (lo, hi) = wcal.clamped_interval();
    out.push_str("# Inversion Risk Report\n\n");
    out.push_str(&format!("- target: {}\n", report.target_descriptor));
    out.push_str(&format!("- attack: {}\n", report.attack_descriptor));
    out.push_str(&format!("- trials: {}\n", wcal.n_trials));
    out.push_str(&format!("- master seed: {}\n\n", report.metadata.master_seed));

    out.push_str(&format!(
        "## Composite\n\nWCAL: {:.4} (95% CI [{:.4}, {:.4}])\n\n**risk level: {}**\n\n",
        wcal.mean,
        lo,
        hi,
        report.bin.level.name().to_uppercase()
    ));
    out.push_str(&format!(
        "Bins: low < {:.2} <= medium <= {:.2} < high (closed medium interval).\n\n",
        report.bin.low_upper, report.bin.high_lower
    ));

    out.push_str("## Risk dimensions (mean over trials, 95% CI)\n\n");
    out.push_str("| dimension | mean | ci95 half-width | weight |\n");
    out.push_str("|---|---|---|---|\n");
    for dimension in RiskDimension::ALL {
        if let Some(agg) = report.dimension_trial_means.get(&dimension) {
            out.push_str(&format!(
                "| {} | {:.4} | {:.4} | {:.2} |\n",
                dimension.name(),
                agg.mean,
                agg.ci95_half_width,
                report.weights.get(dimension)
            ));
        }
    }
    out.push_str("\nAll values are accuracies; higher = more private-data leakage.\n\n");

    out.push_str("## Metric trend per trial\n\n");
    out.push_str("| trial | quality | feature | label | stealing | wcal |\n");
    out.push_str("|---|---|---|---|---|---|\n");
    let n = report.per_trial_wcal.len();
    for t in 0..n {
        let cell = |d: RiskDimension| -> String {
            report
                .dimension_trial_means
                .get(&d)
                .and_then(|agg| agg.values.get(t))
                .map(|v| format!("{v:.4}"))
                .unwrap_or_default()
        };
        out.push_str(&format!(
            "| {t} | {} | {} | {} | {} | {:.4} |\n",
            cell(RiskDimension::Quality),
            cell(RiskDimension::Feature),
            cell(RiskDimension::Label),
            cell(RiskDimension::Stealing),
            report.per_trial_wcal[t]
        ));
    }
    out.push('\n');

    if !report.metadata.reconstruction_shortfalls.is_empty() {
        out.push_str("## Reconstruction shortfalls\n\n");
        out.push_str("| class | accepted | requested |\n|---|---|---|\n");
        for (class, (accepted, requested)) in &report.metadata.reconstruction_shortfalls {
            let name = report
                .metadata
                .class_names
                .get(class)
                .cloned()
                .unwrap_or_else(|| class.to_string());
            out.push_str(&format!("| {name} | {accepted} | {requested} |\n"));
        }
        out.push('\n');
    }
    if !report.metadata.label_unreachable_classes.is_empty() {
        let names: Vec<String> = report
            .metadata
            .label_unreachable_classes
            .iter()
            .map(|c| {
                report
                    .metadata
                    .class_names
                    .get(c)
                    .cloned()
                    .unwrap_or_else(|| c.to_string())
            })
            .collect();
        out.push_str(&format!(
            "Label-unreachable classes (absent from candidate labels): {}.\n\n",
            names.join(", ")
        ));
    }

    if !report.metadata.backend_identities.is_empty() {
        out.push_str("## Backends\n\n");
        for (role, identity) in &report.metadata.backend_identities {
            out.push_str(&format!("- {role}: {identity}\n"));
        }
        out.push('\n');
    }

    if !report.metadata.notes.is_empty() {
        out.push_str("## Notes\n\n");
        for note in &report.metadata.notes {
            out.push_str(&format!("- {note}\n"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riskcore::{
        aggregate_trials, bin_risk, AccuracyRecord, DimensionScore, ReportMetadata, ReportTiming,
        RiskWeights, TrialAggregate,
    };
    use std::collections::BTreeMap;

    fn toy_report() -> RiskReport {
        let mut counts = BTreeMap::new();
        counts.insert(0usize, (3usize, 4usize));
        counts.insert(1usize, (1usize, 2usize));
        let record = AccuracyRecord::from_counts(&counts).unwrap();
        let scores: Vec<DimensionScore> = RiskDimension::ALL
            .iter()
            .map(|&d| DimensionScore::from_record(d, record.clone()))
            .collect();
        let per_trial = vec![record.overall, record.overall];
        let wcal = aggregate_trials(&per_trial).unwrap();
        let trial_means: BTreeMap<RiskDimension, TrialAggregate> = RiskDimension::ALL
            .iter()
            .map(|&d| (d, aggregate_trials(&per_trial).unwrap()))
            .collect();
        let mut metadata = ReportMetadata {
            master_seed: 1,
            trial_seeds: vec![10, 11],
            ..Default::default()
        };
        metadata.class_names =
            [(0, "cat".to_string()), (1, "dog".to_string())].into_iter().collect();
        RiskReport {
            target_descriptor: "plain_cnn:w4:d1".into(),
            attack_descriptor: "fv".into(),
            dimension_scores: scores,
            dimension_trial_means: trial_means,
            weights: RiskWeights::equal(),
            wcal: wcal.clone(),
            bin: bin_risk(wcal.mean).unwrap(),
            per_trial_wcal: per_trial,
            metadata,
            timing: ReportTiming::default(),
        }
    }

    #[test]
    fn csv_row_count_is_classes_times_dimensions() {
        let report = toy_report();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path(), &ReportFormat::ALL.into_iter().collect()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let rows = text.lines().count();
        assert_eq!(rows, 1 + 2 * 4, "header + classes x dimensions");
    }

    #[test]
    fn json_round_trips() {
        let report = toy_report();
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path(), &ReportFormat::ALL.into_iter().collect()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
        let parsed: RiskReport = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn summary_names_the_risk_level() {
        // toy report mean is 4/6 ~ 0.667, above the high threshold
        let report = toy_report();
        let summary = render_summary(&report);
        assert!(summary.contains("risk level: HIGH"), "{summary}");
        assert!(summary.contains("| trial |"));
    }

    #[test]
    fn medium_value_renders_medium() {
        let mut report = toy_report();
        // 0.6072 placement
        let values = vec![0.6072, 0.6072];
        report.per_trial_wcal = values.clone();
        report.wcal = aggregate_trials(&values).unwrap();
        for agg in report.dimension_trial_means.values_mut() {
            *agg = aggregate_trials(&values).unwrap();
        }
        report.bin = bin_risk(0.6072).unwrap();
        let mut counts = BTreeMap::new();
        // per-class detail consistent enough for rendering
        counts.insert(0usize, (6072usize, 10000usize));
        let record = AccuracyRecord::from_counts(&counts).unwrap();
        report.dimension_scores = RiskDimension::ALL
            .iter()
            .map(|&d| DimensionScore::from_record(d, record.clone()))
            .collect();
        let summary = render_summary(&report);
        assert!(summary.contains("risk level: MEDIUM"));
        assert!(summary.contains("0.6072"));
    }
}
