//! Risk-score arithmetic: per-class accuracy bookkeeping, the weighted
//! composite (WCAL), low/medium/high binning, and trial aggregation with
//! 95% confidence intervals.
//!
//! Everything here is pure and stateless; any number of workers may call
//! these functions concurrently.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

pub type ClassId = usize;

/// The four risk dimensions. Every report carries all four.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskDimension {
    Quality,
    Feature,
    Label,
    Stealing,
}

impl RiskDimension {
    pub const ALL: [RiskDimension; 4] = [
        RiskDimension::Quality,
        RiskDimension::Feature,
        RiskDimension::Label,
        RiskDimension::Stealing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RiskDimension::Quality => "quality",
            RiskDimension::Feature => "feature",
            RiskDimension::Label => "label",
            RiskDimension::Stealing => "stealing",
        }
    }
}

/// Per-dimension weights of the composite score. Must cover all four
/// dimensions and sum to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<RiskDimension, f64>", into = "BTreeMap<RiskDimension, f64>")]
pub struct RiskWeights {
    weights: BTreeMap<RiskDimension, f64>,
}

impl RiskWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: BTreeMap<RiskDimension, f64>) -> Result<Self> {
        for dim in RiskDimension::ALL {
            let w = weights
                .get(&dim)
                .ok_or_else(|| Error::config(format!("missing weight for dimension {}", dim.name())))?;
            if !(0.0..=1.0).contains(w) {
                return Err(Error::config(format!(
                    "weight for {} must be in [0,1], got {w}",
                    dim.name()
                )));
            }
        }
        let sum: f64 = RiskDimension::ALL.iter().map(|d| weights[d]).sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::config(format!(
                "weights must sum to 1 within {:e}, got {sum}",
                Self::SUM_TOLERANCE
            )));
        }
        Ok(Self { weights })
    }

    /// Equal weights, 0.25 per dimension.
    pub fn equal() -> Self {
        let weights = RiskDimension::ALL.iter().map(|&d| (d, 0.25)).collect();
        Self { weights }
    }

    pub fn get(&self, dim: RiskDimension) -> f64 {
        self.weights[&dim]
    }

    pub fn is_equal_weights(&self) -> bool {
        RiskDimension::ALL.iter().all(|d| self.weights[d] == 0.25)
    }
}

impl TryFrom<BTreeMap<RiskDimension, f64>> for RiskWeights {
    type Error = Error;
    fn try_from(m: BTreeMap<RiskDimension, f64>) -> Result<Self> {
        RiskWeights::new(m)
    }
}

impl From<RiskWeights> for BTreeMap<RiskDimension, f64> {
    fn from(w: RiskWeights) -> Self {
        w.weights
    }
}

/// Per-class accuracy with sample counts; `overall` is the
/// sample-count-weighted mean of the per-class values.
///
/// Classes with zero samples are omitted rather than scored 0; the shortfall
/// is surfaced separately in report metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub overall: f64,
    pub per_class: BTreeMap<ClassId, f64>,
    pub sample_counts: BTreeMap<ClassId, usize>,
}

impl AccuracyRecord {
    /// Build from (correct, total) counts per class. Zero-sample classes are
    /// dropped; `overall` is total correct over total samples.
    pub fn from_counts(counts: &BTreeMap<ClassId, (usize, usize)>) -> Result<Self> {
        let mut per_class = BTreeMap::new();
        let mut sample_counts = BTreeMap::new();
        let mut correct_sum = 0usize;
        let mut total_sum = 0usize;
        for (&class, &(correct, total)) in counts {
            if total == 0 {
                continue;
            }
            per_class.insert(class, correct as f64 / total as f64);
            sample_counts.insert(class, total);
            correct_sum += correct;
            total_sum += total;
        }
        if total_sum == 0 {
            return Err(Error::input("accuracy over zero samples"));
        }
        Ok(Self {
            overall: correct_sum as f64 / total_sum as f64,
            per_class,
            sample_counts,
        })
    }
}

/// One risk dimension's score: an accuracy record tagged with its dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionScore {
    pub dimension: RiskDimension,
    pub overall: f64,
    pub per_class: BTreeMap<ClassId, f64>,
    pub sample_counts: BTreeMap<ClassId, usize>,
}

impl DimensionScore {
    pub fn from_record(dimension: RiskDimension, record: AccuracyRecord) -> Self {
        Self {
            dimension,
            overall: record.overall,
            per_class: record.per_class,
            sample_counts: record.sample_counts,
        }
    }
}

/// Shared accuracy kernel for all four metrics.
///
/// `per_class[c]` is the fraction of samples with ground truth `c` predicted
/// as `c`; classes that never appear in the ground truth are omitted.
pub fn per_class_accuracy(
    predictions: &[ClassId],
    ground_truth: &[ClassId],
    class_set: &[ClassId],
) -> Result<AccuracyRecord> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::input(format!(
            "predictions ({}) and ground truth ({}) differ in length",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::input("empty prediction list"));
    }
    let mut counts: BTreeMap<ClassId, (usize, usize)> =
        class_set.iter().map(|&c| (c, (0, 0))).collect();
    for (&pred, &truth) in predictions.iter().zip(ground_truth) {
        let entry = counts
            .get_mut(&truth)
            .ok_or_else(|| Error::input(format!("ground-truth label {truth} not in class set")))?;
        entry.1 += 1;
        if pred == truth {
            entry.0 += 1;
        }
    }
    AccuracyRecord::from_counts(&counts)
}

/// Eq.-style composite: the weighted sum of the four dimension scores.
///
/// With equal weights this equals the arithmetic mean of the scores exactly
/// (multiplication by 0.25 is exact in IEEE arithmetic).
pub fn wcal(weights: &RiskWeights, scores: &BTreeMap<RiskDimension, f64>) -> Result<f64> {
    let mut acc = 0.0f64;
    for dim in RiskDimension::ALL {
        let r = scores
            .get(&dim)
            .ok_or_else(|| Error::input(format!("missing score for dimension {}", dim.name())))?;
        if !(0.0..=1.0).contains(r) {
            return Err(Error::input(format!(
                "score for {} must be in [0,1], got {r}",
                dim.name()
            )));
        }
        acc += weights.get(dim) * r;
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// Risk level with the thresholds that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub fn name(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

/// Low/medium/high bin. The medium interval is closed on both ends:
/// low < 0.55 <= medium <= 0.65 < high.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBin {
    pub level: RiskLevel,
    pub low_upper: f64,
    pub high_lower: f64,
}

pub const BIN_LOW_UPPER: f64 = 0.55;
pub const BIN_HIGH_LOWER: f64 = 0.65;

/// Bin a composite score into low/medium/high.
pub fn bin_risk(wcal_value: f64) -> Result<RiskBin> {
    if !(0.0..=1.0).contains(&wcal_value) || wcal_value.is_nan() {
        return Err(Error::input(format!(
            "composite score must be in [0,1], got {wcal_value}"
        )));
    }
    let level = if wcal_value < BIN_LOW_UPPER {
        RiskLevel::Low
    } else if wcal_value <= BIN_HIGH_LOWER {
        RiskLevel::Medium
    } else {
        RiskLevel::High
    };
    Ok(RiskBin {
        level,
        low_upper: BIN_LOW_UPPER,
        high_lower: BIN_HIGH_LOWER,
    })
}

/// Mean and Student-t 95% confidence half-width over repeated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialAggregate {
    pub mean: f64,
    /// t(0.975, n-1) * s / sqrt(n); 0 for a single trial or zero variance.
    pub ci95_half_width: f64,
    pub n_trials: usize,
    pub values: Vec<f64>,
    /// Set when n = 1, where no interval can be formed.
    pub degenerate_ci: bool,
}

impl TrialAggregate {
    /// CI bounds clamped to the reportable [0,1] range.
    pub fn clamped_interval(&self) -> (f64, f64) {
        (
            (self.mean - self.ci95_half_width).max(0.0),
            (self.mean + self.ci95_half_width).min(1.0),
        )
    }
}

/// Aggregate per-trial values into mean plus a 95% t-interval.
pub fn aggregate_trials(values: &[f64]) -> Result<TrialAggregate> {
    if values.is_empty() {
        return Err(Error::input("aggregate_trials requires at least one value"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(TrialAggregate {
            mean,
            ci95_half_width: 0.0,
            n_trials: 1,
            values: values.to_vec(),
            degenerate_ci: true,
        });
    }
    let all_equal = values.iter().all(|v| *v == values[0]);
    let half_width = if all_equal {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let s = var.sqrt();
        if s == 0.0 {
            0.0
        } else {
            t_quantile_0975(n - 1) * s / (n as f64).sqrt()
        }
    };
    Ok(TrialAggregate {
        mean,
        ci95_half_width: half_width,
        n_trials: n,
        values: values.to_vec(),
        degenerate_ci: false,
    })
}

/// Two-sided 95% Student-t critical value, i.e. the 0.975 quantile with the
/// given degrees of freedom. Computed by bisecting the CDF to machine
/// precision rather than trusting a library inverse.
pub fn t_quantile_0975(dof: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let dist = StudentsT::new(0.0, 1.0, dof as f64).expect("valid t distribution");
    let target = 0.975;
    let mut lo = 0.0f64;
    let mut hi = 1000.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Provenance and bookkeeping carried by a report. Everything here is
/// deterministic for a fixed config + master seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub master_seed: u64,
    pub trial_seeds: Vec<u64>,
    /// Backend name -> identity string (name + model digest).
    pub backend_identities: BTreeMap<String, String>,
    /// Artifact digest -> path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    /// Classes where the attack accepted fewer images than requested,
    /// keyed by class id: (accepted, requested) summed over trials.
    pub reconstruction_shortfalls: BTreeMap<ClassId, (usize, usize)>,
    /// Classes flagged label-unreachable (absent from candidate labels)
    /// in at least one trial.
    pub label_unreachable_classes: Vec<ClassId>,
    pub notes: Vec<String>,
    pub class_names: BTreeMap<ClassId, String>,
}

/// Wall-clock observations. Excluded from the canonical report payload so
/// reruns with identical seeds compare byte-identical.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTiming {
    pub started_at: String,
    pub finished_at: String,
    /// Stage name -> seconds.
    pub stage_wall_clock_seconds: BTreeMap<String, f64>,
}

/// The final artifact: four dimension scores, the composite with trial CI,
/// the risk bin, and provenance. `dimension_scores` pools samples across
/// trials for the per-class breakdown; `dimension_trial_means` aggregates
/// the per-trial overall values and is what the composite mean is checked
/// against. All scores read as "higher = more private-data leakage".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub target_descriptor: String,
    pub attack_descriptor: String,
    pub dimension_scores: Vec<DimensionScore>,
    pub dimension_trial_means: BTreeMap<RiskDimension, TrialAggregate>,
    pub weights: RiskWeights,
    pub wcal: TrialAggregate,
    pub bin: RiskBin,
    pub per_trial_wcal: Vec<f64>,
    pub metadata: ReportMetadata,
    pub timing: ReportTiming,
}

impl RiskReport {
    /// Consistency tolerance for the composite-vs-dimension identity.
    pub const WCAL_TOLERANCE: f64 = 1e-9;

    /// Check internal invariants: the composite mean equals the weighted sum
    /// of the trial-mean dimension scores, and the bin matches the mean.
    pub fn validate(&self) -> Result<()> {
        if self.dimension_scores.len() != 4 {
            return Err(Error::input(format!(
                "report must carry 4 dimension scores, has {}",
                self.dimension_scores.len()
            )));
        }
        let means: BTreeMap<RiskDimension, f64> = self
            .dimension_trial_means
            .iter()
            .map(|(&d, agg)| (d, agg.mean))
            .collect();
        let expect = wcal(&self.weights, &means)?;
        if (expect - self.wcal.mean).abs() > Self::WCAL_TOLERANCE {
            return Err(Error::input(format!(
                "composite mean {} inconsistent with dimension means (expected {expect})",
                self.wcal.mean
            )));
        }
        let bin = bin_risk(self.wcal.mean)?;
        if bin.level != self.bin.level {
            return Err(Error::input(format!(
                "bin {} inconsistent with composite mean {}",
                self.bin.level.name(),
                self.wcal.mean
            )));
        }
        Ok(())
    }

    /// JSON value with volatile timing removed; two seeded reruns must agree
    /// on this payload byte-for-byte.
    pub fn canonical_payload(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("timing");
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weights(q: f64, f: f64, l: f64, s: f64) -> RiskWeights {
        let m: BTreeMap<_, _> = [
            (RiskDimension::Quality, q),
            (RiskDimension::Feature, f),
            (RiskDimension::Label, l),
            (RiskDimension::Stealing, s),
        ]
        .into_iter()
        .collect();
        RiskWeights::new(m).unwrap()
    }

    fn scores(q: f64, f: f64, l: f64, s: f64) -> BTreeMap<RiskDimension, f64> {
        [
            (RiskDimension::Quality, q),
            (RiskDimension::Feature, f),
            (RiskDimension::Label, l),
            (RiskDimension::Stealing, s),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn per_class_accuracy_counts() {
        // preds [a,a,b], truth [a,b,b] -> per_class {a:1.0, b:0.5}, overall 2/3
        let rec = per_class_accuracy(&[0, 0, 1], &[0, 1, 1], &[0, 1]).unwrap();
        assert_eq!(rec.per_class[&0], 1.0);
        assert_eq!(rec.per_class[&1], 0.5);
        assert!((rec.overall - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rec.sample_counts[&0], 1);
        assert_eq!(rec.sample_counts[&1], 2);
    }

    #[test]
    fn per_class_accuracy_identity() {
        let truth = vec![2, 0, 1, 1, 2, 0];
        let rec = per_class_accuracy(&truth, &truth, &[0, 1, 2]).unwrap();
        assert_eq!(rec.overall, 1.0);
    }

    #[test]
    fn per_class_accuracy_random_chance_level() {
        // 200 random predictions over 10 balanced classes, fixed seed:
        // binomial(200, 0.1) stays within [0.04, 0.16] at the 99.9% level.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let classes: Vec<ClassId> = (0..10).collect();
        let truth: Vec<ClassId> = (0..200).map(|i| i % 10).collect();
        let preds: Vec<ClassId> = (0..200).map(|_| rng.gen_range(0..10)).collect();
        let rec = per_class_accuracy(&preds, &truth, &classes).unwrap();
        // brute-force count as the independent oracle
        let correct = preds.iter().zip(&truth).filter(|(p, t)| p == t).count();
        assert_eq!(rec.overall, correct as f64 / 200.0);
        assert!(rec.overall >= 0.04 && rec.overall <= 0.16, "{}", rec.overall);
    }

    #[test]
    fn per_class_accuracy_zero_sample_class_omitted() {
        let rec = per_class_accuracy(&[0, 0], &[0, 0], &[0, 1]).unwrap();
        assert!(!rec.per_class.contains_key(&1));
        assert_eq!(rec.overall, 1.0);
    }

    #[test]
    fn per_class_accuracy_errors() {
        assert!(per_class_accuracy(&[0], &[0, 1], &[0, 1]).is_err());
        assert!(per_class_accuracy(&[], &[], &[0]).is_err());
        assert!(per_class_accuracy(&[0], &[7], &[0, 1]).is_err());
    }

    #[test]
    fn wcal_equal_weights() {
        let w = RiskWeights::equal();
        let v = wcal(&w, &scores(0.75, 0.90, 0.61, 0.50)).unwrap();
        assert!((v - 0.69).abs() < 1e-12, "{v}");
    }

    #[test]
    fn wcal_degenerate_weight_vector() {
        let w = weights(1.0, 0.0, 0.0, 0.0);
        let v = wcal(&w, &scores(0.42, 0.9, 0.1, 0.3)).unwrap();
        assert_eq!(v, 0.42);
    }

    #[test]
    fn wcal_equal_scores() {
        let w = RiskWeights::equal();
        let v = wcal(&w, &scores(0.6072, 0.6072, 0.6072, 0.6072)).unwrap();
        assert!((v - 0.6072).abs() < 1e-12);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let m: BTreeMap<_, _> = RiskDimension::ALL.iter().map(|&d| (d, 0.2)).collect();
        assert!(RiskWeights::new(m).is_err());
    }

    #[test]
    fn bin_paper_placements() {
        assert_eq!(bin_risk(0.6072).unwrap().level, RiskLevel::Medium);
        assert_eq!(bin_risk(0.690).unwrap().level, RiskLevel::High);
        assert_eq!(bin_risk(0.5588).unwrap().level, RiskLevel::Medium);
    }

    #[test]
    fn bin_boundaries_closed_medium() {
        assert_eq!(bin_risk(0.55 - 1e-12).unwrap().level, RiskLevel::Low);
        assert_eq!(bin_risk(0.55).unwrap().level, RiskLevel::Medium);
        assert_eq!(bin_risk(0.65).unwrap().level, RiskLevel::Medium);
        assert_eq!(bin_risk(0.65 + 1e-12).unwrap().level, RiskLevel::High);
    }

    #[test]
    fn bin_rejects_out_of_range() {
        assert!(bin_risk(-0.1).is_err());
        assert!(bin_risk(1.1).is_err());
        assert!(bin_risk(f64::NAN).is_err());
    }

    #[test]
    fn aggregate_zero_variance() {
        let agg = aggregate_trials(&[0.6, 0.6, 0.6]).unwrap();
        assert_eq!(agg.mean, 0.6);
        assert_eq!(agg.ci95_half_width, 0.0);
        assert!(!agg.degenerate_ci);
    }

    #[test]
    fn aggregate_two_extremes() {
        // t(0.975,1)=12.706..., s=1/sqrt(2), hw = 12.706*0.70711/sqrt(2)
        let agg = aggregate_trials(&[0.0, 1.0]).unwrap();
        assert_eq!(agg.mean, 0.5);
        assert!((agg.ci95_half_width - 6.353).abs() < 2e-3, "{}", agg.ci95_half_width);
        assert_eq!(agg.clamped_interval(), (0.0, 1.0));
    }

    #[test]
    fn aggregate_single_value() {
        let agg = aggregate_trials(&[0.7]).unwrap();
        assert_eq!(agg.mean, 0.7);
        assert_eq!(agg.ci95_half_width, 0.0);
        assert!(agg.degenerate_ci);
    }

    #[test]
    fn aggregate_empty_is_input_error() {
        assert!(aggregate_trials(&[]).is_err());
    }

    proptest! {
        #[test]
        fn wcal_is_linear(
            w in (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0),
            r1 in proptest::array::uniform4(0.0f64..=1.0),
            r2 in proptest::array::uniform4(0.0f64..=1.0),
            a in 0.0f64..=1.0,
        ) {
            // normalize three free weights plus the remainder
            let total = 1.0 + w.0 + w.1 + w.2;
            let wt = weights(1.0/total, w.0/total, w.1/total, w.2/total);
            let mix: Vec<f64> = r1.iter().zip(r2.iter()).map(|(x, y)| a*x + (1.0-a)*y).collect();
            let lhs = wcal(&wt, &scores(mix[0], mix[1], mix[2], mix[3])).unwrap();
            let rhs = a * wcal(&wt, &scores(r1[0], r1[1], r1[2], r1[3])).unwrap()
                + (1.0 - a) * wcal(&wt, &scores(r2[0], r2[1], r2[2], r2[3])).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn wcal_equal_weights_is_arithmetic_mean(r in proptest::array::uniform4(0.0f64..=1.0)) {
            let v = wcal(&RiskWeights::equal(), &scores(r[0], r[1], r[2], r[3])).unwrap();
            let mean = (((r[0] + r[1]) + r[2]) + r[3]) / 4.0;
            prop_assert_eq!(v, mean);
        }

        #[test]
        fn bin_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let la = bin_risk(lo).unwrap().level;
            let lb = bin_risk(hi).unwrap().level;
            prop_assert!(la <= lb);
        }

        #[test]
        fn aggregate_mean_is_permutation_invariant_and_bounded(
            mut values in proptest::collection::vec(0.0f64..=1.0, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = aggregate_trials(&values).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            values.shuffle(&mut rng);
            let b = aggregate_trials(&values).unwrap();
            prop_assert!((a.mean - b.mean).abs() < 1e-12);
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(a.mean >= min - 1e-12 && a.mean <= max + 1e-12);
        }

        #[test]
        fn per_class_overall_bounded_by_extremes(
            labels in proptest::collection::vec(0usize..4, 1..60),
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let preds: Vec<usize> = labels.iter().map(|_| rng.gen_range(0..4)).collect();
            let rec = per_class_accuracy(&preds, &labels, &[0, 1, 2, 3]).unwrap();
            let min = rec.per_class.values().cloned().fold(f64::INFINITY, f64::min);
            let max = rec.per_class.values().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(rec.overall >= min - 1e-12 && rec.overall <= max + 1e-12);
        }
    }
}
