//! Evaluation harness: dataset loading with strict validation,
//! multiple-choice accuracy with per-category/per-split aggregation,
//! a documented stand-in relative-accuracy metric for numeric answers,
//! random baselines (analytic and Monte-Carlo), and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nnkit::rng::stage_rng;
use crate::scenegen::{Category, Split, VQASample};
use crate::{P4dError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct EvalDataset {
    pub samples: Vec<VQASample>,
    pub schema_version: u32,
    pub source: String,
    /// True when the file held no records.
    pub empty_warning: bool,
}

/// Load and validate a VQA JSONL file. Any invalid record is a hard failure
/// naming its line; duplicates by (video_id, question) are rejected.
pub fn load_dataset(path: &Path) -> Result<EvalDataset> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let sample: VQASample = serde_json::from_str(&line).map_err(|e| P4dError::InvalidRecord {
            line: lineno,
            msg: e.to_string(),
        })?;
        sample.validate(None).map_err(|e| P4dError::InvalidRecord {
            line: lineno,
            msg: e.to_string(),
        })?;
        let key = (sample.video_id.clone(), sample.question.clone());
        if !seen.insert(key) {
            return Err(P4dError::InvalidRecord {
                line: lineno,
                msg: format!(
                    "duplicate sample for video {} question `{}`",
                    sample.video_id, sample.question
                ),
            });
        }
        samples.push(sample);
    }
    let empty_warning = samples.is_empty();
    Ok(EvalDataset {
        samples,
        schema_version: SCHEMA_VERSION,
        source: path.display().to_string(),
        empty_warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Bucket {
    pub correct: usize,
    pub total: usize,
}

impl Bucket {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Bucket,
    pub static_split: Bucket,
    pub dynamic_split: Bucket,
    /// Keyed by category name, in the fixed category order when rendered.
    pub per_category: BTreeMap<String, Bucket>,
    pub random_overall: f64,
    pub random_static: f64,
    pub random_dynamic: f64,
    pub model_hash: String,
    pub seed: u64,
    pub scoring_rule: String,
}

impl EvalReport {
    /// Recompute-check: overall must be the count-weighted mean of the
    /// per-category buckets.
    pub fn verify(&self, tol: f64) -> Result<()> {
        let total: usize = self.per_category.values().map(|b| b.total).sum();
        let correct: usize = self.per_category.values().map(|b| b.correct).sum();
        if total != self.overall.total || correct != self.overall.correct {
            return Err(P4dError::InvalidArgument(
                "per-category counts do not sum to the overall bucket".into(),
            ));
        }
        let weighted = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        if (weighted - self.overall.accuracy()).abs() > tol {
            return Err(P4dError::InvalidArgument("weighted mean mismatch".into()));
        }
        Ok(())
    }
}

/// Exact-match accuracy of one prediction per sample, aggregated per
/// category, per split, and overall.
pub fn mcq_accuracy(
    predictions: &[usize],
    dataset: &EvalDataset,
    model_hash: &str,
    seed: u64,
) -> Result<EvalReport> {
    if predictions.len() != dataset.samples.len() {
        return Err(P4dError::InvalidArgument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.samples.len()
        )));
    }
    let mut overall = Bucket::default();
    let mut stat = Bucket::default();
    let mut dynamic = Bucket::default();
    let mut per_category: BTreeMap<String, Bucket> = BTreeMap::new();
    for (pred, sample) in predictions.iter().zip(&dataset.samples) {
        let hit = *pred == sample.answer_index;
        let tally = |b: &mut Bucket| {
            b.total += 1;
            if hit {
                b.correct += 1;
            }
        };
        tally(&mut overall);
        match sample.split {
            Split::Static => tally(&mut stat),
            Split::Dynamic => tally(&mut dynamic),
        }
        tally(per_category.entry(sample.category.name().to_string()).or_default());
    }
    let baseline = random_baseline(dataset, BaselineMode::Analytic)?;
    let report = EvalReport {
        overall,
        static_split: stat,
        dynamic_split: dynamic,
        per_category,
        random_overall: baseline.overall,
        random_static: baseline.static_split,
        random_dynamic: baseline.dynamic_split,
        model_hash: model_hash.to_string(),
        seed,
        scoring_rule: "mean option log-likelihood (relative accuracy: internal stand-in)".to_string(),
    };
    report.verify(1e-9)?;
    Ok(report)
}

/// Stand-in relative accuracy for numeric answers: mean over thresholds
/// θ ∈ {0.50, 0.55, …, 0.95} of the fraction with |pred−gt|/gt < 1−θ.
pub fn relative_accuracy(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(P4dError::InvalidArgument("prediction/ground-truth length mismatch".into()));
    }
    if pred.is_empty() {
        return Err(P4dError::InvalidArgument("relative accuracy of an empty set".into()));
    }
    if gt.iter().any(|&g| g <= 0.0) {
        return Err(P4dError::InvalidArgument(
            "relative accuracy needs positive ground truth".into(),
        ));
    }
    let mut acc = 0.0;
    let mut thresholds = 0usize;
    for k in 0..10 {
        let theta = 0.50 + 0.05 * k as f64;
        let pass = pred
            .iter()
            .zip(gt)
            .filter(|&(&p, &g)| ((p - g).abs() / g) < (1.0 - theta))
            .count();
        acc += pass as f64 / pred.len() as f64;
        thresholds += 1;
    }
    Ok(acc / thresholds as f64)
}

pub enum BaselineMode {
    Analytic,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    pub overall: f64,
    pub static_split: f64,
    pub dynamic_split: f64,
    pub per_category: BTreeMap<String, f64>,
}

/// Expected accuracy of uniform random option choice: mean of 1/k per bucket
/// (analytic) or a seeded simulation.
pub fn random_baseline(dataset: &EvalDataset, mode: BaselineMode) -> Result<BaselineReport> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut split_acc = [(0.0, 0usize), (0.0, 0usize)];
    let mut total = (0.0, 0usize);
    let mut rng = match &mode {
        BaselineMode::Analytic => None,
        BaselineMode::MonteCarlo { seed, .. } => Some(stage_rng(*seed, "random-baseline", 0)),
    };
    for sample in &dataset.samples {
        if sample.options.is_empty() {
            return Err(P4dError::InvalidArgument("sample with no options".into()));
        }
        let expect = match (&mode, &mut rng) {
            (BaselineMode::Analytic, _) => 1.0 / sample.options.len() as f64,
            (BaselineMode::MonteCarlo { draws, .. }, Some(rng)) => {
                let mut hits = 0usize;
                for _ in 0..*draws {
                    if rng.gen_range(0..sample.options.len()) == sample.answer_index {
                        hits += 1;
                    }
                }
                hits as f64 / *draws as f64
            }
            _ => unreachable!(),
        };
        total.0 += expect;
        total.1 += 1;
        let slot = match sample.split {
            Split::Static => &mut split_acc[0],
            Split::Dynamic => &mut split_acc[1],
        };
        slot.0 += expect;
        slot.1 += 1;
        let c = acc.entry(sample.category.name()).or_insert((0.0, 0));
        c.0 += expect;
        c.1 += 1;
    }
    let mean = |(sum, n): (f64, usize)| if n == 0 { 0.0 } else { sum / n as f64 };
    Ok(BaselineReport {
        overall: mean(total),
        static_split: mean(split_acc[0]),
        dynamic_split: mean(split_acc[1]),
        per_category: acc.into_iter().map(|(k, v)| (k.to_string(), mean(v))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = P4dError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            other => Err(P4dError::InvalidArgument(format!("unknown report format `{other}`"))),
        }
    }
}

fn ordered_categories(report: &EvalReport) -> Vec<(&'static str, Bucket)> {
    Category::all()
        .iter()
        .filter_map(|c| report.per_category.get(c.name()).map(|b| (c.name(), *b)))
        .collect()
}

/// Deterministic rendering, columns ordered Avg, Sta, Dyn, then categories.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<String> {
    report.verify(1e-9)?;
    let cats = ordered_categories(report);
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut head = vec!["Avg".to_string(), "Sta".to_string(), "Dyn".to_string()];
            let mut vals = vec![
                format!("{:.3}", report.overall.accuracy()),
                format!("{:.3}", report.static_split.accuracy()),
                format!("{:.3}", report.dynamic_split.accuracy()),
            ];
            for (name, b) in &cats {
                head.push(name.to_string());
                vals.push(format!("{:.3}", b.accuracy()));
            }
            let correct: usize = cats.iter().map(|(_, b)| b.correct).sum();
            let total: usize = cats.iter().map(|(_, b)| b.total).sum();
            Ok(format!(
                "{}\n{}\n# recompute: {}/{} = {:.3}\n",
                head.join(","),
                vals.join(","),
                correct,
                total,
                if total == 0 { 0.0 } else { correct as f64 / total as f64 }
            ))
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!("{:<8}{:>8}{:>8}\n", "column", "acc", "n"));
            out.push_str(&format!(
                "{:<8}{:>8.3}{:>8}\n",
                "Avg",
                report.overall.accuracy(),
                report.overall.total
            ));
            out.push_str(&format!(
                "{:<8}{:>8.3}{:>8}\n",
                "Sta",
                report.static_split.accuracy(),
                report.static_split.total
            ));
            out.push_str(&format!(
                "{:<8}{:>8.3}{:>8}\n",
                "Dyn",
                report.dynamic_split.accuracy(),
                report.dynamic_split.total
            ));
            for (name, b) in &cats {
                out.push_str(&format!("{:<8}{:>8.3}{:>8}\n", name, b.accuracy(), b.total));
            }
            let correct: usize = cats.iter().map(|(_, b)| b.correct).sum();
            let total: usize = cats.iter().map(|(_, b)| b.total).sum();
            out.push_str(&format!(
                "recompute {}/{} = {:.3} | random Avg {:.3}\n",
                correct,
                total,
                if total == 0 { 0.0 } else { correct as f64 / total as f64 },
                report.random_overall
            ));
            Ok(out)
        }
    }
}

pub fn write_report(report: &EvalReport, format: ReportFormat, path: &Path) -> Result<()> {
    std::fs::write(path, emit_report(report, format)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenegen::io::write_jsonl;
    use std::collections::BTreeMap as Map;

    fn sample(video: &str, cat: Category, n_options: usize, answer: usize) -> VQASample {
        VQASample {
            video_id: video.to_string(),
            timestamps: vec![0.0, 0.25],
            question: format!("is the camera rotating left or right {}", cat.name()),
            options: (0..n_options).map(|i| i.to_string()).collect(),
            answer_index: answer,
            regions: Map::new(),
            category: cat,
            split: cat.split(),
        }
    }

    fn dataset(samples: Vec<VQASample>) -> EvalDataset {
        EvalDataset {
            samples,
            schema_version: SCHEMA_VERSION,
            source: "test".into(),
            empty_warning: false,
        }
    }

    #[test]
    fn load_rejects_out_of_bound_answer_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let mut bad = sample("v1", Category::R, 5, 0);
        bad.answer_index = 5;
        write_jsonl(&path, &[sample("v0", Category::R, 4, 0), bad]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        match err {
            P4dError::InvalidRecord { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("answer_index"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn load_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        write_jsonl(&path, &[sample("v1", Category::R, 4, 0), sample("v1", Category::R, 4, 1)])
            .unwrap();
        assert!(load_dataset(&path).is_err());
    }

    #[test]
    fn empty_file_is_a_warning_not_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let ds = load_dataset(&path).unwrap();
        assert!(ds.empty_warning);
        assert!(ds.samples.is_empty());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let samples = vec![sample("v1", Category::VG, 4, 2), sample("v2", Category::DUR, 5, 0)];
        write_jsonl(&path, &samples).unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.samples, samples);
    }

    #[test]
    fn all_correct_is_one_everywhere() {
        let ds = dataset(vec![
            sample("v1", Category::VG, 4, 1),
            sample("v2", Category::R, 4, 2),
        ]);
        let preds = vec![1, 2];
        let r = mcq_accuracy(&preds, &ds, "h", 0).unwrap();
        assert_eq!(r.overall.accuracy(), 1.0);
        assert_eq!(r.static_split.accuracy(), 1.0);
        assert_eq!(r.dynamic_split.accuracy(), 1.0);
        assert!(r.per_category.values().all(|b| b.accuracy() == 1.0));
    }

    #[test]
    fn constant_option_zero_on_balanced_set_is_quarter() {
        // balanced: answer index rotates through 0..4 uniformly
        let samples: Vec<VQASample> = (0..400)
            .map(|i| sample(&format!("v{i}"), Category::C, 4, i % 4))
            .collect();
        let ds = dataset(samples);
        let preds = vec![0usize; 400];
        let r = mcq_accuracy(&preds, &ds, "h", 0).unwrap();
        assert!((r.overall.accuracy() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn six_sample_fixture_matches_hand_computation() {
        // static: 2 of 3 correct; dynamic: 1 of 3 correct; overall 3/6
        let ds = dataset(vec![
            sample("v1", Category::VG, 4, 0),
            sample("v2", Category::DM, 5, 1),
            sample("v3", Category::SR, 4, 2),
            sample("v4", Category::R, 4, 3),
            sample("v5", Category::C, 4, 0),
            sample("v6", Category::T, 4, 1),
        ]);
        let preds = vec![0, 1, 0, 3, 1, 0];
        let r = mcq_accuracy(&preds, &ds, "h", 0).unwrap();
        assert!((r.static_split.accuracy() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.dynamic_split.accuracy() - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.overall.accuracy() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let mut samples = vec![
            sample("v1", Category::VG, 4, 0),
            sample("v2", Category::R, 5, 1),
            sample("v3", Category::C, 4, 2),
        ];
        let mut preds = vec![0usize, 0, 2];
        let a = mcq_accuracy(&preds, &dataset(samples.clone()), "h", 0).unwrap();
        samples.rotate_left(1);
        preds.rotate_left(1);
        let b = mcq_accuracy(&preds, &dataset(samples), "h", 0).unwrap();
        assert_eq!(a.overall, b.overall);
        assert_eq!(a.per_category, b.per_category);
    }

    #[test]
    fn relative_accuracy_frozen_cases() {
        assert_eq!(relative_accuracy(&[3.0], &[3.0]).unwrap(), 1.0);
        assert_eq!(relative_accuracy(&[6.0], &[3.0]).unwrap(), 0.0);
        // 1.3x: passes 1-theta > 0.3 i.e. theta in {0.50,0.55,0.60,0.65}
        assert!((relative_accuracy(&[1.3], &[1.0]).unwrap() - 0.4).abs() < 1e-12);
        assert!(relative_accuracy(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn relative_accuracy_is_scale_invariant() {
        let pred = [1.2, 0.8, 2.5, 3.9];
        let gt = [1.0, 1.0, 2.0, 4.0];
        let a = relative_accuracy(&pred, &gt).unwrap();
        let scaled_p: Vec<f64> = pred.iter().map(|v| v * 37.5).collect();
        let scaled_g: Vec<f64> = gt.iter().map(|v| v * 37.5).collect();
        let b = relative_accuracy(&scaled_p, &scaled_g).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn analytic_baseline_exact_values() {
        let five = dataset((0..10).map(|i| sample(&format!("v{i}"), Category::VG, 5, 0)).collect());
        assert!((random_baseline(&five, BaselineMode::Analytic).unwrap().overall - 0.2).abs() < 1e-12);
        let four = dataset((0..10).map(|i| sample(&format!("v{i}"), Category::R, 4, 0)).collect());
        assert!((random_baseline(&four, BaselineMode::Analytic).unwrap().overall - 0.25).abs() < 1e-12);
        let mixed = dataset(
            (0..10)
                .map(|i| sample(&format!("v{i}"), Category::C, if i < 5 { 4 } else { 5 }, 0))
                .collect(),
        );
        assert!((random_baseline(&mixed, BaselineMode::Analytic).unwrap().overall - 0.225).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_analytic() {
        let ds = dataset(
            (0..20)
                .map(|i| sample(&format!("v{i}"), Category::DUR, 5, i % 5))
                .collect(),
        );
        let analytic = random_baseline(&ds, BaselineMode::Analytic).unwrap().overall;
        let mc = random_baseline(&ds, BaselineMode::MonteCarlo { draws: 10_000, seed: 1 })
            .unwrap()
            .overall;
        // 3 standard errors of a Bernoulli(0.2) mean over 20*10^4 draws
        let se = (0.2f64 * 0.8 / 200_000.0).sqrt();
        assert!((mc - analytic).abs() < 3.0 * se, "mc {mc} vs {analytic}");
    }

    #[test]
    fn report_rendering_is_deterministic_and_checked() {
        let ds = dataset(vec![
            sample("v1", Category::VG, 4, 0),
            sample("v2", Category::R, 4, 1),
        ]);
        let r = mcq_accuracy(&[0, 0], &ds, "h", 3).unwrap();
        for fmt in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Table] {
            assert_eq!(emit_report(&r, fmt).unwrap(), emit_report(&r, fmt).unwrap());
        }
        let csv = emit_report(&r, ReportFormat::Csv).unwrap();
        assert!(csv.starts_with("Avg,Sta,Dyn,VG,R\n"));
        assert!(csv.contains("# recompute: 1/2 = 0.500"));
        assert!("bogus".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn golden_six_sample_table() {
        let ds = dataset(vec![
            sample("v1", Category::VG, 4, 0),
            sample("v2", Category::DM, 5, 1),
            sample("v3", Category::SR, 4, 2),
            sample("v4", Category::R, 4, 3),
            sample("v5", Category::C, 4, 0),
            sample("v6", Category::T, 4, 1),
        ]);
        let r = mcq_accuracy(&[0, 1, 0, 3, 1, 0], &ds, "fixture", 0).unwrap();
        let table = emit_report(&r, ReportFormat::Table).unwrap();
        let golden = "\
column       acc       n
Avg        0.500       6
Sta        0.667       3
Dyn        0.333       3
VG         1.000       1
DM         1.000       1
SR         0.000       1
R          1.000       1
C          0.000       1
T          0.000       1
recompute 3/6 = 0.500 | random Avg 0.242\n";
        assert_eq!(table, golden);
    }
}
