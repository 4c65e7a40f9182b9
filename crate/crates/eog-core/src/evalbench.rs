//! Confusion-matrix metrics, the chance-corrected classification index and
//! figure of merit, stratified k-fold cross-validation, the single-cycle
//! latency harness and report rendering.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::class::EyeClass;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::neural::io::atomic_write;
use crate::neural::StageTimings;
use crate::rng;
use crate::synthgen::SignalRecord;

const FOLD_STREAM: u64 = 0xF01D;

/// Latency budget of the figure of merit, in milliseconds.
pub const REACTION_TIME_MS: f64 = 250.0;

/// Minimum number of untimed runs before a benchmark starts timing.
pub const MIN_WARMUP: usize = 10;

/// File names written by [`write_report`].
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

/// Entry `(i, j)` counts samples of true class `i` predicted as `j`.
pub fn confusion_matrix(
    truth: &[usize],
    pred: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if truth.len() != pred.len() {
        return Err(Error::input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        let bad = if t >= num_classes {
            Some(t)
        } else if p >= num_classes {
            Some(p)
        } else {
            None
        };
        if let Some(b) = bad {
            return Err(Error::UnknownLabel(format!(
                "class index {b} of {num_classes}"
            )));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Support-weighted averages of the per-class values.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Accuracy and per-class precision, recall and F1. Any ratio with a zero
/// denominator is 0.
pub fn metrics(confusion: &[Vec<u64>], class_names: &[String]) -> Result<Metrics> {
    let k = confusion.len();
    if k == 0 || confusion.iter().any(|r| r.len() != k) {
        return Err(Error::input("confusion matrix must be square and nonempty"));
    }
    if class_names.len() != k {
        return Err(Error::input(format!(
            "{} class names for a {k}x{k} matrix",
            class_names.len()
        )));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(Error::input("confusion matrix has no samples"));
    }
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let mut per_class = Vec::with_capacity(k);
    let (mut p_w, mut r_w, mut f_w) = (0.0, 0.0, 0.0);
    for i in 0..k {
        let tp = confusion[i][i] as f64;
        let support: u64 = confusion[i].iter().sum();
        let predicted: u64 = (0..k).map(|r| confusion[r][i]).sum();
        let precision = ratio_or_zero(tp, predicted as f64);
        let recall = ratio_or_zero(tp, support as f64);
        let f1 = ratio_or_zero(2.0 * precision * recall, precision + recall);
        let w = support as f64 / total as f64;
        p_w += w * precision;
        r_w += w * recall;
        f_w += w * f1;
        per_class.push(ClassMetrics {
            class: class_names[i].clone(),
            precision,
            recall,
            f1,
            support,
        });
    }
    Ok(Metrics {
        accuracy: trace as f64 / total as f64,
        precision: p_w,
        recall: r_w,
        f1: f_w,
        per_class,
    })
}

/// Chance-corrected accuracy scaled to the class count: 0 at chance, `k` at
/// perfect accuracy.
pub fn classification_index(accuracy: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::input(format!(
            "classification index needs k >= 2, got {k}"
        )));
    }
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(Error::input(format!("accuracy {accuracy} outside [0, 1]")));
    }
    let kf = k as f64;
    let chance = 1.0 / kf;
    Ok(kf * (accuracy - chance) / (1.0 - chance))
}

/// Classification index discounted by how far the latency exceeds human
/// reaction time.
pub fn figure_of_merit(ci: f64, t_sys_ms: f64) -> Result<f64> {
    if !(t_sys_ms > 0.0) || !t_sys_ms.is_finite() {
        return Err(Error::input(format!(
            "latency must be positive, got {t_sys_ms}"
        )));
    }
    Ok(ci * (REACTION_TIME_MS / t_sys_ms).min(1.0))
}

/// Order-statistic summary of a latency sample, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl LatencyStats {
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::input("no latency samples"));
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            n: ms.len(),
            mean: ms.iter().sum::<f64>() / ms.len() as f64,
            p50: quantile(&sorted, 0.5),
            p95: quantile(&sorted, 0.95),
            max: sorted[sorted.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassLatency {
    pub class: String,
    pub stats: LatencyStats,
}

/// Mean time of one cascade stage over the inferences that reached it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: u8,
    pub invocations: usize,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub per_class: Vec<ClassLatency>,
    /// Over every timed inference. `overall.mean` is the latency used by the
    /// figure of merit; `overall.max` is reported alongside it.
    pub overall: LatencyStats,
    /// Empty for single-network models.
    pub stages: Vec<StageLatency>,
}

/// One timed end-to-end inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    pub class: EyeClass,
    pub predicted: EyeClass,
    pub elapsed_ms: f64,
    pub stages_invoked: u8,
    pub stage_ms: [Option<f64>; 3],
}

/// Result of classifying one raw context window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub class: EyeClass,
    pub stages_invoked: u8,
    pub stage_times: StageTimings,
}

/// A fully constructed single-cycle classifier: raw window in, class out.
pub trait CycleClassifier {
    fn name(&self) -> &str;
    fn classify(&self, record: &SignalRecord) -> Result<Inference>;
}

impl LatencyReport {
    pub fn from_samples(samples: &[LatencySample]) -> Result<Self> {
        let all: Vec<f64> = samples.iter().map(|s| s.elapsed_ms).collect();
        let overall = LatencyStats::from_samples(&all)?;
        let mut per_class = Vec::new();
        for class in EyeClass::ALL {
            let ms: Vec<f64> = samples
                .iter()
                .filter(|s| s.class == class)
                .map(|s| s.elapsed_ms)
                .collect();
            if !ms.is_empty() {
                per_class.push(ClassLatency {
                    class: class.name().to_string(),
                    stats: LatencyStats::from_samples(&ms)?,
                });
            }
        }
        let mut stages = Vec::new();
        for s in 0..3 {
            let ms: Vec<f64> = samples.iter().filter_map(|x| x.stage_ms[s]).collect();
            if !ms.is_empty() {
                stages.push(StageLatency {
                    stage: s as u8 + 1,
                    invocations: ms.len(),
                    mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
                });
            }
        }
        Ok(LatencyReport {
            per_class,
            overall,
            stages,
        })
    }
}

fn timed_inference(model: &dyn CycleClassifier, record: &SignalRecord) -> Result<LatencySample> {
    let start = Instant::now();
    let inf = model.classify(record)?;
    let elapsed = start.elapsed();
    let elapsed_ms = elapsed.as_secs_f64() * 1e3;
    if !(elapsed_ms > 0.0) {
        return Err(Error::Numerical(
            "monotonic clock reported a zero interval".into(),
        ));
    }
    Ok(LatencySample {
        class: record.label,
        predicted: inf.class,
        elapsed_ms,
        stages_invoked: inf.stages_invoked,
        stage_ms: inf
            .stage_times
            .stages
            .map(|d| d.map(|d| d.as_secs_f64() * 1e3)),
    })
}

/// Times `repetitions` passes over `records` for each model on the calling
/// thread. Models are interleaved within every repetition, rotating the
/// order, so slow drift in machine state affects all of them alike. At least
/// [`MIN_WARMUP`] untimed inferences per model run first.
pub fn latency_bench_interleaved(
    models: &[&dyn CycleClassifier],
    records: &[SignalRecord],
    repetitions: usize,
    warmup: usize,
) -> Result<Vec<(LatencyReport, Vec<LatencySample>)>> {
    if records.is_empty() {
        return Err(Error::input("latency benchmark needs at least one record"));
    }
    if models.is_empty() || repetitions == 0 {
        return Err(Error::input(
            "latency benchmark needs a model and at least one repetition",
        ));
    }
    let warmup = warmup.max(MIN_WARMUP);
    for m in models {
        for i in 0..warmup {
            m.classify(&records[i % records.len()])?;
        }
    }
    let mut samples: Vec<Vec<LatencySample>> =
        vec![Vec::with_capacity(repetitions * records.len()); models.len()];
    for rep in 0..repetitions {
        for j in 0..models.len() {
            let m = (j + rep) % models.len();
            for r in records {
                samples[m].push(timed_inference(models[m], r)?);
            }
        }
    }
    samples
        .into_iter()
        .map(|s| Ok((LatencyReport::from_samples(&s)?, s)))
        .collect()
}

pub fn latency_bench(
    model: &dyn CycleClassifier,
    records: &[SignalRecord],
    repetitions: usize,
    warmup: usize,
) -> Result<(LatencyReport, Vec<LatencySample>)> {
    let mut v = latency_bench_interleaved(&[model], records, repetitions, warmup)?;
    Ok(v.remove(0))
}

/// Everything known about one evaluated model. Field names are the keys of
/// the JSON rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub k: usize,
    pub class_names: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub ci: f64,
    /// Overall mean latency, present once a benchmark has run.
    pub t_sys_ms: Option<f64>,
    pub fom: Option<f64>,
    pub latency: Option<LatencyReport>,
}

impl EvalReport {
    pub fn from_confusion(
        model: &str,
        class_names: &[String],
        confusion: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let m = metrics(&confusion, class_names)?;
        let k = class_names.len();
        Ok(EvalReport {
            model: model.to_string(),
            k,
            class_names: class_names.to_vec(),
            ci: classification_index(m.accuracy, k)?,
            confusion,
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            per_class: m.per_class,
            t_sys_ms: None,
            fom: None,
            latency: None,
        })
    }

    pub fn from_predictions(
        model: &str,
        class_names: &[String],
        truth: &[usize],
        pred: &[usize],
    ) -> Result<Self> {
        let c = confusion_matrix(truth, pred, class_names.len())?;
        Self::from_confusion(model, class_names, c)
    }

    /// Attaches a latency benchmark and derives the figure of merit from its
    /// overall mean.
    pub fn with_latency(mut self, latency: LatencyReport) -> Result<Self> {
        let t = latency.overall.mean;
        self.fom = Some(figure_of_merit(self.ci, t)?);
        self.t_sys_ms = Some(t);
        self.latency = Some(latency);
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::format(format!("report: {e}")))
    }

    /// Aligned plain-text table: one row per class plus `Overall`, then the
    /// cascade stage rows and the summary scalars.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model: {}", self.model);
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "class",
            "support",
            "precision",
            "recall",
            "f1",
            "mean_ms",
            "p50_ms",
            "p95_ms",
            "max_ms"
        );
        let lat_cols = |stats: Option<&LatencyStats>| match stats {
            Some(l) => format!(
                "{:>9.3} {:>9.3} {:>9.3} {:>9.3}",
                l.mean, l.p50, l.p95, l.max
            ),
            None => format!("{:>9} {:>9} {:>9} {:>9}", "-", "-", "-", "-"),
        };
        for c in &self.per_class {
            let lat = self
                .latency
                .as_ref()
                .and_then(|l| l.per_class.iter().find(|x| x.class == c.class))
                .map(|x| &x.stats);
            let _ = writeln!(
                s,
                "{:<12} {:>7} {:>9.4} {:>9.4} {:>9.4} {}",
                c.class,
                c.support,
                c.precision,
                c.recall,
                c.f1,
                lat_cols(lat)
            );
        }
        let support: u64 = self.per_class.iter().map(|c| c.support).sum();
        let _ = writeln!(
            s,
            "{:<12} {:>7} {:>9.4} {:>9.4} {:>9.4} {}",
            "Overall",
            support,
            self.precision,
            self.recall,
            self.f1,
            lat_cols(self.latency.as_ref().map(|l| &l.overall))
        );
        if let Some(l) = &self.latency {
            for st in &l.stages {
                let _ = writeln!(
                    s,
                    "{:<12} {:>7} {:>9} {:>9} {:>9} {:>9.3}",
                    format!("Stage-{}", st.stage),
                    st.invocations,
                    "-",
                    "-",
                    "-",
                    st.mean_ms
                );
            }
        }
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = writeln!(s, "k: {}", self.k);
        let _ = writeln!(s, "ci: {:.2}", self.ci);
        match (self.t_sys_ms, self.fom) {
            (Some(t), Some(f)) => {
                let _ = writeln!(s, "t_sys_ms: {t:.3}");
                let _ = writeln!(s, "fom: {f:.2}");
            }
            _ => {
                let _ = writeln!(s, "t_sys_ms: -");
                let _ = writeln!(s, "fom: -");
            }
        }
        s
    }
}

/// Writes `report.json` and `report.txt` into `dir`, creating it if needed.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join(REPORT_JSON);
    let table = dir.join(REPORT_TABLE);
    atomic_write(&json, report.to_json()?.as_bytes())?;
    atomic_write(&table, report.render_table().as_bytes())?;
    Ok((json, table))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    EvalReport::from_json(&std::fs::read_to_string(path)?)
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin,
/// continuing the deal from where the previous class stopped so fold sizes
/// stay within one of each other overall as well as per class.
pub fn stratified_folds(
    labels: &[usize],
    num_classes: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::UnknownLabel(format!(
                "class index {l} of {num_classes}"
            )));
        }
        by_class[l].push(i);
    }
    let mut out = vec![Vec::new(); folds];
    let mut next = 0usize;
    for (c, rows) in by_class.iter_mut().enumerate() {
        if rows.is_empty() {
            continue;
        }
        if rows.len() < folds {
            return Err(Error::input(format!(
                "class {c} has {} samples, fewer than {folds} folds",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng::stream(seed, &[FOLD_STREAM, c as u64]));
        for &r in rows.iter() {
            out[next % folds].push(r);
            next += 1;
        }
    }
    for f in out.iter_mut() {
        f.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<EvalReport>,
    pub mean_accuracy: f64,
    /// Sample standard deviation across folds.
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_ci: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

impl CvSummary {
    pub fn from_folds(folds: Vec<EvalReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::input("no fold reports"));
        }
        let acc: Vec<f64> = folds.iter().map(|r| r.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|r| r.f1).collect();
        let ci: Vec<f64> = folds.iter().map(|r| r.ci).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_f1, std_f1) = mean_std(&f1);
        Ok(CvSummary {
            folds,
            mean_accuracy,
            std_accuracy,
            mean_f1,
            std_f1,
            mean_ci: mean_std(&ci).0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>9} {:>9} {:>6}", "fold", "accuracy", "f1", "ci");
        for (i, r) in self.folds.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<8} {:>9.4} {:>9.4} {:>6.2}",
                i + 1,
                r.accuracy,
                r.f1,
                r.ci
            );
        }
        let _ = writeln!(
            s,
            "{:<8} {:>9.4} {:>9.4} {:>6.2}",
            "mean", self.mean_accuracy, self.mean_f1, self.mean_ci
        );
        let _ = writeln!(
            s,
            "{:<8} {:>9.4} {:>9.4}",
            "std", self.std_accuracy, self.std_f1
        );
        s
    }
}

/// Stratified k-fold cross-validation. `fit_predict(fold, train, test)` trains
/// a fresh model on `train` and returns its label predictions for `test`.
/// Folds run on up to `threads` scoped threads; results do not depend on the
/// thread count.
pub fn kfold_cv<F>(
    data: &Dataset,
    model: &str,
    folds: usize,
    seed: u64,
    threads: usize,
    fit_predict: F,
) -> Result<CvSummary>
where
    F: Fn(usize, &Dataset, &Dataset) -> Result<Vec<usize>> + Sync,
{
    data.validate()?;
    let parts = stratified_folds(&data.labels, data.num_classes(), folds, seed)?;
    let run_fold = |f: usize| -> Result<EvalReport> {
        let test_rows = &parts[f];
        let train_rows: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, p)| p.iter().copied())
            .collect();
        let train = data.subset(&train_rows);
        let test = data.subset(test_rows);
        let pred = fit_predict(f, &train, &test)?;
        EvalReport::from_predictions(
            &format!("{model} fold {}", f + 1),
            &data.class_names,
            &test.labels,
            &pred,
        )
    };

    let threads = threads.clamp(1, folds);
    let reports: Vec<Result<EvalReport>> = if threads == 1 {
        (0..folds).map(run_fold).collect()
    } else {
        let mut slots: Vec<Option<Result<EvalReport>>> = (0..folds).map(|_| None).collect();
        std::thread::scope(|scope| {
            let run_fold = &run_fold;
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    scope.spawn(move || {
                        (t..folds)
                            .step_by(threads)
                            .map(|f| (f, run_fold(f)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (f, r) in h.join().expect("fold worker panicked") {
                    slots[f] = Some(r);
                }
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("every fold ran"))
            .collect()
    };
    CvSummary::from_folds(reports.into_iter().collect::<Result<Vec<_>>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn hand_worked_confusion_and_metrics() {
        let c = confusion_matrix(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(c, vec![vec![1, 1], vec![0, 1]]);
        let c = confusion_matrix(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(c, vec![vec![1, 1], vec![0, 2]]);
        let m = metrics(&c, &names(2)).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class[0].precision, 1.0);
        assert_eq!(m.per_class[0].recall, 0.5);
        assert!((m.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert!((m.per_class[1].f1 - 0.8).abs() < 1e-12);
        // Both rows have support 2.
        assert!((m.f1 - (2.0 * 2.0 / 3.0 + 2.0 * 0.8) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_zero() {
        let c = vec![vec![2, 0], vec![3, 0]];
        let m = metrics(&c, &names(2)).unwrap();
        assert_eq!(m.per_class[1].precision, 0.0);
        assert_eq!(m.per_class[1].f1, 0.0);
        assert!(metrics(&[vec![0, 0], vec![0, 0]], &names(2)).is_err());
    }

    #[test]
    fn unknown_labels_rejected() {
        assert!(matches!(
            confusion_matrix(&[0, 2], &[0, 1], 2),
            Err(Error::UnknownLabel(_))
        ));
        assert!(confusion_matrix(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn ci_endpoints_and_errors() {
        for k in 2..12 {
            assert!((classification_index(1.0, k).unwrap() - k as f64).abs() < 1e-12);
            assert_eq!(classification_index(1.0 / k as f64, k).unwrap(), 0.0);
        }
        assert!(classification_index(0.5, 1).is_err());
        assert!(figure_of_merit(5.0, 0.0).is_err());
        assert!(figure_of_merit(5.0, -1.0).is_err());
        assert_eq!(figure_of_merit(5.0, 500.0).unwrap(), 2.5);
        assert_eq!(figure_of_merit(9.87, 38.6).unwrap(), 9.87);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.p50, 2.5);
        assert!((s.p95 - 3.85).abs() < 1e-12);
        assert_eq!(s.max, 4.0);
        assert!(LatencyStats::from_samples(&[]).is_err());
    }

    #[test]
    fn folds_are_stratified_partitions() {
        let labels: Vec<usize> = (0..103).map(|i| i % 4).collect();
        let folds = stratified_folds(&labels, 4, 5, 9).unwrap();
        let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        for c in 0..4 {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
                .collect();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
        assert!(stratified_folds(&[0, 0, 1], 2, 2, 0).is_err());
    }

    #[test]
    fn report_round_trips_and_renders() {
        let r = EvalReport::from_confusion("toy", &names(2), vec![vec![1, 1], vec![0, 2]]).unwrap();
        let samples: Vec<LatencySample> = (0..7)
            .map(|i| LatencySample {
                class: if i % 2 == 0 {
                    EyeClass::Up
                } else {
                    EyeClass::Stare
                },
                predicted: EyeClass::Up,
                elapsed_ms: 0.1 * (i + 1) as f64 / 3.0,
                stages_invoked: 1,
                stage_ms: [Some(0.01 * i as f64), None, None],
            })
            .collect();
        let r = r
            .with_latency(LatencyReport::from_samples(&samples).unwrap())
            .unwrap();
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let t = r.render_table();
        assert!(t.lines().any(|l| l.starts_with("Overall")));
        assert!(t.lines().any(|l| l.starts_with("Stage-1")));
        assert_eq!(
            classification_index(back.accuracy, back.k).unwrap(),
            back.ci
        );
    }
}
