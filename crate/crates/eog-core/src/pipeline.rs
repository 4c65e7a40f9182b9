//! End-to-end composition: synthetic trials to trained models, the model
//! bundle file and the single-cycle inference path that the latency harness
//! times.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::EyeClass;
use crate::dataset::{
    apply_scaler, featurize_cycles, fit_scaler, segment_dataset, smote, stratified_split, Dataset,
    Row, ScalerParams,
};
use crate::dsp::{PreprocessConfig, Preprocessor, ThresholdMode, ThresholdRule, WaveletConfig};
use crate::error::{Error, Result};
use crate::evalbench::{CycleClassifier, EvalReport, Inference};
use crate::features::{featurize, NUM_FEATURES};
use crate::neural::io::atomic_write;
use crate::neural::{
    argmax, build_ann, build_cnn, build_stage_ann, build_stage_cnn, read_weights, train,
    write_weights, CascadeModel, Network, NetworkSpec, StageTimings, TrainConfig, TrainHistory,
};
use crate::rng;
use crate::segment::{center_segment, detect_cycles, segment_record, Cycle, PeakParams};
use crate::synthgen::{gen_trial, GenSpec, Placement, SignalRecord};

const BENCH_STREAM: u64 = 0xBE7C;
const STAGE_STREAM: u64 = 0x57A6;

pub const BUNDLE_MAGIC: &[u8; 8] = b"EOGMODEL";
pub const BUNDLE_VERSION: u32 = 1;

/// Raw samples handed to one timed inference: three cycle windows, so the
/// event sits in the middle with a cycle of context on either side.
pub const CONTEXT_CYCLES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ann,
    Cnn,
    CascadeAnn,
    CascadeCnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Ann,
        ModelKind::Cnn,
        ModelKind::CascadeAnn,
        ModelKind::CascadeCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Ann => "ann",
            ModelKind::Cnn => "cnn",
            ModelKind::CascadeAnn => "cascade-ann",
            ModelKind::CascadeCnn => "cascade-cnn",
        }
    }

    pub fn is_cascade(self) -> bool {
        matches!(self, ModelKind::CascadeAnn | ModelKind::CascadeCnn)
    }

    /// Network of a standalone model, or of cascade stage `stage` (1-based).
    fn spec(self, stage: usize) -> Result<NetworkSpec> {
        match self {
            ModelKind::Ann => Ok(build_ann()),
            ModelKind::Cnn => Ok(build_cnn(EyeClass::ALL.len())),
            ModelKind::CascadeAnn => build_stage_ann(stage),
            ModelKind::CascadeCnn => build_stage_cnn(stage),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model kind `{s}` (ann, cnn, cascade-ann, cascade-cnn)"
                ))
            })
    }
}

/// Every parameter of the training chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub gen: GenSpec,
    pub preprocess: PreprocessConfig,
    pub peaks: PeakParams,
    pub smote_target: usize,
    pub smote_k: usize,
    /// Oversample only the training split. Off by default: the reference
    /// order oversamples first, which lets synthetic rows built from test
    /// parents into training.
    pub smote_after_split: bool,
    pub train_fraction: f64,
    /// Seed of the oversampling and split streams.
    pub seed: u64,
    pub train: TrainConfig,
    pub cv_folds: usize,
    /// Worker threads for per-trial and per-stage work. Results do not depend
    /// on it.
    pub threads: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            gen: GenSpec::default(),
            preprocess: PreprocessConfig::default(),
            peaks: PeakParams::default(),
            smote_target: 200,
            smote_k: 5,
            smote_after_split: false,
            train_fraction: 0.8,
            seed: 7,
            train: TrainConfig::default(),
            cv_folds: 5,
            threads: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.peaks.validate()?;
        self.train.validate()?;
        if self.smote_k < 1 || self.smote_target < 2 {
            return Err(Error::config(
                "SMOTE needs k >= 1 and a target of at least 2",
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(
                "train fraction must lie strictly between 0 and 1",
            ));
        }
        if self.cv_folds < 2 {
            return Err(Error::config("cross-validation needs at least 2 folds"));
        }
        if self.threads < 1 {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }
}

/// Runs `f` over `items` on up to `threads` scoped threads, keeping order.
pub fn par_map<T: Sync, U: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

/// Preprocesses every trial and segments it into training cycles.
pub fn cycles_from_trials(
    trials: &[SignalRecord],
    preprocess: &PreprocessConfig,
    peaks: &PeakParams,
    threads: usize,
) -> Result<Vec<Cycle>> {
    let fs = trials.first().map_or(125.0, |t| t.sampling_rate_hz);
    let pre = Preprocessor::new(preprocess.clone(), fs)?;
    let per_trial = par_map(trials, threads, |t| segment_record(&pre.apply(t)?, peaks))?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Generate, preprocess, segment and featurize: the original (pre-SMOTE)
/// feature table.
pub fn original_features(cfg: &PipelineConfig) -> Result<Dataset> {
    cfg.validate()?;
    let jobs: Vec<(EyeClass, u64)> = cfg
        .gen
        .classes
        .iter()
        .enumerate()
        .flat_map(|(ci, &c)| {
            (0..cfg.gen.trials_per_class)
                .map(move |i| (c, (ci * cfg.gen.trials_per_class + i) as u64))
        })
        .collect();
    let trials = par_map(&jobs, cfg.threads, |&(c, id)| {
        Ok(gen_trial(c, &cfg.gen, id)?.record)
    })?;
    let cycles = cycles_from_trials(&trials, &cfg.preprocess, &cfg.peaks, cfg.threads)?;
    featurize_cycles(&cycles, cfg.gen.sampling_rate_hz)
}

/// Training and held-out test features, unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
}

/// Oversamples and splits in the configured order.
pub fn prepare(original: &Dataset, cfg: &PipelineConfig) -> Result<PreparedData> {
    if cfg.smote_after_split {
        let split = stratified_split(original, cfg.train_fraction, cfg.seed)?;
        let target = crate::dataset::train_count(cfg.smote_target, cfg.train_fraction);
        Ok(PreparedData {
            train: smote(&split.train, target, cfg.smote_k, cfg.seed)?,
            test: split.test,
        })
    } else {
        let balanced = smote(original, cfg.smote_target, cfg.smote_k, cfg.seed)?;
        let split = stratified_split(&balanced, cfg.train_fraction, cfg.seed)?;
        Ok(PreparedData {
            train: split.train,
            test: split.test,
        })
    }
}

/// A trained standalone network or cascade.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Single(Network),
    Cascade(Box<CascadeModel>),
}

impl Classifier {
    pub fn networks(&self) -> Vec<&Network> {
        match self {
            Classifier::Single(n) => vec![n],
            Classifier::Cascade(c) => c.stages().to_vec(),
        }
    }

    /// Class of one scaled feature row, with the number of networks run.
    pub fn predict(&self, x: &[f64]) -> Result<(EyeClass, u8)> {
        match self {
            Classifier::Single(n) => Ok((class_of(n.predict(x)?)?, 1)),
            Classifier::Cascade(c) => c.predict(x).map(|p| (p.class, p.stages_invoked)),
        }
    }

    fn predict_timed(&self, x: &[f64]) -> Result<(EyeClass, u8, StageTimings)> {
        match self {
            Classifier::Single(n) => Ok((
                class_of(argmax(&n.forward(x)?))?,
                1,
                StageTimings::default(),
            )),
            Classifier::Cascade(c) => c
                .predict_timed(x)
                .map(|(p, t)| (p.class, p.stages_invoked, t)),
        }
    }
}

fn class_of(i: usize) -> Result<EyeClass> {
    EyeClass::from_index(i).ok_or_else(|| Error::UnknownLabel(format!("output {i}")))
}

/// Everything inference needs: signal conditioning, segmentation settings,
/// the training scaler and the networks.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub sampling_rate_hz: f64,
    pub peaks: PeakParams,
    pub scaler: ScalerParams,
    pub classifier: Classifier,
    preprocessor: Preprocessor,
}

impl ModelBundle {
    pub fn new(
        kind: ModelKind,
        preprocess: PreprocessConfig,
        sampling_rate_hz: f64,
        peaks: PeakParams,
        scaler: ScalerParams,
        classifier: Classifier,
    ) -> Result<Self> {
        peaks.validate()?;
        if scaler.means.len() != NUM_FEATURES
            || scaler.stds.len() != NUM_FEATURES
            || scaler.constant.len() != NUM_FEATURES
        {
            return Err(Error::input("scaler does not have one entry per feature"));
        }
        if classifier
            .networks()
            .iter()
            .any(|n| n.input_size() != NUM_FEATURES)
        {
            return Err(Error::input(
                "network input width differs from the feature count",
            ));
        }
        match (&classifier, kind.is_cascade()) {
            (Classifier::Single(n), false) if n.num_classes() == EyeClass::ALL.len() => {}
            (Classifier::Cascade(_), true) => {}
            _ => {
                return Err(Error::input(format!(
                    "classifier does not match model kind {kind}"
                )))
            }
        }
        Ok(ModelBundle {
            kind,
            sampling_rate_hz,
            peaks,
            scaler,
            classifier,
            preprocessor: Preprocessor::new(preprocess, sampling_rate_hz)?,
        })
    }

    pub fn preprocess_config(&self) -> &PreprocessConfig {
        self.preprocessor.config()
    }

    /// Class of one unscaled feature row.
    pub fn predict_row(&self, row: &Row) -> Result<(EyeClass, u8)> {
        self.classifier.predict(&self.scaler.transform_row(row))
    }

    /// Scores the bundle on an unscaled feature table.
    pub fn evaluate(&self, data: &Dataset) -> Result<EvalReport> {
        data.validate()?;
        let mut pred = Vec::with_capacity(data.len());
        for row in &data.features {
            let (c, _) = self.predict_row(row)?;
            let idx = data
                .class_index(c.name())
                .ok_or_else(|| Error::UnknownLabel(format!("{c} is not a class of the dataset")))?;
            pred.push(idx);
        }
        EvalReport::from_predictions(self.kind.as_str(), &data.class_names, &data.labels, &pred)
    }

    /// The cycle inference classifies in a raw window: after conditioning,
    /// the detected peak nearest the window center, or the centered segment
    /// when nothing is detected.
    pub fn inference_cycle(&self, record: &SignalRecord) -> Result<Cycle> {
        let clean = self.preprocessor.apply(record)?;
        let mid = clean.len() / 2;
        let nearest = detect_cycles(&clean, &self.peaks)?
            .into_iter()
            .min_by_key(|c| c.peak_index_global.abs_diff(mid));
        match nearest {
            Some(c) => Ok(c),
            None => center_segment(&clean, self.peaks.window_len()),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let pre = self.preprocessor.config();
        let header = BundleHeader {
            kind: self.kind,
            sampling_rate_hz: self.sampling_rate_hz,
            smoothing_window: pre.smoothing_window,
            highpass_order: pre.highpass_order,
            highpass_cutoff_hz: pre.highpass_cutoff_hz,
            wavelet: pre.wavelet.as_ref().map(WaveletHeader::from),
            height_v: self.peaks.height_v,
            prominence_v: self.peaks.prominence_v,
            min_distance_samples: self.peaks.min_distance_samples,
            half_window_samples: self.peaks.half_window_samples,
            scaler_means: self.scaler.means.clone(),
            scaler_stds: self.scaler.stds.clone(),
            scaler_constant: self.scaler.constant.clone(),
            networks: self
                .classifier
                .networks()
                .iter()
                .map(|n| n.spec().canonical())
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for n in self.classifier.networks() {
            let blob = write_weights(n.spec(), n.weights())?;
            out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
            out.extend_from_slice(&blob);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != BUNDLE_MAGIC {
            return Err(Error::format("not a model bundle (bad magic)"));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != BUNDLE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: BUNDLE_VERSION,
            });
        }
        let hlen = r.len_prefix()?;
        let header: BundleHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::format(format!("bundle header: {e}")))?;
        let mut nets = Vec::new();
        for canonical in &header.networks {
            let spec = NetworkSpec::parse(canonical)?;
            let blen = r.len_prefix()?;
            let weights = read_weights(r.take(blen)?, &spec)?;
            nets.push(Network::new(spec, weights)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after the last network"));
        }
        let classifier = match (header.kind.is_cascade(), nets.len()) {
            (false, 1) => Classifier::Single(nets.remove(0)),
            (true, 3) => {
                let s3 = nets.pop().expect("three");
                let s2 = nets.pop().expect("three");
                let s1 = nets.pop().expect("three");
                Classifier::Cascade(Box::new(CascadeModel::new(s1, s2, s3)?))
            }
            (_, n) => {
                return Err(Error::format(format!(
                    "{} bundle holds {n} networks",
                    header.kind
                )))
            }
        };
        let preprocess = PreprocessConfig {
            smoothing_window: header.smoothing_window,
            highpass_order: header.highpass_order,
            highpass_cutoff_hz: header.highpass_cutoff_hz,
            wavelet: header.wavelet.map(WaveletHeader::into_config).transpose()?,
        };
        let peaks = PeakParams {
            height_v: header.height_v,
            prominence_v: header.prominence_v,
            min_distance_samples: header.min_distance_samples,
            half_window_samples: header.half_window_samples,
        };
        let scaler = ScalerParams {
            means: header.scaler_means,
            stds: header.scaler_stds,
            constant: header.scaler_constant,
        };
        ModelBundle::new(
            header.kind,
            preprocess,
            header.sampling_rate_hz,
            peaks,
            scaler,
            classifier,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl PartialEq for ModelBundle {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.sampling_rate_hz == other.sampling_rate_hz
            && self.peaks == other.peaks
            && self.scaler == other.scaler
            && self.classifier == other.classifier
            && self.preprocessor.config() == other.preprocessor.config()
    }
}

impl CycleClassifier for ModelBundle {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn classify(&self, record: &SignalRecord) -> Result<Inference> {
        let cycle = self.inference_cycle(record)?;
        let fv = featurize(&cycle, self.sampling_rate_hz)?;
        let x = self.scaler.transform_row(&fv.values);
        let (class, stages_invoked, stage_times) = self.classifier.predict_timed(&x)?;
        Ok(Inference {
            class,
            stages_invoked,
            stage_times,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("model bundle is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn len_prefix(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::format("length prefix overflows"))
    }
}

#[derive(Serialize, Deserialize)]
struct WaveletHeader {
    basis: String,
    levels: usize,
    /// `None` selects the universal threshold.
    fixed_threshold: Option<f64>,
    soft: bool,
}

impl From<&WaveletConfig> for WaveletHeader {
    fn from(w: &WaveletConfig) -> Self {
        WaveletHeader {
            basis: w.basis.name().to_string(),
            levels: w.levels,
            fixed_threshold: match w.threshold_rule {
                ThresholdRule::Universal => None,
                ThresholdRule::Fixed(t) => Some(t),
            },
            soft: w.mode == ThresholdMode::Soft,
        }
    }
}

impl WaveletHeader {
    fn into_config(self) -> Result<WaveletConfig> {
        Ok(WaveletConfig {
            basis: self.basis.parse()?,
            levels: self.levels,
            threshold_rule: self
                .fixed_threshold
                .map_or(ThresholdRule::Universal, ThresholdRule::Fixed),
            mode: if self.soft {
                ThresholdMode::Soft
            } else {
                ThresholdMode::Hard
            },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BundleHeader {
    kind: ModelKind,
    sampling_rate_hz: f64,
    smoothing_window: usize,
    highpass_order: usize,
    highpass_cutoff_hz: f64,
    wavelet: Option<WaveletHeader>,
    height_v: f64,
    prominence_v: f64,
    min_distance_samples: usize,
    half_window_samples: usize,
    scaler_means: Vec<f64>,
    scaler_stds: Vec<f64>,
    scaler_constant: Vec<bool>,
    networks: Vec<String>,
}

/// Training run of one model kind.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub bundle: ModelBundle,
    /// One history per network (three for a cascade).
    pub histories: Vec<TrainHistory>,
}

/// Fits the scaler on `train` and trains the networks of `kind` on the scaled
/// rows. Cascade stages get independent seeds derived from `train_cfg.seed`.
pub fn train_model(
    kind: ModelKind,
    train_data: &Dataset,
    train_cfg: &TrainConfig,
    preprocess: &PreprocessConfig,
    peaks: &PeakParams,
    sampling_rate_hz: f64,
    threads: usize,
) -> Result<TrainedModel> {
    let scaler = fit_scaler(train_data)?;
    let scaled = apply_scaler(&scaler, train_data);
    let (classifier, histories) = if kind.is_cascade() {
        let stages = segment_dataset(&scaled)?;
        let jobs = [
            (1usize, &stages.cardinal),
            (2, &stages.right),
            (3, &stages.left),
        ];
        let trained = par_map(&jobs, threads, |&(s, data)| {
            let cfg = TrainConfig {
                seed: rng::derive_seed(train_cfg.seed, &[STAGE_STREAM, s as u64]),
                ..train_cfg.clone()
            };
            let spec = kind.spec(s)?;
            let (w, h) = train(&spec, data, &cfg)?;
            Ok((Network::new(spec, w)?, h))
        })?;
        let mut nets = Vec::new();
        let mut hist = Vec::new();
        for (n, h) in trained {
            nets.push(n);
            hist.push(h);
        }
        let s3 = nets.pop().expect("three");
        let s2 = nets.pop().expect("three");
        let s1 = nets.pop().expect("three");
        (
            Classifier::Cascade(Box::new(CascadeModel::new(s1, s2, s3)?)),
            hist,
        )
    } else {
        let spec = kind.spec(0)?;
        let (w, h) = train(&spec, &scaled, train_cfg)?;
        (Classifier::Single(Network::new(spec, w)?), vec![h])
    };
    Ok(TrainedModel {
        bundle: ModelBundle::new(
            kind,
            preprocess.clone(),
            sampling_rate_hz,
            *peaks,
            scaler,
            classifier,
        )?,
        histories,
    })
}

/// [`train_model`] with the settings of a pipeline config.
pub fn train_with(
    kind: ModelKind,
    train_data: &Dataset,
    cfg: &PipelineConfig,
) -> Result<TrainedModel> {
    train_model(
        kind,
        train_data,
        &cfg.train,
        &cfg.preprocess,
        &cfg.peaks,
        cfg.gen.sampling_rate_hz,
        cfg.threads,
    )
}

/// A raw window of [`CONTEXT_CYCLES`] cycle lengths cut from a trial,
/// centered on the first placed event, or on the trial center when there is
/// none.
pub fn context_window(
    record: &SignalRecord,
    placements: &[Placement],
    peaks: &PeakParams,
) -> Result<SignalRecord> {
    let len = CONTEXT_CYCLES * peaks.window_len();
    let n = record.len();
    if n < len {
        return Err(Error::input(format!(
            "trial of {n} samples is shorter than a {len}-sample context"
        )));
    }
    let center = placements.first().map_or(n / 2, |p| p.center_index);
    let start = center.saturating_sub(len / 2).min(n - len);
    Ok(SignalRecord {
        ch_h: record.ch_h[start..start + len].to_vec(),
        ch_v: record.ch_v[start..start + len].to_vec(),
        ..record.clone()
    })
}

/// Raw context windows for latency benchmarking, drawn from fresh trials
/// (a seed stream disjoint from training). See [`context_window`].
pub fn bench_records(
    gen: &GenSpec,
    peaks: &PeakParams,
    per_class: usize,
) -> Result<Vec<SignalRecord>> {
    gen.validate()?;
    let spec = GenSpec {
        seed: rng::derive_seed(gen.seed, &[BENCH_STREAM]),
        ..gen.clone()
    };
    let mut out = Vec::new();
    for (ci, &class) in spec.classes.iter().enumerate() {
        for i in 0..per_class {
            let t = gen_trial(class, &spec, (ci * per_class + i) as u64)?;
            out.push(
                context_window(&t.record, &t.placements, peaks)
                    .map_err(|e| Error::config(e.to_string()))?,
            );
        }
    }
    Ok(out)
}
