//! Run configuration: a flat `key=value` file with dotted keys, overridable
//! from the environment.
//!
//! Resolution order is defaults, then the file, then `EOGC_*` variables,
//! then command-line flags. The variable for a key is `EOGC_` followed by the
//! key upper-cased with `.` and `-` replaced by `_`, so
//! `peaks.prominence_v` becomes `EOGC_PEAKS_PROMINENCE_V`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use eog_core::dsp::WaveletConfig;
use eog_core::neural::{Optimizer, TrainConfig};
use eog_core::pipeline::{ModelKind, PipelineConfig};
use eog_core::{Error, EyeClass, Result};

pub const ENV_PREFIX: &str = "EOGC_";
/// Names the config file; the only `EOGC_*` variable that is not a key.
pub const CONFIG_ENV: &str = "EOGC_CONFIG";

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    /// Training settings that differ for one model kind, as raw overrides of
    /// `train.*` fields.
    pub model_train: BTreeMap<ModelKind, TrainConfig>,
    pub bench_reps: usize,
    pub bench_warmup: usize,
    pub bench_per_class: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            pipeline: PipelineConfig::default(),
            model_train: BTreeMap::new(),
            bench_reps: 50,
            bench_warmup: 10,
            bench_per_class: 5,
            out_dir: "out".into(),
        }
    }
}

const TRAIN_FIELDS: [&str; 7] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "optimizer",
    "early_stop_patience",
    "validation_fraction",
    "seed",
];

/// Keys other than the `train.*` family.
const KEYS: [&str; 31] = [
    "gen.sampling_rate_hz",
    "gen.trial_length_s",
    "gen.classes",
    "gen.trials_per_class",
    "gen.pulse_amplitude_min_v",
    "gen.pulse_amplitude_max_v",
    "gen.pulse_width_min_samples",
    "gen.pulse_width_max_samples",
    "gen.noise_std_v",
    "gen.drift_amplitude_v",
    "gen.drift_freq_hz",
    "gen.seed",
    "preprocess.smoothing_window",
    "preprocess.highpass_order",
    "preprocess.highpass_cutoff_hz",
    "preprocess.wavelet",
    "peaks.height_v",
    "peaks.prominence_v",
    "peaks.min_distance_samples",
    "peaks.half_window_samples",
    "smote.target",
    "smote.k",
    "smote.after_split",
    "split.train_fraction",
    "split.seed",
    "cv.folds",
    "bench.reps",
    "bench.warmup",
    "bench.per_class",
    "run.threads",
    "run.out_dir",
];

/// Every accepted key, in the order of the resolved rendering.
pub fn all_keys() -> Vec<String> {
    let mut keys: Vec<String> = KEYS.iter().map(|k| k.to_string()).collect();
    keys.extend(TRAIN_FIELDS.iter().map(|f| format!("train.{f}")));
    for kind in ModelKind::ALL {
        keys.extend(TRAIN_FIELDS.iter().map(|f| format!("train.{kind}.{f}")));
    }
    keys
}

pub fn env_name(key: &str) -> String {
    let mut s = String::from(ENV_PREFIX);
    s.extend(key.chars().map(|c| match c {
        '.' | '-' => '_',
        c => c.to_ascii_uppercase(),
    }));
    s
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse `{value}`")))
}

/// Prefixes a configuration error with where the setting came from.
fn located(place: &str, e: Error) -> Error {
    match e {
        Error::InvalidConfig(m) => Error::InvalidConfig(format!("{place}: {m}")),
        other => other,
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "{key}: expected true or false, got `{value}`"
        ))),
    }
}

fn set_train_field(t: &mut TrainConfig, key: &str, field: &str, value: &str) -> Result<()> {
    match field {
        "epochs" => t.epochs = parse(key, value)?,
        "batch_size" => t.batch_size = parse(key, value)?,
        "learning_rate" => t.learning_rate = parse(key, value)?,
        "optimizer" => {
            t.optimizer = match value.trim() {
                "adam" => Optimizer::adam(),
                "sgd" => Optimizer::Sgd,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "{key}: unknown optimizer `{other}` (adam, sgd)"
                    )))
                }
            }
        }
        "early_stop_patience" => t.early_stop_patience = parse(key, value)?,
        "validation_fraction" => t.validation_fraction = parse(key, value)?,
        "seed" => t.seed = parse(key, value)?,
        _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
    }
    Ok(())
}

fn train_field(t: &TrainConfig, field: &str) -> String {
    match field {
        "epochs" => t.epochs.to_string(),
        "batch_size" => t.batch_size.to_string(),
        "learning_rate" => t.learning_rate.to_string(),
        "optimizer" => t.optimizer.name().to_string(),
        "early_stop_patience" => t.early_stop_patience.to_string(),
        "validation_fraction" => t.validation_fraction.to_string(),
        "seed" => t.seed.to_string(),
        _ => unreachable!("train field list is closed"),
    }
}

impl RunConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "gen.sampling_rate_hz" => p.gen.sampling_rate_hz = parse(key, value)?,
            "gen.trial_length_s" => p.gen.trial_length_s = parse(key, value)?,
            "gen.classes" => {
                p.gen.classes = value
                    .split(',')
                    .map(|c| {
                        c.trim().parse::<EyeClass>().map_err(|_| {
                            Error::InvalidConfig(format!("{key}: unknown class `{c}`"))
                        })
                    })
                    .collect::<Result<_>>()?
            }
            "gen.trials_per_class" => p.gen.trials_per_class = parse(key, value)?,
            "gen.pulse_amplitude_min_v" => p.gen.pulse_amplitude_v.0 = parse(key, value)?,
            "gen.pulse_amplitude_max_v" => p.gen.pulse_amplitude_v.1 = parse(key, value)?,
            "gen.pulse_width_min_samples" => p.gen.pulse_width_samples.0 = parse(key, value)?,
            "gen.pulse_width_max_samples" => p.gen.pulse_width_samples.1 = parse(key, value)?,
            "gen.noise_std_v" => p.gen.noise_std_v = parse(key, value)?,
            "gen.drift_amplitude_v" => p.gen.drift_amplitude_v = parse(key, value)?,
            "gen.drift_freq_hz" => p.gen.drift_freq_hz = parse(key, value)?,
            "gen.seed" => p.gen.seed = parse(key, value)?,
            "preprocess.smoothing_window" => p.preprocess.smoothing_window = parse(key, value)?,
            "preprocess.highpass_order" => p.preprocess.highpass_order = parse(key, value)?,
            "preprocess.highpass_cutoff_hz" => p.preprocess.highpass_cutoff_hz = parse(key, value)?,
            "preprocess.wavelet" => {
                p.preprocess.wavelet = parse_bool(key, value)?.then(WaveletConfig::default)
            }
            "peaks.height_v" => p.peaks.height_v = parse(key, value)?,
            "peaks.prominence_v" => p.peaks.prominence_v = parse(key, value)?,
            "peaks.min_distance_samples" => p.peaks.min_distance_samples = parse(key, value)?,
            "peaks.half_window_samples" => p.peaks.half_window_samples = parse(key, value)?,
            "smote.target" => p.smote_target = parse(key, value)?,
            "smote.k" => p.smote_k = parse(key, value)?,
            "smote.after_split" => p.smote_after_split = parse_bool(key, value)?,
            "split.train_fraction" => p.train_fraction = parse(key, value)?,
            "split.seed" => p.seed = parse(key, value)?,
            "cv.folds" => p.cv_folds = parse(key, value)?,
            "run.threads" => p.threads = parse(key, value)?,
            "bench.reps" => self.bench_reps = parse(key, value)?,
            "bench.warmup" => self.bench_warmup = parse(key, value)?,
            "bench.per_class" => self.bench_per_class = parse(key, value)?,
            "run.out_dir" => self.out_dir = value.trim().to_string(),
            _ => return self.set_train(key, value),
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, value: &str) -> Result<()> {
        let unknown = || Error::InvalidConfig(format!("unknown key `{key}`"));
        let rest = key.strip_prefix("train.").ok_or_else(unknown)?;
        match rest.split_once('.') {
            None => {
                set_train_field(&mut self.pipeline.train, key, rest, value)?;
                // Model-specific settings start from the shared ones, so a
                // later shared change must reach fields they did not set.
                for t in self.model_train.values_mut() {
                    set_train_field(t, key, rest, value)?;
                }
                Ok(())
            }
            Some((model, field)) => {
                let kind: ModelKind = model.parse().map_err(|_| unknown())?;
                let base = self.pipeline.train.clone();
                let t = self.model_train.entry(kind).or_insert(base);
                set_train_field(t, key, field, value)
            }
        }
    }

    /// Training settings of one model kind.
    pub fn train_for(&self, kind: ModelKind) -> TrainConfig {
        self.model_train
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| self.pipeline.train.clone())
    }

    /// The pipeline settings used to train `kind`.
    pub fn pipeline_for(&self, kind: ModelKind) -> PipelineConfig {
        PipelineConfig {
            train: self.train_for(kind),
            ..self.pipeline.clone()
        }
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are skipped;
    /// a key may appear only once.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("{source}:{}: expected key=value", n + 1))
            })?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::InvalidConfig(format!(
                    "{source}:{}: key `{k}` given twice",
                    n + 1
                )));
            }
            self.set(k, v)
                .map_err(|e| located(&format!("{source}:{}", n + 1), e))?;
        }
        Ok(())
    }

    /// Applies every `EOGC_*` variable that names a known key. Shared
    /// training keys are applied before model-specific ones.
    pub fn apply_env(&mut self, vars: &BTreeMap<String, String>) -> Result<()> {
        let keys = all_keys();
        let known: std::collections::BTreeSet<String> = keys.iter().map(|k| env_name(k)).collect();
        for name in vars
            .keys()
            .filter(|n| n.starts_with(ENV_PREFIX) && *n != CONFIG_ENV)
        {
            if !known.contains(name) {
                return Err(Error::InvalidConfig(format!(
                    "environment variable {name} does not name a config key"
                )));
            }
        }
        for key in keys {
            if let Some(v) = vars.get(&env_name(&key)) {
                self.set(&key, v).map_err(|e| located(&env_name(&key), e))?;
            }
        }
        Ok(())
    }

    /// Defaults, then `path` if given, then the environment.
    pub fn load(path: Option<&Path>, vars: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", p.display()))
            })?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        cfg.apply_env(vars)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        for t in self.model_train.values() {
            t.validate()?;
        }
        if self.bench_reps < 1 || self.bench_per_class < 1 {
            return Err(Error::InvalidConfig(
                "bench.reps and bench.per_class must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key=value` per line. Parsing
    /// the rendering back gives an equal config.
    pub fn render(&self) -> String {
        let p = &self.pipeline;
        let g = &p.gen;
        let classes: Vec<&str> = g.classes.iter().map(|c| c.name()).collect();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("gen.sampling_rate_hz", g.sampling_rate_hz.to_string());
        put("gen.trial_length_s", g.trial_length_s.to_string());
        put("gen.classes", classes.join(","));
        put("gen.trials_per_class", g.trials_per_class.to_string());
        put(
            "gen.pulse_amplitude_min_v",
            g.pulse_amplitude_v.0.to_string(),
        );
        put(
            "gen.pulse_amplitude_max_v",
            g.pulse_amplitude_v.1.to_string(),
        );
        put(
            "gen.pulse_width_min_samples",
            g.pulse_width_samples.0.to_string(),
        );
        put(
            "gen.pulse_width_max_samples",
            g.pulse_width_samples.1.to_string(),
        );
        put("gen.noise_std_v", g.noise_std_v.to_string());
        put("gen.drift_amplitude_v", g.drift_amplitude_v.to_string());
        put("gen.drift_freq_hz", g.drift_freq_hz.to_string());
        put("gen.seed", g.seed.to_string());
        put(
            "preprocess.smoothing_window",
            p.preprocess.smoothing_window.to_string(),
        );
        put(
            "preprocess.highpass_order",
            p.preprocess.highpass_order.to_string(),
        );
        put(
            "preprocess.highpass_cutoff_hz",
            p.preprocess.highpass_cutoff_hz.to_string(),
        );
        put(
            "preprocess.wavelet",
            p.preprocess.wavelet.is_some().to_string(),
        );
        put("peaks.height_v", p.peaks.height_v.to_string());
        put("peaks.prominence_v", p.peaks.prominence_v.to_string());
        put(
            "peaks.min_distance_samples",
            p.peaks.min_distance_samples.to_string(),
        );
        put(
            "peaks.half_window_samples",
            p.peaks.half_window_samples.to_string(),
        );
        put("smote.target", p.smote_target.to_string());
        put("smote.k", p.smote_k.to_string());
        put("smote.after_split", p.smote_after_split.to_string());
        put("split.train_fraction", p.train_fraction.to_string());
        put("split.seed", p.seed.to_string());
        put("cv.folds", p.cv_folds.to_string());
        put("bench.reps", self.bench_reps.to_string());
        put("bench.warmup", self.bench_warmup.to_string());
        put("bench.per_class", self.bench_per_class.to_string());
        put("run.threads", p.threads.to_string());
        put("run.out_dir", self.out_dir.clone());
        for f in TRAIN_FIELDS {
            put(&format!("train.{f}"), train_field(&p.train, f));
        }
        for (kind, t) in &self.model_train {
            for f in TRAIN_FIELDS {
                let v = train_field(t, f);
                if v != train_field(&p.train, f) {
                    put(&format!("train.{kind}.{f}"), v);
                }
            }
        }
        s
    }
}
