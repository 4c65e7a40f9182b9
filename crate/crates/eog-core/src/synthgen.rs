//! Synthetic two-channel EOG trials.
//!
//! Each non-Stare trial carries a train of raised-cosine (Hann) lobes whose
//! sign and channel follow the class polarity mapping: Right drives the
//! horizontal channel positive, Left negative, Up the vertical channel
//! positive, Down negative, diagonals both channels at once. Blinks are
//! narrower (0.4x) and taller (1.5x) vertical lobes. Every trial also gets
//! white Gaussian noise and a slow sinusoidal baseline drift on both
//! channels. Pulse centers are recorded in a placement log so detection can be
//! scored against ground truth.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::class::EyeClass;
use crate::error::{Error, Result};
use crate::rng;

/// Smallest detectable peak height used by the default segmenter, in volts.
pub const DETECTION_HEIGHT_V: f64 = 0.10;

/// Distance from either trial edge to the earliest/latest nominal pulse center.
const EDGE_MARGIN: usize = 200;
/// Nominal spacing between consecutive pulse centers.
const PULSE_SPACING: usize = 320;
/// Uniform jitter applied to each pulse center, in samples.
const CENTER_JITTER: i64 = 20;

const BLINK_WIDTH_FACTOR: f64 = 0.4;
const BLINK_AMPLITUDE_FACTOR: f64 = 1.5;
const DIAGONAL_JITTER: (f64, f64) = (0.8, 1.2);

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub sampling_rate_hz: f64,
    pub trial_length_s: f64,
    pub classes: Vec<EyeClass>,
    pub trials_per_class: usize,
    /// Inclusive range the per-pulse amplitude is drawn from.
    pub pulse_amplitude_v: (f64, f64),
    /// Inclusive range of full lobe widths, in samples.
    pub pulse_width_samples: (usize, usize),
    pub noise_std_v: f64,
    pub drift_amplitude_v: f64,
    pub drift_freq_hz: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            sampling_rate_hz: 125.0,
            trial_length_s: 20.0,
            classes: EyeClass::ALL.to_vec(),
            trials_per_class: 15,
            pulse_amplitude_v: (0.3, 0.8),
            pulse_width_samples: (60, 120),
            noise_std_v: 0.02,
            drift_amplitude_v: 0.1,
            drift_freq_hz: 0.05,
            seed: 0x0E06_2026,
        }
    }
}

impl GenSpec {
    pub fn trial_samples(&self) -> usize {
        (self.sampling_rate_hz * self.trial_length_s).round() as usize
    }

    /// Number of pulses every non-Stare trial of this spec carries.
    pub fn pulses_per_trial(&self) -> usize {
        let n = self.trial_samples();
        let usable = n.saturating_sub(2 * EDGE_MARGIN + CENTER_JITTER as usize);
        usable / PULSE_SPACING + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate_hz > 0.0) || !self.sampling_rate_hz.is_finite() {
            return Err(Error::config("sampling_rate_hz must be positive"));
        }
        if self.trials_per_class < 1 {
            return Err(Error::config("trials_per_class must be at least 1"));
        }
        if self.classes.is_empty() {
            return Err(Error::config("class list is empty"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].contains(c) {
                return Err(Error::config(format!("class {c} listed twice")));
            }
        }
        let (lo, hi) = self.pulse_amplitude_v;
        if !(lo > DETECTION_HEIGHT_V) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::config(format!(
                "pulse amplitude range ({lo}, {hi}) must satisfy {DETECTION_HEIGHT_V} < lo <= hi"
            )));
        }
        let (wlo, whi) = self.pulse_width_samples;
        // Blink lobes are 0.4x as wide; keep them at least a few samples.
        if wlo < 10 || whi < wlo || whi > 2 * (EDGE_MARGIN - 40) {
            return Err(Error::config(format!(
                "pulse width range ({wlo}, {whi}) must satisfy 10 <= lo <= hi <= {}",
                2 * (EDGE_MARGIN - 40)
            )));
        }
        if !(self.noise_std_v >= 0.0) || !(self.drift_amplitude_v >= 0.0) {
            return Err(Error::config(
                "noise and drift amplitudes must be non-negative",
            ));
        }
        if !(self.drift_freq_hz >= 0.0) {
            return Err(Error::config("drift_freq_hz must be non-negative"));
        }
        if self.pulses_per_trial() < 3 || self.trial_samples() < 2 * EDGE_MARGIN {
            return Err(Error::config(format!(
                "trial of {} samples is too short for three pulses",
                self.trial_samples()
            )));
        }
        Ok(())
    }
}

/// A labeled two-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub label: EyeClass,
    /// Horizontal channel, volts.
    pub ch_h: Vec<f64>,
    /// Vertical channel, volts.
    pub ch_v: Vec<f64>,
    pub sampling_rate_hz: f64,
    pub trial_id: u64,
}

impl SignalRecord {
    pub fn len(&self) -> usize {
        self.ch_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ch_h.is_empty()
    }
}

/// Ground truth for one generated pulse. Amplitudes are signed; a channel
/// that carries no lobe has amplitude 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub center_index: usize,
    pub amplitude_h: f64,
    pub amplitude_v: f64,
    pub width_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrial {
    pub record: SignalRecord,
    pub placements: Vec<Placement>,
}

/// Adds a Hann lobe of full width `width` and peak `amp` centered on `center`.
pub fn add_hann_lobe(x: &mut [f64], center: usize, width: usize, amp: f64) {
    if amp == 0.0 || width == 0 {
        return;
    }
    let half = width as i64 / 2;
    for off in -half..=half {
        let i = center as i64 + off;
        if i < 0 || i as usize >= x.len() {
            continue;
        }
        let phase = 2.0 * PI * off as f64 / width as f64;
        x[i as usize] += amp * 0.5 * (1.0 + phase.cos());
    }
}

/// Generates one trial of `label`. The result depends only on
/// `(spec, label, trial_id)`.
pub fn gen_trial(label: EyeClass, spec: &GenSpec, trial_id: u64) -> Result<GeneratedTrial> {
    spec.validate()?;
    if !spec.classes.contains(&label) {
        return Err(Error::UnknownLabel(label.to_string()));
    }
    let n = spec.trial_samples();
    let fs = spec.sampling_rate_hz;
    let mut rng = rng::stream(spec.seed, &[label.index() as u64, trial_id]);
    let mut ch_h = vec![0.0; n];
    let mut ch_v = vec![0.0; n];
    let mut placements = Vec::new();

    let (sign_h, sign_v) = label.deflection();
    if label != EyeClass::Stare {
        for k in 0..spec.pulses_per_trial() {
            let jitter = rng.random_range(-CENTER_JITTER..=CENTER_JITTER);
            let center = (EDGE_MARGIN as i64 + (k * PULSE_SPACING) as i64 + jitter) as usize;
            let mut amp = rng.random_range(spec.pulse_amplitude_v.0..=spec.pulse_amplitude_v.1);
            let mut width =
                rng.random_range(spec.pulse_width_samples.0..=spec.pulse_width_samples.1);
            if label == EyeClass::Blink {
                width = (width as f64 * BLINK_WIDTH_FACTOR).round() as usize;
                amp *= BLINK_AMPLITUDE_FACTOR;
            }
            let ratio_h = if sign_h != 0 && sign_v != 0 {
                rng.random_range(DIAGONAL_JITTER.0..=DIAGONAL_JITTER.1)
            } else {
                1.0
            };
            let amplitude_h = f64::from(sign_h) * amp * ratio_h;
            let amplitude_v = f64::from(sign_v) * amp;
            add_hann_lobe(&mut ch_h, center, width, amplitude_h);
            add_hann_lobe(&mut ch_v, center, width, amplitude_v);
            placements.push(Placement {
                center_index: center,
                amplitude_h,
                amplitude_v,
                width_samples: width,
            });
        }
    }

    let phase_h = rng.random_range(0.0..2.0 * PI);
    let phase_v = rng.random_range(0.0..2.0 * PI);
    let w = 2.0 * PI * spec.drift_freq_hz / fs;
    for i in 0..n {
        ch_h[i] += spec.drift_amplitude_v * (w * i as f64 + phase_h).sin();
        ch_v[i] += spec.drift_amplitude_v * (w * i as f64 + phase_v).sin();
    }
    if spec.noise_std_v > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std_v)
            .map_err(|e| Error::config(format!("noise distribution: {e}")))?;
        for v in ch_h.iter_mut().chain(ch_v.iter_mut()) {
            *v += normal.sample(&mut rng);
        }
    }

    Ok(GeneratedTrial {
        record: SignalRecord {
            label,
            ch_h,
            ch_v,
            sampling_rate_hz: fs,
            trial_id,
        },
        placements,
    })
}

/// `trials_per_class` trials for every class of the spec, class-major.
///
/// Trial ids are unique across the dataset: `class_position * trials_per_class + i`.
pub fn gen_dataset(spec: &GenSpec) -> Result<Vec<GeneratedTrial>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.classes.len() * spec.trials_per_class);
    for (ci, &label) in spec.classes.iter().enumerate() {
        for i in 0..spec.trials_per_class {
            let id = (ci * spec.trials_per_class + i) as u64;
            out.push(gen_trial(label, spec, id)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trial files: `<stem>.csv` (samples), `<stem>.meta` (key=value) and
// `<stem>.placements.csv` (ground truth, optional on read).

/// Formats a float with 17 significant digits so it parses back bit-exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(format!("cannot parse {what} `{s}`")))
}

pub fn trial_stem(trial_id: u64) -> String {
    format!("trial_{trial_id:05}")
}

/// Writes the three trial files into `dir` and returns the samples path.
pub fn write_trial(
    dir: &Path,
    record: &SignalRecord,
    placements: Option<&[Placement]>,
    seed: u64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let stem = trial_stem(record.trial_id);
    let mut csv = String::with_capacity(record.len() * 56 + 16);
    csv.push_str("index,ch_h,ch_v\n");
    for (i, (h, v)) in record.ch_h.iter().zip(&record.ch_v).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", fmt_f64(*h), fmt_f64(*v));
    }
    let path = dir.join(format!("{stem}.csv"));
    fs::write(&path, csv)?;

    let meta = format!(
        "label={}\ntrial_id={}\nsampling_rate_hz={}\nseed={}\n",
        record.label, record.trial_id, record.sampling_rate_hz, seed
    );
    fs::write(dir.join(format!("{stem}.meta")), meta)?;

    if let Some(placements) = placements {
        let mut log = String::from("center_index,amplitude_h,amplitude_v\n");
        for p in placements {
            let _ = writeln!(
                log,
                "{},{},{}",
                p.center_index,
                fmt_f64(p.amplitude_h),
                fmt_f64(p.amplitude_v)
            );
        }
        fs::write(dir.join(format!("{stem}.placements.csv")), log)?;
    }
    Ok(path)
}

/// A trial read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedTrial {
    pub record: SignalRecord,
    pub seed: u64,
    pub placements: Option<Vec<Placement>>,
}

/// Reads `<stem>.csv` and its sidecars.
pub fn read_trial(csv_path: &Path) -> Result<LoadedTrial> {
    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "index,ch_h,ch_v" => {}
        other => {
            return Err(Error::format(format!(
                "{}: bad trial header {:?}",
                csv_path.display(),
                other
            )))
        }
    }
    let mut ch_h = Vec::new();
    let mut ch_v = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::format(format!("row {row}: expected 3 columns")));
        }
        ch_h.push(parse_f64(cols[1], "ch_h")?);
        ch_v.push(parse_f64(cols[2], "ch_v")?);
    }

    let stem = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format("trial path has no stem"))?;
    let dir = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let meta_text = fs::read_to_string(dir.join(format!("{stem}.meta")))?;
    let mut label = None;
    let mut trial_id = None;
    let mut fs_hz = None;
    let mut seed = 0u64;
    for line in meta_text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k.trim() {
            "label" => label = Some(v.trim().parse::<EyeClass>()?),
            "trial_id" => {
                trial_id = Some(
                    v.trim()
                        .parse::<u64>()
                        .map_err(|_| Error::format("trial_id"))?,
                )
            }
            "sampling_rate_hz" => fs_hz = Some(parse_f64(v, "sampling_rate_hz")?),
            "seed" => seed = v.trim().parse::<u64>().map_err(|_| Error::format("seed"))?,
            _ => {}
        }
    }
    let record = SignalRecord {
        label: label.ok_or_else(|| Error::format("metadata lacks label"))?,
        ch_h,
        ch_v,
        sampling_rate_hz: fs_hz.ok_or_else(|| Error::format("metadata lacks sampling_rate_hz"))?,
        trial_id: trial_id.ok_or_else(|| Error::format("metadata lacks trial_id"))?,
    };

    let placement_path = dir.join(format!("{stem}.placements.csv"));
    let placements = if placement_path.exists() {
        let text = fs::read_to_string(placement_path)?;
        let mut out = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::format("placement row needs 3 columns"));
            }
            out.push(Placement {
                center_index: cols[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::format("center_index"))?,
                amplitude_h: parse_f64(cols[1], "amplitude_h")?,
                amplitude_v: parse_f64(cols[2], "amplitude_v")?,
                width_samples: 0,
            });
        }
        Some(out)
    } else {
        None
    };
    Ok(LoadedTrial {
        record,
        seed,
        placements,
    })
}

/// Sample files of every trial in `dir`, sorted by name.
pub fn list_trials(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".csv") && !name.ends_with(".placements.csv")
        })
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> GenSpec {
        GenSpec {
            noise_std_v: 0.0,
            drift_amplitude_v: 0.0,
            ..GenSpec::default()
        }
    }

    #[test]
    fn right_trial_drives_horizontal_positive() {
        let t = gen_trial(EyeClass::Right, &GenSpec::default(), 0).unwrap();
        let max_h = t.record.ch_h.iter().cloned().fold(f64::MIN, f64::max);
        assert!(max_h > 0.10);
        // vertical carries only noise + drift
        let clean = gen_trial(EyeClass::Right, &quiet(), 0).unwrap();
        assert!(clean.record.ch_v.iter().all(|&v| v == 0.0));
        assert!(t.placements.len() >= 3);
    }

    #[test]
    fn noiseless_stare_is_zero() {
        let t = gen_trial(EyeClass::Stare, &quiet(), 0).unwrap();
        assert!(t
            .record
            .ch_h
            .iter()
            .chain(&t.record.ch_v)
            .all(|&v| v == 0.0));
        assert!(t.placements.is_empty());
    }

    #[test]
    fn down_left_minima_align_with_placements() {
        let t = gen_trial(EyeClass::DownLeft, &GenSpec::default(), 0).unwrap();
        for p in &t.placements {
            assert!(p.amplitude_h < 0.0 && p.amplitude_v < 0.0);
            let c = p.center_index;
            let lo = c - 10;
            let hi = c + 10;
            let min_h = t.record.ch_h[lo..hi]
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            let min_v = t.record.ch_v[lo..hi]
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            assert!(
                min_h < -0.10 && min_v < -0.10,
                "center {c}: {min_h} {min_v}"
            );
        }
    }

    #[test]
    fn pulses_are_spaced_and_inside() {
        let spec = GenSpec::default();
        for class in EyeClass::ALL {
            let t = gen_trial(class, &spec, 3).unwrap();
            for w in t.placements.windows(2) {
                assert!(w[1].center_index - w[0].center_index >= 280);
            }
            for p in &t.placements {
                assert!(p.center_index >= 140 + p.width_samples / 2);
                assert!(p.center_index + 140 + p.width_samples / 2 <= spec.trial_samples());
            }
        }
    }

    #[test]
    fn blink_is_narrower_and_taller() {
        let spec = quiet();
        let blink = gen_trial(EyeClass::Blink, &spec, 1).unwrap();
        for p in &blink.placements {
            assert!(p.width_samples <= 48 && p.width_samples >= 24);
            assert!(p.amplitude_v >= 0.45 - 1e-12);
        }
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let spec = GenSpec {
            trials_per_class: 2,
            ..GenSpec::default()
        };
        let a = gen_dataset(&spec).unwrap();
        let b = gen_dataset(&spec).unwrap();
        assert_eq!(a.len(), 20);
        assert_eq!(a, b);
        for class in EyeClass::ALL {
            assert_eq!(a.iter().filter(|t| t.record.label == class).count(), 2);
        }
        let other = gen_dataset(&GenSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a[3].record.ch_h, other[3].record.ch_h);
    }

    #[test]
    fn rejects_bad_specs() {
        let too_low = GenSpec {
            pulse_amplitude_v: (0.05, 0.5),
            ..GenSpec::default()
        };
        assert!(matches!(too_low.validate(), Err(Error::InvalidConfig(_))));
        let short = GenSpec {
            trial_length_s: 4.0,
            ..GenSpec::default()
        };
        assert!(short.validate().is_err());
        let no_trials = GenSpec {
            trials_per_class: 0,
            ..GenSpec::default()
        };
        assert!(no_trials.validate().is_err());
        let subset = GenSpec {
            classes: vec![EyeClass::Up],
            ..GenSpec::default()
        };
        assert!(matches!(
            gen_trial(EyeClass::Down, &subset, 0),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn trial_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t = gen_trial(EyeClass::UpRight, &GenSpec::default(), 12).unwrap();
        let path = write_trial(dir.path(), &t.record, Some(&t.placements), 99).unwrap();
        let back = read_trial(&path).unwrap();
        assert_eq!(back.record, t.record);
        assert_eq!(back.seed, 99);
        let pl = back.placements.unwrap();
        assert_eq!(pl.len(), t.placements.len());
        assert_eq!(pl[0].amplitude_h, t.placements[0].amplitude_h);
        assert_eq!(list_trials(dir.path()).unwrap(), vec![path]);
    }
}
