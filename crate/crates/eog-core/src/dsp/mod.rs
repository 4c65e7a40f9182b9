//! Signal conditioning: smoothing, zero-phase high-pass filtering, median
//! detrending, optional wavelet denoising and SNR utilities.

mod filter;
mod smooth;
mod snr;
mod wavelet;

pub use filter::{butterworth_highpass_gain2, design_highpass, filtfilt, FilterDesign, Sos};
pub use smooth::{median, median_detrend, moving_average};
pub use snr::{average_cycles, power, snr_db};
pub use wavelet::{
    dwt_step, idwt_step, wavelet_denoise, ThresholdMode, ThresholdRule, Wavelet, WaveletConfig,
};

use crate::error::{Error, Result};
use crate::synthgen::SignalRecord;

/// Settings for [`preprocess`]. The defaults are the executed pipeline:
/// 30-sample moving average, 5th-order 0.2 Hz Butterworth high-pass applied
/// with zero phase, then median removal.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub smoothing_window: usize,
    pub highpass_order: usize,
    pub highpass_cutoff_hz: f64,
    /// When set, wavelet denoising replaces the moving average.
    pub wavelet: Option<WaveletConfig>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            smoothing_window: 30,
            highpass_order: 5,
            highpass_cutoff_hz: 0.2,
            wavelet: None,
        }
    }
}

impl PreprocessConfig {
    pub fn with_wavelet(mut self, use_wavelet: bool) -> Self {
        self.wavelet = use_wavelet.then(WaveletConfig::default);
        self
    }
}

/// A preprocessing chain with its filter designed once, for repeated use.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cfg: PreprocessConfig,
    design: FilterDesign,
}

impl Preprocessor {
    pub fn new(cfg: PreprocessConfig, sampling_rate_hz: f64) -> Result<Self> {
        let design = design_highpass(cfg.highpass_order, cfg.highpass_cutoff_hz, sampling_rate_hz)?;
        Ok(Preprocessor { cfg, design })
    }

    pub fn design(&self) -> &FilterDesign {
        &self.design
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    /// Runs the chain on one channel.
    pub fn channel(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Err(Error::input("empty channel"));
        }
        let smoothed = match &self.cfg.wavelet {
            Some(w) => wavelet_denoise(x, w)?,
            None => moving_average(x, self.cfg.smoothing_window)?,
        };
        let filtered = filtfilt(&self.design, &smoothed)?;
        median_detrend(&filtered)
    }

    pub fn apply(&self, record: &SignalRecord) -> Result<SignalRecord> {
        if (record.sampling_rate_hz - self.design.sampling_rate_hz).abs() > 1e-9 {
            return Err(Error::input(format!(
                "record sampled at {} Hz, filter designed for {} Hz",
                record.sampling_rate_hz, self.design.sampling_rate_hz
            )));
        }
        if record.ch_h.len() != record.ch_v.len() {
            return Err(Error::input("channel lengths differ"));
        }
        Ok(SignalRecord {
            ch_h: self.channel(&record.ch_h)?,
            ch_v: self.channel(&record.ch_v)?,
            ..record.clone()
        })
    }
}

/// Smooth (or wavelet-denoise), high-pass with zero phase, remove the median;
/// per channel. Label and metadata pass through.
pub fn preprocess(record: &SignalRecord, cfg: &PreprocessConfig) -> Result<SignalRecord> {
    Preprocessor::new(cfg.clone(), record.sampling_rate_hz)?.apply(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{gen_trial, GenSpec};
    use crate::EyeClass;

    #[test]
    fn stare_drift_is_removed() {
        let spec = GenSpec::default();
        for id in 0..5 {
            let t = gen_trial(EyeClass::Stare, &spec, id).unwrap();
            let p = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
            let bound = 3.0 * spec.noise_std_v;
            for v in p.ch_h.iter().chain(&p.ch_v) {
                assert!(v.abs() <= bound, "{v} exceeds {bound}");
            }
        }
    }

    #[test]
    fn zero_record_and_determinism() {
        let rec = SignalRecord {
            label: EyeClass::Up,
            ch_h: vec![0.0; 600],
            ch_v: vec![0.0; 600],
            sampling_rate_hz: 125.0,
            trial_id: 4,
        };
        let out = preprocess(&rec, &PreprocessConfig::default()).unwrap();
        assert_eq!(out, rec);
        let t = gen_trial(EyeClass::UpLeft, &GenSpec::default(), 2).unwrap();
        let a = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
        let b = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
        assert_eq!(a, b);
        let w = PreprocessConfig::default().with_wavelet(true);
        assert_eq!(
            preprocess(&t.record, &w).unwrap(),
            preprocess(&t.record, &w).unwrap()
        );
    }

    #[test]
    fn constant_offsets_vanish() {
        let t = gen_trial(EyeClass::Down, &GenSpec::default(), 1).unwrap();
        let base = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
        for c in [-1.0, 0.37, 1.0] {
            let mut shifted = t.record.clone();
            shifted.ch_h.iter_mut().for_each(|v| *v += c);
            shifted.ch_v.iter_mut().for_each(|v| *v += c);
            let out = preprocess(&shifted, &PreprocessConfig::default()).unwrap();
            for (a, b) in out
                .ch_h
                .iter()
                .zip(&base.ch_h)
                .chain(out.ch_v.iter().zip(&base.ch_v))
            {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rate_mismatch_is_rejected() {
        let pre = Preprocessor::new(PreprocessConfig::default(), 250.0).unwrap();
        let t = gen_trial(EyeClass::Up, &GenSpec::default(), 0).unwrap();
        assert!(pre.apply(&t.record).is_err());
    }
}
