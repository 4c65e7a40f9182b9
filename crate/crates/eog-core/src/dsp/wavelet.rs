//! Orthogonal discrete wavelet transform (periodized) and threshold denoising.

use super::smooth::median;
use crate::error::{Error, Result};

/// Daubechies bases. The number is the count of vanishing moments, so `Db4`
/// has eight taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wavelet {
    Haar,
    Db2,
    Db4,
}

const HAAR: [f64; 2] = [
    std::f64::consts::FRAC_1_SQRT_2,
    std::f64::consts::FRAC_1_SQRT_2,
];

const DB2: [f64; 4] = [
    -0.129_409_522_550_921_45,
    0.224_143_868_041_857_35,
    0.836_516_303_737_469,
    0.482_962_913_144_690_25,
];

const DB4: [f64; 8] = [
    -0.010_597_401_784_997_278,
    0.032_883_011_666_982_945,
    0.030_841_381_835_986_965,
    -0.187_034_811_718_881_14,
    -0.027_983_769_416_983_85,
    0.630_880_767_929_590_4,
    0.714_846_570_552_541_5,
    0.230_377_813_308_855_23,
];

impl Wavelet {
    /// Decomposition low-pass filter.
    pub fn lowpass(self) -> &'static [f64] {
        match self {
            Wavelet::Haar => &HAAR,
            Wavelet::Db2 => &DB2,
            Wavelet::Db4 => &DB4,
        }
    }

    /// Decomposition high-pass filter (quadrature mirror of the low-pass).
    pub fn highpass(self) -> Vec<f64> {
        let h = self.lowpass();
        let l = h.len();
        (0..l)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } * h[l - 1 - k])
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            Wavelet::Haar => "haar",
            Wavelet::Db2 => "db2",
            Wavelet::Db4 => "db4",
        }
    }
}

impl std::str::FromStr for Wavelet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(Wavelet::Haar),
            "db2" => Ok(Wavelet::Db2),
            "db4" => Ok(Wavelet::Db4),
            other => Err(Error::config(format!("unsupported wavelet `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdRule {
    /// `sigma * sqrt(2 ln N)` with `sigma = MAD(finest details) / 0.6745`.
    Universal,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Soft,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletConfig {
    pub basis: Wavelet,
    pub levels: usize,
    pub threshold_rule: ThresholdRule,
    pub mode: ThresholdMode,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            basis: Wavelet::Db4,
            levels: 4,
            threshold_rule: ThresholdRule::Universal,
            mode: ThresholdMode::Soft,
        }
    }
}

impl WaveletConfig {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::config("wavelet levels must be at least 1"));
        }
        let max = if len < 2 { 0 } else { len.ilog2() as usize };
        if self.levels > max {
            return Err(Error::input(format!(
                "{} wavelet levels exceed the decomposable depth {max} of a {len}-sample signal",
                self.levels
            )));
        }
        if let ThresholdRule::Fixed(t) = self.threshold_rule {
            if !(t >= 0.0) {
                return Err(Error::config(
                    "fixed wavelet threshold must be non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// One analysis step with periodic extension. `x.len()` must be even.
pub fn dwt_step(x: &[f64], basis: Wavelet) -> (Vec<f64>, Vec<f64>) {
    let h = basis.lowpass();
    let g = basis.highpass();
    let n = x.len();
    let half = n / 2;
    let mut approx = vec![0.0; half];
    let mut detail = vec![0.0; half];
    for i in 0..half {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..h.len() {
            let v = x[(2 * i + k) % n];
            a += h[k] * v;
            d += g[k] * v;
        }
        approx[i] = a;
        detail[i] = d;
    }
    (approx, detail)
}

/// Inverse of [`dwt_step`] (the transform is orthonormal, so this is its
/// transpose).
pub fn idwt_step(approx: &[f64], detail: &[f64], basis: Wavelet) -> Vec<f64> {
    let h = basis.lowpass();
    let g = basis.highpass();
    let n = approx.len() * 2;
    let mut x = vec![0.0; n];
    for i in 0..approx.len() {
        for k in 0..h.len() {
            x[(2 * i + k) % n] += h[k] * approx[i] + g[k] * detail[i];
        }
    }
    x
}

fn threshold(v: f64, t: f64, mode: ThresholdMode) -> f64 {
    match mode {
        ThresholdMode::Hard => {
            if v.abs() > t {
                v
            } else {
                0.0
            }
        }
        ThresholdMode::Soft => v.signum() * (v.abs() - t).max(0.0),
    }
}

/// Multi-level decomposition, detail thresholding and reconstruction.
///
/// Signals whose length is not a multiple of `2^levels` are extended by
/// half-sample symmetric reflection at the end; the extension is cropped
/// after reconstruction.
pub fn wavelet_denoise(x: &[f64], cfg: &WaveletConfig) -> Result<Vec<f64>> {
    cfg.validate(x.len())?;
    let n = x.len();
    let block = 1usize << cfg.levels;
    let m = n.div_ceil(block) * block;
    let mut work = x.to_vec();
    for k in 0..m - n {
        work.push(x[n - 1 - k]);
    }

    let mut details = Vec::with_capacity(cfg.levels);
    let mut approx = work;
    for _ in 0..cfg.levels {
        let (a, d) = dwt_step(&approx, cfg.basis);
        details.push(d);
        approx = a;
    }

    let t = match cfg.threshold_rule {
        ThresholdRule::Fixed(t) => t,
        ThresholdRule::Universal => {
            let abs: Vec<f64> = details[0].iter().map(|v| v.abs()).collect();
            let sigma = median(&abs)? / 0.6745;
            sigma * (2.0 * (n as f64).ln()).sqrt()
        }
    };
    for d in details.iter_mut() {
        for v in d.iter_mut() {
            *v = threshold(*v, t, cfg.mode);
        }
    }

    for d in details.iter().rev() {
        approx = idwt_step(&approx, d, cfg.basis);
    }
    approx.truncate(n);
    Ok(approx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Haar, Wavelet::Db2, Wavelet::Db4] {
            let h = w.lowpass();
            let sum: f64 = h.iter().sum();
            assert!((sum - 2f64.sqrt()).abs() < 1e-10, "{w:?}");
            for shift in (0..h.len()).step_by(2) {
                let dot: f64 = (0..h.len() - shift).map(|k| h[k] * h[k + shift]).sum();
                let want = if shift == 0 { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "{w:?} shift {shift}");
            }
        }
    }

    #[test]
    fn zero_threshold_reconstructs() {
        let x: Vec<f64> = (0..1000).map(|i| ((i * 37 % 101) as f64).sin()).collect();
        for basis in [Wavelet::Haar, Wavelet::Db2, Wavelet::Db4] {
            let cfg = WaveletConfig {
                basis,
                threshold_rule: ThresholdRule::Fixed(0.0),
                ..WaveletConfig::default()
            };
            let y = wavelet_denoise(&x, &cfg).unwrap();
            assert_eq!(y.len(), x.len());
            for (a, b) in x.iter().zip(&y) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn zero_stays_zero() {
        let y = wavelet_denoise(&[0.0; 333], &WaveletConfig::default()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_many_levels() {
        let cfg = WaveletConfig {
            levels: 6,
            ..WaveletConfig::default()
        };
        assert!(wavelet_denoise(&[1.0; 64], &cfg).is_ok());
        assert!(wavelet_denoise(&[1.0; 63], &cfg).is_err());
    }

    #[test]
    fn universal_soft_threshold_reduces_error() {
        let n = 512;
        let clean: Vec<f64> = (0..n)
            .map(|i| {
                let off = i as f64 - 256.0;
                if off.abs() <= 50.0 {
                    0.5 * 0.5 * (1.0 + (std::f64::consts::PI * off / 50.0).cos())
                } else {
                    0.0
                }
            })
            .collect();
        let normal = Normal::new(0.0, 0.05).unwrap();
        let mse = |a: &[f64]| -> f64 {
            a.iter()
                .zip(&clean)
                .map(|(x, c)| (x - c).powi(2))
                .sum::<f64>()
                / n as f64
        };
        for seed in 0..100u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let noisy: Vec<f64> = clean.iter().map(|c| c + normal.sample(&mut rng)).collect();
            let den = wavelet_denoise(&noisy, &WaveletConfig::default()).unwrap();
            assert!(mse(&den) < mse(&noisy), "seed {seed}");
        }
    }
}
