//! Butterworth high-pass design in second-order sections and zero-phase
//! forward/backward filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad, normalized so that `a0 = 1`:
/// `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
///
/// First-order sections use `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Sos {
    fn response(&self, zinv: Complex64) -> Complex64 {
        let zinv2 = zinv * zinv;
        let num = self.b[0] + zinv * self.b[1] + zinv2 * self.b[2];
        let den = Complex64::new(1.0, 0.0) + zinv * self.a[0] + zinv2 * self.a[1];
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Poles of the section (one or two).
    pub fn poles(&self) -> Vec<Complex64> {
        let (a1, a2) = (self.a[0], self.a[1]);
        if a2 == 0.0 {
            return vec![Complex64::new(-a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Direct-form II transposed state after an infinitely long unit step.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }
}

/// A digital Butterworth high-pass, factored into second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterDesign {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sampling_rate_hz: f64,
    pub sections: Vec<Sos>,
}

/// Designs an `order`-th order Butterworth high-pass with the bilinear
/// transform. The cutoff is prewarped so the digital -3 dB point lands
/// exactly on `cutoff_hz`.
pub fn design_highpass(
    order: usize,
    cutoff_hz: f64,
    sampling_rate_hz: f64,
) -> Result<FilterDesign> {
    if order < 1 {
        return Err(Error::config("filter order must be at least 1"));
    }
    if !(sampling_rate_hz > 0.0) {
        return Err(Error::config("sampling rate must be positive"));
    }
    let nyquist = sampling_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::config(format!(
            "cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({nyquist} Hz)"
        )));
    }

    let fs2 = 2.0 * sampling_rate_hz;
    let warped = fs2 * (PI * cutoff_hz / sampling_rate_hz).tan();
    let n = order as f64;

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    // Analog low-pass prototype poles in the upper half of the left
    // half-plane; their conjugates are implied. The real pole (odd order)
    // sits at k = (order + 1) / 2.
    for k in 1..=order.div_ceil(2) {
        let theta = PI * (2 * k + order - 1) as f64 / (2.0 * n);
        let proto = Complex64::from_polar(1.0, theta);
        // s -> warped / s maps low-pass to high-pass (zeros move to s = 0)
        let s = warped / proto;
        let z = (fs2 + s) / (fs2 - s);
        let is_real = 2 * k == order + 1;
        if is_real {
            let a1 = -z.re;
            let g = (1.0 - a1) / 2.0;
            sections.push(Sos {
                b: [g, -g, 0.0],
                a: [a1, 0.0],
            });
        } else {
            let a1 = -2.0 * z.re;
            let a2 = z.norm_sqr();
            // unit gain at Nyquist, where the analog high-pass has gain 1
            let g = (1.0 - a1 + a2) / 4.0;
            sections.push(Sos {
                b: [g, -2.0 * g, g],
                a: [a1, a2],
            });
        }
    }
    // Poles nearest the unit circle go last.
    sections.sort_by(|x, y| {
        let rx = x.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        let ry = y.poles().iter().map(|p| p.norm()).fold(0.0, f64::max);
        rx.total_cmp(&ry)
    });

    Ok(FilterDesign {
        order,
        cutoff_hz,
        sampling_rate_hz,
        sections,
    })
}

impl FilterDesign {
    /// Complex response of the cascade at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sampling_rate_hz;
        let zinv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(zinv))
    }

    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        self.response(freq_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(Sos::poles).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Samples of edge padding per side used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    /// Runs the cascade once over `x`, starting from the step steady state
    /// scaled by `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else {
            return;
        };
        let mut level = x0;
        for s in &self.sections {
            let [mut z1, mut z2] = s.step_state();
            z1 *= level;
            z2 *= level;
            level *= s.dc_gain();
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Forward pass followed by a backward pass.
    fn forward_backward(&self, ext: &[f64]) -> Vec<f64> {
        let mut y = ext.to_vec();
        self.run(&mut y);
        y.reverse();
        self.run(&mut y);
        y.reverse();
        y
    }
}

/// Analytic squared magnitude of an analog Butterworth high-pass.
pub fn butterworth_highpass_gain2(freq_hz: f64, cutoff_hz: f64, order: usize) -> f64 {
    if freq_hz == 0.0 {
        return 0.0;
    }
    1.0 / (1.0 + (cutoff_hz / freq_hz).powi(2 * order as i32))
}

/// Zero-phase filtering.
///
/// The signal is extended at both ends by an odd (point-symmetric)
/// reflection of `3 * order` samples, each pass starts from the step steady
/// state, and the result is the mean of the forward-backward and the
/// backward-forward outputs. The magnitude response is `|H|^2` with zero
/// phase, and filtering a time-reversed signal yields exactly the reversed
/// output.
pub fn filtfilt(design: &FilterDesign, x: &[f64]) -> Result<Vec<f64>> {
    let pad = design.pad_len();
    let n = x.len();
    if n <= 2 * pad {
        return Err(Error::input(format!(
            "signal of {n} samples is too short for zero-phase filtering (needs > {})",
            2 * pad
        )));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));

    let fb = design.forward_backward(&ext);
    ext.reverse();
    let mut bf = design.forward_backward(&ext);
    bf.reverse();

    Ok(fb[pad..pad + n]
        .iter()
        .zip(&bf[pad..pad + n])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_design() -> FilterDesign {
        design_highpass(5, 0.2, 125.0).unwrap()
    }

    #[test]
    fn section_layout() {
        let d = reference_design();
        assert_eq!(d.sections.len(), 3);
        assert_eq!(d.sections.iter().filter(|s| s.a[1] == 0.0).count(), 1);
        assert!(d.is_stable());
        assert_eq!(d.poles().len(), 5);
    }

    #[test]
    fn gain_at_dc_cutoff_and_passband() {
        let d = reference_design();
        let dc_db = 20.0 * d.magnitude(0.0).max(1e-300).log10();
        assert!(dc_db <= -100.0, "DC gain {dc_db} dB");
        let cut_db = 20.0 * d.magnitude(0.2).log10();
        assert!((cut_db + 3.0103).abs() < 0.05, "cutoff gain {cut_db} dB");
        assert!((d.magnitude(10.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matches_analytic_law_on_log_grid() {
        let d = reference_design();
        for i in 0..50 {
            let f = 0.01 * 1000f64.powf(i as f64 / 49.0);
            let got = d.magnitude(f).powi(2);
            let want = butterworth_highpass_gain2(f, 0.2, 5);
            assert!(((got - want) / want).abs() < 0.01, "f={f}: {got} vs {want}");
        }
    }

    #[test]
    fn other_orders_are_stable() {
        for order in 1..=8 {
            let d = design_highpass(order, 1.0, 100.0).unwrap();
            assert!(d.is_stable());
            assert!((d.magnitude(1.0).powi(2) - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn design_errors() {
        assert!(design_highpass(0, 0.2, 125.0).is_err());
        assert!(design_highpass(5, 62.5, 125.0).is_err());
        assert!(design_highpass(5, 0.0, 125.0).is_err());
    }

    #[test]
    fn zero_in_zero_out() {
        let d = reference_design();
        assert!(filtfilt(&d, &[0.0; 500]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetric_input_symmetric_output() {
        let d = reference_design();
        let n = 801;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - 400.0) / 125.0;
                (-t * t).exp() + 0.3 * (3.0 * t).cos()
            })
            .collect();
        let y = filtfilt(&d, &x).unwrap();
        for i in 0..n {
            assert!((y[i] - y[n - 1 - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn removes_offset_and_keeps_phase() {
        let d = reference_design();
        let fs = 125.0;
        let n = 7500;
        let sine: Vec<f64> = (0..n)
            .map(|i| (2.0 * PI * 5.0 * i as f64 / fs).sin())
            .collect();
        let x: Vec<f64> = sine.iter().map(|v| v + 0.3).collect();
        let y = filtfilt(&d, &x).unwrap();
        let gain = d.magnitude(5.0).powi(2);
        // the slowest pole pair decays with a ~2.6 s time constant, so the
        // edge transients are gone 12 s in
        let mid = 1500..n - 1500;
        for i in mid.clone() {
            assert!((y[i] - gain * sine[i]).abs() < 5e-3, "i={i}");
        }
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        let ratio = rms(&y[mid.clone()]) / rms(&sine[mid]);
        assert!((ratio - 1.0).abs() < 0.01, "amplitude ratio {ratio}");
        // cross-correlation peaks at lag 0
        let xc = |lag: i64| -> f64 {
            (200..n as i64 - 200)
                .map(|i| y[i as usize] * sine[(i + lag) as usize])
                .sum()
        };
        let best = (-12..=12).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn too_short_is_rejected() {
        let d = reference_design();
        assert!(filtfilt(&d, &[1.0; 30]).is_err());
        assert!(filtfilt(&d, &[1.0; 31]).is_ok());
    }
}
