//! Peak detection against brute-force oracles and generator ground truth.

use eog_core::class::EyeClass;
use eog_core::dsp::{
    design_highpass, filtfilt, median, moving_average, preprocess, PreprocessConfig,
};
use eog_core::segment::{
    detect_cycles, find_peaks, local_maxima, prominence, segment_record, PeakParams, Polarity,
};
use eog_core::synthgen::{add_hann_lobe, gen_trial, GenSpec, SignalRecord};
use proptest::prelude::*;

/// Prominence by exhaustion: for every strictly higher sample and both
/// edges, the minimum between it and the peak; the highest such minimum is
/// the reference level.
fn brute_prominence(x: &[f64], i: usize) -> f64 {
    let h = x[i];
    let mut reference = f64::NEG_INFINITY;
    let targets = (0..x.len()).filter(|&j| x[j] > h).chain([0, x.len() - 1]);
    for j in targets {
        let (a, b) = if j < i { (j, i) } else { (i, j) };
        let lo = x[a..=b]
            .iter()
            .copied()
            .filter(|&v| v <= h)
            .fold(f64::INFINITY, f64::min);
        reference = reference.max(lo);
    }
    h - reference
}

fn params(height: f64, prom: f64, distance: usize) -> PeakParams {
    PeakParams {
        height_v: height,
        prominence_v: prom,
        min_distance_samples: distance,
        half_window_samples: 10,
    }
}

fn walk() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.5f64..0.5, 3..200).prop_map(|steps| {
        let mut acc = 0.0;
        steps
            .into_iter()
            .map(|s| {
                acc += s;
                acc
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prominence_matches_exhaustive_search(x in walk()) {
        for i in local_maxima(&x) {
            prop_assert!((prominence(&x, i) - brute_prominence(&x, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn peaks_pass_thresholds_and_dominate_rejects(
        x in walk(),
        height in -1.0f64..1.0,
        prom in 0.0f64..1.0,
        distance in 1usize..40,
    ) {
        let p = params(height, prom.max(1e-9), distance);
        let kept = find_peaks(&x, &p);
        let eligible: Vec<usize> = (1..x.len() - 1)
            .filter(|&i| x[i - 1] < x[i] && x[i] >= x[i + 1])
            .filter(|&i| x[i] >= p.height_v && brute_prominence(&x, i) >= p.prominence_v)
            .collect();
        for w in kept.windows(2) {
            prop_assert!(w[1] - w[0] >= distance);
        }
        for &k in &kept {
            prop_assert!(eligible.contains(&k));
        }
        // Every dropped candidate sits within range of a survivor at least as high.
        for &e in eligible.iter().filter(|e| !kept.contains(e)) {
            prop_assert!(kept.iter().any(|&k| k.abs_diff(e) < distance && x[k] >= x[e]));
        }
    }

    #[test]
    fn scaling_up_never_loses_candidates(x in walk(), c in 1.0f64..5.0) {
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert_eq!(local_maxima(&x), local_maxima(&scaled));
        let p = params(0.1, 0.13, 1);
        let base = find_peaks(&x, &p);
        let grown = find_peaks(&scaled, &p);
        for i in base {
            prop_assert!(grown.contains(&i));
        }
    }
}

fn reversed(r: &SignalRecord) -> SignalRecord {
    SignalRecord {
        ch_h: r.ch_h.iter().rev().copied().collect(),
        ch_v: r.ch_v.iter().rev().copied().collect(),
        ..r.clone()
    }
}

#[test]
fn detection_commutes_with_time_reversal() {
    let spec = GenSpec::default();
    let pp = PeakParams::default();
    for (k, class) in EyeClass::ALL.into_iter().enumerate() {
        let t = gen_trial(class, &spec, k as u64).unwrap();
        let p = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
        let n = p.len();
        let interior = |i: &usize| *i > pp.half_window_samples && *i + pp.half_window_samples < n;
        let fwd: Vec<usize> = detect_cycles(&p, &pp)
            .unwrap()
            .iter()
            .map(|c| c.peak_index_global)
            .filter(interior)
            .collect();
        let mut back: Vec<usize> = detect_cycles(&reversed(&p), &pp)
            .unwrap()
            .iter()
            .map(|c| n - 1 - c.peak_index_global)
            .filter(interior)
            .collect();
        back.sort_unstable();
        assert_eq!(fwd, back, "{class}");
    }
}

#[test]
fn detections_match_placements() {
    let spec = GenSpec::default();
    let pp = PeakParams::default();
    let (mut pulses, mut found, mut spurious) = (0usize, 0usize, 0usize);
    for class in EyeClass::ALL {
        for trial in 0..5 {
            let t = gen_trial(class, &spec, trial).unwrap();
            let p = preprocess(&t.record, &PreprocessConfig::default()).unwrap();
            let cycles = segment_record(&p, &pp).unwrap();
            if class == EyeClass::Stare {
                assert!(detect_cycles(&p, &pp).unwrap().is_empty());
                assert!(cycles.iter().all(|c| c.polarity == Polarity::None));
                continue;
            }
            pulses += t.placements.len();
            for pl in &t.placements {
                if cycles
                    .iter()
                    .any(|c| c.peak_index_global.abs_diff(pl.center_index) <= 20)
                {
                    found += 1;
                }
            }
            spurious += cycles
                .iter()
                .filter(|c| {
                    t.placements
                        .iter()
                        .all(|pl| c.peak_index_global.abs_diff(pl.center_index) > 20)
                })
                .count();
        }
    }
    assert!(found as f64 >= 0.95 * pulses as f64, "{found}/{pulses}");
    assert!(spurious as f64 <= 0.05 * pulses as f64, "{spurious}");
}

#[test]
fn up_cycle_keeps_the_pulse_amplitude() {
    let spec = GenSpec {
        noise_std_v: 0.0,
        drift_amplitude_v: 0.0,
        ..GenSpec::default()
    };
    let cfg = PreprocessConfig::default();
    let t = gen_trial(EyeClass::Up, &spec, 11).unwrap();
    let p = preprocess(&t.record, &cfg).unwrap();
    let cycles = detect_cycles(&p, &PeakParams::default()).unwrap();
    assert_eq!(cycles.len(), t.placements.len());

    // Smoothing and filtering are linear and the last step subtracts a
    // constant, so the conditioned trial is the sum of each clean pulse's
    // response, shifted by the median of that sum.
    let design = design_highpass(
        cfg.highpass_order,
        cfg.highpass_cutoff_hz,
        spec.sampling_rate_hz,
    )
    .unwrap();
    let mut sum = vec![0.0; t.record.len()];
    for pl in &t.placements {
        let mut lone = vec![0.0; t.record.len()];
        add_hann_lobe(&mut lone, pl.center_index, pl.width_samples, pl.amplitude_v);
        let smoothed = moving_average(&lone, cfg.smoothing_window).unwrap();
        let response = filtfilt(&design, &smoothed).unwrap();
        for (s, r) in sum.iter_mut().zip(response) {
            *s += r;
        }
    }
    let offset = median(&sum).unwrap();
    let half = PeakParams::default().half_window_samples;
    for (c, pl) in cycles.iter().zip(&t.placements) {
        let lo = c.peak_index_global - half;
        let want = sum[lo..lo + 2 * half]
            .iter()
            .fold(f64::MIN, |m, &v| m.max(v - offset));
        let got = c.ch_v.iter().fold(f64::MIN, |m, &v| m.max(v));
        assert!(
            (got - want).abs() <= 0.02 * pl.amplitude_v,
            "{got} vs {want}"
        );
    }
}
