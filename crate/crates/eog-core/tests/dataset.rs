//! Balancing, significance testing, stage views, splitting and scaling.

use eog_core::class::EyeClass;
use eog_core::dataset::{
    apply_scaler, fit_scaler, segment_dataset, smote, smote_traced, stratified_split,
    student_t_two_sided, validate_smote, welch_ttest, Dataset, Origin, Row, STAGE1_NAMES,
};
use eog_core::features::NUM_FEATURES;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::gamma::ln_gamma;

/// Two-sided tail of the t density by composite Simpson integration of the
/// central part.
fn simpson_two_sided(t: f64, df: f64) -> f64 {
    let c = (ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0)).exp()
        / (df * std::f64::consts::PI).sqrt();
    let f = |x: f64| c * (1.0 + x * x / df).powf(-(df + 1.0) / 2.0);
    let n = 4000;
    let h = t.abs() / n as f64;
    let mut s = f(0.0) + f(t.abs());
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    1.0 - 2.0 * s * h / 3.0
}

fn gaussian(n: usize, mean: f64, seed: u64) -> Vec<f64> {
    let d = Normal::new(mean, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// Ten classes with `counts[c]` rows scattered around a class-specific center.
fn blobs(counts: &[usize], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut d = Dataset::ten_class();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let mut row: Row = [0.0; NUM_FEATURES];
            for (j, v) in row.iter_mut().enumerate() {
                *v = (c * 3 + j) as f64 * 0.1 + noise.sample(&mut rng);
            }
            d.push(row, c, Origin::Original);
        }
    }
    d
}

#[test]
fn t_tail_matches_integrated_density() {
    let p = student_t_two_sided(2.0, 10.0);
    assert!((p - simpson_two_sided(2.0, 10.0)).abs() < 1e-9);
    assert!((p - 0.0734).abs() < 1e-3, "{p}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn t_tail_matches_integration_everywhere(t in 0.01f64..6.0, df in 1.0f64..80.0) {
        let want = simpson_two_sided(t, df);
        prop_assert!((student_t_two_sided(t, df) - want).abs() < 1e-7);
        prop_assert!((student_t_two_sided(-t, df) - want).abs() < 1e-7);
    }

    #[test]
    fn smote_interpolates_between_original_parents(
        counts in prop::collection::vec(2usize..12, 10),
        target in 12usize..30,
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let data = blobs(&counts, seed);
        let (out, trace) = smote_traced(&data, target, k, seed).unwrap();
        prop_assert_eq!(&out.features[..data.len()], &data.features[..]);
        prop_assert_eq!(out.class_counts(), vec![target; 10]);
        prop_assert_eq!(trace.len(), out.len() - data.len());
        for tr in &trace {
            prop_assert!((0.0..=1.0).contains(&tr.u));
            let (x, z, s) = (&data.features[tr.parent], &data.features[tr.neighbor], &out.features[tr.row]);
            prop_assert_eq!(data.labels[tr.parent], out.labels[tr.row]);
            prop_assert_eq!(data.labels[tr.neighbor], out.labels[tr.row]);
            prop_assert_eq!(out.origin[tr.row], Origin::Synthetic);
            for j in 0..NUM_FEATURES {
                let (lo, hi) = (x[j].min(z[j]), x[j].max(z[j]));
                prop_assert!(s[j] >= lo - 1e-12 && s[j] <= hi + 1e-12);
            }
        }
        // Each class stays inside its original bounding box.
        for c in 0..10 {
            for j in 0..NUM_FEATURES {
                let col = |d: &Dataset, o: Option<Origin>| -> Vec<f64> {
                    (0..d.len())
                        .filter(|&i| d.labels[i] == c && o.is_none_or(|o| d.origin[i] == o))
                        .map(|i| d.features[i][j])
                        .collect()
                };
                let orig = col(&data, None);
                let lo = orig.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = orig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(col(&out, Some(Origin::Synthetic)).iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            }
        }
    }

    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(2usize..40, 10),
        frac in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let data = blobs(&counts, 1);
        let s = stratified_split(&data, frac, seed).unwrap();
        let mut all: Vec<usize> = s.train_rows.iter().chain(&s.test_rows).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
        let train_counts = s.train.class_counts();
        for (c, &n) in counts.iter().enumerate() {
            let want = ((frac * n as f64 + 0.5).floor() as usize).clamp(1, n - 1);
            prop_assert_eq!(train_counts[c], want);
        }
        let again = stratified_split(&data, frac, seed).unwrap();
        prop_assert_eq!(again.train_rows, s.train_rows);
    }
}

#[test]
fn welch_separates_distant_means_and_accepts_equal_ones() {
    let a = gaussian(50, 0.0, 1);
    let b = gaussian(50, 5.0, 2);
    assert!(welch_ttest(&a, &b).unwrap().p < 1e-10);
    let same = welch_ttest(&a, &a).unwrap();
    assert_eq!((same.t, same.p), (0.0, 1.0));
    assert_eq!(welch_ttest(&[1.0, 1.0], &[1.0, 1.0]).unwrap().p, 1.0);
    assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn duplicated_rows_pass_and_shifted_rows_fail_validation() {
    let data = blobs(&[60; 10], 3);
    // Duplicates: every original row appended again as synthetic.
    let mut dup = data.clone();
    for i in 0..data.len() {
        dup.push(data.features[i], data.labels[i], Origin::Synthetic);
    }
    let v = validate_smote(&dup).unwrap();
    for c in &v.classes {
        assert!(c.p_values.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }
    assert!(v.passed());

    // Adversarial: synthetic rows offset by ten within-class deviations.
    let mut shifted = data.clone();
    for i in 0..data.len() {
        let mut row = data.features[i];
        row.iter_mut().for_each(|x| *x += 10.0);
        shifted.push(row, data.labels[i], Origin::Synthetic);
    }
    let v = validate_smote(&shifted).unwrap();
    assert!(v.classes.iter().all(|c| c.mean_p.unwrap() < 0.01));
    assert!(!v.passed());

    // Honest SMOTE on the same blobs.
    let aug = smote(&blobs(&[40; 10], 4), 200, 5, 9).unwrap();
    assert!(validate_smote(&aug).unwrap().passed());
}

#[test]
fn smote_degenerate_pair_copies_the_point() {
    let mut d = Dataset::new(vec!["a".into(), "b".into()]);
    let row = [0.5; NUM_FEATURES];
    d.push(row, 0, Origin::Original);
    d.push(row, 0, Origin::Original);
    d.push([1.0; NUM_FEATURES], 1, Origin::Original);
    d.push([2.0; NUM_FEATURES], 1, Origin::Original);
    d.push([3.0; NUM_FEATURES], 1, Origin::Original);
    d.push([4.0; NUM_FEATURES], 1, Origin::Original);
    d.push([5.0; NUM_FEATURES], 1, Origin::Original);
    let out = smote(&d, 5, 5, 0).unwrap();
    assert_eq!(out.len(), 10);
    assert!((7..10).all(|i| out.features[i] == row && out.labels[i] == 0));
    assert!(smote(&d, 4, 5, 0).is_err());
}

#[test]
fn stage_views_follow_the_segmentation_table() {
    let data = blobs(&[200; 10], 5);
    let s = segment_dataset(&data).unwrap();
    let lateral = STAGE1_NAMES.iter().position(|n| *n == "Lateral").unwrap();
    assert_eq!(s.cardinal.len(), 2000);
    assert_eq!(s.cardinal.class_counts()[lateral], 1200);
    assert!(s
        .cardinal
        .class_counts()
        .iter()
        .enumerate()
        .all(|(i, &n)| i == lateral || n == 200));
    assert_eq!(s.right.len(), 1200);
    assert_eq!(
        s.right
            .class_index("LeftGroup")
            .map(|i| s.right.class_counts()[i]),
        Some(600)
    );
    assert_eq!(s.left.len(), 600);
    assert_eq!(s.left.class_counts(), vec![200; 3]);
    let left_names: Vec<String> = [EyeClass::Left, EyeClass::UpLeft, EyeClass::DownLeft]
        .iter()
        .map(|c| c.name().to_string())
        .collect();
    assert_eq!(s.left.class_names, left_names);
}

#[test]
fn scaler_uses_training_statistics_only() {
    let data = blobs(&[30; 10], 6);
    let s = stratified_split(&data, 0.8, 1).unwrap();
    let mut train = s.train.clone();
    for r in &mut train.features {
        r[3] = 7.0;
    }
    let p = fit_scaler(&train).unwrap();
    let scaled = apply_scaler(&p, &train);
    let n = scaled.len() as f64;
    for j in 0..NUM_FEATURES {
        let mean = scaled.features.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = scaled
            .features
            .iter()
            .map(|r| (r[j] - mean).powi(2))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 1e-9);
        if j == 3 {
            assert!(scaled.features.iter().all(|r| r[j] == 0.0));
        } else {
            assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }
    let test = apply_scaler(&p, &s.test);
    let test_mean = test.features.iter().map(|r| r[0]).sum::<f64>() / test.len() as f64;
    assert!(test_mean.abs() > 1e-6);
}
