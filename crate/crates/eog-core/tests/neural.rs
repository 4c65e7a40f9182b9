//! Network outputs, initialization, training, serialization and routing.

use std::collections::BTreeSet;

use eog_core::class::EyeClass;
use eog_core::neural::{
    build_ann, build_cnn, build_stage_ann, read_weights, route, train_xy, write_weights, Network,
    NetworkWeights, TrainConfig,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn standard_rows(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| d.sample(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn outputs_are_distributions(
        x in prop::collection::vec(-5.0f64..5.0, 26),
        seed in any::<u64>(),
    ) {
        for spec in [build_ann(), build_cnn(10), build_stage_ann(1).unwrap()] {
            let net = Network::init(spec, seed).unwrap();
            let p = net.forward(&x).unwrap();
            prop_assert_eq!(p.len(), net.num_classes());
            prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // Forward passes are pure.
            prop_assert_eq!(net.forward(&x).unwrap(), p);
        }
    }

    #[test]
    fn weights_survive_a_round_trip(seed in any::<u64>(), cnn in any::<bool>()) {
        let spec = if cnn { build_cnn(4) } else { build_ann() };
        let w = NetworkWeights::init(&spec, seed);
        let bytes = write_weights(&spec, &w).unwrap();
        let back = read_weights(&bytes, &spec).unwrap();
        // Untrained weights carry a NaN final loss, so compare bytes too.
        prop_assert_eq!(&back.layers, &w.layers);
        prop_assert_eq!(write_weights(&spec, &back).unwrap(), bytes.clone());
        // Any flipped payload byte is caught.
        let mut bad = bytes.clone();
        let i = bytes.len() / 2;
        bad[i] ^= 0x40;
        prop_assert!(read_weights(&bad, &spec).is_err());
    }
}

#[test]
fn fresh_networks_start_near_chance() {
    let x = standard_rows(200, 26, 1);
    let labels: Vec<usize> = (0..200).map(|i| i % 10).collect();
    let chance = 10f64.ln();
    for seed in 0..12 {
        for spec in [build_ann(), build_cnn(10)] {
            let loss = Network::init(spec, seed)
                .unwrap()
                .loss(&x, &labels)
                .unwrap();
            assert!((loss - chance).abs() < 0.3, "seed {seed}: {loss}");
        }
    }
}

#[test]
fn training_separates_blobs_deterministically() {
    let (n, classes) = (300, 10);
    let mut x = standard_rows(n, 26, 2);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    for (r, &c) in labels.iter().enumerate() {
        x[r * 26 + c] += 4.0;
    }
    let cfg = TrainConfig {
        epochs: 60,
        seed: 5,
        ..TrainConfig::default()
    };
    let (w, h) = train_xy(&build_ann(), &x, &labels, &cfg).unwrap();
    assert!((h.initial_loss - 10f64.ln()).abs() < 0.3);
    assert!(h.epochs.last().unwrap().train_loss < h.initial_loss / 4.0);
    let net = Network::new(build_ann(), w.clone()).unwrap();
    let correct = (0..n)
        .filter(|&r| net.predict(&x[r * 26..(r + 1) * 26]).unwrap() == labels[r])
        .count();
    assert!(correct as f64 / n as f64 >= 0.95, "{correct}/{n}");
    let (again, _) = train_xy(&build_ann(), &x, &labels, &cfg).unwrap();
    assert_eq!(again, w);
}

#[test]
fn routing_covers_every_class_once() {
    let mut reached = BTreeSet::new();
    for s1 in 0..5 {
        for s2 in 0..4 {
            for s3 in 0..3 {
                let (class, stages) = route(s1, s2, s3);
                reached.insert(class.index());
                let want = if s1 != 4 {
                    1
                } else if s2 != 3 {
                    2
                } else {
                    3
                };
                assert_eq!(stages, want);
                if stages == 3 {
                    assert!(matches!(
                        class,
                        EyeClass::Left | EyeClass::UpLeft | EyeClass::DownLeft
                    ));
                }
            }
        }
    }
    assert_eq!(reached.len(), 10);
}
