use elsym_core::channel::{gumbel_noise, hard_decode, relax};
use elsym_core::checkpoint::{load_checkpoint, save_checkpoint};
use elsym_core::data::{load_csv, save_csv, split_indices, Standardizer};
use elsym_core::loss::{softmax_cross_entropy, softmax_rows};
use elsym_core::metrics::SymbolInventory;
use elsym_core::train::EarlyStopping;
use elsym_core::{
    Activation, AdamConfig, AdamState, Architecture, Dataset, DenseLayer, EvalReport, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn sized_matrix(lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    (1usize..6, 2usize..12).prop_flat_map(move |(r, c)| matrix(r, c, lo, hi))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(logits in sized_matrix(-50.0, 50.0)) {
        let p = softmax_rows(&logits);
        for row in p.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let labels = vec![0; logits.rows()];
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(grad.is_finite());
    }

    #[test]
    fn relaxed_rows_stay_inside_the_simplex(
        logits in sized_matrix(-5.0, 5.0),
        tau in 0.5f64..5.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gumbel_noise(logits.len(), &mut rng).reshape(logits.shape().to_vec()).unwrap();
        let w = relax(&logits, Some(&g), tau).unwrap();
        for row in w.iter_rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // decoding the relaxed sample agrees with the argmax of ℓ + g
        let perturbed: Vec<f64> = logits.data().iter().zip(g.data()).map(|(a, b)| a + b).collect();
        let perturbed = Tensor::new(logits.shape().to_vec(), perturbed).unwrap();
        prop_assert_eq!(hard_decode(&w), hard_decode(&perturbed));
    }

    #[test]
    fn dense_forward_is_finite_and_shaped(
        seed in any::<u64>(),
        (i, o, b) in (1usize..8, 1usize..8, 1usize..5),
        relu in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let layer = DenseLayer::glorot(i, o, act, &mut rng).unwrap();
        let x = Tensor::filled(&[b, i], 1e3);
        let (_, y) = layer.apply(&x).unwrap();
        prop_assert_eq!(y.shape(), &[b, o]);
        prop_assert!(y.is_finite());
    }

    #[test]
    fn adam_ignores_zero_gradients(p in sized_matrix(-3.0, 3.0), steps in 1usize..20) {
        let mut param = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&param]);
        for _ in 0..steps {
            adam.step(&mut [&mut param], &[Tensor::zeros(p.shape())]).unwrap();
        }
        prop_assert_eq!(param, p);
    }

    #[test]
    fn adam_moments_mirror_params(
        (p, g) in (1usize..6, 1usize..6).prop_flat_map(|(r, c)| (matrix(r, c, -3.0, 3.0), matrix(r, c, -3.0, 3.0))),
    ) {
        let mut param = p.clone();
        let mut adam = AdamState::new(AdamConfig::default(), [&param]);
        adam.step(&mut [&mut param], &[g]).unwrap();
        prop_assert_eq!(adam.first_moment()[0].shape(), p.shape());
        prop_assert!(adam.second_moment()[0].data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn stratified_split_partitions(
        labels in prop::collection::vec(0usize..4, 30..200),
        a in 1u32..10, b in 1u32..10, c in 1u32..10,
        seed in any::<u64>(),
    ) {
        let t = (a + b + c) as f64;
        let fractions = [a as f64 / t, b as f64 / t, c as f64 / t];
        let Ok(idx) = split_indices(&labels, fractions, seed) else {
            return Ok(());
        };
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (part, f) in [&idx.train, &idx.val, &idx.test].into_iter().zip(fractions) {
            prop_assert!((part.len() as f64 - f * labels.len() as f64).abs() < 1.0);
            for class in 0..4 {
                let n = labels.iter().filter(|&&l| l == class).count() as f64;
                let got = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!(got >= (n * f).floor() && got <= (n * f).ceil());
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact(rows in sized_matrix(-1e6, 1e6), seed in any::<u64>()) {
        let n = rows.rows();
        let labels: Vec<usize> = (0..n).map(|i| (i + seed as usize % 3) % 3).collect();
        let ds = Dataset::new(
            rows.clone(),
            labels,
            vec!["0".into(), "1".into(), "2".into()],
            (0..rows.cols()).map(|i| format!("f{i}")).collect(),
        ).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path, "label").unwrap();
        let back = load_csv(&path, "label", Some(&ds.class_names)).unwrap();
        prop_assert_eq!(back.features, ds.features);
        prop_assert_eq!(back.labels, ds.labels);
    }

    #[test]
    fn standardized_columns_are_centered(rows in (4usize..30, 1usize..6).prop_flat_map(|(r, c)| matrix(r, c, -10.0, 10.0))) {
        let n = rows.rows();
        let mut ds = Dataset::new(rows.clone(), vec![0; n], vec!["a".into()], (0..rows.cols()).map(|i| format!("f{i}")).collect()).unwrap();
        Standardizer::fit(&ds).apply(&mut ds).unwrap();
        for c in 0..rows.cols() {
            let mean: f64 = ds.features.iter_rows().map(|r| r[c]).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn early_stopping_keeps_the_minimum(
        losses in prop::collection::vec(0.0f64..10.0, 1..60),
        patience in 1usize..8,
    ) {
        let mut s = EarlyStopping::new(patience);
        let mut seen = Vec::new();
        for (e, &l) in losses.iter().enumerate() {
            seen.push(l);
            if s.observe(e + 1, l).stop {
                break;
            }
        }
        let best = s.best_loss().unwrap();
        prop_assert!(seen.iter().all(|&l| best <= l));
        prop_assert_eq!(seen[s.best_epoch().unwrap() - 1], best);
        // never stops before `patience` epochs have passed without improvement
        prop_assert!(seen.len() <= s.best_epoch().unwrap() + patience);
    }

    #[test]
    fn eval_report_is_consistent(
        pairs in prop::collection::vec((0usize..5, 0usize..5, 0usize..100), 1..200),
    ) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let symbols: Vec<usize> = pairs.iter().map(|p| p.2).collect();
        let r = EvalReport::from_predictions(&pred, &truth, 5, Some(&symbols)).unwrap();
        prop_assert_eq!(r.accuracy, r.correct as f64 / pred.len() as f64);
        prop_assert!((0.0..=1.0).contains(&r.f1));
        let inv: &SymbolInventory = &r.symbol_inventory;
        prop_assert_eq!(inv.0.iter().map(|u| u.count).sum::<usize>(), pred.len());
        prop_assert!(inv.len() <= pred.len().min(100));
        prop_assert!(inv.symbols().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions(seed in any::<u64>(), el in any::<bool>()) {
        let arch = if el {
            Architecture { sender_hidden: vec![5], receiver_hidden: vec![4], ..Architecture::emergent(3, 6, 2) }
        } else {
            Architecture { sender_hidden: vec![5], receiver_hidden: vec![4], ..Architecture::baseline(3, 6, 2) }
        };
        let m = arch.build(seed).unwrap();
        let back = load_checkpoint(&save_checkpoint(&m)).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0], vec![1.5, 0.0, -0.7]]).unwrap();
        prop_assert_eq!(m.predict(&x).unwrap(), back.predict(&x).unwrap());
        prop_assert_eq!(back.snapshot(), m.snapshot());
    }
}

#[test]
fn tensor_rejects_inconsistent_shape() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    assert!(Tensor::new(vec![2, 0], vec![]).is_err());
}
