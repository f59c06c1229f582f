use destin_core::classifier::{
    accuracy, cross_entropy, mlp_train, write_curve_csv, Dataset, Ensemble, EnsembleSpec, Mlp, Standardizer, TrainSpec,
};
use destin_core::seed;
use ndarray::{Array2, Axis};
use rand::Rng;

/// Three overlapping Gaussian-ish blobs in the plane.
fn blobs(n: usize, seed_: u64) -> Dataset {
    let mut rng = seed::rng(seed_);
    let centres = [(-1.0, 0.0), (1.0, 0.0), (0.0, 1.5)];
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 3;
        let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { (0..4).map(|_| rng.random_range(-1.0..1.0)).sum::<f64>() * 0.6 };
        rows.push(vec![centres[y].0 + noise(&mut rng), centres[y].1 + noise(&mut rng)]);
        labels.push(y);
    }
    Dataset::from_rows(&rows, labels).unwrap()
}

fn mean_pairwise_correlation(e: &Ensemble, x: &Array2<f64>) -> f64 {
    let outs: Vec<Vec<f64>> = e.members().iter().map(|m| m.forward_batch(x.view()).iter().copied().collect()).collect();
    let corr = |a: &[f64], b: &[f64]| {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum();
        let va: f64 = a.iter().map(|p| (p - ma) * (p - ma)).sum();
        let vb: f64 = b.iter().map(|q| (q - mb) * (q - mb)).sum();
        cov / (va * vb).sqrt()
    };
    let mut total = 0.0;
    let mut pairs = 0;
    for i in 0..outs.len() {
        for j in i + 1..outs.len() {
            total += corr(&outs[i], &outs[j]);
            pairs += 1;
        }
    }
    total / pairs as f64
}

fn spec(lambda: f64) -> EnsembleSpec {
    EnsembleSpec {
        members: 4,
        ncl_lambda: lambda,
        hidden: vec![8],
        train: TrainSpec {
            epochs: 40,
            learning_rate: 0.05,
            shuffle_seed: 3,
            ..TrainSpec::default()
        },
        seed: 17,
    }
}

#[test]
fn negative_correlation_lowers_member_correlation() {
    let data = blobs(300, 1);
    let mut plain = Ensemble::new(2, 3, &spec(0.0)).unwrap();
    plain.ncl_train(&data, &spec(0.0)).unwrap();
    let mut ncl = Ensemble::new(2, 3, &spec(0.5)).unwrap();
    ncl.ncl_train(&data, &spec(0.5)).unwrap();
    let c0 = mean_pairwise_correlation(&plain, &data.features);
    let c1 = mean_pairwise_correlation(&ncl, &data.features);
    assert!(c1 < c0, "NCL correlation {c1} not below independent {c0}");
}

#[test]
fn training_loss_decreases_on_separable_data() {
    let data = blobs(150, 2);
    let mut m = Mlp::new(&[2, 6, 3], 4).unwrap();
    let before = cross_entropy(m.forward_batch(data.features.view()).view(), &data.labels);
    let curve = mlp_train(&mut m, &data, &TrainSpec { epochs: 20, shuffle_seed: 1, ..TrainSpec::default() }).unwrap();
    let after = cross_entropy(m.forward_batch(data.features.view()).view(), &data.labels);
    assert!(after < before);
    assert!(curve.last().unwrap().loss < curve[0].loss);
    assert!(accuracy(&m, &data) > 0.7);
    let csv = write_curve_csv(&curve);
    assert!(csv.starts_with("epoch,loss,accuracy\n"));
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn ensemble_training_is_seeded() {
    let data = blobs(90, 3);
    let run = || {
        let mut e = Ensemble::new(2, 3, &spec(0.5)).unwrap();
        e.ncl_train(&data, &spec(0.5)).unwrap();
        e
    };
    assert_eq!(run(), run());
}

#[test]
fn ensemble_snapshot_round_trip() {
    let data = blobs(60, 4);
    let mut e = Ensemble::new(2, 3, &spec(0.5)).unwrap();
    e.standardizer = Some(Standardizer::fit(data.features.view()));
    e.ncl_train(&data, &spec(0.5)).unwrap();
    let back = Ensemble::from_json(&e.to_json().unwrap()).unwrap();
    assert_eq!(back, e);
    assert_eq!(back.predict_batch(data.features.view()), e.predict_batch(data.features.view()));
    let text = e.to_json().unwrap();
    assert!(Ensemble::from_json(&text[..text.len() / 2]).is_err());
}

#[test]
fn standardised_features_have_unit_scale() {
    let data = blobs(200, 5);
    let s = Standardizer::fit(data.features.view());
    let mut x = data.features.clone();
    s.apply(&mut x);
    let n = x.nrows() as f64;
    for col in x.axis_iter(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}

#[test]
fn ensemble_probabilities_are_distributions() {
    let data = blobs(30, 6);
    let e = Ensemble::new(2, 3, &spec(0.5)).unwrap();
    for row in e.predict_proba(data.features.view()).rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
    assert!(e.predict(&[0.0, 0.0, 0.0]).is_err());
}
