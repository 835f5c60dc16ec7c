use nnsym::correlators::{estimate_correlator, slots_at, InputSet, RealNetworks};
use nnsym::ensembles::{sample_network, zoo, NetworkDraw};
use nnsym::mc::McConfig;
use nnsym::rng::RngStream;
use nnsym::stats::MomentAccumulator;
use nnsym::training::{
    breaking_spec, density_flow_check, empirical_ntk, ensemble_ntk, finite_difference_jacobian,
    forward_tape, gaussian_blobs, jacobian, max_relative_error, mean_hidden_activation,
    ntk_relu_net, sgd_train, Dataset, Encoding, FlowConfig, Tape, TrainingConfig,
};
use proptest::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn blobs(seed: u64) -> (Vec<Vec<f64>>, Dataset, Dataset) {
    let centers = vec![vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 3.0]];
    let mut rng = RngStream::new(seed, 0);
    let train = gaussian_blobs(&centers, 100, 0.7, &mut rng).unwrap();
    let test = gaussian_blobs(&centers, 100, 0.7, &mut rng).unwrap();
    (centers, train, test)
}

fn nearest_center_accuracy(centers: &[Vec<f64>], data: &Dataset) -> f64 {
    let dist = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let hits = (0..data.len())
        .filter(|&i| {
            let x = data.features(i);
            let best = (0..centers.len())
                .min_by(|&a, &b| dist(x, &centers[a]).total_cmp(&dist(x, &centers[b])))
                .unwrap();
            best == data.label(i)
        })
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn sgd_learns_separable_blobs() {
    let (centers, train, test) = blobs(1);
    let oracle = nearest_center_accuracy(&centers, &test);
    assert!(oracle >= 0.95);
    let net = sample_network(
        &Arc::new(zoo::relu_classifier(2, 50, 3, None)),
        &mut RngStream::new(2, 0),
    )
    .unwrap();
    let config = TrainingConfig {
        epochs: 30,
        batch_size: 16,
        learning_rate: 0.05,
        ..TrainingConfig::default()
    };
    let run = sgd_train(net, &train, &test, &config).unwrap();
    let acc = run.metrics.last().unwrap().test_accuracy;
    assert!(
        acc >= 0.95 && acc >= oracle - 0.03,
        "accuracy {acc}, oracle {oracle}"
    );
    assert!(run.metrics.last().unwrap().train_loss < run.metrics[0].train_loss);
}

#[test]
fn training_is_reproducible() {
    let (_, train, test) = blobs(3);
    let spec = Arc::new(zoo::relu_classifier(2, 10, 3, None));
    let config = TrainingConfig {
        epochs: 3,
        seed: 5,
        ..TrainingConfig::default()
    };
    let run = || {
        let net = sample_network(&spec, &mut RngStream::new(4, 0)).unwrap();
        sgd_train(net, &train, &test, &config).unwrap().metrics
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn decoding_ignores_positive_scaling(
        outputs in prop::collection::vec(-10.0f64..10.0, 2..8), scale in 0.01f64..100.0,
    ) {
        let scaled: Vec<f64> = outputs.iter().map(|v| v * scale).collect();
        for enc in [Encoding::OneHot, Encoding::OneCold] {
            prop_assert_eq!(enc.decode(&outputs), enc.decode(&scaled));
        }
    }
}

fn relu_mean(x: &[f64]) -> f64 {
    // hidden preactivation ~ N(0, (|x|² + 1)/d)
    let d = x.len() as f64;
    let var = (x.iter().map(|v| v * v).sum::<f64>() + 1.0) / d;
    (var / (2.0 * PI)).sqrt()
}

#[test]
fn mean_hidden_activation_matches_half_normal_mean() {
    let (_, train, _) = blobs(6);
    let data = train.head(30);
    let want = (0..data.len())
        .map(|i| relu_mean(data.features(i)))
        .sum::<f64>()
        / data.len() as f64;
    let got = mean_hidden_activation(&data, 100, 400, 7).unwrap();
    assert!((got - want).abs() <= 0.02 * want, "{got} vs {want}");
}

#[test]
fn fully_broken_one_point_matches_shifted_mean() {
    let (d, n, out, mu) = (2, 40, 3, 0.1);
    let spec = breaking_spec(&zoo::relu_classifier(d, n, out, None), out, mu).unwrap();
    let x = [0.5, -1.0];
    let g = estimate_correlator(
        &RealNetworks::new(spec).unwrap(),
        &InputSet::new(vec![x.to_vec()]).unwrap(),
        &slots_at(&[0]),
        &McConfig::new(100_000, 8),
    )
    .unwrap();
    let want = mu * n as f64 * relu_mean(&x);
    for i in 0..out {
        let z = (g.mean.get(&[i]) - want).abs() / g.stderr.get(&[i]);
        assert!(z <= 4.0, "component {i}: z = {z}");
    }
}

#[test]
fn partial_breaking_shifts_only_chosen_components() {
    let spec = breaking_spec(&zoo::relu_classifier(2, 40, 4, None), 2, 0.1).unwrap();
    let g = estimate_correlator(
        &RealNetworks::new(spec).unwrap(),
        &InputSet::new(vec![vec![0.5, -1.0]]).unwrap(),
        &slots_at(&[0]),
        &McConfig::new(50_000, 9),
    )
    .unwrap();
    let z: Vec<f64> = (0..4)
        .map(|i| (g.mean.get(&[i]) / g.stderr.get(&[i])).abs())
        .collect();
    assert!(z[0] > 4.0 && z[1] > 4.0, "{z:?}");
    assert!(z[2] <= 4.0 && z[3] <= 4.0, "{z:?}");
}

#[test]
fn zero_shift_has_no_preferred_component() {
    let spec = breaking_spec(&zoo::relu_classifier(2, 40, 4, None), 4, 0.0).unwrap();
    let g = estimate_correlator(
        &RealNetworks::new(spec).unwrap(),
        &InputSet::new(vec![vec![0.5, -1.0]]).unwrap(),
        &slots_at(&[0]),
        &McConfig::new(50_000, 10),
    )
    .unwrap();
    assert!(g.max_z() <= 4.0);
}

fn smooth_relu_draw(
    spec: &Arc<nnsym::ensembles::ArchitectureSpec>,
    x: &[f64],
    seed: u64,
) -> NetworkDraw {
    let mut rng = RngStream::new(seed, 0);
    let mut tape = Tape::default();
    loop {
        let draw = sample_network(spec, &mut rng).unwrap();
        forward_tape(&draw, x, &mut tape).unwrap();
        if tape.layer_input(1).iter().all(|z| z.abs() > 1e-2) {
            return draw;
        }
    }
}

#[test]
fn relu_jacobian_matches_finite_differences_away_from_kinks() {
    let spec = Arc::new(zoo::relu_net(3, 20, 2, 1.0, 1.0, Some(1.0)));
    let x = [0.4, -0.3, 0.9];
    for seed in 0..5 {
        let draw = smooth_relu_draw(&spec, &x, seed);
        let err = max_relative_error(
            &jacobian(&draw, &x).unwrap(),
            &finite_difference_jacobian(&draw, &x, 1e-4).unwrap(),
            1e-12,
        );
        assert!(err <= 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn empirical_ntk_diagonal_is_nonnegative() {
    let spec = Arc::new(ntk_relu_net(2, 30, 3, 1.0));
    let x = [0.3, 0.8];
    let mut rng = RngStream::new(11, 0);
    for _ in 0..50 {
        let draw = sample_network(&spec, &mut rng).unwrap();
        let t = empirical_ntk(&draw, &x, &x).unwrap();
        for i in 0..3 {
            assert!(t.values[(i, i)] >= 0.0);
        }
    }
}

#[test]
fn ensemble_ntk_is_proportional_to_identity() {
    let spec = Arc::new(ntk_relu_net(2, 50, 3, 1.0));
    let t = ensemble_ntk(&spec, &[0.3, 0.8], &[-0.5, 0.2], &McConfig::new(20_000, 12)).unwrap();
    let se = t.stderr.unwrap();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                assert!(t.values[(i, j)].abs() <= 4.0 * se[(i, j)]);
            }
        }
        let z = (t.values[(i, i)] - t.values[(0, 0)]).abs() / se[(i, i)].hypot(se[(0, 0)]);
        assert!(i == 0 || z <= 4.0);
    }
}

#[test]
fn ntk_fluctuations_shrink_with_width() {
    let spread = |n: usize| {
        let spec = Arc::new(ntk_relu_net(2, n, 1, 1.0));
        let mut rng = RngStream::new(13, 0);
        let mut acc = MomentAccumulator::<f64>::new(1);
        for _ in 0..2000 {
            let draw = sample_network(&spec, &mut rng).unwrap();
            acc.push(&[empirical_ntk(&draw, &[0.3, 0.8], &[0.3, 0.8])
                .unwrap()
                .values[(0, 0)]]);
        }
        acc.variance()[0]
    };
    assert!(spread(500) < spread(10));
}

#[test]
fn ensemble_ntk_stderr_scales_with_samples() {
    let spec = Arc::new(ntk_relu_net(2, 20, 2, 1.0));
    let se = |samples| {
        let t = ensemble_ntk(&spec, &[0.3, 0.8], &[0.3, 0.8], &McConfig::new(samples, 14)).unwrap();
        t.stderr.unwrap()[(0, 0)]
    };
    let ratio = se(20_000) / se(40_000);
    assert!((ratio / 2f64.sqrt() - 1.0).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn invariant_loss_preserves_symmetry_and_mse_breaks_it() {
    let centers = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 2.0]];
    let data = gaussian_blobs(&centers, 5, 0.5, &mut RngStream::new(15, 0)).unwrap();
    let spec = Arc::new(zoo::relu_classifier(2, 20, 3, None));
    let inputs = InputSet::new(vec![vec![0.5, 0.5], vec![-0.5, 1.0]]).unwrap();
    let config = FlowConfig {
        members: 1000,
        experiments: 10,
        steps: 100,
        learning_rate: 0.05,
        elements: 50,
        seed: 16,
        workers: 1,
    };
    let report = density_flow_check(&spec, &data, &inputs, &config).unwrap();
    for r in &report.invariant {
        assert!(
            r.mu_m <= 3.0 * r.delta_m,
            "order {}: {} vs {}",
            r.order,
            r.mu_m,
            r.delta_m
        );
    }
    assert!(report.mse[0].mu_m > 3.0 * report.mse[0].delta_m);
}
