mod common;

use std::sync::Arc;

use nnsym::ensembles::{
    metropolis_sample, sample_network, zoo, Activation, ArchitectureSpec, FieldType, LayerParams,
    LayerSpec, MetropolisConfig, NetworkSampler, ParameterPrior,
};
use nnsym::linalg::Matrix;
use nnsym::rng::RngStream;
use nnsym::stats::MomentAccumulator;
use proptest::prelude::*;

fn draws(prior: &ParameterPrior, n: usize, seed: u64) -> Vec<f64> {
    let mut out = vec![0.0; n];
    prior
        .sample_iid(&mut RngStream::new(seed, 0), &mut out)
        .unwrap();
    out
}

#[test]
fn gaussian_mean_is_near_zero() {
    let sigma = 2.0;
    let xs = draws(&ParameterPrior::gaussian(sigma), 1_000_000, 1);
    let (mean, se) = common::mean_and_stderr(&xs);
    assert!(mean.abs() <= 4.0 * sigma / 1e3);
    assert!(mean.abs() <= 4.0 * se);
}

#[test]
fn uniform_circle_draws() {
    let xs = draws(&ParameterPrior::UniformCircle, 1_000_000, 2);
    assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    let (mean, se) = common::mean_and_stderr(&xs);
    assert!((mean - 0.5).abs() <= 0.002);
    assert!((mean - 0.5).abs() <= 4.0 * se);
}

fn chain_draws(std: f64, coupling: f64, count: usize, seed: u64) -> Vec<f64> {
    let prior = ParameterPrior::QuarticInvariant { std, coupling };
    // independent chains keep the draws close to independent
    let chains = 50;
    let mut out = Vec::with_capacity(count);
    for c in 0..chains {
        let run = metropolis_sample(
            &prior,
            1,
            count / chains,
            &MetropolisConfig {
                thinning: 20,
                ..Default::default()
            },
            &mut RngStream::new(seed, c as u64),
        )
        .unwrap();
        assert!(run.acceptance_rate > 0.2 && run.acceptance_rate < 0.6);
        out.extend(run.draws.iter().map(|d| d[0]));
    }
    out
}

#[test]
fn quartic_without_coupling_is_gaussian() {
    let xs = chain_draws(1.0, 0.0, 100_000, 3);
    let second: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let fourth: Vec<f64> = xs.iter().map(|x| x.powi(4)).collect();
    let (m2, se2) = common::mean_and_stderr(&second);
    let (m4, se4) = common::mean_and_stderr(&fourth);
    let (m1, se1) = common::mean_and_stderr(&xs);
    assert!((m2 - 1.0).abs() <= 3.0 * se2, "{m2} ± {se2}");
    assert!((m4 - 3.0).abs() <= 3.0 * se4, "{m4} ± {se4}");
    assert!(m1.abs() <= 3.0 * se1);
}

#[test]
fn quartic_second_moment_matches_quadrature() {
    let coupling = 0.5;
    let xs = chain_draws(1.0, coupling, 100_000, 4);
    let second: Vec<f64> = xs.iter().map(|x| x * x).collect();
    let (m2, se2) = common::mean_and_stderr(&second);
    let want = common::quartic_moment(2, 1.0, coupling) / common::quartic_moment(0, 1.0, coupling);
    assert!((m2 - want).abs() <= 3.0 * se2, "{m2} ± {se2} vs {want}");
    let (m1, se1) = common::mean_and_stderr(&xs);
    assert!(m1.abs() <= 3.0 * se1);
}

#[test]
fn metropolis_and_direct_gaussian_agree() {
    let chain = chain_draws(1.5, 0.0, 100_000, 5);
    let direct = draws(&ParameterPrior::gaussian(1.5), 100_000, 6);
    let sq = |v: &[f64]| common::mean_and_stderr(&v.iter().map(|x| x * x).collect::<Vec<_>>());
    let ((a, sa), (b, sb)) = (sq(&chain), sq(&direct));
    assert!((a - b).abs() <= 3.0 * sa.hypot(sb));
}

#[test]
fn complex_weight_moments() {
    let sigma = 0.7;
    let spec = Arc::new(ArchitectureSpec {
        input_dim: 1,
        output_dim: 1,
        layers: vec![LayerSpec::ComplexLinear {
            inputs: 1,
            outputs: 1,
            weight_std: sigma,
            bias_std: None,
        }],
        field: FieldType::Complex,
    });
    let mut rng = RngStream::new(7, 0);
    let mut sampler = NetworkSampler::new(spec, &mut rng).unwrap();
    let mut ww = MomentAccumulator::<f64>::new(2);
    let mut wwbar = MomentAccumulator::<f64>::new(1);
    for _ in 0..1_000_000 {
        let d = sampler.sample(&mut rng).unwrap();
        let LayerParams::ComplexLinear { weight, .. } = &d.layers[0] else {
            unreachable!()
        };
        let w = weight[(0, 0)];
        let sq = w * w;
        ww.push(&[sq.re, sq.im]);
        wwbar.push(&[w.norm_sqr()]);
    }
    let se = ww.stderr();
    assert!(ww.mean()[0].abs() <= 3.0 * se[0]);
    assert!(ww.mean()[1].abs() <= 3.0 * se[1]);
    let want = 2.0 * sigma * sigma;
    assert!((wwbar.mean()[0] - want).abs() <= 3.0 * wwbar.stderr()[0]);
}

#[test]
fn conjugated_parameters_conjugate_the_output() {
    let spec = Arc::new(zoo::complex_relu_net(2, 6, 3, 1.0, 1.0));
    let draw = sample_network(&spec, &mut RngStream::new(8, 0)).unwrap();
    let x = [0.4, -1.3];
    let a = draw.forward_complex(&x).unwrap();
    let b = draw.conjugate().forward_complex(&x).unwrap();
    for (u, v) in a.iter().zip(&b) {
        assert_eq!(u.conj(), *v);
    }
}

#[test]
fn zero_mean_priors_have_zero_sample_mean() {
    for (k, prior) in [ParameterPrior::gaussian(0.3), ParameterPrior::gaussian(5.0)]
        .iter()
        .enumerate()
    {
        let xs = draws(prior, 1_000_000, 20 + k as u64);
        let (m, se) = common::mean_and_stderr(&xs);
        assert!(m.abs() <= 4.0 * se);
    }
    let xs = chain_draws(1.0, 0.2, 100_000, 22);
    let (m, se) = common::mean_and_stderr(&xs);
    assert!(m.abs() <= 4.0 * se);
}

fn t_layer(weight: Matrix<f64>) -> Arc<ArchitectureSpec> {
    Arc::new(ArchitectureSpec {
        input_dim: weight.cols(),
        output_dim: weight.rows(),
        layers: vec![LayerSpec::TLayer {
            inputs: weight.cols(),
            outputs: weight.rows(),
            weight,
            bias: ParameterPrior::UniformCircle,
        }],
        field: FieldType::Real,
    })
}

proptest! {
    #[test]
    fn t_layer_translation_is_a_bias_shift(
        w in prop::collection::vec(-3.0f64..3.0, 6),
        x in prop::collection::vec(-5.0f64..5.0, 2),
        c in prop::collection::vec(-5.0f64..5.0, 2),
        seed in 0u64..1000,
    ) {
        let weight = Matrix::new(3, 2, w).unwrap();
        let spec = t_layer(weight.clone());
        let draw = sample_network(&spec, &mut RngStream::new(seed, 0)).unwrap();
        let shifted: Vec<f64> = x.iter().zip(&c).map(|(a, b)| a + b).collect();
        let moved = draw.forward(&shifted).unwrap();
        let mut rebiased = draw.clone();
        let wc = weight.apply(&c).unwrap();
        if let LayerParams::TLayer { bias } = &mut rebiased.layers[0] {
            for (b, v) in bias.iter_mut().zip(&wc) {
                *b = nnsym::ensembles::wrap_unit(nnsym::ensembles::wrap_unit(*v) + *b);
            }
        }
        let expected = rebiased.forward(&x).unwrap();
        for (a, b) in moved.iter().zip(&expected) {
            // equal as points on the unit circle, up to rounding in W(x+c)
            let d = (a - b).abs();
            prop_assert!(d.min(1.0 - d) <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn exp_activation_is_positive(z in -700.0f64..700.0) {
        let act = Activation::ExpNormalized { bias_std: 1.0, weight_std: 1.0, input_dim: 3 };
        prop_assert!(act.apply(z) > 0.0);
    }
}
