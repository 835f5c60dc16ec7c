use nnsym::correlators::{
    estimate_correlators, slots_at, ComplexNetworks, CorrelatorTensor, InputSet, RealNetworks, Slot,
};
use nnsym::ensembles::zoo;
use nnsym::linalg::Matrix;
use nnsym::mc::McConfig;
use nnsym::rng::RngStream;
use nnsym::symmetry::{
    deviation_report, group_element_from_coefficients, input_invariance_check,
    random_group_element, random_group_elements, run_experiments, transform_correlator,
    transform_inputs, ActionSide, DeviationConfig, GroupAction, GroupSpec,
};
use nnsym::training::breaking_spec;
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

fn deviation(
    ens: &RealNetworks,
    inputs: &InputSet,
    slots: &[usize],
    samples: u64,
    seed: u64,
) -> nnsym::symmetry::DeviationReport {
    let runs = run_experiments(
        ens,
        inputs,
        &[slots_at(slots)],
        &McConfig::new(samples, seed),
        10,
    )
    .unwrap();
    let group = GroupSpec::so(runs[0][0].output_dim(), ActionSide::Output);
    deviation_report(&runs, &group, &DeviationConfig::new(100, seed + 1)).unwrap()
}

#[test]
fn quarter_turn_maps_first_axis_to_second() {
    let spec = GroupSpec::so(2, ActionSide::Input);
    let elem = group_element_from_coefficients(&spec, &[FRAC_PI_2]).unwrap();
    let moved = transform_inputs(&InputSet::new(vec![vec![1.0, 0.0]]).unwrap(), &elem).unwrap();
    assert!((moved.points()[0][0]).abs() < 1e-12);
    assert!((moved.points()[0][1] - 1.0).abs() < 1e-12);
}

#[test]
fn random_rotations_are_special_orthogonal() {
    let elems = random_group_elements(&GroupSpec::so(5, ActionSide::Output), 1000, 1).unwrap();
    for e in &elems {
        let GroupAction::Orthogonal(r) = &e.action else {
            unreachable!()
        };
        assert!((r.determinant().unwrap() - 1.0).abs() < 1e-10);
        assert!(e.residual < 1e-10);
        assert!(e.off_diagonal_error < 1e-12);
    }
}

#[test]
fn random_unitaries_are_special_unitary() {
    let elems = random_group_elements(&GroupSpec::su(3), 200, 2).unwrap();
    for e in &elems {
        let GroupAction::Unitary(s) = &e.action else {
            unreachable!()
        };
        assert!((s.determinant().unwrap() - 1.0).norm() < 1e-10);
        assert!(e.residual < 1e-10);
    }
}

proptest! {
    #[test]
    fn rotated_inputs_keep_their_norm(
        x in prop::collection::vec(-5.0f64..5.0, 4), seed in 0u64..1000,
    ) {
        let elem = random_group_element(&GroupSpec::so(4, ActionSide::Input), &mut RngStream::new(seed, 0)).unwrap();
        let moved = transform_inputs(&InputSet::new(vec![x.clone()]).unwrap(), &elem).unwrap();
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!((norm(&moved.points()[0]) - norm(&x)).abs() <= 1e-10 * (1.0 + norm(&x)));
    }

    #[test]
    fn translations_shift_every_point(
        x in -5.0f64..5.0, y in -5.0f64..5.0, seed in 0u64..1000,
    ) {
        let elem = random_group_element(&GroupSpec::translation(1, 1.0), &mut RngStream::new(seed, 0)).unwrap();
        let GroupAction::Translation(c) = &elem.action else { unreachable!() };
        let moved = transform_inputs(&InputSet::scalars(&[x, y]).unwrap(), &elem).unwrap();
        prop_assert_eq!(moved.points()[0][0], x + c[0]);
        prop_assert_eq!(moved.points()[1][0], y + c[0]);
    }
}

#[test]
fn delta_two_point_has_zero_deviation() {
    let mean =
        nnsym::linalg::DenseTensor::from_fn(vec![3, 3], |i| if i[0] == i[1] { 2.0 } else { 0.0 });
    let g = CorrelatorTensor {
        slots: slots_at(&[0, 0]),
        mean,
        stderr: nnsym::linalg::DenseTensor::zeros(vec![3, 3]),
        samples: 1,
        seed: 0,
    };
    let report = deviation_report(
        &[vec![g.clone()], vec![g]],
        &GroupSpec::so(3, ActionSide::Output),
        &DeviationConfig::new(50, 3),
    )
    .unwrap();
    assert!(report.mu_m < 1e-12);
    assert!(report.per_element_mu.iter().all(|&m| m < 1e-12));
}

#[test]
fn identity_element_leaves_correlator_unchanged() {
    let ens = RealNetworks::new(zoo::relu_net(1, 8, 3, 1.0, 1.0, Some(1.0))).unwrap();
    let xs = InputSet::scalars(&[0.5]).unwrap();
    let g =
        &estimate_correlators(&ens, &xs, &[slots_at(&[0, 0])], &McConfig::new(1000, 4)).unwrap()[0];
    let id =
        group_element_from_coefficients(&GroupSpec::so(3, ActionSide::Output), &[0.0; 3]).unwrap();
    let moved = transform_correlator(g, &id).unwrap();
    assert_eq!(moved.mean, g.mean);
}

#[test]
fn gaussian_network_two_point_is_rotation_invariant() {
    let ens = RealNetworks::new(zoo::gauss_net(1, 50, 3, 1.0, 1.0)).unwrap();
    let xs = InputSet::scalars(&[0.8, 1.2]).unwrap();
    let report = deviation(&ens, &xs, &[0, 1], 20_000, 5);
    assert!(report.delta_r < 1e-12);
    assert!(
        report.pass_fraction >= 0.95,
        "pass fraction {}",
        report.pass_fraction
    );
}

#[test]
fn broken_one_point_deviates_beyond_noise() {
    let spec = breaking_spec(&zoo::relu_net(1, 50, 3, 1.0, 1.0, None), 1, 0.1).unwrap();
    let ens = RealNetworks::new(spec).unwrap();
    let xs = InputSet::scalars(&[1.0]).unwrap();
    let report = deviation(&ens, &xs, &[0], 20_000, 6);
    assert!(
        report.mu_m > report.delta_m,
        "{} vs {}",
        report.mu_m,
        report.delta_m
    );
}

#[test]
fn unbroken_one_point_passes() {
    let ens = RealNetworks::new(zoo::relu_net(1, 50, 3, 1.0, 1.0, None)).unwrap();
    let xs = InputSet::scalars(&[1.0]).unwrap();
    let report = deviation(&ens, &xs, &[0], 20_000, 6);
    assert!(
        report.mu_m <= 3.0 * report.delta_m,
        "{} vs {}",
        report.mu_m,
        report.delta_m
    );
}

#[test]
fn deviation_noise_shrinks_with_samples() {
    let ens = RealNetworks::new(zoo::gauss_net(1, 20, 2, 1.0, 1.0)).unwrap();
    let xs = InputSet::scalars(&[1.0]).unwrap();
    let small = deviation(&ens, &xs, &[0, 0], 2_000, 7);
    let large = deviation(&ens, &xs, &[0, 0], 20_000, 7);
    assert!(large.delta_m < small.delta_m);
}

#[test]
fn complex_network_unbalanced_correlators_vanish() {
    let ens = ComplexNetworks::new(zoo::complex_relu_net(1, 20, 2, 1.0, 1.0)).unwrap();
    let xs = InputSet::scalars(&[0.3]).unwrap();
    let sets = [
        vec![Slot::at(0)],
        vec![Slot::at(0), Slot::at(0)],
        vec![Slot::at(0), Slot::at(0), Slot::conj(0)],
    ];
    let ts = estimate_correlators(&ens, &xs, &sets, &McConfig::new(100_000, 8)).unwrap();
    for t in ts {
        assert!(t.max_z() <= 4.0, "{:?}: z {}", t.slots, t.max_z());
    }
}

#[test]
fn complex_network_balanced_two_point_is_unitary_invariant() {
    let ens = ComplexNetworks::new(zoo::complex_relu_net(1, 20, 2, 1.0, 1.0)).unwrap();
    let xs = InputSet::scalars(&[0.2, 0.7]).unwrap();
    let sets = [vec![Slot::at(0), Slot::conj(1)]];
    let runs = run_experiments(&ens, &xs, &sets, &McConfig::new(20_000, 9), 10).unwrap();
    let report =
        deviation_report(&runs, &GroupSpec::su(2), &DeviationConfig::new(100, 10)).unwrap();
    assert!(
        report.mu_m <= 3.0 * report.delta_m,
        "{} vs {}",
        report.mu_m,
        report.delta_m
    );
}

#[test]
fn t_layer_correlators_are_translation_invariant() {
    let t = Matrix::from_fn(3, 1, |i, _| [0.7, -1.3, 0.4][i]);
    let ens = RealNetworks::new(zoo::t_layer_net(t, 2, 1.0, Some(1.0))).unwrap();
    let xs = InputSet::scalars(&[0.1, 0.6]).unwrap();
    let elems = random_group_elements(&GroupSpec::translation(1, 1.0), 5, 11).unwrap();
    let sets = [slots_at(&[0, 1]), slots_at(&[0, 0, 1, 1])];
    let check =
        input_invariance_check(&ens, &xs, &sets, &elems, &McConfig::new(50_000, 12), 4.0).unwrap();
    assert_eq!(check.fraction_within, 1.0, "max z {}", check.max_z);
}

#[test]
fn relu_correlators_are_not_translation_invariant() {
    let ens = RealNetworks::new(zoo::relu_net(1, 20, 1, 1.0, 1.0, Some(1.0))).unwrap();
    let xs = InputSet::scalars(&[0.1, 0.6]).unwrap();
    let elems = random_group_elements(&GroupSpec::translation(1, 1.0), 3, 13).unwrap();
    let check = input_invariance_check(
        &ens,
        &xs,
        &[slots_at(&[0, 1])],
        &elems,
        &McConfig::new(50_000, 14),
        4.0,
    )
    .unwrap();
    assert!(check.max_z > 4.0);
}
