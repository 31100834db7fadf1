mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use ssmrom::analysis::{amplitude_map, backbone, nmte, predict_trajectory, Observable};
use ssmrom::manifold::ManifoldModel;
use ssmrom::normalform::{normal_form_of_field, NormalFormModel, ReducedVectorField, ResonanceSet};
use ssmrom::system::Trajectory;

fn random_trajectory(values: &[f64], dim: usize) -> Trajectory<f64> {
    let n = values.len() / dim;
    Trajectory::uniform(
        0.0,
        0.1,
        DMatrix::from_row_slice(n, dim, &values[..n * dim]),
        (0..dim).map(|i| format!("y{i}")).collect(),
    )
    .unwrap()
}

fn rotation3(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    let rx = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos()],
    );
    let ry = DMatrix::from_row_slice(
        3,
        3,
        &[b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos()],
    );
    let rz = DMatrix::from_row_slice(
        3,
        3,
        &[c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0],
    );
    rz * ry * rx
}

/// Linear oscillator `ξ̇ = Wξ` with identity normal form, embedded flat in ℝ³.
fn linear_model(re: f64, im: f64) -> (ManifoldModel<f64>, NormalFormModel<f64>) {
    let w = DMatrix::from_row_slice(2, 2, &[re, -im, im, re]);
    let rvf = ReducedVectorField::new(w, 3, DMatrix::zeros(2, 7)).unwrap();
    let nf = normal_form_of_field(&rvf, 3, &ResonanceSet::amplitude_only(1, 3)).unwrap();
    let tangent = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let mani = ManifoldModel::new(tangent, 3, DMatrix::zeros(3, 7), DVector::zeros(3)).unwrap();
    (mani, nf)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nmte_of_identical_trajectories_is_zero(v in prop::collection::vec(-2.0f64..2.0, 30..90)) {
        let a = random_trajectory(&v, 3);
        prop_assume!(a.states().amax() > 1e-6);
        prop_assert_eq!(nmte(&a, &a, None).unwrap().value, 0.0);
    }

    #[test]
    fn nmte_is_rotation_invariant(
        v in prop::collection::vec(-2.0f64..2.0, 60),
        w in prop::collection::vec(-2.0f64..2.0, 60),
        angles in (0.0f64..6.3, 0.0f64..6.3, 0.0f64..6.3),
        norm in prop::collection::vec(0.1f64..2.0, 3),
    ) {
        let (a, b) = (random_trajectory(&v, 3), random_trajectory(&w, 3));
        let r = rotation3(angles.0, angles.1, angles.2);
        let rot = |t: &Trajectory<f64>| t.map_states(t.states() * r.transpose(), t.labels().to_vec()).unwrap();
        let nv = DVector::from_vec(norm);
        let before = nmte(&a, &b, Some(&nv)).unwrap().value;
        let after = nmte(&rot(&a), &rot(&b), Some(&(&r * &nv))).unwrap().value;
        prop_assert!((before - after).abs() < 1e-12 * before.max(1.0));
        let before = nmte(&a, &b, None).unwrap().value;
        let after = nmte(&rot(&a), &rot(&b), None).unwrap().value;
        prop_assert!((before - after).abs() < 1e-12 * before.max(1.0));
    }

    #[test]
    fn flat_linear_amplitude_is_non_decreasing(
        weights in prop::collection::vec(-1.0f64..1.0, 3),
        re in -0.05f64..-0.001,
        im in 0.1f64..3.0,
    ) {
        let (mani, nf) = linear_model(re, im);
        let g = Observable::Linear { weights };
        let amps: Vec<f64> = (0..50).map(|i| amplitude_map(&mani, &nf, &g, 0, i as f64 * 0.02)).collect();
        prop_assert_eq!(amps[0], 0.0);
        for w in amps.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn linear_backbone_is_flat(re in -0.05f64..-0.001, im in 0.1f64..3.0) {
        let (_, nf) = linear_model(re, im);
        let pm = nf.polar();
        let lam = pm.eigenvalues()[0];
        let c = backbone(&pm, 0, 1.0, 40).unwrap();
        for (a, w) in c.alpha.iter().zip(&c.omega) {
            prop_assert!((a + lam.re).abs() < 1e-12);
            prop_assert!((w - lam.im).abs() < 1e-12);
        }
        prop_assert!((lam.re - re).abs() < 1e-10 && (lam.im - im).abs() < 1e-10);
    }
}

#[test]
fn training_prediction_stays_near_its_geometric_floor() {
    let f = fit_2d_phase();
    let train = &f.train[0];
    // geometry-only error: the training data lifted from its own projection
    let reduced = f.manifold.project_trajectory(train).unwrap();
    let lifted = f.manifold.lift_trajectory(&reduced).unwrap();
    let floor = nmte(train, &lifted, None).unwrap().value;
    let pred =
        predict_trajectory(&f.manifold, &f.normal_form, &train.sample(0), train.times()).unwrap();
    let e = nmte(train, &pred.trajectory, None).unwrap().value;
    // dynamics residual bound for this fixture
    let dynamics_bound = 2e-3;
    assert!(
        e <= 1.5 * floor + dynamics_bound,
        "prediction {e}, floor {floor}"
    );
    assert!(pred.warnings.is_empty(), "{:?}", pred.warnings);
}

#[test]
fn observables_evaluate_as_documented() {
    let y = DVector::from_vec(vec![1.0, -2.0, 3.0]);
    assert_eq!(Observable::Coordinate { index: 1 }.eval(&y), -2.0);
    assert!((Observable::Norm.eval(&y) - 14f64.sqrt()).abs() < 1e-15);
    assert_eq!(
        Observable::Linear {
            weights: vec![1.0, 1.0, 1.0]
        }
        .eval(&y),
        2.0
    );
    let q = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 0.0, 0.0],
        vec![0.0, 0.0, 2.0],
    ];
    assert_eq!(Observable::Quadratic { matrix: q }.eval(&y), 19.0);
    assert!(Observable::Coordinate { index: 3 }.validate(3).is_err());
}
