mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use ssmrom::normalform::{
    evolve_normal_form, fit_normal_form, fit_reduced_field, modal_decomposition,
    select_resonant_monomials, NormalFormOptions, PolarModel,
};
use ssmrom::system::Trajectory;
use std::f64::consts::PI;
use std::sync::OnceLock;

fn fitted_2d() -> &'static Fitted {
    static F: OnceLock<Fitted> = OnceLock::new();
    F.get_or_init(fit_2d_phase)
}

fn fitted_4d() -> &'static Fitted {
    static F: OnceLock<Fitted> = OnceLock::new();
    F.get_or_init(fit_4d)
}

fn oracle() -> &'static CubicOracle {
    static O: OnceLock<CubicOracle> = OnceLock::new();
    O.get_or_init(|| CubicOracle::new(&chain()))
}

/// Hand-entered single-mode table with `ρ^{2k+1}` terms.
fn single_mode_fixture(lambda: C, odd_terms: &[C]) -> PolarModel<f64> {
    let terms = odd_terms
        .iter()
        .enumerate()
        .map(|(k, &c)| (vec![k as u32 + 2, k as u32 + 1], c))
        .collect();
    PolarModel::from_coefficients(vec![lambda], vec![terms]).unwrap()
}

fn beam_fixture() -> PolarModel<f64> {
    single_mode_fixture(
        C::new(-0.8255, 504.4),
        &[
            C::new(-16.05, -46.16),
            C::new(166.3, 350.3),
            C::new(-1421.0, 412.9),
            C::new(5314.0, -8468.0),
            C::new(-7138.0, 16975.0),
        ],
    )
}

fn one_to_two_fixture() -> PolarModel<f64> {
    let eq1 = vec![
        (vec![2, 1, 0, 0], C::new(-19.94, -59.56)),
        (vec![1, 0, 1, 1], C::new(3.514, -0.5460)),
        (vec![0, 1, 1, 0], C::new(0.08706, -0.2427)),
    ];
    let eq2 = vec![
        (vec![1, 1, 1, 0], C::new(-18.91, -31.26)),
        (vec![0, 0, 2, 1], C::new(-15.08, -28.65)),
        (vec![2, 0, 0, 0], C::new(1.726, -0.3342)),
    ];
    PolarModel::from_coefficients(
        vec![C::new(-0.4228, 769.0), C::new(-3.155, 1529.0)],
        vec![eq1, eq2],
    )
    .unwrap()
}

#[test]
fn conjugacy_loss_never_increases() {
    for f in [fitted_2d(), fitted_4d()] {
        let h = &f.normal_form.cost_history;
        assert!(!h.is_empty());
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{h:?}");
        }
    }
}

#[test]
fn transformation_inverts_its_series() {
    for f in [fitted_2d(), fitted_4d()] {
        assert!(f.normal_form.composition_residual() < 1e-8);
        assert!(f.normal_form.conjugate_symmetry_error() < 1e-12);
    }
}

#[test]
fn zero_amplitude_limits_are_exact() {
    for f in [fitted_2d(), fitted_4d()] {
        let pm = f.normal_form.polar();
        for (j, l) in pm.eigenvalues().iter().enumerate() {
            let (a, w) = pm.single_mode(j, 0.0);
            assert_eq!(a, -l.re);
            assert_eq!(w, l.im);
        }
    }
    let pm = beam_fixture();
    assert_eq!(pm.single_mode(0, 0.0), (0.8255, 504.4));
}

#[test]
fn normal_form_trajectories_lift_to_real_coordinates() {
    let f = fitted_4d();
    let nf = &f.normal_form;
    let xi0 = f.reduced[0].sample(0);
    let z0 = nf.to_z(&xi0);
    let times: Vec<f64> = (0..200).map(|i| i as f64 * 2.0).collect();
    let tr = evolve_normal_form(&nf.polar(), &z0, &times, None).unwrap();
    for z in &tr.z {
        let (_, imag) = nf.to_xi_checked(z);
        assert!(imag < 1e-9, "imaginary residue {imag}");
    }
}

#[test]
fn identified_cubic_term_matches_the_exact_chain() {
    // the phase-space observable shares the unit-norm modal scaling of the oracle
    let g = fitted_2d().normal_form.coefficient(0, &[2, 1]);
    let exact = oracle().coef(&[0], 0, &[2, 1]);
    assert!(((g.re - exact.re) / exact.re).abs() < 0.2, "{g} vs {exact}");
    assert!(((g.im - exact.im) / exact.im).abs() < 0.2, "{g} vs {exact}");
}

#[test]
fn four_dimensional_cubic_signs_match_the_exact_chain() {
    let nf = &fitted_4d().normal_form;
    let terms: [(usize, [u32; 4]); 4] = [
        (0, [2, 1, 0, 0]),
        (0, [1, 0, 1, 1]),
        (1, [1, 1, 1, 0]),
        (1, [0, 0, 2, 1]),
    ];
    for (j, k) in terms {
        let g = nf.coefficient(j, &k);
        let exact = oracle().coef(&[0, 1], j, &k);
        assert_eq!(
            g.re.signum(),
            exact.re.signum(),
            "Re of {k:?} in mode {j}: {g} vs {exact}"
        );
        assert_eq!(
            g.im.signum(),
            exact.im.signum(),
            "Im of {k:?} in mode {j}: {g} vs {exact}"
        );
    }
}

#[test]
fn beam_fixture_shows_softening_then_hardening() {
    let pm = beam_fixture();
    let text = pm.to_string();
    assert!(text.contains("0.8255ρ"), "{text}");
    assert!(text.contains("504.4"), "{text}");
    let slopes: Vec<f64> = (1..200)
        .map(|i| pm.single_mode_derivatives(0, i as f64 * 0.002).1)
        .collect();
    assert!(slopes[0] < 0.0);
    assert!(
        slopes.iter().any(|&s| s > 0.0),
        "frequency never turns upward"
    );
}

#[test]
fn one_to_two_fixture_has_phase_coupling() {
    let pm = one_to_two_fixture();
    assert!(pm.has_phase_coupling());
    let text = pm.to_string();
    assert!(
        text.contains("e^{iψ}") || text.contains("e^{-iψ}") || text.contains("e^{−iψ}"),
        "{text}"
    );
    assert!(text.contains("ψ ="), "{text}");
    // amplitude-only parts at ρ₂ = 0
    let (a, w) = pm.single_mode(0, 0.0);
    assert_eq!((a, w), (0.4228, 769.0));
}

#[test]
fn one_to_two_spectrum_selects_the_resonant_monomials() {
    let w1 = 2.0 * PI * 122.4;
    let w2 = 2.0 * PI * 243.4;
    let eig = vec![C::new(-0.4228, w1), C::new(-3.155, w2)];
    let res = select_resonant_monomials(&eig, 3, 0.05).unwrap();
    assert!(res.has_phase_coupling());
    assert!(res.contains(0, &[0, 1, 1, 0]), "{:?}", res.per_mode);
    assert!(res.contains(2, &[2, 0, 0, 0]), "{:?}", res.per_mode);
    assert!(res.contains(0, &[2, 1, 0, 0]));
    assert!(res.contains(2, &[0, 0, 2, 1]));
    // the chain's slow pair is far from any low-order resonance
    let (_, spec) = ssmrom::system::linearize(&chain()).unwrap();
    let slow: Vec<C> = (0..2).map(|j| spec.mode(j).0).collect();
    assert!(!select_resonant_monomials(&slow, 3, 0.05)
        .unwrap()
        .has_phase_coupling());
}

fn rotate_modal(f: &Fitted, phases: &[f64]) -> Vec<Trajectory<f64>> {
    let nf = &f.normal_form;
    let t = nf.modal_change();
    f.reduced
        .iter()
        .map(|tr| {
            let mut states = DMatrix::zeros(tr.len(), tr.dim());
            for i in 0..tr.len() {
                let mut zeta = nf.to_modal(&tr.sample(i));
                for (j, &p) in phases.iter().enumerate() {
                    zeta[2 * j] *= C::from_polar(1.0, p);
                    zeta[2 * j + 1] *= C::from_polar(1.0, -p);
                }
                for r in 0..tr.dim() {
                    states[(i, r)] = (0..zeta.len()).map(|c| t[(r, c)] * zeta[c]).sum::<C>().re;
                }
            }
            tr.map_states(states, tr.labels().to_vec()).unwrap()
        })
        .collect()
}

#[test]
fn normal_form_is_invariant_under_modal_phase_rotation() {
    let f = fitted_2d();
    let rotated = rotate_modal(f, &[0.7]);
    let rvf = fit_reduced_field(&rotated, 3).unwrap();
    let eig = modal_decomposition(rvf.linear()).unwrap().0;
    let res = select_resonant_monomials(&eig, 3, 0.05).unwrap();
    let nf = fit_normal_form(&rvf, &rotated, 3, &res, &NormalFormOptions::default()).unwrap();
    let a = f.normal_form.coefficient(0, &[2, 1]);
    let b = nf.coefficient(0, &[2, 1]);
    assert!((a - b).norm() < 1e-6 * a.norm(), "{a} vs {b}");
    assert!((f.normal_form.eigenvalues()[0] - nf.eigenvalues()[0]).norm() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn wirtinger_jacobian_matches_finite_differences(
        re1 in -0.3f64..0.3, im1 in -0.3f64..0.3, re2 in -0.3f64..0.3, im2 in -0.3f64..0.3,
        fixture in 0usize..2,
    ) {
        let pm = if fixture == 0 { one_to_two_fixture() } else { fitted_4d().normal_form.polar() };
        let z = [C::new(re1, im1), C::new(re2, im2)];
        let (dz, dzb) = pm.complex_jacobian(&z);
        let h = 1e-6;
        for l in 0..2 {
            let shifted = |d: C| {
                let mut w = z;
                w[l] += d;
                pm.complex_field(&w)
            };
            let (px, mx) = (shifted(C::new(h, 0.0)), shifted(C::new(-h, 0.0)));
            let (py, my) = (shifted(C::new(0.0, h)), shifted(C::new(0.0, -h)));
            for j in 0..2 {
                let dx = (px[j] - mx[j]) / (2.0 * h);
                let dy = (py[j] - my[j]) / (2.0 * h);
                let fd_z = (dx - C::i() * dy) * 0.5;
                let fd_zb = (dx + C::i() * dy) * 0.5;
                let scale = dz[j * 2 + l].norm().max(dzb[j * 2 + l].norm()).max(1.0);
                prop_assert!((fd_z - dz[j * 2 + l]).norm() / scale < 1e-6);
                prop_assert!((fd_zb - dzb[j * 2 + l]).norm() / scale < 1e-6);
            }
        }
    }

    #[test]
    fn single_mode_derivatives_match_finite_differences(rho in 0.01f64..0.3) {
        let pm = beam_fixture();
        let (da, dw) = pm.single_mode_derivatives(0, rho);
        let h = 1e-6;
        let (ap, wp) = pm.single_mode(0, rho + h);
        let (am, wm) = pm.single_mode(0, rho - h);
        let fd_a = ((rho + h) * ap - (rho - h) * am) / (2.0 * h);
        let fd_w = (wp - wm) / (2.0 * h);
        prop_assert!((fd_a - da).abs() < 1e-6 * da.abs().max(1.0));
        prop_assert!((fd_w - dw).abs() < 1e-6 * dw.abs().max(1.0));
    }
}
