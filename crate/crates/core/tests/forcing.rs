mod common;

use common::*;
use proptest::prelude::*;
use ssmrom::forcing::{
    calibrate_forcing, frc_closed_form_2d, frc_continuation, peak_amplitude, polar_jacobian,
    CalibrationPoint, ForcingConfig, FrcBranch,
};
use ssmrom::normalform::{
    evolve_normal_form, select_resonant_monomials, ModalForcing, PolarModel, ResonanceSet,
};
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

/// `ż = (−0.01 + i)z + (−0.01 + 0.5i)z²z̄`: hardening with a fold pair.
fn duffing_like() -> PolarModel<f64> {
    PolarModel::from_coefficients(
        vec![C::new(-0.01, 1.0)],
        vec![vec![(vec![2, 1], C::new(-0.01, 0.5))]],
    )
    .unwrap()
}

fn continue_single(pm: &PolarModel<f64>, f: f64, range: [f64; 2]) -> FrcBranch<f64> {
    let cfg = ForcingConfig {
        omega_range: range,
        f_modal: vec![f],
        calibration: None,
        max_step: 0.01,
        validity_radius: vec![],
    };
    frc_continuation(pm, &ResonanceSet::amplitude_only(1, 3), &cfg, &|w| {
        w[0].norm()
    })
    .unwrap()
}

fn fitted_2d() -> &'static Fitted {
    static F: OnceLock<Fitted> = OnceLock::new();
    F.get_or_init(fit_2d_phase)
}

fn check_peak(pm: &PolarModel<f64>, branch: &FrcBranch<f64>) {
    let p = branch.peak().expect("branch has a peak");
    let (_, w) = pm.single_mode(0, p.rho[0]);
    assert!((p.omega - w).abs() / w < 1e-3, "Ω {} vs ω(ρ) {w}", p.omega);
    assert!((p.psi[0] + FRAC_PI_2).abs() < 1e-3, "ψ {}", p.psi[0]);
}

#[test]
fn continuation_agrees_with_the_amplitude_equation() {
    let pm = duffing_like();
    let f = 0.02;
    let branch = continue_single(&pm, f, [0.8, 2.0]);
    assert!(branch.points.len() > 20);
    for p in &branch.points {
        // Newton on G(ρ) = ρ²((ω − Ω)² + α²) − f² from the continued ρ
        let mut rho = p.rho[0];
        for _ in 0..30 {
            let (a, w) = pm.single_mode(0, rho);
            let (da, dw) = pm.single_mode_derivatives(0, rho);
            // da is d(αρ)/dρ
            let d = w - p.omega;
            let g = rho * rho * (d * d + a * a) - f * f;
            let dg = 2.0 * rho * d * d + 2.0 * rho * rho * d * dw + 2.0 * (a * rho) * da;
            let step = g / dg;
            rho -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        assert!(
            (rho - p.rho[0]).abs() < 1e-8,
            "Ω {}: {} vs {rho}",
            p.omega,
            p.rho[0]
        );
    }
}

#[test]
fn peaks_sit_on_the_backbone() {
    let pm = duffing_like();
    let f0 = 0.02;
    for scale in [0.5, 1.0, 2.0] {
        let f = scale * f0;
        check_peak(&pm, &continue_single(&pm, f, [0.8, 2.6]));
        let grid: Vec<f64> = (1..=400).map(|i| i as f64 * 0.005).collect();
        check_peak(&pm, &frc_closed_form_2d(&pm, f, &grid, &|r| r).unwrap());
    }
}

#[test]
fn fitted_model_peak_sits_on_its_backbone() {
    let pm = fitted_2d().normal_form.polar();
    let f = 3.5e-4;
    let top = peak_amplitude(&pm, 0, f, 3.0).expect("peak inside the search range");
    let grid: Vec<f64> = (1..=200).map(|i| i as f64 * top * 1.2 / 200.0).collect();
    check_peak(&pm, &frc_closed_form_2d(&pm, f, &grid, &|r| r).unwrap());
    let w0 = pm.eigenvalues()[0].im;
    check_peak(&pm, &continue_single(&pm, f, [0.95 * w0, 1.05 * w0]));
}

#[test]
fn closed_form_and_continuation_share_their_folds() {
    let pm = duffing_like();
    let branch = continue_single(&pm, 0.02, [0.8, 2.0]);
    let unstable = branch.unstable_intervals();
    assert_eq!(unstable.len(), 1, "{unstable:?}");
    assert_eq!(branch.fold_indices.len(), 2);
    let (lo, hi) = unstable[0];
    let fold_omegas: Vec<f64> = branch
        .fold_indices
        .iter()
        .map(|&i| branch.points[i].omega)
        .collect();
    let near = |x: f64| fold_omegas.iter().any(|&o| (o - x).abs() < 0.01);
    assert!(near(lo) && near(hi), "{fold_omegas:?} vs ({lo}, {hi})");
}

#[test]
fn stability_labels_predict_simulated_persistence() {
    let pm = duffing_like();
    let f = 0.02;
    let branch = continue_single(&pm, f, [0.8, 2.0]);
    let (mut stable_seen, mut unstable_seen) = (0, 0);
    for (i, p) in branch.points.iter().enumerate().filter(|(i, _)| i % 4 == 0) {
        let max_re = p
            .eigenvalues
            .iter()
            .map(|l| l.re)
            .fold(f64::NEG_INFINITY, f64::max);
        let clearly_stable = max_re < -0.001;
        let clearly_unstable = max_re > 0.005;
        if !clearly_stable && !clearly_unstable {
            continue;
        }
        const EPS: f64 = 1e-4;
        let rho = p.rho[0];
        let w = C::from_polar(rho, p.psi[0]);
        let z0 = [C::from_polar(rho * (1.0 + EPS), p.psi[0])];
        let period = 2.0 * PI / p.omega;
        let times: Vec<f64> = (0..=200).map(|k| k as f64 * period).collect();
        let forcing = ModalForcing {
            amplitudes: vec![f],
            omega: p.omega,
        };
        let tr = evolve_normal_form(&pm, &z0, &times, Some(&forcing)).unwrap();
        // at whole periods the co-rotating state equals z itself
        let dev: Vec<f64> = tr.z.iter().map(|z| (z[0] - w).norm() / rho).collect();
        if clearly_stable {
            stable_seen += 1;
            assert!(
                dev.iter().all(|&d| d < 0.01),
                "point {i} at Ω {} drifted {:?}",
                p.omega,
                dev.last()
            );
        } else {
            unstable_seen += 1;
            assert!(
                *dev.last().unwrap() > 10.0 * EPS,
                "point {i} at Ω {} stayed put",
                p.omega
            );
        }
        assert_eq!(p.stable, clearly_stable);
    }
    assert!(
        stable_seen > 5 && unstable_seen > 0,
        "{stable_seen} stable, {unstable_seen} unstable"
    );
}

#[test]
fn two_mode_continuation_solves_the_co_rotating_equations() {
    let eq1 = vec![
        (vec![2, 1, 0, 0], C::new(-0.01, 0.3)),
        (vec![0, 1, 1, 0], C::new(0.002, -0.05)),
    ];
    let eq2 = vec![
        (vec![2, 0, 0, 0], C::new(0.003, 0.02)),
        (vec![0, 0, 2, 1], C::new(-0.02, 0.1)),
    ];
    let pm = PolarModel::from_coefficients(
        vec![C::new(-0.01, 1.0), C::new(-0.02, 2.02)],
        vec![eq1, eq2],
    )
    .unwrap();
    let res = select_resonant_monomials(pm.eigenvalues(), 3, 0.05).unwrap();
    assert!(res.contains(0, &[0, 1, 1, 0]) && res.contains(2, &[2, 0, 0, 0]));
    let f = 0.01;
    let cfg = ForcingConfig {
        omega_range: [0.9, 1.2],
        f_modal: vec![f, 0.0],
        calibration: None,
        max_step: 0.01,
        validity_radius: vec![],
    };
    let branch = frc_continuation(&pm, &res, &cfg, &|w| w[0].norm()).unwrap();
    assert!(branch.points.len() > 10);
    let c = [1.0, 2.0];
    for p in &branch.points {
        let w: Vec<C> = (0..2).map(|j| C::from_polar(p.rho[j], p.psi[j])).collect();
        let n = pm.complex_field(&w);
        for j in 0..2 {
            let forcing = if j == 0 { f } else { 0.0 };
            let r = n[j] - C::i() * c[j] * p.omega * w[j] - C::i() * forcing;
            assert!(
                r.norm() < 1e-9,
                "mode {j} residual {} at Ω {}",
                r.norm(),
                p.omega
            );
        }
        assert!(
            p.rho[1] > 0.0,
            "the 1:2 coupling must excite the second mode"
        );
    }
}

#[test]
fn calibration_recovers_the_forcing() {
    let pm = duffing_like();
    let f = 0.015;
    let amp = |r: f64| 2.0 * r + 0.1 * r * r;
    let grid: Vec<f64> = (1..=400).map(|i| i as f64 * 0.005).collect();
    let branch = frc_closed_form_2d(&pm, f, &grid, &amp).unwrap();
    let p = branch.peak().unwrap();
    let at_peak = CalibrationPoint {
        omega: p.omega,
        amplitude: p.amp,
        peak: true,
    };
    let g = calibrate_forcing(&pm, 0, &amp, &at_peak, 2.0).unwrap();
    assert!((g - f).abs() < 1e-8 * f, "{g} vs {f}");
    let q = &branch.points[branch.points.len() / 4];
    let off_peak = CalibrationPoint {
        omega: q.omega,
        amplitude: q.amp,
        peak: false,
    };
    let g = calibrate_forcing(&pm, 0, &amp, &off_peak, 2.0).unwrap();
    assert!((g - f).abs() < 1e-8 * f, "{g} vs {f}");
    let too_big = CalibrationPoint {
        omega: 1.0,
        amplitude: amp(2.0) * 1.1,
        peak: false,
    };
    assert!(calibrate_forcing(&pm, 0, &amp, &too_big, 2.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn polar_jacobian_matches_finite_differences(
        rho in 0.05f64..1.5,
        psi in -PI..PI,
        f in 0.001f64..0.05,
        omega in 0.8f64..2.0,
    ) {
        let pm = duffing_like();
        // (ρ̇, ψ̇) of the co-rotating state w = ρe^{iψ}: ẇ = n(w) − iΩw − if
        let rates = |r: f64, s: f64| {
            let w = C::from_polar(r, s);
            let wd = pm.complex_field(&[w])[0] - C::i() * omega * w - C::i() * f;
            let q = wd * w.conj();
            (q.re / r, q.im / (r * r))
        };
        let j = polar_jacobian(&pm, 0, f, rho, psi);
        let h = 1e-6;
        let (rp, pp) = rates(rho + h, psi);
        let (rm, pm_) = rates(rho - h, psi);
        let (rq, pq) = rates(rho, psi + h);
        let (rn, pn) = rates(rho, psi - h);
        let fd = [[(rp - rm) / (2.0 * h), (rq - rn) / (2.0 * h)], [(pp - pm_) / (2.0 * h), (pq - pn) / (2.0 * h)]];
        for a in 0..2 {
            for b in 0..2 {
                let scale = j[a][b].abs().max(1.0);
                prop_assert!((fd[a][b] - j[a][b]).abs() / scale < 1e-6, "entry ({a},{b}): {} vs {}", fd[a][b], j[a][b]);
            }
        }
    }
}
