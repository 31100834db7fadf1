//! Forced response of normal forms `ż_j = n_j(z) − i f_j e^{iΩt}`: closed-form
//! frequency response curves for one mode, fixed-point continuation in
//! co-rotating coordinates for several, calibration of `f`, and a full-model
//! frequency sweep used as ground truth.
//!
//! With `z_j = ρ_j e^{i(c_jΩt + ψ_j)}` a single forced mode obeys
//! `ρ̇ = −α(ρ)ρ − f sin ψ`, `ρψ̇ = (ω(ρ) − Ω)ρ − f cos ψ`, so the response peak
//! sits at `ψ = −π/2`, `Ω = ω(ρ)` and `f = α(ρ)ρ`.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::normalform::{phase_vector, PolarModel, ResonanceSet};
use crate::ode::{Dopri5, OdeOptions};
use crate::scalar::{cabs, carg, from_usize, lit, polar, to_f64, Real};
use crate::system::MechSystem;

/// One measured forced steady state used to calibrate `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationPoint {
    pub omega: f64,
    pub amplitude: f64,
    /// Whether the point is the maximum of its sweep.
    #[serde(default)]
    pub peak: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingConfig {
    pub omega_range: [f64; 2],
    /// Normal-form forcing amplitude per mode.
    pub f_modal: Vec<f64>,
    /// Replaces the forced mode's amplitude when present.
    #[serde(default)]
    pub calibration: Option<CalibrationPoint>,
    /// Largest continuation step in scaled units (fraction of the frequency range).
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    /// Per-mode amplitude beyond which the branch is cut (empty: no limit).
    #[serde(default)]
    pub validity_radius: Vec<f64>,
}

fn default_max_step() -> f64 {
    0.01
}

impl ForcingConfig {
    pub fn validate(&self, modes: usize) -> Result<()> {
        let [a, b] = self.omega_range;
        if !(a.is_finite() && b.is_finite() && a >= 0.0 && b > a) {
            return invalid("forcing frequency range must satisfy 0 ≤ Ω_min < Ω_max");
        }
        if self.f_modal.len() != modes {
            return invalid(format!(
                "{} forcing amplitudes for {modes} modes",
                self.f_modal.len()
            ));
        }
        if self.f_modal.iter().any(|f| !(*f >= 0.0)) {
            return invalid("forcing amplitudes must be non-negative");
        }
        if !(self.max_step > 0.0) {
            return invalid("continuation step must be positive");
        }
        if !self.validity_radius.is_empty() && self.validity_radius.len() != modes {
            return invalid("one validity radius per mode is required");
        }
        Ok(())
    }

    /// Index of the single forced mode.
    pub fn forced_mode(&self) -> Result<usize> {
        let forced: Vec<usize> = (0..self.f_modal.len())
            .filter(|&j| self.f_modal[j] > 0.0)
            .collect();
        match forced.as_slice() {
            [j] => Ok(*j),
            [] => Err(Error::DegenerateForcing(
                "all forcing amplitudes are zero; use the backbone instead".into(),
            )),
            _ => Ok(forced[0]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrcPoint<T: Real> {
    pub omega: T,
    pub rho: Vec<T>,
    /// Phase of each mode relative to `c_jΩt`.
    pub psi: Vec<T>,
    pub amp: T,
    pub stable: bool,
    pub fold: bool,
    /// Maximum of the forced mode's amplitude along the branch.
    pub peak: bool,
    /// Eigenvalues of the co-rotating Jacobian.
    pub eigenvalues: Vec<Complex<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrcBranch<T: Real> {
    pub points: Vec<FrcPoint<T>>,
    pub fold_indices: Vec<usize>,
    /// Reason the branch stopped before leaving the frequency range.
    pub truncated: Option<String>,
}

impl<T: Real> FrcBranch<T> {
    fn from_points(points: Vec<FrcPoint<T>>, truncated: Option<String>) -> Self {
        let fold_indices = points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.fold)
            .map(|(i, _)| i)
            .collect();
        Self {
            points,
            fold_indices,
            truncated,
        }
    }

    pub fn peak(&self) -> Option<&FrcPoint<T>> {
        self.points.iter().find(|p| p.peak)
    }

    /// Frequency intervals covered by unstable points (consecutive runs).
    pub fn unstable_intervals(&self) -> Vec<(T, T)> {
        let mut out = Vec::new();
        let mut run: Option<(T, T)> = None;
        for p in &self.points {
            if !p.stable {
                run = Some(match run {
                    Some((a, b)) => (a.min(p.omega), b.max(p.omega)),
                    None => (p.omega, p.omega),
                });
            } else if let Some(r) = run.take() {
                out.push(r);
            }
        }
        out.extend(run);
        out
    }
}

/// Amplitude of the forced mode at which `α(ρ)ρ = f` (the response peak),
/// searched on `(0, rho_max]`.
pub fn peak_amplitude<T: Real>(pm: &PolarModel<T>, mode: usize, f: T, rho_max: T) -> Option<T> {
    let g = |r: T| {
        let (a, _) = pm.single_mode(mode, r);
        a * r - f
    };
    let n = 2000;
    let mut lo = T::zero();
    let mut glo = g(lo);
    for i in 1..=n {
        let hi = rho_max * from_usize::<T>(i) / from_usize::<T>(n);
        let ghi = g(hi);
        if glo < T::zero() && ghi >= T::zero() {
            return Some(bisect(g, lo, hi, 4.0 * to_f64(T::default_epsilon())));
        }
        lo = hi;
        glo = ghi;
    }
    None
}

fn bisect<T: Real>(g: impl Fn(T) -> T, mut lo: T, mut hi: T, tol: f64) -> T {
    let glo = g(lo);
    for _ in 0..200 {
        let mid = (lo + hi) / lit(2.0);
        if (g(mid) < T::zero()) == (glo < T::zero()) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= lit::<T>(tol) * hi.abs() {
            break;
        }
    }
    (lo + hi) / lit(2.0)
}

/// Jacobian of `(ρ̇, ψ̇)` at a single-mode fixed point.
pub fn polar_jacobian<T: Real>(
    pm: &PolarModel<T>,
    mode: usize,
    f: T,
    rho: T,
    psi: T,
) -> [[T; 2]; 2] {
    let (da, dw) = pm.single_mode_derivatives(mode, rho);
    [
        [-da, -f * psi.cos()],
        [dw + f / (rho * rho) * psi.cos(), f / rho * psi.sin()],
    ]
}

fn eig2<T: Real>(j: [[T; 2]; 2]) -> Vec<Complex<T>> {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let half = tr / lit(2.0);
    let disc = half * half - det;
    if disc >= T::zero() {
        let s = disc.sqrt();
        vec![
            Complex::new(half + s, T::zero()),
            Complex::new(half - s, T::zero()),
        ]
    } else {
        let s = (-disc).sqrt();
        vec![Complex::new(half, s), Complex::new(half, -s)]
    }
}

/// Closed-form response curve of a one-mode normal form: for every `ρ` with
/// `f ≥ α(ρ)ρ`, `Ω = ω(ρ) ± √(f²/ρ² − α²)`. The lower branch is listed with
/// increasing `ρ`, then the exact peak, then the upper branch back down.
pub fn frc_closed_form_2d<T: Real>(
    pm: &PolarModel<T>,
    f: T,
    rho_grid: &[T],
    amp: &dyn Fn(T) -> T,
) -> Result<FrcBranch<T>> {
    if pm.modes() != 1 {
        return invalid("the closed-form response curve needs a single-mode normal form");
    }
    if !(f > T::zero()) {
        return Err(Error::DegenerateForcing(
            "f = 0 leaves only the backbone curve".into(),
        ));
    }
    let rho_top = rho_grid.iter().copied().fold(T::zero(), |a, b| a.max(b));
    let peak = peak_amplitude(pm, 0, f, rho_top);
    let mut rhos: Vec<T> = rho_grid
        .iter()
        .copied()
        .filter(|&r| r > T::zero() && peak.is_none_or(|p| r < p))
        .collect();
    rhos.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let point = |rho: T, sign: T, is_peak: bool| -> Option<FrcPoint<T>> {
        let (a, w) = pm.single_mode(0, rho);
        let disc = f * f / (rho * rho) - a * a;
        let s = if is_peak {
            T::zero()
        } else if disc >= T::zero() {
            disc.sqrt()
        } else {
            return None;
        };
        let omega = w + sign * s;
        let psi = (-a * rho).atan2((w - omega) * rho);
        let eig = eig2(polar_jacobian(pm, 0, f, rho, psi));
        Some(FrcPoint {
            omega,
            rho: vec![rho],
            psi: vec![psi],
            amp: amp(rho),
            stable: eig.iter().all(|l| l.re < T::zero()),
            fold: false,
            peak: is_peak,
            eigenvalues: eig,
        })
    };
    let mut pts: Vec<FrcPoint<T>> = rhos
        .iter()
        .filter_map(|&r| point(r, -T::one(), false))
        .collect();
    if let Some(p) = peak {
        pts.extend(point(p, T::zero(), true));
    }
    pts.extend(rhos.iter().rev().filter_map(|&r| point(r, T::one(), false)));
    mark_folds(&mut pts);
    Ok(FrcBranch::from_points(pts, None))
}

fn mark_folds<T: Real>(pts: &mut [FrcPoint<T>]) {
    for i in 1..pts.len().saturating_sub(1) {
        let d0 = pts[i].omega - pts[i - 1].omega;
        let d1 = pts[i + 1].omega - pts[i].omega;
        if d0 * d1 < T::zero() && !pts[i].peak {
            pts[i].fold = true;
        }
    }
}

/// Rotation numbers `c_j` such that `w_j = z_j e^{−ic_jΩt}` makes the forced
/// normal form autonomous: forced modes get `c = 1` and every kept monomial's
/// phase vector `p` must satisfy `⟨c, p⟩ = 0`.
pub fn rotation_numbers(resonance: &ResonanceSet, forced: &[bool]) -> Result<Vec<f64>> {
    let m = resonance.modes;
    let mut c: Vec<Option<f64>> = (0..m)
        .map(|j| if forced[j] { Some(1.0) } else { None })
        .collect();
    let mut constraints: Vec<Vec<i32>> = Vec::new();
    for (j, ks) in resonance.per_mode.iter().enumerate() {
        for k in ks {
            let p = phase_vector(k, j);
            if p.iter().any(|&x| x != 0) && !constraints.contains(&p) {
                constraints.push(p);
            }
        }
    }
    loop {
        let mut changed = false;
        for p in &constraints {
            let unknown: Vec<usize> = (0..m).filter(|&l| p[l] != 0 && c[l].is_none()).collect();
            if unknown.len() == 1 {
                let u = unknown[0];
                let s: f64 = (0..m)
                    .filter(|&l| l != u && p[l] != 0)
                    .map(|l| p[l] as f64 * c[l].unwrap())
                    .sum();
                c[u] = Some(-s / p[u] as f64);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let c: Vec<f64> = c.into_iter().map(|v| v.unwrap_or(1.0)).collect();
    for p in &constraints {
        let s: f64 = (0..m).map(|l| p[l] as f64 * c[l]).sum();
        if s.abs() > 1e-12 {
            return invalid(format!(
                "forcing pattern is incompatible with the resonant phase combination {p:?}"
            ));
        }
    }
    for j in 0..m {
        if forced[j] && (c[j] - 1.0).abs() > 1e-12 {
            return invalid(format!(
                "mode {} cannot be forced at the same frequency as the others",
                j + 1
            ));
        }
    }
    Ok(c)
}

/// Co-rotating vector field `F(w) = n(w) − iΩc∘w − i f` in real coordinates.
struct CoRotating<'a, T: Real> {
    pm: &'a PolarModel<T>,
    c: Vec<T>,
    f: Vec<T>,
}

impl<T: Real> CoRotating<'_, T> {
    fn m(&self) -> usize {
        self.pm.modes()
    }

    fn unpack(&self, x: &[T]) -> Vec<Complex<T>> {
        (0..self.m())
            .map(|j| Complex::new(x[2 * j], x[2 * j + 1]))
            .collect()
    }

    fn residual(&self, x: &[T], omega: T) -> DVector<T> {
        let w = self.unpack(x);
        let n = self.pm.complex_field(&w);
        let mut out = DVector::zeros(2 * self.m());
        for j in 0..self.m() {
            let v = n[j]
                - Complex::new(T::zero(), omega * self.c[j]) * w[j]
                - Complex::new(T::zero(), self.f[j]);
            out[2 * j] = v.re;
            out[2 * j + 1] = v.im;
        }
        out
    }

    /// `(∂F/∂x, ∂F/∂Ω)`.
    fn jacobian(&self, x: &[T], omega: T) -> (DMatrix<T>, DVector<T>) {
        let m = self.m();
        let w = self.unpack(x);
        let (dz, dzb) = self.pm.complex_jacobian(&w);
        let mut jx = DMatrix::zeros(2 * m, 2 * m);
        let mut jo = DVector::zeros(2 * m);
        let i = Complex::new(T::zero(), T::one());
        for j in 0..m {
            for l in 0..m {
                let mut a = dz[j * m + l];
                let b = dzb[j * m + l];
                if j == l {
                    a -= i * omega * self.c[j];
                }
                let dre = a + b;
                let dim = (a - b) * i;
                jx[(2 * j, 2 * l)] = dre.re;
                jx[(2 * j + 1, 2 * l)] = dre.im;
                jx[(2 * j, 2 * l + 1)] = dim.re;
                jx[(2 * j + 1, 2 * l + 1)] = dim.im;
            }
            let d = -i * w[j] * self.c[j];
            jo[2 * j] = d.re;
            jo[2 * j + 1] = d.im;
        }
        (jx, jo)
    }

    fn point(&self, x: &[T], omega: T, amp: &dyn Fn(&[Complex<T>]) -> T) -> Result<FrcPoint<T>> {
        let w = self.unpack(x);
        let (jx, _) = self.jacobian(x, omega);
        let eig: Vec<Complex<T>> = jx.complex_eigenvalues().iter().copied().collect();
        Ok(FrcPoint {
            omega,
            rho: w.iter().map(|&v| cabs(v)).collect(),
            psi: w.iter().map(|&v| carg(v)).collect(),
            amp: amp(&w),
            stable: eig.iter().all(|l| l.re < T::zero()),
            fold: false,
            peak: false,
            eigenvalues: eig,
        })
    }
}

const NEWTON_TOL: f64 = 1e-11;

/// Newton on `F(x, Ω) = 0` with `Ω` fixed.
fn newton_fixed<T: Real>(
    sys: &CoRotating<T>,
    x0: &DVector<T>,
    omega: T,
    scale: T,
) -> Option<DVector<T>> {
    let mut x = x0.clone();
    for _ in 0..50 {
        let r = sys.residual(x.as_slice(), omega);
        let (jx, _) = sys.jacobian(x.as_slice(), omega);
        let dx = jx.lu().solve(&(-&r))?;
        x += &dx;
        if dx.norm() <= lit::<T>(NEWTON_TOL) * scale.max(x.norm()) {
            return Some(x);
        }
    }
    None
}

/// Arclength continuation in scaled variables `(x / x_s, Ω / Ω_s)`.
pub fn frc_continuation<T: Real>(
    pm: &PolarModel<T>,
    resonance: &ResonanceSet,
    cfg: &ForcingConfig,
    amp: &dyn Fn(&[Complex<T>]) -> T,
) -> Result<FrcBranch<T>> {
    let m = pm.modes();
    cfg.validate(m)?;
    let forced: Vec<bool> = cfg.f_modal.iter().map(|&f| f > 0.0).collect();
    if !forced.iter().any(|&b| b) {
        return Err(Error::DegenerateForcing(
            "all forcing amplitudes are zero; use the backbone instead".into(),
        ));
    }
    let c = rotation_numbers(resonance, &forced)?;
    let sys = CoRotating {
        pm,
        c: c.iter().map(|&v| lit(v)).collect(),
        f: cfg.f_modal.iter().map(|&v| lit(v)).collect(),
    };
    let (o0, o1) = (lit::<T>(cfg.omega_range[0]), lit::<T>(cfg.omega_range[1]));
    let o_s = o1 - o0;
    // linear peak amplitude as the state scale
    let x_s = (0..m)
        .filter(|&j| forced[j])
        .map(|j| sys.f[j] / (-pm.eigenvalues()[j].re).max(T::default_epsilon()))
        .fold(T::zero(), |a, b| a.max(b));

    let i = Complex::new(T::zero(), T::one());
    let mut seed = DVector::zeros(2 * m);
    for j in 0..m {
        let w = i * sys.f[j] / (pm.eigenvalues()[j] - i * o0 * sys.c[j]);
        seed[2 * j] = w.re;
        seed[2 * j + 1] = w.im;
    }
    let x0 = newton_fixed(&sys, &seed, o0, x_s).ok_or_else(|| {
        Error::SeedFailure(format!(
            "Newton did not converge at Ω = {}; start the range further from resonance",
            to_f64(o0)
        ))
    })?;

    let dim = 2 * m + 1;
    let to_u = |x: &DVector<T>, o: T| {
        let mut u = DVector::zeros(dim);
        for k in 0..2 * m {
            u[k] = x[k] / x_s;
        }
        u[2 * m] = o / o_s;
        u
    };
    let from_u = |u: &DVector<T>| -> (DVector<T>, T) {
        (DVector::from_fn(2 * m, |k, _| u[k] * x_s), u[2 * m] * o_s)
    };
    // scaled residual and Jacobian
    let eval = |u: &DVector<T>| -> (DVector<T>, DMatrix<T>) {
        let (x, o) = from_u(u);
        let r = sys.residual(x.as_slice(), o) / x_s;
        let (jx, jo) = sys.jacobian(x.as_slice(), o);
        let mut j = DMatrix::zeros(2 * m, dim);
        j.view_mut((0, 0), (2 * m, 2 * m)).copy_from(&jx);
        for k in 0..2 * m {
            j[(k, 2 * m)] = jo[k] * o_s / x_s;
        }
        (r, j)
    };
    let tangent = |j: &DMatrix<T>, prev: &DVector<T>| -> Option<DVector<T>> {
        let mut a = DMatrix::zeros(dim, dim);
        a.view_mut((0, 0), (2 * m, dim)).copy_from(j);
        a.row_mut(2 * m).copy_from(&prev.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs[2 * m] = T::one();
        let t = a.lu().solve(&rhs)?;
        let n = t.norm();
        Some(t / n)
    };

    let max_step = lit::<T>(cfg.max_step);
    let min_step = max_step * lit(1e-8);
    let mut h = max_step / lit(10.0);
    let mut u = to_u(&x0, o0);
    let (_, j0) = eval(&u);
    let mut e = DVector::zeros(dim);
    e[2 * m] = T::one();
    let mut t = tangent(&j0, &e)
        .ok_or_else(|| Error::SeedFailure("singular Jacobian at the seed".into()))?;
    if t[2 * m] < T::zero() {
        t = -t;
    }
    let mut points = vec![sys.point(x0.as_slice(), o0, amp)?];
    let mut tangents = vec![t.clone()];
    let mut truncated = None;
    let max_points = 200_000;
    loop {
        if points.len() >= max_points {
            truncated = Some(format!("stopped after {max_points} points"));
            break;
        }
        let pred = &u + &t * h;
        let mut v = pred.clone();
        let mut iters = 0;
        let mut ok = false;
        for it in 1..=12 {
            iters = it;
            let (r, j) = eval(&v);
            let mut a = DMatrix::zeros(dim, dim);
            a.view_mut((0, 0), (2 * m, dim)).copy_from(&j);
            a.row_mut(2 * m).copy_from(&t.transpose());
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, 2 * m).copy_from(&(-&r));
            rhs[2 * m] = -(t.dot(&(&v - &pred)));
            let Some(dv) = a.lu().solve(&rhs) else { break };
            v += &dv;
            if !v.iter().all(|x| x.is_finite()) {
                break;
            }
            if dv.norm() <= lit::<T>(NEWTON_TOL) * v.norm().max(T::one()) {
                ok = true;
                break;
            }
        }
        if !ok {
            h /= lit(2.0);
            if h < min_step {
                truncated = Some(format!(
                    "corrector failed near Ω = {}",
                    to_f64(u[2 * m] * o_s)
                ));
                break;
            }
            continue;
        }
        let (_, j) = eval(&v);
        let Some(mut tn) = tangent(&j, &t) else {
            truncated = Some("singular continuation Jacobian".into());
            break;
        };
        if tn.dot(&t) < T::zero() {
            tn = -tn;
        }
        u = v;
        let (x, o) = from_u(&u);
        let mut p = sys.point(x.as_slice(), o, amp)?;
        if tn[2 * m] * t[2 * m] < T::zero() {
            p.fold = true;
        }
        t = tn;
        points.push(p);
        tangents.push(t.clone());
        if iters <= 3 {
            h = (h * lit(2.0)).min(max_step);
        } else if iters > 6 {
            h /= lit(2.0);
        }
        if o > o1 || o < o0 {
            break;
        }
        if let Some(j) = (0..cfg.validity_radius.len())
            .find(|&j| to_f64(points.last().unwrap().rho[j]) > cfg.validity_radius[j])
        {
            truncated = Some(format!(
                "ρ_{} left the validity range {} at Ω = {}",
                j + 1,
                cfg.validity_radius[j],
                to_f64(o)
            ));
            break;
        }
    }
    // refine the largest response of each forced mode with the quadrature condition
    let mut refined = Vec::new();
    for j in (0..m).filter(|&j| forced[j]) {
        let Some((imax, _)) = points
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.rho[j].partial_cmp(&b.1.rho[j]).unwrap())
        else {
            continue;
        };
        if imax == 0 || imax + 1 == points.len() {
            continue;
        }
        let p = &points[imax];
        let mut v = DVector::zeros(dim);
        for l in 0..m {
            let w = polar(p.rho[l], p.psi[l]);
            v[2 * l] = w.re / x_s;
            v[2 * l + 1] = w.im / x_s;
        }
        v[2 * m] = p.omega / o_s;
        let mut done = false;
        for _ in 0..50 {
            let (r, jac) = eval(&v);
            let mut a = DMatrix::zeros(dim, dim);
            a.view_mut((0, 0), (2 * m, dim)).copy_from(&jac);
            a[(2 * m, 2 * j)] = T::one();
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, 2 * m).copy_from(&(-&r));
            rhs[2 * m] = -v[2 * j];
            let Some(dv) = a.lu().solve(&rhs) else { break };
            v += &dv;
            if dv.norm() <= lit::<T>(NEWTON_TOL) * v.norm().max(T::one()) {
                done = true;
                break;
            }
        }
        if done {
            let (x, o) = from_u(&v);
            let mut p = sys.point(x.as_slice(), o, amp)?;
            p.peak = true;
            // insert next to the discrete maximum, on the side where Ω fits
            let at = if (o - points[imax].omega) * (points[imax + 1].omega - points[imax].omega)
                > T::zero()
            {
                imax + 1
            } else {
                imax
            };
            refined.push((at, p));
        }
    }
    refined.sort_by(|a, b| b.0.cmp(&a.0));
    for (at, p) in refined {
        points.insert(at, p);
    }
    Ok(FrcBranch::from_points(points, truncated))
}

/// Warning when the forcing exceeds 20% of the largest `α(ρ)ρ` on `[0, rho_max]`,
/// where the leading-order forcing model loses accuracy.
pub fn forcing_validity_warning<T: Real>(
    pm: &PolarModel<T>,
    mode: usize,
    f: T,
    rho_max: T,
) -> Option<String> {
    let n = 400;
    let peak = (0..=n)
        .map(|i| {
            let r = rho_max * from_usize::<T>(i) / from_usize::<T>(n);
            pm.single_mode(mode, r).0 * r
        })
        .fold(T::zero(), |a, b| a.max(b));
    if f > lit::<T>(0.2) * peak {
        Some(format!(
            "forcing amplitude {:.4e} exceeds 20% of max α(ρ)ρ = {:.4e} over the validity range",
            to_f64(f),
            to_f64(peak)
        ))
    } else {
        None
    }
}

/// Normal-form forcing amplitude reproducing one measured steady state.
///
/// `amp(ρ)` is inverted by bisection on `[0, rho_max]` (assumed increasing);
/// a peak point gives `f = α(ρ*)ρ*`, any other point
/// `f = ρ*√(α(ρ*)² + (ω(ρ*) − Ω*)²)`.
pub fn calibrate_forcing<T: Real>(
    pm: &PolarModel<T>,
    mode: usize,
    amp: &dyn Fn(T) -> T,
    point: &CalibrationPoint,
    rho_max: T,
) -> Result<T> {
    if mode >= pm.modes() {
        return invalid(format!("mode {mode} out of range"));
    }
    let target = lit::<T>(point.amplitude);
    if !(target > T::zero()) {
        return Err(Error::CalibrationOutOfRange(
            "measured amplitude must be positive".into(),
        ));
    }
    let top = amp(rho_max);
    if target > top {
        return Err(Error::CalibrationOutOfRange(format!(
            "measured amplitude {:.6e} exceeds the model amplitude {:.6e} at the edge of the validity range",
            point.amplitude,
            to_f64(top)
        )));
    }
    let rho = bisect(|r| amp(r) - target, T::zero(), rho_max, 1e-10);
    let (a, w) = pm.single_mode(mode, rho);
    Ok(if point.peak {
        a * rho
    } else {
        let d = w - lit::<T>(point.omega);
        rho * (a * a + d * d).sqrt()
    })
}

/// Steady-state amplitudes of a full-model frequency sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub omega: Vec<f64>,
    pub amp_up: Vec<f64>,
    pub amp_down: Vec<f64>,
    /// Points that did not settle within the period cap.
    pub unsettled_up: Vec<bool>,
    pub unsettled_down: Vec<bool>,
}

impl SweepTable {
    /// Frequencies where the two sweeps disagree by more than `rel`, as one hull.
    pub fn hysteresis_interval(&self, rel: f64) -> Option<(f64, f64)> {
        let idx: Vec<usize> = (0..self.omega.len())
            .filter(|&i| {
                let (a, b) = (self.amp_up[i], self.amp_down[i]);
                (a - b).abs() > rel * a.abs().max(b.abs())
            })
            .collect();
        Some((self.omega[*idx.first()?], self.omega[*idx.last()?]))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["Omega", "amp_up", "amp_down"])?;
        for i in 0..self.omega.len() {
            w.write_record(
                [self.omega[i], self.amp_up[i], self.amp_down[i]]
                    .iter()
                    .map(|v| format!("{v:.16e}")),
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptions {
    pub samples_per_period: usize,
    pub rel_change: f64,
    pub max_periods: usize,
    /// Consecutive periods that must meet `rel_change`, so a slow beat crest does not pass.
    pub settle_periods: usize,
    pub ode: OdeOptions<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            samples_per_period: 128,
            rel_change: 1e-6,
            max_periods: 2000,
            settle_periods: 10,
            ode: OdeOptions::default(),
        }
    }
}

/// Largest `|g|` over one period from equally spaced samples, refined by a parabola through the best three.
fn period_max(samples: &[f64]) -> f64 {
    let n = samples.len();
    let (i, &best) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let (a, c) = (samples[(i + n - 1) % n], samples[(i + 1) % n]);
    let den = a - 2.0 * best + c;
    if den < 0.0 {
        best - 0.125 * (a - c).powi(2) / den
    } else {
        best
    }
}

fn sweep(
    sys: &MechSystem<f64>,
    shape: &DVector<f64>,
    omegas: &[f64],
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    opts: &OracleOptions,
) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = sys.dof_count();
    let mut x = vec![0.0; 2 * n];
    let mut amps = Vec::with_capacity(omegas.len());
    let mut flags = Vec::with_capacity(omegas.len());
    for &om in omegas {
        let period = std::f64::consts::TAU / om;
        let k = opts.samples_per_period;
        let mut fbuf = vec![0.0; n];
        let rhs = |t: f64, s: &[f64], ds: &mut [f64]| {
            let c = (om * t).cos();
            for i in 0..n {
                fbuf[i] = shape[i] * c;
            }
            sys.rhs(s, Some(&fbuf), ds);
        };
        let mut solver = Dopri5::new(rhs, 0.0, &x, opts.ode);
        let mut prev = f64::NAN;
        let mut quiet = 0;
        let mut settled = false;
        let mut last = 0.0;
        let mut buf = vec![0.0; k];
        for p in 0..opts.max_periods {
            for (s, slot) in buf.iter_mut().enumerate() {
                let t = period * (p as f64 + (s + 1) as f64 / k as f64);
                solver.advance_to(t)?;
                *slot = g(solver.state()).abs();
            }
            last = period_max(&buf);
            if prev.is_finite()
                && (last - prev).abs() <= opts.rel_change * last.max(f64::MIN_POSITIVE)
            {
                quiet += 1;
                if quiet >= opts.settle_periods.max(1) {
                    settled = true;
                    break;
                }
            } else {
                quiet = 0;
            }
            prev = last;
        }
        x.copy_from_slice(solver.state());
        amps.push(last);
        flags.push(!settled);
    }
    Ok((amps, flags))
}

/// Frequency sweeps of the full model under `amplitude·shape·cos(Ωt)`, upward and
/// downward in `Ω` with the state carried from one frequency to the next.
/// Each point is integrated period by period until the amplitude of `g`
/// changes by less than `rel_change` between periods.
pub fn forced_sweep_oracle(
    sys: &MechSystem<f64>,
    shape: &DVector<f64>,
    amplitude: f64,
    omega_grid: &[f64],
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    opts: &OracleOptions,
) -> Result<SweepTable> {
    if shape.len() != sys.dof_count() {
        return invalid("forcing shape does not match the dof count");
    }
    if omega_grid.is_empty() || omega_grid.iter().any(|&o| !(o > 0.0)) {
        return invalid("sweep frequencies must be positive");
    }
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("sweep frequencies must be increasing");
    }
    let shape = shape * amplitude;
    let down_grid: Vec<f64> = omega_grid.iter().rev().copied().collect();
    let (up, down) = rayon::join(
        || sweep(sys, &shape, omega_grid, g, opts),
        || sweep(sys, &shape, &down_grid, g, opts),
    );
    let (amp_up, unsettled_up) = up?;
    let (mut amp_down, mut unsettled_down) = down?;
    amp_down.reverse();
    unsettled_down.reverse();
    Ok(SweepTable {
        omega: omega_grid.to_vec(),
        amp_up,
        amp_down,
        unsettled_up,
        unsettled_down,
    })
}

/// Locates the sweep maximum more finely than the grid: the sweep that holds
/// the largest amplitude is repeated along the same path, with `fine_points`
/// extra frequencies between the grid neighbours of the maximum.
pub fn refine_sweep_peak(
    sys: &MechSystem<f64>,
    shape: &DVector<f64>,
    amplitude: f64,
    coarse: &SweepTable,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    fine_points: usize,
    opts: &OracleOptions,
) -> Result<CalibrationPoint> {
    let argmax = |v: &[f64]| {
        v.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |a, (i, &x)| if x > a.1 { (i, x) } else { a },
        )
    };
    let n = coarse.omega.len();
    let (iu, au) = argmax(&coarse.amp_up);
    let (id, ad) = argmax(&coarse.amp_down);
    let upward = au >= ad;
    // grid in sweep order, and the position of the maximum along it
    let (path, k): (Vec<f64>, usize) = if upward {
        (coarse.omega.clone(), iu)
    } else {
        (coarse.omega.iter().rev().copied().collect(), n - 1 - id)
    };
    if k == 0 || k + 1 == n {
        let i = if upward { iu } else { id };
        return Ok(CalibrationPoint {
            omega: coarse.omega[i],
            amplitude: au.max(ad),
            peak: true,
        });
    }
    let mut fine: Vec<f64> = path[..k].to_vec();
    let (a, b) = (path[k - 1], path[k + 1]);
    fine.extend((1..=fine_points).map(|i| a + (b - a) * i as f64 / (fine_points + 1) as f64));
    let shape = shape * amplitude;
    let (amps, _) = sweep(sys, &shape, &fine, g, opts)?;
    let (i, v) = argmax(&amps[k..]);
    let best = if v >= au.max(ad) {
        (fine[k + i], v)
    } else {
        (path[k], au.max(ad))
    };
    Ok(CalibrationPoint {
        omega: best.0,
        amplitude: best.1,
        peak: true,
    })
}

/// FRC CSV: `Omega, rho_1..rho_m, psi_1..psi_m, amp, stable, fold`.
pub fn write_frc<W: Write, T: Real>(out: W, branch: &FrcBranch<T>) -> Result<()> {
    let m = branch.points.first().map_or(0, |p| p.rho.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["Omega".to_string()];
    header.extend((1..=m).map(|j| format!("rho_{j}")));
    header.extend((1..=m).map(|j| format!("psi_{j}")));
    header.extend(["amp", "stable", "fold"].map(String::from));
    w.write_record(&header)?;
    for p in &branch.points {
        let mut row = vec![format!("{:.16e}", to_f64(p.omega))];
        row.extend(p.rho.iter().map(|&v| format!("{:.16e}", to_f64(v))));
        row.extend(p.psi.iter().map(|&v| format!("{:.16e}", to_f64(v))));
        row.push(format!("{:.16e}", to_f64(p.amp)));
        row.push(u8::from(p.stable).to_string());
        row.push(u8::from(p.fold).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_frc_csv<T: Real>(path: impl AsRef<Path>, branch: &FrcBranch<T>) -> Result<()> {
    write_frc(
        std::io::BufWriter::new(std::fs::File::create(path)?),
        branch,
    )
}
