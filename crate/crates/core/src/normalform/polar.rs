//! Polar form `ρ̇_j = −α_j ρ_j`, `θ̇_j = ω_j` of a complex normal form, its
//! time integration and a text rendering.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex;

use crate::error::{invalid, Error, Result};
use crate::normalform::resonance::phase_vector;
use crate::ode::{integrate_at, OdeOptions};
use crate::scalar::{cabs, carg, cis, lit, polar, to_f64, Real};

/// One nonlinear term `c · z^k` of `ż_j`, i.e. `c · Πρ_l^{r_l} · e^{i⟨p,θ⟩}`
/// in `ż_j e^{−iθ_j} = ρ̇_j + iρ_jθ̇_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarTerm<T: Real> {
    pub coefficient: Complex<T>,
    /// Exponents over `(z₁, z̄₁, …, z_m, z̄_m)`.
    pub exponents: Vec<u32>,
    pub rho_powers: Vec<u32>,
    pub phase: Vec<i32>,
}

impl<T: Real> PolarTerm<T> {
    pub fn new(coefficient: Complex<T>, exponents: Vec<u32>, mode: usize) -> Self {
        let m = exponents.len() / 2;
        let rho_powers = (0..m)
            .map(|l| exponents[2 * l] + exponents[2 * l + 1])
            .collect();
        let phase = phase_vector(&exponents, mode);
        Self {
            coefficient,
            exponents,
            rho_powers,
            phase,
        }
    }

    pub fn is_amplitude_only(&self) -> bool {
        self.phase.iter().all(|&p| p == 0)
    }

    fn rho_product(&self, rho: &[T], skip: Option<usize>) -> T {
        let mut v = T::one();
        for (l, &r) in self.rho_powers.iter().enumerate() {
            let e = if skip == Some(l) { r - 1 } else { r };
            if e > 0 {
                v *= rho[l].powi(e as i32);
            }
        }
        v
    }

    fn phase_factor(&self, theta: &[T]) -> Complex<T> {
        if self.is_amplitude_only() {
            return Complex::new(T::one(), T::zero());
        }
        let phi = self
            .phase
            .iter()
            .zip(theta)
            .fold(T::zero(), |acc, (&p, &t)| acc + lit::<T>(p as f64) * t);
        cis(phi)
    }

    /// Value of `c z^k` at the complex point `z` (one entry per mode).
    fn eval_complex(&self, z: &[Complex<T>]) -> Complex<T> {
        let mut v = self.coefficient;
        for (l, zl) in z.iter().enumerate() {
            let (a, b) = (self.exponents[2 * l], self.exponents[2 * l + 1]);
            if a > 0 {
                v *= zl.powu(a);
            }
            if b > 0 {
                v *= zl.conj().powu(b);
            }
        }
        v
    }
}

/// Polar view of a normal form with `m` oscillatory modes.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarModel<T: Real> {
    eigenvalues: Vec<Complex<T>>,
    terms: Vec<Vec<PolarTerm<T>>>,
}

/// Forcing `−i f_j e^{iΩt}` added to each `ż_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalForcing<T: Real> {
    pub amplitudes: Vec<T>,
    pub omega: T,
}

impl<T: Real> PolarModel<T> {
    /// `terms[j]` lists `(exponents, coefficient)` of the nonlinear part of `ż_j`.
    pub fn from_coefficients(
        eigenvalues: Vec<Complex<T>>,
        terms: Vec<Vec<(Vec<u32>, Complex<T>)>>,
    ) -> Result<Self> {
        let m = eigenvalues.len();
        if m == 0 || terms.len() != m {
            return invalid("one term list per mode is required");
        }
        let mut out = Vec::with_capacity(m);
        for (j, list) in terms.into_iter().enumerate() {
            let mut mode_terms = Vec::with_capacity(list.len());
            for (k, c) in list {
                if k.len() != 2 * m {
                    return invalid(format!("exponent vector {k:?} does not match {m} modes"));
                }
                if k.iter().sum::<u32>() < 2 {
                    return invalid("nonlinear terms must have degree at least 2");
                }
                mode_terms.push(PolarTerm::new(c, k, j));
            }
            out.push(mode_terms);
        }
        Ok(Self {
            eigenvalues,
            terms: out,
        })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[Complex<T>] {
        &self.eigenvalues
    }

    pub fn terms(&self, mode: usize) -> &[PolarTerm<T>] {
        &self.terms[mode]
    }

    pub fn has_phase_coupling(&self) -> bool {
        self.terms.iter().flatten().any(|t| !t.is_amplitude_only())
    }

    /// `(ρ̇_j + iρ_jθ̇_j) / ρ_j`; finite at `ρ_j = 0` whenever every term carries a factor `ρ_j`.
    fn reduced_sum(&self, j: usize, rho: &[T], theta: &[T]) -> Complex<T> {
        let mut s = self.eigenvalues[j];
        for t in &self.terms[j] {
            let val = if t.rho_powers[j] > 0 {
                t.rho_product(rho, Some(j))
            } else {
                let num = t.rho_product(rho, None);
                if num == T::zero() {
                    T::zero()
                } else {
                    num / rho[j]
                }
            };
            s += t.coefficient * t.phase_factor(theta) * val;
        }
        s
    }

    /// Instantaneous damping `α_j(ρ, θ)`.
    pub fn alpha(&self, j: usize, rho: &[T], theta: &[T]) -> T {
        -self.reduced_sum(j, rho, theta).re
    }

    /// Instantaneous frequency `ω_j(ρ, θ)`.
    pub fn omega(&self, j: usize, rho: &[T], theta: &[T]) -> T {
        self.reduced_sum(j, rho, theta).im
    }

    /// `(α_j, ω_j)` with all other modes at zero amplitude.
    pub fn single_mode(&self, j: usize, rho: T) -> (T, T) {
        let mut r = vec![T::zero(); self.modes()];
        r[j] = rho;
        let th = vec![T::zero(); self.modes()];
        let s = self.reduced_sum(j, &r, &th);
        (-s.re, s.im)
    }

    /// Derivatives `(d(α_jρ)/dρ, dω_j/dρ)` along the single-mode family.
    pub fn single_mode_derivatives(&self, j: usize, rho: T) -> (T, T) {
        let mut da = -self.eigenvalues[j].re;
        let mut dw = T::zero();
        for t in &self.terms[j] {
            let own = t.rho_powers[j];
            let others = t
                .rho_powers
                .iter()
                .enumerate()
                .any(|(l, &r)| l != j && r > 0);
            if others || own == 0 {
                continue;
            }
            let c = t.coefficient;
            let p = lit::<T>(own as f64);
            da -= c.re * p * rho.powi(own as i32 - 1);
            if own >= 2 {
                dw += c.im * (p - T::one()) * rho.powi(own as i32 - 2);
            }
        }
        (da, dw)
    }

    /// `ż` for all modes (Cartesian form).
    pub fn complex_field(&self, z: &[Complex<T>]) -> Vec<Complex<T>> {
        (0..self.modes())
            .map(|j| {
                self.terms[j]
                    .iter()
                    .fold(self.eigenvalues[j] * z[j], |acc, t| acc + t.eval_complex(z))
            })
            .collect()
    }

    /// Wirtinger derivatives `(∂ż_j/∂z_l, ∂ż_j/∂z̄_l)` as `m × m` row-major tables.
    pub fn complex_jacobian(&self, z: &[Complex<T>]) -> (Vec<Complex<T>>, Vec<Complex<T>>) {
        let m = self.modes();
        let zero = Complex::new(T::zero(), T::zero());
        let mut dz = vec![zero; m * m];
        let mut dzb = vec![zero; m * m];
        for j in 0..m {
            dz[j * m + j] = self.eigenvalues[j];
            for t in &self.terms[j] {
                for l in 0..m {
                    for conj in [false, true] {
                        let idx = 2 * l + conj as usize;
                        let e = t.exponents[idx];
                        if e == 0 {
                            continue;
                        }
                        let mut reduced = t.clone();
                        reduced.exponents[idx] -= 1;
                        let v = reduced.eval_complex(z) * lit::<T>(e as f64);
                        if conj {
                            dzb[j * m + l] += v;
                        } else {
                            dz[j * m + l] += v;
                        }
                    }
                }
            }
        }
        (dz, dzb)
    }

    /// Polar right-hand side; `rho[j]` must be positive for every mode.
    fn polar_rates(
        &self,
        rho: &[T],
        theta: &[T],
        forcing: Option<(&ModalForcing<T>, T)>,
        out: &mut [T],
    ) {
        let m = self.modes();
        for j in 0..m {
            let s = self.reduced_sum(j, rho, theta) * rho[j];
            let (mut rd, mut rtd) = (s.re, s.im);
            if let Some((f, t)) = forcing {
                let phi = f.omega * t - theta[j];
                rd += f.amplitudes[j] * phi.sin();
                rtd -= f.amplitudes[j] * phi.cos();
            }
            out[j] = rd;
            out[m + j] = rtd / rho[j];
        }
    }
}

/// Samples of a normal-form trajectory.
#[derive(Clone, Debug)]
pub struct NormalFormTrajectory<T: Real> {
    pub times: Vec<T>,
    /// `z[i][j]`: mode `j` at time `i`.
    pub z: Vec<Vec<Complex<T>>>,
}

impl<T: Real> NormalFormTrajectory<T> {
    pub fn rho(&self, j: usize) -> Vec<T> {
        self.z.iter().map(|zi| cabs(zi[j])).collect()
    }
}

/// Integrates the (optionally forced) normal form from `z0` and samples it at `times`.
///
/// Polar coordinates are used while every amplitude is positive at the
/// start; otherwise the Cartesian form avoids the `1/ρ` singularity.
pub fn evolve_normal_form<T: Real>(
    pm: &PolarModel<T>,
    z0: &[Complex<T>],
    times: &[T],
    forcing: Option<&ModalForcing<T>>,
) -> Result<NormalFormTrajectory<T>> {
    let m = pm.modes();
    if z0.len() != m {
        return invalid(format!(
            "initial condition has {} entries for {m} modes",
            z0.len()
        ));
    }
    if let Some(f) = forcing {
        if f.amplitudes.len() != m {
            return invalid("one forcing amplitude per mode is required");
        }
    }
    let t0 = match times.first() {
        Some(&t) => t,
        None => {
            return Ok(NormalFormTrajectory {
                times: vec![],
                z: vec![],
            })
        }
    };
    let rho0: Vec<T> = z0.iter().map(|&z| cabs(z)).collect();
    let scale = rho0.iter().fold(T::zero(), |a, &b| a.max(b));
    let opts = OdeOptions {
        rtol: lit(1e-10),
        atol: lit::<T>(1e-14) * scale.max(lit(1e-300)),
        ..OdeOptions::default()
    };
    let smallest = rho0.iter().fold(T::max_value().unwrap(), |a, &b| a.min(b));
    let use_polar =
        smallest > lit::<T>(1e-8) * scale.max(T::min_value().unwrap().abs().min(T::one()));
    let z: Vec<Vec<Complex<T>>> = if scale == T::zero() && forcing.is_none() {
        vec![z0.to_vec(); times.len()]
    } else if use_polar {
        let mut x0 = rho0.clone();
        x0.extend(z0.iter().map(|&z| carg(z)));
        let rhs = |t: T, x: &[T], dx: &mut [T]| {
            pm.polar_rates(&x[..m], &x[m..], forcing.map(|f| (f, t)), dx);
        };
        integrate_at(rhs, t0, &x0, times, opts)?
            .into_iter()
            .map(|x| (0..m).map(|j| polar(x[j], x[m + j])).collect())
            .collect()
    } else {
        let x0: Vec<T> = z0.iter().flat_map(|z| [z.re, z.im]).collect();
        let rhs = |t: T, x: &[T], dx: &mut [T]| {
            let z: Vec<Complex<T>> = (0..m)
                .map(|j| Complex::new(x[2 * j], x[2 * j + 1]))
                .collect();
            let mut f = pm.complex_field(&z);
            if let Some(fc) = forcing {
                let e = cis(fc.omega * t) * Complex::new(T::zero(), -T::one());
                for j in 0..m {
                    f[j] += e * fc.amplitudes[j];
                }
            }
            for j in 0..m {
                dx[2 * j] = f[j].re;
                dx[2 * j + 1] = f[j].im;
            }
        };
        integrate_at(rhs, t0, &x0, times, opts)?
            .into_iter()
            .map(|x| {
                (0..m)
                    .map(|j| Complex::new(x[2 * j], x[2 * j + 1]))
                    .collect()
            })
            .collect()
    };
    let limit = lit::<T>(1e6)
        * scale.max(forcing.map_or(T::zero(), |f| {
            f.amplitudes.iter().fold(T::zero(), |a, &b| a.max(b))
        }));
    for (i, zi) in z.iter().enumerate() {
        if zi.iter().any(|&v| !(cabs(v) <= limit) && limit > T::zero()) {
            return Err(Error::Divergence(format!(
                "normal-form amplitude exceeded 1e6 times its initial value at t = {}",
                to_f64(times[i])
            )));
        }
    }
    Ok(NormalFormTrajectory {
        times: times.to_vec(),
        z,
    })
}

const SUB: [char; 10] = ['₀', '₁', '₂', '₃', '₄', '₅', '₆', '₇', '₈', '₉'];
const SUP: [char; 10] = ['⁰', '¹', '²', '³', '⁴', '⁵', '⁶', '⁷', '⁸', '⁹'];

fn script(n: usize, table: &[char; 10]) -> String {
    n.to_string()
        .chars()
        .map(|c| table[c.to_digit(10).unwrap() as usize])
        .collect()
}

/// Four significant digits in plain decimal notation.
pub fn sig4(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (3 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, x.abs());
    // rounding may add a digit (9.9996 → 10.000); re-round once
    let s = if s.replace('.', "").trim_start_matches('0').len() > 4 && decimals > 0 {
        format!("{:.*}", decimals - 1, x.abs())
    } else {
        s
    };
    s
}

fn signed(x: f64, first: bool) -> String {
    let body = sig4(x);
    match (first, x < 0.0) {
        (true, true) => format!("−{body}"),
        (true, false) => body,
        (false, true) => format!(" − {body}"),
        (false, false) => format!(" + {body}"),
    }
}

fn complex_text(c: Complex<f64>) -> String {
    let re = if c.re < 0.0 {
        format!("−{}", sig4(c.re))
    } else {
        sig4(c.re)
    };
    let sign = if c.im < 0.0 { "−" } else { "+" };
    format!("({re} {sign} {}i)", sig4(c.im))
}

impl<T: Real> PolarModel<T> {
    fn rho_name(&self, l: usize) -> String {
        if self.modes() == 1 {
            "ρ".into()
        } else {
            format!("ρ{}", script(l + 1, &SUB))
        }
    }

    fn theta_name(&self, l: usize) -> String {
        if self.modes() == 1 {
            "θ".into()
        } else {
            format!("θ{}", script(l + 1, &SUB))
        }
    }

    fn rho_monomial(&self, powers: &[u32]) -> String {
        powers
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0)
            .map(|(l, &p)| {
                let base = self.rho_name(l);
                if p == 1 {
                    base
                } else {
                    format!("{base}{}", script(p as usize, &SUP))
                }
            })
            .collect()
    }

    /// Distinct phase combinations, each normalized so its last nonzero entry is positive.
    fn phase_names(&self) -> BTreeMap<Vec<i32>, String> {
        let mut found: Vec<Vec<i32>> = Vec::new();
        for t in self.terms.iter().flatten() {
            if t.is_amplitude_only() {
                continue;
            }
            let canon = canonical_phase(&t.phase).0;
            if !found.contains(&canon) {
                found.push(canon);
            }
        }
        let single = found.len() == 1;
        found
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let name = if single {
                    "ψ".to_string()
                } else {
                    format!("ψ{}", script(i + 1, &SUB))
                };
                (p, name)
            })
            .collect()
    }

    fn phase_definition(&self, p: &[i32]) -> String {
        let mut s = String::new();
        for (l, &c) in p.iter().enumerate().rev() {
            if c == 0 {
                continue;
            }
            let name = self.theta_name(l);
            let mag = if c.abs() == 1 {
                String::new()
            } else {
                c.abs().to_string()
            };
            if s.is_empty() {
                s = format!("{}{mag}{name}", if c < 0 { "−" } else { "" });
            } else {
                s.push_str(&format!(" {} {mag}{name}", if c < 0 { "−" } else { "+" }));
            }
        }
        s
    }
}

fn canonical_phase(p: &[i32]) -> (Vec<i32>, bool) {
    let last = p.iter().rev().find(|&&c| c != 0).copied().unwrap_or(0);
    if last < 0 {
        (p.iter().map(|c| -c).collect(), true)
    } else {
        (p.to_vec(), false)
    }
}

impl<T: Real> fmt::Display for PolarModel<T> {
    /// Prints `ρ̇` and `θ̇` per mode with four significant digits; phase-coupled
    /// terms appear as `Re(c·ρ…e^{±iψ})` and the angular equation is then written for `ρθ̇`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let phases = self.phase_names();
        for j in 0..self.modes() {
            let lam = self.eigenvalues[j];
            let coupled = self.terms[j].iter().any(|t| !t.is_amplitude_only());
            let rho = self.rho_name(j);
            let dot_rho = format!("{rho}\u{307}");
            let theta_dot = format!("{}\u{307}", self.theta_name(j));

            let mut radial = signed(to_f64(lam.re), true) + &rho;
            let mut angular = if coupled {
                signed(to_f64(lam.im), true) + &rho
            } else {
                signed(to_f64(lam.im), true)
            };
            for t in &self.terms[j] {
                let c = Complex::new(to_f64(t.coefficient.re), to_f64(t.coefficient.im));
                if t.is_amplitude_only() {
                    radial += &(signed(c.re, false) + &self.rho_monomial(&t.rho_powers));
                    let mut powers = t.rho_powers.clone();
                    if !coupled {
                        powers[j] -= 1;
                    }
                    let mono = self.rho_monomial(&powers);
                    angular += &(signed(c.im, false) + &mono);
                } else {
                    let (canon, flipped) = canonical_phase(&t.phase);
                    let name = &phases[&canon];
                    let e = if flipped {
                        format!("e^{{−i{name}}}")
                    } else {
                        format!("e^{{i{name}}}")
                    };
                    let body =
                        format!("{}{}{e}", complex_text(c), self.rho_monomial(&t.rho_powers));
                    radial += &format!(" + Re({body})");
                    angular += &format!(" + Im({body})");
                }
            }
            writeln!(f, "{dot_rho} = {radial}")?;
            if coupled {
                writeln!(f, "{rho}{theta_dot} = {angular}")?;
            } else {
                writeln!(f, "{theta_dot} = {angular}")?;
            }
        }
        for (p, name) in &phases {
            writeln!(f, "{name} = {}", self.phase_definition(p))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cubic() -> PolarModel<f64> {
        PolarModel::from_coefficients(
            vec![Complex64::new(-0.001201, 0.2827)],
            vec![vec![(vec![2, 1], Complex64::new(-0.00073, 0.02546))]],
        )
        .unwrap()
    }

    #[test]
    fn cubic_alpha_omega() {
        let pm = cubic();
        let (a, w) = pm.single_mode(0, 2.0);
        assert!((a - (0.001201 + 0.00073 * 4.0)).abs() < 1e-15);
        assert!((w - (0.2827 + 0.02546 * 4.0)).abs() < 1e-15);
        assert_eq!(pm.single_mode(0, 0.0), (0.001201, 0.2827));
    }

    #[test]
    fn rendering_matches_layout() {
        let text = cubic().to_string();
        assert!(text.contains("ρ̇ = −0.001201ρ − 0.0007300ρ³"), "{text}");
        assert!(text.contains("θ̇ = 0.2827 + 0.02546ρ²"), "{text}");
    }

    #[test]
    fn constant_damping_decays_exponentially() {
        let pm =
            PolarModel::from_coefficients(vec![Complex64::new(-0.3, 2.0)], vec![vec![]]).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let tr = evolve_normal_form(&pm, &[Complex64::new(1.5, 0.0)], &times, None).unwrap();
        for (t, r) in times.iter().zip(tr.rho(0)) {
            assert!((r - 1.5 * (-0.3 * t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_amplitude_uses_cartesian_form() {
        let pm = cubic();
        let tr = evolve_normal_form(&pm, &[Complex64::new(0.0, 0.0)], &[0.0, 1.0], None).unwrap();
        assert_eq!(tr.z[1][0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(sig4(0.00073), "0.0007300");
        assert_eq!(sig4(504.4), "504.4");
        assert_eq!(sig4(16975.0), "16975");
        assert_eq!(sig4(-0.2827), "0.2827");
        assert_eq!(sig4(9.99996), "10.00");
    }
}
