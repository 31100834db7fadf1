//! Resonance bookkeeping: which monomials the normal form keeps, and whether
//! the slow spectral subspace admits a smooth invariant manifold.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::poly::{conjugate_exponents, degree_exponents};
use crate::scalar::{cabs, lit, to_f64, Real};
use crate::system::Spectrum;

/// Multi-indices (over `z₁, z̄₁, …, z_m, z̄_m`, degree ≥ 2) kept in the
/// equation of each `z_j`; conjugate equations use the conjugate indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub modes: usize,
    pub order: u32,
    pub per_mode: Vec<Vec<Vec<u32>>>,
}

impl ResonanceSet {
    /// Whether monomial `k` is kept in equation `eq` (`2j` for `z_j`, `2j+1` for `z̄_j`).
    pub fn contains(&self, eq: usize, k: &[u32]) -> bool {
        let j = eq / 2;
        if eq % 2 == 0 {
            self.per_mode[j].iter().any(|e| e.as_slice() == k)
        } else {
            let kc = conjugate_exponents(k);
            self.per_mode[j].iter().any(|e| *e == kc)
        }
    }

    /// Whether any kept monomial carries a net phase (depends on phase differences).
    pub fn has_phase_coupling(&self) -> bool {
        self.per_mode.iter().enumerate().any(|(j, ks)| {
            ks.iter()
                .any(|k| phase_vector(k, j).iter().any(|&p| p != 0))
        })
    }

    /// Amplitude-type monomials `z_j Π_l |z_l|^{2a_l}` only, up to `order`.
    pub fn amplitude_only(modes: usize, order: u32) -> Self {
        let per_mode = (0..modes)
            .map(|j| {
                let mut out = Vec::new();
                for d in 2..=order {
                    for k in degree_exponents(2 * modes, d) {
                        if phase_vector(&k, j).iter().all(|&p| p == 0) {
                            out.push(k);
                        }
                    }
                }
                out
            })
            .collect();
        Self {
            modes,
            order,
            per_mode,
        }
    }
}

/// Net phase `⟨k, θ⟩ − θ_j` of monomial `k` in the equation of mode `j`,
/// as integer multiples of each `θ_l`.
pub fn phase_vector(k: &[u32], j: usize) -> Vec<i32> {
    let m = k.len() / 2;
    (0..m)
        .map(|l| k[2 * l] as i32 - k[2 * l + 1] as i32 - if l == j { 1 } else { 0 })
        .collect()
}

/// Keeps monomial `k` (degree `2..=order`) in equation `j` when
/// `|Im(λ_j − ⟨k, Λ⟩)| ≤ tol_rel · max_l Im λ_l`, with `Λ = (λ₁, λ̄₁, …)`.
pub fn select_resonant_monomials<T: Real>(
    eigenvalues: &[Complex<T>],
    order: u32,
    tol_rel: T,
) -> Result<ResonanceSet> {
    if eigenvalues.is_empty() {
        return invalid("no eigenvalues given");
    }
    if eigenvalues.iter().any(|l| !(l.im > T::zero())) {
        return invalid("resonance selection needs eigenvalues with positive imaginary part");
    }
    let m = eigenvalues.len();
    let wmax = eigenvalues
        .iter()
        .map(|l| l.im)
        .fold(T::zero(), |a, b| a.max(b));
    let tol = tol_rel * wmax;
    let per_mode = (0..m)
        .map(|j| {
            let mut out = Vec::new();
            for d in 2..=order {
                for k in degree_exponents(2 * m, d) {
                    let mut s = T::zero();
                    for l in 0..m {
                        s += lit::<T>(k[2 * l] as f64 - k[2 * l + 1] as f64) * eigenvalues[l].im;
                    }
                    if (eigenvalues[j].im - s).abs() <= tol {
                        out.push(k);
                    }
                }
            }
            out
        })
        .collect();
    Ok(ResonanceSet {
        modes: m,
        order,
        per_mode,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceViolation {
    /// Index of the outer eigenvalue in the supplied list.
    pub outer: usize,
    pub multi_index: Vec<u32>,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterResonanceReport {
    pub spectral_quotient: usize,
    /// Set when the quotient was capped to keep the enumeration finite.
    pub truncated: bool,
    pub tolerance: f64,
    pub checked: usize,
    pub violations: Vec<ResonanceViolation>,
}

const QUOTIENT_CAP: usize = 25;

/// Nonresonance check between the inner eigenvalues (given with positive
/// imaginary part; conjugates implied) and all outer ones.
///
/// Every `k` with `2 ≤ |k| ≤ ⌊min Re λ / max_inner Re λ⌋` is tested; a pair is
/// flagged when `|⟨k, Λ⟩ − λ_outer| < tol` (default `1e-3 · max |Im λ|`).
pub fn check_outer_resonance_values<T: Real>(
    all: &[Complex<T>],
    inner: &[usize],
    tol: Option<T>,
) -> Result<OuterResonanceReport> {
    if inner.is_empty() {
        return invalid("inner mode set is empty");
    }
    if let Some(&i) = inner.iter().find(|&&i| i >= all.len()) {
        return invalid(format!("mode {i} out of range"));
    }
    let inner_max = inner
        .iter()
        .map(|&i| all[i].re)
        .fold(-T::max_value().unwrap(), |a, b| a.max(b));
    let global_min = all
        .iter()
        .map(|l| l.re)
        .fold(T::max_value().unwrap(), |a, b| a.min(b));
    let wmax = all
        .iter()
        .map(|l| l.im.abs())
        .fold(T::zero(), |a, b| a.max(b));
    let tol = tol.unwrap_or(lit::<T>(1e-3) * wmax);
    let quotient = if inner_max < T::zero() {
        to_f64(global_min / inner_max).floor().max(0.0) as usize
    } else {
        QUOTIENT_CAP
    };
    let truncated = quotient > QUOTIENT_CAP;
    let qmax = quotient.min(QUOTIENT_CAP);
    // inner eigenvalues with their conjugates, in (λ, λ̄) order
    let lam: Vec<Complex<T>> = inner
        .iter()
        .flat_map(|&i| [all[i], all[i].conj()])
        .collect();
    let outer: Vec<usize> = (0..all.len()).filter(|i| !inner.contains(i)).collect();
    let mut violations = Vec::new();
    let mut checked = 0;
    for d in 2..=qmax.max(1) as u32 {
        if (d as usize) > qmax {
            break;
        }
        for k in degree_exponents(lam.len(), d) {
            let s = k
                .iter()
                .zip(&lam)
                .fold(Complex::new(T::zero(), T::zero()), |acc, (&e, &l)| {
                    acc + l * lit::<T>(e as f64)
                });
            for &o in &outer {
                // outer eigenvalues with their conjugates
                for target in [all[o], all[o].conj()] {
                    checked += 1;
                    let dist = cabs(s - target);
                    if dist < tol {
                        violations.push(ResonanceViolation {
                            outer: o,
                            multi_index: k.clone(),
                            distance: to_f64(dist),
                        });
                    }
                }
            }
        }
    }
    Ok(OuterResonanceReport {
        spectral_quotient: quotient,
        truncated,
        tolerance: to_f64(tol),
        checked,
        violations,
    })
}

/// [`check_outer_resonance_values`] on a full spectrum; `mode_set` indexes modes.
pub fn check_outer_resonance<T: Real>(
    spec: &Spectrum<T>,
    mode_set: &[usize],
) -> Result<OuterResonanceReport> {
    let modes: Vec<Complex<T>> = (0..spec.mode_count()).map(|j| spec.mode(j).0).collect();
    check_outer_resonance_values(&modes, mode_set, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn single_mode_cubic_keeps_only_amplitude_term() {
        let set = select_resonant_monomials(&[Complex64::new(-0.0012, 0.2827)], 3, 0.05).unwrap();
        assert_eq!(set.per_mode[0], vec![vec![2, 1]]);
        let set5 = select_resonant_monomials(&[Complex64::new(-0.0012, 0.2827)], 5, 0.05).unwrap();
        assert_eq!(set5.per_mode[0], vec![vec![2, 1], vec![3, 2]]);
    }

    #[test]
    fn exact_one_to_two_is_flagged() {
        let eigs = [Complex64::new(-0.1, 1.0), Complex64::new(-0.2, 2.0)];
        let rep = check_outer_resonance_values(&eigs, &[0], None).unwrap();
        assert_eq!(rep.spectral_quotient, 2);
        assert!(rep
            .violations
            .iter()
            .any(|v| v.multi_index == vec![2, 0] && v.outer == 1));
    }

    #[test]
    fn phase_vectors() {
        assert_eq!(phase_vector(&[2, 1, 0, 0], 0), vec![0, 0]);
        assert_eq!(phase_vector(&[0, 1, 1, 0], 0), vec![-2, 1]);
        assert_eq!(phase_vector(&[2, 0, 0, 0], 1), vec![2, -1]);
    }
}
