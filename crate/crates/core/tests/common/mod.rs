//! Shared fixtures for the integration tests: benchmark simulations, fitted
//! models, and an independent cubic normal-form oracle for the full chain.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use ssmrom::analysis::{nmte, predict_trajectory};
use ssmrom::embed::{delay_embed, embed_all, EmbeddingConfig};
use ssmrom::manifold::{fit_manifold, ManifoldModel, ManifoldOptions};
use ssmrom::normalform::{
    fit_normal_form, fit_reduced_field, modal_decomposition, select_resonant_monomials,
    NormalFormModel, NormalFormOptions,
};
use ssmrom::ode::OdeOptions;
use ssmrom::system::{
    benchmark_chain, integrate, linearize, slow_eigenspace_ic, MechSystem, Trajectory,
};

pub type C = Complex64;

pub fn chain() -> MechSystem<f64> {
    benchmark_chain()
}

/// Free decay from the span of the given linear modes, sampled every 0.445 s.
pub fn decay(sys: &MechSystem<f64>, modes: &[usize], amps: &[f64], t_end: f64) -> Trajectory<f64> {
    let (_, spec) = linearize(sys).unwrap();
    let a: Vec<C> = amps.iter().map(|&a| C::new(a, 0.0)).collect();
    let x0 = slow_eigenspace_ic(&spec, modes, &a).unwrap();
    integrate(sys, &x0, (0.0, t_end), 0.445, None, OdeOptions::default()).unwrap()
}

pub struct Fitted {
    pub manifold: ManifoldModel<f64>,
    pub normal_form: NormalFormModel<f64>,
    pub train: Vec<Trajectory<f64>>,
    pub test: Trajectory<f64>,
    pub reduced: Vec<Trajectory<f64>>,
}

impl Fitted {
    pub fn test_nmte(&self) -> f64 {
        let pred = predict_trajectory(
            &self.manifold,
            &self.normal_form,
            &self.test.sample(0),
            self.test.times(),
        )
        .unwrap();
        nmte(&self.test, &pred.trajectory, None).unwrap().value
    }
}

pub fn fit(
    train_raw: &[Trajectory<f64>],
    test_raw: &Trajectory<f64>,
    cfg: &EmbeddingConfig,
    ssm_dim: usize,
) -> Fitted {
    let ds = embed_all(train_raw, cfg).unwrap();
    let test = delay_embed(test_raw, cfg).unwrap();
    let mf = fit_manifold(&ds, &ManifoldOptions::new(ssm_dim, 3)).unwrap();
    let reduced: Vec<_> = ds
        .trajectories
        .iter()
        .map(|t| mf.model.project_trajectory(t).unwrap())
        .collect();
    let rvf = fit_reduced_field(&reduced, 3).unwrap();
    let eig = modal_decomposition(rvf.linear()).unwrap().0;
    let res = select_resonant_monomials(&eig, 3, 0.05).unwrap();
    let nf = fit_normal_form(&rvf, &reduced, 3, &res, &NormalFormOptions::default()).unwrap();
    Fitted {
        manifold: mf.model,
        normal_form: nf,
        train: ds.trajectories,
        test,
        reduced,
    }
}

/// Slow 2D SSM, phase-space observable: train amplitude 5, test 5·2.5/3.
pub fn fit_2d_phase() -> Fitted {
    let sys = chain();
    let train = decay(&sys, &[0], &[5.0], 3000.0);
    let test = decay(&sys, &[0], &[5.0 * 2.5 / 3.0], 3000.0);
    let mut cfg = EmbeddingConfig::identity(vec![]);
    cfg.trim_time = 1200.0;
    fit(&[train], &test, &cfg, 2)
}

/// Slow 2D SSM from five delayed copies of `q₅`.
pub fn fit_2d_delay() -> Fitted {
    let sys = chain();
    let train = decay(&sys, &[0], &[5.0], 3000.0);
    let test = decay(&sys, &[0], &[5.0 * 2.5 / 3.0], 3000.0);
    let mut cfg = EmbeddingConfig::delays(5, 1, vec![4]);
    cfg.trim_time = 1200.0;
    fit(&[train], &test, &cfg, 2)
}

pub const TRAIN_4D: [(f64, f64); 5] = [(2.0, 1.0), (1.0, 2.0), (0.5, 3.0), (2.0, 2.0), (1.5, 0.6)];
pub const TEST_4D: (f64, f64) = (1.5, 1.6);

/// Slow 4D SSM, phase-space observable.
pub fn fit_4d() -> Fitted {
    let sys = chain();
    let train: Vec<_> = TRAIN_4D
        .iter()
        .map(|&(a, b)| decay(&sys, &[0, 1], &[a, b], 3000.0))
        .collect();
    let test = decay(&sys, &[0, 1], &[TEST_4D.0, TEST_4D.1], 3000.0);
    let mut cfg = EmbeddingConfig::identity(vec![]);
    cfg.trim_time = 300.0;
    fit(&train, &test, &cfg, 4)
}

// ---------------------------------------------------------------------------
// Cubic normal form of the full chain, computed directly from its force law.

type Poly = BTreeMap<Vec<u32>, C>;

fn add_to(p: &mut Poly, k: Vec<u32>, c: C) {
    *p.entry(k).or_insert(C::new(0.0, 0.0)) += c;
}

fn mul(a: &Poly, b: &Poly, max_deg: u32) -> Poly {
    let mut out = Poly::new();
    for (ka, ca) in a {
        for (kb, cb) in b {
            let k: Vec<u32> = ka.iter().zip(kb).map(|(x, y)| x + y).collect();
            if k.iter().sum::<u32>() <= max_deg {
                add_to(&mut out, k, ca * cb);
            }
        }
    }
    out
}

fn deriv(p: &Poly, v: usize) -> Poly {
    let mut out = Poly::new();
    for (k, c) in p {
        if k[v] > 0 {
            let mut k2 = k.clone();
            k2[v] -= 1;
            add_to(&mut out, k2, c * k[v] as f64);
        }
    }
    out
}

fn of_degree(p: &Poly, d: u32) -> Poly {
    p.iter()
        .filter(|(k, _)| k.iter().sum::<u32>() == d)
        .map(|(k, c)| (k.clone(), *c))
        .collect()
}

/// Modal eigenvalues (positive imaginary part first in each pair) with
/// unit-norm eigenvectors, and the cubic resonant coefficients: `coef(j, k)`
/// for `ż_j` with exponents `k` over `(z₁, z̄₁, z₂, z̄₂, …)` of the requested modes.
pub struct CubicOracle {
    pub eigenvalues: Vec<C>,
    index: Vec<(usize, usize)>,
    cubic: Vec<Poly>,
}

impl CubicOracle {
    pub fn new(sys: &MechSystem<f64>) -> Self {
        let (_, spec) = linearize(sys).unwrap();
        let n = sys.dof_count();
        let dim = 2 * n;
        let v = DMatrix::from_fn(dim, dim, |r, c| {
            let e = &spec.eigenvectors[c];
            e[r] / e.norm()
        });
        let vinv = v.clone().try_inverse().unwrap();
        let lam = spec.eigenvalues.clone();
        // state components as linear polynomials in z
        let x: Vec<Poly> = (0..dim)
            .map(|r| {
                let mut p = Poly::new();
                for c in 0..dim {
                    let mut k = vec![0; dim];
                    k[c] = 1;
                    add_to(&mut p, k, v[(r, c)]);
                }
                p
            })
            .collect();
        let mut one = Poly::new();
        one.insert(vec![0; dim], C::new(1.0, 0.0));
        // nonlinear force per dof
        let mut force = vec![Poly::new(); n];
        for t in sys.nonlinear_terms() {
            let mut m = one.clone();
            for (i, &e) in t.q_exponents.iter().enumerate() {
                for _ in 0..e {
                    m = mul(&m, &x[i], 3);
                }
            }
            for (i, &e) in t.qdot_exponents.iter().enumerate() {
                for _ in 0..e {
                    m = mul(&m, &x[n + i], 3);
                }
            }
            for (k, c) in m {
                add_to(&mut force[t.dof], k, c * t.coefficient);
            }
        }
        let minv = sys.mass().clone().try_inverse().unwrap();
        // first-order nonlinearity F (velocity rows only), then g = V⁻¹F
        let mut f_state = vec![Poly::new(); dim];
        for i in 0..n {
            for j in 0..n {
                for (k, c) in &force[j] {
                    add_to(&mut f_state[n + i], k.clone(), -c * minv[(i, j)]);
                }
            }
        }
        let g: Vec<Poly> = (0..dim)
            .map(|k| {
                let mut p = Poly::new();
                for l in 0..dim {
                    for (e, c) in &f_state[l] {
                        add_to(&mut p, e.clone(), vinv[(k, l)] * c);
                    }
                }
                p
            })
            .collect();
        let q: Vec<Poly> = g.iter().map(|p| of_degree(p, 2)).collect();
        let cub: Vec<Poly> = g.iter().map(|p| of_degree(p, 3)).collect();
        let dot = |k: &[u32]| -> C { k.iter().zip(&lam).map(|(&e, l)| l * e as f64).sum() };
        // quadratic removal φ_k = Q_k / (⟨α,λ⟩ − λ_k)
        let phi: Vec<Poly> = (0..dim)
            .map(|k| {
                q[k].iter()
                    .map(|(a, c)| (a.clone(), c / (dot(a) - lam[k])))
                    .collect()
            })
            .collect();
        // z = y + φ(y) leaves C + DQ·φ at cubic order
        let mut cubic = Vec::with_capacity(dim);
        for k in 0..dim {
            let mut r = cub[k].clone();
            for i in 0..dim {
                for (e, c) in mul(&deriv(&q[k], i), &phi[i], 3) {
                    add_to(&mut r, e, c);
                }
            }
            cubic.push(r);
        }
        Self {
            eigenvalues: (0..spec.mode_count()).map(|j| spec.mode(j).0).collect(),
            index: spec.pairs.clone(),
            cubic,
        }
    }

    /// Coefficient of `∏ z_{modes[i]}^{k[2i]} z̄^{k[2i+1]}` in `ż_{modes[j]}`.
    pub fn coef(&self, modes: &[usize], j: usize, k: &[u32]) -> C {
        let dim = self.cubic.len();
        let mut full = vec![0; dim];
        for (i, &m) in modes.iter().enumerate() {
            let (a, b) = self.index[m];
            full[a] += k[2 * i];
            full[b] += k[2 * i + 1];
        }
        let row = self.index[modes[j]].0;
        self.cubic[row].get(&full).copied().unwrap_or_default()
    }
}

/// Coefficient of exponent `k` in mode `j` of a fitted normal form.
pub fn nf_coef(nf: &NormalFormModel<f64>, j: usize, k: &[u32]) -> C {
    nf.coefficient(j, k)
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.amax()
}
