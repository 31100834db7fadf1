//! Extended normal form `ż = n(z)` of a reduced vector field, identified by
//! minimizing the conjugacy error on data.
//!
//! Coordinates: `ξ = T ζ` links the real reduced coordinates to modal ones
//! (`ζ = (ζ₁, ζ̄₁, …)`), and `z = h⁻¹(ζ) = ζ + H(ζ)` are the normal-form
//! coordinates. All coefficient tables share one monomial basis in `2m`
//! variables of degrees `1..=M`; row `2j+1` is the conjugate mirror of row `2j`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::check_format;
use crate::linalg::{eigen_general, inverse_checked, lstsq, normalize_phase};
use crate::normalform::polar::PolarModel;
use crate::normalform::reduced::ReducedVectorField;
use crate::normalform::resonance::ResonanceSet;
use crate::poly::{MonomialBasis, TruncatedAlgebra};
use crate::scalar::{cabs, lit, to_f64, Real};
use crate::system::Trajectory;

type C<T> = Complex<T>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalFormOptions {
    pub max_iterations: usize,
    /// Stop when the relative decrease of the loss per iteration falls below this.
    pub tolerance: f64,
    /// Training samples are thinned by a uniform stride to at most this many.
    pub max_samples: usize,
}

impl Default for NormalFormOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: 1e-10,
            max_samples: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalFormModel<T: Real> {
    eigenvalues: Vec<C<T>>,
    modal_change: DMatrix<C<T>>,
    modal_inverse: DMatrix<C<T>>,
    basis: MonomialBasis,
    h_inv: DMatrix<C<T>>,
    h: DMatrix<C<T>>,
    n: DMatrix<C<T>>,
    resonance: ResonanceSet,
    /// Conjugacy loss (mean squared residual) after each accepted iteration.
    pub cost_history: Vec<f64>,
    /// Largest `|z_j|` seen in the training data, per mode.
    pub training_radius: Vec<f64>,
}

/// Eigen-decomposition of `W` into `T = [v₁, v̄₁, …]`, modes sorted by
/// increasing `Im λ`, each vector unit norm with its largest entry real positive.
pub fn modal_decomposition<T: Real>(w: &DMatrix<T>) -> Result<(Vec<C<T>>, DMatrix<C<T>>)> {
    let d = w.nrows();
    if d == 0 || d % 2 != 0 || w.ncols() != d {
        return invalid("the reduced linear part must be square with even dimension");
    }
    let eig = eigen_general(w)?;
    let mut upper: Vec<(C<T>, DVector<C<T>>)> = eig
        .values
        .iter()
        .zip(&eig.vectors)
        .filter(|(l, _)| l.im > T::zero())
        .map(|(l, v)| (*l, v.clone()))
        .collect();
    if upper.len() * 2 != d {
        return Err(Error::InvalidArgument(
            "reduced linear part has real eigenvalues; the normal form needs oscillatory modes"
                .into(),
        ));
    }
    upper.sort_by(|a, b| a.0.im.partial_cmp(&b.0.im).unwrap());
    let m = upper.len();
    let mut t = DMatrix::zeros(d, d);
    let mut eigs = Vec::with_capacity(m);
    for (j, (l, v)) in upper.into_iter().enumerate() {
        let v = normalize_phase(v);
        t.set_column(2 * j, &v);
        t.set_column(2 * j + 1, &v.map(|x| x.conj()));
        eigs.push(l);
    }
    Ok((eigs, t))
}

fn czero<T: Real>() -> C<T> {
    C::new(T::zero(), T::zero())
}

fn mirror_rows<T: Real>(basis: &MonomialBasis, table: &mut DMatrix<C<T>>) {
    for j in 0..table.nrows() / 2 {
        for i in 0..basis.len() {
            let ci = basis.conjugate_index(i);
            table[(2 * j + 1, ci)] = table[(2 * j, i)].conj();
        }
    }
}

fn identity_table<T: Real>(basis: &MonomialBasis) -> DMatrix<C<T>> {
    let v = basis.vars();
    let mut t = DMatrix::from_element(v, basis.len(), czero());
    for r in 0..v {
        t[(r, r)] = C::new(T::one(), T::zero());
    }
    t
}

fn rows_of<T: Real>(table: &DMatrix<C<T>>) -> Vec<Vec<C<T>>> {
    (0..table.nrows())
        .map(|r| table.row(r).iter().copied().collect())
        .collect()
}

/// `⟨k, Λ⟩` with `Λ = (λ₁, λ̄₁, …)`.
fn weighted_sum<T: Real>(k: &[u32], eigs: &[C<T>]) -> C<T> {
    let mut s = czero();
    for (l, lam) in eigs.iter().enumerate() {
        s += *lam * lit::<T>(k[2 * l] as f64) + lam.conj() * lit::<T>(k[2 * l + 1] as f64);
    }
    s
}

/// Modal field `ζ̇ = T⁻¹ f(Tζ)` as polynomials of the algebra.
fn modal_field_polys<T: Real>(
    alg: &TruncatedAlgebra,
    rvf: &ReducedVectorField<T>,
    t: &DMatrix<C<T>>,
    t_inv: &DMatrix<C<T>>,
) -> Vec<Vec<C<T>>> {
    let d = rvf.dim();
    let xi: Vec<Vec<C<T>>> = (0..d)
        .map(|v| {
            let mut p = alg.zero();
            for w in 0..d {
                p = alg.add(&p, &alg.scale(&alg.variable(w), t[(v, w)]));
            }
            p
        })
        .collect();
    let nl_rows: Vec<Vec<C<T>>> = (0..d)
        .map(|v| {
            rvf.nonlinear()
                .row(v)
                .iter()
                .map(|&x| C::new(x, T::zero()))
                .collect()
        })
        .collect();
    let mut f = if rvf.basis().is_empty() {
        vec![alg.zero(); d]
    } else {
        alg.compose(rvf.basis(), &nl_rows, &xi)
    };
    for (v, fv) in f.iter_mut().enumerate() {
        for w in 0..d {
            let c = C::new(rvf.linear()[(v, w)], T::zero());
            *fv = alg.add(fv, &alg.scale(&xi[w], c));
        }
    }
    (0..d)
        .map(|r| {
            let mut p = alg.zero();
            for v in 0..d {
                p = alg.add(&p, &alg.scale(&f[v], t_inv[(r, v)]));
            }
            p
        })
        .collect()
}

/// Order-by-order solution of the homological equations for a polynomial
/// modal field `g`: non-resonant terms are removed by `H`, resonant ones kept in `n`.
fn homological<T: Real>(
    alg: &TruncatedAlgebra,
    basis: &MonomialBasis,
    g: &[Vec<C<T>>],
    eigs: &[C<T>],
    resonance: &ResonanceSet,
) -> (DMatrix<C<T>>, DMatrix<C<T>>) {
    let vars = basis.vars();
    let m = vars / 2;
    let mut h_inv = identity_table::<T>(basis);
    let mut n = DMatrix::from_element(vars, basis.len(), czero());
    for j in 0..m {
        n[(2 * j, 2 * j)] = eigs[j];
    }
    mirror_rows(basis, &mut n);
    for d in 2..=basis.max_degree() {
        let z: Vec<Vec<C<T>>> = rows_of(&h_inv)
            .iter()
            .map(|r| alg.embed(basis, r))
            .collect();
        let nz = alg.compose(basis, &rows_of(&n), &z);
        for j in 0..m {
            let r = 2 * j;
            let mut zdot = alg.zero();
            for (v, gv) in g.iter().enumerate() {
                zdot = alg.add(&zdot, &alg.mul(&alg.derivative(&z[r], v), gv));
            }
            let res = alg.sub(&zdot, &nz[r]);
            for i in 0..basis.len() {
                if basis.degree(i) != d {
                    continue;
                }
                let k = basis.exponent(i);
                let c = res[alg.basis().index_of(k).unwrap()];
                if resonance.contains(r, k) {
                    n[(r, i)] = c;
                } else {
                    let den = weighted_sum(k, eigs) - eigs[j];
                    h_inv[(r, i)] = -c / den;
                }
            }
        }
        mirror_rows(basis, &mut h_inv);
        mirror_rows(basis, &mut n);
    }
    (h_inv, n)
}

/// `h` with `h⁻¹(h(z)) = z` through order `M` by the fixed-point iteration `h ← z − H(h)`.
fn invert_series<T: Real>(
    alg: &TruncatedAlgebra,
    basis: &MonomialBasis,
    h_inv: &DMatrix<C<T>>,
) -> DMatrix<C<T>> {
    let vars = basis.vars();
    let mut nl = h_inv.clone();
    for r in 0..vars {
        nl[(r, r)] -= C::new(T::one(), T::zero());
    }
    let nl_rows = rows_of(&nl);
    let ident: Vec<Vec<C<T>>> = (0..vars).map(|v| alg.variable(v)).collect();
    let mut h = ident.clone();
    for _ in 1..basis.max_degree() {
        let hn = alg.compose(basis, &nl_rows, &h);
        h = ident.iter().zip(&hn).map(|(a, b)| alg.sub(a, b)).collect();
    }
    let mut out = DMatrix::from_element(vars, basis.len(), czero());
    for r in 0..vars {
        for (i, c) in alg.restrict(basis, &h[r]).into_iter().enumerate() {
            out[(r, i)] = c;
        }
    }
    out
}

/// Normal-form parameters for the optimizer: per mode, `H` on non-resonant
/// monomials of degree ≥ 2 and `n` on the resonant ones (plus the linear term).
struct Layout {
    m: usize,
    h_idx: Vec<Vec<usize>>,
    n_idx: Vec<Vec<usize>>,
    offsets: Vec<(usize, usize)>,
    len: usize,
}

impl Layout {
    fn new(basis: &MonomialBasis, resonance: &ResonanceSet) -> Self {
        let m = basis.vars() / 2;
        let mut h_idx = Vec::with_capacity(m);
        let mut n_idx = Vec::with_capacity(m);
        let mut offsets = Vec::with_capacity(m);
        let mut len = 0;
        for j in 0..m {
            let mut hs = Vec::new();
            let mut ns = vec![2 * j];
            for i in 0..basis.len() {
                if basis.degree(i) < 2 {
                    continue;
                }
                if resonance.contains(2 * j, basis.exponent(i)) {
                    ns.push(i);
                } else {
                    hs.push(i);
                }
            }
            offsets.push((len, len + 2 * hs.len()));
            len += 2 * (hs.len() + ns.len());
            h_idx.push(hs);
            n_idx.push(ns);
        }
        Self {
            m,
            h_idx,
            n_idx,
            offsets,
            len,
        }
    }

    fn pack<T: Real>(&self, h_inv: &DMatrix<C<T>>, n: &DMatrix<C<T>>) -> DVector<T> {
        let mut p = DVector::zeros(self.len);
        for j in 0..self.m {
            let (ho, no) = self.offsets[j];
            for (q, &i) in self.h_idx[j].iter().enumerate() {
                p[ho + 2 * q] = h_inv[(2 * j, i)].re;
                p[ho + 2 * q + 1] = h_inv[(2 * j, i)].im;
            }
            for (q, &i) in self.n_idx[j].iter().enumerate() {
                p[no + 2 * q] = n[(2 * j, i)].re;
                p[no + 2 * q + 1] = n[(2 * j, i)].im;
            }
        }
        p
    }

    fn unpack<T: Real>(
        &self,
        basis: &MonomialBasis,
        p: &DVector<T>,
    ) -> (DMatrix<C<T>>, DMatrix<C<T>>) {
        let mut h_inv = identity_table::<T>(basis);
        let mut n = DMatrix::from_element(basis.vars(), basis.len(), czero());
        for j in 0..self.m {
            let (ho, no) = self.offsets[j];
            for (q, &i) in self.h_idx[j].iter().enumerate() {
                h_inv[(2 * j, i)] = C::new(p[ho + 2 * q], p[ho + 2 * q + 1]);
            }
            for (q, &i) in self.n_idx[j].iter().enumerate() {
                n[(2 * j, i)] = C::new(p[no + 2 * q], p[no + 2 * q + 1]);
            }
        }
        mirror_rows(basis, &mut h_inv);
        mirror_rows(basis, &mut n);
        (h_inv, n)
    }
}

/// Per-sample monomial values `φ(ζ)` and their time derivatives `Ψ = Dφ(ζ) ζ̇`.
struct Samples<T: Real> {
    phi: Vec<Vec<C<T>>>,
    psi: Vec<Vec<C<T>>>,
}

struct Problem<'a, T: Real> {
    basis: &'a MonomialBasis,
    layout: &'a Layout,
    samples: &'a Samples<T>,
}

impl<T: Real> Problem<'_, T> {
    fn z_even(&self, h_inv: &DMatrix<C<T>>, i: usize) -> Vec<C<T>> {
        let phi = &self.samples.phi[i];
        let mut z = vec![czero(); self.basis.vars()];
        for j in 0..self.layout.m {
            let v = phi
                .iter()
                .enumerate()
                .fold(czero(), |a, (k, &f)| a + h_inv[(2 * j, k)] * f);
            z[2 * j] = v;
            z[2 * j + 1] = v.conj();
        }
        z
    }

    fn zdot(&self, h_inv: &DMatrix<C<T>>, i: usize, j: usize) -> C<T> {
        self.samples.psi[i]
            .iter()
            .enumerate()
            .fold(czero(), |a, (k, &f)| a + h_inv[(2 * j, k)] * f)
    }

    fn cost(&self, p: &DVector<T>) -> T {
        let (h_inv, n) = self.layout.unpack(self.basis, p);
        let mut s = T::zero();
        for i in 0..self.samples.phi.len() {
            let z = self.z_even(&h_inv, i);
            let pz = self.basis.eval(&z);
            for j in 0..self.layout.m {
                let nj = self.layout.n_idx[j]
                    .iter()
                    .fold(czero(), |a, &k| a + n[(2 * j, k)] * pz[k]);
                s += (self.zdot(&h_inv, i, j) - nj).norm_sqr();
            }
        }
        s / lit::<T>(self.samples.phi.len() as f64)
    }

    /// Gauss–Newton normal equations `(JᵀJ, Jᵀr)` of the mean squared residual.
    fn normal_equations(&self, p: &DVector<T>) -> (DMatrix<T>, DVector<T>) {
        let (h_inv, n) = self.layout.unpack(self.basis, p);
        let np = self.layout.len;
        let vars = self.basis.vars();
        let mut jtj = DMatrix::zeros(np, np);
        let mut jtr = DVector::zeros(np);
        let mut row = vec![czero::<T>(); np];
        let mut nz: Vec<usize> = Vec::with_capacity(np);
        let i_unit = C::new(T::zero(), T::one());
        for i in 0..self.samples.phi.len() {
            let phi = &self.samples.phi[i];
            let psi = &self.samples.psi[i];
            let z = self.z_even(&h_inv, i);
            let pz = self.basis.eval(&z);
            let jz = self.basis.jacobian(&z);
            for j in 0..self.layout.m {
                let mut nj = czero();
                let mut dn = vec![czero::<T>(); vars];
                for &k in &self.layout.n_idx[j] {
                    let c = n[(2 * j, k)];
                    nj += c * pz[k];
                    for v in 0..vars {
                        dn[v] += c * jz[k * vars + v];
                    }
                }
                let r = self.zdot(&h_inv, i, j) - nj;
                nz.clear();
                for jp in 0..self.layout.m {
                    let (ho, _) = self.layout.offsets[jp];
                    let (a, b) = (dn[2 * jp], dn[2 * jp + 1]);
                    let same = jp == j;
                    for (q, &k) in self.layout.h_idx[jp].iter().enumerate() {
                        let f = phi[k];
                        let fc = f.conj();
                        let mut dre = -(a * f + b * fc);
                        let mut dim = -(a * f - b * fc) * i_unit;
                        if same {
                            dre += psi[k];
                            dim += psi[k] * i_unit;
                        }
                        row[ho + 2 * q] = dre;
                        row[ho + 2 * q + 1] = dim;
                        nz.push(ho + 2 * q);
                        nz.push(ho + 2 * q + 1);
                    }
                }
                let (_, no) = self.layout.offsets[j];
                for (q, &k) in self.layout.n_idx[j].iter().enumerate() {
                    row[no + 2 * q] = -pz[k];
                    row[no + 2 * q + 1] = -pz[k] * i_unit;
                    nz.push(no + 2 * q);
                    nz.push(no + 2 * q + 1);
                }
                for (x, &a) in nz.iter().enumerate() {
                    let ra = row[a];
                    jtr[a] += ra.re * r.re + ra.im * r.im;
                    for &b in &nz[x..] {
                        let rb = row[b];
                        jtj[(a, b)] += ra.re * rb.re + ra.im * rb.im;
                    }
                }
            }
        }
        let scale = T::one() / lit::<T>(self.samples.phi.len() as f64);
        for a in 0..np {
            for b in a..np {
                let v = jtj[(a, b)] + jtj[(b, a)];
                let v = if a == b { jtj[(a, a)] } else { v };
                jtj[(a, b)] = v * scale;
                jtj[(b, a)] = v * scale;
            }
        }
        (jtj, jtr * scale)
    }

    /// Exact least-squares update of the `n` coefficients for fixed `H`.
    fn n_step(&self, p: &DVector<T>) -> Option<DVector<T>> {
        let (h_inv, mut n) = self.layout.unpack(self.basis, p);
        let ns = self.samples.phi.len();
        let zs: Vec<Vec<C<T>>> = (0..ns)
            .map(|i| self.basis.eval(&self.z_even(&h_inv, i)))
            .collect();
        for j in 0..self.layout.m {
            let idx = &self.layout.n_idx[j];
            let a = DMatrix::from_fn(ns, idx.len(), |i, q| zs[i][idx[q]]);
            let b = DMatrix::from_fn(ns, 1, |i, _| self.zdot(&h_inv, i, j));
            let sol = lstsq(&a, &b, "normal-form coefficient regression").ok()?;
            for (q, &k) in idx.iter().enumerate() {
                n[(2 * j, k)] = sol.solution[(q, 0)];
            }
        }
        mirror_rows(self.basis, &mut n);
        Some(self.layout.pack(&h_inv, &n))
    }
}

impl<T: Real> NormalFormModel<T> {
    /// Assembles a model from its tables; `h` is recomputed by series inversion.
    pub fn from_parts(
        eigenvalues: Vec<C<T>>,
        modal_change: DMatrix<C<T>>,
        order: u32,
        h_inv: DMatrix<C<T>>,
        n: DMatrix<C<T>>,
        resonance: ResonanceSet,
    ) -> Result<Self> {
        let m = eigenvalues.len();
        let vars = 2 * m;
        if m == 0 || order == 0 {
            return invalid("a normal form needs at least one mode and order ≥ 1");
        }
        if modal_change.shape() != (vars, vars) {
            return invalid("modal change must be 2m × 2m");
        }
        if resonance.modes != m {
            return invalid("resonance set does not match the mode count");
        }
        let basis = MonomialBasis::new(vars, 1, order);
        if h_inv.shape() != (vars, basis.len()) || n.shape() != (vars, basis.len()) {
            return invalid("coefficient tables have the wrong shape");
        }
        let modal_inverse = inverse_checked(&modal_change, "modal change")?;
        let alg = TruncatedAlgebra::new(vars, order);
        let h = invert_series(&alg, &basis, &h_inv);
        Ok(Self {
            eigenvalues,
            modal_change,
            modal_inverse,
            basis,
            h_inv,
            h,
            n,
            resonance,
            cost_history: Vec::new(),
            training_radius: vec![0.0; m],
        })
    }

    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn order(&self) -> u32 {
        self.basis.max_degree()
    }

    pub fn eigenvalues(&self) -> &[C<T>] {
        &self.eigenvalues
    }

    pub fn modal_change(&self) -> &DMatrix<C<T>> {
        &self.modal_change
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn h_inv(&self) -> &DMatrix<C<T>> {
        &self.h_inv
    }

    pub fn h(&self) -> &DMatrix<C<T>> {
        &self.h
    }

    pub fn n(&self) -> &DMatrix<C<T>> {
        &self.n
    }

    pub fn resonance(&self) -> &ResonanceSet {
        &self.resonance
    }

    /// Coefficient of monomial `k` in the equation of `z_j`.
    pub fn coefficient(&self, j: usize, k: &[u32]) -> C<T> {
        self.basis
            .index_of(k)
            .map_or(czero(), |i| self.n[(2 * j, i)])
    }

    fn apply(&self, table: &DMatrix<C<T>>, x: &[C<T>]) -> Vec<C<T>> {
        let phi = self.basis.eval(x);
        (0..table.nrows())
            .map(|r| {
                phi.iter()
                    .enumerate()
                    .fold(czero(), |a, (k, &f)| a + table[(r, k)] * f)
            })
            .collect()
    }

    /// Modal coordinates `ζ = T⁻¹ξ`.
    pub fn to_modal(&self, xi: &DVector<T>) -> Vec<C<T>> {
        let xc = xi.map(|x| C::new(x, T::zero()));
        (&self.modal_inverse * xc).iter().copied().collect()
    }

    /// Normal-form coordinates `z_j` (one per mode) of a reduced state.
    pub fn to_z(&self, xi: &DVector<T>) -> Vec<C<T>> {
        let full = self.apply(&self.h_inv, &self.to_modal(xi));
        (0..self.modes()).map(|j| full[2 * j]).collect()
    }

    /// Reduced state `ξ = T h(z)` and the largest imaginary residue dropped.
    pub fn to_xi_checked(&self, z: &[C<T>]) -> (DVector<T>, T) {
        let full: Vec<C<T>> = z.iter().flat_map(|&v| [v, v.conj()]).collect();
        let zeta = DVector::from_vec(self.apply(&self.h, &full));
        let xi = &self.modal_change * zeta;
        let imag = xi.iter().fold(T::zero(), |a, v| a.max(v.im.abs()));
        (xi.map(|v| v.re), imag)
    }

    pub fn to_xi(&self, z: &[C<T>]) -> DVector<T> {
        self.to_xi_checked(z).0
    }

    /// `ż_j = n_j(z)` for every mode.
    pub fn vector_field(&self, z: &[C<T>]) -> Vec<C<T>> {
        let full: Vec<C<T>> = z.iter().flat_map(|&v| [v, v.conj()]).collect();
        let all = self.apply(&self.n, &full);
        (0..self.modes()).map(|j| all[2 * j]).collect()
    }

    /// Largest coefficient of `h⁻¹ ∘ h − id` through the model order.
    pub fn composition_residual(&self) -> T {
        let vars = self.basis.vars();
        let alg = TruncatedAlgebra::new(vars, self.order());
        let h: Vec<Vec<C<T>>> = rows_of(&self.h)
            .iter()
            .map(|r| alg.embed(&self.basis, r))
            .collect();
        let comp = alg.compose(&self.basis, &rows_of(&self.h_inv), &h);
        let mut worst = T::zero();
        for (r, p) in comp.iter().enumerate() {
            let id = alg.variable::<C<T>>(r);
            for (a, b) in p.iter().zip(&id) {
                worst = worst.max(cabs(*a - *b));
            }
        }
        worst
    }

    /// Largest deviation from the conjugate mirroring of odd rows in all tables.
    pub fn conjugate_symmetry_error(&self) -> T {
        let mut worst = T::zero();
        for t in [&self.h_inv, &self.h, &self.n] {
            for j in 0..self.modes() {
                for i in 0..self.basis.len() {
                    let ci = self.basis.conjugate_index(i);
                    worst = worst.max(cabs(t[(2 * j + 1, ci)] - t[(2 * j, i)].conj()));
                }
            }
        }
        worst
    }

    /// Polar view built from the kept coefficients of `n`.
    pub fn polar(&self) -> PolarModel<T> {
        let m = self.modes();
        let terms = (0..m)
            .map(|j| {
                (0..self.basis.len())
                    .filter(|&i| self.basis.degree(i) >= 2 && self.n[(2 * j, i)] != czero())
                    .map(|i| (self.basis.exponent(i).to_vec(), self.n[(2 * j, i)]))
                    .collect()
            })
            .collect();
        PolarModel::from_coefficients(self.eigenvalues.clone(), terms)
            .expect("consistent normal-form tables")
    }
}

fn thin<T: Real>(reduced: &[Trajectory<T>], max_samples: usize) -> Vec<DVector<T>> {
    let total: usize = reduced.iter().map(Trajectory::len).sum();
    let stride = total.div_ceil(max_samples.max(1)).max(1);
    let mut out = Vec::with_capacity(total / stride + 1);
    let mut counter = 0usize;
    for t in reduced {
        for i in 0..t.len() {
            if counter % stride == 0 {
                out.push(t.sample(i));
            }
            counter += 1;
        }
    }
    out
}

/// Taylor normal form of `rvf` (no data): homological equations solved order by order.
pub fn normal_form_of_field<T: Real>(
    rvf: &ReducedVectorField<T>,
    order: u32,
    resonance: &ResonanceSet,
) -> Result<NormalFormModel<T>> {
    let (eigs, t) = modal_decomposition(rvf.linear())?;
    let m = eigs.len();
    if resonance.modes != m {
        return invalid(format!(
            "resonance set is for {} modes, field has {m}",
            resonance.modes
        ));
    }
    if order == 0 {
        return invalid("normal-form order must be at least 1");
    }
    let t_inv = inverse_checked(&t, "modal change")?;
    let basis = MonomialBasis::new(2 * m, 1, order);
    let alg = TruncatedAlgebra::new(2 * m, order);
    let g = modal_field_polys(&alg, rvf, &t, &t_inv);
    let (h_inv, n) = homological(&alg, &basis, &g, &eigs, resonance);
    NormalFormModel::from_parts(eigs, t, order, h_inv, n, resonance.clone())
}

/// Identifies `h⁻¹` and `n` by minimizing the conjugacy loss
/// `mean ‖D h⁻¹(ζ) ζ̇ − n(h⁻¹(ζ))‖²` over the training samples, where
/// `ζ̇ = T⁻¹ f(Tζ)` comes from the fitted reduced field.
///
/// Starts from [`normal_form_of_field`]; every iteration does an exact
/// least-squares update of `n` followed by a damped Gauss–Newton step over
/// all coefficients, each accepted only if the loss does not increase.
pub fn fit_normal_form<T: Real>(
    rvf: &ReducedVectorField<T>,
    reduced: &[Trajectory<T>],
    order: u32,
    resonance: &ResonanceSet,
    opts: &NormalFormOptions,
) -> Result<NormalFormModel<T>> {
    let init = normal_form_of_field(rvf, order, resonance)?;
    if reduced.iter().any(|t| t.dim() != rvf.dim()) {
        return invalid("reduced trajectories do not match the vector-field dimension");
    }
    let xs = thin(reduced, opts.max_samples);
    let basis = init.basis.clone();
    let layout = Layout::new(&basis, resonance);
    if xs.len() * 2 * init.modes() < 10 * layout.len {
        return invalid(format!(
            "{} samples for {} normal-form coefficients (need ten times as many residuals)",
            xs.len(),
            layout.len
        ));
    }
    let mut phi = Vec::with_capacity(xs.len());
    let mut psi = Vec::with_capacity(xs.len());
    for x in &xs {
        let zeta = init.to_modal(x);
        let zd = init.to_modal(&rvf.eval(x));
        psi.push(basis.directional(&zeta, &zd));
        phi.push(basis.eval(&zeta));
    }
    let samples = Samples { phi, psi };
    let prob = Problem {
        basis: &basis,
        layout: &layout,
        samples: &samples,
    };

    let mut p = layout.pack(&init.h_inv, &init.n);
    let mut cost = prob.cost(&p);
    let mut history = vec![to_f64(cost)];
    let mut mu = lit::<T>(1e-3);
    let tol = lit::<T>(opts.tolerance);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let start = cost;
        if let Some(q) = prob.n_step(&p) {
            let c = prob.cost(&q);
            if c <= cost {
                p = q;
                cost = c;
            }
        }
        let (jtj, jtr) = prob.normal_equations(&p);
        let diag_floor = jtj.diagonal().iter().fold(T::zero(), |a, &b| a.max(b)) * lit(1e-14);
        let mut stalled = false;
        loop {
            let mut a = jtj.clone();
            for q in 0..a.nrows() {
                let dq = jtj[(q, q)].max(diag_floor);
                a[(q, q)] += mu * dq;
            }
            let step = a.cholesky().map(|ch| ch.solve(&(-&jtr)));
            if let Some(step) = step {
                let trial = &p + &step;
                let c = prob.cost(&trial);
                if c <= cost && c.is_finite() {
                    p = trial;
                    cost = c;
                    mu = (mu / lit(3.0)).max(lit(1e-12));
                    break;
                }
            }
            mu *= lit(4.0);
            if mu > lit(1e12) {
                stalled = true;
                break;
            }
        }
        history.push(to_f64(cost));
        let rel = if start > T::zero() {
            (start - cost) / start
        } else {
            T::zero()
        };
        if stalled || rel < tol || cost == T::zero() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "normal-form conjugacy fit".into(),
            iterations,
            cost: to_f64(cost),
        });
    }
    let (h_inv, n) = layout.unpack(&basis, &p);
    let mut model = NormalFormModel::from_parts(
        init.eigenvalues.clone(),
        init.modal_change.clone(),
        order,
        h_inv,
        n,
        resonance.clone(),
    )?;
    model.eigenvalues = (0..model.modes())
        .map(|j| model.n[(2 * j, 2 * j)])
        .collect();
    model.cost_history = history;
    let mut radius = vec![0.0f64; model.modes()];
    for x in &xs {
        for (j, z) in model.to_z(x).into_iter().enumerate() {
            radius[j] = radius[j].max(to_f64(cabs(z)));
        }
    }
    model.training_radius = radius;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexDoc {
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientDoc {
    pub equation: usize,
    pub exponents: Vec<u32>,
    pub re: f64,
    pub im: f64,
}

/// JSON form of a [`NormalFormModel`]; tables list nonzero coefficients of every equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormDoc {
    pub format: String,
    pub version: u32,
    pub modes: usize,
    pub order: u32,
    pub eigenvalues: Vec<ComplexDoc>,
    /// Rows of `T` in `ξ = T ζ`.
    pub modal_change: Vec<Vec<ComplexDoc>>,
    pub h: Vec<CoefficientDoc>,
    pub h_inv: Vec<CoefficientDoc>,
    pub n: Vec<CoefficientDoc>,
    pub resonance_set: ResonanceSet,
    pub cost_history: Vec<f64>,
    pub training_radius: Vec<f64>,
}

pub const NORMAL_FORM_FORMAT: &str = "normal-form-model";

fn table_doc<T: Real>(basis: &MonomialBasis, t: &DMatrix<C<T>>) -> Vec<CoefficientDoc> {
    let mut out = Vec::new();
    for r in 0..t.nrows() {
        for i in 0..basis.len() {
            let c = t[(r, i)];
            if c != czero() {
                out.push(CoefficientDoc {
                    equation: r,
                    exponents: basis.exponent(i).to_vec(),
                    re: to_f64(c.re),
                    im: to_f64(c.im),
                });
            }
        }
    }
    out
}

fn table_from_doc<T: Real>(
    basis: &MonomialBasis,
    entries: &[CoefficientDoc],
    what: &str,
) -> Result<DMatrix<C<T>>> {
    let mut t = DMatrix::from_element(basis.vars(), basis.len(), czero());
    for e in entries {
        let i = basis.index_of(&e.exponents).ok_or_else(|| {
            Error::Format(format!(
                "{what}: monomial {:?} outside the model basis",
                e.exponents
            ))
        })?;
        if e.equation >= basis.vars() {
            return Err(Error::Format(format!(
                "{what}: equation {} out of range",
                e.equation
            )));
        }
        t[(e.equation, i)] = C::new(lit(e.re), lit(e.im));
    }
    Ok(t)
}

impl NormalFormDoc {
    pub fn from_model<T: Real>(m: &NormalFormModel<T>) -> Self {
        let cd = |c: C<T>| ComplexDoc {
            re: to_f64(c.re),
            im: to_f64(c.im),
        };
        Self {
            format: NORMAL_FORM_FORMAT.into(),
            version: 1,
            modes: m.modes(),
            order: m.order(),
            eigenvalues: m.eigenvalues.iter().map(|&c| cd(c)).collect(),
            modal_change: (0..m.modal_change.nrows())
                .map(|r| m.modal_change.row(r).iter().map(|&c| cd(c)).collect())
                .collect(),
            h: table_doc(&m.basis, &m.h),
            h_inv: table_doc(&m.basis, &m.h_inv),
            n: table_doc(&m.basis, &m.n),
            resonance_set: m.resonance.clone(),
            cost_history: m.cost_history.clone(),
            training_radius: m.training_radius.clone(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<NormalFormModel<T>> {
        check_format(&self.format, self.version, NORMAL_FORM_FORMAT, 1)?;
        let vars = 2 * self.modes;
        if self.eigenvalues.len() != self.modes || self.modal_change.len() != vars {
            return Err(Error::Format(
                "normal-form document has inconsistent sizes".into(),
            ));
        }
        if self.modal_change.iter().any(|r| r.len() != vars) {
            return Err(Error::Format("modal change must be 2m × 2m".into()));
        }
        let basis = MonomialBasis::new(vars, 1, self.order.max(1));
        let tmat = DMatrix::from_fn(vars, vars, |r, c| {
            let e = &self.modal_change[r][c];
            C::new(lit(e.re), lit(e.im))
        });
        let mut model = NormalFormModel::from_parts(
            self.eigenvalues
                .iter()
                .map(|c| C::new(lit(c.re), lit(c.im)))
                .collect(),
            tmat,
            self.order,
            table_from_doc(&basis, &self.h_inv, "h_inv")?,
            table_from_doc(&basis, &self.n, "n")?,
            self.resonance_set.clone(),
        )?;
        // keep the stored inverse so a round trip is exact
        model.h = table_from_doc(&basis, &self.h, "h")?;
        model.cost_history = self.cost_history.clone();
        model.training_radius = self.training_radius.clone();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalform::resonance::select_resonant_monomials;
    use num_complex::Complex64;

    /// Reduced field whose modal form is exactly `ż = λz + γz²z̄` with `T = [v, v̄]`.
    fn cubic_field(lam: Complex64, gamma: Complex64) -> ReducedVectorField<f64> {
        let w = DMatrix::from_row_slice(2, 2, &[lam.re, -lam.im, lam.im, lam.re]);
        // modal vector (1, −i)/√2 gives z = (ξ₁ + iξ₂)/√2
        let basis = MonomialBasis::new(2, 2, 3);
        let mut nl = DMatrix::zeros(2, basis.len());
        // √2·γz²z̄ = γ/2 (ξ₁² + ξ₂²)(ξ₁ + iξ₂)
        let g = gamma * 0.5;
        let terms: [([u32; 2], Complex64); 4] = [
            ([3, 0], g),
            ([1, 2], g),
            ([2, 1], g * Complex64::i()),
            ([0, 3], g * Complex64::i()),
        ];
        for (k, c) in terms {
            let i = basis.index_of(&k).unwrap();
            nl[(0, i)] = c.re;
            nl[(1, i)] = c.im;
        }
        ReducedVectorField::new(w, 3, nl).unwrap()
    }

    #[test]
    fn taylor_normal_form_of_exact_cubic() {
        let lam = Complex64::new(-0.0012, 0.2827);
        let gamma = Complex64::new(-0.0007, 0.0255);
        let rvf = cubic_field(lam, gamma);
        let res = select_resonant_monomials(&[lam], 3, 0.05).unwrap();
        let nf = normal_form_of_field(&rvf, 3, &res).unwrap();
        assert!((nf.eigenvalues()[0] - lam).norm() < 1e-12);
        assert!(
            (nf.coefficient(0, &[2, 1]) - gamma).norm() < 1e-12,
            "{}",
            nf.coefficient(0, &[2, 1])
        );
        assert!(nf.composition_residual() < 1e-12);
        assert!(nf.conjugate_symmetry_error() < 1e-15);
    }

    #[test]
    fn quadratic_terms_are_removed_by_the_transformation() {
        let lam = Complex64::new(-0.05, 1.0);
        let mut rvf = cubic_field(lam, Complex64::new(0.0, 0.0));
        let mut nl = rvf.nonlinear().clone();
        let i = rvf.basis().index_of(&[2, 0]).unwrap();
        nl[(1, i)] = 0.3;
        rvf = ReducedVectorField::new(rvf.linear().clone(), 3, nl).unwrap();
        let res = select_resonant_monomials(&[lam], 3, 0.05).unwrap();
        let nf = normal_form_of_field(&rvf, 3, &res).unwrap();
        assert_eq!(nf.coefficient(0, &[2, 0]), Complex64::new(0.0, 0.0));
        assert!(nf.coefficient(0, &[2, 1]).norm() > 1e-4);
        assert!(nf.composition_residual() < 1e-12);
        let xi = DVector::from_vec(vec![0.3, -0.2]);
        let back = nf.to_xi_checked(&nf.to_z(&xi));
        assert!(back.1 < 1e-14);
        assert!((back.0 - xi).norm() < 1e-3);
    }

    #[test]
    fn document_round_trip() {
        let lam = Complex64::new(-0.0012, 0.2827);
        let rvf = cubic_field(lam, Complex64::new(-0.0007, 0.0255));
        let res = select_resonant_monomials(&[lam], 5, 0.05).unwrap();
        let nf = normal_form_of_field(&rvf, 5, &res).unwrap();
        let doc = NormalFormDoc::from_model(&nf);
        let text = serde_json::to_string(&doc).unwrap();
        let back: NormalFormDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_model::<f64>().unwrap(), nf);
    }
}
