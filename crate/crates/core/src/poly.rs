//! Multivariate monomials and truncated polynomial arithmetic.
//!
//! Monomials are keyed by their exponent multi-index. A [`MonomialBasis`]
//! lists every monomial with total degree in a closed range, ordered by
//! increasing degree and, inside one degree, by descending lexicographic order
//! of the exponent vector (graded-lex). For two variables and degrees 2..=3:
//! `x²`, `xy`, `y²`, `x³`, `x²y`, `xy²`, `y³`.

use std::collections::HashMap;

use num_traits::{FromPrimitive, Num};

/// Exponents of `vars` variables with total degree `degree`, in descending lex order.
pub fn degree_exponents(vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(vars: usize, degree: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if vars == 1 {
            prefix.push(degree);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=degree).rev() {
            prefix.push(e);
            rec(vars - 1, degree - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if vars == 0 {
        if degree == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(vars, degree, &mut Vec::with_capacity(vars), &mut out);
    out
}

/// Exponent vector of the complex-conjugate monomial when the variables are
/// arranged as `(z₁, z̄₁, z₂, z̄₂, …)`.
pub fn conjugate_exponents(k: &[u32]) -> Vec<u32> {
    let mut out = k.to_vec();
    for pair in out.chunks_mut(2) {
        if pair.len() == 2 {
            pair.swap(0, 1);
        }
    }
    out
}

/// Graded-lex list of monomials in a fixed number of variables.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    vars: usize,
    min_degree: u32,
    max_degree: u32,
    exponents: Vec<Vec<u32>>,
    lookup: HashMap<Vec<u32>, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.vars == other.vars
            && self.min_degree == other.min_degree
            && self.max_degree == other.max_degree
    }
}

impl MonomialBasis {
    pub fn new(vars: usize, min_degree: u32, max_degree: u32) -> Self {
        let mut exponents = Vec::new();
        if min_degree <= max_degree {
            for d in min_degree..=max_degree {
                exponents.extend(degree_exponents(vars, d));
            }
        }
        let lookup = exponents
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self {
            vars,
            min_degree,
            max_degree,
            exponents,
            lookup,
        }
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn min_degree(&self) -> u32 {
        self.min_degree
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn exponent(&self, i: usize) -> &[u32] {
        &self.exponents[i]
    }

    pub fn degree(&self, i: usize) -> u32 {
        self.exponents[i].iter().sum()
    }

    pub fn index_of(&self, k: &[u32]) -> Option<usize> {
        self.lookup.get(k).copied()
    }

    /// Index of the conjugate monomial (variables paired as `(z, z̄)`).
    pub fn conjugate_index(&self, i: usize) -> usize {
        self.index_of(&conjugate_exponents(&self.exponents[i]))
            .expect("basis is closed under conjugation")
    }

    fn powers<S: Num + Copy>(&self, x: &[S]) -> Vec<Vec<S>> {
        assert_eq!(x.len(), self.vars, "monomial argument dimension mismatch");
        x.iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(self.max_degree as usize + 1);
                p.push(S::one());
                for e in 1..=self.max_degree as usize {
                    let prev = p[e - 1];
                    p.push(prev * xi);
                }
                p
            })
            .collect()
    }

    /// Values of every monomial at `x`.
    pub fn eval<S: Num + Copy>(&self, x: &[S]) -> Vec<S> {
        let pw = self.powers(x);
        self.exponents
            .iter()
            .map(|k| {
                k.iter()
                    .enumerate()
                    .fold(S::one(), |acc, (v, &e)| acc * pw[v][e as usize])
            })
            .collect()
    }

    /// Jacobian of the monomial vector, row-major `[monomial][variable]`.
    pub fn jacobian<S: Num + Copy + FromPrimitive>(&self, x: &[S]) -> Vec<S> {
        let pw = self.powers(x);
        let mut out = vec![S::zero(); self.len() * self.vars];
        for (i, k) in self.exponents.iter().enumerate() {
            for v in 0..self.vars {
                if k[v] == 0 {
                    continue;
                }
                let mut d = S::from_u32(k[v]).unwrap();
                for (w, &e) in k.iter().enumerate() {
                    let e = if w == v { e - 1 } else { e };
                    d = d * pw[w][e as usize];
                }
                out[i * self.vars + v] = d;
            }
        }
        out
    }

    /// Directional derivative `Dφ(x)·dx` of every monomial.
    pub fn directional<S: Num + Copy + FromPrimitive>(&self, x: &[S], dx: &[S]) -> Vec<S> {
        let jac = self.jacobian(x);
        (0..self.len())
            .map(|i| (0..self.vars).fold(S::zero(), |acc, v| acc + jac[i * self.vars + v] * dx[v]))
            .collect()
    }
}

/// Dense polynomials in `vars` variables truncated at total degree `order`.
///
/// A polynomial is a coefficient vector over the basis of degrees `0..=order`.
#[derive(Clone, Debug)]
pub struct TruncatedAlgebra {
    basis: MonomialBasis,
    products: Vec<(u32, u32, u32)>,
    /// `derivs[v]` lists `(source, target, factor)` for `∂/∂x_v`.
    derivs: Vec<Vec<(u32, u32, u32)>>,
}

impl TruncatedAlgebra {
    pub fn new(vars: usize, order: u32) -> Self {
        let basis = MonomialBasis::new(vars, 0, order);
        let mut products = Vec::new();
        for (i, a) in basis.exponents().iter().enumerate() {
            let da: u32 = a.iter().sum();
            for (j, b) in basis.exponents().iter().enumerate() {
                let db: u32 = b.iter().sum();
                if da + db > order {
                    continue;
                }
                let c: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                let k = basis.index_of(&c).unwrap();
                products.push((i as u32, j as u32, k as u32));
            }
        }
        let derivs = (0..vars)
            .map(|v| {
                basis
                    .exponents()
                    .iter()
                    .enumerate()
                    .filter(|(_, k)| k[v] > 0)
                    .map(|(i, k)| {
                        let mut t = k.clone();
                        t[v] -= 1;
                        (i as u32, basis.index_of(&t).unwrap() as u32, k[v])
                    })
                    .collect()
            })
            .collect();
        Self {
            basis,
            products,
            derivs,
        }
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn order(&self) -> u32 {
        self.basis.max_degree()
    }

    pub fn vars(&self) -> usize {
        self.basis.vars()
    }

    pub fn zero<S: Num + Copy>(&self) -> Vec<S> {
        vec![S::zero(); self.basis.len()]
    }

    pub fn constant<S: Num + Copy>(&self, c: S) -> Vec<S> {
        let mut p = self.zero();
        p[0] = c;
        p
    }

    pub fn variable<S: Num + Copy>(&self, v: usize) -> Vec<S> {
        let mut k = vec![0; self.vars()];
        k[v] = 1;
        let mut p = self.zero();
        p[self.basis.index_of(&k).unwrap()] = S::one();
        p
    }

    pub fn add<S: Num + Copy>(&self, a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&x, &y)| x + y).collect()
    }

    pub fn sub<S: Num + Copy>(&self, a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&x, &y)| x - y).collect()
    }

    pub fn scale<S: Num + Copy>(&self, a: &[S], s: S) -> Vec<S> {
        a.iter().map(|&x| x * s).collect()
    }

    pub fn mul<S: Num + Copy>(&self, a: &[S], b: &[S]) -> Vec<S> {
        let mut out = self.zero();
        for &(i, j, k) in &self.products {
            let (ai, bj) = (a[i as usize], b[j as usize]);
            if ai.is_zero() || bj.is_zero() {
                continue;
            }
            out[k as usize] = out[k as usize] + ai * bj;
        }
        out
    }

    /// Partial derivative with respect to variable `v` (degree drops by one).
    pub fn derivative<S: Num + Copy + FromPrimitive>(&self, a: &[S], v: usize) -> Vec<S> {
        let mut out = self.zero();
        for &(src, dst, f) in &self.derivs[v] {
            let c = a[src as usize];
            if !c.is_zero() {
                out[dst as usize] = out[dst as usize] + c * S::from_u32(f).unwrap();
            }
        }
        out
    }

    /// Embeds coefficients given over another basis of the same variables.
    pub fn embed<S: Num + Copy>(&self, basis: &MonomialBasis, coeffs: &[S]) -> Vec<S> {
        assert_eq!(basis.vars(), self.vars());
        let mut out = self.zero();
        for (i, k) in basis.exponents().iter().enumerate() {
            if let Some(j) = self.basis.index_of(k) {
                out[j] = out[j] + coeffs[i];
            }
        }
        out
    }

    /// Restricts a polynomial to the monomials of `basis`.
    pub fn restrict<S: Num + Copy>(&self, basis: &MonomialBasis, p: &[S]) -> Vec<S> {
        basis
            .exponents()
            .iter()
            .map(|k| self.basis.index_of(k).map(|j| p[j]).unwrap_or_else(S::zero))
            .collect()
    }

    /// Values of each monomial of `outer` evaluated at the polynomial arguments
    /// `args` (one polynomial of this algebra per variable of `outer`).
    pub fn monomials_of<S: Num + Copy>(
        &self,
        outer: &MonomialBasis,
        args: &[Vec<S>],
    ) -> Vec<Vec<S>> {
        assert_eq!(outer.vars(), args.len());
        let maxd = outer.max_degree() as usize;
        let pows: Vec<Vec<Vec<S>>> = args
            .iter()
            .map(|a| {
                let mut p = vec![self.constant(S::one())];
                for e in 1..=maxd {
                    let next = self.mul(&p[e - 1], a);
                    p.push(next);
                }
                p
            })
            .collect();
        outer
            .exponents()
            .iter()
            .map(|k| {
                let mut acc = self.constant(S::one());
                for (v, &e) in k.iter().enumerate() {
                    if e > 0 {
                        acc = self.mul(&acc, &pows[v][e as usize]);
                    }
                }
                acc
            })
            .collect()
    }

    /// Composes the vector polynomial `Σ_k coeffs[c][k]·x^k` (over `outer`)
    /// with the arguments `args`, truncating at this algebra's order.
    pub fn compose<S: Num + Copy>(
        &self,
        outer: &MonomialBasis,
        coeffs: &[Vec<S>],
        args: &[Vec<S>],
    ) -> Vec<Vec<S>> {
        let mons = self.monomials_of(outer, args);
        coeffs
            .iter()
            .map(|row| {
                let mut acc = self.zero();
                for (c, m) in row.iter().zip(&mons) {
                    if c.is_zero() {
                        continue;
                    }
                    for (a, &x) in acc.iter_mut().zip(m) {
                        *a = *a + *c * x;
                    }
                }
                acc
            })
            .collect()
    }

    /// Evaluates a polynomial of this algebra at a point.
    pub fn eval<S: Num + Copy>(&self, p: &[S], x: &[S]) -> S {
        self.basis
            .eval(x)
            .iter()
            .zip(p)
            .fold(S::zero(), |acc, (&m, &c)| acc + m * c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn graded_lex_order_two_variables() {
        let b = MonomialBasis::new(2, 2, 3);
        let ex: Vec<Vec<u32>> = b.exponents().to_vec();
        assert_eq!(
            ex,
            vec![
                vec![2, 0],
                vec![1, 1],
                vec![0, 2],
                vec![3, 0],
                vec![2, 1],
                vec![1, 2],
                vec![0, 3]
            ]
        );
    }

    #[test]
    fn basis_sizes_match_binomials() {
        // C(n + d - 1, d) monomials of exact degree d in n variables
        assert_eq!(MonomialBasis::new(4, 2, 2).len(), 10);
        assert_eq!(MonomialBasis::new(4, 3, 3).len(), 20);
        assert_eq!(MonomialBasis::new(2, 0, 11).len(), 78);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let b = MonomialBasis::new(3, 1, 4);
        let x = [0.3f64, -1.2, 0.7];
        let jac = b.jacobian(&x);
        let h = 1e-6;
        for v in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[v] += h;
            xm[v] -= h;
            let (fp, fm) = (b.eval(&xp), b.eval(&xm));
            for i in 0..b.len() {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[i * 3 + v]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn conjugate_index_swaps_pairs() {
        let b = MonomialBasis::new(4, 1, 3);
        let i = b.index_of(&[2, 1, 0, 0]).unwrap();
        assert_eq!(b.exponent(b.conjugate_index(i)), &[1, 2, 0, 0]);
        let j = b.index_of(&[0, 1, 1, 0]).unwrap();
        assert_eq!(b.exponent(b.conjugate_index(j)), &[1, 0, 0, 1]);
    }

    #[test]
    fn truncated_product_and_composition() {
        let alg = TruncatedAlgebra::new(2, 3);
        let x = alg.variable::<f64>(0);
        let y = alg.variable::<f64>(1);
        // (1 + x)(x + y) truncated at 3 then squared
        let p = alg.mul(&alg.add(&alg.constant(1.0), &x), &alg.add(&x, &y));
        let p2 = alg.mul(&p, &p);
        let pt = [0.1, 0.2];
        let exact = (1.1f64 * 0.3).powi(2);
        // truncation drops the degree-4 term x²(x+y)² = 0.01 * 0.09
        assert!((alg.eval(&p2, &pt) - (exact - 0.01 * 0.09)).abs() < 1e-14);

        // composing x² + y with (x + y, x - y)
        let outer = MonomialBasis::new(2, 1, 2);
        let mut c = vec![0.0; outer.len()];
        c[outer.index_of(&[0, 1]).unwrap()] = 1.0;
        c[outer.index_of(&[2, 0]).unwrap()] = 1.0;
        let args = vec![alg.add(&x, &y), alg.sub(&x, &y)];
        let comp = alg.compose(&outer, &[c], &args);
        let val = alg.eval(&comp[0], &pt);
        assert!((val - (0.3f64.powi(2) - 0.1)).abs() < 1e-14);
    }

    #[test]
    fn derivative_of_truncated_polynomial() {
        let alg = TruncatedAlgebra::new(2, 3);
        let x = alg.variable::<Complex64>(0);
        let y = alg.variable::<Complex64>(1);
        let p = alg.mul(&alg.mul(&x, &x), &y); // x² y
        let d = alg.derivative(&p, 0);
        let pt = [Complex64::new(0.5, 0.1), Complex64::new(-0.3, 0.2)];
        let expected = pt[0] * pt[1] * 2.0;
        assert!((alg.eval(&d, &pt) - expected).norm() < 1e-14);
    }
}
