//! Dense linear-algebra helpers on top of nalgebra: scaled least squares with
//! condition checks and a general (non-symmetric) eigensolver.

use nalgebra::{ComplexField, DMatrix, DVector, RealField, Schur, SymmetricEigen};
use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{cabs, lit, to_f64, Real};

/// Solution of `min ‖A X − B‖_F`.
#[derive(Clone, Debug)]
pub struct Lstsq<S: ComplexField> {
    pub solution: DMatrix<S>,
    /// Condition number of the column-scaled design matrix.
    pub condition: f64,
}

/// Default condition number above which a least-squares fit is rejected.
pub fn condition_limit<T: Real>() -> f64 {
    0.01 / to_f64(T::default_epsilon())
}

/// Least squares via SVD of the column-equilibrated design matrix.
///
/// Fails with [`Error::IllConditioned`] when the scaled condition number exceeds
/// [`condition_limit`]; `what` names the fit in the error.
pub fn lstsq<S>(a: &DMatrix<S>, b: &DMatrix<S>, what: &str) -> Result<Lstsq<S>>
where
    S: ComplexField,
    S::RealField: Real,
{
    if a.nrows() != b.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{what}: design has {} rows but target has {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{what}: {} samples for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.ncols();
    let mut scaled = a.clone();
    let mut scales = Vec::with_capacity(n);
    for j in 0..n {
        let norm = scaled.column(j).norm();
        if norm == S::RealField::zero() || !norm.is_finite() {
            return Err(Error::IllConditioned {
                what: format!("{what} (column {j} is zero or non-finite)"),
                condition: f64::INFINITY,
            });
        }
        let inv = S::from_real(S::RealField::one() / norm);
        scaled.column_mut(j).scale_mut(S::RealField::one() / norm);
        scales.push(inv);
    }
    let svd = scaled.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv
        .iter()
        .cloned()
        .fold(S::RealField::zero(), |a, b| RealField::max(a, b));
    let smin = sv.iter().cloned().fold(smax, |a, b| RealField::min(a, b));
    let condition = if smin > S::RealField::zero() {
        to_f64(smax) / to_f64(smin)
    } else {
        f64::INFINITY
    };
    if condition > condition_limit::<S::RealField>() {
        return Err(Error::IllConditioned {
            what: what.to_string(),
            condition,
        });
    }
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut ub = u.adjoint() * b;
    for (i, s) in sv.iter().enumerate() {
        let inv = S::from_real(S::RealField::one() / s.clone());
        for c in 0..ub.ncols() {
            ub[(i, c)] = ub[(i, c)].clone() * inv.clone();
        }
    }
    let mut x = v_t.adjoint() * ub;
    for (j, s) in scales.into_iter().enumerate() {
        for c in 0..x.ncols() {
            x[(j, c)] = x[(j, c)].clone() * s.clone();
        }
    }
    Ok(Lstsq {
        solution: x,
        condition,
    })
}

/// Eigenpairs of a real square matrix.
#[derive(Clone, Debug)]
pub struct EigenPairs<T: Real> {
    pub values: Vec<Complex<T>>,
    /// Unit-norm eigenvectors; conjugate eigenvalues get conjugate vectors.
    pub vectors: Vec<DVector<Complex<T>>>,
    /// Largest `‖A v − λ v‖ / ‖v‖`.
    pub max_residual: T,
    /// Condition number of the eigenvector matrix (large means nearly defective).
    pub vector_condition: f64,
}

fn complexify<T: Real>(a: &DMatrix<T>) -> DMatrix<Complex<T>> {
    a.map(|x| Complex::new(x, T::zero()))
}

/// Eigenvalues from the real Schur form, eigenvectors by inverse iteration.
pub fn eigen_general<T: Real>(a: &DMatrix<T>) -> Result<EigenPairs<T>> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidArgument(
            "eigen_general needs a non-empty square matrix".into(),
        ));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::DecompositionFailure(
            "matrix has non-finite entries".into(),
        ));
    }
    let schur = Schur::try_new(a.clone(), T::default_epsilon(), 100_000)
        .ok_or_else(|| Error::DecompositionFailure("Schur iteration did not converge".into()))?;
    let raw = schur.complex_eigenvalues();
    let values: Vec<Complex<T>> = raw.iter().cloned().collect();

    let scale = a.norm().max(T::one());
    let ac = complexify(a);
    let eps = T::default_epsilon();
    let shift_size = eps.powf(lit(0.75)) * scale;
    let mut vectors: Vec<Option<DVector<Complex<T>>>> = vec![None; n];
    for i in 0..n {
        if vectors[i].is_some() {
            continue;
        }
        let lam = values[i];
        // a real-matrix conjugate partner reuses the conjugated vector
        if lam.im < T::zero() {
            if let Some(j) = (0..n).find(|&j| {
                j != i
                    && vectors[j].is_some()
                    && cabs(values[j] - lam.conj()) <= eps * scale * lit(10.0)
            }) {
                vectors[i] = vectors[j].as_ref().map(|v| v.map(|z| z.conj()));
                continue;
            }
        }
        let v = inverse_iteration(&ac, lam, shift_size)?;
        vectors[i] = Some(v.clone());
        if lam.im > T::zero() {
            if let Some(j) = (0..n).find(|&j| {
                j != i
                    && vectors[j].is_none()
                    && cabs(values[j] - lam.conj()) <= eps * scale * lit(10.0)
            }) {
                vectors[j] = Some(v.map(|z| z.conj()));
            }
        }
    }
    let vectors: Vec<DVector<Complex<T>>> = vectors.into_iter().map(|v| v.unwrap()).collect();

    let mut max_residual = T::zero();
    for (lam, v) in values.iter().zip(&vectors) {
        let r = &ac * v - v * *lam;
        max_residual = max_residual.max(r.norm() / v.norm());
    }
    let vmat = DMatrix::from_columns(&vectors);
    let sv = vmat.singular_values();
    let smax = to_f64(sv.max());
    let smin = to_f64(sv.min());
    let vector_condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    Ok(EigenPairs {
        values,
        vectors,
        max_residual,
        vector_condition,
    })
}

fn inverse_iteration<T: Real>(
    a: &DMatrix<Complex<T>>,
    lam: Complex<T>,
    shift_size: T,
) -> Result<DVector<Complex<T>>> {
    let n = a.nrows();
    let mu = lam + Complex::new(shift_size, shift_size * lit(0.5));
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= mu;
    }
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| {
        Complex::new(
            T::one() + lit::<T>(0.1) * lit(i as f64),
            lit::<T>(0.37) * lit((i % 3) as f64),
        )
    });
    for _ in 0..4 {
        let w = lu.solve(&v).ok_or_else(|| {
            Error::DecompositionFailure("inverse iteration hit a singular shift".into())
        })?;
        let norm = w.norm();
        if !norm.is_finite() || norm == T::zero() {
            return Err(Error::DecompositionFailure(
                "inverse iteration produced a degenerate vector".into(),
            ));
        }
        v = w.unscale(norm);
    }
    Ok(normalize_phase(v))
}

/// Scales a vector to unit norm with its largest-magnitude entry real positive.
pub fn normalize_phase<T: Real>(v: DVector<Complex<T>>) -> DVector<Complex<T>> {
    let mut best = 0;
    let mut best_abs = T::zero();
    for (i, z) in v.iter().enumerate() {
        let a = cabs(*z);
        // ties resolved towards the lower index to stay deterministic
        if a > best_abs * (T::one() + lit(1e-9)) {
            best = i;
            best_abs = a;
        }
    }
    let pivot = v[best];
    if best_abs == T::zero() {
        return v;
    }
    let phase = pivot.conj() / Complex::new(best_abs, T::zero());
    let w = v.map(|z| z * phase);
    let norm = w.norm();
    w.unscale(norm)
}

/// Leading `k` eigenvectors (by eigenvalue, descending) of a symmetric matrix,
/// each signed so that its largest-magnitude entry is positive.
pub fn leading_symmetric_eigenvectors<T: Real>(
    s: &DMatrix<T>,
    k: usize,
) -> Result<(Vec<T>, DMatrix<T>)> {
    let eig =
        SymmetricEigen::try_new(s.clone(), T::default_epsilon(), 100_000).ok_or_else(|| {
            Error::DecompositionFailure("symmetric eigensolver did not converge".into())
        })?;
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let mut out = DMatrix::zeros(s.nrows(), k);
    let mut vals = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        sign_fix(&mut col);
        out.set_column(c, &col);
        vals.push(eig.eigenvalues[i]);
    }
    Ok((vals, out))
}

/// Flips the sign of a real vector so its largest-magnitude entry is positive.
pub fn sign_fix<T: Real>(v: &mut DVector<T>) {
    let mut best = T::zero();
    let mut sign = T::one();
    for x in v.iter() {
        if x.abs() > best * (T::one() + lit(1e-9)) {
            best = x.abs();
            sign = if *x < T::zero() { -T::one() } else { T::one() };
        }
    }
    if sign < T::zero() {
        v.neg_mut();
    }
}

/// Orthonormal basis for the column span (thin QR, column signs fixed so the
/// diagonal of R is positive).
pub fn orthonormalize<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Inverse of a complex matrix with a condition check.
pub fn inverse_checked<T: Real>(
    a: &DMatrix<Complex<T>>,
    what: &str,
) -> Result<DMatrix<Complex<T>>> {
    let sv = a.singular_values();
    let smin = to_f64(sv.min());
    let condition = if smin > 0.0 {
        to_f64(sv.max()) / smin
    } else {
        f64::INFINITY
    };
    if condition > 1e10 {
        return Err(Error::IllConditioned {
            what: what.to_string(),
            condition,
        });
    }
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::IllConditioned {
            what: what.to_string(),
            condition,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = DMatrix::from_fn(20, 3, |i, j| {
            ((i + 1) as f64).powi(j as i32) * 1e3f64.powi(j as i32)
        });
        let x = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let b = &a * &x;
        let sol = lstsq(&a, &b, "test").unwrap();
        // the badly scaled columns still give a backward-stable fit
        let err = (&a * &sol.solution - &b).norm() / b.norm();
        assert!(err < 1e-14, "error {err}");
        assert!((sol.solution[(2, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lstsq_reports_rank_deficiency() {
        let a = DMatrix::from_fn(10, 2, |i, _| i as f64 + 1.0);
        let b = DMatrix::from_element(10, 1, 1.0);
        match lstsq(&a, &b, "dup") {
            Err(Error::IllConditioned { condition, .. }) => assert!(condition > 1e12),
            other => panic!("expected ill-conditioned, got {other:?}"),
        }
    }

    #[test]
    fn complex_lstsq() {
        let a = DMatrix::from_fn(8, 2, |i, j| Complex64::new(i as f64, (j + 1) as f64));
        let x = DMatrix::from_column_slice(
            2,
            1,
            &[Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.25)],
        );
        let b = &a * &x;
        let sol = lstsq(&a, &b, "c").unwrap();
        assert!((sol.solution - x).norm() < 1e-12);
    }

    #[test]
    fn eigenpairs_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.1, 1.0, -1.0, -0.1]);
        let e = eigen_general(&a).unwrap();
        assert!(e.max_residual < 1e-12);
        let mut ims: Vec<f64> = e.values.iter().map(|z| z.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((ims[0] + 1.0).abs() < 1e-12 && (ims[1] - 1.0).abs() < 1e-12);
        // conjugate values carry conjugate vectors
        let (i, j) = if e.values[0].im > 0.0 { (0, 1) } else { (1, 0) };
        assert!((e.vectors[i].map(|z| z.conj()) - &e.vectors[j]).norm() < 1e-14);
    }

    #[test]
    fn phase_normalization_makes_pivot_real() {
        let v = DVector::from_vec(vec![Complex64::new(0.1, 0.2), Complex64::new(-1.0, 1.0)]);
        let w = normalize_phase(v);
        assert!((w.norm() - 1.0).abs() < 1e-14);
        assert!(w[1].im.abs() < 1e-15 && w[1].re > 0.0);
    }
}
