//! Polynomial vector field `ξ̇ = Wξ + N φ(ξ)` fitted to reduced trajectories.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::{eigen_general, lstsq};
use crate::poly::MonomialBasis;
use crate::scalar::{lit, Real};
use crate::system::Trajectory;

/// Fourth-order finite-difference time derivative of every channel.
///
/// Interior points use the centred five-point stencil, the two samples at each
/// end one-sided fourth-order stencils.
pub fn time_derivative<T: Real>(traj: &Trajectory<T>) -> Result<DMatrix<T>> {
    let n = traj.len();
    if n < 5 {
        return invalid("finite differences need at least five samples");
    }
    let x = traj.states();
    let h12 = traj.dt() * lit(12.0);
    let c = |v: f64| -> T { lit(v) };
    let mut d = DMatrix::zeros(n, traj.dim());
    for j in 0..traj.dim() {
        let f = |i: usize| x[(i, j)];
        d[(0, j)] = (c(-25.0) * f(0) + c(48.0) * f(1) - c(36.0) * f(2) + c(16.0) * f(3)
            - c(3.0) * f(4))
            / h12;
        d[(1, j)] = (c(-3.0) * f(0) - c(10.0) * f(1) + c(18.0) * f(2) - c(6.0) * f(3) + f(4)) / h12;
        for i in 2..n - 2 {
            d[(i, j)] = (f(i - 2) - c(8.0) * f(i - 1) + c(8.0) * f(i + 1) - f(i + 2)) / h12;
        }
        let l = n - 1;
        d[(l, j)] = (c(25.0) * f(l) - c(48.0) * f(l - 1) + c(36.0) * f(l - 2) - c(16.0) * f(l - 3)
            + c(3.0) * f(l - 4))
            / h12;
        d[(l - 1, j)] = (c(3.0) * f(l) + c(10.0) * f(l - 1) - c(18.0) * f(l - 2)
            + c(6.0) * f(l - 3)
            - f(l - 4))
            / h12;
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReducedVectorField<T: Real> {
    linear: DMatrix<T>,
    basis: MonomialBasis,
    nonlinear: DMatrix<T>,
    order: u32,
    /// Condition number of the scaled regression matrix.
    pub condition: f64,
    /// Set when `W` has an eigenvalue with non-negative real part.
    pub unstable: bool,
}

impl<T: Real> ReducedVectorField<T> {
    pub fn new(linear: DMatrix<T>, order: u32, nonlinear: DMatrix<T>) -> Result<Self> {
        let d = linear.nrows();
        if linear.ncols() != d || d == 0 {
            return invalid("linear part must be a non-empty square matrix");
        }
        let basis = MonomialBasis::new(d, 2, order.max(1));
        if nonlinear.shape() != (d, basis.len()) {
            return invalid("nonlinear coefficient table has the wrong shape");
        }
        let unstable = eigen_general(&linear)?
            .values
            .iter()
            .any(|l| l.re >= T::zero());
        Ok(Self {
            linear,
            basis,
            nonlinear,
            order,
            condition: 1.0,
            unstable,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.nrows()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn linear(&self) -> &DMatrix<T> {
        &self.linear
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn nonlinear(&self) -> &DMatrix<T> {
        &self.nonlinear
    }

    pub fn eval(&self, xi: &DVector<T>) -> DVector<T> {
        let mut v = &self.linear * xi;
        if !self.basis.is_empty() {
            v += &self.nonlinear * DVector::from_vec(self.basis.eval(xi.as_slice()));
        }
        v
    }
}

/// Least-squares fit of `ξ̇ = Wξ + N φ(ξ)` (monomials of degree `2..=order`)
/// with derivatives from [`time_derivative`]; samples of all trajectories are pooled.
pub fn fit_reduced_field<T: Real>(
    trajs: &[Trajectory<T>],
    order: u32,
) -> Result<ReducedVectorField<T>> {
    let first = match trajs.first() {
        Some(t) => t,
        None => return invalid("no reduced trajectories"),
    };
    if order == 0 {
        return invalid("dynamics order must be at least 1");
    }
    let d = first.dim();
    let basis = MonomialBasis::new(d, 2, order);
    let ncol = d + basis.len();
    let total: usize = trajs.iter().map(Trajectory::len).sum();
    if total < 10 * ncol * d {
        return invalid(format!(
            "{total} samples for {} vector-field coefficients (need ten times as many)",
            ncol * d
        ));
    }
    let mut design = DMatrix::zeros(total, ncol);
    let mut target = DMatrix::zeros(total, d);
    let mut row = 0;
    for t in trajs {
        if t.dim() != d {
            return invalid("reduced trajectories differ in dimension");
        }
        let deriv = time_derivative(t)?;
        for i in 0..t.len() {
            let xi: Vec<T> = t.states().row(i).iter().copied().collect();
            for (k, &v) in xi.iter().enumerate() {
                design[(row, k)] = v;
            }
            for (k, v) in basis.eval(&xi).into_iter().enumerate() {
                design[(row, d + k)] = v;
            }
            for k in 0..d {
                target[(row, k)] = deriv[(i, k)];
            }
            row += 1;
        }
    }
    let sol = lstsq(&design, &target, "reduced vector-field regression")?;
    let b = sol.solution;
    let linear = b.rows(0, d).transpose();
    let nonlinear = b.rows(d, basis.len()).transpose();
    let mut rvf = ReducedVectorField::new(linear, order, nonlinear)?;
    rvf.condition = sol.condition;
    Ok(rvf)
}
