//! Graph-style parametrization `y = V₁ξ + v_nl(ξ)`, `ξ = V₁ᵀy`, of an invariant
//! manifold in observable space, with `V₁ᵀV₁ = I` and `V₁ᵀ v_nl ≡ 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddedDataset;
use crate::error::{invalid, Error, Result};
use crate::io::{check_format, matrix_from_rows, matrix_rows};
use crate::linalg::{leading_symmetric_eigenvectors, lstsq, orthonormalize};
use crate::poly::{MonomialBasis, TruncatedAlgebra};
use crate::scalar::{lit, to_f64, Real};
use crate::system::Trajectory;

/// Where the equilibrium subtracted before fitting comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumChoice {
    #[default]
    Zero,
    /// Mean of the last 5% of samples of every trajectory.
    TailMean,
    Given(Vec<f64>),
}

impl EquilibriumChoice {
    fn label(&self) -> &'static str {
        match self {
            EquilibriumChoice::Zero => "zero",
            EquilibriumChoice::TailMean => "tail_mean",
            EquilibriumChoice::Given(_) => "given",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldOptions {
    /// Manifold dimension `2m`.
    pub ssm_dim: usize,
    /// Polynomial order `M` of the graph (1 = flat).
    pub order: u32,
    pub equilibrium: EquilibriumChoice,
    /// Joint Gauss–Newton refinement of tangent space and coefficients.
    pub refine: bool,
}

impl ManifoldOptions {
    pub fn new(ssm_dim: usize, order: u32) -> Self {
        Self {
            ssm_dim,
            order,
            equilibrium: EquilibriumChoice::Zero,
            refine: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldModel<T: Real> {
    tangent: DMatrix<T>,
    basis: MonomialBasis,
    coeffs: DMatrix<T>,
    order: u32,
    equilibrium: DVector<T>,
    equilibrium_source: String,
    labels: Vec<String>,
}

/// Fitted model plus diagnostics.
#[derive(Clone, Debug)]
pub struct ManifoldFit<T: Real> {
    pub model: ManifoldModel<T>,
    /// Root-mean-square norm of the graph residual over training samples.
    pub residual_rms: T,
    /// Largest sample norm (after removing the equilibrium).
    pub data_radius: T,
    /// Cost after each accepted refinement step (first entry: initial fit).
    pub refinement_costs: Vec<T>,
}

impl<T: Real> ManifoldModel<T> {
    /// Assembles a model after checking `V₁ᵀV₁ = I` and `V₁ᵀC = 0`.
    pub fn new(
        tangent: DMatrix<T>,
        order: u32,
        coeffs: DMatrix<T>,
        equilibrium: DVector<T>,
    ) -> Result<Self> {
        let (p, d) = tangent.shape();
        if d == 0 || d > p {
            return invalid(format!(
                "tangent space of dimension {d} in a {p}-dimensional space"
            ));
        }
        if order == 0 {
            return invalid("manifold order must be at least 1");
        }
        let basis = MonomialBasis::new(d, 2, order);
        if coeffs.shape() != (p, basis.len()) {
            return invalid(format!(
                "graph coefficients must be {p}×{} for order {order}, got {:?}",
                basis.len(),
                coeffs.shape()
            ));
        }
        let gram = tangent.transpose() * &tangent;
        if (gram - DMatrix::identity(d, d)).amax() > lit(1e-10) {
            return invalid("tangent matrix columns are not orthonormal");
        }
        if equilibrium.len() != p {
            return invalid("equilibrium dimension mismatch");
        }
        let leak = (tangent.transpose() * &coeffs).amax();
        if leak > lit::<T>(1e-8) * coeffs.amax().max(T::one()) {
            return invalid("graph coefficients are not orthogonal to the tangent space");
        }
        Ok(Self {
            tangent,
            basis,
            coeffs,
            order,
            equilibrium,
            equilibrium_source: "given".into(),
            labels: (1..=p).map(|i| format!("y{i}")).collect(),
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.tangent.nrows()
    }

    pub fn dim(&self) -> usize {
        self.tangent.ncols()
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn tangent(&self) -> &DMatrix<T> {
        &self.tangent
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    /// `p × (#monomials)` matrix; column `k` multiplies monomial `k` of [`Self::basis`].
    pub fn coefficients(&self) -> &DMatrix<T> {
        &self.coeffs
    }

    pub fn equilibrium(&self) -> &DVector<T> {
        &self.equilibrium
    }

    pub fn equilibrium_source(&self) -> &str {
        &self.equilibrium_source
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn set_labels(&mut self, labels: Vec<String>) -> Result<()> {
        if labels.len() != self.ambient_dim() {
            return invalid("label count does not match ambient dimension");
        }
        self.labels = labels;
        Ok(())
    }

    /// Reduced coordinates `ξ = V₁ᵀ(y − y_eq)`.
    pub fn project(&self, y: &DVector<T>) -> DVector<T> {
        self.tangent.tr_mul(&(y - &self.equilibrium))
    }

    /// `y = y_eq + V₁ξ + v_nl(ξ)`.
    pub fn lift(&self, xi: &DVector<T>) -> DVector<T> {
        let mut y = &self.equilibrium + &self.tangent * xi;
        if !self.basis.is_empty() {
            let phi = DVector::from_vec(self.basis.eval(xi.as_slice()));
            y += &self.coeffs * phi;
        }
        y
    }

    /// Graph part `v_nl(ξ)`.
    pub fn graph(&self, xi: &DVector<T>) -> DVector<T> {
        if self.basis.is_empty() {
            return DVector::zeros(self.ambient_dim());
        }
        &self.coeffs * DVector::from_vec(self.basis.eval(xi.as_slice()))
    }

    /// Jacobian of [`Self::lift`], `V₁ + C·Dφ(ξ)`.
    pub fn lift_jacobian(&self, xi: &DVector<T>) -> DMatrix<T> {
        let d = self.dim();
        let mut j = self.tangent.clone();
        if !self.basis.is_empty() {
            let jac = self.basis.jacobian(xi.as_slice());
            let dphi = DMatrix::from_row_slice(self.basis.len(), d, &jac);
            j += &self.coeffs * dphi;
        }
        j
    }

    pub fn project_trajectory(&self, traj: &Trajectory<T>) -> Result<Trajectory<T>> {
        if traj.dim() != self.ambient_dim() {
            return invalid(format!(
                "trajectory dimension {} does not match manifold ambient dimension {}",
                traj.dim(),
                self.ambient_dim()
            ));
        }
        let eq_row = self.equilibrium.transpose();
        let mut centered = traj.states().clone();
        for mut row in centered.row_iter_mut() {
            row -= &eq_row;
        }
        let xi = centered * &self.tangent;
        let labels = (1..=self.dim()).map(|i| format!("xi{i}")).collect();
        traj.map_states(xi, labels)
    }

    pub fn lift_trajectory(&self, reduced: &Trajectory<T>) -> Result<Trajectory<T>> {
        if reduced.dim() != self.dim() {
            return invalid("reduced trajectory dimension mismatch");
        }
        let mut states = DMatrix::zeros(reduced.len(), self.ambient_dim());
        for i in 0..reduced.len() {
            let y = self.lift(&reduced.sample(i));
            states.set_row(i, &y.transpose());
        }
        reduced.map_states(states, self.labels.clone())
    }

    /// Same manifold with tangent basis `V₁Q` (`Q` orthogonal); the graph
    /// polynomial is re-expanded as `ξ' ↦ v_nl(Qξ')`.
    pub fn rotated(&self, q: &DMatrix<T>) -> Result<Self> {
        let d = self.dim();
        if q.shape() != (d, d) || (q.transpose() * q - DMatrix::identity(d, d)).amax() > lit(1e-10)
        {
            return invalid("rotation must be an orthogonal matrix of the manifold dimension");
        }
        let tangent = &self.tangent * q;
        let mut coeffs = DMatrix::zeros(self.ambient_dim(), self.basis.len());
        if !self.basis.is_empty() {
            let alg = TruncatedAlgebra::new(d, self.order);
            let args: Vec<Vec<T>> = (0..d)
                .map(|v| {
                    let mut a = alg.zero();
                    for l in 0..d {
                        let x = alg.variable::<T>(l);
                        a = alg.add(&a, &alg.scale(&x, q[(v, l)]));
                    }
                    a
                })
                .collect();
            let rows: Vec<Vec<T>> = (0..self.ambient_dim())
                .map(|i| self.coeffs.row(i).iter().copied().collect())
                .collect();
            let comp = alg.compose(&self.basis, &rows, &args);
            for (i, poly) in comp.iter().enumerate() {
                let restricted = alg.restrict(&self.basis, poly);
                for (k, c) in restricted.into_iter().enumerate() {
                    coeffs[(i, k)] = c;
                }
            }
        }
        let mut out = Self::new(tangent, self.order, coeffs, self.equilibrium.clone())?;
        out.equilibrium_source = self.equilibrium_source.clone();
        out.labels = self.labels.clone();
        Ok(out)
    }
}

fn estimate_equilibrium<T: Real>(
    data: &EmbeddedDataset<T>,
    choice: &EquilibriumChoice,
) -> Result<DVector<T>> {
    let p = data.dim();
    match choice {
        EquilibriumChoice::Zero => Ok(DVector::zeros(p)),
        EquilibriumChoice::Given(v) => {
            if v.len() != p {
                return invalid(format!(
                    "equilibrium has {} entries, data has {p} coordinates",
                    v.len()
                ));
            }
            Ok(DVector::from_iterator(p, v.iter().map(|&x| lit(x))))
        }
        EquilibriumChoice::TailMean => {
            let mut sum = DVector::zeros(p);
            let mut count = 0usize;
            for t in &data.trajectories {
                let tail = (t.len() / 20).max(1);
                for i in t.len() - tail..t.len() {
                    sum += t.sample(i);
                    count += 1;
                }
            }
            Ok(sum / lit::<T>(count as f64))
        }
    }
}

fn graph_fit<T: Real>(
    y: &DMatrix<T>,
    tangent: &DMatrix<T>,
    basis: &MonomialBasis,
) -> Result<(DMatrix<T>, T)> {
    let xi = tangent.transpose() * y;
    let resid = y - tangent * &xi;
    let n = y.ncols();
    if basis.is_empty() {
        let cost = resid.norm_squared();
        return Ok((DMatrix::zeros(y.nrows(), 0), cost));
    }
    let phi = DMatrix::from_fn(n, basis.len(), |_, _| T::zero());
    let mut phi = phi;
    for i in 0..n {
        let col: Vec<T> = xi.column(i).iter().copied().collect();
        for (k, v) in basis.eval(&col).into_iter().enumerate() {
            phi[(i, k)] = v;
        }
    }
    let sol = lstsq(&phi, &resid.transpose(), "manifold graph design matrix")?;
    let c = sol.solution.transpose();
    let c = &c - tangent * (tangent.transpose() * &c);
    let err = resid - &c * phi.transpose();
    Ok((c, err.norm_squared()))
}

/// Least-squares fit of the manifold to pooled samples.
///
/// The tangent space comes from the leading left singular vectors of the
/// snapshot matrix; the graph coefficients from least squares on the residual
/// orthogonal to it. With `refine` set, tangent space and coefficients are then
/// improved jointly by damped Gauss–Newton steps.
pub fn fit_manifold<T: Real>(
    data: &EmbeddedDataset<T>,
    opts: &ManifoldOptions,
) -> Result<ManifoldFit<T>> {
    let p = data.dim();
    let d = opts.ssm_dim;
    if d == 0 || d % 2 != 0 {
        return invalid(format!(
            "manifold dimension must be even and positive, got {d}"
        ));
    }
    if d > p {
        return invalid(format!("manifold dimension {d} exceeds data dimension {p}"));
    }
    if opts.order == 0 {
        return invalid("manifold order must be at least 1");
    }
    let basis = MonomialBasis::new(d, 2, opts.order);
    let params = p * d + p * basis.len();
    let n = data.sample_count();
    if n < 10 * params {
        return invalid(format!(
            "{n} samples for {params} manifold parameters (at least {} needed)",
            10 * params
        ));
    }
    let eq = estimate_equilibrium(data, &opts.equilibrium)?;
    let mut y = DMatrix::zeros(p, n);
    let mut col = 0;
    for t in &data.trajectories {
        for i in 0..t.len() {
            for r in 0..p {
                y[(r, col)] = t.states()[(i, r)] - eq[r];
            }
            col += 1;
        }
    }
    let radius = y
        .column_iter()
        .map(|c| c.norm())
        .fold(T::zero(), |a, b| a.max(b));
    if radius == T::zero() {
        return invalid("all samples coincide with the equilibrium");
    }
    let gram = &y * y.transpose();
    let (_, mut tangent) = leading_symmetric_eigenvectors(&gram, d)?;
    tangent = orthonormalize(&tangent);
    let (mut coeffs, mut cost) = graph_fit(&y, &tangent, &basis)?;
    let mut costs = vec![cost];
    if opts.refine {
        let initial = cost;
        let (t2, c2, hist) = refine(&y, tangent, coeffs, cost, &basis)?;
        tangent = t2;
        coeffs = c2;
        cost = *hist.last().unwrap_or(&cost);
        costs.extend(hist);
        if cost > initial {
            return Err(Error::FoldSuspected(format!(
                "joint refinement raised the residual from {:.3e} to {:.3e}",
                to_f64(initial),
                to_f64(cost)
            )));
        }
    }
    let residual_rms = (cost / lit(n as f64)).sqrt();
    if residual_rms > lit::<T>(0.3) * radius {
        return Err(Error::FoldSuspected(format!(
            "graph residual {:.3e} exceeds 30% of the data radius {:.3e}",
            to_f64(residual_rms),
            to_f64(radius)
        )));
    }
    let mut model = ManifoldModel::new(tangent, opts.order, coeffs, eq)?;
    model.equilibrium_source = opts.equilibrium.label().into();
    model.labels = data.trajectories[0].labels().to_vec();
    Ok(ManifoldFit {
        model,
        residual_rms,
        data_radius: radius,
        refinement_costs: costs,
    })
}

/// Gauss–Newton on the tangent basis with the graph coefficients eliminated
/// by least squares after every step.
fn refine<T: Real>(
    y: &DMatrix<T>,
    mut tangent: DMatrix<T>,
    mut coeffs: DMatrix<T>,
    mut cost: T,
    basis: &MonomialBasis,
) -> Result<(DMatrix<T>, DMatrix<T>, Vec<T>)> {
    let (p, d) = tangent.shape();
    let np = p * d;
    let mut hist = Vec::new();
    for _ in 0..200 {
        // residual r = y − Vξ − Cφ(ξ), ξ = Vᵀy; perturbation dV enters through
        // both the explicit V and ξ.
        let mut jtj = DMatrix::<T>::zeros(np, np);
        let mut jtr = DVector::<T>::zeros(np);
        let mut jrow = DMatrix::<T>::zeros(p, np);
        for i in 0..y.ncols() {
            let yi = y.column(i);
            let xi = tangent.tr_mul(&yi);
            let xs: Vec<T> = xi.iter().copied().collect();
            let (phi, dphi) = if basis.is_empty() {
                (DVector::zeros(0), DMatrix::zeros(0, d))
            } else {
                (
                    DVector::from_vec(basis.eval(&xs)),
                    DMatrix::from_row_slice(basis.len(), d, &basis.jacobian(&xs)),
                )
            };
            let r = &yi - &tangent * &xi - &coeffs * &phi;
            // G = V + C·Dφ maps dξ to dy
            let g = &tangent + &coeffs * &dphi;
            jrow.fill(T::zero());
            for a in 0..p {
                for b in 0..d {
                    let idx = a * d + b;
                    // ∂r/∂V[a,b] = −e_a ξ_b − G[:,b]·y_a
                    jrow[(a, idx)] -= xi[b];
                    for row in 0..p {
                        jrow[(row, idx)] -= g[(row, b)] * yi[a];
                    }
                }
            }
            jtj += jrow.tr_mul(&jrow);
            jtr += jrow.tr_mul(&r);
        }
        let mu = lit::<T>(1e-12)
            * (0..np)
                .map(|k| jtj[(k, k)])
                .fold(T::zero(), |a, b| a.max(b));
        for k in 0..np {
            jtj[(k, k)] += mu;
        }
        let step = match jtj.clone().cholesky() {
            Some(ch) => -ch.solve(&jtr),
            None => break,
        };
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..12 {
            let mut trial = tangent.clone();
            for a in 0..p {
                for b in 0..d {
                    trial[(a, b)] += alpha * step[a * d + b];
                }
            }
            let trial = orthonormalize(&trial);
            let (c, j) = graph_fit(y, &trial, basis)?;
            if j < cost {
                accepted = Some((trial, c, j));
                break;
            }
            alpha *= lit(0.5);
        }
        match accepted {
            Some((t, c, j)) => {
                let rel = (cost - j) / cost.max(T::default_epsilon());
                tangent = t;
                coeffs = c;
                cost = j;
                hist.push(j);
                if rel < lit(1e-9) {
                    break;
                }
            }
            None => break,
        }
    }
    Ok((tangent, coeffs, hist))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphTermDoc {
    pub exponents: Vec<u32>,
    pub coefficients: Vec<f64>,
}

/// JSON form of a [`ManifoldModel`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldDoc {
    pub format: String,
    pub version: u32,
    pub p: usize,
    pub m: usize,
    pub order: u32,
    pub tangent: Vec<Vec<f64>>,
    pub equilibrium: Vec<f64>,
    pub equilibrium_source: String,
    pub labels: Vec<String>,
    pub monomials: Vec<GraphTermDoc>,
}

pub const MANIFOLD_FORMAT: &str = "manifold-model";

impl ManifoldDoc {
    pub fn from_model<T: Real>(m: &ManifoldModel<T>) -> Self {
        Self {
            format: MANIFOLD_FORMAT.into(),
            version: 1,
            p: m.ambient_dim(),
            m: m.dim() / 2,
            order: m.order,
            tangent: matrix_rows(&m.tangent),
            equilibrium: m.equilibrium.iter().map(|&x| to_f64(x)).collect(),
            equilibrium_source: m.equilibrium_source.clone(),
            labels: m.labels.clone(),
            monomials: m
                .basis
                .exponents()
                .iter()
                .enumerate()
                .map(|(k, e)| GraphTermDoc {
                    exponents: e.clone(),
                    coefficients: m.coeffs.column(k).iter().map(|&x| to_f64(x)).collect(),
                })
                .collect(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<ManifoldModel<T>> {
        check_format(&self.format, self.version, MANIFOLD_FORMAT, 1)?;
        let tangent: DMatrix<T> = matrix_from_rows(&self.tangent, "tangent")?;
        if tangent.shape() != (self.p, 2 * self.m) {
            return Err(Error::Format("tangent shape does not match p and m".into()));
        }
        let basis = MonomialBasis::new(2 * self.m, 2, self.order);
        let mut coeffs = DMatrix::zeros(self.p, basis.len());
        for term in &self.monomials {
            let k = basis.index_of(&term.exponents).ok_or_else(|| {
                Error::Format(format!("monomial {:?} outside the basis", term.exponents))
            })?;
            if term.coefficients.len() != self.p {
                return Err(Error::Format(
                    "graph coefficient vector has the wrong length".into(),
                ));
            }
            for (i, &c) in term.coefficients.iter().enumerate() {
                coeffs[(i, k)] = lit(c);
            }
        }
        let eq = DVector::from_iterator(self.p, self.equilibrium.iter().map(|&x| lit(x)));
        let mut model = ManifoldModel::new(tangent, self.order, coeffs, eq)?;
        model.equilibrium_source = self.equilibrium_source.clone();
        model.set_labels(self.labels.clone())?;
        Ok(model)
    }
}
