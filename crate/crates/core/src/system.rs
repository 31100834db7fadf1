//! Full-order mechanical systems `M q̈ + C q̇ + K q + f_nl(q, q̇) = F(t)`,
//! their linearization and direct time integration.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{eigen_general, sign_fix};
use crate::ode::{integrate_at, OdeOptions};
use crate::scalar::{cabs, lit, to_f64, Real};

/// One polynomial force term `c · Π q_i^{a_i} · Π q̇_i^{b_i}` acting on `dof`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForceTerm<T> {
    pub dof: usize,
    pub q_exponents: Vec<u32>,
    pub qdot_exponents: Vec<u32>,
    pub coefficient: T,
}

impl<T: Real> ForceTerm<T> {
    /// Term on `dof` depending on a single coordinate of each kind:
    /// `c · q_{qi}^a · q̇_{vi}^b` for an `n`-dof system.
    pub fn monomial(
        n: usize,
        dof: usize,
        q: &[(usize, u32)],
        qdot: &[(usize, u32)],
        coefficient: T,
    ) -> Self {
        let mut qe = vec![0; n];
        let mut ve = vec![0; n];
        for &(i, e) in q {
            qe[i] += e;
        }
        for &(i, e) in qdot {
            ve[i] += e;
        }
        Self {
            dof,
            q_exponents: qe,
            qdot_exponents: ve,
            coefficient,
        }
    }

    pub fn degree(&self) -> u32 {
        self.q_exponents.iter().sum::<u32>() + self.qdot_exponents.iter().sum::<u32>()
    }

    pub fn eval(&self, q: &[T], qdot: &[T]) -> T {
        let mut v = self.coefficient;
        for (x, &e) in q.iter().zip(&self.q_exponents) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        for (x, &e) in qdot.iter().zip(&self.qdot_exponents) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        v
    }
}

/// Boundary conditions of the spring chain built by [`build_oscillator_chain`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ChainEnds {
    /// First mass tied to a wall, last mass free.
    #[default]
    FixedFree,
    /// Both end masses tied to walls.
    FixedFixed,
}

/// Second-order mechanical model with a constant mass matrix.
#[derive(Clone, Debug)]
pub struct MechSystem<T: Real> {
    mass: DMatrix<T>,
    stiffness: DMatrix<T>,
    damping: DMatrix<T>,
    nonlinear: Vec<ForceTerm<T>>,
    mass_inv: DMatrix<T>,
    minv_k: DMatrix<T>,
    minv_c: DMatrix<T>,
}

impl<T: Real> MechSystem<T> {
    pub fn new(
        mass: DMatrix<T>,
        stiffness: DMatrix<T>,
        damping: DMatrix<T>,
        nonlinear: Vec<ForceTerm<T>>,
    ) -> Result<Self> {
        let n = mass.nrows();
        if n == 0 {
            return invalid("system needs at least one degree of freedom");
        }
        for (name, m) in [
            ("mass", &mass),
            ("stiffness", &stiffness),
            ("damping", &damping),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return invalid(format!("{name} matrix must be {n}×{n}"));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return invalid(format!("{name} matrix has non-finite entries"));
            }
        }
        let asym = (&mass - mass.transpose()).amax();
        if asym > lit::<T>(1e-12) * mass.amax() {
            return invalid("mass matrix is not symmetric");
        }
        let chol = Cholesky::new(mass.clone()).ok_or_else(|| {
            Error::DecompositionFailure("mass matrix is not positive definite".into())
        })?;
        for t in &nonlinear {
            if t.dof >= n || t.q_exponents.len() != n || t.qdot_exponents.len() != n {
                return invalid(format!(
                    "force term on dof {} does not fit a {n}-dof system",
                    t.dof
                ));
            }
            if t.degree() == 0 {
                return invalid("constant force terms are not allowed (f_nl(0, 0) must vanish)");
            }
        }
        let mass_inv = chol.inverse();
        let minv_k = &mass_inv * &stiffness;
        let minv_c = &mass_inv * &damping;
        Ok(Self {
            mass,
            stiffness,
            damping,
            nonlinear,
            mass_inv,
            minv_k,
            minv_c,
        })
    }

    pub fn dof_count(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass(&self) -> &DMatrix<T> {
        &self.mass
    }

    pub fn stiffness(&self) -> &DMatrix<T> {
        &self.stiffness
    }

    pub fn damping(&self) -> &DMatrix<T> {
        &self.damping
    }

    pub fn nonlinear_terms(&self) -> &[ForceTerm<T>] {
        &self.nonlinear
    }

    pub fn nonlinear_force(&self, q: &[T], qdot: &[T]) -> DVector<T> {
        let mut f = DVector::zeros(self.dof_count());
        for t in &self.nonlinear {
            f[t.dof] += t.eval(q, qdot);
        }
        f
    }

    /// Same system without the listed nonlinear terms removed by `keep`.
    pub fn filter_terms(&self, keep: impl Fn(&ForceTerm<T>) -> bool) -> Result<Self> {
        Self::new(
            self.mass.clone(),
            self.stiffness.clone(),
            self.damping.clone(),
            self.nonlinear.iter().filter(|t| keep(t)).cloned().collect(),
        )
    }

    /// First-order right-hand side for state `x = (q, q̇)` and external force `force`.
    pub fn rhs(&self, x: &[T], force: Option<&[T]>, dx: &mut [T]) {
        let n = self.dof_count();
        let (q, v) = x.split_at(n);
        dx[..n].copy_from_slice(v);
        let mut rhs_force = vec![T::zero(); n];
        for t in &self.nonlinear {
            rhs_force[t.dof] -= t.eval(q, v);
        }
        if let Some(f) = force {
            for i in 0..n {
                rhs_force[i] += f[i];
            }
        }
        for i in 0..n {
            let mut acc = T::zero();
            for j in 0..n {
                acc -= self.minv_k[(i, j)] * q[j] + self.minv_c[(i, j)] * v[j];
                acc += self.mass_inv[(i, j)] * rhs_force[j];
            }
            dx[n + i] = acc;
        }
    }

    /// Linear parts `(∂f_nl/∂q, ∂f_nl/∂q̇)` at the origin.
    fn nonlinear_linear_part(&self) -> (DMatrix<T>, DMatrix<T>) {
        let n = self.dof_count();
        let mut kq = DMatrix::zeros(n, n);
        let mut cq = DMatrix::zeros(n, n);
        for t in self.nonlinear.iter().filter(|t| t.degree() == 1) {
            if let Some(j) = t.q_exponents.iter().position(|&e| e == 1) {
                kq[(t.dof, j)] += t.coefficient;
            }
            if let Some(j) = t.qdot_exponents.iter().position(|&e| e == 1) {
                cq[(t.dof, j)] += t.coefficient;
            }
        }
        (kq, cq)
    }

    /// First-order system matrix `A = [[0, I], [−M⁻¹K, −M⁻¹C]]` including any
    /// linear terms of the force list.
    pub fn first_order_matrix(&self) -> DMatrix<T> {
        let n = self.dof_count();
        let (kq, cq) = self.nonlinear_linear_part();
        let k = &self.mass_inv * (&self.stiffness + kq);
        let c = &self.mass_inv * (&self.damping + cq);
        let mut a = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            a[(i, n + i)] = T::one();
            for j in 0..n {
                a[(n + i, j)] = -k[(i, j)];
                a[(n + i, n + j)] = -c[(i, j)];
            }
        }
        a
    }

    /// Total mechanical energy `½q̇ᵀMq̇ + ½qᵀKq + U(q)` where `U` collects the
    /// potentials of force terms that depend on the displacement of their own dof only.
    pub fn mechanical_energy(&self, x: &[T]) -> T {
        let n = self.dof_count();
        let q = DVector::from_column_slice(&x[..n]);
        let v = DVector::from_column_slice(&x[n..2 * n]);
        let half: T = lit(0.5);
        let mut e = half * v.dot(&(&self.mass * &v)) + half * q.dot(&(&self.stiffness * &q));
        for t in &self.nonlinear {
            let own = t.q_exponents[t.dof];
            let single = t.qdot_exponents.iter().all(|&b| b == 0)
                && t.q_exponents
                    .iter()
                    .enumerate()
                    .all(|(i, &a)| i == t.dof || a == 0);
            if single && own > 0 {
                e += t.coefficient * q[t.dof].powi(own as i32 + 1) / lit(own as f64 + 1.0);
            }
        }
        e
    }

    /// Mass-normalized undamped mode shapes `φ_j` (columns, sorted by frequency)
    /// and their natural frequencies.
    pub fn undamped_modes(&self) -> Result<(Vec<T>, DMatrix<T>)> {
        let n = self.dof_count();
        let chol = Cholesky::new(self.mass.clone()).ok_or_else(|| {
            Error::DecompositionFailure("mass matrix is not positive definite".into())
        })?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DecompositionFailure("Cholesky factor is singular".into()))?;
        let mut s = &linv * &self.stiffness * linv.transpose();
        s = (&s + s.transpose()) * lit::<T>(0.5);
        let eig = SymmetricEigen::new(s);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
        let mut shapes = DMatrix::zeros(n, n);
        let mut freqs = Vec::with_capacity(n);
        for (c, &i) in order.iter().enumerate() {
            let mut phi = linv.transpose() * eig.eigenvectors.column(i);
            sign_fix(&mut phi);
            shapes.set_column(c, &phi);
            freqs.push(eig.eigenvalues[i].max(T::zero()).sqrt());
        }
        Ok((freqs, shapes))
    }

    /// Force vector `M φ_j` that excites undamped mode `j` (0-based) alone.
    pub fn modal_force_shape(&self, mode: usize) -> Result<DVector<T>> {
        let (_, shapes) = self.undamped_modes()?;
        if mode >= shapes.ncols() {
            return invalid(format!("mode {mode} out of range"));
        }
        Ok(&self.mass * shapes.column(mode))
    }
}

/// Builds a chain of `n_masses` masses joined by unit springs, the first mass
/// attached to a wall by a unit spring and the last one free. Damping is
/// Rayleigh-proportional: `C = mass_prop·M + stiff_prop·K`.
pub fn build_oscillator_chain<T: Real>(
    n_masses: usize,
    first_mass: T,
    other_mass: T,
    mass_prop: T,
    stiff_prop: T,
    nl_terms: Vec<ForceTerm<T>>,
) -> Result<MechSystem<T>> {
    build_chain_with_ends(
        n_masses,
        first_mass,
        other_mass,
        mass_prop,
        stiff_prop,
        nl_terms,
        ChainEnds::FixedFree,
    )
}

/// [`build_oscillator_chain`] with explicit end conditions.
pub fn build_chain_with_ends<T: Real>(
    n_masses: usize,
    first_mass: T,
    other_mass: T,
    mass_prop: T,
    stiff_prop: T,
    nl_terms: Vec<ForceTerm<T>>,
    ends: ChainEnds,
) -> Result<MechSystem<T>> {
    if n_masses < 2 {
        return invalid("a chain needs at least two masses");
    }
    if !(first_mass > T::zero()) || !(other_mass > T::zero()) {
        return invalid("masses must be positive");
    }
    let n = n_masses;
    let mut m = DMatrix::zeros(n, n);
    m[(0, 0)] = first_mass;
    for i in 1..n {
        m[(i, i)] = other_mass;
    }
    let two: T = lit(2.0);
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = two;
        if i + 1 < n {
            k[(i, i + 1)] = -T::one();
            k[(i + 1, i)] = -T::one();
        }
    }
    if ends == ChainEnds::FixedFree {
        k[(n - 1, n - 1)] = T::one();
    }
    let c = &m * mass_prop + &k * stiff_prop;
    MechSystem::new(m, k, c, nl_terms)
}

/// Force terms of the benchmark chain, all acting on the first mass:
/// `0.33 q̇₁² + 3 q₁³ + 0.7 q₁² q̇₁ + 0.5 q̇₁³`.
pub fn benchmark_chain_terms<T: Real>(n: usize) -> Vec<ForceTerm<T>> {
    vec![
        ForceTerm::monomial(n, 0, &[], &[(0, 2)], lit(0.33)),
        ForceTerm::monomial(n, 0, &[(0, 3)], &[], lit(3.0)),
        ForceTerm::monomial(n, 0, &[(0, 2)], &[(0, 1)], lit(0.7)),
        ForceTerm::monomial(n, 0, &[], &[(0, 3)], lit(0.5)),
    ]
}

/// Five-mass benchmark chain (first mass 1.5 kg, others 1 kg, Rayleigh
/// constants 0.002 and 0.005, nonlinearity on the first mass).
pub fn benchmark_chain<T: Real>() -> MechSystem<T> {
    build_oscillator_chain(
        5,
        lit(1.5),
        T::one(),
        lit(0.002),
        lit(0.005),
        benchmark_chain_terms(5),
    )
    .expect("benchmark chain parameters are valid")
}

/// Eigen-decomposition of the linearized first-order system.
#[derive(Clone, Debug)]
pub struct Spectrum<T: Real> {
    /// Ordered by decreasing real part; each pair stored as `(λ, λ̄)` with `Im λ ≥ 0` first.
    pub eigenvalues: Vec<Complex<T>>,
    pub eigenvectors: Vec<DVector<Complex<T>>>,
    /// Indices `(i, ī)` of mode `j` in `eigenvalues` (equal for a real eigenvalue).
    pub pairs: Vec<(usize, usize)>,
    /// Set when the eigenvector matrix is nearly singular.
    pub non_semisimple: bool,
    pub max_residual: T,
}

impl<T: Real> Spectrum<T> {
    pub fn mode_count(&self) -> usize {
        self.pairs.len()
    }

    /// Eigenvalue with non-negative imaginary part of mode `j` (0-based) and its eigenvector.
    pub fn mode(&self, j: usize) -> (Complex<T>, &DVector<Complex<T>>) {
        let i = self.pairs[j].0;
        (self.eigenvalues[i], &self.eigenvectors[i])
    }

    pub fn from_matrix(a: &DMatrix<T>) -> Result<Self> {
        let eig = eigen_general(a)?;
        let n = eig.values.len();
        let tol = lit::<T>(1e-9) * a.norm().max(T::one());
        let mut used = vec![false; n];
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.values[b].im.partial_cmp(&eig.values[a].im).unwrap());
        for &i in &idx {
            if used[i] {
                continue;
            }
            let lam = eig.values[i];
            used[i] = true;
            if lam.im.abs() <= tol {
                groups.push((i, i));
                continue;
            }
            let partner = (0..n)
                .filter(|&j| !used[j])
                .min_by(|&a, &b| {
                    cabs(eig.values[a] - lam.conj())
                        .partial_cmp(&cabs(eig.values[b] - lam.conj()))
                        .unwrap()
                })
                .ok_or_else(|| {
                    Error::DecompositionFailure("eigenvalue without conjugate partner".into())
                })?;
            if cabs(eig.values[partner] - lam.conj()) > tol {
                return Err(Error::DecompositionFailure(
                    "spectrum is not closed under conjugation".into(),
                ));
            }
            used[partner] = true;
            groups.push((i, partner));
        }
        groups.sort_by(|&(a, _), &(b, _)| {
            let (la, lb) = (eig.values[a], eig.values[b]);
            lb.re
                .partial_cmp(&la.re)
                .unwrap()
                .then(la.im.partial_cmp(&lb.im).unwrap())
        });
        let mut eigenvalues = Vec::with_capacity(n);
        let mut eigenvectors = Vec::with_capacity(n);
        let mut pairs = Vec::with_capacity(groups.len());
        for (i, j) in groups {
            let k = eigenvalues.len();
            let lam = eig.values[i];
            let v = eig.vectors[i].clone();
            if i == j {
                eigenvalues.push(Complex::new(lam.re, T::zero()));
                eigenvectors.push(v);
                pairs.push((k, k));
            } else {
                eigenvalues.push(lam);
                eigenvalues.push(lam.conj());
                eigenvectors.push(v.clone());
                eigenvectors.push(v.map(|z| z.conj()));
                pairs.push((k, k + 1));
            }
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
            pairs,
            non_semisimple: eig.vector_condition > 1e8,
            max_residual: eig.max_residual,
        })
    }
}

/// First-order matrix and spectrum of the linearization at the origin.
pub fn linearize<T: Real>(sys: &MechSystem<T>) -> Result<(DMatrix<T>, Spectrum<T>)> {
    let a = sys.first_order_matrix();
    let spec = Spectrum::from_matrix(&a)?;
    Ok((a, spec))
}

/// Time series sampled on a uniform grid; one row of `states` per time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Real> {
    times: Vec<T>,
    states: DMatrix<T>,
    labels: Vec<String>,
    dt: T,
}

impl<T: Real> Trajectory<T> {
    pub fn new(times: Vec<T>, states: DMatrix<T>, labels: Vec<String>) -> Result<Self> {
        if times.len() < 2 {
            return invalid("a trajectory needs at least two samples");
        }
        if states.nrows() != times.len() {
            return invalid(format!(
                "{} state rows for {} times",
                states.nrows(),
                times.len()
            ));
        }
        if labels.len() != states.ncols() {
            return invalid(format!(
                "{} labels for {} channels",
                labels.len(),
                states.ncols()
            ));
        }
        let dt = times[1] - times[0];
        if !(dt > T::zero()) {
            return invalid("times must be strictly increasing");
        }
        let tol = dt * lit::<T>(1e-9).max(T::default_epsilon() * lit(1e3));
        // spacing is checked against accumulated round-off of t0 + i·dt as well
        let slack = T::default_epsilon() * lit::<T>(8.0) * times[times.len() - 1].abs();
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > tol + slack {
                return invalid("times are not uniformly spaced");
            }
        }
        if states.iter().any(|x| !x.is_finite()) {
            return invalid("trajectory contains non-finite values");
        }
        Ok(Self {
            times,
            states,
            labels,
            dt,
        })
    }

    /// Trajectory with times `t0 + i·dt`.
    pub fn uniform(t0: T, dt: T, states: DMatrix<T>, labels: Vec<String>) -> Result<Self> {
        let times = (0..states.nrows())
            .map(|i| t0 + dt * lit(i as f64))
            .collect();
        Self::new(times, states, labels)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn states(&self) -> &DMatrix<T> {
        &self.states
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> DVector<T> {
        self.states.row(i).transpose()
    }

    pub fn channel(&self, j: usize) -> Vec<T> {
        self.states.column(j).iter().copied().collect()
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start + 2 > end {
            return invalid("slice must keep at least two samples");
        }
        Self::new(
            self.times[start..end].to_vec(),
            self.states.rows(start, end - start).into_owned(),
            self.labels.clone(),
        )
    }

    /// Keeps only the listed channels.
    pub fn select(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&c) = channels.iter().find(|&&c| c >= self.dim()) {
            return invalid(format!(
                "channel {c} out of range (dimension {})",
                self.dim()
            ));
        }
        let states = self.states.select_columns(channels);
        let labels = channels.iter().map(|&c| self.labels[c].clone()).collect();
        Self::new(self.times.clone(), states, labels)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return invalid("label count does not match dimension");
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn map_states(&self, states: DMatrix<T>, labels: Vec<String>) -> Result<Self> {
        Self::new(self.times.clone(), states, labels)
    }
}

/// Spatially fixed harmonic load `shape · cos(Ω t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicForcing<T: Real> {
    pub shape: DVector<T>,
    pub omega: T,
}

impl<T: Real> HarmonicForcing<T> {
    pub fn at(&self, t: T) -> DVector<T> {
        &self.shape * (self.omega * t).cos()
    }
}

pub fn state_labels(n: usize) -> Vec<String> {
    (1..=n)
        .map(|i| format!("q{i}"))
        .chain((1..=n).map(|i| format!("v{i}")))
        .collect()
}

/// Integrates the system from `x0` over `t_span` and samples every `dt_out`.
pub fn integrate<T: Real>(
    sys: &MechSystem<T>,
    x0: &DVector<T>,
    t_span: (T, T),
    dt_out: T,
    forcing: Option<&HarmonicForcing<T>>,
    opts: OdeOptions<T>,
) -> Result<Trajectory<T>> {
    let n = sys.dof_count();
    if x0.len() != 2 * n {
        return invalid(format!(
            "initial state has {} entries, expected {}",
            x0.len(),
            2 * n
        ));
    }
    if !(dt_out > T::zero()) {
        return invalid("output step must be positive");
    }
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return invalid("time span is degenerate");
    }
    if let Some(f) = forcing {
        if f.shape.len() != n {
            return invalid("forcing shape does not match dof count");
        }
    }
    let count = to_f64((t1 - t0) / dt_out).mul_add(1.0, 1e-9).floor() as usize + 1;
    let times: Vec<T> = (0..count).map(|i| t0 + dt_out * lit(i as f64)).collect();
    let mut fbuf = vec![T::zero(); n];
    let rhs = |t: T, x: &[T], dx: &mut [T]| match forcing {
        Some(fc) => {
            let c = (fc.omega * t).cos();
            for i in 0..n {
                fbuf[i] = fc.shape[i] * c;
            }
            sys.rhs(x, Some(&fbuf), dx);
        }
        None => sys.rhs(x, None, dx),
    };
    let states = integrate_at(rhs, t0, x0.as_slice(), &times, opts)?;
    let mat = DMatrix::from_fn(count, 2 * n, |i, j| states[i][j]);
    Trajectory::new(times, mat, state_labels(n))
}

/// Real initial condition `Σ_j Re(a_j v_j)` in the span of the listed modes.
pub fn slow_eigenspace_ic<T: Real>(
    spec: &Spectrum<T>,
    mode_set: &[usize],
    amplitudes: &[Complex<T>],
) -> Result<DVector<T>> {
    if mode_set.is_empty() {
        return invalid("mode set is empty");
    }
    if mode_set.len() != amplitudes.len() {
        return invalid("one modal amplitude per mode is required");
    }
    let dim = spec.eigenvectors[0].len();
    let mut x = DVector::zeros(dim);
    for (&j, &a) in mode_set.iter().zip(amplitudes) {
        if j >= spec.mode_count() {
            return invalid(format!("mode {j} out of range"));
        }
        let (_, v) = spec.mode(j);
        for i in 0..dim {
            x[i] += (v[i] * a).re;
        }
    }
    Ok(x)
}
