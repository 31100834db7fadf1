//! Physical predictions from fitted models: backbone curves, amplitude maps,
//! trajectory prediction and the normalized mean trajectory error.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::manifold::ManifoldModel;
use crate::normalform::{evolve_normal_form, NormalFormModel, PolarModel};
use crate::scalar::{cabs, cis, from_usize, lit, polar, to_f64, Real};
use crate::system::Trajectory;

/// Scalar functional `g` of an observable vector (taken relative to the equilibrium).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    Coordinate {
        index: usize,
    },
    Norm,
    Linear {
        weights: Vec<f64>,
    },
    /// `yᵀ Q y` with `Q` given by rows.
    Quadratic {
        matrix: Vec<Vec<f64>>,
    },
}

impl Default for Observable {
    fn default() -> Self {
        Observable::Coordinate { index: 0 }
    }
}

impl Observable {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Observable::Coordinate { index } if *index >= dim => invalid(format!(
                "observable coordinate {index} out of range for dimension {dim}"
            )),
            Observable::Linear { weights } if weights.len() != dim => invalid(format!(
                "{} observable weights for dimension {dim}",
                weights.len()
            )),
            Observable::Quadratic { matrix }
                if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) =>
            {
                invalid(format!("quadratic observable must be {dim} × {dim}"))
            }
            _ => Ok(()),
        }
    }

    pub fn eval<T: Real>(&self, y: &DVector<T>) -> T {
        match self {
            Observable::Coordinate { index } => y[*index],
            Observable::Norm => y.norm(),
            Observable::Linear { weights } => weights
                .iter()
                .zip(y.iter())
                .fold(T::zero(), |a, (&w, &v)| a + lit::<T>(w) * v),
            Observable::Quadratic { matrix } => {
                let mut s = T::zero();
                for (i, row) in matrix.iter().enumerate() {
                    for (j, &q) in row.iter().enumerate() {
                        s += lit::<T>(q) * y[i] * y[j];
                    }
                }
                s
            }
        }
    }
}

/// Single-mode backbone `{α(ρ), ω(ρ), amp(ρ)}` of one normal-form mode.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneCurve<T: Real> {
    pub mode: usize,
    pub rho: Vec<T>,
    pub alpha: Vec<T>,
    pub omega: Vec<T>,
    /// `100 · α/ω`.
    pub damping_ratio_pct: Vec<T>,
    /// Physical amplitude per `ρ`; equals `ρ` until [`BackboneCurve::with_amplitude`] is applied.
    pub amp: Vec<T>,
}

/// Evaluates `α_j, ω_j` (other modes at rest) on a uniform grid of `points` values in `[0, rho_max]`.
pub fn backbone<T: Real>(
    pm: &PolarModel<T>,
    mode: usize,
    rho_max: T,
    points: usize,
) -> Result<BackboneCurve<T>> {
    if mode >= pm.modes() {
        return invalid(format!("mode {mode} out of range"));
    }
    if !(rho_max > T::zero()) || points < 2 {
        return invalid("backbone needs rho_max > 0 and at least two grid points");
    }
    let mut c = BackboneCurve {
        mode,
        rho: Vec::with_capacity(points),
        alpha: Vec::with_capacity(points),
        omega: Vec::with_capacity(points),
        damping_ratio_pct: Vec::with_capacity(points),
        amp: Vec::with_capacity(points),
    };
    for i in 0..points {
        let rho = rho_max * from_usize::<T>(i) / from_usize::<T>(points - 1);
        let (a, w) = pm.single_mode(mode, rho);
        if !(w > T::zero()) {
            let last = c.rho.last().copied().unwrap_or(T::zero());
            return Err(Error::ValidityRange {
                rho_max: to_f64(last),
            });
        }
        c.rho.push(rho);
        c.alpha.push(a);
        c.omega.push(w);
        c.damping_ratio_pct.push(lit::<T>(100.0) * a / w);
        c.amp.push(rho);
    }
    Ok(c)
}

impl<T: Real> BackboneCurve<T> {
    /// Replaces `amp` by the [`amplitude_map`] of the given model and observable.
    pub fn with_amplitude(
        mut self,
        mani: &ManifoldModel<T>,
        nf: &NormalFormModel<T>,
        g: &Observable,
    ) -> Result<Self> {
        g.validate(mani.ambient_dim())?;
        let mode = self.mode;
        self.amp = self
            .rho
            .par_iter()
            .map(|&r| amplitude_map(mani, nf, g, mode, r))
            .collect();
        Ok(self)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_backbone(std::io::BufWriter::new(std::fs::File::create(path)?), self)
    }
}

const THETA_GRID: usize = 256;
const GOLDEN_TOL: f64 = 1e-10;

/// Maximizes `f` over one period: grid search, then golden section around the best cell.
pub fn max_over_phase<T: Real>(f: impl Fn(T) -> T) -> (T, T) {
    let two_pi = T::two_pi();
    let dt = two_pi / from_usize::<T>(THETA_GRID);
    let (mut best_i, mut best) = (0, f(T::zero()));
    for i in 1..THETA_GRID {
        let v = f(dt * from_usize::<T>(i));
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let center = dt * from_usize::<T>(best_i);
    let (mut a, mut b) = (center - dt, center + dt);
    let g = lit::<T>((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > lit(GOLDEN_TOL) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < T::default_epsilon() * lit(16.0) {
            break;
        }
    }
    let th = (a + b) / lit(2.0);
    let v = f(th);
    if v >= best {
        (th, v)
    } else {
        (center, best)
    }
}

/// Observable vector relative to the equilibrium at normal-form state `z`.
pub fn observable_at<T: Real>(
    mani: &ManifoldModel<T>,
    nf: &NormalFormModel<T>,
    z: &[Complex<T>],
) -> DVector<T> {
    mani.lift(&nf.to_xi(z)) - mani.equilibrium()
}

/// `amp(ρ) = max_θ |g(y(ρe^{iθ}))|` with all other modes at rest.
pub fn amplitude_map<T: Real>(
    mani: &ManifoldModel<T>,
    nf: &NormalFormModel<T>,
    g: &Observable,
    mode: usize,
    rho: T,
) -> T {
    if rho == T::zero() {
        return T::zero();
    }
    let zero = Complex::new(T::zero(), T::zero());
    let f = |th: T| {
        let mut z = vec![zero; nf.modes()];
        z[mode] = polar(rho, th);
        g.eval(&observable_at(mani, nf, &z)).abs()
    };
    max_over_phase(f).1
}

/// Amplitude of the periodic response `z_j = w_j e^{ic_jφ}` of a forced
/// normal form in co-rotating coordinates `w`, maximized over one full period.
pub fn response_amplitude<T: Real>(
    mani: &ManifoldModel<T>,
    nf: &NormalFormModel<T>,
    g: &Observable,
    w: &[Complex<T>],
    rotation: &[f64],
) -> T {
    // smallest q making every c_j q an integer, so θ = φ/q spans one period
    let q = (1..=12)
        .find(|&q| {
            rotation
                .iter()
                .all(|c| (c * q as f64 - (c * q as f64).round()).abs() < 1e-9)
        })
        .unwrap_or(1) as f64;
    let f = |th: T| {
        let z: Vec<Complex<T>> = w
            .iter()
            .zip(rotation)
            .map(|(&wj, &c)| wj * cis(th * lit::<T>((c * q).round())))
            .collect();
        g.eval(&observable_at(mani, nf, &z)).abs()
    };
    max_over_phase(f).1
}

#[derive(Clone, Debug)]
pub struct Prediction<T: Real> {
    pub trajectory: Trajectory<T>,
    pub warnings: Vec<String>,
}

/// Predicts the trajectory from `y0`: project onto the manifold, map to
/// normal-form coordinates, integrate, map back and lift.
pub fn predict_trajectory<T: Real>(
    mani: &ManifoldModel<T>,
    nf: &NormalFormModel<T>,
    y0: &DVector<T>,
    times: &[T],
) -> Result<Prediction<T>> {
    if y0.len() != mani.ambient_dim() {
        return invalid(format!(
            "initial state has {} entries, manifold lives in {}",
            y0.len(),
            mani.ambient_dim()
        ));
    }
    if nf.modal_change().nrows() != mani.dim() {
        return invalid("normal form and manifold dimensions differ");
    }
    let mut warnings = Vec::new();
    let xi0 = mani.project(y0);
    let off = (y0 - mani.lift(&xi0)).norm();
    let size = (y0 - mani.equilibrium()).norm();
    if off > lit::<T>(0.1) * size {
        warnings.push(format!(
            "initial state is {:.3}% of its size away from the manifold",
            100.0 * to_f64(off / size)
        ));
    }
    let z0 = nf.to_z(&xi0);
    for (j, z) in z0.iter().enumerate() {
        let r = to_f64(cabs(*z));
        if let Some(&rmax) = nf.training_radius.get(j) {
            if rmax > 0.0 && r > rmax {
                warnings.push(format!(
                    "mode {} starts at ρ = {r:.4e}, beyond the training radius {rmax:.4e}",
                    j + 1
                ));
            }
        }
    }
    let pm = nf.polar();
    let tr = evolve_normal_form(&pm, &z0, times, None)?;
    let p = mani.ambient_dim();
    let mut states = DMatrix::zeros(times.len(), p);
    for (i, z) in tr.z.iter().enumerate() {
        let y = mani.lift(&nf.to_xi(z));
        states.row_mut(i).copy_from(&y.transpose());
    }
    let labels = if mani.labels().len() == p {
        mani.labels().to_vec()
    } else {
        (1..=p).map(|i| format!("y{i}")).collect()
    };
    Ok(Prediction {
        trajectory: Trajectory::new(times.to_vec(), states, labels)?,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nmte {
    pub value: f64,
    /// Set when the prediction was interpolated onto the reference grid.
    pub resampled: bool,
}

/// Catmull–Rom interpolation of a uniformly sampled trajectory at `t`.
fn interpolate<T: Real>(tr: &Trajectory<T>, t: T) -> DVector<T> {
    let n = tr.len();
    let s = (t - tr.times()[0]) / tr.dt();
    let s = s.max(T::zero()).min(from_usize::<T>(n - 1));
    let i = to_f64(s).floor() as usize;
    let i = i.min(n.saturating_sub(2));
    let u = s - from_usize::<T>(i);
    let at = |k: isize| tr.sample(k.clamp(0, n as isize - 1) as usize);
    let (p0, p1, p2, p3) = (
        at(i as isize - 1),
        at(i as isize),
        at(i as isize + 1),
        at(i as isize + 2),
    );
    let half = lit::<T>(0.5);
    let u2 = u * u;
    let u3 = u2 * u;
    let two = lit::<T>(2.0);
    let three = lit::<T>(3.0);
    let four = lit::<T>(4.0);
    let five = lit::<T>(5.0);
    (&p1 * two
        + (&p2 - &p0) * u
        + (&p0 * two - &p1 * five + &p2 * four - &p3) * u2
        + (&p1 * three - &p0 - &p2 * three + &p3) * u3)
        * half
}

/// `(1/(P‖ȳ‖)) Σ_j ‖y_j − ŷ_j‖`, with `ȳ` the reference sample of largest norm
/// unless a normalization vector is given.
pub fn nmte<T: Real>(
    reference: &Trajectory<T>,
    predicted: &Trajectory<T>,
    normalization: Option<&DVector<T>>,
) -> Result<Nmte> {
    if reference.dim() != predicted.dim() {
        return invalid("trajectories differ in dimension");
    }
    if reference.is_empty() || predicted.is_empty() {
        return invalid("empty trajectory");
    }
    let norm = match normalization {
        Some(v) => {
            if v.len() != reference.dim() {
                return invalid("normalization vector has the wrong length");
            }
            v.norm()
        }
        None => (0..reference.len())
            .map(|i| reference.states().row(i).norm())
            .fold(T::zero(), |a, b| a.max(b)),
    };
    if !(norm > T::zero()) {
        return invalid("normalization has zero norm");
    }
    let same_grid = reference.len() == predicted.len()
        && reference
            .times()
            .iter()
            .zip(predicted.times())
            .all(|(&a, &b)| {
                (a - b).abs() <= T::default_epsilon() * lit(64.0) * a.abs().max(T::one())
            });
    let mut sum = T::zero();
    for i in 0..reference.len() {
        let y = reference.states().row(i).transpose();
        let yhat = if same_grid {
            predicted.states().row(i).transpose()
        } else {
            interpolate(predicted, reference.times()[i])
        };
        sum += (y - yhat).norm();
    }
    Ok(Nmte {
        value: to_f64(sum / (from_usize::<T>(reference.len()) * norm)),
        resampled: !same_grid,
    })
}

/// Backbone CSV with columns `rho, alpha, omega, damping_ratio_pct, amp`.
pub fn write_backbone<W: Write, T: Real>(out: W, c: &BackboneCurve<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "alpha", "omega", "damping_ratio_pct", "amp"])?;
    for i in 0..c.rho.len() {
        w.write_record(
            [
                c.rho[i],
                c.alpha[i],
                c.omega[i],
                c.damping_ratio_pct[i],
                c.amp[i],
            ]
            .iter()
            .map(|&v| format!("{:.16e}", to_f64(v))),
        )?;
    }
    w.flush()?;
    Ok(())
}
