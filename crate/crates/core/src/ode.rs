//! Explicit Runge–Kutta integrators: adaptive Dormand–Prince 5(4) and a
//! fixed-step classical RK4 used as a reference in convergence checks.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Tolerances and limits for the adaptive integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdeOptions<T> {
    pub rtol: T,
    pub atol: T,
    /// First trial step; chosen automatically when `None`.
    pub h_init: Option<T>,
    /// Largest step allowed (defaults to unbounded).
    pub h_max: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        Self {
            rtol: lit(1e-9),
            atol: lit(1e-12),
            h_init: None,
            h_max: None,
            max_steps: 50_000_000,
        }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// difference between the 5th- and 4th-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Stateful Dormand–Prince 5(4) stepper with first-same-as-last reuse.
///
/// `advance_to` lands exactly on the requested time by shortening the last step.
pub struct Dopri5<T: Real, F> {
    f: F,
    t: T,
    x: Vec<T>,
    h: Option<T>,
    k: [Vec<T>; 7],
    stage: Vec<T>,
    opts: OdeOptions<T>,
    a: [[T; 6]; 7],
    c: [T; 7],
    e: [T; 7],
    steps: usize,
    rejected: usize,
}

impl<T: Real, F> Dopri5<T, F>
where
    F: FnMut(T, &[T], &mut [T]),
{
    pub fn new(mut f: F, t0: T, x0: &[T], opts: OdeOptions<T>) -> Self {
        let n = x0.len();
        let mut k: [Vec<T>; 7] = std::array::from_fn(|_| vec![T::zero(); n]);
        f(t0, x0, &mut k[0]);
        let a = A.map(|row| row.map(lit));
        Self {
            f,
            t: t0,
            x: x0.to_vec(),
            h: opts.h_init,
            k,
            stage: vec![T::zero(); n],
            opts,
            a,
            c: C.map(lit),
            e: E.map(lit),
            steps: 0,
            rejected: 0,
        }
    }

    pub fn time(&self) -> T {
        self.t
    }

    pub fn state(&self) -> &[T] {
        &self.x
    }

    pub fn steps(&self) -> (usize, usize) {
        (self.steps, self.rejected)
    }

    /// Replaces the current state (the step-size guess is kept).
    pub fn reset(&mut self, t: T, x: &[T]) {
        self.t = t;
        self.x.copy_from_slice(x);
        (self.f)(t, &self.x, &mut self.k[0]);
    }

    fn initial_step(&self, span: T) -> T {
        let n = self.x.len().max(1);
        let mut d0 = T::zero();
        let mut d1 = T::zero();
        for i in 0..self.x.len() {
            let sc = self.opts.atol + self.opts.rtol * self.x[i].abs();
            d0 += (self.x[i] / sc).powi(2);
            d1 += (self.k[0][i] / sc).powi(2);
        }
        let nn: T = lit(n as f64);
        let (d0, d1) = ((d0 / nn).sqrt(), (d1 / nn).sqrt());
        let h = if d0 < lit(1e-5) || d1 < lit(1e-5) {
            lit(1e-6)
        } else {
            lit::<T>(0.01) * d0 / d1
        };
        h.min(span.abs())
    }

    pub fn advance_to(&mut self, t_end: T) -> Result<()> {
        let n = self.x.len();
        let eps = T::default_epsilon();
        if t_end <= self.t {
            return Ok(());
        }
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(t_end - self.t),
        };
        if let Some(hm) = self.opts.h_max {
            h = h.min(hm);
        }
        let mut xnew = vec![T::zero(); n];
        loop {
            let remaining = t_end - self.t;
            if remaining <= eps * lit::<T>(4.0) * self.t.abs().max(T::one()) {
                self.t = t_end;
                return Ok(());
            }
            let h_min = eps * lit::<T>(16.0) * self.t.abs().max(T::one());
            if h < h_min || !h.is_finite() {
                return Err(Error::IntegrationFailure {
                    t_last: to_f64(self.t),
                    reason: "step size underflow".into(),
                });
            }
            if self.steps + self.rejected >= self.opts.max_steps {
                return Err(Error::IntegrationFailure {
                    t_last: to_f64(self.t),
                    reason: format!("step budget of {} exhausted", self.opts.max_steps),
                });
            }
            let last = h >= remaining;
            let hs = if last { remaining } else { h };

            for s in 1..7 {
                for i in 0..n {
                    let mut acc = self.x[i];
                    for j in 0..s {
                        let aij = self.a[s][j];
                        if aij != T::zero() {
                            acc += hs * aij * self.k[j][i];
                        }
                    }
                    self.stage[i] = acc;
                }
                let ts = self.t + self.c[s] * hs;
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                (self.f)(ts, &self.stage, &mut tail[0]);
                if s == 6 {
                    xnew.copy_from_slice(&self.stage);
                }
            }
            // error estimate (7th stage is f at the new point)
            let mut err = T::zero();
            for i in 0..n {
                let mut ei = T::zero();
                for s in 0..7 {
                    ei += self.e[s] * self.k[s][i];
                }
                ei *= hs;
                let sc = self.opts.atol + self.opts.rtol * self.x[i].abs().max(xnew[i].abs());
                err += (ei / sc).powi(2);
            }
            let err = (err / lit(n.max(1) as f64)).sqrt();
            if !err.is_finite() || xnew.iter().any(|v| !v.is_finite()) {
                self.rejected += 1;
                h = hs * lit(0.1);
                continue;
            }
            if err <= T::one() {
                self.steps += 1;
                self.t = if last { t_end } else { self.t + hs };
                self.x.copy_from_slice(&xnew);
                let k7 = std::mem::take(&mut self.k[6]);
                self.k[6] = std::mem::replace(&mut self.k[0], k7);
                let fac = if err == T::zero() {
                    lit(5.0)
                } else {
                    (lit::<T>(0.9) * err.powf(lit(-0.2)))
                        .min(lit(5.0))
                        .max(lit(0.2))
                };
                // a step shortened to hit t_end neither shrinks nor inflates the next guess
                h = if last { h.max(hs * fac) } else { hs * fac };
                if let Some(hm) = self.opts.h_max {
                    h = h.min(hm);
                }
                self.h = Some(h);
                if last {
                    return Ok(());
                }
            } else {
                self.rejected += 1;
                let fac = (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.2));
                h = hs * fac;
            }
        }
    }
}

/// Integrates from `t0` and returns the state at each time of `times`
/// (non-decreasing, all ≥ `t0`).
pub fn integrate_at<T: Real, F>(
    f: F,
    t0: T,
    x0: &[T],
    times: &[T],
    opts: OdeOptions<T>,
) -> Result<Vec<Vec<T>>>
where
    F: FnMut(T, &[T], &mut [T]),
{
    let mut solver = Dopri5::new(f, t0, x0, opts);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < t0 {
            return Err(Error::InvalidArgument(
                "output time precedes initial time".into(),
            ));
        }
        solver.advance_to(t)?;
        out.push(solver.state().to_vec());
    }
    Ok(out)
}

/// Classical fixed-step RK4; returns the states after every step (including the initial one).
pub fn rk4_fixed<T: Real, F>(mut f: F, t0: T, x0: &[T], h: T, steps: usize) -> Vec<Vec<T>>
where
    F: FnMut(T, &[T], &mut [T]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x.clone());
    let (mut k1, mut k2, mut k3, mut k4) = (
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
        vec![T::zero(); n],
    );
    let mut tmp = vec![T::zero(); n];
    let half: T = lit(0.5);
    let sixth: T = lit(1.0 / 6.0);
    for s in 0..steps {
        let t = t0 + h * lit(s as f64);
        f(t, &x, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + half * h * k1[i];
        }
        f(t + half * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + half * h * k2[i];
        }
        f(t + half * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        f(t + h, &tmp, &mut k4);
        for i in 0..n {
            x[i] += h * sixth * (k1[i] + lit::<T>(2.0) * (k2[i] + k3[i]) + k4[i]);
        }
        out.push(x.clone());
    }
    out
}
