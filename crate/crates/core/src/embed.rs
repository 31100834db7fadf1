//! Delay embedding of measured signals, transient trimming and a spectral
//! peak count used to pick the manifold dimension.

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::{lit, to_f64, Real};
use crate::system::{Spectrum, Trajectory};

/// How observable channels are turned into points of the embedding space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Number of delayed copies `p` per channel (1 means no delays).
    pub delay_dimension: usize,
    /// Delay in samples.
    #[serde(default = "one")]
    pub delay_step: usize,
    /// Source columns; empty selects all.
    #[serde(default)]
    pub channels: Vec<usize>,
    /// Samples before this time are dropped.
    #[serde(default)]
    pub trim_time: f64,
}

fn one() -> usize {
    1
}

impl EmbeddingConfig {
    pub fn delays(delay_dimension: usize, delay_step: usize, channels: Vec<usize>) -> Self {
        Self {
            delay_dimension,
            delay_step,
            channels,
            trim_time: 0.0,
        }
    }

    /// Uses the raw channels as coordinates.
    pub fn identity(channels: Vec<usize>) -> Self {
        Self::delays(1, 1, channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay_dimension < 1 {
            return invalid("delay dimension must be at least 1");
        }
        if self.delay_step < 1 {
            return invalid("delay step must be at least 1");
        }
        if !(self.trim_time >= 0.0) {
            return invalid("trim time must be non-negative");
        }
        Ok(())
    }
}

/// Embedded trajectories sharing one sampling step and dimension.
#[derive(Clone, Debug)]
pub struct EmbeddedDataset<T: Real> {
    pub trajectories: Vec<Trajectory<T>>,
    pub config: EmbeddingConfig,
    pub dt: T,
}

impl<T: Real> EmbeddedDataset<T> {
    pub fn new(trajectories: Vec<Trajectory<T>>, config: EmbeddingConfig) -> Result<Self> {
        let first = match trajectories.first() {
            Some(t) => t,
            None => return invalid("dataset has no trajectories"),
        };
        let (dt, dim) = (first.dt(), first.dim());
        for t in &trajectories {
            if t.dim() != dim {
                return invalid("trajectories differ in dimension");
            }
            if (t.dt() - dt).abs() > dt * lit(1e-9) {
                return invalid("trajectories differ in sampling step");
            }
        }
        Ok(Self {
            trajectories,
            config,
            dt,
        })
    }

    pub fn dim(&self) -> usize {
        self.trajectories[0].dim()
    }

    pub fn sample_count(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }
}

/// Drops samples with `t < trim_time` (time origin unchanged).
pub fn trim_transient<T: Real>(traj: &Trajectory<T>, trim_time: T) -> Result<Trajectory<T>> {
    if !(trim_time >= T::zero()) {
        return invalid("trim time must be non-negative");
    }
    let start = traj.times().iter().position(|&t| t >= trim_time);
    match start {
        Some(s) if traj.len() - s >= 2 => traj.slice(s, traj.len()),
        _ => invalid(format!(
            "trimming at t = {} leaves fewer than two samples (final time {})",
            to_f64(trim_time),
            to_f64(traj.times()[traj.len() - 1])
        )),
    }
}

/// Trim time `k / |Re λ_{m+1}|`: drops the decay of the first mode outside
/// the `m` slowest ones. `None` if the spectrum has no such mode.
pub fn default_trim_time<T: Real>(spec: &Spectrum<T>, m: usize, k: T) -> Option<T> {
    if m >= spec.mode_count() {
        return None;
    }
    let (lam, _) = spec.mode(m);
    if lam.re >= T::zero() {
        return None;
    }
    Some(k / lam.re.abs())
}

/// Delay embedding of the selected channels (after trimming).
///
/// Point `i` holds `s(tᵢ), s(tᵢ+Δ), …, s(tᵢ+(p−1)Δ)` for each channel in turn,
/// with `Δ = delay_step·dt`.
pub fn delay_embed<T: Real>(traj: &Trajectory<T>, cfg: &EmbeddingConfig) -> Result<Trajectory<T>> {
    cfg.validate()?;
    let trimmed;
    let src = if cfg.trim_time > 0.0 {
        trimmed = trim_transient(traj, lit(cfg.trim_time))?;
        &trimmed
    } else {
        traj
    };
    let channels: Vec<usize> = if cfg.channels.is_empty() {
        (0..src.dim()).collect()
    } else {
        cfg.channels.clone()
    };
    if let Some(&c) = channels.iter().find(|&&c| c >= src.dim()) {
        return invalid(format!(
            "channel {c} out of range (trajectory has {} channels)",
            src.dim()
        ));
    }
    let p = cfg.delay_dimension;
    let span = (p - 1) * cfg.delay_step;
    let needed = p * cfg.delay_step;
    if src.len() < needed || src.len() <= span + 1 {
        return invalid(format!(
            "delay embedding needs at least {} samples, got {}",
            needed.max(span + 2),
            src.len()
        ));
    }
    let n_out = src.len() - span;
    let dim = channels.len() * p;
    let states = DMatrix::from_fn(n_out, dim, |i, col| {
        let (c, k) = (channels[col / p], col % p);
        src.states()[(i + k * cfg.delay_step, c)]
    });
    let labels = channels
        .iter()
        .flat_map(|&c| {
            let base = src.labels()[c].clone();
            (0..p).map(move |k| {
                if p == 1 {
                    base.clone()
                } else {
                    format!("{base}@{k}")
                }
            })
        })
        .collect();
    Trajectory::new(src.times()[..n_out].to_vec(), states, labels)
}

/// Embeds every trajectory with the same configuration.
pub fn embed_all<T: Real>(
    trajs: &[Trajectory<T>],
    cfg: &EmbeddingConfig,
) -> Result<EmbeddedDataset<T>>
where
    T: Send + Sync,
{
    let out: Result<Vec<_>> = trajs.par_iter().map(|t| delay_embed(t, cfg)).collect();
    EmbeddedDataset::new(out?, cfg.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSufficiency {
    Sufficient,
    Insufficient,
}

/// Takens-type bound: `p > 4m` is sufficient for a `2m`-dimensional manifold.
pub fn check_embedding_dimension(m: usize, p: usize) -> EmbeddingSufficiency {
    if p > 4 * m {
        EmbeddingSufficiency::Sufficient
    } else {
        EmbeddingSufficiency::Insufficient
    }
}

/// Warns when the delay is within 1% of a multiple of half a period of any of
/// the given angular frequencies.
pub fn delay_warning(delay_time: f64, omegas: &[f64]) -> Option<String> {
    for &w in omegas {
        if w <= 0.0 {
            continue;
        }
        let half = std::f64::consts::PI / w;
        // whole multiples of half a period make delayed copies collinear too
        let ratio = delay_time / half;
        let nearest = ratio.round().max(1.0);
        if (ratio - nearest).abs() < 0.01 * nearest {
            return Some(format!(
                "delay {delay_time:.6} s is within 1% of a multiple of the half period {half:.6} s (ω = {w:.6})"
            ));
        }
    }
    None
}

/// Welch power spectrum (4-term Blackman–Harris window, 50% overlap).
/// Returns `(angular frequencies, power)`.
pub fn welch_psd(signal: &[f64], dt: f64, segment: usize) -> (Vec<f64>, Vec<f64>) {
    let seg = segment.min(signal.len()).max(2);
    let hop = (seg / 2).max(1);
    // sidelobes stay below -90 dB, far under any sensible peak threshold
    let window: Vec<f64> = (0..seg)
        .map(|i| {
            let x = 2.0 * std::f64::consts::PI * i as f64 / seg as f64;
            0.35875 - 0.48829 * x.cos() + 0.14128 * (2.0 * x).cos() - 0.01168 * (3.0 * x).cos()
        })
        .collect();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(seg);
    let nbins = seg / 2 + 1;
    let mut power = vec![0.0; nbins];
    let mut count = 0usize;
    let mut start = 0;
    let mut buf = vec![Complex64::new(0.0, 0.0); seg];
    while start + seg <= signal.len() {
        let chunk = &signal[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for i in 0..seg {
            buf[i] = Complex64::new((chunk[i] - mean) * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buf[k].norm_sqr();
        }
        count += 1;
        start += hop;
    }
    if count > 0 {
        for p in &mut power {
            *p /= count as f64;
        }
    }
    let freqs = (0..nbins)
        .map(|k| 2.0 * std::f64::consts::PI * k as f64 / (seg as f64 * dt))
        .collect();
    (freqs, power)
}

/// Number of local maxima of the Welch spectrum of one channel lying within
/// `threshold_db` of the largest one.
pub fn count_dominant_frequencies<T: Real>(
    traj: &Trajectory<T>,
    channel: usize,
    threshold_db: f64,
) -> Result<usize> {
    if channel >= traj.dim() {
        return invalid(format!("channel {channel} out of range"));
    }
    if traj.len() < 256 {
        return invalid(format!(
            "peak counting needs at least 256 samples, got {}",
            traj.len()
        ));
    }
    let signal: Vec<f64> = traj.channel(channel).into_iter().map(to_f64).collect();
    Ok(count_peaks(&signal, to_f64(traj.dt()), threshold_db))
}

pub(crate) fn count_peaks(signal: &[f64], dt: f64, threshold_db: f64) -> usize {
    let seg = welch_segment(signal.len());
    let (_, power) = welch_psd(signal, dt, seg);
    let max = power.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return 0;
    }
    let floor = max * 10f64.powf(-threshold_db / 10.0);
    (1..power.len() - 1)
        .filter(|&k| power[k] > power[k - 1] && power[k] >= power[k + 1] && power[k] >= floor)
        .count()
}

fn welch_segment(n: usize) -> usize {
    // eight half-overlapping segments, rounded down to a power of two
    let target = (2 * n / 9).max(256).min(n);
    let mut seg = 1;
    while seg * 2 <= target {
        seg *= 2;
    }
    seg
}

/// Short-time power spectra on half-overlapping windows.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub times: Vec<f64>,
    pub omegas: Vec<f64>,
    /// `power[i][k]`: window `i`, frequency bin `k`.
    pub power: Vec<Vec<f64>>,
}

pub fn spectrogram<T: Real>(
    traj: &Trajectory<T>,
    channel: usize,
    window: usize,
) -> Result<Spectrogram> {
    if channel >= traj.dim() {
        return invalid(format!("channel {channel} out of range"));
    }
    if window < 4 || window > traj.len() {
        return invalid("spectrogram window must fit inside the trajectory");
    }
    let signal: Vec<f64> = traj.channel(channel).into_iter().map(to_f64).collect();
    let dt = to_f64(traj.dt());
    let t0 = to_f64(traj.times()[0]);
    let mut out = Spectrogram {
        times: Vec::new(),
        omegas: Vec::new(),
        power: Vec::new(),
    };
    let mut start = 0;
    while start + window <= signal.len() {
        let (w, p) = welch_psd(&signal[start..start + window], dt, window);
        out.omegas = w;
        out.power.push(p);
        out.times
            .push(t0 + (start as f64 + window as f64 / 2.0) * dt);
        start += window / 2;
    }
    Ok(out)
}

pub fn write_spectrogram_csv(path: impl AsRef<std::path::Path>, sg: &Spectrogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "omega", "power"])?;
    for (i, t) in sg.times.iter().enumerate() {
        for (k, om) in sg.omegas.iter().enumerate() {
            w.write_record([
                format!("{t:.10e}"),
                format!("{om:.10e}"),
                format!("{:.10e}", sg.power[i][k]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signal(f: impl Fn(f64) -> f64, n: usize, dt: f64) -> Trajectory<f64> {
        let states = DMatrix::from_fn(n, 1, |i, _| f(i as f64 * dt));
        Trajectory::uniform(0.0, dt, states, vec!["s".into()]).unwrap()
    }

    #[test]
    fn constant_signal_embeds_to_constant_points() {
        let t = signal(|_| 2.5, 20, 0.1);
        let e = delay_embed(&t, &EmbeddingConfig::delays(5, 2, vec![])).unwrap();
        assert_eq!(e.len(), 20 - 8);
        assert!(e.states().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn too_short_signal_reports_minimum() {
        let t = signal(|x| x, 6, 1.0);
        let err = delay_embed(&t, &EmbeddingConfig::delays(4, 2, vec![])).unwrap_err();
        assert!(err.to_string().contains("at least 8"));
    }

    #[test]
    fn sufficiency_rule() {
        assert_eq!(
            check_embedding_dimension(1, 5),
            EmbeddingSufficiency::Sufficient
        );
        assert_eq!(
            check_embedding_dimension(1, 4),
            EmbeddingSufficiency::Insufficient
        );
        assert_eq!(
            check_embedding_dimension(2, 9),
            EmbeddingSufficiency::Sufficient
        );
    }

    #[test]
    fn trimming() {
        let t = signal(|x| x, 10, 1.0);
        assert_eq!(trim_transient(&t, 0.0).unwrap(), t);
        let tr = trim_transient(&t, 3.5).unwrap();
        assert_eq!(tr.times()[0], 4.0);
        assert!(trim_transient(&t, 9.5).is_err());
    }

    #[test]
    fn peak_count_of_damped_sinusoid() {
        let t = signal(|x| (-0.01 * x).exp() * (1.3 * x).sin(), 4096, 0.1);
        assert_eq!(count_dominant_frequencies(&t, 0, 30.0).unwrap(), 1);
        let z = signal(|_| 0.0, 512, 0.1);
        assert_eq!(count_dominant_frequencies(&z, 0, 30.0).unwrap(), 0);
    }

    #[test]
    fn delay_warning_near_half_period() {
        let w = 1.0;
        assert!(delay_warning(std::f64::consts::PI * 1.005, &[w]).is_some());
        assert!(delay_warning(1.0, &[w]).is_none());
    }
}
