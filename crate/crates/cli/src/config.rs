//! Pipeline configuration file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssmrom::analysis::Observable;
use ssmrom::embed::EmbeddingConfig;
use ssmrom::forcing::CalibrationPoint;
use ssmrom::io::{ForceTermDoc, MechSystemDoc};
use ssmrom::manifold::EquilibriumChoice;
use ssmrom::normalform::NormalFormOptions;
use ssmrom::system::{benchmark_chain, build_oscillator_chain, ForceTerm, MechSystem};
use ssmrom::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    /// Full-order model used to simulate training data and as forced-response oracle.
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub simulations: Vec<SimulationSpec>,
    /// Measured trajectories (CSV), used when no simulations are given.
    #[serde(default)]
    pub data: Vec<PathBuf>,
    pub embedding: EmbeddingConfig,
    pub ssm_dim: usize,
    pub manifold_order: u32,
    #[serde(default = "three")]
    pub dynamics_order: u32,
    #[serde(default = "default_resonance_tol")]
    pub resonance_tolerance: f64,
    #[serde(default)]
    pub equilibrium: EquilibriumChoice,
    #[serde(default)]
    pub manifold_refine: bool,
    #[serde(default)]
    pub normal_form: NormalFormOptions,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Scalar observable (on the embedding space) used for amplitudes.
    #[serde(default)]
    pub observable: Observable,
    #[serde(default)]
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub frc: Vec<FrcRun>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn three() -> u32 {
    3
}

fn default_resonance_tol() -> f64 {
    0.05
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    /// Five-mass chain with the cubic/quadratic force on the first mass.
    BenchmarkChain,
    OscillatorChain {
        n_masses: usize,
        first_mass: f64,
        other_mass: f64,
        mass_prop: f64,
        stiff_prop: f64,
        #[serde(default)]
        nonlinear_terms: Vec<ForceTermDoc>,
    },
    File {
        path: PathBuf,
    },
}

impl SystemSpec {
    pub fn build(&self, base: &Path) -> Result<MechSystem<f64>> {
        match self {
            SystemSpec::BenchmarkChain => Ok(benchmark_chain()),
            SystemSpec::OscillatorChain {
                n_masses,
                first_mass,
                other_mass,
                mass_prop,
                stiff_prop,
                nonlinear_terms,
            } => {
                let terms = nonlinear_terms
                    .iter()
                    .map(|t| ForceTerm {
                        dof: t.dof,
                        q_exponents: t.q_exponents.clone(),
                        qdot_exponents: t.qdot_exponents.clone(),
                        coefficient: t.coefficient,
                    })
                    .collect();
                build_oscillator_chain(
                    *n_masses,
                    *first_mass,
                    *other_mass,
                    *mass_prop,
                    *stiff_prop,
                    terms,
                )
            }
            SystemSpec::File { path } => {
                let doc: MechSystemDoc = ssmrom::io::read_json(resolve(base, path))?;
                doc.to_system()
            }
        }
    }
}

/// Free decay from a point of the slow spectral subspace.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    /// Linear modes (0 = slowest) excited by the initial condition.
    pub modes: Vec<usize>,
    /// Complex modal amplitude `[re, im]` per mode.
    pub amplitudes: Vec<[f64; 2]>,
    pub t_end: f64,
    pub dt: f64,
    /// Relative size of a seeded random perturbation of the initial condition.
    #[serde(default)]
    pub perturbation: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub points: usize,
    /// Backbones extend to this multiple of the training radius.
    pub rho_factor: f64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            points: 200,
            rho_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrcRun {
    pub name: String,
    /// Forced normal-form mode (0-based).
    pub mode: usize,
    pub omega_range: [f64; 2],
    /// Explicit normal-form forcing; may force several modes at once.
    #[serde(default)]
    pub f_modal: Option<Vec<f64>>,
    #[serde(default)]
    pub calibration: Option<CalibrationPoint>,
    /// Full-model sweep whose peak calibrates the forcing.
    #[serde(default)]
    pub oracle: Option<OracleRun>,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    /// Branches stop beyond this multiple of the training radius.
    #[serde(default = "default_validity_factor")]
    pub validity_factor: f64,
    /// ρ samples for the closed-form curve.
    #[serde(default = "default_rho_points")]
    pub rho_points: usize,
}

fn default_max_step() -> f64 {
    0.01
}

fn default_validity_factor() -> f64 {
    1.5
}

fn default_rho_points() -> usize {
    1000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleRun {
    /// Physical force amplitude along `M φ_mode`.
    pub force_amplitude: f64,
    /// Undamped mode of the full model defining the force shape.
    pub physical_mode: usize,
    pub points: usize,
    /// Observable on the full state vector `(q, q̇)`.
    pub state_observable: Observable,
    #[serde(default = "default_fine_points")]
    pub fine_points: usize,
}

fn default_fine_points() -> usize {
    40
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub max_test_nmte: Option<f64>,
    /// Held-out NMTE may not exceed this multiple of the training NMTE.
    #[serde(default)]
    pub overfit_ratio: Option<f64>,
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn trajectory_count(&self) -> usize {
        if self.simulations.is_empty() {
            self.data.len()
        } else {
            self.simulations.len()
        }
    }

    pub fn modes(&self) -> usize {
        self.ssm_dim / 2
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.ssm_dim == 0 || self.ssm_dim % 2 != 0 {
            return bad(format!(
                "ssm_dim must be even and positive, got {}",
                self.ssm_dim
            ));
        }
        if self.manifold_order < 1 || self.dynamics_order < 1 {
            return bad("polynomial orders must be at least 1".into());
        }
        if !(self.resonance_tolerance > 0.0) {
            return bad("resonance_tolerance must be positive".into());
        }
        self.embedding.validate()?;
        if self.simulations.is_empty() == self.data.is_empty() {
            return bad("give either `simulations` or `data`".into());
        }
        if !self.simulations.is_empty() && self.system.is_none() {
            return bad("simulations need a `system`".into());
        }
        for (i, s) in self.simulations.iter().enumerate() {
            if s.modes.is_empty() || s.modes.len() != s.amplitudes.len() {
                return bad(format!(
                    "simulation {i}: one amplitude per mode is required"
                ));
            }
            if !(s.t_end > 0.0 && s.dt > 0.0 && s.dt < s.t_end) {
                return bad(format!("simulation {i}: need 0 < dt < t_end"));
            }
            if !(s.perturbation >= 0.0) {
                return bad(format!("simulation {i}: perturbation must be non-negative"));
            }
        }
        for p in &self.data {
            let full = resolve(base, p);
            if !full.exists() {
                return bad(format!("data file {} does not exist", full.display()));
            }
        }
        if let Some(SystemSpec::File { path }) = &self.system {
            let full = resolve(base, path);
            if !full.exists() {
                return bad(format!("system file {} does not exist", full.display()));
            }
        }
        let n = self.trajectory_count();
        if self.train.is_empty() {
            return bad("at least one training trajectory is required".into());
        }
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        let test: BTreeSet<usize> = self.test.iter().copied().collect();
        if train.len() != self.train.len() || test.len() != self.test.len() {
            return bad("train/test indices must not repeat".into());
        }
        if let Some(i) = train.intersection(&test).next() {
            return bad(format!(
                "trajectory {i} is in both the train and the test set"
            ));
        }
        if let Some(&i) = train.union(&test).find(|&&i| i >= n) {
            return bad(format!(
                "trajectory index {i} out of range ({n} trajectories)"
            ));
        }
        if self.backbone.points < 2 || !(self.backbone.rho_factor > 0.0) {
            return bad("backbone needs at least 2 points and a positive rho_factor".into());
        }
        let mut names = BTreeSet::new();
        for r in &self.frc {
            if !names.insert(r.name.as_str()) {
                return bad(format!("duplicate FRC run name `{}`", r.name));
            }
            if r.name.is_empty()
                || !r
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return bad(format!("FRC run name `{}` must be alphanumeric", r.name));
            }
            if r.mode >= self.modes() {
                return bad(format!(
                    "FRC run `{}`: mode {} out of range",
                    r.name, r.mode
                ));
            }
            let sources = [
                r.f_modal.is_some(),
                r.calibration.is_some(),
                r.oracle.is_some(),
            ];
            if sources.iter().filter(|&&b| b).count() != 1 {
                return bad(format!(
                    "FRC run `{}`: give exactly one of f_modal, calibration, oracle",
                    r.name
                ));
            }
            if let Some(f) = &r.f_modal {
                if f.len() != self.modes() {
                    return bad(format!(
                        "FRC run `{}`: f_modal needs {} entries",
                        r.name,
                        self.modes()
                    ));
                }
            }
            if let Some(o) = &r.oracle {
                if self.system.is_none() {
                    return bad(format!("FRC run `{}`: the oracle needs a `system`", r.name));
                }
                if o.points < 3 || !(o.force_amplitude > 0.0) {
                    return bad(format!(
                        "FRC run `{}`: oracle needs ≥ 3 points and a positive force",
                        r.name
                    ));
                }
            }
            if !(r.validity_factor > 0.0) || r.rho_points < 2 {
                return bad(format!(
                    "FRC run `{}`: invalid validity_factor or rho_points",
                    r.name
                ));
            }
        }
        if let Some(r) = self.thresholds.overfit_ratio {
            if !(r > 0.0) {
                return bad("overfit_ratio must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let cfg = PipelineConfig::load(&path).unwrap();
                cfg.validate(&dir)
                    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                seen += 1;
            }
        }
        assert!(seen >= 3);
    }
}
