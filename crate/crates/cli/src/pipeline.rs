//! Pipeline stages. Each stage reads the artifacts of the previous ones from
//! the output directory, so stages can run one by one or all together.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use ssmrom::analysis::{amplitude_map, backbone, nmte, predict_trajectory, response_amplitude};
use ssmrom::embed::{check_embedding_dimension, delay_embed, delay_warning, EmbeddedDataset};
use ssmrom::forcing::{
    calibrate_forcing, forced_sweep_oracle, forcing_validity_warning, frc_closed_form_2d,
    frc_continuation, refine_sweep_peak, rotation_numbers, write_frc_csv, CalibrationPoint,
    ForcingConfig, FrcBranch, OracleOptions,
};
use ssmrom::io::{read_json, read_trajectory_csv, write_json, write_trajectory_csv, MechSystemDoc};
use ssmrom::manifold::{fit_manifold, ManifoldDoc, ManifoldModel, ManifoldOptions};
use ssmrom::normalform::{
    check_outer_resonance, fit_normal_form, fit_reduced_field, modal_decomposition,
    select_resonant_monomials, NormalFormDoc, NormalFormModel,
};
use ssmrom::ode::OdeOptions;
use ssmrom::system::{integrate, linearize, slow_eigenspace_ic, MechSystem, Trajectory};
use ssmrom::{Error, Result};

use crate::config::{resolve, PipelineConfig};

/// Failure of a stage, tagged for the exit code.
#[derive(Debug)]
pub enum StageError {
    Config(String),
    Numerical(String),
    Validation(String),
}

impl StageError {
    fn from_core(stage: &str, e: Error) -> Self {
        let msg = format!("{stage}: {e}");
        match e {
            Error::InvalidArgument(_)
            | Error::Format(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::Csv(_) => StageError::Config(msg),
            _ => StageError::Numerical(msg),
        }
    }
}

pub type StageResult<T> = std::result::Result<T, StageError>;

trait Tag<T> {
    fn stage(self, name: &str) -> StageResult<T>;
}

impl<T> Tag<T> for Result<T> {
    fn stage(self, name: &str) -> StageResult<T> {
        self.map_err(|e| StageError::from_core(name, e))
    }
}

pub struct Context {
    pub cfg: PipelineConfig,
    /// Directory of the config file; relative paths resolve against it.
    pub base: PathBuf,
    pub out: PathBuf,
}

const REPORT: &str = "report.json";

impl Context {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn raw_path(&self, i: usize) -> PathBuf {
        if self.cfg.simulations.is_empty() {
            resolve(&self.base, &self.cfg.data[i])
        } else {
            self.path(&format!("trajectories/traj_{i:03}.csv"))
        }
    }

    fn embedded_path(&self, i: usize) -> PathBuf {
        self.path(&format!("embedded/traj_{i:03}.csv"))
    }

    fn system(&self) -> Result<Option<MechSystem<f64>>> {
        self.cfg
            .system
            .as_ref()
            .map(|s| s.build(&self.base))
            .transpose()
    }

    fn load_report(&self) -> Map<String, Value> {
        fs::read_to_string(self.path(REPORT))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok())
            .unwrap_or_default()
    }

    /// Replaces one section of the report (sections are keyed by stage).
    fn record(&self, stage: &str, section: Value) -> Result<()> {
        let mut report = self.load_report();
        report.insert(
            "schema_version".into(),
            json!(crate::config::SCHEMA_VERSION),
        );
        report.insert(stage.into(), section);
        write_json(self.path(REPORT), &Value::Object(report))
    }

    fn manifold(&self) -> Result<ManifoldModel<f64>> {
        read_json::<ManifoldDoc>(self.path("manifold.json"))?.to_model()
    }

    fn normal_form(&self) -> Result<NormalFormModel<f64>> {
        read_json::<NormalFormDoc>(self.path("normal_form.json"))?.to_model()
    }

    fn embedded(&self, idx: &[usize]) -> Result<Vec<Trajectory<f64>>> {
        idx.iter()
            .map(|&i| {
                let p = self.embedded_path(i);
                read_trajectory_csv(&p).map_err(|e| match e {
                    Error::Io(io) => Error::InvalidArgument(format!(
                        "missing embedded trajectory {} ({io}); run `embed` first",
                        p.display()
                    )),
                    e => e,
                })
            })
            .collect()
    }
}

fn complex_json(z: Complex64) -> Value {
    json!({ "re": z.re, "im": z.im })
}

pub fn simulate(ctx: &Context) -> StageResult<()> {
    const S: &str = "simulate";
    let cfg = &ctx.cfg;
    if cfg.simulations.is_empty() {
        info!("simulate: using {} measured trajectories", cfg.data.len());
        return ctx
            .record(
                S,
                json!({ "source": "data", "trajectories": cfg.data.len() }),
            )
            .stage(S);
    }
    let sys = ctx
        .system()
        .stage(S)?
        .expect("validated: simulations need a system");
    fs::create_dir_all(ctx.path("trajectories"))
        .map_err(Error::from)
        .stage(S)?;
    write_json(ctx.path("system.json"), &MechSystemDoc::from_system(&sys)).stage(S)?;
    let (_, spec) = linearize(&sys).stage(S)?;
    let m = cfg.modes().min(spec.mode_count());
    let inner: Vec<usize> = (0..m).collect();
    let outer = check_outer_resonance(&spec, &inner).stage(S)?;
    let mut warnings = Vec::new();
    if spec.non_semisimple {
        warnings.push("linearization is close to non-semisimple".to_string());
    }
    if !outer.violations.is_empty() {
        warnings.push(format!(
            "{} near outer resonances; the spectral submanifold may not be unique",
            outer.violations.len()
        ));
    }
    for (i, s) in cfg.simulations.iter().enumerate() {
        let amps: Vec<Complex64> = s
            .amplitudes
            .iter()
            .map(|a| Complex64::new(a[0], a[1]))
            .collect();
        let mut x0 = slow_eigenspace_ic(&spec, &s.modes, &amps).stage(S)?;
        if s.perturbation > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64));
            let scale = s.perturbation * x0.norm();
            let noise = DVector::from_fn(x0.len(), |_, _| rng.random_range(-1.0..1.0));
            x0 += noise * scale;
        }
        info!("simulate: trajectory {i} over [0, {}] s", s.t_end);
        let tr =
            integrate(&sys, &x0, (0.0, s.t_end), s.dt, None, OdeOptions::default()).stage(S)?;
        write_trajectory_csv(ctx.raw_path(i), &tr).stage(S)?;
    }
    let eig: Vec<Value> = (0..spec.mode_count())
        .map(|j| complex_json(spec.mode(j).0))
        .collect();
    ctx.record(
        S,
        json!({
            "source": "simulation",
            "trajectories": cfg.simulations.len(),
            "eigenvalues": eig,
            "outer_resonance": outer,
            "warnings": warnings,
        }),
    )
    .stage(S)
}

pub fn embed(ctx: &Context) -> StageResult<()> {
    const S: &str = "embed";
    let cfg = &ctx.cfg;
    fs::create_dir_all(ctx.path("embedded"))
        .map_err(Error::from)
        .stage(S)?;
    let mut dim = 0;
    let mut dt = 0.0;
    for i in 0..cfg.trajectory_count() {
        let raw = read_trajectory_csv::<f64>(ctx.raw_path(i)).stage(S)?;
        let e = delay_embed(&raw, &cfg.embedding).stage(S)?;
        dim = e.dim();
        dt = e.dt();
        write_trajectory_csv(ctx.embedded_path(i), &e).stage(S)?;
    }
    let mut warnings = Vec::new();
    let p = cfg.embedding.delay_dimension;
    // only meaningful for delay embeddings of a few channels
    let sufficiency = (p > 1).then(|| check_embedding_dimension(cfg.modes(), dim));
    if p > 1 {
        if let Some(sys) = ctx.system().stage(S)? {
            let (_, spec) = linearize(&sys).stage(S)?;
            let omegas: Vec<f64> = (0..spec.mode_count()).map(|j| spec.mode(j).0.im).collect();
            warnings.extend(delay_warning(dt * cfg.embedding.delay_step as f64, &omegas));
        }
    }
    info!(
        "embed: {} trajectories in {dim} dimensions",
        cfg.trajectory_count()
    );
    ctx.record(
        S,
        json!({ "dimension": dim, "delay_dimension": p, "sufficiency": sufficiency, "warnings": warnings }),
    )
    .stage(S)
}

pub fn fit_manifold_stage(ctx: &Context) -> StageResult<()> {
    const S: &str = "fit-manifold";
    let cfg = &ctx.cfg;
    let train = ctx.embedded(&cfg.train).stage(S)?;
    let ds = EmbeddedDataset::new(train, cfg.embedding.clone()).stage(S)?;
    let mut opts = ManifoldOptions::new(cfg.ssm_dim, cfg.manifold_order);
    opts.equilibrium = cfg.equilibrium.clone();
    opts.refine = cfg.manifold_refine;
    let fit = fit_manifold(&ds, &opts).stage(S)?;
    write_json(
        ctx.path("manifold.json"),
        &ManifoldDoc::from_model(&fit.model),
    )
    .stage(S)?;
    info!("fit-manifold: residual rms {:.3e}", fit.residual_rms);
    ctx.record(
        S,
        json!({
            "residual_rms": fit.residual_rms,
            "data_radius": fit.data_radius,
            "refinement_costs": fit.refinement_costs,
        }),
    )
    .stage(S)
}

pub fn fit_dynamics(ctx: &Context) -> StageResult<()> {
    const S: &str = "fit-dynamics";
    let cfg = &ctx.cfg;
    let mani = ctx.manifold().stage(S)?;
    let train = ctx.embedded(&cfg.train).stage(S)?;
    let reduced: Vec<Trajectory<f64>> = train
        .iter()
        .map(|t| mani.project_trajectory(t))
        .collect::<Result<_>>()
        .stage(S)?;
    let rvf = fit_reduced_field(&reduced, cfg.dynamics_order).stage(S)?;
    let (eigs, _) = modal_decomposition(rvf.linear()).stage(S)?;
    let res =
        select_resonant_monomials(&eigs, cfg.dynamics_order, cfg.resonance_tolerance).stage(S)?;
    let nf =
        fit_normal_form(&rvf, &reduced, cfg.dynamics_order, &res, &cfg.normal_form).stage(S)?;
    write_json(
        ctx.path("normal_form.json"),
        &NormalFormDoc::from_model(&nf),
    )
    .stage(S)?;
    let pm = nf.polar();
    info!("fit-dynamics:\n{pm}");
    ctx.record(
        S,
        json!({
            "eigenvalues": nf.eigenvalues().iter().map(|&z| complex_json(z)).collect::<Vec<_>>(),
            "resonance_set": res,
            "phase_coupled": res.has_phase_coupling(),
            "iterations": nf.cost_history.len().saturating_sub(1),
            "cost_initial": nf.cost_history.first(),
            "cost_final": nf.cost_history.last(),
            "composition_residual": nf.composition_residual(),
            "training_radius": nf.training_radius,
            "polar_form": pm.to_string().lines().collect::<Vec<_>>(),
        }),
    )
    .stage(S)
}

pub fn backbone_stage(ctx: &Context) -> StageResult<()> {
    const S: &str = "backbone";
    let cfg = &ctx.cfg;
    let mani = ctx.manifold().stage(S)?;
    let nf = ctx.normal_form().stage(S)?;
    cfg.observable.validate(mani.ambient_dim()).stage(S)?;
    let pm = nf.polar();
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for j in 0..nf.modes() {
        let mut rho_max = nf.training_radius[j] * cfg.backbone.rho_factor;
        let curve = match backbone(&pm, j, rho_max, cfg.backbone.points) {
            Err(Error::ValidityRange { rho_max: r }) => {
                warnings.push(format!(
                    "mode {}: backbone cut at ρ = {r:.6e} where ω(ρ) ≤ 0",
                    j + 1
                ));
                rho_max = r;
                backbone(&pm, j, rho_max, cfg.backbone.points)
            }
            other => other,
        }
        .stage(S)?
        .with_amplitude(&mani, &nf, &cfg.observable)
        .stage(S)?;
        let name = format!("backbone_mode{}.csv", j + 1);
        curve.write_csv(ctx.path(&name)).stage(S)?;
        files.push(json!({ "mode": j + 1, "file": name, "rho_max": rho_max }));
    }
    ctx.record(S, json!({ "curves": files, "warnings": warnings }))
        .stage(S)
}

fn branch_summary(b: &FrcBranch<f64>) -> Value {
    let peak = b.peak().map(|p| {
        json!({ "omega": p.omega, "rho": p.rho, "psi": p.psi, "amp": p.amp, "stable": p.stable })
    });
    json!({
        "points": b.points.len(),
        "fold_omegas": b.fold_indices.iter().map(|&i| b.points[i].omega).collect::<Vec<_>>(),
        "unstable_intervals": b.unstable_intervals(),
        "peak": peak,
        "truncated": b.truncated,
    })
}

pub fn frc_stage(ctx: &Context) -> StageResult<()> {
    const S: &str = "frc";
    let cfg = &ctx.cfg;
    let mani = ctx.manifold().stage(S)?;
    let nf = ctx.normal_form().stage(S)?;
    cfg.observable.validate(mani.ambient_dim()).stage(S)?;
    let pm = nf.polar();
    let m = nf.modes();
    let g = &cfg.observable;
    let mut runs = Vec::new();
    for run in &cfg.frc {
        let j = run.mode;
        let radius: Vec<f64> = nf
            .training_radius
            .iter()
            .map(|r| r * run.validity_factor)
            .collect();
        let amp1 = |r: f64| amplitude_map(&mani, &nf, g, j, r);
        let mut section = Map::new();
        let calibration: Option<CalibrationPoint> = match (&run.calibration, &run.oracle) {
            (Some(c), _) => Some(c.clone()),
            (None, Some(o)) => {
                let sys = ctx
                    .system()
                    .stage(S)?
                    .expect("validated: oracle needs a system");
                o.state_observable.validate(2 * sys.dof_count()).stage(S)?;
                let shape = sys.modal_force_shape(o.physical_mode).stage(S)?;
                let [lo, hi] = run.omega_range;
                let grid: Vec<f64> = (0..o.points)
                    .map(|i| lo + (hi - lo) * i as f64 / (o.points - 1) as f64)
                    .collect();
                let obs = |x: &[f64]| o.state_observable.eval(&DVector::from_column_slice(x));
                info!(
                    "frc `{}`: full-model sweep over {} frequencies",
                    run.name, o.points
                );
                let opts = OracleOptions::default();
                let table =
                    forced_sweep_oracle(&sys, &shape, o.force_amplitude, &grid, &obs, &opts)
                        .stage(S)?;
                let sweep_name = format!("sweep_{}.csv", run.name);
                let file = fs::File::create(ctx.path(&sweep_name))
                    .map_err(Error::from)
                    .stage(S)?;
                table.write_csv(std::io::BufWriter::new(file)).stage(S)?;
                let pk = refine_sweep_peak(
                    &sys,
                    &shape,
                    o.force_amplitude,
                    &table,
                    &obs,
                    o.fine_points,
                    &opts,
                )
                .stage(S)?;
                section.insert("sweep_file".into(), json!(sweep_name));
                section.insert(
                    "oracle_hysteresis".into(),
                    json!(table.hysteresis_interval(0.01)),
                );
                let unsettled = table
                    .unsettled_up
                    .iter()
                    .chain(&table.unsettled_down)
                    .filter(|&&b| b)
                    .count();
                section.insert("oracle_unsettled_points".into(), json!(unsettled));
                Some(pk)
            }
            _ => None,
        };
        let f_modal = match (&run.f_modal, &calibration) {
            (Some(f), _) => f.clone(),
            (None, Some(c)) => {
                let f = calibrate_forcing(&pm, j, &amp1, c, radius[j]).stage(S)?;
                section.insert("calibration".into(), json!(c));
                let mut v = vec![0.0; m];
                v[j] = f;
                v
            }
            (None, None) => unreachable!("validated: one forcing source per run"),
        };
        let mut warnings: Vec<String> = Vec::new();
        warnings.extend(forcing_validity_warning(
            &pm,
            j,
            f_modal[j],
            nf.training_radius[j],
        ));
        let forced: Vec<usize> = (0..m).filter(|&l| f_modal[l] > 0.0).collect();
        let branch = if m == 1 {
            let grid: Vec<f64> = (1..=run.rho_points)
                .map(|i| radius[0] * i as f64 / run.rho_points as f64)
                .collect();
            let b = frc_closed_form_2d(&pm, f_modal[0], &grid, &amp1).stage(S)?;
            // keep the part inside the frequency window
            let [lo, hi] = run.omega_range;
            let pts: Vec<_> = b
                .points
                .into_iter()
                .filter(|p| p.omega >= lo && p.omega <= hi)
                .collect();
            let mut b2 = FrcBranch {
                fold_indices: pts
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| p.fold)
                    .map(|(i, _)| i)
                    .collect(),
                points: pts,
                truncated: None,
            };
            if b2.peak().is_none() {
                b2.truncated = Some("peak lies outside the validity range".into());
            }
            b2
        } else {
            let fc = ForcingConfig {
                omega_range: run.omega_range,
                f_modal: f_modal.clone(),
                calibration: None,
                max_step: run.max_step,
                validity_radius: radius.clone(),
            };
            let mask: Vec<bool> = (0..m).map(|l| f_modal[l] > 0.0).collect();
            let c = rotation_numbers(nf.resonance(), &mask).stage(S)?;
            frc_continuation(&pm, nf.resonance(), &fc, &|w| {
                response_amplitude(&mani, &nf, g, w, &c)
            })
            .stage(S)?
        };
        if let Some(t) = &branch.truncated {
            warnings.push(format!("branch truncated: {t}"));
        }
        let file = format!("frc_{}.csv", run.name);
        write_frc_csv(ctx.path(&file), &branch).stage(S)?;
        info!(
            "frc `{}`: {} points, forced modes {:?}",
            run.name,
            branch.points.len(),
            forced
        );
        section.insert("name".into(), json!(run.name));
        section.insert("file".into(), json!(file));
        section.insert("f_modal".into(), json!(f_modal));
        section.insert("branch".into(), branch_summary(&branch));
        section.insert("warnings".into(), json!(warnings));
        runs.push(Value::Object(section));
    }
    ctx.record(S, json!({ "runs": runs })).stage(S)
}

/// NMTE of every training and test trajectory; returns `(train, test)`.
pub fn predict(ctx: &Context) -> StageResult<(Vec<f64>, Vec<f64>)> {
    const S: &str = "predict";
    let cfg = &ctx.cfg;
    let mani = ctx.manifold().stage(S)?;
    let nf = ctx.normal_form().stage(S)?;
    let mut out = [Vec::new(), Vec::new()];
    let mut entries = Vec::new();
    for (set, idx) in [(0, &cfg.train), (1, &cfg.test)] {
        for (&i, tr) in idx.iter().zip(ctx.embedded(idx).stage(S)?) {
            let pred = predict_trajectory(&mani, &nf, &tr.sample(0), tr.times()).stage(S)?;
            let e = nmte(&tr, &pred.trajectory, None).stage(S)?;
            let file = format!("prediction_{i:03}.csv");
            write_trajectory_csv(ctx.path(&file), &pred.trajectory).stage(S)?;
            out[set].push(e.value);
            entries.push(json!({
                "trajectory": i,
                "set": if set == 0 { "train" } else { "test" },
                "nmte": e.value,
                "file": file,
                "warnings": pred.warnings,
            }));
        }
    }
    let [train, test] = out;
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    ctx.record(
        S,
        json!({ "trajectories": entries, "train_nmte_mean": mean(&train), "test_nmte_mean": mean(&test) }),
    )
    .stage(S)?;
    info!(
        "predict: train NMTE {:?}, test NMTE {:?}",
        mean(&train),
        mean(&test)
    );
    Ok((train, test))
}

/// Threshold checks on the prediction errors.
pub fn validate(ctx: &Context, train: &[f64], test: &[f64]) -> StageResult<()> {
    let t = &ctx.cfg.thresholds;
    let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    if let Some(lim) = t.max_test_nmte {
        if max(test) > lim {
            return Err(StageError::Validation(format!(
                "test NMTE {:.4e} exceeds the limit {lim:.4e}",
                max(test)
            )));
        }
    }
    if let Some(r) = t.overfit_ratio {
        if !test.is_empty() && max(test) > r * max(train) {
            return Err(StageError::Validation(format!(
                "held-out NMTE {:.4e} exceeds {r} × training NMTE {:.4e}; lower the dynamics order",
                max(test),
                max(train)
            )));
        }
    }
    Ok(())
}

pub fn pipeline(ctx: &Context) -> StageResult<()> {
    let _ = fs::remove_file(ctx.path(REPORT));
    simulate(ctx)?;
    embed(ctx)?;
    fit_manifold_stage(ctx)?;
    fit_dynamics(ctx)?;
    backbone_stage(ctx)?;
    if !ctx.cfg.frc.is_empty() {
        frc_stage(ctx)?;
    }
    let (train, test) = predict(ctx)?;
    validate(ctx, &train, &test)
}

pub fn prepare_output(out: &Path) -> StageResult<()> {
    fs::create_dir_all(out)
        .map_err(|e| StageError::Config(format!("cannot create {}: {e}", out.display())))
}
