//! Experiment layer: convergence studies, optimal control runs and the damped
//! cantilever, driven by config files and written out as CSV tables with a
//! JSON manifest per run.

pub mod config;
pub mod output;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::adjoint::{backward_sweep, OcpObjective};
use crate::beam::{grid_energies, simulate, BeamEnergy, BeamGrid};
use crate::beam_ocp::{beam_backward_sweep, BeamOcp};
use crate::constrained::{constrained_backward_sweep, constrained_integrate, ConstrainedSystem, ConstrainedTrajectory};
use crate::error::{Error, Result};
use crate::mechanics::{integrate, momentum_mismatch, Trajectory};
use crate::models::{
    constrained_pendulum_energies, pendulum_constrained, pendulum_energies, pendulum_minimal, EnergySample,
    PendulumConstrained,
};
use crate::numerics::{estimate_order, infinity_error_series, ErrorTable};
use crate::optimizer::{
    momentum_homotopy, shoot, ConstrainedShooting, HomotopyStep, OptimizationResult, OptimizationStatus,
    ShootingProblem, UnconstrainedShooting,
};

pub use config::{Boundary, ExperimentConfig, ModelKind};
pub use output::{config_hash, write_csv, Manifest, RunStatus};

use output::columns;

/// Energies of one time interval, common to all models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub gravitational: f64,
    pub deformation: f64,
    pub total: f64,
}

impl From<EnergySample> for EnergyRow {
    fn from(e: EnergySample) -> Self {
        Self {
            t: e.t,
            kinetic: e.kinetic,
            potential: e.potential,
            gravitational: e.potential,
            deformation: 0.0,
            total: e.total,
        }
    }
}

impl From<BeamEnergy> for EnergyRow {
    fn from(e: BeamEnergy) -> Self {
        Self {
            t: e.t,
            kinetic: e.kinetic(),
            potential: e.potential,
            gravitational: e.gravitational,
            deformation: e.deformation,
            total: e.total,
        }
    }
}

/// Largest per-interval increase of the total energy, relative to the
/// energy scale `max(T + |U|)` of the run.
pub fn max_relative_energy_increase(energies: &[EnergyRow]) -> f64 {
    let scale = energies.iter().map(|e| e.kinetic + e.potential.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    energies.windows(2).map(|w| (w[1].total - w[0].total) / scale).fold(f64::NEG_INFINITY, f64::max)
}

fn is_config(e: &Error) -> bool {
    matches!(e, Error::Config(_))
}

fn pendulum_objective(cfg: &ExperimentConfig) -> OcpObjective {
    let o = &cfg.objective;
    OcpObjective::scalar(
        o.s_q,
        o.s_p,
        o.r,
        DVector::from_element(1, o.target_angle),
        DVector::from_element(1, o.target_momentum),
        1,
    )
}

fn constrained_objective(cfg: &ExperimentConfig, sys: &PendulumConstrained) -> OcpObjective {
    let o = &cfg.objective;
    OcpObjective {
        s_q: nalgebra::DMatrix::identity(2, 2) * o.s_q,
        s_p: nalgebra::DMatrix::identity(1, 1) * o.s_p,
        r: nalgebra::DMatrix::identity(1, 1) * o.r,
        q_target: sys.position(o.target_angle),
        p_target: DVector::from_element(1, o.target_momentum),
    }
}

fn minimal_problem(cfg: &ExperimentConfig) -> Result<UnconstrainedShooting<crate::models::PendulumMinimal>> {
    let system = pendulum_minimal(cfg.pendulum_params()?);
    let objective = pendulum_objective(cfg);
    objective.validate(1, 1)?;
    Ok(UnconstrainedShooting {
        system,
        q0: DVector::from_element(1, cfg.initial_angle()),
        p0: DVector::zeros(1),
        objective,
        newton: cfg.newton_settings(),
    })
}

fn constrained_problem(cfg: &ExperimentConfig) -> Result<ConstrainedShooting<PendulumConstrained>> {
    let system = pendulum_constrained(cfg.pendulum_params()?);
    let objective = constrained_objective(cfg, &system);
    crate::constrained::validate_constrained_objective(&system, &objective)?;
    Ok(ConstrainedShooting {
        q0: system.position(cfg.initial_angle()),
        system,
        p0: DVector::zeros(2),
        objective,
        newton: cfg.newton_settings(),
    })
}

// ---------------------------------------------------------------------------
// convergence

/// Configuration and adjoint errors against a fine reference under the
/// constant control `objective.initial_control`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub q: ErrorTable,
    pub lambda: ErrorTable,
    pub order_q: f64,
    pub order_lambda: f64,
    /// Largest interior momentum mismatch over all runs (minimal model only).
    pub momentum_mismatch: Option<f64>,
}

struct Sampled {
    q: Vec<DVector<f64>>,
    lambda: Vec<DVector<f64>>,
    mismatch: Option<f64>,
}

fn sample(cfg: &ExperimentConfig, h: f64) -> Result<Sampled> {
    let n = (cfg.grid.horizon / h).round() as usize;
    let controls = vec![DVector::from_element(1, cfg.objective.initial_control); n];
    let params = cfg.pendulum_params()?.with_step(h);
    match cfg.model.kind {
        ModelKind::Pendulum => {
            let p = minimal_problem(cfg)?;
            let sys = pendulum_minimal(params);
            let traj = integrate(&sys, &p.q0, &p.p0, &controls, &p.newton)?;
            let lambda = backward_sweep(&sys, &traj, &p.objective)?;
            Ok(Sampled { mismatch: Some(momentum_mismatch(&sys, &traj)), q: traj.q, lambda })
        }
        ModelKind::ConstrainedPendulum => {
            let p = constrained_problem(cfg)?;
            let sys = pendulum_constrained(params);
            let traj = constrained_integrate(&sys, &p.q0, &p.p0, &controls, &p.newton)?;
            let lambda = constrained_backward_sweep(&sys, &traj, &p.objective)?;
            Ok(Sampled { q: traj.q, lambda, mismatch: None })
        }
        ModelKind::Beam => Err(Error::Config("convergence studies need a pendulum `model.kind`".into())),
    }
}

pub fn convergence_study(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    let (sizes, reference) = cfg.convergence_steps()?;
    if cfg.model.kind == ModelKind::Beam {
        return Err(Error::Config("convergence studies need a pendulum `model.kind`".into()));
    }
    let mut all = sizes.clone();
    all.push(reference);
    let runs: Vec<Sampled> = all.par_iter().map(|&h| sample(cfg, h)).collect::<Result<_>>()?;
    let (coarse, fine) = runs.split_at(sizes.len());
    let fine = &fine[0];
    let mut err_q = Vec::with_capacity(sizes.len());
    let mut err_l = Vec::with_capacity(sizes.len());
    for (run, &h) in coarse.iter().zip(&sizes) {
        err_q.push(infinity_error_series(&run.q, h, &fine.q, reference)?);
        err_l.push(infinity_error_series(&run.lambda, h, &fine.lambda, reference)?);
    }
    let q = ErrorTable::new("configuration", sizes.clone(), err_q)?;
    let lambda = ErrorTable::new("adjoint", sizes, err_l)?;
    let mismatch = runs.iter().filter_map(|r| r.mismatch).reduce(f64::max);
    Ok(ConvergenceStudy { order_q: fitted_order(&q)?, order_lambda: fitted_order(&lambda)?, q, lambda, momentum_mismatch: mismatch })
}

// a step equal to the reference gives an exact zero, which has no logarithm
fn fitted_order(table: &ErrorTable) -> Result<f64> {
    let (h, e): (Vec<f64>, Vec<f64>) =
        table.step_sizes.iter().zip(&table.errors).filter(|(_, e)| **e > 0.0).map(|(h, e)| (*h, *e)).unzip();
    estimate_order(&ErrorTable::new(table.label.clone(), h, e)?)
}

/// Runs [`convergence_study`] and writes `errors.csv` and `manifest.json`.
pub fn run_convergence(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<Manifest> {
    run_with_manifest("converge", cfg, config_text, out, |m| {
        let study = convergence_study(cfg)?;
        let rows = (0..study.q.len()).map(|i| vec![study.q.step_sizes[i], study.q.errors[i], study.lambda.errors[i]]);
        write_csv(&out.join("errors.csv"), &columns(&["h", "err_q", "err_lambda"]), rows)?;
        m.files.push("errors.csv".into());
        m.orders.insert("q".into(), study.order_q);
        m.orders.insert("lambda".into(), study.order_lambda);
        if let Some(v) = study.momentum_mismatch {
            m.residuals.insert("momentum_mismatch".into(), v);
        }
        Ok(())
    })
}

fn run_with_manifest<F>(command: &str, cfg: &ExperimentConfig, config_text: &str, out: &Path, body: F) -> Result<Manifest>
where
    F: FnOnce(&mut Manifest) -> Result<()>,
{
    let start = Instant::now();
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new(command, cfg.model.kind, config_text);
    let outcome = body(&mut manifest);
    manifest.wall_time_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Err(e) if is_config(&e) => Err(e),
        Err(e) => {
            manifest.status = RunStatus::SolverFailure;
            manifest.error = Some(e.to_string());
            manifest.write(out)?;
            Err(e)
        }
        Ok(()) => {
            manifest.write(out)?;
            Ok(manifest)
        }
    }
}

// ---------------------------------------------------------------------------
// optimal control

#[derive(Debug, Clone)]
pub enum OcpSolution {
    Pendulum(Trajectory),
    ConstrainedPendulum(ConstrainedTrajectory),
    Beam(BeamGrid),
}

/// Result of a shooting run with the quantities written to disk.
#[derive(Debug, Clone)]
pub struct OcpOutcome {
    pub status: OptimizationStatus,
    /// Controls as applied, one per interval.
    pub controls: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    /// Histories of the last optimizer stage.
    pub objective_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    pub control_effort_history: Vec<f64>,
    pub iterations: usize,
    pub homotopy: Vec<HomotopyStep>,
    pub solution: OcpSolution,
    pub dt: f64,
    /// `λ_n`, flattened per time level.
    pub adjoints: Vec<DVector<f64>>,
    pub energies: Vec<EnergyRow>,
    /// Beam only: change of the terminal row from the previous iterate
    /// (`NaN` for the first) and distance of the terminal row to the target,
    /// both as sums of nodal norms.
    pub distances: Vec<(f64, f64)>,
    /// Angle error at the end for the pendulums; on the circle for the
    /// constrained model.
    pub angle_error: Option<f64>,
    pub final_angle: Option<f64>,
    pub momentum_mismatch: Option<f64>,
    pub constraint_residual: Option<f64>,
    pub unity_residual: Option<f64>,
}

impl OcpOutcome {
    /// Kinetic energy of the last interval over its maximum along the run.
    pub fn terminal_kinetic_ratio(&self) -> f64 {
        let max = self.energies.iter().map(|e| e.kinetic).fold(0.0, f64::max);
        match self.energies.last() {
            Some(e) if max > 0.0 => e.kinetic / max,
            _ => 0.0,
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

struct Stage<S> {
    result: OptimizationResult<S>,
    path: Vec<HomotopyStep>,
}

fn optimize<P>(problem: &mut P, u0: &DVector<f64>, cfg: &ExperimentConfig) -> Result<Stage<P::Solution>>
where
    P: crate::optimizer::MomentumTarget,
{
    let settings = cfg.shooting_settings()?;
    if settings.homotopy.is_some() {
        let h = momentum_homotopy(problem, u0, &settings)?;
        Ok(Stage { result: h.result, path: h.path })
    } else {
        Ok(Stage { result: shoot(problem, u0, &settings)?, path: Vec::new() })
    }
}

fn outcome_from<S>(stage: Stage<S>, controls: Vec<f64>, solution: OcpSolution, dt: f64) -> OcpOutcome {
    let r = stage.result;
    OcpOutcome {
        status: r.status,
        controls,
        objective: r.objective,
        gradient_norm: r.gradient.amax(),
        objective_history: r.objective_history,
        gradient_norm_history: r.gradient_norm_history,
        control_effort_history: r.control_effort_history,
        iterations: r.iterations,
        homotopy: stage.path,
        solution,
        dt,
        adjoints: Vec::new(),
        energies: Vec::new(),
        distances: Vec::new(),
        angle_error: None,
        final_angle: None,
        momentum_mismatch: None,
        constraint_residual: None,
        unity_residual: None,
    }
}

/// Solves the configured optimal control problem. Pendulums use the momentum
/// homotopy when it is enabled; the beam swings up from hanging to upright
/// about its pinned end.
pub fn solve_ocp(cfg: &ExperimentConfig) -> Result<OcpOutcome> {
    let n = cfg.steps()?;
    let u0 = DVector::from_element(n, cfg.objective.initial_control);
    let h = cfg.step()?;
    match cfg.model.kind {
        ModelKind::Pendulum => {
            let mut p = minimal_problem(cfg)?;
            let stage = optimize(&mut p, &u0, cfg)?;
            let traj = stage.result.solution.clone();
            let lambda = backward_sweep(&p.system, &traj, &p.objective)?;
            let controls = stage.result.controls.iter().copied().collect();
            let mut o = outcome_from(stage, controls, OcpSolution::Pendulum(traj.clone()), h);
            let phi = traj.q[n][0];
            o.final_angle = Some(phi);
            o.angle_error = Some((phi - cfg.objective.target_angle).abs());
            o.momentum_mismatch = Some(momentum_mismatch(&p.system, &traj));
            o.energies = pendulum_energies(&traj, &p.system.params).into_iter().map(EnergyRow::from).collect();
            o.adjoints = lambda;
            Ok(o)
        }
        ModelKind::ConstrainedPendulum => {
            let mut p = constrained_problem(cfg)?;
            let stage = optimize(&mut p, &u0, cfg)?;
            let traj = stage.result.solution.clone();
            let lambda = constrained_backward_sweep(&p.system, &traj, &p.objective)?;
            let controls = stage.result.controls.iter().copied().collect();
            let mut o = outcome_from(stage, controls, OcpSolution::ConstrainedPendulum(traj.clone()), h);
            let phi = *traj.accumulated_increments(cfg.initial_angle()).last().unwrap_or(&0.0);
            o.final_angle = Some(phi);
            o.angle_error = Some(wrap_angle(phi - cfg.objective.target_angle).abs());
            o.constraint_residual = Some(traj.q.iter().map(|q| p.system.constraint(q).amax()).fold(0.0, f64::max));
            o.energies = constrained_pendulum_energies(&traj, &p.system.params).into_iter().map(EnergyRow::from).collect();
            o.adjoints = lambda;
            Ok(o)
        }
        ModelKind::Beam => {
            let model = cfg.beam_model()?;
            let mut ocp = BeamOcp::swing_up(model, cfg.objective.s_q, cfg.objective.r, cfg.objective.initial_control)?;
            ocp.newton = cfg.newton_settings();
            let settings = cfg.shooting_settings()?;
            let result = shoot(&ocp, &u0, &settings)?;
            let grid = result.solution.clone();
            let applied = ocp.applied_controls(result.controls.as_slice());
            let adjoint = beam_backward_sweep(&grid, &applied, &ocp)?;
            let target = ocp.terminal(&BeamGrid::new(grid.dt, grid.ds, vec![ocp.target_row.clone()])?);
            let nodal = |v: &DVector<f64>| -> Vec<DVector<f64>> {
                v.as_slice().chunks(8).map(DVector::from_column_slice).collect()
            };
            let target = nodal(&target);
            let mut distances = Vec::with_capacity(result.terminal_history.len());
            for (i, row) in result.terminal_history.iter().enumerate() {
                let row = nodal(row);
                let change = match i {
                    0 => f64::NAN,
                    _ => row.iter().zip(nodal(&result.terminal_history[i - 1])).map(|(a, b)| (a - b).norm()).sum(),
                };
                let to_target = row.iter().zip(&target).map(|(a, b)| (a - b).norm()).sum();
                distances.push((change, to_target));
            }
            let energies = grid_energies(&ocp.model, &grid).into_iter().map(EnergyRow::from).collect();
            let unity = grid.max_unity_residual();
            let stage = Stage { result, path: Vec::new() };
            let mut o = outcome_from(stage, applied, OcpSolution::Beam(grid), h);
            o.adjoints = adjoint
                .lambda
                .iter()
                .map(|level| DVector::from_iterator(6 * level.len(), level.iter().flat_map(|v| v.iter().copied())))
                .collect();
            o.energies = energies;
            o.distances = distances;
            o.unity_residual = Some(unity);
            Ok(o)
        }
    }
}

fn write_energies(path: &Path, energies: &[EnergyRow]) -> Result<()> {
    write_csv(
        path,
        &columns(&["t", "T_kin", "U", "U_grav", "deformation", "H"]),
        energies.iter().map(|e| vec![e.t, e.kinetic, e.potential, e.gravitational, e.deformation, e.total]),
    )
}

fn indexed(name: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{name}{i}")).collect()
}

fn write_beam_rows(out: &Path, grid: &BeamGrid) -> Result<()> {
    let nodes = grid.rows.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    for a in 0..nodes {
        header.extend((0..8).map(|k| format!("q{a}_{k}")));
    }
    let times = grid.times();
    write_csv(
        &out.join("states.csv"),
        &header,
        grid.rows.iter().zip(&times).map(|(row, &t)| {
            std::iter::once(t).chain(row.iter().flat_map(|q| q.to_vector().iter().copied().collect::<Vec<_>>())).collect()
        }),
    )?;
    let mut header = vec!["t".to_string()];
    for a in 0..nodes {
        header.extend(["x", "y", "z"].iter().map(|c| format!("{c}{a}")));
    }
    write_csv(
        &out.join("positions.csv"),
        &header,
        (0..grid.rows.len()).map(|n| std::iter::once(times[n]).chain(grid.positions(n).iter().flat_map(|p| [p.x, p.y, p.z])).collect()),
    )
}

/// Runs [`solve_ocp`] and writes the time series, iteration series and the
/// manifest.
pub fn run_ocp(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<Manifest> {
    run_with_manifest("ocp", cfg, config_text, out, |m| {
        let o = solve_ocp(cfg)?;
        let mut files = vec!["controls.csv", "adjoints.csv", "energies.csv", "states.csv", "objective.csv"];
        files.extend(["gradient_norm.csv", "control_effort.csv"]);
        let dt = o.dt;
        write_csv(
            &out.join("controls.csv"),
            &columns(&["t", "u"]),
            o.controls.iter().enumerate().map(|(n, &u)| vec![n as f64 * dt, u]),
        )?;
        let width = o.adjoints.first().map_or(0, |l| l.len());
        let mut header = vec!["t".to_string()];
        header.extend(indexed("lambda", width));
        write_csv(
            &out.join("adjoints.csv"),
            &header,
            o.adjoints.iter().enumerate().map(|(n, l)| std::iter::once(n as f64 * dt).chain(l.iter().copied()).collect()),
        )?;
        write_energies(&out.join("energies.csv"), &o.energies)?;
        for (name, series) in [
            ("objective", &o.objective_history),
            ("gradient_norm", &o.gradient_norm_history),
            ("control_effort", &o.control_effort_history),
        ] {
            write_csv(
                &out.join(format!("{name}.csv")),
                &columns(&["iteration", name]),
                series.iter().enumerate().map(|(i, &v)| vec![i as f64, v]),
            )?;
        }
        match &o.solution {
            OcpSolution::Pendulum(traj) => {
                write_csv(
                    &out.join("states.csv"),
                    &columns(&["t", "phi"]),
                    traj.q.iter().enumerate().map(|(n, q)| vec![n as f64 * dt, q[0]]),
                )?;
            }
            OcpSolution::ConstrainedPendulum(traj) => {
                let phi = traj.accumulated_increments(cfg.initial_angle());
                write_csv(
                    &out.join("states.csv"),
                    &columns(&["t", "x", "y", "phi"]),
                    traj.q.iter().zip(&phi).enumerate().map(|(n, (q, &p))| vec![n as f64 * dt, q[0], q[1], p]),
                )?;
            }
            OcpSolution::Beam(grid) => {
                write_beam_rows(out, grid)?;
                files.push("positions.csv");
                write_csv(
                    &out.join("distance.csv"),
                    &columns(&["iteration", "change_from_previous", "distance_to_target"]),
                    o.distances.iter().enumerate().map(|(i, &(c, d))| vec![i as f64, c, d]),
                )?;
                files.push("distance.csv");
            }
        }
        if !o.homotopy.is_empty() {
            let width = o.homotopy[0].target.len();
            let mut header = vec!["stage".to_string()];
            header.extend(indexed("target", width));
            header.extend(indexed("reached", width));
            write_csv(
                &out.join("homotopy.csv"),
                &header,
                o.homotopy.iter().enumerate().map(|(i, s)| {
                    std::iter::once(i as f64).chain(s.target.iter().copied()).chain(s.reached.iter().copied()).collect()
                }),
            )?;
            files.push("homotopy.csv");
            m.homotopy_stages = Some(o.homotopy.len());
        }
        m.files = files.into_iter().map(String::from).collect();
        m.optimizer_status = Some(format!("{:?}", o.status));
        m.iterations = Some(o.iterations);
        m.objective = Some(o.objective);
        m.gradient_norm = Some(o.gradient_norm);
        m.residuals.insert("terminal_kinetic_ratio".into(), o.terminal_kinetic_ratio());
        for (name, v) in [
            ("angle_error", o.angle_error),
            ("final_angle", o.final_angle),
            ("momentum_mismatch", o.momentum_mismatch),
            ("constraint_residual", o.constraint_residual),
            ("unity_residual", o.unity_residual),
        ] {
            if let Some(v) = v {
                m.residuals.insert(name.into(), v);
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// damping

/// Uncontrolled beam released straight and at rest, typically a cantilever
/// under gravity.
#[derive(Debug, Clone)]
pub struct DampingOutcome {
    pub grid: BeamGrid,
    pub energies: Vec<EnergyRow>,
}

pub fn damping_demo(cfg: &ExperimentConfig) -> Result<DampingOutcome> {
    let model = cfg.beam_model()?;
    let n = cfg.steps()?;
    let row = model.reference_row();
    let grid = simulate(&model, &row, &model.rest_momenta(), &vec![0.0; n], &cfg.newton_settings())?;
    let energies = grid_energies(&model, &grid).into_iter().map(EnergyRow::from).collect();
    Ok(DampingOutcome { grid, energies })
}

/// Runs [`damping_demo`] and writes `tip.csv`, `energies.csv`, `positions.csv`
/// and `states.csv`.
pub fn run_damping_demo(cfg: &ExperimentConfig, config_text: &str, out: &Path) -> Result<Manifest> {
    if cfg.model.kind != ModelKind::Beam {
        return Err(Error::Config("`model.kind` must be `beam` for the damping demo".into()));
    }
    run_with_manifest("beam-damping", cfg, config_text, out, |m| {
        let d = damping_demo(cfg)?;
        let times = d.grid.times();
        write_csv(
            &out.join("tip.csv"),
            &columns(&["t", "x", "y", "z"]),
            d.grid.tip_trace().iter().zip(&times).map(|(p, &t)| vec![t, p.x, p.y, p.z]),
        )?;
        write_energies(&out.join("energies.csv"), &d.energies)?;
        write_beam_rows(out, &d.grid)?;
        m.files = ["tip.csv", "energies.csv", "states.csv", "positions.csv"].map(String::from).to_vec();
        m.residuals.insert("unity_residual".into(), d.grid.max_unity_residual());
        m.residuals.insert("max_relative_energy_increase".into(), max_relative_energy_increase(&d.energies));
        if let (Some(first), Some(last)) = (d.energies.first(), d.energies.last()) {
            m.residuals.insert("energy_change".into(), last.total - first.total);
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    fn scratch(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("vidam-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        dir
    }

    const SMALL_PENDULUM: &str = r#"
[model]
kind = "pendulum"

[grid]
horizon = 0.5
step = 1e-2
step_sizes = [5e-2, 2.5e-2, 1.25e-2]
reference_step = 1.25e-3

[objective]
s_q = 10.0
r = 1e-3
target_angle = 0.5

[optimizer]
max_iterations = 30
"#;

    #[test]
    fn convergence_study_recovers_second_order() {
        let s = convergence_study(&config(SMALL_PENDULUM)).unwrap();
        assert!((s.order_q - 2.0).abs() < 0.2, "{}", s.order_q);
        assert!((s.order_lambda - 2.0).abs() < 0.3, "{}", s.order_lambda);
        assert!(s.momentum_mismatch.unwrap() < 1e-9);
        let coarse = SMALL_PENDULUM.replace("reference_step = 1.25e-3", "reference_step = 2.5e-2");
        assert!(matches!(ExperimentConfig::from_toml_str(&coarse), Err(Error::Config(_))));
    }

    #[test]
    fn step_equal_to_the_reference_gives_a_zero_row() {
        let text = SMALL_PENDULUM.replace("1.25e-2]", "1.25e-2, 1.25e-3]");
        let s = convergence_study(&config(&text)).unwrap();
        assert_eq!(s.q.errors[3], 0.0);
        assert_eq!(s.lambda.errors[3], 0.0);
        assert!((s.order_q - 2.0).abs() < 0.2);
    }

    #[test]
    fn ocp_run_writes_tables_and_manifest() {
        let cfg = config(SMALL_PENDULUM);
        let dir = scratch("ocp");
        let m = run_ocp(&cfg, SMALL_PENDULUM, &dir).unwrap();
        assert_eq!(m.status, RunStatus::Ok);
        assert_eq!(m.config_sha256, config_hash(SMALL_PENDULUM));
        for f in &m.files {
            assert!(dir.join(f).exists(), "{f}");
        }
        let objective = fs::read_to_string(dir.join("objective.csv")).unwrap();
        assert_eq!(objective.lines().count(), m.iterations.unwrap() + 1);
        let controls = fs::read_to_string(dir.join("controls.csv")).unwrap();
        assert_eq!(controls.lines().count(), 51);
        assert!(m.objective.unwrap() < 10.0 * 0.25);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "ok");
        assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn identical_configs_give_identical_outputs() {
        let cfg = config(SMALL_PENDULUM);
        let (a, b) = (scratch("repro-a"), scratch("repro-b"));
        run_ocp(&cfg, SMALL_PENDULUM, &a).unwrap();
        run_ocp(&cfg, SMALL_PENDULUM, &b).unwrap();
        for f in ["states.csv", "adjoints.csv", "controls.csv", "objective.csv", "energies.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        fs::remove_dir_all(&a).unwrap();
        fs::remove_dir_all(&b).unwrap();
    }

    #[test]
    fn solver_failure_is_recorded() {
        let text = SMALL_PENDULUM.replace("[optimizer]", "[optimizer]\nnewton_max_iterations = 1\nnewton_tolerance = 1e-300");
        let cfg = config(&text);
        let dir = scratch("fail");
        let err = run_ocp(&cfg, &text, &dir).unwrap_err();
        assert!(!is_config(&err));
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "solver-failure");
        assert!(manifest["error"].as_str().unwrap().contains("newton"));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn damping_demo_writes_tip_trace() {
        let text = r#"
[model]
kind = "beam"
segments = 2
side = 0.05
youngs_modulus = 5e4
density = 1000.0
poisson = 0.35
eta = 0.1
zeta = 0.01
left = "clamped"

[grid]
horizon = 0.02
steps = 20
"#;
        let cfg = config(text);
        let dir = scratch("damping");
        let m = run_damping_demo(&cfg, text, &dir).unwrap();
        let tip = fs::read_to_string(dir.join("tip.csv")).unwrap();
        assert_eq!(tip.lines().count(), 22);
        assert!(m.residuals["unity_residual"] <= 1e-9);
        assert!(run_damping_demo(&config(SMALL_PENDULUM), SMALL_PENDULUM, &dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn wrapped_angles_live_in_the_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
