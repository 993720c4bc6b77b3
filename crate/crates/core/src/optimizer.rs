//! Shooting: forward solve, backward sweep, gradient and a Barzilai-Borwein
//! update of the controls, plus the end-momentum homotopy for problems with a
//! momentum target.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::adjoint::{backward_sweep, control_gradient, final_momentum, objective, OcpObjective};
use crate::beam::BeamGrid;
use crate::beam_ocp::{beam_backward_sweep, beam_input_gradient, beam_objective, BeamOcp};
use crate::constrained::{
    constrained_backward_sweep, constrained_control_gradient, constrained_integrate, constrained_objective,
    projected_final_momentum, ConstrainedSystem, ConstrainedTrajectory,
};
use crate::error::{Error, Result};
use crate::mechanics::{integrate, DiscreteSystem, Trajectory};
use crate::numerics::{inf_norm, NewtonSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BbVariant {
    /// `sᵀs / sᵀy`
    Bb1,
    /// `sᵀy / yᵀy`
    Bb2,
    /// BB1 on odd iterations, BB2 on even ones.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomotopySettings {
    /// Weight of the reached momentum in the modified target.
    pub beta: f64,
    /// Outer loop stops once `|p_N − p*|∞` is below this.
    pub tolerance: f64,
    pub max_outer: usize,
}

impl Default for HomotopySettings {
    fn default() -> Self {
        Self { beta: 0.5, tolerance: 1e-3, max_outer: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingSettings {
    /// Cap on evaluated iterates, the initial guess included.
    pub max_iterations: usize,
    /// Stop when `|g|∞ ≤ gradient_tolerance · (1 + |J|)`.
    pub gradient_tolerance: f64,
    pub bb_variant: BbVariant,
    /// First step; `None` selects `1e-3 (1 + |u₀|∞) / (1 + |g₀|∞)`.
    pub step_fallback: Option<f64>,
    /// Largest admissible step as a multiple of the first one.
    pub step_cap_factor: f64,
    /// Step halvings tried when a forward solve fails.
    pub max_halvings: usize,
    pub homotopy: Option<HomotopySettings>,
}

impl Default for ShootingSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-6,
            bb_variant: BbVariant::Bb1,
            step_fallback: None,
            step_cap_factor: 1e3,
            max_halvings: 30,
            homotopy: None,
        }
    }
}

impl ShootingSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err(Error::Config("gradient_tolerance must be non-negative".into()));
        }
        if let Some(s) = self.step_fallback {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config("step_fallback must be positive".into()));
            }
        }
        if !(self.step_cap_factor >= 1.0) {
            return Err(Error::Config("step_cap_factor must be at least 1".into()));
        }
        if let Some(h) = self.homotopy {
            if !(h.beta > 0.0 && h.beta <= 1.0) {
                return Err(Error::Config("homotopy beta must lie in (0, 1]".into()));
            }
            if !(h.tolerance > 0.0) || h.max_outer == 0 {
                return Err(Error::Config("homotopy needs a positive tolerance and at least one outer step".into()));
            }
        }
        Ok(())
    }
}

/// Barzilai-Borwein step from two consecutive iterates. Falls back to
/// `fallback` when the quotient is not a positive finite number and clamps to
/// `cap`. `iteration` selects the branch of the alternating variant.
#[allow(clippy::too_many_arguments)]
pub fn bb_step(
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
    g_prev: &DVector<f64>,
    g_curr: &DVector<f64>,
    variant: BbVariant,
    iteration: usize,
    fallback: f64,
    cap: f64,
) -> f64 {
    let s = u_curr - u_prev;
    let y = g_curr - g_prev;
    let sy = s.dot(&y);
    let step = match variant {
        BbVariant::Bb1 => s.norm_squared() / sy,
        BbVariant::Bb2 => sy / y.norm_squared(),
        BbVariant::Alternating if iteration % 2 == 1 => s.norm_squared() / sy,
        BbVariant::Alternating => sy / y.norm_squared(),
    };
    if step > 0.0 && step.is_finite() {
        step.min(cap)
    } else {
        fallback.min(cap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizationStatus {
    Converged,
    MaxIterations,
    /// No step along the current direction admitted a forward solution.
    LineFailure,
    AdjointFailure,
}

/// Objective and gradient at one control iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    pub gradient: DVector<f64>,
}

/// A reduced optimal control problem in the flattened controls.
pub trait ShootingProblem {
    type Solution: Clone;

    fn forward(&self, controls: &DVector<f64>) -> Result<Self::Solution>;
    fn evaluate(&self, controls: &DVector<f64>, solution: &Self::Solution) -> Result<Evaluation>;

    /// Terminal state recorded for every iterate; empty unless overridden.
    fn terminal(&self, _solution: &Self::Solution) -> DVector<f64> {
        DVector::zeros(0)
    }
}

#[derive(Debug, Clone)]
pub struct OptimizationResult<S> {
    /// Best iterate found.
    pub controls: DVector<f64>,
    pub solution: S,
    pub objective: f64,
    pub gradient: DVector<f64>,
    /// One entry per evaluated iterate, the initial guess first.
    pub objective_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    /// `|u|₂` of each iterate.
    pub control_effort_history: Vec<f64>,
    /// [`ShootingProblem::terminal`] of each iterate.
    pub terminal_history: Vec<DVector<f64>>,
    pub iterations: usize,
    pub status: OptimizationStatus,
}

struct Iterate<S> {
    u: DVector<f64>,
    solution: S,
    eval: Evaluation,
}

fn converged(e: &Evaluation, tol: f64) -> bool {
    inf_norm(&e.gradient) <= tol * (1.0 + e.objective.abs())
}

/// Gradient descent with Barzilai-Borwein steps and no line search. A failed
/// forward solve halves the step; an adjoint failure stops the run.
pub fn shoot<P: ShootingProblem>(
    problem: &P,
    u_init: &DVector<f64>,
    settings: &ShootingSettings,
) -> Result<OptimizationResult<P::Solution>> {
    settings.validate()?;
    let solution = problem.forward(u_init)?;
    let eval = problem.evaluate(u_init, &solution)?;
    let first_step = settings
        .step_fallback
        .unwrap_or_else(|| 1e-3 * (1.0 + inf_norm(u_init)) / (1.0 + inf_norm(&eval.gradient)));
    let cap = settings.step_cap_factor * first_step;

    let mut objective_history = vec![eval.objective];
    let mut gradient_norm_history = vec![inf_norm(&eval.gradient)];
    let mut control_effort_history = vec![u_init.norm()];
    let mut terminal_history = vec![problem.terminal(&solution)];
    let mut curr = Iterate { u: u_init.clone(), solution, eval };
    let mut best: Option<Iterate<P::Solution>> = None;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut status = OptimizationStatus::MaxIterations;

    loop {
        let improves = best.as_ref().is_none_or(|b| curr.eval.objective < b.eval.objective);
        if converged(&curr.eval, settings.gradient_tolerance) {
            status = OptimizationStatus::Converged;
            best = Some(curr);
            break;
        }
        if objective_history.len() >= settings.max_iterations {
            if improves {
                best = Some(curr);
            }
            break;
        }
        let k = objective_history.len();
        let mut step = match &prev {
            Some((u_prev, g_prev)) => {
                bb_step(u_prev, &curr.u, g_prev, &curr.eval.gradient, settings.bb_variant, k, first_step, cap)
            }
            None => first_step,
        };
        let mut next = None;
        for _ in 0..=settings.max_halvings {
            let u = &curr.u - &curr.eval.gradient * step;
            if let Ok(sol) = problem.forward(&u) {
                next = Some((u, sol));
                break;
            }
            step *= 0.5;
        }
        let Some((u, solution)) = next else {
            status = OptimizationStatus::LineFailure;
            if improves {
                best = Some(curr);
            }
            break;
        };
        let eval = match problem.evaluate(&u, &solution) {
            Ok(e) => e,
            Err(_) => {
                status = OptimizationStatus::AdjointFailure;
                if improves {
                    best = Some(curr);
                }
                break;
            }
        };
        objective_history.push(eval.objective);
        gradient_norm_history.push(inf_norm(&eval.gradient));
        control_effort_history.push(u.norm());
        terminal_history.push(problem.terminal(&solution));
        let old = std::mem::replace(&mut curr, Iterate { u, solution, eval });
        prev = Some((old.u.clone(), old.eval.gradient.clone()));
        if improves {
            best = Some(old);
        }
    }
    let best = best.expect("at least one iterate is kept");
    Ok(OptimizationResult {
        controls: best.u,
        solution: best.solution,
        objective: best.eval.objective,
        gradient: best.eval.gradient,
        iterations: objective_history.len(),
        objective_history,
        gradient_norm_history,
        control_effort_history,
        terminal_history,
        status,
    })
}

fn split(controls: &DVector<f64>, dim_u: usize) -> Result<Vec<DVector<f64>>> {
    if dim_u == 0 || !controls.len().is_multiple_of(dim_u) {
        return Err(Error::Dimension(format!("{} controls do not split into inputs of size {dim_u}", controls.len())));
    }
    Ok(controls.as_slice().chunks(dim_u).map(DVector::from_column_slice).collect())
}

fn join(parts: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(parts.iter().map(|p| p.len()).sum(), parts.iter().flat_map(|p| p.iter().copied()))
}

/// Shooting on an unconstrained forced system.
#[derive(Debug, Clone)]
pub struct UnconstrainedShooting<S> {
    pub system: S,
    pub q0: DVector<f64>,
    pub p0: DVector<f64>,
    pub objective: OcpObjective,
    pub newton: NewtonSettings,
}

impl<S: DiscreteSystem> ShootingProblem for UnconstrainedShooting<S> {
    type Solution = Trajectory;

    fn forward(&self, controls: &DVector<f64>) -> Result<Trajectory> {
        integrate(&self.system, &self.q0, &self.p0, &split(controls, self.system.dim_u())?, &self.newton)
    }

    fn evaluate(&self, _controls: &DVector<f64>, traj: &Trajectory) -> Result<Evaluation> {
        let lambda = backward_sweep(&self.system, traj, &self.objective)?;
        let g = control_gradient(&self.system, traj, &lambda, &self.objective)?;
        Ok(Evaluation { objective: objective(traj, &self.objective)?, gradient: join(&g) })
    }

    fn terminal(&self, traj: &Trajectory) -> DVector<f64> {
        traj.q.last().cloned().unwrap_or_else(|| DVector::zeros(0))
    }
}

/// Shooting on a holonomically constrained system in null-space form.
#[derive(Debug, Clone)]
pub struct ConstrainedShooting<S> {
    pub system: S,
    pub q0: DVector<f64>,
    pub p0: DVector<f64>,
    pub objective: OcpObjective,
    pub newton: NewtonSettings,
}

impl<S: ConstrainedSystem> ShootingProblem for ConstrainedShooting<S> {
    type Solution = ConstrainedTrajectory;

    fn forward(&self, controls: &DVector<f64>) -> Result<ConstrainedTrajectory> {
        constrained_integrate(&self.system, &self.q0, &self.p0, &split(controls, self.system.dim_u())?, &self.newton)
    }

    fn evaluate(&self, _controls: &DVector<f64>, traj: &ConstrainedTrajectory) -> Result<Evaluation> {
        let lambda = constrained_backward_sweep(&self.system, traj, &self.objective)?;
        let g = constrained_control_gradient(&self.system, traj, &lambda, &self.objective)?;
        Ok(Evaluation { objective: constrained_objective(&self.system, traj, &self.objective)?, gradient: join(&g) })
    }

    fn terminal(&self, traj: &ConstrainedTrajectory) -> DVector<f64> {
        traj.q.last().cloned().unwrap_or_else(|| DVector::zeros(0))
    }
}

impl ShootingProblem for BeamOcp {
    type Solution = BeamGrid;

    fn forward(&self, controls: &DVector<f64>) -> Result<BeamGrid> {
        self.simulate(controls.as_slice())
    }

    fn evaluate(&self, controls: &DVector<f64>, grid: &BeamGrid) -> Result<Evaluation> {
        let applied = self.applied_controls(controls.as_slice());
        let adjoint = beam_backward_sweep(grid, &applied, self)?;
        let g = beam_input_gradient(grid, &adjoint, &applied, self)?;
        Ok(Evaluation { objective: beam_objective(grid, &applied, self)?, gradient: DVector::from_vec(g) })
    }

    /// Final row, eight coefficients per node.
    fn terminal(&self, grid: &BeamGrid) -> DVector<f64> {
        let row = grid.rows.last().map(Vec::as_slice).unwrap_or_default();
        DVector::from_iterator(8 * row.len(), row.iter().flat_map(|q| q.to_vector().iter().copied().collect::<Vec<_>>()))
    }
}

/// Problems whose objective weights an end momentum.
pub trait MomentumTarget: ShootingProblem {
    fn momentum_objective(&mut self) -> &mut OcpObjective;
    fn reached_momentum(&self, solution: &Self::Solution) -> Result<DVector<f64>>;
}

impl<S: DiscreteSystem> MomentumTarget for UnconstrainedShooting<S> {
    fn momentum_objective(&mut self) -> &mut OcpObjective {
        &mut self.objective
    }
    fn reached_momentum(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        Ok(final_momentum(&self.system, traj))
    }
}

impl<S: ConstrainedSystem> MomentumTarget for ConstrainedShooting<S> {
    fn momentum_objective(&mut self) -> &mut OcpObjective {
        &mut self.objective
    }
    fn reached_momentum(&self, traj: &ConstrainedTrajectory) -> Result<DVector<f64>> {
        projected_final_momentum(&self.system, traj)
    }
}

/// One outer step of the homotopy.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyStep {
    /// Target used in this solve.
    pub target: DVector<f64>,
    /// End momentum reached by its optimum.
    pub reached: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct HomotopyResult<S> {
    pub result: OptimizationResult<S>,
    pub path: Vec<HomotopyStep>,
}

/// Solves first with the momentum weight switched off, then with targets
/// `p̃ = β p_N + (1 − β) p*` built from the momentum just reached, and
/// finally with the true target `p*`. The convex combination guarantees
/// `|p_N − p̃| ≤ |p_N − p*|` at every outer step. Each solve is warm-started
/// from the previous optimum.
pub fn momentum_homotopy<P: MomentumTarget>(
    problem: &mut P,
    u_init: &DVector<f64>,
    settings: &ShootingSettings,
) -> Result<HomotopyResult<P::Solution>> {
    let h = settings.homotopy.unwrap_or_default();
    let inner = ShootingSettings { homotopy: None, ..*settings };
    let target = problem.momentum_objective().p_target.clone();
    let weight = problem.momentum_objective().s_p.clone();

    problem.momentum_objective().s_p = weight.clone() * 0.0;
    let first = shoot(problem, u_init, &inner);
    problem.momentum_objective().s_p = weight;
    let mut result = first?;
    let mut reached = problem.reached_momentum(&result.solution)?;
    let mut path = vec![HomotopyStep { target: target.clone(), reached: reached.clone() }];
    let outcome = (|| {
        for _ in 1..h.max_outer {
            if inf_norm(&(&reached - &target)) <= h.tolerance {
                return Ok(());
            }
            let modified = &reached * h.beta + &target * (1.0 - h.beta);
            problem.momentum_objective().p_target = modified.clone();
            result = shoot(problem, &result.controls, &inner)?;
            reached = problem.reached_momentum(&result.solution)?;
            path.push(HomotopyStep { target: modified, reached: reached.clone() });
        }
        problem.momentum_objective().p_target = target.clone();
        result = shoot(problem, &result.controls, &inner)?;
        reached = problem.reached_momentum(&result.solution)?;
        path.push(HomotopyStep { target: target.clone(), reached: reached.clone() });
        Ok(())
    })();
    problem.momentum_objective().p_target = target;
    outcome.map(|()| HomotopyResult { result, path })
}
