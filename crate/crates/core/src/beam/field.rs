//! Forced field DEL on a time level, Newton time stepping and energies.

use nalgebra::{DMatrix, DVector, Vector6};

use super::cell::{self, Matrix32, Vector32};
use super::{to_vectors, BeamGrid, BeamModel};
use crate::dualquat::{beam_null_space, dq_exp_tangent, unity_residual, DualQuaternion, Vector8};
use crate::error::{Error, Result};
use crate::numerics::{newton_solve_with, NewtonReport, NewtonSettings};

const UNITY_TOLERANCE: f64 = 1e-9;

/// Gradient of one cell's Lagrangian plus its damping and control forces, and
/// optionally the Jacobian of that covector.
pub(crate) struct CellTotals {
    pub grad: Vector32,
    pub jac: Option<Box<Matrix32>>,
}

fn cell_totals(model: &BeamModel, x: &[Vector8; 4], u: Option<f64>, want_jac: bool) -> CellTotals {
    let ctx = model.ctx();
    let mut jac = want_jac.then(|| Box::new(Matrix32::zeros()));
    let (_, mut grad) = cell::lagrangian_derivatives(ctx, x, jac.as_deref_mut());
    grad += cell::kelvin_voigt(ctx, x, jac.as_deref_mut());
    if let Some(u) = u.filter(|&u| u != 0.0) {
        let dj = cell::control_covector_jacobian(u, ctx.dt, ctx.ds);
        for slot in [0, 2] {
            let mut g = grad.fixed_rows_mut::<8>(8 * slot);
            g += cell::control_covector(&x[slot], u, ctx.dt, ctx.ds);
            if let Some(j) = jac.as_deref_mut() {
                let mut block = j.fixed_view_mut::<8, 8>(8 * slot, 8 * slot);
                block += dj;
            }
        }
    }
    CellTotals { grad, jac }
}

fn corners(lower: &[Vector8], upper: &[Vector8], a: usize) -> [Vector8; 4] {
    [lower[a], lower[a + 1], upper[a], upper[a + 1]]
}

/// All cells between two consecutive rows; the torque `u` acts in the cell at
/// the left end.
pub(crate) fn evaluate_level(
    model: &BeamModel,
    lower: &[Vector8],
    upper: &[Vector8],
    u: Option<f64>,
    want_jac: bool,
) -> Vec<CellTotals> {
    (0..model.segments())
        .map(|a| cell_totals(model, &corners(lower, upper, a), if a == 0 { u } else { None }, want_jac))
        .collect()
}

/// Ambient residual of a row: slots 1, 2 of the cells above it and slots 3, 4
/// of the cells below it.
pub(crate) fn row_residual(above: Option<&[CellTotals]>, below: Option<&[CellTotals]>, nodes: usize) -> Vec<Vector8> {
    let mut s = vec![Vector8::zeros(); nodes];
    if let Some(cells) = above {
        for (a, c) in cells.iter().enumerate() {
            s[a] += c.grad.fixed_rows::<8>(0);
            s[a + 1] += c.grad.fixed_rows::<8>(8);
        }
    }
    if let Some(cells) = below {
        for (a, c) in cells.iter().enumerate() {
            s[a] += c.grad.fixed_rows::<8>(16);
            s[a + 1] += c.grad.fixed_rows::<8>(24);
        }
    }
    s
}

/// Ambient Jacobian block of a level: rows from slot pair `rows` (0 for the
/// lower row, 2 for the upper one) against columns from slot pair `cols`.
pub(crate) fn level_block(cells: &[CellTotals], rows: usize, cols: usize, nodes: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(8 * nodes, 8 * nodes);
    for (a, c) in cells.iter().enumerate() {
        let jac = c.jac.as_ref().expect("level evaluated with Jacobians");
        let sub = jac.view((8 * rows, 8 * cols), (16, 16));
        let mut target = m.view_mut((8 * a, 8 * a), (16, 16));
        target += sub;
    }
    m
}

/// Block-diagonal `T = diag(P̃(q_a)[:, dofs_a])`.
pub(crate) fn row_projection(model: &BeamModel, row: &[Vector8]) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(8 * row.len(), model.row_dofs());
    let mut col = 0;
    for (a, x) in row.iter().enumerate() {
        let p = beam_null_space(&DualQuaternion::from_vector(x));
        for &d in model.node_dofs(a) {
            t.view_mut((8 * a, col), (8, 1)).copy_from(&p.column(d));
            col += 1;
        }
    }
    t
}

fn flatten(s: &[Vector8]) -> DVector<f64> {
    DVector::from_iterator(8 * s.len(), s.iter().flat_map(|v| v.iter().copied()))
}

/// Projected initial momenta `w_a (p_a⁰)_*` restricted to the free directions.
fn momentum_term(model: &BeamModel, momenta: &[Vector6<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(model.row_dofs());
    let mut i = 0;
    for (a, p) in momenta.iter().enumerate() {
        for &d in model.node_dofs(a) {
            out[i] = model.node_weight(a) * p[d];
            i += 1;
        }
    }
    out
}

fn retract(model: &BeamModel, row: &[Vector8], delta: &DVector<f64>) -> Vec<Vector8> {
    let mut i = 0;
    row.iter()
        .enumerate()
        .map(|(a, x)| {
            let dofs = model.node_dofs(a);
            if dofs.is_empty() {
                return *x;
            }
            let mut xi = Vector6::zeros();
            for &d in dofs {
                xi[d] = delta[i];
                i += 1;
            }
            (DualQuaternion::from_vector(x) * dq_exp_tangent(&xi)).to_vector()
        })
        .collect()
}

/// Newton solve of one row's projected DEL for the next row, with the
/// right-multiplicative update `q ← q exp(½ ξ̂)`.
fn solve_next_row(
    model: &BeamModel,
    curr: &[Vector8],
    below: Option<&[CellTotals]>,
    constant: Option<&DVector<f64>>,
    u: Option<f64>,
    guess: Vec<Vector8>,
    settings: &NewtonSettings,
) -> Result<(Vec<Vector8>, NewtonReport)> {
    let nodes = model.nodes();
    let t_curr = row_projection(model, curr);
    let fixed = {
        let s = row_residual(None, below, nodes);
        let mut r = t_curr.tr_mul(&flatten(&s));
        if let Some(c) = constant {
            r += c;
        }
        r
    };
    newton_solve_with(
        guess,
        |next: &Vec<Vector8>| {
            let cells = evaluate_level(model, curr, next, u, false);
            Ok(&fixed + t_curr.tr_mul(&flatten(&row_residual(Some(&cells), None, nodes))))
        },
        |next: &Vec<Vector8>| {
            let cells = evaluate_level(model, curr, next, u, true);
            let d = level_block(&cells, 0, 2, nodes);
            Ok(t_curr.tr_mul(&(d * row_projection(model, next))))
        },
        |next: &Vec<Vector8>, delta: &DVector<f64>| retract(model, next, delta),
        settings,
    )
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub row: Vec<DualQuaternion>,
    pub report: NewtonReport,
}

fn check_row(model: &BeamModel, row: &[DualQuaternion], step: usize) -> Result<()> {
    if row.len() != model.nodes() {
        return Err(Error::Dimension(format!("beam row has {} nodes, model has {}", row.len(), model.nodes())));
    }
    for (node, q) in row.iter().enumerate() {
        let (c1, c2) = unity_residual(q);
        let residual = c1.abs().max(c2.abs());
        if !(residual <= UNITY_TOLERANCE) {
            return Err(Error::UnityViolation { node, step, residual });
        }
    }
    Ok(())
}

/// Row 1 from the initial row and the initial temporal momenta.
pub fn beam_first_step(
    model: &BeamModel,
    row0: &[DualQuaternion],
    momenta: &[Vector6<f64>],
    u0: f64,
    settings: &NewtonSettings,
) -> Result<StepOutcome> {
    check_row(model, row0, 0)?;
    if momenta.len() != model.nodes() {
        return Err(Error::Dimension(format!("{} initial momenta for {} nodes", momenta.len(), model.nodes())));
    }
    let curr = to_vectors(row0);
    let p = momentum_term(model, momenta);
    let (next, report) = solve_next_row(model, &curr, None, Some(&p), Some(u0), curr.clone(), settings)?;
    Ok(StepOutcome { row: next.iter().map(DualQuaternion::from_vector).collect(), report })
}

/// Row `n + 1` from rows `n − 1` and `n`; `u_prev`, `u_curr` are the torques
/// of the intervals ending and starting at row `n`.
pub fn beam_step(
    model: &BeamModel,
    prev: &[DualQuaternion],
    curr: &[DualQuaternion],
    u_prev: f64,
    u_curr: f64,
    settings: &NewtonSettings,
) -> Result<StepOutcome> {
    check_row(model, prev, 0)?;
    check_row(model, curr, 0)?;
    let (pv, cv) = (to_vectors(prev), to_vectors(curr));
    let below = evaluate_level(model, &pv, &cv, Some(u_prev), false);
    // constant body-frame velocity predictor, projected back onto unity so
    // rounding is not amplified from step to step
    let guess = prev
        .iter()
        .zip(curr)
        .enumerate()
        .map(|(a, (p, c))| match model.node_dofs(a).is_empty() {
            true => Ok(c.to_vector()),
            false => (*c * (p.conj() * *c)).normalized().map(|q| q.to_vector()),
        })
        .collect::<Result<_>>()?;
    let (next, report) = solve_next_row(model, &cv, Some(&below), None, Some(u_curr), guess, settings)?;
    Ok(StepOutcome { row: next.iter().map(DualQuaternion::from_vector).collect(), report })
}

/// Forward simulation over `controls.len()` steps; `controls[n]` is the torque
/// of interval `n`.
pub fn simulate(
    model: &BeamModel,
    row0: &[DualQuaternion],
    momenta: &[Vector6<f64>],
    controls: &[f64],
    settings: &NewtonSettings,
) -> Result<BeamGrid> {
    settings.validate()?;
    check_row(model, row0, 0)?;
    let mut rows = vec![row0.to_vec()];
    if let Some(&u0) = controls.first() {
        let first = beam_first_step(model, row0, momenta, u0, settings).map_err(|e| e.at_step(0))?;
        check_row(model, &first.row, 1)?;
        rows.push(first.row);
    }
    for n in 1..controls.len() {
        let out = beam_step(model, &rows[n - 1], &rows[n], controls[n - 1], controls[n], settings)
            .map_err(|e| e.at_step(n))?;
        check_row(model, &out.row, n + 1)?;
        rows.push(out.row);
    }
    BeamGrid::new(model.dt(), model.ds(), rows)
}

fn grid_matches(grid: &BeamGrid, model: &BeamModel) -> Result<()> {
    if grid.segments() != model.segments() {
        return Err(Error::GridMismatch(format!("grid has {} segments, model {}", grid.segments(), model.segments())));
    }
    Ok(())
}

fn cell_corners(grid: &BeamGrid, model: &BeamModel, a: usize, n: usize) -> Result<[Vector8; 4]> {
    grid_matches(grid, model)?;
    if a >= model.segments() || n + 1 >= grid.rows.len() {
        return Err(Error::IndexOutOfRange(format!("cell ({a}, {n}) outside the grid")));
    }
    Ok([grid.rows[n][a], grid.rows[n][a + 1], grid.rows[n + 1][a], grid.rows[n + 1][a + 1]].map(|q| q.to_vector()))
}

/// Body velocities `Ω̃ = 2 q̄ q̇` and curvatures `K̃ = 2 q̄ q′` at the four
/// corners of a cell, from the forward differences of the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRates {
    pub omega: [Vector8; 4],
    pub curvature: [Vector8; 4],
}

pub fn discrete_rates(grid: &BeamGrid, model: &BeamModel, a: usize, n: usize) -> Result<CellRates> {
    let x = cell_corners(grid, model, a, n)?;
    Ok(CellRates {
        omega: std::array::from_fn(|c| cell::velocity(c, model.dt()).value(&x) * 2.0),
        curvature: std::array::from_fn(|c| cell::strain(c, model.ds()).value(&x) * 2.0),
    })
}

pub fn cell_lagrangian(grid: &BeamGrid, model: &BeamModel, a: usize, n: usize) -> Result<f64> {
    Ok(cell::lagrangian_value(model.ctx(), &cell_corners(grid, model, a, n)?))
}

/// Kelvin-Voigt covectors on the four corners of a cell.
pub fn kelvin_voigt_forces(grid: &BeamGrid, model: &BeamModel, a: usize, n: usize) -> Result<[Vector8; 4]> {
    let f = cell::kelvin_voigt(model.ctx(), &cell_corners(grid, model, a, n)?, None);
    Ok(std::array::from_fn(|c| f.fixed_rows::<8>(8 * c).into_owned()))
}

/// Boundary torque covector at node `q`: `L_qᵀ f = 2 Δt Δs u k`.
pub fn control_force_boundary(q: &DualQuaternion, u: f64, dt: f64, ds: f64) -> Vector8 {
    cell::control_covector(&q.to_vector(), u, dt, ds)
}

/// `P̃ᵀ(q_a^n)` applied to all cell and force contributions at a node, for
/// `0 ≤ n ≤ N − 1`. Row 0 carries `w_a (p_a⁰)_*` when momenta are given.
fn node_residual(
    grid: &BeamGrid,
    model: &BeamModel,
    controls: &[f64],
    momenta: Option<&[Vector6<f64>]>,
    a: usize,
    n: usize,
) -> Result<Vector6<f64>> {
    grid_matches(grid, model)?;
    if a > model.segments() || n + 1 >= grid.rows.len() {
        return Err(Error::IndexOutOfRange(format!("node ({a}, {n}) has no residual on this grid")));
    }
    if controls.len() + 1 < grid.rows.len() {
        return Err(Error::Dimension(format!("{} controls for {} steps", controls.len(), grid.steps())));
    }
    let rows: Vec<Vec<Vector8>> = grid.rows.iter().map(|r| to_vectors(r)).collect();
    let above = evaluate_level(model, &rows[n], &rows[n + 1], Some(controls[n]), false);
    let below = (n > 0).then(|| evaluate_level(model, &rows[n - 1], &rows[n], Some(controls[n - 1]), false));
    let s = row_residual(Some(&above), below.as_deref(), model.nodes());
    let mut r = beam_null_space(&grid.rows[n][a]).tr_mul(&s[a]);
    if let (0, Some(p)) = (n, momenta) {
        r += p[a] * model.node_weight(a);
    }
    Ok(r)
}

/// Projected field DEL at an interior node `1 ≤ a ≤ A − 1`, `1 ≤ n ≤ N − 1`.
pub fn field_del_residual(
    grid: &BeamGrid,
    model: &BeamModel,
    controls: &[f64],
    a: usize,
    n: usize,
) -> Result<Vector6<f64>> {
    if a == 0 || a >= model.segments() || n == 0 {
        return Err(Error::IndexOutOfRange(format!("({a}, {n}) is not an interior node")));
    }
    node_residual(grid, model, controls, None, a, n)
}

/// Projected DEL at a spatial end (`a ∈ {0, A}`) or on the initial row, where
/// only the existing cells contribute. On a pinned end only the first three
/// (rotational) components are equations.
pub fn boundary_del_residual(
    grid: &BeamGrid,
    model: &BeamModel,
    controls: &[f64],
    momenta: &[Vector6<f64>],
    a: usize,
    n: usize,
) -> Result<Vector6<f64>> {
    if !(a == 0 || a == model.segments() || n == 0) {
        return Err(Error::IndexOutOfRange(format!("({a}, {n}) is an interior node")));
    }
    if momenta.len() != model.nodes() {
        return Err(Error::Dimension(format!("{} initial momenta for {} nodes", momenta.len(), model.nodes())));
    }
    node_residual(grid, model, controls, Some(momenta), a, n)
}

/// Energy split over one time interval, from the same corner terms as the
/// discrete Lagrangian (physical weights only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamEnergy {
    /// Interval midpoint.
    pub t: f64,
    pub kinetic_translational: f64,
    pub kinetic_rotational: f64,
    pub potential: f64,
    pub gravitational: f64,
    pub deformation: f64,
    pub total: f64,
}

impl BeamEnergy {
    pub fn kinetic(&self) -> f64 {
        self.kinetic_translational + self.kinetic_rotational
    }
}

/// Energies between rows `n` and `n + 1`.
pub fn beam_energies(model: &BeamModel, lower: &[DualQuaternion], upper: &[DualQuaternion], t: f64) -> BeamEnergy {
    let ctx = model.ctx();
    let (lo, up) = (to_vectors(lower), to_vectors(upper));
    let mut inertia = ctx.inertia;
    let mut stiffness = ctx.stiffness;
    for i in [0, 4] {
        inertia[i] = 0.0;
        stiffness[i] = 0.0;
    }
    let (mut rot, mut trans, mut elastic, mut grav) = (0.0, 0.0, 0.0, 0.0);
    for a in 0..model.segments() {
        let x = corners(&lo, &up, a);
        for c in 0..4 {
            let v = cell::velocity(c, ctx.dt).value(&x);
            let wv = inertia.component_mul(&v);
            rot += 2.0 * v.fixed_rows::<4>(0).dot(&wv.fixed_rows::<4>(0));
            trans += 2.0 * v.fixed_rows::<4>(4).dot(&wv.fixed_rows::<4>(4));
            let e = cell::strain(c, ctx.ds).value(&x) - ctx.kappa_ref;
            elastic += 2.0 * e.dot(&stiffness.component_mul(&e));
            grav += cell::potential(ctx, &x[c]);
        }
    }
    let w = 0.25 * ctx.ds;
    let (rot, trans, elastic, grav) = (w * rot, w * trans, w * elastic, w * grav);
    BeamEnergy {
        t,
        kinetic_translational: trans,
        kinetic_rotational: rot,
        potential: elastic + grav,
        gravitational: grav,
        deformation: elastic,
        total: trans + rot + elastic + grav,
    }
}

/// Energies of every interval of a grid.
pub fn grid_energies(model: &BeamModel, grid: &BeamGrid) -> Vec<BeamEnergy> {
    grid.rows
        .windows(2)
        .enumerate()
        .map(|(n, w)| beam_energies(model, &w[0], &w[1], (n as f64 + 0.5) * grid.dt))
        .collect()
}
