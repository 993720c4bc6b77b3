//! Boundary-torque optimal control of the beam: objective, discrete adjoint
//! over time slices and the input gradient.
//!
//! The adjoint is the transpose of the linearized stack of projected row
//! equations `F_k(q_{k-1}, q_k, q_{k+1}; u) = 0`, differentiated in the local
//! coordinates `q ← q exp(½ ξ̂)` restricted to the free directions of each
//! node. Row `k` couples to rows `k ± 1` only, so the sweep solves one
//! `6(A+1)`-sized system per row, backward in time.

use nalgebra::{DMatrix, DVector, Vector6};

use crate::beam::{
    control_covector, evaluate_level, level_block, row_projection, row_residual, simulate, to_vectors, BeamGrid,
    BeamModel, CellTotals,
};
use crate::dualquat::{beam_null_space, DualQuaternion, Vector8};
use crate::error::{Error, Result};
use crate::numerics::{solve_transposed, NewtonSettings};

/// `J = S_q Σ_a |q_a^N − (q_a^N)_*|² + Σ_n ½ R u_n²`, with the first torque
/// held at `first_control`.
#[derive(Debug, Clone)]
pub struct BeamOcp {
    pub model: BeamModel,
    pub initial_row: Vec<DualQuaternion>,
    pub initial_momenta: Vec<Vector6<f64>>,
    pub target_row: Vec<DualQuaternion>,
    pub s_q: f64,
    pub r: f64,
    pub first_control: f64,
    pub newton: NewtonSettings,
}

impl BeamOcp {
    /// Hanging-to-upright swing-up about the pinned left end, starting at rest.
    pub fn swing_up(model: BeamModel, s_q: f64, r: f64, first_control: f64) -> Result<Self> {
        use crate::dualquat::from_screw;
        use nalgebra::Vector3;
        let half = std::f64::consts::FRAC_PI_2;
        let initial_row = model.rigid_row(&from_screw(-half, &Vector3::z(), &Vector3::zeros())?);
        let target_row = model.rigid_row(&from_screw(half, &Vector3::z(), &Vector3::zeros())?);
        let initial_momenta = model.rest_momenta();
        let ocp = Self {
            model,
            initial_row,
            initial_momenta,
            target_row,
            s_q,
            r,
            first_control,
            newton: NewtonSettings { residual_tolerance: 1e-10, ..Default::default() },
        };
        ocp.validate()?;
        Ok(ocp)
    }

    pub fn validate(&self) -> Result<()> {
        let nodes = self.model.nodes();
        if self.initial_row.len() != nodes || self.initial_momenta.len() != nodes || self.target_row.len() != nodes {
            return Err(Error::Dimension(format!("beam OCP rows must have {nodes} nodes")));
        }
        if !(self.s_q >= 0.0) || !(self.r >= 0.0) {
            return Err(Error::Config("S_q and R must be non-negative".into()));
        }
        if !self.first_control.is_finite() {
            return Err(Error::Config("first control must be finite".into()));
        }
        self.newton.validate()
    }

    /// The controls actually applied: `controls` with the first entry replaced
    /// by the fixed value.
    pub fn applied_controls(&self, controls: &[f64]) -> Vec<f64> {
        let mut u = controls.to_vec();
        if let Some(u0) = u.first_mut() {
            *u0 = self.first_control;
        }
        u
    }

    pub fn simulate(&self, controls: &[f64]) -> Result<BeamGrid> {
        simulate(&self.model, &self.initial_row, &self.initial_momenta, &self.applied_controls(controls), &self.newton)
    }
}

fn terminal_mismatch(grid: &BeamGrid, ocp: &BeamOcp) -> Result<Vec<Vector8>> {
    let last = grid.rows.last().ok_or_else(|| Error::GridMismatch("empty grid".into()))?;
    if last.len() != ocp.target_row.len() {
        return Err(Error::GridMismatch(format!("{} terminal nodes, target has {}", last.len(), ocp.target_row.len())));
    }
    Ok(last.iter().zip(&ocp.target_row).map(|(q, t)| q.to_vector() - t.to_vector()).collect())
}

fn check_controls(grid: &BeamGrid, controls: &[f64]) -> Result<()> {
    if controls.len() != grid.steps() {
        return Err(Error::GridMismatch(format!("{} controls for {} steps", controls.len(), grid.steps())));
    }
    Ok(())
}

/// Objective of a forward solution; `controls` are taken as given, including
/// the first entry.
pub fn beam_objective(grid: &BeamGrid, controls: &[f64], ocp: &BeamOcp) -> Result<f64> {
    check_controls(grid, controls)?;
    let mayer: f64 = terminal_mismatch(grid, ocp)?.iter().map(|d| d.norm_squared()).sum();
    let effort: f64 = controls.iter().map(|u| 0.5 * ocp.r * u * u).sum();
    Ok(ocp.s_q * mayer + effort)
}

/// `Σ_a |q_a^N − (q_a^N)_*|`, the distance of the terminal row to the target.
pub fn terminal_distance(grid: &BeamGrid, ocp: &BeamOcp) -> Result<f64> {
    Ok(terminal_mismatch(grid, ocp)?.iter().map(|d| d.norm()).sum())
}

/// `Σ_a |q_a − r_a|` between two terminal rows.
pub fn row_distance(a: &[DualQuaternion], b: &[DualQuaternion]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.to_vector() - q.to_vector()).norm()).sum()
}

fn flatten(s: &[Vector8]) -> DVector<f64> {
    DVector::from_iterator(8 * s.len(), s.iter().flat_map(|v| v.iter().copied()))
}

/// Derivative of `T(q)ᵀ s` with respect to the local coordinates of the row,
/// `s` held fixed. Block-diagonal; the column for direction `m` of node `a` is
/// `P̃(P̃(q_a) e_m)[:, dofs]ᵀ s_a`, using that `P̃` is linear in its argument.
fn projection_derivative(model: &BeamModel, row: &[Vector8], s: &[Vector8]) -> DMatrix<f64> {
    let k = model.row_dofs();
    let mut out = DMatrix::zeros(k, k);
    let mut offset = 0;
    for (a, x) in row.iter().enumerate() {
        let dofs = model.node_dofs(a);
        let p = beam_null_space(&DualQuaternion::from_vector(x));
        for (j, &m) in dofs.iter().enumerate() {
            let dq = DualQuaternion::from_vector(&Vector8::from_iterator(p.column(m).iter().copied()));
            let g = beam_null_space(&dq).tr_mul(&s[a]);
            for (i, &d) in dofs.iter().enumerate() {
                out[(offset + i, offset + j)] = g[d];
            }
        }
        offset += dofs.len();
    }
    out
}

/// Adjoint field: `lambda[n]` holds the multiplier of the row-`n` equation,
/// one 6-vector per node, zero in constrained directions. Rows `0..N−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamAdjoint {
    pub lambda: Vec<Vec<Vector6<f64>>>,
    packed: Vec<DVector<f64>>,
}

impl BeamAdjoint {
    fn new(model: &BeamModel, packed: Vec<DVector<f64>>) -> Self {
        let lambda = packed
            .iter()
            .map(|v| {
                let mut i = 0;
                (0..model.nodes())
                    .map(|a| {
                        let mut l = Vector6::zeros();
                        for &d in model.node_dofs(a) {
                            l[d] = v[i];
                            i += 1;
                        }
                        l
                    })
                    .collect()
            })
            .collect();
        Self { lambda, packed }
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().map(|v| v.amax()).fold(0.0, f64::max)
    }
}

fn level(model: &BeamModel, rows: &[Vec<Vector8>], controls: &[f64], n: usize) -> Vec<CellTotals> {
    evaluate_level(model, &rows[n], &rows[n + 1], Some(controls[n]), true)
}

/// Backward sweep on a converged forward solution. `controls` must be the
/// applied controls of that solution.
pub fn beam_backward_sweep(grid: &BeamGrid, controls: &[f64], ocp: &BeamOcp) -> Result<BeamAdjoint> {
    check_controls(grid, controls)?;
    let model = &ocp.model;
    let steps = grid.steps();
    if steps == 0 {
        return Ok(BeamAdjoint::new(model, Vec::new()));
    }
    let nodes = model.nodes();
    let rows: Vec<Vec<Vector8>> = grid.rows.iter().map(|r| to_vectors(r)).collect();
    let projections: Vec<DMatrix<f64>> = rows.iter().map(|r| row_projection(model, r)).collect();
    let k = model.row_dofs();
    let mut packed = vec![DVector::zeros(k); steps];

    // terminal row: A_Nᵀ λ_{N−1} = −T_Nᵀ ∇J
    let grad_j: Vec<Vector8> = terminal_mismatch(grid, ocp)?.iter().map(|d| d * (2.0 * ocp.s_q)).collect();
    let rhs = -projections[steps].tr_mul(&flatten(&grad_j));
    let mut upper = level(model, &rows, controls, steps - 1);
    let a_n = projections[steps - 1].tr_mul(&(level_block(&upper, 0, 2, nodes) * &projections[steps]));
    packed[steps - 1] = solve_transposed(&a_n, &rhs).map_err(|e| e.at_step(steps))?;

    // rows j = N−1 .. 1: A_jᵀ λ_{j−1} = −B_jᵀ λ_j − C_jᵀ λ_{j+1}
    for j in (1..steps).rev() {
        let lower = level(model, &rows, controls, j - 1);
        let t = &projections[j];
        let s = row_residual(Some(&upper), Some(&lower), nodes);
        let diag = level_block(&upper, 0, 0, nodes) + level_block(&lower, 2, 2, nodes);
        let b = t.tr_mul(&(diag * t)) + projection_derivative(model, &rows[j], &s);
        let mut rhs = -b.tr_mul(&packed[j]);
        if j + 1 < steps {
            let c = projections[j + 1].tr_mul(&(level_block(&upper, 2, 0, nodes) * t));
            rhs -= c.tr_mul(&packed[j + 1]);
        }
        let a = projections[j - 1].tr_mul(&(level_block(&lower, 0, 2, nodes) * t));
        packed[j - 1] = solve_transposed(&a, &rhs).map_err(|e| e.at_step(j))?;
        upper = lower;
    }
    Ok(BeamAdjoint::new(model, packed))
}

/// `g_n = R u_n + λ_nᵀ T_nᵀ ∂_u f¹ + λ_{n+1}ᵀ T_{n+1}ᵀ ∂_u f³`, the second term
/// absent for the last interval; `g_0 = 0` since the first torque is fixed.
pub fn beam_input_gradient(grid: &BeamGrid, adjoint: &BeamAdjoint, controls: &[f64], ocp: &BeamOcp) -> Result<Vec<f64>> {
    check_controls(grid, controls)?;
    let steps = grid.steps();
    if adjoint.packed.len() != steps {
        return Err(Error::GridMismatch(format!("{} adjoint rows for {} steps", adjoint.packed.len(), steps)));
    }
    let model = &ocp.model;
    let (dt, ds) = (model.dt(), model.ds());
    // sensitivity of row n's equation to a unit torque acting at node 0
    let source = |n: usize| -> f64 {
        let x = grid.rows[n][0].to_vector();
        let f = control_covector(&x, 1.0, dt, ds);
        let p = beam_null_space(&grid.rows[n][0]);
        model.node_dofs(0).iter().enumerate().map(|(i, &d)| adjoint.packed[n][i] * p.column(d).dot(&f)).sum()
    };
    Ok((0..steps)
        .map(|n| {
            if n == 0 {
                return 0.0;
            }
            let mut g = ocp.r * controls[n] + source(n);
            if n + 1 < steps {
                g += source(n + 1);
            }
            g
        })
        .collect())
}

/// Everything one optimizer iteration needs.
#[derive(Debug, Clone)]
pub struct BeamEvaluation {
    pub objective: f64,
    pub gradient: Vec<f64>,
    pub grid: BeamGrid,
    pub adjoint: BeamAdjoint,
    pub controls: Vec<f64>,
}

/// Forward solve, backward sweep and input gradient.
pub fn beam_gradient(ocp: &BeamOcp, controls: &[f64]) -> Result<BeamEvaluation> {
    let applied = ocp.applied_controls(controls);
    let grid = ocp.simulate(&applied)?;
    let objective = beam_objective(&grid, &applied, ocp)?;
    let adjoint = beam_backward_sweep(&grid, &applied, ocp)?;
    let gradient = beam_input_gradient(&grid, &adjoint, &applied, ocp)?;
    Ok(BeamEvaluation { objective, gradient, grid, adjoint, controls: applied })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beam::{BeamMaterial, BoundaryCondition};
    use proptest::prelude::*;

    fn micro(segments: usize, left: BoundaryCondition, r: f64) -> BeamOcp {
        let mat = BeamMaterial::square(0.05, 50000.0, 0.35, 1000.0, 0.1, 0.01);
        let model = BeamModel::new(mat, 1.0, segments, 1e-2, left, BoundaryCondition::Free).unwrap();
        let mut ocp = BeamOcp::swing_up(model, 1e2, r, 4.0).unwrap();
        ocp.newton.residual_tolerance = 1e-13;
        ocp
    }

    fn reduced(ocp: &BeamOcp, u: &[f64]) -> f64 {
        let applied = ocp.applied_controls(u);
        beam_objective(&ocp.simulate(&applied).unwrap(), &applied, ocp).unwrap()
    }

    #[test]
    fn target_reached_gives_a_null_sweep() {
        // a row at rest with the target equal to the reached terminal row
        let mut ocp = micro(2, BoundaryCondition::Pinned, 0.0);
        ocp.first_control = 0.0;
        let controls = [0.0, 0.0, 0.0];
        let grid = ocp.simulate(&controls).unwrap();
        ocp.target_row = grid.rows.last().unwrap().clone();
        let adjoint = beam_backward_sweep(&grid, &controls, &ocp).unwrap();
        assert!(adjoint.max_abs() < 1e-10);
        let g = beam_input_gradient(&grid, &adjoint, &controls, &ocp).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
        assert_eq!(beam_objective(&grid, &controls, &ocp).unwrap(), 0.0);
    }

    #[test]
    fn first_control_is_held_fixed() {
        let ocp = micro(2, BoundaryCondition::Pinned, 1e-3);
        let eval = beam_gradient(&ocp, &[100.0, 1.0, 2.0]).unwrap();
        assert_eq!(eval.controls[0], 4.0);
        assert_eq!(eval.gradient[0], 0.0);
        assert_eq!(eval.adjoint.lambda.len(), 3);
        // pinned end: no translational multipliers at node 0
        for row in &eval.adjoint.lambda {
            assert_eq!(row[0].fixed_rows::<3>(3).amax(), 0.0);
        }
    }

    #[test]
    fn single_interval_gradient_vanishes() {
        let ocp = micro(2, BoundaryCondition::Pinned, 1e-3);
        let eval = beam_gradient(&ocp, &[1.0]).unwrap();
        assert_eq!(eval.gradient, vec![0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(6))]

        #[test]
        fn gradient_matches_finite_differences(
            segments in 1usize..=3,
            steps in 2usize..=4,
            pinned in any::<bool>(),
            r in prop_oneof![Just(0.0), 1e-3..1e-1f64],
            seed in prop::collection::vec(-6.0..6.0f64, 4),
        ) {
            let left = if pinned { BoundaryCondition::Pinned } else { BoundaryCondition::Free };
            let ocp = micro(segments, left, r);
            let u: Vec<f64> = seed[..steps].to_vec();
            let eval = beam_gradient(&ocp, &u).unwrap();
            // fourth-order differences keep the oracle well above solver noise
            let eps = 1e-3 * (1.0 + eval.controls.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let fd: Vec<f64> = (0..steps)
                .map(|n| {
                    let at = |k: f64| {
                        let mut u = eval.controls.clone();
                        u[n] += k * eps;
                        reduced(&ocp, &u)
                    };
                    (8.0 * (at(1.0) - at(-1.0)) - (at(2.0) - at(-2.0))) / (12.0 * eps)
                })
                .collect();
            let gmax = fd[1..].iter().fold(1e-8f64, |m, v| m.max(v.abs()));
            for (n, (g, f)) in eval.gradient.iter().zip(&fd).enumerate().skip(1) {
                let err = (g - f).abs() / f.abs().max(1e-3 * gmax);
                prop_assert!(err <= 1e-5, "n {}: adjoint {} fd {}", n, g, f);
            }
        }
    }
}
