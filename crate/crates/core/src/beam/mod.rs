//! Geometrically exact beam as a constrained Lagrangian field theory on unit
//! dual quaternions, discretized on a regular spacetime grid.
//!
//! Grid rows are time levels `n = 0..=N`, each holding the `A + 1` nodes
//! `a = 0..=A`. The cell `(a, n)` has the four corners
//! `1 = (a, n)`, `2 = (a + 1, n)`, `3 = (a, n + 1)`, `4 = (a + 1, n + 1)`;
//! in code the corners are the slots `0..4`.

mod cell;
mod field;

use nalgebra::{Matrix4, Vector3, Vector4, Vector6};

pub use field::{
    beam_energies, beam_first_step, beam_step, boundary_del_residual, cell_lagrangian, control_force_boundary,
    discrete_rates, field_del_residual, grid_energies, kelvin_voigt_forces, simulate, BeamEnergy, CellRates,
    StepOutcome,
};

pub(crate) use cell::control_covector;
pub(crate) use field::{evaluate_level, level_block, row_projection, row_residual, CellTotals};

use crate::dualquat::{from_screw, DualQuaternion, Matrix8, Vector8};
use crate::error::{Error, Result};

use cell::CellContext;

#[derive(Debug, Clone, PartialEq)]
pub struct BeamMaterial {
    /// Young's modulus.
    pub e: f64,
    pub g_shear: f64,
    pub nu: f64,
    pub rho: f64,
    pub a_cross: f64,
    pub i2: f64,
    pub i3: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    /// Shear viscosity.
    pub eta: f64,
    /// Bulk viscosity.
    pub zeta: f64,
    /// Weights of the scalar components of the ambient forms; they only act
    /// off the unit dual quaternions.
    pub alpha: [f64; 4],
    pub gravity: Vector3<f64>,
}

impl BeamMaterial {
    /// Square cross-section of the given side, isotropic shear modulus, unit
    /// shear correction, gravity `−9.81 e2`.
    pub fn square(side: f64, e: f64, nu: f64, rho: f64, eta: f64, zeta: f64) -> Self {
        let a_cross = side * side;
        let i = side.powi(4) / 12.0;
        Self {
            e,
            g_shear: e / (2.0 * (1.0 + nu)),
            nu,
            rho,
            a_cross,
            i2: i,
            i3: i,
            kappa2: 1.0,
            kappa3: 1.0,
            eta,
            zeta,
            alpha: [0.0; 4],
            gravity: Vector3::new(0.0, -9.81, 0.0),
        }
    }

    pub fn without_gravity(mut self) -> Self {
        self.gravity = Vector3::zeros();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("E", self.e), ("rho", self.rho), ("A_cross", self.a_cross)];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("beam material {name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("I2", self.i2),
            ("I3", self.i3),
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("eta", self.eta),
            ("zeta", self.zeta),
            ("G", self.g_shear),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("beam material {name} must be non-negative, got {v}")));
            }
        }
        let g = self.e / (2.0 * (1.0 + self.nu));
        if (self.g_shear - g).abs() > 1e-12 * g {
            return Err(Error::Config(format!("shear modulus {} differs from E/(2(1+nu)) = {g}", self.g_shear)));
        }
        Ok(())
    }

    /// Extensional viscosity `ζ(3 − E/G)² + η(E/G)²/3`.
    pub fn chi(&self) -> f64 {
        let r = self.e / self.g_shear;
        self.zeta * (3.0 - r).powi(2) + self.eta * r * r / 3.0
    }
}

/// Diagonal section matrices of the ambient Lagrangian and the damping.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionMatrices {
    pub jtilde: Matrix4<f64>,
    pub rhotilde: Matrix4<f64>,
    pub c1tilde: Matrix4<f64>,
    pub c2tilde: Matrix4<f64>,
    pub dtilde: Matrix8,
}

impl SectionMatrices {
    /// Diagonal of `diag(J̃, ρ̃)`.
    pub fn inertia_weights(&self) -> Vector8 {
        stack(&self.jtilde.diagonal(), &self.rhotilde.diagonal())
    }

    /// Diagonal of `diag(C̃₁, C̃₂)`.
    pub fn stiffness_weights(&self) -> Vector8 {
        stack(&self.c1tilde.diagonal(), &self.c2tilde.diagonal())
    }
}

fn stack(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector8 {
    Vector8::from_iterator(a.iter().chain(b.iter()).copied())
}

pub fn section_matrices(mat: &BeamMaterial) -> SectionMatrices {
    let (rho, a, i2, i3) = (mat.rho, mat.a_cross, mat.i2, mat.i3);
    let (e, g) = (mat.e, mat.g_shear);
    let chi = mat.chi();
    let [a1, a2, a3, a4] = mat.alpha;
    SectionMatrices {
        // 𝕁 = ρ diag(J₁, J₂, J₃) with J₁ = ρ(I₂ + I₃), J₂ = ρI₂, J₃ = ρI₃, taken as written
        jtilde: Matrix4::from_diagonal(&Vector4::new(a1, rho * rho * (i2 + i3), rho * rho * i2, rho * rho * i3)),
        rhotilde: Matrix4::from_diagonal(&Vector4::new(a2, rho * a, rho * a, rho * a)),
        c1tilde: Matrix4::from_diagonal(&Vector4::new(a3, g * (i2 + i3), e * i2, e * i3)),
        c2tilde: Matrix4::from_diagonal(&Vector4::new(a4, e * a, mat.kappa2 * g * a, mat.kappa3 * g * a)),
        dtilde: Matrix8::from_diagonal(&Vector8::from_column_slice(&[
            0.0,
            mat.eta * (i2 + i3),
            chi * i2,
            chi * i3,
            0.0,
            chi * a,
            mat.eta * a,
            mat.eta * a,
        ])),
    }
}

/// Kinematic condition at a spatial end of the beam.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Position and orientation free.
    Free,
    /// Position fixed, orientation free.
    Pinned,
    /// Position and orientation fixed.
    Clamped,
}

impl BoundaryCondition {
    /// Tangent directions `ξ = (ω, v)` left free at the node.
    pub fn dofs(self) -> &'static [usize] {
        match self {
            BoundaryCondition::Free => &[0, 1, 2, 3, 4, 5],
            BoundaryCondition::Pinned => &[0, 1, 2],
            BoundaryCondition::Clamped => &[],
        }
    }
}

/// Material, spacetime grid spacing and boundary conditions of a beam run.
#[derive(Debug, Clone)]
pub struct BeamModel {
    material: BeamMaterial,
    sections: SectionMatrices,
    length: f64,
    segments: usize,
    dt: f64,
    left: BoundaryCondition,
    right: BoundaryCondition,
    ctx: CellContext,
}

impl BeamModel {
    pub fn new(
        material: BeamMaterial,
        length: f64,
        segments: usize,
        dt: f64,
        left: BoundaryCondition,
        right: BoundaryCondition,
    ) -> Result<Self> {
        material.validate()?;
        if segments == 0 {
            return Err(Error::Config("beam needs at least one segment".into()));
        }
        if !(length > 0.0) || !(dt > 0.0) {
            return Err(Error::Config(format!("beam length {length} and time step {dt} must be positive")));
        }
        let sections = section_matrices(&material);
        let ds = length / segments as f64;
        let ctx = CellContext::new(&material, &sections, dt, ds);
        Ok(Self { material, sections, length, segments, dt, left, right, ctx })
    }

    pub fn material(&self) -> &BeamMaterial {
        &self.material
    }

    pub fn sections(&self) -> &SectionMatrices {
        &self.sections
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Number of segments `A`.
    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn nodes(&self) -> usize {
        self.segments + 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn ds(&self) -> f64 {
        self.length / self.segments as f64
    }

    pub fn left(&self) -> BoundaryCondition {
        self.left
    }

    pub fn right(&self) -> BoundaryCondition {
        self.right
    }

    pub fn node_dofs(&self, a: usize) -> &'static [usize] {
        if a == 0 {
            self.left.dofs()
        } else if a == self.segments {
            self.right.dofs()
        } else {
            BoundaryCondition::Free.dofs()
        }
    }

    /// Total number of unknowns per time level.
    pub fn row_dofs(&self) -> usize {
        (0..self.nodes()).map(|a| self.node_dofs(a).len()).sum()
    }

    /// Trapezoidal weight of node `a` in space.
    pub fn node_weight(&self, a: usize) -> f64 {
        if a == 0 || a == self.segments {
            0.5 * self.ds()
        } else {
            self.ds()
        }
    }

    pub(crate) fn ctx(&self) -> &CellContext {
        &self.ctx
    }

    /// Undeformed beam along `e1`, moved rigidly by `pose`.
    pub fn rigid_row(&self, pose: &DualQuaternion) -> Vec<DualQuaternion> {
        (0..self.nodes()).map(|a| *pose * reference_node(a as f64 * self.ds())).collect()
    }

    pub fn reference_row(&self) -> Vec<DualQuaternion> {
        self.rigid_row(&DualQuaternion::identity())
    }

    /// Zero initial temporal momenta.
    pub fn rest_momenta(&self) -> Vec<Vector6<f64>> {
        vec![Vector6::zeros(); self.nodes()]
    }
}

/// Node of the straight reference configuration at arc length `s`.
pub fn reference_node(s: f64) -> DualQuaternion {
    from_screw(0.0, &Vector3::x(), &Vector3::new(s, 0.0, 0.0)).expect("unit axis")
}

/// Spacetime grid of unit dual quaternions; `rows[n][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamGrid {
    pub dt: f64,
    pub ds: f64,
    pub rows: Vec<Vec<DualQuaternion>>,
}

impl BeamGrid {
    pub fn new(dt: f64, ds: f64, rows: Vec<Vec<DualQuaternion>>) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.len());
        if width < 2 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::GridMismatch("beam grid rows must share a width of at least two nodes".into()));
        }
        Ok(Self { dt, ds, rows })
    }

    /// Number of time steps `N`.
    pub fn steps(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    /// Number of segments `A`.
    pub fn segments(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len().saturating_sub(1))
    }

    pub fn node(&self, a: usize, n: usize) -> Result<&DualQuaternion> {
        self.rows
            .get(n)
            .and_then(|r| r.get(a))
            .ok_or_else(|| Error::IndexOutOfRange(format!("node ({a}, {n}) outside a {}x{} grid", self.segments() + 1, self.rows.len())))
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|n| n as f64 * self.dt).collect()
    }

    /// Largest `max(|c1|, |c2|)` over all nodes.
    pub fn max_unity_residual(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|q| {
                let (c1, c2) = crate::dualquat::unity_residual(q);
                c1.abs().max(c2.abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn positions(&self, n: usize) -> Vec<Vector3<f64>> {
        self.rows[n].iter().map(|q| q.translation()).collect()
    }

    pub fn tip_trace(&self) -> Vec<Vector3<f64>> {
        self.rows.iter().map(|r| r.last().expect("non-empty row").translation()).collect()
    }
}

pub(crate) fn to_vectors(row: &[DualQuaternion]) -> Vec<Vector8> {
    row.iter().map(|q| q.to_vector()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fairly_rigid_section() {
        let mat = BeamMaterial::square(0.1, 210000.0, 0.3, 7.85, 0.1, 0.01);
        // rectangle second moment and isotropic shear modulus by hand
        assert_relative_eq!(mat.i2, 8.333333333333333e-6, max_relative = 1e-12);
        assert_relative_eq!(mat.g_shear, 80769.23076923077, max_relative = 1e-12);
        let s = section_matrices(&mat);
        assert_relative_eq!(s.c2tilde[(1, 1)], 2100.0, max_relative = 1e-12);
        assert_relative_eq!(s.c1tilde[(1, 1)], 80769.23076923077 * 2.0 * 8.333333333333333e-6, max_relative = 1e-12);
        assert_relative_eq!(s.jtilde[(2, 2)], 7.85 * 7.85 * 8.333333333333333e-6, max_relative = 1e-12);
        assert_relative_eq!(s.rhotilde[(3, 3)], 7.85 * 0.01, max_relative = 1e-12);
    }

    #[test]
    fn extensional_viscosity() {
        let mat = BeamMaterial::square(0.1, 210000.0, 0.3, 7.85, 0.1, 0.01);
        // E/G = 2.6: 0.01 * 0.4² + 0.1 * 6.76 / 3
        assert_relative_eq!(mat.chi(), 0.0016 + 0.22533333333333333, max_relative = 1e-12);
        let s = section_matrices(&mat);
        assert_relative_eq!(s.dtilde[(5, 5)], mat.chi() * 0.01, max_relative = 1e-12);
        assert_eq!(s.dtilde[(0, 0)], 0.0);
        assert_eq!(s.dtilde[(4, 4)], 0.0);
        let inviscid = BeamMaterial::square(0.1, 210000.0, 0.3, 7.85, 0.0, 0.0);
        assert_eq!(section_matrices(&inviscid).dtilde, Matrix8::zeros());
    }

    #[test]
    fn material_validation() {
        let mut mat = BeamMaterial::square(0.1, 1.0, 0.3, 1.0, 0.0, 0.0);
        assert!(mat.validate().is_ok());
        mat.g_shear *= 2.0;
        assert!(matches!(mat.validate(), Err(Error::Config(_))));
        let bad = BeamMaterial::square(0.1, -1.0, 0.3, 1.0, 0.0, 0.0);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_indexing() {
        let mat = BeamMaterial::square(0.1, 1.0, 0.3, 1.0, 0.0, 0.0);
        let model = BeamModel::new(mat, 1.0, 4, 0.1, BoundaryCondition::Pinned, BoundaryCondition::Free).unwrap();
        assert_eq!(model.row_dofs(), 3 + 3 * 6 + 6);
        let grid = BeamGrid::new(0.1, 0.25, vec![model.reference_row(); 3]).unwrap();
        assert_eq!(grid.steps(), 2);
        assert_eq!(grid.segments(), 4);
        assert!(grid.node(4, 2).is_ok());
        assert!(matches!(grid.node(5, 0), Err(Error::IndexOutOfRange(_))));
        assert!(grid.max_unity_residual() < 1e-15);
        assert!((grid.positions(0)[4] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!(BeamGrid::new(0.1, 0.25, vec![vec![DualQuaternion::identity()]]).is_err());
    }
}
