//! Torque-driven planar pendulum, in minimal coordinates and as a constrained
//! system on a circle in the plane.
//!
//! The Lagrangian is `½ m l² φ̇² − m g l cos φ`. The constrained model uses
//! `q = (−l sin φ, l cos φ)` so that both models share the angle `φ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constrained::{ConstrainedSystem, ConstrainedTrajectory};
use crate::error::{Error, Result};
use crate::mechanics::{DiscreteSystem, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub grav: f64,
    pub h: f64,
    /// Time horizon `T`.
    pub horizon: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self { m: 1.0, l: 1.0, grav: 9.81, h: 1e-2, horizon: 2.0 }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("m", self.m), ("l", self.l), ("grav", self.grav), ("h", self.h), ("horizon", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("pendulum parameter {name} must be positive")));
            }
        }
        self.steps().map(|_| ())
    }

    /// Number of steps `N = T / h`; errors unless `h` divides `T`.
    pub fn steps(&self) -> Result<usize> {
        let n = (self.horizon / self.h).round();
        if n < 1.0 || (n * self.h - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::Config(format!(
                "time step {} does not divide the horizon {}",
                self.h, self.horizon
            )));
        }
        Ok(n as usize)
    }

    pub fn with_step(self, h: f64) -> Self {
        Self { h, ..self }
    }

    fn inertia(&self) -> f64 {
        self.m * self.l * self.l
    }

    fn weight(&self) -> f64 {
        self.m * self.grav * self.l
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumMinimal {
    pub params: PendulumParams,
}

pub fn pendulum_minimal(params: PendulumParams) -> PendulumMinimal {
    PendulumMinimal { params }
}

fn one(v: f64) -> DVector<f64> {
    DVector::from_element(1, v)
}

fn one_m(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl PendulumMinimal {
    fn parts(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> (f64, f64) {
        ((qb[0] - qa[0]) / self.params.h, 0.5 * (qa[0] + qb[0]))
    }
}

impl DiscreteSystem for PendulumMinimal {
    fn dim_q(&self) -> usize {
        1
    }
    fn dim_u(&self) -> usize {
        1
    }
    fn h(&self) -> f64 {
        self.params.h
    }

    fn ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> f64 {
        let p = &self.params;
        let (vel, mid) = self.parts(qa, qb);
        0.5 * p.h * p.inertia() * vel * vel - p.h * p.weight() * mid.cos()
    }
    fn d1_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (vel, mid) = self.parts(qa, qb);
        one(-p.inertia() * vel + 0.5 * p.h * p.weight() * mid.sin())
    }
    fn d2_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let (vel, mid) = self.parts(qa, qb);
        one(p.inertia() * vel + 0.5 * p.h * p.weight() * mid.sin())
    }
    fn d11_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let (_, mid) = self.parts(qa, qb);
        one_m(p.inertia() / p.h + 0.25 * p.h * p.weight() * mid.cos())
    }
    fn d12_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        let (_, mid) = self.parts(qa, qb);
        one_m(-p.inertia() / p.h + 0.25 * p.h * p.weight() * mid.cos())
    }
    fn d22_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.d11_ld(qa, qb)
    }

    fn f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        one(0.5 * self.params.h * u[0])
    }
    fn f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        one(0.5 * self.params.h * u[0])
    }
    fn d3_f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        one_m(0.5 * self.params.h)
    }
    fn d3_f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        one_m(0.5 * self.params.h)
    }

    fn continuous_legendre(&self, _q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        qdot * self.params.inertia()
    }
}

/// The pendulum bob in the plane with `g(q) = ½(x² + y² − l²)`, rotational
/// reparametrization `F_d(q, v) = Rot(v) q` and the torque entering through
/// `Bᵀ(q) = [−y, x] / (2 l²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumConstrained {
    pub params: PendulumParams,
}

pub fn pendulum_constrained(params: PendulumParams) -> PendulumConstrained {
    PendulumConstrained { params }
}

fn rot(v: f64, q: &DVector<f64>) -> DVector<f64> {
    let (s, c) = v.sin_cos();
    DVector::from_vec(vec![c * q[0] - s * q[1], s * q[0] + c * q[1]])
}

impl PendulumConstrained {
    /// Configuration at angle `φ`.
    pub fn position(&self, phi: f64) -> DVector<f64> {
        let l = self.params.l;
        DVector::from_vec(vec![-l * phi.sin(), l * phi.cos()])
    }

    /// Angle of a configuration, in `(−π, π]`.
    pub fn angle(q: &DVector<f64>) -> f64 {
        (-q[0]).atan2(q[1])
    }

    /// `Bᵀ(q)` as an `n × dim_u` matrix.
    pub fn input_transform(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let s = 0.5 / (self.params.l * self.params.l);
        DMatrix::from_column_slice(2, 1, &[-q[1] * s, q[0] * s])
    }

    /// Generalized force `τ(u) = u`.
    pub fn tau(u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }

    fn d_input(&self, u: &DVector<f64>) -> DMatrix<f64> {
        // derivative of (h/2) Bᵀ(q) u with respect to q
        let s = 0.25 * self.params.h * u[0] / (self.params.l * self.params.l);
        DMatrix::from_row_slice(2, 2, &[0.0, -s, s, 0.0])
    }
}

impl DiscreteSystem for PendulumConstrained {
    fn dim_q(&self) -> usize {
        2
    }
    fn dim_u(&self) -> usize {
        1
    }
    fn h(&self) -> f64 {
        self.params.h
    }

    fn ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> f64 {
        let p = &self.params;
        let vel = (qb - qa) / p.h;
        p.h * (0.5 * p.m * vel.norm_squared() - p.m * p.grav * 0.5 * (qa[1] + qb[1]))
    }
    fn d1_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let mut d = -(qb - qa) * (p.m / p.h);
        d[1] -= 0.5 * p.h * p.m * p.grav;
        d
    }
    fn d2_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let mut d = (qb - qa) * (p.m / p.h);
        d[1] -= 0.5 * p.h * p.m * p.grav;
        d
    }
    fn d11_ld(&self, _qa: &DVector<f64>, _qb: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (self.params.m / self.params.h)
    }
    fn d12_ld(&self, _qa: &DVector<f64>, _qb: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * (-self.params.m / self.params.h)
    }
    fn d22_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.d11_ld(qa, qb)
    }

    fn f_minus(&self, qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.input_transform(qa) * Self::tau(u) * (0.5 * self.params.h)
    }
    fn f_plus(&self, _qa: &DVector<f64>, qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.input_transform(qb) * Self::tau(u) * (0.5 * self.params.h)
    }
    fn d1_f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.d_input(u)
    }
    fn d2_f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.d_input(u)
    }
    fn d3_f_minus(&self, qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.input_transform(qa) * (0.5 * self.params.h)
    }
    fn d3_f_plus(&self, _qa: &DVector<f64>, qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.input_transform(qb) * (0.5 * self.params.h)
    }

    fn continuous_legendre(&self, _q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        qdot * self.params.m
    }
}

impl ConstrainedSystem for PendulumConstrained {
    fn num_constraints(&self) -> usize {
        1
    }
    fn constraint(&self, q: &DVector<f64>) -> DVector<f64> {
        let l = self.params.l;
        one(0.5 * (q.norm_squared() - l * l))
    }
    fn constraint_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[q[0], q[1]])
    }
    fn null_space(&self, q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[-q[1], q[0]])
    }
    fn dp_transpose(&self, _q: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[w[1], -w[0]])
    }
    fn reparametrize(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        rot(v[0], q)
    }
    fn d2_reparametrize(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
        let r = rot(v[0], q);
        DMatrix::from_column_slice(2, 1, &[-r[1], r[0]])
    }
}

/// Energies on one time interval, evaluated with the interval's difference
/// quotient and midpoint configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySample {
    /// Midpoint time of the interval.
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

pub fn pendulum_energies(traj: &Trajectory, params: &PendulumParams) -> Vec<EnergySample> {
    let h = traj.h;
    traj.q
        .windows(2)
        .enumerate()
        .map(|(n, w)| {
            let vel = (w[1][0] - w[0][0]) / h;
            let kinetic = 0.5 * params.inertia() * vel * vel;
            let potential = params.weight() * (0.5 * (w[0][0] + w[1][0])).cos();
            EnergySample { t: (n as f64 + 0.5) * h, kinetic, potential, total: kinetic + potential }
        })
        .collect()
}

pub fn constrained_pendulum_energies(traj: &ConstrainedTrajectory, params: &PendulumParams) -> Vec<EnergySample> {
    let h = traj.h;
    traj.q
        .windows(2)
        .enumerate()
        .map(|(n, w)| {
            let kinetic = 0.5 * params.m * ((&w[1] - &w[0]) / h).norm_squared();
            let potential = params.m * params.grav * 0.5 * (w[0][1] + w[1][1]);
            EnergySample { t: (n as f64 + 0.5) * h, kinetic, potential, total: kinetic + potential }
        })
        .collect()
}
