//! Forced discrete Lagrangian systems and their variational time stepping.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::{newton_solve_report, NewtonSettings};

/// A forced discrete Lagrangian system `L_d(q_a, q_b)` with left and right
/// discrete forces. Second-derivative conventions: `d12_ld[(i, j)]` is the
/// derivative of `(D1 L_d)_i` with respect to `q_b[j]`, so `d21_ld` is its
/// transpose.
pub trait DiscreteSystem {
    fn dim_q(&self) -> usize;
    fn dim_u(&self) -> usize;
    fn h(&self) -> f64;

    fn ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> f64;
    fn d1_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64>;
    fn d2_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64>;
    fn d11_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64>;
    fn d12_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64>;
    fn d21_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.d12_ld(qa, qb).transpose()
    }
    fn d22_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64>;

    fn f_minus(&self, qa: &DVector<f64>, qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn f_plus(&self, qa: &DVector<f64>, qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    fn d1_f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim_q(), self.dim_q())
    }
    fn d2_f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim_q(), self.dim_q())
    }
    fn d1_f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim_q(), self.dim_q())
    }
    fn d2_f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim_q(), self.dim_q())
    }
    /// `dim_q × dim_u`.
    fn d3_f_minus(&self, qa: &DVector<f64>, qb: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn d3_f_plus(&self, qa: &DVector<f64>, qb: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;

    /// Momentum `∂L/∂q̇` of the underlying continuous Lagrangian.
    fn continuous_legendre(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64>;
}

/// Configurations, controls and (optionally) adjoints on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    /// `q_0 ..= q_N`
    pub q: Vec<DVector<f64>>,
    /// `u_0 .. u_{N-1}`, constant on each interval.
    pub u: Vec<DVector<f64>>,
    /// `λ_0 .. λ_{N-1}`
    pub lambda: Option<Vec<DVector<f64>>>,
    /// Right discrete momentum at the final node.
    pub p_final: Option<DVector<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.q.len().saturating_sub(1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.q.len()).map(|n| n as f64 * self.h).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.steps();
        if self.q.is_empty() || self.u.len() != n {
            return Err(Error::Dimension(format!(
                "{} configurations need {} controls, got {}",
                self.q.len(),
                n,
                self.u.len()
            )));
        }
        if let Some(lam) = &self.lambda {
            if lam.len() != n {
                return Err(Error::Dimension(format!("expected {n} adjoints, got {}", lam.len())));
            }
        }
        Ok(())
    }
}

/// Residual of the forced discrete Euler-Lagrange equations at the middle node.
pub fn del_residual<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
    q_next: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
) -> DVector<f64> {
    sys.d1_ld(q_curr, q_next)
        + sys.d2_ld(q_prev, q_curr)
        + sys.f_minus(q_curr, q_next, u_curr)
        + sys.f_plus(q_prev, q_curr, u_prev)
}

/// Left discrete momentum `p⁻ = −D1 L_d − f⁻`.
pub fn legendre_minus<S: DiscreteSystem + ?Sized>(
    sys: &S,
    qa: &DVector<f64>,
    qb: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    -(sys.d1_ld(qa, qb) + sys.f_minus(qa, qb, u))
}

/// Right discrete momentum `p⁺ = D2 L_d + f⁺`.
pub fn legendre_plus<S: DiscreteSystem + ?Sized>(
    sys: &S,
    qa: &DVector<f64>,
    qb: &DVector<f64>,
    u: &DVector<f64>,
) -> DVector<f64> {
    sys.d2_ld(qa, qb) + sys.f_plus(qa, qb, u)
}

/// Solves `p0 = −D1 L_d(q0, q1) − f⁻(q0, q1, u0)` for `q1`.
pub fn first_step<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    u0: &DVector<f64>,
    settings: &NewtonSettings,
) -> Result<DVector<f64>> {
    let (q1, _) = newton_solve_report(
        |q1| p0 + sys.d1_ld(q0, q1) + sys.f_minus(q0, q1, u0),
        |q1| sys.d12_ld(q0, q1) + sys.d2_f_minus(q0, q1, u0),
        q0.clone(),
        settings,
    )?;
    Ok(q1)
}

/// Solves the DEL equations at `q_curr` for `q_next`, starting from the
/// linear predictor `2 q_curr − q_prev`.
pub fn del_step<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
    settings: &NewtonSettings,
) -> Result<DVector<f64>> {
    let known = sys.d2_ld(q_prev, q_curr) + sys.f_plus(q_prev, q_curr, u_prev);
    let guess = 2.0 * q_curr - q_prev;
    let (q_next, _) = newton_solve_report(
        |q| sys.d1_ld(q_curr, q) + sys.f_minus(q_curr, q, u_curr) + &known,
        |q| sys.d12_ld(q_curr, q) + sys.d2_f_minus(q_curr, q, u_curr),
        guess,
        settings,
    )?;
    Ok(q_next)
}

fn check_dims<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
) -> Result<()> {
    if controls.is_empty() {
        return Err(Error::Dimension("at least one control interval is required".into()));
    }
    if q0.len() != sys.dim_q() || p0.len() != sys.dim_q() {
        return Err(Error::Dimension(format!(
            "initial data must have length {}, got q0 {} and p0 {}",
            sys.dim_q(),
            q0.len(),
            p0.len()
        )));
    }
    if let Some(u) = controls.iter().find(|u| u.len() != sys.dim_u()) {
        return Err(Error::Dimension(format!(
            "controls must have length {}, got {}",
            sys.dim_u(),
            u.len()
        )));
    }
    Ok(())
}

/// Forward variational integration over `controls.len()` steps.
pub fn integrate<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
    settings: &NewtonSettings,
) -> Result<Trajectory> {
    check_dims(sys, q0, p0, controls)?;
    let n_steps = controls.len();
    let mut q = Vec::with_capacity(n_steps + 1);
    q.push(q0.clone());
    q.push(first_step(sys, q0, p0, &controls[0], settings).map_err(|e| e.at_step(0))?);
    for n in 1..n_steps {
        let next = del_step(sys, &q[n - 1], &q[n], &controls[n - 1], &controls[n], settings)
            .map_err(|e| e.at_step(n))?;
        q.push(next);
    }
    let p_final = legendre_plus(sys, &q[n_steps - 1], &q[n_steps], &controls[n_steps - 1]);
    Ok(Trajectory {
        h: sys.h(),
        q,
        u: controls.to_vec(),
        lambda: None,
        p_final: Some(p_final),
    })
}

/// Largest momentum mismatch `‖p⁺_n − p⁻_n‖_∞` over interior nodes.
pub fn momentum_mismatch<S: DiscreteSystem + ?Sized>(sys: &S, traj: &Trajectory) -> f64 {
    let n = traj.steps();
    (1..n)
        .map(|k| {
            let plus = legendre_plus(sys, &traj.q[k - 1], &traj.q[k], &traj.u[k - 1]);
            let minus = legendre_minus(sys, &traj.q[k], &traj.q[k + 1], &traj.u[k]);
            (plus - minus).amax()
        })
        .fold(0.0, f64::max)
}

type Lagrangian = dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync;

/// Midpoint discretization `L_d = h L((q_a+q_b)/2, (q_b−q_a)/h)` of a generic
/// Lagrangian, with finite-difference slot derivatives and discrete forces
/// `f⁻ = f⁺ = (h/2) B u`.
pub struct MidpointSystem {
    lagrangian: Box<Lagrangian>,
    dim_q: usize,
    h: f64,
    input: DMatrix<f64>,
}

impl std::fmt::Debug for MidpointSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MidpointSystem")
            .field("dim_q", &self.dim_q)
            .field("h", &self.h)
            .field("input", &self.input)
            .finish_non_exhaustive()
    }
}

pub fn midpoint_discretize<L>(dim_q: usize, lagrangian: L, h: f64) -> MidpointSystem
where
    L: Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
{
    MidpointSystem { lagrangian: Box::new(lagrangian), dim_q, h, input: DMatrix::zeros(dim_q, 1) }
}

const FD_FIRST: f64 = 1e-6;
const FD_SECOND: f64 = 1e-4;

impl MidpointSystem {
    /// Replaces the `dim_q × dim_u` input matrix.
    pub fn with_input(mut self, input: DMatrix<f64>) -> Result<Self> {
        if input.nrows() != self.dim_q || input.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "input matrix must have {} rows and at least one column",
                self.dim_q
            )));
        }
        self.input = input;
        Ok(self)
    }

    fn joint(&self, z: &DVector<f64>) -> f64 {
        let n = self.dim_q;
        let qa = z.rows(0, n).into_owned();
        let qb = z.rows(n, n).into_owned();
        self.ld(&qa, &qb)
    }

    fn stack(qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(qa.len() + qb.len());
        z.rows_mut(0, qa.len()).copy_from(qa);
        z.rows_mut(qa.len(), qb.len()).copy_from(qb);
        z
    }

    fn joint_gradient(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        crate::numerics::fd_gradient(|z| self.joint(z), &Self::stack(qa, qb), FD_FIRST)
    }

    fn joint_hessian_block(&self, qa: &DVector<f64>, qb: &DVector<f64>, r0: usize, c0: usize) -> DMatrix<f64> {
        let n = self.dim_q;
        let z = Self::stack(qa, qb);
        let e = FD_SECOND;
        let mut out = DMatrix::zeros(n, n);
        let mut zp = z.clone();
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (r0 + i, c0 + j);
                let mut f = |da: f64, db: f64| {
                    zp.copy_from(&z);
                    zp[a] += da;
                    zp[b] += db;
                    self.joint(&zp)
                };
                out[(i, j)] = (f(e, e) - f(e, -e) - f(-e, e) + f(-e, -e)) / (4.0 * e * e);
            }
        }
        out
    }
}

impl DiscreteSystem for MidpointSystem {
    fn dim_q(&self) -> usize {
        self.dim_q
    }
    fn dim_u(&self) -> usize {
        self.input.ncols()
    }
    fn h(&self) -> f64 {
        self.h
    }

    fn ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> f64 {
        let mid = (qa + qb) * 0.5;
        let vel = (qb - qa) / self.h;
        self.h * (self.lagrangian)(&mid, &vel)
    }
    fn d1_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        self.joint_gradient(qa, qb).rows(0, self.dim_q).into_owned()
    }
    fn d2_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DVector<f64> {
        self.joint_gradient(qa, qb).rows(self.dim_q, self.dim_q).into_owned()
    }
    fn d11_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.joint_hessian_block(qa, qb, 0, 0)
    }
    fn d12_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.joint_hessian_block(qa, qb, 0, self.dim_q)
    }
    fn d22_ld(&self, qa: &DVector<f64>, qb: &DVector<f64>) -> DMatrix<f64> {
        self.joint_hessian_block(qa, qb, self.dim_q, self.dim_q)
    }

    fn f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.input * u * (0.5 * self.h)
    }
    fn f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.input * u * (0.5 * self.h)
    }
    fn d3_f_minus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        &self.input * (0.5 * self.h)
    }
    fn d3_f_plus(&self, _qa: &DVector<f64>, _qb: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        &self.input * (0.5 * self.h)
    }

    fn continuous_legendre(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        crate::numerics::fd_gradient(|v| (self.lagrangian)(q, v), qdot, FD_FIRST)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn particle(h: f64) -> MidpointSystem {
        midpoint_discretize(1, |_q, v| 0.5 * v.dot(v), h)
            .with_input(DMatrix::identity(1, 1))
            .unwrap()
    }

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn free_particle_action() {
        assert_relative_eq!(particle(1.0).ld(&s(0.0), &s(2.0)), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn free_particle_momenta() {
        let sys = particle(1.0);
        assert_relative_eq!(legendre_minus(&sys, &s(0.0), &s(1.0), &s(0.0))[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(legendre_plus(&sys, &s(0.0), &s(1.0), &s(0.0))[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(sys.d12_ld(&s(0.0), &s(1.0))[(0, 0)], -1.0, epsilon = 1e-6);
        assert_relative_eq!(sys.d11_ld(&s(0.0), &s(1.0))[(0, 0)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn free_particle_first_step() {
        let sys = particle(0.1);
        let q1 = first_step(&sys, &s(0.0), &s(1.0), &s(0.0), &NewtonSettings::default()).unwrap();
        assert_relative_eq!(q1[0], 0.1, epsilon = 1e-10);
    }

    #[test]
    fn forced_particle_accelerates_uniformly() {
        // unit force on a unit mass: q_n = n^2 h^2 / 2 exactly for the midpoint rule
        let h = 0.1;
        let sys = particle(h);
        let controls = vec![s(1.0); 10];
        let traj = integrate(&sys, &s(0.0), &s(0.0), &controls, &NewtonSettings::default()).unwrap();
        for (n, q) in traj.q.iter().enumerate() {
            assert_relative_eq!(q[0], 0.5 * (n as f64 * h).powi(2), epsilon = 1e-8);
        }
        assert_relative_eq!(traj.p_final.as_ref().unwrap()[0], 1.0, epsilon = 1e-7);
        assert!(momentum_mismatch(&sys, &traj) < 1e-9);
    }

    #[test]
    fn integrate_rejects_bad_dimensions() {
        let sys = particle(0.1);
        let s2 = DVector::zeros(2);
        assert!(integrate(&sys, &s2, &s2, &[s(0.0)], &NewtonSettings::default()).is_err());
        assert!(integrate(&sys, &s(0.0), &s(0.0), &[], &NewtonSettings::default()).is_err());
        assert!(integrate(&sys, &s(0.0), &s(0.0), &[s2], &NewtonSettings::default()).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let t = Trajectory { h: 0.1, q: vec![s(0.0); 3], u: vec![s(0.0); 2], lambda: None, p_final: None };
        assert!(t.validate().is_ok());
        assert_eq!(t.steps(), 2);
        let bad = Trajectory { u: vec![s(0.0)], ..t.clone() };
        assert!(bad.validate().is_err());
        let bad_lambda = Trajectory { lambda: Some(vec![s(0.0)]), ..t };
        assert!(bad_lambda.validate().is_err());
    }
}
