//! Holonomically constrained variational integration by null-space projection
//! and nodal reparametrization, with the matching discrete adjoint.
//!
//! The adjoint equations are obtained by varying every configuration `q_k`
//! along the tangent basis `T_k = D2 F_d(q_{k−1}, v_k)`. Any tangent basis
//! yields the same control gradient; this one keeps the adjoint variables in
//! the coordinates of the increments `v`.

use nalgebra::{DMatrix, DVector};

use crate::adjoint::{control_cost, quad, OcpObjective};
use crate::error::{Error, Result};
use crate::mechanics::{legendre_plus, DiscreteSystem};
use crate::numerics::{fd_jacobian, newton_solve_with, solve_transposed, NewtonSettings};

/// Largest admissible `‖g(q)‖_∞` for initial data and every produced node.
pub const CONSTRAINT_TOLERANCE: f64 = 1e-10;

pub trait ConstrainedSystem: DiscreteSystem {
    fn num_constraints(&self) -> usize;

    fn dim_v(&self) -> usize {
        self.dim_q() - self.num_constraints()
    }

    fn constraint(&self, q: &DVector<f64>) -> DVector<f64>;
    /// `m × n`
    fn constraint_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;
    /// `n × (n − m)`, columns spanning the kernel of the constraint Jacobian.
    fn null_space(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Derivative of `q ↦ P(q)ᵀ w` for a fixed covector `w`, `(n − m) × n`.
    fn dp_transpose(&self, q: &DVector<f64>, w: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(|x| self.null_space(x).transpose() * w, q, 1e-6)
    }

    /// `F_d(q, v)`
    fn reparametrize(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;
    /// `∂F_d/∂v`, `n × (n − m)`.
    fn d2_reparametrize(&self, q: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedTrajectory {
    pub h: f64,
    /// `q_0 ..= q_N`
    pub q: Vec<DVector<f64>>,
    /// `v_1 ..= v_N`, stored at index `n − 1`.
    pub v: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub lambda: Option<Vec<DVector<f64>>>,
    /// Ambient right momentum at the final node.
    pub p_final: Option<DVector<f64>>,
}

impl ConstrainedTrajectory {
    pub fn steps(&self) -> usize {
        self.q.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.steps();
        if self.q.is_empty() || self.v.len() != n || self.u.len() != n {
            return Err(Error::Dimension(format!(
                "{} configurations need {n} increments and controls, got {} and {}",
                self.q.len(),
                self.v.len(),
                self.u.len()
            )));
        }
        Ok(())
    }

    /// `Σ_{k ≤ n} v_k` per node, starting from `start`; for one-dimensional
    /// increments this is the accumulated rotation angle.
    pub fn accumulated_increments(&self, start: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.q.len());
        let mut acc = start;
        out.push(acc);
        for v in &self.v {
            acc += v.sum();
            out.push(acc);
        }
        out
    }
}

fn check_on_manifold<S: ConstrainedSystem + ?Sized>(sys: &S, q: &DVector<f64>) -> Result<()> {
    let g = sys.constraint(q).amax();
    if g > CONSTRAINT_TOLERANCE {
        return Err(Error::InconsistentInitialData(g));
    }
    Ok(())
}

/// Projected DEL residual `P(q_n)ᵀ [D1 L_d + D2 L_d + f⁻ + f⁺]` with
/// `q_{n+1} = F_d(q_n, v_{n+1})`.
pub fn constrained_del_residual<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
    v_next: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
) -> DVector<f64> {
    let q_next = sys.reparametrize(q_curr, v_next);
    sys.null_space(q_curr).transpose()
        * (sys.d1_ld(q_curr, &q_next)
            + sys.d2_ld(q_prev, q_curr)
            + sys.f_minus(q_curr, &q_next, u_curr)
            + sys.f_plus(q_prev, q_curr, u_prev))
}

/// Solves `P(q_curr)ᵀ [known + D1 L_d(q_curr, q) + f⁻(q_curr, q, u)] = 0` for
/// `q = F_d(q_curr, v)`.
fn solve_increment<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q_curr: &DVector<f64>,
    known: &DVector<f64>,
    u_curr: &DVector<f64>,
    guess: DVector<f64>,
    settings: &NewtonSettings,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let pt = sys.null_space(q_curr).transpose();
    let (v, _) = newton_solve_with(
        guess,
        |v| {
            let q = sys.reparametrize(q_curr, v);
            Ok(&pt * (known + sys.d1_ld(q_curr, &q) + sys.f_minus(q_curr, &q, u_curr)))
        },
        |v| {
            let q = sys.reparametrize(q_curr, v);
            Ok(&pt
                * (sys.d12_ld(q_curr, &q) + sys.d2_f_minus(q_curr, &q, u_curr))
                * sys.d2_reparametrize(q_curr, v))
        },
        |v, dv| v + dv,
        settings,
    )?;
    let q = sys.reparametrize(q_curr, &v);
    Ok((v, q))
}

/// One constrained step; returns `(v_{n+1}, q_{n+1})`. The Newton iteration
/// starts from `v_guess`, or from zero.
pub fn constrained_step<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q_prev: &DVector<f64>,
    q_curr: &DVector<f64>,
    u_prev: &DVector<f64>,
    u_curr: &DVector<f64>,
    v_guess: Option<&DVector<f64>>,
    settings: &NewtonSettings,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let known = sys.d2_ld(q_prev, q_curr) + sys.f_plus(q_prev, q_curr, u_prev);
    let guess = v_guess.cloned().unwrap_or_else(|| DVector::zeros(sys.dim_v()));
    solve_increment(sys, q_curr, &known, u_curr, guess, settings)
}

/// Initialization: `P(q0)ᵀ [p0 + D1 L_d(q0, q1) + f⁻(q0, q1, u0)] = 0`.
pub fn constrained_first_step<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    u0: &DVector<f64>,
    settings: &NewtonSettings,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_on_manifold(sys, q0)?;
    solve_increment(sys, q0, p0, u0, DVector::zeros(sys.dim_v()), settings)
}

pub fn constrained_integrate<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
    settings: &NewtonSettings,
) -> Result<ConstrainedTrajectory> {
    if controls.is_empty() {
        return Err(Error::Dimension("at least one control interval is required".into()));
    }
    if q0.len() != sys.dim_q() || p0.len() != sys.dim_q() {
        return Err(Error::Dimension(format!("initial data must have length {}", sys.dim_q())));
    }
    if controls.iter().any(|u| u.len() != sys.dim_u()) {
        return Err(Error::Dimension(format!("controls must have length {}", sys.dim_u())));
    }
    check_on_manifold(sys, q0)?;
    let n_steps = controls.len();
    let mut q = Vec::with_capacity(n_steps + 1);
    let mut v = Vec::with_capacity(n_steps);
    let (v1, q1) = constrained_first_step(sys, q0, p0, &controls[0], settings).map_err(|e| e.at_step(0))?;
    q.push(q0.clone());
    q.push(q1);
    v.push(v1);
    let audit = |step: usize, q: &DVector<f64>| -> Result<()> {
        let residual = sys.constraint(q).amax();
        if residual > CONSTRAINT_TOLERANCE {
            return Err(Error::ConstraintViolation { step, residual });
        }
        Ok(())
    };
    audit(1, &q[1])?;
    for n in 1..n_steps {
        let (vn, qn) =
            constrained_step(sys, &q[n - 1], &q[n], &controls[n - 1], &controls[n], v.last(), settings)
                .map_err(|e| e.at_step(n))?;
        audit(n + 1, &qn)?;
        q.push(qn);
        v.push(vn);
    }
    let p_final = legendre_plus(sys, &q[n_steps - 1], &q[n_steps], &controls[n_steps - 1]);
    Ok(ConstrainedTrajectory { h: sys.h(), q, v, u: controls.to_vec(), lambda: None, p_final: Some(p_final) })
}

/// `P(q_N)ᵀ p_N⁺`, the final momentum in increment coordinates.
pub fn projected_final_momentum<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    traj: &ConstrainedTrajectory,
) -> Result<DVector<f64>> {
    let p = traj
        .p_final
        .as_ref()
        .ok_or_else(|| Error::Dimension("trajectory carries no final momentum".into()))?;
    Ok(sys.null_space(&traj.q[traj.steps()]).transpose() * p)
}

/// Objective with the momentum term measured on the projected final momentum:
/// `q_target ∈ R^n`, `p_target ∈ R^{n−m}`.
pub fn constrained_objective<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    traj: &ConstrainedTrajectory,
    obj: &OcpObjective,
) -> Result<f64> {
    traj.validate()?;
    let dq = &traj.q[traj.steps()] - &obj.q_target;
    let dp = projected_final_momentum(sys, traj)? - &obj.p_target;
    Ok(0.5 * quad(&obj.s_q, &dq) + 0.5 * quad(&obj.s_p, &dp) + control_cost(&obj.r, &traj.u))
}

pub fn validate_constrained_objective<S: ConstrainedSystem + ?Sized>(sys: &S, obj: &OcpObjective) -> Result<()> {
    let n = sys.dim_q();
    let k = sys.dim_v();
    if obj.s_q.nrows() != n || obj.q_target.len() != n || obj.s_p.nrows() != k || obj.p_target.len() != k {
        return Err(Error::Dimension(format!(
            "constrained objective needs S_q, q_target of size {n} and S_p, p_target of size {k}"
        )));
    }
    obj.validate(n, sys.dim_u())
}

/// Tangent basis at node `k ≥ 1`.
fn tangent<S: ConstrainedSystem + ?Sized>(sys: &S, traj: &ConstrainedTrajectory, k: usize) -> DMatrix<f64> {
    sys.d2_reparametrize(&traj.q[k - 1], &traj.v[k - 1])
}

/// Ambient DEL bracket at interior node `k`.
fn del_bracket<S: ConstrainedSystem + ?Sized>(sys: &S, traj: &ConstrainedTrajectory, k: usize) -> DVector<f64> {
    let q = &traj.q;
    let u = &traj.u;
    sys.d1_ld(&q[k], &q[k + 1])
        + sys.d2_ld(&q[k - 1], &q[k])
        + sys.f_minus(&q[k], &q[k + 1], &u[k])
        + sys.f_plus(&q[k - 1], &q[k], &u[k - 1])
}

/// Backward sweep producing `λ_0 .. λ_{N−1}` in `R^{n−m}`.
pub fn constrained_backward_sweep<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    traj: &ConstrainedTrajectory,
    obj: &OcpObjective,
) -> Result<Vec<DVector<f64>>> {
    traj.validate()?;
    let n = traj.steps();
    let q = &traj.q;
    let u = &traj.u;
    let p_final = traj
        .p_final
        .as_ref()
        .ok_or_else(|| Error::Dimension("trajectory carries no final momentum".into()))?;
    let pt_n = sys.null_space(&q[n]).transpose();
    let sp = &obj.s_p * (&pt_n * p_final - &obj.p_target);

    // ambient gradients of J with respect to q_N and q_{N−1}
    let dj_n = &obj.s_q * (&q[n] - &obj.q_target)
        + (sys.dp_transpose(&q[n], p_final)
            + &pt_n * (sys.d22_ld(&q[n - 1], &q[n]) + sys.d2_f_plus(&q[n - 1], &q[n], &u[n - 1])))
            .transpose()
            * &sp;
    let dj_n1 = (&pt_n * (sys.d21_ld(&q[n - 1], &q[n]) + sys.d1_f_plus(&q[n - 1], &q[n], &u[n - 1])))
        .transpose()
        * &sp;

    let mut lambda: Vec<DVector<f64>> = vec![DVector::zeros(sys.dim_v()); n];
    for k in (1..=n).rev() {
        let t_k = tangent(sys, traj, k);
        let mut rhs: DVector<f64> = if k == n {
            -(t_k.transpose() * &dj_n)
        } else if k == n - 1 {
            -(t_k.transpose() * &dj_n1)
        } else {
            DVector::zeros(sys.dim_v())
        };
        if k < n {
            let pt_k = sys.null_space(&q[k]).transpose();
            let b = (sys.dp_transpose(&q[k], &del_bracket(sys, traj, k))
                + &pt_k
                    * (sys.d11_ld(&q[k], &q[k + 1])
                        + sys.d1_f_minus(&q[k], &q[k + 1], &u[k])
                        + sys.d22_ld(&q[k - 1], &q[k])
                        + sys.d2_f_plus(&q[k - 1], &q[k], &u[k - 1])))
                * &t_k;
            rhs -= b.transpose() * &lambda[k];
        }
        if k + 1 < n {
            let pt_k1 = sys.null_space(&q[k + 1]).transpose();
            let c = pt_k1 * (sys.d21_ld(&q[k], &q[k + 1]) + sys.d1_f_plus(&q[k], &q[k + 1], &u[k])) * &t_k;
            rhs -= c.transpose() * &lambda[k + 1];
        }
        let pt_prev = sys.null_space(&q[k - 1]).transpose();
        let a = pt_prev * (sys.d12_ld(&q[k - 1], &q[k]) + sys.d2_f_minus(&q[k - 1], &q[k], &u[k - 1])) * &t_k;
        lambda[k - 1] = solve_transposed(&a, &rhs)?;
    }
    Ok(lambda)
}

/// Gradient of the reduced constrained objective with respect to every control.
pub fn constrained_control_gradient<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    traj: &ConstrainedTrajectory,
    lambda: &[DVector<f64>],
    obj: &OcpObjective,
) -> Result<Vec<DVector<f64>>> {
    traj.validate()?;
    let n = traj.steps();
    if lambda.len() != n {
        return Err(Error::Dimension(format!("expected {n} adjoints, got {}", lambda.len())));
    }
    let q = &traj.q;
    let sp = &obj.s_p * (projected_final_momentum(sys, traj)? - &obj.p_target);
    Ok((0..n)
        .map(|k| {
            let u = &traj.u[k];
            let pt_k = sys.null_space(&q[k]).transpose();
            let pt_k1 = sys.null_space(&q[k + 1]).transpose();
            let mut g = &obj.r * u + (pt_k * sys.d3_f_minus(&q[k], &q[k + 1], u)).transpose() * &lambda[k];
            let d3p = (pt_k1 * sys.d3_f_plus(&q[k], &q[k + 1], u)).transpose();
            g += if k + 1 < n { d3p * &lambda[k + 1] } else { d3p * &sp };
            g
        })
        .collect())
}

/// Forward solve, sweep and gradient; adjoints are attached to the trajectory.
pub fn constrained_gradient<S: ConstrainedSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
    obj: &OcpObjective,
    settings: &NewtonSettings,
) -> Result<(f64, Vec<DVector<f64>>, ConstrainedTrajectory)> {
    let mut traj = constrained_integrate(sys, q0, p0, controls, settings)?;
    let j = constrained_objective(sys, &traj, obj)?;
    let lambda = constrained_backward_sweep(sys, &traj, obj)?;
    let g = constrained_control_gradient(sys, &traj, &lambda, obj)?;
    traj.lambda = Some(lambda);
    Ok((j, g, traj))
}
