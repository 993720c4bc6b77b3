//! Discrete adjoint sweep and control gradient for forced variational
//! integrators with a quadratic terminal + control-effort objective.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mechanics::{integrate, legendre_plus, DiscreteSystem, Trajectory};
use crate::numerics::{solve_transposed, NewtonSettings};

/// `J = ½|q_N − q*|²_{S_q} + ½|p_N − p*|²_{S_p} + Σ ½ u_nᵀ R u_n`
#[derive(Debug, Clone, PartialEq)]
pub struct OcpObjective {
    pub s_q: DMatrix<f64>,
    pub s_p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_target: DVector<f64>,
    pub p_target: DVector<f64>,
}

fn check_psd(name: &str, m: &DMatrix<f64>, strict: bool) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{name} must be square")));
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > 1e-12 * scale {
        return Err(Error::Config(format!("{name} must be symmetric")));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let min = SymmetricEigen::new(m.clone()).eigenvalues.min();
    let ok = if strict { min > 0.0 } else { min >= -1e-12 * scale };
    if !ok {
        let kind = if strict { "positive definite" } else { "positive semidefinite" };
        return Err(Error::Config(format!("{name} must be {kind} (smallest eigenvalue {min:e})")));
    }
    Ok(())
}

impl OcpObjective {
    /// Isotropic weights `S_q = s_q I`, `S_p = s_p I`, `R = r I`.
    pub fn scalar(
        s_q: f64,
        s_p: f64,
        r: f64,
        q_target: DVector<f64>,
        p_target: DVector<f64>,
        dim_u: usize,
    ) -> Self {
        let n = q_target.len();
        Self {
            s_q: DMatrix::identity(n, n) * s_q,
            s_p: DMatrix::identity(n, n) * s_p,
            r: DMatrix::identity(dim_u, dim_u) * r,
            q_target,
            p_target,
        }
    }

    pub fn validate(&self, dim_q: usize, dim_u: usize) -> Result<()> {
        check_psd("S_q", &self.s_q, false)?;
        check_psd("S_p", &self.s_p, false)?;
        check_psd("R", &self.r, true)?;
        if self.s_q.nrows() != dim_q || self.q_target.len() != dim_q || self.r.nrows() != dim_u {
            return Err(Error::Dimension("objective weights do not match the system".into()));
        }
        if self.s_p.nrows() != self.p_target.len() {
            return Err(Error::Dimension("S_p and p_target differ in size".into()));
        }
        Ok(())
    }

    pub fn has_momentum_term(&self) -> bool {
        self.s_p.amax() > 0.0
    }
}

pub(crate) fn quad(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

pub(crate) fn control_cost(r: &DMatrix<f64>, controls: &[DVector<f64>]) -> f64 {
    controls.iter().map(|u| 0.5 * quad(r, u)).sum()
}

/// Evaluates the objective on a trajectory that carries its final momentum.
pub fn objective(traj: &Trajectory, obj: &OcpObjective) -> Result<f64> {
    let p_final = traj
        .p_final
        .as_ref()
        .ok_or_else(|| Error::Dimension("trajectory carries no final momentum".into()))?;
    let q_final = traj.q.last().ok_or_else(|| Error::Dimension("empty trajectory".into()))?;
    let dq = q_final - &obj.q_target;
    let dp = p_final - &obj.p_target;
    Ok(0.5 * quad(&obj.s_q, &dq) + 0.5 * quad(&obj.s_p, &dp) + control_cost(&obj.r, &traj.u))
}

/// Integrates and evaluates the objective: the reduced objective `J(u)`.
pub fn reduced_objective<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
    obj: &OcpObjective,
    settings: &NewtonSettings,
) -> Result<f64> {
    objective(&integrate(sys, q0, p0, controls, settings)?, obj)
}

fn momentum_residual(traj: &Trajectory, obj: &OcpObjective) -> Result<DVector<f64>> {
    let p = traj
        .p_final
        .as_ref()
        .ok_or_else(|| Error::Dimension("trajectory carries no final momentum".into()))?;
    Ok(&obj.s_p * (p - &obj.p_target))
}

/// Solves the adjoint equation obtained by varying `q_k` for `λ_{k−1}`:
/// `A_kᵀ λ_{k−1} = −∂J/∂q_k − B_kᵀ λ_k − C_kᵀ λ_{k+1}`.
fn adjoint_node<S: DiscreteSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    k: usize,
    mayer: &DVector<f64>,
    lam_k: Option<&DVector<f64>>,
    lam_k1: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    let q = &traj.q;
    let u = &traj.u;
    let a = sys.d12_ld(&q[k - 1], &q[k]) + sys.d2_f_minus(&q[k - 1], &q[k], &u[k - 1]);
    let mut rhs = -mayer.clone();
    if let Some(lam) = lam_k {
        let b = sys.d22_ld(&q[k - 1], &q[k])
            + sys.d2_f_plus(&q[k - 1], &q[k], &u[k - 1])
            + sys.d11_ld(&q[k], &q[k + 1])
            + sys.d1_f_minus(&q[k], &q[k + 1], &u[k]);
        rhs -= b.transpose() * lam;
    }
    if let Some(lam) = lam_k1 {
        let c = sys.d21_ld(&q[k], &q[k + 1]) + sys.d1_f_plus(&q[k], &q[k + 1], &u[k]);
        rhs -= c.transpose() * lam;
    }
    solve_transposed(&a, &rhs)
}

/// Terminal adjoints `(λ_{N−1}, λ_{N−2})`.
pub fn adjoint_boundary<S: DiscreteSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    obj: &OcpObjective,
) -> Result<(DVector<f64>, DVector<f64>)> {
    traj.validate()?;
    let n = traj.steps();
    if n < 2 {
        return Err(Error::Dimension("the terminal adjoint pair needs N ≥ 2".into()));
    }
    let q = &traj.q;
    let u = &traj.u;
    let sp = momentum_residual(traj, obj)?;
    let dj_n = &obj.s_q * (&q[n] - &obj.q_target)
        + (sys.d22_ld(&q[n - 1], &q[n]) + sys.d2_f_plus(&q[n - 1], &q[n], &u[n - 1])).transpose() * &sp;
    let dj_n1 =
        (sys.d21_ld(&q[n - 1], &q[n]) + sys.d1_f_plus(&q[n - 1], &q[n], &u[n - 1])).transpose() * &sp;
    let lam_n1 = adjoint_node(sys, traj, n, &dj_n, None, None)?;
    let lam_n2 = adjoint_node(sys, traj, n - 1, &dj_n1, Some(&lam_n1), None)?;
    Ok((lam_n1, lam_n2))
}

/// One interior backward step: `λ_{n−1}` from `λ_n` and `λ_{n+1}`, for
/// `1 ≤ n ≤ N−2`.
pub fn adjoint_step<S: DiscreteSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    lambda_next: &DVector<f64>,
    lambda_curr: &DVector<f64>,
    n: usize,
) -> Result<DVector<f64>> {
    let steps = traj.steps();
    if n == 0 || n + 2 > steps {
        return Err(Error::IndexOutOfRange(format!("adjoint step {n} outside 1..={}", steps.saturating_sub(2))));
    }
    let zero = DVector::zeros(sys.dim_q());
    adjoint_node(sys, traj, n, &zero, Some(lambda_curr), Some(lambda_next))
}

/// Full backward sweep producing `λ_0 .. λ_{N−1}`.
pub fn backward_sweep<S: DiscreteSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    obj: &OcpObjective,
) -> Result<Vec<DVector<f64>>> {
    traj.validate()?;
    let n = traj.steps();
    if n == 1 {
        let dj = &obj.s_q * (&traj.q[1] - &obj.q_target)
            + (sys.d22_ld(&traj.q[0], &traj.q[1]) + sys.d2_f_plus(&traj.q[0], &traj.q[1], &traj.u[0]))
                .transpose()
                * momentum_residual(traj, obj)?;
        return Ok(vec![adjoint_node(sys, traj, 1, &dj, None, None)?]);
    }
    let mut lambda = vec![DVector::zeros(sys.dim_q()); n];
    let (l1, l2) = adjoint_boundary(sys, traj, obj)?;
    lambda[n - 1] = l1;
    lambda[n - 2] = l2;
    for k in (1..n - 1).rev() {
        lambda[k - 1] = adjoint_step(sys, traj, &lambda[k + 1], &lambda[k], k)?;
    }
    Ok(lambda)
}

/// Gradient of the reduced objective with respect to every control `u_n`.
pub fn control_gradient<S: DiscreteSystem + ?Sized>(
    sys: &S,
    traj: &Trajectory,
    lambda: &[DVector<f64>],
    obj: &OcpObjective,
) -> Result<Vec<DVector<f64>>> {
    traj.validate()?;
    let n = traj.steps();
    if lambda.len() != n {
        return Err(Error::Dimension(format!("expected {n} adjoints, got {}", lambda.len())));
    }
    let sp = momentum_residual(traj, obj)?;
    let q = &traj.q;
    Ok((0..n)
        .map(|k| {
            let u = &traj.u[k];
            let mut g = &obj.r * u + sys.d3_f_minus(&q[k], &q[k + 1], u).transpose() * &lambda[k];
            let d3p = sys.d3_f_plus(&q[k], &q[k + 1], u).transpose();
            if k + 1 < n {
                g += d3p * &lambda[k + 1];
            } else {
                g += d3p * &sp;
            }
            g
        })
        .collect())
}

/// Forward solve, backward sweep and gradient in one call; the trajectory is
/// returned with its adjoints attached.
pub fn gradient<S: DiscreteSystem + ?Sized>(
    sys: &S,
    q0: &DVector<f64>,
    p0: &DVector<f64>,
    controls: &[DVector<f64>],
    obj: &OcpObjective,
    settings: &NewtonSettings,
) -> Result<(f64, Vec<DVector<f64>>, Trajectory)> {
    let mut traj = integrate(sys, q0, p0, controls, settings)?;
    let j = objective(&traj, obj)?;
    let lambda = backward_sweep(sys, &traj, obj)?;
    let g = control_gradient(sys, &traj, &lambda, obj)?;
    traj.lambda = Some(lambda);
    Ok((j, g, traj))
}

/// Right momentum at the final node, recomputed from the trajectory.
pub fn final_momentum<S: DiscreteSystem + ?Sized>(sys: &S, traj: &Trajectory) -> DVector<f64> {
    let n = traj.steps();
    legendre_plus(sys, &traj.q[n - 1], &traj.q[n], &traj.u[n - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanics::midpoint_discretize;
    use approx::assert_relative_eq;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn objective_examples() {
        let traj = Trajectory { h: 0.1, q: vec![s(0.0), s(1.0)], u: vec![s(0.0)], lambda: None, p_final: Some(s(0.0)) };
        let at_target = OcpObjective::scalar(1.0, 1.0, 1.0, s(1.0), s(0.0), 1);
        assert_eq!(objective(&traj, &at_target).unwrap(), 0.0);
        let off = OcpObjective::scalar(2.0, 0.0, 1.0, s(0.0), s(0.0), 1);
        assert_eq!(objective(&traj, &off).unwrap(), 1.0);
        let no_p = Trajectory { p_final: None, ..traj };
        assert!(objective(&no_p, &off).is_err());
    }

    #[test]
    fn weight_validation() {
        let ok = OcpObjective::scalar(1.0, 0.0, 1e-3, s(0.0), s(0.0), 1);
        assert!(ok.validate(1, 1).is_ok());
        let neg = OcpObjective::scalar(-1.0, 0.0, 1.0, s(0.0), s(0.0), 1);
        assert!(neg.validate(1, 1).is_err());
        let singular_r = OcpObjective::scalar(1.0, 0.0, 0.0, s(0.0), s(0.0), 1);
        assert!(singular_r.validate(1, 1).is_err());
        let mut asym = OcpObjective::scalar(1.0, 0.0, 1.0, DVector::zeros(2), DVector::zeros(2), 1);
        asym.s_q[(0, 1)] = 0.5;
        assert!(asym.validate(2, 1).is_err());
    }

    #[test]
    fn free_particle_gradient_matches_finite_differences() {
        let sys = midpoint_discretize(1, |_q, v| 0.5 * v.dot(v), 0.1)
            .with_input(DMatrix::identity(1, 1))
            .unwrap();
        let obj = OcpObjective::scalar(3.0, 0.5, 0.1, s(1.0), s(0.2), 1);
        let settings = NewtonSettings::default();
        let controls: Vec<_> = (0..6).map(|k| s(0.3 * k as f64 - 0.5)).collect();
        let (_, g, _) = gradient(&sys, &s(0.0), &s(0.1), &controls, &obj, &settings).unwrap();
        for k in 0..controls.len() {
            let eps = 1e-5;
            let mut up = controls.clone();
            up[k][0] += eps;
            let mut dn = controls.clone();
            dn[k][0] -= eps;
            let fd = (reduced_objective(&sys, &s(0.0), &s(0.1), &up, &obj, &settings).unwrap()
                - reduced_objective(&sys, &s(0.0), &s(0.1), &dn, &obj, &settings).unwrap())
                / (2.0 * eps);
            assert_relative_eq!(g[k][0], fd, epsilon = 1e-6, max_relative = 1e-5);
        }
    }

    #[test]
    fn single_step_sweep() {
        let sys = midpoint_discretize(1, |_q, v| 0.5 * v.dot(v), 0.5)
            .with_input(DMatrix::identity(1, 1))
            .unwrap();
        let obj = OcpObjective::scalar(1.0, 0.0, 1.0, s(1.0), s(0.0), 1);
        let traj = integrate(&sys, &s(0.0), &s(0.0), &[s(0.0)], &NewtonSettings::default()).unwrap();
        let lam = backward_sweep(&sys, &traj, &obj).unwrap();
        // q_1 = 0, D12 L_d = −1/h = −2 and the right-hand side is −S_q (q_1 − 1) = 1
        assert_relative_eq!(lam[0][0], -0.5, epsilon = 1e-6);
        assert!(adjoint_step(&sys, &traj, &lam[0], &lam[0], 1).is_err());
    }
}
