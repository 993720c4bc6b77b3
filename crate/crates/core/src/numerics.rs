//! Small dense numerical kernels shared by all integrators: Newton iteration,
//! central-difference derivative oracles, grid-aligned error norms and
//! convergence-order fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanics::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonSettings {
    /// Infinity norm of the residual accepted as converged.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    /// Fraction of the Newton increment applied per iteration, in (0, 1].
    pub step_damping: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { residual_tolerance: 1e-10, max_iterations: 50, step_damping: 1.0 }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::Config("residual_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.step_damping > 0.0 && self.step_damping <= 1.0) {
            return Err(Error::Config("step_damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonReport {
    /// Number of increments applied.
    pub iterations: usize,
    pub residual_norm: f64,
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Solves `a x = b` by partial-pivot LU.
pub fn solve_linear(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "linear system {}x{} with rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let x = a.clone().lu().solve(b).ok_or(Error::SingularJacobian)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularJacobian)
    }
}

/// Solves `aᵀ x = b`, i.e. the row-covector system `xᵀ a = bᵀ`.
pub fn solve_transposed(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    solve_linear(&a.transpose(), b)
}

/// Newton iteration on a general state space. `retract` maps a state and an
/// increment to the next state; for vector unknowns this is plain addition,
/// for manifold-valued unknowns it is the reparametrization.
pub fn newton_solve_with<S, R, J, U>(
    mut state: S,
    mut residual: R,
    mut jacobian: J,
    mut retract: U,
    settings: &NewtonSettings,
) -> Result<(S, NewtonReport)>
where
    R: FnMut(&S) -> Result<DVector<f64>>,
    J: FnMut(&S) -> Result<DMatrix<f64>>,
    U: FnMut(&S, &DVector<f64>) -> S,
{
    let mut r = residual(&state)?;
    let mut norm = inf_norm(&r);
    let mut iterations = 0;
    while !(norm <= settings.residual_tolerance) {
        if iterations >= settings.max_iterations || !norm.is_finite() {
            return Err(Error::NonConvergence { iterations, residual: norm });
        }
        let jac = jacobian(&state)?;
        let delta = solve_linear(&jac, &(-&r))? * settings.step_damping;
        state = retract(&state, &delta);
        iterations += 1;
        r = residual(&state)?;
        norm = inf_norm(&r);
    }
    Ok((state, NewtonReport { iterations, residual_norm: norm }))
}

/// Newton iteration for `residual(x) = 0` in R^k.
pub fn newton_solve<R, J>(
    residual: R,
    jacobian: J,
    x0: DVector<f64>,
    settings: &NewtonSettings,
) -> Result<DVector<f64>>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    newton_solve_report(residual, jacobian, x0, settings).map(|(x, _)| x)
}

pub fn newton_solve_report<R, J>(
    mut residual: R,
    mut jacobian: J,
    x0: DVector<f64>,
    settings: &NewtonSettings,
) -> Result<(DVector<f64>, NewtonReport)>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    newton_solve_with(
        x0,
        |x| Ok(residual(x)),
        |x| Ok(jacobian(x)),
        |x, dx| x + dx,
        settings,
    )
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(mut f: F, x: &DVector<f64>, eps: f64) -> DVector<f64>
where
    F: FnMut(&DVector<f64>) -> f64,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let fp = f(&xp);
        xp[i] = x[i] - eps;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * eps);
    }
    g
}

/// Central-difference Jacobian of a vector function; column `j` is the
/// derivative with respect to `x[j]`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, eps: f64) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let mut xp = x.clone();
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        xp[j] = x[j] + eps;
        let fp = f(&xp);
        xp[j] = x[j] - eps;
        let fm = f(&xp);
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * eps));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i])
}

/// Forward-difference Jacobian with per-component step `1e-7 (1 + |x_j|)`.
/// Fallback for systems without analytic derivatives.
pub fn forward_jacobian<F>(mut f: F, x: &DVector<f64>) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let f0 = f(x);
    let mut xp = x.clone();
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for j in 0..x.len() {
        let eps = 1e-7 * (1.0 + x[j].abs());
        xp[j] = x[j] + eps;
        let fp = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - &f0) / eps));
    }
    jac
}

/// Error of a numerical solution against a reference for a sequence of
/// step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub label: String,
    pub step_sizes: Vec<f64>,
    pub errors: Vec<f64>,
}

impl ErrorTable {
    pub fn new(label: impl Into<String>, step_sizes: Vec<f64>, errors: Vec<f64>) -> Result<Self> {
        if step_sizes.len() != errors.len() {
            return Err(Error::InvalidTable("step_sizes and errors differ in length".into()));
        }
        if step_sizes.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidTable("step sizes must be strictly decreasing".into()));
        }
        if errors.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidTable("errors must be non-negative".into()));
        }
        Ok(Self { label: label.into(), step_sizes, errors })
    }

    pub fn len(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.step_sizes.is_empty()
    }
}

/// Least-squares slope of `log(error)` against `log(h)`.
pub fn estimate_order(table: &ErrorTable) -> Result<f64> {
    if table.len() < 3 {
        return Err(Error::InvalidTable("at least three rows are needed".into()));
    }
    if table.errors.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidTable("errors must be strictly positive for a log fit".into()));
    }
    let xs: Vec<f64> = table.step_sizes.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = table.errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>().max(1.0) {
        return Err(Error::DegenerateFit);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Integer ratio between a coarse and a fine step, if the grids align.
pub fn step_ratio(coarse_h: f64, fine_h: f64) -> Result<usize> {
    if !(coarse_h > 0.0 && fine_h > 0.0) {
        return Err(Error::GridMismatch("step sizes must be positive".into()));
    }
    let ratio = coarse_h / fine_h;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(Error::GridMismatch(format!(
            "step {coarse_h} is not an integer multiple of {fine_h}"
        )));
    }
    Ok(rounded as usize)
}

/// Largest componentwise deviation between a coarse sequence and a fine
/// reference sampled at the coarse nodes. Node `i` of the coarse sequence sits
/// at time `i * coarse_h`.
pub fn infinity_error_series(
    coarse: &[DVector<f64>],
    coarse_h: f64,
    reference: &[DVector<f64>],
    reference_h: f64,
) -> Result<f64> {
    let ratio = step_ratio(coarse_h, reference_h)?;
    if coarse.is_empty() {
        return Ok(0.0);
    }
    let last = (coarse.len() - 1) * ratio;
    if last >= reference.len() {
        return Err(Error::GridMismatch(format!(
            "coarse node {} maps to reference index {last}, beyond {} samples",
            coarse.len() - 1,
            reference.len()
        )));
    }
    let mut err = 0.0_f64;
    for (i, c) in coarse.iter().enumerate() {
        let r = &reference[i * ratio];
        if r.len() != c.len() {
            return Err(Error::GridMismatch("component counts differ".into()));
        }
        err = err.max((c - r).amax());
    }
    Ok(err)
}

/// Configuration error of `coarse` against `reference`, sampled on the
/// coarse time nodes.
pub fn infinity_error(coarse: &Trajectory, reference: &Trajectory) -> Result<f64> {
    infinity_error_series(&coarse.q, coarse.h, &reference.q, reference.h)
}
