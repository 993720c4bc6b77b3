//! Value, gradient and Hessian of the spacetime-trapezoidal cell Lagrangian,
//! Kelvin-Voigt forces and the boundary torque covector.
//!
//! Every rate entering a cell has the bilinear form
//! `v = inv · conj(x_i) (x_j − x_k)` in the corner values, so all first and
//! second derivatives follow from left/right multiplication matrices and the
//! contracted multiplication table.

use std::sync::OnceLock;

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};

use super::{BeamMaterial, SectionMatrices};
use crate::dualquat::{conj_matrix, left_mul_matrix, right_mul_matrix, DualQuaternion, Matrix8, Quaternion, Vector8};

pub(crate) type Vector32 = SVector<f64, 32>;
pub(crate) type Matrix32 = SMatrix<f64, 32, 32>;
type Jacobian = SMatrix<f64, 8, 32>;

/// Reference curvature `q̄_ref q′_ref` of the straight beam along `e1`.
pub(crate) fn reference_curvature() -> Vector8 {
    Vector8::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0])
}

#[derive(Debug, Clone)]
pub(crate) struct CellContext {
    pub dt: f64,
    pub ds: f64,
    pub inertia: Vector8,
    pub stiffness: Vector8,
    pub damping: Vector8,
    pub kappa_ref: Vector8,
    /// `Ũ(q) = γ · vec(q_ε q̄_r)`, i.e. `γ = (0, −2ρA g)`.
    pub gamma: Vector4<f64>,
    pub potential_hessian: Matrix8,
}

impl CellContext {
    pub fn new(mat: &BeamMaterial, sections: &SectionMatrices, dt: f64, ds: f64) -> Self {
        let g = mat.gravity * (-2.0 * mat.rho * mat.a_cross);
        let gamma = Vector4::new(0.0, g.x, g.y, g.z);
        Self {
            dt,
            ds,
            inertia: sections.inertia_weights(),
            stiffness: sections.stiffness_weights(),
            damping: sections.dtilde.diagonal(),
            kappa_ref: reference_curvature(),
            gamma,
            potential_hessian: potential_hessian(&gamma),
        }
    }

    /// Trapezoidal corner weight `Δt Δs / 4`.
    pub fn corner_weight(&self) -> f64 {
        0.25 * self.dt * self.ds
    }

    pub fn has_damping(&self) -> bool {
        self.damping.iter().any(|&d| d != 0.0)
    }
}

/// `v = inv · conj(x_i) (x_j − x_k)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Bilinear {
    i: usize,
    j: usize,
    k: usize,
    inv: f64,
}

/// Corner `c` evaluates at node `c`, with the time and space difference
/// quotients prescribed by the trapezoidal rule.
const VELOCITY: [(usize, usize, usize); 4] = [(0, 2, 0), (1, 3, 1), (2, 2, 0), (3, 3, 1)];
const STRAIN: [(usize, usize, usize); 4] = [(0, 1, 0), (1, 1, 0), (2, 3, 2), (3, 3, 2)];

pub(crate) fn velocity(c: usize, dt: f64) -> Bilinear {
    let (i, j, k) = VELOCITY[c];
    Bilinear { i, j, k, inv: 1.0 / dt }
}

pub(crate) fn strain(c: usize, ds: f64) -> Bilinear {
    let (i, j, k) = STRAIN[c];
    Bilinear { i, j, k, inv: 1.0 / ds }
}

fn dq(v: &Vector8) -> DualQuaternion {
    DualQuaternion::from_vector(v)
}

impl Bilinear {
    fn scaled(self, s: f64) -> Self {
        Self { inv: self.inv * s, ..self }
    }

    pub fn value(&self, x: &[Vector8; 4]) -> Vector8 {
        (dq(&x[self.i]).conj() * dq(&(x[self.j] - x[self.k]))).to_vector() * self.inv
    }

    pub fn jacobian(&self, x: &[Vector8; 4]) -> Jacobian {
        let mut jac = Jacobian::zeros();
        let d = dq(&(x[self.j] - x[self.k]));
        let wrt_i = right_mul_matrix(&d) * conj_matrix() * self.inv;
        let wrt_jk = left_mul_matrix(&dq(&x[self.i]).conj()) * self.inv;
        let mut add = |slot: usize, m: &Matrix8| {
            let mut block = jac.fixed_view_mut::<8, 8>(0, 8 * slot);
            block += m;
        };
        add(self.i, &wrt_i);
        add(self.j, &wrt_jk);
        add(self.k, &(-wrt_jk));
        jac
    }

    /// Adds `s · ∇²(wᵀ v)` for a fixed covector `w`.
    pub fn add_curvature(&self, w: &Vector8, s: f64, hess: &mut Matrix32) {
        let m = conj_product_form(w) * (s * self.inv);
        let mt = m.transpose();
        let mut add = |r: usize, c: usize, b: &Matrix8| {
            let mut block = hess.fixed_view_mut::<8, 8>(8 * r, 8 * c);
            block += b;
        };
        add(self.i, self.j, &m);
        add(self.j, self.i, &mt);
        add(self.i, self.k, &(-m));
        add(self.k, self.i, &(-mt));
    }
}

fn product_table() -> &'static [[(f64, usize); 8]; 8] {
    static TABLE: OnceLock<[[(f64, usize); 8]; 8]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [[(0.0, 0); 8]; 8];
        for (p, row) in t.iter_mut().enumerate() {
            for (q, entry) in row.iter_mut().enumerate() {
                let prod = (dq(&Vector8::ith(p, 1.0)) * dq(&Vector8::ith(q, 1.0))).to_vector();
                if let Some(m) = (0..8).find(|&m| prod[m] != 0.0) {
                    *entry = (prod[m], m);
                }
            }
        }
        t
    })
}

/// `M(w)[p][q] = wᵀ vec(conj(e_p) e_q)`, the Hessian of `wᵀ vec(conj(a) b)`
/// in `(a, b)`.
pub(crate) fn conj_product_form(w: &Vector8) -> Matrix8 {
    let table = product_table();
    Matrix8::from_fn(|p, q| {
        let (sign, m) = table[p][q];
        let conj_sign = if p == 0 || p == 4 { 1.0 } else { -1.0 };
        conj_sign * sign * w[m]
    })
}

fn potential_hessian(gamma: &Vector4<f64>) -> Matrix8 {
    // ∂²/∂q_r,p ∂q_ε,q of γ · vec(q_ε q̄_r) = γ · vec(e_q conj(e_p))
    let basis = |i: usize| Quaternion::from_vector(&Vector4::ith(i, 1.0));
    let block = Matrix4::from_fn(|p, q| gamma.dot(&(basis(q) * basis(p).conj()).to_vector()));
    let mut h = Matrix8::zeros();
    h.fixed_view_mut::<4, 4>(0, 4).copy_from(&block);
    h.fixed_view_mut::<4, 4>(4, 0).copy_from(&block.transpose());
    h
}

pub(crate) fn potential(ctx: &CellContext, x: &Vector8) -> f64 {
    let q = dq(x);
    ctx.gamma.dot(&(q.dual * q.real.conj()).to_vector())
}

pub(crate) fn potential_gradient(ctx: &CellContext, x: &Vector8) -> Vector8 {
    let q = dq(x);
    let k4 = Matrix4::from_diagonal(&Vector4::new(1.0, -1.0, -1.0, -1.0));
    let gr = k4 * q.dual.left_matrix().transpose() * ctx.gamma;
    let ge = q.real.conj().right_matrix().transpose() * ctx.gamma;
    Vector8::from_iterator(gr.iter().chain(ge.iter()).copied())
}

#[allow(clippy::too_many_arguments)]
fn quadratic_term(
    b: &Bilinear,
    x: &[Vector8; 4],
    weights: &Vector8,
    kappa: Option<&Vector8>,
    s: f64,
    value: &mut f64,
    grad: &mut Vector32,
    hess: Option<&mut Matrix32>,
) {
    let mut e = b.value(x);
    if let Some(k) = kappa {
        e -= k;
    }
    let w = weights.component_mul(&e);
    *value += s * e.dot(&w);
    let jac = b.jacobian(x);
    grad.gemv_tr(2.0 * s, &jac, &w, 1.0);
    if let Some(h) = hess {
        let mut wj = jac;
        for (r, &wr) in weights.iter().enumerate() {
            wj.row_mut(r).scale_mut(wr);
        }
        h.gemm_tr(2.0 * s, &jac, &wj, 1.0);
        b.add_curvature(&w, 2.0 * s, h);
    }
}

/// Cell value `(Δt Δs / 4) Σ_c [2 ṽ_cᵀ W_M ṽ_c − 2 ẽ_cᵀ W_C ẽ_c − Ũ(x_c)]`.
pub(crate) fn lagrangian_value(ctx: &CellContext, x: &[Vector8; 4]) -> f64 {
    let fac = ctx.corner_weight();
    let mut value = 0.0;
    for c in 0..4 {
        let v = velocity(c, ctx.dt).value(x);
        let e = strain(c, ctx.ds).value(x) - ctx.kappa_ref;
        value += 2.0 * v.dot(&ctx.inertia.component_mul(&v)) - 2.0 * e.dot(&ctx.stiffness.component_mul(&e))
            - potential(ctx, &x[c]);
    }
    fac * value
}

/// Value, gradient and (optionally) Hessian of the cell Lagrangian.
pub(crate) fn lagrangian_derivatives(
    ctx: &CellContext,
    x: &[Vector8; 4],
    mut hess: Option<&mut Matrix32>,
) -> (f64, Vector32) {
    let fac = ctx.corner_weight();
    let mut value = 0.0;
    let mut grad = Vector32::zeros();
    for c in 0..4 {
        quadratic_term(&velocity(c, ctx.dt), x, &ctx.inertia, None, 2.0 * fac, &mut value, &mut grad, hess.as_deref_mut());
        quadratic_term(
            &strain(c, ctx.ds),
            x,
            &ctx.stiffness,
            Some(&ctx.kappa_ref),
            -2.0 * fac,
            &mut value,
            &mut grad,
            hess.as_deref_mut(),
        );
        value -= fac * potential(ctx, &x[c]);
        let mut g = grad.fixed_rows_mut::<8>(8 * c);
        g -= potential_gradient(ctx, &x[c]) * fac;
        if let Some(h) = hess.as_deref_mut() {
            let mut block = h.fixed_view_mut::<8, 8>(8 * c, 8 * c);
            block -= ctx.potential_hessian * fac;
        }
    }
    (value, grad)
}

/// Damping strain rates `(K̃₃ − K̃₁)/Δt` and `(K̃₄ − K̃₂)/Δt` of the two cell
/// edges, with `K̃ = 2 conj(q)(q_{a+1} − q_a)/Δs`.
pub(crate) fn strain_rates(ctx: &CellContext, x: &[Vector8; 4]) -> [Vector8; 2] {
    let k: Vec<Vector8> = (0..4).map(|c| strain(c, ctx.ds).scaled(2.0).value(x)).collect();
    [(k[2] - k[0]) / ctx.dt, (k[3] - k[1]) / ctx.dt]
}

/// Kelvin-Voigt force `f = −(Δt Δs / 4) Σ_c (∂K̃_c/∂x)ᵀ D̃ K̃̇_c` on all four
/// slots, and optionally its Jacobian.
pub(crate) fn kelvin_voigt(ctx: &CellContext, x: &[Vector8; 4], jac: Option<&mut Matrix32>) -> Vector32 {
    let mut force = Vector32::zeros();
    if !ctx.has_damping() {
        return force;
    }
    let fac = ctx.corner_weight();
    let bil: Vec<Bilinear> = (0..4).map(|c| strain(c, ctx.ds).scaled(2.0)).collect();
    let jk: Vec<Jacobian> = bil.iter().map(|b| b.jacobian(x)).collect();
    let rates = strain_rates(ctx, x);
    let d = &ctx.damping;
    // corners 1 and 3 share the edge at a, corners 2 and 4 the edge at a + 1
    let edge = [0usize, 1, 0, 1];
    for c in 0..4 {
        let w = d.component_mul(&rates[edge[c]]);
        force.gemv_tr(-fac, &jk[c], &w, 1.0);
    }
    if let Some(m) = jac {
        let drate = [(jk[2] - jk[0]) / ctx.dt, (jk[3] - jk[1]) / ctx.dt];
        for c in 0..4 {
            let mut ddr = drate[edge[c]];
            for (r, &dr) in d.iter().enumerate() {
                ddr.row_mut(r).scale_mut(dr);
            }
            m.gemm_tr(-fac, &jk[c], &ddr, 1.0);
            bil[c].add_curvature(&d.component_mul(&rates[edge[c]]), -fac, m);
        }
    }
    force
}

/// Image `2 Δt Δs u k` of the boundary torque under `L_qᵀ`.
pub(crate) fn control_image(u: f64, dt: f64, ds: f64) -> Vector8 {
    Vector8::ith(3, 2.0 * dt * ds * u)
}

/// Covector `f` with `L_qᵀ f = 2 Δt Δs u k`, i.e. `f = L_{q̄}ᵀ (2 Δt Δs u k)`.
pub(crate) fn control_covector(x: &Vector8, u: f64, dt: f64, ds: f64) -> Vector8 {
    left_mul_matrix(&dq(x).conj()).tr_mul(&control_image(u, dt, ds))
}

/// `∂f/∂q` of [`control_covector`].
pub(crate) fn control_covector_jacobian(u: f64, dt: f64, ds: f64) -> Matrix8 {
    conj_product_form(&control_image(u, dt, ds)).transpose()
}
