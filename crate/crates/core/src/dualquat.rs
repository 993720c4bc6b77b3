//! Quaternion and dual-quaternion algebra.
//!
//! Storage order is `(w, x, y, z)` for a quaternion and real part before dual
//! part for a dual quaternion; every matrix in this crate uses that order.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, SMatrix, SVector, Vector3, Vector4, Vector6};

use crate::error::{Error, Result};

pub type Vector8 = SVector<f64, 8>;
pub type Matrix8 = SMatrix<f64, 8, 8>;
pub type Matrix8x6 = SMatrix<f64, 8, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 0.0)
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0)
    }

    pub fn pure(v: &Vector3<f64>) -> Self {
        Self::new(0.0, v.x, v.y, v.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn vec_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(&self) -> f64 {
        self.dot(self)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    /// `L_a` with `L_a vec(b) = vec(a b)`.
    pub fn left_matrix(&self) -> Matrix4<f64> {
        let Self { w, x, y, z } = *self;
        Matrix4::new(w, -x, -y, -z, x, w, -z, y, y, z, w, -x, z, -y, x, w)
    }

    /// `R_b` with `R_b vec(a) = vec(a b)`.
    pub fn right_matrix(&self) -> Matrix4<f64> {
        let Self { w, x, y, z } = *self;
        Matrix4::new(w, -x, -y, -z, x, w, z, -y, y, -z, w, x, z, y, -x, w)
    }

    /// Rotation matrix of a unit quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let Self { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// `½ [[−q1 −q2 −q3], [q0 −q3 q2], [q3 q0 −q1], [−q2 q1 q0]]`, so that
    /// `P(q) ω = ½ q ω` for a pure quaternion `ω`.
    pub fn null_space(&self) -> SMatrix<f64, 4, 3> {
        let Self { w, x, y, z } = *self;
        SMatrix::<f64, 4, 3>::new(-x, -y, -z, w, -z, y, z, w, -x, -y, x, w) * 0.5
    }
}

impl Mul for Quaternion {
    type Output = Quaternion;
    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    fn add(self, b: Quaternion) -> Quaternion {
        Quaternion::new(self.w + b.w, self.x + b.x, self.y + b.y, self.z + b.z)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    fn sub(self, b: Quaternion) -> Quaternion {
        Quaternion::new(self.w - b.w, self.x - b.x, self.y - b.y, self.z - b.z)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    fn neg(self) -> Quaternion {
        self.scale(-1.0)
    }
}

pub fn q_mul(a: &Quaternion, b: &Quaternion) -> Quaternion {
    *a * *b
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualQuaternion {
    pub real: Quaternion,
    pub dual: Quaternion,
}

impl DualQuaternion {
    pub const fn new(real: Quaternion, dual: Quaternion) -> Self {
        Self { real, dual }
    }

    pub const fn identity() -> Self {
        Self::new(Quaternion::identity(), Quaternion::zero())
    }

    pub fn from_vector(v: &Vector8) -> Self {
        Self::new(
            Quaternion::new(v[0], v[1], v[2], v[3]),
            Quaternion::new(v[4], v[5], v[6], v[7]),
        )
    }

    pub fn to_vector(&self) -> Vector8 {
        let (r, d) = (self.real, self.dual);
        Vector8::from_column_slice(&[r.w, r.x, r.y, r.z, d.w, d.x, d.y, d.z])
    }

    pub fn conj(&self) -> Self {
        Self::new(self.real.conj(), self.dual.conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.real.scale(s), self.dual.scale(s))
    }

    /// Translation `x = 2 q_ε q̄_r` of a unit element.
    pub fn translation(&self) -> Vector3<f64> {
        (self.dual * self.real.conj()).vec_part() * 2.0
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.real.rotation_matrix()
    }

    /// Closest unit dual quaternion: unit real part, dual part made orthogonal to it.
    pub fn normalized(&self) -> Result<DualQuaternion> {
        let n = self.real.norm_squared().sqrt();
        if !(n > 0.0) {
            return Err(Error::DegenerateRealPart);
        }
        let real = self.real.scale(1.0 / n);
        let dual = self.dual.scale(1.0 / n);
        Ok(DualQuaternion::new(real, dual - real.scale(real.dot(&dual))))
    }

    /// Rotation angle in `[0, 2π]`.
    pub fn rotation_angle(&self) -> f64 {
        2.0 * self.real.vec_part().norm().atan2(self.real.w)
    }
}

impl Mul for DualQuaternion {
    type Output = DualQuaternion;
    fn mul(self, b: DualQuaternion) -> DualQuaternion {
        DualQuaternion::new(self.real * b.real, self.real * b.dual + self.dual * b.real)
    }
}

impl Add for DualQuaternion {
    type Output = DualQuaternion;
    fn add(self, b: DualQuaternion) -> DualQuaternion {
        DualQuaternion::new(self.real + b.real, self.dual + b.dual)
    }
}

impl Sub for DualQuaternion {
    type Output = DualQuaternion;
    fn sub(self, b: DualQuaternion) -> DualQuaternion {
        DualQuaternion::new(self.real - b.real, self.dual - b.dual)
    }
}

pub fn dq_mul(a: &DualQuaternion, b: &DualQuaternion) -> DualQuaternion {
    *a * *b
}

pub fn dq_conj(a: &DualQuaternion) -> DualQuaternion {
    a.conj()
}

/// `‖p_r‖ + p_rᵀ p_ε / ‖p_r‖`
pub fn dq_seminorm(a: &DualQuaternion) -> Result<f64> {
    let nr = a.real.norm_squared().sqrt();
    if nr == 0.0 {
        return Err(Error::DegenerateRealPart);
    }
    Ok(nr + a.real.dot(&a.dual) / nr)
}

/// `(|q_r|² − 1, q_r · q_ε)`
pub fn unity_residual(a: &DualQuaternion) -> (f64, f64) {
    (a.real.norm_squared() - 1.0, a.real.dot(&a.dual))
}

/// Rotation by `theta` about the unit `axis`, followed by `translation`.
pub fn from_screw(theta: f64, axis: &Vector3<f64>, translation: &Vector3<f64>) -> Result<DualQuaternion> {
    let n = axis.norm();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::NonUnitAxis(n));
    }
    let (s, c) = (0.5 * theta).sin_cos();
    let q = Quaternion::new(c, s * axis.x, s * axis.y, s * axis.z);
    Ok(DualQuaternion::new(q, (Quaternion::pure(translation) * q).scale(0.5)))
}

fn sinc(phi: f64) -> f64 {
    if phi < 1e-4 {
        let p2 = phi * phi;
        1.0 - p2 / 6.0 + p2 * p2 / 120.0
    } else {
        phi.sin() / phi
    }
}

/// `(cos φ − sinc φ) / φ²`
fn sinc_defect(phi: f64) -> f64 {
    if phi < 1e-3 {
        let p2 = phi * phi;
        -1.0 / 3.0 + p2 / 30.0 - p2 * p2 / 840.0
    } else {
        (phi.cos() - phi.sin() / phi) / (phi * phi)
    }
}

/// `exp(½ (ω + ε v))` for `ξ = (ω, v)`; always a unit dual quaternion.
pub fn dq_exp_tangent(xi: &Vector6<f64>) -> DualQuaternion {
    let a = Vector3::new(xi[0], xi[1], xi[2]) * 0.5;
    let b = Vector3::new(xi[3], xi[4], xi[5]) * 0.5;
    let phi = a.norm();
    let (sc, defect) = (sinc(phi), sinc_defect(phi));
    let ab = a.dot(&b);
    let real = Quaternion::new(phi.cos(), sc * a.x, sc * a.y, sc * a.z);
    let dv = a * (defect * ab) + b * sc;
    let dual = Quaternion::new(-sc * ab, dv.x, dv.y, dv.z);
    DualQuaternion::new(real, dual)
}

/// `L_a` with `L_a vec(b) = vec(a b)`: `[[L_r, 0], [L_ε, L_r]]`.
pub fn left_mul_matrix(a: &DualQuaternion) -> Matrix8 {
    let lr = a.real.left_matrix();
    let le = a.dual.left_matrix();
    let mut m = Matrix8::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&lr);
    m.fixed_view_mut::<4, 4>(4, 0).copy_from(&le);
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(&lr);
    m
}

/// `R_b` with `R_b vec(a) = vec(a b)`.
pub fn right_mul_matrix(b: &DualQuaternion) -> Matrix8 {
    let rr = b.real.right_matrix();
    let re = b.dual.right_matrix();
    let mut m = Matrix8::zeros();
    m.fixed_view_mut::<4, 4>(0, 0).copy_from(&rr);
    m.fixed_view_mut::<4, 4>(4, 0).copy_from(&re);
    m.fixed_view_mut::<4, 4>(4, 4).copy_from(&rr);
    m
}

/// Matrix of the conjugation `vec(ā) = K vec(a)`.
pub fn conj_matrix() -> Matrix8 {
    Matrix8::from_diagonal(&Vector8::from_column_slice(&[1.0, -1.0, -1.0, -1.0, 1.0, -1.0, -1.0, -1.0]))
}

/// `[[P(q_r), 0], [P(q_ε), P(q_r)]]`; `P̃(a) ξ = ½ a (ω + ε v)`.
pub fn beam_null_space(a: &DualQuaternion) -> Matrix8x6 {
    let pr = a.real.null_space();
    let pe = a.dual.null_space();
    let mut m = Matrix8x6::zeros();
    m.fixed_view_mut::<4, 3>(0, 0).copy_from(&pr);
    m.fixed_view_mut::<4, 3>(4, 0).copy_from(&pe);
    m.fixed_view_mut::<4, 3>(4, 3).copy_from(&pr);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn quat() -> impl Strategy<Value = Quaternion> {
        prop::array::uniform4(-2.0..2.0f64).prop_map(|a| Quaternion::new(a[0], a[1], a[2], a[3]))
    }

    fn dual() -> impl Strategy<Value = DualQuaternion> {
        (quat(), quat()).prop_map(|(r, d)| DualQuaternion::new(r, d))
    }

    fn unit() -> impl Strategy<Value = DualQuaternion> {
        prop::array::uniform6(-3.0..3.0f64).prop_map(|a| dq_exp_tangent(&Vector6::from_column_slice(&a)))
    }

    fn close8(a: &Vector8, b: &Vector8, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn basis_relations() {
        let i = Quaternion::new(0.0, 1.0, 0.0, 0.0);
        let j = Quaternion::new(0.0, 0.0, 1.0, 0.0);
        let k = Quaternion::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(i * j, k);
        assert_eq!(i * j * k, Quaternion::new(-1.0, 0.0, 0.0, 0.0));
        assert_eq!(i * i, Quaternion::new(-1.0, 0.0, 0.0, 0.0));
        let eps = DualQuaternion::new(Quaternion::zero(), Quaternion::identity());
        assert_eq!(eps * eps, DualQuaternion::new(Quaternion::zero(), Quaternion::zero()));
    }

    #[test]
    fn seminorm_examples() {
        assert_eq!(dq_seminorm(&DualQuaternion::identity()).unwrap(), 1.0);
        let two = DualQuaternion::new(Quaternion::new(0.0, 2.0, 0.0, 0.0), Quaternion::zero());
        assert_eq!(dq_seminorm(&two).unwrap(), 2.0);
        let degenerate = DualQuaternion::new(Quaternion::zero(), Quaternion::identity());
        assert_eq!(dq_seminorm(&degenerate), Err(Error::DegenerateRealPart));
    }

    #[test]
    fn unity_examples() {
        assert_eq!(unity_residual(&DualQuaternion::identity()), (0.0, 0.0));
        assert_eq!(unity_residual(&DualQuaternion::identity().scale(2.0)), (3.0, 0.0));
        let q = from_screw(1.1, &Vector3::new(0.0, 0.6, 0.8), &Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let (c1, c2) = unity_residual(&q);
        assert!(c1.abs() < 1e-14 && c2.abs() < 1e-14);
    }

    #[test]
    fn screw_examples() {
        let id = from_screw(0.0, &Vector3::z(), &Vector3::zeros()).unwrap();
        assert_eq!(id, DualQuaternion::identity());
        let half = from_screw(PI, &Vector3::z(), &Vector3::zeros()).unwrap();
        assert_relative_eq!(half.real.w, 0.0, epsilon = 1e-16);
        assert_eq!(half.real.z, 1.0);
        assert!(matches!(from_screw(1.0, &Vector3::new(1.0, 1.0, 0.0), &Vector3::zeros()), Err(Error::NonUnitAxis(_))));
    }

    #[test]
    fn exponential_examples() {
        assert_eq!(dq_exp_tangent(&Vector6::zeros()), DualQuaternion::identity());
        let theta = 0.8;
        let q = dq_exp_tangent(&Vector6::new(0.0, 0.0, theta, 0.0, 0.0, 0.0));
        assert_relative_eq!(q.rotation_angle(), theta, epsilon = 1e-14);
        let screw = from_screw(theta, &Vector3::z(), &Vector3::zeros()).unwrap();
        assert!(close8(&q.to_vector(), &screw.to_vector(), 1e-15));
        // pure translation
        let t = dq_exp_tangent(&Vector6::new(0.0, 0.0, 0.0, 1.0, 2.0, 3.0));
        assert!((t.translation() - Vector3::new(1.0, 2.0, 3.0)).amax() < 1e-15);
    }

    #[test]
    fn exponential_small_angles_are_continuous() {
        for &s in &[1e-2, 1e-3, 9.99e-4, 1.001e-3, 1e-4, 9.9e-5, 1e-6] {
            let xi = Vector6::new(s, -0.5 * s, 0.3 * s, 0.7, -0.2, 0.1);
            let q = dq_exp_tangent(&xi);
            let (c1, c2) = unity_residual(&q);
            assert!(c1.abs() < 1e-15 && c2.abs() < 1e-15);
            // first-order behaviour: q ≈ 1 + ½ ξ̂
            assert_relative_eq!(q.dual.x, 0.35, epsilon = 1e-4);
        }
        assert_relative_eq!(sinc_defect(1.0001e-3), sinc_defect(0.9999e-3), epsilon = 1e-9);
        assert_relative_eq!(sinc(1.0001e-4), sinc(0.9999e-4), epsilon = 1e-12);
    }

    #[test]
    fn null_space_at_identity() {
        let p = beam_null_space(&DualQuaternion::identity());
        let mut expected = Matrix8x6::zeros();
        for k in 0..3 {
            expected[(k + 1, k)] = 0.5;
            expected[(k + 5, k + 3)] = 0.5;
        }
        assert_eq!(p, expected);
    }

    #[test]
    fn left_matrix_of_identity() {
        assert_eq!(left_mul_matrix(&DualQuaternion::identity()), Matrix8::identity());
        assert_eq!(right_mul_matrix(&DualQuaternion::identity()), Matrix8::identity());
    }

    #[test]
    fn long_update_chain_keeps_unity() {
        let mut q = DualQuaternion::identity();
        let mut state = 7u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 0.2 - 0.1
        };
        for _ in 0..10_000 {
            let xi = Vector6::new(next(), next(), next(), next(), next(), next());
            q = q * dq_exp_tangent(&xi);
        }
        let (c1, c2) = unity_residual(&q);
        assert!(c1.abs() < 1e-9 && c2.abs() < 1e-9, "drift {c1:e} {c2:e}");
    }

    proptest! {
        #[test]
        fn quaternion_matrices_match_products(a in quat(), b in quat()) {
            let ab = (a * b).to_vector();
            prop_assert!((a.left_matrix() * b.to_vector() - ab).amax() < 1e-12);
            prop_assert!((b.right_matrix() * a.to_vector() - ab).amax() < 1e-12);
        }

        #[test]
        fn dual_matrices_match_products(a in dual(), b in dual()) {
            let ab = (a * b).to_vector();
            prop_assert!(close8(&(left_mul_matrix(&a) * b.to_vector()), &ab, 1e-11));
            prop_assert!(close8(&(right_mul_matrix(&b) * a.to_vector()), &ab, 1e-11));
            prop_assert!(close8(&(conj_matrix() * a.to_vector()), &a.conj().to_vector(), 0.0));
        }

        #[test]
        fn identity_is_neutral(a in dual()) {
            prop_assert_eq!(a * DualQuaternion::identity(), a);
            prop_assert_eq!(DualQuaternion::identity() * a, a);
        }

        #[test]
        fn conjugate_reverses_products(a in dual(), b in dual()) {
            prop_assert!(close8(&(a * b).conj().to_vector(), &(b.conj() * a.conj()).to_vector(), 1e-11));
        }

        #[test]
        fn seminorm_closed_form(a in dual()) {
            prop_assume!(a.real.norm_squared() > 1e-3);
            // ā a = |a_r|² + 2 (a_r · a_ε) ε, and √(x + ε y) = √x + ε y / (2 √x)
            let prod = a.conj() * a;
            let direct = prod.real.w.sqrt() + prod.dual.w / (2.0 * prod.real.w.sqrt());
            prop_assert!((dq_seminorm(&a).unwrap() - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }

        #[test]
        fn unit_elements_multiply_to_unit(a in unit(), b in unit()) {
            prop_assert!((dq_seminorm(&(a * b)).unwrap() - 1.0).abs() < 1e-12);
            let (c1, c2) = unity_residual(&a);
            prop_assert!(c1.abs() < 1e-12 && c2.abs() < 1e-12);
        }

        #[test]
        fn left_matrix_of_unit_is_invertible_by_conjugate(a in unit()) {
            let l = left_mul_matrix(&a);
            let linv = left_mul_matrix(&a.conj());
            prop_assert!((linv * l - Matrix8::identity()).amax() < 1e-12);
            // the rotational block is orthogonal
            let lr = l.fixed_view::<4, 4>(0, 0).into_owned();
            prop_assert!((lr.transpose() * lr - Matrix4::identity()).amax() < 1e-12);
        }

        #[test]
        fn null_space_annihilates_constraint_gradients(a in unit()) {
            let p = beam_null_space(&a);
            let r = a.real.to_vector();
            let e = a.dual.to_vector();
            // gradients of |q_r|² − 1 and q_r · q_ε
            let mut g1 = Vector8::zeros();
            g1.fixed_rows_mut::<4>(0).copy_from(&(2.0 * r));
            let mut g2 = Vector8::zeros();
            g2.fixed_rows_mut::<4>(0).copy_from(&e);
            g2.fixed_rows_mut::<4>(4).copy_from(&r);
            prop_assert!((g1.transpose() * p).amax() < 1e-12);
            prop_assert!((g2.transpose() * p).amax() < 1e-12);
            let sv = p.singular_values();
            prop_assert!(sv.min() > 1e-3);
        }

        #[test]
        fn null_space_is_half_right_product(a in unit(), xi in prop::array::uniform6(-1.0..1.0f64)) {
            let xi = Vector6::from_column_slice(&xi);
            let hat = DualQuaternion::new(
                Quaternion::new(0.0, xi[0], xi[1], xi[2]),
                Quaternion::new(0.0, xi[3], xi[4], xi[5]),
            );
            let expected = (a * hat).scale(0.5).to_vector();
            prop_assert!(close8(&(beam_null_space(&a) * xi), &expected, 1e-12));
        }

        #[test]
        fn screw_round_trip(theta in -3.0..3.0f64, axis in prop::array::uniform3(-1.0..1.0f64),
                            t in prop::array::uniform3(-5.0..5.0f64)) {
            let axis = Vector3::from_column_slice(&axis);
            prop_assume!(axis.norm() > 1e-2);
            let axis = axis.normalize();
            let t = Vector3::from_column_slice(&t);
            let q = from_screw(theta, &axis, &t).unwrap();
            // oracle: the rotation matrix of the axis-angle pair
            let oracle = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), theta);
            prop_assert!((q.rotation_matrix() - oracle.matrix()).amax() < 1e-12);
            prop_assert!((q.translation() - t).amax() < 1e-12);
            // back from the matrix, up to the double-cover sign
            let back = nalgebra::UnitQuaternion::from_rotation_matrix(&oracle);
            let c = back.quaternion().coords; // (i, j, k, w)
            let same = Quaternion::new(c[3], c[0], c[1], c[2]);
            let d = (same - q.real).to_vector().amax().min((same + q.real).to_vector().amax());
            prop_assert!(d < 1e-12);
        }

        #[test]
        fn exponential_is_unit(xi in prop::array::uniform6(-10.0..10.0f64)) {
            let (c1, c2) = unity_residual(&dq_exp_tangent(&Vector6::from_column_slice(&xi)));
            prop_assert!(c1.abs() < 1e-12 && c2.abs() < 1e-12);
        }
    }
}
