//! SO(3) and quaternion utilities.
//!
//! Fiber exp-charts use DOUBLED generators: the basis e_a of so(3) satisfies
//! [e_a, e_b] = 2 e_c (cyclic), matching the sp(1) commutators i, j, k. A fiber
//! coordinate w in R^3 therefore names the rotation Exp(hat(2w)). All maps that
//! feed the dual tower are generic over the scalar; plain-f64 helpers sit on
//! nalgebra types.

use crate::real::Real;
use crate::tensor::SqMat;
use nalgebra::{Matrix3, Vector3};

/// Cross-product matrix: hat(v) u = v x u.
pub fn hat<T: Real>(v: &[T]) -> SqMat<T> {
    let z = T::zero();
    let mut m = SqMat::zeros(3);
    m.a = vec![z, -v[2], v[1], v[2], z, -v[0], -v[1], v[0], z];
    m
}

/// Inverse of v -> 2 hat(v), the doubled-basis coordinate extraction.
pub fn unhat2(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        (m[(2, 1)] - m[(1, 2)]) / 4.0,
        (m[(0, 2)] - m[(2, 0)]) / 4.0,
        (m[(1, 0)] - m[(0, 1)]) / 4.0,
    )
}

fn sinc_series<T: Real>(t: T) -> T {
    // sin(theta)/theta with t = theta^2
    let c3 = T::from_f64(1.0 / 5040.0);
    let c2 = T::from_f64(1.0 / 120.0);
    let c1 = T::from_f64(1.0 / 6.0);
    T::one() - t * (c1 - t * (c2 - t * c3))
}

fn cosc_series<T: Real>(t: T) -> T {
    // (1 - cos(theta))/theta^2
    let c3 = T::from_f64(1.0 / 40320.0);
    let c2 = T::from_f64(1.0 / 720.0);
    let c1 = T::from_f64(1.0 / 24.0);
    T::from_f64(0.5) - t * (c1 - t * (c2 - t * c3))
}

fn theta_minus_sin_series<T: Real>(t: T) -> T {
    // (theta - sin(theta))/theta^3
    let c3 = T::from_f64(1.0 / 362880.0);
    let c2 = T::from_f64(1.0 / 5040.0);
    let c1 = T::from_f64(1.0 / 120.0);
    T::from_f64(1.0 / 6.0) - t * (c1 - t * (c2 - t * c3))
}

fn jinv_c_series<T: Real>(t: T) -> T {
    // 1/theta^2 - (1 + cos theta)/(2 theta sin theta)
    let c2 = T::from_f64(1.0 / 30240.0);
    let c1 = T::from_f64(1.0 / 720.0);
    T::from_f64(1.0 / 12.0) + t * (c1 + t * c2)
}

const SERIES_CUT: f64 = 1e-6; // on theta^2; both branches agree to ~1e-18 here

/// Rodrigues: Exp(hat(u)) for u in R^3.
pub fn exp_hat<T: Real>(u: &[T]) -> SqMat<T> {
    let t = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let (s, c) = if t.value() < SERIES_CUT {
        (sinc_series(t), cosc_series(t))
    } else {
        let th = t.sqrt();
        (th.sin() / th, (T::one() - th.cos()) / t)
    };
    let h = hat(u);
    let h2 = h.matmul(&h);
    SqMat::identity(3).add(&h.scale(s)).add(&h2.scale(c))
}

/// Fiber chart rotation: Exp(hat(2w)).
pub fn exp2<T: Real>(w: &[T]) -> SqMat<T> {
    let two = T::from_f64(2.0);
    let u = [w[0] * two, w[1] * two, w[2] * two];
    exp_hat(&u)
}

/// Right Jacobian of Exp at u: d/dt Exp(hat(u(t))) = Exp(hat u) hat(J_r(u) u').
pub fn right_jacobian<T: Real>(u: &[T]) -> SqMat<T> {
    let t = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let (c, s3) = if t.value() < SERIES_CUT {
        (cosc_series(t), theta_minus_sin_series(t))
    } else {
        let th = t.sqrt();
        ((T::one() - th.cos()) / t, (th - th.sin()) / (t * th))
    };
    let h = hat(u);
    let h2 = h.matmul(&h);
    SqMat::identity(3).sub(&h.scale(c)).add(&h2.scale(s3))
}

/// Inverse right Jacobian.
pub fn right_jacobian_inv<T: Real>(u: &[T]) -> SqMat<T> {
    let t = u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
    let c = if t.value() < SERIES_CUT {
        jinv_c_series(t)
    } else {
        let th = t.sqrt();
        T::one() / t - (T::one() + th.cos()) / ((th + th) * th.sin())
    };
    let h = hat(u);
    let h2 = h.matmul(&h);
    SqMat::identity(3).add(&h.scale(T::from_f64(0.5))).add(&h2.scale(c))
}

/// Fundamental-field chart velocity: the so(3) element `a` (doubled basis) moves
/// the fiber coordinate at rate J_r(2w)^{-1} a.
pub fn fundamental_velocity<T: Real>(w: &[T], a: &[T]) -> Vec<T> {
    let two = T::from_f64(2.0);
    let u = [w[0] * two, w[1] * two, w[2] * two];
    right_jacobian_inv(&u).apply(a)
}

/// Maurer-Cartan coordinate of a fiber chart velocity: theta_MC = J_r(2w) wdot.
pub fn mc_coordinate<T: Real>(w: &[T], wdot: &[T]) -> Vec<T> {
    let two = T::from_f64(2.0);
    let u = [w[0] * two, w[1] * two, w[2] * two];
    right_jacobian(&u).apply(wdot)
}

/// Log of a rotation: u with g = Exp(hat(u)) (f64 level only).
pub fn log_rot(g: &Matrix3<f64>) -> Vector3<f64> {
    nalgebra::Rotation3::from_matrix_unchecked(*g).scaled_axis()
}

/// Rotation taking e1 to the given (nonzero) direction.
pub fn align_e1(v: &Vector3<f64>) -> Matrix3<f64> {
    let n = v.norm();
    assert!(n > 0.0, "cannot align to the zero vector");
    let vhat = v / n;
    let e1 = Vector3::new(1.0, 0.0, 0.0);
    let c = e1.dot(&vhat);
    if c > 1.0 - 1e-14 {
        return Matrix3::identity();
    }
    if c < -1.0 + 1e-14 {
        // half-turn about e3
        return nalgebra::Rotation3::from_scaled_axis(Vector3::new(0.0, 0.0, std::f64::consts::PI))
            .into_inner();
    }
    let axis = e1.cross(&vhat);
    let angle = c.clamp(-1.0, 1.0).acos();
    nalgebra::Rotation3::from_scaled_axis(axis.normalize() * angle).into_inner()
}

pub fn is_rotation(g: &Matrix3<f64>, tolerance: f64) -> bool {
    let err = (g.transpose() * g - Matrix3::identity()).norm();
    err < tolerance && g.determinant() > 0.0
}

/// Nearest rotation to an almost-orthogonal matrix (polar via SVD).
pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u2 = u;
        u2.column_mut(2).scale_mut(-1.0);
        r = u2 * vt;
    }
    r
}

/// Quaternion (1, i, j, k) coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat(pub [f64; 4]);

impl Quat {
    pub fn mul(self, o: Quat) -> Quat {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = o.0;
        Quat([
            a * e - b * f - c * g - d * h,
            a * f + b * e + c * h - d * g,
            a * g - b * h + c * e + d * f,
            a * h + b * g - c * f + d * e,
        ])
    }

    pub fn conj(self) -> Quat {
        let [a, b, c, d] = self.0;
        Quat([a, -b, -c, -d])
    }

    pub fn norm(self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalize(self) -> Quat {
        let n = self.norm();
        Quat([self.0[0] / n, self.0[1] / n, self.0[2] / n, self.0[3] / n])
    }

    /// Rotation on the imaginary part: v -> q v q^-1 (unit q).
    pub fn to_rotation(self) -> Matrix3<f64> {
        let [a, b, c, d] = self.normalize().0;
        Matrix3::new(
            1.0 - 2.0 * (c * c + d * d),
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
            2.0 * (b * c + a * d),
            1.0 - 2.0 * (b * b + d * d),
            2.0 * (c * d - a * b),
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            1.0 - 2.0 * (b * b + c * c),
        )
    }
}

/// Quaternion product at any tower depth; inputs/outputs in (1, i, j, k) order.
pub fn qmul_g<T: Real>(a: &[T], b: &[T]) -> [T; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn qconj_g<T: Real>(a: &[T]) -> [T; 4] {
    [a[0], -a[1], -a[2], -a[3]]
}

/// Matrix of v -> m v at any tower depth (rows index output components).
pub fn qleft_mat_g<T: Real>(m: &[T; 4]) -> [[T; 4]; 4] {
    let [a, b, c, d] = *m;
    [
        [a, -b, -c, -d],
        [b, a, -d, c],
        [c, d, a, -b],
        [d, -c, b, a],
    ]
}

/// 4x4 matrix of right multiplication z -> z q on (1, i, j, k) coordinates.
pub fn right_mult_matrix(q: Quat) -> [[f64; 4]; 4] {
    let [a, b, c, d] = q.0;
    [
        [a, -b, -c, -d],
        [b, a, d, -c],
        [c, -d, a, b],
        [d, c, -b, a],
    ]
}

/// 4x4 matrix of left multiplication z -> q z.
pub fn left_mult_matrix(q: Quat) -> [[f64; 4]; 4] {
    let [a, b, c, d] = q.0;
    [
        [a, -b, -c, -d],
        [b, a, -d, c],
        [c, d, a, -b],
        [d, -c, b, a],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::{directional, ChartMapG, FnMap, GenericFn};

    #[test]
    fn exp_matches_nalgebra() {
        let u = [0.3, -0.7, 0.5];
        let ours = exp_hat(&u);
        let theirs =
            nalgebra::Rotation3::from_scaled_axis(Vector3::new(u[0], u[1], u[2])).into_inner();
        for i in 0..3 {
            for j in 0..3 {
                assert!((ours.get(i, j) - theirs[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn series_branch_continuous() {
        for &s in &[1e-4, 9.9e-4, 1.1e-3] {
            let u = [s, 0.5 * s, -0.3 * s];
            let ours = exp_hat(&u);
            let theirs =
                nalgebra::Rotation3::from_scaled_axis(Vector3::new(u[0], u[1], u[2])).into_inner();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((ours.get(i, j) - theirs[(i, j)]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn right_jacobian_matches_difference_quotient() {
        // d/dt Exp(hat(u + t v)) at t=0 equals Exp(hat u) hat(J_r(u) v)
        let u = [0.4, 0.2, -0.6];
        let v = [0.1, -0.3, 0.2];
        struct E {
            v: [f64; 3],
        }
        impl GenericFn for E {
            fn call<T: Real>(&self, x: &[T], out: &mut [T]) {
                let t = x[0];
                let u = [
                    T::from_f64(0.4) + t * T::from_f64(self.v[0]),
                    T::from_f64(0.2) + t * T::from_f64(self.v[1]),
                    T::from_f64(-0.6) + t * T::from_f64(self.v[2]),
                ];
                let m = exp_hat(&u);
                out.copy_from_slice(&m.a);
            }
        }
        let map = FnMap { dim_in: 1, dim_out: 9, f: E { v } };
        let d = directional(&map, &[0.0f64], &[1.0]);
        let g = exp_hat(&u);
        let jr = right_jacobian(&u);
        let jv = jr.apply(&v);
        let expect = g.matmul(&hat(&jv));
        for k in 0..9 {
            assert!((d[k] - expect.a[k]).abs() < 1e-12, "entry {k}");
        }
        let _ = map.dims();
    }

    #[test]
    fn jacobian_inverse_consistent() {
        let u = [0.9, -0.4, 0.3];
        let id = right_jacobian(&u).matmul(&right_jacobian_inv(&u));
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn quaternion_rotation_against_matrices() {
        let q = Quat([0.4, -0.3, 0.8, 0.1]).normalize();
        let r = q.to_rotation();
        assert!(is_rotation(&r, 1e-12));
        // q (v) q^-1 with v imaginary, via 4x4 matrices
        let v = Quat([0.0, 0.3, -0.5, 0.7]);
        let w = q.mul(v).mul(q.conj());
        assert!(w.0[0].abs() < 1e-14);
        let rv = r * Vector3::new(0.3, -0.5, 0.7);
        for k in 0..3 {
            assert!((w.0[k + 1] - rv[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn right_mult_is_antihomomorphism() {
        // R_a R_b = R_{ba} as compositions
        let a = Quat([0.2, 0.5, -0.4, 0.7]);
        let b = Quat([-0.3, 0.1, 0.9, 0.2]);
        let ra = right_mult_matrix(a);
        let rb = right_mult_matrix(b);
        let ba = right_mult_matrix(b.mul(a));
        for i in 0..4 {
            for j in 0..4 {
                let mut comp = 0.0;
                for k in 0..4 {
                    comp += ra[i][k] * rb[k][j];
                }
                assert!((comp - ba[i][j]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn align_sends_e1() {
        let v = Vector3::new(-0.2, 0.7, 0.4);
        let g = align_e1(&v);
        assert!(is_rotation(&g, 1e-12));
        let img = g * Vector3::new(1.0, 0.0, 0.0);
        assert!((img - v.normalize()).norm() < 1e-13);
    }
}
