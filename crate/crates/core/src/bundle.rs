//! The rotation-frame-and-scale bundle over a quaternionic chart, with its
//! one-parameter family of almost complex structure triples.
//!
//! A bundle point is coordinatized as `q = (x, w, u)` where `x` is a base chart
//! point, `w` names the fiber rotation `G = g0 Exp(hat(2w))` relative to a chart
//! center `g0`, and `u = log r` is the log scale. The frame named by `(x, G)` is
//! `J_a = sum_b I_b(x) G_{ba}`, so the structure group acts by right
//! multiplication and the chart center can be moved freely (recentering).
//!
//! Tangent vectors are handled through their "hat" coordinates relative to the
//! bundle connection: `v = (h, a, b)` with `h` the horizontal part in base
//! coordinates, `a` in so(3) (doubled basis: [e_a, e_b] = 2 e_c), and `b` the
//! scale component normalized by the family parameter `c`:
//!
//! - `a(v) = G^T (theta(v_x)/2) + J_r(2w) v_w`
//! - `b(v) = (v_u + theta_0(v_x)) / c`
//!
//! The structure `Ihat_a` acts on hats by `h' = J_a h` on the horizontal part
//! and by right quaternion multiplication with `-i_a` on `(b, a)`; that action
//! squares to -1 and realizes the quaternion algebra fiberwise.

use crate::consts;
use crate::error::{GeomError, Result};
use crate::models::Model;
use crate::quaternionic::{local_connection_forms_g, scale_form_g};
use crate::real::{eval_vec, ChartMap, ChartMapG, Real};
use crate::so3::{exp2, right_jacobian, right_jacobian_inv, unhat2};
use crate::tensor::SqMat;

/// Chart data of the bundle: the model downstairs, the family parameter `c`,
/// the momentum scale `A`, and the fiber chart center `g0`.
pub struct BundleChart<'m> {
    pub model: &'m Model,
    pub c: f64,
    pub a_scale: f64,
    pub g0: SqMat<f64>,
}

impl Clone for BundleChart<'_> {
    fn clone(&self) -> Self {
        BundleChart {
            model: self.model,
            c: self.c,
            a_scale: self.a_scale,
            g0: self.g0.clone(),
        }
    }
}

/// Everything about a bundle point needed to split and assemble tangent
/// vectors, computed once per point at any tower depth.
pub struct FiberData<T> {
    /// Full fiber rotation g0 Exp(hat(2w)).
    pub g: SqMat<T>,
    /// Right Jacobian J_r(2w) and its inverse.
    pub jr: SqMat<T>,
    pub jr_inv: SqMat<T>,
    /// Structure-span connection forms downstairs: theta[a][i].
    pub theta: [Vec<T>; 3],
    /// Scale form downstairs.
    pub theta0: Vec<T>,
    /// The base frame structures at x.
    pub frames: [SqMat<T>; 3],
    /// The rotated structures J_a = sum_b I_b G_{ba}.
    pub rotated: [SqMat<T>; 3],
    /// exp(2u/c).
    pub scale: T,
    /// exp(u).
    pub r: T,
}

/// Hat coordinates of a tangent vector.
pub struct HatVec<T> {
    pub h: Vec<T>,
    pub a: [T; 3],
    pub b: T,
}

impl<'m> BundleChart<'m> {
    pub fn new(model: &'m Model, c: f64, a_scale: f64) -> Result<Self> {
        if c == 0.0 {
            return Err(GeomError::Config("family parameter c must be nonzero".into()));
        }
        Ok(BundleChart { model, c, a_scale, g0: SqMat::identity(3) })
    }

    /// The canonical family parameter `-4(n+1)` for the model's n.
    pub fn canonical(model: &'m Model, a_scale: f64) -> Self {
        BundleChart {
            model,
            c: consts::canonical_c(model.n),
            a_scale,
            g0: SqMat::identity(3),
        }
    }

    pub fn with_center(mut self, g0: SqMat<f64>) -> Self {
        assert_eq!(g0.d, 3);
        self.g0 = g0;
        self
    }

    pub fn base_dim(&self) -> usize {
        self.model.dim()
    }

    pub fn dim(&self) -> usize {
        self.model.dim() + 4
    }

    /// Build chart coordinates from parts.
    pub fn point(&self, x: &[f64], w: [f64; 3], u: f64) -> Vec<f64> {
        let mut q = x.to_vec();
        q.extend_from_slice(&w);
        q.push(u);
        q
    }

    /// Move the fiber chart center so the given point has w = 0; returns the
    /// recentered chart and the new coordinates of the same bundle point.
    pub fn recentered(&self, q: &[f64]) -> (BundleChart<'m>, Vec<f64>) {
        let d = self.base_dim();
        let w = &q[d..d + 3];
        let g0 = self.g0.matmul(&exp2(w));
        let mut q2 = q.to_vec();
        q2[d] = 0.0;
        q2[d + 1] = 0.0;
        q2[d + 2] = 0.0;
        let chart = BundleChart {
            model: self.model,
            c: self.c,
            a_scale: self.a_scale,
            g0,
        };
        (chart, q2)
    }

    pub fn fiber_data<T: Real>(&self, q: &[T]) -> FiberData<T> {
        let d = self.base_dim();
        let x = &q[..d];
        let w = &q[d..d + 3];
        let u = q[d + 3];
        let two = T::from_f64(2.0);
        let w2 = [w[0] * two, w[1] * two, w[2] * two];
        let mut g0t = SqMat::zeros(3);
        for k in 0..9 {
            g0t.a[k] = T::from_f64(self.g0.a[k]);
        }
        let g = g0t.matmul(&exp2(w));
        let jr = right_jacobian(&w2);
        let jr_inv = right_jacobian_inv(&w2);
        let theta = local_connection_forms_g::<T>(&self.model.frame, &self.model.conn, x);
        let theta0 = scale_form_g::<T>(
            &self.model.conn,
            self.model.dlog_density.as_deref(),
            x,
        );
        let frames = self.model.frame.at::<T>(x);
        let mut rotated = [
            SqMat::zeros(d),
            SqMat::zeros(d),
            SqMat::zeros(d),
        ];
        for alpha in 0..3 {
            for beta in 0..3 {
                rotated[alpha] = rotated[alpha].add(&frames[beta].scale(g.get(beta, alpha)));
            }
        }
        let scale = (u * T::from_f64(2.0 / self.c)).exp();
        let r = u.exp();
        FiberData { g, jr, jr_inv, theta, theta0, frames, rotated, scale, r }
    }

    /// theta(v_x) as an so(3) vector (halved), theta_0(v_x) as a scalar.
    fn base_form_values<T: Real>(&self, fd: &FiberData<T>, vx: &[T]) -> ([T; 3], T) {
        let mut th = [T::zero(), T::zero(), T::zero()];
        for a in 0..3 {
            let mut s = T::zero();
            for (i, v) in vx.iter().enumerate() {
                s += fd.theta[a][i] * *v;
            }
            th[a] = s * T::from_f64(consts::SECTION_HALF);
        }
        let mut t0 = T::zero();
        for (i, v) in vx.iter().enumerate() {
            t0 += fd.theta0[i] * *v;
        }
        (th, t0)
    }

    /// Split a chart velocity into hat coordinates.
    pub fn hat_split<T: Real>(&self, fd: &FiberData<T>, v: &[T]) -> HatVec<T> {
        let d = self.base_dim();
        let vx = &v[..d];
        let vw = &v[d..d + 3];
        let vu = v[d + 3];
        let (th, t0) = self.base_form_values(fd, vx);
        let gt_th = fd.g.transpose().apply(&th);
        let jr_vw = fd.jr.apply(vw);
        let a = [gt_th[0] + jr_vw[0], gt_th[1] + jr_vw[1], gt_th[2] + jr_vw[2]];
        let b = (vu + t0) / T::from_f64(self.c);
        HatVec { h: vx.to_vec(), a, b }
    }

    /// Assemble a chart velocity from hat coordinates.
    pub fn hat_assemble<T: Real>(&self, fd: &FiberData<T>, hat: &HatVec<T>) -> Vec<T> {
        let d = self.base_dim();
        let (th, t0) = self.base_form_values(fd, &hat.h);
        let gt_th = fd.g.transpose().apply(&th);
        let rel = [hat.a[0] - gt_th[0], hat.a[1] - gt_th[1], hat.a[2] - gt_th[2]];
        let vw = fd.jr_inv.apply(&rel);
        let vu = hat.b * T::from_f64(self.c) - t0;
        let mut v = Vec::with_capacity(d + 4);
        v.extend_from_slice(&hat.h);
        v.extend_from_slice(&vw);
        v.push(vu);
        v
    }

    /// The action of the alpha-th structure on hat coordinates: `h -> J_a h`,
    /// and right quaternion multiplication of (b, a) by -i_a.
    pub fn hat_structure<T: Real>(
        &self,
        fd: &FiberData<T>,
        alpha: usize,
        hat: &HatVec<T>,
    ) -> HatVec<T> {
        let beta = (alpha + 1) % 3;
        let gamma = (alpha + 2) % 3;
        let h = fd.rotated[alpha].apply(&hat.h);
        let mut a = [T::zero(), T::zero(), T::zero()];
        let b = hat.a[alpha];
        a[alpha] = -hat.b;
        a[beta] = -hat.a[gamma];
        a[gamma] = hat.a[beta];
        HatVec { h, a, b }
    }

    /// The alpha-th almost complex structure as a chart endomorphism.
    pub fn almost_complex_g<T: Real>(&self, q: &[T], alpha: usize) -> SqMat<T> {
        let fd = self.fiber_data(q);
        self.almost_complex_from(&fd, alpha)
    }

    pub fn almost_complex_from<T: Real>(&self, fd: &FiberData<T>, alpha: usize) -> SqMat<T> {
        let dd = self.dim();
        let mut m = SqMat::zeros(dd);
        for col in 0..dd {
            let mut e = vec![T::zero(); dd];
            e[col] = T::one();
            let hat = self.hat_split(fd, &e);
            let acted = self.hat_structure(fd, alpha, &hat);
            let out = self.hat_assemble(fd, &acted);
            for row in 0..dd {
                m.set(row, col, out[row]);
            }
        }
        m
    }

    pub fn almost_complex(&self, q: &[f64], alpha: usize) -> SqMat<f64> {
        self.almost_complex_g::<f64>(q, alpha)
    }

    /// Connection form: so(3) components (doubled basis) and the raw scale
    /// component `v_u + theta_0(v_x)`.
    pub fn connection_form_g<T: Real>(&self, q: &[T], v: &[T]) -> ([T; 3], T) {
        let fd = self.fiber_data(q);
        let hat = self.hat_split(&fd, v);
        (hat.a, hat.b * T::from_f64(self.c))
    }

    /// The privileged 1-form value: `theta_hat_a(v) = A exp(2u/c) a_a(v)`.
    pub fn theta_hat_g<T: Real>(&self, fd: &FiberData<T>, v: &[T]) -> [T; 3] {
        let hat = self.hat_split(fd, v);
        let s = fd.scale * T::from_f64(self.a_scale);
        [hat.a[0] * s, hat.a[1] * s, hat.a[2] * s]
    }

    /// The momentum-type map at a point:
    /// `mu_a = A exp(2u/c) [G^T (theta(X)/2 + rho)]_a` with `rho` the constant
    /// rotation rate of the natural lift.
    pub fn moment_g<T: Real>(&self, q: &[T]) -> [T; 3] {
        let fd = self.fiber_data(q);
        self.moment_from(&fd, q)
    }

    pub fn moment_from<T: Real>(&self, fd: &FiberData<T>, q: &[T]) -> [T; 3] {
        let d = self.base_dim();
        let xv = eval_vec::<T>(self.model.sym.as_ref(), &q[..d]);
        let (mut th, _) = self.base_form_values(fd, &xv);
        for k in 0..3 {
            th[k] += T::from_f64(self.model.lift_rot[k]);
        }
        let gt = fd.g.transpose().apply(&th);
        let s = fd.scale * T::from_f64(self.a_scale);
        [gt[0] * s, gt[1] * s, gt[2] * s]
    }

    pub fn moment(&self, q: &[f64]) -> [f64; 3] {
        self.moment_g::<f64>(q)
    }

    /// Closed-form bilinear form paired with the exterior derivative of the
    /// rescaled connection components:
    ///
    /// `G_a := -A r^{2/c} Omega_a(. , Ihat_a .) + 2 eps A r^{2/c} <a, a>
    ///         + (2 eps A / c^2) r^{2/c - 2} dr (x) dr`
    ///
    /// where `Omega_a(v, v') = (eps/2) [G^T Omega^U(h_v, h_v')]_a` is the
    /// rotation-frame curvature pairing, `<a, a>` the Euclidean pairing of the
    /// so(3) hat components, and `dr` the coordinate differential of the scale
    /// (`dr(v)/r = du(v) = c b(v) - theta_0(h_v)`).
    ///
    /// The defining identity is `dtheta_hat_a(Y, Z) = G_a(Y, Ihat_a Z)`
    /// (see [`Self::g_pairing`]). In a chart whose reference volume is
    /// parallel (`theta_0 = 0`) the identity holds for arbitrary argument
    /// pairs; otherwise it holds whenever the first argument is tangent to the
    /// constant-scale slice (slice-horizontal lifts and rotation generators)
    /// or both arguments are vertical.
    pub fn g_form_value(&self, q: &[f64], alpha: usize, v1: &[f64], v2: &[f64]) -> f64 {
        let fd = self.fiber_data::<f64>(q);
        let d = self.base_dim();
        let x = &q[..d];
        let h1 = self.hat_split(&fd, v1);
        let h2 = self.hat_split(&fd, v2);
        let eps = consts::EPS;
        let pre = self.a_scale * fd.scale;
        let jh2 = fd.rotated[alpha].apply(&h2.h);

        // so(3) pairing: 2 eps <a, a'>
        let mut s = 0.0;
        for k in 0..3 {
            s += h1.a[k] * h2.a[k];
        }
        let mut total = 2.0 * eps * s;

        // scale pairing: (2 eps / c^2) du(v) du(v') with du = c b - theta_0(h)
        let du1 = self.c * h1.b - theta0_of(&fd, &h1.h);
        let du2 = self.c * h2.b - theta0_of(&fd, &h2.h);
        total += 2.0 * eps / (self.c * self.c) * du1 * du2;

        // curvature term: -(eps/2) [G^T Omega^U(h, J_a h')]_a
        let om = crate::quaternionic::curvature_forms_trace(
            &self.model.frame,
            &self.model.conn,
            x,
            &h1.h,
            &jh2,
        );
        let om_rot = fd.g.transpose().apply(&om);
        total -= consts::CURVATURE_LIFT_HALF * eps * om_rot[alpha];

        total * pre
    }

    /// The pairing `G_a(y, Ihat_a z)`, which reproduces `dtheta_hat_a(y, z)`
    /// on the canonical field basis (see [`Self::g_form_value`] for the gauge
    /// caveat when the reference volume is not parallel).
    pub fn g_pairing(&self, q: &[f64], alpha: usize, y: &[f64], z: &[f64]) -> f64 {
        let iz = self.almost_complex(q, alpha).apply(z);
        self.g_form_value(q, alpha, y, &iz)
    }

    /// The canonical tangent basis at a bundle point: slice-horizontal lifts
    /// of the base coordinate fields, then the rotation generators Z_1..Z_3,
    /// then the scale generator Z_0. Pairing and integrability checks
    /// enumerate ordered pairs (i, j), i < j, of this list, which keeps
    /// slice-tangent arguments first.
    pub fn canonical_basis(&self, q: &[f64]) -> Vec<Vec<f64>> {
        let d = self.base_dim();
        let mut basis = Vec::with_capacity(d + 4);
        let fd = self.fiber_data::<f64>(q);
        for i in 0..d {
            let mut h = vec![0.0; d];
            h[i] = 1.0;
            let b = theta0_of(&fd, &h) / self.c;
            let hat = HatVec { h, a: [0.0; 3], b };
            basis.push(self.hat_assemble(&fd, &hat));
        }
        for delta in 0..3 {
            let zf = VerticalField { chart: self, delta: Some(delta) };
            basis.push(crate::real::eval_vec::<f64>(&zf, q));
        }
        let z0 = VerticalField { chart: self, delta: None };
        basis.push(crate::real::eval_vec::<f64>(&z0, q));
        basis
    }

    /// Whether the chart's reference volume is parallel for the model
    /// connection at the given base point (the scale component of the local
    /// connection form vanishes there).
    pub fn volume_parallel_at(&self, x: &[f64]) -> bool {
        let th0 = crate::quaternionic::scale_form(
            &self.model.conn,
            self.model.dlog_density.as_deref(),
            x,
        );
        th0.iter().all(|v| v.abs() < 1e-10)
    }
}

fn theta0_of<T: Real>(fd: &FiberData<T>, h: &[T]) -> T {
    let mut t0 = T::zero();
    for (i, v) in h.iter().enumerate() {
        t0 += fd.theta0[i] * *v;
    }
    t0
}

// ---------------------------------------------------------------------------
// Chart maps on the bundle (generic, usable with the derivative kernel)
// ---------------------------------------------------------------------------

/// The alpha-th structure as an endomorphism-valued chart map.
pub struct IhatMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    pub alpha: usize,
}

impl ChartMapG for IhatMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd * dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let m = self.chart.almost_complex_g(q, self.alpha);
        out.copy_from_slice(&m.a);
    }
}

/// theta_hat_a as a covector-valued chart map.
pub struct ThetaHatMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    pub alpha: usize,
}

impl ChartMapG for ThetaHatMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let dd = self.chart.dim();
        let fd = self.chart.fiber_data(q);
        for col in 0..dd {
            let mut e = vec![T::zero(); dd];
            e[col] = T::one();
            out[col] = self.chart.theta_hat_g(&fd, &e)[self.alpha];
        }
    }
}

/// All four connection-form components as covector-valued maps
/// (rows: a_1, a_2, a_3, scale), flattened row-major into 4*dim outputs.
pub struct ConnectionFormMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
}

impl ChartMapG for ConnectionFormMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, 4 * dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let dd = self.chart.dim();
        let fd = self.chart.fiber_data(q);
        let c = T::from_f64(self.chart.c);
        for col in 0..dd {
            let mut e = vec![T::zero(); dd];
            e[col] = T::one();
            let hat = self.chart.hat_split(&fd, &e);
            for k in 0..3 {
                out[k * dd + col] = hat.a[k];
            }
            out[3 * dd + col] = hat.b * c;
        }
    }
}

/// A single connection-form component as a covector-valued map:
/// rows 0..2 are the so(3) components, row 3 the (rescaled) scale component.
pub struct ConnectionRowMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    pub row: usize,
}

impl ChartMapG for ConnectionRowMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let dd = self.chart.dim();
        let fd = self.chart.fiber_data(q);
        let c = T::from_f64(self.chart.c);
        for col in 0..dd {
            let mut e = vec![T::zero(); dd];
            e[col] = T::one();
            let hat = self.chart.hat_split(&fd, &e);
            out[col] = if self.row < 3 { hat.a[self.row] } else { hat.b * c };
        }
    }
}

/// The momentum-type map as a chart map.
pub struct MomentMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
}

impl ChartMapG for MomentMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        (self.chart.dim(), 3)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let mu = self.chart.moment_g(q);
        out.copy_from_slice(&mu);
    }
}

/// Fundamental field of the structure-group action: the delta-th doubled
/// rotation generator (delta in 0..3), or the scale generator.
pub struct VerticalField<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    /// None: the scale field (hat (0, 0, 1), chart velocity c d/du);
    /// Some(delta): the rotation field Z_delta.
    pub delta: Option<usize>,
}

impl ChartMapG for VerticalField<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let d = self.chart.base_dim();
        for v in out.iter_mut() {
            *v = T::zero();
        }
        match self.delta {
            Some(delta) => {
                let two = T::from_f64(2.0);
                let w = &q[d..d + 3];
                let w2 = [w[0] * two, w[1] * two, w[2] * two];
                let jr_inv = right_jacobian_inv(&w2);
                let mut e = [T::zero(), T::zero(), T::zero()];
                e[delta] = T::one();
                let vw = jr_inv.apply(&e);
                out[d..d + 3].copy_from_slice(&vw);
            }
            None => {
                out[d + 3] = T::from_f64(self.chart.c);
            }
        }
    }
}

/// Horizontal lift of a base vector field.
///
/// With `slice_horizontal = false` (the default for structure checks) the
/// lift is horizontal for the full connection: so(3) and scale hat
/// components both vanish. With `slice_horizontal = true` the scale
/// *velocity* vanishes instead (`du(v) = 0`), which keeps the lift tangent to
/// a constant-scale slice; the two agree exactly when `theta_0 = 0`.
pub struct HorizontalLiftField<'c, 'm, 'f> {
    pub chart: &'c BundleChart<'m>,
    pub base: &'f dyn ChartMap,
    pub slice_horizontal: bool,
}

impl ChartMapG for HorizontalLiftField<'_, '_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let d = self.chart.base_dim();
        let fd = self.chart.fiber_data(q);
        let y = eval_vec::<T>(self.base, &q[..d]);
        let b = if self.slice_horizontal {
            theta0_of(&fd, &y) / T::from_f64(self.chart.c)
        } else {
            T::zero()
        };
        let hat = HatVec { h: y, a: [T::zero(), T::zero(), T::zero()], b };
        let v = self.chart.hat_assemble(&fd, &hat);
        out.copy_from_slice(&v);
    }
}

/// The natural lift of the model symmetry: horizontal-plus-rotation field whose
/// rotation rate is the model's constant lift rate.
pub struct NaturalLiftField<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
}

impl ChartMapG for NaturalLiftField<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let d = self.chart.base_dim();
        let fd = self.chart.fiber_data(q);
        let xv = eval_vec::<T>(self.chart.model.sym.as_ref(), &q[..d]);
        // v_w = J_r(2w)^{-1} G^T rho; v_u = 0
        let rho = [
            T::from_f64(self.chart.model.lift_rot[0]),
            T::from_f64(self.chart.model.lift_rot[1]),
            T::from_f64(self.chart.model.lift_rot[2]),
        ];
        let gt_rho = fd.g.transpose().apply(&rho);
        let vw = fd.jr_inv.apply(&gt_rho);
        out[..d].copy_from_slice(&xv);
        out[d..d + 3].copy_from_slice(&vw);
        out[d + 3] = T::zero();
    }
}

/// Exterior derivative of theta_hat_a as a matrix-valued chart map
/// (entry (k, l) = d theta_hat (e_k, e_l)); spends one tower level.
pub struct DThetaHatMap<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    pub alpha: usize,
}

impl ChartMapG for DThetaHatMap<'_, '_> {
    fn dims(&self) -> (usize, usize) {
        let dd = self.chart.dim();
        (dd, dd * dd)
    }
    fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
        let dd = self.chart.dim();
        let th = ThetaHatMap { chart: self.chart, alpha: self.alpha };
        let mut dth: Vec<Vec<T>> = Vec::with_capacity(dd);
        for k in 0..dd {
            let mut dir = vec![T::zero(); dd];
            dir[k] = T::one();
            dth.push(T::directional_dyn(&th, q, &dir));
        }
        for k in 0..dd {
            for l in 0..dd {
                out[k * dd + l] = dth[k][l] - dth[l][k];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Integrability tensor
// ---------------------------------------------------------------------------

/// Value and full coordinate Jacobian of one structure at a point, cached so
/// many tensor contractions can reuse the same derivatives.
pub struct StructureJet {
    pub val: SqMat<f64>,
    /// jac[k] = derivative of the structure matrix along coordinate axis k.
    pub jac: Vec<SqMat<f64>>,
}

impl StructureJet {
    pub fn compute(chart: &BundleChart<'_>, q: &[f64], alpha: usize) -> StructureJet {
        let dd = chart.dim();
        let map = IhatMap { chart, alpha };
        let val = chart.almost_complex(q, alpha);
        let mut jac = Vec::with_capacity(dd);
        for k in 0..dd {
            let mut dir = vec![0.0; dd];
            dir[k] = 1.0;
            let dm = crate::real::directional::<f64>(&map, q, &dir);
            let mut m = SqMat::zeros(dd);
            m.a.copy_from_slice(&dm);
            jac.push(m);
        }
        StructureJet { val, jac }
    }

    /// Directional derivative of the structure along an arbitrary vector.
    pub fn along(&self, v: &[f64]) -> SqMat<f64> {
        let dd = self.val.d;
        let mut m = SqMat::zeros(dd);
        for (k, vk) in v.iter().enumerate() {
            if *vk != 0.0 {
                for i in 0..dd * dd {
                    m.a[i] += vk * self.jac[k].a[i];
                }
            }
        }
        m
    }

    /// Torsion of the structure on a pair of constant coordinate-frame vectors:
    /// `N(u, v) = Ihat[(d_u Ihat) v - (d_v Ihat) u] - (d_{Ihat u} Ihat) v
    ///            + (d_{Ihat v} Ihat) u`.
    pub fn nijenhuis(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let iu = self.val.apply(u);
        let iv = self.val.apply(v);
        let du = self.along(u);
        let dv = self.along(v);
        let diu = self.along(&iu);
        let div = self.along(&iv);
        let mut inner: Vec<f64> = du.apply(v);
        let dvu = dv.apply(u);
        for k in 0..inner.len() {
            inner[k] -= dvu[k];
        }
        let mut n = self.val.apply(&inner);
        let t1 = diu.apply(v);
        let t2 = div.apply(u);
        for k in 0..n.len() {
            n[k] += -t1[k] + t2[k];
        }
        n
    }
}

/// Largest integrability-tensor component over all coordinate pairs for one
/// structure at one point.
pub fn nijenhuis_max(chart: &BundleChart<'_>, q: &[f64], alpha: usize) -> f64 {
    let jet = StructureJet::compute(chart, q, alpha);
    let dd = chart.dim();
    let mut worst: f64 = 0.0;
    for p in 0..dd {
        for r in (p + 1)..dd {
            let mut u = vec![0.0; dd];
            u[p] = 1.0;
            let mut v = vec![0.0; dd];
            v[r] = 1.0;
            let n = jet.nijenhuis(&u, &v);
            worst = worst.max(n.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        }
    }
    worst
}

/// The natural-lift rotation rate measured from the symmetry flow: transports
/// the frame along the flow for a short time and differentiates the resulting
/// SO(3) coefficient matrix. Returns the doubled rate vector.
pub fn lift_rotation_measured(model: &Model, x: &[f64], t_step: f64) -> Result<[f64; 3]> {
    let eng = crate::kernel::DerivativeEngine::forward();
    let coeff_at = |t: f64| -> Result<SqMat<f64>> {
        let (xt, jac) =
            crate::kernel::flow_with_jacobian(&eng, model.sym.as_ref(), x, t, 1e-3, None)?;
        let frames_x = model.frame.at::<f64>(x);
        let frames_xt = model.frame.at::<f64>(&xt);
        let jac_inv = jac.inverse();
        let mut coeff = SqMat::zeros(3);
        let scale = -1.0 / model.dim() as f64;
        for b in 0..3 {
            let push = jac.matmul(&frames_x[b]).matmul(&jac_inv);
            for g in 0..3 {
                coeff.set(g, b, scale * push.trace_product(&frames_xt[g]));
            }
        }
        Ok(coeff)
    };
    let ap = coeff_at(t_step)?;
    let am = coeff_at(-t_step)?;
    let mut der = nalgebra::Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            der[(i, j)] = (ap.get(i, j) - am.get(i, j)) / (2.0 * t_step);
        }
    }
    let v = unhat2(&der);
    Ok([v[0], v[1], v[2]])
}

/// Predicted vertical components of the integrability tensor on horizontal
/// lifts at the fiber-chart center (w = 0, g0 = identity): the scale (b) and
/// alpha-rotation (a_alpha) hat components of `N(X^h, Y^h)`, as multiples of
/// antisymmetric-Ricci combinations. Returns (b_component, a_alpha_component).
pub fn predicted_vertical_obstruction(
    chart: &BundleChart<'_>,
    x: &[f64],
    alpha: usize,
    xv: &[f64],
    yv: &[f64],
) -> (f64, f64) {
    let model = chart.model;
    let n = model.n as f64;
    let c = chart.c;
    let eps = consts::EPS;
    let ric = model.conn.ricci::<f64>(x);
    let (_, ra) = crate::quaternionic::ricci_split(&ric);
    let frames = model.frame.at::<f64>(x);
    let ix = frames[alpha].apply(xv);
    let iy = frames[alpha].apply(yv);
    let ric_a = |u: &[f64], v: &[f64]| ra.bilinear(u, v);
    let combo_b = ric_a(xv, yv) - ric_a(&ix, &iy);
    let combo_a = ric_a(xv, &iy) + ric_a(&ix, yv);
    let k = 4.0 * eps * (n + 1.0) + eps * c;
    let b_comp = k / (2.0 * (n + 1.0)) * combo_b;
    let a_comp = -k / (2.0 * c * (n + 1.0)) * combo_a;
    (b_comp, a_comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::DerivativeEngine;
    use crate::models::builtin;
    use crate::so3::hat;
    use crate::tensor::{dot, norm_f64, sub_vec};

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    struct ConstField(Vec<f64>);
    impl ChartMapG for ConstField {
        fn dims(&self) -> (usize, usize) {
            (self.0.len(), self.0.len())
        }
        fn eval_g<T: Real>(&self, _x: &[T], out: &mut [T]) {
            for (o, v) in out.iter_mut().zip(&self.0) {
                *o = T::from_f64(*v);
            }
        }
    }

    fn sample_point(model: &crate::models::Model) -> Vec<f64> {
        let mut x = model.domain.center();
        let nudge = [0.07, -0.04, 0.11, 0.02];
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += nudge[i % 4] * if i >= 4 { -0.5 } else { 1.0 };
        }
        x
    }

    fn sample_q(chart: &BundleChart<'_>) -> Vec<f64> {
        let x = sample_point(chart.model);
        chart.point(&x, [0.05, -0.12, 0.08], 0.3)
    }

    fn twisted_center() -> SqMat<f64> {
        exp2(&[0.2, -0.1, 0.15])
    }

    #[test]
    fn hat_split_assemble_round_trip() {
        let model = builtin("deformed_flat").unwrap();
        let chart = BundleChart::new(&model, -5.0, 0.8)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let fd = chart.fiber_data::<f64>(&q);
        let dd = chart.dim();
        for k in 0..dd {
            let mut e = vec![0.0; dd];
            e[k] = 1.0;
            let hatv = chart.hat_split(&fd, &e);
            let back = chart.hat_assemble(&fd, &hatv);
            assert!(max_abs(&sub_vec(&back, &e)) < 1e-12, "axis {k}");
        }
        let hv = HatVec { h: vec![0.3, -0.2, 0.5, 0.7], a: [0.4, -0.6, 0.1], b: -0.9 };
        let v = chart.hat_assemble(&fd, &hv);
        let hv2 = chart.hat_split(&fd, &v);
        assert!(max_abs(&sub_vec(&hv2.h, &hv.h)) < 1e-12);
        for k in 0..3 {
            assert!((hv2.a[k] - hv.a[k]).abs() < 1e-12);
        }
        assert!((hv2.b - hv.b).abs() < 1e-12);
    }

    #[test]
    fn structure_quaternion_algebra_pointwise() {
        for (name, c) in [("flat_h1", -8.0), ("hp1", -8.0), ("hp2", 1.5), ("deformed_flat", 2.0)] {
            let model = builtin(name).unwrap();
            let chart = BundleChart::new(&model, c, consts::DEFAULT_A)
                .unwrap()
                .with_center(twisted_center());
            let q = sample_q(&chart);
            let dd = chart.dim();
            let m: Vec<SqMat<f64>> = (0..3).map(|a| chart.almost_complex(&q, a)).collect();
            let id = SqMat::<f64>::identity(dd);
            for alpha in 0..3 {
                let sq = m[alpha].matmul(&m[alpha]).add(&id);
                assert!(sq.max_abs() < 1e-9, "{name}: square at {alpha}");
            }
            for alpha in 0..3 {
                let beta = (alpha + 1) % 3;
                let gamma = (alpha + 2) % 3;
                let prod = m[alpha].matmul(&m[beta]).sub(&m[gamma]);
                assert!(prod.max_abs() < 1e-9, "{name}: cyclic at {alpha}");
                let anti = m[beta].matmul(&m[alpha]).add(&m[gamma]);
                assert!(anti.max_abs() < 1e-9, "{name}: anticyclic at {alpha}");
            }
        }
    }

    #[test]
    fn structure_action_on_vertical_fields() {
        let model = builtin("flat_h1").unwrap();
        let chart = BundleChart::new(&model, -8.0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let zf: Vec<Vec<f64>> = (0..3)
            .map(|d| eval_vec::<f64>(&VerticalField { chart: &chart, delta: Some(d) }, &q))
            .collect();
        let z0 = eval_vec::<f64>(&VerticalField { chart: &chart, delta: None }, &q);
        for alpha in 0..3 {
            let m = chart.almost_complex(&q, alpha);
            let beta = (alpha + 1) % 3;
            let gamma = (alpha + 2) % 3;
            // Ihat_a Z_0 = -Z_a
            let mut r = m.apply(&z0);
            for (k, v) in zf[alpha].iter().enumerate() {
                r[k] += v;
            }
            assert!(max_abs(&r) < 1e-10, "Z0 at {alpha}");
            // Ihat_a Z_a = Z_0
            let r = sub_vec(&m.apply(&zf[alpha]), &z0);
            assert!(max_abs(&r) < 1e-10, "Za at {alpha}");
            // Ihat_a Z_b = Z_c,  Ihat_a Z_c = -Z_b
            let r = sub_vec(&m.apply(&zf[beta]), &zf[gamma]);
            assert!(max_abs(&r) < 1e-10, "Zb at {alpha}");
            let mut r = m.apply(&zf[gamma]);
            for (k, v) in zf[beta].iter().enumerate() {
                r[k] += v;
            }
            assert!(max_abs(&r) < 1e-10, "Zc at {alpha}");
        }
    }

    #[test]
    fn vertical_bracket_relations() {
        let model = builtin("flat_h1").unwrap();
        let chart = BundleChart::new(&model, 1.0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let eng = DerivativeEngine::forward();
        let z: Vec<VerticalField> =
            (0..3).map(|d| VerticalField { chart: &chart, delta: Some(d) }).collect();
        let z0 = VerticalField { chart: &chart, delta: None };
        for alpha in 0..3 {
            let beta = (alpha + 1) % 3;
            let gamma = (alpha + 2) % 3;
            let br = eng.lie_bracket(&z[beta], &z[gamma], &q);
            let zg = eval_vec::<f64>(&z[alpha], &q);
            let mut r = br.clone();
            for (k, v) in zg.iter().enumerate() {
                r[k] -= 2.0 * v;
            }
            assert!(max_abs(&r) < 1e-9, "[Zb,Zc] = 2Za at {alpha}");
            let br0 = eng.lie_bracket(&z0, &z[alpha], &q);
            assert!(max_abs(&br0) < 1e-9, "[Z0,Za] at {alpha}");
        }
    }

    #[test]
    fn theta_hat_values_and_exterior_derivative() {
        let model = builtin("flat_h1").unwrap();
        let c = -8.0;
        let a_scale = 0.7;
        let chart = BundleChart::new(&model, c, a_scale)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let fd = chart.fiber_data::<f64>(&q);
        let scale = a_scale * (2.0 * q[chart.dim() - 1] / c).exp();
        let zf: Vec<Vec<f64>> = (0..3)
            .map(|d| eval_vec::<f64>(&VerticalField { chart: &chart, delta: Some(d) }, &q))
            .collect();
        let z0 = eval_vec::<f64>(&VerticalField { chart: &chart, delta: None }, &q);
        for alpha in 0..3 {
            for (beta, zb) in zf.iter().enumerate() {
                let th = chart.theta_hat_g(&fd, zb)[alpha];
                let want = if alpha == beta { scale } else { 0.0 };
                assert!((th - want).abs() < 1e-12, "theta({alpha})(Z{beta})");
            }
            assert!(chart.theta_hat_g(&fd, &z0)[alpha].abs() < 1e-12);
        }
        // horizontal lifts are annihilated
        let base = ConstField(vec![0.25, -0.4, 0.3, 0.55]);
        let hl = HorizontalLiftField { chart: &chart, base: &base, slice_horizontal: false };
        let hv = eval_vec::<f64>(&hl, &q);
        for alpha in 0..3 {
            assert!(chart.theta_hat_g(&fd, &hv)[alpha].abs() < 1e-12, "horizontal {alpha}");
        }
        // exterior derivative pairings on vertical fields
        let eng = DerivativeEngine::forward();
        for alpha in 0..3 {
            let beta = (alpha + 1) % 3;
            let gamma = (alpha + 2) % 3;
            let th = ThetaHatMap { chart: &chart, alpha };
            let d_z0_za = eng.d_one_form(&th, &q, &z0, &zf[alpha]);
            assert!(
                (d_z0_za - 2.0 * scale).abs() < 1e-8,
                "dtheta(Z0, Za) at {alpha}: {d_z0_za} vs {}",
                2.0 * scale
            );
            let d_zb_zg = eng.d_one_form(&th, &q, &zf[beta], &zf[gamma]);
            assert!((d_zb_zg + 2.0 * scale).abs() < 1e-8, "dtheta(Zb, Zc) at {alpha}");
        }
    }

    #[test]
    fn lie_derivatives_along_rotation_generators() {
        let model = builtin("flat_h1").unwrap();
        let chart = BundleChart::new(&model, -8.0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let eng = DerivativeEngine::forward();
        let m: Vec<SqMat<f64>> = (0..3).map(|a| chart.almost_complex(&q, a)).collect();
        for delta in 0..3 {
            let mut e = [0.0; 3];
            e[delta] = 1.0;
            let gen = hat(&e);
            let z = VerticalField { chart: &chart, delta: Some(delta) };
            for alpha in 0..3 {
                // L_Z Ihat_a = 2 sum_b Ihat_b hat(e_d)_{b a}
                let li = eng.lie_endomorphism(&z, &IhatMap { chart: &chart, alpha }, &q);
                let mut want = SqMat::<f64>::zeros(chart.dim());
                for beta in 0..3 {
                    let coef = 2.0 * gen.get(beta, alpha);
                    if coef != 0.0 {
                        want = want.add(&m[beta].scale(coef));
                    }
                }
                assert!(li.sub(&want).max_abs() < 1e-7, "L_Z{delta} Ihat{alpha}");
                // L_Z theta_a = -2 sum_b hat(e_d)_{a b} theta_b
                let lth =
                    eng.lie_one_form(&z, &ThetaHatMap { chart: &chart, alpha }, &q);
                let mut want_th = vec![0.0; chart.dim()];
                for beta in 0..3 {
                    let coef = -2.0 * gen.get(alpha, beta);
                    if coef != 0.0 {
                        let thb = eval_vec::<f64>(
                            &ThetaHatMap { chart: &chart, alpha: beta },
                            &q,
                        );
                        for (k, v) in thb.iter().enumerate() {
                            want_th[k] += coef * v;
                        }
                    }
                }
                assert!(
                    max_abs(&sub_vec(&lth, &want_th)) < 1e-7,
                    "L_Z{delta} theta{alpha}"
                );
            }
        }
    }

    #[test]
    fn natural_lift_preserves_structures_and_forms() {
        for name in ["flat_h1", "hp1"] {
            let model = builtin(name).unwrap();
            let chart = BundleChart::canonical(&model, consts::DEFAULT_A)
                .with_center(twisted_center());
            let q = sample_q(&chart);
            let eng = DerivativeEngine::forward();
            let lift = NaturalLiftField { chart: &chart };
            for alpha in 0..3 {
                let li = eng.lie_endomorphism(&lift, &IhatMap { chart: &chart, alpha }, &q);
                assert!(li.max_abs() < 1e-6, "{name}: L_X Ihat{alpha} = {}", li.max_abs());
                let lth = eng.lie_one_form(&lift, &ThetaHatMap { chart: &chart, alpha }, &q);
                assert!(max_abs(&lth) < 1e-6, "{name}: L_X theta{alpha}");
            }
            let lcf = eng.lie_one_form(&lift, &ConnFormScaleRow { chart: &chart }, &q);
            assert!(max_abs(&lcf) < 1e-6, "{name}: L_X scale row");
        }
    }

    /// The scale component of the connection form as a standalone covector map.
    struct ConnFormScaleRow<'c, 'm> {
        chart: &'c BundleChart<'m>,
    }
    impl ChartMapG for ConnFormScaleRow<'_, '_> {
        fn dims(&self) -> (usize, usize) {
            let dd = self.chart.dim();
            (dd, dd)
        }
        fn eval_g<T: Real>(&self, q: &[T], out: &mut [T]) {
            let dd = self.chart.dim();
            let mut full = vec![T::zero(); 4 * dd];
            ConnectionFormMap { chart: self.chart }.eval_g(q, &mut full);
            out.copy_from_slice(&full[3 * dd..]);
        }
    }

    #[test]
    fn moment_equivariance_and_exactness() {
        for name in ["flat_h1", "hp1"] {
            let model = builtin(name).unwrap();
            let chart = BundleChart::canonical(&model, consts::DEFAULT_A)
                .with_center(twisted_center());
            let q = sample_q(&chart);
            // equivariance: right-translating the fiber point by E rotates the
            // moment by E^T. In a chart centered at g0 E, the translated point
            // has rotation coordinates E^T w.
            let e = exp2(&[0.3, 0.2, -0.4]);
            let chart2 = chart.clone().with_center(chart.g0.matmul(&e));
            let d = model.dim();
            let w2 = e.transpose().apply(&q[d..d + 3]);
            let mut q2 = q.clone();
            q2[d..d + 3].copy_from_slice(&w2);
            let mu = chart.moment(&q);
            let mu2 = chart2.moment(&q2);
            let want = e.transpose().apply(&mu);
            for k in 0..3 {
                assert!((mu2[k] - want[k]).abs() < 1e-12, "{name}: equivariance {k}");
            }
            // exactness: d mu_a (v) = -d theta_hat_a (Xhat, v)
            let eng = DerivativeEngine::forward();
            let lift = NaturalLiftField { chart: &chart };
            let xhat = eval_vec::<f64>(&lift, &q);
            let mm = MomentMap { chart: &chart };
            let dd = chart.dim();
            for alpha in 0..3 {
                let th = ThetaHatMap { chart: &chart, alpha };
                for k in 0..dd {
                    let mut v = vec![0.0; dd];
                    v[k] = 1.0;
                    let dmu = eng.directional(&mm, &q, &v)[alpha];
                    let dth = eng.d_one_form(&th, &q, &xhat, &v);
                    assert!(
                        (dmu + dth).abs() < 1e-7,
                        "{name}: exactness alpha={alpha} axis={k}: {dmu} vs {}",
                        -dth
                    );
                }
            }
        }
    }

    #[test]
    fn g_form_matches_exterior_derivative_pairing() {
        // Canonical field basis: slice-horizontal lifts of the coordinate
        // fields first, then the rotation generators Z_1..Z_3, then the scale
        // generator Z_0. For a parallel reference volume the pairing identity
        // holds for arbitrary ordered pairs; otherwise for every pair whose
        // first member is tangent to the constant-scale slice (which the
        // horizontal-first enumeration guarantees) and for vertical pairs.
        for (name, c, parallel_volume) in [
            ("flat_h1", 1.0, true),
            ("hp1", -8.0, true),
            ("deformed_flat", 3.0, false),
        ] {
            let model = builtin(name).unwrap();
            let chart = BundleChart::new(&model, c, consts::DEFAULT_A)
                .unwrap()
                .with_center(twisted_center());
            let q = sample_q(&chart);
            let d = chart.base_dim();
            let eng = DerivativeEngine::forward();

            let mut basis: Vec<Vec<f64>> = Vec::new();
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                let base = ConstField(e);
                let hl = HorizontalLiftField {
                    chart: &chart,
                    base: &base,
                    slice_horizontal: true,
                };
                basis.push(eval_vec::<f64>(&hl, &q));
            }
            for delta in 0..3 {
                let zf = VerticalField { chart: &chart, delta: Some(delta) };
                basis.push(eval_vec::<f64>(&zf, &q));
            }
            let z0 = VerticalField { chart: &chart, delta: None };
            basis.push(eval_vec::<f64>(&z0, &q));

            for alpha in 0..3 {
                let th = ThetaHatMap { chart: &chart, alpha };
                for i in 0..basis.len() {
                    for j in (i + 1)..basis.len() {
                        let direct = eng.d_one_form(&th, &q, &basis[i], &basis[j]);
                        let closed = chart.g_pairing(&q, alpha, &basis[i], &basis[j]);
                        assert!(
                            (direct - closed).abs() < 1e-7,
                            "{name}: alpha={alpha} pair=({i},{j}): {direct} vs {closed}"
                        );
                        if parallel_volume {
                            let rev = chart.g_pairing(&q, alpha, &basis[j], &basis[i]);
                            assert!(
                                (-direct - rev).abs() < 1e-7,
                                "{name}: alpha={alpha} pair=({j},{i}): {} vs {rev}",
                                -direct
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn g_form_symmetric_and_alpha_independent_in_parallel_volume_gauge() {
        let model = builtin("hp1").unwrap();
        let chart = BundleChart::canonical(&model, consts::DEFAULT_A)
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let dd = chart.dim();
        let mut vals = [0.0; 3];
        let v1: Vec<f64> = (0..dd).map(|k| 0.2 - 0.09 * k as f64).collect();
        let v2: Vec<f64> = (0..dd).map(|k| 0.4 + 0.05 * ((k * 3) % 7) as f64).collect();
        for alpha in 0..3 {
            let gv = chart.g_form_value(&q, alpha, &v1, &v2);
            let gv_t = chart.g_form_value(&q, alpha, &v2, &v1);
            assert!((gv - gv_t).abs() < 1e-9, "symmetry at {alpha}");
            vals[alpha] = gv;
        }
        assert!((vals[0] - vals[1]).abs() < 1e-9, "alpha independence 01");
        assert!((vals[0] - vals[2]).abs() < 1e-9, "alpha independence 02");
    }

    #[test]
    fn canonical_parameter_removes_connection_dependence() {
        let flat = builtin("flat_h1").unwrap();
        let def = builtin("deformed_flat").unwrap();
        // same frame, same chart; structures agree at the canonical parameter
        let c0 = consts::canonical_c(1);
        let chart_f = BundleChart::new(&flat, c0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let chart_d = BundleChart::new(&def, c0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart_f);
        for alpha in 0..3 {
            let mf = chart_f.almost_complex(&q, alpha);
            let md = chart_d.almost_complex(&q, alpha);
            assert!(mf.sub(&md).max_abs() < 1e-9, "independence at {alpha}");
        }
    }

    #[test]
    fn structure_difference_matches_closed_form_off_canonical() {
        let flat = builtin("flat_h1").unwrap();
        let def = builtin("deformed_flat").unwrap();
        let c = 3.0;
        let chart_f = BundleChart::new(&flat, c, consts::DEFAULT_A).unwrap();
        let chart_d = BundleChart::new(&def, c, consts::DEFAULT_A).unwrap();
        // at the fiber chart center (w = 0, g0 = id)
        let x = sample_point(&flat);
        let q = chart_f.point(&x, [0.0, 0.0, 0.0], 0.4);
        let d = flat.dim();
        let dd = chart_f.dim();
        let frames = flat.frame.at::<f64>(&x);
        let xi = eval_vec::<f64>(
            &crate::models::XiMap { n: 1, xi: crate::models::XiForm::LinearX1Dx2 },
            &x,
        );
        let n1 = 2.0; // n + 1
        let coef = -consts::EPS * (1.0 + 4.0 * n1 / c);
        for alpha in 0..3 {
            let mf = chart_f.almost_complex(&q, alpha);
            let md = chart_d.almost_complex(&q, alpha);
            let diff = md.sub(&mf);
            // predicted: coef * (xi(h) Z_a + xi(I_a h) Z_0) column by column
            let mut want = SqMat::<f64>::zeros(dd);
            for col in 0..d {
                let mut h = vec![0.0; d];
                h[col] = 1.0;
                let xih = xi[col];
                let xiih = dot(&xi, &frames[alpha].apply(&h));
                // Z_a chart vector at w = 0 is the unit w_a axis; Z_0 is c d/du
                want.set(d + alpha, col, coef * xih);
                want.set(d + 3, col, coef * xiih * c);
            }
            assert!(
                diff.sub(&want).max_abs() < 1e-9,
                "closed-form difference at {alpha}: residual {}",
                diff.sub(&want).max_abs()
            );
        }
    }

    #[test]
    fn integrability_flat_and_projective_all_parameters() {
        for (name, c) in [
            ("flat_h1", -8.0),
            ("flat_h1", 1.0),
            ("deformed_flat", -8.0),
            ("hp1", -8.0),
            ("hp1", 2.5),
        ] {
            let model = builtin(name).unwrap();
            let chart = BundleChart::new(&model, c, consts::DEFAULT_A)
                .unwrap()
                .with_center(twisted_center());
            let q = sample_q(&chart);
            for alpha in 0..3 {
                let worst = nijenhuis_max(&chart, &q, alpha);
                assert!(
                    worst < 1e-7,
                    "{name} c={c} alpha={alpha}: integrability residual {worst}"
                );
            }
        }
    }

    #[test]
    fn deformed_off_canonical_is_obstructed() {
        let model = builtin("deformed_flat").unwrap();
        let chart = BundleChart::new(&model, 1.0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let mut worst: f64 = 0.0;
        for alpha in 0..3 {
            worst = worst.max(nijenhuis_max(&chart, &q, alpha));
        }
        assert!(worst > 1e-3, "expected an obstruction, got {worst}");
    }

    #[test]
    fn measured_lift_rotation_matches_declared() {
        for name in ["flat_h1", "hopf", "hp1", "hp2"] {
            let model = builtin(name).unwrap();
            let x = sample_point(&model);
            let r = lift_rotation_measured(&model, &x, 1e-3).unwrap();
            for k in 0..3 {
                assert!(
                    (r[k] - model.lift_rot[k]).abs() < 5e-6,
                    "{name}: component {k}: {} vs {}",
                    r[k],
                    model.lift_rot[k]
                );
            }
        }
    }

    #[test]
    fn recentering_preserves_structures_and_moment() {
        let model = builtin("hp1").unwrap();
        let chart = BundleChart::new(&model, -8.0, consts::DEFAULT_A)
            .unwrap()
            .with_center(twisted_center());
        let q = sample_q(&chart);
        let (chart2, q2) = chart.recentered(&q);
        assert!(norm_f64(&q2[model.dim()..model.dim() + 3]) < 1e-15);
        let mu1 = chart.moment(&q);
        let mu2 = chart2.moment(&q2);
        for k in 0..3 {
            assert!((mu1[k] - mu2[k]).abs() < 1e-12, "moment {k}");
        }
        // the recentered chart has different coordinates, so compare the
        // structures through their chart-independent hat-coordinate action
        let fd1 = chart.fiber_data::<f64>(&q);
        let fd2 = chart2.fiber_data::<f64>(&q2);
        let hv = HatVec { h: vec![0.3, -0.2, 0.5, 0.7], a: [0.4, -0.6, 0.1], b: -0.9 };
        for alpha in 0..3 {
            let m1 = chart.almost_complex(&q, alpha);
            let m2 = chart2.almost_complex(&q2, alpha);
            let r1 = chart.hat_split(&fd1, &m1.apply(&chart.hat_assemble(&fd1, &hv)));
            let r2 = chart2.hat_split(&fd2, &m2.apply(&chart2.hat_assemble(&fd2, &hv)));
            assert!(max_abs(&sub_vec(&r1.h, &r2.h)) < 1e-10, "structure h {alpha}");
            for k in 0..3 {
                assert!((r1.a[k] - r2.a[k]).abs() < 1e-10, "structure a {alpha}");
            }
            assert!((r1.b - r2.b).abs() < 1e-10, "structure b {alpha}");
        }
    }

    #[test]
    fn vertical_obstruction_calibration() {
        let model = builtin("deformed_flat").unwrap();
        let c = 1.0;
        let chart = BundleChart::new(&model, c, consts::DEFAULT_A).unwrap();
        let x = sample_point(&model);
        let q = chart.point(&x, [0.0, 0.0, 0.0], 0.2);
        let d = model.dim();
        let fd = chart.fiber_data::<f64>(&q);
        for alpha in 0..3 {
            let jet = StructureJet::compute(&chart, &q, alpha);
            for (i, j) in [(0usize, 1usize), (0, 2), (1, 3), (2, 3)] {
                let mut xv = vec![0.0; d];
                xv[i] = 1.0;
                let mut yv = vec![0.0; d];
                yv[j] = 1.0;
                let u = chart.hat_assemble(
                    &fd,
                    &HatVec { h: xv.clone(), a: [0.0; 3], b: 0.0 },
                );
                let v = chart.hat_assemble(
                    &fd,
                    &HatVec { h: yv.clone(), a: [0.0; 3], b: 0.0 },
                );
                let nv = jet.nijenhuis(&u, &v);
                let hat_n = chart.hat_split(&fd, &nv);
                let (want_b, want_a) =
                    predicted_vertical_obstruction(&chart, &x, alpha, &xv, &yv);
                assert!(
                    (hat_n.b - want_b).abs() < 1e-7,
                    "alpha={alpha} pair=({i},{j}): scale component {} vs {want_b}",
                    hat_n.b
                );
                assert!(
                    (hat_n.a[alpha] - want_a).abs() < 1e-7,
                    "alpha={alpha} pair=({i},{j}): rotation component {} vs {want_a}",
                    hat_n.a[alpha]
                );
            }
        }
    }
}
