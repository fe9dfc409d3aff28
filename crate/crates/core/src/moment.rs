//! The lifted circle generator and the momentum-type map.
//!
//! The model's circle symmetry lifts to the frame bundle by transporting
//! frames along the flow. This module provides the lift in two modes (the
//! declared closed form and a flow-Jacobian measurement), the checks tying
//! the lift to the bundle geometry (commutation with the fundamental fields,
//! invariance of the structures and connection), and the momentum-type map
//! checks: equivariance, exactness, the Cauchy-Riemann-type compatibility of
//! the three components, transversality of the level set, and the curvature
//! contraction identity behind it.

use nalgebra::Matrix3;

use crate::bundle::{
    BundleChart, ConnectionRowMap, DThetaHatMap, IhatMap, MomentMap, NaturalLiftField,
    ThetaHatMap, VerticalField,
};
use crate::consts;
use crate::error::{GeomError, Result};
use crate::kernel::{flow_with_jacobian, DerivativeEngine};
use crate::models::Model;
use crate::real::{eval_vec, ChartMapG, Real};
use crate::so3::{polar_rotation, unhat2};
use crate::tensor::{dot, SqMat};

/// How the lift of the symmetry is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LiftMode {
    /// Use the model's declared constant frame-rotation rate.
    ClosedForm,
    /// Transport the rotated frame by the flow Jacobian, re-orthonormalize by
    /// polar decomposition, and difference centrally in time.
    FlowJacobian,
}

/// The lift of the model symmetry to the bundle chart.
pub struct NaturalLift<'c, 'm> {
    pub chart: &'c BundleChart<'m>,
    pub mode: LiftMode,
    /// Central-difference step for [`LiftMode::FlowJacobian`].
    pub t_step: f64,
}

impl<'c, 'm> NaturalLift<'c, 'm> {
    /// Build a lift evaluator, verifying that the symmetry field preserves
    /// the structure span (`L_X I_a` lies in the span of the identity and the
    /// frame) at the chart center.
    pub fn new(chart: &'c BundleChart<'m>, mode: LiftMode) -> Result<Self> {
        let x = chart.model.domain.center();
        let res = symmetry_span_residual(chart.model, &x);
        if res > 1e-6 {
            return Err(GeomError::FieldNotQuaternionic { residual: res });
        }
        Ok(NaturalLift { chart, mode, t_step: 1e-4 })
    }

    /// Velocity of the lifted symmetry at a bundle point, in chart
    /// coordinates.
    pub fn velocity(&self, q: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            LiftMode::ClosedForm => {
                let field = NaturalLiftField { chart: self.chart };
                Ok(eval_vec::<f64>(&field, q))
            }
            LiftMode::FlowJacobian => flow_lift_velocity(self.chart, q, self.t_step),
        }
    }
}

/// Component of `L_X I_a` outside the span of the identity and the frame,
/// maximized over `a`. Zero for a symmetry compatible with the structure.
pub fn symmetry_span_residual(model: &Model, x: &[f64]) -> f64 {
    struct FrameComponent<'a> {
        model: &'a Model,
        alpha: usize,
    }
    impl ChartMapG for FrameComponent<'_> {
        fn dims(&self) -> (usize, usize) {
            let d = self.model.dim();
            (d, d * d)
        }
        fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
            let frames = self.model.frame.at::<T>(x);
            out.copy_from_slice(&frames[self.alpha].a);
        }
    }
    let eng = DerivativeEngine::forward();
    let frames = model.frame.at::<f64>(x);
    let mut worst = 0.0f64;
    for alpha in 0..3 {
        let fm = FrameComponent { model, alpha };
        let lie = eng.lie_endomorphism(model.sym.as_ref(), &fm, x);
        let coeff = crate::quaternionic::decompose_endomorphism(&frames, &lie);
        let mut rem = lie.clone();
        for (i, f) in frames.iter().enumerate() {
            rem = rem.sub(&f.scale(coeff[i + 1]));
        }
        let mut id_part = SqMat::identity(model.dim());
        id_part = id_part.scale(coeff[0]);
        rem = rem.sub(&id_part);
        worst = worst.max(rem.max_abs());
    }
    worst
}

/// Measure the lifted velocity by flowing the rotated frame: push the frame
/// through the flow Jacobian, read its rotation coefficients against the
/// reference frame at the displaced point, re-orthonormalize by polar
/// decomposition, and difference centrally in `t`. The scale velocity is the
/// logarithmic rate of the reference volume along the flow (zero whenever the
/// model volume is invariant).
pub fn flow_lift_velocity(chart: &BundleChart<'_>, q: &[f64], t_step: f64) -> Result<Vec<f64>> {
    let model = chart.model;
    let d = chart.base_dim();
    let x = &q[..d];
    let fd = chart.fiber_data::<f64>(q);
    let eng = DerivativeEngine::forward();

    let coeff_at = |t: f64| -> Result<Matrix3<f64>> {
        let (xt, jac) =
            flow_with_jacobian(&eng, model.sym.as_ref(), x, t, t_step / 2.0, None)?;
        let frames_xt = model.frame.at::<f64>(&xt);
        let jac_inv = jac.inverse();
        let scale = -1.0 / model.dim() as f64;
        let mut m = Matrix3::zeros();
        for b in 0..3 {
            let push = jac.matmul(&fd.rotated[b]).matmul(&jac_inv);
            for g in 0..3 {
                m[(g, b)] = scale * push.trace_product(&frames_xt[g]);
            }
        }
        Ok(polar_rotation(&m))
    };

    let rp = coeff_at(t_step)?;
    let rm = coeff_at(-t_step)?;
    let gdot = (rp - rm) / (2.0 * t_step);
    let mut gt = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            gt[(i, j)] = fd.g.get(j, i);
        }
    }
    let rate = unhat2(&(gt * gdot));
    let vw = fd.jr_inv.apply(&[rate[0], rate[1], rate[2]]);

    // volume rate: divergence of the field against the reference density
    let xv = eval_vec::<f64>(model.sym.as_ref(), x);
    let mut div = 0.0;
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        div += eng.directional(model.sym.as_ref(), x, &e)[i];
    }
    if let Some(dl) = &model.dlog_density {
        div += dot(&eval_vec::<f64>(dl.as_ref(), x), &xv);
    }
    let vu = consts::EPS * div / (2.0 * model.n as f64);

    let mut out = vec![0.0; chart.dim()];
    out[..d].copy_from_slice(&xv);
    out[d..d + 3].copy_from_slice(&vw);
    out[d + 3] = vu;
    Ok(out)
}

/// Residuals of the defining properties of the lifted symmetry at one point.
#[derive(Clone, Copy, Debug)]
pub struct LiftResiduals {
    /// Base projection of the lift minus the symmetry field.
    pub projection: f64,
    /// Closed-form velocity vs flow-Jacobian velocity.
    pub mode_match: f64,
    /// Max over the four fundamental fields of the bracket with the lift.
    pub commutation: f64,
    /// Max over alpha of the Lie derivative of the structures along the lift.
    pub structure_invariance: f64,
    /// Max over the four connection-form rows of their Lie derivative.
    pub connection_invariance: f64,
}

impl LiftResiduals {
    pub fn worst(&self) -> f64 {
        self.projection
            .max(self.mode_match)
            .max(self.commutation)
            .max(self.structure_invariance)
            .max(self.connection_invariance)
    }
}

/// Evaluate all lift residuals at one bundle point.
pub fn check_natural_lift(
    chart: &BundleChart<'_>,
    q: &[f64],
    t_step: f64,
) -> Result<LiftResiduals> {
    let eng = DerivativeEngine::forward();
    let lift = NaturalLiftField { chart };
    let closed = eval_vec::<f64>(&lift, q);
    let flow = flow_lift_velocity(chart, q, t_step)?;
    let d = chart.base_dim();
    let xv = eval_vec::<f64>(chart.model.sym.as_ref(), &q[..d]);

    let projection = closed[..d]
        .iter()
        .zip(&xv)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mode_match = closed
        .iter()
        .zip(&flow)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let mut commutation = 0.0f64;
    for delta in [None, Some(0), Some(1), Some(2)] {
        let zf = VerticalField { chart, delta };
        let br = eng.lie_bracket(&lift, &zf, q);
        commutation = commutation.max(max_abs(&br));
    }

    let mut structure_invariance = 0.0f64;
    for alpha in 0..3 {
        let im = IhatMap { chart, alpha };
        let lie = eng.lie_endomorphism(&lift, &im, q);
        structure_invariance = structure_invariance.max(lie.max_abs());
    }

    let mut connection_invariance = 0.0f64;
    for row in 0..4 {
        let rm = ConnectionRowMap { chart, row };
        let lie = eng.lie_one_form(&lift, &rm, q);
        connection_invariance = connection_invariance.max(max_abs(&lie));
    }

    Ok(LiftResiduals {
        projection,
        mode_match,
        commutation,
        structure_invariance,
        connection_invariance,
    })
}

/// Residuals of the momentum-type map at one point.
#[derive(Clone, Copy, Debug)]
pub struct MomentResiduals {
    /// Fiber equivariance: right-translating the fiber rotates the value.
    pub equivariance: f64,
    /// `d mu_a + dtheta_hat_a(Xhat, .)` over the coordinate directions.
    pub exactness: f64,
    /// Pairwise spread of the three covectors `d mu_a ∘ Ihat_a`.
    pub cr_pairwise: f64,
    /// Residual of the compatibility hypothesis
    /// `Ric(X, Y) = Ric(I_a X, I_a Y)` at the base point.
    pub cr_hypothesis: f64,
}

/// Evaluate the momentum-map residuals at one point; `rot` is the fiber
/// rotation used for the equivariance test.
pub fn check_moment(chart: &BundleChart<'_>, q: &[f64], rot: &SqMat<f64>) -> MomentResiduals {
    let d = chart.base_dim();
    let dd = chart.dim();
    let eng = DerivativeEngine::forward();

    // Equivariance: in a chart re-centered at g0 * rot, the right-translated
    // point has rotation coordinates rot^T w, and the value rotates by rot^T.
    let chart2 = chart.clone().with_center(chart.g0.matmul(rot));
    let mut q2 = q.to_vec();
    let w2 = rot.transpose().apply(&q[d..d + 3]);
    q2[d..d + 3].copy_from_slice(&w2);
    let mu = chart.moment(q);
    let mu2 = chart2.moment(&q2);
    let want = rot.transpose().apply(&mu);
    let equivariance = (0..3).map(|k| (mu2[k] - want[k]).abs()).fold(0.0, f64::max);

    // Exactness: d mu_a(v) = -dtheta_hat_a(Xhat, v).
    let lift = NaturalLiftField { chart };
    let xhat = eval_vec::<f64>(&lift, q);
    let mm = MomentMap { chart };
    let mut exactness = 0.0f64;
    for alpha in 0..3 {
        let th = ThetaHatMap { chart, alpha };
        for k in 0..dd {
            let mut v = vec![0.0; dd];
            v[k] = 1.0;
            let dmu = eng.directional(&mm, q, &v)[alpha];
            let dth = eng.d_one_form(&th, q, &xhat, &v);
            exactness = exactness.max((dmu + dth).abs());
        }
    }

    // Compatibility covectors d mu_a ∘ Ihat_a.
    let wv = cr_covectors(chart, q);
    let mut cr_pairwise = 0.0f64;
    for a in 0..3 {
        for b in (a + 1)..3 {
            for k in 0..dd {
                cr_pairwise = cr_pairwise.max((wv[a][k] - wv[b][k]).abs());
            }
        }
    }

    MomentResiduals {
        equivariance,
        exactness,
        cr_pairwise,
        cr_hypothesis: cr_hypothesis_residual(chart.model, &q[..d]),
    }
}

/// The three covectors `d mu_a ∘ Ihat_a` at a bundle point.
pub fn cr_covectors(chart: &BundleChart<'_>, q: &[f64]) -> [Vec<f64>; 3] {
    let dd = chart.dim();
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart };
    let mut grads = [vec![0.0; dd], vec![0.0; dd], vec![0.0; dd]];
    for j in 0..dd {
        let mut e = vec![0.0; dd];
        e[j] = 1.0;
        let dmu = eng.directional(&mm, q, &e);
        for a in 0..3 {
            grads[a][j] = dmu[a];
        }
    }
    let mut out = [vec![0.0; dd], vec![0.0; dd], vec![0.0; dd]];
    for a in 0..3 {
        let m = chart.almost_complex(q, a);
        for j in 0..dd {
            let mut s = 0.0;
            for k in 0..dd {
                s += grads[a][k] * m.get(k, j);
            }
            out[a][j] = s;
        }
    }
    out
}

/// Residual of `Ric(X, Y) = Ric(I_a X, I_a Y)` over coordinate directions Y
/// and all three structures, at a base point.
pub fn cr_hypothesis_residual(model: &Model, x: &[f64]) -> f64 {
    let ric = model.conn.ricci::<f64>(x);
    let frames = model.frame.at::<f64>(x);
    let xv = eval_vec::<f64>(model.sym.as_ref(), x);
    let d = model.dim();
    let mut worst = 0.0f64;
    for fr in &frames {
        let ix = fr.apply(&xv);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = 1.0;
            let iy = fr.apply(&e);
            let lhs = ric.bilinear(&xv, &e);
            let rhs = ric.bilinear(&ix, &iy);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Transversality data at one bundle point.
#[derive(Clone, Copy, Debug)]
pub struct Transversality {
    /// `G_a(Xhat, Xhat)` (alpha-max spread reported separately).
    pub value: f64,
    /// `Ric(X, X) + 4(n+2) <theta, theta>(Xhat, Xhat)`.
    pub expression: f64,
    /// `G_a(Xhat, Xhat) - eps A r^{2/c} / (2(n+2)) * expression`.
    pub identity_residual: f64,
    /// `(d mu_a ∘ Ihat_a)(Xhat) - G_a(Xhat, Xhat)`, max over alpha.
    pub pairing_residual: f64,
    /// Spread of `G_a(Xhat, Xhat)` over alpha.
    pub alpha_spread: f64,
}

/// Evaluate the transversality margin and its closed-form expression.
pub fn check_transversality(chart: &BundleChart<'_>, q: &[f64]) -> Transversality {
    let model = chart.model;
    let d = chart.base_dim();
    let x = &q[..d];
    let lift = NaturalLiftField { chart };
    let xhat = eval_vec::<f64>(&lift, q);
    let fd = chart.fiber_data::<f64>(q);
    let hat = chart.hat_split(&fd, &xhat);

    let mut gxx = [0.0; 3];
    for (alpha, g) in gxx.iter_mut().enumerate() {
        *g = chart.g_form_value(q, alpha, &xhat, &xhat);
    }
    let alpha_spread = (gxx[0] - gxx[1])
        .abs()
        .max((gxx[0] - gxx[2]).abs())
        .max((gxx[1] - gxx[2]).abs());

    let xv = eval_vec::<f64>(model.sym.as_ref(), x);
    let ric_xx = model.conn.ricci::<f64>(x).bilinear(&xv, &xv);
    let theta_sq: f64 = hat.a.iter().map(|v| v * v).sum();
    let npl2 = model.n as f64 + 2.0;
    let expression = ric_xx + 4.0 * npl2 * theta_sq;
    let pre = consts::EPS * chart.a_scale * fd.scale / (2.0 * npl2);
    let identity_residual = (gxx[0] - pre * expression).abs();

    let wv = cr_covectors(chart, q);
    let mut pairing_residual = 0.0f64;
    for alpha in 0..3 {
        let paired = dot(&wv[alpha], &xhat);
        pairing_residual = pairing_residual.max((paired - gxx[alpha]).abs());
    }

    Transversality {
        value: gxx[0],
        expression,
        identity_residual,
        pairing_residual,
        alpha_spread,
    }
}

/// Curvature contraction along the lift: residual and alpha-spread of
/// `Omega_a(Xhat, Ihat_a Xhat) = -eps / (2(n+2)) * Ric(X, X)`.
#[derive(Clone, Copy, Debug)]
pub struct OmegaContraction {
    pub residual: f64,
    pub alpha_spread: f64,
}

pub fn omega_contraction(chart: &BundleChart<'_>, q: &[f64]) -> OmegaContraction {
    let model = chart.model;
    let d = chart.base_dim();
    let x = &q[..d];
    let fd = chart.fiber_data::<f64>(q);
    let xv = eval_vec::<f64>(model.sym.as_ref(), x);
    let ric_xx = model.conn.ricci::<f64>(x).bilinear(&xv, &xv);
    let rhs = -consts::EPS / (2.0 * (model.n as f64 + 2.0)) * ric_xx;

    let mut lhs = [0.0; 3];
    for (alpha, l) in lhs.iter_mut().enumerate() {
        let jx = fd.rotated[alpha].apply(&xv);
        let om = crate::quaternionic::curvature_forms_trace(
            &model.frame,
            &model.conn,
            x,
            &xv,
            &jx,
        );
        let om_rot = fd.g.transpose().apply(&om);
        *l = consts::CURVATURE_LIFT_HALF * consts::EPS * om_rot[alpha];
    }
    let residual = lhs.iter().map(|l| (l - rhs).abs()).fold(0.0, f64::max);
    let alpha_spread = (lhs[0] - lhs[1])
        .abs()
        .max((lhs[0] - lhs[2]).abs())
        .max((lhs[1] - lhs[2]).abs());
    OmegaContraction { residual, alpha_spread }
}

/// Max residual of the pairing identity
/// `dtheta_hat_a(Y, Z) = G_a(Y, Ihat_a Z)` over the canonical field basis
/// (ordered pairs i < j; both orders when the reference volume is parallel).
pub fn check_dtheta_pairing(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let d = chart.base_dim();
    let eng = DerivativeEngine::forward();
    let basis = chart.canonical_basis(q);
    let both_orders = chart.volume_parallel_at(&q[..d]);
    let mut worst = 0.0f64;
    for alpha in 0..3 {
        let th = ThetaHatMap { chart, alpha };
        for i in 0..basis.len() {
            for j in (i + 1)..basis.len() {
                let direct = eng.d_one_form(&th, q, &basis[i], &basis[j]);
                let closed = chart.g_pairing(q, alpha, &basis[i], &basis[j]);
                worst = worst.max((direct - closed).abs());
                if both_orders {
                    let rev = chart.g_pairing(q, alpha, &basis[j], &basis[i]);
                    worst = worst.max((-direct - rev).abs());
                }
            }
        }
    }
    worst
}

/// Residual of the four closed-form fiber pairings:
/// `dtheta_hat_a(Z_0, Z_a) = 2 eps A r^{2/c}` and
/// `dtheta_hat_a(Z_b, Z_c) = -2 eps A r^{2/c}` for (a, b, c) cyclic.
pub fn fiber_pairing_values(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let eng = DerivativeEngine::forward();
    let fd = chart.fiber_data::<f64>(q);
    let f = chart.a_scale * fd.scale;
    let z0 = eval_vec::<f64>(&VerticalField { chart, delta: None }, q);
    let z: Vec<Vec<f64>> = (0..3)
        .map(|delta| eval_vec::<f64>(&VerticalField { chart, delta: Some(delta) }, q))
        .collect();
    let mut worst = 0.0f64;
    for alpha in 0..3 {
        let th = ThetaHatMap { chart, alpha };
        let beta = (alpha + 1) % 3;
        let gamma = (alpha + 2) % 3;
        let v1 = eng.d_one_form(&th, q, &z0, &z[alpha]);
        let v2 = eng.d_one_form(&th, q, &z[beta], &z[gamma]);
        worst = worst.max((v1 - 2.0 * consts::EPS * f).abs());
        worst = worst.max((v2 + 2.0 * consts::EPS * f).abs());
        // the closed form reproduces both
        let g1 = chart.g_pairing(q, alpha, &z0, &z[alpha]);
        let g2 = chart.g_pairing(q, alpha, &z[beta], &z[gamma]);
        worst = worst.max((g1 - 2.0 * consts::EPS * f).abs());
        worst = worst.max((g2 + 2.0 * consts::EPS * f).abs());
    }
    worst
}

/// Invariance of the pairing 2-forms along the lift:
/// max over alpha of the Lie derivative of `dtheta_hat_a`.
pub fn check_dtheta_lift_invariance(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let eng = DerivativeEngine::forward();
    let lift = NaturalLiftField { chart };
    let mut worst = 0.0f64;
    for alpha in 0..3 {
        let dt = DThetaHatMap { chart, alpha };
        let lie = eng.lie_two_form(&lift, &dt, q);
        worst = worst.max(lie.max_abs());
    }
    worst
}

/// Fiber equivariance of the rescaled connection forms:
/// `L_{Z_d} theta_hat = -2 hat(e_d) theta_hat` componentwise.
pub fn check_fiber_form_equivariance(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let dd = chart.dim();
    let eng = DerivativeEngine::forward();
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|alpha| eval_vec::<f64>(&ThetaHatMap { chart, alpha }, q))
        .collect();
    let mut worst = 0.0f64;
    for delta in 0..3 {
        let zf = VerticalField { chart, delta: Some(delta) };
        let mut e = [0.0; 3];
        e[delta] = 1.0;
        let hat_e = crate::so3::hat(&e);
        for alpha in 0..3 {
            let tm = ThetaHatMap { chart, alpha };
            let lie = eng.lie_one_form(&zf, &tm, q);
            for k in 0..dd {
                let mut want = 0.0;
                for beta in 0..3 {
                    want -= 2.0 * hat_e.get(alpha, beta) * rows[beta][k];
                }
                worst = worst.max((lie[k] - want).abs());
            }
        }
    }
    worst
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
