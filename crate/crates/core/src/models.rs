//! Built-in example geometries: chart descriptions of quaternionic manifolds
//! with a distinguished circle symmetry, used as ground truth by the
//! verification suites.
//!
//! All models share one almost-hypercomplex frame convention: on each
//! quaternionic coordinate block, `I_1, I_2, I_3` are right multiplication by
//! `i`, by `j`, and by `-k` respectively, so that `I_1 I_2 = I_3` under
//! composition. The models are:
//!
//! - `flat_h1`, `flat_h2`: the punctured flat space of one or two quaternion
//!   coordinates, zero connection, symmetry `z -> z e^{it}`;
//! - `hopf`: the flat geometry together with the affine deck transformation
//!   `z -> lambda z q` (`q` a unit complex quaternion), whose quotient is a
//!   compact quaternionic surface with the same local data;
//! - `hp1`, `hp2`: the quaternionic projective line/plane in an affine chart,
//!   with the Levi-Civita connection of the standard metric and the symmetry
//!   `w -> e^{it} w e^{-it}`;
//! - `deformed_flat`, `deformed_flat_const`: the flat frame with the connection
//!   shifted by the canonical quaternionic deformation of a 1-form, position-
//!   dependent or constant — the first has a non-hermitian antisymmetric Ricci
//!   part and is the designated non-integrable example away from the canonical
//!   family parameter.

use crate::chart::ChartBox;
use crate::consts;
use crate::error::{GeomError, Result};
use crate::quaternionic::{
    span_preservation_residual, Connection, QuaternionicFrame,
};
use crate::real::{ChartMap, ChartMapG, Real};
use crate::so3::{qconj_g, qleft_mat_g, qmul_g, right_mult_matrix, Quat};
use crate::tensor::SqMat;

/// Exact flow of the model symmetry, used as an oracle against RK4 integration.
pub trait ExactFlow: Send + Sync {
    fn at(&self, x: &[f64], t: f64) -> Vec<f64>;
}

/// A chart model of a quaternionic manifold with circle symmetry.
pub struct Model {
    pub name: &'static str,
    /// Number of quaternionic coordinate blocks (dimension is 4n).
    pub n: usize,
    pub frame: QuaternionicFrame,
    pub conn: Connection,
    /// Generator of the circle symmetry as a vector field on the chart.
    pub sym: Box<dyn ChartMap>,
    pub domain: ChartBox,
    /// Constant rotation rate (doubled so(3) basis) of the symmetry's natural
    /// lift to the frame bundle: the frame is transported by Exp(2 t hat(rho)).
    pub lift_rot: [f64; 3],
    /// Whether the symmetry preserves the connection (affine checks apply).
    pub sym_is_affine: bool,
    /// Whether lift/moment-map suites run on this model.
    pub moment_ready: bool,
    /// Linear deck transformation generating a compact quotient, if any.
    pub deck: Option<SqMat<f64>>,
    /// Log-derivative of the reference density (None: constant chart density).
    pub dlog_density: Option<Box<dyn ChartMap>>,
    pub flow_exact: Option<Box<dyn ExactFlow>>,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.frame.dim
    }

    /// Structural gates every model must pass: quaternion algebra of the frame,
    /// torsion-freeness, and preservation of the structure span.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<()> {
        for x in points {
            self.domain.check(x)?;
            let fr = self.frame.algebra_residual(x);
            if fr > 1e-10 {
                return Err(GeomError::NotQuaternionic { residual: fr });
            }
            let tr = self.conn.torsion_residual(x);
            if tr > 1e-10 {
                return Err(GeomError::Model(format!(
                    "connection has torsion (residual {tr:.3e})"
                )));
            }
            let sr = span_preservation_residual(&self.frame, &self.conn, x);
            if sr > 1e-8 {
                return Err(GeomError::NotQuaternionic { residual: sr });
            }
        }
        Ok(())
    }
}

/// The three constant structure blocks: right multiplication by i, j, -k.
pub fn standard_blocks() -> [[[f64; 4]; 4]; 3] {
    let ri = right_mult_matrix(Quat([0.0, 1.0, 0.0, 0.0]));
    let rj = right_mult_matrix(Quat([0.0, 0.0, 1.0, 0.0]));
    let rk = right_mult_matrix(Quat([0.0, 0.0, 0.0, 1.0]));
    let mut mk = rk;
    for row in &mut mk {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    [ri, rj, mk]
}

/// The constant frame at any tower depth, as three d x d matrices.
pub fn constant_frames<T: Real>(n: usize) -> [SqMat<T>; 3] {
    let d = 4 * n;
    let blocks = standard_blocks();
    let mut out = [SqMat::zeros(d), SqMat::zeros(d), SqMat::zeros(d)];
    for (alpha, block) in blocks.iter().enumerate() {
        for a in 0..n {
            for p in 0..4 {
                for q in 0..4 {
                    out[alpha].set(4 * a + p, 4 * a + q, T::from_f64(block[p][q]));
                }
            }
        }
    }
    out
}

struct ConstFrameMap {
    n: usize,
}

impl ChartMapG for ConstFrameMap {
    fn dims(&self) -> (usize, usize) {
        let d = 4 * self.n;
        (d, 3 * d * d)
    }
    fn eval_g<T: Real>(&self, _x: &[T], out: &mut [T]) {
        let d = 4 * self.n;
        let frames = constant_frames::<T>(self.n);
        for alpha in 0..3 {
            out[alpha * d * d..(alpha + 1) * d * d].copy_from_slice(&frames[alpha].a);
        }
    }
}

struct ZeroGammaMap {
    d: usize,
}

impl ChartMapG for ZeroGammaMap {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.d * self.d * self.d)
    }
    fn eval_g<T: Real>(&self, _x: &[T], out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
    }
}

/// The 1-form driving a deformed connection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum XiForm {
    /// xi = x^1 dx^2 (position-dependent; antisymmetric Ricci part is not
    /// hermitian, providing the non-integrable cells of the parameter grid).
    LinearX1Dx2,
    /// Constant coefficients (closed, so the antisymmetric Ricci part vanishes).
    Constant([f64; 4]),
}

impl XiForm {
    fn eval<T: Real>(&self, x: &[T], out: &mut [T]) {
        for v in out.iter_mut() {
            *v = T::zero();
        }
        match self {
            XiForm::LinearX1Dx2 => {
                out[2] = x[1];
            }
            XiForm::Constant(c) => {
                for (o, v) in out.iter_mut().zip(c.iter()) {
                    *o = T::from_f64(*v);
                }
            }
        }
    }
}

/// Covector field for a XiForm (used by gauge-change utilities and tests).
pub struct XiMap {
    pub n: usize,
    pub xi: XiForm,
}

impl ChartMapG for XiMap {
    fn dims(&self) -> (usize, usize) {
        (4 * self.n, 4 * self.n)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        self.xi.eval(x, out);
    }
}

struct DeformedGammaMap {
    n: usize,
    xi: XiForm,
}

impl ChartMapG for DeformedGammaMap {
    fn dims(&self) -> (usize, usize) {
        let d = 4 * self.n;
        (d, d * d * d)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let d = 4 * self.n;
        let mut xi = vec![T::zero(); d];
        self.xi.eval(x, &mut xi);
        let frames = constant_frames::<T>(self.n);
        let s = crate::quaternionic::deformation_term(&frames, &xi, d);
        out.copy_from_slice(&s);
    }
}

/// Standard metric of quaternionic projective space in an affine chart:
/// `g(u, v) = Re(u* . v)/s - Re[(u* . w)(w* . v)]/s^2` with `s = 1 + |w|^2`,
/// written per 4x4 block via quaternion left-multiplication matrices.
pub struct HpnMetricMap {
    pub n: usize,
}

impl ChartMapG for HpnMetricMap {
    fn dims(&self) -> (usize, usize) {
        let d = 4 * self.n;
        (d, d * d)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let n = self.n;
        let d = 4 * n;
        let mut s = T::one();
        for v in x.iter() {
            s += *v * *v;
        }
        let inv_s = T::one() / s;
        let inv_s2 = inv_s * inv_s;
        for v in out.iter_mut() {
            *v = T::zero();
        }
        for a in 0..n {
            let wa = [x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]];
            for b in 0..n {
                let wb = [x[4 * b], x[4 * b + 1], x[4 * b + 2], x[4 * b + 3]];
                // m = w_a * conj(w_b); block entry (p, q) = delta/s - L_m[p][q]/s^2
                let m = qmul_g(&wa, &qconj_g(&wb));
                let lm = qleft_mat_g(&m);
                for p in 0..4 {
                    for q in 0..4 {
                        let mut v = -lm[p][q] * inv_s2;
                        if a == b && p == q {
                            v += inv_s;
                        }
                        out[(4 * a + p) * d + (4 * b + q)] = v;
                    }
                }
            }
        }
    }
}

/// Levi-Civita coefficients computed from a metric map by differentiating one
/// tower level above the evaluation depth.
pub struct LeviCivitaMap {
    pub metric: Box<dyn ChartMap>,
    pub d: usize,
}

impl ChartMapG for LeviCivitaMap {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.d * self.d * self.d)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let d = self.d;
        let mut g = vec![T::zero(); d * d];
        T::eval_map(self.metric.as_ref(), x, &mut g);
        let gm = SqMat { d, a: g };
        let mut dg: Vec<Vec<T>> = Vec::with_capacity(d);
        for m in 0..d {
            let mut dir = vec![T::zero(); d];
            dir[m] = T::one();
            dg.push(T::directional_dyn(self.metric.as_ref(), x, &dir));
        }
        // lower coefficients: G_{kij} = (d_i g_{kj} + d_j g_{ki} - d_k g_{ij})/2
        // then raise the first index with the inverse metric.
        let half = T::from_f64(0.5);
        let mut lower = vec![T::zero(); d * d * d];
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    lower[(k * d + i) * d + j] =
                        (dg[i][k * d + j] + dg[j][k * d + i] - dg[k][i * d + j]) * half;
                }
            }
        }
        let ginv = gm.inverse();
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    let mut v = T::zero();
                    for m in 0..d {
                        v += ginv.get(k, m) * lower[(m * d + i) * d + j];
                    }
                    out[crate::kernel::gamma_index(d, k, i, j)] = v;
                }
            }
        }
    }
}

/// d(log sqrt(det g))_i = tr(g^{-1} d_i g)/2, the log-derivative of the
/// metric density in the chart.
pub struct MetricDensityMap {
    pub metric: Box<dyn ChartMap>,
    pub d: usize,
}

impl ChartMapG for MetricDensityMap {
    fn dims(&self) -> (usize, usize) {
        (self.d, self.d)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let d = self.d;
        let mut g = vec![T::zero(); d * d];
        T::eval_map(self.metric.as_ref(), x, &mut g);
        let ginv = SqMat { d, a: g }.inverse();
        let half = T::from_f64(0.5);
        for i in 0..d {
            let mut dir = vec![T::zero(); d];
            dir[i] = T::one();
            let dgi = T::directional_dyn(self.metric.as_ref(), x, &dir);
            let mut tr = T::zero();
            for p in 0..d {
                for q in 0..d {
                    tr += ginv.get(p, q) * dgi[q * d + p];
                }
            }
            out[i] = tr * half;
        }
    }
}

/// Symmetry z -> z e^{it} of the flat models: X(z) = z i per block.
struct RightRotationField {
    n: usize,
}

impl ChartMapG for RightRotationField {
    fn dims(&self) -> (usize, usize) {
        (4 * self.n, 4 * self.n)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let i_unit = [T::zero(), T::one(), T::zero(), T::zero()];
        for a in 0..self.n {
            let z = [x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]];
            let zi = qmul_g(&z, &i_unit);
            out[4 * a..4 * a + 4].copy_from_slice(&zi);
        }
    }
}

/// Symmetry w -> e^{it} w e^{-it} of the projective models: X(w) = i w - w i.
struct ConjugationField {
    n: usize,
}

impl ChartMapG for ConjugationField {
    fn dims(&self) -> (usize, usize) {
        (4 * self.n, 4 * self.n)
    }
    fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
        let i_unit = [T::zero(), T::one(), T::zero(), T::zero()];
        for a in 0..self.n {
            let w = [x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]];
            let iw = qmul_g(&i_unit, &w);
            let wi = qmul_g(&w, &i_unit);
            for p in 0..4 {
                out[4 * a + p] = iw[p] - wi[p];
            }
        }
    }
}

struct RightRotationFlow {
    n: usize,
}

impl ExactFlow for RightRotationFlow {
    fn at(&self, x: &[f64], t: f64) -> Vec<f64> {
        let e = [t.cos(), t.sin(), 0.0, 0.0];
        let mut out = vec![0.0; 4 * self.n];
        for a in 0..self.n {
            let z = [x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]];
            let ze = qmul_g(&z, &e);
            out[4 * a..4 * a + 4].copy_from_slice(&ze);
        }
        out
    }
}

struct ConjugationFlow {
    n: usize,
}

impl ExactFlow for ConjugationFlow {
    fn at(&self, x: &[f64], t: f64) -> Vec<f64> {
        let e = [t.cos(), t.sin(), 0.0, 0.0];
        let einv = [t.cos(), -t.sin(), 0.0, 0.0];
        let mut out = vec![0.0; 4 * self.n];
        for a in 0..self.n {
            let w = [x[4 * a], x[4 * a + 1], x[4 * a + 2], x[4 * a + 3]];
            let ewe = qmul_g(&qmul_g(&e, &w), &einv);
            out[4 * a..4 * a + 4].copy_from_slice(&ewe);
        }
        out
    }
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: [&str; 7] = [
    "flat_h1",
    "flat_h2",
    "hopf",
    "hp1",
    "hp2",
    "deformed_flat",
    "deformed_flat_const",
];

/// Chart box of the flat models: first block stays away from the origin.
fn flat_box(n: usize) -> ChartBox {
    let d = 4 * n;
    let mut lo = vec![-0.6; d];
    let mut hi = vec![0.6; d];
    lo[0] = 0.5;
    hi[0] = 1.8;
    ChartBox::new(lo, hi)
}

fn hpn_box(n: usize) -> ChartBox {
    let centers: [[f64; 4]; 2] = [[0.2, 0.3, 1.0, 0.1], [0.3, -0.2, 0.4, 0.8]];
    let mut lo = Vec::with_capacity(4 * n);
    let mut hi = Vec::with_capacity(4 * n);
    for a in 0..n {
        for p in 0..4 {
            lo.push(centers[a][p] - 0.35);
            hi.push(centers[a][p] + 0.35);
        }
    }
    ChartBox::new(lo, hi)
}

/// Hopf deck transformation: z -> lambda z q with q = e^{i beta}.
pub fn hopf_deck(lambda: f64, beta: f64) -> SqMat<f64> {
    let rq = right_mult_matrix(Quat([beta.cos(), beta.sin(), 0.0, 0.0]));
    let mut m = SqMat::zeros(4);
    for p in 0..4 {
        for q in 0..4 {
            m.set(p, q, lambda * rq[p][q]);
        }
    }
    m
}

pub const HOPF_LAMBDA: f64 = 1.25;
pub const HOPF_BETA: f64 = 0.6;

fn flat_like(name: &'static str, n: usize, deck: Option<SqMat<f64>>) -> Result<Model> {
    let d = 4 * n;
    Ok(Model {
        name,
        n,
        frame: QuaternionicFrame::new(Box::new(ConstFrameMap { n }))?,
        conn: Connection::new(Box::new(ZeroGammaMap { d }))?,
        sym: Box::new(RightRotationField { n }),
        domain: flat_box(n),
        lift_rot: [consts::EPS, 0.0, 0.0],
        sym_is_affine: true,
        moment_ready: true,
        deck,
        dlog_density: None,
        flow_exact: Some(Box::new(RightRotationFlow { n })),
    })
}

fn hpn(name: &'static str, n: usize) -> Result<Model> {
    let d = 4 * n;
    let metric = || Box::new(HpnMetricMap { n }) as Box<dyn ChartMap>;
    Ok(Model {
        name,
        n,
        frame: QuaternionicFrame::new(Box::new(ConstFrameMap { n }))?,
        conn: Connection::new(Box::new(LeviCivitaMap { metric: metric(), d }))?,
        sym: Box::new(ConjugationField { n }),
        domain: hpn_box(n),
        lift_rot: [-consts::EPS, 0.0, 0.0],
        sym_is_affine: true,
        moment_ready: true,
        deck: None,
        dlog_density: Some(Box::new(MetricDensityMap { metric: metric(), d })),
        flow_exact: Some(Box::new(ConjugationFlow { n })),
    })
}

fn deformed(name: &'static str, xi: XiForm) -> Result<Model> {
    let n = 1;
    Ok(Model {
        name,
        n,
        frame: QuaternionicFrame::new(Box::new(ConstFrameMap { n }))?,
        conn: Connection::new(Box::new(DeformedGammaMap { n, xi }))?,
        sym: Box::new(RightRotationField { n }),
        domain: flat_box(n),
        lift_rot: [consts::EPS, 0.0, 0.0],
        sym_is_affine: false,
        moment_ready: false,
        deck: None,
        dlog_density: None,
        flow_exact: Some(Box::new(RightRotationFlow { n })),
    })
}

/// Construct a built-in model by name.
pub fn builtin(name: &str) -> Result<Model> {
    match name {
        "flat_h1" => flat_like("flat_h1", 1, None),
        "flat_h2" => flat_like("flat_h2", 2, None),
        "hopf" => flat_like("hopf", 1, Some(hopf_deck(HOPF_LAMBDA, HOPF_BETA))),
        "hp1" => hpn("hp1", 1),
        "hp2" => hpn("hp2", 2),
        "deformed_flat" => deformed("deformed_flat", XiForm::LinearX1Dx2),
        "deformed_flat_const" => {
            deformed("deformed_flat_const", XiForm::Constant([0.3, -0.2, 0.5, 0.1]))
        }
        other => Err(GeomError::Model(format!("unknown model '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{flow, gamma_index, DerivativeEngine};
    use crate::quaternionic::{local_connection_forms, scale_form};
    use crate::real::eval_vec;

    fn probe(model: &Model) -> Vec<Vec<f64>> {
        let c = model.domain.center();
        let mut pts = vec![c.clone()];
        let mut p = c.clone();
        for (i, v) in p.iter_mut().enumerate() {
            *v += 0.11 * ((i % 3) as f64 - 1.0);
        }
        pts.push(p);
        pts
    }

    #[test]
    fn all_builtins_validate() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            m.validate(&probe(&m)).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn projective_metric_is_identity_at_origin_and_positive() {
        let m = HpnMetricMap { n: 2 };
        let d = 8;
        let g0 = eval_vec::<f64>(&m, &vec![0.0; d]);
        for p in 0..d {
            for q in 0..d {
                let e = if p == q { 1.0 } else { 0.0 };
                assert!((g0[p * d + q] - e).abs() < 1e-15);
            }
        }
        let x = builtin("hp2").unwrap().domain.center();
        let g = eval_vec::<f64>(&m, &x);
        let gm = nalgebra::DMatrix::from_row_slice(d, d, &g);
        let eig = gm.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > 1e-3), "{:?}", eig.eigenvalues);
    }

    #[test]
    fn levi_civita_is_metric_compatible() {
        let model = builtin("hp1").unwrap();
        let d = 4;
        let metric = HpnMetricMap { n: 1 };
        let x = model.domain.center();
        let g = eval_vec::<f64>(&metric, &x);
        let gam = model.conn.coefficients::<f64>(&x);
        let eng = DerivativeEngine::forward();
        // d_k g_ij - G^m_{ki} g_mj - G^m_{kj} g_im = 0
        for k in 0..d {
            let mut dir = vec![0.0; d];
            dir[k] = 1.0;
            let dgk = eng.directional(&metric, &x, &dir);
            for i in 0..d {
                for j in 0..d {
                    let mut v = dgk[i * d + j];
                    for m in 0..d {
                        v -= gam[gamma_index(d, m, k, i)] * g[m * d + j];
                        v -= gam[gamma_index(d, m, k, j)] * g[i * d + m];
                    }
                    assert!(v.abs() < 1e-12, "({k},{i},{j}): {v}");
                }
            }
        }
    }

    #[test]
    fn round_sphere_ricci_from_projective_line() {
        // The n = 1 chart metric is delta/(1+|w|^2)^2: constant curvature 4,
        // so ric = 12 g.
        let model = builtin("hp1").unwrap();
        let metric = HpnMetricMap { n: 1 };
        let x = model.domain.center();
        let ric = model.conn.ricci::<f64>(&x);
        let g = eval_vec::<f64>(&metric, &x);
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (ric.get(i, j) - 12.0 * g[i * 4 + j]).abs() < 1e-9,
                    "({i},{j}): {} vs {}",
                    ric.get(i, j),
                    12.0 * g[i * 4 + j]
                );
            }
        }
    }

    #[test]
    fn conjugation_field_is_killing() {
        let model = builtin("hp2").unwrap();
        let metric = HpnMetricMap { n: 2 };
        let x = model.domain.center();
        // same transport formula as for a 2-form: d_X g + J^T g + g J
        let l = DerivativeEngine::forward().lie_two_form(model.sym.as_ref(), &metric, &x);
        assert!(l.max_abs() < 1e-12);
    }

    #[test]
    fn deformed_scale_form_matches_xi_multiple() {
        // theta_0 = tr S^xi_. = 4(n+1) xi
        let model = builtin("deformed_flat").unwrap();
        let x = vec![0.9, 0.4, -0.2, 0.3];
        let th0 = scale_form(&model.conn, model.dlog_density.as_deref(), &x);
        let xi = eval_vec::<f64>(&XiMap { n: 1, xi: XiForm::LinearX1Dx2 }, &x);
        for k in 0..4 {
            assert!((th0[k] - 8.0 * xi[k]).abs() < 1e-13, "{k}");
        }
    }

    #[test]
    fn projective_scale_form_vanishes_in_metric_gauge() {
        let model = builtin("hp1").unwrap();
        let x = model.domain.center();
        let th0 = scale_form(&model.conn, model.dlog_density.as_deref(), &x);
        for v in th0 {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn flat_connection_forms_vanish() {
        let model = builtin("flat_h1").unwrap();
        let x = model.domain.center();
        let th = local_connection_forms(&model.frame, &model.conn, &x);
        for a in 0..3 {
            for v in &th[a] {
                assert!(v.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn deck_preserves_structure_span_and_symmetry() {
        let model = builtin("hopf").unwrap();
        let deck = model.deck.as_ref().unwrap();
        let x = vec![0.7, 0.1, -0.2, 0.3];
        let dx = deck.apply(&x);
        let frames_x = model.frame.at::<f64>(&x);
        let frames_dx = model.frame.at::<f64>(&dx);
        let dinv = deck.inverse();
        // dD I_a dD^{-1} must decompose in the span at the image point with an
        // orthogonal coefficient matrix
        let mut coeff = SqMat::<f64>::zeros(3);
        for a in 0..3 {
            let push = deck.matmul(&frames_x[a]).matmul(&dinv);
            let mut resid = push.clone();
            for b in 0..3 {
                let c = -push.trace_product(&frames_dx[b]) / 4.0;
                coeff.set(b, a, c);
                resid = resid.sub(&frames_dx[b].scale(c));
            }
            assert!(resid.max_abs() < 1e-12, "structure {a} leaves the span");
        }
        let ortho = coeff.transpose().matmul(&coeff);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((ortho.get(i, j) - e).abs() < 1e-12);
            }
        }
        // deck commutes with the symmetry field: dD X(x) = X(D x)
        let xv = eval_vec::<f64>(model.sym.as_ref(), &x);
        let lhs = deck.apply(&xv);
        let rhs = eval_vec::<f64>(model.sym.as_ref(), &dx);
        for k in 0..4 {
            assert!((lhs[k] - rhs[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn exact_flows_match_integrated_flows() {
        for name in ["flat_h1", "hp1"] {
            let model = builtin(name).unwrap();
            let x0 = model.domain.center();
            let t = 0.4;
            let exact = model.flow_exact.as_ref().unwrap().at(&x0, t);
            let eng = DerivativeEngine::forward();
            let num = flow(&eng, model.sym.as_ref(), &x0, t, 1e-3, None).unwrap();
            for k in 0..model.dim() {
                assert!((exact[k] - num[k]).abs() < 1e-9, "{name} comp {k}");
            }
        }
    }

    #[test]
    fn deformation_by_opposite_form_restores_flatness() {
        // starting from the deformed model, deforming by -xi gives zero coefficients
        let model = builtin("deformed_flat").unwrap();
        let x = vec![1.1, 0.2, 0.5, -0.4];
        let g = model.conn.coefficients::<f64>(&x);
        let frames = constant_frames::<f64>(1);
        let xi = eval_vec::<f64>(&XiMap { n: 1, xi: XiForm::LinearX1Dx2 }, &x);
        let minus_xi: Vec<f64> = xi.iter().map(|v| -v).collect();
        let s = crate::quaternionic::deformation_term(&frames, &minus_xi, 4);
        for k in 0..g.len() {
            assert!((g[k] + s[k]).abs() < 1e-14);
        }
    }
}
