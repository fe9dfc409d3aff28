//! Quaternionic structures on a 4n-dimensional chart: local frames of almost
//! complex structures, compatible torsion-free connections, their curvature and
//! Ricci forms, the canonical deformation family, and affine-symmetry checks.
//!
//! Conventions (fixed crate-wide in [`crate::consts`]):
//! - curvature `R(e_k, e_l) e_j = R^i_{jkl} e_i` with
//!   `R^i_{jkl} = d_k G^i_{lj} - d_l G^i_{kj} + G^i_{km} G^m_{lj} - G^i_{lm} G^m_{kj}`;
//! - Ricci traces the first slot: `ric(X, Y) = tr(Z -> R(Z, X) Y)`;
//! - the local curvature 2-forms of the induced connection on the coefficient
//!   bundle are extracted either from traces against the frame or from the Ricci
//!   tensor; both are exposed and compared by the verification suite.

use crate::consts;
use crate::error::{GeomError, Result};
use crate::kernel::{gamma_index, DerivativeEngine};
use crate::real::{eval_vec, ChartMap, Lift, Real};
use crate::tensor::SqMat;

/// A local almost-hypercomplex frame: three anticommuting almost complex
/// structures with `I1 I2 = I3` on a `d = 4n` chart, given as an endomorphism-
/// valued map (output: three d*d row-major blocks).
pub struct QuaternionicFrame {
    pub map: Box<dyn ChartMap>,
    pub dim: usize,
}

impl QuaternionicFrame {
    pub fn new(map: Box<dyn ChartMap>) -> Result<Self> {
        let d = map.dim_in();
        if d % 4 != 0 || map.dim_out() != 3 * d * d {
            return Err(GeomError::Shape { expected: 3 * d * d, got: map.dim_out() });
        }
        Ok(QuaternionicFrame { map, dim: d })
    }

    pub fn n(&self) -> usize {
        self.dim / 4
    }

    /// The three structures at a point, at any tower depth.
    pub fn at<T: Real>(&self, x: &[T]) -> [SqMat<T>; 3] {
        let d = self.dim;
        let raw = eval_vec::<T>(self.map.as_ref(), x);
        let mut out = [SqMat::zeros(d), SqMat::zeros(d), SqMat::zeros(d)];
        for a in 0..3 {
            out[a].a.copy_from_slice(&raw[a * d * d..(a + 1) * d * d]);
        }
        out
    }

    /// Largest violation of the quaternion relations at a point:
    /// `I_a^2 = -1` and `I_1 I_2 = I_3 = -I_2 I_1`.
    pub fn algebra_residual(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let [i1, i2, i3] = self.at::<f64>(x);
        let id = SqMat::<f64>::identity(d);
        let mut worst: f64 = 0.0;
        for i in [&i1, &i2, &i3] {
            worst = worst.max(i.matmul(i).add(&id).max_abs());
        }
        worst = worst.max(i1.matmul(&i2).sub(&i3).max_abs());
        worst = worst.max(i2.matmul(&i1).add(&i3).max_abs());
        worst
    }
}

/// Connection coefficients on the chart, packed per [`gamma_index`].
pub struct Connection {
    pub gamma: Box<dyn ChartMap>,
    pub dim: usize,
}

impl Connection {
    pub fn new(gamma: Box<dyn ChartMap>) -> Result<Self> {
        let d = gamma.dim_in();
        if gamma.dim_out() != d * d * d {
            return Err(GeomError::Shape { expected: d * d * d, got: gamma.dim_out() });
        }
        Ok(Connection { gamma, dim: d })
    }

    pub fn coefficients<T: Real>(&self, x: &[T]) -> Vec<T> {
        eval_vec::<T>(self.gamma.as_ref(), x)
    }

    /// Covariant derivative of a vector given pointwise data:
    /// `(nabla_u v)^k = du_v^k + G^k_{ij} u^i v^j` where `du_v` is the
    /// directional derivative of the field along `u`.
    pub fn covariant_from_parts<T: Real>(
        &self,
        g: &[T],
        u: &[T],
        v: &[T],
        du_v: &[T],
    ) -> Vec<T> {
        let d = self.dim;
        let mut out = du_v.to_vec();
        for k in 0..d {
            let mut s = T::zero();
            for i in 0..d {
                for j in 0..d {
                    s += g[gamma_index(d, k, i, j)] * u[i] * v[j];
                }
            }
            out[k] += s;
        }
        out
    }

    /// Torsion residual max |G^k_{ij} - G^k_{ji}| at a point.
    pub fn torsion_residual(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let g = self.coefficients::<f64>(x);
        let mut worst: f64 = 0.0;
        for k in 0..d {
            for i in 0..d {
                for j in 0..d {
                    worst = worst
                        .max((g[gamma_index(d, k, i, j)] - g[gamma_index(d, k, j, i)]).abs());
                }
            }
        }
        worst
    }

    /// Curvature endomorphism R(u, v) at a point, generic over the scalar.
    /// One tower level is consumed for the coefficient derivatives.
    pub fn curvature<T: Lift>(&self, x: &[T], u: &[T], v: &[T]) -> SqMat<T> {
        let d = self.dim;
        let g = self.coefficients::<T>(x);
        let dg_u = crate::real::directional::<T>(self.gamma.as_ref(), x, u);
        let dg_v = crate::real::directional::<T>(self.gamma.as_ref(), x, v);
        // R(u,v) = (d_u G)(v, .) - (d_v G)(u, .) + G(u, G(v, .)) - G(v, G(u, .))
        let mut r = SqMat::zeros(d);
        let gu = contract_first(&g, u, d);
        let gv = contract_first(&g, v, d);
        let dgu_v = contract_first(&dg_u, v, d);
        let dgv_u = contract_first(&dg_v, u, d);
        let quad = gu.matmul(&gv).sub(&gv.matmul(&gu));
        for i in 0..d * d {
            r.a[i] = dgu_v.a[i] - dgv_u.a[i] + quad.a[i];
        }
        r
    }

    /// Ricci tensor `ric(X, Y) = tr(Z -> R(Z, X) Y)` as a matrix
    /// `ric[l][j] = ric(e_l, e_j)`, generic over the scalar.
    pub fn ricci<T: Lift>(&self, x: &[T]) -> SqMat<T> {
        let d = self.dim;
        let g = self.coefficients::<T>(x);
        // directional derivatives of all coefficients along each axis
        let mut dg: Vec<Vec<T>> = Vec::with_capacity(d);
        for m in 0..d {
            let mut dir = vec![T::zero(); d];
            dir[m] = T::one();
            dg.push(crate::real::directional::<T>(self.gamma.as_ref(), x, &dir));
        }
        // ric_{lj} = sum_k R^k_{jkl}
        //          = sum_k [ d_k G^k_{lj} - d_l G^k_{kj}
        //                    + G^k_{km} G^m_{lj} - G^k_{lm} G^m_{kj} ]
        let mut ric = SqMat::zeros(d);
        // traces t_m = sum_k G^k_{km}
        let mut tr = vec![T::zero(); d];
        for m in 0..d {
            for k in 0..d {
                tr[m] += g[gamma_index(d, k, k, m)];
            }
        }
        for l in 0..d {
            for j in 0..d {
                let mut s = T::zero();
                for k in 0..d {
                    s += dg[k][gamma_index(d, k, l, j)];
                    s -= dg[l][gamma_index(d, k, k, j)];
                }
                for m in 0..d {
                    s += tr[m] * g[gamma_index(d, m, l, j)];
                    let mut inner = T::zero();
                    for k in 0..d {
                        inner += g[gamma_index(d, k, l, m)] * g[gamma_index(d, m, k, j)];
                    }
                    s -= inner;
                }
                ric.set(l, j, s);
            }
        }
        ric
    }
}

/// G(u, .) as an endomorphism: out[k][j] = G^k_{ij} u^i.
fn contract_first<T: Real>(g: &[T], u: &[T], d: usize) -> SqMat<T> {
    let mut m = SqMat::zeros(d);
    for k in 0..d {
        for j in 0..d {
            let mut s = T::zero();
            for i in 0..d {
                s += g[gamma_index(d, k, i, j)] * u[i];
            }
            m.set(k, j, s);
        }
    }
    m
}

/// Symmetric and antisymmetric parts of the Ricci matrix.
pub fn ricci_split<T: Real>(ric: &SqMat<T>) -> (SqMat<T>, SqMat<T>) {
    let half = T::from_f64(0.5);
    let t = ric.transpose();
    (ric.add(&t).scale(half), ric.sub(&t).scale(half))
}

/// Residual of nabla I_a = sum over the other two of (form ⊗ structure):
/// measures whether the connection preserves the quaternionic span at a point.
/// Returns the largest deviation of `nabla_u I_a` from span{I_b, I_c} over the
/// coordinate directions u.
pub fn span_preservation_residual(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
) -> f64 {
    let d = frame.dim;
    let n = frame.n();
    let g = conn.coefficients::<f64>(x);
    let frames = frame.at::<f64>(x);
    let mut worst: f64 = 0.0;
    for u_axis in 0..d {
        let mut u = vec![0.0; d];
        u[u_axis] = 1.0;
        let gu = contract_first(&g, &u, d);
        let di = frame_directional(frame, x, &u);
        for a in 0..3 {
            // nabla_u I_a = d_u I_a + [G(u), I_a]
            let nab = di[a].add(&gu.commutator(&frames[a]));
            // remove the component along each structure: tr(I_b I_b) = -4n
            let mut resid = nab.clone();
            for b in 0..3 {
                let coef = -nab.trace_product(&frames[b]) / (4.0 * n as f64);
                resid = resid.sub(&frames[b].scale(coef));
            }
            // remove any identity component (none is expected)
            let idc = nab.trace() / d as f64;
            for i in 0..d {
                resid.a[i * d + i] -= idc;
            }
            worst = worst.max(resid.max_abs());
        }
    }
    worst
}

/// Directional derivatives of the three frame structures along u, at any depth.
fn frame_directional<T: Real>(
    frame: &QuaternionicFrame,
    x: &[T],
    u: &[T],
) -> [SqMat<T>; 3] {
    let d = frame.dim;
    let raw = T::directional_dyn(frame.map.as_ref(), x, u);
    let mut out = [SqMat::zeros(d), SqMat::zeros(d), SqMat::zeros(d)];
    for a in 0..3 {
        out[a].a.copy_from_slice(&raw[a * d * d..(a + 1) * d * d]);
    }
    out
}

/// Local connection 1-forms of the induced connection on the structure span:
/// `nabla I_a = -2 eps (theta_c ⊗ I_b - theta_b ⊗ I_c)` for the cyclic triple
/// (a, b, c); extracted by tracing. Returns `theta[a][i]` = theta_a(e_i), using
/// `theta_b(u) = eps/(4n) tr(nabla_u I_a ∘ I_c)` for cyclic (a, b, c).
pub fn local_connection_forms_g<T: Real>(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[T],
) -> [Vec<T>; 3] {
    let d = frame.dim;
    let n = frame.n() as f64;
    let scale = T::from_f64(consts::EPS / (4.0 * n));
    let g = conn.coefficients::<T>(x);
    let frames = frame.at::<T>(x);
    let mut theta = [vec![T::zero(); d], vec![T::zero(); d], vec![T::zero(); d]];
    for i_axis in 0..d {
        let mut u = vec![T::zero(); d];
        u[i_axis] = T::one();
        let gu = contract_first(&g, &u, d);
        let di = frame_directional(frame, x, &u);
        for a in 0..3 {
            let b = (a + 1) % 3;
            let c = (a + 2) % 3;
            let nab_a = di[a].add(&gu.commutator(&frames[a]));
            theta[b][i_axis] = scale * nab_a.trace_product(&frames[c]);
        }
    }
    theta
}

pub fn local_connection_forms(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
) -> [Vec<f64>; 3] {
    local_connection_forms_g::<f64>(frame, conn, x)
}

/// The scale 1-form of the connection relative to a parallel-volume gauge:
/// `theta_0(u) = (sum_k G^k_{uk}) - d_u(log f)` where `f` is the chart density
/// whose log-derivative is supplied by `dlog_density` (zero for the built-in
/// parallel-volume models).
pub fn scale_form_g<T: Real>(
    conn: &Connection,
    dlog_density: Option<&dyn ChartMap>,
    x: &[T],
) -> Vec<T> {
    let d = conn.dim;
    let g = conn.coefficients::<T>(x);
    let mut th = vec![T::zero(); d];
    for i in 0..d {
        for k in 0..d {
            th[i] += g[gamma_index(d, k, i, k)];
        }
    }
    if let Some(m) = dlog_density {
        let dl = eval_vec::<T>(m, x);
        for i in 0..d {
            th[i] -= dl[i];
        }
    }
    th
}

pub fn scale_form(
    conn: &Connection,
    dlog_density: Option<&dyn ChartMap>,
    x: &[f64],
) -> Vec<f64> {
    scale_form_g::<f64>(conn, dlog_density, x)
}

/// Curvature 2-forms of the induced structure-bundle connection, by tracing
/// curvature against the frame: `Omega_a(u, v) = -1/(2n) tr(I_a R(u, v))`.
pub fn curvature_forms_trace(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
    u: &[f64],
    v: &[f64],
) -> [f64; 3] {
    let n = frame.n() as f64;
    let frames = frame.at::<f64>(x);
    let r = conn.curvature::<f64>(x, u, v);
    let mut om = [0.0; 3];
    for a in 0..3 {
        om[a] = -frames[a].trace_product(&r) / (2.0 * n);
    }
    om
}

/// The auxiliary symmetric/antisymmetric combination entering the Ricci-based
/// curvature-form formula:
/// `B = ric^a/(4(n+1)) + ric^s/(4n) - Pi_h(ric^s)/(2n(n+2))`, where
/// `Pi_h(b)(X,Y) = (b(X,Y) + sum_a b(I_a X, I_a Y))/4` is the hermitian part.
pub fn ricci_b_tensor(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
) -> SqMat<f64> {
    let d = frame.dim;
    let n = frame.n() as f64;
    let frames = frame.at::<f64>(x);
    let ric = conn.ricci::<f64>(x);
    let (rs, ra) = ricci_split(&ric);
    // Pi_h(rs)[l][j] = ( rs[l][j] + sum_a (I_a^T rs I_a)[l][j] ) / 4
    let mut pih = rs.clone();
    for f in &frames {
        pih = pih.add(&f.transpose().matmul(&rs).matmul(f));
    }
    let pih = pih.scale(0.25);
    let mut b = SqMat::zeros(d);
    for i in 0..d * d {
        b.a[i] = ra.a[i] / (4.0 * (n + 1.0)) + rs.a[i] / (4.0 * n)
            - pih.a[i] / (2.0 * n * (n + 2.0));
    }
    b
}

/// Curvature 2-forms from the Ricci route:
/// `Omega_a(u, v) = 2 (B(u, I_a v) - B(v, I_a u))`.
pub fn curvature_forms_ricci(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
    u: &[f64],
    v: &[f64],
) -> [f64; 3] {
    let frames = frame.at::<f64>(x);
    let b = ricci_b_tensor(frame, conn, x);
    let mut om = [0.0; 3];
    for a in 0..3 {
        let iav = frames[a].apply(v);
        let iau = frames[a].apply(u);
        om[a] = 2.0 * (b.bilinear(u, &iav) - b.bilinear(v, &iau));
    }
    om
}

/// Whether a bilinear form commutes with the structures:
/// max_a |b(I_a ., I_a .) - b(., .)|.
pub fn hermitian_residual(frame: &QuaternionicFrame, x: &[f64], b: &SqMat<f64>) -> f64 {
    let frames = frame.at::<f64>(x);
    let mut worst: f64 = 0.0;
    for f in &frames {
        let tb = f.transpose().matmul(b).matmul(f);
        worst = worst.max(tb.sub(b).max_abs());
    }
    worst
}

/// For n = 1 only: the (0,2)-part of the curvature with respect to I_a,
/// `R^(0,2)(u, v) = (R(u,v) + I R(I u, v) + I R(u, I v) - R(I u, I v)) / 4`,
/// maximized over the three structures and coordinate pairs. Zero iff each
/// structure's curvature obstruction to integrability vanishes at the point.
pub fn curvature_02_residual(
    frame: &QuaternionicFrame,
    conn: &Connection,
    x: &[f64],
) -> f64 {
    let d = frame.dim;
    let frames = frame.at::<f64>(x);
    let mut worst: f64 = 0.0;
    for a in 0..3 {
        let i = &frames[a];
        for p in 0..d {
            for q in (p + 1)..d {
                let mut u = vec![0.0; d];
                u[p] = 1.0;
                let mut v = vec![0.0; d];
                v[q] = 1.0;
                let iu = i.apply(&u);
                let iv = i.apply(&v);
                let r_uv = conn.curvature::<f64>(x, &u, &v);
                let r_iuv = conn.curvature::<f64>(x, &iu, &v);
                let r_uiv = conn.curvature::<f64>(x, &u, &iv);
                let r_iuiv = conn.curvature::<f64>(x, &iu, &iv);
                let part = r_uv
                    .add(&i.matmul(&r_iuv))
                    .add(&i.matmul(&r_uiv))
                    .sub(&r_iuiv)
                    .scale(0.25);
                worst = worst.max(part.max_abs());
            }
        }
    }
    worst
}

/// The canonical deformation term built from a 1-form `xi`:
/// `S^xi_u v = xi(u) v + xi(v) u - sum_a [xi(I_a u) I_a v + xi(I_a v) I_a u]`.
/// Returned packed like connection coefficients; adding it to a compatible
/// torsion-free connection yields another one.
pub fn deformation_term<T: Real>(
    frames: &[SqMat<T>; 3],
    xi: &[T],
    d: usize,
) -> Vec<T> {
    let mut s = vec![T::zero(); d * d * d];
    // xi(I_a e_i) for all a, i
    let mut xia = vec![T::zero(); 3 * d];
    for a in 0..3 {
        for i in 0..d {
            let mut acc = T::zero();
            for k in 0..d {
                acc += xi[k] * frames[a].get(k, i);
            }
            xia[a * d + i] = acc;
        }
    }
    for k in 0..d {
        for i in 0..d {
            for j in 0..d {
                let mut v = T::zero();
                if k == j {
                    v += xi[i];
                }
                if k == i {
                    v += xi[j];
                }
                for a in 0..3 {
                    v -= xia[a * d + i] * frames[a].get(k, j);
                    v -= xia[a * d + j] * frames[a].get(k, i);
                }
                s[gamma_index(d, k, i, j)] += v;
            }
        }
    }
    s
}

/// Project an endomorphism onto the span of {Id, I_1, I_2, I_3}:
/// coefficients `(t_0, t_1, t_2, t_3)` with
/// `t_0 = tr(A)/d`, `t_a = -tr(A I_a)/d`.
pub fn decompose_endomorphism<T: Real>(
    frames: &[SqMat<T>; 3],
    a: &SqMat<T>,
) -> [T; 4] {
    let d = a.d;
    let dd = T::from_f64(d as f64);
    let t0 = a.trace() / dd;
    let mut out = [t0, T::zero(), T::zero(), T::zero()];
    for k in 0..3 {
        out[k + 1] = -(a.trace_product(&frames[k]) / dd);
    }
    out
}

/// Residuals of the three pointwise identities characterizing an affine
/// symmetry X of the connection (all should vanish for a symmetry):
/// 1. the Lie derivative of the coefficients,
/// 2. `R(X, u) v + (nabla_u nabla X)(v) = 0` for coordinate u, v,
/// 3. `2 ric^a(X, .) - d(div^nabla X) = 0`.
pub struct AffineSymmetryResiduals {
    pub lie_connection: f64,
    pub hessian_curvature: f64,
    pub divergence_form: f64,
}

/// Compute the three residuals at a point. `xf` is the candidate field.
pub fn affine_symmetry_residuals(
    conn: &Connection,
    xf: &dyn ChartMap,
    engine: &DerivativeEngine,
    x: &[f64],
) -> AffineSymmetryResiduals {
    let d = conn.dim;
    let g = conn.coefficients::<f64>(x);

    // 1. Lie derivative of the connection coefficients
    let lie = engine.lie_connection(xf, conn.gamma.as_ref(), x);
    let lie_res = lie.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    // nabla X as an endomorphism: (nabla X)^k_j = d_j X^k + G^k_{jm} X^m
    // (defined as a chart map so we can differentiate it once more)
    struct NablaX<'a> {
        conn: &'a Connection,
        xf: &'a dyn ChartMap,
    }
    impl crate::real::ChartMapG for NablaX<'_> {
        fn dims(&self) -> (usize, usize) {
            (self.conn.dim, self.conn.dim * self.conn.dim)
        }
        fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
            let d = self.conn.dim;
            let g = self.conn.coefficients::<T>(x);
            let xv = eval_vec::<T>(self.xf, x);
            let jx = jac_generic(self.xf, x, d);
            for k in 0..d {
                for j in 0..d {
                    let mut v = jx[k * d + j];
                    for m in 0..d {
                        v += g[gamma_index(d, k, j, m)] * xv[m];
                    }
                    out[k * d + j] = v;
                }
            }
        }
    }

    let nx = NablaX { conn, xf };

    // 2. R(X, u) v + (nabla_u (nabla X))(v), where the second covariant
    // derivative uses the connection on endomorphism-valued fields:
    // (nabla_u A)^k_j = d_u A^k_j + G^k_{um} A^m_j - A^k_m G^m_{uj}.
    let xv = eval_vec::<f64>(xf, x);
    let nx_val = {
        let mut out = vec![0.0; d * d];
        crate::real::ChartMapG::eval_g::<f64>(&nx, x, &mut out);
        let mut m = SqMat::zeros(d);
        m.a.copy_from_slice(&out);
        m
    };
    let mut hess_res: f64 = 0.0;
    for u_axis in 0..d {
        let mut u = vec![0.0; d];
        u[u_axis] = 1.0;
        let du_nx_raw = engine.directional(&nx, x, &u);
        let mut du_nx = SqMat::zeros(d);
        du_nx.a.copy_from_slice(&du_nx_raw);
        let gu = contract_first(&g, &u, d);
        let nabla_u_nx = du_nx.add(&gu.matmul(&nx_val)).sub(&nx_val.matmul(&gu));
        let r_xu = conn.curvature::<f64>(x, &xv, &u);
        for v_axis in 0..d {
            let mut v = vec![0.0; d];
            v[v_axis] = 1.0;
            let lhs = r_xu.apply(&v);
            let rhs = nabla_u_nx.apply(&v);
            for k in 0..d {
                hess_res = hess_res.max((lhs[k] + rhs[k]).abs());
            }
        }
    }

    // 3. 2 ric^a(X, .) = d(tr nabla X)
    let ric = conn.ricci::<f64>(x);
    let (_, ra) = ricci_split(&ric);
    let lhs: Vec<f64> = ra.transpose().apply(&xv).iter().map(|v| 2.0 * v).collect();
    // d(tr nabla X): differentiate the trace of the wrapper
    struct TraceNx<'a> {
        conn: &'a Connection,
        xf: &'a dyn ChartMap,
    }
    impl crate::real::ChartMapG for TraceNx<'_> {
        fn dims(&self) -> (usize, usize) {
            (self.conn.dim, 1)
        }
        fn eval_g<T: Real>(&self, x: &[T], out: &mut [T]) {
            let d = self.conn.dim;
            let g = self.conn.coefficients::<T>(x);
            let xv = eval_vec::<T>(self.xf, x);
            let jx = jac_generic(self.xf, x, d);
            let mut tr = T::zero();
            for k in 0..d {
                tr += jx[k * d + k];
                for m in 0..d {
                    tr += g[gamma_index(d, k, k, m)] * xv[m];
                }
            }
            out[0] = tr;
        }
    }
    let tnx = TraceNx { conn, xf };
    let mut div_res: f64 = 0.0;
    for j in 0..d {
        let mut ej = vec![0.0; d];
        ej[j] = 1.0;
        let dtr = engine.directional(&tnx, x, &ej)[0];
        div_res = div_res.max((lhs[j] - dtr).abs());
    }

    AffineSymmetryResiduals {
        lie_connection: lie_res,
        hessian_curvature: hess_res,
        divergence_form: div_res,
    }
}

/// Jacobian (row-major, J[k*d+j] = d_j X^k) of a square map at a generic depth,
/// spending one extra tower level via [`Real::directional_dyn`].
pub fn jac_generic<T: Real>(map: &dyn ChartMap, x: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * d];
    for j in 0..d {
        let mut dir = vec![T::zero(); d];
        dir[j] = T::one();
        let col = T::directional_dyn(map, x, &dir);
        for k in 0..d {
            out[k * d + j] = col[k];
        }
    }
    out
}
