//! Differential-geometry kernel: directional derivatives, brackets, Lie and
//! exterior derivatives, and ODE flows for fields given in a single chart.
//!
//! Every operation runs in one of two modes. `Forward` uses the dual tower and is
//! exact to machine precision; `CentralFd` uses central finite differences and acts
//! as an independent oracle. The two are compared explicitly by the verification
//! suite, and each is available behind the same engine interface.
//!
//! Index packing for rank-3 connection coefficients: entry `(k, i, j)` of
//! `gamma` (meaning the `k`-th output component of the covariant derivative of
//! direction `j` along direction `i`) lives at `gamma[(k*d + i)*d + j]`.

use crate::chart::ChartBox;
use crate::error::{GeomError, Result};
use crate::real::{directional, eval_vec, ChartMap, D1, D2};
use crate::tensor::SqMat;

/// Position of connection coefficient (k, i, j) in a flat rank-3 buffer.
#[inline]
pub fn gamma_index(d: usize, k: usize, i: usize, j: usize) -> usize {
    (k * d + i) * d + j
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffMode {
    /// Dual-number forward mode (exact derivatives).
    Forward,
    /// Central finite differences (independent oracle).
    CentralFd,
}

#[derive(Clone, Copy, Debug)]
pub struct DerivativeEngine {
    pub mode: DiffMode,
    /// Step for the finite-difference mode.
    pub fd_step: f64,
}

impl Default for DerivativeEngine {
    fn default() -> Self {
        DerivativeEngine { mode: DiffMode::Forward, fd_step: 1e-5 }
    }
}

impl DerivativeEngine {
    pub fn forward() -> Self {
        Self::default()
    }

    pub fn central_fd() -> Self {
        DerivativeEngine { mode: DiffMode::CentralFd, fd_step: 1e-5 }
    }

    /// d/dt map(x + t dir) at t = 0.
    pub fn directional(&self, map: &dyn ChartMap, x: &[f64], dir: &[f64]) -> Vec<f64> {
        match self.mode {
            DiffMode::Forward => directional::<f64>(map, x, dir),
            DiffMode::CentralFd => {
                let h = self.fd_step;
                let xp: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + h * b).collect();
                let xm: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - h * b).collect();
                let fp = eval_vec::<f64>(map, &xp);
                let fm = eval_vec::<f64>(map, &xm);
                fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).collect()
            }
        }
    }

    /// Mixed second derivative d^2/ds dt map(x + s u + t v) at s = t = 0.
    pub fn second_directional(
        &self,
        map: &dyn ChartMap,
        x: &[f64],
        u: &[f64],
        v: &[f64],
    ) -> Vec<f64> {
        match self.mode {
            DiffMode::Forward => {
                let lifted: Vec<D2> = x
                    .iter()
                    .zip(u.iter().zip(v))
                    .map(|(&a, (&du, &dv))| D2::new(D1::new(a, du), D1::new(dv, 0.0)))
                    .collect();
                let out = eval_vec::<D2>(map, &lifted);
                out.into_iter().map(|o| o.im.im).collect()
            }
            DiffMode::CentralFd => {
                let h = self.fd_step;
                let at = |su: f64, sv: f64| {
                    let pt: Vec<f64> = x
                        .iter()
                        .zip(u.iter().zip(v))
                        .map(|(a, (du, dv))| a + su * h * du + sv * h * dv)
                        .collect();
                    eval_vec::<f64>(map, &pt)
                };
                let pp = at(1.0, 1.0);
                let pm = at(1.0, -1.0);
                let mp = at(-1.0, 1.0);
                let mm = at(-1.0, -1.0);
                (0..map.dim_out())
                    .map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h))
                    .collect()
            }
        }
    }

    /// Square Jacobian matrix J[i][j] = d(out_i)/d(x_j); requires dim_out == dim_in.
    pub fn jacobian_matrix(&self, map: &dyn ChartMap, x: &[f64]) -> SqMat<f64> {
        let d = x.len();
        assert_eq!(map.dim_out(), d, "jacobian_matrix needs a square map");
        let mut j = SqMat::zeros(d);
        for col in 0..d {
            let mut dir = vec![0.0; d];
            dir[col] = 1.0;
            let dcol = self.directional(map, x, &dir);
            for row in 0..d {
                j.set(row, col, dcol[row]);
            }
        }
        j
    }

    /// Jacobian columns for a rectangular map.
    pub fn jacobian_cols(&self, map: &dyn ChartMap, x: &[f64]) -> Vec<Vec<f64>> {
        let d = x.len();
        (0..d)
            .map(|col| {
                let mut dir = vec![0.0; d];
                dir[col] = 1.0;
                self.directional(map, x, &dir)
            })
            .collect()
    }

    /// Commutator of two vector fields: [X, Y] = dY(X) - dX(Y).
    pub fn lie_bracket(&self, xf: &dyn ChartMap, yf: &dyn ChartMap, x: &[f64]) -> Vec<f64> {
        let xv = eval_vec::<f64>(xf, x);
        let yv = eval_vec::<f64>(yf, x);
        let dy_x = self.directional(yf, x, &xv);
        let dx_y = self.directional(xf, x, &yv);
        dy_x.iter().zip(&dx_y).map(|(a, b)| a - b).collect()
    }

    /// Exterior derivative of a 1-form (map to covector components) on (u, v).
    pub fn d_one_form(
        &self,
        omega: &dyn ChartMap,
        x: &[f64],
        u: &[f64],
        v: &[f64],
    ) -> f64 {
        let du = self.directional(omega, x, u);
        let dv = self.directional(omega, x, v);
        crate::tensor::dot(&du, v) - crate::tensor::dot(&dv, u)
    }

    /// Exterior derivative of a 2-form (map to d*d row-major components) on (u, v, w).
    pub fn d_two_form(
        &self,
        omega: &dyn ChartMap,
        x: &[f64],
        u: &[f64],
        v: &[f64],
        w: &[f64],
    ) -> f64 {
        let d = x.len();
        let eval2 = |m: &[f64], a: &[f64], b: &[f64]| {
            let mut s = 0.0;
            for i in 0..d {
                for j in 0..d {
                    s += m[i * d + j] * a[i] * b[j];
                }
            }
            s
        };
        let du = self.directional(omega, x, u);
        let dv = self.directional(omega, x, v);
        let dw = self.directional(omega, x, w);
        eval2(&du, v, w) - eval2(&dv, u, w) + eval2(&dw, u, v)
    }

    /// Lie derivative of a scalar-valued map along X (all components).
    pub fn lie_scalar(&self, xf: &dyn ChartMap, f: &dyn ChartMap, x: &[f64]) -> Vec<f64> {
        let xv = eval_vec::<f64>(xf, x);
        self.directional(f, x, &xv)
    }

    /// Lie derivative of a 1-form along X: dX-transported covector.
    pub fn lie_one_form(&self, xf: &dyn ChartMap, omega: &dyn ChartMap, x: &[f64]) -> Vec<f64> {
        let xv = eval_vec::<f64>(xf, x);
        let dxo = self.directional(omega, x, &xv);
        let j = self.jacobian_matrix(xf, x);
        let om = eval_vec::<f64>(omega, x);
        let jt_om = j.transpose().apply(&om);
        dxo.iter().zip(&jt_om).map(|(a, b)| a + b).collect()
    }

    /// Lie derivative of a 2-form along X, returned as a matrix.
    pub fn lie_two_form(&self, xf: &dyn ChartMap, omega: &dyn ChartMap, x: &[f64]) -> SqMat<f64> {
        let d = x.len();
        let xv = eval_vec::<f64>(xf, x);
        let dxo = self.directional(omega, x, &xv);
        let mut lo = SqMat::zeros(d);
        lo.a.copy_from_slice(&dxo);
        let j = self.jacobian_matrix(xf, x);
        let mut om = SqMat::zeros(d);
        om.a.copy_from_slice(&eval_vec::<f64>(omega, x));
        lo.add(&j.transpose().matmul(&om)).add(&om.matmul(&j))
    }

    /// Lie derivative of an endomorphism field (d*d row-major) along X.
    pub fn lie_endomorphism(
        &self,
        xf: &dyn ChartMap,
        endo: &dyn ChartMap,
        x: &[f64],
    ) -> SqMat<f64> {
        let d = x.len();
        let xv = eval_vec::<f64>(xf, x);
        let dxe = self.directional(endo, x, &xv);
        let mut le = SqMat::zeros(d);
        le.a.copy_from_slice(&dxe);
        let j = self.jacobian_matrix(xf, x);
        let mut e = SqMat::zeros(d);
        e.a.copy_from_slice(&eval_vec::<f64>(endo, x));
        le.sub(&j.matmul(&e)).add(&e.matmul(&j))
    }

    /// Lie derivative of connection coefficients along X.
    ///
    /// (L_X G)^k_{ij} = X^m d_m G^k_{ij} - (d_m X^k) G^m_{ij}
    ///                + (d_i X^m) G^k_{mj} + (d_j X^m) G^k_{im} + d^2_{ij} X^k,
    /// returned in `gamma_index` packing.
    pub fn lie_connection(
        &self,
        xf: &dyn ChartMap,
        gamma: &dyn ChartMap,
        x: &[f64],
    ) -> Vec<f64> {
        let d = x.len();
        assert_eq!(gamma.dim_out(), d * d * d);
        let xv = eval_vec::<f64>(xf, x);
        let g = eval_vec::<f64>(gamma, x);
        let dg = self.directional(gamma, x, &xv);
        let j = self.jacobian_matrix(xf, x); // j[(k,m)] = d_m X^k
        let mut hess = vec![0.0; d * d * d]; // hess[(k,i,j)] = d^2_{ij} X^k
        for i in 0..d {
            let mut ei = vec![0.0; d];
            ei[i] = 1.0;
            for jx in i..d {
                let mut ej = vec![0.0; d];
                ej[jx] = 1.0;
                let hij = self.second_directional(xf, x, &ei, &ej);
                for k in 0..d {
                    hess[gamma_index(d, k, i, jx)] = hij[k];
                    hess[gamma_index(d, k, jx, i)] = hij[k];
                }
            }
        }
        let mut out = vec![0.0; d * d * d];
        for k in 0..d {
            for i in 0..d {
                for jx in 0..d {
                    let mut v = dg[gamma_index(d, k, i, jx)] + hess[gamma_index(d, k, i, jx)];
                    for m in 0..d {
                        v -= j.get(k, m) * g[gamma_index(d, m, i, jx)];
                        v += j.get(m, i) * g[gamma_index(d, k, m, jx)];
                        v += j.get(m, jx) * g[gamma_index(d, k, i, m)];
                    }
                    out[gamma_index(d, k, i, jx)] = v;
                }
            }
        }
        out
    }

    /// Coordinate divergence tr(dX).
    pub fn divergence(&self, xf: &dyn ChartMap, x: &[f64]) -> f64 {
        self.jacobian_matrix(xf, x).trace()
    }
}

/// Integrate dx/dt = X(x) from `x0` over time `t` with fixed-step RK4.
/// `domain`, when given, aborts with the escape time if a stage leaves the box.
pub fn flow(
    engine: &DerivativeEngine,
    xf: &dyn ChartMap,
    x0: &[f64],
    t: f64,
    h: f64,
    domain: Option<&ChartBox>,
) -> Result<Vec<f64>> {
    let (x, _) = flow_impl(engine, xf, x0, t, h, domain, false)?;
    Ok(x)
}

/// Flow together with the Jacobian of the time-t map (variational equation,
/// integrated alongside the trajectory with the same RK4 stages).
pub fn flow_with_jacobian(
    engine: &DerivativeEngine,
    xf: &dyn ChartMap,
    x0: &[f64],
    t: f64,
    h: f64,
    domain: Option<&ChartBox>,
) -> Result<(Vec<f64>, SqMat<f64>)> {
    let (x, j) = flow_impl(engine, xf, x0, t, h, domain, true)?;
    Ok((x, j.expect("jacobian requested")))
}

fn flow_impl(
    engine: &DerivativeEngine,
    xf: &dyn ChartMap,
    x0: &[f64],
    t: f64,
    h: f64,
    domain: Option<&ChartBox>,
    with_jac: bool,
) -> Result<(Vec<f64>, Option<SqMat<f64>>)> {
    let d = x0.len();
    if xf.dim_in() != d || xf.dim_out() != d {
        return Err(GeomError::Shape { expected: d, got: xf.dim_out() });
    }
    let n = ((t.abs() / h).ceil() as usize).max(1);
    let dt = t / n as f64;
    let mut x = x0.to_vec();
    let mut jac = if with_jac { Some(SqMat::<f64>::identity(d)) } else { None };

    // one combined stage: velocity of x and of the variational matrix
    let stage = |xs: &[f64], js: Option<&SqMat<f64>>| -> (Vec<f64>, Option<SqMat<f64>>) {
        let v = eval_vec::<f64>(xf, xs);
        let jv = js.map(|jm| engine.jacobian_matrix(xf, xs).matmul(jm));
        (v, jv)
    };

    for step in 0..n {
        if let Some(b) = domain {
            if !b.contains(&x) {
                return Err(GeomError::FlowEscape { t_exit: step as f64 * dt });
            }
        }
        let (k1, jk1) = stage(&x, jac.as_ref());
        let x2: Vec<f64> = x.iter().zip(&k1).map(|(a, b)| a + 0.5 * dt * b).collect();
        let j2 = jac.as_ref().map(|jm| jm.add(&jk1.as_ref().unwrap().scale(0.5 * dt)));
        let (k2, jk2) = stage(&x2, j2.as_ref());
        let x3: Vec<f64> = x.iter().zip(&k2).map(|(a, b)| a + 0.5 * dt * b).collect();
        let j3 = jac.as_ref().map(|jm| jm.add(&jk2.as_ref().unwrap().scale(0.5 * dt)));
        let (k3, jk3) = stage(&x3, j3.as_ref());
        let x4: Vec<f64> = x.iter().zip(&k3).map(|(a, b)| a + dt * b).collect();
        let j4 = jac.as_ref().map(|jm| jm.add(&jk3.as_ref().unwrap().scale(dt)));
        let (k4, jk4) = stage(&x4, j4.as_ref());

        for i in 0..d {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if let Some(jm) = jac.as_mut() {
            let s = jk1
                .unwrap()
                .add(&jk2.unwrap().scale(2.0))
                .add(&jk3.unwrap().scale(2.0))
                .add(&jk4.unwrap());
            *jm = jm.add(&s.scale(dt / 6.0));
        }
    }
    if let Some(b) = domain {
        if !b.contains(&x) {
            return Err(GeomError::FlowEscape { t_exit: t });
        }
    }
    Ok((x, jac))
}
