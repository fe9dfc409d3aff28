//! Reduction of the frame-scale bundle by the lifted circle symmetry.
//!
//! The moment level set `P = { mu = (1,0,0) }` is realized by Newton
//! projection, the circle quotient `M' = P / <X-hat>` by local slice charts
//! transversal to the lift inside `P`, and the reduced structures
//! `I'_a`, `Z`, `Theta'_a` by solving against the invariant decomposition
//! `T = V + span{X-hat, I-hat_a X-hat}` at each slice point.
//!
//! Slice-level derivatives are central finite differences of the projected
//! slice map; the inner Newton iterations run to a tolerance well below the
//! differencing step so the differenced maps stay numerically smooth.

use crate::bundle::{BundleChart, MomentMap, NaturalLiftField, ThetaHatMap, VerticalField};
use crate::consts::{self, tol};
use crate::error::{GeomError, Result};
use crate::kernel::DerivativeEngine;
use crate::models::Model;
use crate::quaternionic::curvature_forms_trace;
use crate::real::eval_vec;
use crate::so3::{align_e1, exp2};
use crate::tensor::{axpy, dot, norm_f64, scale_vec, sub_vec, SqMat};
use nalgebra::{DMatrix, Vector3};

/// Moment-map value cutting out the reduced level set.
pub const LEVEL_TARGET: [f64; 3] = [1.0, 0.0, 0.0];

/// Newton tolerance for slice-map evaluations: tighter than the reported
/// level tolerance so finite differences across projections stay smooth.
const SLICE_NEWTON_TOL: f64 = 1e-13;

/// Iteration cap for every Newton loop in this module.
const MAX_NEWTON: usize = 50;

/// Differencing step for slice-level and section-level derivatives.
const SLICE_FD_STEP: f64 = 1e-4;

fn lift_vec(chart: &BundleChart<'_>, q: &[f64]) -> Vec<f64> {
    eval_vec::<f64>(&NaturalLiftField { chart }, q)
}

fn level_error(chart: &BundleChart<'_>, q: &[f64]) -> ([f64; 3], f64) {
    let mu = chart.moment(q);
    let err = [
        mu[0] - LEVEL_TARGET[0],
        mu[1] - LEVEL_TARGET[1],
        mu[2] - LEVEL_TARGET[2],
    ];
    let norm = (err[0] * err[0] + err[1] * err[1] + err[2] * err[2]).sqrt();
    (err, norm)
}

/// Smallest pairing `|d mu_a (I-hat_a X-hat)|` over the three structures: the
/// margin that keeps the level set transversal to the correction directions.
pub fn transversality_margin(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart };
    let xh = lift_vec(chart, q);
    let mut margin = f64::INFINITY;
    for alpha in 0..3 {
        let dir = chart.almost_complex(q, alpha).apply(&xh);
        let dmu = eng.directional(&mm, q, &dir);
        margin = margin.min(dmu[alpha].abs());
    }
    margin
}

struct NewtonOutcome {
    q: Vec<f64>,
    residual: f64,
    iters: usize,
}

/// Newton iteration toward the level target with corrections along the three
/// rotated lifts `I-hat_a X-hat`, in a fixed fiber chart.
fn newton_level(
    chart: &BundleChart<'_>,
    q0: &[f64],
    tol_level: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart };
    let mut q = q0.to_vec();
    let mut best = f64::INFINITY;
    for it in 0..=max_iter {
        let (err, res) = level_error(chart, &q);
        best = best.min(res);
        if res < tol_level {
            return Ok(NewtonOutcome { q, residual: res, iters: it });
        }
        if !res.is_finite() || res > 1e6 || it == max_iter {
            break;
        }
        let xh = lift_vec(chart, &q);
        let dirs: Vec<Vec<f64>> = (0..3)
            .map(|a| chart.almost_complex(&q, a).apply(&xh))
            .collect();
        let mut jac = SqMat::<f64>::zeros(3);
        for (b, dir) in dirs.iter().enumerate() {
            let dmu = eng.directional(&mm, &q, dir);
            for a in 0..3 {
                jac.set(a, b, dmu[a]);
            }
        }
        let step = jac.solve(&err, 1);
        for (b, dir) in dirs.iter().enumerate() {
            axpy(&mut q, -step[b], dir);
        }
    }
    Err(GeomError::ProjectionFailed { iters: max_iter, residual: best })
}

/// Newton iteration toward the level target that moves only the four fiber
/// coordinates, taking the least-norm step of the underdetermined system;
/// the base point is left untouched, so the result is a fiber section.
fn newton_fiber(
    chart: &BundleChart<'_>,
    q0: &[f64],
    tol_level: f64,
    max_iter: usize,
) -> Result<NewtonOutcome> {
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart };
    let d = chart.base_dim();
    let dd = chart.dim();
    let mut q = q0.to_vec();
    let mut best = f64::INFINITY;
    for it in 0..=max_iter {
        let (err, res) = level_error(chart, &q);
        best = best.min(res);
        if res < tol_level {
            return Ok(NewtonOutcome { q, residual: res, iters: it });
        }
        if !res.is_finite() || res > 1e6 || it == max_iter {
            break;
        }
        let mut jrows = [[0.0; 4]; 3];
        for k in 0..4 {
            let mut dir = vec![0.0; dd];
            dir[d + k] = 1.0;
            let dmu = eng.directional(&mm, &q, &dir);
            for a in 0..3 {
                jrows[a][k] = dmu[a];
            }
        }
        let mut jjt = SqMat::<f64>::zeros(3);
        for a in 0..3 {
            for b in 0..3 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += jrows[a][k] * jrows[b][k];
                }
                jjt.set(a, b, s);
            }
        }
        let lam = jjt.solve(&err, 1);
        for k in 0..4 {
            let mut delta = 0.0;
            for a in 0..3 {
                delta += jrows[a][k] * lam[a];
            }
            q[d + k] -= delta;
        }
    }
    Err(GeomError::ProjectionFailed { iters: max_iter, residual: best })
}

/// A point on the moment level set, carried in a fiber chart recentered so
/// its rotation coordinate vanishes.
pub struct LevelPoint<'m> {
    pub chart: BundleChart<'m>,
    pub q: Vec<f64>,
    pub residual: f64,
    pub iters: usize,
}

/// Project a bundle point onto the level set along the rotated lifts.
///
/// Fails if the symmetry vanishes or the transversality margin at the start
/// is below tolerance, and reports the best residual reached if the Newton
/// loop stagnates.
pub fn project_to_level_set<'m>(
    chart: &BundleChart<'m>,
    q0: &[f64],
) -> Result<LevelPoint<'m>> {
    let d = chart.base_dim();
    let x_speed = norm_f64(&eval_vec::<f64>(chart.model.sym.as_ref(), &q0[..d]));
    if x_speed < 1e-10 {
        return Err(GeomError::ProjectionFailed { iters: 0, residual: x_speed });
    }
    let margin = transversality_margin(chart, q0);
    if margin < tol::TRANSVERSALITY {
        return Err(GeomError::ProjectionFailed { iters: 0, residual: margin });
    }
    let out = newton_level(chart, q0, tol::LEVEL_SET, MAX_NEWTON)?;
    let (chart2, q2) = chart.recentered(&out.q);
    Ok(LevelPoint { chart: chart2, q: q2, residual: out.residual, iters: out.iters })
}

/// Fiber chart whose zero-rotation seed over `x` lies exactly on the level
/// set: the center rotates the first axis onto the lift direction
/// `theta(X)/2 + rho`, and the returned scale coordinate solves the norm
/// condition. Returns the chart and the seed value of the scale coordinate.
pub fn level_seed_chart<'m>(
    model: &'m Model,
    c: f64,
    a_scale: f64,
    x: &[f64],
) -> Result<(BundleChart<'m>, f64)> {
    let chart = BundleChart::new(model, c, a_scale)?;
    let q0 = chart.point(x, [0.0; 3], 0.0);
    let xh = lift_vec(&chart, &q0);
    let fd = chart.fiber_data::<f64>(&q0);
    let hat = chart.hat_split(&fd, &xh);
    let v = Vector3::new(hat.a[0], hat.a[1], hat.a[2]);
    let n = v.norm();
    if n < 1e-12 {
        return Err(GeomError::ProjectionFailed { iters: 0, residual: n });
    }
    let rot = align_e1(&v);
    let mut g0 = SqMat::<f64>::zeros(3);
    for i in 0..3 {
        for j in 0..3 {
            g0.set(i, j, rot[(i, j)]);
        }
    }
    let u_seed = 0.5 * c * (1.0 / (a_scale * n)).ln();
    Ok((chart.with_center(g0), u_seed))
}

/// Local chart for the reduced manifold: an anchor on the level set, a basis
/// of the invariant complement `V` there, and the projected slice map that
/// integrates slice coordinates back onto the level set.
pub struct SliceChart<'m> {
    pub chart: BundleChart<'m>,
    pub anchor: Vec<f64>,
    /// Orthonormal chart vectors spanning `V` at the anchor (dimension 4n).
    pub basis: Vec<Vec<f64>>,
    /// Unit covectors whose joint kernel is `V` (six rows, rank four).
    pub covectors: Vec<Vec<f64>>,
    pub fd_step: f64,
    pub residual: f64,
}

/// Build a slice chart at a level point: `V` is the joint kernel of the
/// moment gradients and their structure twists, expected dimension `4n`.
pub fn build_slice(anchor: LevelPoint<'_>) -> Result<SliceChart<'_>> {
    let LevelPoint { chart, q, residual, .. } = anchor;
    let dd = chart.dim();
    let sd = dd - 4;
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart: &chart };
    let mut grads = vec![vec![0.0; dd]; 3];
    for j in 0..dd {
        let mut e = vec![0.0; dd];
        e[j] = 1.0;
        let dmu = eng.directional(&mm, &q, &e);
        for a in 0..3 {
            grads[a][j] = dmu[a];
        }
    }
    let mut rows = DMatrix::<f64>::zeros(6, dd);
    for a in 0..3 {
        for j in 0..dd {
            rows[(a, j)] = grads[a][j];
        }
    }
    for a in 0..3 {
        let m = chart.almost_complex(&q, a);
        for j in 0..dd {
            let mut s = 0.0;
            for k in 0..dd {
                s += grads[a][k] * m.get(k, j);
            }
            rows[(3 + a, j)] = s;
        }
    }
    let svd = rows.clone().svd(false, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let vt = svd.v_t.as_ref().expect("svd requested right singular vectors");
    let mut range_rows: Vec<Vec<f64>> = Vec::new();
    for (k, sv) in svd.singular_values.iter().enumerate() {
        if *sv > tol::RANK_CUT * smax {
            range_rows.push(vt.row(k).iter().cloned().collect());
        }
    }
    let nullity = dd - range_rows.len();
    if nullity != sd {
        return Err(GeomError::DegenerateSlice { expected: sd, found: nullity });
    }
    // Deterministic basis: orthogonal projections of the coordinate axes in
    // coordinate order, Gram-Schmidt against the accepted ones.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..dd {
        let mut v = vec![0.0; dd];
        v[j] = 1.0;
        for row in &range_rows {
            let c = dot(&v, row);
            axpy(&mut v, -c, row);
        }
        for b in &basis {
            let c = dot(&v, b);
            axpy(&mut v, -c, b);
        }
        let nv = norm_f64(&v);
        if nv > 1e-6 {
            basis.push(scale_vec(&v, 1.0 / nv));
            if basis.len() == sd {
                break;
            }
        }
    }
    if basis.len() != sd {
        return Err(GeomError::DegenerateSlice { expected: sd, found: basis.len() });
    }
    let covectors = grads
        .iter()
        .map(|g| scale_vec(g, 1.0 / norm_f64(g)))
        .chain((0..3).map(|a| {
            let row: Vec<f64> = (0..dd).map(|j| rows[(3 + a, j)]).collect();
            scale_vec(&row, 1.0 / norm_f64(&row))
        }))
        .collect();
    Ok(SliceChart { chart, anchor: q, basis, covectors, fd_step: SLICE_FD_STEP, residual })
}

/// Largest violation of the structure invariance of `V`: every `I-hat_a`
/// image of a basis vector must stay inside the joint kernel.
pub fn slice_invariance_residual(slice: &SliceChart<'_>) -> f64 {
    let mut worst = 0.0f64;
    for alpha in 0..3 {
        let m = slice.chart.almost_complex(&slice.anchor, alpha);
        for b in &slice.basis {
            let ib = m.apply(b);
            for row in &slice.covectors {
                worst = worst.max(dot(row, &ib).abs());
            }
        }
    }
    worst
}

/// Reduced structures in slice coordinates at one slice point: the three
/// almost complex structures, the pushed-down rotation field, and the
/// reduced two-forms.
pub struct QuotientStructure {
    pub i_prime: [SqMat<f64>; 3],
    pub z: Vec<f64>,
    pub theta_prime: [SqMat<f64>; 3],
}

impl QuotientStructure {
    pub fn dim(&self) -> usize {
        self.i_prime[0].d
    }

    /// Largest violation of the quaternion algebra: squares equal to minus
    /// the identity, cyclic products, and anticommutativity.
    pub fn relations_residual(&self) -> f64 {
        let sd = self.dim();
        let id = SqMat::<f64>::identity(sd);
        let mut worst = 0.0f64;
        for a in 0..3 {
            let b = (a + 1) % 3;
            let g = (a + 2) % 3;
            let sq = self.i_prime[a].matmul(&self.i_prime[a]).add(&id);
            worst = worst.max(sq.max_abs());
            let prod = self.i_prime[a].matmul(&self.i_prime[b]).sub(&self.i_prime[g]);
            worst = worst.max(prod.max_abs());
            let anti = self.i_prime[b].matmul(&self.i_prime[a]).add(&self.i_prime[g]);
            worst = worst.max(anti.max_abs());
        }
        worst
    }

    /// The pairing `Theta'_a(., I'_a .)` as a matrix.
    pub fn pairing(&self, alpha: usize) -> SqMat<f64> {
        self.theta_prime[alpha].matmul(&self.i_prime[alpha])
    }

    /// Largest entry difference between the three pairings.
    pub fn pairing_spread(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..3 {
            let b = (a + 1) % 3;
            worst = worst.max(self.pairing(a).sub(&self.pairing(b)).max_abs());
        }
        worst
    }

    /// Smallest eigenvalue of the symmetrized first pairing.
    pub fn pairing_min_eigenvalue(&self) -> f64 {
        let sd = self.dim();
        let s = self.pairing(0);
        let mut m = DMatrix::<f64>::zeros(sd, sd);
        for i in 0..sd {
            for j in 0..sd {
                m[(i, j)] = 0.5 * (s.get(i, j) + s.get(j, i));
            }
        }
        m.symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

impl<'m> SliceChart<'m> {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Slice coordinates to a level-set point in the anchor chart.
    pub fn point(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut q = self.anchor.clone();
        for (i, b) in self.basis.iter().enumerate() {
            axpy(&mut q, y[i], b);
        }
        let out = newton_level(&self.chart, &q, SLICE_NEWTON_TOL, MAX_NEWTON)?;
        Ok(out.q)
    }

    /// Level point and differenced tangent frame of the slice map.
    pub fn frame(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let p = self.point(y)?;
        let h = self.fd_step;
        let mut btan = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let mut yp = y.to_vec();
            yp[i] += h;
            let mut ym = y.to_vec();
            ym[i] -= h;
            let pp = self.point(&yp)?;
            let pm = self.point(&ym)?;
            btan.push(scale_vec(&sub_vec(&pp, &pm), 0.5 / h));
        }
        Ok((p, btan))
    }

    /// The transversal frame `[B | X-hat | I-hat_a X-hat]` as a matrix.
    fn transversal_matrix(&self, p: &[f64], btan: &[Vec<f64>]) -> SqMat<f64> {
        let dd = self.chart.dim();
        let sd = btan.len();
        let xh = lift_vec(&self.chart, p);
        let mut m = SqMat::<f64>::zeros(dd);
        for (c, col) in btan.iter().enumerate() {
            for r in 0..dd {
                m.set(r, c, col[r]);
            }
        }
        for r in 0..dd {
            m.set(r, sd, xh[r]);
        }
        for a in 0..3 {
            let col = self.chart.almost_complex(p, a).apply(&xh);
            for r in 0..dd {
                m.set(r, sd + 1 + a, col[r]);
            }
        }
        m
    }

    /// Reduced structures at one slice point.
    pub fn structure(&self, y: &[f64]) -> Result<QuotientStructure> {
        let (p, btan) = self.frame(y)?;
        let dd = self.chart.dim();
        let sd = self.dim();
        let m = self.transversal_matrix(&p, &btan);
        let cols = 3 * sd + 1;
        let mut rhs = vec![0.0; dd * cols];
        for a in 0..3 {
            let ia = self.chart.almost_complex(&p, a);
            for (j, b) in btan.iter().enumerate() {
                let w = ia.apply(b);
                for r in 0..dd {
                    rhs[r * cols + a * sd + j] = w[r];
                }
            }
        }
        let z1 = eval_vec::<f64>(&VerticalField { chart: &self.chart, delta: Some(0) }, &p);
        for r in 0..dd {
            rhs[r * cols + 3 * sd] = z1[r];
        }
        let sol = m.solve(&rhs, cols);
        let mut i_prime = [
            SqMat::<f64>::zeros(sd),
            SqMat::<f64>::zeros(sd),
            SqMat::<f64>::zeros(sd),
        ];
        for a in 0..3 {
            for i in 0..sd {
                for j in 0..sd {
                    i_prime[a].set(i, j, sol[i * cols + a * sd + j]);
                }
            }
        }
        let z: Vec<f64> = (0..sd).map(|i| sol[i * cols + 3 * sd]).collect();
        let eng = DerivativeEngine::forward();
        let mut theta_prime = [
            SqMat::<f64>::zeros(sd),
            SqMat::<f64>::zeros(sd),
            SqMat::<f64>::zeros(sd),
        ];
        for a in 0..3 {
            let th = ThetaHatMap { chart: &self.chart, alpha: a };
            let dth: Vec<Vec<f64>> = btan
                .iter()
                .map(|b| eng.directional(&th, &p, b))
                .collect();
            for i in 0..sd {
                for j in 0..sd {
                    let val = dot(&dth[i], &btan[j]) - dot(&dth[j], &btan[i]);
                    theta_prime[a].set(i, j, val);
                }
            }
        }
        Ok(QuotientStructure { i_prime, z, theta_prime })
    }

    /// Center structure plus one-sided displacements along every slice axis,
    /// for slice-level Lie and exterior derivatives.
    pub fn jets(&self, y: &[f64]) -> Result<SliceJets> {
        let center = self.structure(y)?;
        let h = self.fd_step;
        let mut plus = Vec::with_capacity(self.dim());
        let mut minus = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let mut yp = y.to_vec();
            yp[k] += h;
            let mut ym = y.to_vec();
            ym[k] -= h;
            plus.push(self.structure(&yp)?);
            minus.push(self.structure(&ym)?);
        }
        Ok(SliceJets { center, plus, minus, h })
    }
}

/// Central-difference jets of the reduced structures over slice coordinates.
pub struct SliceJets {
    pub center: QuotientStructure,
    plus: Vec<QuotientStructure>,
    minus: Vec<QuotientStructure>,
    h: f64,
}

impl SliceJets {
    fn d_endo(&self, alpha: usize, k: usize) -> SqMat<f64> {
        self.plus[k].i_prime[alpha]
            .sub(&self.minus[k].i_prime[alpha])
            .scale(0.5 / self.h)
    }

    fn d_form(&self, alpha: usize, k: usize) -> SqMat<f64> {
        self.plus[k].theta_prime[alpha]
            .sub(&self.minus[k].theta_prime[alpha])
            .scale(0.5 / self.h)
    }

    fn z_jacobian(&self) -> SqMat<f64> {
        let sd = self.center.dim();
        let mut j = SqMat::<f64>::zeros(sd);
        for k in 0..sd {
            for i in 0..sd {
                j.set(i, k, (self.plus[k].z[i] - self.minus[k].z[i]) * 0.5 / self.h);
            }
        }
        j
    }

    /// Largest integrability-tensor component of one reduced structure over
    /// all slice coordinate pairs.
    pub fn nijenhuis_max(&self, alpha: usize) -> f64 {
        let sd = self.center.dim();
        let val = &self.center.i_prime[alpha];
        let jac: Vec<SqMat<f64>> = (0..sd).map(|k| self.d_endo(alpha, k)).collect();
        let along = |v: &[f64]| -> SqMat<f64> {
            let mut m = SqMat::<f64>::zeros(sd);
            for (k, vk) in v.iter().enumerate() {
                if *vk != 0.0 {
                    for i in 0..sd * sd {
                        m.a[i] += vk * jac[k].a[i];
                    }
                }
            }
            m
        };
        let mut worst = 0.0f64;
        for i in 0..sd {
            for j in (i + 1)..sd {
                let mut u = vec![0.0; sd];
                u[i] = 1.0;
                let mut v = vec![0.0; sd];
                v[j] = 1.0;
                let iu = val.apply(&u);
                let iv = val.apply(&v);
                let mut inner = jac[i].apply(&v);
                let dvu = jac[j].apply(&u);
                for k in 0..sd {
                    inner[k] -= dvu[k];
                }
                let mut n = val.apply(&inner);
                let t1 = along(&iu).apply(&v);
                let t2 = along(&iv).apply(&u);
                for k in 0..sd {
                    n[k] += -t1[k] + t2[k];
                }
                worst = worst.max(n.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            }
        }
        worst
    }

    /// Largest violation of the rotation relations of the reduced structures
    /// along the pushed-down rotation field: `L_Z I'_1 = 0`,
    /// `L_Z I'_2 = 2 eps I'_3`, `L_Z I'_3 = -2 eps I'_2`.
    pub fn z_lie_endo_residual(&self) -> f64 {
        let sd = self.center.dim();
        let eps = consts::EPS;
        let jz = self.z_jacobian();
        let mut worst = 0.0f64;
        for a in 0..3 {
            let mut lie = SqMat::<f64>::zeros(sd);
            for k in 0..sd {
                lie = lie.add(&self.d_endo(a, k).scale(self.center.z[k]));
            }
            lie = lie
                .sub(&jz.matmul(&self.center.i_prime[a]))
                .add(&self.center.i_prime[a].matmul(&jz));
            let expect = match a {
                0 => SqMat::<f64>::zeros(sd),
                1 => self.center.i_prime[2].scale(2.0 * eps),
                _ => self.center.i_prime[1].scale(-2.0 * eps),
            };
            worst = worst.max(lie.sub(&expect).max_abs());
        }
        worst
    }

    /// Same rotation relations for the reduced two-forms: `L_Z Theta'_1 = 0`,
    /// `L_Z Theta'_2 = 2 eps Theta'_3`, `L_Z Theta'_3 = -2 eps Theta'_2`.
    pub fn z_lie_form_residual(&self) -> f64 {
        let sd = self.center.dim();
        let eps = consts::EPS;
        let jz = self.z_jacobian();
        let mut worst = 0.0f64;
        for a in 0..3 {
            let mut lie = SqMat::<f64>::zeros(sd);
            for k in 0..sd {
                lie = lie.add(&self.d_form(a, k).scale(self.center.z[k]));
            }
            lie = lie
                .add(&jz.transpose().matmul(&self.center.theta_prime[a]))
                .add(&self.center.theta_prime[a].matmul(&jz));
            let expect = match a {
                0 => SqMat::<f64>::zeros(sd),
                1 => self.center.theta_prime[2].scale(2.0 * eps),
                _ => self.center.theta_prime[1].scale(-2.0 * eps),
            };
            worst = worst.max(lie.sub(&expect).max_abs());
        }
        worst
    }

    /// Largest component of `d Theta'_a` over slice coordinate triples.
    pub fn closedness_max(&self) -> f64 {
        let sd = self.center.dim();
        let mut worst = 0.0f64;
        for a in 0..3 {
            let d: Vec<SqMat<f64>> = (0..sd).map(|k| self.d_form(a, k)).collect();
            for i in 0..sd {
                for j in (i + 1)..sd {
                    for k in (j + 1)..sd {
                        let val = d[i].get(j, k) - d[j].get(i, k) + d[k].get(i, j);
                        worst = worst.max(val.abs());
                    }
                }
            }
        }
        worst
    }
}

/// Residual of the infinitesimal equivariance of the moment map along the
/// first rotation generator: `Z_1 mu = (0, 2 eps mu_3, -2 eps mu_2)`. On the
/// level set the right side vanishes, so `Z_1` is tangent there.
pub fn z_tangency_residual(chart: &BundleChart<'_>, q: &[f64]) -> f64 {
    let eng = DerivativeEngine::forward();
    let mm = MomentMap { chart };
    let z1 = eval_vec::<f64>(&VerticalField { chart, delta: Some(0) }, q);
    let dmu = eng.directional(&mm, q, &z1);
    let mu = chart.moment(q);
    let eps = consts::EPS;
    let want = [0.0, 2.0 * eps * mu[2], -2.0 * eps * mu[1]];
    (0..3).map(|a| (dmu[a] - want[a]).abs()).fold(0.0, f64::max)
}

/// Residual of the covering-transport identity at the slice center, on models
/// whose frame section is parallel (vanishing local connection forms): the
/// coordinate inclusion `Y -> (Y, 0, 0)` followed by the quotient projection
/// must intertwine the base structures with the reduced ones.
pub fn covering_transport_residual(slice: &SliceChart<'_>) -> Result<f64> {
    let sd = slice.dim();
    let dd = slice.chart.dim();
    let y0 = vec![0.0; sd];
    let (p, btan) = slice.frame(&y0)?;
    let qs = slice.structure(&y0)?;
    let m = slice.transversal_matrix(&p, &btan);
    let mut rhs = vec![0.0; dd * sd];
    for j in 0..sd {
        rhs[j * sd + j] = 1.0;
    }
    let sol = m.solve(&rhs, sd);
    let mut kmat = SqMat::<f64>::zeros(sd);
    for i in 0..sd {
        for j in 0..sd {
            kmat.set(i, j, sol[i * sd + j]);
        }
    }
    let frames = slice.chart.model.frame.at::<f64>(&p[..sd]);
    let mut worst = 0.0f64;
    for a in 0..3 {
        let lhs = qs.i_prime[a].matmul(&kmat);
        let rhs2 = kmat.matmul(&frames[a]);
        worst = worst.max(lhs.sub(&rhs2).max_abs());
    }
    Ok(worst)
}

/// Project several fiber seeds over one base point and measure how far the
/// limits are from a single orbit of the stabilizer circle: each pair of
/// limit rotations must differ by a rotation about the first axis, with equal
/// scale coordinates.
pub fn fiber_circle_residual(
    chart: &BundleChart<'_>,
    x: &[f64],
    seeds: &[[f64; 3]],
    u0: f64,
) -> Result<f64> {
    let d = chart.base_dim();
    let mut gs: Vec<SqMat<f64>> = Vec::new();
    let mut us: Vec<f64> = Vec::new();
    for s in seeds {
        let q0 = chart.point(x, *s, u0);
        let out = newton_fiber(chart, &q0, tol::LEVEL_SET, MAX_NEWTON)?;
        let fd = chart.fiber_data::<f64>(&out.q);
        gs.push(fd.g);
        us.push(out.q[d + 3]);
    }
    let mut worst = 0.0f64;
    for i in 0..gs.len() {
        for j in (i + 1)..gs.len() {
            let rel = gs[i].transpose().matmul(&gs[j]);
            let t = 0.5 * (rel.get(2, 1) - rel.get(1, 2)).atan2(rel.get(1, 1) + rel.get(2, 2));
            let turn = exp2(&[t, 0.0, 0.0]);
            worst = worst.max(rel.sub(&turn).max_abs());
            worst = worst.max((us[i] - us[j]).abs());
        }
    }
    Ok(worst)
}

/// Twist data of the reduction read off a fiber section over a base patch:
/// the pulled-back curvature two-form, the pairing function, and the
/// residuals of the closure identity `da + i_X F = 0` and of `L_X F = 0`.
pub struct TwistData {
    /// Largest entry of the pulled-back curvature form at the patch center.
    pub f_max: f64,
    /// Pairing function at the patch center.
    pub a_center: f64,
    /// Largest component of `da + i_X F` over coordinate directions.
    pub closure_residual: f64,
    /// Largest entry of `L_X F`.
    pub lie_residual: f64,
}

/// Evaluate the twist data at a base point, using the least-norm fiber
/// section seeded at zero rotation and the given scale coordinate.
pub fn twist_data(chart: &BundleChart<'_>, u_seed: f64, x: &[f64]) -> Result<TwistData> {
    let d = chart.base_dim();
    let h = SLICE_FD_STEP;
    let eng = DerivativeEngine::forward();
    let section = |xb: &[f64]| -> Result<Vec<f64>> {
        let q0 = chart.point(xb, [0.0; 3], u_seed);
        Ok(newton_fiber(chart, &q0, SLICE_NEWTON_TOL, MAX_NEWTON)?.q)
    };
    let pairing = |q: &[f64]| -> f64 {
        let fd = chart.fiber_data::<f64>(q);
        let xh = lift_vec(chart, q);
        chart.hat_split(&fd, &xh).a[0]
    };
    let curvature = |q: &[f64]| -> SqMat<f64> {
        let fd = chart.fiber_data::<f64>(q);
        let xb = &q[..d];
        let mut f = SqMat::<f64>::zeros(d);
        for i in 0..d {
            for j in (i + 1)..d {
                let mut u = vec![0.0; d];
                u[i] = 1.0;
                let mut v = vec![0.0; d];
                v[j] = 1.0;
                let om = curvature_forms_trace(&chart.model.frame, &chart.model.conn, xb, &u, &v);
                let omr = fd.g.transpose().apply(&om);
                let val = consts::CURVATURE_LIFT_HALF * consts::EPS * omr[0];
                f.set(i, j, val);
                f.set(j, i, -val);
            }
        }
        f
    };
    let s0 = section(x)?;
    let f0 = curvature(&s0);
    let a0 = pairing(&s0);
    let xv = eval_vec::<f64>(chart.model.sym.as_ref(), x);
    let mut closure = 0.0f64;
    for j in 0..d {
        let mut xp = x.to_vec();
        xp[j] += h;
        let mut xm = x.to_vec();
        xm[j] -= h;
        let da = (pairing(&section(&xp)?) - pairing(&section(&xm)?)) * 0.5 / h;
        let mut fx = 0.0;
        for i in 0..d {
            fx += xv[i] * f0.get(i, j);
        }
        closure = closure.max((da + fx).abs());
    }
    let jx = eng.jacobian_matrix(chart.model.sym.as_ref(), x);
    let mut xp = x.to_vec();
    axpy(&mut xp, h, &xv);
    let mut xm = x.to_vec();
    axpy(&mut xm, -h, &xv);
    let dxf = curvature(&section(&xp)?)
        .sub(&curvature(&section(&xm)?))
        .scale(0.5 / h);
    let lie = dxf
        .add(&jx.transpose().matmul(&f0))
        .add(&f0.matmul(&jx));
    Ok(TwistData {
        f_max: f0.max_abs(),
        a_center: a0,
        closure_residual: closure,
        lie_residual: lie.max_abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    fn base_point(model: &Model) -> Vec<f64> {
        let lo = &model.domain.lo;
        let hi = &model.domain.hi;
        let nudge = [0.07, -0.04, 0.11, 0.02, -0.06, 0.03, 0.05, -0.02];
        (0..model.dim())
            .map(|i| 0.5 * (lo[i] + hi[i]) + nudge[i % nudge.len()] * 0.25 * (hi[i] - lo[i]))
            .collect()
    }

    #[test]
    fn projection_reference_and_perturbation() {
        let hopf = builtin("hopf").unwrap();
        let chart = BundleChart::new(&hopf, -8.0, 1.0).unwrap();
        let x = base_point(&hopf);
        // A = 1: the zero-rotation, unit-scale seed lies on the level set.
        let q = chart.point(&x, [0.0; 3], 0.0);
        let lp = project_to_level_set(&chart, &q).unwrap();
        assert_eq!(lp.iters, 0);
        assert!(lp.residual < tol::LEVEL_SET);
        // A center rotated about the first axis leaves the level value fixed.
        let chart_r = chart.clone().with_center(exp2(&[0.3, 0.0, 0.0]));
        let lp_r = project_to_level_set(&chart_r, &q).unwrap();
        assert_eq!(lp_r.iters, 0);
        // Perturbed starts converge quadratically back to the level set.
        let mut qp = q.clone();
        for (k, v) in qp.iter_mut().enumerate() {
            *v += if k % 2 == 0 { 1e-2 } else { -1e-2 };
        }
        let lp_p = project_to_level_set(&chart, &qp).unwrap();
        assert!(lp_p.residual < tol::LEVEL_SET);
        assert!(lp_p.iters <= 6, "iters = {}", lp_p.iters);

        let flat = builtin("flat_h1").unwrap();
        let chart_f = BundleChart::new(&flat, 1.0, 1.0).unwrap();
        let xf = base_point(&flat);
        let qf = chart_f.point(&xf, [0.0; 3], 0.0);
        let lp_f = project_to_level_set(&chart_f, &qf).unwrap();
        assert_eq!(lp_f.iters, 0);
    }

    #[test]
    fn seed_chart_exact_on_reduction_models() {
        for (name, c) in [
            ("flat_h1", 1.0),
            ("flat_h2", 1.0),
            ("hopf", -8.0),
            ("hp1", -8.0),
            ("hp2", -12.0),
        ] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
            let q = chart.point(&x, [0.0; 3], u_seed);
            let (_, res) = level_error(&chart, &q);
            assert!(res < 1e-12, "{name}: seed residual {res:.3e}");
            let lp = project_to_level_set(&chart, &q).unwrap();
            assert_eq!(lp.iters, 0, "{name}");
        }
    }

    #[test]
    fn slice_dimension_invariance_and_relations() {
        for (name, c, want_dim) in [
            ("flat_h1", 1.0, 4usize),
            ("hp1", -8.0, 4usize),
            ("hp2", -12.0, 8usize),
        ] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
            let q = chart.point(&x, [0.0; 3], u_seed);
            let lp = project_to_level_set(&chart, &q).unwrap();
            let slice = build_slice(lp).unwrap();
            assert_eq!(slice.dim(), want_dim, "{name}");
            let inv = slice_invariance_residual(&slice);
            assert!(inv < tol::REDUCED_STRUCTURE, "{name}: invariance {inv:.3e}");
            let qs = slice.structure(&vec![0.0; want_dim]).unwrap();
            let rel = qs.relations_residual();
            assert!(rel < 1e-9, "{name}: relations {rel:.3e}");
            assert!(norm_f64(&qs.z) > 1e-6, "{name}: trivial reduced rotation field");
        }
    }

    #[test]
    fn flat_pairing_is_definite_and_structure_independent() {
        let model = builtin("flat_h1").unwrap();
        let x = base_point(&model);
        let (chart, u_seed) = level_seed_chart(&model, 1.0, 1.0, &x).unwrap();
        let q = chart.point(&x, [0.0; 3], u_seed);
        let lp = project_to_level_set(&chart, &q).unwrap();
        let slice = build_slice(lp).unwrap();
        let qs = slice.structure(&[0.0; 4]).unwrap();
        let spread = qs.pairing_spread();
        assert!(spread < tol::INTEGRABLE, "pairing spread {spread:.3e}");
        let min_eig = qs.pairing_min_eigenvalue();
        assert!(min_eig > 0.0, "pairing not positive definite: {min_eig:.3e}");
    }

    #[test]
    fn z_tangency_identity_off_level() {
        for (name, c) in [("flat_h1", 1.0), ("hopf", -8.0), ("hp1", -8.0)] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let chart = BundleChart::new(&model, c, 1.0).unwrap();
            let q = chart.point(&x, [0.05, -0.12, 0.08], 0.3);
            let res = z_tangency_residual(&chart, &q);
            assert!(res < tol::EQUIVARIANCE, "{name}: {res:.3e}");
        }
    }

    #[test]
    fn slice_jets_flat_and_curved() {
        for (name, c) in [("flat_h1", 1.0), ("hp1", -8.0)] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
            let q = chart.point(&x, [0.0; 3], u_seed);
            let lp = project_to_level_set(&chart, &q).unwrap();
            let slice = build_slice(lp).unwrap();
            let jets = slice.jets(&[0.0; 4]).unwrap();
            for alpha in 0..3 {
                let nij = jets.nijenhuis_max(alpha);
                assert!(nij < tol::REDUCED_FD, "{name}: nijenhuis[{alpha}] {nij:.3e}");
            }
            let lie_endo = jets.z_lie_endo_residual();
            assert!(lie_endo < tol::REDUCED_FD, "{name}: z-lie endo {lie_endo:.3e}");
            let lie_form = jets.z_lie_form_residual();
            assert!(lie_form < tol::REDUCED_FD, "{name}: z-lie form {lie_form:.3e}");
            let closed = jets.closedness_max();
            assert!(closed < tol::REDUCED_CLOSED, "{name}: closedness {closed:.3e}");
        }
    }

    #[test]
    fn covering_transport_on_parallel_frame_models() {
        for (name, c) in [("flat_h1", 1.0), ("hopf", -8.0)] {
            let model = builtin(name).unwrap();
            for shift in [0.0, 0.05, -0.08] {
                let mut x = base_point(&model);
                x[0] += shift;
                let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
                let q = chart.point(&x, [0.0; 3], u_seed);
                let lp = project_to_level_set(&chart, &q).unwrap();
                let slice = build_slice(lp).unwrap();
                let res = covering_transport_residual(&slice).unwrap();
                assert!(res < tol::COVER_MATCH, "{name} shift {shift}: {res:.3e}");
            }
        }
    }

    #[test]
    fn twist_data_flat_models_are_exact() {
        for (name, c) in [("flat_h1", 1.0), ("hopf", -8.0)] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
            let td = twist_data(&chart, u_seed, &x).unwrap();
            assert!(td.f_max < 1e-12, "{name}: F {:.3e}", td.f_max);
            assert!((td.a_center - 1.0).abs() < tol::TWIST_EXACT, "{name}: a {:.3e}", td.a_center);
            assert!(td.closure_residual < tol::TWIST_EXACT, "{name}: closure {:.3e}", td.closure_residual);
            assert!(td.lie_residual < tol::TWIST_EXACT, "{name}: lie {:.3e}", td.lie_residual);
        }
    }

    #[test]
    fn twist_data_projective_line_has_curvature() {
        let model = builtin("hp1").unwrap();
        let x = base_point(&model);
        let (chart, u_seed) = level_seed_chart(&model, -8.0, 1.0, &x).unwrap();
        let td = twist_data(&chart, u_seed, &x).unwrap();
        assert!(td.f_max > 1e-3, "curvature too small: {:.3e}", td.f_max);
        assert!(td.closure_residual < tol::TWIST, "closure {:.3e}", td.closure_residual);
        assert!(td.lie_residual < tol::TWIST, "lie {:.3e}", td.lie_residual);
    }

    #[test]
    fn fiber_seeds_land_on_one_circle() {
        let seeds = [
            [0.2, -0.1, 0.15],
            [-0.15, 0.2, 0.1],
            [0.1, 0.1, -0.2],
            [0.0, 0.3, 0.1],
        ];
        for (name, c) in [("hopf", -8.0), ("hp1", -8.0)] {
            let model = builtin(name).unwrap();
            let x = base_point(&model);
            let (chart, u_seed) = level_seed_chart(&model, c, 1.0, &x).unwrap();
            let res = fiber_circle_residual(&chart, &x, &seeds, u_seed).unwrap();
            assert!(res < tol::COVER_MATCH, "{name}: circle residual {res:.3e}");
        }
    }
}
