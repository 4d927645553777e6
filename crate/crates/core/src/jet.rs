//! Coordinate jet calculus over a 2-dimensional base: first and second
//! jets, their linear/affine duals, and the transformation laws induced by
//! a change of base and fiber coordinates.
//!
//! Layout conventions used throughout (n = 2 base dimensions, k fiber
//! components):
//!
//! * jet coordinates `qdot[i*2 + mu]` for q^i_mu,
//! * dual momenta `p[mu*k + i]` for p_i^mu,
//! * second jets `qddot[(i*2 + mu)*2 + nu]` for q^i_{mu nu}.
//!
//! Charts carry analytic first and second derivative providers; numerical
//! differentiation never enters a transformation law.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::Rng;

pub const BASE_DIM: usize = 2;

/// Whether a dual object carries the volume-form twist. The pairing value
/// is unchanged; the flag selects which transformation law applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Twist {
    Untwisted,
    Twisted,
}

/// All chart data at one point: the mapped coordinates together with first
/// and second derivatives of the base and fiber maps.
#[derive(Debug, Clone)]
pub struct ChartJet {
    pub x_new: [f64; 2],
    /// jac[l][k] = d x'^l / d x^k
    pub jac: [[f64; 2]; 2],
    /// Inverse of `jac`.
    pub jac_inv: [[f64; 2]; 2],
    /// d2x[l][r][k] = d^2 x'^l / d x^r d x^k
    pub d2x: [[[f64; 2]; 2]; 2],
    pub q_new: Vec<f64>,
    /// fq[(j, i)] = d q'^j / d q^i
    pub fq: Mat,
    /// Inverse of `fq`.
    pub fq_inv: Mat,
    /// fx[j*2 + mu] = d q'^j / d x^mu
    pub fx: Vec<f64>,
    /// fxx[(j*2 + mu)*2 + nu] = d^2 q'^j / d x^mu d x^nu
    pub fxx: Vec<f64>,
    /// fxq[(j*2 + mu)*k + i] = d^2 q'^j / d x^mu d q^i
    pub fxq: Vec<f64>,
    /// fqq[(j*k + i)*k + l] = d^2 q'^j / d q^i d q^l
    pub fqq: Vec<f64>,
}

impl ChartJet {
    pub fn det_jac_inv(&self) -> f64 {
        self.jac_inv[0][0] * self.jac_inv[1][1] - self.jac_inv[0][1] * self.jac_inv[1][0]
    }
}

fn invert_2x2(m: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 {
        return Err(Error::Singular {
            context: "jet::chart",
            detail: alloc::format!("base Jacobian determinant {det:e}"),
        });
    }
    Ok([[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]])
}

/// A differentiable change of base and fiber coordinates.
pub trait Chart {
    fn fiber_dim(&self) -> usize;
    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet>;
    /// Charts without second-derivative providers cannot transform second
    /// jets.
    fn has_second_derivatives(&self) -> bool {
        true
    }
}

/// Assembles a `ChartJet` from raw pieces and fills in the inverses.
#[allow(clippy::too_many_arguments)]
pub fn chart_jet(
    x_new: [f64; 2],
    jac: [[f64; 2]; 2],
    d2x: [[[f64; 2]; 2]; 2],
    q_new: Vec<f64>,
    fq: Mat,
    fx: Vec<f64>,
    fxx: Vec<f64>,
    fxq: Vec<f64>,
    fqq: Vec<f64>,
) -> Result<ChartJet> {
    let jac_inv = invert_2x2(&jac)?;
    let fq_inv = fq.inverse().map_err(|_| Error::Singular {
        context: "jet::chart",
        detail: alloc::format!("fiber derivative matrix is singular"),
    })?;
    Ok(ChartJet { x_new, jac, jac_inv, d2x, q_new, fq, fq_inv, fx, fxx, fxq, fqq })
}

/// The identity chart.
pub struct IdentityChart {
    pub k: usize,
}

impl Chart for IdentityChart {
    fn fiber_dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet> {
        let k = self.k;
        chart_jet(
            *x,
            [[1.0, 0.0], [0.0, 1.0]],
            [[[0.0; 2]; 2]; 2],
            q.to_vec(),
            Mat::identity(k),
            vec![0.0; k * 2],
            vec![0.0; k * 4],
            vec![0.0; k * 2 * k],
            vec![0.0; k * k * k],
        )
    }
}

/// Constant rescaling of base axes and a constant linear fiber map.
pub struct AxisScaleChart {
    pub scale: [f64; 2],
    pub fiber: Mat,
}

impl Chart for AxisScaleChart {
    fn fiber_dim(&self) -> usize {
        self.fiber.rows()
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet> {
        let k = self.fiber_dim();
        chart_jet(
            [self.scale[0] * x[0], self.scale[1] * x[1]],
            [[self.scale[0], 0.0], [0.0, self.scale[1]]],
            [[[0.0; 2]; 2]; 2],
            self.fiber.matvec(q),
            self.fiber.clone(),
            vec![0.0; k * 2],
            vec![0.0; k * 4],
            vec![0.0; k * 2 * k],
            vec![0.0; k * k * k],
        )
    }
}

/// A smooth sinusoidal perturbation of the identity with closed-form first
/// and second derivatives:
///
/// ```text
/// x'^l = x^l + a^l sin(b^l . x + d^l)
/// q'^j = A[j][i] q^i + g^j sin(u . x + w)
///        + h^j sin(p . x + t) (f . q) + c^j (e . q)^2
/// ```
///
/// Amplitudes stay small so both the base Jacobian and the fiber
/// derivative matrix remain invertible on the test domain.
pub struct PerturbedChart {
    pub k: usize,
    pub a: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub d: [f64; 2],
    pub fiber_linear: Mat,
    pub g: Vec<f64>,
    pub u: [f64; 2],
    pub w: f64,
    pub h: Vec<f64>,
    pub p: [f64; 2],
    pub t: f64,
    pub f: Vec<f64>,
    pub c: Vec<f64>,
    pub e: Vec<f64>,
}

impl PerturbedChart {
    /// A random smooth chart; `amplitude` controls how far it sits from the
    /// identity. With `fiber_quadratic` the fiber map picks up a genuine
    /// second q-derivative.
    pub fn random(rng: &mut Rng, k: usize, amplitude: f64, fiber_quadratic: bool) -> Self {
        let mut fiber_linear = Mat::identity(k);
        for i in 0..k {
            for j in 0..k {
                fiber_linear[(i, j)] += amplitude * rng.symmetric(0.5);
            }
        }
        PerturbedChart {
            k,
            a: [amplitude * rng.symmetric(0.5), amplitude * rng.symmetric(0.5)],
            b: [
                [rng.symmetric(1.0), rng.symmetric(1.0)],
                [rng.symmetric(1.0), rng.symmetric(1.0)],
            ],
            d: [rng.symmetric(3.0), rng.symmetric(3.0)],
            fiber_linear,
            g: (0..k).map(|_| amplitude * rng.symmetric(1.0)).collect(),
            u: [rng.symmetric(1.0), rng.symmetric(1.0)],
            w: rng.symmetric(3.0),
            h: (0..k).map(|_| amplitude * rng.symmetric(0.5)).collect(),
            p: [rng.symmetric(1.0), rng.symmetric(1.0)],
            t: rng.symmetric(3.0),
            f: (0..k).map(|_| rng.symmetric(1.0)).collect(),
            c: (0..k)
                .map(|_| if fiber_quadratic { amplitude * rng.symmetric(0.3) } else { 0.0 })
                .collect(),
            e: (0..k).map(|_| rng.symmetric(1.0)).collect(),
        }
    }
}

impl Chart for PerturbedChart {
    fn fiber_dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet> {
        let k = self.k;
        let mut x_new = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        let mut d2x = [[[0.0; 2]; 2]; 2];
        for l in 0..2 {
            let phase = self.b[l][0] * x[0] + self.b[l][1] * x[1] + self.d[l];
            x_new[l] = x[l] + self.a[l] * libm::sin(phase);
            for kk in 0..2 {
                jac[l][kk] =
                    (if l == kk { 1.0 } else { 0.0 }) + self.a[l] * libm::cos(phase) * self.b[l][kk];
                for r in 0..2 {
                    d2x[l][r][kk] = -self.a[l] * libm::sin(phase) * self.b[l][r] * self.b[l][kk];
                }
            }
        }
        let su = libm::sin(self.u[0] * x[0] + self.u[1] * x[1] + self.w);
        let cu = libm::cos(self.u[0] * x[0] + self.u[1] * x[1] + self.w);
        let sp = libm::sin(self.p[0] * x[0] + self.p[1] * x[1] + self.t);
        let cp = libm::cos(self.p[0] * x[0] + self.p[1] * x[1] + self.t);
        let fq_dot: f64 = self.f.iter().zip(q).map(|(a, b)| a * b).sum();
        let eq_dot: f64 = self.e.iter().zip(q).map(|(a, b)| a * b).sum();

        let mut q_new = self.fiber_linear.matvec(q);
        let mut fq = self.fiber_linear.clone();
        let mut fx = vec![0.0; k * 2];
        let mut fxx = vec![0.0; k * 4];
        let mut fxq = vec![0.0; k * 2 * k];
        let mut fqq = vec![0.0; k * k * k];
        for j in 0..k {
            q_new[j] += self.g[j] * su + self.h[j] * sp * fq_dot + self.c[j] * eq_dot * eq_dot;
            for i in 0..k {
                fq[(j, i)] += self.h[j] * sp * self.f[i] + 2.0 * self.c[j] * eq_dot * self.e[i];
                for l in 0..k {
                    fqq[(j * k + i) * k + l] = 2.0 * self.c[j] * self.e[i] * self.e[l];
                }
            }
            for mu in 0..2 {
                fx[j * 2 + mu] = self.g[j] * cu * self.u[mu] + self.h[j] * cp * self.p[mu] * fq_dot;
                for nu in 0..2 {
                    fxx[(j * 2 + mu) * 2 + nu] = -self.g[j] * su * self.u[mu] * self.u[nu]
                        - self.h[j] * sp * self.p[mu] * self.p[nu] * fq_dot;
                }
                for i in 0..k {
                    fxq[(j * 2 + mu) * k + i] = self.h[j] * cp * self.p[mu] * self.f[i];
                }
            }
        }
        chart_jet(x_new, jac, d2x, q_new, fq, fx, fxx, fxq, fqq)
    }
}

/// Composite chart: apply `inner`, then `outer`, with all derivatives
/// chained analytically.
pub struct ComposedChart<'a> {
    pub outer: &'a dyn Chart,
    pub inner: &'a dyn Chart,
}

impl Chart for ComposedChart<'_> {
    fn fiber_dim(&self) -> usize {
        self.inner.fiber_dim()
    }

    fn has_second_derivatives(&self) -> bool {
        self.outer.has_second_derivatives() && self.inner.has_second_derivatives()
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet> {
        let k = self.fiber_dim();
        let e1 = self.inner.eval(x, q)?;
        let e2 = self.outer.eval(&e1.x_new, &e1.q_new)?;
        let mut jac = [[0.0; 2]; 2];
        for l in 0..2 {
            for kk in 0..2 {
                for m in 0..2 {
                    jac[l][kk] += e2.jac[l][m] * e1.jac[m][kk];
                }
            }
        }
        let mut d2x = [[[0.0; 2]; 2]; 2];
        for l in 0..2 {
            for r in 0..2 {
                for kk in 0..2 {
                    let mut s = 0.0;
                    for rp in 0..2 {
                        for kp in 0..2 {
                            s += e2.d2x[l][rp][kp] * e1.jac[rp][r] * e1.jac[kp][kk];
                        }
                    }
                    for lp in 0..2 {
                        s += e2.jac[l][lp] * e1.d2x[lp][r][kk];
                    }
                    d2x[l][r][kk] = s;
                }
            }
        }
        let fq = e2.fq.matmul(&e1.fq);
        // fx_C[j][mu] = e2.fq . e1.fx + e2.fx . e1.jac
        let mut fx = vec![0.0; k * 2];
        for j in 0..k {
            for mu in 0..2 {
                let mut s = 0.0;
                for a in 0..k {
                    s += e2.fq[(j, a)] * e1.fx[a * 2 + mu];
                }
                for l in 0..2 {
                    s += e2.fx[j * 2 + l] * e1.jac[l][mu];
                }
                fx[j * 2 + mu] = s;
            }
        }
        // Second derivatives of the composite fiber map.
        let mut fqq = vec![0.0; k * k * k];
        for j in 0..k {
            for i in 0..k {
                for l in 0..k {
                    let mut s = 0.0;
                    for a in 0..k {
                        for b in 0..k {
                            s += e2.fqq[(j * k + a) * k + b] * e1.fq[(a, i)] * e1.fq[(b, l)];
                        }
                    }
                    for a in 0..k {
                        s += e2.fq[(j, a)] * e1.fqq[(a * k + i) * k + l];
                    }
                    fqq[(j * k + i) * k + l] = s;
                }
            }
        }
        let mut fxq = vec![0.0; k * 2 * k];
        for j in 0..k {
            for mu in 0..2 {
                for i in 0..k {
                    let mut s = 0.0;
                    for a in 0..k {
                        // d/dx^mu of e2.fq[(j,a)] along the inner chart
                        let mut dfq = 0.0;
                        for nu in 0..2 {
                            dfq += e2.fxq[(j * 2 + nu) * k + a] * e1.jac[nu][mu];
                        }
                        for b in 0..k {
                            dfq += e2.fqq[(j * k + a) * k + b] * e1.fx[b * 2 + mu];
                        }
                        s += dfq * e1.fq[(a, i)];
                        s += e2.fq[(j, a)] * e1.fxq[(a * 2 + mu) * k + i];
                    }
                    fxq[(j * 2 + mu) * k + i] = s;
                }
            }
        }
        let mut fxx = vec![0.0; k * 4];
        for j in 0..k {
            for mu in 0..2 {
                for nu in 0..2 {
                    let mut s = 0.0;
                    for a in 0..k {
                        // d/dx^nu of (e2.fq[(j,a)] e1.fx[a][mu])
                        let mut dfq = 0.0;
                        for r in 0..2 {
                            dfq += e2.fxq[(j * 2 + r) * k + a] * e1.jac[r][nu];
                        }
                        for b in 0..k {
                            dfq += e2.fqq[(j * k + a) * k + b] * e1.fx[b * 2 + nu];
                        }
                        s += dfq * e1.fx[a * 2 + mu];
                        s += e2.fq[(j, a)] * e1.fxx[(a * 2 + mu) * 2 + nu];
                    }
                    for l in 0..2 {
                        // d/dx^nu of (e2.fx[j][l] e1.jac[l][mu])
                        let mut dfx = 0.0;
                        for r in 0..2 {
                            dfx += e2.fxx[(j * 2 + l) * 2 + r] * e1.jac[r][nu];
                        }
                        for b in 0..k {
                            dfx += e2.fxq[(j * 2 + l) * k + b] * e1.fx[b * 2 + nu];
                        }
                        s += dfx * e1.jac[l][mu];
                        s += e2.fx[j * 2 + l] * e1.d2x[l][mu][nu];
                    }
                    fxx[(j * 2 + mu) * 2 + nu] = s;
                }
            }
        }
        chart_jet(e2.x_new, jac, d2x, e2.q_new, fq, fx, fxx, fxq, fqq)
    }
}

/// Wrapper that withholds second derivatives (to exercise the second-jet
/// error path).
pub struct FirstOrderOnly<'a>(pub &'a dyn Chart);

impl Chart for FirstOrderOnly<'_> {
    fn fiber_dim(&self) -> usize {
        self.0.fiber_dim()
    }

    fn has_second_derivatives(&self) -> bool {
        false
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> Result<ChartJet> {
        self.0.eval(x, q)
    }
}

// ---------------------------------------------------------------------------
// Jet points and duals
// ---------------------------------------------------------------------------

/// Point of the first jet manifold: (x, q, q^i_mu).
#[derive(Debug, Clone, PartialEq)]
pub struct JetPoint {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub qdot: Vec<f64>, // [i*2 + mu]
}

impl JetPoint {
    pub fn new(x: [f64; 2], q: Vec<f64>, qdot: Vec<f64>) -> Self {
        assert_eq!(qdot.len(), q.len() * 2);
        JetPoint { x, q, qdot }
    }

    pub fn fiber_dim(&self) -> usize {
        self.q.len()
    }
}

/// Point of the linear jet bundle: a difference vector (x, q, qvec^i_mu).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearJetPoint {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub vdot: Vec<f64>, // [i*2 + mu]
}

/// Point of the extended (affine) dual: (x, q, p_i^mu, p).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedDualPoint {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub p: Vec<f64>, // [mu*k + i]
    pub p_scalar: f64,
}

/// Point of the linear dual: (x, q, p_i^mu) with the energy slot dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDualPoint {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub p: Vec<f64>, // [mu*k + i]
}

/// Second-jet point. Carries the inner first-derivative slot `r^i_mu`
/// separately; on holonomic points `r == qdot` and `qddot` is symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondJetPoint {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub qdot: Vec<f64>, // [i*2 + mu]
    pub r: Vec<f64>,    // [i*2 + mu]
    pub qddot: Vec<f64>, // [(i*2 + mu)*2 + nu]
}

impl SecondJetPoint {
    /// Holonomic point: r = qdot, symmetric qddot taken as given.
    pub fn holonomic(x: [f64; 2], q: Vec<f64>, qdot: Vec<f64>, qddot: Vec<f64>) -> Self {
        assert_eq!(qdot.len(), q.len() * 2);
        assert_eq!(qddot.len(), q.len() * 4);
        SecondJetPoint { x, q, r: qdot.clone(), qdot, qddot }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let k = self.q.len();
        let mut m = 0.0f64;
        for i in 0..k {
            m = m.max((self.qddot[(i * 2) * 2 + 1] - self.qddot[(i * 2 + 1) * 2]).abs());
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Transformation laws
// ---------------------------------------------------------------------------

/// q'^j_nu = (dx^mu/dx'^nu) (dq'^j/dq^i) q^i_mu + (dx^mu/dx'^nu) dq'^j/dx^mu
pub fn transform_jet(chart: &dyn Chart, j: &JetPoint) -> Result<JetPoint> {
    let k = j.fiber_dim();
    let e = chart.eval(&j.x, &j.q)?;
    let mut qdot = vec![0.0; k * 2];
    for jj in 0..k {
        for nu in 0..2 {
            let mut s = 0.0;
            for mu in 0..2 {
                let mut w = e.fx[jj * 2 + mu];
                for i in 0..k {
                    w += e.fq[(jj, i)] * j.qdot[i * 2 + mu];
                }
                s += e.jac_inv[mu][nu] * w;
            }
            qdot[jj * 2 + nu] = s;
        }
    }
    Ok(JetPoint { x: e.x_new, q: e.q_new, qdot })
}

/// Same law without the inhomogeneous term: the difference-vector
/// transformation of the linear jet bundle.
pub fn transform_linear_jet(chart: &dyn Chart, v: &LinearJetPoint) -> Result<LinearJetPoint> {
    let k = v.q.len();
    let e = chart.eval(&v.x, &v.q)?;
    let mut vdot = vec![0.0; k * 2];
    for jj in 0..k {
        for nu in 0..2 {
            let mut s = 0.0;
            for mu in 0..2 {
                let mut w = 0.0;
                for i in 0..k {
                    w += e.fq[(jj, i)] * v.vdot[i * 2 + mu];
                }
                s += e.jac_inv[mu][nu] * w;
            }
            vdot[jj * 2 + nu] = s;
        }
    }
    Ok(LinearJetPoint { x: e.x_new, q: e.q_new, vdot })
}

/// Extended-dual transformation; the twisted variant multiplies by
/// det(dx/dx').
pub fn transform_dual(
    chart: &dyn Chart,
    z: &ExtendedDualPoint,
    twist: Twist,
) -> Result<ExtendedDualPoint> {
    let k = z.q.len();
    let e = chart.eval(&z.x, &z.q)?;
    let factor = match twist {
        Twist::Untwisted => 1.0,
        Twist::Twisted => e.det_jac_inv(),
    };
    let mut p = vec![0.0; 2 * k];
    for nu in 0..2 {
        for jj in 0..k {
            let mut s = 0.0;
            for mu in 0..2 {
                for i in 0..k {
                    s += e.jac[nu][mu] * e.fq_inv[(i, jj)] * z.p[mu * k + i];
                }
            }
            p[nu * k + jj] = factor * s;
        }
    }
    let mut shift = 0.0;
    for mu in 0..2 {
        for jj in 0..k {
            for i in 0..k {
                shift += e.fx[jj * 2 + mu] * e.fq_inv[(i, jj)] * z.p[mu * k + i];
            }
        }
    }
    Ok(ExtendedDualPoint {
        x: e.x_new,
        q: e.q_new,
        p,
        p_scalar: factor * (z.p_scalar - shift),
    })
}

/// Linear-dual transformation (momenta only).
pub fn transform_linear_dual(
    chart: &dyn Chart,
    z: &LinearDualPoint,
    twist: Twist,
) -> Result<LinearDualPoint> {
    let ext = ExtendedDualPoint { x: z.x, q: z.q.clone(), p: z.p.clone(), p_scalar: 0.0 };
    let out = transform_dual(chart, &ext, twist)?;
    Ok(LinearDualPoint { x: out.x, q: out.q, p: out.p })
}

fn check_same_point(
    context: &'static str,
    xa: &[f64; 2],
    qa: &[f64],
    xb: &[f64; 2],
    qb: &[f64],
) -> Result<()> {
    let mut dev = (xa[0] - xb[0]).abs().max((xa[1] - xb[1]).abs());
    for (a, b) in qa.iter().zip(qb) {
        dev = dev.max((a - b).abs());
    }
    if dev > 1e-12 {
        return Err(Error::PointMismatch { context, deviation: dev });
    }
    Ok(())
}

/// Dual pairing p_i^mu q^i_mu + p between an extended dual point and a jet
/// point over the same (x, q).
pub fn jet_pairing_affine(z: &ExtendedDualPoint, j: &JetPoint, _twist: Twist) -> Result<f64> {
    check_same_point("jet::pairing", &z.x, &z.q, &j.x, &j.q)?;
    let k = z.q.len();
    let mut s = z.p_scalar;
    for mu in 0..2 {
        for i in 0..k {
            s += z.p[mu * k + i] * j.qdot[i * 2 + mu];
        }
    }
    Ok(s)
}

/// Dual pairing p_i^mu qvec^i_mu on the linear side.
pub fn jet_pairing_linear(z: &LinearDualPoint, v: &LinearJetPoint, _twist: Twist) -> Result<f64> {
    check_same_point("jet::pairing", &z.x, &z.q, &v.x, &v.q)?;
    let k = z.q.len();
    let mut s = 0.0;
    for mu in 0..2 {
        for i in 0..k {
            s += z.p[mu * k + i] * v.vdot[i * 2 + mu];
        }
    }
    Ok(s)
}

/// Forget the energy variable: the projection from the extended dual onto
/// the linear dual.
pub fn eta_project(z: &ExtendedDualPoint) -> LinearDualPoint {
    LinearDualPoint { x: z.x, q: z.q.clone(), p: z.p.clone() }
}

/// Second-jet transformation. The semiholonomic flag keeps the
/// unsymmetrized law; otherwise the mixed base indices are symmetrized.
pub fn transform_second_jet(
    chart: &dyn Chart,
    s: &SecondJetPoint,
    semiholonomic: bool,
) -> Result<SecondJetPoint> {
    if !chart.has_second_derivatives() {
        return Err(Error::Invalid {
            context: "jet::transform_second_jet",
            detail: alloc::format!("chart provides no second-derivative data"),
        });
    }
    let k = s.q.len();
    let e = chart.eval(&s.x, &s.q)?;

    // First-jet images of the two derivative slots.
    let jp = JetPoint { x: s.x, q: s.q.clone(), qdot: s.qdot.clone() };
    let out1 = transform_jet(chart, &jp)?;
    let rp = JetPoint { x: s.x, q: s.q.clone(), qdot: s.r.clone() };
    let out_r = transform_jet(chart, &rp)?;

    // Total derivative along x^rho of chart data, with the q-slots moving
    // along r^l_rho and the q_mu-slots along q^i_{mu rho}.
    // D_rho jac_inv[mu][nu] = - jac_inv[mu][l] d2x[l][rho][kk] jac_inv[kk][nu]
    let mut d_jinv = [[[0.0; 2]; 2]; 2]; // [mu][nu][rho]
    for mu in 0..2 {
        for nu in 0..2 {
            for rho in 0..2 {
                let mut sum = 0.0;
                for l in 0..2 {
                    for kk in 0..2 {
                        sum -= e.jac_inv[mu][l] * e.d2x[l][rho][kk] * e.jac_inv[kk][nu];
                    }
                }
                d_jinv[mu][nu][rho] = sum;
            }
        }
    }
    // w[j][mu] = fq . qdot + fx; D_rho w.
    let mut w = vec![0.0; k * 2];
    let mut dw = vec![0.0; k * 4]; // [(j*2 + mu)*2 + rho]
    for jj in 0..k {
        for mu in 0..2 {
            let mut val = e.fx[jj * 2 + mu];
            for i in 0..k {
                val += e.fq[(jj, i)] * s.qdot[i * 2 + mu];
            }
            w[jj * 2 + mu] = val;
            for rho in 0..2 {
                // D_rho fx[j][mu]
                let mut dval = e.fxx[(jj * 2 + mu) * 2 + rho];
                for l in 0..k {
                    dval += e.fxq[(jj * 2 + mu) * k + l] * s.r[l * 2 + rho];
                }
                for i in 0..k {
                    // D_rho fq[(j, i)]
                    let mut dfq = e.fxq[(jj * 2 + rho) * k + i];
                    for l in 0..k {
                        dfq += e.fqq[(jj * k + i) * k + l] * s.r[l * 2 + rho];
                    }
                    dval += dfq * s.qdot[i * 2 + mu] + e.fq[(jj, i)] * s.qddot[(i * 2 + mu) * 2 + rho];
                }
                dw[(jj * 2 + mu) * 2 + rho] = dval;
            }
        }
    }
    let mut qddot = vec![0.0; k * 4];
    for jj in 0..k {
        for nu in 0..2 {
            for sigma in 0..2 {
                let mut sum = 0.0;
                for rho in 0..2 {
                    let mut inner = 0.0;
                    for mu in 0..2 {
                        inner += d_jinv[mu][nu][rho] * w[jj * 2 + mu]
                            + e.jac_inv[mu][nu] * dw[(jj * 2 + mu) * 2 + rho];
                    }
                    sum += e.jac_inv[rho][sigma] * inner;
                }
                qddot[(jj * 2 + nu) * 2 + sigma] = sum;
            }
        }
    }
    if !semiholonomic {
        for jj in 0..k {
            let a = qddot[(jj * 2) * 2 + 1];
            let b = qddot[(jj * 2 + 1) * 2];
            let m = 0.5 * (a + b);
            qddot[(jj * 2) * 2 + 1] = m;
            qddot[(jj * 2 + 1) * 2] = m;
        }
    }
    Ok(SecondJetPoint { x: out1.x, q: out1.q, qdot: out1.qdot, r: out_r.qdot, qddot })
}

// ---------------------------------------------------------------------------
// Projectable vector fields and prolongation
// ---------------------------------------------------------------------------

/// Vector-field data at a point: components plus the partials consumed by
/// the prolongation formula.
#[derive(Debug, Clone)]
pub struct VectorFieldJet {
    pub v_base: [f64; 2],
    /// dv_base[kappa][mu] = dV^kappa / dx^mu
    pub dv_base: [[f64; 2]; 2],
    pub v_fiber: Vec<f64>,
    /// dv_fiber_dq[(i, k)] = dV^i / dq^k
    pub dv_fiber_dq: Mat,
    /// dv_fiber_dx[i*2 + mu] = dV^i / dx^mu
    pub dv_fiber_dx: Vec<f64>,
}

/// A projectable vector field: base components depend on x only.
pub trait VectorField {
    fn fiber_dim(&self) -> usize;
    fn eval(&self, x: &[f64; 2], q: &[f64]) -> VectorFieldJet;
}

/// Sinusoidal projectable vector field with analytic partials.
///
/// ```text
/// V^mu = c^mu + a^mu sin(b^mu . x + d^mu)
/// V^i  = v0^i + A[i][l] q^l (1 + eps sin(s . x + t)) + g^i sin(u . x + w)
/// ```
pub struct SinusoidalVectorField {
    pub k: usize,
    pub c: [f64; 2],
    pub a: [f64; 2],
    pub b: [[f64; 2]; 2],
    pub d: [f64; 2],
    pub v0: Vec<f64>,
    pub lin: Mat,
    pub eps: f64,
    pub s: [f64; 2],
    pub t: f64,
    pub g: Vec<f64>,
    pub u: [f64; 2],
    pub w: f64,
}

impl SinusoidalVectorField {
    pub fn random(rng: &mut Rng, k: usize, vertical: bool) -> Self {
        let mut lin = Mat::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                lin[(i, j)] = rng.symmetric(1.0);
            }
        }
        let zero_if_vertical = if vertical { 0.0 } else { 1.0 };
        SinusoidalVectorField {
            k,
            c: [zero_if_vertical * rng.symmetric(1.0), zero_if_vertical * rng.symmetric(1.0)],
            a: [zero_if_vertical * rng.symmetric(0.5), zero_if_vertical * rng.symmetric(0.5)],
            b: [
                [rng.symmetric(1.0), rng.symmetric(1.0)],
                [rng.symmetric(1.0), rng.symmetric(1.0)],
            ],
            d: [rng.symmetric(3.0), rng.symmetric(3.0)],
            v0: (0..k).map(|_| rng.symmetric(1.0)).collect(),
            lin,
            eps: rng.symmetric(0.5),
            s: [rng.symmetric(1.0), rng.symmetric(1.0)],
            t: rng.symmetric(3.0),
            g: (0..k).map(|_| rng.symmetric(1.0)).collect(),
            u: [rng.symmetric(1.0), rng.symmetric(1.0)],
            w: rng.symmetric(3.0),
        }
    }

    /// Vertical field with constant fiber components (prolongation is zero).
    pub fn constant_vertical(k: usize, v0: Vec<f64>) -> Self {
        SinusoidalVectorField {
            k,
            c: [0.0; 2],
            a: [0.0; 2],
            b: [[0.0; 2]; 2],
            d: [0.0; 2],
            v0,
            lin: Mat::zeros(k, k),
            eps: 0.0,
            s: [0.0; 2],
            t: 0.0,
            g: alloc::vec![0.0; k],
            u: [0.0; 2],
            w: 0.0,
        }
    }

    /// Pure time translation d/dx^0.
    pub fn time_translation(k: usize) -> Self {
        let mut vf = Self::constant_vertical(k, alloc::vec![0.0; k]);
        vf.c = [1.0, 0.0];
        vf
    }
}

impl VectorField for SinusoidalVectorField {
    fn fiber_dim(&self) -> usize {
        self.k
    }

    fn eval(&self, x: &[f64; 2], q: &[f64]) -> VectorFieldJet {
        let k = self.k;
        let mut v_base = [0.0; 2];
        let mut dv_base = [[0.0; 2]; 2];
        for mu in 0..2 {
            let phase = self.b[mu][0] * x[0] + self.b[mu][1] * x[1] + self.d[mu];
            v_base[mu] = self.c[mu] + self.a[mu] * libm::sin(phase);
            for nu in 0..2 {
                dv_base[mu][nu] = self.a[mu] * libm::cos(phase) * self.b[mu][nu];
            }
        }
        let ss = libm::sin(self.s[0] * x[0] + self.s[1] * x[1] + self.t);
        let cs = libm::cos(self.s[0] * x[0] + self.s[1] * x[1] + self.t);
        let su = libm::sin(self.u[0] * x[0] + self.u[1] * x[1] + self.w);
        let cu = libm::cos(self.u[0] * x[0] + self.u[1] * x[1] + self.w);
        let mod_factor = 1.0 + self.eps * ss;
        let mut v_fiber = vec![0.0; k];
        let mut dv_fiber_dq = Mat::zeros(k, k);
        let mut dv_fiber_dx = vec![0.0; k * 2];
        for i in 0..k {
            let lin_q: f64 = (0..k).map(|l| self.lin[(i, l)] * q[l]).sum();
            v_fiber[i] = self.v0[i] + lin_q * mod_factor + self.g[i] * su;
            for l in 0..k {
                dv_fiber_dq[(i, l)] = self.lin[(i, l)] * mod_factor;
            }
            for mu in 0..2 {
                dv_fiber_dx[i * 2 + mu] =
                    lin_q * self.eps * cs * self.s[mu] + self.g[i] * cu * self.u[mu];
            }
        }
        VectorFieldJet { v_base, dv_base, v_fiber, dv_fiber_dq, dv_fiber_dx }
    }
}

/// The first prolongation of a projectable vector field evaluated at a jet
/// point; `jet_component[i*2 + mu]` multiplies d/dq^i_mu.
#[derive(Debug, Clone)]
pub struct ProlongedVector {
    pub v_base: [f64; 2],
    pub v_fiber: Vec<f64>,
    pub jet_component: Vec<f64>,
}

/// jet component = (dV^i/dq^k) q^k_mu - (dV^kappa/dx^mu) q^i_kappa + dV^i/dx^mu
pub fn prolong_vector_field(vf: &dyn VectorField, j: &JetPoint) -> ProlongedVector {
    let k = j.fiber_dim();
    let data = vf.eval(&j.x, &j.q);
    let mut jet_component = vec![0.0; k * 2];
    for i in 0..k {
        for mu in 0..2 {
            let mut s = data.dv_fiber_dx[i * 2 + mu];
            for kk in 0..k {
                s += data.dv_fiber_dq[(i, kk)] * j.qdot[kk * 2 + mu];
            }
            for kappa in 0..2 {
                s -= data.dv_base[kappa][mu] * j.qdot[i * 2 + kappa];
            }
            jet_component[i * 2 + mu] = s;
        }
    }
    ProlongedVector { v_base: data.v_base, v_fiber: data.v_fiber, jet_component }
}

/// Lift of a bundle automorphism to the jet manifold. The coordinate
/// formula is the jet transformation law; the named alias exists so the
/// fibered-map property can be asserted against it directly.
pub fn prolong_automorphism(chart: &dyn Chart, j: &JetPoint) -> Result<JetPoint> {
    transform_jet(chart, j)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_jet(k: usize) -> JetPoint {
        let mut rng = Rng::new(99);
        JetPoint::new(
            [rng.symmetric(1.0), rng.symmetric(1.0)],
            (0..k).map(|_| rng.symmetric(0.8)).collect(),
            (0..2 * k).map(|_| rng.symmetric(0.8)).collect(),
        )
    }

    #[test]
    fn identity_chart_fixes_jets() {
        let j = sample_jet(2);
        let id = IdentityChart { k: 2 };
        let out = transform_jet(&id, &j).unwrap();
        assert_eq!(out, j);
    }

    #[test]
    fn spatial_doubling_halves_velocity() {
        // x'^1 = 2 x^1, q' = q: qdot (q_0, q_1) -> (q_0, q_1 / 2)
        let chart = AxisScaleChart { scale: [1.0, 2.0], fiber: Mat::identity(1) };
        let j = JetPoint::new([0.3, -0.4], alloc::vec![1.0], alloc::vec![5.0, 8.0]);
        let out = transform_jet(&chart, &j).unwrap();
        assert!((out.qdot[0] - 5.0).abs() < 1e-15);
        assert!((out.qdot[1] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn fiber_scaling_doubles_linear_jet() {
        let chart = AxisScaleChart { scale: [1.0, 1.0], fiber: Mat::identity(1).scaled(2.0) };
        let v = LinearJetPoint { x: [0.0, 0.0], q: alloc::vec![0.5], vdot: alloc::vec![1.0, -2.0] };
        let out = transform_linear_jet(&chart, &v).unwrap();
        assert!((out.vdot[0] - 2.0).abs() < 1e-15);
        assert!((out.vdot[1] + 4.0).abs() < 1e-15);
    }

    #[test]
    fn twisted_dual_spatial_doubling() {
        // x'^1 = 2 x^1 only, twisted: p^1' = (1/2) 2 p^1 = p^1, p' = p/2.
        let chart = AxisScaleChart { scale: [1.0, 2.0], fiber: Mat::identity(1) };
        let z = ExtendedDualPoint {
            x: [0.1, 0.2],
            q: alloc::vec![0.7],
            p: alloc::vec![3.0, 4.0],
            p_scalar: 6.0,
        };
        let out = transform_dual(&chart, &z, Twist::Twisted).unwrap();
        assert!((out.p[0] - 1.5).abs() < 1e-15); // p^0' = det * p^0 = 0.5 * 3
        assert!((out.p[1] - 4.0).abs() < 1e-15);
        assert!((out.p_scalar - 3.0).abs() < 1e-15);
    }

    #[test]
    fn pairing_direct_substitution() {
        let z = ExtendedDualPoint {
            x: [0.0, 0.0],
            q: alloc::vec![0.0],
            p: alloc::vec![1.0, 2.0],
            p_scalar: 5.0,
        };
        let j = JetPoint::new([0.0, 0.0], alloc::vec![0.0], alloc::vec![3.0, 4.0]);
        let v = jet_pairing_affine(&z, &j, Twist::Untwisted).unwrap();
        assert!((v - 16.0).abs() < 1e-15);
        // p = 0 pairs to the bare scalar.
        let z0 = ExtendedDualPoint {
            x: [0.0, 0.0],
            q: alloc::vec![0.0],
            p: alloc::vec![0.0, 0.0],
            p_scalar: -2.5,
        };
        assert!((jet_pairing_affine(&z0, &j, Twist::Untwisted).unwrap() + 2.5).abs() < 1e-15);
    }

    #[test]
    fn pairing_rejects_mismatched_points() {
        let z = ExtendedDualPoint {
            x: [0.0, 0.0],
            q: alloc::vec![0.0],
            p: alloc::vec![1.0, 2.0],
            p_scalar: 0.0,
        };
        let j = JetPoint::new([0.0, 1e-6], alloc::vec![0.0], alloc::vec![3.0, 4.0]);
        assert!(jet_pairing_affine(&z, &j, Twist::Untwisted).is_err());
    }

    #[test]
    fn eta_drops_scalar_and_commutes() {
        let mut rng = Rng::new(17);
        let chart = PerturbedChart::random(&mut rng, 2, 0.2, true);
        let z = ExtendedDualPoint {
            x: [0.2, -0.1],
            q: alloc::vec![0.4, -0.3],
            p: alloc::vec![1.0, -2.0, 0.5, 0.25],
            p_scalar: 3.0,
        };
        for twist in [Twist::Untwisted, Twist::Twisted] {
            let a = eta_project(&transform_dual(&chart, &z, twist).unwrap());
            let b = transform_linear_dual(&chart, &eta_project(&z), twist).unwrap();
            assert!((a.x[0] - b.x[0]).abs() < 1e-12);
            for (x, y) in a.p.iter().zip(&b.p) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // A constant shift of the energy slot leaves the projection fixed.
        let mut z2 = z.clone();
        z2.p_scalar += 17.0;
        assert_eq!(eta_project(&z), eta_project(&z2));
    }

    #[test]
    fn second_jet_needs_second_derivatives() {
        let id = IdentityChart { k: 1 };
        let wrapped = FirstOrderOnly(&id);
        let s = SecondJetPoint::holonomic(
            [0.0, 0.0],
            alloc::vec![0.1],
            alloc::vec![0.2, 0.3],
            alloc::vec![1.0, 0.5, 0.5, 2.0],
        );
        assert!(transform_second_jet(&wrapped, &s, false).is_err());
        assert!(transform_second_jet(&id, &s, false).is_ok());
    }

    #[test]
    fn second_jet_affine_base_chart() {
        // Base-only constant-linear chart x' = A x: qddot' = A^-T qddot A^-1.
        let chart = AxisScaleChart { scale: [2.0, 0.5], fiber: Mat::identity(1) };
        let s = SecondJetPoint::holonomic(
            [0.3, 0.1],
            alloc::vec![0.9],
            alloc::vec![0.4, -0.2],
            alloc::vec![1.0, 0.7, 0.7, -2.0],
        );
        let out = transform_second_jet(&chart, &s, false).unwrap();
        let ainv = [2.0f64.recip(), 0.5f64.recip()];
        for mu in 0..2 {
            for nu in 0..2 {
                let expect = ainv[mu] * ainv[nu] * s.qddot[mu * 2 + nu];
                assert!((out.qddot[mu * 2 + nu] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn second_jet_symmetry_preserved() {
        let mut rng = Rng::new(5);
        for trial in 0..20 {
            let chart = PerturbedChart::random(&mut rng, 2, 0.15, true);
            let mut qddot = alloc::vec![0.0; 8];
            for i in 0..2 {
                let a = rng.symmetric(1.0);
                let b = rng.symmetric(1.0);
                let c = rng.symmetric(1.0);
                qddot[(i * 2) * 2] = a;
                qddot[(i * 2) * 2 + 1] = b;
                qddot[(i * 2 + 1) * 2] = b;
                qddot[(i * 2 + 1) * 2 + 1] = c;
            }
            let s = SecondJetPoint::holonomic(
                [rng.symmetric(0.5), rng.symmetric(0.5)],
                alloc::vec![rng.symmetric(0.5), rng.symmetric(0.5)],
                (0..4).map(|_| rng.symmetric(0.5)).collect(),
                qddot,
            );
            let out = transform_second_jet(&chart, &s, false).unwrap();
            assert!(out.max_asymmetry() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn semiholonomic_law_preserves_equality_of_slots() {
        // q = r in implies q' = r' out, for the unsymmetrized law.
        let mut rng = Rng::new(8);
        let chart = PerturbedChart::random(&mut rng, 2, 0.2, true);
        let s = SecondJetPoint::holonomic(
            [0.1, -0.2],
            alloc::vec![0.3, 0.4],
            (0..4).map(|_| rng.symmetric(0.6)).collect(),
            (0..8).map(|_| rng.symmetric(0.6)).collect(),
        );
        let out = transform_second_jet(&chart, &s, true).unwrap();
        for (a, b) in out.qdot.iter().zip(&out.r) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn vertical_constant_field_prolongs_to_zero() {
        let vf = SinusoidalVectorField::constant_vertical(2, alloc::vec![1.0, -2.0]);
        let j = sample_jet(2);
        let p = prolong_vector_field(&vf, &j);
        for c in &p.jet_component {
            assert_eq!(*c, 0.0);
        }
    }

    #[test]
    fn time_translation_prolongs_to_zero() {
        let vf = SinusoidalVectorField::time_translation(1);
        let j = sample_jet(1);
        let p = prolong_vector_field(&vf, &j);
        assert_eq!(p.v_base, [1.0, 0.0]);
        for c in &p.jet_component {
            assert_eq!(*c, 0.0);
        }
    }

    #[test]
    fn prolong_automorphism_is_transform_jet() {
        let mut rng = Rng::new(13);
        let chart = PerturbedChart::random(&mut rng, 1, 0.2, false);
        let j = sample_jet(1);
        let a = prolong_automorphism(&chart, &j).unwrap();
        let b = transform_jet(&chart, &j).unwrap();
        assert_eq!(a, b);
    }
}
