//! Field-theory models: Lagrangians with exact pointwise partials from
//! second-order forward AD, the covariant Legendre transformation in both
//! directions, the De Donder-Weyl Hamiltonian derived from a Lagrangian,
//! and the time-regularity / regular-hyperbolicity checks.
//!
//! Metric signature is (+, -) throughout; index 0 is time.
//!
//! Built-in models:
//! * Klein-Gordon: `L = (q_0^2 - q_1^2)/2 - m^2 q^2 / 2`
//! * phi^4: Klein-Gordon plus `- lambda q^4 / 24`
//! * sigma model (k = 2): `L = h_ij(q)(q_0^i q_0^j - q_1^i q_1^j)/2` with
//!   `h_ij = delta_ij + kappa q_i q_j`
//! * a degenerate control with `L = q_1^2 / 2` (no time derivatives), used
//!   to exercise the regularity failure paths.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::ad::Ad2;
use crate::error::{Error, Result};
use crate::jet::{ExtendedDualPoint, JetPoint, LinearDualPoint};
use crate::linalg::Mat;

/// Flat index of q^i_mu inside the AD variable block (after the k field
/// values).
#[inline]
pub fn qd(i: usize, mu: usize) -> usize {
    i * 2 + mu
}

/// Flat index of p_i^mu in dual-momentum layout.
#[inline]
pub fn pf(k: usize, mu: usize, i: usize) -> usize {
    mu * k + i
}

/// A first-order Lagrangian density L(x, q, q_mu), evaluated on AD scalars
/// so that all first and second partials come out exact.
pub trait Lagrangian: Sync {
    fn fiber_dim(&self) -> usize;
    fn name(&self) -> &'static str;
    /// `q[i]`, `qdot[qd(i, mu)]`; all arguments share one active set.
    fn eval(&self, x: &[f64; 2], q: &[Ad2], qdot: &[Ad2]) -> Ad2;
}

/// All pointwise partials of a Lagrangian at one jet point.
#[derive(Debug, Clone)]
pub struct LagrangianPartials {
    pub k: usize,
    pub l: f64,
    /// dL/dq^i
    pub dq: Vec<f64>,
    /// dL/dq^i_mu, indexed by [`qd`]
    pub dqdot: Vec<f64>,
    /// Full Hessian over (q, qdot), dimension 3k x 3k.
    hess: Vec<f64>,
}

impl LagrangianPartials {
    #[inline]
    fn h(&self, a: usize, b: usize) -> f64 {
        self.hess[a * 3 * self.k + b]
    }

    /// d^2 L / dq^i dq^j
    #[inline]
    pub fn d2_qq(&self, i: usize, j: usize) -> f64 {
        self.h(i, j)
    }

    /// d^2 L / dq^i_mu dq^j  (momentum-slot first)
    #[inline]
    pub fn d2_qdot_q(&self, i: usize, mu: usize, j: usize) -> f64 {
        self.h(self.k + qd(i, mu), j)
    }

    /// d^2 L / dq^i_mu dq^j_nu
    #[inline]
    pub fn d2_qdot_qdot(&self, i: usize, mu: usize, j: usize, nu: usize) -> f64 {
        self.h(self.k + qd(i, mu), self.k + qd(j, nu))
    }

    /// The k x k time block d^2 L / dq^i_0 dq^j_0.
    pub fn time_block(&self) -> Mat {
        let mut m = Mat::zeros(self.k, self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                m[(i, j)] = self.d2_qdot_qdot(i, 0, j, 0);
            }
        }
        m
    }

    /// Velocity Hessian as a 2k x 2k matrix in [`qd`] layout.
    pub fn velocity_hessian(&self) -> Mat {
        let n = 2 * self.k;
        let mut m = Mat::zeros(n, n);
        for i in 0..self.k {
            for mu in 0..2 {
                for j in 0..self.k {
                    for nu in 0..2 {
                        m[(qd(i, mu), qd(j, nu))] = self.d2_qdot_qdot(i, mu, j, nu);
                    }
                }
            }
        }
        m
    }

    /// Mixed block d^2 L / dq_mu^i dq^j as a 2k x k matrix.
    pub fn mixed_block(&self) -> Mat {
        let mut m = Mat::zeros(2 * self.k, self.k);
        for i in 0..self.k {
            for mu in 0..2 {
                for j in 0..self.k {
                    m[(qd(i, mu), j)] = self.d2_qdot_q(i, mu, j);
                }
            }
        }
        m
    }

    /// Field-field block d^2 L / dq dq as k x k.
    pub fn qq_block(&self) -> Mat {
        let mut m = Mat::zeros(self.k, self.k);
        for i in 0..self.k {
            for j in 0..self.k {
                m[(i, j)] = self.d2_qq(i, j);
            }
        }
        m
    }
}

/// Evaluate all partials of the Lagrangian at a point; rejects
/// non-differentiable evaluations (NaN/inf anywhere in value, gradient or
/// Hessian) with the offending location.
pub fn eval_partials_l(
    model: &dyn Lagrangian,
    x: &[f64; 2],
    q: &[f64],
    qdot: &[f64],
) -> Result<LagrangianPartials> {
    let k = model.fiber_dim();
    assert_eq!(q.len(), k);
    assert_eq!(qdot.len(), 2 * k);
    let n = 3 * k;
    let mut vars = Vec::with_capacity(n);
    for (i, &v) in q.iter().enumerate() {
        vars.push(Ad2::var(n, i, v));
    }
    for (i, &v) in qdot.iter().enumerate() {
        vars.push(Ad2::var(n, k + i, v));
    }
    let (qv, qdv) = vars.split_at(k);
    let out = model.eval(x, qv, qdv);
    if !out.is_finite() {
        return Err(Error::Invalid {
            context: "models::eval_partials_l",
            detail: format!("non-differentiable point at x = ({}, {})", x[0], x[1]),
        });
    }
    Ok(LagrangianPartials {
        k,
        l: out.value(),
        dq: out.grad()[..k].to_vec(),
        dqdot: out.grad()[k..].to_vec(),
        hess: out.hess().to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Built-in Lagrangians
// ---------------------------------------------------------------------------

pub struct KleinGordon {
    pub mass: f64,
}

impl Lagrangian for KleinGordon {
    fn fiber_dim(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "klein_gordon"
    }

    fn eval(&self, _x: &[f64; 2], q: &[Ad2], qdot: &[Ad2]) -> Ad2 {
        let kinetic = (&qdot[0] * &qdot[0] - &qdot[1] * &qdot[1]).scale(0.5);
        let mass = (&q[0] * &q[0]).scale(0.5 * self.mass * self.mass);
        kinetic - mass
    }
}

pub struct Phi4 {
    pub mass: f64,
    pub lambda: f64,
}

impl Lagrangian for Phi4 {
    fn fiber_dim(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "phi4"
    }

    fn eval(&self, x: &[f64; 2], q: &[Ad2], qdot: &[Ad2]) -> Ad2 {
        let kg = KleinGordon { mass: self.mass }.eval(x, q, qdot);
        kg - q[0].powi(4).scale(self.lambda / 24.0)
    }
}

/// Two-component sigma model with target metric `h_ij = delta_ij +
/// kappa q_i q_j` (positive definite for kappa >= 0) on the flat (+, -)
/// base.
pub struct SigmaModel {
    pub kappa: f64,
}

impl Lagrangian for SigmaModel {
    fn fiber_dim(&self) -> usize {
        2
    }

    fn name(&self) -> &'static str {
        "sigma"
    }

    fn eval(&self, _x: &[f64; 2], q: &[Ad2], qdot: &[Ad2]) -> Ad2 {
        let n = q[0].arity();
        let mut acc = Ad2::constant(n, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                let mut hij = &q[i] * &q[j] * Ad2::constant(n, self.kappa);
                if i == j {
                    hij = hij.add_scalar(1.0);
                }
                let kin = &qdot[qd(i, 0)] * &qdot[qd(j, 0)] - &qdot[qd(i, 1)] * &qdot[qd(j, 1)];
                acc = acc + (hij * kin).scale(0.5);
            }
        }
        acc
    }
}

/// Degenerate control model with no time derivatives: `L = q_1^2 / 2`.
/// Fails the time-regularity check by construction.
pub struct SpatialGradientOnly;

impl Lagrangian for SpatialGradientOnly {
    fn fiber_dim(&self) -> usize {
        1
    }

    fn name(&self) -> &'static str {
        "degenerate"
    }

    fn eval(&self, _x: &[f64; 2], _q: &[Ad2], qdot: &[Ad2]) -> Ad2 {
        (&qdot[1] * &qdot[1]).scale(0.5)
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian side
// ---------------------------------------------------------------------------

/// All pointwise partials of a De Donder-Weyl Hamiltonian at one point of
/// the multimomentum space. Momenta use the [`pf`] layout.
#[derive(Debug, Clone)]
pub struct HamiltonianPartials {
    pub k: usize,
    pub h: f64,
    /// dH/dq^i
    pub dq: Vec<f64>,
    /// dH/dp_i^mu, indexed by [`pf`]
    pub dp: Vec<f64>,
    /// d^2 H / dq dq (k x k)
    pub hqq: Mat,
    /// d^2 H / dp dq (2k x k, row = pf index)
    pub hpq: Mat,
    /// d^2 H / dp dp (2k x 2k, pf layout)
    pub hpp: Mat,
}

/// A De Donder-Weyl Hamiltonian density H(x, q, p).
pub trait Hamiltonian: Sync {
    fn fiber_dim(&self) -> usize;
    fn partials(&self, x: &[f64; 2], q: &[f64], p: &[f64]) -> Result<HamiltonianPartials>;
}

/// The Hamiltonian obtained from a hyperregular Lagrangian by the
/// covariant Legendre transformation, `H = p . qdot - L` with the
/// velocities eliminated through a damped Newton solve of
/// `dL/dqdot = p`. All H-partials follow from the solved velocities by
/// implicit differentiation, so they inherit AD exactness up to the
/// Newton tolerance (1e-12).
pub struct DwHamiltonian<'a> {
    pub lagrangian: &'a dyn Lagrangian,
}

impl<'a> DwHamiltonian<'a> {
    pub fn new(lagrangian: &'a dyn Lagrangian) -> Self {
        DwHamiltonian { lagrangian }
    }

    /// Solve dL/dqdot = p for the velocities (qd layout).
    fn solve_velocities(&self, x: &[f64; 2], q: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let k = self.lagrangian.fiber_dim();
        let target: Vec<f64> =
            (0..2 * k).map(|flat| p[pf(k, flat % 2, flat / 2)]).collect();
        let mut qdot = vec![0.0; 2 * k];
        let mut residual = f64::INFINITY;
        for iter in 0..50 {
            let parts = eval_partials_l(self.lagrangian, x, q, &qdot)?;
            let r: Vec<f64> =
                (0..2 * k).map(|flat| parts.dqdot[flat] - target[flat]).collect();
            residual = crate::linalg::max_abs(&r);
            if residual <= 1e-12 {
                return Ok(qdot);
            }
            let jac = parts.velocity_hessian();
            let step = jac.solve(&r).map_err(|_| Error::Singular {
                context: "models::legendre_inverse",
                detail: format!("velocity Hessian singular at iteration {iter}"),
            })?;
            // Damped update: halve until the residual does not grow.
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..8 {
                let trial: Vec<f64> =
                    qdot.iter().zip(&step).map(|(v, s)| v - lambda * s).collect();
                let tp = eval_partials_l(self.lagrangian, x, q, &trial)?;
                let tr: Vec<f64> =
                    (0..2 * k).map(|flat| tp.dqdot[flat] - target[flat]).collect();
                if crate::linalg::max_abs(&tr) <= residual {
                    qdot = trial;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        // Final check
        let parts = eval_partials_l(self.lagrangian, x, q, &qdot)?;
        let r: Vec<f64> = (0..2 * k).map(|flat| parts.dqdot[flat] - target[flat]).collect();
        if crate::linalg::max_abs(&r) <= 1e-10 {
            Ok(qdot)
        } else {
            Err(Error::NonConvergence {
                context: "models::legendre_inverse",
                residual,
                iterations: 50,
            })
        }
    }
}

impl Hamiltonian for DwHamiltonian<'_> {
    fn fiber_dim(&self) -> usize {
        self.lagrangian.fiber_dim()
    }

    fn partials(&self, x: &[f64; 2], q: &[f64], p: &[f64]) -> Result<HamiltonianPartials> {
        let k = self.fiber_dim();
        let qdot = self.solve_velocities(x, q, p)?;
        let lp = eval_partials_l(self.lagrangian, x, q, &qdot)?;
        let mut h = -lp.l;
        for i in 0..k {
            for mu in 0..2 {
                h += p[pf(k, mu, i)] * qdot[qd(i, mu)];
            }
        }
        // dH/dp = qdot, dH/dq = -dL/dq (both at the solved velocities).
        let mut dp = vec![0.0; 2 * k];
        for i in 0..k {
            for mu in 0..2 {
                dp[pf(k, mu, i)] = qdot[qd(i, mu)];
            }
        }
        let dq: Vec<f64> = lp.dq.iter().map(|v| -v).collect();
        // Second partials by implicit differentiation:
        //   W = (L_vv)^-1,  dqdot/dp = W,  dqdot/dq = -W L_vq,
        //   H_pp = W,  H_pq = -W L_vq,  H_qq = -L_qq + L_qv W L_vq.
        let lvv = lp.velocity_hessian();
        let w = lvv.inverse().map_err(|_| Error::Singular {
            context: "models::hamiltonian_partials",
            detail: format!("velocity Hessian singular at x = ({}, {})", x[0], x[1]),
        })?;
        let lvq = lp.mixed_block(); // 2k x k, rows in qd layout
        let w_lvq = w.matmul(&lvq); // 2k x k
        let mut hpp = Mat::zeros(2 * k, 2 * k);
        let mut hpq = Mat::zeros(2 * k, k);
        for i in 0..k {
            for mu in 0..2 {
                for j in 0..k {
                    hpq[(pf(k, mu, i), j)] = -w_lvq[(qd(i, mu), j)];
                    for nu in 0..2 {
                        hpp[(pf(k, mu, i), pf(k, nu, j))] = w[(qd(i, mu), qd(j, nu))];
                    }
                }
            }
        }
        let hqq = lvq.transpose().matmul(&w_lvq).sub(&lp.qq_block());
        Ok(HamiltonianPartials { k, h, dq, dp, hqq, hpq, hpp })
    }
}

// ---------------------------------------------------------------------------
// Legendre transformation
// ---------------------------------------------------------------------------

/// Covariant Legendre transform: p_i^mu = dL/dq^i_mu,
/// p = L - (dL/dq^i_mu) q^i_mu.
pub fn legendre_forward(model: &dyn Lagrangian, j: &JetPoint) -> Result<ExtendedDualPoint> {
    let k = model.fiber_dim();
    let lp = eval_partials_l(model, &j.x, &j.q, &j.qdot)?;
    let mut p = vec![0.0; 2 * k];
    let mut p_scalar = lp.l;
    for i in 0..k {
        for mu in 0..2 {
            p[pf(k, mu, i)] = lp.dqdot[qd(i, mu)];
            p_scalar -= lp.dqdot[qd(i, mu)] * j.qdot[qd(i, mu)];
        }
    }
    Ok(ExtendedDualPoint { x: j.x, q: j.q.clone(), p, p_scalar })
}

/// Inverse Legendre transform: q^i_mu = dH/dp_i^mu.
pub fn legendre_inverse(ham: &dyn Hamiltonian, z: &LinearDualPoint) -> Result<JetPoint> {
    let k = ham.fiber_dim();
    let parts = ham.partials(&z.x, &z.q, &z.p)?;
    let mut qdot = vec![0.0; 2 * k];
    for i in 0..k {
        for mu in 0..2 {
            qdot[qd(i, mu)] = parts.dp[pf(k, mu, i)];
        }
    }
    Ok(JetPoint { x: z.x, q: z.q.clone(), qdot })
}

/// Recover the Lagrangian value from a Hamiltonian at a jet point:
/// solve dH/dp = qdot for p (Newton with the H_pp Jacobian), then
/// L = p . qdot - H.
pub fn lagrangian_from_h(ham: &dyn Hamiltonian, j: &JetPoint) -> Result<f64> {
    let k = ham.fiber_dim();
    let mut p = vec![0.0; 2 * k];
    let mut residual = f64::INFINITY;
    for _iter in 0..50 {
        let parts = ham.partials(&j.x, &j.q, &p)?;
        let r: Vec<f64> = (0..2 * k)
            .map(|flat| {
                let (mu, i) = (flat / k, flat % k);
                parts.dp[flat] - j.qdot[qd(i, mu)]
            })
            .collect();
        residual = crate::linalg::max_abs(&r);
        if residual <= 1e-12 {
            let mut l = -parts.h;
            for i in 0..k {
                for mu in 0..2 {
                    l += p[pf(k, mu, i)] * j.qdot[qd(i, mu)];
                }
            }
            return Ok(l);
        }
        let step = parts.hpp.solve(&r).map_err(|_| Error::Singular {
            context: "models::lagrangian_from_h",
            detail: format!("H_pp singular"),
        })?;
        for (pv, s) in p.iter_mut().zip(&step) {
            *pv -= s;
        }
    }
    Err(Error::NonConvergence { context: "models::lagrangian_from_h", residual, iterations: 50 })
}

// ---------------------------------------------------------------------------
// Regularity and hyperbolicity checks
// ---------------------------------------------------------------------------

/// A jet sample point for the regularity checks.
#[derive(Debug, Clone)]
pub struct JetSample {
    pub x: [f64; 2],
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TimeRegularityReport {
    pub min_abs_det: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Regularity in time derivatives: det d^2 L / dq_0 dq_0 bounded away
/// from zero over the samples.
pub fn check_time_regularity(
    model: &dyn Lagrangian,
    samples: &[JetSample],
) -> Result<TimeRegularityReport> {
    let threshold = 1e-8;
    let mut min_abs_det = f64::INFINITY;
    for s in samples {
        let lp = eval_partials_l(model, &s.x, &s.q, &s.qdot)?;
        min_abs_det = min_abs_det.min(lp.time_block().det().abs());
    }
    Ok(TimeRegularityReport { min_abs_det, threshold, pass: min_abs_det > threshold })
}

#[derive(Debug, Clone)]
pub struct HyperbolicitySample {
    pub u: [f64; 2],
    /// u . u in the (+, -) metric.
    pub causal_norm: f64,
    /// Smallest eigenvalue margin in the expected direction (positive
    /// when the definiteness statement holds).
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct HyperbolicityReport {
    pub samples: Vec<HyperbolicitySample>,
    pub all_pass: bool,
    pub min_margin: f64,
}

/// Regular hyperbolicity: `u^mu u^nu d^2 L / dq_mu dq_nu` positive
/// definite for timelike u (u.u > 0) and negative definite for spacelike
/// u (u.u < 0).
pub fn check_regular_hyperbolicity(
    model: &dyn Lagrangian,
    points: &[JetSample],
    covectors: &[[f64; 2]],
) -> Result<HyperbolicityReport> {
    let k = model.fiber_dim();
    let mut samples = Vec::new();
    let mut min_margin = f64::INFINITY;
    let mut all_pass = true;
    for (s, u) in points.iter().zip(covectors.iter().cycle()) {
        let lp = eval_partials_l(model, &s.x, &s.q, &s.qdot)?;
        let causal_norm = u[0] * u[0] - u[1] * u[1];
        let mut m = Mat::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut v = 0.0;
                for mu in 0..2 {
                    for nu in 0..2 {
                        v += u[mu] * u[nu] * lp.d2_qdot_qdot(i, mu, j, nu);
                    }
                }
                m[(i, j)] = v;
            }
        }
        let eig = m.sym_eigenvalues();
        let margin = if causal_norm > 0.0 {
            eig[0] // smallest eigenvalue must be positive
        } else {
            -eig[eig.len() - 1] // largest must be negative
        };
        let pass = margin > 0.0;
        all_pass &= pass;
        min_margin = min_margin.min(margin);
        samples.push(HyperbolicitySample { u: *u, causal_norm, margin, pass });
    }
    Ok(HyperbolicityReport { samples, all_pass, min_margin })
}

/// Construct a built-in Lagrangian by name.
pub fn builtin_lagrangian(
    name: &str,
    mass: f64,
    lambda: f64,
    kappa: f64,
) -> Option<Box<dyn Lagrangian + Send>> {
    match name {
        "klein_gordon" => Some(Box::new(KleinGordon { mass })),
        "phi4" => Some(Box::new(Phi4 { mass, lambda })),
        "sigma" => Some(Box::new(SigmaModel { kappa })),
        "degenerate" => Some(Box::new(SpatialGradientOnly)),
        _ => None,
    }
}
