//! Second-order forward-mode automatic differentiation.
//!
//! [`Ad2`] carries a value, a gradient and a full Hessian over a fixed set
//! of active variables, propagated through arithmetic by the exact chain
//! rule. Model Lagrangians and Hamiltonians are evaluated on `Ad2`
//! arguments to obtain all first and second partials in one pass; the
//! active set is small (3·k for a fiber dimension k), so dense Hessian
//! storage is fine.

use alloc::vec;
use alloc::vec::Vec;

/// Value + gradient + Hessian over `n` active variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Ad2 {
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>, // n x n, full symmetric storage
}

impl Ad2 {
    pub fn constant(n: usize, v: f64) -> Self {
        Ad2 { v, g: vec![0.0; n], h: vec![0.0; n * n] }
    }

    /// The `idx`-th active variable with value `v`.
    pub fn var(n: usize, idx: usize, v: f64) -> Self {
        let mut a = Ad2::constant(n, v);
        a.g[idx] = 1.0;
        a
    }

    /// Seed every entry of `values` as an active variable.
    pub fn vars(values: &[f64]) -> Vec<Ad2> {
        let n = values.len();
        values.iter().enumerate().map(|(i, &v)| Ad2::var(n, i, v)).collect()
    }

    pub fn arity(&self) -> usize {
        self.g.len()
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn grad(&self) -> &[f64] {
        &self.g
    }

    pub fn hess(&self) -> &[f64] {
        &self.h
    }

    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.g.len() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.g.iter().all(|x| x.is_finite())
            && self.h.iter().all(|x| x.is_finite())
    }

    /// Unary composition: apply `f` with derivatives `d1`, `d2` at the value.
    fn compose(&self, f: f64, d1: f64, d2: f64) -> Ad2 {
        let n = self.g.len();
        let mut g = vec![0.0; n];
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            g[i] = d1 * self.g[i];
        }
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = d1 * self.h[i * n + j] + d2 * self.g[i] * self.g[j];
            }
        }
        Ad2 { v: f, g, h }
    }

    pub fn sin(&self) -> Ad2 {
        let (s, c) = (libm::sin(self.v), libm::cos(self.v));
        self.compose(s, c, -s)
    }

    pub fn cos(&self) -> Ad2 {
        let (s, c) = (libm::sin(self.v), libm::cos(self.v));
        self.compose(c, -s, -c)
    }

    pub fn exp(&self) -> Ad2 {
        let e = libm::exp(self.v);
        self.compose(e, e, e)
    }

    /// Square root; NaN (detected downstream) outside the differentiable
    /// domain v > 0.
    pub fn sqrt(&self) -> Ad2 {
        if self.v <= 0.0 {
            return self.compose(f64::NAN, f64::NAN, f64::NAN);
        }
        let r = libm::sqrt(self.v);
        self.compose(r, 0.5 / r, -0.25 / (r * self.v))
    }

    pub fn recip(&self) -> Ad2 {
        let inv = 1.0 / self.v;
        self.compose(inv, -inv * inv, 2.0 * inv * inv * inv)
    }

    pub fn powi(&self, e: i32) -> Ad2 {
        let f = libm::pow(self.v, e as f64);
        let d1 = e as f64 * libm::pow(self.v, (e - 1) as f64);
        let d2 = (e * (e - 1)) as f64 * libm::pow(self.v, (e - 2) as f64);
        self.compose(f, d1, d2)
    }

    pub fn powf(&self, e: f64) -> Ad2 {
        if self.v <= 0.0 {
            return self.compose(f64::NAN, f64::NAN, f64::NAN);
        }
        let f = libm::pow(self.v, e);
        self.compose(f, e * f / self.v, e * (e - 1.0) * f / (self.v * self.v))
    }

    pub fn scale(&self, s: f64) -> Ad2 {
        let mut out = self.clone();
        out.v *= s;
        out.g.iter_mut().for_each(|x| *x *= s);
        out.h.iter_mut().for_each(|x| *x *= s);
        out
    }

    pub fn add_scalar(&self, s: f64) -> Ad2 {
        let mut out = self.clone();
        out.v += s;
        out
    }
}

impl core::ops::Add for &Ad2 {
    type Output = Ad2;
    fn add(self, rhs: &Ad2) -> Ad2 {
        let mut out = self.clone();
        out.v += rhs.v;
        for (a, b) in out.g.iter_mut().zip(&rhs.g) {
            *a += *b;
        }
        for (a, b) in out.h.iter_mut().zip(&rhs.h) {
            *a += *b;
        }
        out
    }
}

impl core::ops::Sub for &Ad2 {
    type Output = Ad2;
    fn sub(self, rhs: &Ad2) -> Ad2 {
        let mut out = self.clone();
        out.v -= rhs.v;
        for (a, b) in out.g.iter_mut().zip(&rhs.g) {
            *a -= *b;
        }
        for (a, b) in out.h.iter_mut().zip(&rhs.h) {
            *a -= *b;
        }
        out
    }
}

impl core::ops::Mul for &Ad2 {
    type Output = Ad2;
    fn mul(self, rhs: &Ad2) -> Ad2 {
        let n = self.g.len();
        debug_assert_eq!(n, rhs.g.len());
        let v = self.v * rhs.v;
        let mut g = vec![0.0; n];
        for i in 0..n {
            g[i] = self.g[i] * rhs.v + self.v * rhs.g[i];
        }
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = self.h[i * n + j] * rhs.v
                    + self.v * rhs.h[i * n + j]
                    + self.g[i] * rhs.g[j]
                    + self.g[j] * rhs.g[i];
            }
        }
        Ad2 { v, g, h }
    }
}

impl core::ops::Div for &Ad2 {
    type Output = Ad2;
    fn div(self, rhs: &Ad2) -> Ad2 {
        self * &rhs.recip()
    }
}

impl core::ops::Neg for &Ad2 {
    type Output = Ad2;
    fn neg(self) -> Ad2 {
        self.scale(-1.0)
    }
}

macro_rules! owned_ops {
    ($trait:ident, $method:ident) => {
        impl core::ops::$trait for Ad2 {
            type Output = Ad2;
            fn $method(self, rhs: Ad2) -> Ad2 {
                (&self).$method(&rhs)
            }
        }
        impl core::ops::$trait<&Ad2> for Ad2 {
            type Output = Ad2;
            fn $method(self, rhs: &Ad2) -> Ad2 {
                (&self).$method(rhs)
            }
        }
        impl core::ops::$trait<Ad2> for &Ad2 {
            type Output = Ad2;
            fn $method(self, rhs: Ad2) -> Ad2 {
                self.$method(&rhs)
            }
        }
    };
}

owned_ops!(Add, add);
owned_ops!(Sub, sub);
owned_ops!(Mul, mul);
owned_ops!(Div, div);

impl core::ops::Neg for Ad2 {
    type Output = Ad2;
    fn neg(self) -> Ad2 {
        self.scale(-1.0)
    }
}
