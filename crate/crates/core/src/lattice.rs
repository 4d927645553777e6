//! The discretized spacetime: a finite Nt x Nx grid, periodic in space,
//! with centered second-order difference stencils, slice and region
//! integration, and normalized point sources.
//!
//! One discretization rule holds everywhere: every first derivative in an
//! operator formula is the shared [`d_mu_field`] stencil (centered in the
//! interior, one-sided second-order at the two temporal end layers,
//! periodic centered in space).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const TIME: usize = 0;
pub const SPACE: usize = 1;

/// Grid geometry. Space is a periodic circle of length `nx * dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nt: usize,
    pub nx: usize,
    pub dt: f64,
    pub dx: f64,
}

impl Grid {
    pub fn new(nt: usize, nx: usize, dt: f64, dx: f64) -> Result<Grid> {
        if nt < 5 {
            return Err(Error::Invalid {
                context: "lattice::grid",
                detail: format!("nt = {nt} < 5"),
            });
        }
        if nx < 4 {
            return Err(Error::Invalid {
                context: "lattice::grid",
                detail: format!("nx = {nx} < 4"),
            });
        }
        if dt <= 0.0 || dx <= 0.0 {
            return Err(Error::Invalid {
                context: "lattice::grid",
                detail: format!("nonpositive spacing dt = {dt}, dx = {dx}"),
            });
        }
        Ok(Grid { nt, nx, dt, dx })
    }

    pub fn nodes(&self) -> usize {
        self.nt * self.nx
    }

    pub fn node(&self, a: usize, b: usize) -> usize {
        a * self.nx + b
    }

    pub fn t(&self, a: usize) -> f64 {
        a as f64 * self.dt
    }

    pub fn x(&self, b: usize) -> f64 {
        b as f64 * self.dx
    }

    pub fn circumference(&self) -> f64 {
        self.nx as f64 * self.dx
    }
}

/// A fiber-valued grid function: values `[a][b][i]`, optionally with
/// momenta `[a][b][mu][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub grid: Grid,
    pub k: usize,
    pub values: Vec<f64>,
    pub momenta: Option<Vec<f64>>,
}

impl Section {
    pub fn zeros(grid: Grid, k: usize) -> Section {
        Section { grid, k, values: vec![0.0; grid.nodes() * k], momenta: None }
    }

    pub fn with_momenta(mut self) -> Section {
        self.momenta = Some(vec![0.0; self.grid.nodes() * 2 * self.k]);
        self
    }

    pub fn from_fn(grid: Grid, k: usize, f: impl Fn(f64, f64, usize) -> f64) -> Section {
        let mut s = Section::zeros(grid, k);
        for a in 0..grid.nt {
            for b in 0..grid.nx {
                for i in 0..k {
                    let idx = s.idx(a, b, i);
                    s.values[idx] = f(grid.t(a), grid.x(b), i);
                }
            }
        }
        s
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, i: usize) -> usize {
        (a * self.grid.nx + b) * self.k + i
    }

    #[inline]
    pub fn at(&self, a: usize, b: usize, i: usize) -> f64 {
        self.values[self.idx(a, b, i)]
    }

    #[inline]
    pub fn midx(&self, a: usize, b: usize, mu: usize, i: usize) -> usize {
        ((a * self.grid.nx + b) * 2 + mu) * self.k + i
    }

    pub fn momentum_at(&self, a: usize, b: usize, mu: usize, i: usize) -> f64 {
        self.momenta.as_ref().expect("section has no momenta")[self.midx(a, b, mu, i)]
    }

    pub fn axpy(&mut self, alpha: f64, other: &Section) {
        assert_eq!(self.values.len(), other.values.len());
        for (v, w) in self.values.iter_mut().zip(&other.values) {
            *v += alpha * w;
        }
        if let (Some(m), Some(om)) = (self.momenta.as_mut(), other.momenta.as_ref()) {
            for (v, w) in m.iter_mut().zip(om) {
                *v += alpha * w;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
        if let Some(m) = self.momenta.as_mut() {
            for v in m.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max abs over layers `margin..nt-margin`.
    pub fn interior_max_abs(&self, margin: usize) -> f64 {
        let mut m = 0.0f64;
        for a in margin..self.grid.nt.saturating_sub(margin) {
            for b in 0..self.grid.nx {
                for i in 0..self.k {
                    m = m.max(self.at(a, b, i).abs());
                }
            }
        }
        m
    }

    /// Random smooth section: a handful of low Fourier modes in space with
    /// smooth time envelopes. Periodic in space by construction.
    pub fn random_smooth(grid: Grid, k: usize, rng: &mut Rng, modes: usize) -> Section {
        let circ = grid.circumference();
        let tspan = (grid.nt as f64 - 1.0) * grid.dt;
        let mut terms = Vec::new();
        for i in 0..k {
            for _ in 0..modes {
                let m = 1 + rng.usize_below(3);
                let amp = rng.symmetric(0.5);
                let ph = rng.symmetric(core::f64::consts::PI);
                let om = rng.range(0.5, 2.0) * core::f64::consts::PI / tspan.max(1.0);
                let ph2 = rng.symmetric(core::f64::consts::PI);
                terms.push((i, m, amp, ph, om, ph2));
            }
        }
        Section::from_fn(grid, k, |t, x, i| {
            let mut v = 0.0;
            for &(ti, m, amp, ph, om, ph2) in &terms {
                if ti == i {
                    let kx = 2.0 * core::f64::consts::PI * m as f64 / circ;
                    v += amp * libm::sin(kx * x + ph) * libm::sin(om * t + ph2);
                }
            }
            v
        })
    }
}

/// A constant-time Cauchy slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slice {
    pub a: usize,
}

impl Slice {
    pub fn new(grid: &Grid, a: usize) -> Result<Slice> {
        if a >= grid.nt {
            return Err(Error::Invalid {
                context: "lattice::slice",
                detail: format!("slice index {a} out of range (nt = {})", grid.nt),
            });
        }
        Ok(Slice { a })
    }
}

/// A closed time slice `[a1, a2] x circle`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub a1: usize,
    pub a2: usize,
}

impl Region {
    pub fn new(grid: &Grid, a1: usize, a2: usize) -> Result<Region> {
        if a1 > a2 || a2 >= grid.nt {
            return Err(Error::Invalid {
                context: "lattice::region",
                detail: format!("bad window [{a1}, {a2}] (nt = {})", grid.nt),
            });
        }
        Ok(Region { a1, a2 })
    }

    pub fn full(grid: &Grid) -> Region {
        Region { a1: 0, a2: grid.nt - 1 }
    }

    /// Trapezoid weight of layer `a` within this region.
    pub fn weight(&self, a: usize) -> f64 {
        if a < self.a1 || a > self.a2 {
            0.0
        } else if a == self.a1 || a == self.a2 {
            0.5
        } else {
            1.0
        }
    }
}

/// Centered discrete derivative of one scalar grid field.
///
/// Time: centered interior, one-sided second-order at the end layers.
/// Space: periodic centered.
pub fn d_mu_field(grid: &Grid, field: &[f64], mu: usize) -> Vec<f64> {
    assert_eq!(field.len(), grid.nodes());
    let (nt, nx) = (grid.nt, grid.nx);
    let mut out = vec![0.0; nt * nx];
    match mu {
        TIME => {
            let f = 1.0 / (2.0 * grid.dt);
            for b in 0..nx {
                out[b] = (-3.0 * field[b] + 4.0 * field[nx + b] - field[2 * nx + b]) * f;
                let last = (nt - 1) * nx;
                out[last + b] = (3.0 * field[last + b] - 4.0 * field[last - nx + b]
                    + field[last - 2 * nx + b])
                    * f;
            }
            for a in 1..nt - 1 {
                for b in 0..nx {
                    out[a * nx + b] = (field[(a + 1) * nx + b] - field[(a - 1) * nx + b]) * f;
                }
            }
        }
        SPACE => {
            let f = 1.0 / (2.0 * grid.dx);
            for a in 0..nt {
                for b in 0..nx {
                    let bp = (b + 1) % nx;
                    let bm = (b + nx - 1) % nx;
                    out[a * nx + b] = (field[a * nx + bp] - field[a * nx + bm]) * f;
                }
            }
        }
        _ => panic!("mu must be 0 or 1"),
    }
    out
}

/// Component `i` of the discrete derivative of a section.
pub fn d_mu(s: &Section, mu: usize, i: usize) -> Vec<f64> {
    let grid = s.grid;
    let mut field = vec![0.0; grid.nodes()];
    for a in 0..grid.nt {
        for b in 0..grid.nx {
            field[grid.node(a, b)] = s.at(a, b, i);
        }
    }
    d_mu_field(&grid, &field, mu)
}

/// All components at once, preserving the `[a][b][i]` layout.
pub fn d_mu_section(s: &Section, mu: usize) -> Vec<f64> {
    let grid = s.grid;
    let mut out = vec![0.0; grid.nodes() * s.k];
    for i in 0..s.k {
        let d = d_mu(s, mu, i);
        for a in 0..grid.nt {
            for b in 0..grid.nx {
                out[(grid.node(a, b)) * s.k + i] = d[grid.node(a, b)];
            }
        }
    }
    out
}

/// Exact discrete adjoint of [`d_mu_field`] restricted to fields that
/// vanish on the two layers at each temporal end (so only centered rows
/// act). Satisfies `sum (d_mu f) g = sum f (adjoint_d_mu g)` exactly.
pub fn adjoint_d_mu_field(grid: &Grid, g: &[f64], mu: usize) -> Vec<f64> {
    assert_eq!(g.len(), grid.nodes());
    let (nt, nx) = (grid.nt, grid.nx);
    let mut out = vec![0.0; nt * nx];
    match mu {
        TIME => {
            for b in 0..nx {
                debug_assert!(
                    g[b] == 0.0 && g[(nt - 1) * nx + b] == 0.0,
                    "adjoint_d_mu needs temporally interior support"
                );
            }
            let f = 1.0 / (2.0 * grid.dt);
            for a in 1..nt - 1 {
                for b in 0..nx {
                    let v = g[a * nx + b] * f;
                    out[(a + 1) * nx + b] += v;
                    out[(a - 1) * nx + b] -= v;
                }
            }
        }
        SPACE => {
            let f = 1.0 / (2.0 * grid.dx);
            for a in 0..nt {
                for b in 0..nx {
                    let v = g[a * nx + b] * f;
                    let bp = (b + 1) % nx;
                    let bm = (b + nx - 1) % nx;
                    out[a * nx + bp] += v;
                    out[a * nx + bm] -= v;
                }
            }
        }
        _ => panic!("mu must be 0 or 1"),
    }
    out
}

/// Integral of a per-node density over a constant-time slice. Only the
/// mu = 0 component of the (future-pointing) surface measure is nonzero;
/// its weight is `dx` per node.
pub fn integrate_slice(grid: &Grid, density: &[f64], _slice: Slice) -> f64 {
    assert_eq!(density.len(), grid.nx);
    density.iter().sum::<f64>() * grid.dx
}

/// Integral of a grid scalar over a time window, trapezoidal in time,
/// plain periodic sum in space.
pub fn integrate_region(grid: &Grid, density: &[f64], region: Region) -> f64 {
    assert_eq!(density.len(), grid.nodes());
    let mut total = 0.0;
    for a in region.a1..=region.a2 {
        let w = region.weight(a);
        if w == 0.0 {
            continue;
        }
        let mut layer = 0.0;
        for b in 0..grid.nx {
            layer += density[grid.node(a, b)];
        }
        total += w * layer;
    }
    total * grid.dt * grid.dx
}

/// Discrete delta density: 1/(dt dx) at one interior node in one
/// component, zero elsewhere; its region integral is exactly 1.
pub fn delta_source(grid: &Grid, a: usize, b: usize, i: usize, k: usize) -> Result<Section> {
    if a < 2 || a + 3 > grid.nt {
        return Err(Error::Support {
            context: "lattice::delta_source",
            detail: format!(
                "node layer {a} too close to the temporal ends (need 2 <= a <= {})",
                grid.nt - 3
            ),
        });
    }
    if b >= grid.nx || i >= k {
        return Err(Error::Invalid {
            context: "lattice::delta_source",
            detail: format!("node ({a}, {b}, {i}) out of range"),
        });
    }
    let mut s = Section::zeros(*grid, k);
    let idx = s.idx(a, b, i);
    s.values[idx] = 1.0 / (grid.dt * grid.dx);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn circle_grid(nt: usize, nx: usize) -> Grid {
        Grid::new(nt, nx, 0.05, 2.0 * PI / nx as f64).unwrap()
    }

    #[test]
    fn grid_invariants_enforced() {
        assert!(Grid::new(4, 8, 0.1, 0.1).is_err());
        assert!(Grid::new(8, 3, 0.1, 0.1).is_err());
        assert!(Grid::new(8, 8, 0.0, 0.1).is_err());
        assert!(Grid::new(5, 4, 0.1, 0.1).is_ok());
    }

    #[test]
    fn derivative_annihilates_constants() {
        let grid = circle_grid(12, 16);
        let s = Section::from_fn(grid, 1, |_, _, _| 3.7);
        for mu in [TIME, SPACE] {
            let d = d_mu(&s, mu, 0);
            assert!(d.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn derivative_exact_on_linear_time() {
        let grid = circle_grid(12, 8);
        let s = Section::from_fn(grid, 1, |t, _, _| t);
        let d = d_mu(&s, TIME, 0);
        // One-sided second-order closures are exact on linear data too.
        for v in &d {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_derivative_taylor_bound() {
        let grid = circle_grid(6, 64);
        let s = Section::from_fn(grid, 1, |_, x, _| libm::sin(x));
        let d = d_mu(&s, SPACE, 0);
        let bound = grid.dx * grid.dx / 6.0 * 1.01;
        for a in 0..grid.nt {
            for b in 0..grid.nx {
                let err = (d[grid.node(a, b)] - libm::cos(grid.x(b))).abs();
                assert!(err <= bound, "err {err} > bound {bound}");
            }
        }
    }

    #[test]
    fn summation_by_parts_on_the_circle() {
        let grid = circle_grid(6, 32);
        let f = Section::random_smooth(grid, 1, &mut Rng::new(1), 3);
        let g = Section::random_smooth(grid, 1, &mut Rng::new(2), 3);
        let df = d_mu(&f, SPACE, 0);
        let dg = d_mu(&g, SPACE, 0);
        for a in 0..grid.nt {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for b in 0..grid.nx {
                lhs += df[grid.node(a, b)] * g.at(a, b, 0);
                rhs += f.at(a, b, 0) * dg[grid.node(a, b)];
            }
            assert!((lhs + rhs).abs() < 1e-12, "SBP violated: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn adjoint_matches_bilinear_identity() {
        let grid = circle_grid(12, 8);
        let f = Section::random_smooth(grid, 1, &mut Rng::new(3), 3);
        // g supported away from the ends
        let mut g = Section::random_smooth(grid, 1, &mut Rng::new(4), 3);
        for a in [0usize, 1, grid.nt - 2, grid.nt - 1] {
            for b in 0..grid.nx {
                let idx = g.idx(a, b, 0);
                g.values[idx] = 0.0;
            }
        }
        for mu in [TIME, SPACE] {
            let df = d_mu(&f, mu, 0);
            let adg = adjoint_d_mu_field(&grid, &g.values, mu);
            let lhs: f64 = df.iter().zip(&g.values).map(|(a, b)| a * b).sum();
            let rhs: f64 = f.values.iter().zip(&adg).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn slice_integrals_on_the_circle() {
        let grid = circle_grid(6, 64);
        let ones = vec![1.0; grid.nx];
        let sl = Slice::new(&grid, 2).unwrap();
        assert!((integrate_slice(&grid, &ones, sl) - 2.0 * PI).abs() < 1e-12);
        let cosx: Vec<f64> = (0..grid.nx).map(|b| libm::cos(grid.x(b))).collect();
        assert!(integrate_slice(&grid, &cosx, sl).abs() < 1e-12);
        let cos2: Vec<f64> = (0..grid.nx).map(|b| libm::cos(grid.x(b)).powi(2)).collect();
        assert!((integrate_slice(&grid, &cos2, sl) - PI).abs() < 1e-12);
    }

    #[test]
    fn region_integral_trapezoid() {
        let grid = circle_grid(11, 16);
        let ones = vec![1.0; grid.nodes()];
        let region = Region::new(&grid, 2, 8).unwrap();
        let expect = (8.0 - 2.0) * grid.dt * grid.nx as f64 * grid.dx;
        assert!((integrate_region(&grid, &ones, region) - expect).abs() < 1e-12);
        let zero = vec![0.0; grid.nodes()];
        assert_eq!(integrate_region(&grid, &zero, region), 0.0);
    }

    #[test]
    fn region_integral_separable_cos_squared() {
        let grid = circle_grid(11, 64);
        let density: Vec<f64> = (0..grid.nodes())
            .map(|idx| {
                let b = idx % grid.nx;
                libm::cos(2.0 * grid.x(b)).powi(2)
            })
            .collect();
        let region = Region::new(&grid, 1, 9).unwrap();
        let expect = 8.0 * grid.dt * PI; // time extent x (circle avg 1/2 x 2 pi)
        assert!((integrate_region(&grid, &density, region) - expect).abs() < 1e-12);
    }

    #[test]
    fn delta_source_normalization_and_support() {
        let grid = circle_grid(12, 8);
        let s = delta_source(&grid, 4, 3, 0, 1).unwrap();
        let region_all = Region::full(&grid);
        assert!((integrate_region(&grid, &s.values, region_all) - 1.0).abs() < 1e-12);
        let disjoint = Region::new(&grid, 6, 10).unwrap();
        assert_eq!(integrate_region(&grid, &s.values, disjoint), 0.0);
        // Window whose boundary hits the node still integrates to 1/2 x ...
        // boundary-weight check: node on interior layer of window
        let containing = Region::new(&grid, 2, 6).unwrap();
        assert!((integrate_region(&grid, &s.values, containing) - 1.0).abs() < 1e-12);
        assert!(delta_source(&grid, 1, 0, 0, 1).is_err());
        assert!(delta_source(&grid, grid.nt - 2, 0, 0, 1).is_err());
    }

    #[test]
    fn delta_pairs_with_smooth_sections() {
        let grid = circle_grid(16, 32);
        let f = Section::from_fn(grid, 1, |t, x, _| libm::sin(x) * (1.0 + 0.5 * t));
        let s = delta_source(&grid, 5, 7, 0, 1).unwrap();
        let mut density = vec![0.0; grid.nodes()];
        for a in 0..grid.nt {
            for b in 0..grid.nx {
                density[grid.node(a, b)] = s.at(a, b, 0) * f.at(a, b, 0);
            }
        }
        let paired = integrate_region(&grid, &density, Region::full(&grid));
        assert!((paired - f.at(5, 7, 0)).abs() < 1e-12);
    }
}
