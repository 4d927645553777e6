//! Affine-space algebra in a fixed chart: affine maps and their linear
//! parts, affine duals and dual (pullback) maps, quotients by linear
//! subspaces and the factorization of compatible maps through them.
//!
//! Points are plain real vectors; every structural statement about affine
//! spaces then becomes a matrix identity that tests can check to rounding.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Mat};

/// A point of a k-dimensional affine space, in a chosen chart.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePoint {
    pub coords: Vec<f64>,
}

impl AffinePoint {
    pub fn new(coords: Vec<f64>) -> Self {
        AffinePoint { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// An affine map `a -> linear . a + translation`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub linear: Mat,
    pub translation: Vec<f64>,
}

impl AffineMap {
    pub fn new(linear: Mat, translation: Vec<f64>) -> Self {
        assert_eq!(linear.rows(), translation.len(), "translation length");
        AffineMap { linear, translation }
    }

    pub fn identity(n: usize) -> Self {
        AffineMap::new(Mat::identity(n), alloc::vec![0.0; n])
    }

    pub fn domain_dim(&self) -> usize {
        self.linear.cols()
    }

    pub fn codomain_dim(&self) -> usize {
        self.linear.rows()
    }

    /// `g . f` (apply `f` first).
    pub fn compose(g: &AffineMap, f: &AffineMap) -> Result<AffineMap> {
        if g.domain_dim() != f.codomain_dim() {
            return Err(Error::DimensionMismatch {
                context: "affine::compose",
                expected: g.domain_dim(),
                got: f.codomain_dim(),
            });
        }
        let linear = g.linear.matmul(&f.linear);
        let mut translation = g.linear.matvec(&f.translation);
        for (t, gt) in translation.iter_mut().zip(&g.translation) {
            *t += *gt;
        }
        Ok(AffineMap { linear, translation })
    }
}

/// An element of the affine dual: an affine map into the reals,
/// `a -> covector . a + constant`. The twisted dual carries the same data
/// with the scalar slot read as a density coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineDualElement {
    pub covector: Vec<f64>,
    pub constant: f64,
}

impl AffineDualElement {
    pub fn new(covector: Vec<f64>, constant: f64) -> Self {
        AffineDualElement { covector, constant }
    }

    pub fn eval(&self, a: &AffinePoint) -> Result<f64> {
        if a.dim() != self.covector.len() {
            return Err(Error::DimensionMismatch {
                context: "affine::dual_eval",
                expected: self.covector.len(),
                got: a.dim(),
            });
        }
        Ok(dot(&self.covector, &a.coords) + self.constant)
    }

    /// Linear part under the projection `A* -> A-vec*` (drops the constant).
    pub fn linear_part(&self) -> &[f64] {
        &self.covector
    }
}

/// Apply an affine map to a point.
pub fn apply_affine_map(f: &AffineMap, a: &AffinePoint) -> Result<AffinePoint> {
    if a.dim() != f.domain_dim() {
        return Err(Error::DimensionMismatch {
            context: "affine::apply",
            expected: f.domain_dim(),
            got: a.dim(),
        });
    }
    let mut out = f.linear.matvec(&a.coords);
    for (o, t) in out.iter_mut().zip(&f.translation) {
        *o += *t;
    }
    Ok(AffinePoint::new(out))
}

/// The linear part of an affine map; independent of any reference point.
pub fn linear_part(f: &AffineMap) -> &Mat {
    &f.linear
}

/// Pull a dual element on the codomain back along `f`:
/// `(f*(b*))(a) = b*(f(a))`.
pub fn affine_dual_map(f: &AffineMap, b_dual: &AffineDualElement) -> Result<AffineDualElement> {
    if b_dual.covector.len() != f.codomain_dim() {
        return Err(Error::DimensionMismatch {
            context: "affine::dual_map",
            expected: f.codomain_dim(),
            got: b_dual.covector.len(),
        });
    }
    let covector = f.linear.transpose().matvec(&b_dual.covector);
    let constant = dot(&b_dual.covector, &f.translation) + b_dual.constant;
    Ok(AffineDualElement::new(covector, constant))
}

/// Orthonormalize the columns of `basis` (modified Gram-Schmidt); rejects
/// rank-deficient input.
fn orthonormal_columns(basis: &Mat) -> Result<Vec<Vec<f64>>> {
    let k = basis.rows();
    let r = basis.cols();
    let mut cols: Vec<Vec<f64>> = (0..r).map(|j| (0..k).map(|i| basis[(i, j)]).collect()).collect();
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(r);
    for (j, col) in cols.iter_mut().enumerate() {
        let original = norm(col);
        for q in &out {
            let c = dot(col, q);
            for (x, qx) in col.iter_mut().zip(q) {
                *x -= c * qx;
            }
        }
        let n = norm(col);
        if n <= 1e-10 * original.max(1.0) {
            return Err(Error::Singular {
                context: "affine::quotient",
                detail: format!("basis column {j} is dependent on earlier columns"),
            });
        }
        out.push(col.iter().map(|x| x / n).collect());
    }
    Ok(out)
}

fn project_out(coords: &[f64], ortho: &[Vec<f64>]) -> Vec<f64> {
    let mut out = coords.to_vec();
    for q in ortho {
        let c = dot(&out, q);
        for (x, qx) in out.iter_mut().zip(q) {
            *x -= c * qx;
        }
    }
    out
}

/// Canonical representative of `a` modulo the span of the basis columns:
/// the component orthogonal to the subspace in the chart metric.
pub fn quotient_project(a: &AffinePoint, subspace_basis: &Mat) -> Result<AffinePoint> {
    if subspace_basis.cols() == 0 {
        return Ok(a.clone());
    }
    if subspace_basis.rows() != a.dim() {
        return Err(Error::DimensionMismatch {
            context: "affine::quotient",
            expected: a.dim(),
            got: subspace_basis.rows(),
        });
    }
    let ortho = orthonormal_columns(subspace_basis)?;
    Ok(AffinePoint::new(project_out(&a.coords, &ortho)))
}

/// Factor `f : A -> B` through the quotients `A/span(V)` and `B/span(W)`.
///
/// Requires `linear_part(f) . V` to lie in `span(W)` (checked numerically,
/// residual <= 1e-10 per column); the returned map satisfies
/// `rho_W . f = [f] . rho_V` on the canonical representatives.
pub fn factor_map(f: &AffineMap, v_basis: &Mat, w_basis: &Mat) -> Result<AffineMap> {
    let k = f.domain_dim();
    let m = f.codomain_dim();
    if v_basis.cols() > 0 && v_basis.rows() != k {
        return Err(Error::DimensionMismatch {
            context: "affine::factor_map",
            expected: k,
            got: v_basis.rows(),
        });
    }
    if w_basis.cols() > 0 && w_basis.rows() != m {
        return Err(Error::DimensionMismatch {
            context: "affine::factor_map",
            expected: m,
            got: w_basis.rows(),
        });
    }
    let w_ortho =
        if w_basis.cols() > 0 { orthonormal_columns(w_basis)? } else { Vec::new() };
    // Containment check: the image of each V column must project to zero
    // in the W-orthogonal complement.
    for j in 0..v_basis.cols() {
        let col: Vec<f64> = (0..k).map(|i| v_basis[(i, j)]).collect();
        let image = f.linear.matvec(&col);
        let residual = norm(&project_out(&image, &w_ortho));
        if residual > 1e-10 * (1.0 + norm(&image)) {
            return Err(Error::Invalid {
                context: "affine::factor_map",
                detail: format!(
                    "linear part does not map V into span(W): column {j} residual {residual:e}"
                ),
            });
        }
    }
    let v_ortho =
        if v_basis.cols() > 0 { orthonormal_columns(v_basis)? } else { Vec::new() };
    // [f] acts on representatives: include, apply f, re-project.
    let mut linear = Mat::zeros(m, k);
    for j in 0..k {
        let mut e = alloc::vec![0.0; k];
        e[j] = 1.0;
        let rep = project_out(&e, &v_ortho);
        let img = project_out(&f.linear.matvec(&rep), &w_ortho);
        for i in 0..m {
            linear[(i, j)] = img[i];
        }
    }
    let translation = project_out(&f.translation, &w_ortho);
    Ok(AffineMap { linear, translation })
}
