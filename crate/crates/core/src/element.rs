//! Bilinear shape functions on a square element of edge `a`.
//!
//! All elements of a structured mesh are congruent, so per-Gauss-point
//! matrices are computed once and scaled by the local coefficients.

use crate::mesh::{GAUSS_POINTS, NODE_LOCAL};
use crate::scalar::Scalar;

/// Shape function values at local point `(xi, eta)`.
pub fn shape<T: Scalar>(xi: T, eta: T) -> [T; 4] {
    let q = T::lit(0.25);
    NODE_LOCAL.map(|[a, b]| q * (T::one() + xi * T::lit(a)) * (T::one() + eta * T::lit(b)))
}

/// Physical shape function gradients `[dN/dx, dN/dy]` at `(xi, eta)`.
pub fn shape_grad<T: Scalar>(xi: T, eta: T, a: T) -> [[T; 2]; 4] {
    let q = T::lit(0.25);
    let s = T::lit(2.0) / a;
    NODE_LOCAL.map(|[na, nb]| {
        let (na, nb) = (T::lit(na), T::lit(nb));
        [
            q * na * (T::one() + eta * nb) * s,
            q * nb * (T::one() + xi * na) * s,
        ]
    })
}

/// Jacobian determinant times the unit Gauss weight.
pub fn gauss_weight<T: Scalar>(a: T) -> T {
    a * a * T::lit(0.25)
}

/// Strain-displacement matrix rows `(xx, yy, engineering xy)` for DOFs `[u0x, u0y, u1x, ...]`.
pub fn b_matrix<T: Scalar>(grad: &[[T; 2]; 4]) -> [[T; 8]; 3] {
    let mut b = [[T::zero(); 8]; 3];
    for (n, g) in grad.iter().enumerate() {
        b[0][2 * n] = g[0];
        b[1][2 * n + 1] = g[1];
        b[2][2 * n] = g[1];
        b[2][2 * n + 1] = g[0];
    }
    b
}

/// Per-Gauss-point reference matrices of a square element.
#[derive(Debug, Clone)]
pub struct ReferenceElement<T> {
    pub size: T,
    pub n: [[T; 4]; 4],
    pub grad: [[[T; 2]; 4]; 4],
    pub b: [[[T; 8]; 3]; 4],
    pub weight: T,
}

impl<T: Scalar> ReferenceElement<T> {
    pub fn new(size: T) -> Self {
        let pts = GAUSS_POINTS.map(|[x, y]| (T::lit(x), T::lit(y)));
        let n = pts.map(|(x, y)| shape(x, y));
        let grad = pts.map(|(x, y)| shape_grad(x, y, size));
        let b = grad.map(|g| b_matrix(&g));
        Self {
            size,
            n,
            grad,
            b,
            weight: gauss_weight(size),
        }
    }
}
