//! Fixed finite-difference Laplacian filters and the phase-field residual on pixels.

use serde::{Deserialize, Serialize};

use crate::elasticity::MaterialParams;
use crate::error::{Error, Result};
use crate::pixel::PixelGrid;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StencilKind {
    /// Five-point cross.
    K5,
    /// Nominal nine-point filter `[[1, 4, 1], [4, -20, 4], [1, 4, 1]] / 6`.
    K9,
    /// Nine-point filter used as `K9*(phi) - 3 phi`.
    #[default]
    K9Star,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplacianStencil<T> {
    pub kind: StencilKind,
    pub weights: [[T; 3]; 3],
    /// Multiple of the center value subtracted after filtering.
    pub shift: T,
    pub h: T,
}

impl<T: Scalar> LaplacianStencil<T> {
    pub fn new(kind: StencilKind, h: T) -> Self {
        let l = T::lit;
        let (weights, shift) = match kind {
            StencilKind::K5 => (
                [
                    [l(0.0), l(1.0), l(0.0)],
                    [l(1.0), l(-4.0), l(1.0)],
                    [l(0.0), l(1.0), l(0.0)],
                ],
                l(0.0),
            ),
            StencilKind::K9 => {
                let (c, e, m) = (l(1.0 / 6.0), l(4.0 / 6.0), l(-20.0 / 6.0));
                ([[c, e, c], [e, m, e], [c, e, c]], l(0.0))
            }
            StencilKind::K9Star => {
                let (c, e, m) = (l(1.0 / 6.0), l(2.0 / 3.0), l(-1.0 / 3.0));
                ([[c, e, c], [e, m, e], [c, e, c]], l(3.0))
            }
        };
        Self {
            kind,
            weights,
            shift,
            h,
        }
    }
}

/// Half-sample mirror index: `-1 -> 0`, `n -> n - 1`.
#[inline]
pub(crate) fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if i < 0 {
        (-i - 1).min(n - 1) as usize
    } else if i >= n {
        (2 * n - i - 1).max(0) as usize
    } else {
        i as usize
    }
}

fn mirror_padded<T: Scalar>(phi: &PixelGrid<T>) -> (Vec<T>, usize) {
    let pc = phi.cols + 2;
    let mut pad = vec![T::zero(); (phi.rows + 2) * pc];
    for r in 0..phi.rows + 2 {
        let sr = mirror(r as isize - 1, phi.rows);
        for c in 0..pc {
            pad[r * pc + c] = phi.at(sr, mirror(c as isize - 1, phi.cols));
        }
    }
    (pad, pc)
}

/// Discrete Laplacian with mirror (zero-flux) padding.
pub fn laplacian<T: Scalar>(phi: &PixelGrid<T>, stencil: &LaplacianStencil<T>) -> PixelGrid<T> {
    let (pad, pc) = mirror_padded(phi);
    let h2 = stencil.h * stencil.h;
    let w = &stencil.weights;
    PixelGrid::from_fn(phi.rows, phi.cols, phi.h_px, |r, c| {
        let mut acc = T::zero();
        for (i, wrow) in w.iter().enumerate() {
            let base = (r + i) * pc + c;
            for (j, &wij) in wrow.iter().enumerate() {
                acc += wij * pad[base + j];
            }
        }
        (acc - stencil.shift * phi.at(r, c)) / h2
    })
}

/// Transpose of [`laplacian`] applied to `g`.
pub fn laplacian_adjoint<T: Scalar>(
    g: &PixelGrid<T>,
    stencil: &LaplacianStencil<T>,
) -> PixelGrid<T> {
    let h2 = stencil.h * stencil.h;
    let mut out = PixelGrid::filled(g.rows, g.cols, T::zero(), g.h_px);
    for r in 0..g.rows {
        for c in 0..g.cols {
            let gv = g.at(r, c) / h2;
            if gv.is_zero() {
                continue;
            }
            for (i, wrow) in stencil.weights.iter().enumerate() {
                let sr = mirror(r as isize + i as isize - 1, g.rows);
                for (j, &wij) in wrow.iter().enumerate() {
                    let sc = mirror(c as isize + j as isize - 1, g.cols);
                    *out.at_mut(sr, sc) += wij * gv;
                }
            }
            *out.at_mut(r, c) -= stencil.shift * gv;
        }
    }
    out
}

/// Pixelwise residual `gc/lc phi - gc lc lap(phi) - 2 (1 - phi) H`.
pub fn pde_residual<T: Scalar>(
    phi: &PixelGrid<T>,
    h_map: &PixelGrid<T>,
    mat: &MaterialParams<T>,
    stencil: &LaplacianStencil<T>,
) -> Result<PixelGrid<T>> {
    if !phi.same_shape(h_map) {
        return Err(Error::Shape(format!(
            "phase field {} x {} against energy map {} x {}",
            phi.rows, phi.cols, h_map.rows, h_map.cols
        )));
    }
    let lap = laplacian(phi, stencil);
    let a = mat.gc / mat.lc;
    let b = mat.gc * mat.lc;
    let two = T::lit(2.0);
    let values = phi
        .values
        .iter()
        .zip(&lap.values)
        .zip(&h_map.values)
        .map(|((&p, &l), &h)| a * p - b * l - two * (T::one() - p) * h)
        .collect();
    Ok(PixelGrid {
        values,
        ..phi.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_indices() {
        assert_eq!(mirror(-1, 5), 0);
        assert_eq!(mirror(-2, 5), 1);
        assert_eq!(mirror(5, 5), 4);
        assert_eq!(mirror(6, 5), 3);
        assert_eq!(mirror(2, 5), 2);
        assert_eq!(mirror(-1, 1), 0);
    }

    #[test]
    fn k9_star_relates_to_nominal_k9() {
        let s = LaplacianStencil::<f64>::new(StencilKind::K9Star, 1.0);
        let n = LaplacianStencil::<f64>::new(StencilKind::K9, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == 1 && j == 1 { 3.0 } else { 0.0 };
                assert!((s.weights[i][j] - (n.weights[i][j] + delta)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn residual_of_constant_fields() {
        let mat = MaterialParams::<f64>::new(1.0, 1.0, 2.7, 0.03).unwrap();
        let st = LaplacianStencil::new(StencilKind::K9Star, 0.01);
        let zero = PixelGrid::filled(6, 6, 0.0, 0.01);
        let r = pde_residual(&zero, &zero, &mat, &st).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.0));
        let c = PixelGrid::filled(6, 6, 0.25, 0.01);
        let r = pde_residual(&c, &zero, &mat, &st).unwrap();
        for &v in &r.values {
            assert!((v - 90.0 * 0.25).abs() < 1e-9);
        }
        let h0 = 45.0;
        let phi = PixelGrid::filled(6, 6, 2.0 * h0 / (90.0 + 2.0 * h0), 0.01);
        let h = PixelGrid::filled(6, 6, h0, 0.01);
        let r = pde_residual(&phi, &h, &mat, &st).unwrap();
        assert!(r.values.iter().all(|&v| v.abs() < 1e-11));
    }

    #[test]
    fn adjoint_is_transpose() {
        for kind in [StencilKind::K5, StencilKind::K9, StencilKind::K9Star] {
            let st = LaplacianStencil::new(kind, 0.5);
            let x = PixelGrid::from_fn(5, 7, 1.0, |r, c| ((r * 7 + c) as f64 * 0.37).sin());
            let y = PixelGrid::from_fn(5, 7, 1.0, |r, c| ((r * 3 + 2 * c) as f64 * 0.11).cos());
            let lx = laplacian(&x, &st);
            let aty = laplacian_adjoint(&y, &st);
            let lhs: f64 = lx.values.iter().zip(&y.values).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.values.iter().zip(&aty.values).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0), "{kind:?}");
        }
    }
}
