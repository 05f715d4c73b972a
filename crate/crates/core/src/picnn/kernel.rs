//! 5x5 kernels with the full symmetry of the square, parameterized by six values.
//!
//! Layout, parameters `[a, b, c, d, e, f]`:
//!
//! ```text
//! a b c b a
//! b d e d b
//! c e f e c
//! b d e d b
//! a b c b a
//! ```

use crate::scalar::Scalar;

pub const KERNEL_SIZE: usize = 5;
pub const NUM_PARAMS: usize = 6;

/// Offsets `(dy, dx)` from the kernel center grouped by parameter.
pub const ORBITS: [&[(isize, isize)]; NUM_PARAMS] = [
    &[(-2, -2), (-2, 2), (2, -2), (2, 2)],
    &[
        (-2, -1),
        (-2, 1),
        (-1, -2),
        (-1, 2),
        (1, -2),
        (1, 2),
        (2, -1),
        (2, 1),
    ],
    &[(-2, 0), (0, -2), (0, 2), (2, 0)],
    &[(-1, -1), (-1, 1), (1, -1), (1, 1)],
    &[(-1, 0), (0, -1), (0, 1), (1, 0)],
    &[(0, 0)],
];

/// Parameter slot of kernel entry `(i, j)`, `0 <= i, j < 5`.
pub fn orbit_of(i: usize, j: usize) -> usize {
    let di = (i as isize - 2).abs();
    let dj = (j as isize - 2).abs();
    let (hi, lo) = if di >= dj { (di, dj) } else { (dj, di) };
    match (hi, lo) {
        (2, 2) => 0,
        (2, 1) => 1,
        (2, 0) => 2,
        (1, 1) => 3,
        (1, 0) => 4,
        _ => 5,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricKernel<T> {
    pub params: [T; NUM_PARAMS],
}

impl<T: Scalar> SymmetricKernel<T> {
    pub fn new(params: [T; NUM_PARAMS]) -> Self {
        Self { params }
    }

    pub fn expand(&self) -> [[T; KERNEL_SIZE]; KERNEL_SIZE] {
        expand_kernel(&self.params)
    }
}

/// Full 5x5 weight array of a six-parameter kernel.
pub fn expand_kernel<T: Scalar>(params: &[T; NUM_PARAMS]) -> [[T; KERNEL_SIZE]; KERNEL_SIZE] {
    let mut k = [[T::zero(); KERNEL_SIZE]; KERNEL_SIZE];
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = params[orbit_of(i, j)];
        }
    }
    k
}

/// Accumulates a 5x5 weight gradient into the six parameter slots.
pub fn fold_gradient<T: Scalar>(grad: &[[T; KERNEL_SIZE]; KERNEL_SIZE]) -> [T; NUM_PARAMS] {
    let mut out = [T::zero(); NUM_PARAMS];
    for (i, row) in grad.iter().enumerate() {
        for (j, &g) in row.iter().enumerate() {
            out[orbit_of(i, j)] += g;
        }
    }
    out
}
