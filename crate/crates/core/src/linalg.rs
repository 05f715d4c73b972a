//! Symmetric banded storage, band Cholesky and Jacobi-preconditioned CG.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Symmetric matrix stored as its lower band, row by row.
///
/// Row `i` keeps columns `i - bw ..= i` contiguously, so Cholesky inner
/// products run over contiguous slices.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricBand<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
}

impl<T: Scalar> SymmetricBand<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let bw = bw.min(n.saturating_sub(1));
        Self {
            n,
            bw,
            data: vec![T::zero(); n * (bw + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn base(&self, i: usize) -> usize {
        // Offset such that entry (i, j) lives at base(i) + j.
        i * (self.bw + 1) + self.bw - i
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.bw).then(|| self.base(i) + j)
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |k| self.data[k])
    }

    /// Adds `v` to entries (i, j) and (j, i).
    ///
    /// Panics when the entry is outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band {}", self.bw));
        self.data[k] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        let k = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band {}", self.bw));
        self.data[k] = v;
    }

    /// Column range that may hold nonzeros in row `i`.
    pub fn row_range(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        i.saturating_sub(self.bw)..=(i + self.bw).min(self.n - 1)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.data[self.base(i) + i]).collect()
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let b = self.base(i);
            let row = &self.data[b + lo..b + i];
            let mut acc = self.data[b + i] * x[i];
            for (k, &a) in row.iter().enumerate() {
                let j = lo + k;
                acc += a * x[j];
                y[j] += a * x[i];
            }
            y[i] += acc;
        }
        y
    }

    /// In-place band Cholesky factorization `A = L L^T`.
    pub fn cholesky(mut self) -> Result<BandCholesky<T>> {
        let bw = self.bw;
        for i in 0..self.n {
            let lo = i.saturating_sub(bw);
            let bi = self.base(i);
            for j in lo..=i {
                let bj = self.base(j);
                let klo = lo.max(j.saturating_sub(bw));
                let dot = dot(&self.data[bi + klo..bi + j], &self.data[bj + klo..bj + j]);
                let s = self.data[bi + j] - dot;
                if i == j {
                    if !(s > T::zero()) || !s.is_finite() {
                        return Err(Error::Solver(format!(
                            "matrix not positive definite at row {i} (pivot {s})"
                        )));
                    }
                    self.data[bi + i] = s.sqrt();
                } else {
                    self.data[bi + j] = s / self.data[bj + j];
                }
            }
        }
        Ok(BandCholesky { factor: self })
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    // Independent accumulators let the compiler vectorize the reduction.
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (&x, &y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[derive(Debug, Clone)]
pub struct BandCholesky<T> {
    factor: SymmetricBand<T>,
}

impl<T: Scalar> BandCholesky<T> {
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let l = &self.factor;
        let n = l.n;
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(l.bw);
            let b = l.base(i);
            let s = x[i] - dot(&l.data[b + lo..b + i], &x[lo..i]);
            x[i] = s / l.data[b + i];
        }
        for i in (0..n).rev() {
            let lo = i.saturating_sub(l.bw);
            let b = l.base(i);
            x[i] /= l.data[b + i];
            let xi = x[i];
            for (k, &a) in l.data[b + lo..b + i].iter().enumerate() {
                x[lo + k] -= a * xi;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LinearSolver {
    /// Band Cholesky with one step of iterative refinement when needed.
    Direct,
    /// Conjugate gradients with a diagonal preconditioner.
    Cg { tol: f64, max_iters: usize },
}

impl Default for LinearSolver {
    fn default() -> Self {
        LinearSolver::Direct
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn relative_residual<T: Scalar>(a: &SymmetricBand<T>, x: &[T], b: &[T]) -> T {
    let ax = a.mul_vec(x);
    let r: Vec<T> = ax.iter().zip(b).map(|(&p, &q)| p - q).collect();
    let scale = norm(b).max(T::min_positive_value());
    norm(&r) / scale
}

/// Solves `a x = b`, returning the solution and its relative residual.
pub fn solve<T: Scalar>(
    a: &SymmetricBand<T>,
    b: &[T],
    solver: LinearSolver,
    target: f64,
) -> Result<(Vec<T>, T)> {
    if b.iter().all(|v| v.is_zero()) {
        return Ok((vec![T::zero(); b.len()], T::zero()));
    }
    match solver {
        LinearSolver::Direct => {
            let chol = a.clone().cholesky()?;
            let mut x = chol.solve(b);
            let mut res = relative_residual(a, &x, b);
            let mut refinements = 0;
            while res > T::lit(target) && refinements < 3 {
                let ax = a.mul_vec(&x);
                let r: Vec<T> = b.iter().zip(&ax).map(|(&p, &q)| p - q).collect();
                let dx = chol.solve(&r);
                x.iter_mut().zip(&dx).for_each(|(xi, &d)| *xi += d);
                res = relative_residual(a, &x, b);
                refinements += 1;
            }
            if !res.is_finite() {
                return Err(Error::Solver(
                    "direct solve produced non-finite values".into(),
                ));
            }
            Ok((x, res))
        }
        LinearSolver::Cg { tol, max_iters } => pcg(a, b, T::lit(tol), max_iters),
    }
}

fn pcg<T: Scalar>(a: &SymmetricBand<T>, b: &[T], tol: T, max_iters: usize) -> Result<(Vec<T>, T)> {
    let n = b.len();
    let inv_diag: Vec<T> = a
        .diagonal()
        .iter()
        .map(|&d| if d > T::zero() { d.recip() } else { T::one() })
        .collect();
    let bnorm = norm(b);
    let mut x = vec![T::zero(); n];
    let mut r = b.to_vec();
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(&r, &m)| r * m).collect();
    let mut p = z.clone();
    let mut rz: T = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
    for iter in 0..max_iters {
        let rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok((x, rel));
        }
        let ap = a.mul_vec(&p);
        let pap: T = p.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        if !(pap > T::zero()) {
            return Err(Error::Solver(format!(
                "CG breakdown after {iter} iterations"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: T = r.iter().zip(&z).map(|(&a, &b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm(&r) / bnorm;
    if rel <= tol {
        Ok((x, rel))
    } else {
        Err(Error::Solver(format!(
            "CG did not converge in {max_iters} iterations (relative residual {rel})"
        )))
    }
}
