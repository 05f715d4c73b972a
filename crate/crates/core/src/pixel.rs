//! Pixel maps aligned one-to-one with Gauss points, plus the conditioning
//! applied around network inference (capping, smoothing, irreversibility).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::GaussGrid;
use crate::scalar::Scalar;

/// Dense row-major scalar map; row 0 is the minimum-y edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid<T> {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<T>,
    pub h_px: T,
}

impl<T: Scalar> PixelGrid<T> {
    pub fn new(rows: usize, cols: usize, values: Vec<T>, h_px: T) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows} x {cols} grid",
                values.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            h_px,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: T, h_px: T) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
            h_px,
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        h_px: T,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self {
            rows,
            cols,
            values,
            h_px,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> T {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut T {
        &mut self.values[r * self.cols + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn cast<U: Scalar>(&self) -> PixelGrid<U> {
        PixelGrid {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| U::lit(v.as_f64())).collect(),
            h_px: U::lit(self.h_px.as_f64()),
        }
    }

    /// Mirror across the vertical axis (columns reversed).
    pub fn flip_lr(&self) -> Self {
        Self::from_fn(self.rows, self.cols, self.h_px, |r, c| {
            self.at(r, self.cols - 1 - c)
        })
    }

    /// Mirror across the horizontal axis (rows reversed).
    pub fn flip_ud(&self) -> Self {
        Self::from_fn(self.rows, self.cols, self.h_px, |r, c| {
            self.at(self.rows - 1 - r, c)
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, self.h_px, |r, c| self.at(c, r))
    }

    /// The `k`-th element of the dihedral group of the square (`k < 8`):
    /// bit 0 flips left-right, bit 1 flips up-down, bit 2 transposes first.
    pub fn dihedral(&self, k: usize) -> Self {
        let mut out = if k & 4 != 0 {
            self.transpose()
        } else {
            self.clone()
        };
        if k & 1 != 0 {
            out = out.flip_lr();
        }
        if k & 2 != 0 {
            out = out.flip_ud();
        }
        out
    }

    /// Plain-text form: a `rows cols h_px` header line followed by one line per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {:e}", self.rows, self.cols, self.h_px)?;
        self.write_rows(&mut w)
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut line = String::new();
        for r in 0..self.rows {
            line.clear();
            for c in 0..self.cols {
                if c > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{:e}", self.at(r, c)));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Shape("empty pixel grid".into()))?
            .map_err(|e| Error::Shape(e.to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Shape(format!("bad pixel grid header {header:?}")));
        }
        let rows: usize = parts[0]
            .parse()
            .map_err(|_| Error::Shape(format!("bad row count {:?}", parts[0])))?;
        let cols: usize = parts[1]
            .parse()
            .map_err(|_| Error::Shape(format!("bad column count {:?}", parts[1])))?;
        let h_px: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Shape(format!("bad spacing {:?}", parts[2])))?;
        let values = read_values(lines, rows * cols)?;
        Self::new(rows, cols, values, T::lit(h_px))
    }
}

pub(crate) fn read_values<T: Scalar, I>(lines: I, expected: usize) -> Result<Vec<T>>
where
    I: Iterator<Item = std::io::Result<String>>,
{
    let mut values = Vec::with_capacity(expected);
    for line in lines {
        let line = line.map_err(|e| Error::Shape(e.to_string()))?;
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Shape(format!("bad value {tok:?}")))?;
            values.push(T::lit(v));
        }
    }
    if values.len() != expected {
        return Err(Error::Shape(format!(
            "expected {expected} values, found {}",
            values.len()
        )));
    }
    Ok(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditioningConfig {
    /// Largest strain energy density passed to the network (N/mm²).
    pub h_cap: f64,
    pub smooth: bool,
    pub smooth_kernel_size: usize,
    pub smooth_sigma: f64,
    pub enforce_irreversibility: bool,
    /// Apply the phase-field irreversibility before smoothing instead of after.
    pub irreversibility_before_smoothing: bool,
    /// Cap the tensile energy before taking the history maximum.
    pub cap_before_history: bool,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            h_cap: 1e5,
            smooth: true,
            smooth_kernel_size: 5,
            smooth_sigma: 2.0,
            enforce_irreversibility: true,
            irreversibility_before_smoothing: false,
            cap_before_history: false,
        }
    }
}

impl ConditioningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_cap > 0.0) {
            return Err(Error::Config(format!(
                "h_cap must be positive, got {}",
                self.h_cap
            )));
        }
        if self.smooth_kernel_size % 2 == 0 {
            return Err(Error::Config(format!(
                "smooth_kernel_size must be odd, got {}",
                self.smooth_kernel_size
            )));
        }
        if !(self.smooth_sigma > 0.0) {
            return Err(Error::Config(format!(
                "smooth_sigma must be positive, got {}",
                self.smooth_sigma
            )));
        }
        Ok(())
    }
}

pub fn gp_to_pixels<T: Scalar>(gp_values: &[T], grid: &GaussGrid<T>) -> Result<PixelGrid<T>> {
    if gp_values.len() != grid.pixel_to_gp.len() {
        return Err(Error::Shape(format!(
            "{} Gauss point values for a {} x {} pixel grid",
            gp_values.len(),
            grid.py,
            grid.px
        )));
    }
    let values = grid.pixel_to_gp.iter().map(|&gp| gp_values[gp]).collect();
    Ok(PixelGrid {
        rows: grid.py,
        cols: grid.px,
        values,
        h_px: grid.h_px,
    })
}

pub fn pixels_to_gp<T: Scalar>(pix: &PixelGrid<T>, grid: &GaussGrid<T>) -> Result<Vec<T>> {
    if pix.rows != grid.py || pix.cols != grid.px {
        return Err(Error::Shape(format!(
            "{} x {} pixel map for a {} x {} Gauss grid",
            pix.rows, pix.cols, grid.py, grid.px
        )));
    }
    let mut out = vec![T::zero(); pix.values.len()];
    for (p, &gp) in grid.pixel_to_gp.iter().enumerate() {
        out[gp] = pix.values[p];
    }
    Ok(out)
}

pub fn cap_field<T: Scalar>(pix: &PixelGrid<T>, h_cap: T) -> PixelGrid<T> {
    pix.map(|v| v.max(T::zero()).min(h_cap))
}

/// Normalized `k x k` Gaussian weights, row-major.
pub fn gaussian_kernel<T: Scalar>(k: usize, sigma: T) -> Vec<T> {
    let r = (k / 2) as isize;
    let two_s2 = T::lit(2.0) * sigma * sigma;
    let mut w = Vec::with_capacity(k * k);
    for i in -r..=r {
        for j in -r..=r {
            let d2 = T::from_isize(i * i + j * j).unwrap();
            w.push((-d2 / two_s2).exp());
        }
    }
    let total: T = w.iter().copied().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Gaussian blur with replicate padding; output shape equals input shape.
pub fn gaussian_smooth<T: Scalar>(pix: &PixelGrid<T>, k: usize, sigma: T) -> Result<PixelGrid<T>> {
    if k % 2 == 0 || !(sigma > T::zero()) {
        return Err(Error::Config(format!(
            "smoothing needs odd k and positive sigma, got k = {k}"
        )));
    }
    let w = gaussian_kernel(k, sigma);
    let r = (k / 2) as isize;
    let (rows, cols) = (pix.rows as isize, pix.cols as isize);
    let mut out = pix.clone();
    for y in 0..rows {
        for x in 0..cols {
            let mut acc = T::zero();
            let mut idx = 0;
            for dy in -r..=r {
                let yy = (y + dy).clamp(0, rows - 1) as usize;
                for dx in -r..=r {
                    let xx = (x + dx).clamp(0, cols - 1) as usize;
                    acc += w[idx] * pix.at(yy, xx);
                    idx += 1;
                }
            }
            *out.at_mut(y as usize, x as usize) = acc;
        }
    }
    Ok(out)
}

pub fn enforce_irreversibility<T: Scalar>(
    current: &PixelGrid<T>,
    previous: &PixelGrid<T>,
) -> Result<PixelGrid<T>> {
    if !current.same_shape(previous) {
        return Err(Error::Shape(format!(
            "{} x {} map against a {} x {} previous map",
            current.rows, current.cols, previous.rows, previous.cols
        )));
    }
    let values = current
        .values
        .iter()
        .zip(&previous.values)
        .map(|(&a, &b)| a.max(b))
        .collect();
    Ok(PixelGrid {
        values,
        ..current.clone()
    })
}
