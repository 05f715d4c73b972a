//! Fully convolutional network of symmetric 5x5 layers.
//!
//! A symmetric kernel acts on an input channel through six "orbit sums"
//! `S_k(x)(p) = sum_{d in orbit k} x(p + d)` (zero outside the grid), so a
//! layer is `Z = W S + b` with `W` of shape `(c_out, 6 c_in)`. The forward
//! pass, the weight gradient and the input gradient are then all plain
//! matrix products, and the transpose of `S_k` is `S_k` itself because every
//! orbit is closed under negation.
//!
//! Layers with fewer outputs than inputs mix channels first and shift after,
//! `Z_o = sum_k S_k(sum_c W[o, 6 c + k] A_c)`, which needs `6 c_out` orbit
//! sums instead of `6 c_in`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{expand_kernel, SymmetricKernel, KERNEL_SIZE, NUM_PARAMS, ORBITS};
use crate::error::{Error, Result};
use crate::pixel::PixelGrid;
use crate::scalar::Scalar;

const PAD: usize = KERNEL_SIZE / 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Channel counts from input to output, e.g. `[1, 24, 24, 24, 1]`.
    pub channels: Vec<usize>,
}

impl Architecture {
    pub fn standard() -> Self {
        Self {
            channels: vec![1, 24, 24, 24, 1],
        }
    }

    /// `layers` convolutions with `width` hidden channels.
    pub fn uniform(layers: usize, width: usize) -> Self {
        let mut channels = vec![1];
        channels.extend(std::iter::repeat_n(width, layers.saturating_sub(1)));
        channels.push(1);
        Self { channels }
    }

    pub fn num_layers(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::Model("need at least one layer".into()));
        }
        if self.channels[0] != 1 || *self.channels.last().unwrap() != 1 {
            return Err(Error::Model(format!(
                "network must map one channel to one channel, got {:?}",
                self.channels
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::Model("zero-width layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    /// `(c_out, 6 c_in)`; column `6 c + k` holds parameter `k` of kernel `(o, c)`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            weights: Array2::zeros((c_out, NUM_PARAMS * c_in)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weights.ncols() / NUM_PARAMS
    }

    pub fn c_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn kernel(&self, out: usize, inp: usize) -> SymmetricKernel<T> {
        let mut params = [T::zero(); NUM_PARAMS];
        for (k, p) in params.iter_mut().enumerate() {
            *p = self.weights[[out, NUM_PARAMS * inp + k]];
        }
        SymmetricKernel::new(params)
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn mixes_first(&self) -> bool {
        self.c_out() < self.c_in()
    }

    /// Rows of the orbit-sum buffer used by the forward pass.
    fn shifted_rows(&self) -> usize {
        NUM_PARAMS * self.c_in().min(self.c_out())
    }

    /// Weights rearranged to `(6 c_out, c_in)`, row `6 o + k`, column `c`.
    fn mixing_matrix(&self) -> Array2<T> {
        Array2::from_shape_fn((NUM_PARAMS * self.c_out(), self.c_in()), |(r, c)| {
            self.weights[[r / NUM_PARAMS, NUM_PARAMS * c + r % NUM_PARAMS]]
        })
    }
}

/// Provenance recorded alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub rng_seed: u64,
    pub epochs_trained: usize,
    pub learning_rate: f64,
    pub final_loss: Option<f64>,
    pub precision: String,
    pub h_cap: Option<f64>,
    /// Hash of the scenario config the model was trained from.
    #[serde(default)]
    pub config_hash: Option<String>,
    #[serde(default)]
    pub tool_version: String,
    pub notes: Vec<String>,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            rng_seed: 0,
            epochs_trained: 0,
            learning_rate: 0.0,
            final_loss: None,
            precision: String::new(),
            h_cap: None,
            config_hash: None,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            notes: vec![
                "per-output-channel biases".into(),
                "zero padding in convolutions, mirror padding in the Laplacian".into(),
                "uniform init in +-(25 fan_in)^-1/2".into(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicnnModel<T> {
    pub architecture: Architecture,
    pub layers: Vec<ConvLayer<T>>,
    /// The network sees `H / input_scale`; 1 feeds raw history values.
    pub input_scale: f64,
    pub meta: ModelMeta,
}

/// Per-layer gradients, same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    pub layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> Gradient<T> {
    pub fn zeros_like(model: &PicnnModel<T>) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| ConvLayer::zeros(l.c_in(), l.c_out()))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.weights.mapv_inplace(|v| v * s);
            l.bias.mapv_inplace(|v| v * s);
        }
    }
}

fn flatten<T: Scalar>(layers: &[ConvLayer<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for l in layers {
        out.extend(l.weights.iter().copied());
        out.extend(l.bias.iter().copied());
    }
    out
}

/// Intermediate arrays kept for the backward pass, plus scratch buffers.
///
/// A cache can be reused across calls; buffers are only reallocated when the
/// input shape or the architecture changes.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    pub rows: usize,
    pub cols: usize,
    /// Orbit sums of each layer's input, `(6 c_in, P)`.
    sums: Vec<Array2<T>>,
    /// Activated output of each layer, `(c_out, P)`.
    acts: Vec<Array2<T>>,
    /// Gradient with respect to each layer's pre-activation, `(c_out, P)`.
    dz: Vec<Array2<T>>,
    back: Vec<Array2<T>>,
    pad: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn new() -> Self {
        Self {
            rows: 0,
            cols: 0,
            sums: Vec::new(),
            acts: Vec::new(),
            dz: Vec::new(),
            back: Vec::new(),
            pad: Vec::new(),
        }
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap().as_slice().unwrap()
    }

    fn prepare(&mut self, layers: &[ConvLayer<T>], rows: usize, cols: usize) {
        let p = rows * cols;
        let fits = self.rows == rows
            && self.cols == cols
            && self.sums.len() == layers.len()
            && layers
                .iter()
                .zip(&self.sums)
                .all(|(l, s)| s.nrows() == l.shifted_rows())
            && layers
                .iter()
                .zip(&self.acts)
                .all(|(l, a)| a.nrows() == l.c_out());
        if fits {
            return;
        }
        self.rows = rows;
        self.cols = cols;
        self.sums = layers
            .iter()
            .map(|l| Array2::zeros((l.shifted_rows(), p)))
            .collect();
        self.acts = layers
            .iter()
            .map(|l| Array2::zeros((l.c_out(), p)))
            .collect();
        self.dz = layers
            .iter()
            .map(|l| Array2::zeros((l.c_out(), p)))
            .collect();
        self.back = layers
            .iter()
            .map(|l| Array2::zeros((l.shifted_rows(), p)))
            .collect();
        self.pad = vec![T::zero(); (rows + 2 * PAD) * (cols + 2 * PAD)];
    }
}

/// Writes the six orbit sums of every channel of `x` into `out` (`6 c x P`).
fn orbit_sums<T: Scalar>(
    x: ArrayView2<T>,
    rows: usize,
    cols: usize,
    pad: &mut [T],
    out: &mut Array2<T>,
) {
    let pc = cols + 2 * PAD;
    for (ch, xrow) in x.outer_iter().enumerate() {
        let xs = xrow.as_slice().expect("contiguous channel");
        for r in 0..rows {
            pad[(r + PAD) * pc + PAD..][..cols].copy_from_slice(&xs[r * cols..][..cols]);
        }
        for (k, orbit) in ORBITS.iter().enumerate() {
            let mut dst_row = out.row_mut(NUM_PARAMS * ch + k);
            let dst = dst_row.as_slice_mut().expect("contiguous output");
            accumulate_shifts(pad, pc, rows, cols, orbit, dst, true);
        }
    }
}

#[inline]
fn accumulate_shifts<T: Scalar>(
    pad: &[T],
    pc: usize,
    rows: usize,
    cols: usize,
    orbit: &[(isize, isize)],
    dst: &mut [T],
    overwrite: bool,
) {
    for r in 0..rows {
        let d = &mut dst[r * cols..][..cols];
        if overwrite {
            d.iter_mut().for_each(|v| *v = T::zero());
        }
        for &(dy, dx) in orbit {
            let start =
                (r as isize + PAD as isize + dy) as usize * pc + (PAD as isize + dx) as usize;
            let s = &pad[start..start + cols];
            for (a, &b) in d.iter_mut().zip(s) {
                *a += b;
            }
        }
    }
}

/// Transpose of [`orbit_sums`]: folds `g` (`6 c x P`) back into `out` (`c x P`).
fn orbit_adjoint<T: Scalar>(
    g: ArrayView2<T>,
    rows: usize,
    cols: usize,
    pad: &mut [T],
    out: &mut Array2<T>,
) {
    let pc = cols + 2 * PAD;
    out.fill(T::zero());
    for (ch, mut dst_row) in out.outer_iter_mut().enumerate() {
        let dst = dst_row.as_slice_mut().unwrap();
        for (k, orbit) in ORBITS.iter().enumerate() {
            let src_row = g.row(NUM_PARAMS * ch + k);
            let src = src_row.as_slice().expect("contiguous gradient");
            for r in 0..rows {
                pad[(r + PAD) * pc + PAD..][..cols].copy_from_slice(&src[r * cols..][..cols]);
            }
            accumulate_shifts(pad, pc, rows, cols, orbit, dst, false);
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

impl<T: Scalar> PicnnModel<T> {
    /// Uniform initialization in `[-s, s]`, `s = (25 fan_in)^(-1/2)`, for weights and biases.
    pub fn new(architecture: Architecture, seed: u64) -> Result<Self> {
        Self::with_init_scale(architecture, seed, None)
    }

    /// As [`PicnnModel::new`] with an optional fixed bound replacing the fan-in rule.
    pub fn with_init_scale(
        architecture: Architecture,
        seed: u64,
        init_scale: Option<&InitScale>,
    ) -> Result<Self> {
        architecture.validate()?;
        if let Some(s) = init_scale {
            s.validate(architecture.num_layers())
                .map_err(Error::Model)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(architecture.num_layers());
        for (l, w) in architecture.channels.windows(2).enumerate() {
            let (c_in, c_out) = (w[0], w[1]);
            let s = init_scale
                .map(|s| s.layer(l))
                .unwrap_or(1.0 / ((KERNEL_SIZE * KERNEL_SIZE * c_in) as f64).sqrt());
            let mut layer = ConvLayer::zeros(c_in, c_out);
            for v in layer.weights.iter_mut() {
                *v = T::lit(rng.random_range(-s..s));
            }
            for v in layer.bias.iter_mut() {
                *v = T::lit(rng.random_range(-s..s));
            }
            layers.push(layer);
        }
        let meta = ModelMeta {
            rng_seed: seed,
            precision: T::NAME.into(),
            ..ModelMeta::default()
        };
        Ok(Self {
            architecture,
            layers,
            input_scale: 1.0,
            meta,
        })
    }

    /// Sets the divisor applied to history maps before the first layer.
    pub fn with_input_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Model(format!(
                "input scale must be positive, got {scale}"
            )));
        }
        self.input_scale = scale;
        Ok(self)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(ConvLayer::num_params).sum()
    }

    pub fn flat_params(&self) -> Vec<T> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Scalar>(&self) -> PicnnModel<U> {
        PicnnModel {
            architecture: self.architecture.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weights: l.weights.mapv(|v| U::lit(v.as_f64())),
                    bias: l.bias.mapv(|v| U::lit(v.as_f64())),
                })
                .collect(),
            input_scale: self.input_scale,
            meta: self.meta.clone(),
        }
    }

    /// Phase-field prediction with the same shape as `h_map`.
    pub fn forward(&self, h_map: &PixelGrid<T>) -> Result<PixelGrid<T>> {
        let cache = self.forward_cached(h_map)?;
        PixelGrid::new(h_map.rows, h_map.cols, cache.output().to_vec(), h_map.h_px)
    }

    pub fn forward_cached(&self, h_map: &PixelGrid<T>) -> Result<ForwardCache<T>> {
        let mut cache = ForwardCache::new();
        self.forward_into(h_map, &mut cache)?;
        Ok(cache)
    }

    /// Forward pass reusing the buffers of `cache`.
    pub fn forward_into(&self, h_map: &PixelGrid<T>, cache: &mut ForwardCache<T>) -> Result<()> {
        let (rows, cols) = (h_map.rows, h_map.cols);
        cache.prepare(&self.layers, rows, cols);
        let input = ArrayView2::from_shape((1, rows * cols), &h_map.values).expect("shape");
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = cache.acts.split_at_mut(l);
            let x = if l == 0 { input } else { before[l - 1].view() };
            let z = &mut after[0];
            if layer.mixes_first() {
                general_mat_mul(
                    T::one(),
                    &layer.mixing_matrix(),
                    &x,
                    T::zero(),
                    &mut cache.sums[l],
                );
                orbit_adjoint(cache.sums[l].view(), rows, cols, &mut cache.pad, z);
            } else {
                orbit_sums(x, rows, cols, &mut cache.pad, &mut cache.sums[l]);
                if l == 0 && self.input_scale != 1.0 {
                    // Scaling the sums rather than the input keeps the backward pass unchanged.
                    let inv = T::lit(1.0 / self.input_scale);
                    cache.sums[0].mapv_inplace(|v| v * inv);
                }
                general_mat_mul(T::one(), &layer.weights, &cache.sums[l], T::zero(), z);
            }
            for (mut row, &b) in z.outer_iter_mut().zip(layer.bias.iter()) {
                if l == last {
                    row.mapv_inplace(|v| sigmoid(v + b));
                } else {
                    row.mapv_inplace(|v| (v + b).act_tanh());
                }
            }
        }
        if cache.acts[last].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "network output".into(),
                increment: None,
            });
        }
        Ok(())
    }

    /// Accumulates into `grad` the parameter gradient for an upstream
    /// gradient `d_out` with respect to the network output.
    pub fn backward(
        &self,
        cache: &mut ForwardCache<T>,
        d_out: &[T],
        grad: &mut Gradient<T>,
    ) -> Result<()> {
        let (rows, cols) = (cache.rows, cache.cols);
        let p = rows * cols;
        if d_out.len() != p {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values for {p} pixels",
                d_out.len()
            )));
        }
        let last = self.layers.len() - 1;
        {
            let phi = cache.acts[last].as_slice().unwrap();
            let dz = cache.dz[last].as_slice_mut().unwrap();
            for ((d, &y), &g) in dz.iter_mut().zip(phi).zip(d_out) {
                *d = g * y * (T::one() - y);
            }
        }
        for l in (0..=last).rev() {
            let layer = &self.layers[l];
            let g = &mut grad.layers[l];
            let (lower, upper) = cache.dz.split_at_mut(l);
            let dz = &upper[0];
            g.bias += &dz.sum_axis(Axis(1));
            if layer.mixes_first() {
                // The first layer has one input channel and never mixes first.
                let a = &cache.acts[l - 1];
                let shifted = &mut cache.back[l];
                orbit_sums(dz.view(), rows, cols, &mut cache.pad, shifted);
                let mut dwm = Array2::zeros((NUM_PARAMS * layer.c_out(), layer.c_in()));
                general_mat_mul(T::one(), &*shifted, &a.t(), T::zero(), &mut dwm);
                for ((r, c), &v) in dwm.indexed_iter() {
                    g.weights[[r / NUM_PARAMS, NUM_PARAMS * c + r % NUM_PARAMS]] += v;
                }
                general_mat_mul(
                    T::one(),
                    &layer.mixing_matrix().t(),
                    &*shifted,
                    T::zero(),
                    &mut lower[l - 1],
                );
            } else {
                general_mat_mul(T::one(), dz, &cache.sums[l].t(), T::one(), &mut g.weights);
                if l == 0 {
                    break;
                }
                general_mat_mul(
                    T::one(),
                    &layer.weights.t(),
                    dz,
                    T::zero(),
                    &mut cache.back[l],
                );
                orbit_adjoint(
                    cache.back[l].view(),
                    rows,
                    cols,
                    &mut cache.pad,
                    &mut lower[l - 1],
                );
            }
            ndarray::Zip::from(&mut lower[l - 1])
                .and(&cache.acts[l - 1])
                .for_each(|d, &y| *d *= T::one() - y * y);
        }
        for v in grad
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
        {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameter gradient".into(),
                    increment: None,
                });
            }
        }
        Ok(())
    }

    /// Reference forward pass with explicitly expanded 5x5 kernels and direct loops.
    pub fn forward_direct(&self, h_map: &PixelGrid<T>) -> PixelGrid<T> {
        let (rows, cols) = (h_map.rows, h_map.cols);
        let inv = T::lit(1.0 / self.input_scale);
        let mut chans: Vec<Vec<T>> = vec![h_map.values.iter().map(|&v| v * inv).collect()];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.c_out());
            for o in 0..layer.c_out() {
                let mut z = vec![layer.bias[o]; rows * cols];
                for (c, x) in chans.iter().enumerate() {
                    let k = expand_kernel(&layer.kernel(o, c).params);
                    for r in 0..rows {
                        for q in 0..cols {
                            let mut acc = T::zero();
                            for (i, krow) in k.iter().enumerate() {
                                let rr = r as isize + i as isize - PAD as isize;
                                if rr < 0 || rr >= rows as isize {
                                    continue;
                                }
                                for (j, &w) in krow.iter().enumerate() {
                                    let cc = q as isize + j as isize - PAD as isize;
                                    if cc < 0 || cc >= cols as isize {
                                        continue;
                                    }
                                    acc += w * x[rr as usize * cols + cc as usize];
                                }
                            }
                            z[r * cols + q] += acc;
                        }
                    }
                }
                let act: Vec<T> = if l == last {
                    z.into_iter().map(sigmoid).collect()
                } else {
                    z.into_iter().map(T::act_tanh).collect()
                };
                next.push(act);
            }
            chans = next;
        }
        PixelGrid {
            rows,
            cols,
            values: chans.pop().unwrap(),
            h_px: h_map.h_px,
        }
    }
}

/// Uniform weight-initialization bound: one value for every layer or one per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitScale {
    All(f64),
    PerLayer(Vec<f64>),
}

impl InitScale {
    pub fn layer(&self, l: usize) -> f64 {
        match self {
            InitScale::All(s) => *s,
            InitScale::PerLayer(v) => v[l],
        }
    }

    pub fn validate(&self, layers: usize) -> std::result::Result<(), String> {
        let values = match self {
            InitScale::All(s) => std::slice::from_ref(s),
            InitScale::PerLayer(v) if v.len() != layers => {
                return Err(format!(
                    "init scale lists {} layers, the network has {layers}",
                    v.len()
                ));
            }
            InitScale::PerLayer(v) => v.as_slice(),
        };
        match values.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            Some(s) => Err(format!("init scale must be positive, got {s}")),
            None => Ok(()),
        }
    }
}
