//! Residual loss, its parameter gradient and the Adam training loop.

use serde::{Deserialize, Serialize};

use super::model::{ForwardCache, Gradient, InitScale, PicnnModel};
use super::stencil::{laplacian_adjoint, pde_residual, LaplacianStencil, StencilKind};
use crate::elasticity::MaterialParams;
use crate::error::{Error, Result};
use crate::pixel::{cap_field, PixelGrid};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Euclidean norm of all residuals of the batch.
    #[default]
    L2,
    /// Mean of squared residuals.
    MeanSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub rng_seed: u64,
    /// Fixed uniform init bound; `None` uses `(25 fan_in)^-1/2` per layer.
    pub init_scale: Option<InitScale>,
    pub loss: LossKind,
    pub stencil: StencilKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 42,
            init_scale: None,
            loss: LossKind::L2,
            stencil: StencilKind::K9Star,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("training.epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "training.learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("training.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!(
                "training.adam_eps must be positive, got {}",
                self.adam_eps
            ));
        }
        if let Some(s) = &self.init_scale {
            // The layer count is checked against the architecture at model construction.
            let n = match s {
                InitScale::All(_) => 1,
                InitScale::PerLayer(v) => v.len(),
            };
            s.validate(n)
                .map_err(|m| Error::Config(format!("training.{m}")))?;
        }
        Ok(())
    }
}

/// Scalar loss of a batch of residual maps.
pub fn loss<T: Scalar>(residuals: &[PixelGrid<T>], kind: LossKind) -> T {
    let sq: T = residuals
        .iter()
        .flat_map(|r| r.values.iter())
        .map(|&v| v * v)
        .sum();
    match kind {
        LossKind::L2 => sq.sqrt(),
        LossKind::MeanSquared => {
            let n: usize = residuals.iter().map(|r| r.values.len()).sum();
            if n == 0 {
                T::zero()
            } else {
                sq / T::from_usize(n).unwrap()
            }
        }
    }
}

/// Residual loss over a batch together with its gradient.
///
/// Samples are processed one at a time so only one forward cache is alive.
/// For the 2-norm the gradient of `sum R^2 / 2` is accumulated and divided by
/// the loss at the end; a zero loss yields a zero gradient.
pub fn loss_and_gradient<T: Scalar>(
    model: &PicnnModel<T>,
    batch: &[PixelGrid<T>],
    mat: &MaterialParams<T>,
    kind: StencilKind,
    loss_kind: LossKind,
) -> Result<(T, Gradient<T>)> {
    loss_and_gradient_with(model, batch, mat, kind, loss_kind, &mut ForwardCache::new())
}

/// As [`loss_and_gradient`], reusing the buffers of `cache`.
pub fn loss_and_gradient_with<T: Scalar>(
    model: &PicnnModel<T>,
    batch: &[PixelGrid<T>],
    mat: &MaterialParams<T>,
    kind: StencilKind,
    loss_kind: LossKind,
    cache: &mut ForwardCache<T>,
) -> Result<(T, Gradient<T>)> {
    let mut grad = Gradient::zeros_like(model);
    let mut sq = T::zero();
    let total: usize = batch.iter().map(|b| b.values.len()).sum();
    let a = mat.gc / mat.lc;
    let b = mat.gc * mat.lc;
    let two = T::lit(2.0);
    for h_map in batch {
        let stencil = LaplacianStencil::new(kind, h_map.h_px);
        model.forward_into(h_map, cache)?;
        let phi = PixelGrid {
            values: cache.output().to_vec(),
            ..h_map.clone()
        };
        let r = pde_residual(&phi, h_map, mat, &stencil)?;
        sq += r.values.iter().map(|&v| v * v).sum::<T>();
        // d(sum R^2 / 2)/d phi = (a + 2H) R - b L^T R
        let lt = laplacian_adjoint(&r, &stencil);
        let d_phi: Vec<T> = r
            .values
            .iter()
            .zip(&h_map.values)
            .zip(&lt.values)
            .map(|((&rv, &h), &l)| (a + two * h) * rv - b * l)
            .collect();
        model.backward(cache, &d_phi, &mut grad)?;
    }
    let value = match loss_kind {
        LossKind::L2 => {
            let l = sq.sqrt();
            if l > T::zero() {
                grad.scale(T::one() / l);
            }
            l
        }
        LossKind::MeanSquared => {
            let n = T::from_usize(total.max(1)).unwrap();
            grad.scale(two / n);
            sq / n
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite {
            what: "training loss".into(),
            increment: None,
        });
    }
    Ok((value, grad))
}

/// Loss only, for evaluation.
pub fn evaluate_loss<T: Scalar>(
    model: &PicnnModel<T>,
    batch: &[PixelGrid<T>],
    mat: &MaterialParams<T>,
    kind: StencilKind,
    loss_kind: LossKind,
) -> Result<T> {
    let mut residuals = Vec::with_capacity(batch.len());
    for h_map in batch {
        let phi = model.forward(h_map)?;
        residuals.push(pde_residual(
            &phi,
            h_map,
            mat,
            &LaplacianStencil::new(kind, h_map.h_px),
        )?);
    }
    Ok(loss(&residuals, loss_kind))
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, num_params: usize) -> Self {
        Self {
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            lr: cfg.learning_rate,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// Bias-corrected update of `params` in place. Moments are kept in f64.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i].as_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = T::lit(params[i].as_f64() - self.lr * m_hat / (v_hat.sqrt() + self.eps));
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Loss before each update, one entry per epoch.
    pub loss_history: Vec<f64>,
    /// Loss of the returned parameters.
    pub final_loss: f64,
}

/// Trains `model` in place on `batch`; inputs are capped at `h_cap` first.
///
/// `observer` sees `(epoch, loss)` after every epoch.
pub fn train<T: Scalar>(
    model: &mut PicnnModel<T>,
    batch: &[PixelGrid<T>],
    mat: &MaterialParams<T>,
    cfg: &TrainConfig,
    h_cap: f64,
    mut observer: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if batch.is_empty() {
        return Err(Error::Shape("empty training batch".into()));
    }
    if batch.iter().any(|b| !b.same_shape(&batch[0])) {
        return Err(Error::Shape("training maps differ in shape".into()));
    }
    let batch: Vec<PixelGrid<T>> = batch.iter().map(|b| cap_field(b, T::lit(h_cap))).collect();
    let mut adam = Adam::new(cfg, model.num_params());
    let mut params = model.flat_params();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut cache = ForwardCache::new();
    for epoch in 0..cfg.epochs {
        let (value, grad) =
            match loss_and_gradient_with(model, &batch, mat, cfg.stencil, cfg.loss, &mut cache) {
                Ok(x) => x,
                Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
        let value = value.as_f64();
        history.push(value);
        observer(epoch + 1, value);
        adam.step(&mut params, &grad.flat());
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: value,
            });
        }
        model.set_flat_params(&params);
    }
    let final_loss = if cfg.epochs == 0 {
        f64::NAN
    } else {
        evaluate_loss(model, &batch, mat, cfg.stencil, cfg.loss)?.as_f64()
    };
    model.meta.epochs_trained += cfg.epochs;
    model.meta.learning_rate = cfg.learning_rate;
    model.meta.final_loss = Some(final_loss);
    model.meta.h_cap = Some(h_cap);
    Ok(TrainReport {
        loss_history: history,
        final_loss,
    })
}


#[cfg(test)]
mod gradient_tests {
    use super::*;
    use crate::picnn::model::Architecture;
    use rand::{Rng, SeedableRng};

    #[test]
    fn matches_central_differences() {
        let mat = MaterialParams::new(121154.0, 80770.0, 2.7, 0.06).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = PixelGrid::from_fn(12, 12, 0.005, |_, _| 50.0 * rng.random::<f64>());
        for arch in [
            Architecture {
                channels: vec![1, 4, 1],
            },
            Architecture {
                channels: vec![1, 3, 4, 2, 1],
            },
        ] {
            let mut m = PicnnModel::<f64>::new(arch, 2).unwrap();
            let batch = [x.clone(), x.transpose().map(|v| 0.5 * v)];
            for kind in [LossKind::L2, LossKind::MeanSquared] {
                let (_, g) =
                    loss_and_gradient(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
                let g = g.flat();
                let p0 = m.flat_params();
                let mut worst = 0.0f64;
                for i in 0..p0.len() {
                    let mut p = p0.clone();
                    p[i] += 1e-5;
                    m.set_flat_params(&p);
                    let up = evaluate_loss(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
                    p[i] -= 2e-5;
                    m.set_flat_params(&p);
                    let down = evaluate_loss(&m, &batch, &mat, StencilKind::K9Star, kind).unwrap();
                    let fd = (up - down) / 2e-5;
                    worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8));
                }
                m.set_flat_params(&p0);
                assert!(worst < 1e-4, "{kind:?}: {worst}");
            }
        }
    }
}
