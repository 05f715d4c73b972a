//! Versioned JSON model files and loss-history CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::kernel::NUM_PARAMS;
use super::model::{Architecture, ConvLayer, ModelMeta, PicnnModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "picnn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    c_in: usize,
    c_out: usize,
    activation: String,
    /// `kernels[o][c]` holds the six parameters of the kernel from input `c` to output `o`.
    kernels: Vec<Vec<[f64; NUM_PARAMS]>>,
    bias: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    architecture: Architecture,
    kernel_size: usize,
    conv_padding: String,
    #[serde(default = "unit_scale")]
    input_scale: f64,
    layers: Vec<LayerFile>,
    meta: ModelMeta,
}

fn unit_scale() -> f64 {
    1.0
}

pub fn model_to_json<T: Scalar>(model: &PicnnModel<T>) -> String {
    let last = model.layers.len() - 1;
    let layers = model
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| LayerFile {
            c_in: layer.c_in(),
            c_out: layer.c_out(),
            activation: if l == last { "sigmoid" } else { "tanh" }.into(),
            kernels: (0..layer.c_out())
                .map(|o| {
                    (0..layer.c_in())
                        .map(|c| layer.kernel(o, c).params.map(T::as_f64))
                        .collect()
                })
                .collect(),
            bias: layer.bias.iter().map(|v| v.as_f64()).collect(),
        })
        .collect();
    let file = ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        architecture: model.architecture.clone(),
        kernel_size: 5,
        conv_padding: "zero".into(),
        input_scale: model.input_scale,
        layers,
        meta: model.meta.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_json<T: Scalar>(text: &str) -> Result<PicnnModel<T>> {
    let file: ModelFile = serde_json::from_str(text)
        .map_err(|e| Error::Model(format!("malformed model file: {e}")))?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Model(format!(
            "unknown model format {:?}",
            file.format
        )));
    }
    if file.version != MODEL_VERSION {
        return Err(Error::Model(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            file.version
        )));
    }
    if file.kernel_size != 5 || file.conv_padding != "zero" {
        return Err(Error::Model(
            "only 5x5 zero-padded kernels are supported".into(),
        ));
    }
    file.architecture.validate()?;
    let ch = &file.architecture.channels;
    if file.layers.len() != ch.len() - 1 {
        return Err(Error::Model(format!(
            "architecture lists {} layers but file holds {}",
            ch.len() - 1,
            file.layers.len()
        )));
    }
    let last = file.layers.len() - 1;
    let mut layers = Vec::with_capacity(file.layers.len());
    for (l, lf) in file.layers.iter().enumerate() {
        let (c_in, c_out) = (ch[l], ch[l + 1]);
        if lf.c_in != c_in || lf.c_out != c_out {
            return Err(Error::Model(format!(
                "layer {l} is {} -> {} but the channel plan says {c_in} -> {c_out}",
                lf.c_in, lf.c_out
            )));
        }
        let expected_act = if l == last { "sigmoid" } else { "tanh" };
        if lf.activation != expected_act {
            return Err(Error::Model(format!(
                "layer {l} activation {:?}, expected {expected_act:?}",
                lf.activation
            )));
        }
        if lf.kernels.len() != c_out
            || lf.kernels.iter().any(|k| k.len() != c_in)
            || lf.bias.len() != c_out
        {
            return Err(Error::Model(format!(
                "layer {l} parameter arrays do not match {c_in} -> {c_out}"
            )));
        }
        let weights = Array2::from_shape_fn((c_out, NUM_PARAMS * c_in), |(o, j)| {
            T::lit(lf.kernels[o][j / NUM_PARAMS][j % NUM_PARAMS])
        });
        let bias = Array1::from_iter(lf.bias.iter().map(|&b| T::lit(b)));
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Model(format!(
                "layer {l} holds non-finite parameters"
            )));
        }
        layers.push(ConvLayer { weights, bias });
    }
    PicnnModel {
        architecture: file.architecture,
        layers,
        input_scale: 1.0,
        meta: file.meta,
    }
    .with_input_scale(file.input_scale)
}

pub fn save_model<T: Scalar>(model: &PicnnModel<T>, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<PicnnModel<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text).map_err(|e| match e {
        Error::Model(m) => Error::Model(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loss history as `epoch,loss` rows. `provenance` lines are written first as `# ` comments.
pub fn write_loss_csv(history: &[f64], provenance: &[String], path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(history.len() * 24);
    for line in provenance {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "epoch,loss").unwrap();
    for (i, l) in history.iter().enumerate() {
        writeln!(out, "{},{:e}", i + 1, l).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pixel::PixelGrid;

    #[test]
    fn round_trip_is_bitwise() {
        let m = PicnnModel::<f64>::new(Architecture::standard(), 9)
            .unwrap()
            .with_input_scale(123.5)
            .unwrap();
        let back: PicnnModel<f64> = model_from_json(&model_to_json(&m)).unwrap();
        assert_eq!(back, m);
        let x = PixelGrid::from_fn(10, 10, 0.01, |r, c| (r + 2 * c) as f64 * 100.0);
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn tampered_channel_plan_is_rejected() {
        let m = PicnnModel::<f64>::new(Architecture::uniform(2, 3), 1).unwrap();
        let text = model_to_json(&m).replacen("\"c_out\": 3", "\"c_out\": 4", 1);
        assert!(matches!(
            model_from_json::<f64>(&text),
            Err(Error::Model(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&model_to_json(&m)).unwrap();
        v["architecture"]["channels"] = serde_json::json!([1, 5, 1]);
        assert!(model_from_json::<f64>(&v.to_string()).is_err());
        v["architecture"]["channels"] = serde_json::json!([1, 3, 1]);
        v["version"] = serde_json::json!(99);
        assert!(model_from_json::<f64>(&v.to_string()).is_err());
    }
}
