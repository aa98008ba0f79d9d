//! Symmetric per-tensor post-training weight quantization.
//!
//! `scale = max|w| / (2^(b-1) - 1)` (or 1 for an all-zero tensor) and
//! `q = clamp(round(w / scale), -(2^(b-1) - 1), 2^(b-1) - 1)` with rounding
//! half away from zero. The most negative code `-2^(b-1)` is never produced,
//! so negation stays in range. Biases are left in full precision.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::tensor::{evaluate_with, Dataset, Model, ModelDesc};

pub const MIN_BITWIDTH: u32 = 2;
pub const MAX_BITWIDTH: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantSpec {
    bitwidth: u32,
}

impl QuantSpec {
    pub fn new(bitwidth: u32) -> Result<Self> {
        if !(MIN_BITWIDTH..=MAX_BITWIDTH).contains(&bitwidth) {
            return Err(Error::Quant(format!(
                "bitwidth {bitwidth} outside [{MIN_BITWIDTH}, {MAX_BITWIDTH}]"
            )));
        }
        Ok(Self { bitwidth })
    }

    pub fn bitwidth(self) -> u32 {
        self.bitwidth
    }

    /// Largest representable magnitude, `2^(b-1) - 1`.
    pub fn qmax(self) -> i32 {
        (1i32 << (self.bitwidth - 1)) - 1
    }
}

pub fn calibrate_scale(weights: &[f64], spec: QuantSpec) -> f64 {
    let max_abs = weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    if max_abs == 0.0 {
        1.0
    } else {
        max_abs / f64::from(spec.qmax())
    }
}

/// One scale per weight tensor, in layer order.
pub fn calibrate_scales(model: &Model, spec: QuantSpec) -> Vec<f64> {
    model
        .weight_tensors()
        .map(|t| calibrate_scale(t.data(), spec))
        .collect()
}

pub fn quantize_value(w: f64, scale: f64, spec: QuantSpec) -> i32 {
    let qmax = f64::from(spec.qmax());
    // f64::round is half away from zero.
    (w / scale).round().clamp(-qmax, qmax) as i32
}

pub fn quantize_tensor(weights: &[f64], scale: f64, spec: QuantSpec) -> Vec<i32> {
    weights
        .iter()
        .map(|&w| quantize_value(w, scale, spec))
        .collect()
}

pub fn dequantize_tensor(values: &[i32], scale: f64) -> Vec<f64> {
    values.iter().map(|&q| f64::from(q) * scale).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub values: Vec<i32>,
    pub scale: f64,
}

/// Integer weight images plus the model they came from. The held model
/// carries the dequantized weights (`q * scale`) and the original biases.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    spec: QuantSpec,
    tensors: Vec<QuantizedTensor>,
    model: Model,
}

impl QuantizedModel {
    pub fn from_parts(
        spec: QuantSpec,
        tensors: Vec<QuantizedTensor>,
        skeleton: &Model,
    ) -> Result<Self> {
        let qmax = spec.qmax();
        for (i, (t, w)) in tensors.iter().zip(skeleton.weight_tensors()).enumerate() {
            if t.values.len() != w.len() {
                return Err(Error::Shape(format!(
                    "tensor {i}: {} quantized values for {} weights",
                    t.values.len(),
                    w.len()
                )));
            }
            if !(t.scale > 0.0 && t.scale.is_finite()) {
                return Err(Error::Quant(format!(
                    "tensor {i}: scale {} must be > 0",
                    t.scale
                )));
            }
            if let Some(q) = t.values.iter().find(|q| q.abs() > qmax) {
                return Err(Error::Quant(format!(
                    "tensor {i}: value {q} outside +-{qmax}"
                )));
            }
        }
        let model = skeleton.with_weights(
            tensors
                .iter()
                .map(|t| dequantize_tensor(&t.values, t.scale))
                .collect(),
        )?;
        Ok(Self {
            spec,
            tensors,
            model,
        })
    }

    pub fn spec(&self) -> QuantSpec {
        self.spec
    }

    pub fn tensors(&self) -> &[QuantizedTensor] {
        &self.tensors
    }

    pub fn scales(&self) -> Vec<f64> {
        self.tensors.iter().map(|t| t.scale).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// The model with weights replaced by `q * scale`.
    pub fn dequantized(&self) -> &Model {
        &self.model
    }
}

pub fn quantize_model(model: &Model, spec: QuantSpec) -> Result<QuantizedModel> {
    let scales = calibrate_scales(model, spec);
    let tensors = model
        .weight_tensors()
        .zip(scales)
        .map(|(t, scale)| QuantizedTensor {
            values: quantize_tensor(t.data(), scale, spec),
            scale,
        })
        .collect();
    QuantizedModel::from_parts(spec, tensors, model)
}

/// Convenience wrapper that validates the bitwidth first.
pub fn quantize_model_bits(model: &Model, bitwidth: u32) -> Result<QuantizedModel> {
    quantize_model(model, QuantSpec::new(bitwidth)?)
}

pub fn quantized_accuracy(qmodel: &QuantizedModel, dataset: &Dataset) -> Result<f64> {
    quantized_accuracy_with(qmodel, dataset, Execution::default())
}

pub fn quantized_accuracy_with(
    qmodel: &QuantizedModel,
    dataset: &Dataset,
    exec: Execution,
) -> Result<f64> {
    evaluate_with(&qmodel.model, dataset, exec)
}

pub const QUANTIZED_FORMAT: &str = "qnnguard-quantized-v1";

/// JSON header of a serialized quantized model. The companion blob holds
/// every value as `ceil(b/8)` little-endian two's-complement bytes, tensors
/// concatenated in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizedHeader {
    pub format: String,
    pub bitwidth: u32,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
    pub model: ModelDesc,
    pub biases: Vec<Vec<f64>>,
}

fn bytes_per_value(bitwidth: u32) -> usize {
    bitwidth.div_ceil(8) as usize
}

impl QuantizedModel {
    pub fn header(&self) -> QuantizedHeader {
        QuantizedHeader {
            format: QUANTIZED_FORMAT.into(),
            bitwidth: self.spec.bitwidth(),
            scales: self.scales(),
            counts: self.tensors.iter().map(|t| t.values.len()).collect(),
            model: self.model.desc(),
            biases: self
                .model
                .layers()
                .iter()
                .map(|l| l.bias().data().to_vec())
                .collect(),
        }
    }

    pub fn blob(&self) -> Vec<u8> {
        let n = bytes_per_value(self.spec.bitwidth());
        let mut out = Vec::with_capacity(self.param_count() * n);
        for t in &self.tensors {
            for &q in &t.values {
                out.extend_from_slice(&q.to_le_bytes()[..n]);
            }
        }
        out
    }

    pub fn from_header_blob(
        header: &QuantizedHeader,
        blob: &[u8],
        blob_path: &Path,
    ) -> Result<Self> {
        if header.format != QUANTIZED_FORMAT {
            return Err(Error::Quant(format!("unknown format {:?}", header.format)));
        }
        let spec = QuantSpec::new(header.bitwidth)?;
        if header.scales.len() != header.counts.len()
            || header.biases.len() != header.model.layers.len()
        {
            return Err(Error::Shape(
                "header tensor lists disagree in length".into(),
            ));
        }
        let n = bytes_per_value(spec.bitwidth());
        let total: usize = header.counts.iter().sum();
        if blob.len() < total * n {
            return Err(Error::Truncated {
                path: blob_path.to_path_buf(),
                needed: total * n,
                found: blob.len(),
            });
        }
        if blob.len() > total * n {
            return Err(Error::TrailingBytes {
                path: blob_path.to_path_buf(),
                extra: blob.len() - total * n,
            });
        }
        let mut chunks = blob.chunks_exact(n);
        let tensors = header
            .counts
            .iter()
            .zip(&header.scales)
            .map(|(&count, &scale)| {
                let values = (&mut chunks)
                    .take(count)
                    .map(|c| {
                        let mut b = [0u8; 4];
                        b[..n].copy_from_slice(c);
                        // sign-extend from n bytes
                        let shift = 32 - 8 * n as u32;
                        (i32::from_le_bytes(b) << shift) >> shift
                    })
                    .collect();
                QuantizedTensor { values, scale }
            })
            .collect();
        let skeleton = skeleton_from(&header.model, &header.biases)?;
        Self::from_parts(spec, tensors, &skeleton)
    }

    pub fn save(&self, header_path: &Path, blob_path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.header()).expect("header serializes");
        s.push('\n');
        fs::write(header_path, s).map_err(|e| Error::io(header_path, e))?;
        fs::write(blob_path, self.blob()).map_err(|e| Error::io(blob_path, e))
    }

    pub fn load(header_path: &Path, blob_path: &Path) -> Result<Self> {
        let hb = fs::read(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: QuantizedHeader =
            serde_json::from_slice(&hb).map_err(|source| Error::Json {
                path: header_path.to_path_buf(),
                source,
            })?;
        let blob = fs::read(blob_path).map_err(|e| Error::io(blob_path, e))?;
        Self::from_header_blob(&header, &blob, blob_path)
    }
}

/// Rebuilds a model from its description and biases, with zero weights.
pub(crate) fn skeleton_from(desc: &ModelDesc, biases: &[Vec<f64>]) -> Result<Model> {
    if biases.len() != desc.layers.len() {
        return Err(Error::Shape(format!(
            "{} bias vectors for {} layers",
            biases.len(),
            desc.layers.len()
        )));
    }
    let mut params = Vec::with_capacity(desc.param_count());
    for (l, b) in desc.layers.iter().zip(biases) {
        params.extend(std::iter::repeat_n(0.0, l.weight_shape().iter().product()));
        if b.len() != l.bias_len() {
            return Err(Error::Shape(format!(
                "bias has {} entries, layer declares {}",
                b.len(),
                l.bias_len()
            )));
        }
        params.extend_from_slice(b);
    }
    Model::from_desc(desc, &params)
}
