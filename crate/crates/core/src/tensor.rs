//! Dense/conv inference on `f64` with a fixed accumulation order.
//!
//! Every dot product accumulates in ascending index order starting from
//! `0.0`, and the bias is added last. Nothing here reorders or fuses
//! operations, so logits are bit-identical across runs and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: positive dims, matching length, finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite entry at index {i}")));
        }
        Ok(t)
    }

    /// Like [`Tensor::new`] but accepts non-finite entries. Faulted float
    /// parameter images legitimately decode to NaN or infinity.
    pub fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    #[default]
    None,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::None => x,
        }
    }
}

/// Layer description without parameters, as it appears in the model JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerDesc {
    Dense {
        #[serde(rename = "in")]
        in_features: usize,
        #[serde(rename = "out")]
        out_features: usize,
        #[serde(default)]
        activation: Activation,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        k: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        activation: Activation,
    },
}

fn default_stride() -> usize {
    1
}

impl LayerDesc {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerDesc::Dense {
                in_features,
                out_features,
                ..
            } => vec![out_features, in_features],
            LayerDesc::Conv2d {
                in_ch, out_ch, k, ..
            } => vec![out_ch, in_ch, k, k],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerDesc::Dense { out_features, .. } => out_features,
            LayerDesc::Conv2d { out_ch, .. } => out_ch,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerDesc::Dense { activation, .. } | LayerDesc::Conv2d { activation, .. } => {
                activation
            }
        }
    }

    /// Output shape for a given input shape, or a descriptive error.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerDesc::Dense {
                in_features,
                out_features,
                ..
            } => {
                let n: usize = input.iter().product();
                if n != in_features {
                    return Err(Error::Shape(format!(
                        "dense layer expects {in_features} inputs, got shape {input:?} ({n})"
                    )));
                }
                Ok(vec![out_features])
            }
            LayerDesc::Conv2d {
                in_ch,
                out_ch,
                k,
                stride,
                ..
            } => {
                if k == 0 || stride == 0 {
                    return Err(Error::Shape("conv2d kernel and stride must be >= 1".into()));
                }
                match *input {
                    [c, h, w] if c == in_ch && h >= k && w >= k => {
                        Ok(vec![out_ch, (h - k) / stride + 1, (w - k) / stride + 1])
                    }
                    _ => Err(Error::Shape(format!(
                        "conv2d expects [{in_ch}, h>={k}, w>={k}], got {input:?}"
                    ))),
                }
            }
        }
    }
}

/// Parameterless model description (the model JSON file).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDesc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_shape: Option<Vec<usize>>,
    pub layers: Vec<LayerDesc>,
}

impl ModelDesc {
    /// Input shape, inferred as `[in]` for dense-first models without one.
    pub fn resolved_input_shape(&self) -> Result<Vec<usize>> {
        if let Some(s) = &self.input_shape {
            return Ok(s.clone());
        }
        match self.layers.first() {
            Some(LayerDesc::Dense { in_features, .. }) => Ok(vec![*in_features]),
            Some(LayerDesc::Conv2d { .. }) => Err(Error::Model(
                "a model starting with conv2d needs an explicit input_shape".into(),
            )),
            None => Err(Error::Model("model has no layers".into())),
        }
    }

    /// Total number of scalars in the weights file.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight_shape().iter().product::<usize>() + l.bias_len())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    desc: LayerDesc,
    weight: Tensor,
    bias: Tensor,
}

impl Layer {
    pub fn new(desc: LayerDesc, weight: Tensor, bias: Tensor) -> Result<Self> {
        let ws = desc.weight_shape();
        if weight.shape() != ws.as_slice() {
            return Err(Error::Shape(format!(
                "weight shape {:?} does not match declared {ws:?}",
                weight.shape()
            )));
        }
        if bias.len() != desc.bias_len() {
            return Err(Error::Shape(format!(
                "bias length {} does not match declared {}",
                bias.len(),
                desc.bias_len()
            )));
        }
        Ok(Self { desc, weight, bias })
    }

    pub fn desc(&self) -> &LayerDesc {
        &self.desc
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    fn forward(&self, x: &[f64], in_shape: &[usize]) -> Vec<f64> {
        let w = self.weight.data();
        let b = self.bias.data();
        let act = self.desc.activation();
        match self.desc {
            LayerDesc::Dense {
                in_features,
                out_features,
                ..
            } => (0..out_features)
                .map(|o| {
                    let row = &w[o * in_features..(o + 1) * in_features];
                    let mut acc = 0.0;
                    for (wi, xi) in row.iter().zip(x) {
                        acc += wi * xi;
                    }
                    act.apply(acc + b[o])
                })
                .collect(),
            LayerDesc::Conv2d {
                in_ch,
                out_ch,
                k,
                stride,
                ..
            } => {
                let (h, wd) = (in_shape[1], in_shape[2]);
                let oh = (h - k) / stride + 1;
                let ow = (wd - k) / stride + 1;
                let mut out = Vec::with_capacity(out_ch * oh * ow);
                for (oc, &bias) in b.iter().enumerate() {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = 0.0;
                            for ic in 0..in_ch {
                                for ky in 0..k {
                                    let wrow = ((oc * in_ch + ic) * k + ky) * k;
                                    let xrow = (ic * h + oy * stride + ky) * wd + ox * stride;
                                    for kx in 0..k {
                                        acc += w[wrow + kx] * x[xrow + kx];
                                    }
                                }
                            }
                            out.push(act.apply(acc + bias));
                        }
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl Model {
    /// Builds a model and checks that adjacent layer shapes compose.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Model("model has no layers".into()));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Model(format!("invalid input shape {input_shape:?}")));
        }
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer
                .desc
                .output_shape(&shape)
                .map_err(|e| Error::Model(format!("layer {i}: {e}")))?;
        }
        Ok(Self {
            input_shape,
            layers,
        })
    }

    /// Builds a model from its description and the flat parameter list
    /// (per layer: weight row-major, then bias).
    pub fn from_desc(desc: &ModelDesc, params: &[f64]) -> Result<Self> {
        let expected = desc.param_count();
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "model declares {expected} parameters, got {}",
                params.len()
            )));
        }
        let mut offset = 0;
        let mut layers = Vec::with_capacity(desc.layers.len());
        for d in &desc.layers {
            let ws = d.weight_shape();
            let wn: usize = ws.iter().product();
            let weight = Tensor::new(ws, params[offset..offset + wn].to_vec())?;
            offset += wn;
            let bn = d.bias_len();
            let bias = Tensor::vector(params[offset..offset + bn].to_vec())?;
            offset += bn;
            layers.push(Layer::new(d.clone(), weight, bias)?);
        }
        Self::new(desc.resolved_input_shape()?, layers)
    }

    pub fn desc(&self) -> ModelDesc {
        ModelDesc {
            input_shape: Some(self.input_shape.clone()),
            layers: self.layers.iter().map(|l| l.desc.clone()).collect(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_classes(&self) -> usize {
        let mut shape = self.input_shape.clone();
        for l in &self.layers {
            shape = l
                .desc
                .output_shape(&shape)
                .expect("validated at construction");
        }
        shape.iter().product()
    }

    /// Flat parameter list in weights-file order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn weight_tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().map(|l| &l.weight)
    }

    /// Replaces every layer's weight data, keeping biases. Entries are not
    /// required to be finite.
    pub fn with_weights(&self, weights: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "expected {} weight tensors, got {}",
                self.layers.len(),
                weights.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .zip(weights)
            .map(|(l, data)| {
                let weight = Tensor::from_parts(l.weight.shape.clone(), data)?;
                Ok(Layer {
                    desc: l.desc.clone(),
                    weight,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            input_shape: self.input_shape.clone(),
            layers,
        })
    }
}

/// Runs the model and returns the last layer's outputs.
pub fn forward(model: &Model, input: &Tensor) -> Result<Tensor> {
    let mut shape = input.shape().to_vec();
    let mut x = input.data().to_vec();
    for (i, layer) in model.layers.iter().enumerate() {
        let out_shape = layer
            .desc
            .output_shape(&shape)
            .map_err(|e| Error::Shape(format!("layer {i}: {e}")))?;
        x = layer.forward(&x, &shape);
        shape = out_shape;
    }
    Tensor::from_parts(shape, x)
}

/// Index of the largest value; ties go to the lowest index and NaN never wins
/// unless every entry is NaN (then 0).
pub fn argmax(values: &[f64]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    inputs: Vec<Tensor>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, inputs: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        Ok(Self {
            name: name.into(),
            inputs,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn check_classes(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l >= num_classes) {
            Some(i) => Err(Error::Dataset(format!(
                "label {} at sample {i} is not below num_classes {num_classes}",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut inputs = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Dataset(format!(
                    "index {i} out of range {}",
                    self.len()
                )));
            }
            inputs.push(self.inputs[i].clone());
            labels.push(self.labels[i]);
        }
        Self::new(self.name.clone(), inputs, labels)
    }
}

/// Top-1 accuracy over the whole dataset.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<f64> {
    evaluate_with(model, dataset, Execution::default())
}

pub fn evaluate_with(model: &Model, dataset: &Dataset, exec: Execution) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Dataset("cannot evaluate on an empty dataset".into()));
    }
    let hits = map_indexed(exec, dataset.len(), |i| {
        forward(model, &dataset.inputs[i]).map(|y| argmax(y.data()) == dataset.labels[i])
    });
    let mut correct = 0usize;
    for h in hits {
        if h? {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(in_f: usize, out_f: usize, w: Vec<f64>, b: Vec<f64>, act: Activation) -> Layer {
        Layer::new(
            LayerDesc::Dense {
                in_features: in_f,
                out_features: out_f,
                activation: act,
            },
            Tensor::new(vec![out_f, in_f], w).unwrap(),
            Tensor::vector(b).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let w = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = Model::new(
            vec![3],
            vec![dense(3, 3, w, vec![0.0; 3], Activation::None)],
        )
        .unwrap();
        let y = forward(&m, &Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn relu_clamps_negative_sum() {
        let m = Model::new(
            vec![2],
            vec![dense(2, 1, vec![1.0, 1.0], vec![0.0], Activation::Relu)],
        )
        .unwrap();
        let y = forward(&m, &Tensor::vector(vec![2.0, -5.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_size() {
        let m = Model::new(
            vec![2],
            vec![dense(2, 1, vec![1.0, 1.0], vec![0.0], Activation::None)],
        )
        .unwrap();
        let err = forward(&m, &Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn model_rejects_non_composing_layers() {
        let a = dense(2, 3, vec![0.0; 6], vec![0.0; 3], Activation::None);
        let b = dense(4, 1, vec![0.0; 4], vec![0.0], Activation::None);
        assert!(matches!(
            Model::new(vec![2], vec![a, b]),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn layer_rejects_mismatched_weight_shape() {
        let r = Layer::new(
            LayerDesc::Dense {
                in_features: 2,
                out_features: 2,
                activation: Activation::None,
            },
            Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap(),
            Tensor::vector(vec![0.0; 2]).unwrap(),
        );
        assert!(r.is_err());
    }

    #[test]
    fn tensor_invariants() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::from_parts(vec![1], vec![f64::NAN]).is_ok());
    }

    #[test]
    fn conv_valid_stride_two() {
        // 1x4x4 input, one 2x2 all-ones kernel, stride 2: sums of 2x2 blocks.
        let desc = LayerDesc::Conv2d {
            in_ch: 1,
            out_ch: 1,
            k: 2,
            stride: 2,
            activation: Activation::None,
        };
        let layer = Layer::new(
            desc,
            Tensor::new(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap(),
            Tensor::vector(vec![0.5]).unwrap(),
        )
        .unwrap();
        let m = Model::new(vec![1, 4, 4], vec![layer]).unwrap();
        let x = Tensor::new(vec![1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let y = forward(&m, &x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[10.5, 18.5, 42.5, 50.5]);
    }

    #[test]
    fn argmax_ties_and_nan() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 0.0, -1.0]), 1);
        assert_eq!(argmax(&[f64::NAN, f64::NAN]), 0);
        assert_eq!(argmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), 0);
    }

    fn class0_model() -> Model {
        // Always predicts class 0: logits are [1, 0] regardless of input.
        Model::new(
            vec![1],
            vec![dense(
                1,
                2,
                vec![0.0, 0.0],
                vec![1.0, 0.0],
                Activation::None,
            )],
        )
        .unwrap()
    }

    #[test]
    fn evaluate_constant_model() {
        let m = class0_model();
        let inputs: Vec<_> = (0..4)
            .map(|i| Tensor::vector(vec![i as f64]).unwrap())
            .collect();
        let all0 = Dataset::new("zeros", inputs.clone(), vec![0; 4]).unwrap();
        assert_eq!(evaluate(&m, &all0).unwrap(), 1.0);
        let half = Dataset::new("half", inputs, vec![0, 1, 0, 1]).unwrap();
        assert_eq!(evaluate(&m, &half).unwrap(), 0.5);
    }

    #[test]
    fn evaluate_empty_dataset_errors() {
        let empty = Dataset::new("empty", vec![], vec![]).unwrap();
        assert!(matches!(
            evaluate(&class0_model(), &empty),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn dataset_label_checks() {
        let d = Dataset::new("d", vec![Tensor::vector(vec![0.0]).unwrap()], vec![3]).unwrap();
        assert!(d.check_classes(3).is_err());
        assert!(d.check_classes(4).is_ok());
        assert!(Dataset::new("bad", vec![], vec![1]).is_err());
    }
}
