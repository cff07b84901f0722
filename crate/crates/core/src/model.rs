//! The trainable model: an MLP feature extractor followed by a linear classifier.

use ndarray::{Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, softmax_into, Mat, Rng};

/// Nonlinearity applied after every feature-extractor layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, _pre: f64, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Identity => 1.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidParameter(format!("unknown activation `{other}`"))),
        }
    }
}

/// Affine layer `y = x W + b`, with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Mat::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &Mat) -> Mat {
        x.dot(&self.weight) + &self.bias
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// `G(F(x))`: layers `0..L` form the feature extractor, the last layer is the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct UdaModel {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
    activation: Activation,
}

/// Gradient of a scalar loss, shaped like the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Dense>,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    /// `activations[0]` is the input, `activations[l + 1]` the output of extractor layer `l`.
    pub activations: Vec<Mat>,
    pub pre_activations: Vec<Mat>,
    pub logits: Mat,
    /// Row-wise softmax of `logits` at temperature 1.
    pub probs: Mat,
}

impl ForwardRecord {
    /// `F(x)`.
    pub fn features(&self) -> &Mat {
        self.activations.last().expect("at least the input")
    }

    pub fn len(&self) -> usize {
        self.logits.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Row-wise softmax at temperature 1.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut probs = Mat::zeros(logits.dim());
    for (z, mut p) in logits.rows().into_iter().zip(probs.rows_mut()) {
        let z = z.to_vec();
        softmax_into(&z, 1.0, p.as_slice_mut().expect("standard layout")).expect("non-empty row, tau = 1");
    }
    probs
}

impl UdaModel {
    /// Fresh model with LeCun-uniform weights (`|w| <= sqrt(3 / fan_in)`) and zero biases.
    ///
    /// `layer_dims` is `[d_in, hidden.., d_feat]`; the classifier maps `d_feat` to `num_classes`.
    pub fn init(layer_dims: &[usize], num_classes: usize, activation: Activation, seed: u64) -> Result<Self> {
        Self::check_dims(layer_dims, num_classes)?;
        let mut rng = Rng::new(seed);
        let mut widths = layer_dims.to_vec();
        widths.push(num_classes);
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (3.0 / fan_in as f64).sqrt();
                let weight = Mat::from_shape_simple_fn((fan_in, fan_out), || rng.uniform(-bound, bound));
                Dense {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(UdaModel {
            layer_dims: layer_dims.to_vec(),
            layers,
            activation,
        })
    }

    fn check_dims(layer_dims: &[usize], num_classes: usize) -> Result<()> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "layer_dims needs at least an input and a feature width, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) || num_classes == 0 {
            return Err(Error::InvalidParameter(format!(
                "all widths must be >= 1 (layer_dims {layer_dims:?}, {num_classes} classes)"
            )));
        }
        Ok(())
    }

    pub fn param_count_for(layer_dims: &[usize], num_classes: usize) -> usize {
        let mut widths = layer_dims.to_vec();
        widths.push(num_classes);
        widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Rebuilds a model from [`UdaModel::params_flat`] output.
    pub fn from_flat(layer_dims: &[usize], num_classes: usize, activation: Activation, params: &[f64]) -> Result<Self> {
        let mut model = UdaModel::init(layer_dims, num_classes, activation, 0)?;
        model.set_params_flat(params)?;
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn dim_input(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn dim_feature(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier().fan_out()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn classifier(&self) -> &Dense {
        self.layers.last().unwrap()
    }

    pub fn classifier_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Parameters layer by layer: weight (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Dimension(format!(
                "{} parameters given, model has {}",
                params.len(),
                self.param_count()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        let mut it = params.iter().copied();
        for layer in &mut self.layers {
            layer.weight.iter_mut().for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn forward(&self, inputs: &Mat) -> Result<ForwardRecord> {
        if inputs.ncols() != self.dim_input() {
            return Err(Error::Dimension(format!(
                "input width {} but model expects {}",
                inputs.ncols(),
                self.dim_input()
            )));
        }
        let n_extract = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(n_extract + 1);
        let mut pre_activations = Vec::with_capacity(n_extract);
        activations.push(inputs.to_owned());
        for layer in &self.layers[..n_extract] {
            let pre = layer.forward(activations.last().unwrap());
            let act = pre.mapv(|v| self.activation.apply(v));
            pre_activations.push(pre);
            activations.push(act);
        }
        let logits = self.classifier().forward(activations.last().unwrap());
        let probs = softmax_rows(&logits);
        Ok(ForwardRecord {
            activations,
            pre_activations,
            logits,
            probs,
        })
    }

    /// Chains `d loss / d logits` through the classifier and extractor.
    pub fn backward(&self, record: &ForwardRecord, grad_logits: &Mat) -> Result<ParamGrads> {
        if grad_logits.dim() != record.logits.dim() {
            return Err(Error::Dimension(format!(
                "logit gradient is {:?}, logits are {:?}",
                grad_logits.dim(),
                record.logits.dim()
            )));
        }
        if record.activations.len() != self.layers.len() {
            return Err(Error::Dimension("forward record does not belong to this model".into()));
        }
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_logits.to_owned();
        for l in (0..self.layers.len()).rev() {
            let is_classifier = l + 1 == self.layers.len();
            let grad_pre = if is_classifier {
                upstream
            } else {
                let mut g = upstream;
                let pre = &record.pre_activations[l];
                let out = &record.activations[l + 1];
                ndarray::Zip::from(&mut g)
                    .and(pre)
                    .and(out)
                    .for_each(|g, &p, &o| *g *= self.activation.derivative(p, o));
                g
            };
            let input = &record.activations[l];
            grads.push(Dense {
                weight: input.t().dot(&grad_pre),
                bias: grad_pre.sum_axis(Axis(0)),
            });
            upstream = if l > 0 {
                grad_pre.dot(&self.layers[l].weight.t())
            } else {
                Mat::zeros((0, 0))
            };
        }
        grads.reverse();
        Ok(ParamGrads { layers: grads })
    }

    /// Per-row argmax of the logits, lowest index on ties.
    pub fn predict(&self, inputs: &Mat) -> Result<Vec<usize>> {
        let record = self.forward(inputs)?;
        Ok(record
            .logits
            .rows()
            .into_iter()
            .map(|row| argmax(row.as_slice().expect("standard layout")))
            .collect())
    }
}

fn flatten(layers: &[Dense]) -> Vec<f64> {
    let mut out = Vec::new();
    for layer in layers {
        out.extend(layer.weight.iter());
        out.extend(layer.bias.iter());
    }
    out
}

impl ParamGrads {
    pub fn zeros_like(model: &UdaModel) -> Self {
        ParamGrads {
            layers: model
                .layers()
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn add_assign(&mut self, other: &ParamGrads) -> Result<()> {
        if !self.congruent(other) {
            return Err(Error::Dimension("gradient shapes differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        Ok(())
    }

    pub fn congruent(&self, other: &ParamGrads) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    pub fn matches_model(&self, model: &UdaModel) -> bool {
        self.congruent(&ParamGrads::zeros_like(model))
    }
}
