//! Dense feedforward reference network.
//!
//! The network is stored as one flat `f64` parameter vector with a
//! layer-offset index. Within weight layer `l` the parameters are
//! neuron-major: for each output neuron, `fan_in` weights followed by one
//! bias. Pruning masks multiply the parameter vector before the pass, so a
//! masked forward is exactly the forward of a net whose masked entries were
//! overwritten with zeros.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genome::GroupedMask;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    SoftmaxLogits,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Layer shape plus head/activation choice. Layer `l` of the flat parameter
/// vector holds `(fan_in + 1) * fan_out` entries (weights + biases).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub output: OutputKind,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, output: OutputKind) -> Self {
        Architecture {
            layer_sizes,
            activation,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::validation(
                "arch.layer_sizes",
                "need at least 2 layers (input and output)",
            ));
        }
        if self.layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::validation(
                "arch.layer_sizes",
                "every layer size must be >= 1",
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers (connections between consecutive stages).
    pub fn weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn fan_in(&self, layer: usize) -> usize {
        self.layer_sizes[layer]
    }

    pub fn fan_out(&self, layer: usize) -> usize {
        self.layer_sizes[layer + 1]
    }

    pub fn layer_param_count(&self, layer: usize) -> usize {
        (self.fan_in(layer) + 1) * self.fan_out(layer)
    }

    pub fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_param_count(l)).sum()
    }

    pub fn total_params(&self) -> usize {
        (0..self.weight_layers())
            .map(|l| self.layer_param_count(l))
            .sum()
    }

    /// Flat index of the weight from input unit `i` to output neuron `j` of
    /// weight layer `l`.
    pub fn weight_index(&self, layer: usize, neuron: usize, input: usize) -> usize {
        self.layer_offset(layer) + neuron * (self.fan_in(layer) + 1) + input
    }

    /// Flat index of the bias of output neuron `j` of weight layer `l`.
    pub fn bias_index(&self, layer: usize, neuron: usize) -> usize {
        self.layer_offset(layer) + neuron * (self.fan_in(layer) + 1) + self.fan_in(layer)
    }
}

/// The reference network: an architecture plus one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceNet {
    arch: Architecture,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetCheckpoint {
    arch: Architecture,
    params: Vec<f64>,
    format_version: u32,
}

impl ReferenceNet {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.total_params() {
            return Err(Error::DimensionMismatch(format!(
                "parameter vector has {} entries, architecture needs {}",
                params.len(),
                arch.total_params()
            )));
        }
        Ok(ReferenceNet { arch, params })
    }

    /// Uniform fan-in-scaled init; biases start at zero.
    pub fn random<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = vec![0.0; arch.total_params()];
        for l in 0..arch.weight_layers() {
            let fan_in = arch.fan_in(l) as f64;
            let fan_out = arch.fan_out(l) as f64;
            let limit = match arch.activation {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            for j in 0..arch.fan_out(l) {
                for i in 0..arch.fan_in(l) {
                    params[arch.weight_index(l, j, i)] = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(ReferenceNet { arch, params })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Parameter vector with the mask applied (masked groups zeroed).
    pub fn masked_params(&self, mask: Option<&GroupedMask>) -> Result<Vec<f64>> {
        match mask {
            None => Ok(self.params.clone()),
            Some(m) => {
                if !m.grouping().covers(&self.arch) {
                    return Err(Error::MaskShape(format!(
                        "mask grouping built for layer sizes {:?}, net has {:?}",
                        m.grouping().layer_sizes(),
                        self.arch.layer_sizes
                    )));
                }
                Ok(m.apply(&self.params))
            }
        }
    }

    pub fn to_checkpoint_json(&self) -> String {
        let cp = NetCheckpoint {
            arch: self.arch.clone(),
            params: self.params.clone(),
            format_version: CHECKPOINT_FORMAT_VERSION,
        };
        serde_json::to_string(&cp).expect("checkpoint serialization cannot fail")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let cp: NetCheckpoint = serde_json::from_str(text)?;
        if cp.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Validation {
                field: "format_version".to_string(),
                msg: format!(
                    "unsupported checkpoint version {} (expected {})",
                    cp.format_version, CHECKPOINT_FORMAT_VERSION
                ),
            });
        }
        ReferenceNet::new(cp.arch, cp.params)
    }
}

/// Sample labels: class indices for classification, per-sample target rows
/// for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Targets { values: Vec<f64>, width: usize },
}

impl Labels {
    fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets { values, width } => {
                if *width == 0 {
                    0
                } else {
                    values.len() / width
                }
            }
        }
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes(c) => Labels::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Targets { values, width } => Labels::Targets {
                values: idx
                    .iter()
                    .flat_map(|&i| values[i * width..(i + 1) * width].iter().copied())
                    .collect(),
                width: *width,
            },
        }
    }
}

/// A row-major sample matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    n: usize,
    dim: usize,
    labels: Labels,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, n: usize, dim: usize, labels: Labels) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if inputs.len() != n * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} input values for {} samples of dim {}",
                inputs.len(),
                n,
                dim
            )));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} samples",
                labels.len(),
                n
            )));
        }
        Ok(Batch {
            inputs,
            n,
            dim,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Labels) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch("ragged input rows".to_string()));
        }
        let inputs = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Batch::new(inputs, rows.len(), dim, labels)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_label(&self, i: usize) -> Option<usize> {
        match &self.labels {
            Labels::Classes(c) => Some(c[i]),
            _ => None,
        }
    }

    /// New batch holding the given rows (in the given order).
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        if idx.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut inputs = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            inputs.extend_from_slice(self.row(i));
        }
        Batch::new(inputs, idx.len(), self.dim, self.labels.select(idx))
    }
}

/// SGD hyperparameters with multiplicative per-epoch learning-rate decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::validation("lr", "learning rate must be >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::validation("lr_decay", "decay must be in (0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs", "need at least 1 epoch"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "batch size must be >= 1"));
        }
        Ok(())
    }
}

fn layer_forward(
    params: &[f64],
    arch: &Architecture,
    layer: usize,
    input: &[f64],
    out: &mut Vec<f64>,
) {
    let fan_in = arch.fan_in(layer);
    let fan_out = arch.fan_out(layer);
    let base = arch.layer_offset(layer);
    out.clear();
    for j in 0..fan_out {
        let row = base + j * (fan_in + 1);
        let mut s = params[row + fan_in];
        for i in 0..fan_in {
            s += params[row + i] * input[i];
        }
        out.push(s);
    }
}

fn apply_activation(act: Activation, z: &mut [f64]) {
    match act {
        Activation::Relu => {
            for v in z.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for v in z.iter_mut() {
                *v = v.tanh();
            }
        }
    }
}

fn forward_sample(params: &[f64], arch: &Architecture, input: &[f64], out: &mut Vec<f64>) {
    let layers = arch.weight_layers();
    let mut cur = input.to_vec();
    let mut next = Vec::new();
    for l in 0..layers {
        layer_forward(params, arch, l, &cur, &mut next);
        if l + 1 < layers {
            apply_activation(arch.activation, &mut next);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    out.clear();
    out.extend_from_slice(&cur);
}

/// Forward pass over a row-major input matrix. Returns an `n x output_dim`
/// row-major matrix of raw outputs (logits for a softmax head).
pub fn forward(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    inputs: &[f64],
    n: usize,
) -> Result<Vec<f64>> {
    let dim = net.arch().input_dim();
    if inputs.len() != n * dim {
        return Err(Error::DimensionMismatch(format!(
            "{} input values for {} samples of dim {}",
            inputs.len(),
            n,
            dim
        )));
    }
    let params = net.masked_params(mask)?;
    let out_dim = net.arch().output_dim();
    let mut outputs = Vec::with_capacity(n * out_dim);
    let mut row_out = Vec::new();
    for s in 0..n {
        forward_sample(&params, net.arch(), &inputs[s * dim..(s + 1) * dim], &mut row_out);
        outputs.extend_from_slice(&row_out);
    }
    Ok(outputs)
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    m + values.map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// Per-sample loss on raw outputs. `head` restricts the loss to a subset of
/// output units: softmax over the listed class logits only, or MSE over the
/// listed output columns only. Classification labels stay global; they are
/// looked up inside the head.
fn sample_loss(
    out_row: &[f64],
    labels: &Labels,
    sample: usize,
    kind: LossKind,
    head: Option<&[usize]>,
) -> Result<f64> {
    match (kind, labels) {
        (LossKind::CrossEntropy, Labels::Classes(classes)) => {
            let label = classes[sample];
            let pos = match head {
                None => {
                    if label >= out_row.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "class label {} but only {} outputs",
                            label,
                            out_row.len()
                        )));
                    }
                    label
                }
                Some(subspace) => subspace
                    .iter()
                    .position(|&c| c == label)
                    .ok_or(Error::UnknownLabel { label })?,
            };
            let lse = match head {
                None => log_sum_exp(out_row.iter().copied()),
                Some(subspace) => log_sum_exp(subspace.iter().map(|&c| out_row[c])),
            };
            let z = match head {
                None => out_row[pos],
                Some(subspace) => out_row[subspace[pos]],
            };
            Ok(lse - z)
        }
        (LossKind::Mse, Labels::Targets { values, width }) => {
            let cols: Vec<usize> = match head {
                None => (0..out_row.len()).collect(),
                Some(subspace) => subspace.to_vec(),
            };
            if cols.len() != *width {
                return Err(Error::DimensionMismatch(format!(
                    "{} target columns for {} output units",
                    width,
                    cols.len()
                )));
            }
            let t = &values[sample * width..(sample + 1) * width];
            let mut s = 0.0;
            for (k, &c) in cols.iter().enumerate() {
                let d = out_row[c] - t[k];
                s += d * d;
            }
            Ok(s / *width as f64)
        }
        (LossKind::CrossEntropy, Labels::Targets { .. }) => Err(Error::validation(
            "loss_kind",
            "cross_entropy needs class labels",
        )),
        (LossKind::Mse, Labels::Classes(_)) => Err(Error::validation(
            "loss_kind",
            "mse needs real-valued targets",
        )),
    }
}

/// Mean loss of the (masked) net over a batch, optionally restricted to a
/// subset of output units.
pub fn loss_with_head(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    batch: &Batch,
    kind: LossKind,
    head: Option<&[usize]>,
) -> Result<f64> {
    check_head(net.arch(), kind, head)?;
    let out_dim = net.arch().output_dim();
    let outputs = forward(net, mask, batch.inputs(), batch.n())?;
    let mut total = 0.0;
    for s in 0..batch.n() {
        let row = &outputs[s * out_dim..(s + 1) * out_dim];
        total += sample_loss(row, batch.labels(), s, kind, head)?;
    }
    let mean = total / batch.n() as f64;
    if !mean.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {mean}")));
    }
    Ok(mean)
}

/// Mean loss over a batch with the full output head.
pub fn loss(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    batch: &Batch,
    kind: LossKind,
) -> Result<f64> {
    loss_with_head(net, mask, batch, kind, None)
}

fn check_head(arch: &Architecture, kind: LossKind, head: Option<&[usize]>) -> Result<()> {
    match kind {
        LossKind::CrossEntropy => {
            if arch.output != OutputKind::SoftmaxLogits {
                return Err(Error::validation(
                    "loss_kind",
                    "cross_entropy needs a softmax_logits head",
                ));
            }
        }
        LossKind::Mse => {
            if arch.output != OutputKind::Linear {
                return Err(Error::validation("loss_kind", "mse needs a linear head"));
            }
        }
    }
    if let Some(subspace) = head {
        if subspace.is_empty() {
            return Err(Error::validation("label_subspace", "empty output subset"));
        }
        if subspace.iter().any(|&c| c >= arch.output_dim()) {
            return Err(Error::validation(
                "label_subspace",
                "output subset index out of range",
            ));
        }
    }
    Ok(())
}

/// Mean gradient of the batch loss with respect to the flat parameter
/// vector. Masked positions come back exactly zero, so pruned parameters
/// never move.
pub fn backprop_with_head(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    batch: &Batch,
    kind: LossKind,
    head: Option<&[usize]>,
) -> Result<Vec<f64>> {
    check_head(net.arch(), kind, head)?;
    let arch = net.arch();
    let params = net.masked_params(mask)?;
    let layers = arch.weight_layers();
    let out_dim = arch.output_dim();
    let mut grad = vec![0.0; params.len()];

    // Per-layer post-activation values for one sample; acts[0] is the input.
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
    for s in 0..batch.n() {
        acts.clear();
        acts.push(batch.row(s).to_vec());
        for l in 0..layers {
            let mut z = Vec::new();
            layer_forward(&params, arch, l, &acts[l], &mut z);
            if l + 1 < layers {
                apply_activation(arch.activation, &mut z);
            }
            acts.push(z);
        }
        let out_row = &acts[layers];

        // dLoss/dOutput for this sample.
        let mut dz = vec![0.0; out_dim];
        match (kind, batch.labels()) {
            (LossKind::CrossEntropy, Labels::Classes(classes)) => {
                let label = classes[s];
                match head {
                    None => {
                        if label >= out_dim {
                            return Err(Error::DimensionMismatch(format!(
                                "class label {label} but only {out_dim} outputs"
                            )));
                        }
                        let probs = softmax(out_row);
                        for (j, p) in probs.iter().enumerate() {
                            dz[j] = p - if j == label { 1.0 } else { 0.0 };
                        }
                    }
                    Some(subspace) => {
                        let pos = subspace
                            .iter()
                            .position(|&c| c == label)
                            .ok_or(Error::UnknownLabel { label })?;
                        let sub_logits: Vec<f64> = subspace.iter().map(|&c| out_row[c]).collect();
                        let probs = softmax(&sub_logits);
                        for (k, &c) in subspace.iter().enumerate() {
                            dz[c] = probs[k] - if k == pos { 1.0 } else { 0.0 };
                        }
                    }
                }
            }
            (LossKind::Mse, Labels::Targets { values, width }) => {
                let cols: Vec<usize> = match head {
                    None => (0..out_dim).collect(),
                    Some(subspace) => subspace.to_vec(),
                };
                if cols.len() != *width {
                    return Err(Error::DimensionMismatch(format!(
                        "{} target columns for {} output units",
                        width,
                        cols.len()
                    )));
                }
                let t = &values[s * width..(s + 1) * width];
                for (k, &c) in cols.iter().enumerate() {
                    dz[c] = 2.0 * (out_row[c] - t[k]) / *width as f64;
                }
            }
            _ => {
                return Err(Error::validation(
                    "loss_kind",
                    "loss kind does not match label type",
                ))
            }
        }

        // Walk the layers backwards, accumulating parameter gradients.
        for l in (0..layers).rev() {
            let fan_in = arch.fan_in(l);
            let fan_out = arch.fan_out(l);
            let base = arch.layer_offset(l);
            let input = &acts[l];
            let mut d_prev = vec![0.0; fan_in];
            for j in 0..fan_out {
                let g = dz[j];
                let row = base + j * (fan_in + 1);
                grad[row + fan_in] += g;
                for i in 0..fan_in {
                    grad[row + i] += g * input[i];
                    d_prev[i] += params[row + i] * g;
                }
            }
            if l > 0 {
                // Chain through the hidden activation of stage l.
                let h = &acts[l];
                match arch.activation {
                    Activation::Relu => {
                        for i in 0..fan_in {
                            if h[i] <= 0.0 {
                                d_prev[i] = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for i in 0..fan_in {
                            d_prev[i] *= 1.0 - h[i] * h[i];
                        }
                    }
                }
            }
            dz = d_prev;
        }
    }

    let inv_n = 1.0 / batch.n() as f64;
    for g in grad.iter_mut() {
        *g *= inv_n;
    }
    if let Some(m) = mask {
        m.zero_masked(&mut grad);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".to_string()));
    }
    Ok(grad)
}

/// Batch gradient with the full output head.
pub fn backprop(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    batch: &Batch,
    kind: LossKind,
) -> Result<Vec<f64>> {
    backprop_with_head(net, mask, batch, kind, None)
}

fn loss_kind_for(arch: &Architecture) -> LossKind {
    match arch.output {
        OutputKind::SoftmaxLogits => LossKind::CrossEntropy,
        OutputKind::Linear => LossKind::Mse,
    }
}

/// Mini-batch SGD with multiplicative per-epoch learning-rate decay.
///
/// Returns a new net; the input is untouched. Masked positions are zeroed on
/// entry and their gradients are zero, so pruned parameters stay exactly
/// zero throughout. Aborts with a divergence error if a single step blows
/// the full-dataset loss up by more than 10x, if parameters stop being
/// finite, or if the final loss ends up above the initial one.
pub fn train_with_head(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    data: &Batch,
    hyper: &TrainHyper,
    head: Option<&[usize]>,
) -> Result<ReferenceNet> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    hyper.validate()?;
    let kind = loss_kind_for(net.arch());
    check_head(net.arch(), kind, head)?;

    let mut current = ReferenceNet::new(net.arch().clone(), net.masked_params(mask)?)?;
    let initial_loss = loss_with_head(&current, None, data, kind, head)?;
    let mut prev_loss = initial_loss;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.n()).collect();
    let mut lr = hyper.lr;

    for _epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            let minibatch = data.select(chunk)?;
            let grad = backprop_with_head(&current, mask, &minibatch, kind, head)?;
            for (p, g) in current.params.iter_mut().zip(grad.iter()) {
                *p -= lr * g;
            }
            if current.params.iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(
                    "parameters became NaN/Inf during training".to_string(),
                ));
            }
            let full = loss_with_head(&current, None, data, kind, head)?;
            if full > 10.0 * prev_loss {
                return Err(Error::Divergence(format!(
                    "step loss jumped from {prev_loss} to {full}"
                )));
            }
            prev_loss = full;
        }
        lr *= hyper.lr_decay;
    }

    if prev_loss > initial_loss {
        return Err(Error::Divergence(format!(
            "final loss {prev_loss} above initial {initial_loss}"
        )));
    }
    Ok(current)
}

/// SGD training with the full output head.
pub fn train(
    net: &ReferenceNet,
    mask: Option<&GroupedMask>,
    data: &Batch,
    hyper: &TrainHyper,
) -> Result<ReferenceNet> {
    train_with_head(net, mask, data, hyper, None)
}
