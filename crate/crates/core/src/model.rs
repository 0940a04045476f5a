//! Dense ReLU networks with plain momentum SGD.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{argmax, cross_entropy_from_logits, LogitVector, OneHotLabel};
use crate::rng::SplitMix64;

/// One affine layer, weights stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.n_in + col]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.n_in)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Feed-forward network: ReLU between layers, identity on the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        check_dims(dims)?;
        let mut rng = SplitMix64::new(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                let mut layer = Layer::zeros(n_in, n_out);
                for v in &mut layer.weights {
                    *v = rng.uniform(-bound, bound);
                }
                layer
            })
            .collect();
        Ok(Self { layers })
    }

    /// Every weight and bias set to zero.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArchitecture("no layers".to_string()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} buffers do not match {}x{}",
                    l.n_out, l.n_in
                )));
            }
            if i > 0 && layers[i - 1].n_out != l.n_in {
                return Err(Error::InvalidArchitecture(format!(
                    "layer {i} expects {} inputs but previous layer emits {}",
                    l.n_in,
                    layers[i - 1].n_out
                )));
            }
        }
        if layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias)).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArchitecture("non-finite parameter".to_string()));
        }
        Ok(Self { layers })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].n_in];
        dims.extend(self.layers.iter().map(|l| l.n_out));
        dims
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened layer by layer, weights before bias.
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Overwrite parameters from a vector laid out as [`MlpParams::to_flat`].
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        for v in self.to_flat() {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::InvalidInput(format!(
                "feature vector has {} entries, network expects {}",
                x.len(),
                self.n_inputs()
            )));
        }
        Ok(())
    }

    /// Pre-activations of every layer.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&act);
            if i + 1 < self.layers.len() {
                act = z.iter().map(|v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn forward(&self, x: &[f64]) -> Result<LogitVector> {
        self.check_input(x)?;
        let z = self.forward_trace(x).pop().unwrap_or_default();
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged("non-finite logits".to_string()));
        }
        LogitVector::new(z)
    }

    /// Reverse-mode gradient of a scalar loss given `∂L/∂logits`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<MlpGrads> {
        self.check_input(x)?;
        if upstream.len() != self.n_classes() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient has {} entries for {} logits",
                upstream.len(),
                self.n_classes()
            )));
        }
        let pre = self.forward_trace(x);
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input: Vec<f64> = if i == 0 {
                x.to_vec()
            } else {
                pre[i - 1].iter().map(|v| v.max(0.0)).collect()
            };
            let g = &mut grads.layers[i];
            for (r, d) in delta.iter().enumerate() {
                g.bias[r] += d;
                for (c, xi) in input.iter().enumerate() {
                    g.weights[r * layer.n_in + c] += d * xi;
                }
            }
            if i > 0 {
                let mut next = vec![0.0; layer.n_in];
                for (r, d) in delta.iter().enumerate() {
                    for (c, n) in next.iter_mut().enumerate() {
                        *n += layer.weight(r, c) * d;
                    }
                }
                // ReLU subgradient at 0 is 0.
                for (n, z) in next.iter_mut().zip(&pre[i - 1]) {
                    if *z <= 0.0 {
                        *n = 0.0;
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    /// `v ← momentum·v + g; p ← p − lr·v`.
    pub fn sgd_step(
        &mut self,
        grads: &MlpGrads,
        velocity: &mut MlpGrads,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged(
                "non-finite parameter gradient".to_string(),
            ));
        }
        for ((layer, g), v) in self.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
            for ((p, gi), vi) in layer
                .weights
                .iter_mut()
                .chain(layer.bias.iter_mut())
                .zip(g.weights.iter().chain(&g.bias))
                .zip(v.weights.iter_mut().chain(v.bias.iter_mut()))
            {
                *vi = momentum * *vi + gi;
                *p -= lr * *vi;
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::TrainingDiverged(
                "non-finite parameter after update".to_string(),
            ));
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::InvalidArchitecture(format!(
            "need at least two positive layer widths, got {dims:?}"
        )));
    }
    Ok(())
}

/// Parameter-shaped buffer, used for gradients and momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Layer>,
}

impl MlpGrads {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            layers: p.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .all(|v| v.is_finite())
    }
}

/// Accuracy and mean cross-entropy of a model on a labelled set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_ce: f64,
}

/// Top-1 accuracy (argmax ties to the lowest class) and mean CE at τ = 1.
pub fn evaluate(p: &MlpParams, ds: &Dataset) -> Result<Evaluation> {
    evaluate_rows(p, &ds.features, &ds.labels)
}

pub fn evaluate_rows(p: &MlpParams, features: &[Vec<f64>], labels: &[usize]) -> Result<Evaluation> {
    if features.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".to_string()));
    }
    if features.len() != labels.len() {
        return Err(Error::InvalidBatch(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let mut correct = 0usize;
    let mut ce = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let z = p.forward(x)?;
        if argmax(z.as_slice()) == y {
            correct += 1;
        }
        ce += cross_entropy_from_logits(OneHotLabel(y), &z, 1.0)?;
    }
    let n = features.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_ce: ce / n,
    })
}

const CHECKPOINT_MAGIC: &str = "rectidistill-mlp v1";

/// Render parameters in the text checkpoint format.
///
/// ```text
/// rectidistill-mlp v1
/// dims 2 4 3
/// layer 0 4 2
/// w <in values>        (one line per output row)
/// b <out values>
/// layer 1 3 4
/// ...
/// end
/// ```
///
/// Values use `{:.16e}`, 17 significant digits, which round-trips every
/// finite `f64` exactly.
pub fn checkpoint_to_string(p: &MlpParams) -> String {
    let mut out = String::new();
    let dims: Vec<String> = p.dims().iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "dims {}", dims.join(" "));
    let fmt_row = |vals: &[f64]| {
        vals.iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    for (i, l) in p.layers.iter().enumerate() {
        let _ = writeln!(out, "layer {i} {} {}", l.n_out, l.n_in);
        for row in l.weights.chunks_exact(l.n_in) {
            let _ = writeln!(out, "w {}", fmt_row(row));
        }
        let _ = writeln!(out, "b {}", fmt_row(&l.bias));
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(p: &MlpParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(p))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    parse_checkpoint(&fs::read_to_string(path)?)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, line)) => {
                self.last = i + 1;
                Ok((i + 1, line.trim_end()))
            }
            None => Err(Error::CheckpointParse {
                line: self.last + 1,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::CheckpointParse {
        line,
        message: message.into(),
    }
}

fn parse_numbers<T: std::str::FromStr>(line: usize, fields: &[&str]) -> Result<Vec<T>> {
    fields
        .iter()
        .enumerate()
        .map(|(k, f)| {
            f.parse::<T>()
                .map_err(|_| parse_err(line, format!("field {}: cannot parse '{f}'", k + 1)))
        })
        .collect()
}

fn tagged<'a>(line: usize, text: &'a str, tag: &str) -> Result<Vec<&'a str>> {
    let mut fields = text.split_whitespace();
    match fields.next() {
        Some(t) if t == tag => Ok(fields.collect()),
        _ => Err(parse_err(line, format!("expected '{tag}' line"))),
    }
}

/// Parse a checkpoint; nothing is returned unless the whole file is valid.
pub fn parse_checkpoint(text: &str) -> Result<MlpParams> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (n, magic) = lines.next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(parse_err(n, format!("expected header '{CHECKPOINT_MAGIC}'")));
    }
    let (n, dims_line) = lines.next("dims")?;
    let dims: Vec<usize> = parse_numbers(n, &tagged(n, dims_line, "dims")?)?;
    check_dims(&dims).map_err(|e| parse_err(n, e.to_string()))?;

    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (i, w) in dims.windows(2).enumerate() {
        let (n_in, n_out) = (w[0], w[1]);
        let (n, head) = lines.next("layer header")?;
        let head: Vec<usize> = parse_numbers(n, &tagged(n, head, "layer")?)?;
        if head != [i, n_out, n_in] {
            return Err(parse_err(
                n,
                format!("expected 'layer {i} {n_out} {n_in}', got {head:?}"),
            ));
        }
        let mut layer = Layer::zeros(n_in, n_out);
        for r in 0..n_out {
            let (n, row) = lines.next("weight row")?;
            let vals: Vec<f64> = parse_numbers(n, &tagged(n, row, "w")?)?;
            if vals.len() != n_in {
                return Err(parse_err(n, format!("expected {n_in} weights, got {}", vals.len())));
            }
            layer.weights[r * n_in..(r + 1) * n_in].copy_from_slice(&vals);
        }
        let (n, row) = lines.next("bias row")?;
        let vals: Vec<f64> = parse_numbers(n, &tagged(n, row, "b")?)?;
        if vals.len() != n_out {
            return Err(parse_err(n, format!("expected {n_out} biases, got {}", vals.len())));
        }
        layer.bias = vals;
        if layer.weights.iter().chain(&layer.bias).any(|v| !v.is_finite()) {
            return Err(parse_err(n, "non-finite parameter"));
        }
        layers.push(layer);
    }
    let (n, end) = lines.next("end marker")?;
    if end != "end" {
        return Err(parse_err(n, "expected 'end'"));
    }
    MlpParams::from_layers(layers)
}
