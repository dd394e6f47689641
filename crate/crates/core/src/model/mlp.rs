use crate::error::{Error, Result};

use super::params::{ParamVector, Shape};
use super::train::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    weight: usize,
    bias: Option<usize>,
    fan_in: usize,
    fan_out: usize,
}

/// Layer layout of a fully connected network read from a parameter shape
/// list. Every rank-2 shape `[in, out]` is a dense layer, optionally followed
/// by a rank-1 `[out]` bias. Hidden layers use `tanh`; the last layer emits
/// logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn from_shapes(shapes: &[Shape]) -> Result<Self> {
        let mut layers: Vec<Dense> = Vec::new();
        let mut offset = 0;
        let mut i = 0;
        while i < shapes.len() {
            let shape = &shapes[i];
            let [fan_in, fan_out] = shape[..] else {
                return Err(Error::Config(format!(
                    "expected a [in, out] weight shape at position {i}, got {shape:?}"
                )));
            };
            if let Some(prev) = layers.last() {
                if prev.fan_out != fan_in {
                    return Err(Error::Config(format!(
                        "layer {} expects {fan_in} inputs but previous layer emits {}",
                        layers.len(),
                        prev.fan_out
                    )));
                }
            }
            let weight = offset;
            offset += fan_in * fan_out;
            i += 1;
            let bias = match shapes.get(i) {
                Some(s) if s.len() == 1 => {
                    if s[0] != fan_out {
                        return Err(Error::Config(format!(
                            "bias shape {s:?} does not match layer width {fan_out}"
                        )));
                    }
                    let b = offset;
                    offset += fan_out;
                    i += 1;
                    Some(b)
                }
                _ => None,
            };
            layers.push(Dense {
                weight,
                bias,
                fan_in,
                fan_out,
            });
        }
        if layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        Ok(Self { layers })
    }

    pub fn input_dims(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dims(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    /// Activations of every layer for one input; the last entry is the logits.
    fn activations(&self, w: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            let mut z = match layer.bias {
                Some(b) => w[b..b + layer.fan_out].to_vec(),
                None => vec![0.0; layer.fan_out],
            };
            for (r, xi) in input.iter().enumerate() {
                if *xi == 0.0 {
                    continue;
                }
                let row = &w[layer.weight + r * layer.fan_out..][..layer.fan_out];
                for (zj, wj) in z.iter_mut().zip(row) {
                    *zj += xi * wj;
                }
            }
            if l != last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn logits(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        self.activations(w, x).pop().expect("at least one layer")
    }

    /// Adds the gradient of the cross-entropy loss for one sample into `grad`
    /// and returns that sample's loss.
    fn accumulate_grad(&self, w: &[f64], x: &[f64], label: usize, grad: &mut [f64]) -> f64 {
        let acts = self.activations(w, x);
        let logits = acts.last().expect("at least one layer");
        let (probs, log_sum) = softmax(logits);
        let loss = log_sum - logits[label];

        let mut delta = probs;
        delta[label] -= 1.0;
        for l in (0..self.layers.len()).rev() {
            let layer = self.layers[l];
            let input: &[f64] = if l == 0 { x } else { &acts[l - 1] };
            for (r, xi) in input.iter().enumerate() {
                let row = &mut grad[layer.weight + r * layer.fan_out..][..layer.fan_out];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            if let Some(b) = layer.bias {
                for (g, d) in grad[b..b + layer.fan_out].iter_mut().zip(&delta) {
                    *g += d;
                }
            }
            if l > 0 {
                // back through W, then through tanh of the previous layer
                let mut prev = vec![0.0; layer.fan_in];
                for (r, p) in prev.iter_mut().enumerate() {
                    let row = &w[layer.weight + r * layer.fan_out..][..layer.fan_out];
                    let s: f64 = row.iter().zip(&delta).map(|(a, b)| a * b).sum();
                    let a = input[r];
                    *p = s * (1.0 - a * a);
                }
                delta = prev;
            }
        }
        loss
    }
}

/// Numerically stable softmax; also returns `log Σ exp(z)`.
fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

/// Logits of `w` for a single feature row.
pub fn forward(w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    let mlp = Mlp::from_shapes(w.shapes())?;
    if x.len() != mlp.input_dims() {
        return Err(Error::LengthMismatch {
            expected: mlp.input_dims(),
            actual: x.len(),
        });
    }
    Ok(mlp.logits(w.values(), x))
}

/// Mean softmax cross-entropy over `indices` of `data` and its gradient.
pub fn loss_and_grad(w: &ParamVector, data: &Dataset, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mlp = Mlp::from_shapes(w.shapes())?;
    check_compatible(&mlp, data)?;
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(batch_loss_and_grad(&mlp, w.values(), data, indices))
}

pub(super) fn batch_loss_and_grad(mlp: &Mlp, w: &[f64], data: &Dataset, indices: &[usize]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; w.len()];
    let mut loss = 0.0;
    for &i in indices {
        loss += mlp.accumulate_grad(w, data.row(i), data.labels()[i], &mut grad);
    }
    let scale = 1.0 / indices.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

pub(super) fn check_compatible(mlp: &Mlp, data: &Dataset) -> Result<()> {
    if mlp.input_dims() != data.dims() {
        return Err(Error::Config(format!(
            "model expects {} features, dataset has {}",
            mlp.input_dims(),
            data.dims()
        )));
    }
    if mlp.output_dims() != data.num_classes() {
        return Err(Error::Config(format!(
            "model emits {} logits, dataset has {} classes",
            mlp.output_dims(),
            data.num_classes()
        )));
    }
    Ok(())
}
