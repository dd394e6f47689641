use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

use super::mlp::{batch_loss_and_grad, check_compatible, Mlp};
use super::params::{apply_mask, Mask, ParamVector};

/// Row-major feature matrix with integer labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dims: usize, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if dims == 0 || num_classes == 0 {
            return Err(Error::Config("dataset needs positive dims and classes".into()));
        }
        check_len(labels.len() * dims, features.len())?;
        if let Some(l) = labels.iter().find(|l| **l >= num_classes) {
            return Err(Error::Contract(format!("label {l} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            dims,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dims);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            dims: self.dims,
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Concatenation of several datasets with identical geometry.
    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyDataset)?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dims != first.dims || p.num_classes != first.num_classes {
                return Err(Error::Contract("datasets differ in geometry".into()));
            }
            features.extend_from_slice(&p.features);
            labels.extend_from_slice(&p.labels);
        }
        Self::new(features, first.dims, labels, first.num_classes)
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for l in &self.labels {
            counts[*l] += 1;
        }
        counts
    }
}

/// Learning rate as a function of the global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        rate: f64,
    },
    /// `initial · factor^(round / period)`
    ExpDecay {
        initial: f64,
        factor: f64,
        period: f64,
    },
}

impl LrSchedule {
    pub fn rate(&self, round: u64) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::ExpDecay {
                initial,
                factor,
                period,
            } => initial * factor.powf(round as f64 / period),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { rate } => rate > 0.0 && rate.is_finite(),
            LrSchedule::ExpDecay {
                initial,
                factor,
                period,
            } => initial > 0.0 && factor > 0.0 && period > 0.0 && initial.is_finite() && factor.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "learning-rate schedule must stay positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub local_iterations: usize,
}

/// Masked minibatch SGD on softmax cross-entropy.
///
/// The mask is applied to the starting point and again after every step, so
/// pruned coordinates are exactly zero in the result. Batches are drawn
/// without replacement (capped at the dataset size) from a ChaCha stream
/// seeded by `seed`.
pub fn local_train(
    w: &ParamVector,
    m: &Mask,
    data: &Dataset,
    spec: &TrainSpec,
    round: u64,
    seed: u64,
) -> Result<ParamVector> {
    check_len(w.len(), m.len())?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mlp = Mlp::from_shapes(w.shapes())?;
    check_compatible(&mlp, data)?;
    if spec.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }

    let eta = spec.schedule.rate(round);
    let mut out = apply_mask(w, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = spec.batch_size.min(data.len());
    for iteration in 0..spec.local_iterations {
        let mut idx = index::sample(&mut rng, data.len(), batch).into_vec();
        idx.sort_unstable();
        let (loss, grad) = batch_loss_and_grad(&mlp, out.values(), data, &idx);
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration,
                learning_rate: eta,
            });
        }
        for ((v, g), keep) in out.values_mut().iter_mut().zip(&grad).zip(m.bits()) {
            *v = if *keep { *v - eta * g } else { 0.0 };
        }
        if !out.is_finite() {
            return Err(Error::Divergence {
                iteration,
                learning_rate: eta,
            });
        }
    }
    Ok(out)
}

/// Fraction of samples whose arg-max logit (lowest index on ties) equals the
/// label.
pub fn test_acc(w: &ParamVector, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mlp = Mlp::from_shapes(w.shapes())?;
    check_compatible(&mlp, data)?;
    let correct = (0..data.len())
        .filter(|&i| argmax(&mlp.logits(w.values(), data.row(i))) == data.labels()[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in z.iter().enumerate().skip(1) {
        if *v > z[best] {
            best = k;
        }
    }
    best
}
