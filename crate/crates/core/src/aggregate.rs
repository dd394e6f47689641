//! Server-side buffer of the latest model from every client, staleness
//! weights, and the two aggregation rules: masked averaging for the model that
//! gets distributed and plain averaging for the model that gets evaluated.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{mask_of, ParamVector};
use crate::prune::TimeQueue;

/// Buffer slot for one client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRecord {
    pub model: ParamVector,
    /// Server round at which the model's base was dispatched.
    pub dispatch_round: u64,
    /// Virtual time at which the upload completed.
    pub arrival_time: f64,
    /// Full-density-equivalent duration of the round that produced `model`
    /// (elapsed download + train + upload divided by `density`).
    pub round_time: f64,
    /// Recent round times. [`ServerBuffer::update`] carries this over from the
    /// previous record of the same client and appends `round_time`.
    pub queue: TimeQueue,
    /// Density the client was dispatched at.
    pub density: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServerBuffer {
    pub records: BTreeMap<usize, ClientRecord>,
    pub round: u64,
}

impl ServerBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, client: usize) -> Option<&ClientRecord> {
        self.records.get(&client)
    }

    /// Replaces the slot of `client` with `rec`; the round-time history of the
    /// old slot (if any) is kept and `rec.round_time` is pushed onto it.
    pub fn update(&mut self, client: usize, mut rec: ClientRecord) -> Result<()> {
        if rec.dispatch_round > self.round {
            return Err(Error::Contract(format!(
                "client {client} reports dispatch round {} ahead of server round {}",
                rec.dispatch_round, self.round
            )));
        }
        if let Some(old) = self.records.remove(&client) {
            rec.queue = old.queue;
        }
        rec.queue.push(rec.round_time)?;
        self.records.insert(client, rec);
        Ok(())
    }

    /// `n - n'(i)` for a buffered client.
    pub fn age(&self, client: usize) -> Option<u64> {
        self.records.get(&client).map(|r| self.round - r.dispatch_round)
    }
}

/// Functional form of [`ServerBuffer::update`].
pub fn update_buffer(mut buf: ServerBuffer, client: usize, rec: ClientRecord) -> Result<ServerBuffer> {
    buf.update(client, rec)?;
    Ok(buf)
}

/// Normalised aggregation weights keyed by client id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessWeights {
    pub weights: BTreeMap<usize, f64>,
}

impl StalenessWeights {
    pub fn get(&self, client: usize) -> Option<f64> {
        self.weights.get(&client).copied()
    }
}

/// Freshness score `(1 + age)^-beta`.
pub fn freshness(age: u64, beta: f64) -> f64 {
    (1.0 + age as f64).powf(-beta)
}

/// `p_i = s_i / Σ s_j` with `s_i = (1 + n - n'(i))^-beta`.
pub fn staleness_weights(buf: &ServerBuffer, beta: f64) -> Result<StalenessWeights> {
    if buf.is_empty() {
        return Err(Error::Contract("staleness weights of an empty buffer".into()));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("staleness exponent must be >= 0, got {beta}")));
    }
    let scores: BTreeMap<usize, f64> = buf
        .records
        .iter()
        .map(|(i, r)| (*i, freshness(buf.round - r.dispatch_round, beta)))
        .collect();
    let total: f64 = scores.values().sum();
    Ok(StalenessWeights {
        weights: scores.into_iter().map(|(i, s)| (i, s / total)).collect(),
    })
}

fn check_weights(buf: &ServerBuffer, wts: &StalenessWeights) -> Result<()> {
    if !buf.records.keys().eq(wts.weights.keys()) {
        return Err(Error::Contract(
            "aggregation weights do not cover exactly the buffered clients".into(),
        ));
    }
    Ok(())
}

/// Masked federated averaging.
///
/// Each coordinate is the weighted mean over the clients whose model is
/// non-zero there; coordinates no client covers keep their value from `prev`.
/// The result is mixed with `prev` by the global learning rate `eta_g`.
pub fn mask_fed_avg(buf: &ServerBuffer, prev: &ParamVector, wts: &StalenessWeights, eta_g: f64) -> Result<ParamVector> {
    check_weights(buf, wts)?;
    if !(eta_g > 0.0 && eta_g <= 1.0) {
        return Err(Error::Config(format!(
            "global learning rate must lie in (0, 1], got {eta_g}"
        )));
    }
    let len = prev.len();
    let mut w_acc = vec![0.0; len];
    let mut mask_acc = vec![0.0; len];
    for (client, rec) in &buf.records {
        check_len(len, rec.model.len())?;
        let p = wts.weights[client];
        let mask = mask_of(&rec.model);
        for (k, v) in rec.model.values().iter().enumerate() {
            w_acc[k] += p * v;
            if mask.get(k) {
                mask_acc[k] += p;
            }
        }
    }
    let values = prev
        .values()
        .iter()
        .zip(w_acc.iter().zip(&mask_acc))
        .map(|(old, (acc, cover))| {
            if *cover == 0.0 {
                // (1 - eta_g) * old + eta_g * old, without the rounding
                *old
            } else {
                let candidate = acc / cover;
                if eta_g == 1.0 {
                    candidate
                } else {
                    (1.0 - eta_g) * old + eta_g * candidate
                }
            }
        })
        .collect();
    Ok(prev.with_values(values))
}

/// Plain weighted average `Σ p_i w_i`.
pub fn fed_avg(buf: &ServerBuffer, wts: &StalenessWeights) -> Result<ParamVector> {
    check_weights(buf, wts)?;
    let mut iter = buf.records.iter();
    let (_, first) = iter
        .next()
        .ok_or_else(|| Error::Contract("fed_avg of an empty buffer".into()))?;
    let len = first.model.len();
    let mut acc = vec![0.0; len];
    for (client, rec) in &buf.records {
        check_len(len, rec.model.len())?;
        let p = wts.weights[client];
        for (a, v) in acc.iter_mut().zip(rec.model.values()) {
            *a += p * v;
        }
    }
    Ok(first.model.with_values(acc))
}
