//! Density controller.
//!
//! Each client's round times go into a bounded FIFO; the density assigned to a
//! client is the ratio of the fastest client's mean round time to its own,
//! clamped to `[rho_min, 1]`. Masks are derived by magnitude ranking of the
//! global model. An early stopper per client raises `rho_min` in steps of
//! `delta_rho` once accuracy stalls.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mask, ParamVector};

/// Densities within this distance of 1 are snapped to exactly 1.
const DENSITY_EPS: f64 = 1e-9;

/// Bounded FIFO of positive round times; pushing at capacity evicts the oldest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeQueue {
    entries: VecDeque<f64>,
    capacity: usize,
}

impl TimeQueue {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("round-time queue capacity must be positive".into()));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
    }

    pub fn push(&mut self, t: f64) -> Result<()> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Contract(format!("round time must be positive, got {t}")));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(t);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().copied()
    }
}

/// Arithmetic mean of the queue, or `None` when the client has no history yet
/// (callers then assign a provisional density of 1).
pub fn mean_round_time(q: &TimeQueue) -> Option<f64> {
    if q.is_empty() {
        None
    } else {
        Some(q.entries.iter().sum::<f64>() / q.len() as f64)
    }
}

/// Per-client density bookkeeping. The round-time queue itself lives in the
/// server buffer record for the client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityState {
    pub rho: f64,
    pub rho_min: f64,
    pub delta_rho: f64,
}

impl DensityState {
    /// Cold-start state: full density with the given floor.
    pub fn new(rho_min: f64, delta_rho: f64) -> Result<Self> {
        for (name, v) in [("rho_min", rho_min), ("delta_rho", delta_rho)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        Ok(Self {
            rho: 1.0,
            rho_min,
            delta_rho,
        })
    }
}

/// `clamp(min_j mean_j / mean_i, rho_min, 1)`.
pub fn compute_density(all_means: &BTreeMap<usize, f64>, i: usize, state: &DensityState) -> Result<f64> {
    let own = *all_means.get(&i).ok_or(Error::UnknownClient(i))?;
    if let Some((j, t)) = all_means.iter().find(|(_, t)| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::Contract(format!(
            "client {j} has non-positive mean round time {t}"
        )));
    }
    let fastest = all_means.values().copied().fold(f64::INFINITY, f64::min);
    let ratio = fastest / own;
    Ok(ratio.clamp(state.rho_min, 1.0))
}

/// How `prune_to_density` ranks weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruningPolicy {
    /// Keep the largest-magnitude entries over the whole vector.
    #[default]
    GlobalMagnitude,
    /// Keep the largest-magnitude entries of each layer tensor separately.
    LayerwiseMagnitude,
}

/// Number of entries kept at density `rho` out of `len`.
pub fn kept_count(rho: f64, len: usize) -> usize {
    // the epsilon keeps e.g. 0.33 * 10_000 = 3300.0000000000005 at 3300
    let k = (rho * len as f64 - DENSITY_EPS).ceil();
    (k.max(0.0) as usize).min(len)
}

/// Magnitude mask at density `rho`. Ties in `|w|` keep the lower index, so
/// masks of one model at increasing densities are nested.
pub fn prune_to_density(w: &ParamVector, rho: f64, policy: PruningPolicy) -> Result<Mask> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Contract(format!("density must lie in (0, 1], got {rho}")));
    }
    let values = w.values();
    let mut bits = vec![false; values.len()];
    match policy {
        PruningPolicy::GlobalMagnitude => keep_top(values, 0, kept_count(rho, values.len()), &mut bits),
        PruningPolicy::LayerwiseMagnitude => {
            let mut offset = 0;
            for shape in w.shapes() {
                let n: usize = shape.iter().product();
                keep_top(&values[offset..offset + n], offset, kept_count(rho, n), &mut bits);
                offset += n;
            }
        }
    }
    Ok(Mask::from_bits(bits))
}

fn keep_top(values: &[f64], offset: usize, k: usize, bits: &mut [bool]) {
    if k == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let rank = |a: &usize, b: &usize| values[*b].abs().total_cmp(&values[*a].abs()).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, rank);
    }
    for &i in &order[..k] {
        bits[offset + i] = true;
    }
}

/// Patience-based plateau detector. Fires when `patience` consecutive
/// observations fail to beat the best value by more than `min_delta`, then
/// resets its stall counter so it can fire again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub best: f64,
    pub patience: usize,
    pub stall_count: usize,
    pub min_delta: f64,
}

impl EarlyStopper {
    pub fn new(patience: usize, min_delta: f64) -> Result<Self> {
        if patience == 0 || min_delta.is_nan() || min_delta < 0.0 {
            return Err(Error::Config(format!(
                "early stopper needs patience > 0 and min_delta >= 0 (got {patience}, {min_delta})"
            )));
        }
        Ok(Self {
            best: f64::NEG_INFINITY,
            patience,
            stall_count: 0,
            min_delta,
        })
    }

    /// Feeds one accuracy value; returns whether the stopper fired.
    pub fn observe(&mut self, acc: f64) -> bool {
        if acc > self.best + self.min_delta {
            self.best = acc;
            self.stall_count = 0;
        } else {
            self.stall_count += 1;
        }
        if self.stall_count >= self.patience {
            self.stall_count = 0;
            true
        } else {
            false
        }
    }
}

/// Raises the floor to `min(rho + delta_rho, 1)` and pulls `rho` up to it.
/// A client already at full density is returned unchanged.
pub fn recover_density(state: DensityState) -> DensityState {
    if state.rho >= 1.0 {
        return state;
    }
    let mut floor = (state.rho + state.delta_rho).min(1.0).max(state.rho_min);
    if floor > 1.0 - DENSITY_EPS {
        floor = 1.0;
    }
    DensityState {
        rho: state.rho.max(floor),
        rho_min: floor,
        delta_rho: state.delta_rho,
    }
}

/// True iff every client runs at full density and the global stopper fired.
pub fn should_terminate(densities: &BTreeMap<usize, f64>, global_stopper_triggered: bool) -> bool {
    global_stopper_triggered && densities.values().all(|d| *d >= 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn queue(cap: usize, items: &[f64]) -> TimeQueue {
        let mut q = TimeQueue::new(cap).unwrap();
        for t in items {
            q.push(*t).unwrap();
        }
        q
    }

    #[test]
    fn mean_examples() {
        assert_eq!(mean_round_time(&queue(4, &[10.0])), Some(10.0));
        assert_eq!(mean_round_time(&queue(4, &[10.0, 20.0, 30.0])), Some(20.0));
        assert_eq!(mean_round_time(&queue(3, &[5.0, 10.0, 15.0, 20.0])), Some(15.0));
        assert_eq!(mean_round_time(&queue(3, &[])), None);
    }

    #[test]
    fn queue_rejects_non_positive() {
        let mut q = TimeQueue::new(2).unwrap();
        assert!(q.push(0.0).is_err());
        assert!(q.push(-1.0).is_err());
        assert!(TimeQueue::new(0).is_err());
    }

    fn means(pairs: &[(usize, f64)]) -> BTreeMap<usize, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn density_examples() {
        let m = means(&[(1, 10.0), (2, 20.0), (3, 40.0)]);
        let s = DensityState::new(0.1, 0.2).unwrap();
        assert_eq!(compute_density(&m, 1, &s).unwrap(), 1.0);
        assert_eq!(compute_density(&m, 2, &s).unwrap(), 0.5);
        assert_eq!(compute_density(&m, 3, &s).unwrap(), 0.25);

        let m = means(&[(1, 10.0), (2, 200.0)]);
        let s = DensityState::new(0.3, 0.2).unwrap();
        assert_eq!(compute_density(&m, 2, &s).unwrap(), 0.3);

        let m = means(&[(1, 7.0), (2, 7.0), (3, 7.0)]);
        for i in 1..=3 {
            assert_eq!(compute_density(&m, i, &s).unwrap(), 1.0);
        }
    }

    #[test]
    fn density_errors() {
        let s = DensityState::new(0.1, 0.2).unwrap();
        assert!(matches!(
            compute_density(&means(&[(1, 1.0)]), 2, &s),
            Err(Error::UnknownClient(2))
        ));
        assert!(compute_density(&means(&[(1, 0.0), (2, 1.0)]), 2, &s).is_err());
    }

    #[test]
    fn prune_examples() {
        let w = ParamVector::from_flat(vec![0.1, -0.5, 0.3, 0.05]);
        assert_eq!(
            prune_to_density(&w, 1.0, PruningPolicy::GlobalMagnitude).unwrap(),
            Mask::full(4)
        );
        assert_eq!(
            prune_to_density(&w, 0.5, PruningPolicy::GlobalMagnitude)
                .unwrap()
                .bits(),
            &[false, true, true, false]
        );
        let ties = ParamVector::from_flat(vec![1.0, -1.0, 1.0, 1.0]);
        assert_eq!(
            prune_to_density(&ties, 0.5, PruningPolicy::GlobalMagnitude)
                .unwrap()
                .bits(),
            &[true, true, false, false]
        );
        assert!(prune_to_density(&w, 0.0, PruningPolicy::GlobalMagnitude).is_err());
    }

    #[test]
    fn kept_count_avoids_float_overshoot() {
        assert_eq!(kept_count(0.33, 10_000), 3300);
        assert_eq!(kept_count(0.66, 10_000), 6600);
        assert_eq!(kept_count(0.5, 5), 3);
        assert_eq!(kept_count(1.0, 7), 7);
    }

    #[test]
    fn layerwise_prunes_each_tensor() {
        let w = ParamVector::new(vec![5.0, 4.0, 3.0, 0.1, 0.2, 0.3], vec![vec![3], vec![3]]).unwrap();
        let m = prune_to_density(&w, 1.0 / 3.0, PruningPolicy::LayerwiseMagnitude).unwrap();
        assert_eq!(m.bits(), &[true, false, false, false, false, true]);
    }

    #[test]
    fn stopper_examples() {
        let mut s = EarlyStopper::new(3, 0.0).unwrap();
        assert!(![0.5, 0.6, 0.7].iter().any(|a| s.observe(*a)));

        let mut s = EarlyStopper::new(3, 0.0).unwrap();
        let fired: Vec<bool> = [0.7, 0.7, 0.7, 0.7].iter().map(|a| s.observe(*a)).collect();
        assert_eq!(fired, [false, false, false, true]);
        assert_eq!(s.stall_count, 0);

        let mut s = EarlyStopper::new(1, 0.0).unwrap();
        assert!(!s.observe(0.5));
        assert!(s.observe(0.4));
    }

    #[test]
    fn stopper_respects_min_delta() {
        let mut s = EarlyStopper::new(2, 0.01).unwrap();
        s.observe(0.5);
        assert!(!s.observe(0.505));
        assert!(s.observe(0.509));
    }

    #[test]
    fn recovery_examples() {
        let s = recover_density(DensityState {
            rho: 0.4,
            rho_min: 0.1,
            delta_rho: 0.2,
        });
        assert!((s.rho_min - 0.6).abs() < 1e-15);
        assert_eq!(s.rho, s.rho_min);
        let s = recover_density(DensityState {
            rho: 0.95,
            rho_min: 0.1,
            delta_rho: 0.2,
        });
        assert_eq!((s.rho_min, s.rho), (1.0, 1.0));
        let full = DensityState {
            rho: 1.0,
            rho_min: 0.3,
            delta_rho: 0.2,
        };
        assert_eq!(recover_density(full), full);
    }

    #[test]
    fn recovery_from_point_two_takes_four_steps() {
        let mut s = DensityState::new(0.2, 0.2).unwrap();
        s.rho = 0.2;
        let mut events = 0;
        while s.rho < 1.0 {
            s = recover_density(s);
            events += 1;
        }
        assert_eq!(events, 4);
        assert_eq!(s.rho_min, 1.0);
    }

    #[test]
    fn termination() {
        let all_full = means(&[(0, 1.0), (1, 1.0)]);
        assert!(should_terminate(&all_full, true));
        assert!(!should_terminate(&means(&[(0, 1.0), (1, 0.8)]), true));
        assert!(!should_terminate(&all_full, false));
    }

    proptest! {
        #[test]
        fn prune_cardinality_and_dominance(
            v in proptest::collection::vec(-5.0f64..5.0, 1..80),
            rho in 0.01f64..=1.0,
        ) {
            let w = ParamVector::from_flat(v.clone());
            let m = prune_to_density(&w, rho, PruningPolicy::GlobalMagnitude).unwrap();
            prop_assert_eq!(m.count_ones(), kept_count(rho, v.len()));
            let kept_min = m.ones().map(|k| v[k].abs()).fold(f64::INFINITY, f64::min);
            let dropped_max = (0..v.len()).filter(|k| !m.get(*k)).map(|k| v[k].abs()).fold(0.0, f64::max);
            prop_assert!(kept_min >= dropped_max);
        }

        #[test]
        fn masks_of_one_model_are_nested(
            v in proptest::collection::vec(-2.0f64..2.0, 1..60),
            a in 0.01f64..=1.0,
            b in 0.01f64..=1.0,
        ) {
            let w = ParamVector::from_flat(v);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let ml = prune_to_density(&w, lo, PruningPolicy::GlobalMagnitude).unwrap();
            let mh = prune_to_density(&w, hi, PruningPolicy::GlobalMagnitude).unwrap();
            prop_assert!(ml.is_subset_of(&mh));
        }

        #[test]
        fn density_stays_in_band(
            ts in proptest::collection::vec(0.1f64..100.0, 1..12),
            rho_min in 0.01f64..=1.0,
        ) {
            let m: BTreeMap<usize, f64> = ts.iter().copied().enumerate().collect();
            let s = DensityState::new(rho_min, 0.2).unwrap();
            let fastest = m.iter().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| *i).unwrap();
            for i in m.keys() {
                let d = compute_density(&m, *i, &s).unwrap();
                prop_assert!(d >= rho_min && d <= 1.0);
            }
            prop_assert_eq!(compute_density(&m, fastest, &s).unwrap(), 1.0);
        }

        #[test]
        fn recovery_is_monotone_and_bounded(rho_min in 0.01f64..1.0, delta in 0.05f64..=1.0) {
            let mut s = DensityState::new(rho_min, delta).unwrap();
            s.rho = rho_min;
            let bound = ((1.0 - rho_min) / delta).ceil() as usize;
            let mut events = 0;
            while s.rho < 1.0 {
                let next = recover_density(s);
                prop_assert!(next.rho_min >= s.rho_min);
                s = next;
                events += 1;
                prop_assert!(events <= bound);
            }
        }
    }
}
