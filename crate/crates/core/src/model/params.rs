use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Dimensions of one parameter tensor, e.g. `[784, 64]` for a weight matrix
/// or `[64]` for a bias.
pub type Shape = Vec<usize>;

/// Flat model parameters plus the layer shapes they are laid out in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    shapes: Vec<Shape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, shapes: Vec<Shape>) -> Result<Self> {
        let expected = shapes_len(&shapes);
        check_len(expected, values.len())?;
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite parameter at index {k}")));
        }
        Ok(Self { values, shapes })
    }

    /// A single flat tensor with no layer structure beyond its length.
    pub fn from_flat(values: Vec<f64>) -> Self {
        let shapes = vec![vec![values.len()]];
        Self { values, shapes }
    }

    pub fn zeros(shapes: Vec<Shape>) -> Self {
        let len = shapes_len(&shapes);
        Self {
            values: vec![0.0; len],
            shapes,
        }
    }

    /// Same shapes as `self`, new values. Panics if the length differs.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            shapes: self.shapes.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v != 0.0).count()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn shapes_len(shapes: &[Shape]) -> usize {
    shapes.iter().map(|s| s.iter().product::<usize>()).sum()
}

/// Binary keep/prune indicator aligned with a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn full(len: usize) -> Self {
        Self { bits: vec![true; len] }
    }

    pub fn empty(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Fraction of kept positions. An empty mask has density 0.
    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }

    /// True when every kept position of `self` is also kept in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(k, b)| b.then_some(k))
    }
}

/// Deterministic initialisation: weight tensors (rank ≥ 2) are drawn from a
/// Glorot-scaled uniform distribution, rank-1 tensors (biases) are zero.
pub fn init_model(shapes: &[Shape], seed: u64) -> Result<ParamVector> {
    if shapes.is_empty() {
        return Err(Error::Config("model shapes are empty".into()));
    }
    if let Some(s) = shapes.iter().find(|s| s.is_empty() || s.contains(&0)) {
        return Err(Error::Config(format!("invalid layer shape {s:?}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(shapes_len(shapes));
    for shape in shapes {
        let n: usize = shape.iter().product();
        if shape.len() == 1 {
            values.extend(std::iter::repeat_n(0.0, n));
        } else {
            let fan_in = shape[0];
            let fan_out: usize = shape[1..].iter().product();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..n).map(|_| rng.random_range(-limit..limit)));
        }
    }
    ParamVector::new(values, shapes.to_vec())
}

/// Elementwise `w ⊙ m`.
pub fn apply_mask(w: &ParamVector, m: &Mask) -> Result<ParamVector> {
    check_len(w.len(), m.len())?;
    let values = w
        .values
        .iter()
        .zip(&m.bits)
        .map(|(v, keep)| if *keep { *v } else { 0.0 })
        .collect();
    Ok(w.with_values(values))
}

/// Support of `w`: bit k is set iff `w[k] != 0`.
pub fn mask_of(w: &ParamVector) -> Mask {
    Mask {
        bits: w.values.iter().map(|v| *v != 0.0).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&[vec![2, 2]], 7).unwrap();
        let b = init_model(&[vec![2, 2]], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_len_is_sum_of_products() {
        let w = init_model(&[vec![4, 3], vec![3]], 123).unwrap();
        assert_eq!(w.len(), 15);
        assert!(w.values()[12..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn init_seeds_differ() {
        let a = init_model(&[vec![2, 2]], 7).unwrap();
        let b = init_model(&[vec![2, 2]], 8).unwrap();
        assert!(a.values().iter().zip(b.values()).any(|(x, y)| x != y));
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(matches!(init_model(&[], 1), Err(Error::Config(_))));
        assert!(matches!(init_model(&[vec![3, 0]], 1), Err(Error::Config(_))));
        assert!(matches!(init_model(&[vec![]], 1), Err(Error::Config(_))));
    }

    #[test]
    fn apply_mask_examples() {
        let w = ParamVector::from_flat(vec![1.0, 2.0]);
        let full = apply_mask(&w, &Mask::full(2)).unwrap();
        assert_eq!(full.values(), &[1.0, 2.0]);
        let m = Mask::from_bits(vec![false, true]);
        assert_eq!(apply_mask(&w, &m).unwrap().values(), &[0.0, 2.0]);
        assert!(matches!(
            apply_mask(&w, &Mask::full(3)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn mask_of_examples() {
        let w = ParamVector::from_flat(vec![0.0, 3.0, 0.0]);
        assert_eq!(mask_of(&w).bits(), &[false, true, false]);
        let z = ParamVector::from_flat(vec![0.0; 5]);
        assert_eq!(mask_of(&z).density(), 0.0);
    }

    #[test]
    fn rejects_non_finite_values() {
        assert!(ParamVector::new(vec![f64::NAN], vec![vec![1]]).is_err());
        assert!(ParamVector::new(vec![1.0], vec![vec![2]]).is_err());
    }

    fn vec_and_mask() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..64).prop_flat_map(|n| {
            (
                proptest::collection::vec(-10.0f64..10.0, n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn apply_mask_is_idempotent((v, bits) in vec_and_mask()) {
            let w = ParamVector::from_flat(v);
            let m = Mask::from_bits(bits);
            let once = apply_mask(&w, &m).unwrap();
            let twice = apply_mask(&once, &m).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn mask_of_recovers_mask((v, bits) in vec_and_mask()) {
            // shift away from zero so v has no exact zeros
            let v: Vec<f64> = v.into_iter().map(|x| if x >= 0.0 { x + 0.5 } else { x - 0.5 }).collect();
            let m = Mask::from_bits(bits);
            let w = apply_mask(&ParamVector::from_flat(v), &m).unwrap();
            prop_assert_eq!(mask_of(&w), m);
        }
    }
}
