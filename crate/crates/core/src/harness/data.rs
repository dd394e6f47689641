//! Synthetic classification data and federated partitioning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Dataset;

use super::config::PartitionSpec;

/// Cluster centres per class; two per class makes the task non-linear.
pub const CLUSTERS_PER_CLASS: usize = 2;

/// Gaussian class-cluster data: each class is a mixture of
/// [`CLUSTERS_PER_CLASS`] unit-variance blobs whose centres lie at distance
/// `separation` from the origin in random directions. Labels are balanced.
pub fn generate_dataset(classes: usize, dims: usize, samples: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes == 0 || dims == 0 || samples == 0 {
        return Err(Error::Config(
            "dataset generation needs positive classes, dims and samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes * CLUSTERS_PER_CLASS)
        .map(|_| {
            let v: Vec<f64> = (0..dims).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x * separation / norm).collect()
        })
        .collect();

    let mut labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(samples * dims);
    for &label in &labels {
        let centre = &centres[label * CLUSTERS_PER_CLASS + rng.random_range(0..CLUSTERS_PER_CLASS)];
        features.extend(centre.iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
    }
    Dataset::new(features, dims, labels, classes)
}

/// Splits `data` into `clients` disjoint parts covering every sample.
///
/// IID shuffles and deals equal shares. Label skew draws each client's class
/// proportions from a symmetric Dirichlet with concentration `skew_alpha`
/// over the classes not yet used up, and fills an equal quota from the
/// remaining class pools, topping up from the client's next-preferred classes
/// when a pool runs dry.
pub fn partition(data: &Dataset, clients: usize, spec: PartitionSpec, seed: u64) -> Result<Vec<Dataset>> {
    if clients == 0 || clients > data.len() {
        return Err(Error::Config(format!(
            "cannot split {} samples among {clients} clients",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quotas: Vec<usize> = (0..clients)
        .map(|i| data.len() / clients + usize::from(i < data.len() % clients))
        .collect();

    let parts: Vec<Vec<usize>> = match spec {
        PartitionSpec::Iid => {
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let mut at = 0;
            quotas
                .iter()
                .map(|q| {
                    let part = idx[at..at + q].to_vec();
                    at += q;
                    part
                })
                .collect()
        }
        PartitionSpec::LabelSkew { skew_alpha } => {
            if skew_alpha.is_nan() || skew_alpha <= 0.0 {
                return Err(Error::Config("skew_alpha must be positive".into()));
            }
            let k = data.num_classes();
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
            for (i, l) in data.labels().iter().enumerate() {
                pools[*l].push(i);
            }
            for p in &mut pools {
                p.shuffle(&mut rng);
            }
            let gamma = Gamma::new(skew_alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
            quotas
                .iter()
                .map(|&quota| {
                    // proportions over the classes that still have samples
                    let open: Vec<usize> = (0..k).filter(|c| !pools[*c].is_empty()).collect();
                    let mut props = vec![0.0; k];
                    for &c in &open {
                        props[c] = gamma.sample(&mut rng);
                    }
                    let total: f64 = props.iter().sum();
                    if total > 0.0 && total.is_finite() {
                        props.iter_mut().for_each(|p| *p /= total);
                    } else if !open.is_empty() {
                        props = vec![0.0; k];
                        props[open[rng.random_range(0..open.len())]] = 1.0;
                    }
                    draw_quota(&mut pools, &props, quota)
                })
                .collect()
        }
    };
    Ok(parts.iter().map(|p| data.subset(p)).collect())
}

fn draw_quota(pools: &mut [Vec<usize>], props: &[f64], quota: usize) -> Vec<usize> {
    let mut preference: Vec<usize> = (0..props.len()).collect();
    preference.sort_by(|a, b| props[*b].total_cmp(&props[*a]).then(a.cmp(b)));

    let mut take: Vec<usize> = props
        .iter()
        .zip(pools.iter())
        .map(|(p, pool)| ((p * quota as f64).floor() as usize).min(pool.len()))
        .collect();
    let mut deficit = quota - take.iter().sum::<usize>().min(quota);
    // top up one sample at a time in preference order, cycling while room remains
    while deficit > 0 {
        let mut progressed = false;
        for &c in &preference {
            if deficit == 0 {
                break;
            }
            if take[c] < pools[c].len() {
                take[c] += 1;
                deficit -= 1;
                progressed = true;
                if props[c] > 0.0 {
                    // stay on the preferred class until it runs dry
                    while deficit > 0 && take[c] < pools[c].len() {
                        take[c] += 1;
                        deficit -= 1;
                    }
                }
            }
        }
        if !progressed {
            break;
        }
    }
    let mut out = Vec::with_capacity(quota);
    for (c, n) in take.into_iter().enumerate() {
        let at = pools[c].len() - n;
        out.extend(pools[c].drain(at..));
    }
    out.sort_unstable();
    out
}
