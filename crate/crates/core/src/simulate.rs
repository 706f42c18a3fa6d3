//! Synthetic data from the mixture model with known truth.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::math::norm_cdf;
use crate::model::ResponseMatrix;
use crate::rng::{StepTag, Streams};

/// Generating parameters retained for recovery scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// Zero-based generating cluster of each unit.
    pub assign_true: Vec<usize>,
    /// `n_units x dim`.
    pub theta_true: Vec<f64>,
    /// `n_clusters x n_items x dim`.
    pub beta_true: Vec<f64>,
    /// `n_clusters x n_items`.
    pub gamma_true: Vec<f64>,
    pub cluster_probs: Vec<f64>,
    pub dim: usize,
    pub n_items: usize,
    pub seed: u64,
}

impl SimTruth {
    /// Discriminations of a generating cluster for `dim == 1`.
    pub fn discriminations(&self, cluster: usize) -> Vec<f64> {
        (0..self.n_items)
            .map(|j| self.beta_true[(cluster * self.n_items + j) * self.dim])
            .collect()
    }
}

/// Simulation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSpec {
    pub n_units: usize,
    pub n_items: usize,
    pub dim: usize,
    pub cluster_probs: Vec<f64>,
    pub seed: u64,
    /// Probability that a cell is dropped (0 keeps the matrix complete).
    pub missing_rate: f64,
}

impl SimSpec {
    pub fn new(
        n_units: usize,
        n_items: usize,
        dim: usize,
        cluster_probs: Vec<f64>,
        seed: u64,
    ) -> Self {
        Self {
            n_units,
            n_items,
            dim,
            cluster_probs,
            seed,
            missing_rate: 0.0,
        }
    }
}

/// Draws cluster labels, standard-normal ideal points and item parameters,
/// then Bernoulli-probit responses.
pub fn simulate_dataset(spec: &SimSpec) -> Result<(ResponseMatrix, SimTruth)> {
    let SimSpec {
        n_units,
        n_items,
        dim,
        seed,
        missing_rate,
        ..
    } = *spec;
    let probs = &spec.cluster_probs;
    if n_units == 0 || n_items == 0 || dim == 0 {
        return Err(invalid("n_units, n_items and dim must be positive"));
    }
    if probs.is_empty()
        || probs.iter().any(|p| !(*p >= 0.0 && p.is_finite()))
        || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(invalid(format!(
            "cluster probabilities {probs:?} must be non-negative and sum to 1"
        )));
    }
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(invalid("missing_rate must be in [0, 1)"));
    }
    let mut rng = Streams::new(seed).stream(0, StepTag::Simulate, 0);
    let n_clusters = probs.len();

    let assign_true: Vec<usize> = (0..n_units)
        .map(|_| {
            let mut u: f64 = rng.random();
            probs
                .iter()
                .position(|&p| {
                    let hit = u < p;
                    u -= p;
                    hit
                })
                .unwrap_or_else(|| probs.iter().rposition(|&p| p > 0.0).unwrap_or(0))
        })
        .collect();
    let mut normals =
        |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let theta_true = normals(n_units * dim);
    let beta_true = normals(n_clusters * n_items * dim);
    let gamma_true = normals(n_clusters * n_items);

    let mut cells = Vec::with_capacity(n_units * n_items);
    for i in 0..n_units {
        let c = assign_true[i];
        for j in 0..n_items {
            let off = (c * n_items + j) * dim;
            let eta: f64 = (0..dim)
                .map(|d| beta_true[off + d] * theta_true[i * dim + d])
                .sum::<f64>()
                - gamma_true[c * n_items + j];
            cells.push(Some(rng.random::<f64>() < norm_cdf(eta)));
        }
    }
    if missing_rate > 0.0 {
        for row in cells.chunks_mut(n_items) {
            let keep = rng.random_range(0..n_items);
            for (j, cell) in row.iter_mut().enumerate() {
                if rng.random::<f64>() < missing_rate && j != keep {
                    *cell = None;
                }
            }
        }
    }
    let y = ResponseMatrix::from_cells(n_units, n_items, cells)?;
    let truth = SimTruth {
        assign_true,
        theta_true,
        beta_true,
        gamma_true,
        cluster_probs: probs.clone(),
        dim,
        n_items,
        seed,
    };
    Ok((y, truth))
}
