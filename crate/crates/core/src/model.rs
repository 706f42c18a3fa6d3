//! Domain types, the probit response function, stick-breaking arithmetic and
//! the joint log-posterior used to pick the MAP state.
//!
//! Cluster indices are zero-based in memory. Files and reports use one-based
//! labels; conversion happens in [`crate::io`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MpsError, Result};
use crate::math::{
    clamp_prob, compensated_sum, ln_beta_pdf, ln_gamma_pdf, norm_cdf, LN_2PI, PROB_FLOOR,
};

/// Binary response matrix with missing cells, stored row-major by unit.
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMatrix {
    n_units: usize,
    n_items: usize,
    cells: Vec<Option<bool>>,
    unit_ids: Vec<String>,
    item_ids: Vec<String>,
}

impl ResponseMatrix {
    /// Builds a matrix, rejecting duplicate ids and units with no observed
    /// responses.
    pub fn new(
        unit_ids: Vec<String>,
        item_ids: Vec<String>,
        cells: Vec<Option<bool>>,
    ) -> Result<Self> {
        let n_units = unit_ids.len();
        let n_items = item_ids.len();
        if cells.len() != n_units * n_items {
            return Err(MpsError::DimensionMismatch(format!(
                "{} cells for {n_units} units x {n_items} items",
                cells.len()
            )));
        }
        check_unique(&unit_ids, "unit")?;
        check_unique(&item_ids, "item")?;
        if n_items > 0 {
            let empty: Vec<&str> = cells
                .chunks(n_items)
                .zip(&unit_ids)
                .filter(|(row, _)| row.iter().all(Option::is_none))
                .map(|(_, id)| id.as_str())
                .collect();
            if !empty.is_empty() {
                return Err(MpsError::Validation(format!(
                    "units with no observed responses: {}",
                    empty.join(", ")
                )));
            }
        } else if n_units > 0 {
            return Err(MpsError::Validation("matrix has no items".into()));
        }
        Ok(Self {
            n_units,
            n_items,
            cells,
            unit_ids,
            item_ids,
        })
    }

    /// Convenience constructor with generated ids `u1..`, `j1..`.
    pub fn from_cells(n_units: usize, n_items: usize, cells: Vec<Option<bool>>) -> Result<Self> {
        let units = (1..=n_units).map(|i| format!("u{i}")).collect();
        let items = (1..=n_items).map(|j| format!("j{j}")).collect();
        Self::new(units, items, cells)
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn get(&self, unit: usize, item: usize) -> Option<bool> {
        self.cells[unit * self.n_items + item]
    }

    #[inline]
    pub fn row(&self, unit: usize) -> &[Option<bool>] {
        &self.cells[unit * self.n_items..(unit + 1) * self.n_items]
    }

    pub fn cells(&self) -> &[Option<bool>] {
        &self.cells
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn n_observed(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn unit_index(&self) -> BTreeMap<&str, usize> {
        self.unit_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(MpsError::Validation(format!("duplicate {what} id '{id}'")));
        }
    }
    Ok(())
}

/// Prior on the stick-breaking concentration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPrior {
    /// `alpha ~ Gamma(shape, rate)`, resampled every sweep.
    Gamma { shape: f64, rate: f64 },
    /// Concentration held fixed.
    Fixed(f64),
}

impl Default for AlphaPrior {
    fn default() -> Self {
        AlphaPrior::Gamma {
            shape: 1.0,
            rate: 1.0,
        }
    }
}

/// Model and sampler configuration.
///
/// The ideal-point prior precision is the identity and is not configurable.
#[derive(Clone, Debug, PartialEq)]
pub struct MpsConfig {
    pub dim: usize,
    pub truncation: usize,
    /// Prior precision of `(beta, gamma)`, `(dim + 1) x (dim + 1)`.
    pub omega: DMatrix<f64>,
    pub alpha_prior: AlphaPrior,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Unit index to pinned cluster (zero-based).
    pub constraints: BTreeMap<usize, usize>,
    /// Keep an assignment snapshot every `thin` iterations; 0 disables.
    pub thin: usize,
    pub assignment: AssignmentUpdate,
}

impl MpsConfig {
    pub fn new(dim: usize, truncation: usize) -> Self {
        Self {
            dim,
            truncation,
            omega: DMatrix::identity(dim + 1, dim + 1),
            alpha_prior: AlphaPrior::default(),
            n_iter: 1000,
            burn_in: 500,
            seed: 0,
            constraints: BTreeMap::new(),
            thin: 100,
            assignment: AssignmentUpdate::default(),
        }
    }

    pub fn with_iterations(mut self, n_iter: usize, burn_in: usize) -> Self {
        self.n_iter = n_iter;
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        if self.truncation < 2 {
            return Err(invalid("truncation must be at least 2"));
        }
        if self.burn_in >= self.n_iter {
            return Err(invalid(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        let p = self.dim + 1;
        if self.omega.shape() != (p, p) {
            return Err(invalid(format!("omega must be {p}x{p}")));
        }
        if (&self.omega - self.omega.transpose()).abs().max() > 1e-12
            || self.omega.clone().cholesky().is_none()
        {
            return Err(invalid("omega must be symmetric positive definite"));
        }
        match self.alpha_prior {
            AlphaPrior::Gamma { shape, rate } if shape > 0.0 && rate > 0.0 => {}
            AlphaPrior::Fixed(a) if a > 0.0 && a.is_finite() => {}
            other => return Err(invalid(format!("invalid alpha prior {other:?}"))),
        }
        if let Some((&unit, &k)) = self.constraints.iter().find(|(_, &k)| k >= self.truncation) {
            return Err(invalid(format!(
                "unit {unit} constrained to cluster {} outside 1..{}",
                k + 1,
                self.truncation
            )));
        }
        Ok(())
    }
}

/// How cluster assignments are resampled each sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AssignmentUpdate {
    /// Ideal point integrated out, then redrawn under the new cluster.
    #[default]
    Collapsed,
    /// Conditional on the current ideal point.
    Conditional,
}

/// One complete Gibbs state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpsState {
    pub n_units: usize,
    pub n_items: usize,
    pub dim: usize,
    pub truncation: usize,
    /// `n_units x dim`, row-major.
    pub theta: Vec<f64>,
    /// `truncation x n_items x dim`.
    pub beta: Vec<f64>,
    /// `truncation x n_items`.
    pub gamma: Vec<f64>,
    pub assign: Vec<usize>,
    /// `truncation - 1` stick breaks; the last cluster takes the remainder.
    pub pi: Vec<f64>,
    pub alpha: f64,
    /// `n_units x n_items`; only observed cells are meaningful.
    pub ystar: Vec<f64>,
    pub log_post: f64,
}

impl MpsState {
    /// A zeroed state with even stick breaks, every unit in cluster 0.
    pub fn zeros(n_units: usize, n_items: usize, dim: usize, truncation: usize) -> Self {
        // Breaks giving equal weight to every cluster.
        let pi = (0..truncation - 1)
            .map(|k| 1.0 / (truncation - k) as f64)
            .collect();
        Self {
            n_units,
            n_items,
            dim,
            truncation,
            theta: vec![0.0; n_units * dim],
            beta: vec![0.0; truncation * n_items * dim],
            gamma: vec![0.0; truncation * n_items],
            assign: vec![0; n_units],
            pi,
            alpha: 1.0,
            ystar: vec![0.0; n_units * n_items],
            log_post: f64::NEG_INFINITY,
        }
    }

    #[inline]
    pub fn theta_of(&self, unit: usize) -> &[f64] {
        &self.theta[unit * self.dim..(unit + 1) * self.dim]
    }

    #[inline]
    pub fn beta_of(&self, cluster: usize, item: usize) -> &[f64] {
        let off = (cluster * self.n_items + item) * self.dim;
        &self.beta[off..off + self.dim]
    }

    #[inline]
    pub fn gamma_of(&self, cluster: usize, item: usize) -> f64 {
        self.gamma[cluster * self.n_items + item]
    }

    /// `beta' theta - gamma` for a unit under a cluster's item parameters.
    #[inline]
    pub fn linear_predictor(&self, unit: usize, cluster: usize, item: usize) -> f64 {
        let b = self.beta_of(cluster, item);
        let t = self.theta_of(unit);
        b.iter().zip(t).map(|(b, t)| b * t).sum::<f64>() - self.gamma_of(cluster, item)
    }

    pub fn occupancy(&self) -> Vec<usize> {
        let mut counts = vec![0; self.truncation];
        for &k in &self.assign {
            counts[k] += 1;
        }
        counts
    }

    pub fn n_occupied(&self) -> usize {
        self.occupancy().iter().filter(|&&c| c > 0).count()
    }

    /// Discrimination vector of a cluster for `dim == 1`.
    pub fn discriminations(&self, cluster: usize) -> Vec<f64> {
        (0..self.n_items)
            .map(|j| self.beta_of(cluster, j)[0])
            .collect()
    }

    pub fn probs(&self) -> Result<Vec<f64>> {
        stick_to_probs(&self.pi)
    }

    /// Checks array lengths against the data and configuration.
    pub fn check_dims(&self, y: &ResponseMatrix, cfg: Option<&MpsConfig>) -> Result<()> {
        let (n, j, d, k) = (self.n_units, self.n_items, self.dim, self.truncation);
        let ok = n == y.n_units()
            && j == y.n_items()
            && self.theta.len() == n * d
            && self.beta.len() == k * j * d
            && self.gamma.len() == k * j
            && self.assign.len() == n
            && self.pi.len() + 1 == k
            && self.ystar.len() == n * j
            && self.assign.iter().all(|&a| a < k);
        if !ok {
            return Err(MpsError::DimensionMismatch(format!(
                "state ({n} units, {j} items, D={d}, K={k}) does not match data ({} x {})",
                y.n_units(),
                y.n_items()
            )));
        }
        if let Some(cfg) = cfg {
            if cfg.dim != d || cfg.truncation != k {
                return Err(MpsError::DimensionMismatch(format!(
                    "state has D={d}, K={k}; config has D={}, K={}",
                    cfg.dim, cfg.truncation
                )));
            }
        }
        Ok(())
    }
}

/// Retained MAP state with fit statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapEstimate {
    pub state: MpsState,
    pub log_lik: f64,
    pub bic: f64,
    pub aic: f64,
    pub occupancy: Vec<usize>,
    pub n_params: usize,
    pub n_obs: usize,
}

/// Probability of a positive response, `Phi(beta' theta - gamma)`.
pub fn irf_prob(beta: &[f64], theta: &[f64], gamma: f64) -> Result<f64> {
    if beta.len() != theta.len() {
        return Err(MpsError::DimensionMismatch(format!(
            "beta has {} entries, theta has {}",
            beta.len(),
            theta.len()
        )));
    }
    if !gamma.is_finite() || beta.iter().chain(theta).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite input to response function"));
    }
    let eta: f64 = beta.iter().zip(theta).map(|(b, t)| b * t).sum::<f64>() - gamma;
    Ok(norm_cdf(eta))
}

/// Cluster probabilities from `K - 1` stick breaks.
pub fn stick_to_probs(pi: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = pi.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(invalid(format!("stick break {bad} outside (0, 1)")));
    }
    let mut probs = Vec::with_capacity(pi.len() + 1);
    let mut remaining = 1.0;
    for &p in pi {
        probs.push(p * remaining);
        remaining *= 1.0 - p;
    }
    probs.push(remaining);
    Ok(probs)
}

/// Log of the cluster probabilities, accumulated in log space so that long
/// tails do not underflow.
pub(crate) fn ln_stick_probs(pi: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pi.len() + 1);
    let mut ln_rem = 0.0;
    for &p in pi {
        out.push(p.max(PROB_FLOOR).ln() + ln_rem);
        ln_rem += (-p).ln_1p();
    }
    out.push(ln_rem);
    out
}

fn unit_log_lik(y: &ResponseMatrix, state: &MpsState, unit: usize) -> f64 {
    let k = state.assign[unit];
    let mut acc = 0.0;
    for (j, cell) in y.row(unit).iter().enumerate() {
        if let Some(resp) = cell {
            let p = clamp_prob(norm_cdf(state.linear_predictor(unit, k, j)));
            acc += if *resp { p.ln() } else { (1.0 - p).ln() };
        }
    }
    acc
}

/// Bernoulli-probit log-likelihood over observed cells.
pub fn log_likelihood(y: &ResponseMatrix, state: &MpsState) -> Result<f64> {
    state.check_dims(y, None)?;
    let per_unit: Vec<f64> = (0..y.n_units())
        .into_par_iter()
        .map(|i| unit_log_lik(y, state, i))
        .collect();
    Ok(compensated_sum(per_unit))
}

/// Log density of `N(0, omega^{-1})` at `x`.
pub(crate) fn ln_mvn_precision(x: &[f64], precision: &DMatrix<f64>, ln_det: f64) -> f64 {
    let p = x.len();
    let mut quad = 0.0;
    for r in 0..p {
        for c in 0..p {
            quad += x[r] * precision[(r, c)] * x[c];
        }
    }
    -0.5 * p as f64 * LN_2PI + 0.5 * ln_det - 0.5 * quad
}

pub(crate) fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| MpsError::Internal("matrix is not positive definite".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Sum of all prior terms (everything in the joint except the likelihood).
pub fn log_prior(state: &MpsState, cfg: &MpsConfig) -> Result<f64> {
    let d = state.dim;
    let mut terms = Vec::new();
    // theta_i ~ N(0, I)
    for i in 0..state.n_units {
        let t = state.theta_of(i);
        terms.push(-0.5 * d as f64 * LN_2PI - 0.5 * t.iter().map(|v| v * v).sum::<f64>());
    }
    let ln_det = ln_det_spd(&cfg.omega)?;
    let mut x = vec![0.0; d + 1];
    for k in 0..state.truncation {
        for j in 0..state.n_items {
            x[..d].copy_from_slice(state.beta_of(k, j));
            x[d] = state.gamma_of(k, j);
            terms.push(ln_mvn_precision(&x, &cfg.omega, ln_det));
        }
    }
    let ln_p = ln_stick_probs(&state.pi);
    terms.extend(state.assign.iter().map(|&k| ln_p[k]));
    terms.extend(state.pi.iter().map(|&p| ln_beta_pdf(p, 1.0, state.alpha)));
    if let AlphaPrior::Gamma { shape, rate } = cfg.alpha_prior {
        terms.push(ln_gamma_pdf(state.alpha, shape, rate));
    }
    Ok(compensated_sum(terms))
}

/// Joint log-posterior (up to the normalizing constant), excluding the
/// augmented latents.
pub fn log_joint_posterior(y: &ResponseMatrix, state: &MpsState, cfg: &MpsConfig) -> Result<f64> {
    state.check_dims(y, Some(cfg))?;
    Ok(log_likelihood(y, state)? + log_prior(state, cfg)?)
}
