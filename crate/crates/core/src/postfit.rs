//! Post-processing of the MAP state: information criteria, the sub-cluster
//! correlation graph, gap-statistic selection, greedy modularity communities,
//! cross-tabulation against known clusters, and reflection alignment.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MpsError, Result};
use crate::math::pearson;
use crate::model::{log_likelihood, MapEstimate, MpsState, ResponseMatrix};
use crate::rng::{StepTag, Streams};

/// How many item-parameter blocks enter the BIC/AIC parameter count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamCount {
    /// One block per cluster up to the truncation level.
    #[default]
    Truncation,
    /// One block per occupied cluster.
    Occupied,
}

/// `(bic, aic)` for a log-likelihood, parameter count and observation count.
pub fn information_criteria(log_lik: f64, n_params: usize, n_obs: usize) -> (f64, f64) {
    let k = n_params as f64;
    let bic = -2.0 * log_lik
        + if n_params == 0 {
            0.0
        } else {
            k * (n_obs as f64).ln()
        };
    let aic = 2.0 * k - 2.0 * log_lik;
    (bic, aic)
}

/// Wraps a state with its fit statistics. `log_lik` is recomputed when not
/// supplied.
pub fn fit_statistics(
    y: &ResponseMatrix,
    state: MpsState,
    log_lik: Option<f64>,
    count: ParamCount,
) -> Result<MapEstimate> {
    let log_lik = match log_lik {
        Some(v) => v,
        None => log_likelihood(y, &state)?,
    };
    let occupancy = state.occupancy();
    let blocks = match count {
        ParamCount::Truncation => state.truncation,
        ParamCount::Occupied => occupancy.iter().filter(|&&c| c > 0).count(),
    };
    let n_params = state.n_units * state.dim + (state.dim + 1) * state.n_items * blocks;
    let n_obs = y.n_observed();
    let (bic, aic) = information_criteria(log_lik, n_params, n_obs);
    Ok(MapEstimate {
        state,
        log_lik,
        bic,
        aic,
        occupancy,
        n_params,
        n_obs,
    })
}

/// Weighted graph over occupied sub-clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    /// Cluster index (zero-based) of each node.
    pub nodes: Vec<usize>,
    /// Symmetric, zero diagonal, entries in `[0, 1]`.
    pub weights: Vec<Vec<f64>>,
    /// Signed correlations (unit diagonal).
    pub raw_corr: Vec<Vec<f64>>,
    /// Fisher-transform standard errors `(1 - r^2) / sqrt(J - 3)`.
    pub std_err: Vec<Vec<f64>>,
}

impl ClusterGraph {
    /// Graph from an explicit weight matrix; `raw_corr` mirrors the weights.
    pub fn from_weights(weights: Vec<Vec<f64>>) -> Result<Self> {
        let n = weights.len();
        for (i, row) in weights.iter().enumerate() {
            if row.len() != n {
                return Err(invalid("weight matrix must be square"));
            }
            for (j, &w) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&w) || (w - weights[j][i]).abs() > 1e-12 {
                    return Err(invalid(format!("bad weight at ({i}, {j})")));
                }
                if i == j && w != 0.0 {
                    return Err(invalid("weight diagonal must be zero"));
                }
            }
        }
        let raw_corr = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { 1.0 } else { weights[i][j] })
                    .collect()
            })
            .collect();
        Ok(Self {
            nodes: (0..n).collect(),
            std_err: vec![vec![0.0; n]; n],
            weights,
            raw_corr,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dissimilarity(&self) -> Vec<Vec<f64>> {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, w)| if i == j { 0.0 } else { 1.0 - w })
                    .collect()
            })
            .collect()
    }
}

/// Correlation graph of discrimination vectors across occupied clusters
/// (`dim == 1`).
pub fn discrimination_correlations(state: &MpsState, min_size: usize) -> Result<ClusterGraph> {
    if state.dim != 1 {
        return Err(MpsError::UnsupportedDimension(format!(
            "correlation graph needs dim 1, state has {}",
            state.dim
        )));
    }
    let occ = state.occupancy();
    let nodes: Vec<usize> = (0..state.truncation)
        .filter(|&k| occ[k] > 0 && occ[k] >= min_size)
        .collect();
    if nodes.len() < 2 {
        return Err(invalid(format!(
            "need two occupied clusters, found {}",
            nodes.len()
        )));
    }
    let betas: Vec<Vec<f64>> = nodes.iter().map(|&k| state.discriminations(k)).collect();
    let n = nodes.len();
    let mut raw = vec![vec![1.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let r = pearson(&betas[a], &betas[b]).ok_or_else(|| {
                let which = if pearson(&betas[a], &betas[a]).is_none() {
                    nodes[a]
                } else {
                    nodes[b]
                };
                MpsError::UndefinedCorrelation(format!(
                    "cluster {} has constant discriminations",
                    which + 1
                ))
            })?;
            raw[a][b] = r;
            raw[b][a] = r;
        }
    }
    let root = ((state.n_items as f64) - 3.0).sqrt();
    let std_err = raw
        .iter()
        .map(|row| {
            row.iter()
                .map(|r| {
                    if root > 0.0 {
                        (1.0 - r * r) / root
                    } else {
                        f64::NAN
                    }
                })
                .collect()
        })
        .collect();
    let weights = raw
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, r)| if i == j { 0.0 } else { r.abs() })
                .collect()
        })
        .collect();
    Ok(ClusterGraph {
        nodes,
        weights,
        raw_corr: raw,
        std_err,
    })
}

/// Gap statistic per candidate community count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub k_values: Vec<usize>,
    pub gap: Vec<f64>,
    pub se: Vec<f64>,
    /// Observed `log(D_k)`.
    pub log_dispersion: Vec<f64>,
    /// Null mean of `log(D_k)`.
    pub null_log_dispersion: Vec<f64>,
    pub k_star: usize,
}

/// Floor on the mean within-community dissimilarity before taking logs.
const DISPERSION_FLOOR: f64 = 1e-6;

/// k-medoids (PAM: greedy build, then swaps to a local optimum). Returns a
/// community label for every point.
pub fn k_medoids(dist: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = dist.len();
    assert!(k >= 1 && k <= n, "k must be in 1..=n");
    let cost = |medoids: &[usize]| -> f64 {
        (0..n)
            .map(|i| {
                medoids
                    .iter()
                    .map(|&m| dist[i][m])
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    };
    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    while medoids.len() < k {
        let next = (0..n)
            .filter(|c| !medoids.contains(c))
            .map(|c| {
                let mut trial = medoids.clone();
                trial.push(c);
                (c, cost(&trial))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c)
            .expect("candidate exists while medoids < n");
        medoids.push(next);
    }
    let mut best = cost(&medoids);
    loop {
        let mut improved = false;
        for slot in 0..k {
            for cand in 0..n {
                if medoids.contains(&cand) {
                    continue;
                }
                let mut trial = medoids.clone();
                trial[slot] = cand;
                let c = cost(&trial);
                if c < best - 1e-12 {
                    best = c;
                    medoids = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (0..n)
        .map(|i| {
            (0..k)
                .min_by(|&a, &b| dist[i][medoids[a]].total_cmp(&dist[i][medoids[b]]))
                .expect("k >= 1")
        })
        .collect()
}

/// Mean dissimilarity over all pairs sharing a community.
fn within_dispersion(dist: &[Vec<f64>], labels: &[usize]) -> f64 {
    let n = dist.len();
    let (mut sum, mut pairs) = (0.0, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            if labels[i] == labels[j] {
                sum += dist[i][j];
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        DISPERSION_FLOOR
    } else {
        (sum / pairs as f64).max(DISPERSION_FLOOR)
    }
}

fn log_dispersions(dist: &[Vec<f64>], k_max: usize) -> Vec<f64> {
    (1..=k_max)
        .map(|k| within_dispersion(dist, &k_medoids(dist, k)).ln())
        .collect()
}

/// `Gap(k) = E_null[log D_k] - log D_k` with a uniform-weight null graph.
pub fn gap_statistic(
    graph: &ClusterGraph,
    k_max: usize,
    n_null: usize,
    seed: u64,
) -> Result<GapCurve> {
    let n = graph.len();
    if n < 2 {
        return Err(MpsError::Degenerate(format!(
            "gap statistic needs two nodes, graph has {n}"
        )));
    }
    if k_max == 0 || k_max > n {
        return Err(invalid(format!("k_max must be in 1..={n}, got {k_max}")));
    }
    if n_null < 2 {
        return Err(invalid("need at least two null replicates"));
    }
    let observed = log_dispersions(&graph.dissimilarity(), k_max);
    let streams = Streams::new(seed);
    let null: Vec<Vec<f64>> = (0..n_null)
        .into_par_iter()
        .map(|b| {
            let mut rng = streams.stream(0, StepTag::GapNull, b as u64);
            let mut d = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    let w: f64 = rng.random();
                    d[i][j] = 1.0 - w;
                    d[j][i] = 1.0 - w;
                }
            }
            log_dispersions(&d, k_max)
        })
        .collect();
    let mut gap = Vec::with_capacity(k_max);
    let mut se = Vec::with_capacity(k_max);
    let mut null_mean = Vec::with_capacity(k_max);
    for (idx, obs) in observed.iter().enumerate() {
        let vals: Vec<f64> = null.iter().map(|r| r[idx]).collect();
        let m = vals.iter().sum::<f64>() / n_null as f64;
        let sd = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_null as f64).sqrt();
        null_mean.push(m);
        gap.push(m - obs);
        se.push(sd * (1.0 + 1.0 / n_null as f64).sqrt());
    }
    let best = gap
        .iter()
        .enumerate()
        .fold(0, |best, (i, g)| if *g > gap[best] { i } else { best });
    Ok(GapCurve {
        k_values: (1..=k_max).collect(),
        gap,
        se,
        log_dispersion: observed,
        null_log_dispersion: null_mean,
        k_star: best + 1,
    })
}

/// Community labels per node plus the attained modularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Communities {
    /// Community of each graph node, numbered from 0 in order of first node.
    pub membership: Vec<usize>,
    pub modularity: f64,
}

/// Weighted Newman modularity of a node labelling.
pub fn modularity(weights: &[Vec<f64>], labels: &[usize]) -> f64 {
    let strength: Vec<f64> = weights.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = strength.iter().sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let n = weights.len();
    let mut q = 0.0;
    for i in 0..n {
        for j in 0..n {
            if labels[i] == labels[j] {
                q += weights[i][j] - strength[i] * strength[j] / two_m;
            }
        }
    }
    q / two_m
}

/// Greedy agglomerative modularity maximization: start from singletons and
/// merge the best pair while the gain is positive.
pub fn detect_communities(graph: &ClusterGraph) -> Communities {
    let w = &graph.weights;
    let n = w.len();
    let strength: Vec<f64> = w.iter().map(|r| r.iter().sum()).collect();
    let two_m: f64 = strength.iter().sum();
    let mut labels: Vec<usize> = (0..n).collect();
    if two_m > 0.0 {
        // e[a][b]: fraction of edge ends between communities a and b.
        let mut e: Vec<Vec<f64>> = w
            .iter()
            .map(|r| r.iter().map(|v| v / two_m).collect())
            .collect();
        let mut a: Vec<f64> = strength.iter().map(|s| s / two_m).collect();
        let mut alive: Vec<bool> = vec![true; n];
        loop {
            let mut best: Option<(usize, usize, f64)> = None;
            for x in (0..n).filter(|&x| alive[x]) {
                for y in (x + 1..n).filter(|&y| alive[y]) {
                    let gain = 2.0 * (e[x][y] - a[x] * a[y]);
                    if gain > 1e-14 && best.is_none_or(|(_, _, g)| gain > g) {
                        best = Some((x, y, gain));
                    }
                }
            }
            let Some((x, y, _)) = best else { break };
            for z in 0..n {
                if z != x && z != y {
                    e[x][z] += e[y][z];
                    e[z][x] = e[x][z];
                }
            }
            e[x][x] += e[y][y] + 2.0 * e[x][y];
            a[x] += a[y];
            alive[y] = false;
            for l in labels.iter_mut() {
                if *l == y {
                    *l = x;
                }
            }
        }
    }
    let membership = relabel(&labels);
    let modularity = modularity(w, &membership);
    Communities {
        membership,
        modularity,
    }
}

/// Renumbers labels 0.. in order of first appearance.
fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = BTreeMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Contingency table of estimated against known clusters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    /// Distinct estimated labels (rows), ascending.
    pub est_labels: Vec<usize>,
    /// Distinct true labels (columns), ascending.
    pub truth_labels: Vec<usize>,
    pub counts: Vec<Vec<usize>>,
    pub purity: f64,
}

impl CrossTab {
    /// Modal true label of each estimated label.
    pub fn modal_truth(&self) -> BTreeMap<usize, usize> {
        self.est_labels
            .iter()
            .zip(&self.counts)
            .map(|(&e, row)| {
                let col = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                (e, self.truth_labels[col])
            })
            .collect()
    }
}

pub fn crosstab_clusters(est: &[usize], truth: &[usize]) -> Result<CrossTab> {
    if est.len() != truth.len() {
        return Err(invalid(format!(
            "estimated labels cover {} units, truth covers {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(invalid("no units to cross-tabulate"));
    }
    let mut est_labels: Vec<usize> = est.to_vec();
    est_labels.sort_unstable();
    est_labels.dedup();
    let mut truth_labels: Vec<usize> = truth.to_vec();
    truth_labels.sort_unstable();
    truth_labels.dedup();
    let mut counts = vec![vec![0usize; truth_labels.len()]; est_labels.len()];
    for (e, t) in est.iter().zip(truth) {
        let r = est_labels.binary_search(e).expect("label present");
        let c = truth_labels.binary_search(t).expect("label present");
        counts[r][c] += 1;
    }
    let hits: usize = counts
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    let purity = hits as f64 / est.len() as f64;
    Ok(CrossTab {
        est_labels,
        truth_labels,
        counts,
        purity,
    })
}

/// Flips every cluster whose discriminations correlate negatively with the
/// reference cluster, together with its members' ideal points.
pub fn align_signs(state: &MpsState, reference: usize) -> Result<MpsState> {
    if state.dim != 1 {
        return Err(MpsError::UnsupportedDimension(format!(
            "sign alignment needs dim 1, state has {}",
            state.dim
        )));
    }
    if reference >= state.truncation {
        return Err(invalid(format!(
            "reference cluster {} out of range",
            reference + 1
        )));
    }
    let reference_beta = state.discriminations(reference);
    let mut out = state.clone();
    for k in (0..state.truncation).filter(|&k| k != reference) {
        if let Some(r) = pearson(&state.discriminations(k), &reference_beta) {
            if r < 0.0 {
                flip_cluster(&mut out, k);
            }
        }
    }
    Ok(out)
}

/// Negates a cluster's discriminations and its members' ideal points.
pub fn flip_cluster(state: &mut MpsState, cluster: usize) {
    let j_n = state.n_items;
    for b in &mut state.beta[cluster * j_n..(cluster + 1) * j_n] {
        *b = -*b;
    }
    for i in 0..state.n_units {
        if state.assign[i] == cluster {
            state.theta[i] = -state.theta[i];
        }
    }
}
