//! Starting values: k-means cluster starts, within-cluster principal
//! component ideal points, and per-item ridge probit item parameters.
//!
//! Missing cells are imputed with item means here only; the sampler never
//! sees imputed values.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::gibbs::sample_latent_responses;
use crate::math::{norm_cdf, norm_inv_cdf, norm_pdf, pearson};
use crate::model::{AlphaPrior, MpsConfig, MpsState, ResponseMatrix};
use crate::rng::{StepTag, Streams};

pub const DEFAULT_KMEANS_K: usize = 5;
pub const DEFAULT_MERGE_ABOVE: f64 = 0.4;

/// How starting clusters are chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum InitMode {
    /// k-means on response rows with this many clusters.
    KMeans(usize),
    /// Explicit zero-based cluster for every unit.
    FixedPartition(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitSpec {
    pub mode: InitMode,
    pub probit_max_iter: usize,
    pub probit_ridge: f64,
    /// When set, every starting cluster is dealt at random into
    /// sub-clusters so that this many clusters start occupied.
    pub split_to: Option<usize>,
    /// When set, starting clusters whose probit discrimination starts
    /// correlate at least this strongly (in absolute value) are merged
    /// before any split.
    pub merge_above: Option<f64>,
}

impl InitSpec {
    pub fn kmeans(k: usize) -> Self {
        Self {
            mode: InitMode::KMeans(k),
            probit_max_iter: 50,
            probit_ridge: 1e-4,
            split_to: None,
            merge_above: None,
        }
    }

    pub fn fixed(partition: Vec<usize>) -> Self {
        Self {
            mode: InitMode::FixedPartition(partition),
            ..Self::kmeans(1)
        }
    }

    /// Default starts: k-means with five clusters (fewer if the truncation
    /// is smaller), clusters with |r| >= 0.4 between their item slopes
    /// merged, then dealt out to fill every one of the `truncation`
    /// slots.
    pub fn standard(truncation: usize) -> Self {
        Self::kmeans(truncation.min(DEFAULT_KMEANS_K))
            .with_merge(DEFAULT_MERGE_ABOVE)
            .with_split(truncation)
    }

    pub fn with_merge(mut self, threshold: f64) -> Self {
        self.merge_above = Some(threshold);
        self
    }

    pub fn with_split(mut self, total: usize) -> Self {
        self.split_to = Some(total);
        self
    }
}

/// Rows of the response matrix with missing cells replaced by item means.
fn imputed_rows(y: &ResponseMatrix, units: &[usize]) -> DMatrix<f64> {
    let j_n = y.n_items();
    let mut means = vec![0.0; j_n];
    for (j, m) in means.iter_mut().enumerate() {
        let (mut s, mut c) = (0.0, 0.0);
        for &i in units {
            if let Some(v) = y.get(i, j) {
                s += v as u8 as f64;
                c += 1.0;
            }
        }
        *m = if c > 0.0 { s / c } else { 0.5 };
    }
    DMatrix::from_fn(units.len(), j_n, |r, j| match y.get(units[r], j) {
        Some(v) => v as u8 as f64,
        None => means[j],
    })
}

/// Deals the members of each cluster at random into sub-clusters. Slots are
/// shared out by largest remainder on cluster size, every cluster keeps at
/// least one, and the result is relabelled `0..total` in cluster order.
pub fn split_partition(partition: &[usize], total: usize, seed: u64) -> Result<Vec<usize>> {
    let n_groups = partition.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (i, &k) in partition.iter().enumerate() {
        members[k].push(i);
    }
    members.retain(|m| !m.is_empty());
    if total < members.len() || total > partition.len() {
        return Err(invalid(format!(
            "cannot split {} clusters of {} units into {total}",
            members.len(),
            partition.len()
        )));
    }
    let n = partition.len() as f64;
    let spare = total - members.len();
    let quota: Vec<f64> = members
        .iter()
        .map(|m| spare as f64 * m.len() as f64 / n)
        .collect();
    let mut slots: Vec<usize> = quota.iter().map(|q| 1 + q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| (quota[b] - quota[b].floor()).total_cmp(&(quota[a] - quota[a].floor())));
    let mut left = total - slots.iter().sum::<usize>();
    for &g in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if slots[g] < members[g].len() {
            slots[g] += 1;
            left -= 1;
        }
    }
    let mut rng = Streams::new(seed).stream(1, StepTag::Init, u64::MAX);
    let mut out = vec![0; partition.len()];
    let mut next = 0;
    for (g, m) in members.iter_mut().enumerate() {
        m.shuffle(&mut rng);
        for (r, &i) in m.iter().enumerate() {
            out[i] = next + r % slots[g];
        }
        next += slots[g];
    }
    Ok(out)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's k-means with k-means++ seeding on imputed response rows.
pub fn init_kmeans(y: &ResponseMatrix, k: usize, seed: u64) -> Result<Vec<usize>> {
    let n = y.n_units();
    if k == 0 || k > n {
        return Err(invalid(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let x = imputed_rows(y, &all);
    let rows: Vec<Vec<f64>> = x.row_iter().map(|r| r.iter().copied().collect()).collect();
    let mut rng = Streams::new(seed).stream(0, StepTag::Init, u64::MAX);

    let mut centers: Vec<Vec<f64>> = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    let hit = u < d;
                    u -= d;
                    hit
                })
                .unwrap_or(n - 1)
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        let c = centers.last().expect("just pushed");
        for (d, r) in d2.iter_mut().zip(&rows) {
            *d = d.min(sq_dist(r, c));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..300 {
        let mut changed = false;
        for (i, r) in rows.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .expect("k >= 1");
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = rows
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(r, _)| r)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (j, v) in center.iter_mut().enumerate() {
                *v = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Ok(labels)
}

fn prior_theta(out: &mut [f64], units: &[usize], dim: usize, seed: u64) {
    let streams = Streams::new(seed);
    for &i in units {
        let mut rng = streams.stream(1, StepTag::Init, i as u64);
        for d in 0..dim {
            out[i * dim + d] = StandardNormal.sample(&mut rng);
        }
    }
}

/// Within-cluster principal-component scores, standardized to unit variance.
/// Clusters too small or without variation fall back to prior draws.
pub fn init_theta_pca(
    y: &ResponseMatrix,
    partition: &[usize],
    dim: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = y.n_units();
    if partition.len() != n {
        return Err(invalid(format!(
            "partition covers {} units, data has {n}",
            partition.len()
        )));
    }
    let mut theta = vec![0.0; n * dim];
    let n_clusters = partition.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..n_clusters {
        let units: Vec<usize> = (0..n).filter(|&i| partition[i] == c).collect();
        if units.is_empty() {
            continue;
        }
        if units.len() < dim + 1 {
            prior_theta(&mut theta, &units, dim, seed);
            continue;
        }
        let mut x = imputed_rows(y, &units);
        for mut col in x.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        match leading_scores(&x, dim) {
            Some(scores) => {
                for (r, &i) in units.iter().enumerate() {
                    theta[i * dim..(i + 1) * dim].copy_from_slice(&scores[r * dim..(r + 1) * dim]);
                }
            }
            None => prior_theta(&mut theta, &units, dim, seed),
        }
    }
    Ok(theta)
}

/// Scores on the top `dim` principal axes of the column-centered matrix
/// `x`, each standardized to unit variance, row-major.
fn leading_scores(x: &DMatrix<f64>, dim: usize) -> Option<Vec<f64>> {
    let (scores, _) = principal_axes(x, dim)?;
    let n = x.nrows();
    let mut out = vec![0.0; n * dim];
    for d in 0..dim {
        let col = scores.column(d);
        let m = col.mean();
        let sd = (col.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / n as f64).sqrt();
        for r in 0..n {
            out[r * dim + d] = (col[r] - m) / sd;
        }
    }
    Some(out)
}

/// Ridge-penalized probit fit of binary `y` on rows `x`; `None` when Newton
/// fails to converge.
pub fn probit_newton(
    x: &[Vec<f64>],
    y: &[bool],
    ridge: f64,
    max_iter: usize,
) -> Option<DVector<f64>> {
    let p = x.first()?.len();
    let objective = |w: &DVector<f64>| -> f64 {
        let mut ll = -0.5 * ridge * w.norm_squared();
        for (xi, &yi) in x.iter().zip(y) {
            let eta: f64 = xi.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let s = if yi { eta } else { -eta };
            ll += norm_cdf(s).max(1e-300).ln();
        }
        ll
    };
    let mut w = DVector::zeros(p);
    let mut current = objective(&w);
    for _ in 0..max_iter {
        let mut grad = -ridge * &w;
        let mut neg_hess = DMatrix::identity(p, p) * ridge;
        for (xi, &yi) in x.iter().zip(y) {
            let eta: f64 = xi.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let s = if yi { eta } else { -eta };
            let cdf = norm_cdf(s);
            // Inverse Mills ratio, with its asymptote where the CDF underflows.
            let mills = if cdf > 1e-300 { norm_pdf(s) / cdf } else { -s };
            let lambda = if yi { mills } else { -mills };
            let curv = mills * (mills + s);
            for r in 0..p {
                grad[r] += lambda * xi[r];
                for c in 0..p {
                    neg_hess[(r, c)] += curv * xi[r] * xi[c];
                }
            }
        }
        let step = neg_hess.cholesky()?.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &w + scale * &step;
            let val = objective(&trial);
            if val >= current - 1e-12 {
                w = trial;
                current = val;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted || !w.iter().all(|v| v.is_finite()) {
            return None;
        }
        if (scale * step.amax()) < 1e-8 {
            return Some(w);
        }
    }
    None
}

/// Coefficients beyond this size on standardized ideal points only arise
/// from (quasi-)separated responses; such items start from their marginal.
const SEPARATED_COEF: f64 = 5.0;

/// Per-cluster, per-item probit regressions of the observed responses on
/// `[theta, -1]`. Returns `(beta, gamma)` laid out like [`MpsState`].
///
/// Separated items (all responses identical, or a fit whose coefficients
/// run off) get zero discriminations and the continuity-corrected threshold
/// `gamma = -Phi^{-1}((ones + 0.5) / (n + 1))`; failed fits fall back to zeros.
pub fn init_items_probit(
    y: &ResponseMatrix,
    theta0: &[f64],
    partition: &[usize],
    dim: usize,
    truncation: usize,
    spec: &InitSpec,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, j_n) = (y.n_units(), y.n_items());
    if theta0.len() != n * dim || partition.len() != n {
        return Err(invalid("theta/partition do not match the data"));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite starting ideal points"));
    }
    if let Some(&bad) = partition.iter().find(|&&c| c >= truncation) {
        return Err(invalid(format!(
            "starting cluster {} exceeds truncation {truncation}",
            bad + 1
        )));
    }
    let mut beta = vec![0.0; truncation * j_n * dim];
    let mut gamma = vec![0.0; truncation * j_n];
    for c in 0..truncation {
        let units: Vec<usize> = (0..n).filter(|&i| partition[i] == c).collect();
        if units.is_empty() {
            continue;
        }
        for j in 0..j_n {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for &i in &units {
                if let Some(v) = y.get(i, j) {
                    let mut row = theta0[i * dim..(i + 1) * dim].to_vec();
                    row.push(-1.0);
                    xs.push(row);
                    ys.push(v);
                }
            }
            if ys.is_empty() {
                continue;
            }
            let n_obs = ys.len() as f64;
            let off = (c * j_n + j) * dim;
            let ones = ys.iter().filter(|&&v| v).count() as f64;
            let marginal = -norm_inv_cdf((ones + 0.5) / (n_obs + 1.0));
            if ones == 0.0 || ones == n_obs {
                gamma[c * j_n + j] = marginal;
                continue;
            }
            match probit_newton(&xs, &ys, spec.probit_ridge, spec.probit_max_iter) {
                Some(w) if w.amax() > SEPARATED_COEF => gamma[c * j_n + j] = marginal,
                Some(w) => {
                    beta[off..off + dim].copy_from_slice(&w.as_slice()[..dim]);
                    gamma[c * j_n + j] = w[dim];
                }
                None => {}
            }
        }
    }
    Ok((beta, gamma))
}

/// Raw scores (`n x dim`) and loadings (`dim x J`) of the top `dim`
/// principal axes of a column-centered matrix.
fn principal_axes(x: &DMatrix<f64>, dim: usize) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    if x.nrows() < dim + 1 {
        return None;
    }
    let svd = x.clone().svd(false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    if order.len() < dim
        || order[..dim]
            .iter()
            .any(|&o| svd.singular_values[o] <= 1e-10)
    {
        return None;
    }
    let loadings = DMatrix::from_fn(dim, x.ncols(), |d, j| v_t[(order[d], j)]);
    let scores = x * loadings.transpose();
    Some((scores, loadings))
}

/// Per side and item, probit slopes of the item on the principal scores
/// computed without that item.
fn item_rest_slopes(
    y: &ResponseMatrix,
    x: &DMatrix<f64>,
    scores: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
    side: &[usize],
    spec: &InitSpec,
) -> [Vec<Vec<f64>>; 2] {
    let dim = loadings.nrows();
    let sd: Vec<f64> = (0..dim)
        .map(|d| {
            let c = scores.column(d);
            let m = c.mean();
            (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64).sqrt()
        })
        .collect();
    let mut out = [Vec::new(), Vec::new()];
    for (part, slopes) in out.iter_mut().enumerate() {
        let rows: Vec<usize> = (0..side.len()).filter(|&r| side[r] == part).collect();
        for j in 0..y.n_items() {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for &r in &rows {
                if let Some(v) = y.get(r, j) {
                    let mut row: Vec<f64> = (0..dim)
                        .map(|d| (scores[(r, d)] - x[(r, j)] * loadings[(d, j)]) / sd[d])
                        .collect();
                    row.push(-1.0);
                    xs.push(row);
                    ys.push(v);
                }
            }
            let fit = probit_newton(&xs, &ys, spec.probit_ridge, spec.probit_max_iter)
                .filter(|w| w.amax() <= SEPARATED_COEF);
            slopes.push(fit.map_or(vec![0.0; dim], |w| w.as_slice()[..dim].to_vec()));
        }
    }
    out
}

/// Absolute correlation (averaged over dimensions) between the probit
/// item slopes of every pair of clusters. For a pair, each item is
/// regressed (probit, per cluster) on principal-component scores of the two
/// clusters pooled, computed without that item.
/// Entries involving an empty cluster are zero.
pub fn pairwise_start_correlations(
    y: &ResponseMatrix,
    partition: &[usize],
    dim: usize,
    spec: &InitSpec,
) -> Result<Vec<Vec<f64>>> {
    let n_groups = partition.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_groups];
    for (i, &c) in partition.iter().enumerate() {
        members[c].push(i);
    }
    let j_n = y.n_items();
    let mut corr = vec![vec![0.0; n_groups]; n_groups];
    for a in 0..n_groups {
        for b in a + 1..n_groups {
            if members[a].is_empty() || members[b].is_empty() {
                continue;
            }
            let units: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let cells = units
                .iter()
                .flat_map(|&i| y.row(i).iter().copied())
                .collect();
            let pair = ResponseMatrix::from_cells(units.len(), j_n, cells)?;
            let side: Vec<usize> = (0..units.len())
                .map(|r| usize::from(r >= members[a].len()))
                .collect();
            let mut x = imputed_rows(&pair, &(0..units.len()).collect::<Vec<_>>());
            for mut col in x.column_iter_mut() {
                let m = col.mean();
                col.add_scalar_mut(-m);
            }
            let Some((scores, loadings)) = principal_axes(&x, dim) else {
                continue;
            };
            let beta = item_rest_slopes(&pair, &x, &scores, &loadings, &side, spec);
            let r = (0..dim)
                .map(|d| {
                    let col = |c: usize| -> Vec<f64> { beta[c].iter().map(|b| b[d]).collect() };
                    pearson(&col(0), &col(1)).map_or(0.0, f64::abs)
                })
                .sum::<f64>()
                / dim as f64;
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    Ok(corr)
}

/// Joins clusters whose pairwise start correlation reaches `threshold`,
/// transitively. Labels of the result are `0..m` in order of first
/// appearance.
pub fn merge_correlated(
    y: &ResponseMatrix,
    partition: &[usize],
    dim: usize,
    threshold: f64,
    spec: &InitSpec,
) -> Result<Vec<usize>> {
    let corr = pairwise_start_correlations(y, partition, dim, spec)?;
    let n_groups = corr.len();
    let mut root: Vec<usize> = (0..n_groups).collect();
    fn find(root: &mut [usize], mut c: usize) -> usize {
        while root[c] != c {
            root[c] = root[root[c]];
            c = root[c];
        }
        c
    }
    for a in 0..n_groups {
        for b in a + 1..n_groups {
            if corr[a][b] >= threshold {
                let (ra, rb) = (find(&mut root, a), find(&mut root, b));
                root[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut label = vec![usize::MAX; n_groups];
    let mut next = 0;
    Ok(partition
        .iter()
        .map(|&c| {
            let r = find(&mut root, c);
            if label[r] == usize::MAX {
                label[r] = next;
                next += 1;
            }
            label[r]
        })
        .collect())
}

/// Full starting state: partition, ideal points, item parameters, and
/// augmented latents consistent with the data.
pub fn initial_state(y: &ResponseMatrix, cfg: &MpsConfig, spec: &InitSpec) -> Result<MpsState> {
    cfg.validate()?;
    let n = y.n_units();
    let mut partition = match &spec.mode {
        InitMode::KMeans(k) => {
            if *k > cfg.truncation {
                return Err(invalid(format!(
                    "k-means k = {k} exceeds truncation {}",
                    cfg.truncation
                )));
            }
            init_kmeans(y, *k, cfg.seed)?
        }
        InitMode::FixedPartition(p) => {
            if p.len() != n {
                return Err(invalid(format!(
                    "fixed partition covers {} of {n} units",
                    p.len()
                )));
            }
            p.clone()
        }
    };
    if let Some(threshold) = spec.merge_above {
        partition = merge_correlated(y, &partition, cfg.dim, threshold, spec)?;
    }
    if let Some(total) = spec.split_to {
        if total > cfg.truncation {
            return Err(invalid(format!(
                "split_to = {total} exceeds truncation {}",
                cfg.truncation
            )));
        }
        partition = split_partition(&partition, total, cfg.seed)?;
    }
    for (&unit, &k) in &cfg.constraints {
        if unit < n {
            partition[unit] = k;
        }
    }
    let theta = init_theta_pca(y, &partition, cfg.dim, cfg.seed)?;
    let (beta, gamma) = init_items_probit(y, &theta, &partition, cfg.dim, cfg.truncation, spec)?;
    let mut state = MpsState::zeros(n, y.n_items(), cfg.dim, cfg.truncation);
    state.theta = theta;
    state.beta = beta;
    state.gamma = gamma;
    state.assign = partition;
    state.alpha = match cfg.alpha_prior {
        AlphaPrior::Fixed(a) => a,
        AlphaPrior::Gamma { shape, rate } => shape / rate,
    };
    state.ystar = sample_latent_responses(y, &state, &Streams::new(cfg.seed), u64::MAX);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn matrix(rows: &[Vec<u8>]) -> ResponseMatrix {
        let cells = rows.iter().flatten().map(|&v| Some(v == 1)).collect();
        ResponseMatrix::from_cells(rows.len(), rows[0].len(), cells).unwrap()
    }

    #[test]
    fn kmeans_separates_identical_groups() {
        let mut rows = vec![vec![0u8; 6]; 5];
        rows.extend(vec![vec![1u8; 6]; 7]);
        let y = matrix(&rows);
        let l = init_kmeans(&y, 2, 1).unwrap();
        assert!(l[..5].iter().all(|&v| v == l[0]));
        assert!(l[5..].iter().all(|&v| v == l[5]));
        assert_ne!(l[0], l[5]);
        assert!(init_kmeans(&y, 1, 1).unwrap().iter().all(|&v| v == 0));
        assert!(init_kmeans(&y, 13, 1).is_err());
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<u8>> = (0..60)
            .map(|_| (0..15).map(|_| rng.random_range(0..2)).collect())
            .collect();
        let y = matrix(&rows);
        assert_eq!(
            init_kmeans(&y, 3, 42).unwrap(),
            init_kmeans(&y, 3, 42).unwrap()
        );
    }

    #[test]
    fn pca_recovers_rank_one_scalars() {
        // Rows are scalar multiples of one pattern; values are stored through
        // a binary matrix, so use a sign pattern and thresholds per scalar.
        let n = 40;
        let j = 30;
        let scalars: Vec<f64> = (0..n)
            .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
            .collect();
        let cells = (0..n)
            .flat_map(|i| (0..j).map(move |c| (i, c)))
            .map(|(i, c)| Some(scalars[i] > -2.0 + 4.0 * c as f64 / (j - 1) as f64))
            .collect();
        let y = ResponseMatrix::from_cells(n, j, cells).unwrap();
        let theta = init_theta_pca(&y, &vec![0; n], 1, 0).unwrap();
        let r = pearson(&theta, &scalars).unwrap();
        assert!(r.abs() > 0.99, "{r}");
        let m = theta.iter().sum::<f64>() / n as f64;
        let var = theta.iter().map(|t| (t - m) * (t - m)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_fallbacks() {
        let y = matrix(&vec![vec![1, 0, 1]; 4]);
        let theta = init_theta_pca(&y, &[0, 0, 0, 1], 1, 5).unwrap();
        assert!(theta.iter().all(|t| t.is_finite()));
        // Constant rows: zero scores after centering, so prior draws are used.
        assert!(theta[..3].iter().any(|&t| t != 0.0));
        // A singleton cluster also draws from the prior.
        assert_ne!(theta[3], 0.0);
    }

    fn probit_data(n: usize, b: f64, g: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let t: f64 = StandardNormal.sample(&mut rng);
            xs.push(vec![t, -1.0]);
            ys.push(rng.random::<f64>() < norm_cdf(b * t - g));
        }
        (xs, ys)
    }

    #[test]
    fn probit_recovers_truth() {
        let (xs, ys) = probit_data(2000, 1.0, 0.0, 17);
        let w = probit_newton(&xs, &ys, 1e-4, 50).unwrap();
        assert!((w[0] - 1.0).abs() < 0.1 && w[1].abs() < 0.1, "{w}");
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let (xs, ys) = probit_data(500, 1.0, 0.3, 18);
        let w = probit_newton(&xs, &ys, 1e9, 50).unwrap();
        assert!(w.amax() < 1e-5);
    }

    #[test]
    fn separated_item_uses_threshold_rule() {
        let y = matrix(&[vec![1, 0], vec![1, 1], vec![1, 0], vec![1, 1]]);
        let theta = vec![0.5, -0.2, 1.0, 0.3];
        let (b, g) = init_items_probit(&y, &theta, &[0; 4], 1, 2, &InitSpec::kmeans(1)).unwrap();
        assert_eq!(b[0], 0.0);
        assert!(g[0] < 0.0);
        assert!((g[0] + norm_inv_cdf(4.5 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn quasi_separated_item_starts_from_marginal() {
        let theta: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let rows: Vec<Vec<u8>> = (0..40)
            .map(|i| vec![u8::from(i == 39), (i % 2) as u8])
            .collect();
        let y = matrix(&rows);
        let (b, g) = init_items_probit(&y, &theta, &[0; 40], 1, 1, &InitSpec::kmeans(1)).unwrap();
        assert_eq!(b[0], 0.0);
        assert!((g[0] + norm_inv_cdf(1.5 / 41.0)).abs() < 1e-12);
        assert!(b[1].abs() < 1.0);
    }

    #[test]
    fn split_partition_deals_every_cluster() {
        let part: Vec<usize> = (0..100).map(|i| usize::from(i >= 70)).collect();
        let split = split_partition(&part, 10, 3).unwrap();
        let mut sizes = [0usize; 10];
        for (&p, &s) in part.iter().zip(&split) {
            assert_eq!(usize::from(s >= 7), p);
            sizes[s] += 1;
        }
        assert!(sizes.iter().all(|&c| c == 10));
        assert_eq!(split, split_partition(&part, 10, 3).unwrap());
        assert!(split_partition(&part, 1, 3).is_err());
    }

    #[test]
    fn merge_joins_pieces_of_the_same_cluster() {
        use crate::simulate::{simulate_dataset, SimSpec};
        let (y, truth) = simulate_dataset(&SimSpec::new(300, 60, 1, vec![0.5, 0.5], 4)).unwrap();
        let pieces: Vec<usize> = truth
            .assign_true
            .iter()
            .enumerate()
            .map(|(i, &c)| 2 * c + i % 2)
            .collect();
        let merged = merge_correlated(&y, &pieces, 1, 0.4, &InitSpec::kmeans(1)).unwrap();
        let expected: Vec<usize> = truth
            .assign_true
            .iter()
            .map(|&c| usize::from(c != truth.assign_true[0]))
            .collect();
        assert_eq!(merged, expected);
        let kept = merge_correlated(&y, &pieces, 1, 1.0, &InitSpec::kmeans(1)).unwrap();
        assert_eq!(kept.iter().max(), Some(&3));
    }

    #[test]
    fn fixed_partition_is_returned_exactly() {
        let y = matrix(&[
            vec![1, 0, 1],
            vec![0, 0, 1],
            vec![1, 1, 1],
            vec![0, 1, 0],
            vec![1, 0, 0],
        ]);
        let cfg = MpsConfig::new(1, 3);
        let part = vec![0, 0, 1, 1, 2];
        let s = initial_state(&y, &cfg, &InitSpec::fixed(part.clone())).unwrap();
        assert_eq!(s.assign, part);
        assert!(crate::gibbs::latents_consistent(&y, &s));
        for v in s
            .theta
            .iter()
            .chain(&s.beta)
            .chain(&s.gamma)
            .chain(&s.ystar)
        {
            assert!(v.is_finite());
        }
    }
}
