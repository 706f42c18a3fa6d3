//! Blocked Gibbs sampler for the truncated stick-breaking mixture of probit
//! IRT models.
//!
//! One sweep updates, in order: stick breaks, assignments, augmented latents,
//! item parameters, ideal points and the concentration. Assignments are drawn
//! either with the unit's ideal point integrated out (the default, which lets
//! units move between clusters whose latent scales differ) or conditional on
//! it. Steps that touch many entities run in parallel with one counter-based
//! stream per entity, so the chain is bit-identical for any worker count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, MpsError, Result};
use crate::init::{initial_state, InitSpec};
use crate::model::{
    ln_stick_probs, log_likelihood, log_prior, AlphaPrior, AssignmentUpdate, MapEstimate,
    MpsConfig, MpsState, ResponseMatrix,
};
use crate::postfit::{fit_statistics, ParamCount};
use crate::rng::{StepTag, Streams};
use crate::truncnorm::sample_signed;

const PI_MIN: f64 = 1e-300;
const PI_MAX: f64 = 1.0 - 1e-16;

/// Per-iteration scalar summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub log_post: f64,
    pub log_lik: f64,
    pub alpha: f64,
    pub occupied: usize,
}

/// Output of [`run_chain`].
#[derive(Clone, Debug)]
pub struct ChainTrace {
    /// Highest log-posterior state seen after burn-in.
    pub map: MapEstimate,
    pub scalar_trace: Vec<TraceRow>,
    /// `(iteration, assignments)` every `cfg.thin` iterations.
    pub thinned_assign: Vec<(usize, Vec<usize>)>,
}

/// Draws `pi_k ~ Beta(1 + N_k, alpha + sum_{l > k} N_l)` for `k < K - 1`.
pub fn sample_stick_weights<R: Rng + ?Sized>(
    counts: &[usize],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    if counts.len() < 2 {
        return Err(invalid("need at least two clusters"));
    }
    let mut tail: usize = counts.iter().sum();
    let mut pi = Vec::with_capacity(counts.len() - 1);
    for &n_k in &counts[..counts.len() - 1] {
        tail -= n_k;
        let dist = Beta::new(1.0 + n_k as f64, alpha + tail as f64)
            .map_err(|e| MpsError::Internal(format!("beta distribution: {e}")))?;
        let p: f64 = dist.sample(rng);
        pi.push(p.clamp(PI_MIN, PI_MAX));
    }
    Ok(pi)
}

/// Resamples cluster memberships given the augmented latents.
pub fn sample_assignments(
    y: &ResponseMatrix,
    state: &MpsState,
    constraints: &BTreeMap<usize, usize>,
    streams: &Streams,
    iter: u64,
) -> Result<Vec<usize>> {
    let ln_p = ln_stick_probs(&state.pi);
    let k_max = state.truncation;
    (0..state.n_units)
        .into_par_iter()
        .map(|i| {
            if let Some(&fixed) = constraints.get(&i) {
                return Ok(fixed);
            }
            let row = y.row(i);
            let ystar = &state.ystar[i * state.n_items..(i + 1) * state.n_items];
            let mut logw = vec![0.0; k_max];
            for (k, w) in logw.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, cell) in row.iter().enumerate() {
                    if cell.is_some() {
                        let r = ystar[j] - state.linear_predictor(i, k, j);
                        acc += r * r;
                    }
                }
                *w = ln_p[k] - 0.5 * acc;
            }
            let mut rng = streams.stream(iter, StepTag::Assign, i as u64);
            draw_log_categorical(&logw, &mut rng).ok_or_else(|| {
                MpsError::Degenerate(format!(
                    "all cluster probabilities vanish for unit '{}'",
                    y.unit_ids()[i]
                ))
            })
        })
        .collect()
}

/// Resamples each unconstrained unit's cluster with its ideal point
/// integrated out, then redraws the ideal point under the chosen cluster.
///
/// Given the latents, `y*_i | k ~ N(-gamma_k, I + B_k B_k')` over the unit's
/// observed items, so the cluster weight needs only `B_k' r` and `B_k' B_k`
/// with `r = y*_i + gamma_k`. Returns `(assign, theta)`.
pub fn sample_assignments_collapsed(
    y: &ResponseMatrix,
    state: &MpsState,
    constraints: &BTreeMap<usize, usize>,
    streams: &Streams,
    iter: u64,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let ln_p = ln_stick_probs(&state.pi);
    let (d, k_max, j_n) = (state.dim, state.truncation, state.n_items);
    let per_unit: Vec<(usize, Vec<f64>)> = (0..state.n_units)
        .into_par_iter()
        .map(|i| {
            let row = y.row(i);
            let ystar = &state.ystar[i * j_n..(i + 1) * j_n];
            let stats = |k: usize| {
                let mut prec = DMatrix::<f64>::identity(d, d);
                let mut btr = DVector::<f64>::zeros(d);
                let mut rtr = 0.0;
                for (j, cell) in row.iter().enumerate() {
                    if cell.is_none() {
                        continue;
                    }
                    let b = state.beta_of(k, j);
                    let r = ystar[j] + state.gamma_of(k, j);
                    rtr += r * r;
                    for a in 0..d {
                        btr[a] += b[a] * r;
                        for c in 0..d {
                            prec[(a, c)] += b[a] * b[c];
                        }
                    }
                }
                (prec, btr, rtr)
            };
            let mut rng = streams.stream(iter, StepTag::Assign, i as u64);
            let k = match constraints.get(&i) {
                Some(&fixed) => fixed,
                None => {
                    let mut logw = vec![0.0; k_max];
                    for (k, w) in logw.iter_mut().enumerate() {
                        let (prec, btr, rtr) = stats(k);
                        let chol = prec.cholesky().ok_or_else(|| {
                            MpsError::Internal(
                                "ideal-point precision is not positive definite".into(),
                            )
                        })?;
                        let ln_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
                        let quad = rtr - btr.dot(&chol.solve(&btr));
                        *w = ln_p[k] - 0.5 * (ln_det + quad);
                    }
                    draw_log_categorical(&logw, &mut rng).ok_or_else(|| {
                        MpsError::Degenerate(format!(
                            "all cluster probabilities vanish for unit '{}'",
                            y.unit_ids()[i]
                        ))
                    })?
                }
            };
            let (prec, btr, _) = stats(k);
            let theta = sample_gaussian_canonical(prec, &btr, &mut rng)?;
            Ok((k, theta.as_slice().to_vec()))
        })
        .collect::<Result<_>>()?;
    let mut assign = Vec::with_capacity(state.n_units);
    let mut theta = Vec::with_capacity(state.n_units * d);
    for (k, t) in per_unit {
        assign.push(k);
        theta.extend(t);
    }
    Ok((assign, theta))
}

/// Categorical draw from unnormalized log weights (max-subtracted).
pub(crate) fn draw_log_categorical<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (k, wk) in w.iter().enumerate() {
        if u < *wk {
            return Some(k);
        }
        u -= wk;
    }
    // Rounding left u at the top edge; take the last positive weight.
    w.iter().rposition(|&v| v > 0.0)
}

/// Draws the augmented latents at observed cells; missing cells are left as
/// they are.
pub fn sample_latent_responses(
    y: &ResponseMatrix,
    state: &MpsState,
    streams: &Streams,
    iter: u64,
) -> Vec<f64> {
    let j_n = state.n_items;
    let mut out = state.ystar.clone();
    out.par_chunks_mut(j_n)
        .enumerate()
        .for_each(|(i, row_out)| {
            let k = state.assign[i];
            let mut rng = streams.stream(iter, StepTag::Latent, i as u64);
            for (j, cell) in y.row(i).iter().enumerate() {
                if let Some(resp) = *cell {
                    row_out[j] = sample_signed(state.linear_predictor(i, k, j), resp, &mut rng);
                }
            }
        });
    out
}

/// Draws `x ~ N(precision^{-1} rhs, precision^{-1})`.
pub fn sample_gaussian_canonical<R: Rng + ?Sized>(
    precision: DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = precision
        .cholesky()
        .ok_or_else(|| MpsError::Internal("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(rhs.len(), |_, _| StandardNormal.sample(rng));
    // L^T v = z gives cov(v) = (L L^T)^{-1}.
    let v = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| MpsError::Internal("singular Cholesky factor".into()))?;
    Ok(mean + v)
}

/// Conditional precision and right-hand side for `(beta_kj, gamma_kj)`
/// accumulated over the current members of every cluster.
fn item_sufficient_stats(
    y: &ResponseMatrix,
    state: &MpsState,
    item: usize,
) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let p = state.dim + 1;
    let mut stats = vec![(DMatrix::zeros(p, p), DVector::zeros(p)); state.truncation];
    let mut x = vec![0.0; p];
    for i in 0..state.n_units {
        if y.get(i, item).is_none() {
            continue;
        }
        x[..state.dim].copy_from_slice(state.theta_of(i));
        x[state.dim] = -1.0;
        let (xtx, xty) = &mut stats[state.assign[i]];
        let ys = state.ystar[i * state.n_items + item];
        for r in 0..p {
            xty[r] += x[r] * ys;
            for c in 0..p {
                xtx[(r, c)] += x[r] * x[c];
            }
        }
    }
    stats
}

/// Draws all cluster-specific item parameters. Empty clusters draw from the
/// prior `N(0, omega^{-1})`.
pub fn sample_item_parameters(
    y: &ResponseMatrix,
    state: &MpsState,
    cfg: &MpsConfig,
    streams: &Streams,
    iter: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, j_n, k_n) = (state.dim, state.n_items, state.truncation);
    let per_item: Vec<Vec<DVector<f64>>> = (0..j_n)
        .into_par_iter()
        .map(|j| {
            item_sufficient_stats(y, state, j)
                .into_iter()
                .enumerate()
                .map(|(k, (xtx, xty))| {
                    let mut rng = streams.stream(iter, StepTag::Items, (k * j_n + j) as u64);
                    sample_gaussian_canonical(xtx + &cfg.omega, &xty, &mut rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut beta = vec![0.0; k_n * j_n * d];
    let mut gamma = vec![0.0; k_n * j_n];
    for (j, draws) in per_item.iter().enumerate() {
        for (k, draw) in draws.iter().enumerate() {
            let off = (k * j_n + j) * d;
            beta[off..off + d].copy_from_slice(&draw.as_slice()[..d]);
            gamma[k * j_n + j] = draw[d];
        }
    }
    Ok((beta, gamma))
}

/// Draws every ideal point from its conditional given the unit's cluster.
pub fn sample_ideal_points(
    y: &ResponseMatrix,
    state: &MpsState,
    streams: &Streams,
    iter: u64,
) -> Result<Vec<f64>> {
    let d = state.dim;
    let mut theta = vec![0.0; state.n_units * d];
    theta
        .par_chunks_mut(d)
        .enumerate()
        .try_for_each(|(i, out)| -> Result<()> {
            let k = state.assign[i];
            let mut prec = DMatrix::<f64>::identity(d, d);
            let mut rhs = DVector::<f64>::zeros(d);
            for (j, cell) in y.row(i).iter().enumerate() {
                if cell.is_none() {
                    continue;
                }
                let b = state.beta_of(k, j);
                let w = state.ystar[i * state.n_items + j] + state.gamma_of(k, j);
                for r in 0..d {
                    rhs[r] += b[r] * w;
                    for c in 0..d {
                        prec[(r, c)] += b[r] * b[c];
                    }
                }
            }
            let mut rng = streams.stream(iter, StepTag::Theta, i as u64);
            let draw = sample_gaussian_canonical(prec, &rhs, &mut rng)?;
            out.copy_from_slice(draw.as_slice());
            Ok(())
        })?;
    Ok(theta)
}

/// Draws `alpha ~ Gamma(a0 + K - 1, b0 - sum log(1 - pi_k))`.
pub fn sample_alpha<R: Rng + ?Sized>(pi: &[f64], cfg: &MpsConfig, rng: &mut R) -> Result<f64> {
    let (a0, b0) = match cfg.alpha_prior {
        AlphaPrior::Gamma { shape, rate } => (shape, rate),
        AlphaPrior::Fixed(_) => return Err(invalid("alpha is fixed in the configuration")),
    };
    let shape = a0 + pi.len() as f64;
    let rate = b0 - pi.iter().map(|p| (-p).ln_1p()).sum::<f64>();
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(MpsError::Internal(format!(
            "alpha posterior rate {rate} is not positive"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| MpsError::Internal(format!("gamma distribution: {e}")))?;
    Ok(dist.sample(rng).max(f64::MIN_POSITIVE))
}

/// True when every observed latent has the sign implied by its response.
pub fn latents_consistent(y: &ResponseMatrix, state: &MpsState) -> bool {
    y.cells()
        .iter()
        .zip(&state.ystar)
        .all(|(cell, &v)| match cell {
            Some(true) => v >= 0.0,
            Some(false) => v < 0.0,
            None => true,
        })
}

fn check_constraints(cfg: &MpsConfig, n_units: usize) -> Result<()> {
    if let Some(&unit) = cfg.constraints.keys().find(|&&u| u >= n_units) {
        return Err(invalid(format!(
            "constraint on unit index {unit} beyond {n_units} units"
        )));
    }
    Ok(())
}

/// One full sweep in place. Returns the updated state's log-likelihood.
pub fn gibbs_sweep(
    y: &ResponseMatrix,
    state: &mut MpsState,
    cfg: &MpsConfig,
    streams: &Streams,
    iter: u64,
) -> Result<f64> {
    let counts = state.occupancy();
    state.pi = sample_stick_weights(
        &counts,
        state.alpha,
        &mut streams.stream(iter, StepTag::Sticks, 0),
    )?;
    match cfg.assignment {
        AssignmentUpdate::Collapsed => {
            let (assign, theta) =
                sample_assignments_collapsed(y, state, &cfg.constraints, streams, iter)?;
            state.assign = assign;
            state.theta = theta;
        }
        AssignmentUpdate::Conditional => {
            state.assign = sample_assignments(y, state, &cfg.constraints, streams, iter)?;
        }
    }
    state.ystar = sample_latent_responses(y, state, streams, iter);
    let (beta, gamma) = sample_item_parameters(y, state, cfg, streams, iter)?;
    state.beta = beta;
    state.gamma = gamma;
    state.theta = sample_ideal_points(y, state, streams, iter)?;
    state.alpha = match cfg.alpha_prior {
        AlphaPrior::Fixed(a) => a,
        AlphaPrior::Gamma { .. } => {
            sample_alpha(&state.pi, cfg, &mut streams.stream(iter, StepTag::Alpha, 0))?
        }
    };
    let log_lik = log_likelihood(y, state)?;
    state.log_post = log_lik + log_prior(state, cfg)?;
    Ok(log_lik)
}

/// Runs the chain from `init`, keeping the highest-posterior state seen after
/// burn-in.
pub fn run_chain(y: &ResponseMatrix, cfg: &MpsConfig, init: MpsState) -> Result<ChainTrace> {
    cfg.validate()?;
    init.check_dims(y, Some(cfg))?;
    check_constraints(cfg, y.n_units())?;
    let streams = Streams::new(cfg.seed);
    let mut state = init;
    for (&unit, &k) in &cfg.constraints {
        state.assign[unit] = k;
    }
    if let AlphaPrior::Fixed(a) = cfg.alpha_prior {
        state.alpha = a;
    }
    if !latents_consistent(y, &state) {
        state.ystar =
            sample_latent_responses(y, &state, &Streams::new(cfg.seed ^ StepTag::Init as u64), 0);
    }

    let mut scalar_trace = Vec::with_capacity(cfg.n_iter);
    let mut thinned_assign = Vec::new();
    let mut best: Option<(MpsState, f64)> = None;
    for t in 0..cfg.n_iter {
        let log_lik = gibbs_sweep(y, &mut state, cfg, &streams, t as u64).map_err(|e| {
            MpsError::AtIteration {
                iter: t,
                source: Box::new(e),
            }
        })?;
        scalar_trace.push(TraceRow {
            iter: t,
            log_post: state.log_post,
            log_lik,
            alpha: state.alpha,
            occupied: state.n_occupied(),
        });
        if cfg.thin > 0 && (t + 1) % cfg.thin == 0 {
            thinned_assign.push((t, state.assign.clone()));
        }
        if t >= cfg.burn_in
            && best
                .as_ref()
                .is_none_or(|(b, _)| state.log_post > b.log_post)
        {
            best = Some((state.clone(), log_lik));
        }
    }
    let (map_state, log_lik) =
        best.ok_or_else(|| MpsError::Internal("no post-burn-in draws".into()))?;
    let map = fit_statistics(y, map_state, Some(log_lik), ParamCount::Truncation)?;
    Ok(ChainTrace {
        map,
        scalar_trace,
        thinned_assign,
    })
}

/// Ordinary two-parameter probit IRT: every unit pinned to one cluster, with
/// parameters counted for the occupied cluster only. Uses the iteration,
/// seed, prior and dimension settings of `cfg`.
pub fn fit_single_cluster(y: &ResponseMatrix, cfg: &MpsConfig) -> Result<MapEstimate> {
    let mut single = cfg.clone();
    single.truncation = 2;
    single.thin = 0;
    single.constraints = (0..y.n_units()).map(|i| (i, 0)).collect();
    let init = initial_state(y, &single, &InitSpec::fixed(vec![0; y.n_units()]))?;
    let out = run_chain(y, &single, init)?;
    fit_statistics(
        y,
        out.map.state,
        Some(out.map.log_lik),
        ParamCount::Occupied,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_sd(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, var.sqrt())
    }

    #[test]
    fn stick_weight_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sample_stick_weights(&[10, 5, 5], 1.0, &mut rng).unwrap())
            .collect();
        // Beta(11, 11) and Beta(6, 6)
        for (k, (a, b)) in [(11.0, 11.0), (6.0, 6.0)].into_iter().enumerate() {
            let v: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            let (m, _) = mean_sd(&v);
            let mean: f64 = a / (a + b);
            let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
            assert!(
                (m - mean).abs() < 3.0 * (var / n as f64).sqrt(),
                "k={k}: {m}"
            );
        }
        assert!(sample_stick_weights(&[1, 1], 0.0, &mut rng).is_err());
    }

    #[test]
    fn stick_weights_concentrate_on_full_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: f64 = (0..2000)
            .map(|_| sample_stick_weights(&[5000, 0, 0], 1.0, &mut rng).unwrap()[0])
            .sum::<f64>()
            / 2000.0;
        assert!(m > 0.999);
    }

    fn tiny_state() -> (ResponseMatrix, MpsState) {
        let y = ResponseMatrix::from_cells(1, 2, vec![Some(true), Some(false)]).unwrap();
        let mut s = MpsState::zeros(1, 2, 1, 2);
        s.theta = vec![0.5];
        s.beta = vec![1.0, -0.5, 0.2, 0.8];
        s.gamma = vec![0.0, 0.3, -0.4, 0.1];
        s.ystar = vec![0.9, -0.4];
        s.pi = vec![0.3];
        (y, s)
    }

    #[test]
    fn assignment_frequencies_match_enumeration() {
        let (y, s) = tiny_state();
        // Hand enumeration of the two-outcome categorical.
        let eta = |k: usize, j: usize| s.beta[k * 2 + j] * 0.5 - s.gamma[k * 2 + j];
        let lw = |k: usize, p: f64| {
            p.ln() - 0.5 * ((0.9 - eta(k, 0)).powi(2) + (-0.4 - eta(k, 1)).powi(2))
        };
        let (l0, l1) = (lw(0, 0.3), lw(1, 0.7));
        let p0 = 1.0 / (1.0 + (l1 - l0).exp());
        let streams = Streams::new(9);
        let n = 100_000;
        let hits = (0..n)
            .filter(|&t| sample_assignments(&y, &s, &BTreeMap::new(), &streams, t).unwrap()[0] == 0)
            .count();
        let freq = hits as f64 / n as f64;
        let se = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((freq - p0).abs() < 3.0 * se, "{freq} vs {p0}");
    }

    #[test]
    fn collapsed_assignment_matches_marginal_gaussian() {
        let (y, s) = tiny_state();
        let ys = DVector::from_vec(vec![0.9, -0.4]);
        let lw = |k: usize, p: f64| {
            let b = DVector::from_vec(vec![s.beta[k * 2], s.beta[k * 2 + 1]]);
            let cov = DMatrix::identity(2, 2) + &b * b.transpose();
            let r = &ys + DVector::from_vec(vec![s.gamma[k * 2], s.gamma[k * 2 + 1]]);
            let quad = (r.transpose() * cov.clone().try_inverse().unwrap() * &r)[(0, 0)];
            p.ln() - 0.5 * (cov.determinant().ln() + quad)
        };
        let (l0, l1) = (lw(0, 0.3), lw(1, 0.7));
        let p0 = 1.0 / (1.0 + (l1 - l0).exp());
        // Ideal point given cluster 0: precision 1 + b'b, mean b'r / (1 + b'b).
        let theta_mean = (1.0 * 0.9 + -0.5 * (-0.4 + 0.3)) / (1.0 + 1.0 + 0.25);
        let streams = Streams::new(10);
        let n = 100_000;
        let draws: Vec<(usize, f64)> = (0..n)
            .map(|t| {
                let (a, th) =
                    sample_assignments_collapsed(&y, &s, &BTreeMap::new(), &streams, t).unwrap();
                (a[0], th[0])
            })
            .collect();
        let in_zero: Vec<f64> = draws.iter().filter(|d| d.0 == 0).map(|d| d.1).collect();
        let freq = in_zero.len() as f64 / n as f64;
        let se = (p0 * (1.0 - p0) / n as f64).sqrt();
        assert!((freq - p0).abs() < 3.0 * se, "{freq} vs {p0}");
        let (m, sd) = mean_sd(&in_zero);
        assert!((m - theta_mean).abs() < 3.0 * sd / (in_zero.len() as f64).sqrt());
        assert!((sd * sd - 1.0 / 2.25).abs() < 0.02);
    }

    #[test]
    fn overwhelming_likelihood_ratio_and_constraints() {
        let y = ResponseMatrix::from_cells(1, 10, vec![Some(true); 10]).unwrap();
        let mut s = MpsState::zeros(1, 10, 1, 2);
        s.pi = vec![0.5];
        s.ystar = vec![0.0; 10];
        // Cluster 1 puts each latent 10/sqrt(10) = sqrt(10) away: 10 * 5 = 50 nats.
        for j in 0..10 {
            s.gamma[10 + j] = -(10.0f64).sqrt();
        }
        let streams = Streams::new(3);
        for t in 0..2000 {
            assert_eq!(
                sample_assignments(&y, &s, &BTreeMap::new(), &streams, t).unwrap()[0],
                0
            );
        }
        let pinned = BTreeMap::from([(0usize, 1usize)]);
        for t in 0..200 {
            assert_eq!(
                sample_assignments(&y, &s, &pinned, &streams, t).unwrap()[0],
                1
            );
        }
    }

    #[test]
    fn degenerate_weights_name_the_unit() {
        let y = ResponseMatrix::from_cells(1, 1, vec![Some(true)]).unwrap();
        let mut s = MpsState::zeros(1, 1, 1, 2);
        s.ystar = vec![f64::INFINITY];
        let err = sample_assignments(&y, &s, &BTreeMap::new(), &Streams::new(0), 0).unwrap_err();
        assert!(err.to_string().contains("u1"));
    }

    fn latent_mean(mean: f64, n_units: usize, seed: u64) -> Vec<f64> {
        let y = ResponseMatrix::from_cells(n_units, 1, vec![Some(true); n_units]).unwrap();
        let mut s = MpsState::zeros(n_units, 1, 1, 2);
        s.gamma[0] = -mean;
        sample_latent_responses(&y, &s, &Streams::new(seed), 0)
    }

    #[test]
    fn half_normal_latent_mean() {
        let draws = latent_mean(0.0, 1_000_000, 4);
        let (m, sd) = mean_sd(&draws);
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((m - expected).abs() < 3.0 * sd / 1000.0, "{m}");
    }

    #[test]
    fn inactive_truncation_latent_mean() {
        let draws = latent_mean(10.0, 100_000, 5);
        assert!((mean_sd(&draws).0 - 10.0).abs() < 0.01);
    }

    #[test]
    fn far_tail_latent_mean() {
        let draws = latent_mean(-8.0, 200_000, 6);
        assert!(draws.iter().all(|v| *v >= 0.0 && v.is_finite()));
        let (em, ev) = crate::truncnorm::lower_truncated_moments(8.0);
        let expected = -8.0 + em;
        let (m, _) = mean_sd(&draws);
        assert!(
            (m - expected).abs() < 3.0 * (ev / 200_000.0).sqrt(),
            "{m} vs {expected}"
        );
    }

    #[test]
    fn missing_latents_untouched() {
        let y = ResponseMatrix::from_cells(1, 2, vec![Some(false), None]).unwrap();
        let mut s = MpsState::zeros(1, 2, 1, 2);
        s.ystar = vec![5.0, 7.5];
        let out = sample_latent_responses(&y, &s, &Streams::new(1), 0);
        assert!(out[0] < 0.0);
        assert_eq!(out[1], 7.5);
    }

    #[test]
    fn item_posterior_hand_arithmetic() {
        // theta = (1, -1), y* = (0.5, -0.5): X = [[1,-1],[-1,-1]], M = diag(3, 3), mu = (1/3, 0)
        let y = ResponseMatrix::from_cells(2, 1, vec![Some(true), Some(false)]).unwrap();
        let mut s = MpsState::zeros(2, 1, 1, 2);
        s.theta = vec![1.0, -1.0];
        s.ystar = vec![0.5, -0.5];
        let stats = item_sufficient_stats(&y, &s, 0);
        let m = &stats[0].0 + DMatrix::<f64>::identity(2, 2);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]));
        let mu = m.clone().cholesky().unwrap().solve(&stats[0].1);
        assert!((mu[0] - 1.0 / 3.0).abs() < 1e-15 && mu[1].abs() < 1e-15);
        // Empty cluster has no data.
        assert_eq!(stats[1].0, DMatrix::zeros(2, 2));
    }

    fn cov_check(precision: DMatrix<f64>, rhs: DVector<f64>, draws: &[DVector<f64>]) {
        let n = draws.len() as f64;
        let chol = precision.clone().cholesky().unwrap();
        let cov = chol.inverse();
        let mean = chol.solve(&rhs);
        let p = rhs.len();
        for r in 0..p {
            let m = draws.iter().map(|d| d[r]).sum::<f64>() / n;
            assert!(
                (m - mean[r]).abs() < 3.0 * (cov[(r, r)] / n).sqrt(),
                "mean {r}"
            );
            for c in 0..p {
                let s = draws
                    .iter()
                    .map(|d| (d[r] - mean[r]) * (d[c] - mean[c]))
                    .sum::<f64>()
                    / n;
                // Var of a product of jointly normal terms: s_rr s_cc + s_rc^2.
                let se = ((cov[(r, r)] * cov[(c, c)] + cov[(r, c)].powi(2)) / n).sqrt();
                assert!(
                    (s - cov[(r, c)]).abs() < 3.0 * se,
                    "cov ({r},{c}) {s} vs {}",
                    cov[(r, c)]
                );
            }
        }
    }

    #[test]
    fn frozen_precision_covariance() {
        let prec = DMatrix::from_row_slice(2, 2, &[3.0, 1.2, 1.2, 2.0]);
        let rhs = DVector::from_vec(vec![0.7, -1.1]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws: Vec<_> = (0..100_000)
            .map(|_| sample_gaussian_canonical(prec.clone(), &rhs, &mut rng).unwrap())
            .collect();
        cov_check(prec, rhs, &draws);
    }

    #[test]
    fn empty_cluster_draws_from_prior() {
        let y = ResponseMatrix::from_cells(1, 1, vec![Some(true)]).unwrap();
        let mut cfg = MpsConfig::new(1, 2);
        cfg.omega = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mut s = MpsState::zeros(1, 1, 1, 2);
        s.theta = vec![1.0];
        s.ystar = vec![1.0];
        let streams = Streams::new(12);
        let draws: Vec<_> = (0..100_000u64)
            .map(|t| {
                let (b, g) = sample_item_parameters(&y, &s, &cfg, &streams, t).unwrap();
                DVector::from_vec(vec![b[1], g[1]])
            })
            .collect();
        cov_check(cfg.omega.clone(), DVector::zeros(2), &draws);
    }

    #[test]
    fn ideal_point_conditional() {
        // beta = 1, gamma = 0, y* = 2: precision 2, mean 1.
        let y = ResponseMatrix::from_cells(1, 1, vec![Some(true)]).unwrap();
        let mut s = MpsState::zeros(1, 1, 1, 2);
        s.beta[0] = 1.0;
        s.ystar = vec![2.0];
        let streams = Streams::new(21);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|t| sample_ideal_points(&y, &s, &streams, t as u64).unwrap()[0])
            .collect();
        let (m, sd) = mean_sd(&draws);
        assert!((m - 1.0).abs() < 3.0 * (0.5f64 / n as f64).sqrt());
        let var_se = 0.5 * (2.0 / n as f64).sqrt();
        assert!((sd * sd - 0.5).abs() < 3.0 * var_se);
    }

    #[test]
    fn zero_discrimination_gives_prior_ideal_point() {
        let y = ResponseMatrix::from_cells(1, 3, vec![Some(true); 3]).unwrap();
        let mut s = MpsState::zeros(1, 3, 1, 2);
        s.ystar = vec![3.0; 3];
        s.gamma = vec![1.0; 6];
        let streams = Streams::new(22);
        let n = 50_000;
        let draws: Vec<f64> = (0..n)
            .map(|t| sample_ideal_points(&y, &s, &streams, t as u64).unwrap()[0])
            .collect();
        let (m, sd) = mean_sd(&draws);
        assert!(m.abs() < 3.0 / (n as f64).sqrt());
        assert!((sd - 1.0).abs() < 0.02);
    }

    #[test]
    fn alpha_conditional() {
        let mut cfg = MpsConfig::new(1, 3);
        cfg.alpha_prior = AlphaPrior::Gamma {
            shape: 1.0,
            rate: 1.0,
        };
        let pi = [0.5, 0.5];
        let (shape, rate) = (3.0, 1.0 + 2.0 * std::f64::consts::LN_2);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_alpha(&pi, &cfg, &mut rng).unwrap())
            .collect();
        let (m, _) = mean_sd(&draws);
        let sd = (shape as f64).sqrt() / rate;
        assert!(
            (m - shape / rate).abs() < 3.0 * sd / (n as f64).sqrt(),
            "{m}"
        );

        // Tiny breaks: rate tends to b0.
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_alpha(&[1e-12, 1e-12], &cfg, &mut rng).unwrap())
            .collect();
        assert!((mean_sd(&draws).0 - 3.0).abs() < 3.0 * 3f64.sqrt() / (n as f64).sqrt());

        cfg.alpha_prior = AlphaPrior::Fixed(1.0);
        assert!(sample_alpha(&pi, &cfg, &mut rng).is_err());
    }

    #[test]
    fn single_iteration_chain() {
        let y = ResponseMatrix::from_cells(
            2,
            2,
            vec![Some(true), Some(false), Some(false), Some(true)],
        )
        .unwrap();
        let cfg = MpsConfig::new(1, 2).with_iterations(1, 0).with_seed(5);
        let trace = run_chain(&y, &cfg, MpsState::zeros(2, 2, 1, 2)).unwrap();
        assert_eq!(trace.scalar_trace.len(), 1);
        assert_eq!(trace.map.state.log_post, trace.scalar_trace[0].log_post);
        assert!(latents_consistent(&y, &trace.map.state));
    }

    #[test]
    fn rejects_bad_configs() {
        let y = ResponseMatrix::from_cells(1, 1, vec![Some(true)]).unwrap();
        let cfg = MpsConfig::new(1, 2).with_iterations(5, 5);
        assert!(run_chain(&y, &cfg, MpsState::zeros(1, 1, 1, 2)).is_err());
        let mut cfg = MpsConfig::new(1, 2).with_iterations(5, 1);
        cfg.constraints.insert(3, 0);
        assert!(run_chain(&y, &cfg, MpsState::zeros(1, 1, 1, 2)).is_err());
        let cfg = MpsConfig::new(1, 3).with_iterations(5, 1);
        assert!(run_chain(&y, &cfg, MpsState::zeros(1, 1, 1, 2)).is_err());
    }
}
