//! Bayesian binary probit regression by data augmentation (Albert and Chib),
//! under the improper flat prior on the coefficients.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{StepTag, Streams};
use crate::truncnorm::sample_signed;

/// Stabilizing ridge added to `X'X` before factorizing.
const RIDGE: f64 = 1e-8;
/// Rows per random stream for the latent draws.
const ROW_BLOCK: usize = 256;

/// Design matrix with column labels and a binary outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateMatrix {
    labels: Vec<String>,
    x: DMatrix<f64>,
    outcome: Vec<bool>,
}

impl CovariateMatrix {
    pub fn new(labels: Vec<String>, x: DMatrix<f64>, outcome: Vec<bool>) -> Result<Self> {
        if labels.len() != x.ncols() {
            return Err(invalid(format!(
                "{} labels for {} columns",
                labels.len(),
                x.ncols()
            )));
        }
        if outcome.len() != x.nrows() {
            return Err(invalid(format!(
                "{} outcomes for {} rows",
                outcome.len(),
                x.nrows()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % x.nrows(), pos / x.nrows());
            return Err(invalid(format!(
                "non-finite covariate at row {}, column '{}'",
                r + 1,
                labels[c]
            )));
        }
        Ok(Self { labels, x, outcome })
    }

    /// Prepends an `(Intercept)` column of ones.
    pub fn with_intercept(
        labels: Vec<String>,
        x: DMatrix<f64>,
        outcome: Vec<bool>,
    ) -> Result<Self> {
        let x = x.insert_column(0, 1.0);
        let labels = std::iter::once("(Intercept)".to_string())
            .chain(labels)
            .collect();
        Self::new(labels, x, outcome)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn outcome(&self) -> &[bool] {
        &self.outcome
    }

    /// Columns that are (numerically) linear combinations of earlier ones.
    fn collinear_columns(&self) -> Vec<&str> {
        let mut basis: Vec<DVector<f64>> = Vec::new();
        let mut bad = Vec::new();
        for (c, col) in self.x.column_iter().enumerate() {
            let mut v: DVector<f64> = col.into_owned();
            let norm0 = v.norm();
            for b in &basis {
                let proj = b.dot(&v);
                v -= proj * b;
            }
            let norm = v.norm();
            if norm0 == 0.0 || norm <= 1e-9 * norm0 {
                bad.push(self.labels[c].as_str());
            } else {
                basis.push(v / norm);
            }
        }
        bad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefSummary {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    /// 5% posterior quantile.
    pub lower: f64,
    /// 95% posterior quantile.
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbitPosterior {
    pub coefficients: Vec<CoefSummary>,
    pub n_draws: usize,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Gibbs sampler for the probit coefficients; summaries use the draws after
/// `burn_in`.
pub fn fit_bayes_probit(
    data: &CovariateMatrix,
    n_iter: usize,
    burn_in: usize,
    seed: u64,
) -> Result<ProbitPosterior> {
    if burn_in >= n_iter {
        return Err(invalid(format!(
            "burn_in ({burn_in}) must be smaller than n_iter ({n_iter})"
        )));
    }
    if data.x.nrows() == 0 {
        return Err(invalid("empty design matrix"));
    }
    let collinear = data.collinear_columns();
    if !collinear.is_empty() {
        return Err(invalid(format!(
            "singular design; collinear columns: {}",
            collinear.join(", ")
        )));
    }
    let x = &data.x;
    let p = x.ncols();
    let xtx = x.transpose() * x + DMatrix::identity(p, p) * RIDGE;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| invalid("X'X is not positive definite"))?;
    let l_t = chol.l().transpose();
    let streams = Streams::new(seed);
    let mut coef = DVector::<f64>::zeros(p);
    let mut z = vec![0.0; x.nrows()];
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(n_iter - burn_in); p];

    for t in 0..n_iter {
        let eta = x * &coef;
        z.par_chunks_mut(ROW_BLOCK)
            .enumerate()
            .for_each(|(b, chunk)| {
                let mut rng = streams.stream(t as u64, StepTag::Regression, b as u64);
                for (r, zi) in chunk.iter_mut().enumerate() {
                    let row = b * ROW_BLOCK + r;
                    *zi = sample_signed(eta[row], data.outcome[row], &mut rng);
                }
            });
        let rhs = x.tr_mul(&DVector::from_column_slice(&z));
        let mean = chol.solve(&rhs);
        let mut rng = streams.stream(t as u64, StepTag::Regression, u64::MAX);
        let xi = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
        let noise = l_t
            .solve_upper_triangular(&xi)
            .ok_or_else(|| invalid("singular Cholesky factor"))?;
        coef = mean + noise;
        if t >= burn_in {
            for (d, v) in draws.iter_mut().zip(coef.iter()) {
                d.push(*v);
            }
        }
    }

    let coefficients = draws
        .into_iter()
        .zip(&data.labels)
        .map(|(mut d, label)| {
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let sd = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0))
                .sqrt();
            d.sort_by(f64::total_cmp);
            CoefSummary {
                label: label.clone(),
                mean,
                sd,
                lower: quantile(&d, 0.05),
                upper: quantile(&d, 0.95),
            }
        })
        .collect();
    Ok(ProbitPosterior {
        coefficients,
        n_draws: n_iter - burn_in,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::norm_cdf;
    use rand::{Rng, SeedableRng};

    pub(crate) fn simulate(n: usize, coef: &[f64], seed: u64) -> CovariateMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = coef.len();
        let x = DMatrix::from_fn(n, p, |_, c| {
            if c == 0 {
                1.0
            } else {
                StandardNormal.sample(&mut rng)
            }
        });
        let y = (0..n)
            .map(|r| {
                let eta: f64 = (0..p).map(|c| x[(r, c)] * coef[c]).sum();
                rng.random::<f64>() < norm_cdf(eta)
            })
            .collect();
        let labels = (0..p).map(|c| format!("x{c}")).collect();
        CovariateMatrix::new(labels, x, y).unwrap()
    }

    #[test]
    fn intercept_only_symmetric_outcome() {
        let y: Vec<bool> = (0..400).map(|i| i % 2 == 0).collect();
        let data = CovariateMatrix::with_intercept(vec![], DMatrix::zeros(400, 0), y).unwrap();
        let post = fit_bayes_probit(&data, 3000, 500, 1).unwrap();
        let c = &post.coefficients[0];
        assert_eq!(c.label, "(Intercept)");
        // Allow for autocorrelation by using the posterior sd as the scale.
        assert!(c.mean.abs() < 3.0 * c.sd / 10.0, "{c:?}");
    }

    #[test]
    fn recovers_simulated_coefficients() {
        let data = simulate(5000, &[0.5, -1.0], 2);
        let post = fit_bayes_probit(&data, 2000, 500, 3).unwrap();
        assert!((post.coefficients[0].mean - 0.5).abs() < 0.1);
        assert!((post.coefficients[1].mean + 1.0).abs() < 0.1);
        for c in &post.coefficients {
            assert!(c.lower < c.mean && c.mean < c.upper);
        }
    }

    #[test]
    fn singular_design_names_columns() {
        let x = DMatrix::from_fn(20, 3, |r, c| {
            if c == 2 {
                2.0 * r as f64
            } else if c == 1 {
                r as f64
            } else {
                1.0
            }
        });
        let data =
            CovariateMatrix::new(vec!["a".into(), "b".into(), "c".into()], x, vec![true; 20])
                .unwrap();
        let err = fit_bayes_probit(&data, 10, 5, 0).unwrap_err().to_string();
        assert!(err.contains('c') && err.contains("collinear"), "{err}");
    }

    #[test]
    fn bit_identical_across_runs() {
        let data = simulate(300, &[0.2, 0.4], 9);
        let a = fit_bayes_probit(&data, 200, 50, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool
            .install(|| fit_bayes_probit(&data, 200, 50, 4))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_finite() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(CovariateMatrix::new(vec!["a".into()], x, vec![true, false]).is_err());
    }
}
