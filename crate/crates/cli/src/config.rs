//! Run configuration: a flat `key = value` file, overridden by command-line
//! flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mps_core::init::{DEFAULT_KMEANS_K, DEFAULT_MERGE_ABOVE};
use mps_core::{AlphaPrior, AssignmentUpdate, InitSpec, MpsConfig};
use nalgebra::DMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitChoice {
    KMeans,
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,
    pub workers: Option<usize>,

    pub responses: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub truth: Option<PathBuf>,

    pub dim: usize,
    pub truncation: usize,
    pub n_iter: usize,
    /// Defaults to half of `n_iter`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    pub alpha_fixed: Option<f64>,
    /// Diagonal of the item prior precision.
    pub prior_precision: f64,
    pub assignment: AssignmentUpdate,
    pub baseline: bool,

    pub init: InitChoice,
    pub kmeans_k: usize,
    /// Occupied clusters after dealing out the starting clusters; defaults
    /// to the truncation, 0 disables.
    pub init_split: Option<usize>,
    /// Merge k-means starts whose discrimination starts correlate at least
    /// this strongly; `off` disables.
    pub init_merge: Option<f64>,
    pub init_partition: Option<PathBuf>,
    pub probit_ridge: f64,
    pub probit_max_iter: usize,

    pub sim_units: usize,
    pub sim_items: usize,
    pub sim_probs: Vec<f64>,
    pub sim_missing: f64,

    pub graph: bool,
    pub gap: bool,
    pub communities: bool,
    pub regression: bool,
    pub min_size: usize,
    pub gap_k_max: usize,
    pub gap_null: usize,
    /// One-based cluster whose membership is the regression outcome.
    pub membership_cluster: Option<usize>,
    pub regression_iters: usize,
    pub regression_burnin: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("."),
            seed: 1,
            workers: None,
            responses: None,
            constraints: None,
            covariates: None,
            truth: None,
            dim: 1,
            truncation: 10,
            n_iter: 1000,
            burn_in: None,
            thin: 100,
            alpha_shape: 1.0,
            alpha_rate: 1.0,
            alpha_fixed: None,
            prior_precision: 1.0,
            assignment: AssignmentUpdate::Collapsed,
            baseline: false,
            init: InitChoice::KMeans,
            kmeans_k: DEFAULT_KMEANS_K,
            init_split: None,
            init_merge: Some(DEFAULT_MERGE_ABOVE),
            init_partition: None,
            probit_ridge: 1e-4,
            probit_max_iter: 50,
            sim_units: 1000,
            sim_items: 200,
            sim_probs: vec![0.5, 0.2, 0.3],
            sim_missing: 0.0,
            graph: true,
            gap: true,
            communities: true,
            regression: true,
            min_size: 1,
            gap_k_max: 10,
            gap_null: 100,
            membership_cluster: None,
            regression_iters: 10_000,
            regression_burnin: 1_000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow::anyhow!("invalid value '{value}' for '{key}': {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("invalid value '{value}' for '{key}': expected true or false"),
    }
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_text(&text).with_context(|| format!("in config file {}", path.display()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value, got '{line}'", n + 1);
            };
            cfg.set(key.trim(), value.trim())
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = || Some(PathBuf::from(value));
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "workers" => self.workers = Some(parse(key, value)?),
            "responses" => self.responses = path(),
            "constraints" => self.constraints = path(),
            "covariates" => self.covariates = path(),
            "truth" => self.truth = path(),
            "dim" => self.dim = parse(key, value)?,
            "truncation" => self.truncation = parse(key, value)?,
            "n_iter" => self.n_iter = parse(key, value)?,
            "burn_in" => self.burn_in = Some(parse(key, value)?),
            "thin" => self.thin = parse(key, value)?,
            "alpha_shape" => self.alpha_shape = parse(key, value)?,
            "alpha_rate" => self.alpha_rate = parse(key, value)?,
            "alpha_fixed" => self.alpha_fixed = Some(parse(key, value)?),
            "prior_precision" => self.prior_precision = parse(key, value)?,
            "assignment" => {
                self.assignment = match value {
                    "collapsed" => AssignmentUpdate::Collapsed,
                    "conditional" => AssignmentUpdate::Conditional,
                    _ => bail!(
                        "invalid value '{value}' for '{key}': expected collapsed or conditional"
                    ),
                }
            }
            "baseline" => self.baseline = parse_bool(key, value)?,
            "init" => {
                self.init = match value {
                    "kmeans" => InitChoice::KMeans,
                    "fixed" | "fixed-partition" => InitChoice::Fixed,
                    _ => bail!("invalid value '{value}' for '{key}': expected kmeans or fixed"),
                }
            }
            "kmeans_k" => self.kmeans_k = parse(key, value)?,
            "init_split" => self.init_split = Some(parse(key, value)?),
            "init_merge" => {
                self.init_merge = match value {
                    "off" | "none" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "init_partition" => self.init_partition = path(),
            "probit_ridge" => self.probit_ridge = parse(key, value)?,
            "probit_max_iter" => self.probit_max_iter = parse(key, value)?,
            "sim_units" => self.sim_units = parse(key, value)?,
            "sim_items" => self.sim_items = parse(key, value)?,
            "sim_probs" => {
                self.sim_probs = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "sim_missing" => self.sim_missing = parse(key, value)?,
            "graph" => self.graph = parse_bool(key, value)?,
            "gap" => self.gap = parse_bool(key, value)?,
            "communities" => self.communities = parse_bool(key, value)?,
            "regression" => self.regression = parse_bool(key, value)?,
            "min_size" => self.min_size = parse(key, value)?,
            "gap_k_max" => self.gap_k_max = parse(key, value)?,
            "gap_null" => self.gap_null = parse(key, value)?,
            "membership_cluster" => self.membership_cluster = Some(parse(key, value)?),
            "regression_iters" => self.regression_iters = parse(key, value)?,
            "regression_burnin" => self.regression_burnin = parse(key, value)?,
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iter / 2)
    }

    pub fn responses_path(&self) -> PathBuf {
        self.responses
            .clone()
            .unwrap_or_else(|| self.out.join("responses.csv"))
    }

    /// Checks the sampler settings. Runs before any data is read.
    pub fn validate_fit(&self) -> Result<()> {
        if self.n_iter == 0 {
            bail!("invalid config: n_iter must be positive");
        }
        if self.burn_in() >= self.n_iter {
            bail!(
                "invalid config: burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in(),
                self.n_iter
            );
        }
        if self.dim == 0 {
            bail!("invalid config: dim must be positive");
        }
        if self.truncation < 2 {
            bail!("invalid config: truncation must be at least 2");
        }
        if !(self.prior_precision > 0.0 && self.prior_precision.is_finite()) {
            bail!("invalid config: prior_precision must be positive");
        }
        if !(self.alpha_shape > 0.0 && self.alpha_rate > 0.0) {
            bail!("invalid config: alpha_shape and alpha_rate must be positive");
        }
        if let Some(a) = self.alpha_fixed {
            if !(a > 0.0 && a.is_finite()) {
                bail!("invalid config: alpha_fixed must be positive");
            }
        }
        if self.init == InitChoice::KMeans
            && (self.kmeans_k == 0 || self.kmeans_k > self.truncation)
        {
            bail!(
                "invalid config: kmeans_k ({}) must lie in 1..={}",
                self.kmeans_k,
                self.truncation
            );
        }
        if self.init == InitChoice::Fixed && self.init_partition.is_none() {
            bail!("invalid config: init = fixed requires init_partition");
        }
        if let Some(split) = self.init_split {
            if split > self.truncation {
                bail!(
                    "invalid config: init_split ({split}) exceeds truncation ({})",
                    self.truncation
                );
            }
        }
        if let Some(r) = self.init_merge {
            if !(r > 0.0 && r <= 1.0) {
                bail!("invalid config: init_merge ({r}) must lie in (0, 1] or be off");
            }
        }
        if !(self.probit_ridge > 0.0) {
            bail!("invalid config: probit_ridge must be positive");
        }
        self.check_exists("responses", Some(&self.responses_path()))?;
        self.check_exists("constraints", self.constraints.as_ref())?;
        self.check_exists("init_partition", self.init_partition.as_ref())?;
        Ok(())
    }

    pub fn validate_simulate(&self) -> Result<()> {
        if self.sim_units == 0 || self.sim_items == 0 || self.dim == 0 {
            bail!("invalid config: sim_units, sim_items and dim must be positive");
        }
        if self.sim_probs.is_empty() || self.sim_probs.iter().any(|p| !(*p >= 0.0)) {
            bail!("invalid config: sim_probs must be non-negative");
        }
        if (self.sim_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            bail!("invalid config: sim_probs must sum to 1");
        }
        if !(0.0..1.0).contains(&self.sim_missing) {
            bail!("invalid config: sim_missing must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn validate_analyze(&self) -> Result<()> {
        if self.gap && self.gap_null < 2 {
            bail!("invalid config: gap_null must be at least 2");
        }
        if self.gap_k_max == 0 {
            bail!("invalid config: gap_k_max must be positive");
        }
        if self.regression_burnin >= self.regression_iters {
            bail!(
                "invalid config: regression_burnin ({}) must be smaller than regression_iters ({})",
                self.regression_burnin,
                self.regression_iters
            );
        }
        if self.membership_cluster == Some(0) {
            bail!("invalid config: membership_cluster is one-based");
        }
        self.check_exists("truth", self.truth.as_ref())?;
        self.check_exists("covariates", self.covariates.as_ref())?;
        self.check_exists("constraints", self.constraints.as_ref())?;
        Ok(())
    }

    fn check_exists(&self, field: &str, path: Option<&PathBuf>) -> Result<()> {
        if let Some(p) = path {
            if !p.exists() {
                bail!(
                    "invalid config: {field} file {} does not exist",
                    p.display()
                );
            }
        }
        Ok(())
    }

    pub fn mps_config(&self) -> MpsConfig {
        let mut cfg = MpsConfig::new(self.dim, self.truncation)
            .with_iterations(self.n_iter, self.burn_in())
            .with_seed(self.seed);
        cfg.omega = DMatrix::identity(self.dim + 1, self.dim + 1) * self.prior_precision;
        cfg.alpha_prior = match self.alpha_fixed {
            Some(a) => AlphaPrior::Fixed(a),
            None => AlphaPrior::Gamma {
                shape: self.alpha_shape,
                rate: self.alpha_rate,
            },
        };
        cfg.thin = self.thin;
        cfg.assignment = self.assignment;
        cfg
    }

    /// Starting-value settings; `partition` is needed for fixed starts.
    pub fn init_spec(&self, partition: Option<Vec<usize>>) -> InitSpec {
        let mut spec = match (self.init, partition) {
            (InitChoice::Fixed, Some(p)) => InitSpec::fixed(p),
            _ => InitSpec::kmeans(self.kmeans_k),
        };
        spec.probit_ridge = self.probit_ridge;
        spec.probit_max_iter = self.probit_max_iter;
        if let (InitChoice::KMeans, Some(r)) = (self.init, self.init_merge) {
            spec = spec.with_merge(r);
        }
        let split = match self.init {
            InitChoice::KMeans => self.init_split.unwrap_or(self.truncation),
            InitChoice::Fixed => self.init_split.unwrap_or(0),
        };
        if split > 0 {
            spec = spec.with_split(split);
        }
        spec
    }
}
