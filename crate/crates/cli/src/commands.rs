use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mps_core::io::{
    load_constraints, load_covariates, load_responses, read_json, save_responses, write_json,
    write_trace, MapStateFile, TruthFile,
};
use mps_core::postfit::{
    crosstab_clusters, detect_communities, discrimination_correlations, gap_statistic,
};
use mps_core::regression::{fit_bayes_probit, CovariateMatrix};
use mps_core::{
    fit_single_cluster, initial_state, run_chain, simulate_dataset, ClusterGraph, MapEstimate,
    SimSpec,
};
use serde::{Deserialize, Serialize};

use crate::config::{InitChoice, RunConfig};

/// Contents of `fit_stats.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub log_lik: f64,
    pub log_post: f64,
    pub bic: f64,
    pub aic: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub occupied: usize,
    pub occupancy: Vec<usize>,
    pub alpha: f64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub truncation: usize,
    pub single_cluster: Option<BaselineStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub log_lik: f64,
    pub bic: f64,
    pub aic: f64,
    pub n_params: usize,
}

impl BaselineStats {
    fn from_estimate(m: &MapEstimate) -> Self {
        Self {
            log_lik: m.log_lik,
            bic: m.bic,
            aic: m.aic,
            n_params: m.n_params,
        }
    }
}

/// Contents of `communities.json`. Cluster and community labels are
/// one-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommunityReport {
    pub clusters: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub membership: Vec<usize>,
    pub modularity: f64,
    pub k_star: Option<usize>,
    pub substantive: Vec<SubstantiveCluster>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstantiveCluster {
    pub community: usize,
    pub clusters: Vec<usize>,
    pub units: usize,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn ensure_out(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))
}

/// Writes `responses.csv` and `truth.json`.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    cfg.validate_simulate()?;
    ensure_out(cfg)?;
    let mut spec = SimSpec::new(
        cfg.sim_units,
        cfg.sim_items,
        cfg.dim,
        cfg.sim_probs.clone(),
        cfg.seed,
    );
    spec.missing_rate = cfg.sim_missing;
    let (y, truth) = simulate_dataset(&spec)?;
    save_responses(&y, &cfg.out.join("responses.csv"))?;
    write_json(
        &TruthFile::from_truth(&truth, &y),
        &cfg.out.join("truth.json"),
    )?;
    Ok(())
}

/// Writes `map_state.json`, `trace.csv` and `fit_stats.json`.
pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    cfg.validate_fit()?;
    ensure_out(cfg)?;
    let y = load_responses(&cfg.responses_path())
        .with_context(|| format!("reading responses {}", cfg.responses_path().display()))?;
    let mut mps = cfg.mps_config();
    if let Some(path) = &cfg.constraints {
        mps.constraints = load_constraints(path, &y, cfg.truncation)
            .with_context(|| format!("reading constraints {}", path.display()))?;
    }
    let partition = match (&cfg.init, &cfg.init_partition) {
        (InitChoice::Fixed, Some(path)) => {
            let map = load_constraints(path, &y, cfg.truncation)
                .with_context(|| format!("reading init_partition {}", path.display()))?;
            if map.len() != y.n_units() {
                bail!(
                    "invalid config: init_partition covers {} of {} units",
                    map.len(),
                    y.n_units()
                );
            }
            Some(map.into_values().collect())
        }
        _ => None,
    };
    let init = initial_state(&y, &mps, &cfg.init_spec(partition))?;
    let out = run_chain(&y, &mps, init)?;

    write_json(
        &MapStateFile::from_estimate(&out.map, &y),
        &cfg.out.join("map_state.json"),
    )?;
    let trace_path = cfg.out.join("trace.csv");
    write_trace(
        &out.scalar_trace,
        BufWriter::new(File::create(&trace_path)?),
    )?;

    let single_cluster = if cfg.baseline {
        Some(BaselineStats::from_estimate(&fit_single_cluster(&y, &mps)?))
    } else {
        None
    };
    let map = &out.map;
    let stats = FitStats {
        log_lik: map.log_lik,
        log_post: map.state.log_post,
        bic: map.bic,
        aic: map.aic,
        n_params: map.n_params,
        n_obs: map.n_obs,
        occupied: map.state.n_occupied(),
        occupancy: map.occupancy.clone(),
        alpha: map.state.alpha,
        n_iter: mps.n_iter,
        burn_in: mps.burn_in,
        seed: mps.seed,
        truncation: mps.truncation,
        single_cluster,
    };
    write_json(&stats, &cfg.out.join("fit_stats.json"))?;
    Ok(())
}

fn load_map(cfg: &RunConfig) -> Result<(MapStateFile, MapEstimate)> {
    let path = cfg.out.join("map_state.json");
    let file: MapStateFile =
        read_json(&path).with_context(|| format!("reading {}", path.display()))?;
    let est = file.to_estimate()?;
    Ok((file, est))
}

fn truth_path(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.truth.clone().or_else(|| {
        let p = cfg.out.join("truth.json");
        p.exists().then_some(p)
    })
}

/// Writes the graph, gap, community, cross-tabulation and regression outputs
/// that the configuration and available inputs allow.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<()> {
    cfg.validate_analyze()?;
    let (file, est) = load_map(cfg)?;
    let state = &est.state;
    let occupancy = state.occupancy();

    let graph = discrimination_correlations(state, cfg.min_size)?;
    if cfg.graph {
        write_edges(&graph, &cfg.out.join("graph_edges.csv"))?;
    }
    let mut k_star = None;
    if cfg.gap {
        let mut w = csv_writer(&cfg.out.join("gap_curve.csv"))?;
        w.write_record(["k", "gap", "se", "log_dispersion", "null_log_dispersion"])?;
        if graph.len() >= 2 {
            let k_max = cfg.gap_k_max.min(graph.len());
            let curve = gap_statistic(&graph, k_max, cfg.gap_null, cfg.seed)?;
            for i in 0..curve.k_values.len() {
                w.write_record([
                    curve.k_values[i].to_string(),
                    curve.gap[i].to_string(),
                    curve.se[i].to_string(),
                    curve.log_dispersion[i].to_string(),
                    curve.null_log_dispersion[i].to_string(),
                ])?;
            }
            k_star = Some(curve.k_star);
        } else {
            k_star = Some(graph.len());
        }
        w.flush()?;
    }
    if cfg.communities {
        let comm = detect_communities(&graph);
        let n_comm = comm.membership.iter().max().map_or(0, |m| m + 1);
        let substantive = (0..n_comm)
            .map(|c| {
                let clusters: Vec<usize> = graph
                    .nodes
                    .iter()
                    .zip(&comm.membership)
                    .filter(|(_, &m)| m == c)
                    .map(|(&k, _)| k)
                    .collect();
                SubstantiveCluster {
                    community: c + 1,
                    units: clusters.iter().map(|&k| occupancy[k]).sum(),
                    clusters: clusters.iter().map(|k| k + 1).collect(),
                }
            })
            .collect();
        let report = CommunityReport {
            clusters: graph.nodes.iter().map(|k| k + 1).collect(),
            cluster_sizes: graph.nodes.iter().map(|&k| occupancy[k]).collect(),
            membership: comm.membership.iter().map(|m| m + 1).collect(),
            modularity: comm.modularity,
            k_star,
            substantive,
        };
        write_json(&report, &cfg.out.join("communities.json"))?;
    }

    if let Some(path) = truth_path(cfg) {
        let truth: TruthFile =
            read_json(&path).with_context(|| format!("reading truth {}", path.display()))?;
        if truth.unit_ids != file.unit_ids {
            bail!("truth unit_ids do not match the fitted responses");
        }
        let truth = truth.to_truth()?;
        let ct = crosstab_clusters(&state.assign, &truth.assign_true)?;
        let mut w = csv_writer(&cfg.out.join("crosstab.csv"))?;
        let header: Vec<String> = std::iter::once("cluster".to_string())
            .chain(ct.truth_labels.iter().map(|t| format!("truth_{}", t + 1)))
            .collect();
        w.write_record(&header)?;
        for (e, row) in ct.est_labels.iter().zip(&ct.counts) {
            let rec: Vec<String> = std::iter::once((e + 1).to_string())
                .chain(row.iter().map(usize::to_string))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
    }

    if let (true, Some(path)) = (cfg.regression, &cfg.covariates) {
        run_regression(cfg, &file, &est, path)?;
    }
    Ok(())
}

fn write_edges(graph: &ClusterGraph, path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cluster_a", "cluster_b", "weight", "corr", "std_err"])?;
    for a in 0..graph.len() {
        for b in a + 1..graph.len() {
            w.write_record([
                (graph.nodes[a] + 1).to_string(),
                (graph.nodes[b] + 1).to_string(),
                graph.weights[a][b].to_string(),
                graph.raw_corr[a][b].to_string(),
                graph.std_err[a][b].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cluster whose membership is modelled: the configured one, else the
/// cluster most pinned units belong to, else the largest.
fn target_cluster(cfg: &RunConfig, pins: &BTreeMap<usize, usize>, occupancy: &[usize]) -> usize {
    if let Some(k) = cfg.membership_cluster {
        return k - 1;
    }
    let mut counts = vec![0usize; occupancy.len()];
    for &k in pins.values() {
        counts[k] += 1;
    }
    let source = if pins.is_empty() { occupancy } else { &counts };
    (0..source.len())
        .max_by_key(|&k| (source[k], std::cmp::Reverse(k)))
        .unwrap_or(0)
}

fn run_regression(
    cfg: &RunConfig,
    file: &MapStateFile,
    est: &MapEstimate,
    path: &Path,
) -> Result<()> {
    let table =
        load_covariates(path).with_context(|| format!("reading covariates {}", path.display()))?;
    let index: BTreeMap<&str, usize> = file
        .unit_ids
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), i))
        .collect();
    let pins = match &cfg.constraints {
        Some(p) => {
            let y = load_responses(&cfg.responses_path())?;
            load_constraints(p, &y, file.truncation)?
        }
        None => BTreeMap::new(),
    };
    let target = target_cluster(cfg, &pins, &est.occupancy);
    if target >= file.truncation {
        bail!(
            "invalid config: membership_cluster {} exceeds truncation {}",
            target + 1,
            file.truncation
        );
    }
    let mut rows = Vec::new();
    let mut outcome = Vec::new();
    for (r, uid) in table.unit_ids.iter().enumerate() {
        let Some(&i) = index.get(uid.as_str()) else {
            bail!("covariates name unknown unit '{uid}'");
        };
        if pins.contains_key(&i) {
            continue;
        }
        rows.push(r);
        outcome.push(est.state.assign[i] == target);
    }
    let x = table.values.select_rows(&rows);
    let data = CovariateMatrix::with_intercept(table.labels.clone(), x, outcome)?;
    let post = fit_bayes_probit(&data, cfg.regression_iters, cfg.regression_burnin, cfg.seed)?;
    let mut w = csv_writer(&cfg.out.join("regression_coefs.csv"))?;
    w.write_record(["term", "mean", "sd", "lower_05", "upper_95"])?;
    for c in &post.coefficients {
        w.write_record([
            c.label.clone(),
            c.mean.to_string(),
            c.sd.to_string(),
            c.lower.to_string(),
            c.upper.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Collates whatever outputs exist in the output directory into
/// `report.md`. Returns the report path.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let text = crate::report::render(&cfg.out)?;
    let path = cfg.out.join("report.md");
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
