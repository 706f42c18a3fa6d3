//! File formats: response CSV, constraint and covariate CSVs, and the JSON
//! documents for MAP states and simulation truth.
//!
//! Cluster labels in every file are one-based.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MpsError, Result};
use crate::gibbs::TraceRow;
use crate::model::{MapEstimate, MpsState, ResponseMatrix};
use crate::simulate::SimTruth;

fn parse_cell(raw: &str, row: usize, col: usize) -> Result<Option<bool>> {
    match raw.trim() {
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        "" | "NA" => Ok(None),
        other => Err(MpsError::Parse {
            row,
            col,
            msg: format!("expected 0, 1, NA or empty, got '{other}'"),
        }),
    }
}

/// Reads a response matrix: header row of item ids (first cell ignored),
/// then one row per unit starting with its id.
pub fn read_responses<R: Read>(reader: R) -> Result<ResponseMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| MpsError::Validation("response file is empty".into()))??;
    let item_ids: Vec<String> = header
        .iter()
        .skip(1)
        .map(|s| s.trim().to_string())
        .collect();
    let mut unit_ids = Vec::new();
    let mut cells = Vec::new();
    for (r, rec) in records.enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != item_ids.len() + 1 {
            return Err(MpsError::Parse {
                row,
                col: rec.len(),
                msg: format!(
                    "expected {} fields, found {}",
                    item_ids.len() + 1,
                    rec.len()
                ),
            });
        }
        unit_ids.push(rec[0].trim().to_string());
        for (c, raw) in rec.iter().enumerate().skip(1) {
            cells.push(parse_cell(raw, row, c + 1)?);
        }
    }
    ResponseMatrix::new(unit_ids, item_ids, cells)
}

pub fn load_responses(path: &Path) -> Result<ResponseMatrix> {
    read_responses(File::open(path)?)
}

pub fn write_responses<W: Write>(y: &ResponseMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(std::iter::once("unit_id").chain(y.item_ids().iter().map(String::as_str)))?;
    for i in 0..y.n_units() {
        let row = y.row(i).iter().map(|c| match c {
            Some(true) => "1",
            Some(false) => "0",
            None => "NA",
        });
        w.write_record(std::iter::once(y.unit_ids()[i].as_str()).chain(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_responses(y: &ResponseMatrix, path: &Path) -> Result<()> {
    write_responses(y, BufWriter::new(File::create(path)?))
}

/// Reads `unit_id,cluster` rows (with a header) into zero-based pins keyed by
/// unit index. Clusters must lie in `1..=truncation`.
pub fn read_constraints<R: Read>(
    reader: R,
    y: &ResponseMatrix,
    truncation: usize,
) -> Result<BTreeMap<usize, usize>> {
    let index = y.unit_index();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = BTreeMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != 2 {
            return Err(MpsError::Parse {
                row,
                col: rec.len(),
                msg: "expected unit_id,cluster".into(),
            });
        }
        let unit = *index.get(&rec[0]).ok_or_else(|| {
            MpsError::Validation(format!("constraint names unknown unit '{}'", &rec[0]))
        })?;
        let k: usize = rec[1].parse().map_err(|_| MpsError::Parse {
            row,
            col: 2,
            msg: format!("bad cluster index '{}'", &rec[1]),
        })?;
        if k == 0 || k > truncation {
            return Err(MpsError::Validation(format!(
                "unit '{}' constrained to cluster {k} outside 1..{truncation}",
                &rec[0]
            )));
        }
        out.insert(unit, k - 1);
    }
    Ok(out)
}

pub fn load_constraints(
    path: &Path,
    y: &ResponseMatrix,
    truncation: usize,
) -> Result<BTreeMap<usize, usize>> {
    read_constraints(File::open(path)?, y, truncation)
}

/// Covariates keyed by unit id: header `unit_id,<labels...>`.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateTable {
    pub unit_ids: Vec<String>,
    pub labels: Vec<String>,
    /// `units x labels`.
    pub values: DMatrix<f64>,
}

pub fn read_covariates<R: Read>(reader: R) -> Result<CovariateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut unit_ids = Vec::new();
    let mut flat = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 2;
        if rec.len() != labels.len() + 1 {
            return Err(MpsError::Parse {
                row,
                col: rec.len(),
                msg: "wrong number of fields".into(),
            });
        }
        unit_ids.push(rec[0].to_string());
        for (c, raw) in rec.iter().enumerate().skip(1) {
            let v: f64 = raw.parse().map_err(|_| MpsError::Parse {
                row,
                col: c + 1,
                msg: format!("not a number: '{raw}'"),
            })?;
            if !v.is_finite() {
                return Err(MpsError::Parse {
                    row,
                    col: c + 1,
                    msg: "non-finite value".into(),
                });
            }
            flat.push(v);
        }
    }
    let values = DMatrix::from_row_slice(unit_ids.len(), labels.len(), &flat);
    Ok(CovariateTable {
        unit_ids,
        labels,
        values,
    })
}

pub fn load_covariates(path: &Path) -> Result<CovariateTable> {
    read_covariates(File::open(path)?)
}

/// On-disk MAP state. Arrays are flattened row-major as in [`MpsState`];
/// the augmented latents are not stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapStateFile {
    pub unit_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub n_units: usize,
    pub n_items: usize,
    pub dim: usize,
    pub truncation: usize,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// One-based cluster of each unit.
    pub assign: Vec<usize>,
    pub pi: Vec<f64>,
    pub alpha: f64,
    pub log_post: f64,
    pub log_lik: f64,
    pub bic: f64,
    pub aic: f64,
    pub occupancy: Vec<usize>,
    pub n_params: usize,
    pub n_obs: usize,
}

impl MapStateFile {
    pub fn from_estimate(map: &MapEstimate, y: &ResponseMatrix) -> Self {
        let s = &map.state;
        Self {
            unit_ids: y.unit_ids().to_vec(),
            item_ids: y.item_ids().to_vec(),
            n_units: s.n_units,
            n_items: s.n_items,
            dim: s.dim,
            truncation: s.truncation,
            theta: s.theta.clone(),
            beta: s.beta.clone(),
            gamma: s.gamma.clone(),
            assign: s.assign.iter().map(|k| k + 1).collect(),
            pi: s.pi.clone(),
            alpha: s.alpha,
            log_post: s.log_post,
            log_lik: map.log_lik,
            bic: map.bic,
            aic: map.aic,
            occupancy: map.occupancy.clone(),
            n_params: map.n_params,
            n_obs: map.n_obs,
        }
    }

    pub fn to_estimate(&self) -> Result<MapEstimate> {
        if self.assign.iter().any(|&k| k == 0 || k > self.truncation) {
            return Err(MpsError::Validation(
                "assign entries must lie in 1..=truncation".into(),
            ));
        }
        let state = MpsState {
            n_units: self.n_units,
            n_items: self.n_items,
            dim: self.dim,
            truncation: self.truncation,
            theta: self.theta.clone(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            assign: self.assign.iter().map(|k| k - 1).collect(),
            pi: self.pi.clone(),
            alpha: self.alpha,
            ystar: vec![0.0; self.n_units * self.n_items],
            log_post: self.log_post,
        };
        let ok = state.theta.len() == self.n_units * self.dim
            && state.beta.len() == self.truncation * self.n_items * self.dim
            && state.gamma.len() == self.truncation * self.n_items
            && state.assign.len() == self.n_units
            && state.pi.len() + 1 == self.truncation;
        if !ok {
            return Err(MpsError::Validation(
                "map state arrays have inconsistent lengths".into(),
            ));
        }
        Ok(MapEstimate {
            state,
            log_lik: self.log_lik,
            bic: self.bic,
            aic: self.aic,
            occupancy: self.occupancy.clone(),
            n_params: self.n_params,
            n_obs: self.n_obs,
        })
    }
}

/// On-disk simulation truth with one-based cluster labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub unit_ids: Vec<String>,
    pub assign: Vec<usize>,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub cluster_probs: Vec<f64>,
    pub dim: usize,
    pub n_items: usize,
    pub seed: u64,
}

impl TruthFile {
    pub fn from_truth(t: &SimTruth, y: &ResponseMatrix) -> Self {
        Self {
            unit_ids: y.unit_ids().to_vec(),
            assign: t.assign_true.iter().map(|k| k + 1).collect(),
            theta: t.theta_true.clone(),
            beta: t.beta_true.clone(),
            gamma: t.gamma_true.clone(),
            cluster_probs: t.cluster_probs.clone(),
            dim: t.dim,
            n_items: t.n_items,
            seed: t.seed,
        }
    }

    pub fn to_truth(&self) -> Result<SimTruth> {
        if self.assign.contains(&0) {
            return Err(MpsError::Validation(
                "truth labels must be one-based".into(),
            ));
        }
        Ok(SimTruth {
            assign_true: self.assign.iter().map(|k| k - 1).collect(),
            theta_true: self.theta.clone(),
            beta_true: self.beta.clone(),
            gamma_true: self.gamma.clone(),
            cluster_probs: self.cluster_probs.clone(),
            dim: self.dim,
            n_items: self.n_items,
            seed: self.seed,
        })
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(
        File::open(path)?,
    ))?)
}

/// `iter,log_post,log_lik,alpha,occupied`, one row per iteration.
pub fn write_trace<W: Write>(rows: &[TraceRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
