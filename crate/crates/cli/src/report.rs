//! Markdown summary of a run directory.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mps_core::io::{read_json, read_trace};

use crate::commands::{CommunityReport, FitStats};

fn read_table(path: &Path) -> Result<Option<(Vec<String>, Vec<Vec<String>>)>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Some((header, rows)))
}

fn markdown_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for row in rows {
        let _ = writeln!(out, "| {} |", row.join(" | "));
    }
    out.push('\n');
}

fn short(v: &str) -> String {
    v.parse::<f64>()
        .map_or_else(|_| v.to_string(), |x| format!("{x:.3}"))
}

pub fn render(dir: &Path) -> Result<String> {
    let mut out = String::from("# MPS run report\n\n");
    let mut found = false;

    let stats_path = dir.join("fit_stats.json");
    if stats_path.exists() {
        found = true;
        let s: FitStats = read_json(&stats_path)?;
        out.push_str("## Fit\n\n");
        let _ = writeln!(
            out,
            "- iterations: {} (burn-in {}), seed {}",
            s.n_iter, s.burn_in, s.seed
        );
        let _ = writeln!(
            out,
            "- occupied clusters: {} of {}",
            s.occupied, s.truncation
        );
        let _ = writeln!(out, "- cluster sizes: {:?}", s.occupancy);
        let _ = writeln!(out, "- MAP log-posterior: {:.2}", s.log_post);
        let _ = writeln!(out, "- log-likelihood: {:.2}", s.log_lik);
        let _ = writeln!(
            out,
            "- BIC {:.1}, AIC {:.1} ({} parameters, {} observations)",
            s.bic, s.aic, s.n_params, s.n_obs
        );
        let _ = writeln!(out, "- concentration at the MAP: {:.3}", s.alpha);
        if let Some(b) = &s.single_cluster {
            let _ = writeln!(
                out,
                "- single-cluster IRT: log-likelihood {:.2}, BIC {:.1} ({} parameters); preferred by BIC: {}",
                b.log_lik,
                b.bic,
                b.n_params,
                if b.bic < s.bic { "single cluster" } else { "mixture" }
            );
        }
        out.push('\n');
    }

    let trace_path = dir.join("trace.csv");
    if trace_path.exists() {
        found = true;
        let rows = read_trace(File::open(&trace_path)?)?;
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            out.push_str("## Trace\n\n");
            let _ = writeln!(out, "- {} iterations recorded", rows.len());
            let _ = writeln!(
                out,
                "- log-posterior {:.2} at the first iteration, {:.2} at the last",
                first.log_post, last.log_post
            );
            let _ = writeln!(
                out,
                "- occupied clusters at the last iteration: {}\n",
                last.occupied
            );
        }
    }

    let comm_path = dir.join("communities.json");
    if comm_path.exists() {
        found = true;
        let c: CommunityReport = read_json(&comm_path)?;
        out.push_str("## Substantive clusters\n\n");
        if let Some(k) = c.k_star {
            let _ = writeln!(out, "Gap statistic selects {k} substantive cluster(s).\n");
        }
        let _ = writeln!(
            out,
            "Greedy modularity communities (Q = {:.3}):\n",
            c.modularity
        );
        let rows: Vec<Vec<String>> = c
            .substantive
            .iter()
            .map(|s| {
                let clusters: Vec<String> = s.clusters.iter().map(usize::to_string).collect();
                vec![
                    s.community.to_string(),
                    clusters.join(", "),
                    s.units.to_string(),
                ]
            })
            .collect();
        let header = ["community", "sub-clusters", "units"].map(String::from);
        markdown_table(&mut out, &header, &rows);
    }

    if let Some((header, rows)) = read_table(&dir.join("gap_curve.csv"))? {
        found = true;
        if !rows.is_empty() {
            out.push_str("### Gap curve\n\n");
            let rows: Vec<Vec<String>> = rows
                .iter()
                .map(|r| r.iter().map(|v| short(v)).collect())
                .collect();
            markdown_table(&mut out, &header, &rows);
        }
    }

    if let Some((header, rows)) = read_table(&dir.join("crosstab.csv"))? {
        found = true;
        let mut total = 0usize;
        let mut modal = 0usize;
        for row in &rows {
            let counts: Vec<usize> = row[1..]
                .iter()
                .map(|v| v.parse().context("bad count in crosstab.csv"))
                .collect::<Result<_>>()?;
            total += counts.iter().sum::<usize>();
            modal += counts.iter().max().copied().unwrap_or(0);
        }
        out.push_str("## Estimated vs. true clusters\n\n");
        if total > 0 {
            let _ = writeln!(out, "Purity: {:.4}\n", modal as f64 / total as f64);
        }
        markdown_table(&mut out, &header, &rows);
    }

    if let Some((header, rows)) = read_table(&dir.join("regression_coefs.csv"))? {
        found = true;
        out.push_str("## Membership regression\n\n");
        out.push_str("Posterior means, standard deviations and 90% credible intervals.\n\n");
        let rows: Vec<Vec<String>> = rows
            .iter()
            .map(|r| r.iter().map(|v| short(v)).collect())
            .collect();
        markdown_table(&mut out, &header, &rows);
    }

    if !found {
        bail!("no run outputs found in {}", dir.display());
    }
    Ok(out)
}
