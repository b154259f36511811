//! Monte Carlo drivers and CSV emission.
//!
//! Trials run in parallel, each on its own generator stream derived from the
//! master seed, and results are collected in trial order, so outputs do not
//! depend on scheduling.

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::array_response;
use crate::harness::config::ScenarioConfig;
use crate::harness::scenario::{
    build_scenario, fingerprint, place_users, run_trial, trial_rng, ResultRecord, ScenarioError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("empty power list")]
    NoPowers,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Runs `trials` trials at the configured operating point.
pub fn run(
    cfg: &ScenarioConfig,
    seed: u64,
    trials: usize,
) -> Result<Vec<ResultRecord>, ExperimentError> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| run_trial(cfg, seed, t).map_err(ExperimentError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    #[serde(rename = "p_max_dBm")]
    pub p_max_dbm: f64,
    #[serde(rename = "L")]
    pub l_count: usize,
    pub r: usize,
    pub mean_sum_rate_bps: f64,
    pub stderr: f64,
}

/// Mean sum rate and its standard error for every `(power, r)` pair, with
/// `r` taken from `cfg.sweep_r` and `p_total = p_max`. Each trial's
/// placement and channels are shared by all power levels.
pub fn sweep_power(
    cfg: &ScenarioConfig,
    powers_w: &[f64],
    trials: usize,
) -> Result<Vec<PowerRow>, ExperimentError> {
    if powers_w.is_empty() {
        return Err(ExperimentError::NoPowers);
    }
    let mut per_r = Vec::with_capacity(cfg.sweep_r.len());
    for &r in &cfg.sweep_r {
        let l_count = cfg.subsections(r).map_err(ScenarioError::from)?.l_count;
        let rates: Vec<Vec<f64>> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let scn = build_scenario(cfg, r, &mut trial_rng(cfg.seed, t))?;
                Ok(powers_w.iter().map(|&p| scn.sum_rate(cfg, p, p)).collect())
            })
            .collect::<Result<_, ScenarioError>>()?;
        per_r.push((r, l_count, rates));
    }
    let mut rows = Vec::new();
    for (k, &p) in powers_w.iter().enumerate() {
        for (r, l_count, rates) in &per_r {
            let samples: Vec<f64> = rates.iter().map(|v| v[k]).collect();
            let (mean, stderr) = mean_stderr(&samples);
            rows.push(PowerRow {
                p_max_dbm: watts_to_dbm(p),
                l_count: *l_count,
                r: *r,
                mean_sum_rate_bps: mean,
                stderr,
            });
        }
    }
    Ok(rows)
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbRow {
    pub r: usize,
    #[serde(rename = "L")]
    pub l_count: usize,
    pub trial: u64,
    pub user: usize,
    pub rate_bps: f64,
}

/// Per-user rates for every `r` in `r_values` at the configured power.
pub fn sweep_rb(cfg: &ScenarioConfig, r_values: &[usize]) -> Result<Vec<RbRow>, ExperimentError> {
    let mut rows = Vec::new();
    for &r in r_values {
        let l_count = cfg.subsections(r).map_err(ScenarioError::from)?.l_count;
        let per_trial: Vec<Vec<RbRow>> = (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let scn = build_scenario(cfg, r, &mut trial_rng(cfg.seed, t))?;
                let eval = scn.evaluate(cfg, cfg.p_max, cfg.p_total);
                Ok(eval
                    .report
                    .rates
                    .per_user
                    .iter()
                    .map(|u| RbRow {
                        r,
                        l_count,
                        trial: t,
                        user: u.user,
                        rate_bps: u.rate_bps,
                    })
                    .collect())
            })
            .collect::<Result<_, ScenarioError>>()?;
        rows.extend(per_trial.into_iter().flatten());
    }
    Ok(rows)
}

/// Pairwise correlation of the users in one co-cluster group.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub sector: usize,
    pub subsection: usize,
    pub users: Vec<usize>,
    /// `|v_iᴴ v_k|` of the users' array responses.
    pub matrix: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn mean_off_diagonal(&self) -> Option<f64> {
        let n = self.users.len();
        if n < 2 {
            return None;
        }
        let mut sum = 0.0;
        for (i, row) in self.matrix.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if i != k {
                    sum += v;
                }
            }
        }
        Some(sum / (n * (n - 1)) as f64)
    }
}

/// Correlation matrix of the largest group of same-sector users sharing a
/// subsection index, from the placement of trial 0 under `seed`. Ties go to
/// the lowest sector, then the lowest subsection. `None` when no group has
/// two members.
pub fn heatmap(cfg: &ScenarioConfig, seed: u64) -> Result<Option<Heatmap>, ExperimentError> {
    let placement = place_users(cfg, cfg.r, &mut trial_rng(seed, 0))?;
    let mut groups: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (k, u) in placement.users.iter().enumerate() {
        groups
            .entry((u.cell.sector, u.cell.subsection))
            .or_default()
            .push(k);
    }
    let mut best: Option<(&(usize, usize), &Vec<usize>)> = None;
    for (key, members) in &groups {
        if best.is_none_or(|(_, b)| members.len() > b.len()) {
            best = Some((key, members));
        }
    }
    let Some((&(sector, subsection), members)) = best.filter(|(_, m)| m.len() >= 2) else {
        return Ok(None);
    };
    let array = cfg.array();
    let vectors: Vec<_> = members
        .iter()
        .map(|&k| {
            let a = &placement.users[k].angles;
            array_response(a.mu_phi, a.mu_h, &array)
        })
        .collect();
    let matrix = (0..vectors.len())
        .map(|i| {
            (0..vectors.len())
                .map(|k| {
                    if i == k {
                        1.0
                    } else {
                        vectors[i].dotc(&vectors[k]).norm()
                    }
                })
                .collect()
        })
        .collect();
    Ok(Some(Heatmap {
        sector,
        subsection,
        users: members.iter().map(|&k| placement.users[k].user).collect(),
        matrix,
    }))
}

#[derive(Debug, Serialize)]
struct TrialRow<'a> {
    trial: u64,
    fingerprint: &'a str,
    p_max: f64,
    p_total: f64,
    r: usize,
    #[serde(rename = "L")]
    l_count: usize,
    dropped: usize,
    served: usize,
    admitted: usize,
    infeasible: bool,
    sum_rate_bps: f64,
    min_qos_margin: Option<f64>,
    power_margin: f64,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ExperimentError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_rows<T: Serialize>(
    path: &Path,
    header: &[&str],
    rows: &[T],
) -> Result<(), ExperimentError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(fs::File::create(path).map_err(io_err(path))?);
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Writes `meta.txt`: the subcommand, its arguments and the resolved config.
pub fn write_meta(
    dir: &Path,
    cfg: &ScenarioConfig,
    command: &str,
    args: &[(&str, String)],
) -> Result<(), ExperimentError> {
    let mut text = format!(
        "# command: {command}\n# fingerprint: {}\n",
        fingerprint(cfg)
    );
    for (k, v) in args {
        text.push_str(&format!("# {k}: {v}\n"));
    }
    text.push_str(&cfg.to_toml());
    let path = dir.join("meta.txt");
    fs::write(&path, text).map_err(io_err(&path))
}

/// `run.csv` (one row per trial) and `run_users.csv` (one row per user).
pub fn write_run(dir: &Path, records: &[ResultRecord]) -> Result<(), ExperimentError> {
    let path = dir.join("run.csv");
    let mut w = csv_writer(&path)?;
    for rec in records {
        w.serialize(TrialRow {
            trial: rec.trial,
            fingerprint: &rec.fingerprint,
            p_max: rec.p_max,
            p_total: rec.p_total,
            r: rec.r,
            l_count: rec.l_count,
            dropped: rec.dropped,
            served: rec.served,
            admitted: rec.admitted,
            infeasible: rec.infeasible,
            sum_rate_bps: rec.sum_rate,
            min_qos_margin: rec.min_qos_margin,
            power_margin: rec.power_margin,
        })?;
    }
    w.flush().map_err(io_err(&path))?;

    let users: Vec<_> = records.iter().flat_map(|r| r.users.iter()).collect();
    write_rows(
        &dir.join("run_users.csv"),
        &[
            "trial",
            "user",
            "sector",
            "section",
            "subsection",
            "rate_bps",
            "spectral_efficiency",
            "omega",
            "sinr",
            "admitted",
        ],
        &users,
    )
}

pub fn write_power_sweep(dir: &Path, rows: &[PowerRow]) -> Result<(), ExperimentError> {
    write_rows(
        &dir.join("sweep-power.csv"),
        &["p_max_dBm", "L", "r", "mean_sum_rate_bps", "stderr"],
        rows,
    )
}

pub fn write_rb_sweep(dir: &Path, rows: &[RbRow]) -> Result<(), ExperimentError> {
    write_rows(
        &dir.join("sweep-rb.csv"),
        &["r", "L", "trial", "user", "rate_bps"],
        rows,
    )
}

/// Square matrix labelled by user id, or a header and a note row when there
/// is no multi-user group.
pub fn write_heatmap(dir: &Path, map: Option<&Heatmap>) -> Result<(), ExperimentError> {
    let path = dir.join("heatmap.csv");
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(fs::File::create(&path).map_err(io_err(&path))?);
    match map {
        Some(m) => {
            let mut header = vec!["user".to_string()];
            header.extend(m.users.iter().map(|u| u.to_string()));
            w.write_record(&header)?;
            for (u, row) in m.users.iter().zip(&m.matrix) {
                let mut rec = vec![u.to_string()];
                rec.extend(row.iter().map(|v| format!("{v:?}")));
                w.write_record(&rec)?;
            }
        }
        None => {
            w.write_record(["user"])?;
            w.write_record(["note: no cluster with two or more users"])?;
        }
    }
    w.flush().map_err(io_err(&path))?;
    Ok(())
}
