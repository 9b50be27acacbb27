//! Grid execution and the CSV result schema.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_partitioned, ExperimentConfig};
use crate::baselines::MethodKind;
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::evaluate::{frob_error, subspace_error};
use crate::federation::{make_partition, TransportKind};
use crate::sampling::{gibbs_sample, make_ground_truth, GroundTruth};
use crate::seed::hash64;

pub const CSV_HEADER: &str = "method,p,d,n,x,m,rep,frob_err,subspace_err,iterations,wall_time_ms,seed";

const TAG_TRUTH: u64 = 0x7472_7574_68; // "truth"
const TAG_SAMPLE: u64 = 0x7361_6d70_6c65; // "sample"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: MethodKind,
    pub p: usize,
    pub d: usize,
    pub n: usize,
    pub x: f64,
    pub m: usize,
    pub rep: usize,
    /// NaN when the fit failed numerically.
    pub frob_err: f64,
    pub subspace_err: f64,
    pub iterations: usize,
    pub wall_time_ms: f64,
    pub seed: u64,
    /// Failure description; not part of the CSV.
    #[serde(skip)]
    pub error: Option<String>,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.error.is_some() || !self.frob_err.is_finite()
    }
}

/// Seed identifying one cell of the grid.
pub fn cell_seed(base: u64, p: usize, n: usize, x: f64, method: MethodKind, rep: usize) -> u64 {
    hash64(&[base, p as u64, n as u64, x.to_bits(), method.id(), rep as u64])
}

/// Seeds of the ground truth and of the samples for a cell.
///
/// Paired grids derive both from the coordinates that define the data —
/// `(p, d, rep)` for the truth and additionally `n` for the samples — so all
/// methods and distributedness levels of a repetition see the same data.
/// Unpaired grids derive both from the cell seed.
pub fn data_seeds(cfg: &ExperimentConfig, p: usize, d: usize, n: usize, cell: u64, rep: usize) -> (u64, u64) {
    if cfg.paired {
        let b = cfg.base_seed;
        (
            hash64(&[TAG_TRUTH, b, p as u64, d as u64, rep as u64]),
            hash64(&[TAG_SAMPLE, b, p as u64, d as u64, n as u64, rep as u64]),
        )
    } else {
        (hash64(&[TAG_TRUTH, cell]), hash64(&[TAG_SAMPLE, cell]))
    }
}

fn simulate(cfg: &ExperimentConfig, p: usize, d: usize, n: usize, seeds: (u64, u64)) -> Result<(GroundTruth, BinaryDataset)> {
    let truth = make_ground_truth(p, d, seeds.0)?;
    let data = gibbs_sample(&truth.theta_star, n, cfg.burn_in, seeds.1)?;
    Ok((truth, data))
}

/// One cell on given data. Numerical failures become a row with NaN
/// metrics and the error recorded; anything else is returned as an error.
fn fit_cell(
    cfg: &ExperimentConfig,
    truth: &GroundTruth,
    data: &BinaryDataset,
    x: f64,
    method: MethodKind,
    rep: usize,
) -> Result<ResultRow> {
    let (p, n) = (data.p(), data.n());
    let d = cfg.rank_for(p);
    let partition = make_partition(n, x)?;
    let seed = cell_seed(cfg.base_seed, p, n, x, method, rep);
    let mut row = ResultRow {
        method,
        p,
        d,
        n,
        x,
        m: partition.m(),
        rep,
        frob_err: f64::NAN,
        subspace_err: f64::NAN,
        iterations: 0,
        wall_time_ms: f64::NAN,
        seed,
        error: None,
    };
    match fit_partitioned(data, &partition, method, d, &cfg.optimizer, cfg.tau, &TransportKind::InProcess) {
        Ok(out) => {
            row.frob_err = frob_error(&out.fit.theta_hat, &truth.theta_star)?;
            row.subspace_err = subspace_error(&out.fit.factors, &truth.u_star)?;
            row.iterations = out.fit.iterations_used;
            row.wall_time_ms = out.wall_time_ms;
        }
        Err(e) if e.is_numeric() => {
            warn!("{method} p={p} n={n} x={x} rep={rep}: {e}");
            if let Error::Divergence { iteration } = e {
                row.iterations = iteration;
            }
            row.error = Some(e.to_string());
        }
        Err(e) => return Err(e),
    }
    Ok(row)
}

/// Simulate and fit a single grid cell.
pub fn run_cell(cfg: &ExperimentConfig, p: usize, n: usize, x: f64, method: MethodKind, rep: usize) -> Result<ResultRow> {
    let d = cfg.rank_for(p);
    let cell = cell_seed(cfg.base_seed, p, n, x, method, rep);
    let (truth, data) = simulate(cfg, p, d, n, data_seeds(cfg, p, d, n, cell, rep))?;
    fit_cell(cfg, &truth, &data, x, method, rep)
}

/// Cells sharing one simulated dataset.
struct Task {
    p: usize,
    n: usize,
    rep: usize,
    seeds: (u64, u64),
    cells: Vec<(f64, MethodKind)>,
}

fn plan(cfg: &ExperimentConfig) -> Vec<Task> {
    let mut tasks: BTreeMap<(usize, usize, usize, u64, u64), Task> = BTreeMap::new();
    for &p in &cfg.p_list {
        let d = cfg.rank_for(p);
        for &n in &cfg.n_list {
            for rep in 0..cfg.reps {
                for &x in &cfg.x_list {
                    for &method in &cfg.methods {
                        let cell = cell_seed(cfg.base_seed, p, n, x, method, rep);
                        let seeds = data_seeds(cfg, p, d, n, cell, rep);
                        tasks
                            .entry((p, n, rep, seeds.0, seeds.1))
                            .or_insert_with(|| Task { p, n, rep, seeds, cells: vec![] })
                            .cells
                            .push((x, method));
                    }
                }
            }
        }
    }
    tasks.into_values().collect()
}

/// Run every cell × repetition, in parallel on `jobs` threads (all cores if
/// `None`). Rows come back sorted by `(method, p, n, x, rep)`; when `out` is
/// given they are also written there as CSV, and a failed run leaves no file
/// behind.
pub fn run_grid(cfg: &ExperimentConfig, jobs: Option<usize>, out: Option<&Path>) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let tasks = plan(cfg);
    info!("running {} cells over {} datasets", cfg.cell_count(), tasks.len());
    let work = || -> Result<Vec<ResultRow>> {
        let chunks: Vec<Vec<ResultRow>> = tasks
            .par_iter()
            .map(|t| {
                let d = cfg.rank_for(t.p);
                let (truth, data) = simulate(cfg, t.p, d, t.n, t.seeds)?;
                t.cells
                    .iter()
                    .map(|&(x, method)| fit_cell(cfg, &truth, &data, x, method, t.rep))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    };
    let mut rows = match jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    rows.sort_by(|a, b| {
        (a.method, a.p, a.n)
            .cmp(&(b.method, b.p, b.n))
            .then(a.x.total_cmp(&b.x))
            .then(a.rep.cmp(&b.rep))
    });
    if let Some(path) = out {
        write_csv(&rows, path)?;
    }
    Ok(rows)
}

/// Write rows to `path` via a temporary sibling; on failure nothing remains.
pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    tmp.as_mut_os_string().push(".partial");
    let result = (|| -> Result<()> {
        let mut w = csv::Writer::from_path(&tmp).map_err(csv_err)?;
        if rows.is_empty() {
            w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
        }
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    })();
    match result.and_then(|_| fs::rename(&tmp, path).map_err(Error::from)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Per-cell aggregate over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub method: MethodKind,
    pub p: usize,
    pub n: usize,
    pub x: f64,
    pub m: usize,
    pub reps: usize,
    pub failures: usize,
    pub mean_frob: f64,
    pub sd_frob: f64,
    pub mean_subspace: f64,
    pub mean_iterations: f64,
    pub mean_time_ms: f64,
}

/// Means and standard deviations over the successful repetitions of each
/// `(method, p, n, x)` cell, in row order.
pub fn summarize(rows: &[ResultRow]) -> Vec<CellSummary> {
    let mut groups: Vec<((MethodKind, usize, usize, u64), Vec<&ResultRow>)> = Vec::new();
    for r in rows {
        let key = (r.method, r.p, r.n, r.x.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, p, n, xb), rs)| {
            let ok: Vec<&&ResultRow> = rs.iter().filter(|r| !r.failed()).collect();
            let k = ok.len() as f64;
            let mean = |f: &dyn Fn(&ResultRow) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / k;
            let mean_frob = mean(&|r| r.frob_err);
            let var = ok.iter().map(|r| (r.frob_err - mean_frob).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            CellSummary {
                method,
                p,
                n,
                x: f64::from_bits(xb),
                m: rs[0].m,
                reps: rs.len(),
                failures: rs.len() - ok.len(),
                mean_frob,
                sd_frob: var.sqrt(),
                mean_subspace: mean(&|r| r.subspace_err),
                mean_iterations: mean(&|r| r.iterations as f64),
                mean_time_ms: mean(&|r| r.wall_time_ms),
            }
        })
        .collect()
}
