//! End-to-end fitting pipeline, experiment grids and result files.

pub mod config;
pub mod grid;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::baselines::{baseline_fit, GradientSource, MethodKind};
use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::federation::{run_round, round_deadline, Partition, RoundStats, TransportKind, HUB_SITE_ID};
use crate::ising::{ParameterMatrix, PseudoLikelihood};
use crate::optimize::{convex_init_with, daniel_fit_with, symmetric_init_from, FitResult, OptimizerConfig};
use crate::sampling::{gibbs_sample, make_ground_truth, GroundTruth};
use crate::seed::hash64;

pub use config::ExperimentConfig;
pub use grid::{run_cell, run_grid, summarize, CellSummary, ResultRow};

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub fit: FitResult,
    pub m: usize,
    pub correction: DMatrix<f64>,
    pub stats: RoundStats,
    /// Initialization, communication round and fit, in milliseconds.
    pub wall_time_ms: f64,
}

/// Fit `method` on `data` split according to `partition`.
///
/// The hub computes the convex init on its own block, factorizes it to
/// `Θ̂₀ = U0V0ᵀ`, runs the one-shot round over `transport` when there is
/// more than one site, then fits on the hub's surrogate loss. Baselines
/// start from zero and only need `Θ̂₀` for the correction, so with a single
/// site they skip the initialization.
pub fn fit_partitioned(
    data: &BinaryDataset,
    partition: &Partition,
    method: MethodKind,
    d: usize,
    cfg: &OptimizerConfig,
    tau: f64,
    transport: &TransportKind,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    let p = data.p();
    let start = Instant::now();
    let hub_data = partition.local_data(data, HUB_SITE_ID)?;
    let hub = PseudoLikelihood::new(&hub_data);
    let m = partition.m();
    let needs_init = method == MethodKind::Daniel || m > 1;
    let init = if needs_init {
        let full = convex_init_with(&hub, cfg)?;
        Some(symmetric_init_from(&full, d)?)
    } else {
        None
    };
    let (correction, stats) = match (&init, m) {
        (Some(f0), m) if m > 1 => {
            let theta0 = ParameterMatrix::new(f0.product())?;
            let out = run_round(transport, partition, &theta0, data, 0, round_deadline())?;
            (out.correction, out.stats)
        }
        _ => (DMatrix::zeros(p, p), RoundStats::default()),
    };
    let fit = match method.baseline(d, tau) {
        None => {
            let f0 = init.expect("DANIEL always initializes");
            daniel_fit_with(&hub, &correction, &f0.u, &f0.v, cfg)?
        }
        Some(b) => baseline_fit(
            &GradientSource::Surrogate {
                hub: &hub,
                correction: &correction,
            },
            b,
            cfg,
            d,
        )?,
    };
    Ok(PipelineOutput {
        fit,
        m,
        correction,
        stats,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

const THETA_MAGIC: &[u8; 4] = b"DTH1";

/// `"DTH1"`, u32 `p`, then `p²` little-endian f64 values row-major.
pub fn write_matrix(m: &DMatrix<f64>, w: impl Write) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    let mut w = BufWriter::new(w);
    let p = m.nrows();
    w.write_all(THETA_MAGIC)?;
    w.write_all(&(p as u32).to_le_bytes())?;
    for r in 0..p {
        for c in 0..p {
            w.write_all(&m[(r, c)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(r: impl Read) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(r);
    let mut head = [0u8; 8];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("theta file shorter than its header".into()))?;
    if &head[..4] != THETA_MAGIC {
        return Err(Error::Format(format!("bad theta magic {:?}", &head[..4])));
    }
    let p = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() != 8 * p * p {
        return Err(Error::Format(format!(
            "theta payload has {} bytes, expected {}",
            buf.len(),
            8 * p * p
        )));
    }
    let values = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(DMatrix::from_row_iterator(p, p, values))
}

pub fn write_theta(theta: &ParameterMatrix, w: impl Write) -> Result<()> {
    write_matrix(theta.as_matrix(), w)
}

pub fn read_theta(r: impl Read) -> Result<ParameterMatrix> {
    ParameterMatrix::new(read_matrix(r)?)
}

pub fn save_matrix(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    write_matrix(m, File::create(path)?)
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(File::open(path)?)
}

pub fn save_theta(theta: &ParameterMatrix, path: &Path) -> Result<()> {
    write_theta(theta, File::create(path)?)
}

pub fn load_theta(path: &Path) -> Result<ParameterMatrix> {
    read_theta(File::open(path)?)
}

/// Ground truth and `n` Gibbs samples for a single seed, with independent
/// derived seeds for the two stages.
pub fn simulate(p: usize, d: usize, n: usize, burn_in: usize, seed: u64) -> Result<(GroundTruth, BinaryDataset)> {
    let truth = make_ground_truth(p, d, hash64(&[seed, 1]))?;
    let data = gibbs_sample(&truth.theta_star, n, burn_in, hash64(&[seed, 2]))?;
    Ok((truth, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::make_partition;
    use crate::optimize::centralized_fit;

    #[test]
    fn theta_file_round_trip() {
        let t = ParameterMatrix::new(make_ground_truth(6, 2, 1).unwrap().theta_star.into_inner()).unwrap();
        let mut buf = Vec::new();
        write_theta(&t, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * 36);
        assert_eq!(&buf[..4], b"DTH1");
        assert_eq!(read_theta(&buf[..]).unwrap(), t);
        assert!(read_theta(&buf[..buf.len() - 1]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_theta(&bad[..]).is_err());
    }

    #[test]
    fn single_site_daniel_is_centralized() {
        let gt = make_ground_truth(10, 1, 4).unwrap();
        let data = gibbs_sample(&gt.theta_star, 300, 50, 4).unwrap();
        let part = make_partition(300, 0.0).unwrap();
        let cfg = OptimizerConfig::default();
        let out = fit_partitioned(&data, &part, MethodKind::Daniel, 1, &cfg, 1e-3, &TransportKind::InProcess).unwrap();
        assert_eq!(out.m, 1);
        assert_eq!(out.correction, DMatrix::zeros(10, 10));
        let f0 = symmetric_init_from(&convex_init_with(&PseudoLikelihood::new(&data), &cfg).unwrap(), 1).unwrap();
        let central = centralized_fit(&data, &f0.u, &f0.v, &cfg).unwrap();
        assert_eq!(out.fit.factors, central.factors);
    }

    #[test]
    fn distributed_pipeline_runs_every_method() {
        let gt = make_ground_truth(10, 1, 5).unwrap();
        let data = gibbs_sample(&gt.theta_star, 400, 50, 5).unwrap();
        let part = make_partition(400, 0.3).unwrap();
        for method in MethodKind::ALL {
            let out = fit_partitioned(&data, &part, method, 1, &OptimizerConfig::default(), 1e-3, &TransportKind::InProcess).unwrap();
            assert_eq!(out.m, part.m());
            assert_eq!(out.stats.gradients_received, part.m() - 1);
            assert!(out.correction.amax() > 0.0);
            let theta = out.fit.theta_hat.as_matrix();
            assert!((theta - theta.transpose()).amax() < 1e-10);
        }
    }
}
