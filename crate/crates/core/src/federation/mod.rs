//! Partitioning across sites and the one-shot gradient round.
//!
//! The hub (site 1) broadcasts `Θ̂₀`, every other site answers with its local
//! gradient at `Θ̂₀`, and the hub forms the correction
//! `∇L(Θ̂₀) − ∇L_1(Θ̂₀)` from the sample-weighted mean of all gradients.
//! Nothing else is exchanged for the rest of the fit.

pub mod transport;
pub mod wire;

use std::collections::BTreeSet;
use std::ops::Range;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use nalgebra::DMatrix;

use crate::data::BinaryDataset;
use crate::error::{Error, ProtocolError, Result};
use crate::ising::{ParameterMatrix, PseudoLikelihood};
pub use transport::{round_deadline, HubTransport, SiteTransport};
pub use wire::{decode_message, encode_message, BroadcastMessage, GradientMessage, Message};

pub const HUB_SITE_ID: u32 = 1;

/// Contiguous split of `0..n` over `m` sites; site `i` (1-based) holds
/// `blocks[i − 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    n: usize,
    blocks: Vec<Range<usize>>,
}

impl Partition {
    /// Equal split with the remainder going to the lowest-index sites.
    pub fn equal(n: usize, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if m == 0 || m > n {
            return Err(Error::invalid(format!("site count {m} must lie in 1..={n}")));
        }
        let (base, extra) = (n / m, n % m);
        let mut blocks = Vec::with_capacity(m);
        let mut start = 0;
        for i in 0..m {
            let len = base + usize::from(i < extra);
            blocks.push(start..start + len);
            start += len;
        }
        Ok(Partition { n, blocks })
    }

    pub fn m(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn hub(&self) -> u32 {
        HUB_SITE_ID
    }

    pub fn site_ids(&self) -> impl Iterator<Item = u32> {
        1..=self.blocks.len() as u32
    }

    pub fn block(&self, site: u32) -> Result<Range<usize>> {
        self.blocks
            .get((site as usize).wrapping_sub(1))
            .cloned()
            .ok_or(Error::IndexOutOfRange {
                index: site as usize,
                dim: self.blocks.len(),
            })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.len()).collect()
    }

    /// Sample indices held by `site`.
    pub fn assignment(&self, site: u32) -> Result<Vec<usize>> {
        self.block(site).map(|r| r.collect())
    }

    pub fn local_data(&self, data: &BinaryDataset, site: u32) -> Result<BinaryDataset> {
        if data.n() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: data.n(),
            });
        }
        data.slice(self.block(site)?)
    }
}

/// `m = max(1, ⌊n^x⌋)`, capped at `n`.
///
/// `n^x` is nudged up by a relative 1e-12 before flooring so that exact
/// integer powers such as `1000^{1/3}` are not lost to rounding.
pub fn site_count(n: usize, x: f64) -> usize {
    let raw = (n as f64).powf(x);
    ((raw * (1.0 + 1e-12)).floor() as usize).clamp(1, n.max(1))
}

pub fn make_partition(n: usize, x: f64) -> Result<Partition> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!("distributedness x={x} must lie in [0, 1]")));
    }
    Partition::equal(n, site_count(n, x))
}

/// Local gradient message of one site at `Θ̂₀`.
pub fn site_gradient(
    local_data: &BinaryDataset,
    theta0: &ParameterMatrix,
    site_id: u32,
    round_id: u32,
) -> Result<GradientMessage> {
    if local_data.p() != theta0.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta0.dim(),
            actual: local_data.p(),
        });
    }
    let g = PseudoLikelihood::new(local_data).gradient(theta0);
    Ok(GradientMessage::new(site_id, round_id, local_data.n() as u64, g))
}

/// Sample-weighted mean `Σ (n_i/N)·∇L_i`, accumulated in site order.
pub fn aggregate(messages: &[GradientMessage]) -> Result<DMatrix<f64>> {
    let first = messages.first().ok_or(ProtocolError::Empty)?;
    let (p, round) = (first.p(), first.round_id());
    let mut seen = BTreeSet::new();
    for m in messages {
        if m.round_id() != round {
            return Err(ProtocolError::RoundMismatch {
                expected: round,
                got: m.round_id(),
            }
            .into());
        }
        if m.p() != p {
            return Err(ProtocolError::DimensionMismatch {
                expected: p,
                got: m.p(),
            }
            .into());
        }
        if !m.verify() {
            return Err(ProtocolError::ChecksumFailure { site: m.site_id() }.into());
        }
        if !seen.insert(m.site_id()) {
            return Err(ProtocolError::DuplicateSite(m.site_id()).into());
        }
        if m.n_i() == 0 {
            return Err(Error::invalid(format!("site {} reports zero samples", m.site_id())));
        }
    }
    if !seen.contains(&HUB_SITE_ID) {
        return Err(ProtocolError::MissingHub.into());
    }
    let mut ordered: Vec<&GradientMessage> = messages.iter().collect();
    ordered.sort_by_key(|m| m.site_id());
    let total: u64 = ordered.iter().map(|m| m.n_i()).sum();
    let mut out = DMatrix::zeros(p, p);
    for m in ordered {
        out += m.gradient() * (m.n_i() as f64 / total as f64);
    }
    Ok(out)
}

pub fn make_correction(global_grad: &DMatrix<f64>, hub_grad: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if global_grad.shape() != hub_grad.shape() {
        return Err(Error::DimensionMismatch {
            expected: global_grad.nrows(),
            actual: hub_grad.nrows(),
        });
    }
    Ok(global_grad - hub_grad)
}

/// Message counts observed by the hub during one round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundStats {
    pub broadcasts_sent: usize,
    pub gradients_received: usize,
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub correction: DMatrix<f64>,
    pub global_grad: DMatrix<f64>,
    pub hub_grad: DMatrix<f64>,
    pub stats: RoundStats,
}

/// Hub side of the round: broadcast, compute the local gradient, collect
/// one gradient from each of `remote_sites`, aggregate.
pub fn hub_round(
    transport: &mut dyn HubTransport,
    theta0: &ParameterMatrix,
    hub_data: &BinaryDataset,
    remote_sites: &BTreeSet<u32>,
    round: u32,
    deadline: Duration,
) -> Result<RoundOutcome> {
    if remote_sites.contains(&HUB_SITE_ID) {
        return Err(ProtocolError::DuplicateSite(HUB_SITE_ID).into());
    }
    let broadcast = BroadcastMessage::new(round, theta0);
    transport.broadcast(&broadcast)?;
    let own = site_gradient(hub_data, theta0, HUB_SITE_ID, round)?;
    let received = transport.collect(remote_sites, round, deadline)?;
    for g in &received {
        if g.p() != theta0.dim() {
            return Err(ProtocolError::DimensionMismatch {
                expected: theta0.dim(),
                got: g.p(),
            }
            .into());
        }
    }
    let stats = RoundStats {
        broadcasts_sent: 1,
        gradients_received: received.len(),
    };
    let hub_grad = own.gradient().clone();
    let mut all = received;
    all.push(own);
    let global_grad = aggregate(&all)?;
    let correction = make_correction(&global_grad, &hub_grad)?;
    Ok(RoundOutcome {
        correction,
        global_grad,
        hub_grad,
        stats,
    })
}

/// Site side of the round: wait for `Θ̂₀`, answer with the local gradient.
pub fn site_round(
    transport: &mut dyn SiteTransport,
    site_id: u32,
    local_data: &BinaryDataset,
    round: u32,
    deadline: Duration,
) -> Result<GradientMessage> {
    let b = transport.receive_broadcast(round, deadline)?;
    if b.p() != local_data.p() {
        return Err(ProtocolError::DimensionMismatch {
            expected: local_data.p(),
            got: b.p(),
        }
        .into());
    }
    let msg = site_gradient(local_data, &b.theta0()?, site_id, round)?;
    transport.send_gradient(&msg)?;
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportKind {
    InProcess,
    Directory(PathBuf),
    /// Loopback TCP on the given port (0 picks a free one).
    Tcp(u16),
}

/// One complete round with every site simulated on its own thread.
pub fn run_round(
    kind: &TransportKind,
    partition: &Partition,
    theta0: &ParameterMatrix,
    full_data: &BinaryDataset,
    round: u32,
    deadline: Duration,
) -> Result<RoundOutcome> {
    let hub_data = partition.local_data(full_data, HUB_SITE_ID)?;
    let remote: BTreeSet<u32> = partition.site_ids().filter(|&s| s != HUB_SITE_ID).collect();
    let locals: Vec<(u32, BinaryDataset)> = remote
        .iter()
        .map(|&s| partition.local_data(full_data, s).map(|d| (s, d)))
        .collect::<Result<_>>()?;

    let (mut hub, sites): (Box<dyn HubTransport + Send>, Vec<Box<dyn SiteTransport + Send>>) =
        match kind {
            TransportKind::InProcess => {
                let ids: Vec<u32> = remote.iter().copied().collect();
                let (h, s) = transport::in_process(&ids);
                (Box::new(h), s.into_iter().map(|t| Box::new(t) as _).collect())
            }
            TransportKind::Directory(dir) => {
                let h = transport::DirectoryHub::new(dir)?;
                let s = remote
                    .iter()
                    .map(|_| Box::new(transport::DirectorySite::new(dir)) as _)
                    .collect();
                (Box::new(h), s)
            }
            TransportKind::Tcp(port) => {
                let h = transport::TcpHub::bind(("127.0.0.1", *port))?;
                let addr = h.local_addr()?.to_string();
                let s = remote
                    .iter()
                    .map(|_| Box::new(transport::TcpSite::new(addr.clone())) as _)
                    .collect();
                (Box::new(h), s)
            }
        };

    thread::scope(|scope| {
        let handles: Vec<_> = sites
            .into_iter()
            .zip(&locals)
            .map(|(mut t, (site, data))| {
                let site = *site;
                scope.spawn(move || site_round(t.as_mut(), site, data, round, deadline).map_err(|e| (site, e)))
            })
            .collect();
        let outcome = hub_round(hub.as_mut(), theta0, &hub_data, &remote, round, deadline);
        drop(hub);
        let mut site_err = None;
        for h in handles {
            if let Err((site, e)) = h.join().expect("site thread panicked") {
                site_err.get_or_insert(ProtocolError::SiteFailed {
                    site,
                    reason: e.to_string(),
                });
            }
        }
        match (outcome, site_err) {
            (Ok(o), _) => Ok(o),
            (Err(_), Some(e)) => Err(e.into()),
            (Err(e), None) => Err(e),
        }
    })
}
