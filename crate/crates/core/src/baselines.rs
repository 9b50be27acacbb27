//! Convex comparison methods: a full-matrix gradient step followed by a
//! spectral projection, driven either by the pooled gradient or by the
//! hub's surrogate gradient `∇L_1(Θ) + (∇L(Θ̂₀) − ∇L_1(Θ̂₀))`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ising::{ParameterMatrix, PseudoLikelihood};
use crate::optimize::{check_correction, FitResult, OptimizerConfig, DIVERGENCE_LIMIT};
use crate::spectral::{apply_spectral, factorize_rank_d, SpectralOp};

/// Threshold used by the thresholding baselines in simulations.
pub const DEFAULT_TAU: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineMethod {
    SvSoft(f64),
    SvHard(f64),
    SvTopd(usize),
    PsdCvx,
}

impl BaselineMethod {
    pub fn spectral_op(&self) -> SpectralOp {
        match *self {
            BaselineMethod::SvSoft(t) => SpectralOp::Soft(t),
            BaselineMethod::SvHard(t) => SpectralOp::Hard(t),
            BaselineMethod::SvTopd(d) => SpectralOp::TopD(d),
            BaselineMethod::PsdCvx => SpectralOp::PsdProject,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::SvSoft(_) => "sv-soft",
            BaselineMethod::SvHard(_) => "sv-hard",
            BaselineMethod::SvTopd(_) => "sv-topd",
            BaselineMethod::PsdCvx => "psd-cvx",
        }
    }
}

/// Every method the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodKind {
    Daniel,
    SvSoft,
    SvHard,
    SvTopd,
    PsdCvx,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] = [
        MethodKind::Daniel,
        MethodKind::SvSoft,
        MethodKind::SvHard,
        MethodKind::SvTopd,
        MethodKind::PsdCvx,
    ];

    /// Stable numeric id, used in seed derivation.
    pub fn id(&self) -> u64 {
        *self as u64
    }

    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Daniel => "daniel",
            MethodKind::SvSoft => "sv-soft",
            MethodKind::SvHard => "sv-hard",
            MethodKind::SvTopd => "sv-topd",
            MethodKind::PsdCvx => "psd-cvx",
        }
    }

    /// The baseline with its simulation parameters, or `None` for DANIEL.
    pub fn baseline(&self, d: usize, tau: f64) -> Option<BaselineMethod> {
        match self {
            MethodKind::Daniel => None,
            MethodKind::SvSoft => Some(BaselineMethod::SvSoft(tau)),
            MethodKind::SvHard => Some(BaselineMethod::SvHard(tau)),
            MethodKind::SvTopd => Some(BaselineMethod::SvTopd(d)),
            MethodKind::PsdCvx => Some(BaselineMethod::PsdCvx),
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == norm || m.name().replace('-', "") == norm)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

impl serde::Serialize for MethodKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for MethodKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Where the gradient of each step comes from.
#[derive(Debug, Clone, Copy)]
pub enum GradientSource<'a> {
    Centralized(&'a PseudoLikelihood),
    Surrogate {
        hub: &'a PseudoLikelihood,
        correction: &'a DMatrix<f64>,
    },
}

impl GradientSource<'_> {
    pub fn p(&self) -> usize {
        match self {
            GradientSource::Centralized(pl) => pl.p(),
            GradientSource::Surrogate { hub, .. } => hub.p(),
        }
    }

    pub fn gradient(&self, theta: &ParameterMatrix) -> DMatrix<f64> {
        match self {
            GradientSource::Centralized(pl) => pl.gradient(theta),
            GradientSource::Surrogate { hub, correction } => hub.gradient(theta) + *correction,
        }
    }

    fn validate(&self) -> Result<()> {
        if let GradientSource::Surrogate { hub, correction } = self {
            check_correction(correction, hub.p())?;
        }
        Ok(())
    }
}

/// `Θ ← op(Θ − η∇)`.
pub fn baseline_step(
    theta_prev: &ParameterMatrix,
    src: &GradientSource<'_>,
    method: BaselineMethod,
    eta: f64,
) -> Result<ParameterMatrix> {
    if theta_prev.dim() != src.p() {
        return Err(Error::DimensionMismatch {
            expected: src.p(),
            actual: theta_prev.dim(),
        });
    }
    src.validate()?;
    let step = theta_prev.as_matrix() - src.gradient(theta_prev) * eta;
    ParameterMatrix::new(apply_spectral(&step, method.spectral_op())?)
}

/// Iterate [`baseline_step`] from zero under the shared stopping rule.
/// The returned factors are the balanced rank-`d` factorization of the
/// final iterate.
pub fn baseline_fit(
    src: &GradientSource<'_>,
    method: BaselineMethod,
    cfg: &OptimizerConfig,
    d: usize,
) -> Result<FitResult> {
    cfg.validate()?;
    src.validate()?;
    method.spectral_op().validate(src.p())?;
    let start = Instant::now();
    let mut theta = ParameterMatrix::zeros(src.p());
    let mut trace = Vec::new();
    for gamma in 1..=cfg.gamma_max {
        let next = baseline_step(&theta, src, method, cfg.eta).map_err(|e| match e {
            Error::NonFinite => Error::Divergence { iteration: gamma },
            other => other,
        })?;
        if next.as_matrix().amax() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence { iteration: gamma });
        }
        let delta = (next.as_matrix() - theta.as_matrix()).norm();
        trace.push(delta);
        theta = next;
        if delta < cfg.tol {
            break;
        }
    }
    let (factors, _) = factorize_rank_d(&theta, d)?;
    Ok(FitResult {
        iterations_used: trace.len(),
        factors,
        theta_hat: theta,
        trace,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
