//! Convex nuclear-norm initialization and bi-factored gradient descent on the
//! surrogate loss
//!
//! ```text
//! L̃(U, V) = L_1(UVᵀ) + ⟨∇L(Θ̂₀) − ∇L_1(Θ̂₀), UVᵀ⟩ + ¼‖UᵀU − VᵀV‖²_F
//! ```
//!
//! where `L_1` is the hub's pseudo-likelihood loss and the middle term is the
//! one-shot gradient correction collected from the other sites.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::ising::{FactorPair, ParameterMatrix, PseudoLikelihood};
use crate::spectral::{apply_spectral, factorize_rank_d, SpectralOp};

/// Magnitude beyond which an iterate counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub gamma_max: usize,
    pub tol: f64,
    /// Explicit nuclear penalty; when absent `λ = lambda_c0·√(p ln p / n_hub)`.
    pub lambda: Option<f64>,
    pub lambda_c0: f64,
    pub init_steps: usize,
    /// Frobenius-ball radius of the convex init; infinite skips the projection.
    pub ball_radius: f64,
    /// Target rank; `None` lets the caller pick (the harness uses `p/10`).
    pub d: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            eta: 0.1,
            gamma_max: 50,
            tol: 1e-5,
            lambda: None,
            lambda_c0: 1.0,
            init_steps: 5,
            ball_radius: f64::INFINITY,
            d: None,
        }
    }
}

impl OptimizerConfig {
    /// Settings for high-dimensional runs: more, smaller steps.
    pub fn large_p() -> Self {
        OptimizerConfig {
            eta: 0.01,
            gamma_max: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if self.gamma_max == 0 {
            return Err(Error::invalid("gamma_max must be ≥ 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::invalid(format!("tol must be ≥ 0, got {}", self.tol)));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::invalid(format!("lambda must be ≥ 0, got {l}")));
            }
        }
        if !(self.lambda_c0 >= 0.0 && self.lambda_c0.is_finite()) {
            return Err(Error::invalid("lambda_c0 must be ≥ 0"));
        }
        if !(self.ball_radius > 0.0) {
            return Err(Error::invalid("ball_radius must be > 0"));
        }
        if self.d == Some(0) {
            return Err(Error::invalid("d must be ≥ 1"));
        }
        Ok(())
    }

    /// Nuclear penalty for a hub holding `n_hub` samples in dimension `p`.
    pub fn lambda_for(&self, p: usize, n_hub: usize) -> f64 {
        self.lambda.unwrap_or_else(|| {
            let p = p as f64;
            self.lambda_c0 * (p * p.ln() / n_hub as f64).sqrt()
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub factors: FactorPair,
    pub theta_hat: ParameterMatrix,
    pub iterations_used: usize,
    /// `δ_γ = ‖Θ_γ − Θ_{γ−1}‖_F` per iteration.
    pub trace: Vec<f64>,
    pub wall_time_ms: f64,
}

/// Proximal gradient on the nuclear-regularized hub loss, from zero.
pub fn convex_init(hub_data: &BinaryDataset, cfg: &OptimizerConfig) -> Result<ParameterMatrix> {
    convex_init_with(&PseudoLikelihood::new(hub_data), cfg)
}

pub fn convex_init_with(hub: &PseudoLikelihood, cfg: &OptimizerConfig) -> Result<ParameterMatrix> {
    cfg.validate()?;
    let p = hub.p();
    let shrink = cfg.eta * cfg.lambda_for(p, hub.n());
    let mut m = ParameterMatrix::zeros(p);
    for _ in 0..cfg.init_steps {
        let step = m.as_matrix() - hub.gradient(&m) * cfg.eta;
        let mut next = apply_spectral(&step, SpectralOp::Soft(shrink))?;
        let norm = next.norm();
        if cfg.ball_radius.is_finite() && norm > cfg.ball_radius {
            next *= cfg.ball_radius / norm;
        }
        m = ParameterMatrix::new(next)?;
    }
    Ok(m)
}

/// Balanced rank-`d` factors of the convex init (`V0 = U0·D0`).
pub fn symmetric_init_from(theta0_full: &ParameterMatrix, d: usize) -> Result<FactorPair> {
    factorize_rank_d(theta0_full, d).map(|(f, _)| f)
}

/// Gradient of `¼‖UᵀU − VᵀV‖²_F` with respect to `U` and `V`.
pub fn balance_gradient(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_pair(u, v)?;
    let pi = u.tr_mul(u) - v.tr_mul(v);
    Ok((u * &pi, -(v * &pi)))
}

/// `∇_Θ` of `L_1(Θ) + ⟨correction, Θ⟩`.
pub fn surrogate_gradient_theta(
    theta: &ParameterMatrix,
    hub_data: &BinaryDataset,
    correction: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let p = theta.dim();
    if hub_data.p() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: hub_data.p(),
        });
    }
    check_correction(correction, p)?;
    Ok(PseudoLikelihood::new(hub_data).gradient(theta) + correction)
}

/// Value of the surrogate objective `L̃(U, V)`.
pub fn surrogate_objective(
    hub: &PseudoLikelihood,
    correction: &DMatrix<f64>,
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<f64> {
    check_pair(u, v)?;
    let prod = u * v.transpose();
    let theta = ParameterMatrix::new(prod.clone())?;
    let pi = u.tr_mul(u) - v.tr_mul(v);
    Ok(hub.loss(&theta) + correction.dot(&prod) + 0.25 * pi.norm_squared())
}

/// Algorithm 1's hub loop on the surrogate loss.
pub fn daniel_fit(
    hub_data: &BinaryDataset,
    correction: &DMatrix<f64>,
    u0: &DMatrix<f64>,
    v0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    daniel_fit_with(&PseudoLikelihood::new(hub_data), correction, u0, v0, cfg)
}

pub fn daniel_fit_with(
    hub: &PseudoLikelihood,
    correction: &DMatrix<f64>,
    u0: &DMatrix<f64>,
    v0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_pair(u0, v0)?;
    check_correction(correction, u0.nrows())?;
    if hub.p() != u0.nrows() {
        return Err(Error::DimensionMismatch {
            expected: hub.p(),
            actual: u0.nrows(),
        });
    }
    let start = Instant::now();
    let eta = cfg.eta;
    let (mut u, mut v) = (u0.clone(), v0.clone());
    let mut prev = &u * v.transpose();
    let mut trace = Vec::new();
    for gamma in 1..=cfg.gamma_max {
        let g = hub.gradient(&ParameterMatrix::new(prev.clone())?) + correction;
        let pi = u.tr_mul(&u) - v.tr_mul(&v);
        let u_next = &u - (&g * &v + &u * &pi) * eta;
        let v_next = &v - (g.tr_mul(&u) - &v * &pi) * eta;
        u = u_next;
        v = v_next;
        check_divergence(&u, &v, gamma)?;
        let cur = &u * v.transpose();
        let delta = (&cur - &prev).norm();
        trace.push(delta);
        prev = cur;
        if delta < cfg.tol {
            break;
        }
    }
    finish(u, v, prev, trace, start)
}

/// Eq. (9)'s centralized bi-factored estimator: the same descent on
/// `L(UVᵀ) + ¼‖UᵀU − VᵀV‖²_F` over the pooled data with no correction term.
pub fn centralized_fit(
    data: &BinaryDataset,
    u0: &DMatrix<f64>,
    v0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    check_pair(u0, v0)?;
    let pl = PseudoLikelihood::new(data);
    if pl.p() != u0.nrows() {
        return Err(Error::DimensionMismatch {
            expected: pl.p(),
            actual: u0.nrows(),
        });
    }
    let start = Instant::now();
    let (mut u, mut v) = (u0.clone(), v0.clone());
    let mut prev = &u * v.transpose();
    let mut trace = Vec::new();
    for gamma in 1..=cfg.gamma_max {
        let g = pl.gradient(&ParameterMatrix::new(prev.clone())?);
        let (bu, bv) = balance_gradient(&u, &v)?;
        let u_next = &u - (&g * &v + bu) * cfg.eta;
        let v_next = &v - (g.tr_mul(&u) + bv) * cfg.eta;
        u = u_next;
        v = v_next;
        check_divergence(&u, &v, gamma)?;
        let cur = &u * v.transpose();
        let delta = (&cur - &prev).norm();
        trace.push(delta);
        prev = cur;
        if delta < cfg.tol {
            break;
        }
    }
    finish(u, v, prev, trace, start)
}

/// Fit once per candidate step size and keep the fit with the lowest final
/// surrogate objective (no ground truth involved).
pub fn select_eta(
    hub: &PseudoLikelihood,
    correction: &DMatrix<f64>,
    u0: &DMatrix<f64>,
    v0: &DMatrix<f64>,
    cfg: &OptimizerConfig,
    grid: &[f64],
) -> Result<(f64, FitResult)> {
    let mut best: Option<(f64, f64, FitResult)> = None;
    for &eta in grid {
        let c = OptimizerConfig { eta, ..cfg.clone() };
        let fit = match daniel_fit_with(hub, correction, u0, v0, &c) {
            Ok(f) => f,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        let obj = surrogate_objective(hub, correction, &fit.factors.u, &fit.factors.v)?;
        if best.as_ref().is_none_or(|(_, b, _)| obj < *b) {
            best = Some((eta, obj, fit));
        }
    }
    best.map(|(eta, _, fit)| (eta, fit))
        .ok_or_else(|| Error::Numerical("every step size in the grid diverged".into()))
}

/// Step sizes spanning the usual `[0.1, 0.3]` search range.
pub const ETA_GRID: [f64; 5] = [0.1, 0.15, 0.2, 0.25, 0.3];

fn finish(
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    prod: DMatrix<f64>,
    trace: Vec<f64>,
    start: Instant,
) -> Result<FitResult> {
    let theta_hat = ParameterMatrix::new(prod)?;
    Ok(FitResult {
        iterations_used: trace.len(),
        factors: FactorPair::new(u, v)?,
        theta_hat,
        trace,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub(crate) fn check_divergence(u: &DMatrix<f64>, v: &DMatrix<f64>, iteration: usize) -> Result<()> {
    let bad = |m: &DMatrix<f64>| m.iter().any(|x| !x.is_finite() || x.abs() > DIVERGENCE_LIMIT);
    if bad(u) || bad(v) {
        return Err(Error::Divergence { iteration });
    }
    Ok(())
}

fn check_pair(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if u.shape() != v.shape() {
        return Err(Error::invalid(format!(
            "factor shapes differ: {:?} vs {:?}",
            u.shape(),
            v.shape()
        )));
    }
    Ok(())
}

pub(crate) fn check_correction(c: &DMatrix<f64>, p: usize) -> Result<()> {
    if c.shape() != (p, p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            actual: c.nrows().max(c.ncols()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::pseudo_nll_grad;
    use crate::sampling::{gibbs_sample, make_ground_truth};
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn fixture(p: usize, d: usize, n: usize, s: u64) -> BinaryDataset {
        let gt = make_ground_truth(p, d, s).unwrap();
        gibbs_sample(&gt.theta_star, n, 50, s + 1).unwrap()
    }

    fn data(rows: &[&[i8]]) -> BinaryDataset {
        BinaryDataset::from_flat(rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        for bad in [
            OptimizerConfig { eta: 0.0, ..Default::default() },
            OptimizerConfig { gamma_max: 0, ..Default::default() },
            OptimizerConfig { tol: -1.0, ..Default::default() },
            OptimizerConfig { lambda: Some(-0.1), ..Default::default() },
            OptimizerConfig { d: Some(0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let l = OptimizerConfig::default().lambda_for(50, 1000);
        assert!((l - (50.0 * 50f64.ln() / 1000.0).sqrt()).abs() < 1e-15);
        let lp = OptimizerConfig::large_p();
        assert_eq!((lp.eta, lp.gamma_max), (0.01, 200));
    }

    #[test]
    fn convex_init_examples() {
        let ds = fixture(4, 1, 10, 3);
        let zero = OptimizerConfig { init_steps: 0, ..Default::default() };
        assert_eq!(convex_init(&ds, &zero).unwrap(), ParameterMatrix::zeros(4));

        let huge = OptimizerConfig { lambda: Some(1e6), ..Default::default() };
        assert_eq!(convex_init(&ds, &huge).unwrap().as_matrix().amax(), 0.0);

        // One unpenalized step from zero: −η times the mean of the closed-form
        // per-sample gradients with every B_q = −1/2.
        let one = OptimizerConfig { init_steps: 1, lambda: Some(0.0), ..Default::default() };
        let got = convex_init(&ds, &one).unwrap();
        let mut want = DMatrix::zeros(4, 4);
        for x in ds.samples() {
            for i in 0..4 {
                for j in 0..4 {
                    let xi = f64::from(x[i]);
                    want[(i, j)] += if i == j { -xi } else { -2.0 * xi * f64::from(x[j]) };
                }
            }
        }
        want *= -0.1 / 10.0;
        assert!((got.as_matrix() - want).amax() < 1e-12);
    }

    #[test]
    fn convex_init_ball_projection() {
        let ds = fixture(6, 1, 50, 8);
        let cfg = OptimizerConfig { ball_radius: 0.05, lambda: Some(0.0), ..Default::default() };
        let m = convex_init(&ds, &cfg).unwrap();
        assert!(m.as_matrix().norm() <= 0.05 + 1e-12);
    }

    #[test]
    fn balance_gradient_examples() {
        let mut rng = seed::rng(4);
        let v = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>());
        let (a, b) = balance_gradient(&v, &v).unwrap();
        assert_eq!(a.amax(), 0.0);
        assert_eq!(b.amax(), 0.0);

        let v = DMatrix::<f64>::identity(4, 2);
        let u = &v * 2.0;
        let (a, b) = balance_gradient(&u, &v).unwrap();
        assert!((a - &v * 6.0).amax() < 1e-15);
        assert!((b + &v * 3.0).amax() < 1e-15);
        assert!(balance_gradient(&u, &DMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn balance_gradient_matches_finite_differences() {
        let mut rng = seed::rng(9);
        let u = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);
        let v = DMatrix::from_fn(5, 2, |_, _| rng.random::<f64>() - 0.5);
        let q = |u: &DMatrix<f64>, v: &DMatrix<f64>| 0.25 * (u.tr_mul(u) - v.tr_mul(v)).norm_squared();
        let (gu, gv) = balance_gradient(&u, &v).unwrap();
        let h = 1e-5;
        for (which, g) in [(0, &gu), (1, &gv)] {
            for idx in 0..10 {
                let (mut up, mut um) = (u.clone(), u.clone());
                let (mut vp, mut vm) = (v.clone(), v.clone());
                if which == 0 {
                    up[idx] += h;
                    um[idx] -= h;
                } else {
                    vp[idx] += h;
                    vm[idx] -= h;
                }
                let fd = (q(&up, &vp) - q(&um, &vm)) / (2.0 * h);
                let rel = (fd - g[idx]).abs() / g[idx].abs().max(1e-2);
                assert!(rel < 1e-6, "entry {idx}: fd {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn surrogate_gradient_examples() {
        let ds = fixture(5, 1, 40, 2);
        let theta = ParameterMatrix::new(make_ground_truth(5, 1, 7).unwrap().theta_star.into_inner()).unwrap();
        let g0 = pseudo_nll_grad(&theta, &ds).unwrap();
        let z = DMatrix::zeros(5, 5);
        assert_eq!(surrogate_gradient_theta(&theta, &ds, &z).unwrap(), g0);
        let cancel = surrogate_gradient_theta(&theta, &ds, &-&g0).unwrap();
        assert!(cancel.amax() < 1e-15);
        assert!(surrogate_gradient_theta(&theta, &ds, &DMatrix::zeros(4, 4)).is_err());
    }

    #[test]
    fn surrogate_gradient_with_two_halves_matches_pooled() {
        let ds = fixture(6, 1, 80, 5);
        let theta0 = convex_init(&ds, &OptimizerConfig::default()).unwrap();
        let hub = ds.slice(0..40).unwrap();
        let other = ds.slice(40..80).unwrap();
        let g_hub = pseudo_nll_grad(&theta0, &hub).unwrap();
        let g_other = pseudo_nll_grad(&theta0, &other).unwrap();
        let correction = (&g_hub + &g_other) * 0.5 - &g_hub;
        let got = surrogate_gradient_theta(&theta0, &hub, &correction).unwrap();
        let pooled = pseudo_nll_grad(&theta0, &ds).unwrap();
        assert!((got - pooled).amax() < 1e-12);
    }

    #[test]
    fn stationary_point_is_fixed() {
        // x = (+1,+1) and (−1,−1) with a zero diagonal: at Θ = 0 the mean
        // gradient is [[0, −2], [−2, 0]]; cancel it with the correction.
        let ds = data(&[&[1, 1], &[-1, -1]]);
        let u0 = DMatrix::zeros(2, 1);
        let g = pseudo_nll_grad(&ParameterMatrix::zeros(2), &ds).unwrap();
        let fit = daniel_fit(&ds, &-g, &u0, &u0, &OptimizerConfig::default()).unwrap();
        assert_eq!(fit.factors.u, u0);
        assert_eq!(fit.iterations_used, 1);
        assert_eq!(fit.trace, vec![0.0]);
    }

    #[test]
    fn one_iteration_by_hand() {
        // p=2, d=1, single sample (+1,+1); one unpenalized init step gives
        // Θ0 = −η·W(0) = 0.1·[[1, 2], [2, 1]], eigenpair λ=0.3, v=(1,1)/√2.
        let ds = data(&[&[1, 1]]);
        let init = OptimizerConfig { init_steps: 1, lambda: Some(0.0), ..Default::default() };
        let theta0 = convex_init(&ds, &init).unwrap();
        let f0 = symmetric_init_from(&theta0, 1).unwrap();
        let a = (0.15f64).sqrt();
        assert!((f0.u[(0, 0)] - a).abs() < 1e-14 && (f0.u[(1, 0)] - a).abs() < 1e-14);

        let fit = daniel_fit(&ds, &DMatrix::zeros(2, 2), &f0.u, &f0.v, &OptimizerConfig { gamma_max: 1, ..init }).unwrap();
        // At Θ = U0V0ᵀ = 0.15·11ᵀ: Q_q = 2·0.15 + 2·0.15 = 0.6 for both q,
        // B = −1/(1+e^{0.6}), G = [[2B, 4B], [4B, 2B]], Π = 0.
        let b = -1.0 / (1.0 + 0.6f64.exp());
        let gv = 6.0 * b * a;
        let want = a - 0.1 * gv;
        for r in 0..2 {
            assert!((fit.factors.u[(r, 0)] - want).abs() < 1e-14);
            assert!((fit.factors.v[(r, 0)] - want).abs() < 1e-14);
        }
        assert_eq!(fit.iterations_used, 1);
    }

    #[test]
    fn zero_correction_matches_centralized_bitwise() {
        let ds = fixture(10, 2, 300, 21);
        let cfg = OptimizerConfig::default();
        let f0 = symmetric_init_from(&convex_init(&ds, &cfg).unwrap(), 2).unwrap();
        for gamma in [1, 7, 50] {
            let c = OptimizerConfig { gamma_max: gamma, tol: 0.0, ..cfg.clone() };
            let a = daniel_fit(&ds, &DMatrix::zeros(10, 10), &f0.u, &f0.v, &c).unwrap();
            let b = centralized_fit(&ds, &f0.u, &f0.v, &c).unwrap();
            let bits = |m: &DMatrix<f64>| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.factors.u), bits(&b.factors.u));
            assert_eq!(bits(&a.factors.v), bits(&b.factors.v));
            assert_eq!(a.trace, b.trace);
        }
    }

    #[test]
    fn descent_is_monotone_at_small_steps() {
        let ds = fixture(10, 1, 500, 1);
        let hub = PseudoLikelihood::new(&ds);
        let cfg = OptimizerConfig::default();
        let f0 = symmetric_init_from(&convex_init_with(&hub, &cfg).unwrap(), 1).unwrap();
        let zero = DMatrix::zeros(10, 10);
        let small = OptimizerConfig { eta: 0.01, gamma_max: 1, tol: 0.0, ..cfg };
        let (mut u, mut v) = (f0.u, f0.v);
        let mut last = surrogate_objective(&hub, &zero, &u, &v).unwrap();
        for _ in 0..50 {
            let fit = daniel_fit_with(&hub, &zero, &u, &v, &small).unwrap();
            (u, v) = (fit.factors.u, fit.factors.v);
            let obj = surrogate_objective(&hub, &zero, &u, &v).unwrap();
            assert!(obj <= last + 1e-15, "{obj} > {last}");
            last = obj;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let ds = fixture(5, 1, 30, 3);
        let u0 = DMatrix::from_element(5, 1, 10.0);
        let cfg = OptimizerConfig { eta: 50.0, ..Default::default() };
        match daniel_fit(&ds, &DMatrix::zeros(5, 5), &u0, &u0, &cfg) {
            Err(Error::Divergence { iteration }) => assert!(iteration >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn select_eta_picks_a_grid_value() {
        let ds = fixture(8, 1, 200, 6);
        let hub = PseudoLikelihood::new(&ds);
        let cfg = OptimizerConfig::default();
        let f0 = symmetric_init_from(&convex_init_with(&hub, &cfg).unwrap(), 1).unwrap();
        let (eta, fit) = select_eta(&hub, &DMatrix::zeros(8, 8), &f0.u, &f0.v, &cfg, &ETA_GRID).unwrap();
        assert!(ETA_GRID.contains(&eta));
        assert!(fit.iterations_used >= 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn iterates_stay_symmetric(s in 0u64..1000, p in 3usize..9, x in 0.0f64..0.6) {
            let ds = fixture(p, 1, 120, s);
            let n = ds.n();
            let m = ((n as f64).powf(x).floor() as usize).max(1);
            let hub = ds.slice(0..n / m).unwrap();
            let cfg = OptimizerConfig::default();
            let theta0 = convex_init(&hub, &cfg).unwrap();
            let d = 1 + (s as usize) % 2;
            let f0 = symmetric_init_from(&theta0, d).unwrap();
            let correction = pseudo_nll_grad(&theta0, &ds).unwrap() - pseudo_nll_grad(&theta0, &hub).unwrap();
            let (mut u, mut v) = (f0.u, f0.v);
            let step = OptimizerConfig { gamma_max: 1, tol: 0.0, ..cfg };
            for _ in 0..30 {
                let fit = daniel_fit(&hub, &correction, &u, &v, &step).unwrap();
                (u, v) = (fit.factors.u, fit.factors.v);
                let prod = &u * v.transpose();
                prop_assert!((&prod - prod.transpose()).amax() < 1e-10);
            }
        }

        #[test]
        fn iteration_count_bounded(s in 0u64..1000, gamma in 1usize..20) {
            let ds = fixture(5, 1, 60, s);
            let cfg = OptimizerConfig { gamma_max: gamma, ..Default::default() };
            let f0 = symmetric_init_from(&convex_init(&ds, &cfg).unwrap(), 1).unwrap();
            let fit = daniel_fit(&ds, &DMatrix::zeros(5, 5), &f0.u, &f0.v, &cfg).unwrap();
            prop_assert!(fit.iterations_used <= gamma);
            prop_assert_eq!(fit.trace.len(), fit.iterations_used);
            if fit.iterations_used < gamma {
                prop_assert!(*fit.trace.last().unwrap() < cfg.tol);
            }
            let diff = fit.factors.product() - fit.theta_hat.as_matrix();
            prop_assert!(diff.amax() < 1e-12);
        }
    }
}
