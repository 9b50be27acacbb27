//! Ising pseudo-likelihood kernels.
//!
//! For a symmetric parameter matrix `Θ` and a spin vector `x ∈ {±1}^p`, the
//! local field of coordinate `q` is
//!
//! ```text
//! Q_q = 2 θ_qq x_q + 2 Σ_{j≠q} θ_jq x_q x_j
//! ```
//!
//! and `P(X_q = x_q | x_{-q}) = σ(Q_q)` with `σ` the logistic function. The
//! loss is the mean negative conditional log-likelihood over samples, and its
//! gradient is taken with respect to the symmetric parameters: entry `(i, j)`
//! of the gradient is the derivative along `E_ij + E_ji` for `i ≠ j` and along
//! `E_ii` on the diagonal.

use nalgebra::DMatrix;

use crate::data::BinaryDataset;
use crate::error::{Error, Result};

/// Symmetric `p × p` matrix of pairwise dependencies (off-diagonal) and
/// occurrence tendencies (diagonal).
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2`, so `θ_jk == θ_kj`
/// holds bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMatrix(DMatrix<f64>);

impl ParameterMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(symmetrize(m)))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DMatrix::zeros(p, p))
    }

    pub fn from_row_slice(p: usize, values: &[f64]) -> Result<Self> {
        if values.len() != p * p {
            return Err(Error::DimensionMismatch {
                expected: p * p,
                actual: values.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(p, p, values))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.0[(j, k)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// `(M + Mᵀ)/2`, written so that the result is exactly symmetric.
pub fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    for j in 0..p {
        for k in (j + 1)..p {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    m
}

/// Bi-factors `(U, V)` of shape `p × d` with `Θ = UVᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

impl FactorPair {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        if u.shape() != v.shape() {
            return Err(Error::invalid(format!(
                "factor shapes differ: {:?} vs {:?}",
                u.shape(),
                v.shape()
            )));
        }
        Ok(Self { u, v })
    }

    pub fn p(&self) -> usize {
        self.u.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    /// `UVᵀ`, not symmetrized.
    pub fn product(&self) -> DMatrix<f64> {
        &self.u * self.v.transpose()
    }

    /// `UVᵀ` symmetrized into a parameter matrix.
    pub fn theta(&self) -> Result<ParameterMatrix> {
        ParameterMatrix::new(self.product())
    }
}

/// `log(1 + e^q)` without overflow.
#[inline]
pub fn softplus(q: f64) -> f64 {
    q.max(0.0) + (-q.abs()).exp().ln_1p()
}

/// `e^q / (e^q + 1)` without overflow.
#[inline]
pub fn logistic(q: f64) -> f64 {
    // Branch-free form; the sign of `q` is unpredictable in the hot loops.
    let e = (-q.abs()).exp();
    let r = 1.0 / (1.0 + e);
    if q >= 0.0 { r } else { e * r }
}

fn check_sample(theta: &ParameterMatrix, x: &[i8]) -> Result<()> {
    if x.len() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: x.len(),
        });
    }
    Ok(())
}

fn check_index(theta: &ParameterMatrix, q: usize) -> Result<()> {
    if q >= theta.dim() {
        return Err(Error::IndexOutOfRange {
            index: q,
            dim: theta.dim(),
        });
    }
    Ok(())
}

fn check_dataset(theta: &ParameterMatrix, data: &BinaryDataset) -> Result<()> {
    if data.p() != theta.dim() {
        return Err(Error::DimensionMismatch {
            expected: theta.dim(),
            actual: data.p(),
        });
    }
    Ok(())
}

#[inline]
fn field_unchecked(theta: &DMatrix<f64>, x: &[i8], q: usize) -> f64 {
    let col = theta.column(q);
    let mut s = 0.0;
    for (j, &xj) in x.iter().enumerate() {
        if j != q {
            s += col[j] * f64::from(xj);
        }
    }
    2.0 * f64::from(x[q]) * (theta[(q, q)] + s)
}

/// Local field `Q_q` of coordinate `q` for sample `x`.
pub fn local_field(theta: &ParameterMatrix, x: &[i8], q: usize) -> Result<f64> {
    check_sample(theta, x)?;
    check_index(theta, q)?;
    Ok(field_unchecked(&theta.0, x, q))
}

/// `P(X_j = x_j | X_{-j} = x_{-j})` under `theta`.
pub fn conditional_prob(theta: &ParameterMatrix, x: &[i8], j: usize) -> Result<f64> {
    Ok(logistic(local_field(theta, x, j)?))
}

/// Mean negative conditional log-likelihood of `data`, normalized by the
/// number of samples handed in.
pub fn pseudo_nll(theta: &ParameterMatrix, data: &BinaryDataset) -> Result<f64> {
    check_dataset(theta, data)?;
    Ok(PseudoLikelihood::new(data).loss(theta))
}

/// Gradient contribution `W` of a single sample.
pub fn per_sample_grad(theta: &ParameterMatrix, x: &[i8]) -> Result<DMatrix<f64>> {
    check_sample(theta, x)?;
    let p = theta.dim();
    let b: Vec<f64> = (0..p)
        .map(|q| -logistic(-field_unchecked(&theta.0, x, q)))
        .collect();
    let mut w = DMatrix::zeros(p, p);
    for i in 0..p {
        let xi = f64::from(x[i]);
        w[(i, i)] = 2.0 * xi * b[i];
        for j in (i + 1)..p {
            let v = 2.0 * xi * f64::from(x[j]) * (b[i] + b[j]);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    Ok(w)
}

/// Mean of [`per_sample_grad`] over the dataset.
pub fn pseudo_nll_grad(theta: &ParameterMatrix, data: &BinaryDataset) -> Result<DMatrix<f64>> {
    check_dataset(theta, data)?;
    Ok(PseudoLikelihood::new(data).gradient(theta))
}

/// Loss and gradient evaluator with the dataset cached as a dense `±1.0`
/// design matrix, so repeated evaluations reduce to two matrix products.
#[derive(Debug, Clone)]
pub struct PseudoLikelihood {
    x: DMatrix<f64>,
    // Xᵀ, kept so products with Xᵀ go through GEMM rather than `tr_mul`.
    xt: DMatrix<f64>,
}

impl PseudoLikelihood {
    pub fn new(data: &BinaryDataset) -> Self {
        let x = data.design_matrix();
        Self { xt: x.transpose(), x }
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `n × p` matrix of local fields.
    pub fn fields(&self, theta: &ParameterMatrix) -> DMatrix<f64> {
        assert_eq!(theta.dim(), self.p(), "parameter dimension mismatch");
        let t = theta.as_matrix();
        let mut off = t.clone();
        off.fill_diagonal(0.0);
        let mut q = &self.x * off;
        let diag = t.diagonal();
        for ((mut col, xcol), &tcc) in q.column_iter_mut().zip(self.x.column_iter()).zip(diag.iter()) {
            for (v, &x) in col.iter_mut().zip(xcol.iter()) {
                *v = 2.0 * x * (tcc + *v);
            }
        }
        q
    }

    pub fn loss(&self, theta: &ParameterMatrix) -> f64 {
        let q = self.fields(theta);
        let total: f64 = q.iter().map(|&v| softplus(-v)).sum();
        total / self.n() as f64
    }

    pub fn gradient(&self, theta: &ParameterMatrix) -> DMatrix<f64> {
        let n = self.n() as f64;
        let p = self.p();
        let mut xb = self.fields(theta);
        for (v, &x) in xb.iter_mut().zip(self.x.iter()) {
            *v = -x * logistic(-*v);
        }
        let m = &self.xt * &xb;
        let mut g = DMatrix::zeros(p, p);
        for i in 0..p {
            g[(i, i)] = 2.0 * xb.column(i).sum() / n;
            for j in (i + 1)..p {
                let v = 2.0 * (m[(i, j)] + m[(j, i)]) / n;
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}
