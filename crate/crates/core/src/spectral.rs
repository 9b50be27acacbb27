//! Spectral projection operators, rank-d factorization and the Procrustes
//! subspace distance.
//!
//! Every operator acts on symmetric matrices through an eigendecomposition:
//! singular values of a symmetric matrix are `|λ|`, so thresholding `|λ|` and
//! restoring the sign is the singular-value operation with exact symmetry.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};
use crate::ising::{symmetrize, FactorPair, ParameterMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpectralOp {
    /// `σ → (σ − τ)_+`
    Soft(f64),
    /// `σ → σ·1{σ > τ}`
    Hard(f64),
    /// Keep the `d` largest singular values.
    TopD(usize),
    /// Clamp negative eigenvalues to zero.
    PsdProject,
}

impl SpectralOp {
    pub fn validate(&self, p: usize) -> Result<()> {
        match *self {
            SpectralOp::Soft(t) | SpectralOp::Hard(t) if !(t >= 0.0 && t.is_finite()) => {
                Err(Error::invalid(format!("threshold {t} must be finite and ≥ 0")))
            }
            SpectralOp::TopD(d) if d == 0 || d > p => {
                Err(Error::invalid(format!("rank {d} must lie in 1..={p}")))
            }
            _ => Ok(()),
        }
    }
}

/// Eigenpairs sorted by descending eigenvalue, each eigenvector normalized so
/// that its largest-magnitude entry is positive.
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let p = m.nrows();
        let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
            .ok_or_else(|| Error::Numerical("eigendecomposition did not converge".into()))?;
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut vectors = DMatrix::zeros(p, p);
        let mut values = Vec::with_capacity(p);
        for (dst, &src) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(src).clone_owned();
            let pivot = col.iamax();
            if col[pivot] < 0.0 {
                col.neg_mut();
            }
            vectors.set_column(dst, &col);
            values.push(eig.eigenvalues[src]);
        }
        Ok(SortedEigen { values, vectors })
    }

    /// Indices of the `d` eigenpairs of largest `|λ|`; ties keep the lower
    /// index of the descending order.
    pub fn top_abs(&self, d: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| self.values[b].abs().total_cmp(&self.values[a].abs()));
        idx.truncate(d);
        idx
    }

    /// `Σ_k f(λ_k) v_k v_kᵀ`, built symmetric.
    pub fn reconstruct(&self, f: impl Fn(usize, f64) -> f64) -> DMatrix<f64> {
        let p = self.values.len();
        let mut scaled = self.vectors.clone();
        for k in 0..p {
            let s = f(k, self.values[k]);
            scaled.column_mut(k).scale_mut(s);
        }
        symmetrize(scaled * self.vectors.transpose())
    }
}

/// Apply `op` to the symmetric part of `m`.
pub fn apply_spectral(m: &DMatrix<f64>, op: SpectralOp) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    op.validate(m.nrows())?;
    let eig = SortedEigen::new(&symmetrize(m.clone()))?;
    let out = match op {
        SpectralOp::Soft(t) => eig.reconstruct(|_, l| l.signum() * (l.abs() - t).max(0.0)),
        SpectralOp::Hard(t) => eig.reconstruct(|_, l| if l.abs() > t { l } else { 0.0 }),
        SpectralOp::TopD(d) => {
            let keep = eig.top_abs(d);
            eig.reconstruct(|k, l| if keep.contains(&k) { l } else { 0.0 })
        }
        SpectralOp::PsdProject => eig.reconstruct(|_, l| l.max(0.0)),
    };
    Ok(out)
}

/// Balanced rank-`d` factors of a symmetric matrix.
///
/// Keeps the `d` eigenpairs of largest `|λ|`, sets `U0 = v·√|λ|` and
/// `V0 = U0·D0` with `D0 = diag(sign λ)` (`sign 0 = +1`), so `U0 V0ᵀ` is the
/// best symmetric rank-`d` approximation and `U0ᵀU0 = V0ᵀV0`.
pub fn factorize_rank_d(theta0: &ParameterMatrix, d: usize) -> Result<(FactorPair, Vec<f64>)> {
    let p = theta0.dim();
    if d == 0 || d > p {
        return Err(Error::invalid(format!("rank {d} must lie in 1..={p}")));
    }
    let eig = SortedEigen::new(theta0.as_matrix())?;
    let keep = eig.top_abs(d);
    let mut u = DMatrix::zeros(p, d);
    let mut v = DMatrix::zeros(p, d);
    let mut signs = Vec::with_capacity(d);
    for (c, &k) in keep.iter().enumerate() {
        let l = eig.values[k];
        let s = if l < 0.0 { -1.0 } else { 1.0 };
        let col = eig.vectors.column(k) * l.abs().sqrt();
        u.set_column(c, &col);
        v.set_column(c, &(col * s));
        signs.push(s);
    }
    Ok((FactorPair::new(u, v)?, signs))
}

/// `Z = [U; V]`, a `(2p)×d` stack.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFactors {
    z: DMatrix<f64>,
}

impl StackedFactors {
    pub fn new(z: DMatrix<f64>) -> Result<Self> {
        if z.nrows() % 2 != 0 {
            return Err(Error::invalid("stacked factors need an even row count"));
        }
        Ok(StackedFactors { z })
    }

    pub fn from_pair(f: &FactorPair) -> Self {
        let (p, d) = f.u.shape();
        let mut z = DMatrix::zeros(2 * p, d);
        z.view_mut((0, 0), (p, d)).copy_from(&f.u);
        z.view_mut((p, 0), (p, d)).copy_from(&f.v);
        StackedFactors { z }
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn u(&self) -> DMatrix<f64> {
        let p = self.z.nrows() / 2;
        self.z.rows(0, p).clone_owned()
    }

    pub fn v(&self) -> DMatrix<f64> {
        let p = self.z.nrows() / 2;
        self.z.rows(p, p).clone_owned()
    }
}

/// `ρ²(Z1, Z2) = min_O ‖Z1 − Z2 O‖²_F` over orthogonal `O`.
pub fn procrustes_distance(z1: &StackedFactors, z2: &StackedFactors) -> Result<f64> {
    let (a, b) = (&z1.z, &z2.z);
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let svd = SVD::try_new(b.transpose() * a, true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let (Some(left), Some(right_t)) = (svd.u, svd.v_t) else {
        return Err(Error::Numerical("SVD returned no singular vectors".into()));
    };
    let o = left * right_t;
    Ok((a - b * o).norm_squared())
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> Result<f64> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 0)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    Ok(svd.singular_values.max())
}
