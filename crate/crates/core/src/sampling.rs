//! Ground-truth generation and sampling from the Ising distribution.
//!
//! The joint mass used throughout is
//!
//! ```text
//! p(x) ∝ exp{ Σ_{j<k} θ_jk x_j x_k + Σ_j θ_jj x_j }
//! ```
//!
//! which is the distribution whose full conditionals are exactly the
//! logistic conditionals of [`crate::ising::conditional_prob`]:
//! `P(X_j = +1 | x_{-j}) = σ(2θ_jj + 2 Σ_{k≠j} θ_jk x_k)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::BinaryDataset;
use crate::error::{Error, Result};
use crate::ising::{logistic, ParameterMatrix};
use crate::seed;

/// Largest dimension accepted by [`exact_table`] (4096 states).
pub const MAX_EXACT_DIM: usize = 12;

/// Default number of full systematic sweeps run by each Gibbs chain.
pub const DEFAULT_BURN_IN: usize = 200;

/// Random low-rank truth `Θ* = U* U*ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub u_star: DMatrix<f64>,
    pub theta_star: ParameterMatrix,
    pub seed: u64,
}

/// Draw `U*` with i.i.d. `N(0, 1/(dp))` entries, filled row by row from the
/// `ChaCha8` stream keyed by `seed`.
pub fn make_ground_truth(p: usize, d: usize, seed: u64) -> Result<GroundTruth> {
    if d == 0 || d > p {
        return Err(Error::invalid(format!("rank d={d} must lie in 1..=p={p}")));
    }
    let sd = (1.0 / (d * p) as f64).sqrt();
    let normal = Normal::new(0.0, sd).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut u = DMatrix::zeros(p, d);
    for i in 0..p {
        for k in 0..d {
            u[(i, k)] = normal.sample(&mut rng);
        }
    }
    let mut theta = DMatrix::zeros(p, p);
    for j in 0..p {
        for k in j..p {
            let v = u.row(j).dot(&u.row(k));
            theta[(j, k)] = v;
            theta[(k, j)] = v;
        }
    }
    Ok(GroundTruth {
        u_star: u,
        theta_star: ParameterMatrix::new(theta)?,
        seed,
    })
}

/// Exhaustive probability table over `{±1}^p`.
///
/// State `s` has bit `b` set exactly when `x_{b+1} = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactTable {
    p: usize,
    probs: Vec<f64>,
}

impl ExactTable {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn state_to_spins(&self, state: usize) -> Vec<i8> {
        state_spins(state, self.p)
    }

    pub fn spins_to_state(x: &[i8]) -> usize {
        x.iter()
            .enumerate()
            .filter(|(_, &v)| v > 0)
            .fold(0, |acc, (b, _)| acc | (1 << b))
    }

    /// `P(X_j = +1 | x_{-j})` read off the table; `x_j` itself is ignored.
    pub fn conditional_plus(&self, x: &[i8], j: usize) -> f64 {
        let s = Self::spins_to_state(x);
        let plus = self.probs[s | (1 << j)];
        let minus = self.probs[s & !(1 << j)];
        plus / (plus + minus)
    }

    /// Empirical state frequencies of a dataset, same indexing as `probs`.
    pub fn empirical(&self, data: &BinaryDataset) -> Result<Vec<f64>> {
        if data.p() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                actual: data.p(),
            });
        }
        let mut counts = vec![0.0; self.probs.len()];
        for x in data.samples() {
            counts[Self::spins_to_state(x)] += 1.0;
        }
        let n = data.n() as f64;
        counts.iter_mut().for_each(|c| *c /= n);
        Ok(counts)
    }

    /// Total-variation distance between the table and the empirical
    /// distribution of `data`.
    pub fn tv_distance(&self, data: &BinaryDataset) -> Result<f64> {
        let emp = self.empirical(data)?;
        Ok(0.5
            * emp
                .iter()
                .zip(&self.probs)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }
}

fn state_spins(state: usize, p: usize) -> Vec<i8> {
    (0..p)
        .map(|b| if state >> b & 1 == 1 { 1 } else { -1 })
        .collect()
}

/// Normalized joint probabilities for every configuration (`p ≤ 12`).
pub fn exact_table(theta: &ParameterMatrix) -> Result<ExactTable> {
    let p = theta.dim();
    if p > MAX_EXACT_DIM {
        return Err(Error::invalid(format!(
            "exact table refused for p={p} > {MAX_EXACT_DIM}"
        )));
    }
    let log_mass: Vec<f64> = (0..1usize << p)
        .map(|s| {
            let x = state_spins(s, p);
            let mut e = 0.0;
            for j in 0..p {
                let xj = f64::from(x[j]);
                e += theta.get(j, j) * xj;
                for k in (j + 1)..p {
                    e += theta.get(j, k) * xj * f64::from(x[k]);
                }
            }
            e
        })
        .collect();
    let max = log_mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = log_mass.iter().map(|e| (e - max).exp()).collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|v| *v /= z);
    Ok(ExactTable { p, probs })
}

/// Draw `n` samples, each the final state of its own Gibbs chain.
///
/// Chain `c` uses stream `c` of the generator keyed by `seed`: it starts from
/// uniform random spins and runs `burn_in_sweeps` systematic sweeps, visiting
/// coordinates `0..p` in order. The uniform consumed by coordinate `j` in
/// sweep `s` is therefore word `p + s·p + j` of that stream, which makes the
/// output independent of how chains are scheduled across threads.
pub fn gibbs_sample(
    theta: &ParameterMatrix,
    n: usize,
    burn_in_sweeps: usize,
    seed: u64,
) -> Result<BinaryDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if burn_in_sweeps == 0 {
        return Err(Error::invalid("burn-in must be at least one sweep"));
    }
    let p = theta.dim();
    // Column-major with a zeroed diagonal: column j holds θ_kj for k ≠ j.
    let mut coupling: Vec<f64> = theta.as_matrix().as_slice().to_vec();
    let bias: Vec<f64> = (0..p).map(|j| theta.get(j, j)).collect();
    for j in 0..p {
        coupling[j * p + j] = 0.0;
    }
    let mut out = vec![0i8; n * p];
    out.par_chunks_mut(p).enumerate().for_each(|(chain, x)| {
        run_chain(&coupling, &bias, x, burn_in_sweeps, seed, chain as u64);
    });
    BinaryDataset::from_flat(p, out)
}

fn run_chain(coupling: &[f64], bias: &[f64], x: &mut [i8], sweeps: usize, seed: u64, chain: u64) {
    let p = x.len();
    let mut rng = seed::stream_rng(seed, chain);
    for v in x.iter_mut() {
        *v = if rng.random::<f64>() < 0.5 { 1 } else { -1 };
    }
    // h_j = Σ_{k≠j} θ_jk x_k
    let mut h = vec![0.0; p];
    for (j, hj) in h.iter_mut().enumerate() {
        let col = &coupling[j * p..(j + 1) * p];
        *hj = col.iter().zip(x.iter()).map(|(t, &v)| t * f64::from(v)).sum();
    }
    for _ in 0..sweeps {
        for j in 0..p {
            let prob_plus = logistic(2.0 * (bias[j] + h[j]));
            let new = if rng.random::<f64>() < prob_plus { 1 } else { -1 };
            if new != x[j] {
                x[j] = new;
                let delta = 2.0 * f64::from(new);
                let col = &coupling[j * p..(j + 1) * p];
                for (hk, t) in h.iter_mut().zip(col) {
                    *hk += delta * t;
                }
            }
        }
    }
}

/// I.i.d. draws from the table by inverse CDF.
pub fn exact_sample(table: &ExactTable, n: usize, seed: u64) -> Result<BinaryDataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut cdf = Vec::with_capacity(table.probs.len());
    let mut acc = 0.0;
    for &pr in &table.probs {
        acc += pr;
        cdf.push(acc);
    }
    let last = cdf.len() - 1;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n * table.p);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let s = cdf.partition_point(|&c| c <= u).min(last);
        out.extend(state_spins(s, table.p));
    }
    BinaryDataset::from_flat(table.p, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::conditional_prob;
    use nalgebra::SymmetricEigen;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small_theta(seed: u64) -> ParameterMatrix {
        // Stronger than the default truth so the checks have teeth.
        let gt = make_ground_truth(6, 2, seed).unwrap();
        ParameterMatrix::new(gt.theta_star.as_matrix() * 3.0).unwrap()
    }

    #[test]
    fn ground_truth_is_deterministic_and_low_rank() {
        let a = make_ground_truth(20, 3, 99).unwrap();
        let b = make_ground_truth(20, 3, 99).unwrap();
        assert_eq!(a, b);
        let prod = &a.u_star * a.u_star.transpose();
        assert!((prod - a.theta_star.as_matrix()).amax() < 1e-14);
        let eig = SymmetricEigen::new(a.theta_star.as_matrix().clone());
        let tiny = eig.eigenvalues.iter().filter(|v| v.abs() < 1e-12).count();
        assert_eq!(tiny, 20 - 3);
        assert!(eig.eigenvalues.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn ground_truth_entry_variance() {
        let (p, d) = (50, 5);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for s in 0..200 {
            let gt = make_ground_truth(p, d, s).unwrap();
            for &v in gt.u_star.iter() {
                sum += v;
                sq += v * v;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sq / count - mean * mean;
        let target = 1.0 / (p * d) as f64;
        assert!(var > 0.8 * target && var < 1.2 * target, "var={var}");
    }

    #[test]
    fn ground_truth_rejects_bad_rank() {
        assert!(make_ground_truth(3, 4, 0).is_err());
        assert!(make_ground_truth(3, 0, 0).is_err());
    }

    #[test]
    fn exact_table_examples() {
        let t = exact_table(&ParameterMatrix::zeros(2)).unwrap();
        assert!(t.probs().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let t = exact_table(&ParameterMatrix::from_row_slice(1, &[0.5]).unwrap()).unwrap();
        let want = 0.5f64.exp() / (0.5f64.exp() + (-0.5f64).exp());
        assert!((t.probs()[1] - want).abs() < 1e-15);
        assert!((t.probs()[1] - 0.731_058_578_630_005).abs() < 1e-12);
        assert!(exact_table(&ParameterMatrix::zeros(13)).is_err());
    }

    #[test]
    fn exact_table_normalized_and_positive() {
        for seed in 0..5 {
            let t = exact_table(&small_theta(seed)).unwrap();
            let total: f64 = t.probs().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(t.probs().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn table_conditionals_match_logistic_conditionals() {
        for (seed, p) in [(1u64, 1usize), (2, 3), (3, 6), (4, 6)] {
            let gt = make_ground_truth(p, 1, seed).unwrap();
            let mut m = gt.theta_star.as_matrix() * 10.0;
            m[(0, 0)] -= 0.7;
            let theta = ParameterMatrix::new(m).unwrap();
            let table = exact_table(&theta).unwrap();
            for s in 0..1usize << p {
                let x = table.state_to_spins(s);
                for j in 0..p {
                    let plus = {
                        let mut y = x.clone();
                        y[j] = 1;
                        conditional_prob(&theta, &y, j).unwrap()
                    };
                    assert!((table.conditional_plus(&x, j) - plus).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gibbs_at_zero_is_uniform() {
        let n = 20_000;
        let data = gibbs_sample(&ParameterMatrix::zeros(5), n, 3, 7).unwrap();
        for j in 0..5 {
            let mean: f64 =
                data.samples().map(|x| f64::from(x[j])).sum::<f64>() / n as f64;
            assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "coord {j}: {mean}");
        }
    }

    #[test]
    fn gibbs_is_deterministic() {
        let theta = small_theta(1);
        let a = gibbs_sample(&theta, 300, 10, 42).unwrap();
        let b = gibbs_sample(&theta, 300, 10, 42).unwrap();
        assert_eq!(a, b);
        let c = gibbs_sample(&theta, 300, 10, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gibbs_rejects_bad_arguments() {
        let t = ParameterMatrix::zeros(2);
        assert!(gibbs_sample(&t, 0, 5, 0).is_err());
        assert!(gibbs_sample(&t, 5, 0, 0).is_err());
    }

    #[test]
    fn gibbs_matches_exact_distribution() {
        let theta = small_theta(3);
        let table = exact_table(&theta).unwrap();
        let data = gibbs_sample(&theta, 60_000, DEFAULT_BURN_IN, 5).unwrap();
        let tv = table.tv_distance(&data).unwrap();
        assert!(tv < 0.03, "tv={tv}");
    }

    #[test]
    fn exact_sample_uniform_frequencies() {
        let table = exact_table(&ParameterMatrix::zeros(2)).unwrap();
        let data = exact_sample(&table, 40_000, 1).unwrap();
        for f in table.empirical(&data).unwrap() {
            assert!((f - 0.25).abs() < 0.01);
        }
        assert_eq!(data, exact_sample(&table, 40_000, 1).unwrap());
    }

    #[test]
    fn exact_and_gibbs_samples_are_statistically_equivalent() {
        let theta = small_theta(9);
        let table = exact_table(&theta).unwrap();
        let n = 100_000;
        let a = exact_sample(&table, n, 17).unwrap();
        let b = gibbs_sample(&theta, n, DEFAULT_BURN_IN, 18).unwrap();
        let fa = table.empirical(&a).unwrap();
        let fb = table.empirical(&b).unwrap();
        let mut stat = 0.0;
        let mut cells = 0;
        for (x, y) in fa.iter().zip(&fb) {
            let (ca, cb) = (x * n as f64, y * n as f64);
            if ca + cb > 0.0 {
                stat += (ca - cb).powi(2) / (ca + cb);
                cells += 1;
            }
        }
        let crit = ChiSquared::new((cells - 1) as f64)
            .unwrap()
            .inverse_cdf(0.999);
        assert!(stat < crit, "chi2={stat} crit={crit}");
    }
}
