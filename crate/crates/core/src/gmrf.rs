//! Gaussian Markov random field primitives on top of the sparse Cholesky factor:
//! conditioning on an observed sub-vector, marginal densities, sampling and the
//! spectral scaling of adjacency matrices.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::cholesky::CholeskyFactor;
use crate::error::{GmrfError, Result};
use crate::sparse::SparsePrecision;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mean vector paired with a precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBlock {
    pub mean: Vec<f64>,
    pub precision: SparsePrecision,
}

impl GaussianBlock {
    pub fn new(mean: Vec<f64>, precision: SparsePrecision) -> Result<Self> {
        if mean.len() != precision.dim() {
            return Err(GmrfError::DimensionMismatch(format!(
                "mean of length {} with a {}-dimensional precision",
                mean.len(),
                precision.dim()
            )));
        }
        Ok(Self { mean, precision })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Split of `0..n` into missing and observed positions, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    mis: Vec<usize>,
    obs: Vec<usize>,
}

impl IndexPartition {
    pub fn new(n: usize, mut mis: Vec<usize>) -> Result<Self> {
        mis.sort_unstable();
        mis.dedup();
        if mis.last().is_some_and(|&m| m >= n) {
            return Err(GmrfError::DimensionMismatch(format!("missing index outside 0..{n}")));
        }
        let mut flag = vec![false; n];
        for &m in &mis {
            flag[m] = true;
        }
        let obs = (0..n).filter(|&i| !flag[i]).collect();
        Ok(Self { mis, obs })
    }

    /// Builds the partition from a mask where `true` marks a missing entry.
    pub fn from_mask(mask: &[bool]) -> Self {
        let mis = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let obs = mask.iter().enumerate().filter(|(_, &m)| !m).map(|(i, _)| i).collect();
        Self { mis, obs }
    }

    pub fn mis(&self) -> &[usize] {
        &self.mis
    }

    pub fn obs(&self) -> &[usize] {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.mis.len() + self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_dims(mu: &[f64], q: &SparsePrecision, part: &IndexPartition, z_obs: &[f64]) -> Result<()> {
    if mu.len() != q.dim() || part.len() != q.dim() {
        return Err(GmrfError::DimensionMismatch(format!(
            "mean {}, precision {}, partition {}",
            mu.len(),
            q.dim(),
            part.len()
        )));
    }
    if z_obs.len() != part.obs().len() {
        return Err(GmrfError::DimensionMismatch(format!(
            "{} observed values for {} observed positions",
            z_obs.len(),
            part.obs().len()
        )));
    }
    Ok(())
}

/// Conditional distribution of the missing block given the observed one:
/// `μ_c = μ_mis − Q_mm⁻¹ Q_mo (z_obs − μ_obs)`, `Q_c = Q_mm`.
pub fn condition(
    mu: &[f64],
    q: &SparsePrecision,
    part: &IndexPartition,
    z_obs: &[f64],
) -> Result<GaussianBlock> {
    condition_with_factor(mu, q, part, z_obs).map(|(block, _)| block)
}

/// As [`condition`], also returning the factor of `Q_mm`.
pub fn condition_with_factor(
    mu: &[f64],
    q: &SparsePrecision,
    part: &IndexPartition,
    z_obs: &[f64],
) -> Result<(GaussianBlock, CholeskyFactor)> {
    check_dims(mu, q, part, z_obs)?;
    if part.mis().is_empty() {
        return Err(GmrfError::EmptyMissingSet);
    }
    let q_mm = q.principal(part.mis())?;
    let factor = CholeskyFactor::factorize(&q_mm)?;
    let mut mean: Vec<f64> = part.mis().iter().map(|&i| mu[i]).collect();
    if !part.obs().is_empty() {
        let resid: Vec<f64> = part.obs().iter().zip(z_obs).map(|(&i, &z)| z - mu[i]).collect();
        let q_mo = q.cross_block(part.mis(), part.obs());
        if !q_mo.is_zero() {
            let b = q_mo.mul_vec(&resid);
            let shift = factor.solve(&b);
            for (m, s) in mean.iter_mut().zip(shift) {
                *m -= s;
            }
        }
    }
    Ok((GaussianBlock { mean, precision: q_mm }, factor))
}

/// `−(n/2) log 2π + ½ log|Q| − ½ (x−μ)ᵀ Q (x−μ)`.
pub fn gmrf_logdensity(x: &[f64], mu: &[f64], q: &SparsePrecision) -> Result<f64> {
    let factor = CholeskyFactor::factorize(q)?;
    gmrf_logdensity_with_factor(x, mu, q, &factor)
}

pub fn gmrf_logdensity_with_factor(
    x: &[f64],
    mu: &[f64],
    q: &SparsePrecision,
    factor: &CholeskyFactor,
) -> Result<f64> {
    if x.len() != q.dim() || mu.len() != q.dim() {
        return Err(GmrfError::DimensionMismatch(format!(
            "vector lengths {} and {} for a {}-dimensional precision",
            x.len(),
            mu.len(),
            q.dim()
        )));
    }
    let r: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let n = q.dim() as f64;
    Ok(-0.5 * n * LN_2PI + 0.5 * factor.log_det() - 0.5 * q.quad_form(&r))
}

/// Log density of the observed sub-vector with the missing block integrated out.
/// The marginal precision is the Schur complement `Q_oo − Q_om Q_mm⁻¹ Q_mo`,
/// evaluated through `log|S| = log|Q| − log|Q_mm|` and
/// `rᵀ S r = rᵀ Q_oo r − bᵀ Q_mm⁻¹ b` with `b = Q_mo r`.
pub fn marginal_obs_logdensity(
    mu: &[f64],
    q: &SparsePrecision,
    part: &IndexPartition,
    z_obs: &[f64],
) -> Result<f64> {
    check_dims(mu, q, part, z_obs)?;
    if part.mis().is_empty() {
        return gmrf_logdensity(z_obs, mu, q);
    }
    let n_obs = part.obs().len();
    if n_obs == 0 {
        return Ok(0.0);
    }
    let full = CholeskyFactor::factorize(q)?;
    let q_mm = q.principal(part.mis())?;
    let f_mm = CholeskyFactor::factorize(&q_mm)?;
    let q_oo = q.principal(part.obs())?;
    let r: Vec<f64> = part.obs().iter().zip(z_obs).map(|(&i, &z)| z - mu[i]).collect();
    let b = q.cross_block(part.mis(), part.obs()).mul_vec(&r);
    let quad = q_oo.quad_form(&r) - f_mm.inverse_quad(&b);
    let log_det = full.log_det() - f_mm.log_det();
    Ok(-0.5 * n_obs as f64 * LN_2PI + 0.5 * log_det - 0.5 * quad)
}

/// Draws `μ + L⁻ᵀ u` with `u` iid standard normal.
pub fn sample<R: Rng + ?Sized>(block: &GaussianBlock, rng: &mut R) -> Result<Vec<f64>> {
    let factor = CholeskyFactor::factorize(&block.precision)?;
    Ok(sample_with_factor(&block.mean, &factor, rng))
}

pub fn sample_with_factor<R: Rng + ?Sized>(mean: &[f64], factor: &CholeskyFactor, rng: &mut R) -> Vec<f64> {
    let u: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
    let dev = factor.colour_noise(&u);
    mean.iter().zip(dev).map(|(m, d)| m + d).collect()
}

pub const POWER_MAX_ITER: usize = 10_000;
pub const POWER_TOL: f64 = 1e-10;

/// Largest eigenvalue of a symmetric nonnegative matrix by power iteration from
/// the all-ones vector.
pub fn largest_eigenvalue(w: &SparsePrecision) -> Result<f64> {
    if w.nnz() == 0 {
        return Err(GmrfError::ZeroMatrix);
    }
    let n = w.dim();
    // A shift by the identity keeps the iteration convergent on bipartite graphs,
    // whose spectrum is symmetric about zero.
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let mut y = w.mul_vec(&v);
        for (yi, vi) in y.iter_mut().zip(&v) {
            *yi += vi;
        }
        let norm = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(GmrfError::ZeroMatrix);
        }
        y.iter_mut().for_each(|a| *a /= norm);
        let next = norm - 1.0;
        let done = (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE);
        lambda = next;
        v = y;
        if done {
            break;
        }
    }
    // Rayleigh quotient at the converged vector.
    let wv = w.mul_vec(&v);
    let rq: f64 = v.iter().zip(&wv).map(|(a, b)| a * b).sum();
    if !(rq > 0.0) {
        return Err(GmrfError::ZeroMatrix);
    }
    Ok(rq)
}

/// Divides a symmetric adjacency matrix by its largest eigenvalue.
pub fn scale_adjacency(w: &SparsePrecision) -> Result<SparsePrecision> {
    for (r, c, v) in w.upper_entries() {
        if r == c {
            return Err(GmrfError::InvalidInput("adjacency has a nonzero diagonal".into()));
        }
        if v < 0.0 {
            return Err(GmrfError::InvalidInput("adjacency has negative entries".into()));
        }
    }
    let lambda = largest_eigenvalue(w)?;
    Ok(w.scaled(1.0 / lambda))
}

/// Builds a symmetric 0/1 adjacency matrix from undirected edges.
pub fn adjacency_from_edges(n: usize, edges: &[(usize, usize)]) -> Result<SparsePrecision> {
    let trip: Vec<_> = edges.iter().map(|&(i, j)| (i, j, 1.0)).collect();
    if trip.is_empty() {
        return Err(GmrfError::ZeroMatrix);
    }
    SparsePrecision::from_triplets(n, &trip)
}

/// `log N(x | m, 1/prec)` for a scalar.
pub fn normal_logpdf(x: f64, mean: f64, precision: f64) -> f64 {
    0.5 * (precision / (2.0 * PI)).ln() - 0.5 * precision * (x - mean) * (x - mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense_logpdf(x: &DVector<f64>, mu: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        let n = x.len() as f64;
        let r = x - mu;
        let inv = cov.clone().try_inverse().unwrap();
        -0.5 * n * LN_2PI - 0.5 * cov.determinant().ln() - 0.5 * (r.transpose() * inv * &r)[(0, 0)]
    }

    #[test]
    fn diagonal_conditioning_is_a_mean_no_op() {
        let q = SparsePrecision::diagonal(&[2.0, 3.0, 4.0, 5.0]);
        let mu = [1.0, 2.0, 3.0, 4.0];
        let part = IndexPartition::new(4, vec![1, 3]).unwrap();
        let c = condition(&mu, &q, &part, &[10.0, -7.0]).unwrap();
        assert_eq!(c.mean, vec![2.0, 4.0]);
        assert_eq!(c.precision.to_dense(), DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 5.0])));
    }

    #[test]
    fn one_missing_under_identity() {
        let q = SparsePrecision::identity(4);
        let part = IndexPartition::new(4, vec![2]).unwrap();
        let c = condition(&[0.0, 0.0, 7.0, 0.0], &q, &part, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c.mean, vec![7.0]);
        assert_eq!(c.precision.to_dense(), DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn chain_conditioning_against_dense_covariance() {
        let w = adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let ws = scale_adjacency(&w).unwrap();
        let (tau, rho) = (2.0, 0.7);
        let q = SparsePrecision::identity(3).add(&ws.scaled(-rho)).unwrap().scaled(tau);
        let part = IndexPartition::new(3, vec![1]).unwrap();
        let c = condition(&[0.0; 3], &q, &part, &[1.0, -1.0]).unwrap();
        // dense oracle: E[x1 | x0, x2] = Σ_1o Σ_oo⁻¹ z_obs
        let s = q.to_dense().try_inverse().unwrap();
        let s_1o = DMatrix::from_row_slice(1, 2, &[s[(1, 0)], s[(1, 2)]]);
        let s_oo = DMatrix::from_row_slice(2, 2, &[s[(0, 0)], s[(0, 2)], s[(2, 0)], s[(2, 2)]]);
        let z = DVector::from_vec(vec![1.0, -1.0]);
        let m = (s_1o * s_oo.try_inverse().unwrap() * z)[0];
        assert!((c.mean[0] - m).abs() < 1e-12);
        assert!(c.mean[0].abs() < 1e-12); // symmetric data on a symmetric chain
    }

    #[test]
    fn marginal_of_standard_normal_at_mode() {
        let q = SparsePrecision::identity(5);
        let part = IndexPartition::new(5, vec![0, 3]).unwrap();
        let lp = marginal_obs_logdensity(&[0.0; 5], &q, &part, &[0.0; 3]).unwrap();
        assert!((lp + 1.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn marginal_matches_dense_covariance_oracle() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[3.0, 0.5, 0.0, -0.4, 0.5, 2.0, 0.3, 0.0, 0.0, 0.3, 1.5, 0.2, -0.4, 0.0, 0.2, 2.5],
        );
        let q = SparsePrecision::from_dense(&a).unwrap();
        let mu = [0.1, -0.2, 0.3, 0.5];
        let part = IndexPartition::new(4, vec![1, 2]).unwrap();
        let z = [1.0, -0.5];
        let lp = marginal_obs_logdensity(&mu, &q, &part, &z).unwrap();
        let s = a.try_inverse().unwrap();
        let s_oo = DMatrix::from_row_slice(2, 2, &[s[(0, 0)], s[(0, 3)], s[(3, 0)], s[(3, 3)]]);
        let oracle = dense_logpdf(&DVector::from_vec(z.to_vec()), &DVector::from_vec(vec![0.1, 0.5]), &s_oo);
        assert!((lp - oracle).abs() < 1e-12);
    }

    #[test]
    fn marginal_with_nothing_missing_is_the_joint() {
        let q = SparsePrecision::from_triplets(2, &[(0, 0, 2.0), (0, 1, 0.3), (1, 1, 1.0)]).unwrap();
        let part = IndexPartition::new(2, vec![]).unwrap();
        let a = marginal_obs_logdensity(&[0.0, 1.0], &q, &part, &[0.5, 0.5]).unwrap();
        let b = gmrf_logdensity(&[0.5, 0.5], &[0.0, 1.0], &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logdensity_trivial_values() {
        let q = SparsePrecision::identity(1);
        assert!((gmrf_logdensity(&[3.0], &[3.0], &q).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        let q2 = SparsePrecision::identity(2);
        let v = gmrf_logdensity(&[1.0, 0.0], &[0.0, 0.0], &q2).unwrap();
        assert!((v + LN_2PI + 0.5).abs() < 1e-15);
    }

    #[test]
    fn logdensity_matches_dense_in_five_dims() {
        let a = DMatrix::from_fn(5, 5, |i, j| if i == j { 3.0 } else { 0.4 / (1.0 + (i + j) as f64) });
        let q = SparsePrecision::from_dense(&a).unwrap();
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.5).collect();
        let mu: Vec<f64> = (0..5).map(|i| 0.1 * i as f64).collect();
        let dense = dense_logpdf(
            &DVector::from_vec(x.clone()),
            &DVector::from_vec(mu.clone()),
            &a.try_inverse().unwrap(),
        );
        assert!((gmrf_logdensity(&x, &mu, &q).unwrap() - dense).abs() < 1e-10);
    }

    #[test]
    fn pinned_samples_stay_at_the_mean() {
        let block = GaussianBlock::new(vec![5.0; 3], SparsePrecision::diagonal(&[1e10; 3])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            for v in sample(&block, &mut rng).unwrap() {
                assert!((v - 5.0).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn sample_moments_follow_the_law_of_large_numbers() {
        let block = GaussianBlock::new(vec![0.0; 2], SparsePrecision::identity(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample(&block, &mut rng).unwrap()).collect();
        let mean: Vec<f64> = (0..2).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / n as f64).collect();
        for m in &mean {
            assert!(m.abs() < 0.05);
        }
        for a in 0..2 {
            for b in 0..2 {
                let c = draws.iter().map(|d| (d[a] - mean[a]) * (d[b] - mean[b])).sum::<f64>() / (n - 1) as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((c - target).abs() < 0.05);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_under_a_seed() {
        let q = SparsePrecision::from_triplets(3, &[(0, 0, 2.0), (0, 1, -0.5), (1, 1, 2.0), (2, 2, 1.0)]).unwrap();
        let block = GaussianBlock::new(vec![1.0, 2.0, 3.0], q).unwrap();
        let a = sample(&block, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample(&block, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adjacency_scaling_examples() {
        let w2 = adjacency_from_edges(2, &[(0, 1)]).unwrap();
        let s2 = scale_adjacency(&w2).unwrap();
        assert!((s2.get(0, 1) - 1.0).abs() < 1e-10);

        let k3 = adjacency_from_edges(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        assert!((largest_eigenvalue(&k3).unwrap() - 2.0).abs() < 1e-9);
        let s3 = scale_adjacency(&k3).unwrap();
        for (r, c) in [(0, 1), (0, 2), (1, 2)] {
            assert!((s3.get(r, c) - 0.5).abs() < 1e-9);
        }
        let q = SparsePrecision::identity(3).add(&s3.scaled(-0.999)).unwrap();
        assert!(CholeskyFactor::factorize(&q).is_ok());
    }

    #[test]
    fn empty_adjacency_is_rejected() {
        let w = SparsePrecision::from_triplets(3, &[]).unwrap();
        assert_eq!(scale_adjacency(&w), Err(GmrfError::ZeroMatrix));
    }

    #[test]
    fn condition_requires_missing_entries() {
        let q = SparsePrecision::identity(2);
        let part = IndexPartition::new(2, vec![]).unwrap();
        assert_eq!(condition(&[0.0, 0.0], &q, &part, &[1.0, 1.0]), Err(GmrfError::EmptyMissingSet));
    }
}
