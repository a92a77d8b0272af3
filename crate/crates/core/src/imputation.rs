//! Imputation latent effects for a covariate with missing entries.
//!
//! The effect is a Gaussian vector over all `n` units. Observed entries are pinned
//! to their data values with a very large precision; the missing block follows the
//! conditional Gaussian implied by a joint sub-model for the complete covariate
//! (linear regression on fully observed predictors, or a CAR spatial model).
//! Hyperparameters of the sub-model receive an informative prior built from the
//! observed entries alone.

use nalgebra::DMatrix;
use statrs::function::gamma::ln_gamma;

use crate::error::{GmrfError, Result};
use crate::gmrf::{self, normal_logpdf, GaussianBlock, IndexPartition};
use crate::sparse::SparsePrecision;

/// Default precision used to pin observed covariate values.
pub const DEFAULT_PINNING_PRECISION: f64 = 1e10;

/// A covariate vector in which some entries are missing.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateWithGaps {
    values: Vec<Option<f64>>,
    partition: IndexPartition,
}

impl CovariateWithGaps {
    pub fn new(values: Vec<Option<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(GmrfError::EmptyInput("covariate has no entries".into()));
        }
        if values.iter().all(Option::is_none) {
            return Err(GmrfError::InvalidInput("covariate has no observed entries".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GmrfError::InvalidInput("covariate has non-finite observed entries".into()));
        }
        let mask: Vec<bool> = values.iter().map(Option::is_none).collect();
        let partition = IndexPartition::from_mask(&mask);
        Ok(Self { values, partition })
    }

    /// Hides the entries flagged in `mask` from a fully observed vector.
    pub fn from_mask(full: &[f64], mask: &[bool]) -> Result<Self> {
        if full.len() != mask.len() {
            return Err(GmrfError::DimensionMismatch(format!(
                "{} values with a mask of length {}",
                full.len(),
                mask.len()
            )));
        }
        Self::new(full.iter().zip(mask).map(|(&v, &m)| (!m).then_some(v)).collect())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn partition(&self) -> &IndexPartition {
        &self.partition
    }

    pub fn observed(&self) -> Vec<f64> {
        self.partition.obs().iter().map(|&i| self.values[i].expect("observed entry")).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.partition.mis().len()
    }

    /// `true` at missing positions.
    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(Option::is_none).collect()
    }
}

/// Base priors for the imputation sub-model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImputationPriors {
    /// Precision of the zero-mean normal prior on regression coefficients and CAR intercepts.
    pub coef_precision: f64,
    /// Gamma(shape, rate) prior on precisions.
    pub tau_shape: f64,
    pub tau_rate: f64,
    /// Precision of the zero-mean normal prior on logit ρ.
    pub logit_rho_precision: f64,
}

impl Default for ImputationPriors {
    fn default() -> Self {
        Self { coef_precision: 0.001, tau_shape: 1.0, tau_rate: 5e-5, logit_rho_precision: 0.001 }
    }
}

/// Log density of a Gamma(shape, rate) prior on `τ = exp(θ)`, expressed in `θ`
/// (includes the log-Jacobian `θ`).
pub fn log_gamma_prior_on_log(theta: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + shape * theta - rate * theta.exp()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Linear-regression sub-model: `z ~ N(X β, τ⁻¹ I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegImputationSpec<'a> {
    /// n × (P+1) fully observed design, intercept column first.
    pub design: &'a DMatrix<f64>,
    pub beta: Vec<f64>,
    pub tau: f64,
}

impl<'a> LinRegImputationSpec<'a> {
    /// Internal hyperparameters are `(β_0, …, β_P, log τ)`.
    pub fn from_internal(design: &'a DMatrix<f64>, theta: &[f64]) -> Result<Self> {
        let p = design.ncols();
        if theta.len() != p + 1 {
            return Err(GmrfError::DimensionMismatch(format!(
                "{} internal values for a design with {p} columns",
                theta.len()
            )));
        }
        Ok(Self { design, beta: theta[..p].to_vec(), tau: theta[p].exp() })
    }

    pub fn n_hyper(design: &DMatrix<f64>) -> usize {
        design.ncols() + 1
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.design.nrows() != n || self.beta.len() != self.design.ncols() {
            return Err(GmrfError::DimensionMismatch(format!(
                "design {}x{} with {} coefficients for a covariate of length {n}",
                self.design.nrows(),
                self.design.ncols(),
                self.beta.len()
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GmrfError::InvalidInput(format!("precision {} is not positive", self.tau)));
        }
        Ok(())
    }

    fn joint_mean(&self) -> Vec<f64> {
        (0..self.design.nrows())
            .map(|i| (0..self.design.ncols()).map(|j| self.design[(i, j)] * self.beta[j]).sum())
            .collect()
    }
}

/// An adjacency matrix rescaled to unit spectral radius.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledAdjacency {
    w: SparsePrecision,
}

impl ScaledAdjacency {
    /// Scales a raw 0/1 adjacency matrix by its largest eigenvalue.
    pub fn from_raw(w: &SparsePrecision) -> Result<Self> {
        Ok(Self { w: gmrf::scale_adjacency(w)? })
    }

    /// Accepts an already scaled matrix after checking its spectral radius.
    pub fn from_scaled(w: SparsePrecision) -> Result<Self> {
        let lambda = gmrf::largest_eigenvalue(&w)?;
        if lambda > 1.0 + 1e-8 {
            return Err(GmrfError::InvalidInput(format!("adjacency spectral radius {lambda} exceeds 1")));
        }
        Ok(Self { w })
    }

    pub fn matrix(&self) -> &SparsePrecision {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.dim()
    }

    /// `τ (I − ρ W)`.
    pub fn car_precision(&self, tau: f64, rho: f64) -> SparsePrecision {
        let mut trip: Vec<(usize, usize, f64)> =
            self.w.upper_entries().map(|(r, c, v)| (r, c, -tau * rho * v)).collect();
        trip.extend((0..self.w.dim()).map(|i| (i, i, tau)));
        SparsePrecision::from_triplets(self.w.dim(), &trip).expect("CAR precision assembly")
    }
}

/// CAR sub-model: `z ~ N(α 1, [τ (I − ρ W)]⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CarImputationSpec<'a> {
    pub adjacency: &'a ScaledAdjacency,
    pub alpha: f64,
    pub tau: f64,
    pub rho: f64,
}

impl<'a> CarImputationSpec<'a> {
    /// Internal hyperparameters are `(log τ, logit ρ, α)`.
    pub fn from_internal(adjacency: &'a ScaledAdjacency, theta: &[f64]) -> Result<Self> {
        if theta.len() != 3 {
            return Err(GmrfError::DimensionMismatch(format!(
                "CAR effect takes 3 internal values, got {}",
                theta.len()
            )));
        }
        Ok(Self { adjacency, alpha: theta[2], tau: theta[0].exp(), rho: expit(theta[1]) })
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.adjacency.dim() != n {
            return Err(GmrfError::DimensionMismatch(format!(
                "adjacency of dimension {} for a covariate of length {n}",
                self.adjacency.dim()
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(GmrfError::InvalidInput(format!("ρ = {} outside (0, 1)", self.rho)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(GmrfError::InvalidInput(format!("precision {} is not positive", self.tau)));
        }
        Ok(())
    }

    pub fn joint(&self) -> (Vec<f64>, SparsePrecision) {
        (vec![self.alpha; self.adjacency.dim()], self.adjacency.car_precision(self.tau, self.rho))
    }
}

/// Either imputation sub-model, for functions that accept both.
#[derive(Debug, Clone, PartialEq)]
pub enum ImputationSpec<'a> {
    LinReg(LinRegImputationSpec<'a>),
    Car(CarImputationSpec<'a>),
}

/// Joint Gaussian effect over all units, stored in (missing, observed) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationEffect {
    pub joint: GaussianBlock,
    /// `index_map[k]` is the data index of position `k` in (missing, observed) order.
    pub index_map: Vec<usize>,
    pub n_missing: usize,
    pub pinning_precision: f64,
}

impl ImputationEffect {
    fn assemble(
        cov: &CovariateWithGaps,
        mis_block: Option<GaussianBlock>,
        pinning_precision: f64,
    ) -> Result<Self> {
        if !(pinning_precision > 0.0 && pinning_precision.is_finite()) {
            return Err(GmrfError::InvalidInput("pinning precision must be positive".into()));
        }
        let part = cov.partition();
        let n_mis = part.mis().len();
        let n = cov.len();
        let mut mean = Vec::with_capacity(n);
        let mut trip = Vec::new();
        if let Some(block) = mis_block {
            mean.extend_from_slice(&block.mean);
            trip.extend(block.precision.upper_entries());
        }
        mean.extend(cov.observed());
        trip.extend((n_mis..n).map(|k| (k, k, pinning_precision)));
        let precision = SparsePrecision::from_triplets(n, &trip)?;
        let index_map = part.mis().iter().chain(part.obs()).copied().collect();
        Ok(Self { joint: GaussianBlock::new(mean, precision)?, index_map, n_missing: n_mis, pinning_precision })
    }

    pub fn dim(&self) -> usize {
        self.index_map.len()
    }

    /// Missing block `(μ_c, Q_c)`, if any entries are missing.
    pub fn missing_block(&self) -> Option<GaussianBlock> {
        if self.n_missing == 0 {
            return None;
        }
        let idx: Vec<usize> = (0..self.n_missing).collect();
        let precision = self.joint.precision.principal(&idx).ok()?;
        Some(GaussianBlock { mean: self.joint.mean[..self.n_missing].to_vec(), precision })
    }

    /// Reorders a (missing, observed)-ordered vector into data order.
    pub fn to_data_order(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (k, &i) in self.index_map.iter().enumerate() {
            out[i] = v[k];
        }
        out
    }

    /// Reorders a data-ordered vector into (missing, observed) order.
    pub fn from_data_order(&self, v: &[f64]) -> Vec<f64> {
        self.index_map.iter().map(|&i| v[i]).collect()
    }

    /// Mean and precision triplets in data order.
    pub fn data_order(&self) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
        let mean = self.to_data_order(&self.joint.mean);
        let trip = self
            .joint
            .precision
            .upper_entries()
            .map(|(r, c, v)| (self.index_map[r], self.index_map[c], v))
            .collect();
        (mean, trip)
    }
}

/// Effect under the linear-regression sub-model: `μ_c = X_mis β`, `Q_c = τ I`.
pub fn build_linreg_effect(
    cov: &CovariateWithGaps,
    spec: &LinRegImputationSpec<'_>,
    pinning_precision: f64,
) -> Result<ImputationEffect> {
    spec.check(cov.len())?;
    let mis = cov.partition().mis();
    let block = if mis.is_empty() {
        None
    } else {
        let mean_all = spec.joint_mean();
        let mean = mis.iter().map(|&i| mean_all[i]).collect();
        Some(GaussianBlock::new(mean, SparsePrecision::diagonal(&vec![spec.tau; mis.len()]))?)
    };
    ImputationEffect::assemble(cov, block, pinning_precision)
}

/// Effect under the CAR sub-model, conditioning the joint `N(α1, τ(I − ρW))` on
/// the observed entries.
pub fn build_car_effect(
    cov: &CovariateWithGaps,
    spec: &CarImputationSpec<'_>,
    pinning_precision: f64,
) -> Result<ImputationEffect> {
    spec.check(cov.len())?;
    let block = if cov.n_missing() == 0 {
        None
    } else {
        let (mu, q) = spec.joint();
        Some(gmrf::condition(&mu, &q, cov.partition(), &cov.observed())?)
    };
    ImputationEffect::assemble(cov, block, pinning_precision)
}

pub fn build_effect(
    cov: &CovariateWithGaps,
    spec: &ImputationSpec<'_>,
    pinning_precision: f64,
) -> Result<ImputationEffect> {
    match spec {
        ImputationSpec::LinReg(s) => build_linreg_effect(cov, s, pinning_precision),
        ImputationSpec::Car(s) => build_car_effect(cov, s, pinning_precision),
    }
}

/// Log base prior of the sub-model hyperparameters on the internal scale,
/// log-Jacobians included.
pub fn base_prior_logdensity(spec: &ImputationSpec<'_>, priors: &ImputationPriors) -> f64 {
    match spec {
        ImputationSpec::LinReg(s) => {
            let coefs: f64 = s.beta.iter().map(|&b| normal_logpdf(b, 0.0, priors.coef_precision)).sum();
            coefs + log_gamma_prior_on_log(s.tau.ln(), priors.tau_shape, priors.tau_rate)
        }
        ImputationSpec::Car(s) => {
            normal_logpdf(s.alpha, 0.0, priors.coef_precision)
                + log_gamma_prior_on_log(s.tau.ln(), priors.tau_shape, priors.tau_rate)
                + normal_logpdf(logit(s.rho), 0.0, priors.logit_rho_precision)
        }
    }
}

/// `log π(z_obs | θ_I) + log π(θ_I)` with the missing block integrated out of the
/// sub-model's joint distribution.
pub fn informative_prior_logdensity(
    cov: &CovariateWithGaps,
    spec: &ImputationSpec<'_>,
    priors: &ImputationPriors,
) -> Result<f64> {
    let z_obs = cov.observed();
    let data_term = match spec {
        ImputationSpec::LinReg(s) => {
            s.check(cov.len())?;
            let mu = s.joint_mean();
            let q = SparsePrecision::diagonal(&vec![s.tau; cov.len()]);
            gmrf::marginal_obs_logdensity(&mu, &q, cov.partition(), &z_obs)?
        }
        ImputationSpec::Car(s) => {
            s.check(cov.len())?;
            let (mu, q) = s.joint();
            gmrf::marginal_obs_logdensity(&mu, &q, cov.partition(), &z_obs)?
        }
    };
    Ok(data_term + base_prior_logdensity(spec, priors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::{adjacency_from_edges, gmrf_logdensity};
    use nalgebra::DVector;

    fn age_design() -> DMatrix<f64> {
        // intercept, 40-59, 60+
        DMatrix::from_row_slice(4, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0])
    }

    #[test]
    fn linreg_prior_mean_for_older_subject() {
        let x = age_design();
        let cov = CovariateWithGaps::new(vec![Some(25.0), Some(27.0), None, Some(24.0)]).unwrap();
        let spec = LinRegImputationSpec { design: &x, beta: vec![30.0, -5.0, -7.0], tau: 0.06 };
        let eff = build_linreg_effect(&cov, &spec, DEFAULT_PINNING_PRECISION).unwrap();
        assert_eq!(eff.n_missing, 1);
        assert_eq!(eff.joint.mean[0], 23.0);
        assert_eq!(eff.joint.precision.get(0, 0), 0.06);
        assert_eq!(eff.index_map, vec![2, 0, 1, 3]);
    }

    #[test]
    fn fully_observed_covariate_is_pinned_only() {
        let x = age_design();
        let cov = CovariateWithGaps::new(vec![Some(1.0), Some(2.0), Some(3.0), Some(4.0)]).unwrap();
        let spec = LinRegImputationSpec { design: &x, beta: vec![0.0; 3], tau: 1.0 };
        let eff = build_linreg_effect(&cov, &spec, 1e10).unwrap();
        assert_eq!(eff.joint.mean, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(eff.joint.precision, SparsePrecision::diagonal(&[1e10; 4]));
        assert!(eff.missing_block().is_none());
    }

    #[test]
    fn linreg_block_equals_generic_conditioning() {
        let x = age_design();
        let cov = CovariateWithGaps::new(vec![None, Some(27.0), None, Some(24.0)]).unwrap();
        let spec = LinRegImputationSpec { design: &x, beta: vec![28.3, -2.1, 0.7], tau: 0.37 };
        let eff = build_linreg_effect(&cov, &spec, 1e10).unwrap();
        let q = SparsePrecision::diagonal(&[0.37; 4]);
        let cond = gmrf::condition(&spec.joint_mean(), &q, cov.partition(), &cov.observed()).unwrap();
        let block = eff.missing_block().unwrap();
        let z = [26.0, 31.0];
        let a = gmrf_logdensity(&z, &block.mean, &block.precision).unwrap();
        let b = gmrf_logdensity(&z, &cond.mean, &cond.precision).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn observed_block_is_pinned_with_zero_cross_terms() {
        let w = adjacency_from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let sa = ScaledAdjacency::from_raw(&w).unwrap();
        let cov = CovariateWithGaps::new(vec![Some(1.0), None, Some(-1.0), None]).unwrap();
        let spec = CarImputationSpec { adjacency: &sa, alpha: 0.2, tau: 1.5, rho: 0.8 };
        let eff = build_car_effect(&cov, &spec, 1e10).unwrap();
        for (r, c, _) in eff.joint.precision.upper_entries() {
            assert!(!(r < 2 && c >= 2), "cross entry ({r},{c})");
        }
        assert_eq!(&eff.joint.mean[2..], &[1.0, -1.0]);
        let data = eff.to_data_order(&eff.from_data_order(&[9.0, 8.0, 7.0, 6.0]));
        assert_eq!(data, vec![9.0, 8.0, 7.0, 6.0]);
    }

    #[test]
    fn car_without_spatial_dependence_reduces_to_iid() {
        let w = adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let sa = ScaledAdjacency::from_raw(&w).unwrap();
        let cov = CovariateWithGaps::new(vec![Some(3.0), None, Some(-2.0)]).unwrap();
        let spec = CarImputationSpec { adjacency: &sa, alpha: 0.5, tau: 2.0, rho: 1e-8 };
        let block = build_car_effect(&cov, &spec, 1e10).unwrap().missing_block().unwrap();
        assert!((block.mean[0] - 0.5).abs() < 1e-6);
        assert!((block.precision.get(0, 0) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn car_path_graph_against_dense_conditioning() {
        let w = adjacency_from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let sa = ScaledAdjacency::from_raw(&w).unwrap();
        let cov = CovariateWithGaps::new(vec![Some(2.0), None, Some(4.0)]).unwrap();
        let spec = CarImputationSpec { adjacency: &sa, alpha: 0.0, tau: 1.0, rho: 0.5 };
        let block = build_car_effect(&cov, &spec, 1e10).unwrap().missing_block().unwrap();
        // dense oracle: covariance of the full CAR vector and Gaussian conditioning
        let s = sa.car_precision(1.0, 0.5).to_dense().try_inverse().unwrap();
        let s_mo = DMatrix::from_row_slice(1, 2, &[s[(1, 0)], s[(1, 2)]]);
        let s_oo = DMatrix::from_row_slice(2, 2, &[s[(0, 0)], s[(0, 2)], s[(2, 0)], s[(2, 2)]]);
        let m = (s_mo * s_oo.try_inverse().unwrap() * DVector::from_vec(vec![2.0, 4.0]))[0];
        assert!((block.mean[0] - m).abs() < 1e-12);
        // the path graph has λ_max = √2, so ρ W_s couples node 1 to each neighbour by 0.5/√2
        let c = 0.5 / 2f64.sqrt();
        assert!((block.mean[0] - c * 6.0).abs() < 1e-12);
    }

    #[test]
    fn linreg_informative_prior_without_missing_values_is_a_sum() {
        let x = age_design();
        let vals = [22.0, 27.5, 31.0, 24.0];
        let cov = CovariateWithGaps::new(vals.iter().map(|&v| Some(v)).collect()).unwrap();
        let spec = LinRegImputationSpec { design: &x, beta: vec![26.0, 1.0, -2.0], tau: 0.1 };
        let priors = ImputationPriors::default();
        let lp = informative_prior_logdensity(&cov, &ImputationSpec::LinReg(spec.clone()), &priors).unwrap();
        let mean = spec.joint_mean();
        let direct: f64 = vals.iter().zip(&mean).map(|(&v, &m)| normal_logpdf(v, m, 0.1)).sum();
        let prior = base_prior_logdensity(&ImputationSpec::LinReg(spec), &priors);
        assert!((lp - direct - prior).abs() < 1e-10);
    }

    #[test]
    fn car_informative_prior_matches_dense_schur_complement() {
        let w = adjacency_from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let sa = ScaledAdjacency::from_raw(&w).unwrap();
        let cov = CovariateWithGaps::new(vec![Some(0.3), None, Some(-0.4), None]).unwrap();
        let spec = CarImputationSpec { adjacency: &sa, alpha: 0.1, tau: 1.7, rho: 0.6 };
        let priors = ImputationPriors::default();
        let spec = ImputationSpec::Car(spec);
        let lp = informative_prior_logdensity(&cov, &spec, &priors).unwrap();
        let qd = sa.car_precision(1.7, 0.6).to_dense();
        let idx_o = [0usize, 2];
        let idx_m = [1usize, 3];
        let q_oo = DMatrix::from_fn(2, 2, |a, b| qd[(idx_o[a], idx_o[b])]);
        let q_om = DMatrix::from_fn(2, 2, |a, b| qd[(idx_o[a], idx_m[b])]);
        let q_mm = DMatrix::from_fn(2, 2, |a, b| qd[(idx_m[a], idx_m[b])]);
        let schur = &q_oo - &q_om * q_mm.try_inverse().unwrap() * q_om.transpose();
        let r = DVector::from_vec(vec![0.3 - 0.1, -0.4 - 0.1]);
        let dense = -std::f64::consts::LN_2 - (std::f64::consts::PI).ln() + 0.5 * schur.determinant().ln()
            - 0.5 * (r.transpose() * &schur * &r)[(0, 0)];
        let prior = base_prior_logdensity(&spec, &priors);
        assert!((lp - prior - dense).abs() < 1e-8);
    }

    #[test]
    fn log_precision_prior_includes_the_jacobian() {
        // Gamma(1, b) on τ with θ = log τ has density b e^{θ} e^{−b e^{θ}}
        let b: f64 = 5e-5;
        for theta in [-2.0, 0.0, 1.5] {
            let direct = b.ln() + theta - b * f64::exp(theta);
            assert!((log_gamma_prior_on_log(theta, 1.0, b) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn all_missing_covariate_is_rejected() {
        assert!(CovariateWithGaps::new(vec![None, None]).is_err());
    }

    #[test]
    fn internal_scales_round_trip() {
        let x = age_design();
        let s = LinRegImputationSpec::from_internal(&x, &[1.0, 2.0, 3.0, 0.5f64.ln()]).unwrap();
        assert!((s.tau - 0.5).abs() < 1e-15);
        let w = adjacency_from_edges(2, &[(0, 1)]).unwrap();
        let sa = ScaledAdjacency::from_raw(&w).unwrap();
        let c = CarImputationSpec::from_internal(&sa, &[0.0, logit(0.9), -1.0]).unwrap();
        assert!((c.rho - 0.9).abs() < 1e-12 && c.tau == 1.0 && c.alpha == -1.0);
    }
}
