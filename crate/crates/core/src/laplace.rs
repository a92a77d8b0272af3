//! Gaussian approximation of the latent field and the Laplace-approximated
//! hyperparameter posterior.

use statrs::function::gamma::ln_gamma;

use crate::cholesky::CholeskyFactor;
use crate::error::{GmrfError, Result};
use crate::gmrf::normal_logpdf;
use crate::imputation::{
    build_effect, informative_prior_logdensity, log_gamma_prior_on_log, CarImputationSpec, ImputationSpec,
    LinRegImputationSpec,
};
use crate::model::{Family, ImputationKind, ModelSpec};
use crate::sparse::SparsePrecision;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Floor on the negated Bernoulli second derivative.
pub const BERNOULLI_HESSIAN_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    /// Convergence threshold on the gradient of the log joint, each coordinate
    /// scaled by the conditional standard deviation `1/√Q*_ii`.
    pub tol: f64,
    pub max_iter: usize,
    /// Largest admissible max-norm of a Newton step.
    pub max_step: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, max_step: 1e6 }
    }
}

/// One observation entering the likelihood: `η = row · x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsTerm {
    pub family: Family,
    pub y: f64,
    pub offset: f64,
    /// Observation precision (Gaussian only).
    pub tau: f64,
    pub row: Vec<(usize, f64)>,
}

impl ObsTerm {
    fn eta(&self, x: &[f64]) -> f64 {
        self.offset + self.row.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    /// Log-likelihood at `η`, its first derivative and the negated (floored)
    /// second derivative.
    fn derivs(&self, eta: f64) -> (f64, f64, f64) {
        match self.family {
            Family::Gaussian => {
                let r = self.y - eta;
                (0.5 * self.tau.ln() - 0.5 * LN_2PI - 0.5 * self.tau * r * r, self.tau * r, self.tau)
            }
            Family::Poisson => {
                let mu = eta.exp();
                (self.y * eta - mu - ln_gamma(self.y + 1.0), self.y - mu, mu)
            }
            Family::Bernoulli => {
                let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
                let p = crate::imputation::expit(eta);
                (self.y * eta - softplus, self.y - p, (p * (1.0 - p)).max(BERNOULLI_HESSIAN_FLOOR))
            }
        }
    }
}

/// Everything that depends on the hyperparameters but not on the latent field.
#[derive(Debug, Clone)]
pub struct ThetaState {
    pub prior_mean: Vec<f64>,
    pub prior_precision: SparsePrecision,
    pub prior_log_det: f64,
    pub log_prior_theta: f64,
    pub terms: Vec<ObsTerm>,
    /// Rows of observations whose response is missing: `(block, unit, row, offset)`.
    pub predict_rows: Vec<(usize, usize, Vec<(usize, f64)>, f64)>,
}

/// Builds the latent prior, the likelihood rows and `log π(θ)` at `theta`.
pub fn theta_state(model: &ModelSpec, theta: &[f64]) -> Result<ThetaState> {
    let layout = model.layout();
    if theta.len() != model.n_hyper() {
        return Err(GmrfError::DimensionMismatch(format!(
            "{} hyperparameters given, model has {}",
            theta.len(),
            model.n_hyper()
        )));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(GmrfError::InvalidInput("non-finite hyperparameter".into()));
    }
    let n = model.n_latent();
    let mut mean = vec![0.0; n];
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(n * 2);
    let mut log_prior = 0.0;

    for (b, block) in model.blocks.iter().enumerate() {
        let off = layout.fixed_offset[b];
        for (k, f) in block.fixed.iter().enumerate() {
            trip.push((off + k, off + k, f.prior_precision));
        }
        if let (Some(h), Some((_, g))) = (layout.precision_hyper[b], &block.precision) {
            log_prior += log_gamma_prior_on_log(theta[h], g.shape, g.rate);
        }
        for (c, &h) in layout.copy_hyper[b].iter().enumerate() {
            let p = block.copies[c].prior;
            log_prior += normal_logpdf(theta[h], p.mean, p.precision);
        }
    }
    for (t, term) in model.imputations.iter().enumerate() {
        let s = layout.imputation_slice[t];
        let slice = &theta[s..s + term.n_hyper()];
        let spec = match &term.kind {
            ImputationKind::LinReg { design, .. } => {
                ImputationSpec::LinReg(LinRegImputationSpec::from_internal(design, slice)?)
            }
            ImputationKind::Car { adjacency, .. } => {
                ImputationSpec::Car(CarImputationSpec::from_internal(adjacency, slice)?)
            }
        };
        log_prior += informative_prior_logdensity(&term.covariate, &spec, &model.imputation_priors)?;
        let effect = build_effect(&term.covariate, &spec, model.pinning_precision)?;
        let (m, q) = effect.data_order();
        let off = layout.effect_offset[t];
        for (i, v) in m.into_iter().enumerate() {
            mean[off + i] = v;
        }
        trip.extend(q.into_iter().map(|(r, c, v)| (off + r, off + c, v)));
    }
    let prior_precision = SparsePrecision::from_triplets(n, &trip)?;
    let prior_log_det =
        CholeskyFactor::factorize_with_ordering(&prior_precision, layout.ordering.clone())?.log_det();

    let mut terms = Vec::new();
    let mut predict_rows = Vec::new();
    for (b, block) in model.blocks.iter().enumerate() {
        let off = layout.fixed_offset[b];
        let tau = layout.precision_hyper[b].map(|h| theta[h].exp()).unwrap_or(1.0);
        for i in 0..block.len() {
            let mut row = Vec::with_capacity(block.fixed.len() + block.copies.len());
            for (k, f) in block.fixed.iter().enumerate() {
                if f.values[i] != 0.0 {
                    row.push((off + k, f.values[i]));
                }
            }
            for (c, &h) in layout.copy_hyper[b].iter().enumerate() {
                let e = layout.copy_effect[b][c];
                row.push((layout.effect_offset[e] + i, theta[h]));
            }
            match block.response[i] {
                Some(y) => terms.push(ObsTerm { family: block.family, y, offset: block.offset[i], tau, row }),
                None => predict_rows.push((b, i, row, block.offset[i])),
            }
        }
    }
    Ok(ThetaState { prior_mean: mean, prior_precision, prior_log_det, log_prior_theta: log_prior, terms, predict_rows })
}

/// Gaussian approximation `π_G(x | y, θ)` at the mode of the latent field.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mode: Vec<f64>,
    pub precision: SparsePrecision,
    pub factor: CholeskyFactor,
    pub converged: bool,
    pub iterations: usize,
    /// Log-likelihood at the mode.
    pub log_lik: f64,
}

impl ThetaState {
    pub fn log_lik(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.derivs(t.eta(x)).0).sum()
    }

    /// `log π(x | θ)` including normalizing constants.
    pub fn log_prior_latent(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.prior_mean).map(|(a, b)| a - b).collect();
        -0.5 * x.len() as f64 * LN_2PI + 0.5 * self.prior_log_det - 0.5 * self.prior_precision.quad_form(&r)
    }

    fn log_joint_unnorm(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.prior_mean).map(|(a, b)| a - b).collect();
        self.log_lik(x) - 0.5 * self.prior_precision.quad_form(&r)
    }

    /// Precision `Q + Aᵀ H A`, right-hand side `Q μ + Aᵀ (g + H A x)` and
    /// gradient of the log joint, all linearized at `x`.
    fn system(&self, x: &[f64]) -> Result<(SparsePrecision, Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let mut trip: Vec<(usize, usize, f64)> = self.prior_precision.upper_entries().collect();
        let mut rhs = self.prior_precision.mul_vec(&self.prior_mean);
        let r: Vec<f64> = x.iter().zip(&self.prior_mean).map(|(a, b)| a - b).collect();
        let mut grad: Vec<f64> = self.prior_precision.mul_vec(&r).into_iter().map(|v| -v).collect();
        for t in &self.terms {
            let lin = t.eta(x) - t.offset;
            let (_, d1, h) = t.derivs(lin + t.offset);
            let b = d1 + h * lin;
            for (a, &(j, aj)) in t.row.iter().enumerate() {
                rhs[j] += aj * b;
                grad[j] += aj * d1;
                for &(k, ak) in &t.row[a..] {
                    trip.push((j, k, h * aj * ak));
                }
            }
        }
        Ok((SparsePrecision::from_triplets(n, &trip)?, rhs, grad))
    }

    /// Newton–Raphson on the latent field from `x0`, with step halving whenever
    /// the log joint decreases.
    pub fn gaussian_approximation(
        &self,
        x0: &[f64],
        ordering: &[usize],
        settings: &NewtonSettings,
    ) -> Result<GaussianApprox> {
        let mut x = x0.to_vec();
        let mut f_x = self.log_joint_unnorm(&x);
        let mut iterations = 0;
        loop {
            let (q, rhs, grad) = self.system(&x)?;
            let factor = CholeskyFactor::factorize_with_ordering(&q, ordering.to_vec())?;
            let scaled = grad
                .iter()
                .zip(q.diag())
                .map(|(g, d)| (g / d.sqrt()).abs())
                .fold(0.0, f64::max);
            if !scaled.is_finite() {
                return Err(GmrfError::NewtonDiverged("non-finite gradient".into()));
            }
            if scaled < settings.tol || iterations >= settings.max_iter {
                let converged = scaled < settings.tol;
                if !converged {
                    return Err(GmrfError::NewtonDiverged(format!(
                        "no convergence after {iterations} iterations (scaled gradient {scaled:e})"
                    )));
                }
                let log_lik = self.log_lik(&x);
                return Ok(GaussianApprox { mode: x, precision: q, factor, converged, iterations, log_lik });
            }
            let target = factor.solve(&rhs);
            let step: Vec<f64> = target.iter().zip(&x).map(|(a, b)| a - b).collect();
            let step_norm = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            if !(step_norm <= settings.max_step) {
                return Err(GmrfError::NewtonDiverged(format!("step of size {step_norm:e}")));
            }
            let mut lambda = 1.0;
            let mut accepted = false;
            let mut x_new = target;
            for _ in 0..30 {
                let f_new = self.log_joint_unnorm(&x_new);
                if f_new.is_finite() && f_new >= f_x - 1e-10 * f_x.abs().max(1.0) {
                    f_x = f_new;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
                x_new = x.iter().zip(&step).map(|(a, s)| a + lambda * s).collect();
            }
            if !accepted {
                return Err(GmrfError::NewtonDiverged("line search failed".into()));
            }
            x = x_new;
            iterations += 1;
        }
    }

    /// Laplace approximation of `log π(θ | y)` (up to a constant) given the
    /// Gaussian approximation at the mode.
    pub fn laplace_log_posterior(&self, approx: &GaussianApprox) -> f64 {
        let r: Vec<f64> = approx.mode.iter().zip(&self.prior_mean).map(|(a, b)| a - b).collect();
        approx.log_lik + 0.5 * self.prior_log_det - 0.5 * self.prior_precision.quad_form(&r)
            - 0.5 * approx.factor.log_det()
            + self.log_prior_theta
    }
}

/// Gaussian approximation of the latent field at `theta`, started from the prior mean.
pub fn gaussian_approximation(model: &ModelSpec, theta: &[f64]) -> Result<GaussianApprox> {
    let state = theta_state(model, theta)?;
    state.gaussian_approximation(&state.prior_mean.clone(), &model.layout().ordering, &NewtonSettings::default())
}

/// Laplace-approximated unnormalized log posterior of the hyperparameters;
/// `−∞` where the latent approximation fails.
pub fn log_posterior_theta(model: &ModelSpec, theta: &[f64]) -> f64 {
    evaluate(model, theta, None, &NewtonSettings::default()).map(|e| e.log_post).unwrap_or(f64::NEG_INFINITY)
}

/// Result of one hyperparameter evaluation.
#[derive(Debug, Clone)]
pub struct PointEval {
    pub theta: Vec<f64>,
    pub log_post: f64,
    pub state: ThetaState,
    pub approx: GaussianApprox,
}

pub fn evaluate(model: &ModelSpec, theta: &[f64], x0: Option<&[f64]>, settings: &NewtonSettings) -> Result<PointEval> {
    let state = theta_state(model, theta)?;
    let start = match x0 {
        Some(x) => {
            // keep pinned entries at their data values; only the free part is warm-started
            x.to_vec()
        }
        None => state.prior_mean.clone(),
    };
    let approx = state.gaussian_approximation(&start, &model.layout().ordering, settings)?;
    let log_post = state.laplace_log_posterior(&approx);
    if !log_post.is_finite() {
        return Err(GmrfError::NewtonDiverged("non-finite Laplace approximation".into()));
    }
    Ok(PointEval { theta: theta.to_vec(), log_post, state, approx })
}

impl PointEval {
    /// Marginal variances of the latent field under the Gaussian approximation.
    pub fn latent_variances(&self) -> Vec<f64> {
        self.approx.factor.marginal_variances()
    }

    /// Mean and variance of the linear predictor of every missing-response observation.
    pub fn predictor_moments(&self) -> Vec<(f64, f64)> {
        let n = self.approx.mode.len();
        self.state
            .predict_rows
            .iter()
            .map(|(_, _, row, offset)| {
                let mut a = vec![0.0; n];
                for &(j, v) in row {
                    a[j] += v;
                }
                let mean = offset + row.iter().map(|&(j, v)| v * self.approx.mode[j]).sum::<f64>();
                (mean, self.approx.factor.inverse_quad(&a))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FixedEffect, LikelihoodBlock, SubModel};

    fn gaussian_model(y: &[f64]) -> ModelSpec {
        let n = y.len();
        let x1: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let block = LikelihoodBlock::new("y", SubModel::Analysis, Family::Gaussian, y.iter().map(|&v| Some(v)).collect())
            .with_fixed(FixedEffect::intercept("a", n))
            .with_fixed(FixedEffect::new("b", x1));
        ModelSpec::new(vec![block], vec![]).unwrap()
    }

    #[test]
    fn gaussian_likelihood_converges_in_one_step_to_gls() {
        let y = [0.3, 1.1, 0.9, 2.0, 1.7, 2.4];
        let m = gaussian_model(&y);
        let theta = [0.7];
        let g = gaussian_approximation(&m, &theta).unwrap();
        assert!(g.converged);
        assert_eq!(g.iterations, 1);
        // generalized least squares with the prior precision as a ridge
        let n = y.len();
        let x = nalgebra::DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 / n as f64 - 0.5 });
        let tau = 0.7f64.exp();
        let lhs = x.transpose() * &x * tau + nalgebra::DMatrix::identity(2, 2) * 0.001;
        let rhs = x.transpose() * nalgebra::DVector::from_column_slice(&y) * tau;
        let beta = lhs.lu().solve(&rhs).unwrap();
        assert!((g.mode[0] - beta[0]).abs() < 1e-10);
        assert!((g.mode[1] - beta[1]).abs() < 1e-10);
    }

    #[test]
    fn poisson_intercept_matches_scalar_newton() {
        let block = LikelihoodBlock::new("y", SubModel::Analysis, Family::Poisson, vec![Some(3.0)])
            .with_fixed(FixedEffect::intercept("a", 1));
        let m = ModelSpec::new(vec![block], vec![]).unwrap();
        let g = gaussian_approximation(&m, &[]).unwrap();
        // root of 3 − e^x − 0.001 x = 0 by scalar Newton
        let mut x: f64 = 1.0;
        for _ in 0..100 {
            let f = 3.0 - x.exp() - 0.001 * x;
            let df = -x.exp() - 0.001;
            x -= f / df;
        }
        assert!((g.mode[0] - x).abs() < 1e-8);
        assert!(g.converged);
    }

    #[test]
    fn bernoulli_all_zero_stays_finite() {
        let n = 10;
        let block = LikelihoodBlock::new("m", SubModel::Missingness, Family::Bernoulli, vec![Some(0.0); n])
            .with_fixed(FixedEffect::intercept("a", n));
        let m = ModelSpec::new(vec![block], vec![]).unwrap();
        let g = gaussian_approximation(&m, &[]).unwrap();
        assert!(g.converged);
        assert!(g.mode[0] < 0.0 && g.mode[0].is_finite());
    }

    #[test]
    fn laplace_is_exact_for_a_conjugate_model() {
        let y = [0.3, -0.4, 1.2, 0.8];
        let n = y.len();
        let block = LikelihoodBlock::new("y", SubModel::Analysis, Family::Gaussian, y.iter().map(|&v| Some(v)).collect())
            .with_fixed(FixedEffect::intercept("a", n));
        let m = ModelSpec::new(vec![block], vec![]).unwrap();
        for theta in [-1.0, 0.0, 1.3] {
            let lp = log_posterior_theta(&m, &[theta]);
            // y ~ N(0, τ⁻¹ I + c 11ᵀ): closed-form determinant and inverse (Sherman–Morrison)
            let tau = f64::exp(theta);
            let c = 1000.0;
            let nf = n as f64;
            let sum: f64 = y.iter().sum();
            let ss: f64 = y.iter().map(|v| v * v).sum();
            let log_det = -nf * theta + (1.0 + c * nf * tau).ln();
            let quad = tau * (ss - c * tau * sum * sum / (1.0 + c * nf * tau));
            let lml = -0.5 * nf * LN_2PI - 0.5 * log_det - 0.5 * quad;
            let exact = lml + log_gamma_prior_on_log(theta, 1.0, 5e-5);
            assert!((lp - exact).abs() < 1e-8, "θ = {theta}: {lp} vs {exact}");
        }
    }
}
