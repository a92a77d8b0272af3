//! Hyperparameter exploration on a Hessian-aligned grid and the resulting
//! posterior marginals.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{GmrfError, Result};
use crate::laplace::{evaluate, NewtonSettings, PointEval};
use crate::marginal::{Component, PosteriorMarginal, MARGINAL_POINTS};
use crate::model::{ModelSpec, SubModel, Transform};
use crate::optim::{hessian, nelder_mead, newton_polish};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineSettings {
    /// Grid points per hyperparameter dimension (odd).
    pub grid_points: usize,
    /// Points with `log_post < mode − drop_threshold` are discarded.
    pub drop_threshold: f64,
    pub nm_tol: f64,
    pub nm_max_evals: usize,
    pub nm_initial_step: f64,
    pub hessian_step: f64,
    pub newton: NewtonSettings,
    pub marginal_points: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            grid_points: 5,
            drop_threshold: 10.0,
            nm_tol: 1e-6,
            nm_max_evals: 2000,
            nm_initial_step: 0.5,
            hessian_step: 1e-3,
            newton: NewtonSettings::default(),
            marginal_points: MARGINAL_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperPoint {
    pub theta_internal: Vec<f64>,
    pub log_post: f64,
    pub weight: f64,
}

/// Abscissae (in standard deviations) and weights of a `k`-point rule for
/// `∫ f(z) φ(z) dz` on the evenly spaced nodes `−(k−1)/2, …, (k−1)/2`.
///
/// The weights are interpolatory: they integrate every polynomial of degree
/// `< k` exactly against the standard normal density. When that produces a
/// negative weight (large `k`), the trapezoid weights `φ(z_j)` are used instead.
pub fn standard_normal_rule(k: usize) -> (Vec<f64>, Vec<f64>) {
    let k = k.max(1);
    let half = (k as f64 - 1.0) / 2.0;
    let nodes: Vec<f64> = (0..k).map(|j| j as f64 - half).collect();
    let moments: Vec<f64> = (0..k)
        .map(|m| if m % 2 == 1 { 0.0 } else { (1..m).step_by(2).map(|v| v as f64).product() })
        .collect();
    let vander = DMatrix::from_fn(k, k, |m, j| nodes[j].powi(m as i32));
    let solved = vander.lu().solve(&DVector::from_vec(moments));
    let weights = match solved {
        Some(w) if w.iter().all(|&v| v >= 0.0) => w.iter().copied().collect(),
        _ => {
            let raw: Vec<f64> = nodes.iter().map(|z| (-0.5 * z * z).exp()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        }
    };
    (nodes, weights)
}

/// Mode of the hyperparameter posterior and the Hessian-based scaling.
#[derive(Debug, Clone)]
pub struct ModeInfo {
    pub theta: Vec<f64>,
    pub log_post: f64,
    /// Columns are the grid directions `V Λ^{-1/2}`.
    pub directions: DMatrix<f64>,
    pub warnings: Vec<String>,
    pub evaluations: usize,
}

fn lp_fn<'a>(model: &'a ModelSpec, settings: &'a EngineSettings) -> impl Fn(&[f64]) -> f64 + Sync + 'a {
    move |t: &[f64]| evaluate(model, t, None, &settings.newton).map(|e| e.log_post).unwrap_or(f64::NEG_INFINITY)
}

/// Maximizes `lp` from `start` and derives the grid directions from the
/// finite-difference Hessian at the mode.
pub fn find_mode(lp: &(impl Fn(&[f64]) -> f64 + Sync), start: &[f64], settings: &EngineSettings) -> Result<ModeInfo> {
    let d = start.len();
    let first = nelder_mead(lp, start, settings.nm_initial_step, settings.nm_tol, settings.nm_max_evals);
    let mut evaluations = first.evaluations;
    let mut warnings = Vec::new();
    if !first.value.is_finite() {
        return Err(GmrfError::ExplorationFailed("no finite value of the hyperparameter posterior found".into()));
    }
    // a restart guards against a collapsed simplex
    let second = nelder_mead(lp, &first.x, 0.1, settings.nm_tol, settings.nm_max_evals);
    evaluations += second.evaluations;
    let best = if second.value >= first.value { second } else { first };
    if !best.converged {
        warnings.push(format!("Nelder–Mead stopped after {evaluations} evaluations without meeting its tolerance"));
    }
    let (theta, log_post) = newton_polish(lp, &best.x, best.value, settings.hessian_step, 20);

    let mut directions = DMatrix::zeros(d, d);
    if d > 0 {
        let h = hessian(lp, &theta, log_post, settings.hessian_step);
        let neg = -(h.clone() + h.transpose()) * 0.5;
        if neg.iter().any(|v| !v.is_finite()) {
            return Err(GmrfError::ExplorationFailed("non-finite Hessian at the mode".into()));
        }
        let eig = SymmetricEigen::new(neg);
        let max_pos = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        for j in 0..d {
            let mut lam = eig.eigenvalues[j];
            if !(lam > 0.0) {
                let repl = if max_pos > 0.0 { max_pos } else { 1.0 };
                warnings.push(format!("Hessian eigenvalue {lam:e} at the mode is not positive; replaced by {repl:e}"));
                lam = repl;
            }
            let col = eig.eigenvectors.column(j) / lam.sqrt();
            directions.set_column(j, &col);
        }
    }
    Ok(ModeInfo { theta, log_post, directions, warnings, evaluations })
}

/// Grid abscissae around the mode with the log of their rule weight divided
/// by the standard normal kernel.
fn grid_candidates(mode: &ModeInfo, settings: &EngineSettings) -> Result<Vec<(Vec<f64>, f64)>> {
    let d = mode.theta.len();
    let (nodes, rule) = standard_normal_rule(settings.grid_points);
    let k = nodes.len();
    let total = k.checked_pow(d as u32).ok_or_else(|| GmrfError::ExplorationFailed("grid too large".into()))?;
    Ok((0..total)
        .map(|mut idx| {
            let mut z = vec![0.0; d];
            let mut log_base = 0.0;
            for zk in z.iter_mut() {
                let j = idx % k;
                idx /= k;
                *zk = nodes[j];
                log_base += rule[j].ln() + 0.5 * nodes[j] * nodes[j];
            }
            let shift = &mode.directions * DVector::from_vec(z);
            let theta: Vec<f64> = mode.theta.iter().zip(shift.iter()).map(|(a, b)| a + b).collect();
            (theta, log_base)
        })
        .collect())
}

/// Normalized weights `∝ exp(log_post + log_base)` of the retained points.
fn weights(kept: &[(Vec<f64>, f64, f64)]) -> Vec<HyperPoint> {
    let lmax = kept.iter().map(|(_, lp, b)| lp + b).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = kept.iter().map(|(_, lp, b)| (lp + b - lmax).exp()).collect();
    let s: f64 = raw.iter().sum();
    kept.iter()
        .zip(&raw)
        .map(|((t, lp, _), w)| HyperPoint { theta_internal: t.clone(), log_post: *lp, weight: w / s })
        .collect()
}

/// Explores an arbitrary unnormalized log density with the same mode search,
/// grid and weighting as the model engine.
pub fn explore_log_density(
    lp: &(impl Fn(&[f64]) -> f64 + Sync),
    start: &[f64],
    settings: &EngineSettings,
) -> Result<Vec<HyperPoint>> {
    let mode = find_mode(lp, start, settings)?;
    let mut kept: Vec<(Vec<f64>, f64, f64)> = grid_candidates(&mode, settings)?
        .into_par_iter()
        .map(|(t, b)| {
            let v = lp(&t);
            (t, v, b)
        })
        .filter(|(_, v, _)| v.is_finite() && *v >= mode.log_post - settings.drop_threshold)
        .collect();
    if kept.is_empty() {
        kept.push((mode.theta.clone(), mode.log_post, 0.0));
    }
    Ok(weights(&kept))
}

/// Grid points (with their evaluations) and normalized integration weights.
pub struct Exploration {
    pub mode: ModeInfo,
    pub points: Vec<HyperPoint>,
    pub evals: Vec<PointEval>,
}

pub fn explore(model: &ModelSpec, settings: &EngineSettings) -> Result<Exploration> {
    let lp = lp_fn(model, settings);
    let mode = find_mode(&lp, &model.initial_theta(), settings)?;
    let evaluated: Vec<Option<(PointEval, f64)>> = grid_candidates(&mode, settings)?
        .into_par_iter()
        .map(|(theta, log_base)| evaluate(model, &theta, None, &settings.newton).ok().map(|e| (e, log_base)))
        .collect();
    let mut kept: Vec<(PointEval, f64)> = evaluated
        .into_iter()
        .flatten()
        .filter(|(e, _)| e.log_post >= mode.log_post - settings.drop_threshold)
        .collect();
    if kept.is_empty() {
        // the mode itself is always admissible
        let e = evaluate(model, &mode.theta, None, &settings.newton)?;
        kept.push((e, 0.0));
    }
    let triples: Vec<(Vec<f64>, f64, f64)> = kept.iter().map(|(e, b)| (e.theta.clone(), e.log_post, *b)).collect();
    let points = weights(&triples);
    let evals = kept.into_iter().map(|(e, _)| e).collect();
    Ok(Exploration { mode, points, evals })
}

/// Locates the mode, lays the grid and returns the weighted points.
pub fn explore_hyperparameters(model: &ModelSpec) -> Result<Vec<HyperPoint>> {
    explore(model, &EngineSettings::default()).map(|e| e.points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedMarginal {
    pub name: String,
    pub submodel: SubModel,
    pub marginal: PosteriorMarginal,
}

fn mixture_marginals(
    model: &ModelSpec,
    points: &[HyperPoint],
    evals: &[PointEval],
    n_points: usize,
) -> Result<Vec<NamedMarginal>> {
    let variances: Vec<Vec<f64>> = evals.par_iter().map(|e| e.latent_variances()).collect();
    model
        .layout()
        .latent
        .iter()
        .enumerate()
        .filter(|(_, info)| info.reportable)
        .map(|(i, info)| {
            let comps: Vec<Component> = points
                .iter()
                .zip(evals)
                .zip(&variances)
                .map(|((p, e), v)| (p.weight, e.approx.mode[i], v[i]))
                .collect();
            Ok(NamedMarginal {
                name: info.name.clone(),
                submodel: info.submodel,
                marginal: PosteriorMarginal::from_mixture(&comps, n_points)?,
            })
        })
        .collect()
}

/// Posterior marginals of every reportable latent component as mixtures of
/// the Gaussian-approximation marginals over the weighted points.
pub fn latent_marginals(model: &ModelSpec, points: &[HyperPoint]) -> Result<Vec<NamedMarginal>> {
    if points.is_empty() {
        return Err(GmrfError::EmptyInput("no hyperparameter points".into()));
    }
    let settings = NewtonSettings::default();
    let evals: Vec<PointEval> =
        points.par_iter().map(|p| evaluate(model, &p.theta_internal, None, &settings)).collect::<Result<_>>()?;
    mixture_marginals(model, points, &evals, MARGINAL_POINTS)
}

/// Posterior marginals of the hyperparameters on the reporting scale.
///
/// On the internal scale each marginal is the Gaussian with the quadrature
/// mean and variance of the grid; its density is carried to the reporting
/// scale by the change of variables. Mean and sd on the reporting scale are
/// quadrature moments of the transformed coordinate.
pub fn hyper_marginals(model: &ModelSpec, points: &[HyperPoint], n_points: usize) -> Result<Vec<NamedMarginal>> {
    model
        .layout()
        .hypers
        .iter()
        .enumerate()
        .map(|(k, info)| {
            let m: f64 = points.iter().map(|p| p.weight * p.theta_internal[k]).sum();
            let v: f64 = points.iter().map(|p| p.weight * (p.theta_internal[k] - m).powi(2)).sum();
            let internal = PosteriorMarginal::gaussian(m, v.max(0.0), n_points)?;
            let tf = info.transform;
            let grid: Vec<(f64, f64)> =
                internal.grid.iter().map(|&(x, dens)| (tf.to_user(x), dens / jacobian(tf, x))).collect();
            let user_mean: f64 = points.iter().map(|p| p.weight * tf.to_user(p.theta_internal[k])).sum();
            let user_var: f64 =
                points.iter().map(|p| p.weight * (tf.to_user(p.theta_internal[k]) - user_mean).powi(2)).sum();
            let marginal = PosteriorMarginal {
                grid,
                mean: user_mean,
                sd: user_var.max(0.0).sqrt(),
                q025: tf.to_user(internal.q025),
                q50: tf.to_user(internal.q50),
                q975: tf.to_user(internal.q975),
            };
            Ok(NamedMarginal { name: info.name.clone(), submodel: info.submodel, marginal })
        })
        .collect()
}

fn jacobian(tf: Transform, x: f64) -> f64 {
    match tf {
        Transform::Identity => 1.0,
        Transform::Log => x.exp(),
        Transform::Logit => {
            let p = crate::imputation::expit(x);
            (p * (1.0 - p)).max(f64::MIN_POSITIVE)
        }
    }
}

/// Complete result of a model fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub mode_theta: Vec<f64>,
    pub mode_log_post: f64,
    pub points: Vec<HyperPoint>,
    pub hyper: Vec<NamedMarginal>,
    pub latent: Vec<NamedMarginal>,
    /// Linear-predictor marginals of observations with a missing response.
    pub predictive: Vec<NamedMarginal>,
    pub warnings: Vec<String>,
}

impl Fit {
    /// Looks up a hyperparameter or latent marginal by name.
    pub fn marginal(&self, name: &str) -> Option<&NamedMarginal> {
        self.hyper.iter().chain(&self.latent).chain(&self.predictive).find(|m| m.name == name)
    }

    /// Hyperparameter and latent marginals in reporting order (fixed effects
    /// and hyperparameters of each sub-model, imputed values last).
    pub fn parameters(&self) -> impl Iterator<Item = &NamedMarginal> {
        self.latent.iter().chain(&self.hyper)
    }
}

pub fn fit(model: &ModelSpec, settings: &EngineSettings) -> Result<Fit> {
    let ex = explore(model, settings)?;
    let hyper = hyper_marginals(model, &ex.points, settings.marginal_points)?;
    let latent = mixture_marginals(model, &ex.points, &ex.evals, settings.marginal_points)?;
    let moments: Vec<Vec<(f64, f64)>> = ex.evals.par_iter().map(|e| e.predictor_moments()).collect();
    let mut predictive = Vec::new();
    if let Some(first) = ex.evals.first() {
        for (r, (b, i, _, _)) in first.state.predict_rows.iter().enumerate() {
            let comps: Vec<Component> =
                ex.points.iter().zip(&moments).map(|(p, m)| (p.weight, m[r].0, m[r].1)).collect();
            let block = &model.blocks[*b];
            predictive.push(NamedMarginal {
                name: format!("{}[{}]", block.name, i),
                submodel: block.submodel,
                marginal: PosteriorMarginal::from_mixture(&comps, settings.marginal_points)?,
            });
        }
    }
    let warnings = ex.mode.warnings.clone();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Fit {
        mode_theta: ex.mode.theta.clone(),
        mode_log_post: ex.mode.log_post,
        points: ex.points,
        hyper,
        latent,
        predictive,
        warnings,
    })
}
