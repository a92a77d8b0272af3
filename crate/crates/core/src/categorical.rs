//! Multiple imputation of a categorical covariate through the
//! multinomial–Poisson transformation, with equal-weight pooling of the
//! per-dataset posterior marginals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{GmrfError, Result};
use crate::explore::{fit, EngineSettings, NamedMarginal};
use crate::laplace::{evaluate, NewtonSettings};
use crate::marginal::{trapezoid, PosteriorMarginal};
use crate::model::{Family, FixedEffect, LikelihoodBlock, ModelSpec, SubModel};

/// Abscissae of the common grid used when pooling marginals defined on different grids.
pub const POOLED_GRID_POINTS: usize = 151;

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalWithGaps {
    pub levels: Vec<String>,
    /// Level index per unit.
    pub values: Vec<Option<usize>>,
    pub stratum_labels: Vec<String>,
    /// Stratum index per unit.
    pub strata: Vec<usize>,
}

impl CategoricalWithGaps {
    /// `levels` fixes the category order; `grouping` gives each unit's stratum
    /// label (strata are ordered by first appearance).
    pub fn new(levels: Vec<String>, values: &[Option<String>], grouping: &[String]) -> Result<Self> {
        if levels.len() < 2 {
            return Err(GmrfError::InvalidInput("a categorical covariate needs at least two levels".into()));
        }
        if values.len() != grouping.len() {
            return Err(GmrfError::DimensionMismatch(format!(
                "{} values and {} grouping labels",
                values.len(),
                grouping.len()
            )));
        }
        if values.is_empty() {
            return Err(GmrfError::EmptyInput("categorical covariate has no units".into()));
        }
        let values = values
            .iter()
            .map(|v| match v {
                None => Ok(None),
                Some(s) => levels
                    .iter()
                    .position(|l| l == s)
                    .map(Some)
                    .ok_or_else(|| GmrfError::InvalidInput(format!("label `{s}` is not a declared level"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if values.iter().all(Option::is_none) {
            return Err(GmrfError::EmptyInput("categorical covariate has no observed units".into()));
        }
        let mut stratum_labels: Vec<String> = Vec::new();
        let strata = grouping
            .iter()
            .map(|g| match stratum_labels.iter().position(|l| l == g) {
                Some(s) => s,
                None => {
                    stratum_labels.push(g.clone());
                    stratum_labels.len() - 1
                }
            })
            .collect();
        Ok(Self { levels, values, stratum_labels, strata })
    }

    /// Levels sorted lexicographically over the observed labels.
    pub fn from_labels(values: &[Option<String>], grouping: &[String]) -> Result<Self> {
        let mut levels: Vec<String> = values.iter().flatten().cloned().collect();
        levels.sort();
        levels.dedup();
        Self::new(levels, values, grouping)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Refines the strata by a split of a continuous outcome at its observed
    /// median (`≤ median`, `> median`, and a separate group for missing outcomes).
    pub fn refined_by_outcome(&self, outcome: &[Option<f64>]) -> Result<Self> {
        if outcome.len() != self.len() {
            return Err(GmrfError::DimensionMismatch("outcome length differs from the covariate".into()));
        }
        let mut obs: Vec<f64> = outcome.iter().flatten().copied().collect();
        if obs.is_empty() {
            return Err(GmrfError::EmptyInput("outcome has no observed values".into()));
        }
        obs.sort_by(|a, b| a.partial_cmp(b).expect("finite outcome"));
        let mid = obs.len() / 2;
        let median = if obs.len() % 2 == 1 { obs[mid] } else { 0.5 * (obs[mid - 1] + obs[mid]) };
        let grouping: Vec<String> = self
            .strata
            .iter()
            .zip(outcome)
            .map(|(&s, y)| {
                let part = match y {
                    Some(v) if *v <= median => "low",
                    Some(_) => "high",
                    None => "NA",
                };
                format!("{}|{}", self.stratum_labels[s], part)
            })
            .collect();
        let labels: Vec<Option<String>> = self.values.iter().map(|v| v.map(|k| self.levels[k].clone())).collect();
        Self::new(self.levels.clone(), &labels, &grouping)
    }
}

/// Category probabilities per stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityTable {
    pub levels: Vec<String>,
    pub strata: Vec<String>,
    /// `probabilities[s][k]`, rows summing to one.
    pub probabilities: Vec<Vec<f64>>,
    /// Strata without observed units, filled with the marginal level frequencies.
    pub degenerate: Vec<String>,
}

impl ProbabilityTable {
    pub fn get(&self, stratum: &str, level: &str) -> Option<f64> {
        let s = self.strata.iter().position(|x| x == stratum)?;
        let k = self.levels.iter().position(|x| x == level)?;
        Some(self.probabilities[s][k])
    }
}

/// Fits the saturated Poisson log-linear model (intercept, stratum and level
/// main effects, stratum × level interactions; normal priors with precision
/// 0.001) to the stratum × level counts and normalizes the fitted rates
/// `exp(E[η])` within each stratum.
pub fn fit_multinomial_poisson(
    cat: &CategoricalWithGaps,
    include_outcome: bool,
    outcome: Option<&[Option<f64>]>,
) -> Result<ProbabilityTable> {
    let cat = if include_outcome {
        let y = outcome.ok_or_else(|| GmrfError::InvalidInput("include_outcome needs an outcome".into()))?;
        cat.refined_by_outcome(y)?
    } else {
        cat.clone()
    };
    let n_s = cat.stratum_labels.len();
    let n_k = cat.levels.len();
    let mut counts = vec![vec![0.0; n_k]; n_s];
    for (v, &s) in cat.values.iter().zip(&cat.strata) {
        if let Some(k) = v {
            counts[s][*k] += 1.0;
        }
    }
    let observed_strata: Vec<usize> = (0..n_s).filter(|&s| counts[s].iter().sum::<f64>() > 0.0).collect();
    let degenerate: Vec<String> =
        (0..n_s).filter(|s| !observed_strata.contains(s)).map(|s| cat.stratum_labels[s].clone()).collect();
    for d in &degenerate {
        log::warn!("stratum `{d}` has no observed units; using the marginal level frequencies");
    }

    // cells of the observed strata, in stratum-major order
    let cells: Vec<(usize, usize)> = observed_strata.iter().flat_map(|&s| (0..n_k).map(move |k| (s, k))).collect();
    let n = cells.len();
    let response: Vec<Option<f64>> = cells.iter().map(|&(s, k)| Some(counts[s][k])).collect();
    let mut block = LikelihoodBlock::new("counts", SubModel::Imputation, Family::Poisson, response)
        .with_fixed(FixedEffect::intercept("mu", n));
    for (a, &s) in observed_strata.iter().enumerate().skip(1) {
        let col = cells.iter().map(|&(cs, _)| if cs == s { 1.0 } else { 0.0 }).collect();
        block = block.with_fixed(FixedEffect::new(format!("stratum[{a}]"), col));
    }
    for k in 1..n_k {
        let col = cells.iter().map(|&(_, ck)| if ck == k { 1.0 } else { 0.0 }).collect();
        block = block.with_fixed(FixedEffect::new(format!("level[{k}]"), col));
    }
    for (a, &s) in observed_strata.iter().enumerate().skip(1) {
        for k in 1..n_k {
            let col = cells.iter().map(|&(cs, ck)| if cs == s && ck == k { 1.0 } else { 0.0 }).collect();
            block = block.with_fixed(FixedEffect::new(format!("stratum[{a}]:level[{k}]"), col));
        }
    }
    let model = ModelSpec::new(vec![block], vec![])?;
    // no hyperparameters: the Gaussian approximation at θ = () is the whole fit
    let eval = evaluate(&model, &[], None, &NewtonSettings::default())?;
    let eta: Vec<f64> = eval.state.terms.iter().map(|t| t.row.iter().map(|&(j, a)| a * eval.approx.mode[j]).sum()).collect();

    let total: Vec<f64> = (0..n_k).map(|k| (0..n_s).map(|s| counts[s][k]).sum()).collect();
    let grand: f64 = total.iter().sum();
    let mut probabilities = vec![vec![0.0; n_k]; n_s];
    for (a, &s) in observed_strata.iter().enumerate() {
        let row = &eta[a * n_k..(a + 1) * n_k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|e| (e - m).exp()).sum();
        probabilities[s] = row.iter().map(|e| (e - m).exp() / z).collect();
    }
    for s in 0..n_s {
        if !observed_strata.contains(&s) {
            probabilities[s] = total.iter().map(|t| t / grand).collect();
        }
    }
    Ok(ProbabilityTable { levels: cat.levels.clone(), strata: cat.stratum_labels.clone(), probabilities, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationDraws {
    pub seed: u64,
    /// Completed level indices, one vector per draw.
    pub draws: Vec<Vec<usize>>,
}

impl ImputationDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Fills every missing unit independently from its stratum's distribution.
/// When the table was fit with `include_outcome`, pass the outcome-refined
/// covariate so that the strata match.
/// With no missing entries the `L` draws collapse to the single observed dataset.
pub fn draw_completions(
    table: &ProbabilityTable,
    cat: &CategoricalWithGaps,
    l: usize,
    seed: u64,
) -> Result<ImputationDraws> {
    if l == 0 {
        return Err(GmrfError::InvalidInput("at least one draw is required".into()));
    }
    let strata: Vec<usize> = cat
        .strata
        .iter()
        .map(|&s| {
            let label = &cat.stratum_labels[s];
            table
                .strata
                .iter()
                .position(|t| t == label)
                .ok_or_else(|| GmrfError::InvalidInput(format!("stratum `{label}` is not in the probability table")))
        })
        .collect::<Result<_>>()?;
    if cat.n_missing() == 0 {
        let complete = cat.values.iter().map(|v| v.expect("no missing entries")).collect();
        return Ok(ImputationDraws { seed, draws: vec![complete] });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws = (0..l)
        .map(|_| {
            cat.values
                .iter()
                .zip(&strata)
                .map(|(v, &s)| match v {
                    Some(k) => *k,
                    None => {
                        let u: f64 = rng.random();
                        let p = &table.probabilities[s];
                        let mut acc = 0.0;
                        p.iter()
                            .position(|&pk| {
                                acc += pk;
                                u < acc
                            })
                            .unwrap_or(p.len() - 1)
                    }
                })
                .collect()
        })
        .collect();
    Ok(ImputationDraws { seed, draws })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledMarginal {
    pub name: String,
    pub submodel: SubModel,
    pub per_draw: Vec<PosteriorMarginal>,
    pub pooled: PosteriorMarginal,
}

/// Equal-weight average of per-draw marginals.
///
/// The pooled density is the mean of the per-draw densities, on the shared
/// abscissae when all draws use the same grid and otherwise on a common
/// 151-point grid spanning the union of supports (linear interpolation).
/// Mean and sd are the exact moments of the equal-weight mixture; quantiles
/// come from the pooled grid.
pub fn pool(per_draw: &[PosteriorMarginal]) -> Result<PosteriorMarginal> {
    let first = per_draw.first().ok_or_else(|| GmrfError::EmptyInput("nothing to pool".into()))?;
    if per_draw.iter().all(|m| m == first) {
        return Ok(first.clone());
    }
    let l = per_draw.len() as f64;
    let shared = per_draw.iter().all(|m| {
        m.grid.len() == first.grid.len() && m.grid.iter().zip(&first.grid).all(|(a, b)| a.0 == b.0)
    });
    let grid: Vec<(f64, f64)> = if shared {
        (0..first.grid.len())
            .map(|i| (first.grid[i].0, per_draw.iter().map(|m| m.grid[i].1).sum::<f64>() / l))
            .collect()
    } else {
        let lo = per_draw.iter().map(|m| m.support().0).fold(f64::INFINITY, f64::min);
        let hi = per_draw.iter().map(|m| m.support().1).fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (POOLED_GRID_POINTS - 1) as f64;
        (0..POOLED_GRID_POINTS)
            .map(|i| {
                let x = if i + 1 == POOLED_GRID_POINTS { hi } else { lo + step * i as f64 };
                (x, per_draw.iter().map(|m| m.density_at(x)).sum::<f64>() / l)
            })
            .collect()
    };
    if !(trapezoid(&grid) > 0.0) {
        return Err(GmrfError::InvalidInput("pooled density has zero mass".into()));
    }
    let mut pooled = PosteriorMarginal::from_grid(grid)?;
    let mean = per_draw.iter().map(|m| m.mean).sum::<f64>() / l;
    let second = per_draw.iter().map(|m| m.sd * m.sd + m.mean * m.mean).sum::<f64>() / l;
    pooled.mean = mean;
    pooled.sd = (second - mean * mean).max(0.0).sqrt();
    Ok(pooled)
}

/// Pools marginal maps from several completed datasets by name.
pub fn pool_marginals(per_draw: &[Vec<NamedMarginal>]) -> Result<Vec<PooledMarginal>> {
    let first = per_draw.first().ok_or_else(|| GmrfError::EmptyInput("no per-draw marginals".into()))?;
    first
        .iter()
        .map(|m| {
            let parts = per_draw
                .iter()
                .map(|map| {
                    map.iter()
                        .find(|x| x.name == m.name)
                        .map(|x| x.marginal.clone())
                        .ok_or_else(|| GmrfError::InvalidInput(format!("marginal `{}` missing from a draw", m.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PooledMarginal { name: m.name.clone(), submodel: m.submodel, pooled: pool(&parts)?, per_draw: parts })
        })
        .collect()
}

/// Fits the model built from every completed dataset (in parallel) and pools
/// the resulting marginals.
pub fn fit_completed_datasets(
    draws: &ImputationDraws,
    build: impl Fn(&[usize]) -> Result<ModelSpec> + Sync,
    settings: &EngineSettings,
) -> Result<Vec<PooledMarginal>> {
    let maps: Vec<Vec<NamedMarginal>> = draws
        .draws
        .par_iter()
        .map(|d| {
            let f = fit(&build(d)?, settings)?;
            Ok(f.parameters().cloned().collect())
        })
        .collect::<Result<_>>()?;
    pool_marginals(&maps)
}
