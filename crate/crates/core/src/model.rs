//! Declarative description of a joint latent Gaussian model.
//!
//! A model is a list of likelihood blocks (each with its own response, family,
//! fixed effects and copies of imputation effects) plus a list of imputation
//! effects. [`ModelSpec::new`] validates the declaration and compiles the index
//! layout used by the engine:
//!
//! * hyperparameters: non-missingness blocks (precision, then copy coefficients),
//!   then imputation slices, then missingness blocks;
//! * latent field: fixed effects block by block, then one entry per unit for every
//!   imputation effect (in data order).

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;

use crate::error::{GmrfError, Result};
use crate::imputation::{
    expit, logit, CovariateWithGaps, ImputationPriors, ScaledAdjacency, DEFAULT_PINNING_PRECISION,
};
use crate::ordering::minimum_degree;
use crate::sparse::SparsePrecision;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Identity link, precision hyperparameter.
    Gaussian,
    /// Log link with an additive offset (log expected counts).
    Poisson,
    /// Logit link.
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubModel {
    Analysis,
    Imputation,
    Missingness,
}

impl fmt::Display for SubModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubModel::Analysis => "Analysis",
            SubModel::Imputation => "Imputation",
            SubModel::Missingness => "Missingness",
        })
    }
}

/// Map from the internal (unconstrained) scale to the reporting scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    pub fn to_user(self, theta: f64) -> f64 {
        match self {
            Transform::Identity => theta,
            Transform::Log => theta.exp(),
            Transform::Logit => expit(theta),
        }
    }

    pub fn to_internal(self, value: f64) -> f64 {
        match self {
            Transform::Identity => value,
            Transform::Log => value.ln(),
            Transform::Logit => logit(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalPrior {
    pub mean: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 5e-5 }
    }
}

/// Coefficient on a fully observed column.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffect {
    pub name: String,
    pub values: Vec<f64>,
    pub prior_precision: f64,
}

impl FixedEffect {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values, prior_precision: 0.001 }
    }

    pub fn intercept(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, vec![1.0; n])
    }
}

/// An imputation effect entering a linear predictor scaled by a coefficient
/// hyperparameter: observation `i` receives `coefficient · z_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyTerm {
    pub name: String,
    pub effect: String,
    pub prior: NormalPrior,
    pub initial: f64,
}

impl CopyTerm {
    pub fn new(name: impl Into<String>, effect: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            effect: effect.into(),
            prior: NormalPrior { mean: 0.0, precision: 0.001 },
            initial: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodBlock {
    pub name: String,
    pub submodel: SubModel,
    pub family: Family,
    pub response: Vec<Option<f64>>,
    pub offset: Vec<f64>,
    pub fixed: Vec<FixedEffect>,
    pub copies: Vec<CopyTerm>,
    /// Name and prior of the Gaussian observation precision.
    pub precision: Option<(String, GammaPrior)>,
}

impl LikelihoodBlock {
    pub fn new(name: impl Into<String>, submodel: SubModel, family: Family, response: Vec<Option<f64>>) -> Self {
        let n = response.len();
        let precision = (family == Family::Gaussian).then(|| ("tau".to_string(), GammaPrior::default()));
        Self {
            name: name.into(),
            submodel,
            family,
            response,
            offset: vec![0.0; n],
            fixed: Vec::new(),
            copies: Vec::new(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.response.is_empty()
    }

    pub fn with_fixed(mut self, f: FixedEffect) -> Self {
        self.fixed.push(f);
        self
    }

    pub fn with_copy(mut self, c: CopyTerm) -> Self {
        self.copies.push(c);
        self
    }

    pub fn with_offset(mut self, offset: Vec<f64>) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_precision_name(mut self, name: impl Into<String>) -> Self {
        if let Some(p) = self.precision.as_mut() {
            p.0 = name.into();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImputationKind {
    /// Linear regression on a fully observed design (intercept column first);
    /// `coef_names` label the design columns.
    LinReg { design: DMatrix<f64>, coef_names: Vec<String>, tau_name: String },
    /// CAR model on a scaled adjacency; hyperparameter names are `(τ, ρ, α)`.
    Car { adjacency: ScaledAdjacency, names: [String; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationTerm {
    pub name: String,
    pub covariate: CovariateWithGaps,
    pub kind: ImputationKind,
}

impl ImputationTerm {
    pub fn n_hyper(&self) -> usize {
        match &self.kind {
            ImputationKind::LinReg { design, .. } => design.ncols() + 1,
            ImputationKind::Car { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperRole {
    Precision { block: usize },
    Copy { block: usize, copy: usize },
    Imputation { term: usize, slot: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperInfo {
    pub name: String,
    pub submodel: SubModel,
    pub transform: Transform,
    pub role: HyperRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentRole {
    Fixed { block: usize, index: usize },
    Effect { term: usize, unit: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentInfo {
    pub name: String,
    pub submodel: SubModel,
    pub role: LatentRole,
    /// `false` for pinned (observed) imputation entries.
    pub reportable: bool,
}

/// Compiled index layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub hypers: Vec<HyperInfo>,
    pub latent: Vec<LatentInfo>,
    /// First latent index of each block's fixed effects.
    pub fixed_offset: Vec<usize>,
    /// First latent index of each imputation effect.
    pub effect_offset: Vec<usize>,
    /// First hyperparameter index of each imputation slice.
    pub imputation_slice: Vec<usize>,
    /// Hyperparameter index of each block's precision, if any.
    pub precision_hyper: Vec<Option<usize>>,
    /// Hyperparameter index of each block's copy terms.
    pub copy_hyper: Vec<Vec<usize>>,
    /// Imputation effect index of each block's copy terms.
    pub copy_effect: Vec<Vec<usize>>,
    /// Fill-reducing ordering of the latent precision pattern.
    pub ordering: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub blocks: Vec<LikelihoodBlock>,
    pub imputations: Vec<ImputationTerm>,
    pub pinning_precision: f64,
    pub imputation_priors: ImputationPriors,
    layout: Layout,
}

impl ModelSpec {
    pub fn new(blocks: Vec<LikelihoodBlock>, imputations: Vec<ImputationTerm>) -> Result<Self> {
        Self::with_settings(blocks, imputations, DEFAULT_PINNING_PRECISION, ImputationPriors::default())
    }

    pub fn with_settings(
        blocks: Vec<LikelihoodBlock>,
        imputations: Vec<ImputationTerm>,
        pinning_precision: f64,
        imputation_priors: ImputationPriors,
    ) -> Result<Self> {
        if blocks.is_empty() {
            return Err(GmrfError::EmptyInput("model has no likelihood blocks".into()));
        }
        if !(pinning_precision > 0.0 && pinning_precision.is_finite()) {
            return Err(GmrfError::InvalidInput("pinning precision must be positive".into()));
        }
        validate(&blocks, &imputations)?;
        let layout = compile(&blocks, &imputations)?;
        Ok(Self { blocks, imputations, pinning_precision, imputation_priors, layout })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_hyper(&self) -> usize {
        self.layout.hypers.len()
    }

    pub fn n_latent(&self) -> usize {
        self.layout.latent.len()
    }

    pub fn effect_index(&self, name: &str) -> Option<usize> {
        self.imputations.iter().position(|t| t.name == name)
    }

    /// Adds a block and recompiles.
    pub fn with_block(&self, block: LikelihoodBlock) -> Result<Self> {
        let mut blocks = self.blocks.clone();
        blocks.push(block);
        Self::with_settings(blocks, self.imputations.clone(), self.pinning_precision, self.imputation_priors)
    }

    /// Replaces the pinning precision and recompiles.
    pub fn with_pinning_precision(&self, pinning_precision: f64) -> Result<Self> {
        Self::with_settings(self.blocks.clone(), self.imputations.clone(), pinning_precision, self.imputation_priors)
    }

    /// Maps an internal hyperparameter vector to the reporting scale.
    pub fn theta_to_user(&self, theta: &[f64]) -> Vec<f64> {
        self.layout.hypers.iter().zip(theta).map(|(h, &t)| h.transform.to_user(t)).collect()
    }

    /// Data-driven starting point for the hyperparameter search.
    pub fn initial_theta(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.n_hyper()];
        for (b, block) in self.blocks.iter().enumerate() {
            if let Some(h) = self.layout.precision_hyper[b] {
                let ys: Vec<f64> = block.response.iter().flatten().copied().collect();
                let v = sample_variance(&ys).max(1e-6);
                // residual precision is at least the marginal precision of the response
                theta[h] = (2.0 / v).ln();
            }
            for (c, &h) in self.layout.copy_hyper[b].iter().enumerate() {
                theta[h] = block.copies[c].initial;
            }
        }
        for (t, term) in self.imputations.iter().enumerate() {
            let s = self.layout.imputation_slice[t];
            let obs_idx = term.covariate.partition().obs().to_vec();
            let z = term.covariate.observed();
            match &term.kind {
                ImputationKind::LinReg { design, .. } => {
                    let x = DMatrix::from_fn(obs_idx.len(), design.ncols(), |r, c| design[(obs_idx[r], c)]);
                    let (beta, resid_var) = least_squares(&x, &z);
                    theta[s..s + beta.len()].copy_from_slice(&beta);
                    theta[s + beta.len()] = (1.0 / resid_var.max(1e-8)).ln();
                }
                ImputationKind::Car { .. } => {
                    let mean = z.iter().sum::<f64>() / z.len() as f64;
                    let v = sample_variance(&z).max(1e-8);
                    theta[s] = (1.0 / v).ln();
                    theta[s + 1] = logit(0.9);
                    theta[s + 2] = mean;
                }
            }
        }
        theta
    }
}

fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 1.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

/// Ordinary least squares through the normal equations with a tiny ridge.
fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> (Vec<f64>, f64) {
    let p = x.ncols();
    let yv = nalgebra::DVector::from_column_slice(y);
    let xtx = x.transpose() * x + DMatrix::identity(p, p) * 1e-10;
    let xty = x.transpose() * &yv;
    let beta = xtx.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| nalgebra::DVector::zeros(p));
    let resid = &yv - x * &beta;
    let dof = (y.len() as f64 - p as f64).max(1.0);
    (beta.iter().copied().collect(), resid.norm_squared() / dof)
}

fn validate(blocks: &[LikelihoodBlock], imputations: &[ImputationTerm]) -> Result<()> {
    let mut names: HashMap<&str, ()> = HashMap::new();
    for term in imputations {
        match &term.kind {
            ImputationKind::LinReg { design, coef_names, .. } => {
                if design.nrows() != term.covariate.len() {
                    return Err(GmrfError::DimensionMismatch(format!(
                        "imputation design for `{}` has {} rows, covariate has {}",
                        term.name,
                        design.nrows(),
                        term.covariate.len()
                    )));
                }
                if coef_names.len() != design.ncols() {
                    return Err(GmrfError::DimensionMismatch(format!(
                        "imputation `{}` names {} coefficients for {} design columns",
                        term.name,
                        coef_names.len(),
                        design.ncols()
                    )));
                }
                if design.iter().any(|v| !v.is_finite()) {
                    return Err(GmrfError::InvalidInput(format!("imputation design for `{}` is not finite", term.name)));
                }
            }
            ImputationKind::Car { adjacency, .. } => {
                if adjacency.dim() != term.covariate.len() {
                    return Err(GmrfError::DimensionMismatch(format!(
                        "adjacency for `{}` has dimension {}, covariate has {}",
                        term.name,
                        adjacency.dim(),
                        term.covariate.len()
                    )));
                }
            }
        }
    }
    for block in blocks {
        let n = block.len();
        if n == 0 {
            return Err(GmrfError::EmptyInput(format!("block `{}` has no observations", block.name)));
        }
        if block.offset.len() != n {
            return Err(GmrfError::DimensionMismatch(format!("offset length in block `{}`", block.name)));
        }
        if block.family == Family::Gaussian && block.precision.is_none() {
            return Err(GmrfError::InvalidInput(format!("Gaussian block `{}` needs a precision", block.name)));
        }
        for y in block.response.iter().flatten() {
            let ok = match block.family {
                Family::Gaussian => y.is_finite(),
                Family::Poisson => *y >= 0.0 && y.fract() == 0.0,
                Family::Bernoulli => *y == 0.0 || *y == 1.0,
            };
            if !ok {
                return Err(GmrfError::InvalidInput(format!(
                    "response value {y} is not valid for the {:?} block `{}`",
                    block.family, block.name
                )));
            }
        }
        for f in &block.fixed {
            if f.values.len() != n {
                return Err(GmrfError::DimensionMismatch(format!(
                    "fixed effect `{}` has {} values, block `{}` has {n} observations",
                    f.name,
                    f.values.len(),
                    block.name
                )));
            }
            if f.values.iter().any(|v| !v.is_finite()) {
                return Err(GmrfError::InvalidInput(format!("fixed effect `{}` has missing values", f.name)));
            }
            if names.insert(&f.name, ()).is_some() {
                return Err(GmrfError::InvalidInput(format!("duplicate latent name `{}`", f.name)));
            }
        }
        for c in &block.copies {
            let Some(term) = imputations.iter().find(|t| t.name == c.effect) else {
                return Err(GmrfError::MissingEffectReference(c.effect.clone()));
            };
            if term.covariate.len() != n {
                return Err(GmrfError::DimensionMismatch(format!(
                    "effect `{}` has {} units, block `{}` has {n} observations",
                    c.effect,
                    term.covariate.len(),
                    block.name
                )));
            }
        }
    }
    Ok(())
}

fn compile(blocks: &[LikelihoodBlock], imputations: &[ImputationTerm]) -> Result<Layout> {
    let mut hypers = Vec::new();
    let mut precision_hyper = vec![None; blocks.len()];
    let mut copy_hyper = vec![Vec::new(); blocks.len()];
    let mut copy_effect = vec![Vec::new(); blocks.len()];
    let mut push_block_hypers = |b: usize, block: &LikelihoodBlock, hypers: &mut Vec<HyperInfo>| {
        if let Some((name, _)) = &block.precision {
            precision_hyper[b] = Some(hypers.len());
            hypers.push(HyperInfo {
                name: name.clone(),
                submodel: block.submodel,
                transform: Transform::Log,
                role: HyperRole::Precision { block: b },
            });
        }
        for (c, copy) in block.copies.iter().enumerate() {
            copy_hyper[b].push(hypers.len());
            copy_effect[b].push(imputations.iter().position(|t| t.name == copy.effect).expect("validated"));
            hypers.push(HyperInfo {
                name: copy.name.clone(),
                submodel: block.submodel,
                transform: Transform::Identity,
                role: HyperRole::Copy { block: b, copy: c },
            });
        }
    };
    for (b, block) in blocks.iter().enumerate() {
        if block.submodel != SubModel::Missingness {
            push_block_hypers(b, block, &mut hypers);
        }
    }
    let mut imputation_slice = Vec::new();
    for (t, term) in imputations.iter().enumerate() {
        imputation_slice.push(hypers.len());
        let entries: Vec<(String, Transform)> = match &term.kind {
            ImputationKind::LinReg { coef_names, tau_name, .. } => coef_names
                .iter()
                .map(|n| (n.clone(), Transform::Identity))
                .chain(std::iter::once((tau_name.clone(), Transform::Log)))
                .collect(),
            ImputationKind::Car { names, .. } => vec![
                (names[0].clone(), Transform::Log),
                (names[1].clone(), Transform::Logit),
                (names[2].clone(), Transform::Identity),
            ],
        };
        for (slot, (name, transform)) in entries.into_iter().enumerate() {
            hypers.push(HyperInfo {
                name,
                submodel: SubModel::Imputation,
                transform,
                role: HyperRole::Imputation { term: t, slot },
            });
        }
    }
    for (b, block) in blocks.iter().enumerate() {
        if block.submodel == SubModel::Missingness {
            push_block_hypers(b, block, &mut hypers);
        }
    }

    let mut latent = Vec::new();
    let mut fixed_offset = Vec::new();
    for (b, block) in blocks.iter().enumerate() {
        fixed_offset.push(latent.len());
        for (k, f) in block.fixed.iter().enumerate() {
            latent.push(LatentInfo {
                name: f.name.clone(),
                submodel: block.submodel,
                role: LatentRole::Fixed { block: b, index: k },
                reportable: true,
            });
        }
    }
    let mut effect_offset = Vec::new();
    for (t, term) in imputations.iter().enumerate() {
        effect_offset.push(latent.len());
        for (i, v) in term.covariate.values().iter().enumerate() {
            latent.push(LatentInfo {
                name: format!("{}[{}]", term.name, i),
                submodel: SubModel::Imputation,
                role: LatentRole::Effect { term: t, unit: i },
                reportable: v.is_none(),
            });
        }
    }
    if latent.is_empty() {
        return Err(GmrfError::EmptyInput("model has no latent components".into()));
    }

    // Union sparsity pattern of prior and likelihood Hessian for the ordering.
    let n_latent = latent.len();
    let mut trip: Vec<(usize, usize, f64)> = (0..n_latent).map(|i| (i, i, 1.0)).collect();
    for (t, term) in imputations.iter().enumerate() {
        if let ImputationKind::Car { adjacency, .. } = &term.kind {
            let mask = term.covariate.mask();
            let off = effect_offset[t];
            for (r, c, _) in adjacency.matrix().upper_entries() {
                if mask[r] && mask[c] {
                    trip.push((off + r, off + c, 1.0));
                }
            }
        }
    }
    for (b, block) in blocks.iter().enumerate() {
        for i in 0..block.len() {
            if block.response[i].is_none() {
                continue;
            }
            let mut row: Vec<usize> = Vec::new();
            for (k, f) in block.fixed.iter().enumerate() {
                if f.values[i] != 0.0 {
                    row.push(fixed_offset[b] + k);
                }
            }
            for &e in &copy_effect[b] {
                row.push(effect_offset[e] + i);
            }
            for (a, &r) in row.iter().enumerate() {
                for &c in &row[a..] {
                    trip.push((r, c, 1.0));
                }
            }
        }
    }
    let pattern = SparsePrecision::from_triplets(n_latent, &trip)?;
    let ordering = if n_latent <= 2 { (0..n_latent).collect() } else { minimum_degree(&pattern.adjacency()) };

    Ok(Layout {
        hypers,
        latent,
        fixed_offset,
        effect_offset,
        imputation_slice,
        precision_hyper,
        copy_hyper,
        copy_effect,
        ordering,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<LikelihoodBlock>, Vec<ImputationTerm>) {
        let n = 4;
        let cov = CovariateWithGaps::new(vec![Some(1.0), None, Some(3.0), Some(2.5)]).unwrap();
        let design = DMatrix::from_element(n, 1, 1.0);
        let term = ImputationTerm {
            name: "x".into(),
            covariate: cov.clone(),
            kind: ImputationKind::LinReg { design, coef_names: vec!["alpha_I".into()], tau_name: "tau_I".into() },
        };
        let analysis = LikelihoodBlock::new(
            "y",
            SubModel::Analysis,
            Family::Gaussian,
            vec![Some(0.5), Some(1.0), None, Some(2.0)],
        )
        .with_fixed(FixedEffect::intercept("alpha", n))
        .with_copy(CopyTerm::new("beta", "x"));
        let miss = LikelihoodBlock::new(
            "m",
            SubModel::Missingness,
            Family::Bernoulli,
            cov.mask().iter().map(|&m| Some(if m { 1.0 } else { 0.0 })).collect(),
        )
        .with_fixed(FixedEffect::intercept("alpha_M", n))
        .with_copy(CopyTerm::new("delta", "x"));
        (vec![miss, analysis], vec![term])
    }

    #[test]
    fn hyperparameter_ordering_contract() {
        let (blocks, terms) = toy();
        let m = ModelSpec::new(blocks, terms).unwrap();
        let names: Vec<&str> = m.layout().hypers.iter().map(|h| h.name.as_str()).collect();
        assert_eq!(names, vec!["tau", "beta", "alpha_I", "tau_I", "delta"]);
        let latent: Vec<&str> = m.layout().latent.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(latent, vec!["alpha_M", "alpha", "x[0]", "x[1]", "x[2]", "x[3]"]);
        assert_eq!(m.layout().latent.iter().filter(|l| l.reportable).count(), 3);
    }

    #[test]
    fn unknown_effect_reference_is_rejected() {
        let (mut blocks, terms) = toy();
        blocks[1].copies[0].effect = "nope".into();
        assert_eq!(ModelSpec::new(blocks, terms), Err(GmrfError::MissingEffectReference("nope".into())));
    }

    #[test]
    fn invalid_responses_are_rejected() {
        let (mut blocks, terms) = toy();
        blocks[0].response[0] = Some(2.0);
        assert!(ModelSpec::new(blocks, terms).is_err());
    }

    #[test]
    fn initial_theta_uses_observed_moments() {
        let (blocks, terms) = toy();
        let m = ModelSpec::new(blocks, terms).unwrap();
        let t = m.initial_theta();
        assert!((t[2] - 6.5 / 3.0).abs() < 1e-8);
        assert!(t.iter().all(|v| v.is_finite()));
    }
}
