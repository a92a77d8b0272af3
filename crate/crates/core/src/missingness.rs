//! Simulated missingness masks and Bernoulli missingness sub-models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{GmrfError, Result};
use crate::imputation::expit;
use crate::model::{CopyTerm, Family, FixedEffect, LikelihoodBlock, ModelSpec, SubModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "MCAR",
            Mechanism::Mar => "MAR",
            Mechanism::Mnar => "MNAR",
        })
    }
}

impl FromStr for Mechanism {
    type Err = GmrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MCAR" => Ok(Mechanism::Mcar),
            "MAR" => Ok(Mechanism::Mar),
            "MNAR" => Ok(Mechanism::Mnar),
            other => Err(GmrfError::InvalidInput(format!("unknown missingness mechanism `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessScenario {
    pub mechanism: Mechanism,
    /// Strictly ascending proportions in `(0, 1)`.
    pub proportions: Vec<f64>,
    pub mnar_slope: f64,
    pub mnar_intercept: f64,
}

impl MissingnessScenario {
    pub fn new(mechanism: Mechanism, proportions: Vec<f64>) -> Result<Self> {
        for &p in &proportions {
            if !(p > 0.0 && p < 1.0) {
                return Err(GmrfError::ProportionOutOfRange(p));
            }
        }
        if proportions.is_empty() || proportions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(GmrfError::InvalidInput("proportions must be non-empty and strictly ascending".into()));
        }
        Ok(Self { mechanism, proportions, mnar_slope: 5.0, mnar_intercept: 0.0 })
    }

    pub fn with_mnar(mut self, intercept: f64, slope: f64) -> Self {
        self.mnar_intercept = intercept;
        self.mnar_slope = slope;
        self
    }
}

/// Number of units masked at proportion `p` of `n`: `⌈p n⌉`, guarded against
/// floating-point overshoot (e.g. `0.3 · 100`).
pub fn mask_size(p: f64, n: usize) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Random order in which units are removed: a uniform permutation (MCAR) or
/// successive sampling with weights `expit(α + slope·x)` (MNAR).
pub fn removal_order(covariate: &[f64], scenario: &MissingnessScenario, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if covariate.iter().any(|v| !v.is_finite()) {
        return Err(GmrfError::InvalidInput("mask simulation needs a fully observed covariate".into()));
    }
    let n = covariate.len();
    // keys log(u)/w sorted in decreasing order give successive sampling with
    // probabilities proportional to w; equal weights give a uniform permutation
    let weight = |x: f64| match scenario.mechanism {
        Mechanism::Mcar => Ok(1.0),
        Mechanism::Mnar => Ok(expit(scenario.mnar_intercept + scenario.mnar_slope * x)),
        Mechanism::Mar => Err(GmrfError::InvalidInput("MAR masks are not simulated".into())),
    };
    let mut keyed = Vec::with_capacity(n);
    for (i, &x) in covariate.iter().enumerate() {
        let w = weight(x)?;
        let u: f64 = rng.random::<f64>();
        let key = if w > 0.0 { u.max(f64::MIN_POSITIVE).ln() / w } else { f64::NEG_INFINITY };
        keyed.push((key, i));
    }
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite keys").then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

/// Nested masks (`true` = removed), one per proportion.
pub fn simulate_mask(covariate: &[f64], scenario: &MissingnessScenario, rng: &mut impl Rng) -> Result<Vec<Vec<bool>>> {
    let order = removal_order(covariate, scenario, rng)?;
    let n = covariate.len();
    Ok(scenario
        .proportions
        .iter()
        .map(|&p| {
            let mut mask = vec![false; n];
            for &i in &order[..mask_size(p, n)] {
                mask[i] = true;
            }
            mask
        })
        .collect())
}

/// Bernoulli-logit model for missingness indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSubmodel {
    /// `true` where the covariate is missing.
    pub indicator: Vec<bool>,
    pub intercept: String,
    /// Fully observed predictors (used by MAR and MNAR).
    pub design: Vec<FixedEffect>,
    /// Imputation effects entering the predictor with a coefficient (MNAR only).
    pub delta_links: Vec<CopyTerm>,
    pub block_name: String,
}

impl MissingnessSubmodel {
    pub fn new(indicator: Vec<bool>) -> Self {
        Self {
            indicator,
            intercept: "alpha_M".into(),
            design: Vec::new(),
            delta_links: Vec::new(),
            block_name: "missingness".into(),
        }
    }

    /// Indicator of the missing entries of an imputation effect, linked back
    /// to that effect with coefficient `delta_name`.
    pub fn for_effect(model: &ModelSpec, effect: &str, delta_name: &str) -> Result<Self> {
        let t = model.effect_index(effect).ok_or_else(|| GmrfError::MissingEffectReference(effect.into()))?;
        let indicator = model.imputations[t].covariate.mask().to_vec();
        Ok(Self::new(indicator).with_link(CopyTerm::new(delta_name, effect)))
    }

    pub fn with_intercept_name(mut self, name: impl Into<String>) -> Self {
        self.intercept = name.into();
        self
    }

    pub fn with_design(mut self, f: FixedEffect) -> Self {
        self.design.push(f);
        self
    }

    pub fn with_link(mut self, c: CopyTerm) -> Self {
        self.delta_links.push(c);
        self
    }

    pub fn with_block_name(mut self, name: impl Into<String>) -> Self {
        self.block_name = name.into();
        self
    }
}

/// Appends the missingness block: an intercept (MCAR), plus the observed
/// design (MAR), plus the design and the linked imputation effects (MNAR).
pub fn attach_missingness_submodel(
    model: &ModelSpec,
    submodel: &MissingnessSubmodel,
    variant: Mechanism,
) -> Result<ModelSpec> {
    let n = submodel.indicator.len();
    let response = submodel.indicator.iter().map(|&m| Some(if m { 1.0 } else { 0.0 })).collect();
    let mut block = LikelihoodBlock::new(submodel.block_name.clone(), SubModel::Missingness, Family::Bernoulli, response)
        .with_fixed(FixedEffect::intercept(submodel.intercept.clone(), n));
    if variant != Mechanism::Mcar {
        for f in &submodel.design {
            block = block.with_fixed(f.clone());
        }
    }
    if variant == Mechanism::Mnar {
        if submodel.delta_links.is_empty() {
            return Err(GmrfError::InvalidInput("MNAR missingness needs a linked imputation effect".into()));
        }
        for c in &submodel.delta_links {
            if model.effect_index(&c.effect).is_none() {
                return Err(GmrfError::MissingEffectReference(c.effect.clone()));
            }
            block = block.with_copy(c.clone());
        }
    }
    model.with_block(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ceiling_sizes() {
        assert_eq!(mask_size(0.01, 100), 1);
        assert_eq!(mask_size(0.3, 100), 30);
        assert_eq!(mask_size(0.05, 100), 5);
        assert_eq!(mask_size(0.15, 100), 15);
        assert_eq!(mask_size(0.5, 25), 13);
    }

    #[test]
    fn masks_are_nested_with_exact_sizes() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        for mech in [Mechanism::Mcar, Mechanism::Mnar] {
            let sc = MissingnessScenario::new(mech, vec![0.05, 0.10, 0.15, 0.30, 0.50]).unwrap();
            let masks = simulate_mask(&x, &sc, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            for (m, &p) in masks.iter().zip(&sc.proportions) {
                assert_eq!(m.iter().filter(|&&b| b).count(), mask_size(p, 100));
            }
            for w in masks.windows(2) {
                assert!(w[0].iter().zip(&w[1]).all(|(a, b)| !a || *b));
            }
        }
    }

    #[test]
    fn proportions_are_validated() {
        assert_eq!(MissingnessScenario::new(Mechanism::Mcar, vec![1.2]), Err(GmrfError::ProportionOutOfRange(1.2)));
        assert!(MissingnessScenario::new(Mechanism::Mcar, vec![0.3, 0.1]).is_err());
    }

    #[test]
    fn seeded_masks_are_reproducible() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let sc = MissingnessScenario::new(Mechanism::Mnar, vec![0.2, 0.4]).unwrap();
        let a = simulate_mask(&x, &sc, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_mask(&x, &sc, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
