//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use gmrfmi::imputation::CovariateWithGaps;
use gmrfmi::missingness::{attach_missingness_submodel, Mechanism, MissingnessSubmodel};
use gmrfmi::model::{CopyTerm, Family, FixedEffect, ImputationKind, ImputationTerm, LikelihoodBlock, ModelSpec, SubModel};
use nalgebra::DMatrix;

pub struct Nhanes {
    pub age: Vec<String>,
    pub bmi: Vec<Option<f64>>,
    pub hyp: Vec<Option<String>>,
    pub chl: Vec<Option<f64>>,
}

pub fn nhanes() -> Nhanes {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/nhanes2.csv")).unwrap();
    let mut d = Nhanes { age: vec![], bmi: vec![], hyp: vec![], chl: vec![] };
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |s: &str| if s == "NA" { None } else { Some(s.parse::<f64>().unwrap()) };
        d.age.push(f[0].to_string());
        d.bmi.push(num(f[1]));
        d.hyp.push(if f[2] == "NA" { None } else { Some(f[2].to_string()) });
        d.chl.push(num(f[3]));
    }
    d
}

impl Nhanes {
    pub fn dummy(&self, level: &str) -> Vec<f64> {
        self.age.iter().map(|a| if a == level { 1.0 } else { 0.0 }).collect()
    }

    /// Cholesterol standardized over its observed values.
    pub fn chl_std(&self) -> Vec<Option<f64>> {
        let obs: Vec<f64> = self.chl.iter().flatten().copied().collect();
        let m = obs.iter().sum::<f64>() / obs.len() as f64;
        let sd = (obs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (obs.len() - 1) as f64).sqrt();
        self.chl.iter().map(|v| v.map(|c| (c - m) / sd)).collect()
    }

    pub fn base_model(&self) -> ModelSpec {
        let n = self.age.len();
        let design = DMatrix::from_fn(n, 3, |i, j| match j {
            0 => 1.0,
            1 => self.dummy("40-59")[i],
            _ => self.dummy("60-99")[i],
        });
        let term = ImputationTerm {
            name: "bmi".into(),
            covariate: CovariateWithGaps::new(self.bmi.clone()).unwrap(),
            kind: ImputationKind::LinReg {
                design,
                coef_names: vec!["alpha_I".into(), "beta_I1".into(), "beta_I2".into()],
                tau_name: "tau_I".into(),
            },
        };
        let analysis = LikelihoodBlock::new("chl", SubModel::Analysis, Family::Gaussian, self.chl_std())
            .with_fixed(FixedEffect::intercept("alpha", n))
            .with_fixed(FixedEffect::new("beta_1", self.dummy("40-59")))
            .with_fixed(FixedEffect::new("beta_2", self.dummy("60-99")))
            .with_copy(CopyTerm::new("beta_3", "bmi"));
        ModelSpec::new(vec![analysis], vec![term]).unwrap()
    }

    pub fn model(&self, mech: Mechanism) -> ModelSpec {
        let base = self.base_model();
        let sub = MissingnessSubmodel::for_effect(&base, "bmi", "delta")
            .unwrap()
            .with_design(FixedEffect::new("beta_M1", self.dummy("40-59")))
            .with_design(FixedEffect::new("beta_M2", self.dummy("60-99")));
        let sub = if mech == Mechanism::Mnar { MissingnessSubmodel { design: vec![], ..sub } } else { sub };
        attach_missingness_submodel(&base, &sub, mech).unwrap()
    }
}
