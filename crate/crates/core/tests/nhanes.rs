mod common;

use gmrfmi::explore::{fit, EngineSettings};
use gmrfmi::missingness::Mechanism;
use gmrfmi::model::SubModel;

fn names(f: &gmrfmi::explore::Fit, sub: SubModel) -> Vec<String> {
    f.parameters().filter(|m| m.submodel == sub).map(|m| m.name.clone()).collect()
}

#[test]
fn joint_fits_expose_each_submodel() {
    let d = common::nhanes();
    let s = EngineSettings { grid_points: 3, ..EngineSettings::default() };
    for mech in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
        let f = fit(&d.model(mech), &s).unwrap();
        assert!(f.warnings.is_empty(), "{mech}: {:?}", f.warnings);
        let analysis = names(&f, SubModel::Analysis);
        for p in ["alpha", "beta_1", "beta_2", "beta_3"] {
            assert!(analysis.iter().any(|n| n == p), "{mech}: {analysis:?}");
        }
        let missing = names(&f, SubModel::Missingness);
        assert!(missing.iter().any(|n| n == "alpha_M"));
        assert_eq!(missing.iter().any(|n| n == "beta_M1"), mech == Mechanism::Mar, "{mech}: {missing:?}");
        assert_eq!(missing.iter().any(|n| n == "delta"), mech == Mechanism::Mnar, "{mech}: {missing:?}");
        let imputed: Vec<_> = f.latent.iter().filter(|m| m.name.starts_with("bmi[")).collect();
        assert_eq!(imputed.len(), 9);
        // indices of the entries that are actually missing
        let gaps: Vec<String> =
            d.bmi.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| format!("bmi[{i}]")).collect();
        assert_eq!(imputed.iter().map(|m| m.name.clone()).collect::<Vec<_>>(), gaps);
        for m in imputed {
            assert!(m.marginal.q025 < m.marginal.q50 && m.marginal.q50 < m.marginal.q975);
            assert!(m.marginal.mean > 15.0 && m.marginal.mean < 40.0, "{}: {}", m.name, m.marginal.mean);
        }
        assert_eq!(f.predictive.len(), 10);
    }
}

#[test]
fn mcar_missingness_intercept_matches_the_observed_rate() {
    // the missingness block under MCAR is a Bernoulli intercept model whose
    // posterior is centred near the logit of the empirical missing rate
    let d = common::nhanes();
    let f = fit(&d.model(Mechanism::Mcar), &EngineSettings::default()).unwrap();
    let rate: f64 = 9.0 / 25.0;
    let odds = rate / (1.0 - rate);
    let m = &f.marginal("alpha_M").unwrap().marginal;
    assert!((m.mean - odds.ln()).abs() < 0.5 * m.sd, "{} vs {}", m.mean, odds.ln());
}

#[test]
fn fits_are_deterministic() {
    let d = common::nhanes();
    let s = EngineSettings { grid_points: 3, ..EngineSettings::default() };
    let a = fit(&d.model(Mechanism::Mar), &s).unwrap();
    let b = fit(&d.model(Mechanism::Mar), &s).unwrap();
    for (x, y) in a.parameters().zip(b.parameters()) {
        assert_eq!(x.marginal, y.marginal, "{}", x.name);
    }
}
