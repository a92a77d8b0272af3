//! Typed run settings and the translation of a dataset into a joint model.

use std::path::PathBuf;
use std::str::FromStr;

use gmrfmi::explore::EngineSettings;
use gmrfmi::imputation::{CovariateWithGaps, ScaledAdjacency, DEFAULT_PINNING_PRECISION};
use gmrfmi::missingness::{attach_missingness_submodel, Mechanism, MissingnessSubmodel};
use gmrfmi::model::{CopyTerm, Family, FixedEffect, ImputationKind, ImputationTerm, LikelihoodBlock, ModelSpec, SubModel};
use nalgebra::DMatrix;

use crate::adjacency::AdjacencyFile;
use crate::config::{split_list, RawConfig};
use crate::dataset::DatasetFile;
use crate::derive::derive_column;
use crate::error::{CliError, Result};

/// `name:column`, `name:column=level` (indicator) or `name:1` (intercept).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub name: String,
    pub column: String,
    pub level: Option<String>,
}

impl FromStr for Term {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rhs) =
            s.split_once(':').ok_or_else(|| CliError::Config(format!("term `{s}` is not of the form name:column")))?;
        let (column, level) = match rhs.split_once('=') {
            Some((c, l)) => (c.trim().to_string(), Some(l.trim().to_string())),
            None => (rhs.trim().to_string(), None),
        };
        let name = name.trim().to_string();
        if name.is_empty() || column.is_empty() {
            return Err(CliError::Config(format!("term `{s}` has an empty name or column")));
        }
        Ok(Term { name, column, level })
    }
}

impl Term {
    fn is_intercept(&self) -> bool {
        self.column == "1" && self.level.is_none()
    }
}

fn terms(cfg: &RawConfig, key: &str) -> Result<Vec<Term>> {
    cfg.list(key).iter().map(|t| t.parse()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisSpec {
    pub response: String,
    pub family: Family,
    pub offset: Option<String>,
    pub intercept: Option<String>,
    pub terms: Vec<Term>,
    pub precision: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImputationDecl {
    LinReg { terms: Vec<Term>, precision: String },
    Car { names: [String; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSpec {
    pub covariate: String,
    pub intercept: String,
    pub mar_terms: Vec<Term>,
    pub mnar_terms: Vec<Term>,
    pub link: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiSpec {
    pub covariate: String,
    pub levels: Vec<String>,
    pub strata: String,
    pub draws: usize,
    pub include_outcome: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub covariate: String,
    pub proportions: Vec<f64>,
    pub mechanisms: Vec<Mechanism>,
    /// Missingness variants of the fitted models; `None` fits no missingness block.
    pub models: Vec<Option<Mechanism>>,
    pub mnar_intercept: f64,
    pub mnar_slope: f64,
    pub replicates: usize,
    /// Units whose imputed-value marginals are written as density grids.
    pub units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub dataset: PathBuf,
    pub adjacency: Option<PathBuf>,
    pub derive: Vec<(String, String)>,
    pub analysis: AnalysisSpec,
    pub imputations: Vec<(String, ImputationDecl)>,
    pub variant: Option<Mechanism>,
    pub missingness: Option<MissingnessSpec>,
    pub mi: Option<MiSpec>,
    pub simulation: Option<SimulationSpec>,
    pub sensitivity: Vec<Option<Mechanism>>,
    pub engine: EngineSettings,
    pub pinning_precision: f64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub output_dir: PathBuf,
    pub densities: Vec<String>,
}

pub const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "adjacency",
    "seed",
    "derive.",
    "analysis.",
    "imputation.",
    "missingness.",
    "mi.",
    "simulate.",
    "sensitivity.",
    "engine.",
    "output.",
];

/// `none` or a mechanism name.
pub fn parse_variant(s: &str) -> Result<Option<Mechanism>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    s.parse::<Mechanism>().map(Some).map_err(|e| CliError::Config(e.to_string()))
}

pub fn variant_label(v: Option<Mechanism>) -> String {
    v.map(|m| m.to_string()).unwrap_or_else(|| "none".into())
}

fn family(s: &str) -> Result<Family> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(Family::Gaussian),
        "poisson" => Ok(Family::Poisson),
        "bernoulli" | "binomial" => Ok(Family::Bernoulli),
        other => Err(CliError::Config(format!("unknown family `{other}`"))),
    }
}

impl RunSpec {
    pub fn from_config(cfg: &RawConfig) -> Result<Self> {
        cfg.check_known(KNOWN_KEYS)?;
        let analysis = AnalysisSpec {
            response: cfg.require("analysis.response")?.to_string(),
            family: family(cfg.get("analysis.family").unwrap_or("gaussian"))?,
            offset: cfg.get("analysis.offset").map(str::to_string),
            intercept: match cfg.get("analysis.intercept").unwrap_or("alpha") {
                "none" => None,
                s => Some(s.to_string()),
            },
            terms: terms(cfg, "analysis.terms")?,
            precision: cfg.get("analysis.precision").unwrap_or("tau").to_string(),
        };
        let mut imputations = Vec::new();
        let mut columns: Vec<&str> = cfg.section("imputation").iter().filter_map(|(k, _)| k.split('.').next()).collect();
        columns.dedup();
        for col in columns {
            let key = |s: &str| format!("imputation.{col}.{s}");
            let decl = match cfg.require(&key("model"))? {
                "linreg" => ImputationDecl::LinReg {
                    terms: {
                        let t = terms(cfg, &key("terms"))?;
                        if t.is_empty() {
                            vec![Term { name: "alpha_I".into(), column: "1".into(), level: None }]
                        } else {
                            t
                        }
                    },
                    precision: cfg.get(&key("precision")).unwrap_or("tau_I").to_string(),
                },
                "car" => {
                    let names = cfg.list(&key("names"));
                    let names = match names.len() {
                        0 => ["tau_I".to_string(), "rho_I".to_string(), "alpha_I".to_string()],
                        3 => [names[0].clone(), names[1].clone(), names[2].clone()],
                        _ => return Err(CliError::Config(format!("`{}` needs three names", key("names")))),
                    };
                    ImputationDecl::Car { names }
                }
                other => return Err(CliError::Config(format!("unknown imputation model `{other}`"))),
            };
            imputations.push((col.to_string(), decl));
        }
        let variant = parse_variant(cfg.get("missingness.variant").unwrap_or("none"))?;
        let missingness = match cfg.get("missingness.covariate") {
            None => None,
            Some(c) => {
                let mar = terms(cfg, "missingness.terms")?;
                let mnar = match cfg.get("missingness.mnar_terms") {
                    Some(v) => split_list(v).iter().map(|t| t.parse()).collect::<Result<_>>()?,
                    None => mar.clone(),
                };
                Some(MissingnessSpec {
                    covariate: c.to_string(),
                    intercept: cfg.get("missingness.intercept").unwrap_or("alpha_M").to_string(),
                    mar_terms: mar,
                    mnar_terms: mnar,
                    link: cfg.get("missingness.link").unwrap_or("delta").to_string(),
                })
            }
        };
        if variant.is_some() && missingness.is_none() {
            return Err(CliError::Config("`missingness.variant` needs `missingness.covariate`".into()));
        }
        let mi = match cfg.get("mi.covariate") {
            None => None,
            Some(c) => Some(MiSpec {
                covariate: c.to_string(),
                levels: cfg.list("mi.levels"),
                strata: cfg.require("mi.strata")?.to_string(),
                draws: cfg.parsed_or("mi.draws", 100)?,
                include_outcome: cfg.bool_or("mi.include_outcome", false)?,
            }),
        };
        let simulation = match cfg.get("simulate.covariate") {
            None => None,
            Some(c) => Some(SimulationSpec {
                covariate: c.to_string(),
                proportions: cfg.parsed_list("simulate.proportions")?,
                mechanisms: cfg
                    .list("simulate.mechanisms")
                    .iter()
                    .map(|m| m.parse::<Mechanism>().map_err(|e| CliError::Config(e.to_string())))
                    .collect::<Result<_>>()?,
                models: cfg.list("simulate.models").iter().map(|m| parse_variant(m)).collect::<Result<_>>()?,
                mnar_intercept: cfg.parsed_or("simulate.mnar_intercept", 0.0)?,
                mnar_slope: cfg.parsed_or("simulate.mnar_slope", 5.0)?,
                replicates: cfg.parsed_or("simulate.replicates", 1)?,
                units: cfg.parsed_list("simulate.units")?,
            }),
        };
        let sensitivity = cfg.list("sensitivity.variants").iter().map(|m| parse_variant(m)).collect::<Result<_>>()?;
        let mut engine = EngineSettings::default();
        engine.grid_points = cfg.parsed_or("engine.grid_points", engine.grid_points)?;
        engine.newton.tol = cfg.parsed_or("engine.newton_tolerance", engine.newton.tol)?;
        engine.drop_threshold = cfg.parsed_or("engine.drop_threshold", engine.drop_threshold)?;
        if engine.grid_points == 0 || engine.grid_points % 2 == 0 {
            return Err(CliError::Config("`engine.grid_points` must be odd".into()));
        }
        let pinning_precision = cfg.parsed_or("engine.pinning_precision", DEFAULT_PINNING_PRECISION)?;
        if !(pinning_precision > 0.0) {
            return Err(CliError::Config("`engine.pinning_precision` must be positive".into()));
        }
        let workers = cfg.parsed("engine.workers")?;
        Ok(Self {
            dataset: cfg.path("dataset").ok_or_else(|| CliError::Config("missing required key `dataset`".into()))?,
            adjacency: cfg.path("adjacency"),
            derive: cfg.section("derive").into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            analysis,
            imputations,
            variant,
            missingness,
            mi,
            simulation,
            sensitivity,
            engine,
            pinning_precision,
            seed: cfg.parsed_or("seed", 1)?,
            workers,
            output_dir: cfg.path("output.dir").unwrap_or_else(|| cfg.base_dir.join("out")),
            densities: cfg.list("output.densities"),
        })
    }

    /// Adds the derived columns to a loaded dataset.
    pub fn prepare(&self, mut data: DatasetFile) -> Result<DatasetFile> {
        // derived columns may refer to earlier ones; evaluate until no progress
        let mut pending: Vec<&(String, String)> = self.derive.iter().collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut last_err = None;
            pending.retain(|(name, expr)| match derive_column(name, expr, &data) {
                Ok(c) => {
                    data.set_column(c).expect("derived columns have the dataset length");
                    false
                }
                Err(e) => {
                    last_err = Some(e);
                    true
                }
            });
            if pending.len() == before {
                return Err(last_err.expect("a failed derivation"));
            }
        }
        self.validate_columns(&data)?;
        Ok(data)
    }

    fn validate_columns(&self, data: &DatasetFile) -> Result<()> {
        let mut referenced = vec![self.analysis.response.clone()];
        referenced.extend(self.analysis.offset.clone());
        let all_terms = self
            .analysis
            .terms
            .iter()
            .chain(self.imputations.iter().flat_map(|(_, d)| match d {
                ImputationDecl::LinReg { terms, .. } => terms.as_slice(),
                ImputationDecl::Car { .. } => &[],
            }))
            .chain(self.missingness.iter().flat_map(|m| m.mar_terms.iter().chain(&m.mnar_terms)));
        referenced.extend(all_terms.filter(|t| !t.is_intercept()).map(|t| t.column.clone()));
        referenced.extend(self.imputations.iter().map(|(c, _)| c.clone()));
        referenced.extend(self.missingness.iter().map(|m| m.covariate.clone()));
        for c in &referenced {
            data.require(c)?;
        }
        Ok(())
    }
}

fn term_values(t: &Term, data: &DatasetFile) -> Result<Vec<Option<f64>>> {
    if t.is_intercept() {
        return Ok(vec![Some(1.0); data.n_rows]);
    }
    let col = data.require(&t.column)?;
    match &t.level {
        Some(level) => Ok(col.labels().into_iter().map(|l| l.map(|s| if s == *level { 1.0 } else { 0.0 })).collect()),
        None => col.numeric().ok_or_else(|| {
            CliError::Config(format!("term `{}` uses categorical column `{}` without a level", t.name, t.column))
        }),
    }
}

fn complete(t: &Term, data: &DatasetFile) -> Result<Vec<f64>> {
    term_values(t, data)?
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| CliError::Config(format!("column `{}` has missing values but no imputation model", t.column)))
}

fn engine_err(submodel: SubModel) -> impl Fn(gmrfmi::GmrfError) -> CliError {
    move |source| CliError::Engine { submodel, source }
}

/// Builds the joint model for a missingness variant. Imputation declarations
/// only take effect on columns that actually have missing values; a complete
/// imputed column enters as an ordinary fixed effect and no missingness
/// block is attached for it.
pub fn build_model(
    spec: &RunSpec,
    data: &DatasetFile,
    adjacency: Option<&AdjacencyFile>,
    variant: Option<Mechanism>,
) -> Result<ModelSpec> {
    let n = data.n_rows;
    let active: Vec<&(String, ImputationDecl)> =
        spec.imputations.iter().filter(|(c, _)| data.column(c).map(|col| col.n_missing() > 0).unwrap_or(false)).collect();
    let is_effect = |t: &Term| t.level.is_none() && active.iter().any(|(c, _)| *c == t.column);

    let a = &spec.analysis;
    let response = data.numeric(&a.response)?;
    let mut block = LikelihoodBlock::new(a.response.clone(), SubModel::Analysis, a.family, response);
    if let Some(off) = &a.offset {
        let t = Term { name: off.clone(), column: off.clone(), level: None };
        block = block.with_offset(complete(&t, data)?);
    }
    if let Some(name) = &a.intercept {
        block = block.with_fixed(FixedEffect::intercept(name.clone(), n));
    }
    for t in &a.terms {
        block = if is_effect(t) {
            block.with_copy(CopyTerm::new(t.name.clone(), t.column.clone()))
        } else {
            block.with_fixed(FixedEffect::new(t.name.clone(), complete(t, data)?))
        };
    }
    if a.family == Family::Gaussian {
        block = block.with_precision_name(a.precision.clone());
    }

    let mut terms = Vec::new();
    for (col, decl) in &active {
        let covariate = CovariateWithGaps::new(data.numeric(col)?).map_err(engine_err(SubModel::Imputation))?;
        let kind = match decl {
            ImputationDecl::LinReg { terms, precision } => {
                let cols: Vec<Vec<f64>> = terms.iter().map(|t| complete(t, data)).collect::<Result<_>>()?;
                ImputationKind::LinReg {
                    design: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]),
                    coef_names: terms.iter().map(|t| t.name.clone()).collect(),
                    tau_name: precision.clone(),
                }
            }
            ImputationDecl::Car { names } => {
                let adj = adjacency.ok_or_else(|| CliError::Config("a CAR imputation model needs `adjacency`".into()))?;
                if adj.n != n {
                    return Err(CliError::Config(format!("adjacency has {} nodes, the dataset {n} rows", adj.n)));
                }
                let w = adj.matrix().map_err(|e| CliError::Config(format!("adjacency: {e}")))?;
                ImputationKind::Car {
                    adjacency: ScaledAdjacency::from_raw(&w).map_err(engine_err(SubModel::Imputation))?,
                    names: names.clone(),
                }
            }
        };
        terms.push(ImputationTerm { name: col.clone(), covariate, kind });
    }
    let model = ModelSpec::with_settings(vec![block], terms, spec.pinning_precision, Default::default())
        .map_err(engine_err(SubModel::Analysis))?;

    let (Some(mech), Some(m)) = (variant, &spec.missingness) else { return Ok(model) };
    if model.effect_index(&m.covariate).is_none() {
        // nothing is missing: the missingness model is not identifiable
        return Ok(model);
    }
    let mut sub = MissingnessSubmodel::for_effect(&model, &m.covariate, &m.link)
        .map_err(engine_err(SubModel::Missingness))?
        .with_intercept_name(m.intercept.clone());
    let design = match mech {
        Mechanism::Mcar => &[][..],
        Mechanism::Mar => &m.mar_terms[..],
        Mechanism::Mnar => &m.mnar_terms[..],
    };
    for t in design {
        sub = sub.with_design(FixedEffect::new(t.name.clone(), complete(t, data)?));
    }
    attach_missingness_submodel(&model, &sub, mech).map_err(engine_err(SubModel::Missingness))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::parse_dataset;
    use std::path::Path;

    #[test]
    fn terms_parse() {
        assert_eq!(
            "beta_1:age=40-59".parse::<Term>().unwrap(),
            Term { name: "beta_1".into(), column: "age".into(), level: Some("40-59".into()) }
        );
        assert!("nocolon".parse::<Term>().is_err());
    }

    fn cfg(text: &str) -> RunSpec {
        RunSpec::from_config(&RawConfig::parse(text, Path::new("c"), Path::new(".")).unwrap()).unwrap()
    }

    #[test]
    fn complete_imputed_columns_become_fixed_effects() {
        let spec = cfg(
            "dataset = d.csv\nanalysis.response = y\nanalysis.terms = b:x\nimputation.x.model = linreg\n\
             missingness.variant = MNAR\nmissingness.covariate = x\n",
        );
        let full = parse_dataset("y,x\n1,2\n2,3\n1.5,1\n", Path::new("d"), &[]).unwrap();
        let m = build_model(&spec, &full, None, spec.variant).unwrap();
        assert!(m.imputations.is_empty());
        assert_eq!(m.blocks.len(), 1);
        let gaps = parse_dataset("y,x\n1,2\n2,NA\n1.5,1\n", Path::new("d"), &[]).unwrap();
        let m = build_model(&spec, &gaps, None, spec.variant).unwrap();
        assert_eq!(m.imputations.len(), 1);
        assert_eq!(m.blocks.len(), 2);
    }

    #[test]
    fn missing_fixed_covariates_are_rejected() {
        let spec = cfg("dataset = d.csv\nanalysis.response = y\nanalysis.terms = b:x\n");
        let gaps = parse_dataset("y,x\n1,2\n2,NA\n", Path::new("d"), &[]).unwrap();
        assert!(matches!(build_model(&spec, &gaps, None, None), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_and_even_grids_are_rejected() {
        let parse = |t: &str| RunSpec::from_config(&RawConfig::parse(t, Path::new("c"), Path::new(".")).unwrap());
        assert!(parse("dataset = d\nanalysis.response = y\nanalisys.terms = a:b\n").is_err());
        assert!(parse("dataset = d\nanalysis.response = y\nengine.grid_points = 4\n").is_err());
    }
}
