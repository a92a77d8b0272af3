//! The `fit`, `sensitivity`, `simulate` and `report` workflows.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gmrfmi::categorical::{
    draw_completions, fit_multinomial_poisson, pool_marginals, CategoricalWithGaps, ProbabilityTable,
};
use gmrfmi::explore::{fit, Fit, NamedMarginal};
use gmrfmi::missingness::{simulate_mask, Mechanism, MissingnessScenario};
use gmrfmi::model::{HyperRole, LatentRole, ModelSpec, SubModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjacency::{load_adjacency, AdjacencyFile};
use crate::build::{build_model, variant_label, RunSpec};
use crate::config::RawConfig;
use crate::dataset::{load_dataset, Column, ColumnData, DatasetFile};
use crate::error::{CliError, Result};
use crate::output::{
    cell, density_path, file_stem, write_csv, write_density, write_manifest, write_results, write_text,
    ManifestEntry, Provenance, ResultRow, TextTable, RESULT_COLUMNS,
};

/// Command-line overrides of configuration keys.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
    pub pinning_precision: Option<f64>,
    pub workers: Option<usize>,
    pub mi_draws: Option<usize>,
}

impl Overrides {
    /// Writes the overrides into the configuration so that they are covered by its hash.
    pub fn apply(&self, cfg: &mut RawConfig) {
        if let Some(v) = self.seed {
            cfg.set("seed", v.to_string());
        }
        if let Some(v) = self.grid_points {
            cfg.set("engine.grid_points", v.to_string());
        }
        if let Some(v) = self.pinning_precision {
            cfg.set("engine.pinning_precision", format!("{v:e}"));
        }
        if let Some(v) = self.mi_draws {
            cfg.set("mi.draws", v.to_string());
        }
    }
}

/// A loaded, validated run.
#[derive(Debug, Clone)]
pub struct Context {
    pub spec: RunSpec,
    pub prov: Provenance,
    pub data: DatasetFile,
    pub adjacency: Option<AdjacencyFile>,
}

impl Context {
    pub fn from_config(cfg: &RawConfig) -> Result<Self> {
        let spec = RunSpec::from_config(cfg)?;
        let data = spec.prepare(load_dataset(&spec.dataset, &[])?)?;
        let adjacency = spec.adjacency.as_deref().map(load_adjacency).transpose()?;
        let prov = Provenance { config_hash: cfg.hash(), seed: spec.seed };
        Ok(Self { spec, prov, data, adjacency })
    }

    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg = RawConfig::load(path)?;
        overrides.apply(&mut cfg);
        Self::from_config(&cfg)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.spec.output_dir.join(name)
    }

    pub fn model(&self, data: &DatasetFile, variant: Option<Mechanism>) -> Result<ModelSpec> {
        build_model(&self.spec, data, self.adjacency.as_ref(), variant)
    }
}

/// Result of a workflow: whether every requested model converged, and the
/// failures recorded in the error manifest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub manifest: Vec<ManifestEntry>,
}

/// Fits a model; engine failures are attributed to the joint model.
pub fn fit_model(ctx: &Context, model: &ModelSpec) -> Result<Fit> {
    fit(model, &ctx.spec.engine).map_err(|source| CliError::Engine { submodel: SubModel::Analysis, source })
}

/// Position of a parameter in the reporting order: sub-model, then fixed
/// effects, copy coefficients and imputation parameters, then precisions.
fn rank(model: &ModelSpec, name: &str) -> (SubModel, u8) {
    let layout = model.layout();
    if let Some(h) = layout.hypers.iter().find(|h| h.name == name) {
        let r = match h.role {
            HyperRole::Precision { .. } => 2,
            HyperRole::Copy { .. } | HyperRole::Imputation { .. } => 1,
        };
        return (h.submodel, r);
    }
    let sub = layout.latent.iter().find(|l| l.name == name).map(|l| l.submodel).unwrap_or(SubModel::Analysis);
    (sub, 0)
}

/// Result tables of one fit (or of pooled marginals).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTables {
    pub parameters: Vec<ResultRow>,
    pub imputed: Vec<ResultRow>,
    pub predictive: Vec<ResultRow>,
}

impl FitTables {
    pub fn from_marginals(model: &ModelSpec, marginals: &[NamedMarginal], predictive: &[NamedMarginal]) -> Self {
        let is_effect = |name: &str| {
            model.layout().latent.iter().any(|l| l.name == name && matches!(l.role, LatentRole::Effect { .. }))
        };
        let mut params: Vec<&NamedMarginal> = marginals.iter().filter(|m| !is_effect(&m.name)).collect();
        params.sort_by_key(|m| rank(model, &m.name));
        Self {
            parameters: params.into_iter().map(ResultRow::from_marginal).collect(),
            imputed: marginals.iter().filter(|m| is_effect(&m.name)).map(ResultRow::from_marginal).collect(),
            predictive: predictive.iter().map(ResultRow::from_marginal).collect(),
        }
    }

    pub fn from_fit(model: &ModelSpec, f: &Fit) -> Self {
        let all: Vec<NamedMarginal> = f.parameters().cloned().collect();
        Self::from_marginals(model, &all, &f.predictive)
    }

    pub fn get(&self, name: &str) -> Option<&ResultRow> {
        self.parameters.iter().chain(&self.imputed).chain(&self.predictive).find(|r| r.parameter == name)
    }

    fn write(&self, ctx: &Context, prefix: &str) -> Result<()> {
        write_results(&ctx.out(&format!("{prefix}results.csv")), &ctx.prov, &self.parameters)?;
        if !self.imputed.is_empty() {
            write_results(&ctx.out(&format!("{prefix}imputed.csv")), &ctx.prov, &self.imputed)?;
        }
        if !self.predictive.is_empty() {
            write_results(&ctx.out(&format!("{prefix}predictive.csv")), &ctx.prov, &self.predictive)?;
        }
        Ok(())
    }
}

/// Table with one `mean (sd)` column per labelled result set.
fn comparison_table(title: &str, labels: &[String], sets: &[Option<&FitTables>]) -> TextTable {
    let mut header = vec!["submodel".to_string(), "parameter".to_string()];
    header.extend(labels.iter().cloned());
    let mut t = TextTable::new(title, header);
    for (name, submodel) in union_rows(sets) {
        let mut row = vec![submodel, name.clone()];
        for s in sets {
            row.push(match s {
                None => "failed".into(),
                Some(s) => s.get(&name).map(|r| cell(r.mean, r.sd)).unwrap_or_else(|| "--".into()),
            });
        }
        t.push(row);
    }
    t
}

/// Parameter names across result sets in first-appearance order, grouped by sub-model.
fn union_rows(sets: &[Option<&FitTables>]) -> Vec<(String, String)> {
    let mut rows: Vec<(String, String)> = Vec::new();
    for s in sets.iter().flatten() {
        for r in &s.parameters {
            if !rows.iter().any(|(n, _)| *n == r.parameter) {
                rows.push((r.parameter.clone(), r.submodel.clone()));
            }
        }
    }
    let order = |s: &str| ["Analysis", "Imputation", "Missingness"].iter().position(|x| *x == s).unwrap_or(3);
    rows.sort_by_key(|(_, s)| order(s));
    rows
}

fn requested_densities(ctx: &Context, prefix: &str, sources: &[&[NamedMarginal]]) -> Result<()> {
    for name in &ctx.spec.densities {
        let m = sources
            .iter()
            .flat_map(|s| s.iter())
            .find(|m| m.name == *name)
            .ok_or_else(|| CliError::Config(format!("`output.densities` names unknown marginal `{name}`")))?;
        write_density(&density_path(&ctx.spec.output_dir, prefix, name), &ctx.prov, &m.marginal)?;
    }
    Ok(())
}

fn not_converged(label: &str, f: &Fit) -> Vec<ManifestEntry> {
    f.warnings.iter().map(|w| ManifestEntry::warning(label, w)).collect()
}

/// Runs `f` on a worker pool of the configured size (or the global pool).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// `fit`: one model for the configured missingness variant, or the
/// multiple-imputation workflow when an `mi.covariate` is declared.
pub fn run_fit(ctx: &Context) -> Result<Outcome> {
    if ctx.spec.mi.is_some() {
        return run_multiple_imputation(ctx).map(|r| r.outcome);
    }
    let label = variant_label(ctx.spec.variant);
    let model = ctx.model(&ctx.data, ctx.spec.variant)?;
    let (tables, outcome) = match fit_model(ctx, &model) {
        Ok(f) => {
            let tables = FitTables::from_fit(&model, &f);
            tables.write(ctx, "")?;
            let all: Vec<NamedMarginal> = f.parameters().cloned().collect();
            requested_densities(ctx, "", &[&all, &f.predictive])?;
            let manifest = not_converged(&label, &f);
            (Some(tables), Outcome { converged: manifest.is_empty(), manifest })
        }
        Err(e) => (None, Outcome { converged: false, manifest: vec![ManifestEntry::from_error(&label, &e)] }),
    };
    let title = format!("Posterior mean (sd), missingness model: {label}");
    write_text(&ctx.out("summary.txt"), &ctx.prov, &[comparison_table(&title, &[label], &[tables.as_ref()])])?;
    write_manifest(&ctx.out("errors.jsonl"), &ctx.prov, &outcome.manifest)?;
    Ok(outcome)
}

#[derive(Debug, Clone)]
pub struct SensitivityResult {
    pub labels: Vec<String>,
    pub tables: Vec<Option<FitTables>>,
    /// `(parameter, submodel, max |mean_a − mean_b|)` over the variants that report it.
    pub differences: Vec<(String, String, Option<f64>)>,
    pub outcome: Outcome,
}

/// `sensitivity`: the same data under every listed missingness variant.
pub fn run_sensitivity(ctx: &Context) -> Result<SensitivityResult> {
    let variants = &ctx.spec.sensitivity;
    if variants.len() < 2 {
        return Err(CliError::Config("`sensitivity.variants` needs at least two variants".into()));
    }
    let models: Vec<ModelSpec> = variants.iter().map(|&v| ctx.model(&ctx.data, v)).collect::<Result<_>>()?;
    let fits: Vec<Result<Fit>> = models.par_iter().map(|m| fit_model(ctx, m)).collect();
    let mut labels = Vec::new();
    let mut tables = Vec::new();
    let mut manifest = Vec::new();
    for (i, ((v, m), f)) in variants.iter().zip(&models).zip(fits).enumerate() {
        // repeated variants get distinct labels
        let base = variant_label(*v);
        let label = if labels.contains(&base) { format!("{base}#{}", i + 1) } else { base };
        match f {
            Ok(f) => {
                manifest.extend(not_converged(&label, &f));
                let t = FitTables::from_fit(m, &f);
                t.write(ctx, &format!("{}_", file_stem(&label)))?;
                tables.push(Some(t));
            }
            Err(e) => {
                manifest.push(ManifestEntry::from_error(&label, &e));
                tables.push(None);
            }
        }
        labels.push(label);
    }
    let sets: Vec<Option<&FitTables>> = tables.iter().map(Option::as_ref).collect();
    let differences: Vec<(String, String, Option<f64>)> = union_rows(&sets)
        .into_iter()
        .map(|(name, sub)| {
            let means: Vec<f64> = sets.iter().flatten().filter_map(|t| t.get(&name)).map(|r| r.mean).collect();
            let d = (means.len() >= 2).then(|| {
                let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
                hi - lo
            });
            (name, sub, d)
        })
        .collect();
    let side = comparison_table("Posterior mean (sd) by missingness model", &labels, &sets);
    let mut diff = TextTable::new(
        "Maximum absolute difference of posterior means across models",
        vec!["submodel".into(), "parameter".into(), "max |diff|".into()],
    );
    for (name, sub, d) in &differences {
        diff.push(vec![sub.clone(), name.clone(), d.map(|v| format!("{v:.3}")).unwrap_or_else(|| "--".into())]);
    }
    write_text(&ctx.out("summary.txt"), &ctx.prov, &[side, diff])?;
    let mut header = vec!["parameter".to_string(), "submodel".to_string()];
    header.extend(labels.iter().map(|l| format!("mean_{l}")));
    header.push("max_abs_diff".into());
    let rows = differences
        .iter()
        .map(|(name, sub, d)| {
            let mut r = vec![name.clone(), sub.clone()];
            for s in &sets {
                r.push(s.and_then(|t| t.get(name)).map(|x| format!("{}", x.mean)).unwrap_or_else(|| "NA".into()));
            }
            r.push(d.map(|v| format!("{v}")).unwrap_or_else(|| "NA".into()));
            r
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&ctx.out("comparison.csv"), &ctx.prov, &header_refs, rows)?;
    write_manifest(&ctx.out("errors.jsonl"), &ctx.prov, &manifest)?;
    let outcome = Outcome { converged: manifest.is_empty(), manifest };
    Ok(SensitivityResult { labels, tables, differences, outcome })
}

#[derive(Debug, Clone)]
pub struct MiResult {
    pub table: ProbabilityTable,
    pub n_draws: usize,
    pub pooled: FitTables,
    pub outcome: Outcome,
}

fn replace_labels(data: &DatasetFile, name: &str, labels: Vec<Option<String>>) -> DatasetFile {
    let mut d = data.clone();
    d.set_column(Column { name: name.to_string(), data: ColumnData::Categorical(labels) })
        .expect("completed column has the dataset length");
    d
}

/// Multiple imputation of a categorical covariate through the multinomial-Poisson
/// model, one fit per completed dataset and equal-weight pooling.
pub fn run_multiple_imputation(ctx: &Context) -> Result<MiResult> {
    let mi = ctx.spec.mi.as_ref().ok_or_else(|| CliError::Config("no `mi.covariate` declared".into()))?;
    let values = ctx.data.require(&mi.covariate)?.labels();
    let strata: Vec<String> = ctx
        .data
        .require(&mi.strata)?
        .labels()
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Config(format!("stratum column `{}` has missing values", mi.strata)))?;
    let levels = if mi.levels.is_empty() {
        let mut l: Vec<String> = values.iter().flatten().cloned().collect();
        l.sort();
        l.dedup();
        l
    } else {
        mi.levels.clone()
    };
    let mi_err = |source| CliError::Engine { submodel: SubModel::Imputation, source };
    let cat = CategoricalWithGaps::new(levels, &values, &strata).map_err(mi_err)?;
    let outcome_values = ctx.data.numeric(&ctx.spec.analysis.response)?;
    let table = fit_multinomial_poisson(&cat, mi.include_outcome, Some(&outcome_values)).map_err(mi_err)?;
    let draw_cat = if mi.include_outcome { cat.refined_by_outcome(&outcome_values).map_err(mi_err)? } else { cat.clone() };
    let draws = draw_completions(&table, &draw_cat, mi.draws, ctx.spec.seed).map_err(mi_err)?;
    let completed: Vec<DatasetFile> = draws
        .draws
        .iter()
        .map(|d| replace_labels(&ctx.data, &mi.covariate, d.iter().map(|&k| Some(cat.levels[k].clone())).collect()))
        .collect();
    let models: Vec<ModelSpec> = completed.iter().map(|d| ctx.model(d, ctx.spec.variant)).collect::<Result<_>>()?;
    let fits: Vec<Result<Fit>> = models.par_iter().map(|m| fit_model(ctx, m)).collect();

    let mut manifest = Vec::new();
    let mut maps = Vec::new();
    let mut predictive = Vec::new();
    for (i, f) in fits.into_iter().enumerate() {
        let label = format!("draw {}", i + 1);
        match f {
            Ok(f) => {
                manifest.extend(not_converged(&label, &f));
                maps.push(f.parameters().cloned().collect::<Vec<_>>());
                predictive.push(f.predictive);
            }
            Err(e) => manifest.push(ManifestEntry::from_error(&label, &e)),
        }
    }
    if maps.is_empty() {
        write_manifest(&ctx.out("errors.jsonl"), &ctx.prov, &manifest)?;
        return Err(CliError::Engine {
            submodel: SubModel::Analysis,
            source: gmrfmi::GmrfError::EmptyInput("every completed-dataset fit failed".into()),
        });
    }
    let to_named = |pooled: Vec<gmrfmi::categorical::PooledMarginal>| -> Vec<NamedMarginal> {
        pooled.into_iter().map(|p| NamedMarginal { name: p.name, submodel: p.submodel, marginal: p.pooled }).collect()
    };
    let pooled = to_named(pool_marginals(&maps).map_err(mi_err)?);
    let pooled_pred = if predictive.iter().all(|p| !p.is_empty()) {
        to_named(pool_marginals(&predictive).map_err(mi_err)?)
    } else {
        Vec::new()
    };
    let tables = FitTables::from_marginals(&models[0], &pooled, &pooled_pred);
    tables.write(ctx, "")?;
    requested_densities(ctx, "", &[&pooled, &pooled_pred])?;

    let prob_rows: Vec<Vec<String>> = table
        .strata
        .iter()
        .enumerate()
        .flat_map(|(s, st)| {
            table.levels.iter().enumerate().map(move |(k, lv)| (s, k, st.clone(), lv.clone()))
        })
        .map(|(s, k, st, lv)| vec![st, lv, format!("{}", table.probabilities[s][k])])
        .collect();
    write_csv(&ctx.out("probabilities.csv"), &ctx.prov, &["stratum", "level", "probability"], prob_rows)?;
    let draw_rows: Vec<Vec<String>> = draws
        .draws
        .iter()
        .enumerate()
        .flat_map(|(l, d)| {
            let levels = &cat.levels;
            values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.is_none())
                .map(move |(i, _)| vec![(l + 1).to_string(), i.to_string(), levels[d[i]].clone()])
                .collect::<Vec<_>>()
        })
        .collect();
    write_csv(&ctx.out("draws.csv"), &ctx.prov, &["draw", "unit", "level"], draw_rows)?;

    let mut prob = TextTable::new(
        format!("Posterior probabilities of `{}` by `{}`", mi.covariate, mi.strata),
        std::iter::once(mi.covariate.clone()).chain(table.strata.iter().cloned()).collect(),
    );
    for (k, lv) in table.levels.iter().enumerate() {
        let mut row = vec![lv.clone()];
        row.extend(table.probabilities.iter().map(|p| format!("{:.2}", p[k])));
        prob.push(row);
    }
    let title = format!("Pooled posterior mean (sd) over {} completed datasets", maps.len());
    let params = comparison_table(&title, &["pooled".into()], &[Some(&tables)]);
    write_text(&ctx.out("summary.txt"), &ctx.prov, &[prob, params])?;
    write_manifest(&ctx.out("errors.jsonl"), &ctx.prov, &manifest)?;
    let outcome = Outcome { converged: manifest.is_empty(), manifest };
    Ok(MiResult { table, n_draws: draws.len(), pooled: tables, outcome })
}

/// One fitted cell of a simulation study.
#[derive(Debug, Clone)]
pub struct Cell {
    pub replicate: usize,
    /// `None` for the complete-data fit.
    pub mechanism: Option<Mechanism>,
    pub proportion: f64,
    pub model: Option<Mechanism>,
    pub result: std::result::Result<FitTables, String>,
    pub warnings: Vec<String>,
    /// Imputed-value marginals of the requested units.
    pub unit_marginals: Vec<NamedMarginal>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub cells: Vec<Cell>,
    /// `(replicate, mechanism, masks)` with one mask per proportion.
    pub masks: Vec<(usize, Mechanism, Vec<Vec<bool>>)>,
    pub outcome: Outcome,
}

/// Per-replicate, per-mechanism random stream derived from the run seed.
pub fn mask_rng(seed: u64, replicate: usize, mechanism: Mechanism) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = match mechanism {
        Mechanism::Mcar => 0,
        Mechanism::Mar => 1,
        Mechanism::Mnar => 2,
    };
    rng.set_stream(replicate as u64 * 4 + m);
    rng
}

/// Simulates the masks and fits every cell; nothing is written.
pub fn simulation_cells(ctx: &Context) -> Result<SimulationResult> {
    let sim = ctx.spec.simulation.as_ref().ok_or_else(|| CliError::Config("no `simulate.covariate` declared".into()))?;
    if ctx.adjacency.is_none() {
        return Err(CliError::Config("a simulation study needs `adjacency`".into()));
    }
    let full: Vec<f64> = ctx
        .data
        .numeric(&sim.covariate)?
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| CliError::Config(format!("simulated covariate `{}` must be complete", sim.covariate)))?;
    if sim.mechanisms.contains(&Mechanism::Mar) {
        return Err(CliError::Config("MAR masks are not simulated; use MCAR or MNAR".into()));
    }
    let mut masks = Vec::new();
    for r in 0..sim.replicates.max(1) {
        for &mech in &sim.mechanisms {
            let scenario = MissingnessScenario::new(mech, sim.proportions.clone())
                .map_err(|e| CliError::Config(e.to_string()))?
                .with_mnar(sim.mnar_intercept, sim.mnar_slope);
            let m = simulate_mask(&full, &scenario, &mut mask_rng(ctx.spec.seed, r, mech))
                .map_err(|e| CliError::Config(e.to_string()))?;
            masks.push((r, mech, m));
        }
    }
    // complete-data fit first, then replicate × mechanism × proportion × model
    let mut jobs: Vec<(usize, Option<Mechanism>, f64, Option<Mechanism>, Option<&Vec<bool>>)> =
        vec![(0, None, 0.0, None, None)];
    for (r, mech, ms) in &masks {
        for (p, m) in sim.proportions.iter().zip(ms) {
            for &model in &sim.models {
                jobs.push((*r, Some(*mech), *p, model, Some(m)));
            }
        }
    }
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(replicate, mechanism, proportion, model_variant, mask)| {
            let data = match mask {
                None => ctx.data.clone(),
                Some(mask) => {
                    let mut d = ctx.data.clone();
                    let values = full.iter().zip(mask).map(|(&v, &gone)| (!gone).then_some(v)).collect();
                    d.set_column(Column { name: sim.covariate.clone(), data: ColumnData::Real(values) })
                        .expect("masked column has the dataset length");
                    d
                }
            };
            let fitted = ctx.model(&data, model_variant).and_then(|m| fit_model(ctx, &m).map(|f| (m, f)));
            let (result, warnings, unit_marginals) = match fitted {
                Ok((m, f)) => {
                    let units = sim
                        .units
                        .iter()
                        .filter_map(|u| f.marginal(&format!("{}[{u}]", sim.covariate)).cloned())
                        .filter(|nm| nm.submodel == SubModel::Imputation)
                        .collect();
                    (Ok(FitTables::from_fit(&m, &f)), f.warnings.clone(), units)
                }
                Err(e) => (Err(e.to_string()), Vec::new(), Vec::new()),
            };
            Cell { replicate, mechanism, proportion, model: model_variant, result, warnings, unit_marginals }
        })
        .collect();
    let mut manifest = Vec::new();
    for c in &cells {
        let label = cell_label(c);
        if let Err(e) = &c.result {
            manifest.push(ManifestEntry {
                model: label.clone(),
                kind: "engine".into(),
                submodel: Some(SubModel::Analysis.to_string()),
                message: e.clone(),
            });
        }
        manifest.extend(c.warnings.iter().map(|w| ManifestEntry::warning(&label, w)));
    }
    let outcome = Outcome { converged: manifest.is_empty(), manifest };
    Ok(SimulationResult { cells, masks, outcome })
}

fn cell_label(c: &Cell) -> String {
    match c.mechanism {
        None => "complete data".into(),
        Some(m) => format!(
            "replicate {} {} data {}% {} model",
            c.replicate + 1,
            m,
            format_pct(c.proportion),
            variant_label(c.model)
        ),
    }
}

fn format_pct(p: f64) -> String {
    let v = p * 100.0;
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v}")
    }
}

/// Columns of the simulation tables: analysis parameters, imputation
/// parameters of the simulated covariate, missingness parameters.
fn simulation_columns(ctx: &Context) -> Vec<String> {
    let spec = &ctx.spec;
    let sim = spec.simulation.as_ref().expect("simulation spec");
    let mut cols: Vec<String> = spec.analysis.intercept.iter().cloned().collect();
    cols.extend(spec.analysis.terms.iter().map(|t| t.name.clone()));
    for (c, decl) in &spec.imputations {
        if *c == sim.covariate {
            match decl {
                crate::build::ImputationDecl::Car { names } => cols.extend(names.iter().cloned()),
                crate::build::ImputationDecl::LinReg { terms, precision } => {
                    cols.extend(terms.iter().map(|t| t.name.clone()));
                    cols.push(precision.clone());
                }
            }
        }
    }
    if let Some(m) = &spec.missingness {
        cols.push(m.intercept.clone());
        cols.extend(m.mnar_terms.iter().map(|t| t.name.clone()));
        cols.push(m.link.clone());
    }
    cols
}

/// `simulate`: masks, cell fits, one table per fitted model variant, the
/// imputed-value density grids of the requested units and the manifest.
pub fn run_simulation(ctx: &Context) -> Result<SimulationResult> {
    let res = simulation_cells(ctx)?;
    let sim = ctx.spec.simulation.as_ref().expect("checked by simulation_cells");
    let replicates = sim.replicates.max(1);

    let mask_rows: Vec<Vec<String>> = res
        .masks
        .iter()
        .flat_map(|(r, mech, ms)| {
            sim.proportions.iter().zip(ms).flat_map(move |(p, m)| {
                m.iter().enumerate().filter(|(_, &g)| g).map(move |(u, _)| {
                    vec![(r + 1).to_string(), mech.to_string(), format!("{p}"), u.to_string()]
                })
            })
        })
        .collect();
    write_csv(&ctx.out("masks.csv"), &ctx.prov, &["replicate", "mechanism", "proportion", "unit"], mask_rows)?;

    let mut header: Vec<&str> = vec!["replicate", "mechanism", "proportion", "model", "status"];
    header.extend(RESULT_COLUMNS);
    let mut rows = Vec::new();
    for c in &res.cells {
        let key = vec![
            (c.replicate + 1).to_string(),
            c.mechanism.map(|m| m.to_string()).unwrap_or_else(|| "none".into()),
            format!("{}", c.proportion),
            variant_label(c.model),
        ];
        match &c.result {
            Ok(t) => {
                for r in &t.parameters {
                    let mut row = key.clone();
                    row.push("ok".into());
                    row.extend([r.parameter.clone(), r.submodel.clone()]);
                    row.extend([r.mean, r.sd, r.q025, r.q50, r.q975].iter().map(|v| format!("{v}")));
                    rows.push(row);
                }
            }
            Err(_) => {
                let mut row = key;
                row.push("failed".into());
                row.extend(std::iter::repeat_n("NA".to_string(), RESULT_COLUMNS.len()));
                rows.push(row);
            }
        }
    }
    write_csv(&ctx.out("cells.csv"), &ctx.prov, &header, rows)?;

    let columns = simulation_columns(ctx);
    let mut tables = Vec::new();
    for &model in &sim.models {
        let title = if replicates == 1 {
            format!("Posterior mean (sd), model with missingness: {}", variant_label(model))
        } else {
            format!(
                "Posterior mean (sd) averaged over {replicates} replicates, model with missingness: {}",
                variant_label(model)
            )
        };
        let mut head = vec!["missingness".to_string(), "% missing".to_string()];
        head.extend(columns.iter().cloned());
        let mut t = TextTable::new(title, head);
        let complete: Vec<&Cell> = res.cells.iter().filter(|c| c.mechanism.is_none()).collect();
        t.push(table_row("--", "0", &complete, &columns));
        for &mech in &sim.mechanisms {
            for &p in &sim.proportions {
                let group: Vec<&Cell> = res
                    .cells
                    .iter()
                    .filter(|c| c.mechanism == Some(mech) && c.proportion == p && c.model == model)
                    .collect();
                t.push(table_row(&mech.to_string(), &format_pct(p), &group, &columns));
            }
        }
        tables.push(t);
    }
    write_text(&ctx.out("summary.txt"), &ctx.prov, &tables)?;

    for c in res.cells.iter().filter(|c| c.replicate == 0) {
        let (Some(mech), Ok(_)) = (c.mechanism, &c.result) else { continue };
        let prefix = format!("{}_{}_{}_", mech, format_pct(c.proportion), variant_label(c.model));
        for m in &c.unit_marginals {
            write_density(&density_path(&ctx.spec.output_dir, &prefix, &m.name), &ctx.prov, &m.marginal)?;
        }
    }
    write_manifest(&ctx.out("errors.jsonl"), &ctx.prov, &res.outcome.manifest)?;
    Ok(res)
}

/// Replicate-averaged `mean (sd)` cells; `failed` if any replicate failed.
fn table_row(mech: &str, pct: &str, cells: &[&Cell], columns: &[String]) -> Vec<String> {
    let mut row = vec![mech.to_string(), pct.to_string()];
    let ok: Vec<&FitTables> = cells.iter().filter_map(|c| c.result.as_ref().ok()).collect();
    for col in columns {
        if ok.len() < cells.len() {
            row.push("failed".into());
            continue;
        }
        let vals: Vec<&ResultRow> = ok.iter().filter_map(|t| t.get(col)).collect();
        if vals.is_empty() || vals.len() < ok.len() {
            row.push("--".into());
        } else {
            let k = vals.len() as f64;
            row.push(cell(vals.iter().map(|r| r.mean).sum::<f64>() / k, vals.iter().map(|r| r.sd).sum::<f64>() / k));
        }
    }
    row
}

/// `report`: re-reads every result CSV in a directory and renders aligned tables.
pub fn run_report(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("reading {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).map(|n| n.ends_with("results.csv")).unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no result tables in {}", dir.display())));
    }
    let mut out = String::new();
    let mut header_lines = BTreeMap::new();
    for f in &files {
        let text = std::fs::read_to_string(f).map_err(|e| CliError::io(format!("reading {}", f.display()), e))?;
        if let Some(h) = text.lines().next().filter(|l| l.starts_with('#')) {
            header_lines.insert(h.to_string(), ());
        }
        let d = load_dataset(f, &[])?;
        let get = |c: &str| d.require(c).map(|col| col.labels());
        let (names, subs, means, sds) = (get("parameter")?, get("submodel")?, d.numeric("mean")?, d.numeric("sd")?);
        let title = f.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let mut t = TextTable::new(title, vec!["submodel".into(), "parameter".into(), "mean (sd)".into()]);
        for i in 0..d.n_rows {
            t.push(vec![
                subs[i].clone().unwrap_or_default(),
                names[i].clone().unwrap_or_default(),
                match (means[i], sds[i]) {
                    (Some(m), Some(s)) => cell(m, s),
                    _ => "--".into(),
                },
            ]);
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(&t.render());
    }
    let mut text = String::new();
    for h in header_lines.keys() {
        text.push_str(h);
        text.push('\n');
    }
    text.push_str(&out);
    std::fs::write(dir.join("report.txt"), &text).map_err(|e| CliError::io("writing report.txt", e))?;
    Ok(text)
}
