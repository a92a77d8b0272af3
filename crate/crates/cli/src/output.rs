//! Result tables, density grids and the error manifest.
//!
//! Every file starts with a `# config_hash=… seed=…` comment line and is
//! re-readable with [`crate::dataset::load_dataset`]. Numbers in CSV files use
//! the shortest round-trip representation; text tables use three decimals.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gmrfmi::explore::NamedMarginal;
use gmrfmi::marginal::PosteriorMarginal;
use serde::Serialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub parameter: String,
    pub submodel: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

impl ResultRow {
    pub fn from_marginal(m: &NamedMarginal) -> Self {
        Self::new(&m.name, &m.submodel.to_string(), &m.marginal)
    }

    pub fn new(parameter: &str, submodel: &str, m: &PosteriorMarginal) -> Self {
        Self {
            parameter: parameter.to_string(),
            submodel: submodel.to_string(),
            mean: m.mean,
            sd: m.sd,
            q025: m.q025,
            q50: m.q50,
            q975: m.q975,
        }
    }
}

pub const RESULT_COLUMNS: [&str; 7] = ["parameter", "submodel", "mean", "sd", "q2.5", "q50", "q97.5"];

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn csv_text(prov: &Provenance, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Config(format!("CSV encoding: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(&r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(format!("CSV encoding: {e}")))?;
    Ok(prov.header() + &String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

pub fn results_csv(prov: &Provenance, rows: &[ResultRow]) -> Result<String> {
    csv_text(
        prov,
        &RESULT_COLUMNS,
        rows.iter().map(|r| {
            vec![r.parameter.clone(), r.submodel.clone(), num(r.mean), num(r.sd), num(r.q025), num(r.q50), num(r.q975)]
        }),
    )
}

pub fn write_results(path: &Path, prov: &Provenance, rows: &[ResultRow]) -> Result<()> {
    write_file(path, &results_csv(prov, rows)?)
}

/// Generic CSV table with the provenance header.
pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    write_file(path, &csv_text(prov, header, rows)?)
}

/// `x,density` grid of one marginal.
pub fn write_density(path: &Path, prov: &Provenance, m: &PosteriorMarginal) -> Result<()> {
    write_csv(path, prov, &["x", "density"], m.grid.iter().map(|&(x, d)| vec![num(x), num(d)]).collect())
}

/// File-name-safe version of a marginal name (`bmi[3]` → `bmi_3`).
pub fn file_stem(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    s.trim_end_matches('_').to_string()
}

pub fn density_path(dir: &Path, prefix: &str, name: &str) -> PathBuf {
    dir.join("densities").join(format!("{prefix}{}.csv", file_stem(name)))
}

/// `mean (sd)` with three decimals.
pub fn cell(mean: f64, sd: f64) -> String {
    format!("{mean:.3} ({sd:.3})")
}

/// Aligned text table; `None` cells print as `--`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn new(title: impl Into<String>, header: Vec<String>) -> Self {
        Self { title: title.into(), header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let ncol = self.header.len();
        let mut width = vec![0usize; ncol];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (j, c) in r.iter().enumerate().take(ncol) {
                width[j] = width[j].max(c.chars().count());
            }
        }
        let line = |r: &[String]| {
            let cells: Vec<String> = (0..ncol)
                .map(|j| {
                    let c = r.get(j).map(String::as_str).unwrap_or("--");
                    if j == 0 {
                        format!("{c:<w$}", w = width[j])
                    } else {
                        format!("{c:>w$}", w = width[j])
                    }
                })
                .collect();
            cells.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.header));
        let total: usize = width.iter().sum::<usize>() + 2 * ncol.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

pub fn write_text(path: &Path, prov: &Provenance, tables: &[TextTable]) -> Result<()> {
    let mut out = prov.header();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&t.render());
    }
    write_file(path, &out)
}

/// One entry of the JSON-lines error manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub model: String,
    pub kind: String,
    pub submodel: Option<String>,
    pub message: String,
}

impl ManifestEntry {
    pub fn from_error(model: &str, e: &CliError) -> Self {
        let submodel = match e {
            CliError::Engine { submodel, .. } => Some(submodel.to_string()),
            _ => None,
        };
        Self { model: model.to_string(), kind: e.kind().to_string(), submodel, message: e.to_string() }
    }

    pub fn warning(model: &str, message: &str) -> Self {
        Self { model: model.to_string(), kind: "not-converged".into(), submodel: None, message: message.to_string() }
    }
}

pub fn write_manifest(path: &Path, prov: &Provenance, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{{\"config_hash\":\"{}\",\"seed\":{}}}", prov.config_hash, prov.seed);
    for e in entries {
        out.push_str(&serde_json::to_string(e).map_err(|e| CliError::Config(format!("JSON encoding: {e}")))?);
        out.push('\n');
    }
    write_file(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_is_aligned() {
        let mut t = TextTable::new("T", vec!["parameter".into(), "MCAR".into()]);
        t.push(vec!["alpha".into(), cell(-4.8216, 1.1414)]);
        t.push(vec!["tau".into()]);
        let s = t.render();
        assert!(s.contains("alpha      -4.822 (1.141)"), "{s}");
        assert!(s.lines().last().unwrap().ends_with("--"));
    }

    #[test]
    fn stems_are_safe() {
        assert_eq!(file_stem("bmi[3]"), "bmi_3");
        assert_eq!(file_stem("beta_M1"), "beta_M1");
    }
}
