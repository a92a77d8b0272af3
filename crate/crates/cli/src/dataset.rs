//! CSV datasets with the literal `NA` as the missing-value token.

use std::path::Path;

use crate::error::{CliError, Result};

pub const MISSING_TOKEN: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnType {
    Real,
    Categorical,
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Real(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
    Count(Vec<Option<u64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

impl Column {
    pub fn len(&self) -> usize {
        match &self.data {
            ColumnData::Real(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
            ColumnData::Count(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self.data {
            ColumnData::Real(_) => ColumnType::Real,
            ColumnData::Categorical(_) => ColumnType::Categorical,
            ColumnData::Count(_) => ColumnType::Count,
        }
    }

    /// Numeric view of a real or count column.
    pub fn numeric(&self) -> Option<Vec<Option<f64>>> {
        match &self.data {
            ColumnData::Real(v) => Some(v.clone()),
            ColumnData::Count(v) => Some(v.iter().map(|x| x.map(|c| c as f64)).collect()),
            ColumnData::Categorical(_) => None,
        }
    }

    /// Label view; numeric columns are rendered with their shortest representation.
    pub fn labels(&self) -> Vec<Option<String>> {
        match &self.data {
            ColumnData::Categorical(v) => v.clone(),
            ColumnData::Real(v) => v.iter().map(|x| x.map(|f| f.to_string())).collect(),
            ColumnData::Count(v) => v.iter().map(|x| x.map(|c| c.to_string())).collect(),
        }
    }

    pub fn n_missing(&self) -> usize {
        self.labels().iter().filter(|v| v.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub columns: Vec<Column>,
    pub n_rows: usize,
}

impl DatasetFile {
    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column> {
        self.column(name).ok_or_else(|| CliError::Config(format!("column `{name}` does not exist in the dataset")))
    }

    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>> {
        self.require(name)?
            .numeric()
            .ok_or_else(|| CliError::Config(format!("column `{name}` is categorical, a numeric column is needed")))
    }

    /// Adds or replaces a column.
    pub fn set_column(&mut self, column: Column) -> Result<()> {
        if column.len() != self.n_rows {
            return Err(CliError::Config(format!(
                "column `{}` has {} rows, the dataset has {}",
                column.name,
                column.len(),
                self.n_rows
            )));
        }
        match self.columns.iter_mut().find(|c| c.name == column.name) {
            Some(c) => *c = column,
            None => self.columns.push(column),
        }
        Ok(())
    }
}

/// Loads a CSV file. Lines starting with `#` are comments. Column types are
/// inferred (all integers → count, all numbers → real, otherwise categorical)
/// unless given in `types`; a column mixing numbers with other tokens is an
/// error located at the first offending cell.
pub fn load_dataset(path: &Path, types: &[(String, ColumnType)]) -> Result<DatasetFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    parse_dataset(&text, path, types)
}

pub fn parse_dataset(text: &str, path: &Path, types: &[(String, ColumnType)]) -> Result<DatasetFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = match reader.headers() {
        Ok(h) => h.iter().map(str::to_string).collect(),
        Err(e) => return Err(csv_error(path, e)),
    };
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::parse(path, 1, 1, "empty file: no header row"));
    }
    for (j, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(CliError::parse(path, 1, j + 1, "empty column name"));
        }
        if headers[..j].contains(h) {
            return Err(CliError::parse(path, 1, j + 1, format!("duplicate column name `{h}`")));
        }
    }
    // cells with their 1-based line numbers
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut lines: Vec<usize> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(CliError::parse(path, line, j + 1, "empty cell (use NA for missing values)"));
            }
            cells[j].push(field.to_string());
        }
        lines.push(line);
    }
    if lines.is_empty() {
        return Err(CliError::parse(path, 2, 1, "no data rows"));
    }
    let columns = headers
        .iter()
        .zip(cells)
        .enumerate()
        .map(|(j, (name, raw))| {
            let declared = types.iter().find(|(n, _)| n == name).map(|(_, t)| *t);
            let data = convert(&raw, declared, |row, msg| CliError::parse(path, lines[row], j + 1, msg))?;
            Ok(Column { name: name.clone(), data })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetFile { columns, n_rows: lines.len() })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let (line, message) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => (
            pos.as_ref().map(|p| p.line() as usize).unwrap_or(0),
            format!("ragged row: {len} fields where the header has {expected_len}"),
        ),
        _ => (e.position().map(|p| p.line() as usize).unwrap_or(0), e.to_string()),
    };
    CliError::parse(path, line, 1, message)
}

fn convert(
    raw: &[String],
    declared: Option<ColumnType>,
    err: impl Fn(usize, String) -> CliError,
) -> Result<ColumnData> {
    let present = || raw.iter().enumerate().filter(|(_, v)| v.as_str() != MISSING_TOKEN);
    let inferred = match declared {
        Some(t) => t,
        None => {
            let numeric = present().filter(|(_, v)| v.parse::<f64>().is_ok()).count();
            let total = present().count();
            if numeric == 0 {
                ColumnType::Categorical
            } else if numeric < total {
                let (row, v) = present().find(|(_, v)| v.parse::<f64>().is_err()).expect("a non-numeric cell");
                return Err(err(row, format!("`{v}` in a numeric column (the missing-value token is `NA`)")));
            } else if present().all(|(_, v)| v.parse::<u64>().is_ok()) {
                ColumnType::Count
            } else {
                ColumnType::Real
            }
        }
    };
    let missing = |v: &str| v == MISSING_TOKEN;
    Ok(match inferred {
        ColumnType::Categorical => {
            ColumnData::Categorical(raw.iter().map(|v| (!missing(v)).then(|| v.clone())).collect())
        }
        ColumnType::Real => ColumnData::Real(
            raw.iter()
                .enumerate()
                .map(|(row, v)| {
                    if missing(v) {
                        return Ok(None);
                    }
                    match v.parse::<f64>() {
                        Ok(x) if x.is_finite() => Ok(Some(x)),
                        _ => Err(err(row, format!("`{v}` is not a real number"))),
                    }
                })
                .collect::<Result<_>>()?,
        ),
        ColumnType::Count => ColumnData::Count(
            raw.iter()
                .enumerate()
                .map(|(row, v)| {
                    if missing(v) {
                        return Ok(None);
                    }
                    v.parse::<u64>().map(Some).map_err(|_| err(row, format!("`{v}` is not a nonnegative integer")))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetFile> {
        parse_dataset(text, Path::new("t.csv"), &[])
    }

    #[test]
    fn types_are_inferred() {
        let d = parse("a,b,c\n1,2.5,x\nNA,3,y\n").unwrap();
        assert_eq!(d.n_rows, 2);
        assert_eq!(d.columns[0].column_type(), ColumnType::Count);
        assert_eq!(d.columns[1].column_type(), ColumnType::Real);
        assert_eq!(d.columns[2].column_type(), ColumnType::Categorical);
        assert_eq!(d.columns[0].n_missing(), 1);
    }

    #[test]
    fn lowercase_na_is_rejected_with_location() {
        let e = parse("a,b\n1,2\nna,3\n").unwrap_err();
        match e {
            CliError::Parse { line, column, .. } => assert_eq!((line, column), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_ragged_files_are_rejected() {
        assert!(matches!(parse(""), Err(CliError::Parse { .. })));
        assert!(matches!(parse("a,b\n"), Err(CliError::Parse { .. })));
        match parse("a,b\n1,2\n3\n").unwrap_err() {
            CliError::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("ragged"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quoted_fields_and_comments() {
        let d = parse("# produced by a run\nname,v\n\"Smith, J\",1\n").unwrap();
        assert_eq!(d.column("name").unwrap().labels()[0].as_deref(), Some("Smith, J"));
    }

    #[test]
    fn declared_types_coerce_or_fail() {
        let d = parse_dataset("a\n1\n2\n", Path::new("t"), &[("a".into(), ColumnType::Categorical)]).unwrap();
        assert_eq!(d.columns[0].column_type(), ColumnType::Categorical);
        assert!(parse_dataset("a\n1.5\n", Path::new("t"), &[("a".into(), ColumnType::Count)]).is_err());
    }
}
