//! Column-major datasets with an explicitly missing outcome.
//!
//! A [`Dataset`] is immutable once built. Every constructor checks the
//! missing-data consistency rule: the outcome is missing exactly on the rows
//! whose response indicator is 0.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tokens that always read as a missing outcome, in addition to the caller's.
pub const DEFAULT_MISSING_TOKENS: [&str; 2] = ["", "NA"];

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Binary(Vec<u8>),
    Continuous(Vec<f64>),
    OptionalNumeric(Vec<Option<f64>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Binary(v) => v.len(),
            ColumnData::Continuous(v) => v.len(),
            ColumnData::OptionalNumeric(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnData::Binary(_) => ColumnKind::Binary,
            ColumnData::Continuous(_) => ColumnKind::Continuous,
            ColumnData::OptionalNumeric(_) => ColumnKind::OptionalNumeric,
        }
    }

    /// Value at `row`, `None` when missing.
    pub fn get(&self, row: usize) -> Option<f64> {
        match self {
            ColumnData::Binary(v) => Some(f64::from(v[row])),
            ColumnData::Continuous(v) => Some(v[row]),
            ColumnData::OptionalNumeric(v) => v[row],
        }
    }

    fn take_rows(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Binary(v) => ColumnData::Binary(rows.iter().map(|&r| v[r]).collect()),
            ColumnData::Continuous(v) => {
                ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect())
            }
            ColumnData::OptionalNumeric(v) => {
                ColumnData::OptionalNumeric(rows.iter().map(|&r| v[r]).collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnKind {
    Binary,
    Continuous,
    OptionalNumeric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
    /// Simulator ground truth. Never usable as a role or covariate.
    pub oracle: bool,
}

impl Column {
    pub fn binary(name: impl Into<String>, values: Vec<u8>) -> Self {
        Self::new(name, ColumnData::Binary(values))
    }

    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(name, ColumnData::Continuous(values))
    }

    pub fn optional(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self::new(name, ColumnData::OptionalNumeric(values))
    }

    pub fn new(name: impl Into<String>, data: ColumnData) -> Self {
        Column {
            name: name.into(),
            data,
            oracle: false,
        }
    }

    pub fn into_oracle(mut self) -> Self {
        self.oracle = true;
        self
    }
}

/// Assignment of variable roles to column names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMap {
    pub treatment: String,
    pub outcome: String,
    pub response: String,
    pub incentive: String,
    #[serde(default)]
    pub covariates: Vec<String>,
}

impl RoleMap {
    pub fn new(
        treatment: impl Into<String>,
        outcome: impl Into<String>,
        response: impl Into<String>,
        incentive: impl Into<String>,
        covariates: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        RoleMap {
            treatment: treatment.into(),
            outcome: outcome.into(),
            response: response.into(),
            incentive: incentive.into(),
            covariates: covariates.into_iter().map(Into::into).collect(),
        }
    }

    fn named_roles(&self) -> [(&'static str, &str); 4] {
        [
            ("treatment", &self.treatment),
            ("outcome", &self.outcome),
            ("response", &self.response),
            ("incentive", &self.incentive),
        ]
    }

    /// True when `name` is one of the four single-column roles.
    pub fn is_role_column(&self, name: &str) -> bool {
        self.named_roles().iter().any(|(_, c)| *c == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_rows: usize,
    roles: Option<RoleMap>,
}

impl Dataset {
    /// Builds a dataset without roles. Checks lengths, binary coding and
    /// finiteness.
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.data.len());
        let mut seen = HashSet::new();
        for col in &columns {
            if !seen.insert(col.name.as_str()) {
                return Err(Error::DuplicateColumn(col.name.clone()));
            }
            if col.data.len() != n_rows {
                return Err(Error::LengthMismatch {
                    column: col.name.clone(),
                    got: col.data.len(),
                    expected: n_rows,
                });
            }
            validate_values(col)?;
        }
        Ok(Dataset {
            columns,
            n_rows,
            roles: None,
        })
    }

    /// Attaches roles after checking that they reference distinct, existing,
    /// correctly typed columns and that the consistency rule holds.
    pub fn with_roles(mut self, roles: RoleMap) -> Result<Self> {
        let mut used = HashSet::new();
        for (role, name) in roles.named_roles() {
            let col = self.column(name).ok_or_else(|| Error::UnknownColumn(name.into()))?;
            if col.oracle {
                return Err(Error::Roles(format!("{role} `{name}` is an oracle column")));
            }
            if !used.insert(name) {
                return Err(Error::Roles(format!("column `{name}` assigned to two roles")));
            }
        }
        for name in &roles.covariates {
            let col = self.column(name).ok_or_else(|| Error::UnknownColumn(name.clone()))?;
            if col.oracle {
                return Err(Error::Roles(format!("covariate `{name}` is an oracle column")));
            }
            if !used.insert(name.as_str()) {
                return Err(Error::Roles(format!("column `{name}` assigned to two roles")));
            }
            if col.data.kind() == ColumnKind::OptionalNumeric {
                return Err(Error::Roles(format!("covariate `{name}` may not contain missing values")));
            }
        }
        for name in [&roles.treatment, &roles.response] {
            if self.column(name).map(|c| c.data.kind()) != Some(ColumnKind::Binary) {
                return Err(Error::Roles(format!("`{name}` must be a binary column")));
            }
        }
        if self.column(&roles.incentive).map(|c| c.data.kind())
            == Some(ColumnKind::OptionalNumeric)
        {
            return Err(Error::Roles(format!(
                "incentive `{}` may not contain missing values",
                roles.incentive
            )));
        }
        let outcome = &self.column(&roles.outcome).expect("checked above").data;
        let response = &self.column(&roles.response).expect("checked above").data;
        for row in 0..self.n_rows {
            let missing = outcome.get(row).is_none();
            let observed = response.get(row) == Some(1.0);
            if missing && observed {
                return Err(Error::Consistency {
                    row,
                    detail: "missing while the response indicator is 1",
                });
            }
            if !missing && !observed {
                return Err(Error::Consistency {
                    row,
                    detail: "present while the response indicator is 0",
                });
            }
        }
        self.roles = Some(roles);
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn roles(&self) -> Option<&RoleMap> {
        self.roles.as_ref()
    }

    pub fn require_roles(&self) -> Result<&RoleMap> {
        self.roles
            .as_ref()
            .ok_or_else(|| Error::Roles("dataset has no role assignment".into()))
    }

    /// Fully observed values of a column as `f64`.
    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::UnknownColumn(name.into()))?;
        match &col.data {
            ColumnData::Binary(v) => Ok(v.iter().map(|&b| f64::from(b)).collect()),
            ColumnData::Continuous(v) => Ok(v.clone()),
            ColumnData::OptionalNumeric(v) => v
                .iter()
                .enumerate()
                .map(|(row, x)| {
                    x.ok_or_else(|| Error::UnexpectedMissing {
                        column: name.into(),
                        row,
                    })
                })
                .collect(),
        }
    }

    /// Values with missing cells replaced by `fill`.
    pub fn values_or(&self, name: &str, fill: f64) -> Result<Vec<f64>> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::UnknownColumn(name.into()))?;
        Ok((0..self.n_rows)
            .map(|r| col.data.get(r).unwrap_or(fill))
            .collect())
    }

    /// Rows with `response = 1`; the outcome becomes a fully observed column.
    pub fn subset_observed(&self) -> Result<Dataset> {
        let roles = self.require_roles()?;
        let response = &self
            .column(&roles.response)
            .ok_or_else(|| Error::UnknownColumn(roles.response.clone()))?
            .data;
        let rows: Vec<usize> = (0..self.n_rows)
            .filter(|&r| response.get(r) == Some(1.0))
            .collect();
        let columns = self
            .columns
            .iter()
            .map(|c| {
                let mut data = c.data.take_rows(&rows);
                if c.name == roles.outcome {
                    if let ColumnData::OptionalNumeric(v) = &data {
                        data = ColumnData::Continuous(
                            v.iter().map(|x| x.expect("consistency checked")).collect(),
                        );
                    }
                }
                Column {
                    name: c.name.clone(),
                    data,
                    oracle: c.oracle,
                }
            })
            .collect();
        Ok(Dataset {
            columns,
            n_rows: rows.len(),
            roles: self.roles.clone(),
        })
    }

    /// Copy without the simulator's oracle columns.
    pub fn without_oracle(&self) -> Dataset {
        Dataset {
            columns: self.columns.iter().filter(|c| !c.oracle).cloned().collect(),
            n_rows: self.n_rows,
            roles: self.roles.clone(),
        }
    }

    /// Copy without the named columns.
    pub fn drop_columns(&self, names: &[&str]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .filter(|c| !names.contains(&c.name.as_str()))
                .cloned()
                .collect(),
            n_rows: self.n_rows,
            roles: self.roles.clone(),
        }
    }

    /// Rows concatenated with another dataset of identical layout.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.columns.len() != other.columns.len() {
            return Err(Error::Config("datasets have different column layouts".into()));
        }
        let mut columns = Vec::with_capacity(self.columns.len());
        for (a, b) in self.columns.iter().zip(&other.columns) {
            let data = match (&a.data, &b.data) {
                (ColumnData::Binary(x), ColumnData::Binary(y)) => {
                    ColumnData::Binary(x.iter().chain(y).copied().collect())
                }
                (ColumnData::Continuous(x), ColumnData::Continuous(y)) => {
                    ColumnData::Continuous(x.iter().chain(y).copied().collect())
                }
                (ColumnData::OptionalNumeric(x), ColumnData::OptionalNumeric(y)) => {
                    ColumnData::OptionalNumeric(x.iter().chain(y).copied().collect())
                }
                _ => return Err(Error::Config(format!("column `{}` differs in kind", a.name))),
            };
            if a.name != b.name {
                return Err(Error::Config("datasets have different column layouts".into()));
            }
            columns.push(Column {
                name: a.name.clone(),
                data,
                oracle: a.oracle,
            });
        }
        let ds = Dataset::new(columns)?;
        match &self.roles {
            Some(r) => ds.with_roles(r.clone()),
            None => Ok(ds),
        }
    }

    /// Rows reordered by `perm` (a permutation of `0..n_rows`).
    pub fn permute_rows(&self, perm: &[usize]) -> Dataset {
        Dataset {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    data: c.data.take_rows(perm),
                    oracle: c.oracle,
                })
                .collect(),
            n_rows: perm.len(),
            roles: self.roles.clone(),
        }
    }
}

fn validate_values(col: &Column) -> Result<()> {
    match &col.data {
        ColumnData::Binary(v) => {
            if let Some((row, &b)) = v.iter().enumerate().find(|(_, &b)| b > 1) {
                return Err(Error::NotBinary {
                    column: col.name.clone(),
                    row,
                    value: f64::from(b),
                });
            }
        }
        ColumnData::Continuous(v) => {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("column `{}`", col.name)));
            }
        }
        ColumnData::OptionalNumeric(v) => {
            if v.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("column `{}`", col.name)));
            }
        }
    }
    Ok(())
}

/// Reads a headed, comma-separated file.
///
/// Treatment and response are parsed as binary, the outcome as optional
/// numeric; any other column is binary when every value is 0 or 1 and
/// continuous otherwise. When the response column is absent it is derived
/// from the outcome's missingness pattern and appended last.
pub fn load_csv(path: impl AsRef<Path>, roles: &RoleMap, missing_token: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();

    for (_, name) in roles.named_roles() {
        if name != roles.response && !header.iter().any(|h| h == name) {
            return Err(Error::UnknownColumn(name.to_owned()));
        }
    }
    for name in &roles.covariates {
        if !header.iter().any(|h| h == name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }

    let mut cells: Vec<Vec<Option<f64>>> = vec![Vec::new(); header.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        for (j, field) in record.iter().enumerate() {
            let is_missing = field == missing_token || DEFAULT_MISSING_TOKENS.contains(&field);
            let value = if is_missing {
                if header[j] != roles.outcome {
                    return Err(Error::UnexpectedMissing {
                        column: header[j].clone(),
                        row,
                    });
                }
                None
            } else {
                Some(field.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: header[j].clone(),
                    value: field.to_owned(),
                })?)
            };
            cells[j].push(value);
        }
    }

    let mut columns = Vec::with_capacity(header.len() + 1);
    for (name, values) in header.iter().zip(cells) {
        let data = if *name == roles.outcome {
            ColumnData::OptionalNumeric(values)
        } else {
            let values: Vec<f64> = values.into_iter().map(|v| v.expect("checked")).collect();
            let must_be_binary = *name == roles.treatment || *name == roles.response;
            match as_binary(&values) {
                Ok(b) => ColumnData::Binary(b),
                Err((row, value)) if must_be_binary => {
                    return Err(Error::NotBinary {
                        column: name.clone(),
                        row,
                        value,
                    })
                }
                Err(_) => ColumnData::Continuous(values),
            }
        };
        columns.push(Column::new(name.clone(), data));
    }

    if !header.iter().any(|h| *h == roles.response) {
        let outcome = &columns
            .iter()
            .find(|c| c.name == roles.outcome)
            .expect("outcome checked")
            .data;
        let derived = (0..outcome.len())
            .map(|r| u8::from(outcome.get(r).is_some()))
            .collect();
        columns.push(Column::binary(roles.response.clone(), derived));
    }

    Dataset::new(columns)?.with_roles(roles.clone())
}

fn as_binary(values: &[f64]) -> std::result::Result<Vec<u8>, (usize, f64)> {
    values
        .iter()
        .enumerate()
        .map(|(row, &x)| {
            if x == 0.0 {
                Ok(0)
            } else if x == 1.0 {
                Ok(1)
            } else {
                Err((row, x))
            }
        })
        .collect()
}

/// Writes the non-oracle columns. Missing cells become empty fields.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_columns(ds, path.as_ref(), false)
}

/// Writes only the oracle columns, if any. Returns whether a file was written.
pub fn write_oracle_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<bool> {
    if !ds.columns.iter().any(|c| c.oracle) {
        return Ok(false);
    }
    write_columns(ds, path.as_ref(), true)?;
    Ok(true)
}

/// `data.csv` → `data.oracle.csv`, next to the observed-data file.
pub fn oracle_sibling_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    path.with_file_name(format!("{stem}.oracle.csv"))
}

fn write_columns(ds: &Dataset, path: &Path, oracle: bool) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_columns_to(ds, &mut out, oracle).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// CSV text of the non-oracle columns.
pub fn to_csv_string(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    write_columns_to(ds, &mut buf, false).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn write_columns_to(ds: &Dataset, out: &mut impl Write, oracle: bool) -> std::io::Result<()> {
    let cols: Vec<&Column> = ds.columns.iter().filter(|c| c.oracle == oracle).collect();
    let header: Vec<&str> = cols.iter().map(|c| c.name.as_str()).collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for row in 0..ds.n_rows {
        line.clear();
        for (j, col) in cols.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            match &col.data {
                ColumnData::Binary(v) => line.push(if v[row] == 1 { '1' } else { '0' }),
                ColumnData::Continuous(v) => line.push_str(&v[row].to_string()),
                ColumnData::OptionalNumeric(v) => {
                    if let Some(x) = v[row] {
                        line.push_str(&x.to_string());
                    }
                }
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
