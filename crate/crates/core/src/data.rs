//! Role-tagged tabular data: CSV ingestion, validation, food-group outcome
//! construction and stratified summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, sample_sd};

/// Name of the derived healthy-food outcome column.
pub const LOG_HEALTHY: &str = "log_healthy";
/// Name of the derived unhealthy-food outcome column.
pub const LOG_UNHEALTHY: &str = "log_unhealthy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Outcome,
    Treatment,
    Covariate,
    Instrument,
    Cluster,
    HouseholdSize,
    ItemExpenditure,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Outcome => "outcome",
            Role::Treatment => "treatment",
            Role::Covariate => "covariate",
            Role::Instrument => "instrument",
            Role::Cluster => "cluster",
            Role::HouseholdSize => "household_size",
            Role::ItemExpenditure => "item_expenditure",
        };
        f.write_str(s)
    }
}

/// Assignment of a source column to the role it plays in estimation.
///
/// `category` only matters for `item_expenditure` columns; it defaults to the
/// column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRole {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ColumnRole {
    pub fn new(name: impl Into<String>, role: Role) -> Self {
        Self {
            name: name.into(),
            role,
            category: None,
        }
    }

    pub fn item(name: impl Into<String>, category: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            role: Role::ItemExpenditure,
            category: Some(category.into()),
        }
    }

    pub fn category(&self) -> &str {
        self.category.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    /// `None` for derived columns that are not yet assigned a role.
    pub role: Option<Role>,
    pub category: Option<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Provenance {
    pub source: Option<PathBuf>,
    /// Rows present before any listwise deletion.
    pub raw_rows: usize,
    pub dropped_rows: usize,
    pub log: Vec<String>,
}

/// Immutable rectangular table with role-tagged numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    n_rows: usize,
    provenance: Provenance,
}

fn validate_roles(roles: &[ColumnRole]) -> Result<()> {
    let count = |r: Role| roles.iter().filter(|c| c.role == r).count();
    let mut seen = BTreeSet::new();
    for c in roles {
        if !seen.insert(c.name.as_str()) {
            return Err(Error::Roles(format!("column `{}` assigned twice", c.name)));
        }
    }
    if count(Role::Treatment) != 1 {
        return Err(Error::Roles(format!(
            "exactly one treatment column required, found {}",
            count(Role::Treatment)
        )));
    }
    let outcomes = count(Role::Outcome);
    if outcomes > 1 || (outcomes == 0 && count(Role::ItemExpenditure) == 0) {
        return Err(Error::Roles(format!(
            "exactly one outcome column required, found {outcomes}"
        )));
    }
    for r in [Role::Cluster, Role::HouseholdSize] {
        if count(r) > 1 {
            return Err(Error::Roles(format!("at most one {r} column allowed")));
        }
    }
    Ok(())
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

impl Dataset {
    /// Builds a dataset from in-memory columns, applying the same validation
    /// as [`load_csv`]. Rows with a non-finite value in any column are dropped.
    pub fn from_columns(columns: Vec<(ColumnRole, Vec<f64>)>) -> Result<Self> {
        let roles: Vec<ColumnRole> = columns.iter().map(|(r, _)| r.clone()).collect();
        validate_roles(&roles)?;
        let n = columns.first().map_or(0, |(_, v)| v.len());
        if let Some((r, v)) = columns.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::InvalidInput(format!(
                "column `{}` has {} rows, expected {n}",
                r.name,
                v.len()
            )));
        }
        let keep: Vec<bool> = (0..n)
            .map(|i| columns.iter().all(|(_, v)| v[i].is_finite()))
            .collect();
        let mut cols = Vec::with_capacity(columns.len());
        for (role, values) in columns {
            let values: Vec<f64> = values
                .into_iter()
                .zip(&keep)
                .filter_map(|(x, &k)| k.then_some(x))
                .collect();
            cols.push(Column {
                name: role.name.clone(),
                role: Some(role.role),
                category: role.category.clone(),
                values,
            });
        }
        let kept = keep.iter().filter(|&&k| k).count();
        let mut ds = Dataset {
            columns: cols,
            n_rows: kept,
            provenance: Provenance {
                source: None,
                raw_rows: n,
                dropped_rows: n - kept,
                log: Vec::new(),
            },
        };
        if n > kept {
            ds.provenance
                .log
                .push(format!("dropped {} rows with missing values", n - kept));
        }
        ds.check_treatment(None)?;
        Ok(ds)
    }

    fn check_treatment(&self, lines: Option<&[usize]>) -> Result<()> {
        let t = self.treatment();
        for (i, &v) in t.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                let line = lines.map_or(i + 2, |l| l[i]);
                return Err(Error::InvalidTreatment {
                    row: i,
                    line,
                    value: v,
                });
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn roles(&self) -> Vec<ColumnRole> {
        self.columns
            .iter()
            .filter_map(|c| {
                c.role.map(|role| ColumnRole {
                    name: c.name.clone(),
                    role,
                    category: c.category.clone(),
                })
            })
            .collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.iter().any(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    fn by_role(&self, role: Role) -> impl Iterator<Item = &Column> {
        self.columns.iter().filter(move |c| c.role == Some(role))
    }

    pub fn names_with_role(&self, role: Role) -> Vec<String> {
        self.by_role(role).map(|c| c.name.clone()).collect()
    }

    pub fn treatment(&self) -> &[f64] {
        &self
            .by_role(Role::Treatment)
            .next()
            .expect("validated: one treatment column")
            .values
    }

    pub fn treatment_name(&self) -> &str {
        &self
            .by_role(Role::Treatment)
            .next()
            .expect("validated")
            .name
    }

    pub fn outcome(&self) -> Result<&[f64]> {
        self.by_role(Role::Outcome)
            .next()
            .map(|c| c.values.as_slice())
            .ok_or_else(|| Error::Roles("no outcome column assigned".into()))
    }

    pub fn outcome_name(&self) -> Result<&str> {
        self.by_role(Role::Outcome)
            .next()
            .map(|c| c.name.as_str())
            .ok_or_else(|| Error::Roles("no outcome column assigned".into()))
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.names_with_role(Role::Covariate)
    }

    pub fn instrument_names(&self) -> Vec<String> {
        self.names_with_role(Role::Instrument)
    }

    pub fn cluster_name(&self) -> Option<&str> {
        self.by_role(Role::Cluster).next().map(|c| c.name.as_str())
    }

    /// Errors unless at least one instrument column is assigned.
    pub fn require_instruments(&self) -> Result<Vec<String>> {
        let z = self.instrument_names();
        if z.is_empty() {
            Err(Error::Roles(
                "at least one instrument column is required".into(),
            ))
        } else {
            Ok(z)
        }
    }

    /// Errors unless each treatment arm has at least `min` rows.
    pub fn require_arms(&self, min: usize) -> Result<()> {
        let treated = self.treatment().iter().filter(|&&s| s == 1.0).count();
        let control = self.n_rows - treated;
        if treated < min || control < min {
            return Err(Error::Insufficient(format!(
                "need at least {min} rows per treatment arm, have {treated} treated and {control} control"
            )));
        }
        Ok(())
    }

    /// Dataset made of the given rows (repeats allowed), in order.
    pub fn take_rows(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                values: rows.iter().map(|&i| c.values[i]).collect(),
                ..c.clone()
            })
            .collect();
        Dataset {
            columns,
            n_rows: rows.len(),
            provenance: self.provenance.clone(),
        }
    }

    /// Keeps rows where `mask` is true, recording the drop in the log.
    pub fn filter_rows(&self, mask: &[bool], reason: &str) -> Dataset {
        let rows: Vec<usize> = (0..self.n_rows).filter(|&i| mask[i]).collect();
        let mut out = self.take_rows(&rows);
        let dropped = self.n_rows - rows.len();
        out.provenance.dropped_rows += dropped;
        if dropped > 0 {
            out.provenance
                .log
                .push(format!("dropped {dropped} rows: {reason}"));
        }
        out
    }

    /// Returns a copy with an extra column appended (replacing any column of
    /// the same name).
    pub fn with_column(&self, name: &str, role: Option<Role>, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n_rows {
            return Err(Error::InvalidInput(format!(
                "column `{name}` has {} rows, expected {}",
                values.len(),
                self.n_rows
            )));
        }
        if matches!(role, Some(Role::Treatment | Role::Outcome)) {
            return Err(Error::Roles(format!(
                "cannot append a second {} column",
                role.unwrap()
            )));
        }
        let mut out = self.clone();
        out.columns.retain(|c| c.name != name);
        out.columns.push(Column {
            name: name.to_string(),
            role,
            category: None,
            values,
        });
        Ok(out)
    }

    /// Copy with the values of an existing column replaced.
    pub fn with_values(&self, name: &str, values: Vec<f64>) -> Result<Dataset> {
        if values.len() != self.n_rows {
            return Err(Error::InvalidInput(format!(
                "column `{name}` length mismatch"
            )));
        }
        let mut out = self.clone();
        let col = out
            .columns
            .iter_mut()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        col.values = values;
        Ok(out)
    }

    /// Makes `name` the outcome column. The previous outcome (if any) becomes
    /// an untagged column. Rows where the new outcome is missing are dropped
    /// and counted.
    pub fn with_outcome(&self, name: &str) -> Result<Dataset> {
        let idx = self
            .columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        let mut out = self.clone();
        for c in &mut out.columns {
            if c.role == Some(Role::Outcome) {
                c.role = None;
            }
        }
        out.columns[idx].role = Some(Role::Outcome);
        let mask: Vec<bool> = out.columns[idx]
            .values
            .iter()
            .map(|v| v.is_finite())
            .collect();
        Ok(out.filter_rows(&mask, &format!("missing outcome `{name}`")))
    }

    /// Writes every column at full precision; reloading with [`Dataset::roles`]
    /// reproduces the values bit-for-bit.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        for i in 0..self.n_rows {
            w.write_record(self.columns.iter().map(|c| format_cell(c.values[i])))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

pub(crate) fn format_cell(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Loads a UTF-8, comma-delimited CSV with a header row. Only role-mapped
/// columns are read; rows missing any of them are dropped listwise.
pub fn load_csv(path: impl AsRef<Path>, roles: &[ColumnRole]) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut ds = read_csv(std::io::BufReader::new(file), roles)?;
    ds.provenance.source = Some(path.to_path_buf());
    Ok(ds)
}

/// Reader-based variant of [`load_csv`].
pub fn read_csv<R: Read>(reader: R, roles: &[ColumnRole]) -> Result<Dataset> {
    validate_roles(roles)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut idx = Vec::with_capacity(roles.len());
    for r in roles {
        let pos = header
            .iter()
            .position(|h| h.trim() == r.name)
            .ok_or_else(|| Error::MissingColumn(r.name.clone()))?;
        idx.push(pos);
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); roles.len()];
    let mut lines = Vec::new();
    let mut raw = 0usize;
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(k + 2, |p| p.line() as usize);
        raw += 1;
        let mut row = Vec::with_capacity(roles.len());
        let mut missing = false;
        for (r, &j) in roles.iter().zip(&idx) {
            let cell = record.get(j).unwrap_or("").trim();
            if is_missing(cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: r.name.clone(),
                value: cell.to_string(),
            })?;
            row.push(v);
        }
        if missing {
            continue;
        }
        for (col, v) in values.iter_mut().zip(row) {
            col.push(v);
        }
        lines.push(line);
    }
    let n = lines.len();
    let columns = roles
        .iter()
        .zip(values)
        .map(|(r, v)| Column {
            name: r.name.clone(),
            role: Some(r.role),
            category: r.category.clone(),
            values: v,
        })
        .collect();
    let mut ds = Dataset {
        columns,
        n_rows: n,
        provenance: Provenance {
            source: None,
            raw_rows: raw,
            dropped_rows: raw - n,
            log: Vec::new(),
        },
    };
    if raw > n {
        ds.provenance.log.push(format!(
            "dropped {} rows with missing role-mapped fields",
            raw - n
        ));
    }
    ds.check_treatment(Some(&lines))?;
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoodGroup {
    Healthy,
    Unhealthy,
    Excluded,
}

/// Category → food group, plus per-category annualization factors
/// (periods per year). Categories without an explicit factor use
/// `default_annualization`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoodGroupMap {
    pub groups: BTreeMap<String, FoodGroup>,
    #[serde(default)]
    pub annualization: BTreeMap<String, f64>,
    #[serde(default = "default_annualization")]
    pub default_annualization: f64,
}

fn default_annualization() -> f64 {
    52.0
}

impl FoodGroupMap {
    pub fn new(groups: BTreeMap<String, FoodGroup>) -> Self {
        Self {
            groups,
            annualization: BTreeMap::new(),
            default_annualization: default_annualization(),
        }
    }

    /// Healthy: staples, vegetables, fruit, meat and animal products, fish.
    /// Unhealthy: dried foods, condiments, other foods.
    pub fn standard() -> Self {
        let mut groups = BTreeMap::new();
        for c in ["staples", "vegetables", "fruit", "meat", "fish"] {
            groups.insert(c.to_string(), FoodGroup::Healthy);
        }
        for c in ["dried_foods", "condiments", "other_foods"] {
            groups.insert(c.to_string(), FoodGroup::Unhealthy);
        }
        Self::new(groups)
    }

    fn factor(&self, category: &str) -> f64 {
        self.annualization
            .get(category)
            .copied()
            .unwrap_or(self.default_annualization)
    }

    fn validate(&self) -> Result<()> {
        if !(self.default_annualization > 0.0) {
            return Err(Error::InvalidInput(
                "default annualization factor must be positive".into(),
            ));
        }
        if let Some((c, f)) = self.annualization.iter().find(|(_, &f)| !(f > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "annualization factor for `{c}` must be positive, got {f}"
            )));
        }
        Ok(())
    }
}

/// Adds `log_healthy` and `log_unhealthy`: the log of annualized per-capita
/// spending in each group. Households with zero spending in a group get a
/// missing value there (dropped once that column is chosen as outcome);
/// households with non-positive size are dropped here.
pub fn build_food_outcomes(raw: &Dataset, map: &FoodGroupMap) -> Result<Dataset> {
    map.validate()?;
    let items: Vec<&Column> = raw.by_role(Role::ItemExpenditure).collect();
    if items.is_empty() {
        return Err(Error::Roles("no item_expenditure columns".into()));
    }
    let unmapped: BTreeSet<String> = items
        .iter()
        .map(|c| c.category.clone().unwrap_or_else(|| c.name.clone()))
        .filter(|cat| !map.groups.contains_key(cat))
        .collect();
    if !unmapped.is_empty() {
        return Err(Error::UnmappedCategories(unmapped.into_iter().collect()));
    }
    let size_col = raw
        .by_role(Role::HouseholdSize)
        .next()
        .ok_or_else(|| Error::Roles("a household_size column is required".into()))?;
    let size_name = size_col.name.clone();
    let valid: Vec<bool> = size_col.values.iter().map(|&s| s > 0.0).collect();
    let data = raw.filter_rows(&valid, "household_size <= 0");

    let mut healthy = vec![0.0; data.n_rows];
    let mut unhealthy = vec![0.0; data.n_rows];
    for c in data.by_role(Role::ItemExpenditure) {
        let cat = c.category.as_deref().unwrap_or(&c.name);
        let target = match map.groups[cat] {
            FoodGroup::Healthy => &mut healthy,
            FoodGroup::Unhealthy => &mut unhealthy,
            FoodGroup::Excluded => continue,
        };
        let factor = map.factor(cat);
        for (t, v) in target.iter_mut().zip(&c.values) {
            *t += v * factor;
        }
    }
    let size = data.column(&size_name)?;
    let per_capita_log = |total: &[f64]| -> Vec<f64> {
        total
            .iter()
            .zip(size)
            .map(|(t, s)| if *t > 0.0 { (t / s).ln() } else { f64::NAN })
            .collect()
    };
    let lh = per_capita_log(&healthy);
    let lu = per_capita_log(&unhealthy);
    let zero_h = lh.iter().filter(|v| v.is_nan()).count();
    let zero_u = lu.iter().filter(|v| v.is_nan()).count();
    let mut out = data.with_column(LOG_HEALTHY, None, lh)?;
    out = out.with_column(LOG_UNHEALTHY, None, lu)?;
    out.provenance.log.push(format!(
        "food outcomes: {zero_h} households with zero healthy spend, {zero_u} with zero unhealthy spend"
    ));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumStats {
    pub n: usize,
    pub mean: Option<f64>,
    /// `None` when fewer than two observations are available.
    pub sd: Option<f64>,
}

impl StratumStats {
    fn of(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        Self {
            n: finite.len(),
            mean: (!finite.is_empty()).then(|| mean(&finite)),
            sd: sample_sd(&finite),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableSummary {
    pub name: String,
    pub treated: StratumStats,
    pub control: StratumStats,
}

/// Means and standard deviations by treatment stratum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub n_treated: usize,
    pub n_control: usize,
    pub n_dropped: usize,
    pub n_raw: usize,
    pub variables: Vec<VariableSummary>,
}

pub fn summarize(data: &Dataset) -> SummaryTable {
    let s = data.treatment();
    let treated: Vec<usize> = (0..data.n_rows).filter(|&i| s[i] == 1.0).collect();
    let control: Vec<usize> = (0..data.n_rows).filter(|&i| s[i] == 0.0).collect();
    let pick = |v: &[f64], rows: &[usize]| rows.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let variables = data
        .columns
        .iter()
        .filter(|c| !matches!(c.role, Some(Role::Treatment | Role::Cluster)))
        .map(|c| VariableSummary {
            name: c.name.clone(),
            treated: StratumStats::of(&pick(&c.values, &treated)),
            control: StratumStats::of(&pick(&c.values, &control)),
        })
        .collect();
    SummaryTable {
        n_treated: treated.len(),
        n_control: control.len(),
        n_dropped: data.provenance.dropped_rows,
        n_raw: data.provenance.raw_rows,
        variables,
    }
}

impl SummaryTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "variable",
            "n_treated",
            "mean_treated",
            "sd_treated",
            "n_control",
            "mean_control",
            "sd_control",
        ])?;
        let opt = |v: Option<f64>| v.map(format_cell).unwrap_or_default();
        for v in &self.variables {
            w.write_record([
                v.name.clone(),
                v.treated.n.to_string(),
                opt(v.treated.mean),
                opt(v.treated.sd),
                v.control.n.to_string(),
                opt(v.control.mean),
                opt(v.control.sd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        writeln!(
            f,
            "{:<24} {:>12} {:>10} {:>12} {:>10}",
            "variable", "mean (S=1)", "sd", "mean (S=0)", "sd"
        )?;
        for v in &self.variables {
            writeln!(
                f,
                "{:<24} {:>12} {:>10} {:>12} {:>10}",
                v.name,
                cell(v.treated.mean),
                cell(v.treated.sd),
                cell(v.control.mean),
                cell(v.control.sd)
            )?;
        }
        write!(
            f,
            "N treated = {}, N control = {}, dropped = {} of {}",
            self.n_treated, self.n_control, self.n_dropped, self.n_raw
        )
    }
}
