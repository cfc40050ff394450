//! Dataset ingestion and regression-problem assembly.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{HdmError, Result};
use crate::linalg::sample_variance;

/// A rectangular table of finite numbers with unique column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct CsvOptions {
    pub delimiter: u8,
    /// When false, columns are named `V1..Vm`.
    pub has_header: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
        }
    }
}

const MISSING_TOKENS: [&str; 7] = ["", "NA", "N/A", "NaN", "nan", "null", "NULL"];

impl Dataset {
    pub fn new(names: Vec<String>, columns: DMatrix<f64>) -> Result<Self> {
        if names.len() != columns.ncols() {
            return Err(HdmError::Schema(format!(
                "{} names for {} columns",
                names.len(),
                columns.ncols()
            )));
        }
        if columns.nrows() == 0 {
            return Err(HdmError::Schema("dataset has no rows".into()));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.is_empty() {
                return Err(HdmError::Schema("empty column name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(HdmError::Schema(format!("duplicate column name {name:?}")));
            }
        }
        if let Some(pos) = columns.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % columns.nrows(), pos / columns.nrows());
            return Err(HdmError::Domain(format!(
                "non-finite value at row {}, column {}",
                row + 1,
                names[col]
            )));
        }
        Ok(Dataset { names, columns })
    }

    pub fn from_columns(cols: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let n = cols.first().map(|c| c.1.len()).unwrap_or(0);
        if cols.iter().any(|c| c.1.len() != n) {
            return Err(HdmError::Schema("columns have unequal lengths".into()));
        }
        let mut m = DMatrix::zeros(n, cols.len());
        for (j, (_, v)) in cols.iter().enumerate() {
            m.column_mut(j).copy_from_slice(v);
        }
        Dataset::new(cols.into_iter().map(|c| c.0).collect(), m)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.ncols()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| HdmError::Schema(format!("unknown column {name:?}")))
    }

    pub fn column(&self, name: &str) -> Result<DVector<f64>> {
        let j = self.index_of(name)?;
        Ok(self.columns.column(j).into_owned())
    }

    /// Expands a column list such as `"x1:x5,x9"`. A range `a:b` selects every
    /// column positioned between `a` and `b` inclusive, in dataset order.
    pub fn expand_columns(&self, spec: &str) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match part.split_once(':') {
                Some((a, b)) => {
                    let (i, j) = (self.index_of(a.trim())?, self.index_of(b.trim())?);
                    if i > j {
                        return Err(HdmError::Schema(format!(
                            "range {part:?} runs backwards"
                        )));
                    }
                    out.extend(self.names[i..=j].iter().cloned());
                }
                None => {
                    self.index_of(part)?;
                    out.push(part.to_string());
                }
            }
        }
        Ok(out)
    }
}

/// Reads a numeric CSV. Missing cells (empty, `NA`, `NaN`, ...) are rejected.
pub fn load_csv(path: impl AsRef<Path>, options: CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, options)
}

pub fn read_csv<R: std::io::Read>(reader: R, options: CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names: Vec<String> = if options.has_header {
        rdr.headers()?.iter().map(str::to_string).collect()
    } else {
        Vec::new()
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        if names.is_empty() {
            names = (1..=record.len()).map(|j| format!("V{j}")).collect();
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let col = names.get(j).cloned().unwrap_or_else(|| format!("#{}", j + 1));
            if MISSING_TOKENS.contains(&cell) {
                return Err(HdmError::MissingValue { row: row_no, column: col });
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(HdmError::Parse {
                        row: row_no,
                        column: col,
                        value: cell.to_string(),
                    })
                }
            }
        }
        rows.push(row);
    }
    let m = names.len();
    let n = rows.len();
    let mut columns = DMatrix::zeros(n, m);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            columns[(i, j)] = v;
        }
    }
    Dataset::new(names, columns)
}

/// Writes the dataset with a header row. Values use the shortest
/// representation that parses back to the identical `f64`.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv_to(data, file)
}

pub fn write_csv_to<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&data.names)?;
    for i in 0..data.n_rows() {
        w.write_record(data.columns.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Which columns play which role.
#[derive(Debug, Clone, Default)]
pub struct ColumnSpec {
    pub y: String,
    pub x: Vec<String>,
    pub d: Vec<String>,
    pub z: Vec<String>,
    pub intercept: bool,
    /// Drop zero-variance regressors; defaults to `intercept`.
    pub drop_constant: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub y_name: String,
    pub y: DVector<f64>,
    pub x_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub d_names: Vec<String>,
    pub d: Option<DMatrix<f64>>,
    pub z_names: Vec<String>,
    pub z: Option<DMatrix<f64>>,
    pub intercept: bool,
    /// Regressors removed for having zero variance.
    pub dropped: Vec<String>,
}

impl RegressionProblem {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

fn gather(data: &Dataset, names: &[String]) -> Result<DMatrix<f64>> {
    let idx = names
        .iter()
        .map(|n| data.index_of(n))
        .collect::<Result<Vec<_>>>()?;
    Ok(data.matrix().select_columns(&idx))
}

fn is_constant(v: &[f64]) -> bool {
    sample_variance(v) <= 0.0 || v.iter().all(|&a| a == v[0])
}

/// Assembles a regression problem from named columns.
pub fn build_problem(data: &Dataset, spec: &ColumnSpec) -> Result<RegressionProblem> {
    let y = data.column(&spec.y)?;
    let mut roles = HashSet::new();
    for (role, list) in [("x", &spec.x), ("d", &spec.d), ("z", &spec.z)] {
        for name in list {
            data.index_of(name)?;
            if name == &spec.y {
                return Err(HdmError::Schema(format!(
                    "response {name:?} also listed as a {role} column"
                )));
            }
            if !roles.insert(name.as_str()) {
                return Err(HdmError::Schema(format!("column {name:?} listed twice")));
            }
        }
    }
    if !spec.z.is_empty() && spec.d.is_empty() {
        return Err(HdmError::Schema("instruments given without endogenous columns".into()));
    }

    let drop_constant = spec.drop_constant.unwrap_or(spec.intercept);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for name in &spec.x {
        let col = data.column(name)?;
        if is_constant(col.as_slice()) {
            if drop_constant {
                dropped.push(name.clone());
                continue;
            }
            if spec.intercept {
                return Err(HdmError::DegenerateDesign(format!(
                    "column {name:?} is constant and an intercept is requested"
                )));
            }
        }
        kept.push(name.clone());
    }
    if kept.is_empty() && spec.d.is_empty() {
        return Err(HdmError::DegenerateDesign(
            "no non-constant regressors remain".into(),
        ));
    }
    if kept.is_empty() && !spec.x.is_empty() && drop_constant {
        return Err(HdmError::DegenerateDesign("all X columns are constant".into()));
    }
    let x = gather(data, &kept)?;
    let d = (!spec.d.is_empty()).then(|| gather(data, &spec.d)).transpose()?;
    let z = (!spec.z.is_empty()).then(|| gather(data, &spec.z)).transpose()?;
    Ok(RegressionProblem {
        y_name: spec.y.clone(),
        y,
        x_names: kept,
        x,
        d_names: spec.d.clone(),
        d,
        z_names: spec.z.clone(),
        z,
        intercept: spec.intercept,
        dropped,
    })
}
