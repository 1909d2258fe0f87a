//! Input and output file formats: schema and workload JSON, dataset CSV
//! ingestion with label decoding, and the stored plan document.
//!
//! Noise scales are persisted as decimal strings with 12 significant
//! digits. That precision survives the parse→format round trip exactly,
//! so plan → file → plan → file is byte-stable.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dpmarg::schema::{AttrSet, Attribute, Dataset, Schema, Workload, WorkloadEntry};

/// CLI failure, carrying the process exit code: configuration errors
/// (flags, schema/workload/plan files) exit 2, solver failures exit 3,
/// dataset errors exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Solver(m) => write!(f, "solver: {m}"),
            CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl From<dpmarg::Error> for CliError {
    fn from(e: dpmarg::Error) -> Self {
        use dpmarg::Error::*;
        match e {
            Solver(_) => CliError::Solver(e.to_string()),
            InvalidData(_) | DimensionMismatch { .. } | MissingResidual(_) | NotSubset { .. }
            | TooLargeForDense { .. } => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Formats a real with 12 significant digits, the persistence precision
/// for noise scales and report numbers.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

// ---------------------------------------------------------------------
// Schema file: {"attributes":[{"name":…, "size":…, "labels":[…]?}]}
// ---------------------------------------------------------------------

#[derive(Deserialize)]
struct SchemaDoc {
    attributes: Vec<AttrDoc>,
}

#[derive(Deserialize)]
struct AttrDoc {
    name: String,
    size: usize,
    #[serde(default)]
    labels: Option<Vec<String>>,
}

pub fn load_schema(path: &Path) -> CliResult<Schema> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read schema {}: {e}", path.display())))?;
    let doc: SchemaDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("schema {}: {e}", path.display())))?;
    let attrs = doc
        .attributes
        .into_iter()
        .map(|a| Attribute { name: a.name, size: a.size, labels: a.labels })
        .collect();
    Ok(Schema::new(attrs)?)
}

// ---------------------------------------------------------------------
// Workload file: {"marginals":[{"attrs":[names], "weight":1.0?}]}
// ---------------------------------------------------------------------

#[derive(Deserialize)]
struct WorkloadDoc {
    marginals: Vec<MarginalDoc>,
}

#[derive(Deserialize)]
struct MarginalDoc {
    attrs: Vec<String>,
    #[serde(default = "default_weight")]
    weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

pub fn names_to_set(names: &[String], schema: &Schema) -> CliResult<AttrSet> {
    let mut indices = Vec::with_capacity(names.len());
    for n in names {
        let i = schema
            .index_of(n)
            .ok_or_else(|| CliError::Config(format!("unknown attribute {n:?} in workload")))?;
        indices.push(i);
    }
    Ok(AttrSet::new(indices))
}

pub fn set_to_names(a: &AttrSet, schema: &Schema) -> Vec<String> {
    a.indices().iter().map(|&i| schema.attr(i).name.clone()).collect()
}

pub fn load_workload(path: &Path, schema: &Schema) -> CliResult<Workload> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read workload {}: {e}", path.display())))?;
    let doc: WorkloadDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("workload {}: {e}", path.display())))?;
    let mut entries = Vec::with_capacity(doc.marginals.len());
    for (i, m) in doc.marginals.iter().enumerate() {
        let attrs = names_to_set(&m.attrs, schema)
            .map_err(|e| CliError::Config(format!("workload marginal #{}: {e}", i + 1)))?;
        entries.push(WorkloadEntry { attrs, weight: m.weight });
    }
    let workload = Workload::new(entries)?;
    workload.validate_against(schema)?;
    Ok(workload)
}

// ---------------------------------------------------------------------
// Dataset CSV: header = attribute names; cells = labels or integer codes.
// ---------------------------------------------------------------------

pub fn load_dataset(path: &Path, schema: &Schema) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read dataset {}: {e}", path.display())))?;

    // Map each schema attribute to its CSV column, by name.
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("dataset {}: {e}", path.display())))?
        .clone();
    let mut columns = Vec::with_capacity(schema.len());
    for attr in schema.attrs() {
        let col = headers
            .iter()
            .position(|h| h == attr.name)
            .ok_or_else(|| {
                CliError::Data(format!(
                    "dataset {} is missing a column for attribute {:?}",
                    path.display(),
                    attr.name
                ))
            })?;
        columns.push(col);
    }

    let mut data = Dataset::new(schema.clone());
    for (row_idx, record) in reader.records().enumerate() {
        let row_no = row_idx + 2; // 1-based, after the header line
        let record =
            record.map_err(|e| CliError::Data(format!("dataset row {row_no}: {e}")))?;
        let mut codes = Vec::with_capacity(schema.len());
        for (attr, &col) in schema.attrs().iter().zip(&columns) {
            let cell = record.get(col).ok_or_else(|| {
                CliError::Data(format!(
                    "dataset row {row_no}: missing column {:?}",
                    attr.name
                ))
            })?;
            codes.push(decode_cell(cell, attr, row_no)?);
        }
        data.push(&codes)?;
    }
    Ok(data)
}

/// One cell to a 0-based category code: match a label when the attribute
/// has labels, otherwise (or as a fallback) parse an integer code.
fn decode_cell(cell: &str, attr: &Attribute, row_no: usize) -> CliResult<u32> {
    if let Some(labels) = &attr.labels {
        if let Some(code) = labels.iter().position(|l| l == cell) {
            return Ok(code as u32);
        }
    }
    let code: u32 = cell.parse().map_err(|_| {
        CliError::Data(format!(
            "dataset row {row_no}, column {:?}: unknown label {cell:?}",
            attr.name
        ))
    })?;
    if code as usize >= attr.size {
        return Err(CliError::Data(format!(
            "dataset row {row_no}, column {:?}: code {code} out of range (size {})",
            attr.name, attr.size
        )));
    }
    Ok(code)
}

// ---------------------------------------------------------------------
// Plan file.
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
pub struct PlanDoc {
    pub version: String,
    pub seed: Option<u64>,
    pub objective: String,
    pub pcost: f64,
    pub rho: f64,
    pub mu: f64,
    pub predicted_loss: f64,
    pub rmse: f64,
    pub max_variance: f64,
    pub sigma2: Vec<SigmaDoc>,
    pub delta_curve: Vec<DeltaDoc>,
    pub marginal_variances: Vec<VarianceDoc>,
}

#[derive(Serialize, Deserialize)]
pub struct SigmaDoc {
    pub attrs: Vec<String>,
    /// Noise scale σ², decimal with 12 significant digits.
    pub sigma2: String,
}

#[derive(Serialize, Deserialize)]
pub struct DeltaDoc {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Serialize, Deserialize)]
pub struct VarianceDoc {
    pub attrs: Vec<String>,
    pub cell_variance: f64,
}

pub fn save_plan(path: &Path, doc: &PlanDoc) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| CliError::Config(format!("cannot serialize plan: {e}")))?;
    fs::write(path, text + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load_plan(path: &Path, schema: &Schema) -> CliResult<(dpmarg::planner::Plan, PlanDoc)> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read plan {}: {e}", path.display())))?;
    let doc: PlanDoc = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("plan {}: {e}", path.display())))?;
    let mut sigma2 = std::collections::BTreeMap::new();
    for entry in &doc.sigma2 {
        let attrs = names_to_set(&entry.attrs, schema)?;
        let value: f64 = entry.sigma2.parse().map_err(|_| {
            CliError::Config(format!(
                "plan {}: bad noise scale {:?} for {:?}",
                path.display(),
                entry.sigma2,
                entry.attrs
            ))
        })?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(CliError::Config(format!(
                "plan {}: noise scale for {:?} must be positive, got {value}",
                path.display(),
                entry.attrs
            )));
        }
        sigma2.insert(attrs, value);
    }
    let plan = dpmarg::planner::Plan {
        sigma2,
        total_pcost: doc.pcost,
        predicted_loss: doc.predicted_loss,
    };
    Ok((plan, doc))
}
