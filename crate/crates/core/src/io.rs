//! CSV ingestion and emission, the JSON report envelope and dendrogram
//! export.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::clustering::{Dendrogram, Merge};
use crate::data::{Dataset, IvCombination, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimation::JustIdentifiedEstimate;
use crate::selection::{LateResult, SelectionResult, UnionInterval};
use crate::simulation::{Method, SimulationReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Mapping from CSV header names to model roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub outcome: String,
    pub endogenous: Vec<String>,
    pub instruments: Vec<String>,
    #[serde(default)]
    pub controls: Vec<String>,
    pub intercept: bool,
}

impl ColumnSpec {
    fn all_names(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.outcome)
            .chain(&self.endogenous)
            .chain(&self.instruments)
            .chain(&self.controls)
    }

    pub fn check(&self) -> Result<()> {
        if self.endogenous.is_empty() {
            return Err(Error::Config(
                "at least one endogenous column is required".into(),
            ));
        }
        if self.instruments.is_empty() {
            return Err(Error::Config(
                "at least one instrument column is required".into(),
            ));
        }
        let mut seen = HashSet::new();
        for name in self.all_names() {
            if !seen.insert(name.as_str()) {
                return Err(Error::Config(format!(
                    "column '{name}' is assigned more than one role"
                )));
            }
        }
        Ok(())
    }
}

/// Reads the referenced columns of a CSV file into a [`Dataset`].
pub fn ingest_csv(path: &Path, spec: &ColumnSpec) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Csv(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, spec)
}

/// As [`ingest_csv`] from any reader. Data rows are numbered from 1, not
/// counting the header.
pub fn read_csv<R: Read>(reader: R, spec: &ColumnSpec) -> Result<Dataset> {
    spec.check()?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .clone();
    let index = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Csv(format!("column '{name}' not found in header")))
    };
    let cols: Vec<usize> = spec.all_names().map(index).collect::<Result<_>>()?;
    let names: Vec<&String> = spec.all_names().collect();

    let mut values: Vec<f64> = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    let mut rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Csv(format!("row {row}: {e}")))?;
        rows += 1;
        for (&c, name) in cols.iter().zip(&names) {
            let cell = record.get(c).unwrap_or("");
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ if cell.is_empty() => {
                    problems.push(format!("row {row}, column '{name}': missing value"))
                }
                _ => problems.push(format!(
                    "row {row}, column '{name}': non-numeric value '{cell}'"
                )),
            }
        }
    }
    if !problems.is_empty() {
        let shown = problems.len().min(10);
        let more = if problems.len() > shown {
            format!(" (and {} more)", problems.len() - shown)
        } else {
            String::new()
        };
        return Err(Error::Csv(format!(
            "{}{more}",
            problems[..shown].join("; ")
        )));
    }
    if rows == 0 {
        return Err(Error::Csv("no data rows".into()));
    }
    let width = cols.len();
    let m = DMatrix::from_row_slice(rows, width, &values);
    let (p, j) = (spec.endogenous.len(), spec.instruments.len());
    let y = DVector::from_iterator(rows, m.column(0).iter().copied());
    let d = m.columns(1, p).into_owned();
    let z = m.columns(1 + p, j).into_owned();
    let w = m.columns(1 + p + j, spec.controls.len()).into_owned();
    Dataset::new(y, d, z, Some(w), spec.intercept)
}

/// Writes the dataset with a header taken from `spec`.
pub fn write_csv<W: Write>(writer: W, dataset: &Dataset, spec: &ColumnSpec) -> Result<()> {
    spec.check()?;
    if spec.endogenous.len() != dataset.p()
        || spec.instruments.len() != dataset.j()
        || spec.controls.len() != dataset.w().ncols()
    {
        return Err(Error::Dimension(
            "column names do not match the dataset shape".into(),
        ));
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Csv(e.to_string());
    wtr.write_record(spec.all_names()).map_err(csv_err)?;
    for r in 0..dataset.n() {
        // Display prints the shortest string that parses back exactly.
        let (d, z, w) = (dataset.d().row(r), dataset.z().row(r), dataset.w().row(r));
        let row = std::iter::once(dataset.y()[r])
            .chain(d.iter().copied())
            .chain(z.iter().copied())
            .chain(w.iter().copied())
            .map(|v| v.to_string());
        wtr.write_record(row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Conditioning flag of one just-identified estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComboDiagnostic {
    pub combo: IvCombination,
    pub rcond_gamma: f64,
    pub near_singular: bool,
}

pub fn combo_diagnostics(estimates: &[JustIdentifiedEstimate]) -> Vec<ComboDiagnostic> {
    estimates
        .iter()
        .map(|e| ComboDiagnostic {
            combo: e.combo.clone(),
            rcond_gamma: e.rcond_gamma,
            near_singular: e.near_singular,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ConfigEcho {
    Select {
        columns: ColumnSpec,
        selection: SelectionConfig,
        /// Sargan level actually used, after applying the rule to `n`.
        alpha: f64,
        late: bool,
        union_ci: Option<f64>,
    },
    Simulate {
        design: String,
        n: usize,
        reps: usize,
        seed: u64,
        methods: Vec<Method>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPayload {
    pub instrument_names: Vec<String>,
    pub endogenous_names: Vec<String>,
    pub n: usize,
    pub result: SelectionResult,
    /// First-stage F (one regressor) or Cragg-Donald statistic of the
    /// selected valid set.
    pub first_stage_strength: Option<f64>,
    pub union_ci: Option<UnionInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatePayload {
    pub instrument_names: Vec<String>,
    pub endogenous_names: Vec<String>,
    pub n: usize,
    pub result: LateResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Selection(SelectionPayload),
    Late(LatePayload),
    Simulation(SimulationReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub tool_version: String,
    pub config: ConfigEcho,
    pub payload: Payload,
    pub diagnostics: Vec<ComboDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<f64>,
}

impl ReportEnvelope {
    pub fn new(config: ConfigEcho, payload: Payload, diagnostics: Vec<ComboDiagnostic>) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            config,
            payload,
            diagnostics,
            timing_ms: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramLeaf {
    pub index: usize,
    pub combo: IvCombination,
    pub coordinates: Vec<f64>,
}

/// Plot-ready dendrogram: leaf coordinates, merges and the cluster label
/// of every leaf at every `K` (`memberships[K - 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DendrogramDocument {
    pub tool_version: String,
    pub leaves: Vec<DendrogramLeaf>,
    pub merges: Vec<Merge>,
    pub memberships: Vec<Vec<usize>>,
}

pub fn export_dendrogram(
    dendrogram: &Dendrogram,
    estimates: &[JustIdentifiedEstimate],
) -> Result<DendrogramDocument> {
    if estimates.len() != dendrogram.leaves() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} leaves",
            estimates.len(),
            dendrogram.leaves()
        )));
    }
    Ok(DendrogramDocument {
        tool_version: TOOL_VERSION.to_string(),
        leaves: estimates
            .iter()
            .enumerate()
            .map(|(index, e)| DendrogramLeaf {
                index,
                combo: e.combo.clone(),
                coordinates: e.beta.clone(),
            })
            .collect(),
        merges: dendrogram.merges().to_vec(),
        memberships: dendrogram.memberships(),
    })
}

/// Rebuilds the dendrogram from an exported document, checking that the
/// stored memberships agree with the merges.
pub fn import_dendrogram(doc: &DendrogramDocument) -> Result<Dendrogram> {
    let d = Dendrogram::from_merges(doc.leaves.len(), doc.merges.clone())?;
    if d.memberships() != doc.memberships {
        return Err(Error::Dimension(
            "memberships disagree with the merge list".into(),
        ));
    }
    Ok(d)
}
