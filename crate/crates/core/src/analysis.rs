//! Accuracy measures, parameter accounting, spin-state comparisons and
//! trace export.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::correlators::{frozen_param_count, param_count, AnsatzKind, AnsatzSpec};
use crate::optimizer::TraceRow;
use crate::{Error, Result};

/// kcal/mol per Hartree.
pub const HARTREE_TO_KCAL_PER_MOL: f64 = 627.5095;

/// Reductions differing by more than this many percentage points are
/// flagged as unbalanced.
pub const BALANCE_TOLERANCE: f64 = 10.0;

/// `E_next − E_ns`; negative when the higher-order ansatz is lower.
pub fn accuracy_measure(e_ns: f64, e_next: f64) -> f64 {
    e_next - e_ns
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splitting {
    pub hartree: f64,
    pub kcal_per_mol: f64,
}

/// `E_high − E_low` in Hartree and kcal/mol.
pub fn spin_splitting(e_high: f64, e_low: f64) -> Splitting {
    let hartree = e_high - e_low;
    Splitting {
        hartree,
        kcal_per_mol: hartree * HARTREE_TO_KCAL_PER_MOL,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub parameters: u64,
    pub reference_dim: u64,
    /// `100 · (1 − parameters / reference_dim)`; negative for an enlarged space.
    pub percent: f64,
}

impl Reduction {
    pub fn rounded_percent(&self) -> i64 {
        self.percent.round() as i64
    }
}

/// Percentage reduction of the variational space relative to a reference.
pub fn reduction_percent(parameters: u64, reference_dim: u64) -> Result<Reduction> {
    if reference_dim == 0 {
        return Err(Error::InvalidArgument("reference dimension must be positive".into()));
    }
    Ok(Reduction {
        parameters,
        reference_dim,
        percent: 100.0 * (1.0 - parameters as f64 / reference_dim as f64),
    })
}

/// Reduction for the active parameters of `spec` on `n_sites` spin orbitals.
pub fn reduction_report(spec: &AnsatzSpec, n_sites: usize, reference_dim: u64) -> Result<Reduction> {
    reduction_percent(param_count(spec, n_sites, 2), reference_dim)
}

/// Warning text when two reductions differ by more than [`BALANCE_TOLERANCE`].
pub fn balance_advisory(a: f64, b: f64) -> Option<String> {
    let gap = (a - b).abs();
    (gap > BALANCE_TOLERANCE).then(|| {
        format!(
            "variational-space reductions differ by {gap:.1} points ({a:.0}% vs {b:.0}%); \
             errors of the two states are unlikely to be balanced"
        )
    })
}

/// Summary of one completed optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: AnsatzKind,
    pub active_params: u64,
    pub frozen_params: u64,
    pub n_determinants: u64,
    pub n_csfs: u64,
    pub reduction_percent: f64,
    pub energy: f64,
    #[serde(default)]
    pub oracle_energy: Option<f64>,
    #[serde(default)]
    pub error: Option<f64>,
    #[serde(default)]
    pub trace: Option<String>,
}

impl RunRecord {
    /// Record for `spec`; the reduction is taken relative to the
    /// determinant count.
    pub fn new(spec: &AnsatzSpec, n_sites: usize, n_determinants: u64, n_csfs: u64, energy: f64) -> Result<Self> {
        let reduction = reduction_report(spec, n_sites, n_determinants)?;
        Ok(RunRecord {
            kind: spec.kind,
            active_params: reduction.parameters,
            frozen_params: frozen_param_count(spec, n_sites, 2),
            n_determinants,
            n_csfs,
            reduction_percent: reduction.percent,
            energy,
            oracle_energy: None,
            error: None,
            trace: None,
        })
    }

    pub fn with_oracle(mut self, oracle: f64) -> Self {
        self.oracle_energy = Some(oracle);
        self.error = Some(self.energy - oracle);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub splitting: Splitting,
    pub reduction_a: f64,
    pub reduction_b: f64,
    pub advisory: Option<String>,
}

/// Energy difference `a − b` with both reductions and the balance check.
pub fn compare_runs(a: &RunRecord, b: &RunRecord) -> Comparison {
    Comparison {
        splitting: spin_splitting(a.energy, b.energy),
        reduction_a: a.reduction_percent,
        reduction_b: b.reduction_percent,
        advisory: balance_advisory(a.reduction_percent, b.reduction_percent),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn from_path(path: &Path) -> TraceFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => TraceFormat::Json,
            _ => TraceFormat::Csv,
        }
    }
}

/// CSV column order of exported traces.
pub const TRACE_COLUMNS: [&str; 6] = ["sweep", "replica", "temperature", "energy", "acceptance", "swapped"];

/// Writes trace rows as CSV (columns [`TRACE_COLUMNS`]) or a JSON array.
/// Floats use shortest round-trip formatting, so re-import is lossless.
pub fn export_trace(rows: &[TraceRow], path: impl AsRef<Path>, format: TraceFormat) -> Result<()> {
    let path = path.as_ref();
    if rows.is_empty() {
        return Err(Error::InvalidArgument("trace is empty".into()));
    }
    match format {
        TraceFormat::Json => {
            let text = serde_json::to_string(rows).map_err(|e| Error::Serialization(e.to_string()))?;
            std::fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        TraceFormat::Csv => {
            let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            let mut writer = csv::Writer::from_writer(file);
            for row in rows {
                writer
                    .serialize(row)
                    .map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
            }
            writer.flush().map_err(|e| Error::io(path, e))
        }
    }
}

pub fn import_trace(path: impl AsRef<Path>, format: TraceFormat) -> Result<Vec<TraceRow>> {
    let path = path.as_ref();
    match format {
        TraceFormat::Json => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
        }
        TraceFormat::Csv => {
            let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
            let header: Vec<String> = reader
                .headers()
                .map_err(|e| Error::Serialization(e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect();
            if header != TRACE_COLUMNS {
                return Err(Error::Serialization(format!(
                    "{}: unexpected columns {header:?}",
                    path.display()
                )));
            }
            reader
                .deserialize()
                .map(|r| r.map_err(|e| Error::Serialization(format!("{}: {e}", path.display()))))
                .collect()
        }
    }
}
