//! Config-driven sweeps: generate, execute, reduce, analyze and report.

pub mod analysis;
pub mod config;
pub mod report;
pub mod run;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, DeviceIdentity};
use crate::curves::CurveError;
use crate::kernels::{KernelError, WorkloadClass};
use crate::metrics::MetricsError;
use crate::power::PowerError;

pub use analysis::analyze;
pub use config::{AnalysisConfig, AxisValue, AxisValues, BackendKind, SweepConfig};
pub use report::{render_report, ReportKind};
pub use run::{run_suite, SuiteOverrides, SuiteSummary};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("invalid config at `{field}`: {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("{spec}: {source}")]
    Backend { spec: String, source: BackendError },
    #[error("{spec}: {source}")]
    Kernel { spec: String, source: KernelError },
    #[error("{spec}: {source}")]
    Metrics { spec: String, source: MetricsError },
    #[error("{spec}: {source}")]
    Power { spec: String, source: PowerError },
    #[error("analysis: {0}")]
    Curve(#[from] CurveError),
    #[error("results unreadable: {0}")]
    ResultsUnreadable(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl SuiteError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        SuiteError::ConfigInvalid { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        SuiteError::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SuiteError::ConfigInvalid { .. } => "ConfigInvalid",
            SuiteError::Backend { .. } => "Backend",
            SuiteError::Kernel { .. } => "Kernel",
            SuiteError::Metrics { .. } => "Metrics",
            SuiteError::Power { .. } => "Power",
            SuiteError::Curve(_) => "Curve",
            SuiteError::ResultsUnreadable(_) => "ResultsUnreadable",
            SuiteError::Io { .. } => "Io",
        }
    }

    /// Machine-readable summary: `error`, `message`, and `field` or `spec` when known.
    pub fn summary(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("error".into(), self.kind().into());
        m.insert("message".into(), self.to_string().into());
        match self {
            SuiteError::ConfigInvalid { field, .. } => {
                m.insert("field".into(), field.clone().into());
            }
            SuiteError::Backend { spec, .. }
            | SuiteError::Kernel { spec, .. }
            | SuiteError::Metrics { spec, .. }
            | SuiteError::Power { spec, .. } => {
                m.insert("spec".into(), spec.clone().into());
            }
            _ => {}
        }
        serde_json::Value::Object(m)
    }
}

/// Metric names in output column order.
pub const METRIC_ORDER: [&str; 10] = [
    "overhead_cycles",
    "true_latency",
    "completion_latency",
    "ipc_per_sm",
    "tflops",
    "access_latency",
    "bandwidth_gbps",
    "avg_power_w",
    "perf_per_watt",
    "wall_time_s",
];

/// What a plot of these results draws.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub y_label: String,
    pub log_x: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    /// Device chip name.
    pub device: String,
    pub workload: WorkloadClass,
    pub point: IndexMap<String, AxisValue>,
    pub spec_key: String,
    pub repetitions: u32,
    pub metrics: IndexMap<String, f64>,
    pub checksum: String,
}

impl ResultRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn int(&self, axis: &str) -> Option<u64> {
        match self.point.get(axis)? {
            AxisValue::Int(v) => Some(*v),
            AxisValue::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteResults {
    pub families: Vec<WorkloadClass>,
    /// Swept axes in config order.
    pub axes: Vec<String>,
    pub devices: Vec<DeviceIdentity>,
    pub plot: PlotSpec,
    pub rows: Vec<ResultRow>,
}

impl SuiteResults {
    pub fn load(path: &std::path::Path) -> Result<Self, SuiteError> {
        let file = if path.is_dir() { path.join("results.json") } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file)
            .map_err(|e| SuiteError::ResultsUnreadable(format!("{}: {e}", file.display())))?;
        serde_json::from_str(&text).map_err(|e| SuiteError::ResultsUnreadable(format!("{}: {e}", file.display())))
    }

    /// Axes with more than one distinct value, in config order.
    pub fn varying_axes(&self) -> Vec<String> {
        self.axes
            .iter()
            .filter(|a| {
                let mut seen: Vec<&AxisValue> = Vec::new();
                for r in &self.rows {
                    if let Some(v) = r.point.get(*a) {
                        if !seen.contains(&v) {
                            seen.push(v);
                        }
                    }
                }
                seen.len() > 1
            })
            .cloned()
            .collect()
    }

    /// Label for the curve a row belongs to, ignoring the `exclude` axes.
    pub fn series_label(&self, row: &ResultRow, exclude: &[&str]) -> String {
        let mut label = row.device.clone();
        if self.families.len() > 1 {
            label.push(' ');
            label.push_str(&row.workload.to_string());
        }
        for a in self.varying_axes() {
            if exclude.contains(&a.as_str()) {
                continue;
            }
            if let Some(v) = row.point.get(&a) {
                label.push_str(&format!(" {a}={v}"));
            }
        }
        label
    }

    /// Rows grouped by series label, in first-appearance order.
    pub fn series(&self, exclude: &[&str]) -> IndexMap<String, Vec<&ResultRow>> {
        let mut out: IndexMap<String, Vec<&ResultRow>> = IndexMap::new();
        for r in &self.rows {
            out.entry(self.series_label(r, exclude)).or_default().push(r);
        }
        out
    }
}
