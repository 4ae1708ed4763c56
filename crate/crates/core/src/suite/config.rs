//! Sweep configuration files (TOML or JSON).

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::SuiteError;
use crate::kernels::chase::DEFAULT_CHASE_ACCESSES;
use crate::kernels::memory::{DEFAULT_PROBE_FOOTPRINT, L2_PROBE_ACCESSES, L2_PROBE_FOOTPRINT};
use crate::kernels::mma::{ElementType, MmaDescriptor};
use crate::kernels::{KernelSpec, WorkloadClass};
use crate::metrics::Aggregation;

/// Sweepable [`KernelSpec`] fields, in canonical order.
pub const AXIS_NAMES: [&str; 8] =
    ["chain_len", "ilp", "iterations", "warps", "stride", "working_set_bytes", "accesses", "mma"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(t) => vec![t.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Int(u64),
    Text(String),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Int(v) => write!(f, "{v}"),
            AxisValue::Text(s) => f.write_str(s),
        }
    }
}

/// Explicit list, or `per_octave` log-spaced points from `from` to `to`
/// rounded down to a multiple of `align`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValues {
    List(Vec<AxisValue>),
    Log {
        from: u64,
        to: u64,
        per_octave: u32,
        #[serde(default = "one_u64", skip_serializing_if = "is_one")]
        align: u64,
    },
    Range {
        from: u64,
        to: u64,
        #[serde(default = "one_u64", skip_serializing_if = "is_one")]
        step: u64,
    },
}

fn one_u64() -> u64 {
    1
}

fn is_one(v: &u64) -> bool {
    *v == 1
}

impl AxisValues {
    pub fn expand(&self, field: &str) -> Result<Vec<AxisValue>, SuiteError> {
        let bad = |m: String| SuiteError::config(field, m);
        match self {
            AxisValues::List(v) => Ok(v.clone()),
            AxisValues::Range { from, to, step } => {
                if *step == 0 || from > to {
                    return Err(bad(format!("range {from}..={to} step {step} is empty")));
                }
                Ok((*from..=*to).step_by(*step as usize).map(AxisValue::Int).collect())
            }
            AxisValues::Log { from, to, per_octave, align } => {
                if *from == 0 || from > to || *per_octave == 0 || *align == 0 {
                    return Err(bad(format!("log range {from}..={to} ({per_octave}/octave, align {align}) is empty")));
                }
                let mut out: Vec<u64> = Vec::new();
                for k in 0u32.. {
                    let x = (*from as f64 * 2f64.powf(f64::from(k) / f64::from(*per_octave))).round() as u64;
                    if x > *to {
                        break;
                    }
                    let x = (x / align * align).max(*align);
                    if out.last() != Some(&x) {
                        out.push(x);
                    }
                }
                Ok(out.into_iter().map(AxisValue::Int).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default = "default_reps")]
    pub repetitions: u32,
    #[serde(default = "one_u32")]
    pub warmup_discards: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregation: Option<Aggregation>,
}

fn default_reps() -> u32 {
    16
}

fn one_u32() -> u32 {
    1
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig { repetitions: default_reps(), warmup_discards: 1, seed: 0, aggregation: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Replay,
    Gpu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Replay fixtures, relative to the config file; one device each.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fixtures: Vec<PathBuf>,
    #[serde(default)]
    pub device: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative to the config file.
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    #[serde(default = "yes")]
    pub plot: bool,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum AnalysisConfig {
    #[default]
    None,
    /// Cache levels from a pointer-chase working-set sweep.
    Hierarchy {
        #[serde(default = "default_jump")]
        min_jump_ratio: f64,
    },
    /// Throughput saturation along `x`, once per value of `group_by`.
    Saturation {
        x: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        group_by: Option<String>,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// Where the devices' curves along `x` cross.
    Crossover { x: String },
}

fn default_jump() -> f64 {
    1.5
}

fn default_window() -> usize {
    3
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub family: OneOrMany<WorkloadClass>,
    /// Average device power over each point and report performance per watt.
    #[serde(default)]
    pub power: bool,
    pub axes: IndexMap<String, AxisValues>,
    #[serde(default)]
    pub policy: PolicyConfig,
    pub backend: BackendConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

/// One cartesian point: axis values in config order.
pub type SweepPoint = IndexMap<String, AxisValue>;

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SuiteError> {
        toml::from_str(text).map_err(|e| SuiteError::config(toml_path(&e), e.message().to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self, SuiteError> {
        serde_json::from_str(text).map_err(|e| SuiteError::config("", e.to_string()))
    }

    /// Parse by extension: `.json` is JSON, anything else TOML.
    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SuiteError::config("", format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)?
        } else {
            Self::from_toml_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, SuiteError> {
        toml::to_string(self).map_err(|e| SuiteError::config("", e.to_string()))
    }

    pub fn families(&self) -> Vec<WorkloadClass> {
        self.family.to_vec()
    }

    pub fn validate(&self) -> Result<(), SuiteError> {
        let families = self.families();
        if families.is_empty() {
            return Err(SuiteError::config("family", "at least one workload family is required"));
        }
        if self.axes.is_empty() {
            return Err(SuiteError::config("axes", "at least one sweep axis is required"));
        }
        for (name, values) in &self.axes {
            let path = format!("axes.{name}");
            if !AXIS_NAMES.contains(&name.as_str()) {
                return Err(SuiteError::config(&path, format!("unknown axis; expected one of {AXIS_NAMES:?}")));
            }
            for fam in &families {
                if !axis_used(&KernelSpec::new(*fam), name) {
                    return Err(SuiteError::config(&path, format!("{fam} does not use `{name}`")));
                }
            }
            let expanded = values.expand(&path)?;
            if expanded.is_empty() {
                return Err(SuiteError::config(&path, "axis has no values"));
            }
            for v in &expanded {
                match (name.as_str(), v) {
                    ("mma", AxisValue::Text(s)) => {
                        s.parse::<ElementType>().map_err(|e| SuiteError::config(&path, e.to_string()))?;
                    }
                    ("mma", _) => return Err(SuiteError::config(&path, "mma values are element type names")),
                    (_, AxisValue::Int(_)) => {}
                    (_, AxisValue::Text(s)) => {
                        return Err(SuiteError::config(&path, format!("`{s}` is not an integer")))
                    }
                }
            }
        }
        for fam in &families {
            if *fam == WorkloadClass::MmaSync && !self.axes.contains_key("mma") {
                return Err(SuiteError::config("axes.mma", "MmaSync sweeps need an `mma` axis"));
            }
            if matches!(
                fam,
                WorkloadClass::PointerChase | WorkloadClass::GlobalBandwidthRead | WorkloadClass::GlobalBandwidthWrite
            ) && !self.axes.contains_key("working_set_bytes")
            {
                return Err(SuiteError::config("axes.working_set_bytes", format!("{fam} needs a working-set axis")));
            }
        }
        if self.policy.repetitions <= self.policy.warmup_discards {
            return Err(SuiteError::config("policy.repetitions", "must exceed warmup_discards"));
        }
        match self.backend.kind {
            BackendKind::Replay if self.backend.fixtures.is_empty() => {
                return Err(SuiteError::config("backend.fixtures", "replay needs at least one fixture"));
            }
            _ => {}
        }
        if self.output.formats.is_empty() && !self.output.plot {
            return Err(SuiteError::config("output.formats", "nothing to write"));
        }
        match &self.analysis {
            AnalysisConfig::None => {}
            AnalysisConfig::Hierarchy { min_jump_ratio } => {
                if families != [WorkloadClass::PointerChase] {
                    return Err(SuiteError::config("analysis.kind", "hierarchy analysis needs a PointerChase sweep"));
                }
                if !(min_jump_ratio.is_finite() && *min_jump_ratio > 1.0) {
                    return Err(SuiteError::config("analysis.min_jump_ratio", "must exceed 1"));
                }
            }
            AnalysisConfig::Saturation { x, group_by, window, tolerance } => {
                if !matches!(x.as_str(), "ilp" | "warps") || !self.axes.contains_key(x) {
                    return Err(SuiteError::config("analysis.x", "must be a swept `ilp` or `warps` axis"));
                }
                if let Some(g) = group_by {
                    if g == x || !self.axes.contains_key(g) {
                        return Err(SuiteError::config("analysis.group_by", "must be another swept axis"));
                    }
                }
                if *window == 0 || !(0.0..1.0).contains(tolerance) {
                    return Err(SuiteError::config("analysis.window", "window >= 1 and tolerance in [0, 1) required"));
                }
                if !families.iter().all(WorkloadClass::is_compute) {
                    return Err(SuiteError::config("analysis.kind", "saturation needs arithmetic families"));
                }
            }
            AnalysisConfig::Crossover { x } => {
                if !self.axes.contains_key(x) {
                    return Err(SuiteError::config("analysis.x", "must be a swept axis"));
                }
            }
        }
        Ok(())
    }

    /// Cartesian product in config axis order; the first axis varies slowest.
    pub fn points(&self) -> Result<Vec<SweepPoint>, SuiteError> {
        let mut points = vec![SweepPoint::new()];
        for (name, values) in &self.axes {
            let expanded = values.expand(&format!("axes.{name}"))?;
            points = points
                .into_iter()
                .flat_map(|p| {
                    expanded.iter().map(move |v| {
                        let mut q = p.clone();
                        q.insert(name.clone(), v.clone());
                        q
                    })
                })
                .collect();
        }
        Ok(points)
    }

    pub fn aggregation_for(&self, workload: WorkloadClass) -> Aggregation {
        self.policy.aggregation.unwrap_or_else(|| Aggregation::default_for(workload))
    }

    pub fn resolve(&self, base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

/// toml reports spans, not key paths; recover the key from "field `x`" messages.
fn toml_path(e: &toml::de::Error) -> String {
    let m = e.message();
    m.find("field `").and_then(|at| m[at + 7..].split('`').next()).unwrap_or_default().to_string()
}

fn axis_used(spec: &KernelSpec, name: &str) -> bool {
    let u = spec.uses();
    match name {
        "chain_len" => u.chain_len,
        "ilp" => u.ilp,
        "iterations" => u.iterations,
        "warps" => u.warps,
        "stride" => u.stride,
        "working_set_bytes" => u.working_set_bytes,
        "accesses" => u.accesses,
        "mma" => u.mma,
        _ => false,
    }
}

/// Build the kernel spec for one point, filling unswept fields with family defaults.
pub fn spec_for(family: WorkloadClass, point: &SweepPoint) -> Result<KernelSpec, SuiteError> {
    use WorkloadClass::*;
    let mut s = KernelSpec::new(family);
    let u = s.uses();
    if u.stride {
        s.stride = 1;
    }
    if u.accesses {
        s.accesses = match family {
            L2WarpLoadStore => L2_PROBE_ACCESSES,
            _ => DEFAULT_CHASE_ACCESSES,
        };
    }
    if u.working_set_bytes {
        s.working_set_bytes = match family {
            L2WarpLoadStore => L2_PROBE_FOOTPRINT,
            _ => DEFAULT_PROBE_FOOTPRINT,
        };
    }
    for (name, value) in point {
        let path = format!("axes.{name}");
        let int = || match value {
            AxisValue::Int(v) => Ok(*v),
            AxisValue::Text(t) => Err(SuiteError::config(&path, format!("`{t}` is not an integer"))),
        };
        let narrow = |v: u64| u32::try_from(v).map_err(|_| SuiteError::config(&path, format!("{v} is out of range")));
        match name.as_str() {
            "chain_len" => s.chain_len = narrow(int()?)?,
            "ilp" => s.ilp = narrow(int()?)?,
            "iterations" => s.iterations = narrow(int()?)?,
            "warps" => s.warps = narrow(int()?)?,
            "stride" => s.stride = narrow(int()?)?,
            "working_set_bytes" => s.working_set_bytes = int()?,
            "accesses" => s.accesses = narrow(int()?)?,
            "mma" => {
                let AxisValue::Text(t) = value else {
                    return Err(SuiteError::config(&path, "expected an element type name"));
                };
                let ty: ElementType =
                    t.parse().map_err(|e: crate::kernels::KernelError| SuiteError::config(&path, e.to_string()))?;
                s.mma = Some(MmaDescriptor::m16n8k32(ty));
            }
            other => return Err(SuiteError::config(&path, format!("unknown axis `{other}`"))),
        }
    }
    s.validate().map_err(|e| SuiteError::config("axes", format!("{}: {e}", s.canonical_key())))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHASE: &str = r#"
family = "PointerChase"

[axes]
working_set_bytes = { from = 4096, to = 65536, per_octave = 2, align = 64 }
accesses = [256]

[policy]
repetitions = 8

[backend]
kind = "replay"
fixtures = ["a.json"]

[output]
dir = "out"

[analysis]
kind = "hierarchy"
"#;

    #[test]
    fn parses_and_expands() {
        let c = SweepConfig::from_toml_str(CHASE).unwrap();
        c.validate().unwrap();
        let pts = c.points().unwrap();
        let ws: Vec<String> = pts.iter().map(|p| p["working_set_bytes"].to_string()).collect();
        assert_eq!(ws, ["4096", "5760", "8192", "11584", "16384", "23168", "32768", "46336", "65536"]);
        assert_eq!(c.analysis, AnalysisConfig::Hierarchy { min_jump_ratio: 1.5 });
        let spec = spec_for(WorkloadClass::PointerChase, &pts[0]).unwrap();
        assert_eq!(spec, KernelSpec::pointer_chase(4096, 256));
    }

    #[test]
    fn toml_round_trip_is_fixed_point() {
        let c = SweepConfig::from_toml_str(CHASE).unwrap();
        let s = c.to_toml_string().unwrap();
        let again = SweepConfig::from_toml_str(&s).unwrap();
        assert_eq!(c, again);
        assert_eq!(again.to_toml_string().unwrap(), s);
    }

    #[test]
    fn json_is_accepted() {
        let c = SweepConfig::from_toml_str(CHASE).unwrap();
        let j = serde_json::to_string(&c).unwrap();
        assert_eq!(SweepConfig::from_json_str(&j).unwrap(), c);
    }

    #[test]
    fn empty_axes_named() {
        let text = CHASE.replace(
            "working_set_bytes = { from = 4096, to = 65536, per_octave = 2, align = 64 }\naccesses = [256]\n",
            "",
        );
        let c = SweepConfig::from_toml_str(&text).unwrap();
        match c.validate() {
            Err(SuiteError::ConfigInvalid { field, .. }) => assert_eq!(field, "axes"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn inapplicable_axis_named() {
        let text = CHASE.replace("accesses = [256]", "ilp = [2]");
        match SweepConfig::from_toml_str(&text).unwrap().validate() {
            Err(SuiteError::ConfigInvalid { field, .. }) => assert_eq!(field, "axes.ilp"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mma_axis_values() {
        let mut p = SweepPoint::new();
        p.insert("mma".into(), AxisValue::Text("e4m3".into()));
        p.insert("ilp".into(), AxisValue::Int(3));
        let s = spec_for(WorkloadClass::MmaSync, &p).unwrap();
        assert_eq!(s.mma, Some(MmaDescriptor::m16n8k32(ElementType::E4m3)));
        assert_eq!(s.ilp, 3);
    }
}
