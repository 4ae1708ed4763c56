//! Curve analysis over collected results.

use serde_json::{json, Map, Value};

use super::config::{AnalysisConfig, AxisValue};
use super::{ResultRow, SuiteError, SuiteResults};
use crate::curves::{crossover, detect_boundaries, saturation_point, CurveSense, LatencyCurve, XKind};

fn x_kind(axis: &str) -> XKind {
    match axis {
        "working_set_bytes" => XKind::Bytes,
        "ilp" => XKind::Ilp,
        "chain_len" => XKind::ChainLen,
        _ => XKind::Warps,
    }
}

fn curve(rows: &[&ResultRow], x: &str, y: &str) -> Result<LatencyCurve, SuiteError> {
    let mut pts: Vec<(u64, f64)> = rows.iter().filter_map(|r| Some((r.int(x)?, r.metric(y)?))).collect();
    pts.sort_by_key(|p| p.0);
    Ok(LatencyCurve::new(x_kind(x), pts)?)
}

/// Run the configured analysis; the result is what `analysis.json` holds.
pub fn analyze(results: &SuiteResults, cfg: &AnalysisConfig) -> Result<Value, SuiteError> {
    match cfg {
        AnalysisConfig::None => Ok(json!({ "kind": "none" })),
        AnalysisConfig::Hierarchy { min_jump_ratio } => {
            let x = "working_set_bytes";
            let mut series = Map::new();
            for (label, rows) in results.series(&[x]) {
                let report = detect_boundaries(&curve(&rows, x, "access_latency")?, *min_jump_ratio)?;
                series.insert(label, serde_json::to_value(report).unwrap_or_default());
            }
            Ok(json!({ "kind": "hierarchy", "min_jump_ratio": min_jump_ratio, "series": series }))
        }
        AnalysisConfig::Saturation { x, group_by, window, tolerance } => {
            let mut exclude = vec![x.as_str()];
            if let Some(g) = group_by {
                exclude.push(g.as_str());
            }
            let mut series = Map::new();
            for (label, rows) in results.series(&exclude) {
                let mut groups: Vec<(Option<AxisValue>, Vec<&ResultRow>)> = Vec::new();
                for r in rows {
                    let g = group_by.as_ref().and_then(|g| r.point.get(g).cloned());
                    match groups.iter_mut().find(|(k, _)| *k == g) {
                        Some((_, v)) => v.push(r),
                        None => groups.push((g, vec![r])),
                    }
                }
                let mut best: Option<(u64, Option<AxisValue>)> = None;
                let mut entries = Vec::new();
                for (g, rows) in &groups {
                    let c = curve(rows, x, "ipc_per_sm")?;
                    let gv = g.as_ref().map(|v| serde_json::to_value(v).unwrap_or_default());
                    match saturation_point(&c, *window, *tolerance, CurveSense::HigherIsBetter) {
                        Ok(s) => {
                            entries.push(json!({ "group": gv, "saturation": s }));
                            let better = match &best {
                                None => true,
                                Some((bs, bg)) => s > *bs || (s == *bs && group_rank(g) >= group_rank(bg)),
                            };
                            if better {
                                best = Some((s, g.clone()));
                            }
                        }
                        Err(e) => entries.push(json!({ "group": gv, "saturation": null, "error": e.to_string() })),
                    }
                }
                series.insert(
                    label,
                    json!({
                        "saturation": best.as_ref().map(|b| b.0),
                        "at_group": best.and_then(|b| b.1).map(|v| serde_json::to_value(v).unwrap_or_default()),
                        "groups": entries,
                    }),
                );
            }
            Ok(json!({
                "kind": "saturation",
                "x": x,
                "group_by": group_by,
                "window": window,
                "tolerance": tolerance,
                "series": series,
            }))
        }
        AnalysisConfig::Crossover { x } => {
            let y = results.plot.y.as_str();
            let curves: Vec<(String, LatencyCurve)> = results
                .series(&[x.as_str()])
                .into_iter()
                .map(|(l, rows)| curve(&rows, x, y).map(|c| (l, c)))
                .collect::<Result<_, _>>()?;
            let mut pairs = Vec::new();
            for i in 0..curves.len() {
                for j in i + 1..curves.len() {
                    let at = crossover(&curves[i].1, &curves[j].1)?;
                    pairs.push(json!({ "a": curves[i].0, "b": curves[j].0, "crossover": at }));
                }
            }
            Ok(json!({ "kind": "crossover", "x": x, "y": y, "pairs": pairs }))
        }
    }
}

fn group_rank(g: &Option<AxisValue>) -> u64 {
    match g {
        Some(AxisValue::Int(v)) => *v,
        _ => 0,
    }
}
