//! Tables and plot files rendered from `results.json`. Output is a pure
//! function of the results, so re-rendering is byte-identical.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ResultRow, SuiteError, SuiteResults, METRIC_ORDER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Table,
    PlotData,
}

fn present_metrics(results: &SuiteResults) -> Vec<&'static str> {
    METRIC_ORDER.into_iter().filter(|m| results.rows.iter().any(|r| r.metrics.contains_key(*m))).collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Every row with every swept axis and every metric; full precision.
pub fn results_csv(results: &SuiteResults) -> String {
    let metrics = present_metrics(results);
    let mut header = vec!["device".to_string(), "workload".to_string()];
    header.extend(results.axes.iter().cloned());
    header.extend(metrics.iter().map(|m| m.to_string()));
    header.extend(["repetitions".to_string(), "checksum".to_string()]);
    let mut out = header.join(",") + "\n";
    for r in &results.rows {
        let mut f = vec![csv_field(&r.device), csv_field(&r.workload.to_string())];
        f.extend(results.axes.iter().map(|a| r.point.get(a).map(|v| csv_field(&v.to_string())).unwrap_or_default()));
        f.extend(metrics.iter().map(|m| r.metric(m).map(|v| v.to_string()).unwrap_or_default()));
        f.push(r.repetitions.to_string());
        f.push(r.checksum.clone());
        out += &(f.join(",") + "\n");
    }
    out
}

fn fmt_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-3..1e6).contains(&a) {
        format!("{v:.4}")
    } else {
        format!("{v:.4e}")
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(String::len).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect();
        out += line.join("  ").trim_end();
        out.push('\n');
    }
    out
}

/// Per device and workload: true latency of the single-chain point with the
/// longest chain, and completion latency of the point with the most chains.
pub fn latency_pairs(results: &SuiteResults) -> Vec<(String, String, Option<f64>, Option<f64>)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in results.rows.iter().filter(|r| r.workload.is_compute()) {
        let k = (r.device.clone(), r.workload.to_string());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dev, wl)| {
            let rows: Vec<&ResultRow> =
                results.rows.iter().filter(|r| r.device == dev && r.workload.to_string() == wl).collect();
            let ilp = |r: &ResultRow| r.int("ilp").unwrap_or(1);
            let chain = |r: &ResultRow| r.int("chain_len").unwrap_or(1);
            let t = rows
                .iter()
                .filter(|r| r.metrics.contains_key("true_latency"))
                .max_by_key(|r| chain(r))
                .and_then(|r| r.metric("true_latency"));
            let c = rows.iter().max_by_key(|r| (ilp(r), chain(r))).and_then(|r| r.metric("completion_latency"));
            (dev, wl, t, c)
        })
        .collect()
}

fn latency_section(results: &SuiteResults) -> Option<(String, String)> {
    let pairs = latency_pairs(results);
    if pairs.is_empty() {
        return None;
    }
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    let mut table = vec![vec!["device".to_string(), "workload".into(), "true/completion".into()]];
    let mut csv = String::from("device,workload,true_latency,completion_latency\n");
    for (d, w, t, c) in &pairs {
        table.push(vec![d.clone(), w.clone(), format!("{}/{}", show(*t), show(*c))]);
        let raw = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", csv_field(d), csv_field(w), raw(*t), raw(*c));
    }
    Some((aligned(&table), csv))
}

/// Aligned text: one line per row with varying axes and present metrics,
/// followed by a true/completion latency summary when arithmetic rows exist.
pub fn results_table(results: &SuiteResults) -> String {
    let metrics = present_metrics(results);
    let axes = results.varying_axes();
    let mut rows = Vec::new();
    let mut header = vec!["device".to_string(), "workload".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(metrics.iter().map(|m| m.to_string()));
    rows.push(header);
    for r in &results.rows {
        let mut line = vec![r.device.clone(), r.workload.to_string()];
        line.extend(axes.iter().map(|a| r.point.get(a).map(|v| v.to_string()).unwrap_or_default()));
        line.extend(metrics.iter().map(|m| r.metric(m).map(fmt_value).unwrap_or_else(|| "-".into())));
        rows.push(line);
    }
    let mut out = aligned(&rows);
    if let Some((text, _)) = latency_section(results) {
        out.push('\n');
        out += &text;
    }
    out
}

/// Gnuplot data (one indexed block per series) and a script that draws it.
pub fn plot_files(results: &SuiteResults, dat_name: &str) -> (String, String) {
    let p = &results.plot;
    let series = results.series(&[p.x.as_str()]);
    let mut dat = format!("# x: {}  y: {}\n", p.x, p.y);
    let mut titles = Vec::new();
    for (label, rows) in &series {
        let mut pts: Vec<(u64, f64)> = rows.iter().filter_map(|r| Some((r.int(&p.x)?, r.metric(&p.y)?))).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by_key(|q| q.0);
        if !titles.is_empty() {
            dat += "\n\n";
        }
        let _ = writeln!(dat, "# series: {label}");
        for (x, y) in pts {
            let _ = writeln!(dat, "{x} {y:.6}");
        }
        titles.push(label.clone());
    }
    let mut gp = String::from("set terminal pngcairo size 900,600\n");
    let _ = writeln!(gp, "set output '{}'", dat_name.trim_end_matches(".dat").to_string() + ".png");
    let _ = writeln!(gp, "set xlabel '{}'", p.x);
    let _ = writeln!(gp, "set ylabel '{}'", p.y_label);
    if p.log_x {
        gp += "set logscale x 2\n";
    }
    gp += "set key left top\nset grid\n";
    let plots: Vec<String> = titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("'{dat_name}' index {i} using 1:2 with linespoints title '{}'", t.replace('\'', "")))
        .collect();
    if !plots.is_empty() {
        gp += &format!("plot {}\n", plots.join(", \\\n     "));
    }
    (dat, gp)
}

/// Render `kind` from `results_path` (a results.json file or its directory) into `out_dir`.
pub fn render_report(results_path: &Path, kind: ReportKind, out_dir: &Path) -> Result<Vec<PathBuf>, SuiteError> {
    let results = SuiteResults::load(results_path)?;
    std::fs::create_dir_all(out_dir).map_err(|e| SuiteError::io(out_dir, e))?;
    let mut files: Vec<(PathBuf, String)> = Vec::new();
    match kind {
        ReportKind::Table => {
            files.push((out_dir.join("report.txt"), results_table(&results)));
            files.push((out_dir.join("report.csv"), results_csv(&results)));
            if let Some((_, csv)) = latency_section(&results) {
                files.push((out_dir.join("latency.csv"), csv));
            }
        }
        ReportKind::PlotData => {
            let (dat, gp) = plot_files(&results, "plot.dat");
            files.push((out_dir.join("plot.dat"), dat));
            files.push((out_dir.join("plot.gp"), gp));
        }
    }
    let mut out = Vec::new();
    for (path, text) in files {
        std::fs::write(&path, text).map_err(|e| SuiteError::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}
