//! Power sampling around a benchmark run and time-weighted averaging.

use std::io::{BufRead, BufReader};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Instant;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, MeasurementRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("power sampler unavailable: {0}")]
    SamplerUnavailable(String),
    #[error("no power samples fell inside the run window ({window_s:.6} s, sampling period {period_s} s); raise repetitions so the run spans several periods")]
    EmptyTrace { window_s: f64, period_s: f64 },
    #[error("invalid power trace: {0}")]
    InvalidTrace(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Timestamps strictly increase; watts are finite and non-negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    samples: Vec<(f64, f64)>,
    pub source: String,
    pub interval_s: f64,
}

impl PowerTrace {
    pub fn new(samples: Vec<(f64, f64)>, source: impl Into<String>, interval_s: f64) -> Result<Self, PowerError> {
        for (i, &(t, w)) in samples.iter().enumerate() {
            if !t.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(PowerError::InvalidTrace(format!("sample {i} is ({t}, {w})")));
            }
            if i > 0 && samples[i - 1].0 >= t {
                return Err(PowerError::InvalidTrace(format!("timestamp {t} at sample {i} does not increase")));
            }
        }
        Ok(PowerTrace { samples, source: source.into(), interval_s })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `start <= t <= end`.
    pub fn trimmed(&self, start: f64, end: f64) -> PowerTrace {
        PowerTrace {
            samples: self.samples.iter().copied().filter(|&(t, _)| t >= start && t <= end).collect(),
            source: self.source.clone(),
            interval_s: self.interval_s,
        }
    }

    pub fn shifted(&self, dt: f64) -> PowerTrace {
        PowerTrace {
            samples: self.samples.iter().map(|&(t, w)| (t + dt, w)).collect(),
            source: self.source.clone(),
            interval_s: self.interval_s,
        }
    }

    /// Subtract an idle baseline, clamping at zero.
    pub fn minus_baseline(&self, idle_w: f64) -> PowerTrace {
        PowerTrace {
            samples: self.samples.iter().map(|&(t, w)| (t, (w - idle_w).max(0.0))).collect(),
            source: self.source.clone(),
            interval_s: self.interval_s,
        }
    }
}

/// Trapezoidal time-weighted mean; plain mean for one or two samples.
pub fn average_power(trace: &PowerTrace) -> Result<f64, PowerError> {
    let s = trace.samples();
    match s.len() {
        0 => Err(PowerError::EmptyTrace { window_s: 0.0, period_s: trace.interval_s }),
        1 | 2 => Ok(s.iter().map(|&(_, w)| w).sum::<f64>() / s.len() as f64),
        _ => {
            let area: f64 = s.windows(2).map(|p| (p[1].0 - p[0].0) * (p[0].1 + p[1].1) / 2.0).sum();
            Ok(area / (s[s.len() - 1].0 - s[0].0))
        }
    }
}

/// A power sampler running alongside a benchmark.
pub trait PowerSampler {
    fn start(&mut self) -> Result<(), PowerError>;
    /// Seconds on the clock that stamps samples.
    fn now(&mut self) -> f64;
    fn stop(&mut self) -> Result<PowerTrace, PowerError>;
    fn period_s(&self) -> f64;
}

/// Start the sampler, run, stop it, and keep only samples inside the run window.
pub fn sample_during<F>(sampler: &mut dyn PowerSampler, run: F) -> Result<(MeasurementRecord, PowerTrace), PowerError>
where
    F: FnOnce() -> Result<MeasurementRecord, BackendError>,
{
    sampler.start()?;
    let t0 = sampler.now();
    let outcome = run();
    let t1 = sampler.now();
    let trace = sampler.stop()?;
    let mut record = outcome?;
    let period_s = sampler.period_s();
    let window = trace.trimmed(t0, t1);
    if t1 - t0 < period_s || window.is_empty() {
        return Err(PowerError::EmptyTrace { window_s: t1 - t0, period_s });
    }
    record.power_samples_w = Some(window.samples().to_vec());
    Ok((record, window))
}

/// Replays a recorded trace; the clock reads the window start, then the window end.
#[derive(Debug, Clone)]
pub struct ReplaySampler {
    trace: PowerTrace,
    window: (f64, f64),
    reads: u32,
    running: bool,
}

impl ReplaySampler {
    pub fn new(trace: PowerTrace, window: (f64, f64)) -> Self {
        ReplaySampler { trace, window, reads: 0, running: false }
    }
}

impl PowerSampler for ReplaySampler {
    fn start(&mut self) -> Result<(), PowerError> {
        self.reads = 0;
        self.running = true;
        Ok(())
    }

    fn now(&mut self) -> f64 {
        self.reads += 1;
        if self.reads == 1 {
            self.window.0
        } else {
            self.window.1
        }
    }

    fn stop(&mut self) -> Result<PowerTrace, PowerError> {
        if !self.running {
            return Err(PowerError::SamplerUnavailable("replay sampler stopped before start".into()));
        }
        self.running = false;
        Ok(self.trace.clone())
    }

    fn period_s(&self) -> f64 {
        self.trace.interval_s
    }
}

/// Column positions in sampler CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub timestamp: usize,
    pub power: usize,
}

impl Default for CsvColumns {
    fn default() -> Self {
        CsvColumns { timestamp: 0, power: 1 }
    }
}

/// Watts from one CSV field such as `" 46.72 W"`, `"46.72W"` or `"46.72"`.
pub fn parse_watts(field: &str) -> Option<f64> {
    let f = field.trim();
    let f = f.strip_suffix("[W]").unwrap_or(f).trim_end();
    let f = f.strip_suffix('W').unwrap_or(f).trim_end();
    let w: f64 = f.parse().ok()?;
    (w.is_finite() && w >= 0.0).then_some(w)
}

/// Timestamp field as whole seconds plus a fraction: plain seconds or `YYYY/MM/DD HH:MM:SS.fff`.
pub fn parse_timestamp(field: &str) -> Option<(i64, f64)> {
    let f = field.trim();
    if let Ok(v) = f.parse::<f64>() {
        return v.is_finite().then(|| (v.floor() as i64, v - v.floor()));
    }
    for fmt in ["%Y/%m/%d %H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(f, fmt) {
            let utc = dt.and_utc();
            return Some((utc.timestamp(), f64::from(utc.timestamp_subsec_nanos()) * 1e-9));
        }
    }
    None
}

/// Parse sampler CSV into a trace with timestamps relative to the first sample.
///
/// Header lines and rows whose power field is not numeric (e.g. `[N/A]`) are skipped.
pub fn parse_smi_csv(text: &str, columns: CsvColumns, interval_s: f64) -> Result<PowerTrace, PowerError> {
    let mut samples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let (Some(ts), Some(pw)) = (fields.get(columns.timestamp), fields.get(columns.power)) else {
            return Err(PowerError::Parse {
                line: i + 1,
                message: format!("expected at least {} columns", columns.timestamp.max(columns.power) + 1),
            });
        };
        let Some(watts) = parse_watts(pw) else { continue };
        let Some(t) = parse_timestamp(ts) else {
            return Err(PowerError::Parse { line: i + 1, message: format!("unreadable timestamp `{}`", ts.trim()) });
        };
        samples.push((t, watts));
    }
    let (s0, f0) = samples.first().map(|s| s.0).unwrap_or((0, 0.0));
    let rel = samples.into_iter().map(|((s, f), w)| ((s - s0) as f64 + (f - f0), w)).collect();
    PowerTrace::new(rel, "csv", interval_s)
}

/// External sampler process. Each output line is stamped with the host
/// monotonic clock on arrival; `now()` reads the same clock.
pub struct CommandSampler {
    program: String,
    args: Vec<String>,
    columns: CsvColumns,
    period_s: f64,
    origin: Instant,
    child: Option<Child>,
    reader: Option<JoinHandle<()>>,
    collected: Arc<Mutex<Vec<(f64, f64)>>>,
}

impl CommandSampler {
    /// `template` is split on whitespace; `{period_ms}` and `{device}` are substituted.
    pub fn from_template(template: &str, period_s: f64, device: u32, columns: CsvColumns) -> Result<Self, PowerError> {
        let period_ms = ((period_s * 1000.0).round() as u64).max(1).to_string();
        let mut parts = template
            .split_whitespace()
            .map(|p| p.replace("{period_ms}", &period_ms).replace("{device}", &device.to_string()));
        let program = parts.next().ok_or_else(|| PowerError::SamplerUnavailable("empty sampler command".into()))?;
        Ok(CommandSampler {
            program,
            args: parts.collect(),
            columns,
            period_s,
            origin: Instant::now(),
            child: None,
            reader: None,
            collected: Arc::new(Mutex::new(Vec::new())),
        })
    }

    pub const DEFAULT_TEMPLATE: &'static str =
        "nvidia-smi --query-gpu=timestamp,power.draw --format=csv,noheader,nounits -lms {period_ms} -i {device}";
}

impl PowerSampler for CommandSampler {
    fn start(&mut self) -> Result<(), PowerError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| PowerError::SamplerUnavailable(format!("{}: {e}", self.program)))?;
        self.origin = Instant::now();
        let stdout = child.stdout.take().ok_or_else(|| PowerError::SamplerUnavailable("no stdout".into()))?;
        let sink = Arc::clone(&self.collected);
        let origin = self.origin;
        let column = self.columns.power;
        sink.lock().map(|mut v| v.clear()).ok();
        self.reader = Some(std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                let t = origin.elapsed().as_secs_f64();
                if let Some(w) = line.split(',').nth(column).and_then(parse_watts) {
                    if let Ok(mut v) = sink.lock() {
                        v.push((t, w));
                    }
                }
            }
        }));
        self.child = Some(child);
        Ok(())
    }

    fn now(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn stop(&mut self) -> Result<PowerTrace, PowerError> {
        let mut child =
            self.child.take().ok_or_else(|| PowerError::SamplerUnavailable("sampler was not started".into()))?;
        let _ = child.kill();
        let _ = child.wait();
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        let mut samples = self.collected.lock().map(|v| v.clone()).unwrap_or_default();
        samples.dedup_by(|b, a| b.0 <= a.0);
        PowerTrace::new(samples, self.program.clone(), self.period_s)
    }

    fn period_s(&self) -> f64 {
        self.period_s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(samples: &[(f64, f64)]) -> PowerTrace {
        PowerTrace::new(samples.to_vec(), "test", 0.1).unwrap()
    }

    #[test]
    fn two_point_mean() {
        assert_eq!(average_power(&trace(&[(0.0, 40.0), (1.0, 60.0)])).unwrap(), 50.0);
    }

    #[test]
    fn trapezoid_weights_uneven_spacing() {
        let t = trace(&[(0.0, 10.0), (1.0, 20.0), (3.0, 20.0)]);
        assert!((average_power(&t).unwrap() - (15.0 + 40.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn constant_trace() {
        let t = trace(&(0..50).map(|i| (f64::from(i) * 0.1, 50.0)).collect::<Vec<_>>());
        assert!((average_power(&t).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_invalid() {
        assert!(matches!(average_power(&trace(&[])), Err(PowerError::EmptyTrace { .. })));
        assert!(PowerTrace::new(vec![(1.0, 5.0), (1.0, 6.0)], "x", 0.1).is_err());
        assert!(PowerTrace::new(vec![(0.0, -1.0)], "x", 0.1).is_err());
    }

    #[test]
    fn csv_with_units_and_headers() {
        let text = "timestamp, power.draw [W]\n\
                    2025/03/01 10:00:00.000, 46.00 W\n\
                    2025/03/01 10:00:00.100,  [N/A]\n\
                    2025/03/01 10:00:00.200,48.00W\n";
        let t = parse_smi_csv(text, CsvColumns::default(), 0.1).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.samples()[1].0 - 0.2).abs() < 1e-9);
        assert_eq!(t.samples()[1].1, 48.0);
    }

    #[test]
    fn csv_custom_columns() {
        let text = "0, 3, 1.5, 100\n1, 3, 2.5, 120\n";
        let t = parse_smi_csv(text, CsvColumns { timestamp: 0, power: 3 }, 1.0).unwrap();
        assert_eq!(t.samples(), &[(0.0, 100.0), (1.0, 120.0)]);
    }

    #[test]
    fn watts_parser() {
        assert_eq!(parse_watts(" 16.753 W "), Some(16.753));
        assert_eq!(parse_watts("55.8 [W]"), Some(55.8));
        assert_eq!(parse_watts("[N/A]"), None);
        assert_eq!(parse_watts("-3"), None);
    }

    #[test]
    fn missing_sampler_binary() {
        let mut s = CommandSampler::from_template("/nonexistent/sampler -x", 0.1, 0, CsvColumns::default()).unwrap();
        assert!(matches!(s.start(), Err(PowerError::SamplerUnavailable(_))));
    }

    #[test]
    fn command_sampler_collects_lines() {
        let mut s = CommandSampler::from_template("echo 0,42.5", 0.01, 0, CsvColumns::default()).unwrap();
        s.start().unwrap();
        std::thread::sleep(std::time::Duration::from_millis(50));
        let t = s.stop().unwrap();
        assert_eq!(t.samples().iter().map(|p| p.1).collect::<Vec<_>>(), vec![42.5]);
    }

    #[test]
    fn baseline_subtraction_clamps() {
        let t = trace(&[(0.0, 10.0), (1.0, 30.0)]).minus_baseline(15.0);
        assert_eq!(t.samples(), &[(0.0, 0.0), (1.0, 15.0)]);
    }
}
