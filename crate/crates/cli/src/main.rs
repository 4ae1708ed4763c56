use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use gpudissect::backend::bridge::{resolve_bridge_path, BridgeBackend, BRIDGE_ENV};
use gpudissect::backend::replay::ReplayBackend;
use gpudissect::backend::Backend;
use gpudissect::kernels::{generate, Direction, GenContext, WorkloadClass};
use gpudissect::sasscheck::{classify_mma, parse_listing, verify_chain_integrity, Disassembler};
use gpudissect::suite::config::{spec_for, SweepPoint};
use gpudissect::suite::{
    analyze, render_report, run_suite, AnalysisConfig, AxisValue, BackendKind, ReportKind, SuiteError, SuiteOverrides,
    SweepConfig,
};

#[derive(Parser, Debug)]
#[command(name = "gpudissect", version, about = "PTX microbenchmarks: generate, run, analyze, report")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Execution backend; defaults to replay when a fixture is given.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Replay fixture; repeat for several devices.
    #[arg(long = "fixture", global = true)]
    fixtures: Vec<PathBuf>,
    /// Device index handed to the bridge.
    #[arg(long, global = true)]
    device: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bridge executable; the environment variable takes precedence.
    #[arg(long, global = true, env = BRIDGE_ENV, hide_env_values = true)]
    bridge: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum BackendArg {
    Gpu,
    Replay,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write PTX and launch metadata for one spec, or every point of a config.
    Gen {
        #[arg(long, conflicts_with = "workload")]
        config: Option<PathBuf>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Execute a sweep config and write its results, analysis and plots.
    Run { config: PathBuf },
    /// Analyze a results.json file.
    Analyze {
        results: PathBuf,
        #[arg(long, value_enum)]
        kind: AnalysisKind,
        #[arg(long, default_value = "working_set_bytes")]
        x: String,
        #[arg(long)]
        group_by: Option<String>,
        #[arg(long, default_value_t = 1.5)]
        min_jump_ratio: f64,
        #[arg(long, default_value_t = 3)]
        window: usize,
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
    /// Render tables or plot files from results.json.
    Report {
        results: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        kind: ReportArg,
    },
    /// Check a SASS listing (or a PTX file, via the assembler) against a spec.
    VerifySass {
        #[arg(long, required_unless_present = "ptx")]
        listing: Option<PathBuf>,
        #[arg(long, conflicts_with = "listing", requires = "arch")]
        ptx: Option<PathBuf>,
        #[arg(long)]
        arch: Option<String>,
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Report device identity, clock overhead and shared-memory limit.
    Probe,
    /// Measure global-memory bandwidth over a footprint larger than L2.
    Bandwidth {
        #[arg(long, value_enum)]
        direction: DirectionArg,
        #[arg(long)]
        bytes: u64,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AnalysisKind {
    Hierarchy,
    Saturation,
    Crossover,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportArg {
    Table,
    PlotData,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    Read,
    Write,
}

#[derive(Args, Debug, Default)]
struct SpecArgs {
    /// Workload class, e.g. PureInt32Mad or MixedIntFp32:Mixed1.
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    chain_len: Option<u64>,
    #[arg(long)]
    ilp: Option<u64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    warps: Option<u64>,
    #[arg(long)]
    stride: Option<u64>,
    #[arg(long)]
    working_set_bytes: Option<u64>,
    #[arg(long)]
    accesses: Option<u64>,
    /// Operand element type for MmaSync, e.g. e4m3.
    #[arg(long)]
    mma: Option<String>,
}

impl SpecArgs {
    fn spec(&self) -> Result<Option<gpudissect::kernels::KernelSpec>, String> {
        let Some(w) = &self.workload else { return Ok(None) };
        let workload: WorkloadClass = w.parse().map_err(|e| format!("{e}"))?;
        let mut p = SweepPoint::new();
        let ints = [
            ("chain_len", self.chain_len),
            ("ilp", self.ilp),
            ("iterations", self.iterations),
            ("warps", self.warps),
            ("stride", self.stride),
            ("working_set_bytes", self.working_set_bytes),
            ("accesses", self.accesses),
        ];
        for (name, v) in ints {
            if let Some(v) = v {
                p.insert(name.into(), AxisValue::Int(v));
            }
        }
        if let Some(m) = &self.mma {
            p.insert("mma".into(), AxisValue::Text(m.clone()));
        }
        spec_for(workload, &p).map(Some).map_err(|e| e.to_string())
    }
}

fn fail(summary: serde_json::Value) -> ExitCode {
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    if let Some(m) = summary.get("message").and_then(|m| m.as_str()) {
        eprintln!("error: {m}");
    }
    ExitCode::FAILURE
}

fn plain_error(kind: &str, message: impl std::fmt::Display) -> ExitCode {
    fail(json!({ "error": kind, "message": message.to_string() }))
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn open_backend(g: &Global) -> Result<Box<dyn Backend>, String> {
    let kind = g.backend.unwrap_or(if g.fixtures.is_empty() { BackendArg::Gpu } else { BackendArg::Replay });
    match kind {
        BackendArg::Replay => {
            let [path] = g.fixtures.as_slice() else {
                return Err("replay needs exactly one --fixture for this command".into());
            };
            ReplayBackend::load(path).map(|b| Box::new(b) as Box<dyn Backend>).map_err(|e| e.to_string())
        }
        BackendArg::Gpu => {
            let workdir = g.out.clone().unwrap_or_else(|| std::env::temp_dir().join("gpudissect-kernels"));
            let bridge = resolve_bridge_path(g.bridge.as_deref());
            BridgeBackend::spawn(&bridge, g.device.unwrap_or(0), workdir)
                .map(|b| Box::new(b) as Box<dyn Backend>)
                .map_err(|e| e.to_string())
        }
    }
}

fn cmd_gen(g: &Global, config: Option<&Path>, spec: &SpecArgs) -> ExitCode {
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("kernels"));
    let ctx = GenContext { seed: g.seed.unwrap_or(0), ..GenContext::default() };
    let specs = match (config, spec.spec()) {
        (Some(path), _) => {
            let cfg = match SweepConfig::load(path) {
                Ok(c) => c,
                Err(e) => return fail(e.summary()),
            };
            let points = match cfg.points() {
                Ok(p) => p,
                Err(e) => return fail(e.summary()),
            };
            let mut v = Vec::new();
            for f in cfg.families() {
                for p in &points {
                    match spec_for(f, p) {
                        Ok(s) => v.push(s),
                        Err(e) => return fail(e.summary()),
                    }
                }
            }
            v
        }
        (None, Ok(Some(s))) => vec![s],
        (None, Ok(None)) => return plain_error("Usage", "give --config or --workload"),
        (None, Err(e)) => return plain_error("InvalidSpec", e),
    };
    let mut written = Vec::new();
    for s in &specs {
        let k = match generate(s, &ctx) {
            Ok(k) => k,
            Err(e) => return plain_error("Kernel", format!("{}: {e}", s.canonical_key())),
        };
        match k.write_to(&out) {
            Ok(w) => written.push(json!({ "ptx": w.ptx_path, "metadata": w.metadata_path })),
            Err(e) => return plain_error("Io", e),
        }
    }
    print(&json!({ "kernels": written }));
    ExitCode::SUCCESS
}

fn cmd_run(g: &Global, config: &Path) -> ExitCode {
    let ov = SuiteOverrides {
        backend: g.backend.map(|b| match b {
            BackendArg::Gpu => BackendKind::Gpu,
            BackendArg::Replay => BackendKind::Replay,
        }),
        fixtures: g.fixtures.clone(),
        device: g.device,
        seed: g.seed,
        out: g.out.clone(),
    };
    match run_suite(config, &ov) {
        Ok(s) => {
            print(&json!({
                "out_dir": s.out_dir,
                "rows": s.results.rows.len(),
                "artifacts": s.artifacts,
            }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.summary()),
    }
}

fn cmd_analyze(g: &Global, results: &Path, cfg: AnalysisConfig) -> ExitCode {
    let r = match gpudissect::suite::SuiteResults::load(results) {
        Ok(r) => r,
        Err(e) => return fail(e.summary()),
    };
    let report = match analyze(&r, &cfg) {
        Ok(v) => v,
        Err(e) => return fail(e.summary()),
    };
    if let Some(dir) = &g.out {
        let path = dir.join("analysis.json");
        let text = serde_json::to_string_pretty(&report).unwrap_or_default() + "\n";
        if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, text)) {
            return fail(SuiteError::Io { path: path.display().to_string(), source: e }.summary());
        }
    }
    print(&report);
    ExitCode::SUCCESS
}

fn cmd_verify_sass(listing: Option<&Path>, ptx: Option<&Path>, arch: Option<&str>, spec: &SpecArgs) -> ExitCode {
    let parsed = match (listing, ptx) {
        (Some(path), _) => std::fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| parse_listing(&t).map_err(|e| e.to_string())),
        (None, Some(path)) => Disassembler::default().listing(path, arch.unwrap_or("sm_90")).map_err(|e| e.to_string()),
        (None, None) => Err("give --listing or --ptx".into()),
    };
    let listing = match parsed {
        Ok(l) => l,
        Err(e) => return plain_error("Sass", e),
    };
    let mut out = json!({
        "arch": listing.arch,
        "functions": listing.functions.iter().map(|f| json!({"name": f.name, "instructions": f.instructions.len()})).collect::<Vec<_>>(),
    });
    let spec = match spec.spec() {
        Ok(s) => s,
        Err(e) => return plain_error("InvalidSpec", e),
    };
    if let Some(s) = spec {
        match verify_chain_integrity(&listing, &s) {
            Ok(c) => out["chain"] = json!(c),
            Err(e) => return plain_error("ListingMismatch", e),
        }
        if let Some(d) = s.mma {
            match classify_mma(&listing, &d) {
                Ok(c) => out["mma"] = json!(c),
                Err(e) => return plain_error("Sass", e),
            }
        }
    }
    print(&out);
    ExitCode::SUCCESS
}

fn cmd_probe(g: &Global) -> ExitCode {
    let mut b = match open_backend(g) {
        Ok(b) => b,
        Err(e) => return plain_error("Backend", e),
    };
    let overhead = match b.clock_overhead() {
        Ok(v) => v,
        Err(e) => return plain_error("Backend", e),
    };
    let shared = match b.probe_shared_limit() {
        Ok(v) => v,
        Err(e) => return plain_error("Backend", e),
    };
    print(&json!({ "device": b.device(), "clock_overhead_cycles": overhead, "shared_limit_bytes": shared }));
    ExitCode::SUCCESS
}

fn cmd_bandwidth(g: &Global, direction: DirectionArg, bytes: u64) -> ExitCode {
    let mut b = match open_backend(g) {
        Ok(b) => b,
        Err(e) => return plain_error("Backend", e),
    };
    let dir = match direction {
        DirectionArg::Read => Direction::Read,
        DirectionArg::Write => Direction::Write,
    };
    match b.measure_bandwidth(dir, bytes) {
        Ok(bps) => {
            print(&json!({ "device": b.device().chip, "direction": format!("{direction:?}").to_lowercase(),
                           "bytes": bytes, "bytes_per_s": bps, "gb_per_s": bps / 1e9 }));
            ExitCode::SUCCESS
        }
        Err(e) => plain_error("Backend", e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    match &cli.command {
        Command::Gen { config, spec } => cmd_gen(g, config.as_deref(), spec),
        Command::Run { config } => cmd_run(g, config),
        Command::Analyze { results, kind, x, group_by, min_jump_ratio, window, tolerance } => {
            let cfg = match kind {
                AnalysisKind::Hierarchy => AnalysisConfig::Hierarchy { min_jump_ratio: *min_jump_ratio },
                AnalysisKind::Saturation => AnalysisConfig::Saturation {
                    x: x.clone(),
                    group_by: group_by.clone(),
                    window: *window,
                    tolerance: *tolerance,
                },
                AnalysisKind::Crossover => AnalysisConfig::Crossover { x: x.clone() },
            };
            cmd_analyze(g, results, cfg)
        }
        Command::Report { results, kind } => {
            let out = g.out.clone().unwrap_or_else(|| {
                if results.is_dir() {
                    results.clone()
                } else {
                    results.parent().map(Path::to_path_buf).unwrap_or_default()
                }
            });
            let kind = match kind {
                ReportArg::Table => ReportKind::Table,
                ReportArg::PlotData => ReportKind::PlotData,
            };
            match render_report(results, kind, &out) {
                Ok(files) => {
                    print(&json!({ "files": files }));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.summary()),
            }
        }
        Command::VerifySass { listing, ptx, arch, spec } => {
            cmd_verify_sass(listing.as_deref(), ptx.as_deref(), arch.as_deref(), spec)
        }
        Command::Probe => cmd_probe(g),
        Command::Bandwidth { direction, bytes } => cmd_bandwidth(g, *direction, *bytes),
    }
}
