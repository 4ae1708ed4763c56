//! Generated kernel artifacts: PTX text, launch metadata and the on-disk layout.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::KernelSpec;
use super::KernelError;

/// PTX ISA version and SM target written into the module header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PtxTarget {
    pub isa_major: u32,
    pub isa_minor: u32,
    pub sm: String,
}

impl PtxTarget {
    pub fn new(isa_major: u32, isa_minor: u32, sm: impl Into<String>) -> Self {
        PtxTarget { isa_major, isa_minor, sm: sm.into() }
    }

    /// PTX 8.7; `sm_120a` when the kernel needs `.kind::f8f6f4`, `sm_90` otherwise.
    pub fn for_spec(spec: &KernelSpec) -> Self {
        let f8f6f4 = spec.mma.map(|m| m.uses_f8f6f4()).unwrap_or(false);
        PtxTarget::new(8, 7, if f8f6f4 { "sm_120a" } else { "sm_90" })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchConfig {
    pub grid: [u32; 3],
    pub block: [u32; 3],
    #[serde(default)]
    pub dynamic_shared_bytes: u32,
}

impl LaunchConfig {
    pub fn single_block(threads: u32) -> Self {
        LaunchConfig { grid: [1, 1, 1], block: [threads, 1, 1], dynamic_shared_bytes: 0 }
    }

    pub fn threads_per_block(&self) -> u32 {
        self.block.iter().product()
    }

    pub fn blocks(&self) -> u32 {
        self.grid.iter().product()
    }

    pub fn total_threads(&self) -> u64 {
        u64::from(self.threads_per_block()) * u64::from(self.blocks())
    }

    pub fn warps_per_block(&self) -> u32 {
        self.threads_per_block().div_ceil(32)
    }
}

/// How a device buffer is initialized before launch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferInit {
    Zeroed,
    /// Little-endian u64 words supplied by the host in a side file.
    HostFile {
        file: String,
    },
}

/// One kernel parameter backed by a device allocation, in parameter order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSpec {
    pub param: String,
    pub bytes: u64,
    pub init: BufferInit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleGranularity {
    /// One u64 elapsed-cycle count per warp, written by lane 0.
    PerWarp,
}

/// Where the kernel leaves its results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultLayout {
    pub cycles_param: String,
    pub granularity: CycleGranularity,
    pub cycle_slots: u32,
    pub checksum_param: String,
    /// 8-byte checksum slots, one per thread.
    pub checksum_slots: u64,
}

/// A generated, self-contained PTX module plus everything needed to launch it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtxKernel {
    pub name: String,
    pub source: String,
    pub entry_symbol: String,
    pub launch: LaunchConfig,
    pub buffers: Vec<BufferSpec>,
    pub result_layout: ResultLayout,
    pub target: PtxTarget,
    pub spec: KernelSpec,
    /// Host-initialized buffer contents, materialized only when written to disk.
    #[serde(skip)]
    pub host_data: Vec<HostBuffer>,
}

/// Contents of a host-initialized buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostWords {
    Words(Vec<u64>),
    /// Single-cycle index permutation from [`super::chase::cyclic_permutation`].
    CyclicPermutation {
        elements: u64,
        seed: u64,
    },
}

impl HostWords {
    pub fn materialize(&self) -> Vec<u64> {
        match self {
            HostWords::Words(w) => w.clone(),
            HostWords::CyclicPermutation { elements, seed } => super::chase::cyclic_permutation(*elements, *seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostBuffer {
    pub param: String,
    pub words: HostWords,
}

/// Sidecar describing how to launch one `.ptx` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaunchMetadata {
    pub name: String,
    pub ptx_file: String,
    pub entry_symbol: String,
    pub grid: [u32; 3],
    pub block: [u32; 3],
    pub dynamic_shared_bytes: u32,
    pub buffers: Vec<BufferSpec>,
    pub result_layout: ResultLayout,
    pub target: PtxTarget,
    pub spec: KernelSpec,
}

/// Paths of a kernel written to disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenKernel {
    pub ptx_path: PathBuf,
    pub metadata_path: PathBuf,
    /// Buffers with host files resolved to full paths, as handed to the bridge.
    pub buffers: Vec<BufferSpec>,
}

impl PtxKernel {
    pub fn metadata(&self) -> LaunchMetadata {
        LaunchMetadata {
            name: self.name.clone(),
            ptx_file: format!("{}.ptx", self.name),
            entry_symbol: self.entry_symbol.clone(),
            grid: self.launch.grid,
            block: self.launch.block,
            dynamic_shared_bytes: self.launch.dynamic_shared_bytes,
            buffers: self.buffers.clone(),
            result_layout: self.result_layout.clone(),
            target: self.target.clone(),
            spec: self.spec.clone(),
        }
    }

    /// Write `<name>.ptx`, `<name>.json` and any host buffer files into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<WrittenKernel, KernelError> {
        let io = |e: std::io::Error| KernelError::Io(e.to_string());
        fs::create_dir_all(dir).map_err(io)?;
        let ptx_path = dir.join(format!("{}.ptx", self.name));
        fs::write(&ptx_path, &self.source).map_err(io)?;

        for host in &self.host_data {
            let path = dir.join(format!("{}.{}.bin", self.name, host.param));
            let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io)?);
            for w in host.words.materialize() {
                f.write_all(&w.to_le_bytes()).map_err(io)?;
            }
            f.flush().map_err(io)?;
        }

        let meta = self.metadata();
        let metadata_path = dir.join(format!("{}.json", self.name));
        let text = serde_json::to_string_pretty(&meta).map_err(|e| KernelError::Io(e.to_string()))?;
        fs::write(&metadata_path, text + "\n").map_err(io)?;

        let buffers = self
            .buffers
            .iter()
            .map(|b| match &b.init {
                BufferInit::HostFile { file } => BufferSpec {
                    init: BufferInit::HostFile { file: dir.join(file).to_string_lossy().into_owned() },
                    ..b.clone()
                },
                BufferInit::Zeroed => b.clone(),
            })
            .collect();
        Ok(WrittenKernel { ptx_path, metadata_path, buffers })
    }
}

/// Line-oriented PTX text builder.
pub(crate) struct PtxWriter {
    out: String,
}

impl PtxWriter {
    pub(crate) fn new(name: &str, spec: &KernelSpec, target: &PtxTarget) -> Self {
        let mut out = String::new();
        let _ = writeln!(out, "//");
        let _ = writeln!(out, "// {name}");
        let _ = writeln!(out, "// generated by gpudissect for {}", spec.canonical_key());
        let _ = writeln!(out, "//");
        let _ = writeln!(out);
        let _ = writeln!(out, ".version {}.{}", target.isa_major, target.isa_minor);
        let _ = writeln!(out, ".target {}", target.sm);
        let _ = writeln!(out, ".address_size 64");
        let _ = writeln!(out);
        PtxWriter { out }
    }

    pub(crate) fn raw(&mut self, line: &str) {
        self.out.push_str(line);
        self.out.push('\n');
    }

    pub(crate) fn entry(&mut self, name: &str, params: &[&str]) {
        let _ = writeln!(self.out, ".visible .entry {name}(");
        for (i, p) in params.iter().enumerate() {
            let sep = if i + 1 < params.len() { "," } else { "" };
            let _ = writeln!(self.out, "\t.param .u64 {p}{sep}");
        }
        self.out.push_str(")\n{\n");
    }

    /// Instruction line; a trailing `;` is added.
    pub(crate) fn ins(&mut self, text: impl AsRef<str>) {
        let _ = writeln!(self.out, "\t{};", text.as_ref());
    }

    pub(crate) fn label(&mut self, name: &str) {
        let _ = writeln!(self.out, "{name}:");
    }

    pub(crate) fn comment(&mut self, text: &str) {
        let _ = writeln!(self.out, "\t// {text}");
    }

    pub(crate) fn finish(mut self) -> String {
        self.out.push_str("\tret;\n}\n");
        self.out
    }
}
