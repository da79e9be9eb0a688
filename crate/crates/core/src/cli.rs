//! Command-line front end: config resolution, dispatch and output files.
//!
//! Settings come from three layers, later ones winning: built-in defaults, a
//! flat `key = value` config file (`--config`, or `LLCSIM_CONFIG`), and
//! command-line flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::cache::CacheGeometry;
use crate::engine::{self, IssueGranularity};
use crate::error::{ConfigError, SimError};
use crate::experiments::{
    self, CalibrationTarget, Platform, Scenario, SweepRow, TimingGrid, Workloads,
};
use crate::timing::TimingParams;
use crate::trace::{self, BumpAllocator, KernelSpec, Origin, WarpModel};

pub const CONFIG_ENV: &str = "LLCSIM_CONFIG";
pub const CSV_HEADER: &str = "param,baseline_cycles,contended_cycles,slowdown";

#[derive(Debug, Parser)]
#[command(name = "llcsim", version, about = "Shared LLC interference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommandKind {
    Run,
    SweepStride,
    SweepMemcpy,
    Calibrate,
    InferLine,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one kernel, optionally against an interferer, and print a report.
    Run(Flags),
    /// Slowdown of a kernel against the interference kernel for each stride.
    SweepStride(Flags),
    /// Slowdown of a kernel against host-to-device copies of growing size.
    SweepMemcpy(Flags),
    /// Grid-search timing parameters that reproduce the target slowdowns.
    Calibrate(Flags),
    /// Report the stride with the largest slowdown as the line size.
    InferLine(Flags),
}

impl Command {
    fn split(self) -> (CommandKind, Flags) {
        match self {
            Command::Run(f) => (CommandKind::Run, f),
            Command::SweepStride(f) => (CommandKind::SweepStride, f),
            Command::SweepMemcpy(f) => (CommandKind::SweepMemcpy, f),
            Command::Calibrate(f) => (CommandKind::Calibrate, f),
            Command::InferLine(f) => (CommandKind::InferLine, f),
        }
    }
}

/// Every flag is a string here; values are parsed and validated together
/// with the config file so errors name the same keys.
#[derive(Debug, Clone, Default, clap::Args)]
struct Flags {
    /// Config file; defaults to $LLCSIM_CONFIG.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` setting; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// vadd | gemm | interference | copy
    #[arg(long)]
    kernel: Option<String>,
    /// For `run`: none | interference | copy
    #[arg(long)]
    interferer: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    stride: Option<String>,
    /// Comma-separated byte strides.
    #[arg(long)]
    strides: Option<String>,
    #[arg(long)]
    cache_lines: Option<String>,
    /// Comma-separated copy sizes in lines.
    #[arg(long)]
    lines: Option<String>,
    #[arg(long)]
    interference_n: Option<String>,
    #[arg(long)]
    line_size_bytes: Option<String>,
    #[arg(long)]
    num_lines: Option<String>,
    #[arg(long)]
    associativity: Option<String>,
    #[arg(long)]
    llc_hit_cycles: Option<String>,
    #[arg(long)]
    dram_latency_cycles: Option<String>,
    #[arg(long)]
    dram_service_interval_cycles: Option<String>,
    #[arg(long)]
    llc_port_interval_cycles: Option<String>,
    /// warp-step | transaction
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv | svg | both
    #[arg(long)]
    format: Option<String>,
    /// Dump the kernel's transaction trace as CSV (`run` only).
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

impl Flags {
    fn entries(&self) -> Result<Vec<(String, String)>, ConfigError> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.to_string_lossy().into_owned());
        let named = [
            ("kernel", self.kernel.clone()),
            ("interferer", self.interferer.clone()),
            ("n", self.n.clone()),
            ("m", self.m.clone()),
            ("k", self.k.clone()),
            ("runs", self.runs.clone()),
            ("threads", self.threads.clone()),
            ("stride", self.stride.clone()),
            ("strides", self.strides.clone()),
            ("cache_lines", self.cache_lines.clone()),
            ("lines", self.lines.clone()),
            ("interference_n", self.interference_n.clone()),
            ("line_size_bytes", self.line_size_bytes.clone()),
            ("num_lines", self.num_lines.clone()),
            ("associativity", self.associativity.clone()),
            ("llc_hit_cycles", self.llc_hit_cycles.clone()),
            ("dram_latency_cycles", self.dram_latency_cycles.clone()),
            ("dram_service_interval_cycles", self.dram_service_interval_cycles.clone()),
            ("llc_port_interval_cycles", self.llc_port_interval_cycles.clone()),
            ("granularity", self.granularity.clone()),
            ("out", path(&self.out)),
            ("format", self.format.clone()),
            ("trace_out", path(&self.trace_out)),
        ];
        let mut out: Vec<(String, String)> = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| ConfigError::invalid("set", format!("expected KEY=VALUE, got `{s}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        out.extend(named.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
        Ok(out)
    }
}

const PLAIN_KEYS: &[&str] = &[
    "kernel",
    "interferer",
    "n",
    "m",
    "k",
    "runs",
    "threads",
    "stride",
    "strides",
    "cache_lines",
    "lines",
    "targets",
    "line_size_bytes",
    "num_lines",
    "associativity",
    "llc_hit_cycles",
    "dram_latency_cycles",
    "dram_service_interval_cycles",
    "llc_port_interval_cycles",
    "granularity",
    "vadd_n",
    "vadd_runs",
    "gemm_m",
    "gemm_n",
    "gemm_k",
    "gemm_runs",
    "interference_n",
    "interference_runs",
    "copy_runs",
    "out",
    "format",
    "trace_out",
];

fn is_known_key(key: &str) -> bool {
    if PLAIN_KEYS.contains(&key) {
        return true;
    }
    if let Some(name) = key.strip_prefix("target.") {
        return Scenario::from_name(name).is_some();
    }
    if let Some(name) = key.strip_prefix("grid.") {
        return [
            "llc_hit_cycles",
            "dram_latency_cycles",
            "dram_service_interval_cycles",
            "llc_port_interval_cycles",
        ]
        .contains(&name);
    }
    false
}

/// Parses `key = value` lines; `#` starts a comment. Later lines win.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            ConfigError::invalid("config", format!("line {}: expected `key = value`", i + 1))
        })?;
        let key = k.trim();
        if key.is_empty() {
            return Err(ConfigError::invalid("config", format!("line {}: missing key", i + 1)));
        }
        map.insert(key.to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Svg,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelChoice {
    Vadd,
    Gemm,
    Interference,
    Copy,
}

/// Fully resolved and validated settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub platform: Platform,
    pub workloads: Workloads,
    pub kernel: KernelChoice,
    pub interferer: Option<KernelChoice>,
    pub stride: u64,
    pub cache_lines: u64,
    pub strides: Vec<u64>,
    pub lines: Vec<u64>,
    pub targets: Vec<CalibrationTarget>,
    pub grid: TimingGrid,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub trace_out: Option<PathBuf>,
}

struct Settings(BTreeMap<String, String>);

impl Settings {
    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| ConfigError::invalid(key, format!("`{v}`: {e}")))
            })
            .transpose()
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        let items: Vec<T> = v
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| ConfigError::invalid(key, format!("`{s}`: {e}"))))
            .collect::<Result<_, _>>()?;
        if items.is_empty() {
            return Err(ConfigError::invalid(key, "list must not be empty"));
        }
        Ok(Some(items))
    }
}

fn parse_kernel(key: &str, v: &str) -> Result<KernelChoice, ConfigError> {
    match v {
        "vadd" => Ok(KernelChoice::Vadd),
        "gemm" => Ok(KernelChoice::Gemm),
        "interference" => Ok(KernelChoice::Interference),
        "copy" => Ok(KernelChoice::Copy),
        _ => Err(ConfigError::invalid(
            key,
            format!("unknown kernel `{v}`; expected vadd, gemm, interference or copy"),
        )),
    }
}

impl RunConfig {
    /// Merges file settings with flag settings and validates the result.
    fn resolve(
        command: CommandKind,
        file: BTreeMap<String, String>,
        flags: Vec<(String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut map = file;
        map.extend(flags);
        for key in map.keys() {
            if !is_known_key(key) {
                return Err(ConfigError::invalid(key.as_str(), "unknown key"));
            }
        }
        let s = Settings(map);

        let base_geom = CacheGeometry::default();
        let geometry = CacheGeometry::new(
            s.parse_or("line_size_bytes", base_geom.line_size_bytes())?,
            s.parse_or("num_lines", base_geom.num_lines())?,
            s.parse_or("associativity", base_geom.associativity())?,
        )?;
        let base_t = TimingParams::default();
        let timing = TimingParams::new(
            s.parse_or("llc_hit_cycles", base_t.llc_hit_cycles)?,
            s.parse_or("dram_latency_cycles", base_t.dram_latency_cycles)?,
            s.parse_or("dram_service_interval_cycles", base_t.dram_service_interval_cycles)?,
            s.parse_or("llc_port_interval_cycles", base_t.llc_port_interval_cycles)?,
        )?;
        let granularity = match s.raw("granularity").unwrap_or("warp-step") {
            "warp-step" => IssueGranularity::WarpStep,
            "transaction" => IssueGranularity::Transaction,
            v => {
                return Err(ConfigError::invalid(
                    "granularity",
                    format!("expected warp-step or transaction, got `{v}`"),
                ))
            }
        };
        let platform = Platform {
            geometry,
            timing,
            granularity,
        };

        let kernel = parse_kernel("kernel", s.raw("kernel").unwrap_or("vadd"))?;
        if command != CommandKind::Run && !matches!(kernel, KernelChoice::Vadd | KernelChoice::Gemm) {
            return Err(ConfigError::invalid("kernel", "sweeps measure vadd or gemm"));
        }
        let interferer = match s.raw("interferer").unwrap_or("none") {
            "none" => None,
            v => match parse_kernel("interferer", v)? {
                k @ (KernelChoice::Interference | KernelChoice::Copy) => Some(k),
                _ => {
                    return Err(ConfigError::invalid(
                        "interferer",
                        "expected none, interference or copy",
                    ))
                }
            },
        };

        let mut w = Workloads::fitting(&geometry);
        w.vadd_n = s.parse_or("vadd_n", w.vadd_n)?;
        w.vadd_runs = s.parse_or("vadd_runs", w.vadd_runs)?;
        w.gemm_m = s.parse_or("gemm_m", w.gemm_m)?;
        w.gemm_n = s.parse_or("gemm_n", w.gemm_n)?;
        w.gemm_k = s.parse_or("gemm_k", w.gemm_k)?;
        w.gemm_runs = s.parse_or("gemm_runs", w.gemm_runs)?;
        w.interference_n = s.parse_or("interference_n", w.interference_n)?;
        w.interference_runs = s.parse_or("interference_runs", w.interference_runs)?;
        w.threads = s.parse_or("threads", w.threads)?;
        w.copy_runs = s.parse_or("copy_runs", w.copy_runs)?;
        // short keys apply to the selected kernel
        match kernel {
            KernelChoice::Vadd => {
                w.vadd_n = s.parse_or("n", w.vadd_n)?;
                w.vadd_runs = s.parse_or("runs", w.vadd_runs)?;
            }
            KernelChoice::Gemm => {
                w.gemm_m = s.parse_or("m", w.gemm_m)?;
                w.gemm_n = s.parse_or("n", w.gemm_n)?;
                w.gemm_k = s.parse_or("k", w.gemm_k)?;
                w.gemm_runs = s.parse_or("runs", w.gemm_runs)?;
            }
            KernelChoice::Interference => {
                w.interference_n = s.parse_or("n", w.interference_n)?;
                w.interference_runs = s.parse_or("runs", w.interference_runs)?;
            }
            KernelChoice::Copy => {
                w.copy_runs = s.parse_or("runs", w.copy_runs)?;
            }
        }
        for (key, v) in [
            ("runs", w.vadd_runs),
            ("runs", w.gemm_runs),
            ("runs", w.interference_runs),
            ("runs", w.copy_runs),
        ] {
            if v == 0 {
                return Err(ConfigError::invalid(key, "must be at least 1"));
            }
        }
        WarpModel::with_threads(w.threads)?;

        let stride = s.parse_or("stride", 32u64)?;
        if stride == 0 {
            return Err(ConfigError::invalid("stride", "must be at least 1"));
        }
        let cache_lines = s.parse_or("cache_lines", 1u64)?;
        check_lines("cache_lines", &[cache_lines], &geometry)?;

        let strides = match s.list::<u64>("strides")? {
            Some(v) => v,
            None if command == CommandKind::InferLine => {
                experiments::strides_around(geometry.line_size_bytes())
            }
            None => vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        };
        if strides.contains(&0) {
            return Err(ConfigError::invalid("strides", "every stride must be at least 1"));
        }
        if command == CommandKind::InferLine && strides.len() < 3 {
            return Err(ConfigError::invalid("strides", "line-size inference needs at least 3 strides"));
        }
        let lines = s
            .list::<u64>("lines")?
            .unwrap_or_else(|| vec![1, 16, 256, 4096, geometry.num_lines()]);
        check_lines("lines", &lines, &geometry)?;

        let scenarios: Vec<Scenario> = match s.list::<String>("targets")? {
            Some(names) => names
                .iter()
                .map(|n| {
                    Scenario::from_name(n)
                        .ok_or_else(|| ConfigError::invalid("targets", format!("unknown scenario `{n}`")))
                })
                .collect::<Result<_, _>>()?,
            None => Scenario::ALL.to_vec(),
        };
        let reference = CalibrationTarget::reference_set();
        let mut targets = Vec::with_capacity(scenarios.len());
        for sc in scenarios {
            let key = format!("target.{}", sc.name());
            let default = reference.iter().find(|t| t.scenario == sc).map(|t| t.ratio);
            let ratio = s.parse::<f64>(&key)?.or(default).expect("every scenario has a reference");
            if !(ratio.is_finite() && ratio >= 1.0) {
                return Err(ConfigError::invalid(key, format!("target ratio must be >= 1, got {ratio}")));
            }
            targets.push(CalibrationTarget { scenario: sc, ratio });
        }

        let d = TimingGrid::default();
        let grid = TimingGrid {
            llc_hit_cycles: s.list("grid.llc_hit_cycles")?.unwrap_or(d.llc_hit_cycles),
            dram_latency_cycles: s.list("grid.dram_latency_cycles")?.unwrap_or(d.dram_latency_cycles),
            dram_service_interval_cycles: s
                .list("grid.dram_service_interval_cycles")?
                .unwrap_or(d.dram_service_interval_cycles),
            llc_port_interval_cycles: s
                .list("grid.llc_port_interval_cycles")?
                .unwrap_or(d.llc_port_interval_cycles),
        };
        if command == CommandKind::Calibrate && grid.points().is_empty() {
            return Err(ConfigError::invalid("grid", "no valid timing point in the grid"));
        }

        let format = match s.raw("format").unwrap_or("csv") {
            "csv" => OutputFormat::Csv,
            "svg" => OutputFormat::Svg,
            "both" => OutputFormat::Both,
            v => {
                return Err(ConfigError::invalid(
                    "format",
                    format!("expected csv, svg or both, got `{v}`"),
                ))
            }
        };
        let out = s.raw("out").map(PathBuf::from);
        if format != OutputFormat::Csv && out.is_none() {
            return Err(ConfigError::invalid("out", "svg output needs an output path"));
        }
        if format != OutputFormat::Csv && command == CommandKind::Calibrate {
            return Err(ConfigError::invalid("format", "calibrate writes csv only"));
        }

        Ok(Self {
            platform,
            workloads: w,
            kernel,
            interferer,
            stride,
            cache_lines,
            strides,
            lines,
            targets,
            grid,
            out,
            format,
            trace_out: s.raw("trace_out").map(PathBuf::from),
        })
    }

    pub fn kernel_spec(&self, choice: KernelChoice) -> Result<KernelSpec, ConfigError> {
        let w = &self.workloads;
        Ok(match choice {
            KernelChoice::Vadd => w.vadd(),
            KernelChoice::Gemm => w.gemm(),
            KernelChoice::Interference => KernelSpec::Interference {
                n: w.interference_n,
                stride: self.stride,
                runs: w.interference_runs,
                warp: WarpModel::with_threads(w.threads)?,
            },
            KernelChoice::Copy => w.copy(self.cache_lines),
        })
    }
}

fn check_lines(key: &str, lines: &[u64], geometry: &CacheGeometry) -> Result<(), ConfigError> {
    match lines.iter().find(|&&l| l > geometry.num_lines()) {
        Some(l) => Err(ConfigError::invalid(
            key,
            format!("cache_lines exceeds num_lines ({l} > {})", geometry.num_lines()),
        )),
        None => Ok(()),
    }
}

/// Formats rows as the sweep CSV.
pub fn format_csv(rows: &[SweepRow]) -> String {
    let mut s = String::with_capacity(32 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.4}",
            r.param, r.baseline_cycles, r.contended_cycles, r.slowdown
        );
    }
    s
}

/// Inverse of [`format_csv`], at the printed precision.
pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(CSV_HEADER) => {}
        other => return Err(format!("bad header: {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(format!("row {}: expected 4 fields", i + 1));
            }
            let bad = |e: &dyn std::fmt::Display| format!("row {}: {e}", i + 1);
            Ok(SweepRow {
                param: f[0].parse().map_err(|e| bad(&e))?,
                baseline_cycles: f[1].parse().map_err(|e| bad(&e))?,
                contended_cycles: f[2].parse().map_err(|e| bad(&e))?,
                slowdown: f[3].parse().map_err(|e| bad(&e))?,
            })
        })
        .collect()
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], destination: &Path) -> std::io::Result<()> {
    write_atomic(destination, format_csv(rows).as_bytes())
}

/// Bar chart of slowdown per parameter with a dashed rule at 1.0.
pub fn render_svg(rows: &[SweepRow], title: &str, x_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const LEFT: f64 = 56.0;
    const RIGHT: f64 = 16.0;
    const TOP: f64 = 36.0;
    const BOTTOM: f64 = 48.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let peak = rows.iter().map(|r| r.slowdown).fold(1.0f64, f64::max);
    let y_max = (peak * 1.1).ceil().max(1.5);
    let y = |v: f64| TOP + plot_h * (1.0 - v / y_max);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w
    );
    let ticks = y_max.ceil() as u64;
    for t in 0..=ticks {
        let v = t as f64;
        if v > y_max {
            break;
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{t}x</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    if !rows.is_empty() {
        let slot = plot_w / rows.len() as f64;
        let bar = slot * 0.7;
        for (i, r) in rows.iter().enumerate() {
            let x = LEFT + slot * i as f64 + (slot - bar) / 2.0;
            let top = y(r.slowdown);
            let _ = writeln!(
                s,
                r##"<rect x="{x:.1}" y="{top:.1}" width="{bar:.1}" height="{:.1}" fill="#3b6fb6"><title>{}: {:.4}</title></rect>"##,
                TOP + plot_h - top,
                r.param,
                r.slowdown
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                x + bar / 2.0,
                TOP + plot_h + 14.0,
                r.param
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<line x1="{LEFT}" y1="{0:.1}" x2="{1}" y2="{0:.1}" stroke="#c0392b" stroke-width="1.5" stroke-dasharray="6 3"/>"##,
        y(1.0),
        LEFT + plot_w
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        H - 10.0,
        escape(x_label)
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug)]
enum CliError {
    Sim(SimError),
    Io(PathBuf, std::io::Error),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Sim(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Sim(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Sim(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn load_config(path: Option<PathBuf>) -> Result<BTreeMap<String, String>, CliError> {
    let path = path.or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let Some(path) = path else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Io(path.clone(), e))?;
    Ok(parse_config_text(&text)?)
}

fn emit_rows(cfg: &RunConfig, rows: &[SweepRow], title: &str, x_label: &str) -> Result<String, CliError> {
    let csv = format_csv(rows);
    let Some(out) = &cfg.out else {
        return Ok(csv);
    };
    let svg = || render_svg(rows, title, x_label);
    match cfg.format {
        OutputFormat::Csv => write_file(out, csv.as_bytes())?,
        OutputFormat::Svg => write_file(out, svg().as_bytes())?,
        OutputFormat::Both => {
            write_file(&out.with_extension("csv"), csv.as_bytes())?;
            write_file(&out.with_extension("svg"), svg().as_bytes())?;
        }
    }
    Ok(String::new())
}

fn execute(command: CommandKind, cfg: &RunConfig) -> Result<String, CliError> {
    let platform = &cfg.platform;
    let victim = cfg.kernel_spec(cfg.kernel)?;
    match command {
        CommandKind::Run => {
            if let Some(path) = &cfg.trace_out {
                let mut alloc = BumpAllocator::new(&platform.geometry);
                let t = trace::build_trace(&victim, &mut alloc, &platform.geometry, Origin::default())?;
                let mut buf = Vec::new();
                trace::write_trace_csv(&t, &mut buf).map_err(|e| CliError::Io(path.clone(), e))?;
                write_file(path, &buf)?;
            }
            let base = platform.run_isolated(victim)?;
            let mut report = String::new();
            let _ = writeln!(report, "kernel = {}", victim.name());
            let _ = writeln!(report, "total_cycles = {}", base.total_cycles);
            let _ = writeln!(report, "transactions = {}", base.transactions_issued);
            let st = base.cache_stats;
            let _ = writeln!(report, "hits = {}", st.hits);
            let _ = writeln!(report, "misses = {}", st.misses);
            let _ = writeln!(report, "evictions = {}", st.evictions);
            if let Some(choice) = cfg.interferer {
                let interferer = cfg.kernel_spec(choice)?;
                let contended = platform.run_contended(victim, interferer)?;
                let _ = writeln!(report, "interferer = {}", interferer.name());
                let _ = writeln!(report, "contended_cycles = {}", contended.total_cycles);
                match engine::slowdown(&contended, &base) {
                    Ok(s) => {
                        let _ = writeln!(report, "slowdown = {s:.4}");
                    }
                    Err(_) => report.push_str("slowdown = undefined\n"),
                }
            }
            if let Some(out) = &cfg.out {
                write_file(out, report.as_bytes())?;
            }
            Ok(report)
        }
        CommandKind::SweepStride => {
            let rows = experiments::sweep_stride(platform, victim, &cfg.strides, &cfg.workloads)?;
            emit_rows(cfg, &rows, &format!("{} slowdown vs interference stride", victim.name()), "stride (bytes)")
        }
        CommandKind::SweepMemcpy => {
            let rows = experiments::sweep_copy_lines(platform, victim, &cfg.lines, &cfg.workloads)?;
            emit_rows(cfg, &rows, &format!("{} slowdown vs copied lines", victim.name()), "cache lines copied")
        }
        CommandKind::InferLine => {
            let rows = experiments::sweep_stride(platform, victim, &cfg.strides, &cfg.workloads)?;
            let line = experiments::argmax_stride(&rows).expect("strides are non-empty");
            if cfg.out.is_some() {
                emit_rows(cfg, &rows, "slowdown vs stride", "stride (bytes)")?;
            }
            Ok(format!("line_size_bytes = {line}\n"))
        }
        CommandKind::Calibrate => {
            let cal = experiments::calibrate(
                &cfg.targets,
                &cfg.grid,
                platform.geometry,
                platform.granularity,
                &cfg.workloads,
            )?;
            if let Some(out) = &cfg.out {
                let mut csv = String::from(
                    "llc_hit_cycles,dram_latency_cycles,dram_service_interval_cycles,llc_port_interval_cycles,residual\n",
                );
                for p in &cal.evaluated {
                    let t = p.timing;
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{:.6}",
                        t.llc_hit_cycles,
                        t.dram_latency_cycles,
                        t.dram_service_interval_cycles,
                        t.llc_port_interval_cycles,
                        p.residual
                    );
                }
                write_file(out, csv.as_bytes())?;
            }
            let t = cal.best.timing;
            let mut s = String::new();
            let _ = writeln!(s, "llc_hit_cycles = {}", t.llc_hit_cycles);
            let _ = writeln!(s, "dram_latency_cycles = {}", t.dram_latency_cycles);
            let _ = writeln!(s, "dram_service_interval_cycles = {}", t.dram_service_interval_cycles);
            let _ = writeln!(s, "llc_port_interval_cycles = {}", t.llc_port_interval_cycles);
            let _ = writeln!(s, "# residual {:.6}", cal.best.residual);
            for (target, got) in cfg.targets.iter().zip(&cal.best.slowdowns) {
                let _ = writeln!(s, "# {} {:.4} (target {})", target.scenario.name(), got, target.ratio);
            }
            Ok(s)
        }
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit status.
/// Standard output gets the report or CSV; diagnostics go to `stderr`.
pub fn dispatch<I, T>(argv: I, stdout: &mut dyn std::io::Write, stderr: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = stdout.write_all(rendered.as_bytes());
            } else {
                let _ = stderr.write_all(rendered.as_bytes());
            }
            return code;
        }
    };
    let (command, flags) = cli.command.split();
    let result = (|| {
        let file = load_config(flags.config.clone())?;
        let cfg = RunConfig::resolve(command, file, flags.entries()?)?;
        execute(command, &cfg)
    })();
    match result {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "llcsim: error: {e}");
            match e {
                CliError::Sim(SimError::Config(_)) => 2,
                _ => 1,
            }
        }
    }
}
