//! Stride and copy-size sweeps, timing calibration and line-size inference.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::cache::CacheGeometry;
use crate::engine::{self, IssueGranularity, SimConfig, SimResult, StreamBinding};
use crate::error::{ConfigError, Result, SimError};
use crate::timing::{Cycle, TimingParams};
use crate::trace::{KernelSpec, Requestor, WarpModel, COMPUTE_ELEMENT_BYTES};

/// One bar of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    /// Stride in bytes, or copied line count.
    pub param: u64,
    pub baseline_cycles: Cycle,
    pub contended_cycles: Cycle,
    pub slowdown: f64,
}

/// Everything fixed about the simulated machine for one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Platform {
    pub geometry: CacheGeometry,
    pub timing: TimingParams,
    pub granularity: IssueGranularity,
}

impl Platform {
    pub fn new(geometry: CacheGeometry, timing: TimingParams) -> Self {
        Self {
            geometry,
            timing,
            granularity: IssueGranularity::default(),
        }
    }

    fn config(&self) -> SimConfig {
        let mut c = SimConfig::new(self.geometry, self.timing);
        c.granularity = self.granularity;
        c
    }

    /// The victim alone on SM0 (a copy loop runs on the copy engine).
    pub fn run_isolated(&self, victim: KernelSpec) -> Result<SimResult> {
        let config = self.config().with_stream(StreamBinding::new(0, home(&victim), victim));
        engine::run(&config, 0)
    }

    /// The victim on SM0 while `interferer` runs on SM1 or the copy engine
    /// for the whole measurement.
    pub fn run_contended(&self, victim: KernelSpec, interferer: KernelSpec) -> Result<SimResult> {
        let requestor = if interferer.is_copy() {
            Requestor::CopyEngine
        } else {
            Requestor::Sm1
        };
        let config = self
            .config()
            .with_stream(StreamBinding::new(0, home(&victim), victim))
            .with_stream(StreamBinding::interferer(1, requestor, interferer));
        engine::run(&config, 0)
    }
}

fn home(kernel: &KernelSpec) -> Requestor {
    if kernel.is_copy() {
        Requestor::CopyEngine
    } else {
        Requestor::Sm0
    }
}

/// Workload sizes used by every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Workloads {
    pub vadd_n: u64,
    pub vadd_runs: u32,
    pub gemm_m: u64,
    pub gemm_n: u64,
    pub gemm_k: u64,
    pub gemm_runs: u32,
    /// Bytes per array of the interference kernel.
    pub interference_n: u64,
    pub interference_runs: u32,
    /// Block size of the interference kernel.
    pub threads: u32,
    pub copy_runs: u32,
}

impl Default for Workloads {
    fn default() -> Self {
        Self::fitting(&CacheGeometry::default())
    }
}

impl Workloads {
    /// Desk-scale sizes with the three vadd arrays just fitting in the LLC.
    pub fn fitting(geometry: &CacheGeometry) -> Self {
        let per_line = geometry.line_size_bytes() / COMPUTE_ELEMENT_BYTES;
        Self {
            vadd_n: geometry.num_lines() / 3 * per_line,
            vadd_runs: 32,
            gemm_m: 64,
            gemm_n: 64,
            gemm_k: 64,
            gemm_runs: 1,
            interference_n: 49152,
            interference_runs: 1,
            threads: 1024,
            copy_runs: 1,
        }
    }

    pub fn vadd(&self) -> KernelSpec {
        KernelSpec::Vadd {
            n: self.vadd_n,
            runs: self.vadd_runs,
        }
    }

    pub fn gemm(&self) -> KernelSpec {
        KernelSpec::Gemm {
            m: self.gemm_m,
            n: self.gemm_n,
            k: self.gemm_k,
            runs: self.gemm_runs,
        }
    }

    pub fn victim(&self, kind: Victim) -> KernelSpec {
        match kind {
            Victim::Vadd => self.vadd(),
            Victim::Gemm => self.gemm(),
        }
    }

    pub fn interference(&self, stride: u64) -> Result<KernelSpec> {
        Ok(KernelSpec::Interference {
            n: self.interference_n,
            stride,
            runs: self.interference_runs,
            warp: WarpModel::with_threads(self.threads)?,
        })
    }

    pub fn copy(&self, cache_lines: u64) -> KernelSpec {
        KernelSpec::CopyLoop {
            cache_lines,
            runs: self.copy_runs,
        }
    }
}

/// Kernels that can be measured under interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Victim {
    Vadd,
    Gemm,
}

impl Victim {
    pub fn name(self) -> &'static str {
        match self {
            Victim::Vadd => "vadd",
            Victim::Gemm => "gemm",
        }
    }
}

fn check_victim(victim: &KernelSpec) -> Result<()> {
    match victim {
        KernelSpec::Vadd { .. } | KernelSpec::Gemm { .. } => Ok(()),
        other => Err(ConfigError::invalid(
            "kernel",
            format!("{} cannot be measured; use vadd or gemm", other.name()),
        )
        .into()),
    }
}

/// Baseline once, then one contended run per interferer, in input order.
fn sweep(
    platform: &Platform,
    victim: KernelSpec,
    interferers: Vec<(u64, KernelSpec)>,
) -> Result<Vec<SweepRow>> {
    check_victim(&victim)?;
    for (_, k) in &interferers {
        k.validate(&platform.geometry)?;
    }
    let baseline = platform.run_isolated(victim)?;
    interferers
        .into_par_iter()
        .map(|(param, interferer)| {
            let contended = platform.run_contended(victim, interferer)?;
            Ok(SweepRow {
                param,
                baseline_cycles: baseline.total_cycles,
                contended_cycles: contended.total_cycles,
                slowdown: engine::slowdown(&contended, &baseline)?,
            })
        })
        .collect()
}

/// Slowdown of `victim` against the interference kernel at each stride.
pub fn sweep_stride(
    platform: &Platform,
    victim: KernelSpec,
    strides: &[u64],
    workloads: &Workloads,
) -> Result<Vec<SweepRow>> {
    if strides.is_empty() {
        return Err(ConfigError::invalid("strides", "must not be empty").into());
    }
    let interferers = strides
        .iter()
        .map(|&s| Ok((s, workloads.interference(s)?)))
        .collect::<Result<Vec<_>>>()?;
    sweep(platform, victim, interferers)
}

/// Slowdown of `victim` against a concurrent copy of each line count.
pub fn sweep_copy_lines(
    platform: &Platform,
    victim: KernelSpec,
    lines: &[u64],
    workloads: &Workloads,
) -> Result<Vec<SweepRow>> {
    if lines.is_empty() {
        return Err(ConfigError::invalid("lines", "must not be empty").into());
    }
    let interferers = lines.iter().map(|&l| (l, workloads.copy(l))).collect();
    sweep(platform, victim, interferers)
}

/// A measured condition whose slowdown is fitted during calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    /// vadd against interference at stride 32.
    VaddPeak,
    /// vadd against interference at stride 256.
    VaddTail,
    /// gemm against interference at stride 32.
    GemmPeak,
    /// vadd against a one-line copy.
    VaddCopyOne,
    /// vadd against a copy of the whole LLC.
    VaddCopyFull,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::VaddPeak,
        Scenario::VaddTail,
        Scenario::GemmPeak,
        Scenario::VaddCopyOne,
        Scenario::VaddCopyFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::VaddPeak => "vadd_peak",
            Scenario::VaddTail => "vadd_tail",
            Scenario::GemmPeak => "gemm_peak",
            Scenario::VaddCopyOne => "vadd_copy_one",
            Scenario::VaddCopyFull => "vadd_copy_full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    pub fn victim(self) -> Victim {
        match self {
            Scenario::GemmPeak => Victim::Gemm,
            _ => Victim::Vadd,
        }
    }

    pub fn interferer(self, workloads: &Workloads, geometry: &CacheGeometry) -> Result<KernelSpec> {
        match self {
            Scenario::VaddPeak | Scenario::GemmPeak => workloads.interference(32),
            Scenario::VaddTail => workloads.interference(256),
            Scenario::VaddCopyOne => Ok(workloads.copy(1)),
            Scenario::VaddCopyFull => Ok(workloads.copy(geometry.num_lines())),
        }
    }

    /// Contended over isolated cycles.
    pub fn slowdown(self, platform: &Platform, workloads: &Workloads) -> Result<f64> {
        let victim = workloads.victim(self.victim());
        let baseline = platform.run_isolated(victim)?;
        let contended = platform.run_contended(victim, self.interferer(workloads, &platform.geometry)?)?;
        engine::slowdown(&contended, &baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    pub scenario: Scenario,
    pub ratio: f64,
}

impl CalibrationTarget {
    pub fn new(scenario: Scenario, ratio: f64) -> Result<Self> {
        if !(ratio >= 1.0) || !ratio.is_finite() {
            return Err(ConfigError::invalid(
                scenario.name(),
                format!("target ratio must be a finite value >= 1, got {ratio}"),
            )
            .into());
        }
        Ok(Self { scenario, ratio })
    }

    /// Measured ratios from the reference hardware.
    pub fn reference_set() -> Vec<CalibrationTarget> {
        [
            (Scenario::VaddPeak, 6.0),
            (Scenario::VaddTail, 2.0),
            (Scenario::GemmPeak, 3.0),
            (Scenario::VaddCopyOne, 1.2),
            (Scenario::VaddCopyFull, 2.4),
        ]
        .into_iter()
        .map(|(scenario, ratio)| CalibrationTarget { scenario, ratio })
        .collect()
    }
}

/// Cartesian search space over the four timing parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TimingGrid {
    pub llc_hit_cycles: Vec<Cycle>,
    pub dram_latency_cycles: Vec<Cycle>,
    pub dram_service_interval_cycles: Vec<Cycle>,
    pub llc_port_interval_cycles: Vec<Cycle>,
}

impl Default for TimingGrid {
    fn default() -> Self {
        Self {
            llc_hit_cycles: vec![32, 96, 160, 224, 288],
            dram_latency_cycles: vec![200, 400, 600, 800],
            dram_service_interval_cycles: vec![2, 4, 8],
            llc_port_interval_cycles: vec![1, 2],
        }
    }
}

impl TimingGrid {
    /// Valid points in lexicographic order; combinations failing
    /// validation are skipped.
    pub fn points(&self) -> Vec<TimingParams> {
        let mut out = Vec::new();
        for &h in &self.llc_hit_cycles {
            for &l in &self.dram_latency_cycles {
                for &i in &self.dram_service_interval_cycles {
                    for &p in &self.llc_port_interval_cycles {
                        if let Ok(t) = TimingParams::new(h, l, i, p) {
                            out.push(t);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub timing: TimingParams,
    /// Slowdown of each target scenario, in target order.
    pub slowdowns: Vec<f64>,
    /// Sum of squared relative errors.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub best: GridPoint,
    /// Every evaluated point, in grid order.
    pub evaluated: Vec<GridPoint>,
}

/// Sum over targets of `((measured - target) / target)^2`.
pub fn residual(targets: &[CalibrationTarget], slowdowns: &[f64]) -> f64 {
    targets
        .iter()
        .zip(slowdowns)
        .map(|(t, s)| ((s - t.ratio) / t.ratio).powi(2))
        .sum()
}

/// Slowdowns of each target at one timing point, sharing baseline runs.
pub fn evaluate_targets(
    platform: &Platform,
    workloads: &Workloads,
    targets: &[CalibrationTarget],
) -> Result<Vec<f64>> {
    let mut baselines: HashMap<Victim, SimResult> = HashMap::new();
    targets
        .iter()
        .map(|t| {
            let victim = t.scenario.victim();
            let kernel = workloads.victim(victim);
            if !baselines.contains_key(&victim) {
                baselines.insert(victim, platform.run_isolated(kernel)?);
            }
            let interferer = t.scenario.interferer(workloads, &platform.geometry)?;
            let contended = platform.run_contended(kernel, interferer)?;
            engine::slowdown(&contended, &baselines[&victim])
        })
        .collect()
}

/// Exhaustive search for the timing point that best reproduces `targets`.
///
/// Ties on residual go to the smaller DRAM latency, then to the
/// lexicographically smaller `(hit, latency, interval, port)`.
pub fn calibrate(
    targets: &[CalibrationTarget],
    grid: &TimingGrid,
    geometry: CacheGeometry,
    granularity: IssueGranularity,
    workloads: &Workloads,
) -> Result<Calibration> {
    if targets.is_empty() {
        return Err(SimError::Experiment("calibration needs at least one target".into()));
    }
    let points = grid.points();
    if points.is_empty() {
        return Err(SimError::Experiment("calibration grid has no valid points".into()));
    }
    let evaluated = points
        .into_par_iter()
        .map(|timing| {
            let platform = Platform {
                geometry,
                timing,
                granularity,
            };
            let slowdowns = evaluate_targets(&platform, workloads, targets)?;
            Ok(GridPoint {
                timing,
                residual: residual(targets, &slowdowns),
                slowdowns,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = evaluated
        .iter()
        .min_by(|a, b| {
            a.residual
                .total_cmp(&b.residual)
                .then(a.timing.dram_latency_cycles.cmp(&b.timing.dram_latency_cycles))
                .then(a.timing.cmp(&b.timing))
        })
        .cloned()
        .expect("grid is non-empty");
    Ok(Calibration { best, evaluated })
}

/// The stride with the largest slowdown; the smaller stride wins ties.
pub fn argmax_stride(rows: &[SweepRow]) -> Option<u64> {
    rows.iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if r.slowdown < b.slowdown => Some(b),
            Some(b) if r.slowdown == b.slowdown && b.param <= r.param => Some(b),
            _ => Some(r),
        })
        .map(|r| r.param)
}

/// Guesses the LLC line size as the stride that hurts `victim` most.
pub fn infer_line_size(
    platform: &Platform,
    victim: KernelSpec,
    strides: &[u64],
    workloads: &Workloads,
) -> Result<u64> {
    if strides.len() < 3 {
        return Err(ConfigError::invalid(
            "strides",
            format!("line-size inference needs at least 3 strides, got {}", strides.len()),
        )
        .into());
    }
    let rows = sweep_stride(platform, victim, strides, workloads)?;
    Ok(argmax_stride(&rows).expect("rows are non-empty"))
}

/// Strides bracketing `line_size` by two octaves on each side.
pub fn strides_around(line_size: u64) -> Vec<u64> {
    [4, 2, 1]
        .iter()
        .map(|d| (line_size / d).max(1))
        .chain([line_size * 2, line_size * 4])
        .collect()
}
