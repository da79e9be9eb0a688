//! Warp-coalesced transaction traces for the four workloads: vector add,
//! naive matrix multiply, the strided interference kernel and the
//! host-to-device copy loop.
//!
//! Traces are grouped into *steps*. A step is everything one warp issues for
//! one memory instruction (for the copy engine, one line of the copy). The
//! engine issues a step's transactions together and the issuing warp resumes
//! once all of them complete.

use std::fmt;

use crate::cache::{AccessKind, CacheGeometry};
use crate::error::ConfigError;

pub const MAX_THREADS_PER_BLOCK: u32 = 1024;

/// Compute kernels use 4-byte (single precision) elements.
pub const COMPUTE_ELEMENT_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Requestor {
    Sm0,
    Sm1,
    CopyEngine,
}

impl Requestor {
    pub fn name(self) -> &'static str {
        match self {
            Requestor::Sm0 => "SM0",
            Requestor::Sm1 => "SM1",
            Requestor::CopyEngine => "CopyEngine",
        }
    }
}

impl fmt::Display for Requestor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Who issues a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Origin {
    pub requestor: Requestor,
    pub stream_id: u16,
}

impl Origin {
    pub fn new(requestor: Requestor, stream_id: u16) -> Self {
        Self {
            requestor,
            stream_id,
        }
    }
}

impl Default for Origin {
    fn default() -> Self {
        Self::new(Requestor::Sm0, 0)
    }
}

/// One line-granularity request to the LLC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub line_address: u64,
    pub kind: AccessKind,
    pub requestor: Requestor,
    pub stream_id: u16,
}

/// A device array placed in the flat physical address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Buffer {
    pub base_address: u64,
    pub element_size_bytes: u64,
    pub length_elements: u64,
}

impl Buffer {
    pub fn extent_bytes(&self) -> u64 {
        self.element_size_bytes * self.length_elements
    }

    pub fn end_address(&self) -> u64 {
        self.base_address + self.extent_bytes()
    }

    pub fn address_of(&self, index: u64) -> u64 {
        self.base_address + index * self.element_size_bytes
    }

    pub fn contains(&self, address: u64) -> bool {
        address >= self.base_address && address < self.end_address()
    }

    /// True if `line_address` overlaps any byte of the buffer.
    pub fn overlaps_line(&self, line_address: u64, line_size: u64) -> bool {
        line_address < self.end_address() && line_address + line_size > self.base_address
    }
}

/// Places buffers back to back, each aligned to the line size.
#[derive(Debug, Clone)]
pub struct BumpAllocator {
    next: u64,
    align: u64,
}

impl BumpAllocator {
    pub fn new(geometry: &CacheGeometry) -> Self {
        Self::starting_at(0, geometry)
    }

    pub fn starting_at(base: u64, geometry: &CacheGeometry) -> Self {
        let align = geometry.line_size_bytes();
        Self {
            next: base.div_ceil(align) * align,
            align,
        }
    }

    pub fn alloc(&mut self, element_size_bytes: u64, length_elements: u64) -> Buffer {
        let buf = Buffer {
            base_address: self.next,
            element_size_bytes,
            length_elements,
        };
        let end = buf.end_address();
        self.next = end.div_ceil(self.align) * self.align;
        buf
    }

    pub fn next_address(&self) -> u64 {
        self.next
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WarpModel {
    pub warp_size: u32,
    pub threads_per_block: u32,
}

impl Default for WarpModel {
    fn default() -> Self {
        Self {
            warp_size: 32,
            threads_per_block: MAX_THREADS_PER_BLOCK,
        }
    }
}

impl WarpModel {
    pub fn new(warp_size: u32, threads_per_block: u32) -> Result<Self, ConfigError> {
        if warp_size == 0 {
            return Err(ConfigError::invalid("warp_size", "must be positive"));
        }
        if threads_per_block == 0 || threads_per_block > MAX_THREADS_PER_BLOCK {
            return Err(ConfigError::invalid(
                "threads",
                format!("must be in 1..={MAX_THREADS_PER_BLOCK}, got {threads_per_block}"),
            ));
        }
        Ok(Self {
            warp_size,
            threads_per_block,
        })
    }

    pub fn with_threads(threads_per_block: u32) -> Result<Self, ConfigError> {
        Self::new(32, threads_per_block)
    }

    /// Thread ranges of each warp in the block.
    pub fn warps(&self) -> impl Iterator<Item = std::ops::Range<u64>> + '_ {
        let ws = self.warp_size as u64;
        let tpb = self.threads_per_block as u64;
        (0..tpb.div_ceil(ws)).map(move |w| w * ws..((w + 1) * ws).min(tpb))
    }
}

/// Parametric workload description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelSpec {
    /// `c[i] = a[i] + b[i]` over `n` elements, repeated `runs` times.
    Vadd { n: u64, runs: u32 },
    /// Naive row-major `C = A·B` with `A: m×k`, `B: k×n`, repeated `runs` times.
    Gemm { m: u64, n: u64, k: u64, runs: u32 },
    /// The strided read/write interference kernel over two `n`-byte arrays.
    Interference {
        n: u64,
        stride: u64,
        runs: u32,
        warp: WarpModel,
    },
    /// Host-to-device copies of `cache_lines` lines, repeated `runs` times.
    CopyLoop { cache_lines: u64, runs: u32 },
}

impl KernelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Vadd { .. } => "vadd",
            KernelSpec::Gemm { .. } => "gemm",
            KernelSpec::Interference { .. } => "interference",
            KernelSpec::CopyLoop { .. } => "copy",
        }
    }

    pub fn is_copy(&self) -> bool {
        matches!(self, KernelSpec::CopyLoop { .. })
    }

    pub fn validate(&self, geometry: &CacheGeometry) -> Result<(), ConfigError> {
        match *self {
            KernelSpec::Interference { stride, .. } if stride == 0 => {
                Err(ConfigError::invalid("stride", "must be at least 1"))
            }
            KernelSpec::CopyLoop { cache_lines, .. } if cache_lines > geometry.num_lines() => {
                Err(ConfigError::invalid(
                    "cache_lines",
                    format!(
                        "cache_lines exceeds num_lines ({cache_lines} > {})",
                        geometry.num_lines()
                    ),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// A transaction sequence partitioned into issue steps, grouped into
/// launches. A launch (one kernel run or one copy) starts only after every
/// step of the previous launch has completed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    transactions: Vec<Transaction>,
    step_ends: Vec<usize>,
    step_warps: Vec<Option<u32>>,
    launch_starts: Vec<usize>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.step_ends.len()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn step(&self, i: usize) -> &[Transaction] {
        &self.transactions[self.step_start(i)..self.step_ends[i]]
    }

    /// Index of the first transaction of step `i`.
    pub fn step_start(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.step_ends[i - 1]
        }
    }

    /// Step holding transaction `index`.
    pub fn step_containing(&self, index: usize) -> usize {
        self.step_ends.partition_point(|&end| end <= index)
    }

    pub fn steps(&self) -> impl Iterator<Item = &[Transaction]> + '_ {
        (0..self.num_steps()).map(move |i| self.step(i))
    }

    /// Step indices that begin a launch after the first.
    pub fn launch_starts(&self) -> &[usize] {
        &self.launch_starts
    }

    /// Warp that issued step `i`; `None` for steps with no ordering
    /// constraint (copy-engine transfers).
    pub fn step_warp(&self, i: usize) -> Option<u32> {
        self.step_warps[i]
    }

    /// Appends a step; empty steps are dropped. Steps of the same warp
    /// execute in order.
    pub fn push_step(&mut self, warp: Option<u32>, step: impl IntoIterator<Item = Transaction>) {
        let before = self.transactions.len();
        self.transactions.extend(step);
        if self.transactions.len() > before {
            self.step_ends.push(self.transactions.len());
            self.step_warps.push(warp);
        }
    }

    /// Appends `other` as a separate launch.
    pub fn append(&mut self, other: &Trace) {
        let offset = self.transactions.len();
        let step_offset = self.num_steps();
        if step_offset > 0 && !other.is_empty() {
            self.launch_starts.push(step_offset);
        }
        self.launch_starts
            .extend(other.launch_starts.iter().map(|s| s + step_offset));
        self.transactions.extend_from_slice(&other.transactions);
        self.step_ends.extend(other.step_ends.iter().map(|e| e + offset));
        self.step_warps.extend_from_slice(&other.step_warps);
    }

    /// The trace concatenated with itself `times` times.
    pub fn repeated(&self, times: u32) -> Trace {
        let mut out = Trace {
            transactions: Vec::with_capacity(self.len() * times as usize),
            step_ends: Vec::with_capacity(self.num_steps() * times as usize),
            step_warps: Vec::with_capacity(self.num_steps() * times as usize),
            launch_starts: Vec::with_capacity(times as usize),
        };
        for _ in 0..times {
            out.append(self);
        }
        out
    }
}

/// Merges one warp instruction's byte addresses into line requests, ascending.
pub fn coalesce_warp(
    accesses: &[u64],
    geometry: &CacheGeometry,
    kind: AccessKind,
    origin: Origin,
) -> Vec<Transaction> {
    let mut lines: Vec<u64> = accesses.iter().map(|&a| geometry.line_base(a)).collect();
    lines.sort_unstable();
    lines.dedup();
    lines
        .into_iter()
        .map(|line_address| Transaction {
            line_address,
            kind,
            requestor: origin.requestor,
            stream_id: origin.stream_id,
        })
        .collect()
}

/// Scratch space reused while generating one trace.
struct StepBuilder<'a> {
    geometry: &'a CacheGeometry,
    origin: Origin,
    addrs: Vec<u64>,
}

impl<'a> StepBuilder<'a> {
    fn new(geometry: &'a CacheGeometry, origin: Origin) -> Self {
        Self {
            geometry,
            origin,
            addrs: Vec::with_capacity(64),
        }
    }

    fn emit(&mut self, trace: &mut Trace, warp: usize, kind: AccessKind, addrs: impl IntoIterator<Item = u64>) {
        self.addrs.clear();
        self.addrs.extend(addrs);
        if !self.addrs.is_empty() {
            trace.push_step(Some(warp as u32), coalesce_warp(&self.addrs, self.geometry, kind, self.origin));
        }
    }
}

fn one_run_then_repeat(runs: u32, one_run: Trace) -> Trace {
    if runs == 1 {
        one_run
    } else {
        one_run.repeated(runs)
    }
}

/// The interference kernel, run literally:
///
/// ```text
/// while (runs--) {
///     idx = threadIdx.x * stride;
///     while (idx < n) { w[idx] = r[idx]; idx += blockDim.x; }
/// }
/// ```
///
/// Elements are single bytes, so `stride` is a byte distance.
pub fn gen_interference_trace(
    spec: &KernelSpec,
    r: &Buffer,
    w: &Buffer,
    geometry: &CacheGeometry,
    origin: Origin,
) -> Result<Trace, ConfigError> {
    let KernelSpec::Interference {
        n,
        stride,
        runs,
        warp,
    } = *spec
    else {
        return Err(ConfigError::invalid("kernel", "expected an interference kernel"));
    };
    spec.validate(geometry)?;
    let block = warp.threads_per_block as u64;
    let mut builder = StepBuilder::new(geometry, origin);
    let mut trace = Trace::new();
    let iterations = n.div_ceil(block);
    for iter in 0..iterations {
        for (wi, threads) in warp.warps().enumerate() {
            let active = threads
                .clone()
                .map(|t| t * stride + iter * block)
                .take_while(|&idx| idx < n);
            let idxs: Vec<u64> = active.collect();
            if idxs.is_empty() {
                // later warps start even further out
                break;
            }
            builder.emit(&mut trace, wi, AccessKind::Read, idxs.iter().map(|&i| r.address_of(i)));
            builder.emit(&mut trace, wi, AccessKind::Write, idxs.iter().map(|&i| w.address_of(i)));
        }
    }
    Ok(one_run_then_repeat(runs, trace))
}

/// Vector add, one 1024-thread block with a grid-stride loop.
pub fn gen_vadd_trace(
    spec: &KernelSpec,
    a: &Buffer,
    b: &Buffer,
    c: &Buffer,
    geometry: &CacheGeometry,
    origin: Origin,
) -> Result<Trace, ConfigError> {
    let KernelSpec::Vadd { n, runs } = *spec else {
        return Err(ConfigError::invalid("kernel", "expected a vadd kernel"));
    };
    let warp = WarpModel::default();
    let block = warp.threads_per_block as u64;
    let mut builder = StepBuilder::new(geometry, origin);
    let mut trace = Trace::new();
    for base in (0..n).step_by(block as usize) {
        for (wi, threads) in warp.warps().enumerate() {
            let elems = threads.map(|t| base + t).take_while(|&e| e < n);
            let elems: Vec<u64> = elems.collect();
            if elems.is_empty() {
                break;
            }
            builder.emit(&mut trace, wi, AccessKind::Read, elems.iter().map(|&e| a.address_of(e)));
            builder.emit(&mut trace, wi, AccessKind::Read, elems.iter().map(|&e| b.address_of(e)));
            builder.emit(&mut trace, wi, AccessKind::Write, elems.iter().map(|&e| c.address_of(e)));
        }
    }
    Ok(one_run_then_repeat(runs, trace))
}

/// Naive matrix multiply: one thread per element of `C`, inner product over
/// `k`, no tiling.
pub fn gen_gemm_trace(
    spec: &KernelSpec,
    a: &Buffer,
    b: &Buffer,
    c: &Buffer,
    geometry: &CacheGeometry,
    origin: Origin,
) -> Result<Trace, ConfigError> {
    let KernelSpec::Gemm { m, n, k, runs } = *spec else {
        return Err(ConfigError::invalid("kernel", "expected a gemm kernel"));
    };
    let warp = WarpModel::default();
    let block = warp.threads_per_block as u64;
    let total = m * n;
    let mut builder = StepBuilder::new(geometry, origin);
    let mut trace = Trace::new();
    for base in (0..total).step_by(block as usize) {
        for (wi, threads) in warp.warps().enumerate() {
            let elems: Vec<(u64, u64)> = threads
                .map(|t| base + t)
                .take_while(|&e| e < total)
                .map(|e| (e / n, e % n))
                .collect();
            if elems.is_empty() {
                break;
            }
            for l in 0..k {
                builder.emit(&mut trace, wi,
                    AccessKind::Read,
                    elems.iter().map(|&(i, _)| a.address_of(i * k + l)),
                );
                builder.emit(&mut trace, wi,
                    AccessKind::Read,
                    elems.iter().map(|&(_, j)| b.address_of(l * n + j)),
                );
            }
            builder.emit(&mut trace, wi,
                AccessKind::Write,
                elems.iter().map(|&(i, j)| c.address_of(i * n + j)),
            );
        }
    }
    Ok(one_run_then_repeat(runs, trace))
}

/// Host-to-device copy of `cache_lines` lines per run; every line is installed
/// into the LLC with a `Fill`, one line per step.
pub fn gen_copy_trace(
    spec: &KernelSpec,
    destination: &Buffer,
    geometry: &CacheGeometry,
    origin: Origin,
) -> Result<Trace, ConfigError> {
    let KernelSpec::CopyLoop { cache_lines, runs } = *spec else {
        return Err(ConfigError::invalid("kernel", "expected a copy loop"));
    };
    spec.validate(geometry)?;
    let line = geometry.line_size_bytes();
    let len = line * cache_lines;
    if destination.extent_bytes() < len {
        return Err(ConfigError::invalid(
            "cache_lines",
            format!(
                "copy of {len} bytes exceeds destination extent {}",
                destination.extent_bytes()
            ),
        ));
    }
    let base = geometry.line_base(destination.base_address);
    let mut trace = Trace::new();
    for i in 0..cache_lines {
        trace.push_step(
            None,
            [Transaction {
                line_address: base + i * line,
                kind: AccessKind::Fill,
                requestor: origin.requestor,
                stream_id: origin.stream_id,
            }],
        );
    }
    Ok(one_run_then_repeat(runs, trace))
}

/// Allocates the buffers a kernel needs and generates its trace.
pub fn build_trace(
    spec: &KernelSpec,
    alloc: &mut BumpAllocator,
    geometry: &CacheGeometry,
    origin: Origin,
) -> Result<Trace, ConfigError> {
    spec.validate(geometry)?;
    match *spec {
        KernelSpec::Vadd { n, .. } => {
            let a = alloc.alloc(COMPUTE_ELEMENT_BYTES, n);
            let b = alloc.alloc(COMPUTE_ELEMENT_BYTES, n);
            let c = alloc.alloc(COMPUTE_ELEMENT_BYTES, n);
            gen_vadd_trace(spec, &a, &b, &c, geometry, origin)
        }
        KernelSpec::Gemm { m, n, k, .. } => {
            let a = alloc.alloc(COMPUTE_ELEMENT_BYTES, m * k);
            let b = alloc.alloc(COMPUTE_ELEMENT_BYTES, k * n);
            let c = alloc.alloc(COMPUTE_ELEMENT_BYTES, m * n);
            gen_gemm_trace(spec, &a, &b, &c, geometry, origin)
        }
        KernelSpec::Interference { n, .. } => {
            let r = alloc.alloc(1, n);
            let w = alloc.alloc(1, n);
            gen_interference_trace(spec, &r, &w, geometry, origin)
        }
        KernelSpec::CopyLoop { cache_lines, .. } => {
            let dst = alloc.alloc(geometry.line_size_bytes(), cache_lines);
            gen_copy_trace(spec, &dst, geometry, origin)
        }
    }
}

/// Writes a trace as `line_address,kind,requestor,stream` rows.
pub fn write_trace_csv(trace: &Trace, mut out: impl std::io::Write) -> std::io::Result<()> {
    writeln!(out, "line_address,kind,requestor,stream")?;
    for t in trace.transactions() {
        let kind = match t.kind {
            AccessKind::Read => "Read",
            AccessKind::Write => "Write",
            AccessKind::Fill => "Fill",
        };
        writeln!(out, "{},{},{},{}", t.line_address, kind, t.requestor, t.stream_id)?;
    }
    Ok(())
}
