//! Replays concurrent streams through the shared cache and channel.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use crate::cache::{AccessKind, CacheGeometry, CacheState, CacheStats, HitMiss};
use crate::error::{ConfigError, Result, SimError};
use crate::timing::{ChannelState, Cycle, TimingParams};
use crate::trace::{build_trace, BumpAllocator, KernelSpec, Origin, Requestor, Trace};

/// What a stream waits for before issuing again.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum IssueGranularity {
    /// All transactions of one warp instruction are issued together; the
    /// stream resumes when the slowest completes.
    #[default]
    WarpStep,
    /// Each warp waits for every single transaction before issuing the next.
    Transaction,
}

/// Warp instructions an SM keeps in flight: one per resident warp of a
/// 1024-thread block.
pub const SM_INFLIGHT_STEPS: u32 = 32;
/// Outstanding line transfers of the copy engine.
pub const COPY_ENGINE_INFLIGHT: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamBinding {
    pub stream_id: u16,
    pub requestor: Requestor,
    pub kernel: KernelSpec,
    /// Replay the trace until the measured stream finishes.
    pub cyclic: bool,
    /// Issue units allowed in flight at once.
    pub max_inflight: u32,
}

impl StreamBinding {
    pub fn new(stream_id: u16, requestor: Requestor, kernel: KernelSpec) -> Self {
        let max_inflight = match requestor {
            Requestor::CopyEngine => COPY_ENGINE_INFLIGHT,
            Requestor::Sm0 | Requestor::Sm1 => SM_INFLIGHT_STEPS,
        };
        Self {
            stream_id,
            requestor,
            kernel,
            cyclic: false,
            max_inflight,
        }
    }

    /// An interfering stream that keeps running for the whole measurement.
    pub fn interferer(stream_id: u16, requestor: Requestor, kernel: KernelSpec) -> Self {
        Self {
            cyclic: true,
            ..Self::new(stream_id, requestor, kernel)
        }
    }

    pub fn with_max_inflight(mut self, max_inflight: u32) -> Self {
        self.max_inflight = max_inflight;
        self
    }

    fn origin(&self) -> Origin {
        Origin::new(self.requestor, self.stream_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SimConfig {
    pub geometry: CacheGeometry,
    pub timing: TimingParams,
    pub streams: Vec<StreamBinding>,
    pub granularity: IssueGranularity,
}

impl SimConfig {
    pub fn new(geometry: CacheGeometry, timing: TimingParams) -> Self {
        Self {
            geometry,
            timing,
            streams: Vec::new(),
            granularity: IssueGranularity::default(),
        }
    }

    pub fn with_stream(mut self, binding: StreamBinding) -> Self {
        self.streams.push(binding);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        if self.streams.is_empty() {
            return Err(SimError::NoStreams);
        }
        let mut ids = std::collections::BTreeSet::new();
        let mut requestors = std::collections::BTreeSet::new();
        for s in &self.streams {
            if !ids.insert(s.stream_id) {
                return Err(SimError::DuplicateStream(s.stream_id));
            }
            s.kernel.validate(&self.geometry)?;
            if s.max_inflight == 0 {
                return Err(ConfigError::invalid("max_inflight", "must be at least 1").into());
            }
            let copy_engine = s.requestor == Requestor::CopyEngine;
            if copy_engine != s.kernel.is_copy() {
                return Err(SimError::RequestorMismatch {
                    stream: s.stream_id,
                    requestor: s.requestor.name(),
                    kernel: s.kernel.name(),
                });
            }
            if !copy_engine && !requestors.insert(s.requestor) {
                return Err(SimError::RequestorInUse(s.requestor.name()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SimResult {
    /// Completion cycle of the measured stream.
    pub total_cycles: Cycle,
    /// Last completion cycle of anything each stream issued.
    pub per_stream_cycles: BTreeMap<u16, Cycle>,
    pub cache_stats: CacheStats,
    /// Hits and misses broken down by the stream that issued them.
    pub per_stream_stats: BTreeMap<u16, CacheStats>,
    pub transactions_issued: u64,
}

/// Issue units of one warp (or of the unordered copy queue) within a launch.
#[derive(Debug, Clone)]
struct Lane {
    units: Vec<usize>,
    /// Each unit waits for the previous one to complete.
    ordered: bool,
}

/// Splits a trace into launches, and each launch into per-warp lanes.
fn plan_lanes(trace: &Trace, granularity: IssueGranularity) -> Vec<Vec<Lane>> {
    let mut bounds = vec![0];
    bounds.extend_from_slice(trace.launch_starts());
    bounds.push(trace.num_steps());
    bounds
        .windows(2)
        .filter(|w| w[0] < w[1])
        .map(|w| {
            let mut lanes: Vec<Lane> = Vec::new();
            let mut by_warp: BTreeMap<Option<u32>, usize> = BTreeMap::new();
            for step in w[0]..w[1] {
                let warp = trace.step_warp(step);
                let lane = *by_warp.entry(warp).or_insert_with(|| {
                    lanes.push(Lane {
                        units: Vec::new(),
                        ordered: warp.is_some(),
                    });
                    lanes.len() - 1
                });
                match granularity {
                    IssueGranularity::WarpStep => lanes[lane].units.push(step),
                    IssueGranularity::Transaction => lanes[lane]
                        .units
                        .extend(trace.step_start(step)..trace.step_start(step) + trace.step(step).len()),
                }
            }
            lanes
        })
        .collect()
}

struct StreamState {
    id: u16,
    trace: Trace,
    launches: Vec<Vec<Lane>>,
    cyclic: bool,
    max_inflight: usize,
    launch: usize,
    lane_pos: Vec<usize>,
    lane_ready: Vec<Cycle>,
    left_in_launch: usize,
    /// Completion cycles of units still in flight.
    inflight: BinaryHeap<Reverse<Cycle>>,
    /// Lane and cycle of the next issue.
    next: Option<(usize, Cycle)>,
    last_completion: Cycle,
    finished: bool,
    stats: CacheStats,
}

impl StreamState {
    fn start_launch(&mut self, launch: usize, at: Cycle) {
        let lanes = &self.launches[launch];
        self.launch = launch;
        self.lane_pos = vec![0; lanes.len()];
        self.lane_ready = vec![at; lanes.len()];
        self.left_in_launch = lanes.iter().map(|l| l.units.len()).sum();
        self.inflight.clear();
    }

    /// Picks the lane able to issue first, honouring the in-flight cap.
    fn schedule_next(&mut self) {
        let lanes = &self.launches[self.launch];
        let mut best: Option<(usize, Cycle)> = None;
        for (i, lane) in lanes.iter().enumerate() {
            if self.lane_pos[i] < lane.units.len() && best.map_or(true, |(_, t)| self.lane_ready[i] < t) {
                best = Some((i, self.lane_ready[i]));
            }
        }
        let Some((lane, mut t)) = best else {
            self.next = None;
            return;
        };
        while let Some(&Reverse(done)) = self.inflight.peek() {
            if done <= t || self.inflight.len() >= self.max_inflight {
                t = t.max(done);
                self.inflight.pop();
            } else {
                break;
            }
        }
        self.next = Some((lane, t));
    }

    fn ready_at(&self) -> Option<Cycle> {
        self.next.map(|(_, t)| t)
    }
}

/// Runs every stream concurrently until `measured_stream` has drained its trace.
///
/// Within a stream, each warp issues its own units in trace order and waits
/// for one to complete before issuing the next; at most `max_inflight` units
/// of the stream are outstanding, and a launch starts only after the previous
/// one has drained. Across streams, the unit that can issue earliest goes
/// next, with round-robin among streams ready at the same cycle. Interfering
/// streams marked cyclic start over when their trace ends.
pub fn run(config: &SimConfig, measured_stream: u16) -> Result<SimResult> {
    config.validate()?;
    let measured = config
        .streams
        .iter()
        .position(|s| s.stream_id == measured_stream)
        .ok_or(SimError::UnknownStream(measured_stream))?;

    let granularity = config.granularity;
    let mut alloc = BumpAllocator::new(&config.geometry);
    let mut streams = Vec::with_capacity(config.streams.len());
    for (i, s) in config.streams.iter().enumerate() {
        let trace = build_trace(&s.kernel, &mut alloc, &config.geometry, s.origin())?;
        let launches = plan_lanes(&trace, granularity);
        let mut state = StreamState {
            id: s.stream_id,
            finished: launches.is_empty(),
            trace,
            launches,
            cyclic: s.cyclic && i != measured,
            max_inflight: s.max_inflight as usize,
            launch: 0,
            lane_pos: Vec::new(),
            lane_ready: Vec::new(),
            left_in_launch: 0,
            inflight: BinaryHeap::new(),
            next: None,
            last_completion: 0,
            stats: CacheStats::default(),
        };
        if !state.finished {
            state.start_launch(0, 0);
            state.schedule_next();
        }
        streams.push(state);
    }

    let mut cache = CacheState::new(config.geometry);
    let mut channel = ChannelState::new();
    let timing = &config.timing;
    let mut issued = 0u64;
    let n = streams.len();
    let mut last = n - 1;

    while !streams[measured].finished {
        let mut pick = None::<(usize, Cycle)>;
        for off in 1..=n {
            let i = (last + off) % n;
            if streams[i].finished {
                continue;
            }
            let t = streams[i].ready_at().expect("unfinished stream has work");
            if pick.map_or(true, |(_, best)| t < best) {
                pick = Some((i, t));
            }
        }
        let (i, issue) = pick.expect("measured stream is unfinished");
        last = i;

        let s = &mut streams[i];
        let (lane, _) = s.next.expect("picked stream has work");
        let unit = s.launches[s.launch][lane].units[s.lane_pos[lane]];
        let range = match granularity {
            IssueGranularity::WarpStep => s.trace.step(unit),
            IssueGranularity::Transaction => &s.trace.transactions()[unit..unit + 1],
        };
        let mut done = issue;
        for t in range {
            let outcome = cache.access(t.line_address, t.kind);
            s.stats.record(&outcome);
            // the copy engine always reads host memory
            let path = if t.kind == AccessKind::Fill {
                HitMiss::Miss
            } else {
                outcome.kind
            };
            done = done.max(channel.service(timing, path, issue));
            issued += 1;
        }
        s.last_completion = s.last_completion.max(done);
        s.inflight.push(Reverse(done));
        s.lane_pos[lane] += 1;
        s.lane_ready[lane] = if s.launches[s.launch][lane].ordered {
            done
        } else {
            issue
        };
        s.left_in_launch -= 1;
        if s.left_in_launch == 0 {
            let following = s.launch + 1;
            if following < s.launches.len() {
                s.start_launch(following, s.last_completion);
            } else if s.cyclic {
                s.start_launch(0, s.last_completion);
            } else {
                s.finished = true;
                continue;
            }
        }
        s.schedule_next();
    }

    Ok(SimResult {
        total_cycles: streams[measured].last_completion,
        per_stream_cycles: streams.iter().map(|s| (s.id, s.last_completion)).collect(),
        cache_stats: cache.stats(),
        per_stream_stats: streams.iter().map(|s| (s.id, s.stats)).collect(),
        transactions_issued: issued,
    })
}

/// A kernel alone on SM0 (or on the copy engine, for a copy loop).
pub fn run_isolated(kernel: KernelSpec, geometry: CacheGeometry, timing: TimingParams) -> Result<SimResult> {
    let requestor = if kernel.is_copy() {
        Requestor::CopyEngine
    } else {
        Requestor::Sm0
    };
    let config = SimConfig::new(geometry, timing).with_stream(StreamBinding::new(0, requestor, kernel));
    run(&config, 0)
}

/// `contended / baseline` execution time.
pub fn slowdown(contended: &SimResult, baseline: &SimResult) -> Result<f64> {
    if baseline.total_cycles == 0 {
        return Err(SimError::EmptyBaseline);
    }
    Ok(contended.total_cycles as f64 / baseline.total_cycles as f64)
}
