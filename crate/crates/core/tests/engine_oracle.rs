//! Tiny configurations whose cycle counts are worked out by hand from the
//! port/DRAM service rules.
//!
//! With default timing a hit completes 32 cycles after its port slot and a
//! miss 200 cycles after its DRAM slot; the port accepts one request per
//! cycle and DRAM one every 4 cycles.

use llcsim::cache::CacheGeometry;
use llcsim::engine::{run, run_isolated, IssueGranularity, SimConfig, SimResult, StreamBinding};
use llcsim::error::SimError;
use llcsim::timing::TimingParams;
use llcsim::trace::{KernelSpec, Requestor, WarpModel};

fn isolated(kernel: KernelSpec) -> SimResult {
    run_isolated(kernel, CacheGeometry::default(), TimingParams::default()).unwrap()
}

fn copy(cache_lines: u64, runs: u32) -> KernelSpec {
    KernelSpec::CopyLoop { cache_lines, runs }
}

#[test]
fn single_fill_is_one_dram_trip() {
    let r = isolated(copy(1, 1));
    assert_eq!(r.total_cycles, 200);
    assert_eq!(r.transactions_issued, 1);
}

#[test]
fn unordered_fills_pipeline_through_dram() {
    // issued together at 0: DRAM slots 0, 4, 8
    assert_eq!(isolated(copy(3, 1)).total_cycles, 208);
}

#[test]
fn single_slot_window_serializes_fills() {
    let config = SimConfig::new(CacheGeometry::default(), TimingParams::default())
        .with_stream(StreamBinding::new(0, Requestor::CopyEngine, copy(3, 1)).with_max_inflight(1));
    assert_eq!(run(&config, 0).unwrap().total_cycles, 600);
}

#[test]
fn second_copy_waits_for_the_first() {
    // launch barrier at 200; the refill still goes to DRAM
    let r = isolated(copy(1, 2));
    assert_eq!(r.total_cycles, 400);
    assert_eq!((r.cache_stats.hits, r.cache_stats.misses), (1, 1));
}

#[test]
fn vadd_one_line_per_array() {
    // read a, read b, write c: three dependent misses
    let r = isolated(KernelSpec::Vadd { n: 8, runs: 1 });
    assert_eq!(r.total_cycles, 600);
    assert_eq!(r.cache_stats.misses, 3);
}

#[test]
fn second_vadd_run_hits() {
    // 600 + three dependent hits of 32
    let r = isolated(KernelSpec::Vadd { n: 8, runs: 2 });
    assert_eq!(r.total_cycles, 696);
    assert_eq!((r.cache_stats.hits, r.cache_stats.misses), (3, 3));
}

#[test]
fn warp_step_waits_for_slowest_line() {
    // each step: two misses at DRAM slots t and t+4
    // a: 0 -> 204, b: 204 -> 408, c: 408 -> 612
    let r = isolated(KernelSpec::Vadd { n: 16, runs: 1 });
    assert_eq!(r.total_cycles, 612);
    assert_eq!(r.transactions_issued, 6);
}

#[test]
fn transaction_granularity_serializes_every_line() {
    let mut config = SimConfig::new(CacheGeometry::default(), TimingParams::default())
        .with_stream(StreamBinding::new(0, Requestor::Sm0, KernelSpec::Vadd { n: 16, runs: 1 }));
    config.granularity = IssueGranularity::Transaction;
    assert_eq!(run(&config, 0).unwrap().total_cycles, 1200);
}

#[test]
fn gemm_single_element() {
    assert_eq!(isolated(KernelSpec::Gemm { m: 1, n: 1, k: 1, runs: 1 }).total_cycles, 600);
}

#[test]
fn copy_competes_for_dram() {
    // DRAM interval 100. SM0 wins the tie at 0 and takes DRAM slot 0 (done
    // 200). The three fills get slots 100, 200, 300. Read b then queues
    // behind them at 400 (done 600), and write c at 600 (done 800).
    let timing = TimingParams::new(32, 200, 100, 1).unwrap();
    let vadd = KernelSpec::Vadd { n: 8, runs: 1 };
    let alone = run_isolated(vadd, CacheGeometry::default(), timing).unwrap();
    assert_eq!(alone.total_cycles, 600);
    let config = SimConfig::new(CacheGeometry::default(), timing)
        .with_stream(StreamBinding::new(0, Requestor::Sm0, vadd))
        .with_stream(StreamBinding::new(1, Requestor::CopyEngine, copy(3, 1)));
    let r = run(&config, 0).unwrap();
    assert_eq!(r.total_cycles, 800);
    assert_eq!(r.per_stream_cycles[&1], 500);
    assert_eq!(r.transactions_issued, 6);
}

#[test]
fn interferer_evicts_victim_line() {
    // Four-line direct-mapped cache: a, b, c sit in sets 0, 1, 2 and the
    // interferer's read byte (96) in set 3, its write byte (128) in set 0.
    //   0  a miss -> 200         0  r miss, DRAM slot 4 -> 204
    // 200  b miss -> 400       204  w miss, evicts a -> 404
    // 400  c miss -> 600
    // Run 2 starts at 600: a misses (800), b and c hit (832, 864).
    let geom = CacheGeometry::new(32, 4, 1).unwrap();
    let vadd = KernelSpec::Vadd { n: 8, runs: 2 };
    let interf = KernelSpec::Interference {
        n: 1,
        stride: 1,
        runs: 1,
        warp: WarpModel::with_threads(1).unwrap(),
    };
    let alone = run_isolated(vadd, geom, TimingParams::default()).unwrap();
    assert_eq!(alone.total_cycles, 696);
    let config = SimConfig::new(geom, TimingParams::default())
        .with_stream(StreamBinding::new(0, Requestor::Sm0, vadd))
        .with_stream(StreamBinding::new(1, Requestor::Sm1, interf));
    let r = run(&config, 0).unwrap();
    assert_eq!(r.total_cycles, 864);
    assert_eq!(r.per_stream_cycles[&1], 404);
    assert_eq!(r.per_stream_stats[&0].misses, 4);
    assert_eq!(r.cache_stats.evictions, 2);
    assert_eq!(r.transactions_issued, 8);
}

#[test]
fn empty_measured_stream_takes_no_time() {
    let r = isolated(KernelSpec::Vadd { n: 0, runs: 1 });
    assert_eq!(r.total_cycles, 0);
    assert_eq!(r.transactions_issued, 0);
}

#[test]
fn configuration_errors() {
    let g = CacheGeometry::default();
    let t = TimingParams::default();
    let vadd = KernelSpec::Vadd { n: 8, runs: 1 };
    assert_eq!(run(&SimConfig::new(g, t), 0).unwrap_err(), SimError::NoStreams);
    let one = SimConfig::new(g, t).with_stream(StreamBinding::new(0, Requestor::Sm0, vadd));
    assert_eq!(run(&one, 7).unwrap_err(), SimError::UnknownStream(7));
    let dup = one.clone().with_stream(StreamBinding::new(0, Requestor::Sm1, vadd));
    assert_eq!(run(&dup, 0).unwrap_err(), SimError::DuplicateStream(0));
    let same_sm = one.clone().with_stream(StreamBinding::new(1, Requestor::Sm0, vadd));
    assert!(matches!(run(&same_sm, 0), Err(SimError::RequestorInUse(_))));
    let mismatch = SimConfig::new(g, t).with_stream(StreamBinding::new(0, Requestor::CopyEngine, vadd));
    assert!(matches!(run(&mismatch, 0), Err(SimError::RequestorMismatch { .. })));
    let zero = SimConfig::new(g, t).with_stream(StreamBinding::new(0, Requestor::Sm0, vadd).with_max_inflight(0));
    match run(&zero, 0) {
        Err(SimError::Config(e)) => assert_eq!(e.key(), "max_inflight"),
        other => panic!("unexpected {other:?}"),
    }
}
