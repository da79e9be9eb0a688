use std::path::Path;
use std::process::Command;

use llcsim::cli::{dispatch, emit_csv, format_csv, parse_config_text, parse_csv, render_svg, CSV_HEADER};
use llcsim::experiments::SweepRow;

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("llcsim").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn row(param: u64, baseline: u64, contended: u64, slowdown: f64) -> SweepRow {
    SweepRow {
        param,
        baseline_cycles: baseline,
        contended_cycles: contended,
        slowdown,
    }
}

#[test]
fn csv_formatting() {
    assert_eq!(format_csv(&[]), format!("{CSV_HEADER}\n"));
    assert_eq!(
        format_csv(&[row(32, 1000, 6000, 6.0)]),
        "param,baseline_cycles,contended_cycles,slowdown\n32,1000,6000,6.0000\n"
    );
    assert_eq!(format_csv(&[row(1, 3, 4, 4.0 / 3.0)]).lines().nth(1), Some("1,3,4,1.3333"));
}

#[test]
fn csv_round_trip() {
    let rows = vec![row(1, 574562, 2115585, 3.6821), row(256, 574562, 1236465, 2.152), row(0, 9, 9, 1.0)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    emit_csv(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(parse_csv(&text).unwrap(), rows);
    assert!(parse_csv("nope\n").is_err());
}

#[test]
fn config_text_parsing() {
    let map = parse_config_text("# geometry\nnum_lines = 8192\n\n  kernel=gemm # trailing\nnum_lines = 4096\n").unwrap();
    assert_eq!(map.get("num_lines").map(String::as_str), Some("4096"));
    assert_eq!(map.get("kernel").map(String::as_str), Some("gemm"));
    assert_eq!(map.len(), 2);
    let err = parse_config_text("kernel gemm\n").unwrap_err();
    assert_eq!(err.key(), "config");
    assert!(err.reason().contains("line 1"));
}

#[test]
fn svg_has_bars_and_unit_rule() {
    let svg = render_svg(&[row(1, 10, 20, 2.0), row(2, 10, 30, 3.0)], "t <x>", "stride");
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg.matches("<rect").count(), 3);
    assert!(svg.contains("stroke-dasharray"));
    assert!(svg.contains("t &lt;x&gt;"));
}

#[test]
fn run_empty_vadd_reports_zero_cycles() {
    let (code, out, _) = call(&["run", "--kernel", "vadd", "--n", "0"]);
    assert_eq!(code, 0);
    assert!(out.contains("total_cycles = 0\n"));
}

#[test]
fn memcpy_beyond_cache_is_rejected() {
    let (code, out, err) = call(&["sweep-memcpy", "--lines", "20000"]);
    assert_ne!(code, 0);
    assert!(out.is_empty());
    assert!(err.contains("cache_lines exceeds num_lines"), "{err}");
    assert!(err.contains("`lines`"));
}

#[test]
fn stride_sweep_writes_one_line_per_stride() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig3.csv");
    let args = [
        "sweep-stride",
        "--kernel",
        "vadd",
        "--strides",
        "1,2,4,8,16,32,64,128,256",
        "--n",
        "4096",
        "--runs",
        "4",
        "--out",
        path_str(&out),
    ];
    let (code, stdout, err) = call(&args);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.is_empty());
    let first = std::fs::read(&out).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().count(), 10);
    let rows = parse_csv(&text).unwrap();
    assert_eq!(rows.iter().map(|r| r.param).collect::<Vec<_>>(), vec![1, 2, 4, 8, 16, 32, 64, 128, 256]);
    // rerunning reproduces the file byte for byte
    assert_eq!(call(&args).0, 0);
    assert_eq!(std::fs::read(&out).unwrap(), first);
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn both_formats_write_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig4");
    let (code, _, err) = call(&[
        "sweep-memcpy",
        "--lines",
        "0,1,64",
        "--n",
        "2048",
        "--format",
        "both",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().nth(1).unwrap().ends_with(",1.0000"));
    assert!(std::fs::read_to_string(out.with_extension("svg")).unwrap().contains("<svg"));
}

#[test]
fn svg_needs_a_path() {
    let (code, _, err) = call(&["sweep-stride", "--format", "svg"]);
    assert_eq!(code, 2);
    assert!(err.contains("`out`"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.cfg");
    std::fs::write(&cfg, "# tiny run\nkernel = vadd\nn = 8\nruns = 2\n").unwrap();
    let (code, out, _) = call(&["run", "--config", path_str(&cfg)]);
    assert_eq!(code, 0);
    assert!(out.contains("total_cycles = 696\n"), "{out}");
    let (_, out, _) = call(&["run", "--config", path_str(&cfg), "--runs", "1"]);
    assert!(out.contains("total_cycles = 600\n"), "{out}");
    let (_, out, _) = call(&["run", "--config", path_str(&cfg), "--set", "dram_latency_cycles=100"]);
    assert!(out.contains("total_cycles = 396\n"), "{out}");
}

#[test]
fn validation_errors_name_the_key() {
    for (args, key) in [
        (vec!["run", "--associativity", "3"], "associativity"),
        (vec!["run", "--line-size-bytes", "24"], "line_size_bytes"),
        (vec!["run", "--dram-latency-cycles", "2"], "dram_latency_cycles"),
        (vec!["run", "--n", "ten"], "n"),
        (vec!["run", "--kernel", "fft"], "kernel"),
        (vec!["sweep-stride", "--strides", "0,32"], "strides"),
        (vec!["sweep-stride", "--kernel", "copy"], "kernel"),
        (vec!["run", "--threads", "2048"], "threads"),
        (vec!["run", "--set", "colour=blue"], "colour"),
        (vec!["infer-line", "--strides", "16,32"], "strides"),
        (vec!["calibrate", "--set", "target.vadd_peak=0.5"], "target.vadd_peak"),
        (vec!["run", "--format", "pdf"], "format"),
    ] {
        let (code, _, err) = call(&args);
        assert_eq!(code, 2, "{args:?}");
        assert!(err.contains(&format!("`{key}`")), "{args:?}: {err}");
    }
}

#[test]
fn run_with_interferer_and_trace_dump() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let (code, out, err) = call(&[
        "run",
        "--n",
        "8",
        "--runs",
        "1",
        "--interferer",
        "copy",
        "--cache-lines",
        "0",
        "--trace-out",
        path_str(&trace),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("slowdown = 1.0000\n"), "{out}");
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 4);
}

#[test]
fn calibrate_prints_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.csv");
    let (code, out, err) = call(&[
        "calibrate",
        "--set",
        "grid.llc_hit_cycles=32",
        "--set",
        "grid.dram_latency_cycles=200",
        "--set",
        "grid.dram_service_interval_cycles=4",
        "--set",
        "grid.llc_port_interval_cycles=1,2",
        "--set",
        "targets=vadd_copy_one",
        "--set",
        "vadd_n=2048",
        "--out",
        path_str(&grid),
    ]);
    assert_eq!(code, 0, "{err}");
    let map = parse_config_text(&out).unwrap();
    assert_eq!(map["llc_hit_cycles"], "32");
    assert_eq!(map["dram_latency_cycles"], "200");
    assert_eq!(std::fs::read_to_string(&grid).unwrap().lines().count(), 3);
}

#[test]
fn infer_line_reports_the_peak() {
    let (code, out, err) = call(&["infer-line", "--n", "8192", "--runs", "4"]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(out, "line_size_bytes = 32\n");
}

#[test]
fn binary_reads_config_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.cfg");
    std::fs::write(&cfg, "n = 8\nruns = 1\n").unwrap();
    let bin = env!("CARGO_BIN_EXE_llcsim");
    let out = Command::new(bin).arg("run").env("LLCSIM_CONFIG", &cfg).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("total_cycles = 600\n"));

    std::fs::write(&cfg, "num_lines = 1000\n").unwrap();
    let out = Command::new(bin).arg("run").env("LLCSIM_CONFIG", &cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`associativity`"));

    let out = Command::new(bin).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(bin).args(["sweep-memcpy", "--lines", "20000"]).env_remove("LLCSIM_CONFIG").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cache_lines exceeds num_lines"));
}
