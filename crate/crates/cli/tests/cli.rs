use clap::Parser;
use gemmforge_cli::{
    append_csv, main_with, run_pipeline, sweep, write_csv, Args, CliError, RunConfig, Verified, CSV_HEADER,
};

fn args(line: &str) -> Args {
    Args::try_parse_from(std::iter::once("gemmforge").chain(line.split_whitespace())).unwrap()
}

const SMALL: &str = "--m 48 --n 64 --k 32 --mc 24 --kc 16 --reps 1 --warmup 0";

#[test]
fn defaults_are_the_best_known_configurations() {
    let c = RunConfig::from_args(&args("")).unwrap();
    assert_eq!((c.pipeline.m, c.pipeline.n, c.pipeline.k), (2088, 2048, 2048));
    let p = c.pipeline.params;
    assert_eq!((p.mc, p.kc, p.mr, p.nr, p.ku), (180, 480, 3, 16, 4));
    let p = RunConfig::from_args(&args("--elem f32")).unwrap().pipeline.params;
    assert_eq!((p.mc, p.kc, p.mr, p.nr, p.ku), (348, 512, 3, 32, 4));
    assert_eq!((c.warmup, c.reps), (1, 5));
}

#[test]
fn copy_without_tile_is_a_usage_error() {
    assert!(matches!(RunConfig::from_args(&args("--copy")), Err(CliError::Usage(_))));
    assert_eq!(main_with(&args("--copy"), &mut Vec::new()), 2);
    assert!(Args::try_parse_from(["gemmforge", "--elem", "f16"]).is_err());
    assert!(Args::try_parse_from(["gemmforge", "--inner-perm", "kj"]).is_err());
}

#[test]
fn single_run_prints_timing_lines_and_passes() {
    let mut out = Vec::new();
    let code = main_with(&args(&format!("{SMALL} --vect --tile --copy --unroll --scalrep")), &mut out);
    let text = String::from_utf8(out).unwrap();
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("Compilation time: "), "{text}");
    assert!(text.lines().any(|l| l.ends_with(" GFLOPS")), "{text}");
    assert!(text.contains("Verification: pass"), "{text}");
}

#[test]
fn naive_run_produces_a_naive_row() {
    let r = run_pipeline(&RunConfig::from_args(&args(SMALL)).unwrap(), &mut Vec::new()).unwrap();
    assert_eq!(r.flags, "naive");
    assert_eq!(r.verified, Verified::Pass);
    assert!(r.gflops > 0.0);
}

#[test]
fn sweep_rows_carry_register_demand() {
    let base = RunConfig::from_args(&args(&format!("{SMALL} --tile --copy --unroll --scalrep"))).unwrap();
    let rows = sweep(&base, &[(4, 8), (6, 8), (3, 16)], &mut Vec::new());
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.reg_demand).collect::<Vec<_>>(), [Some(13), Some(19), Some(16)]);
    assert!(rows.iter().all(|r| r.passed()));
    assert!(rows[1].cache_notes.contains("spill"), "{}", rows[1].cache_notes);
}

#[test]
fn invalid_sweep_points_become_error_rows() {
    let base = RunConfig::from_args(&args(&format!("{SMALL} --tile"))).unwrap();
    let rows = sweep(&base, &[(5, 8)], &mut Vec::new());
    assert!(matches!(rows[0].verified, Verified::Error(_)));
    let rec = rows[0].record();
    assert_eq!(rec[11], "error");
    assert_eq!(rec.len(), CSV_HEADER.len());
}

#[test]
fn empty_sweep_writes_only_the_header() {
    let mut buf = Vec::new();
    write_csv(&mut buf, true, &[]).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
}

#[test]
fn csv_appends_with_a_single_header_and_stable_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    let cfg = RunConfig::from_args(&args(&format!("{SMALL} --tile --copy"))).unwrap();
    let a = run_pipeline(&cfg, &mut Vec::new()).unwrap();
    let b = run_pipeline(&cfg, &mut Vec::new()).unwrap();
    append_csv(&path, std::slice::from_ref(&a)).unwrap();
    append_csv(&path, std::slice::from_ref(&b)).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], CSV_HEADER.join(","));
    // Columns other than the timings are reproducible.
    let (ra, rb) = (a.record(), b.record());
    for i in (0..ra.len()).filter(|i| ![13, 14, 15].contains(i)) {
        assert_eq!(ra[i], rb[i], "column {}", CSV_HEADER[i]);
    }
}

#[test]
fn print_ir_emits_the_requested_stage() {
    let mut out = Vec::new();
    assert_eq!(main_with(&args("--m 8 --n 8 --k 8 --mc 4 --kc 4 --mr 2 --nr 4 --tile --print-ir tile"), &mut out), 0);
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("func @gemm("));
    assert_eq!(main_with(&args("--m 8 --n 8 --k 8 --print-ir copy"), &mut Vec::new()), 2);
}
