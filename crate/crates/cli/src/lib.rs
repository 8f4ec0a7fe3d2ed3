//! Driver for lowering, verifying and benchmarking GEMM pipelines, with
//! CSV reports.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `m,n,k,elem` | problem size and element type |
//! | `mc,kc,mr,nr,ku,perm` | tile parameters |
//! | `flags` | enabled stages joined by `+`, or `naive` |
//! | `verified` | `pass`, `fail`, or `error` when the configuration could not run |
//! | `max_rel_err` | max abs difference over max abs reference element |
//! | `compile_s` | seconds to lower, compile and load |
//! | `best_s` | fastest of the timed runs |
//! | `gflops` | `2mnk / best_s / 1e9` |
//! | `reg_demand` | vector registers needed by the register tile |
//! | `cache_notes` | tile diagnostics, or the error message for failed rows |

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;

use clap::Parser;
use gemmforge::exec::{benchmark, compare, emit_native, KernelRegistry, NativeOptions, TensorBuffer};
use gemmforge::ir::{print_function, InnerPerm, MemRefType, ScalarKind, TileParams};
use gemmforge::model::{register_demand, validate_tile_params, MachineModel};
use gemmforge::pipeline::{lower, PipelineConfig, Stage, StageFlags};
use gemmforge::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CSV_HEADER: [&str; 18] = [
    "m",
    "n",
    "k",
    "elem",
    "mc",
    "kc",
    "mr",
    "nr",
    "ku",
    "perm",
    "flags",
    "verified",
    "max_rel_err",
    "compile_s",
    "best_s",
    "gflops",
    "reg_demand",
    "cache_notes",
];

#[derive(Parser, Debug, Clone)]
#[command(name = "gemmforge", version, about = "Lower, verify and benchmark a GEMM through a fixed pass pipeline")]
pub struct Args {
    #[arg(long, default_value_t = 2088)]
    pub m: i64,
    #[arg(long, default_value_t = 2048)]
    pub n: i64,
    #[arg(long, default_value_t = 2048)]
    pub k: i64,
    #[arg(long, default_value = "f64")]
    pub elem: ScalarKind,
    /// Defaults to 180 (f64) or 348 (f32).
    #[arg(long)]
    pub mc: Option<i64>,
    /// Defaults to 480 (f64) or 512 (f32).
    #[arg(long)]
    pub kc: Option<i64>,
    #[arg(long)]
    pub mr: Option<i64>,
    /// Defaults to 16 (f64) or 32 (f32).
    #[arg(long)]
    pub nr: Option<i64>,
    #[arg(long)]
    pub ku: Option<i64>,
    #[arg(long, default_value = "ji")]
    pub inner_perm: InnerPerm,
    #[arg(long)]
    pub vect: bool,
    #[arg(long)]
    pub tile: bool,
    #[arg(long)]
    pub copy: bool,
    #[arg(long)]
    pub unroll: bool,
    #[arg(long)]
    pub scalrep: bool,
    #[arg(long)]
    pub microkernel: bool,
    /// Preset name or path to a TOML machine description.
    #[arg(long, default_value = gemmforge::model::COFFEELAKE)]
    pub machine: String,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    /// Appends one row per run, writing the header first if the file is empty.
    #[arg(long)]
    pub csv: Option<std::path::PathBuf>,
    /// Prints the IR after this stage and exits without running.
    #[arg(long)]
    pub print_ir: Option<Stage>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sweeps register tiles, e.g. `--grid 4x8,6x8,3x16`.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<String>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or parameters; exit code 2.
    Usage(String),
    /// Anything else that stops a run; exit code 1.
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(s) | CliError::Run(s) => f.write_str(s),
        }
    }
}

impl std::error::Error for CliError {}

/// Best configurations on the reference machine.
pub fn default_params(elem: ScalarKind) -> TileParams {
    match elem {
        ScalarKind::F64 => TileParams::new(180, 480, 3, 16, 4),
        ScalarKind::F32 => TileParams::new(348, 512, 3, 32, 4),
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub warmup: usize,
    pub reps: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_args(a: &Args) -> Result<Self, CliError> {
        let d = default_params(a.elem);
        let params = TileParams {
            mc: a.mc.unwrap_or(d.mc),
            kc: a.kc.unwrap_or(d.kc),
            mr: a.mr.unwrap_or(d.mr),
            nr: a.nr.unwrap_or(d.nr),
            ku: a.ku.unwrap_or(d.ku),
            perm: a.inner_perm,
        };
        let flags = StageFlags {
            vect: a.vect,
            tile: a.tile,
            copy: a.copy,
            unroll: a.unroll,
            scalrep: a.scalrep,
            microkernel: a.microkernel,
        };
        flags.check().map_err(|e| CliError::Usage(e.to_string()))?;
        let machine = MachineModel::load(&a.machine).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut pipeline = PipelineConfig::new(a.m, a.n, a.k, a.elem, params, flags);
        pipeline.machine = machine;
        Ok(RunConfig { pipeline, warmup: a.warmup, reps: a.reps.max(1), seed: a.seed })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verified {
    Pass,
    Fail,
    Error(String),
}

#[derive(Clone, Debug)]
pub struct Report {
    pub m: i64,
    pub n: i64,
    pub k: i64,
    pub elem: ScalarKind,
    pub params: TileParams,
    pub flags: String,
    pub verified: Verified,
    pub max_rel_err: f64,
    pub compile_s: f64,
    pub best_s: f64,
    pub gflops: f64,
    pub reg_demand: Option<i64>,
    pub cache_notes: String,
}

impl Report {
    fn new(cfg: &PipelineConfig) -> Self {
        let p = cfg.params;
        let w = cfg.machine.lanes(cfg.elem) as i64;
        let cache_notes = match validate_tile_params(&p, &cfg.machine, cfg.elem) {
            Ok(d) => d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "),
            Err(e) => format!("error: {e}"),
        };
        Report {
            m: cfg.m,
            n: cfg.n,
            k: cfg.k,
            elem: cfg.elem,
            params: p,
            flags: cfg.flags.label(),
            verified: Verified::Error(String::new()),
            max_rel_err: f64::NAN,
            compile_s: f64::NAN,
            best_s: f64::NAN,
            gflops: f64::NAN,
            reg_demand: register_demand(p.mr, p.nr, w, p.perm).ok(),
            cache_notes,
        }
    }

    pub fn passed(&self) -> bool {
        self.verified == Verified::Pass
    }

    pub fn record(&self) -> Vec<String> {
        let p = self.params;
        let num = |x: f64| if x.is_nan() { String::new() } else { format!("{x}") };
        let (verified, notes) = match &self.verified {
            Verified::Pass => ("pass", self.cache_notes.clone()),
            Verified::Fail => ("fail", self.cache_notes.clone()),
            Verified::Error(e) => ("error", e.clone()),
        };
        vec![
            self.m.to_string(),
            self.n.to_string(),
            self.k.to_string(),
            self.elem.to_string(),
            p.mc.to_string(),
            p.kc.to_string(),
            p.mr.to_string(),
            p.nr.to_string(),
            p.ku.to_string(),
            p.perm.to_string(),
            self.flags.clone(),
            verified.to_string(),
            num(self.max_rel_err),
            num(self.compile_s),
            num(self.best_s),
            num(self.gflops),
            self.reg_demand.map(|d| d.to_string()).unwrap_or_default(),
            notes,
        ]
    }
}

/// Relative tolerance for comparing against the naive baseline.
pub fn tolerance(elem: ScalarKind) -> f64 {
    match elem {
        ScalarKind::F64 => 1e-10,
        ScalarKind::F32 => 1e-4,
    }
}

fn random_args<T: Scalar>(cfg: &PipelineConfig, seed: u64) -> Vec<TensorBuffer<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [[cfg.m, cfg.k], [cfg.k, cfg.n], [cfg.m, cfg.n]]
        .iter()
        .map(|s| {
            let ty = MemRefType::new(s.to_vec(), gemmforge::ir::ElementKind::Scalar(T::KIND));
            TensorBuffer::from_fn(ty, |_| T::from_f64(rng.gen_range(-1.0..1.0))).expect("valid shape")
        })
        .collect()
}

fn run_typed<T: Scalar>(cfg: &RunConfig, log: &mut dyn Write) -> Result<Report, CliError> {
    let pc = &cfg.pipeline;
    let mut report = Report::new(pc);
    let kernels = KernelRegistry::<T>::with_reference_kernels();
    let low = lower::<T>(pc, Some(&kernels)).map_err(|e| CliError::Usage(e.to_string()))?;
    let opts = NativeOptions::default();
    let run = |e: gemmforge::exec::ExecError| CliError::Run(e.to_string());
    let kernel = emit_native(low.output(), Some(&kernels), &opts).map_err(run)?;
    report.compile_s = kernel.compile_seconds();

    let inputs = random_args::<T>(pc, cfg.seed);
    let mut expect = inputs.clone();
    if low.stages.len() > 2 {
        emit_native::<T>(low.naive(), None, &opts).map_err(run)?.run(&mut expect).map_err(run)?;
    } else {
        kernel.run(&mut expect).map_err(run)?;
    }
    let mut got = inputs.clone();
    kernel.run(&mut got).map_err(run)?;
    let cmp = compare(&got[2], &expect[2], tolerance(pc.elem)).map_err(run)?;
    report.max_rel_err = cmp.max_rel_err;
    report.verified = if cmp.pass { Verified::Pass } else { Verified::Fail };

    let mut bufs = inputs;
    let b = benchmark(|| kernel.run(&mut bufs), (pc.m, pc.n, pc.k), cfg.warmup, cfg.reps).map_err(run)?;
    report.best_s = b.best_seconds;
    report.gflops = b.gflops;

    let io = |e: io::Error| CliError::Run(e.to_string());
    writeln!(log, "gemm {}x{}x{} {} [{}] {}", pc.m, pc.n, pc.k, pc.elem, report.flags, pc.params).map_err(io)?;
    writeln!(log, "Compilation time: {:.6} s", report.compile_s).map_err(io)?;
    writeln!(
        log,
        "Verification: {} (max rel err {:.3e})",
        if cmp.pass { "pass" } else { "FAIL" },
        cmp.max_rel_err
    )
    .map_err(io)?;
    writeln!(log, "{:.6} GFLOPS", report.gflops).map_err(io)?;
    Ok(report)
}

/// Lowers, verifies against the naive native baseline, and benchmarks one
/// configuration, logging the summary lines to `log`.
pub fn run_pipeline(cfg: &RunConfig, log: &mut dyn Write) -> Result<Report, CliError> {
    match cfg.pipeline.elem {
        ScalarKind::F64 => run_typed::<f64>(cfg, log),
        ScalarKind::F32 => run_typed::<f32>(cfg, log),
    }
}

/// Parses `MRxNR`.
pub fn parse_register_tile(s: &str) -> Result<(i64, i64), CliError> {
    let bad = || CliError::Usage(format!("register tile `{s}` is not of the form MRxNR"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// One row per register tile; configurations that cannot run become
/// `error` rows.
pub fn sweep(base: &RunConfig, grid: &[(i64, i64)], log: &mut dyn Write) -> Vec<Report> {
    grid.iter()
        .map(|&(mr, nr)| {
            let mut cfg = base.clone();
            cfg.pipeline.params.mr = mr;
            cfg.pipeline.params.nr = nr;
            run_pipeline(&cfg, log).unwrap_or_else(|e| {
                let mut r = Report::new(&cfg.pipeline);
                r.verified = Verified::Error(e.to_string());
                r
            })
        })
        .collect()
}

/// Writes `reports` as CSV, emitting the header when `w` starts empty.
pub fn write_csv<W: Write>(w: W, header: bool, reports: &[Report]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if header {
        out.write_record(CSV_HEADER)?;
    }
    for r in reports {
        out.write_record(r.record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn append_csv(path: &Path, reports: &[Report]) -> Result<(), CliError> {
    let io = |e: io::Error| CliError::Run(format!("{}: {e}", path.display()));
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let empty = file.metadata().map_err(io)?.len() == 0;
    write_csv(file, empty, reports).map_err(|e| CliError::Run(e.to_string()))
}

/// The textual IR after `stage`.
pub fn stage_ir(cfg: &RunConfig, stage: Stage) -> Result<String, CliError> {
    fn typed<T: Scalar>(pc: &PipelineConfig, stage: Stage) -> Result<String, CliError> {
        let kernels = KernelRegistry::<T>::with_reference_kernels();
        let low = lower::<T>(pc, Some(&kernels)).map_err(|e| CliError::Usage(e.to_string()))?;
        low.get(stage)
            .map(print_function)
            .ok_or_else(|| CliError::Usage(format!("stage `{stage}` is not enabled by the given flags")))
    }
    match cfg.pipeline.elem {
        ScalarKind::F64 => typed::<f64>(&cfg.pipeline, stage),
        ScalarKind::F32 => typed::<f32>(&cfg.pipeline, stage),
    }
}

/// Runs the command line; returns the process exit code.
pub fn main_with(args: &Args, out: &mut dyn Write) -> i32 {
    match drive(args, out) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(CliError::Usage(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn drive(args: &Args, out: &mut dyn Write) -> Result<bool, CliError> {
    let cfg = RunConfig::from_args(args)?;
    if let Some(stage) = args.print_ir {
        write!(out, "{}", stage_ir(&cfg, stage)?).map_err(|e| CliError::Run(e.to_string()))?;
        return Ok(true);
    }
    let reports = if args.grid.is_empty() {
        vec![run_pipeline(&cfg, out)?]
    } else {
        let grid = args.grid.iter().map(|s| parse_register_tile(s)).collect::<Result<Vec<_>, _>>()?;
        sweep(&cfg, &grid, out)
    };
    match &args.csv {
        Some(path) => append_csv(path, &reports)?,
        None if !args.grid.is_empty() => {
            write_csv(&mut *out, true, &reports).map_err(|e| CliError::Run(e.to_string()))?
        }
        None => {}
    }
    Ok(args.grid.is_empty() && reports[0].passed() || !args.grid.is_empty())
}
