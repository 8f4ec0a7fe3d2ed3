//! The GEMM lowering pipeline: stages run in the fixed order
//! vect, tile, copy, microkernel, unroll, scalrep, normalize.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::exec::{map_to_microkernel, ExecError, KernelRegistry};
use crate::ir::{verify, Diagnostic, Function, Op, ScalarKind, TileParams, ValueId};
use crate::layout::{choose_pack_layout, generate_pack, normalize_memrefs, LayoutError, PackRole, PackSpec};
use crate::model::MachineModel;
use crate::scalar::Scalar;
use crate::schedule::{applied_schedule_for, apply_tiling_schedule, build_matmul, expand_matmul, perfect_nest, ScheduleError};
use crate::vect::{vectorize, VectError};
use crate::xform::{promote_single_iteration, scalar_replace, unroll_full, unroll_jam, XformError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid flags: {0}")]
    Flags(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Xform(#[from] XformError),
    #[error(transparent)]
    Vect(#[from] VectError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("stage {stage} produced invalid IR: {}", diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Verify { stage: Stage, diags: Vec<Diagnostic> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct StageFlags {
    pub vect: bool,
    pub tile: bool,
    pub copy: bool,
    pub unroll: bool,
    pub scalrep: bool,
    pub microkernel: bool,
}

impl StageFlags {
    pub fn check(&self) -> Result<(), PipelineError> {
        if self.copy && !self.tile {
            return Err(PipelineError::Flags("--copy requires --tile".into()));
        }
        if self.unroll && !self.tile {
            return Err(PipelineError::Flags("--unroll requires --tile".into()));
        }
        if self.microkernel {
            if !(self.tile && self.copy) {
                return Err(PipelineError::Flags("--microkernel requires --tile and --copy".into()));
            }
            if self.vect || self.unroll || self.scalrep {
                return Err(PipelineError::Flags(
                    "--microkernel replaces the register tile; it excludes --vect, --unroll and --scalrep".into(),
                ));
            }
        }
        Ok(())
    }

    /// `+`-joined enabled stages, or `naive`.
    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.vect, "vect"),
            (self.tile, "tile"),
            (self.copy, "copy"),
            (self.microkernel, "microkernel"),
            (self.unroll, "unroll"),
            (self.scalrep, "scalrep"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "naive".to_string()
        } else {
            names.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Input,
    Naive,
    Vect,
    Tile,
    Copy,
    Microkernel,
    Unroll,
    Scalrep,
    Normalize,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Input,
        Stage::Naive,
        Stage::Vect,
        Stage::Tile,
        Stage::Copy,
        Stage::Microkernel,
        Stage::Unroll,
        Stage::Scalrep,
        Stage::Normalize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Input => "input",
            Stage::Naive => "naive",
            Stage::Vect => "vect",
            Stage::Tile => "tile",
            Stage::Copy => "copy",
            Stage::Microkernel => "microkernel",
            Stage::Unroll => "unroll",
            Stage::Scalrep => "scalrep",
            Stage::Normalize => "normalize",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub m: i64,
    pub n: i64,
    pub k: i64,
    pub elem: ScalarKind,
    pub params: TileParams,
    pub flags: StageFlags,
    pub machine: MachineModel,
}

impl PipelineConfig {
    pub fn new(m: i64, n: i64, k: i64, elem: ScalarKind, params: TileParams, flags: StageFlags) -> Self {
        PipelineConfig { m, n, k, elem, params, flags, machine: MachineModel::coffeelake() }
    }

    /// Vector lanes used by `--vect`: the model's register width in `elem`s.
    pub fn lanes(&self) -> usize {
        if self.flags.vect {
            self.machine.lanes(self.elem)
        } else {
            1
        }
    }
}

/// The function after each executed stage, in order.
#[derive(Clone, Debug)]
pub struct Lowered {
    pub stages: Vec<(Stage, Function)>,
}

impl Lowered {
    pub fn get(&self, stage: Stage) -> Option<&Function> {
        self.stages.iter().find(|(s, _)| *s == stage).map(|(_, f)| f)
    }

    pub fn naive(&self) -> &Function {
        self.get(Stage::Naive).expect("naive stage always runs")
    }

    /// The final function.
    pub fn output(&self) -> &Function {
        &self.stages.last().expect("at least one stage").1
    }
}

fn record(out: &mut Lowered, stage: Stage, f: Function) -> Result<(), PipelineError> {
    let diags = verify(&f);
    if !diags.is_empty() {
        return Err(PipelineError::Verify { stage, diags });
    }
    out.stages.push((stage, f));
    Ok(())
}

/// Point-loop ivs `(i, j, k)` of a tiled or naive GEMM nest.
type PointIvs = (ValueId, ValueId, ValueId);

/// The memrefs read as `A` and `B` in the innermost body.
fn operands(f: &Function, (i, j, k): PointIvs) -> Option<(ValueId, ValueId)> {
    let (mut a, mut b) = (None, None);
    f.walk(|op| {
        if let Op::Load { memref, index, .. } = op {
            if index.uses(i) && index.uses(k) {
                a = Some(*memref);
            } else if index.uses(k) && index.uses(j) {
                b = Some(*memref);
            }
        }
    });
    Some((a?, b?))
}

/// Runs the enabled stages on an `m x n x k` GEMM. Microkernels are looked
/// up in `kernels` when `flags.microkernel` is set.
pub fn lower<T: Scalar>(cfg: &PipelineConfig, kernels: Option<&KernelRegistry<T>>) -> Result<Lowered, PipelineError> {
    let flags = cfg.flags;
    flags.check()?;
    if cfg.elem != T::KIND {
        return Err(PipelineError::Flags(format!("element type {} lowered as {}", cfg.elem, T::KIND)));
    }
    cfg.params.check().map_err(|e| PipelineError::Flags(e.to_string()))?;
    let p = cfg.params;
    let mut out = Lowered { stages: Vec::new() };

    let hl = build_matmul("gemm", cfg.m, cfg.n, cfg.k, cfg.elem, p);
    record(&mut out, Stage::Input, hl.clone())?;
    let mut f = expand_matmul(&hl)?;
    record(&mut out, Stage::Naive, f.clone())?;

    let (levels, _) = perfect_nest(&f, 3)?;
    let mut ivs: PointIvs = (levels[0].0, levels[1].0, levels[2].0);
    let lanes = cfg.lanes();
    if flags.vect {
        f = vectorize(&f, ivs.1, lanes)?;
        record(&mut out, Stage::Vect, f.clone())?;
    }

    let mut sched = None;
    if flags.tile {
        let s = applied_schedule_for(&p, flags.vect.then_some(lanes))?;
        let (t, tivs) = apply_tiling_schedule(&f, &s)?;
        let at = |d: usize| tivs[s.point_position(d).expect("schedule has point loops")];
        ivs = (at(0), at(1), at(2));
        f = t;
        sched = Some(s);
        record(&mut out, Stage::Tile, f.clone())?;
    }
    let nr_vec = p.nr / lanes as i64;

    if flags.copy {
        let s = sched.as_ref().expect("copy requires tile");
        let (a, b) = operands(&f, ivs).ok_or_else(|| PipelineError::Flags("cannot find GEMM operands".into()))?;
        let depth_a = s.position(0, p.mc).map_or(1, |q| q + 1);
        let depth_b = s.position(1, nr_vec).map_or(depth_a, |q| q + 1);
        let align = (cfg.machine.vector_bits / 8) as usize;
        let spec_a = PackSpec {
            memref: a,
            depth: depth_a,
            layout: choose_pack_layout(&p, PackRole::Lhs, flags.microkernel),
            alignment: align,
        };
        f = generate_pack(&f, &spec_a)?.0;
        let spec_b = PackSpec {
            memref: b,
            depth: depth_b,
            layout: choose_pack_layout(&p, PackRole::Rhs, flags.microkernel),
            alignment: align,
        };
        f = generate_pack(&f, &spec_b)?.0;
        record(&mut out, Stage::Copy, f.clone())?;
    }

    if flags.microkernel {
        let reg = kernels.ok_or_else(|| PipelineError::Flags("--microkernel needs a kernel registry".into()))?;
        f = map_to_microkernel(&f, reg)?;
        record(&mut out, Stage::Microkernel, f.clone())?;
    }

    if flags.unroll {
        let (i, j, k) = ivs;
        let order = match p.perm {
            crate::ir::InnerPerm::JI => [(i, p.mr), (j, nr_vec)],
            crate::ir::InnerPerm::IJ => [(j, nr_vec), (i, p.mr)],
        };
        for (iv, factor) in order {
            let (g, r) = unroll_jam(&f, iv, factor)?;
            f = g;
            if f.find_loop(r.main).and_then(|l| l.const_trip_count()) == Some(1) {
                f = unroll_full(&f, r.main, 1)?;
            }
        }
        f = unroll_jam(&f, k, p.ku)?.0;
        f = promote_single_iteration(&f);
        record(&mut out, Stage::Unroll, f.clone())?;
    }

    if flags.scalrep {
        f = scalar_replace(&f);
        record(&mut out, Stage::Scalrep, f.clone())?;
    }

    let mut layouts = false;
    f.walk(|op| {
        if let Op::Alloc { result } = op {
            layouts |= !f.memref_ty(*result).unwrap().has_identity_layout();
        }
    });
    if layouts {
        f = normalize_memrefs(&f)?;
        record(&mut out, Stage::Normalize, f)?;
    }
    Ok(out)
}
