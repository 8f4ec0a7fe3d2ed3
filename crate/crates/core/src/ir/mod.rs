//! Affine loop-nest IR: expressions, maps, memref types, operations and the
//! textual format.

pub mod expr;
pub mod map;
pub mod ops;
pub mod parse;
pub mod print;
pub mod types;
pub mod verify;

pub use expr::{ceil_div, floor_div, floor_mod, AffineExpr, Atom, EvalError};
pub use map::AffineMap;
pub use ops::{BinaryKind, CallArg, ForOp, Function, InnerPerm, Op, OperandMap, TileParams, ValueId};
pub use parse::{parse_affine_map, parse_function, ParseError};
pub use print::print_function;
pub use types::{for_each_index, interval, is_injective, row_major_strides, ElementKind, MemRefType, ScalarKind, Type};
pub use verify::{verify, Diagnostic};
