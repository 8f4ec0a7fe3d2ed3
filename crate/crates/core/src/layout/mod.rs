//! Packing into contiguous buffers and memref normalization.

pub mod footprint;
pub mod normalize;
pub mod pack;

use thiserror::Error;

pub use footprint::{compute_footprint, FootprintBox};
pub use normalize::{normalize_memref, normalize_memrefs};
pub use pack::{choose_pack_layout, generate_pack, PackRole, PackSpec};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("layout {0} is not injective on its domain")]
    NonInjective(String),
    #[error("no unique loop accessing {memref} at depth {depth}")]
    Placement { memref: String, depth: usize },
    #[error("{0} is not accessed under the placement loop")]
    Unused(String),
    #[error("access {0} is not a unit-stride affine access")]
    NonAffine(String),
    #[error("footprint of {0} is not a constant-size box")]
    NonRectangular(String),
    #[error("{0} is written inside the packed scope")]
    Written(String),
    #[error("invalid layout: {0}")]
    Invalid(String),
}
