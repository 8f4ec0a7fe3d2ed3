//! Analytical machine model: peak throughput, register pressure of a
//! register tile and cache-fit checks for tile parameters.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{InnerPerm, ScalarKind, TileParams};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid machine model: {0}")]
    Invalid(String),
    #[error("cannot read machine config: {0}")]
    Config(String),
    #[error("unknown machine preset `{0}`")]
    UnknownPreset(String),
    #[error("vector width {w} does not divide N_R = {nr}")]
    Lanes { w: i64, nr: i64 },
    #[error("M_R = {mr} does not divide M_C = {mc}")]
    RegisterTile { mr: i64, mc: i64 },
    #[error("invalid tile parameters: {0}")]
    Params(String),
    #[error("time must be positive, got {0}")]
    Time(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineModel {
    #[serde(default)]
    pub name: String,
    pub vector_bits: u32,
    pub num_vector_registers: u32,
    pub fma_units: u32,
    pub freq_ghz: f64,
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub l3_bytes: u64,
}

pub const COFFEELAKE: &str = "coffeelake-i7-8700k";

impl MachineModel {
    /// 6-core desktop part at its 4.7 GHz turbo: two 256-bit FMA pipes and
    /// 16 vector registers per core.
    pub fn coffeelake() -> Self {
        MachineModel {
            name: COFFEELAKE.to_string(),
            vector_bits: 256,
            num_vector_registers: 16,
            fma_units: 2,
            freq_ghz: 4.7,
            l1_bytes: 32 << 10,
            l2_bytes: 256 << 10,
            l3_bytes: 12 << 20,
        }
    }

    pub fn preset(name: &str) -> Result<Self, ModelError> {
        match name {
            COFFEELAKE => Ok(Self::coffeelake()),
            other => Err(ModelError::UnknownPreset(other.to_string())),
        }
    }

    /// Parses a TOML table with the model's fields.
    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let m: MachineModel = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        m.check()?;
        Ok(m)
    }

    /// A preset name or a path to a TOML config.
    pub fn load(spec: &str) -> Result<Self, ModelError> {
        if let Ok(m) = Self::preset(spec) {
            return Ok(m);
        }
        let path = Path::new(spec);
        if !path.exists() {
            return Err(ModelError::UnknownPreset(spec.to_string()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if ![128, 256, 512].contains(&self.vector_bits) {
            return Err(ModelError::Invalid(format!("vector_bits must be 128, 256 or 512, got {}", self.vector_bits)));
        }
        if self.num_vector_registers == 0 || self.fma_units == 0 {
            return Err(ModelError::Invalid("register and FMA unit counts must be positive".into()));
        }
        if self.freq_ghz.is_nan() || self.freq_ghz <= 0.0 || self.freq_ghz.is_infinite() {
            return Err(ModelError::Invalid(format!("frequency must be positive, got {}", self.freq_ghz)));
        }
        if self.l1_bytes == 0 || self.l2_bytes == 0 || self.l3_bytes == 0 {
            return Err(ModelError::Invalid("cache sizes must be positive".into()));
        }
        Ok(())
    }

    /// Elements of `elem` per vector register.
    pub fn lanes(&self, elem: ScalarKind) -> usize {
        self.vector_bits as usize / (8 * elem.bytes())
    }
}

/// Peak GFLOPS of one core: one multiply and one add per lane per FMA unit
/// per cycle.
pub fn machine_peak(model: &MachineModel, elem: ScalarKind) -> f64 {
    model.fma_units as f64 * model.lanes(elem) as f64 * 2.0 * model.freq_ghz
}

/// Vector registers live in the innermost iteration of an `M_R x N_R`
/// register tile: the accumulators, the broadcast or loaded operand of the
/// outer register dimension, and one streaming operand.
pub fn register_demand(mr: i64, nr: i64, w: i64, perm: InnerPerm) -> Result<i64, ModelError> {
    if w < 1 || nr % w != 0 {
        return Err(ModelError::Lanes { w, nr });
    }
    let acc = mr * nr / w;
    Ok(match perm {
        InnerPerm::JI => acc + mr + 1,
        InnerPerm::IJ => acc + nr / w + 1,
    })
}

pub fn gflops(m: i64, n: i64, k: i64, seconds: f64) -> Result<f64, ModelError> {
    if seconds.is_nan() || seconds <= 0.0 {
        return Err(ModelError::Time(seconds));
    }
    Ok(2.0 * m as f64 * n as f64 * k as f64 / seconds / 1e9)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Note,
    Warning,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileDiagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for TileDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.severity {
            Severity::Note => "note",
            Severity::Warning => "warning",
        };
        write!(f, "{s}: {}", self.message)
    }
}

fn kib(bytes: u64) -> String {
    if bytes.is_multiple_of(1024) {
        format!("{} KiB", bytes / 1024)
    } else {
        format!("{:.1} KiB", bytes as f64 / 1024.0)
    }
}

/// Cache-fit and register-pressure diagnostics for vectorized register
/// tiles of `elem` on `model`. Divisibility violations are errors.
pub fn validate_tile_params(
    params: &TileParams,
    model: &MachineModel,
    elem: ScalarKind,
) -> Result<Vec<TileDiagnostic>, ModelError> {
    model.check()?;
    if params.mc < 1 || params.kc < 1 || params.mr < 1 || params.nr < 1 || params.ku < 1 {
        return Err(ModelError::Params(params.to_string()));
    }
    if params.mc % params.mr != 0 {
        return Err(ModelError::RegisterTile { mr: params.mr, mc: params.mc });
    }
    let w = model.lanes(elem) as i64;
    let demand = register_demand(params.mr, params.nr, w, params.perm)?;
    let bytes = elem.bytes() as u64;
    let mut out = Vec::new();
    let lhs = (params.mc * params.kc) as u64 * bytes;
    if lhs > model.l2_bytes {
        out.push(TileDiagnostic {
            severity: Severity::Warning,
            message: format!("LHS tile {}x{} ({}) exceeds L2 ({})", params.mc, params.kc, kib(lhs), kib(model.l2_bytes)),
        });
        if lhs <= model.l3_bytes {
            out.push(TileDiagnostic {
                severity: Severity::Note,
                message: format!("LHS tile ({}) fits in L3 ({})", kib(lhs), kib(model.l3_bytes)),
            });
        }
    }
    let rhs = (params.kc * params.nr) as u64 * bytes;
    if rhs > model.l1_bytes {
        out.push(TileDiagnostic {
            severity: Severity::Warning,
            message: format!("RHS panel {}x{} ({}) exceeds L1 ({})", params.kc, params.nr, kib(rhs), kib(model.l1_bytes)),
        });
    }
    if demand > model.num_vector_registers as i64 {
        out.push(TileDiagnostic {
            severity: Severity::Warning,
            message: format!(
                "register tile {}x{} ({}) needs {demand} vector registers, {} available; expect spills",
                params.mr, params.nr, params.perm, model.num_vector_registers
            ),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_formula() {
        let m = MachineModel { freq_ghz: 1.0, fma_units: 1, vector_bits: 128, ..MachineModel::coffeelake() };
        assert_eq!(machine_peak(&m, ScalarKind::F64), 4.0);
        let c = MachineModel::coffeelake();
        assert_eq!(machine_peak(&c, ScalarKind::F32), 2.0 * machine_peak(&c, ScalarKind::F64));
    }

    #[test]
    fn demand_requires_divisible_nr() {
        assert_eq!(register_demand(4, 6, 4, InnerPerm::JI), Err(ModelError::Lanes { w: 4, nr: 6 }));
    }

    #[test]
    fn toml_config_round_trip() {
        let m = MachineModel::coffeelake();
        let text = toml::to_string(&m).unwrap();
        assert_eq!(MachineModel::from_toml(&text).unwrap(), m);
        let bad = text.replace("vector_bits = 256", "vector_bits = 384");
        assert!(MachineModel::from_toml(&bad).is_err());
    }

    #[test]
    fn non_positive_time_rejected() {
        assert!(gflops(1, 1, 1, 0.0).is_err());
        assert!(gflops(1, 1, 1, -1.0).is_err());
    }
}
