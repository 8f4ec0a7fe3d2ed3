use gemmforge::ir::{InnerPerm, ScalarKind, TileParams};
use gemmforge::model::{gflops, machine_peak, register_demand, validate_tile_params, MachineModel, ModelError, Severity};

#[test]
fn peak_of_the_reference_machine() {
    let m = MachineModel::coffeelake();
    assert!((machine_peak(&m, ScalarKind::F64) - 75.2).abs() < 1e-9);
    assert!((machine_peak(&m, ScalarKind::F32) - 150.4).abs() < 1e-9);
    let small = MachineModel { vector_bits: 128, fma_units: 1, freq_ghz: 1.0, ..m };
    assert!((machine_peak(&small, ScalarKind::F64) - 4.0).abs() < 1e-12);
}

#[test]
fn register_demand_of_quoted_tiles() {
    assert_eq!(register_demand(3, 16, 4, InnerPerm::JI), Ok(16));
    assert_eq!(register_demand(6, 8, 4, InnerPerm::JI), Ok(19));
    assert_eq!(register_demand(6, 8, 4, InnerPerm::IJ), Ok(15));
    assert_eq!(register_demand(4, 8, 4, InnerPerm::JI), Ok(13));
    assert!(register_demand(4, 6, 4, InnerPerm::JI).is_err());
}

#[test]
fn gflops_from_timings() {
    let g = gflops(2088, 2048, 2048, 0.259527).unwrap();
    assert!((g - 67.49).abs() < 0.005, "{g}");
    assert!((gflops(1, 1, 1, 2e-9).unwrap() - 1.0).abs() < 1e-12);
    let g = gflops(2088, 2048, 2048, 0.889177).unwrap();
    assert!((g - 19.7).abs() < 0.01, "{g}");
    assert!((g - 19.32).abs() / 19.32 <= 0.025, "{g}");
    assert!(matches!(gflops(1, 1, 1, 0.0), Err(ModelError::Time(_))));
}

#[test]
fn best_f64_config_overflows_l2_but_fits_l3() {
    let d = validate_tile_params(&TileParams::new(180, 480, 3, 16, 4), &MachineModel::coffeelake(), ScalarKind::F64)
        .unwrap();
    let l2 = d.iter().find(|x| x.severity == Severity::Warning && x.message.contains("L2")).unwrap();
    assert!(l2.message.contains("675 KiB"), "{l2}");
    assert!(d.iter().any(|x| x.severity == Severity::Note && x.message.contains("L3")));
    assert!(!d.iter().any(|x| x.message.contains("spill")));
}

#[test]
fn small_tile_fits_everywhere() {
    let d = validate_tile_params(&TileParams::new(64, 256, 4, 8, 4), &MachineModel::coffeelake(), ScalarKind::F64)
        .unwrap();
    assert!(d.is_empty(), "{d:?}");
}

#[test]
fn indivisible_register_tile_is_a_hard_error() {
    let r = validate_tile_params(&TileParams::new(64, 256, 3, 8, 4), &MachineModel::coffeelake(), ScalarKind::F64);
    assert!(matches!(r, Err(ModelError::RegisterTile { .. })));
}

#[test]
fn spilling_tile_is_flagged() {
    let d = validate_tile_params(&TileParams::new(180, 256, 6, 8, 4), &MachineModel::coffeelake(), ScalarKind::F64)
        .unwrap();
    assert!(d.iter().any(|x| x.message.contains("19")), "{d:?}");
}

#[test]
fn machine_files_round_trip_and_reject_unknown_keys() {
    let text = "name = \"tiny\"\nvector_bits = 128\nnum_vector_registers = 16\nfma_units = 1\nfreq_ghz = 2.0\n\
                l1_bytes = 32768\nl2_bytes = 262144\nl3_bytes = 4194304\n";
    let m = MachineModel::from_toml(text).unwrap();
    assert_eq!(m.lanes(ScalarKind::F32), 4);
    assert!(MachineModel::from_toml(&format!("{text}turbo = true\n")).is_err());
    assert!(MachineModel::from_toml(&text.replace("128", "100")).is_err());
    assert!(MachineModel::preset("nonexistent").is_err());
    assert_eq!(MachineModel::load(gemmforge::model::COFFEELAKE).unwrap(), MachineModel::coffeelake());
}
