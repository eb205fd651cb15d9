//! Reference plants shared by the benchmarks.

use std::path::PathBuf;

use drro_core::{load_plant, FrequencyGrid, PlantContext, PlantModel};

/// Plant files shipped in the repository's `plants/` directory.
pub fn plant(name: &str) -> PlantModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../plants").join(format!("{name}.toml"));
    load_plant(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn context(name: &str, k: u32) -> PlantContext {
    PlantContext::new(plant(name), FrequencyGrid::new(k).expect("grid size")).expect("plant context")
}
