//! Synthetic cities and traffic with known road rasters and a controllable
//! first-half / second-half regime shift.

pub mod city;
pub mod scenario;
pub mod traffic;

pub use city::{build_city, CitySpec, GroundTruth, Regime, RegimeShift, RoadClass};
pub use scenario::{generate_scenario, load_scenario, simulate_scenario, LoadedScenario, Manifest, ManifestEntry};
pub use traffic::{diurnal_profile, mean_road_speed, simulate_day};
