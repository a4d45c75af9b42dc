//! Parametric turbulence degradation and dataset fabrication for the
//! synthetic (teacher) and proxy-real (student) domains.

mod dataset;
mod degrade;
mod params;
pub mod scenes;

pub use dataset::{
    build_dataset, list_pngs, DatasetManifest, Domain, DomainSettings, ManifestHeader, ManifestRecord,
    ManifestView, MANIFEST_FILE, SEALED_FILE,
};
pub use degrade::degrade;
pub use params::{fields_to_map, param_map, sample_params, DegradationMap, SimConfig, TurbulenceParams};
