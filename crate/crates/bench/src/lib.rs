//! Shared fixtures for the pipeline benchmarks.

use sast_core::backbone::{Backbone, BackboneSpec};
use sast_core::events::{synth_scene, voxelize, SceneParams, SensorConfig};
use sast_core::tensorkit::Tensor;

/// Default-shape backbone over the default sensor.
pub fn reference_backbone() -> Backbone {
    Backbone::reference(&BackboneSpec::default()).expect("default spec is valid")
}

/// One synthetic voxel sample at the given scene density.
pub fn demo_voxel(density: f64, seed: u64) -> Tensor {
    let sensor = SensorConfig::default();
    let events = synth_scene(&SceneParams::with_density(density), &sensor, seed);
    voxelize(&events, 0, &sensor)
}
