//! Sample suites: event files or seeded synthetic density ladders.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use sast_core::events::{event_sparsity, parse_events, synth_scene, voxelize};
use sast_core::tensorkit::Tensor;
use sast_core::Real;

/// Per-sample seeds stride by the 64-bit golden ratio so samples are
/// decorrelated while the whole suite reproduces from one seed.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// One voxelized input sample.
pub struct Sample {
    pub id: usize,
    pub voxel: Tensor,
    /// Mean of the per-bin non-zero ratios of the full-resolution voxel.
    pub sparsity_mean: Real,
}

fn sparsity_mean(voxel: &Tensor) -> Result<Real> {
    let r = event_sparsity(voxel).context("sparsity of input voxel")?;
    Ok(r.data().iter().sum::<Real>() / r.len() as Real)
}

/// Materialize the suite a config describes: the event file as a single
/// sample, or `samples` synthetic scenes per density level, ordered by
/// density level then per-level index.
pub fn build_suite(cfg: &RunConfig) -> Result<Vec<Sample>> {
    let sensor = cfg.sensor();
    if let Some(path) = &cfg.events {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading events {}", path.display()))?;
        let events = parse_events(&text, &sensor)
            .with_context(|| format!("parsing events {}", path.display()))?;
        let voxel = voxelize(&events, 0, &sensor);
        let sparsity_mean = sparsity_mean(&voxel)?;
        return Ok(vec![Sample {
            id: 0,
            voxel,
            sparsity_mean,
        }]);
    }
    let mut suite = Vec::with_capacity(cfg.densities.len() * cfg.samples);
    for &density in &cfg.densities {
        for _ in 0..cfg.samples {
            let id = suite.len();
            let seed = cfg.seed.wrapping_add((id as u64).wrapping_mul(SEED_STRIDE));
            let events = synth_scene(&cfg.scene_params(density), &sensor, seed);
            let voxel = voxelize(&events, 0, &sensor);
            let sparsity_mean = sparsity_mean(&voxel)?;
            suite.push(Sample {
                id,
                voxel,
                sparsity_mean,
            });
        }
    }
    Ok(suite)
}
