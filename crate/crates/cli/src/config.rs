//! Flat TOML run configuration with CLI overrides.

use anyhow::{bail, Context, Result};
use sast_core::backbone::{BackboneSpec, StageSpec};
use sast_core::events::{SceneParams, SensorConfig};
use sast_core::scoring::WeightFn;
use sast_core::Real;
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Everything a command needs, merged from defaults, the optional config
/// file, and command-line overrides (in that precedence order).
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // sensor
    pub width: usize,
    pub height: usize,
    pub n_time_bins: usize,
    pub sample_duration_us: u64,

    // backbone shape
    pub channels: Vec<usize>,
    pub window_sides: Vec<usize>,
    pub strides: Vec<usize>,
    pub depths: Vec<usize>,
    pub n_heads: usize,
    pub mlp_expansion: usize,
    pub embed_gain: f64,

    // sparsification hyper-parameters
    pub a: f64,
    pub b: f64,
    pub p: f64,
    pub eps_f: f64,
    pub mask_value: f64,
    pub weight_fn: String,
    pub cb: bool,
    pub fixed_ratio: f64,
    pub share_token_selection: bool,

    // input: an event CSV file, or a synthetic suite over density levels
    pub events: Option<PathBuf>,
    pub densities: Vec<f64>,
    /// Synthetic samples per density level.
    pub samples: usize,
    pub seed: u64,

    // synthetic scene generator
    pub n_objects: usize,
    pub object_side: usize,
    pub peak_rate: f64,
    pub max_travel: f64,
    pub n_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sensor = SensorConfig::default();
        let spec = BackboneSpec::default();
        let scene = SceneParams::with_density(1.0);
        RunConfig {
            width: sensor.width,
            height: sensor.height,
            n_time_bins: sensor.n_time_bins,
            sample_duration_us: sensor.sample_duration_us,
            channels: spec.stages.iter().map(|s| s.channels).collect(),
            window_sides: spec.stages.iter().map(|s| s.window_side).collect(),
            strides: spec.stages.iter().map(|s| s.stride).collect(),
            depths: spec.stages.iter().map(|s| s.depth).collect(),
            n_heads: spec.n_heads,
            mlp_expansion: spec.mlp_expansion,
            embed_gain: spec.embed_gain as f64,
            a: spec.a as f64,
            b: spec.b as f64,
            p: spec.p as f64,
            eps_f: spec.eps_f as f64,
            mask_value: spec.mask_value as f64,
            weight_fn: spec.weight_fn.name().to_string(),
            cb: spec.cb_enabled,
            fixed_ratio: 0.5,
            share_token_selection: spec.share_token_selection,
            events: None,
            densities: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            samples: 4,
            seed: 7,
            n_objects: scene.n_objects,
            object_side: scene.object_side,
            peak_rate: scene.peak_rate as f64,
            max_travel: scene.max_travel as f64,
            n_steps: scene.n_steps,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let cfg = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n == 0 {
            bail!("config needs at least one stage");
        }
        if self.window_sides.len() != n || self.strides.len() != n || self.depths.len() != n {
            bail!(
                "stage arrays must agree in length: channels {}, window_sides {}, strides {}, depths {}",
                n,
                self.window_sides.len(),
                self.strides.len(),
                self.depths.len()
            );
        }
        WeightFn::parse(&self.weight_fn)
            .with_context(|| format!("weight_fn {:?}", self.weight_fn))?;
        if !(0.0..=1.0).contains(&self.fixed_ratio) {
            bail!("fixed_ratio must lie in [0, 1], got {}", self.fixed_ratio);
        }
        for &d in &self.densities {
            if !(0.0..=1.0).contains(&d) {
                bail!("density must lie in [0, 1], got {d}");
            }
        }
        if self.events.is_none() {
            if self.densities.is_empty() {
                bail!("synthetic suite needs at least one density level");
            }
            if self.samples == 0 {
                bail!("synthetic suite needs samples >= 1");
            }
        }
        if let Some(p) = &self.events {
            if !p.exists() {
                bail!("events file {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn sensor(&self) -> SensorConfig {
        SensorConfig {
            width: self.width,
            height: self.height,
            n_time_bins: self.n_time_bins,
            sample_duration_us: self.sample_duration_us,
        }
    }

    pub fn scene_params(&self, density: f64) -> SceneParams {
        SceneParams {
            density: density as Real,
            n_objects: self.n_objects,
            object_side: self.object_side,
            peak_rate: self.peak_rate as Real,
            max_travel: self.max_travel as Real,
            n_steps: self.n_steps,
        }
    }

    /// Backbone spec for this config; `cb` can be forced for the
    /// with/without-context-broadcast comparison rows.
    pub fn backbone_spec(&self, cb_override: Option<bool>) -> Result<BackboneSpec> {
        let weight_fn = WeightFn::parse(&self.weight_fn)
            .with_context(|| format!("weight_fn {:?}", self.weight_fn))?;
        Ok(BackboneSpec {
            sensor: self.sensor(),
            stages: self
                .channels
                .iter()
                .zip(&self.window_sides)
                .zip(&self.strides)
                .zip(&self.depths)
                .map(|(((&channels, &window_side), &stride), &depth)| StageSpec {
                    stride,
                    window_side,
                    channels,
                    depth,
                })
                .collect(),
            a: self.a as Real,
            b: self.b as Real,
            p: self.p as Real,
            eps_f: self.eps_f as Real,
            mask_value: self.mask_value as Real,
            weight_fn,
            n_heads: self.n_heads,
            mlp_expansion: self.mlp_expansion,
            cb_enabled: cb_override.unwrap_or(self.cb),
            share_token_selection: self.share_token_selection,
            embed_gain: self.embed_gain as Real,
        })
    }
}
