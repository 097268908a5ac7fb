//! The run / sweep / compare commands.

use crate::artifacts::{csv_document, write_mask_pgm, write_scaled_pgm};
use crate::config::RunConfig;
use crate::suite::{build_suite, Sample};
use anyhow::{Context, Result};
use sast_core::backbone::{Backbone, BackboneVariant, StepOutput};
use sast_core::tensorkit::Tensor;
use sast_core::Real;
use std::path::Path;

pub const STATS_HEADER: &str = "sample_id,event_sparsity_mean,tokens_total,tokens_retained,retain_ratio,windows_retained,a_flops,dense_a_flops,reduction_pct";
pub const SWEEP_HEADER: &str = "a,b,mean_a_flops,mean_retain_ratio";
pub const COMPARE_HEADER: &str = "variant,sample_id,a_flops,retain_ratio,divergence_from_dense";

fn reduction_pct(out: &StepOutput) -> Real {
    100.0 * (1.0 - out.report.a_flops as Real / out.report.dense_a_flops as Real)
}

fn stats_row(sample: &Sample, out: &StepOutput) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{}",
        sample.id,
        sample.sparsity_mean,
        out.tokens_total(),
        out.tokens_retained(),
        out.retain_ratio(),
        out.windows_retained(),
        out.report.a_flops,
        out.report.dense_a_flops,
        reduction_pct(out),
    )
}

fn run_sample(backbone: &Backbone, sample: &Sample, variant: BackboneVariant) -> Result<StepOutput> {
    let mut state = backbone.init_state();
    backbone
        .step(&sample.voxel, &mut state, variant)
        .with_context(|| format!("processing sample {}", sample.id))
}

/// Run the adaptive pipeline over the suite; write per-stage score
/// heatmaps and selection masks for every sample plus `stats.csv`.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let backbone = Backbone::reference(&cfg.backbone_spec(None)?).context("building backbone")?;
    let suite = build_suite(cfg)?;
    let mut rows = Vec::with_capacity(suite.len());
    for sample in &suite {
        let out = run_sample(&backbone, sample, BackboneVariant::Adaptive)?;
        for (si, stage_stats) in out.stats.iter().enumerate() {
            // the window-partition layer leads each stage; its scores and
            // mask are the stage's visualization
            let lead = &stage_stats[0];
            let (h, w) = (lead.score_heatmap.shape()[0], lead.score_heatmap.shape()[1]);
            write_scaled_pgm(
                &out_dir.join(format!("heatmap_s{:03}_stage{}.pgm", sample.id, si + 1)),
                lead.score_heatmap.data(),
                w,
                h,
            )?;
            write_mask_pgm(
                &out_dir.join(format!("mask_s{:03}_stage{}.pgm", sample.id, si + 1)),
                &lead.keep_mask,
                w,
                h,
            )?;
        }
        rows.push(stats_row(sample, &out));
    }
    let csv = csv_document(STATS_HEADER, &rows);
    std::fs::write(out_dir.join("stats.csv"), csv).context("writing stats.csv")?;
    println!(
        "wrote {} samples to {}",
        suite.len(),
        out_dir.display()
    );
    Ok(())
}

/// Sweep the (a, b) grid over a fixed suite; write `sweep.csv` with one
/// row per grid point.
pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path, grid_a: &[f64], grid_b: &[f64]) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let suite = build_suite(cfg)?;
    let mut rows = Vec::with_capacity(grid_a.len() * grid_b.len());
    for &a in grid_a {
        for &b in grid_b {
            let mut point = cfg.clone();
            point.a = a;
            point.b = b;
            let backbone =
                Backbone::reference(&point.backbone_spec(None)?).context("building backbone")?;
            let mut flops_sum = 0.0;
            let mut retain_sum = 0.0;
            for sample in &suite {
                let out = run_sample(&backbone, sample, BackboneVariant::Adaptive)?;
                flops_sum += out.report.a_flops as Real;
                retain_sum += out.retain_ratio();
            }
            let n = suite.len() as Real;
            rows.push(format!("{},{},{},{}", a, b, flops_sum / n, retain_sum / n));
        }
    }
    let csv = csv_document(SWEEP_HEADER, &rows);
    std::fs::write(out_dir.join("sweep.csv"), csv).context("writing sweep.csv")?;
    println!(
        "swept {} grid points over {} samples into {}",
        grid_a.len() * grid_b.len(),
        suite.len(),
        out_dir.display()
    );
    Ok(())
}

fn divergence(features: &[Tensor], reference: &[Tensor]) -> Real {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (f, r) in features.iter().zip(reference) {
        for (a, b) in f.data().iter().zip(r.data()) {
            sq += (a - b) * (a - b);
        }
        n += f.len();
    }
    sq / n as Real
}

/// Compare the adaptive pipeline (with and without context broadcast)
/// against the dense and fixed-ratio baselines; write `compare.csv` with
/// one row per (variant, sample).
pub fn cmd_compare(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let base = Backbone::reference(&cfg.backbone_spec(Some(false))?).context("building backbone")?;
    let with_cb =
        Backbone::reference(&cfg.backbone_spec(Some(true))?).context("building backbone")?;
    let suite = build_suite(cfg)?;

    let dense_runs: Vec<StepOutput> = suite
        .iter()
        .map(|s| run_sample(&base, s, BackboneVariant::Dense))
        .collect::<Result<_>>()?;

    let variants: [(&str, &Backbone, BackboneVariant); 4] = [
        ("sast", &base, BackboneVariant::Adaptive),
        ("sast-cb", &with_cb, BackboneVariant::Adaptive),
        ("dense", &base, BackboneVariant::Dense),
        (
            "fixed-ratio",
            &base,
            BackboneVariant::FixedRatio(cfg.fixed_ratio as Real),
        ),
    ];
    let mut rows = Vec::with_capacity(4 * suite.len());
    for (name, backbone, variant) in variants {
        for (sample, dense) in suite.iter().zip(&dense_runs) {
            let out = run_sample(backbone, sample, variant)?;
            rows.push(format!(
                "{},{},{},{},{}",
                name,
                sample.id,
                out.report.a_flops,
                out.retain_ratio(),
                divergence(&out.features, &dense.features),
            ));
        }
    }
    let csv = csv_document(COMPARE_HEADER, &rows);
    std::fs::write(out_dir.join("compare.csv"), csv).context("writing compare.csv")?;
    println!(
        "compared 4 variants over {} samples into {}",
        suite.len(),
        out_dir.display()
    );
    Ok(())
}
