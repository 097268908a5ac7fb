//! End-to-end tests of the `sast` binary: artifact layout, CSV contracts,
//! config handling, and failure modes.

use std::path::Path;
use std::process::{Command, Output};

use sast_core::events::{format_events, synth_scene, SceneParams, SensorConfig};

const STATS_HEADER: &str = "sample_id,event_sparsity_mean,tokens_total,tokens_retained,retain_ratio,windows_retained,a_flops,dense_a_flops,reduction_pct";
const SWEEP_HEADER: &str = "a,b,mean_a_flops,mean_retain_ratio";
const COMPARE_HEADER: &str = "variant,sample_id,a_flops,retain_ratio,divergence_from_dense";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sast"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary starts");
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    out
}

fn run_err(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary starts");
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded: {cmd:?}"
    );
    out
}

/// Read a CSV written by the runner: header line plus comma-split rows.
fn read_csv(path: &Path) -> (String, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().expect("csv has a header").to_string();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn field<T: std::str::FromStr>(row: &[String], idx: usize) -> T
where
    T::Err: std::fmt::Debug,
{
    row[idx].parse().unwrap_or_else(|e| {
        panic!("field {idx} of {row:?} does not parse: {e:?}");
    })
}

/// Parse a plain-text P2 graymap into (width, height, pixels).
fn read_pgm(path: &Path) -> (usize, usize, Vec<u32>) {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()));
    let mut tokens = text.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"), "{} is not P2", path.display());
    let w: usize = tokens.next().unwrap().parse().unwrap();
    let h: usize = tokens.next().unwrap().parse().unwrap();
    let max: u32 = tokens.next().unwrap().parse().unwrap();
    assert_eq!(max, 255);
    let pixels: Vec<u32> = tokens.map(|t| t.parse().unwrap()).collect();
    assert_eq!(pixels.len(), w * h, "pixel count of {}", path.display());
    assert!(pixels.iter().all(|&p| p <= 255));
    (w, h, pixels)
}

#[test]
fn run_writes_stats_and_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .args(["run", "--seed", "3", "--samples", "1", "--density", "0.5"])
        .arg("--out")
        .arg(dir.path()));

    let (header, rows) = read_csv(&dir.path().join("stats.csv"));
    assert_eq!(header, STATS_HEADER);
    assert_eq!(rows.len(), 1, "one density x one sample = one row");
    let row = &rows[0];
    assert_eq!(field::<usize>(row, 0), 0);
    let sparsity: f64 = field(row, 1);
    assert!(sparsity > 0.0 && sparsity < 1.0);
    let tokens_total: u64 = field(row, 2);
    let tokens_retained: u64 = field(row, 3);
    // 64x64 sensor, strides 4/2/2/2, two layers per stage:
    // 2 * (256 + 64 + 16 + 4) grid positions
    assert_eq!(tokens_total, 680);
    assert!(tokens_retained > 0 && tokens_retained <= tokens_total);
    let retain: f64 = field(row, 4);
    assert!((retain - tokens_retained as f64 / tokens_total as f64).abs() < 1e-9);
    assert!(field::<u64>(row, 5) > 0);
    let a_flops: u64 = field(row, 6);
    let dense: u64 = field(row, 7);
    assert!(a_flops <= dense);
    let reduction: f64 = field(row, 8);
    assert!((0.0..=100.0).contains(&reduction));

    // one heatmap + scale sidecar + mask per stage, at each stage's grid
    // resolution
    for (stage, side) in [(1usize, 16usize), (2, 8), (3, 4), (4, 2)] {
        let heatmap = dir.path().join(format!("heatmap_s000_stage{stage}.pgm"));
        let (w, h, _) = read_pgm(&heatmap);
        assert_eq!((w, h), (side, side), "stage {stage} heatmap resolution");

        let sidecar = dir.path().join(format!("heatmap_s000_stage{stage}.scale.txt"));
        let text = std::fs::read_to_string(&sidecar).unwrap();
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse().unwrap())
            .collect();
        assert_eq!(vals.len(), 2, "sidecar holds `min max`");
        assert!(vals[0] <= vals[1]);

        let mask = dir.path().join(format!("mask_s000_stage{stage}.pgm"));
        let (w, h, pixels) = read_pgm(&mask);
        assert_eq!((w, h), (side, side), "stage {stage} mask resolution");
        assert!(pixels.iter().all(|&p| p == 0 || p == 255), "mask is binary");
        assert!(pixels.iter().any(|&p| p == 255), "mask keeps something");
    }
}

#[test]
fn run_consumes_event_file_as_single_sample() {
    let dir = tempfile::tempdir().unwrap();
    let sensor = SensorConfig::default();
    let events = synth_scene(&SceneParams::with_density(0.6), &sensor, 42);
    assert!(!events.is_empty());
    let events_path = dir.path().join("scene.csv");
    std::fs::write(&events_path, format_events(&events)).unwrap();

    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!("events = \"{}\"\n", events_path.display()),
    )
    .unwrap();

    let out_dir = dir.path().join("out");
    run_ok(bin()
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir));

    let (header, rows) = read_csv(&out_dir.join("stats.csv"));
    assert_eq!(header, STATS_HEADER);
    assert_eq!(rows.len(), 1, "an event file is one sample");
    assert_eq!(field::<u64>(&rows[0], 2), 680);
    assert!(field::<f64>(&rows[0], 1) > 0.0);
}

#[test]
fn run_on_empty_event_file_collapses_to_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let events_path = dir.path().join("empty.csv");
    std::fs::write(&events_path, "# no events recorded\n\n").unwrap();
    let config_path = dir.path().join("run.toml");
    std::fs::write(
        &config_path,
        format!("events = \"{}\"\n", events_path.display()),
    )
    .unwrap();

    let out_dir = dir.path().join("out");
    run_ok(bin()
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir));

    let (_, rows) = read_csv(&out_dir.join("stats.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(field::<f64>(&rows[0], 1), 0.0, "empty scene has zero sparsity");
    // selection falls back to a bare minimum instead of failing
    let retained: u64 = field(&rows[0], 3);
    assert!(retained > 0, "fallback keeps at least one token per layer");
    let retain: f64 = field(&rows[0], 4);
    assert!(retain < 0.2, "an empty scene must be heavily pruned, got {retain}");
    // artifacts still appear
    assert!(out_dir.join("heatmap_s000_stage1.pgm").exists());
    assert!(out_dir.join("mask_s000_stage4.pgm").exists());
}

#[test]
fn config_file_controls_sensor_and_backbone_shape() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("small.toml");
    std::fs::write(
        &config_path,
        r#"
width = 32
height = 32
channels = [8, 16, 32, 64]
window_sides = [4, 4, 2, 1]
strides = [4, 2, 2, 2]
depths = [1, 1, 1, 1]
densities = [0.5]
samples = 1
seed = 5
"#,
    )
    .unwrap();

    let out_dir = dir.path().join("out");
    run_ok(bin()
        .arg("run")
        .arg("--config")
        .arg(&config_path)
        .arg("--out")
        .arg(&out_dir));

    // 32x32 with strides 4/2/2/2 gives stage grids 8, 4, 2, 1
    for (stage, side) in [(1usize, 8usize), (2, 4), (3, 2), (4, 1)] {
        let (w, h, _) = read_pgm(&out_dir.join(format!("heatmap_s000_stage{stage}.pgm")));
        assert_eq!((w, h), (side, side));
    }
    let (_, rows) = read_csv(&out_dir.join("stats.csv"));
    assert_eq!(field::<u64>(&rows[0], 2), 2 * (64 + 16 + 4 + 1));
}

#[test]
fn sweep_single_point_agrees_with_run_means() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--seed", "9", "--samples", "2", "--density", "0.4"];

    let run_dir = dir.path().join("run");
    run_ok(bin().arg("run").args(common).arg("--out").arg(&run_dir));
    let (_, rows) = read_csv(&run_dir.join("stats.csv"));
    assert_eq!(rows.len(), 2);
    let mean_flops =
        rows.iter().map(|r| field::<u64>(r, 6) as f64).sum::<f64>() / rows.len() as f64;
    let mean_retain = rows.iter().map(|r| field::<f64>(r, 4)).sum::<f64>() / rows.len() as f64;

    let sweep_dir = dir.path().join("sweep");
    run_ok(bin().arg("sweep").args(common).arg("--out").arg(&sweep_dir));
    let (header, points) = read_csv(&sweep_dir.join("sweep.csv"));
    assert_eq!(header, SWEEP_HEADER);
    assert_eq!(points.len(), 1, "no grids requested: one point at the config's (a, b)");
    let point = &points[0];
    assert_eq!(field::<f64>(point, 0), 2e-4);
    assert_eq!(field::<f64>(point, 1), 0.099);
    assert!((field::<f64>(point, 2) - mean_flops).abs() <= 1e-6 * mean_flops);
    assert!((field::<f64>(point, 3) - mean_retain).abs() <= 1e-9);
}

#[test]
fn sweep_grid_covers_cartesian_product_and_is_monotone_in_b() {
    let dir = tempfile::tempdir().unwrap();
    let grid_a = [1e-4, 2e-4];
    let grid_b = [0.05, 0.099, 0.2];
    run_ok(bin()
        .args([
            "sweep", "--seed", "13", "--samples", "1", "--density", "0.3,0.7",
            "--grid-a", "0.0001,0.0002", "--grid-b", "0.05,0.099,0.2",
        ])
        .arg("--out")
        .arg(dir.path()));

    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(header, SWEEP_HEADER);
    assert_eq!(rows.len(), grid_a.len() * grid_b.len());

    // rows enumerate the grid a-major, b-minor
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(field::<f64>(row, 0), grid_a[i / grid_b.len()]);
        assert_eq!(field::<f64>(row, 1), grid_b[i % grid_b.len()]);
    }
    // within each a, a stricter threshold b never retains more
    for chunk in rows.chunks(grid_b.len()) {
        for pair in chunk.windows(2) {
            let (lo, hi) = (field::<f64>(&pair[0], 3), field::<f64>(&pair[1], 3));
            assert!(
                hi <= lo + 1e-12,
                "retain must not grow with b: {lo} -> {hi}"
            );
            let (fl, fh) = (field::<f64>(&pair[0], 2), field::<f64>(&pair[1], 2));
            assert!(fh <= fl + 1e-6, "compute must not grow with b: {fl} -> {fh}");
        }
    }
}

#[test]
fn compare_emits_variant_blocks_with_expected_baselines() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(bin()
        .args(["compare", "--seed", "21", "--samples", "1", "--density", "0.2,0.8"])
        .arg("--out")
        .arg(dir.path()));

    let (header, rows) = read_csv(&dir.path().join("compare.csv"));
    assert_eq!(header, COMPARE_HEADER);
    let n_samples = 2usize;
    assert_eq!(rows.len(), 4 * n_samples);

    let block = |name: &str| -> Vec<&Vec<String>> {
        rows.iter().filter(|r| r[0] == name).collect()
    };
    for name in ["sast", "sast-cb", "dense", "fixed-ratio"] {
        assert_eq!(block(name).len(), n_samples, "variant {name} row count");
    }

    // the dense baseline is its own reference: full retention, zero
    // divergence
    for row in block("dense") {
        assert_eq!(field::<f64>(row, 3), 1.0);
        assert_eq!(field::<f64>(row, 4), 0.0);
    }
    // fixed-ratio compute is scene-independent
    let fixed: Vec<u64> = block("fixed-ratio").iter().map(|r| field::<u64>(r, 2)).collect();
    assert!(fixed.windows(2).all(|w| w[0] == w[1]), "fixed-ratio a_flops vary: {fixed:?}");
    // the adaptive variants never exceed dense compute, and diverge from it
    let dense_flops: Vec<u64> = block("dense").iter().map(|r| field::<u64>(r, 2)).collect();
    for name in ["sast", "sast-cb"] {
        for (row, &dense) in block(name).iter().zip(&dense_flops) {
            assert!(field::<u64>(row, 2) <= dense);
            assert!(field::<f64>(row, 4) > 0.0, "{name} should diverge from dense");
        }
    }
}

#[test]
fn rejects_invalid_configs() {
    let dir = tempfile::tempdir().unwrap();

    let unknown = dir.path().join("unknown.toml");
    std::fs::write(&unknown, "no_such_option = 1\n").unwrap();
    let out = run_err(bin().arg("run").arg("--config").arg(&unknown));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("no_such_option"),
        "error should name the unknown key"
    );

    let bad_fn = dir.path().join("bad_fn.toml");
    std::fs::write(&bad_fn, "weight_fn = \"sine\"\n").unwrap();
    run_err(bin().arg("run").arg("--config").arg(&bad_fn));

    let bad_density = dir.path().join("bad_density.toml");
    std::fs::write(&bad_density, "densities = [1.5]\n").unwrap();
    run_err(bin().arg("run").arg("--config").arg(&bad_density));

    let missing_events = dir.path().join("missing_events.toml");
    std::fs::write(&missing_events, "events = \"/nonexistent/events.csv\"\n").unwrap();
    run_err(bin().arg("run").arg("--config").arg(&missing_events));

    let ragged_stages = dir.path().join("ragged.toml");
    std::fs::write(&ragged_stages, "channels = [32, 64]\n").unwrap();
    run_err(bin().arg("run").arg("--config").arg(&ragged_stages));
}

#[test]
fn numeric_mode_guard_blocks_mismatched_runs() {
    let dir = tempfile::tempdir().unwrap();
    let compiled = sast_core::numeric_mode();
    let other = if compiled == "f64" { "f32" } else { "f64" };

    let out = run_err(bin()
        .args(["run", "--samples", "1", "--density", "0.5"])
        .arg("--out")
        .arg(dir.path())
        .env("SAST_NUMERIC", other));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("SAST_NUMERIC"),
        "guard should explain the mismatch, got: {stderr}"
    );

    run_ok(bin()
        .args(["run", "--samples", "1", "--density", "0.5"])
        .arg("--out")
        .arg(dir.path())
        .env("SAST_NUMERIC", compiled));
}
