//! Event streams: parsing, synthesis, and voxel-grid conversion.
//!
//! An event is `(t, x, y, polarity)` with microsecond timestamps. A sample is
//! a fixed-duration slice of the stream, rasterized into a count voxel with
//! `n_time_bins` temporal bins per polarity.

use crate::tensorkit::Tensor;
use crate::{Error, Real, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

/// One camera event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    /// Timestamp in microseconds, non-decreasing within a stream.
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// `false` = OFF (darker), `true` = ON (brighter).
    pub polarity: bool,
}

/// Sensor geometry plus voxelization settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensorConfig {
    pub width: usize,
    pub height: usize,
    pub n_time_bins: usize,
    /// Length of one sample in microseconds.
    pub sample_duration_us: u64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            width: 64,
            height: 64,
            n_time_bins: 2,
            sample_duration_us: 50_000,
        }
    }
}

impl SensorConfig {
    /// Channel count of the voxel grid: one bin per (time bin, polarity).
    pub fn voxel_bins(&self) -> usize {
        self.n_time_bins * 2
    }
}

/// Parse event CSV with one `t,x,y,p` record per line.
///
/// Blank lines and lines starting with `#` are skipped; whitespace around
/// fields is tolerated. Timestamps must be non-decreasing; polarity is `0`
/// or `1`. Coordinates are validated against the sensor.
pub fn parse_events(text: &str, sensor: &SensorConfig) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    let mut prev_t: Option<u64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 4 comma-separated fields, got {}", fields.len()),
            });
        }
        let t: u64 = fields[0].parse().map_err(|_| Error::Parse {
            line,
            reason: format!("bad timestamp {:?}", fields[0]),
        })?;
        let x: u16 = fields[1].parse().map_err(|_| Error::Parse {
            line,
            reason: format!("bad x {:?}", fields[1]),
        })?;
        let y: u16 = fields[2].parse().map_err(|_| Error::Parse {
            line,
            reason: format!("bad y {:?}", fields[2]),
        })?;
        let polarity = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line,
                    reason: format!("bad polarity {other:?}"),
                })
            }
        };
        if (x as usize) >= sensor.width || (y as usize) >= sensor.height {
            return Err(Error::Parse {
                line,
                reason: format!(
                    "coordinates ({x}, {y}) outside {}x{} sensor",
                    sensor.width, sensor.height
                ),
            });
        }
        if let Some(prev) = prev_t {
            if t < prev {
                return Err(Error::EventOrder { line, t, prev });
            }
        }
        prev_t = Some(t);
        events.push(Event { t, x, y, polarity });
    }
    Ok(events)
}

/// Serialize events in the same CSV format [`parse_events`] reads.
pub fn format_events(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&format!(
            "{},{},{},{}\n",
            e.t,
            e.x,
            e.y,
            u8::from(e.polarity)
        ));
    }
    out
}

/// Accumulate events of one sample window into a count voxel
/// `[n_time_bins * 2, height, width]`.
///
/// Bin layout: channel `2 * k + p` holds time bin `k`, polarity `p`
/// (OFF = 0, ON = 1). Events are assigned to time bins by
/// `floor(n_bins * (t - t0) / duration)`, clamped to the last bin so the
/// closing edge is inclusive. Events outside `[t0, t0 + duration]` are
/// ignored.
pub fn voxelize(events: &[Event], t0: u64, sensor: &SensorConfig) -> Tensor {
    let bins = sensor.voxel_bins();
    let mut voxel = Tensor::zeros(&[bins, sensor.height, sensor.width]);
    let dur = sensor.sample_duration_us;
    for e in events {
        if e.t < t0 || e.t > t0 + dur {
            continue;
        }
        let rel = e.t - t0;
        let mut k = ((rel as u128 * sensor.n_time_bins as u128) / dur as u128) as usize;
        if k >= sensor.n_time_bins {
            k = sensor.n_time_bins - 1;
        }
        let ch = 2 * k + usize::from(e.polarity);
        let idx = [ch, e.y as usize, e.x as usize];
        let v = voxel.at(&idx);
        voxel.set(&idx, v + 1.0);
    }
    voxel
}

/// Fraction of non-zero cells in each channel of a `[bins, h, w]` voxel.
/// This is the per-bin event-density measure the scoring stage consumes.
pub fn event_sparsity(voxel: &Tensor) -> Result<Tensor> {
    if voxel.shape().len() != 3 {
        return Err(Error::shape(format!(
            "event sparsity expects [bins, h, w], got {:?}",
            voxel.shape()
        )));
    }
    let (bins, h, w) = (voxel.shape()[0], voxel.shape()[1], voxel.shape()[2]);
    let cells = (h * w) as Real;
    let mut r = Tensor::zeros(&[bins]);
    for b in 0..bins {
        let mut nonzero = 0usize;
        for row in 0..h {
            for col in 0..w {
                if voxel.at(&[b, row, col]) != 0.0 {
                    nonzero += 1;
                }
            }
        }
        r.set(&[b], nonzero as Real / cells);
    }
    Ok(r)
}

/// Max-pool a `[bins, h, w]` voxel by an integer factor in both spatial
/// axes, matching the receptive field of a downsampled token grid. Max
/// pooling preserves the non-zero footprint: a coarse cell is non-zero
/// exactly when any covered fine cell is.
pub fn downsample_voxel(voxel: &Tensor, factor: usize) -> Result<Tensor> {
    if voxel.shape().len() != 3 {
        return Err(Error::shape(format!(
            "downsample expects [bins, h, w], got {:?}",
            voxel.shape()
        )));
    }
    let (bins, h, w) = (voxel.shape()[0], voxel.shape()[1], voxel.shape()[2]);
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(format!(
            "factor {factor} does not divide {h}x{w}"
        )));
    }
    let (ho, wo) = (h / factor, w / factor);
    let mut out = Tensor::zeros(&[bins, ho, wo]);
    for b in 0..bins {
        for r in 0..h {
            for c in 0..w {
                let idx = [b, r / factor, c / factor];
                let v = out.at(&idx);
                out.set(&idx, v.max(voxel.at(&[b, r, c])));
            }
        }
    }
    Ok(out)
}

/// Parameters of the synthetic moving-square scene generator.
#[derive(Debug, Clone)]
pub struct SceneParams {
    /// Activity level in `[0, 1]`: scales object speed, and with it how
    /// widely the (fixed) event budget spreads over the sensor.
    pub density: Real,
    pub n_objects: usize,
    /// Side length of each square object, in pixels.
    pub object_side: usize,
    /// Peak per-pixel event rate at density 1, events per covered pixel
    /// per simulation step.
    pub peak_rate: Real,
    /// Pixels an object travels over the whole sample at density 1.
    pub max_travel: Real,
    /// Simulation steps per sample.
    pub n_steps: usize,
}

impl SceneParams {
    pub fn with_density(density: Real) -> Self {
        SceneParams {
            density,
            n_objects: 3,
            object_side: 7,
            peak_rate: 1.4,
            max_travel: 48.0,
            n_steps: 32,
        }
    }
}

/// Generate one sample of events from moving bright squares on a dark
/// background. Deterministic in `seed`.
///
/// Each object moves along a straight line with speed proportional to
/// `density` while covered pixels emit Poisson counts at a fixed rate, so
/// a slow (low-density) scene piles events onto few pixels and a fast
/// (high-density) scene spreads a similar budget over a wide swath — the
/// regime distinction the sparsity-controlled scores react to. Events are
/// returned sorted by timestamp.
pub fn synth_scene(params: &SceneParams, sensor: &SensorConfig, seed: u64) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = params.density.clamp(0.0, 1.0);
    if density == 0.0 {
        return Vec::new();
    }
    let (w, h) = (sensor.width as Real, sensor.height as Real);
    let travel = params.max_travel * density;
    let rate = params.peak_rate;

    struct Body {
        x0: Real,
        y0: Real,
        dx: Real,
        dy: Real,
        bright_on: bool,
    }
    let mut bodies = Vec::with_capacity(params.n_objects);
    for _ in 0..params.n_objects {
        let angle: Real = rng.gen_range(0.0..(2.0 * std::f64::consts::PI as Real));
        bodies.push(Body {
            x0: rng.gen_range(0.0..w),
            y0: rng.gen_range(0.0..h),
            dx: angle.cos() * travel,
            dy: angle.sin() * travel,
            bright_on: rng.gen_bool(0.5),
        });
    }

    let mut events = Vec::new();
    let side = params.object_side as i64;
    let poisson = Poisson::new(rate.max(1e-9) as f64).unwrap();
    for step in 0..params.n_steps {
        let phase = step as Real / params.n_steps as Real;
        let t_lo = sensor.sample_duration_us as Real * phase;
        let t_hi = sensor.sample_duration_us as Real * (step as Real + 1.0)
            / params.n_steps as Real;
        for body in &bodies {
            let cx = body.x0 + body.dx * phase;
            let cy = body.y0 + body.dy * phase;
            // leading edge emits the object's polarity, trailing edge the
            // opposite; interior pixels emit a mix
            for oy in 0..side {
                for ox in 0..side {
                    let px = (cx as i64 + ox).rem_euclid(sensor.width as i64) as u16;
                    let py = (cy as i64 + oy).rem_euclid(sensor.height as i64) as u16;
                    let count = poisson.sample(&mut rng) as usize;
                    for _ in 0..count {
                        let t = rng.gen_range(t_lo..t_hi).round() as u64;
                        let leading = ox >= side / 2;
                        let polarity = body.bright_on == leading;
                        events.push(Event {
                            t: t.min(sensor.sample_duration_us),
                            x: px,
                            y: py,
                            polarity,
                        });
                    }
                }
            }
        }
    }
    events.sort_by_key(|e| e.t);
    events
}
