//! Disk artifacts: plain-text graymaps (P2) and sidecar scale records.

use anyhow::{Context, Result};
use sast_core::Real;
use std::fmt::Write as _;
use std::path::Path;

/// Write `values` (row-major `h x w`) as a P2 graymap, min-max scaled to
/// 0..255 per image. The linear scale is recorded in `<path>.scale.txt` as
/// `min max` so absolute magnitudes stay recoverable.
pub fn write_scaled_pgm(path: &Path, values: &[Real], w: usize, h: usize) -> Result<()> {
    assert_eq!(values.len(), w * h, "value count must match dimensions");
    let lo = values.iter().copied().fold(Real::INFINITY, Real::min);
    let hi = values.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let span = hi - lo;
    let gray = |v: Real| -> u8 {
        if span > 0.0 {
            (((v - lo) / span) * 255.0).round() as u8
        } else {
            0
        }
    };
    write_pgm(path, &values.iter().map(|&v| gray(v)).collect::<Vec<_>>(), w, h)?;
    let sidecar = path.with_extension("scale.txt");
    std::fs::write(&sidecar, format!("{lo} {hi}\n"))
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(())
}

/// Write a boolean mask as a P2 graymap with values {0, 255}.
pub fn write_mask_pgm(path: &Path, mask: &[bool], w: usize, h: usize) -> Result<()> {
    assert_eq!(mask.len(), w * h, "mask length must match dimensions");
    let pixels: Vec<u8> = mask.iter().map(|&k| if k { 255 } else { 0 }).collect();
    write_pgm(path, &pixels, w, h)
}

fn write_pgm(path: &Path, pixels: &[u8], w: usize, h: usize) -> Result<()> {
    let mut out = String::with_capacity(16 + pixels.len() * 4);
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{w} {h}");
    let _ = writeln!(out, "255");
    for row in pixels.chunks(w) {
        let line: Vec<String> = row.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Assemble a CSV document from a fixed header and preformatted rows.
pub fn csv_document(header: &str, rows: &[String]) -> String {
    let mut out = String::with_capacity(header.len() + rows.iter().map(String::len).sum::<usize>() + rows.len() + 1);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(row);
        out.push('\n');
    }
    out
}
