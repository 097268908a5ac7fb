//! Spatial window partitioning for token maps.
//!
//! Two complementary layouts over a `[h, w, c]` token map: `Window` groups
//! contiguous `ws x ws` blocks, `Grid` groups tokens at stride
//! `(h / ws, w / ws)` so each group spans the full map. Both produce
//! `n_windows = (h / ws) * (w / ws)` groups of `ws * ws` tokens, and both
//! are exact bijections with their reverse.

use super::Tensor;
use crate::{Error, Result};

/// Which of the two alternating partition layouts a layer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionKind {
    /// Contiguous `ws x ws` blocks.
    Window,
    /// Strided (dilated) groups spanning the whole map.
    Grid,
}

/// Geometry of one partitioning of an `h x w` token map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowGeometry {
    pub kind: PartitionKind,
    pub h: usize,
    pub w: usize,
    pub window_side: usize,
}

impl WindowGeometry {
    pub fn new(kind: PartitionKind, h: usize, w: usize, window_side: usize) -> Result<Self> {
        if window_side == 0 || h % window_side != 0 || w % window_side != 0 {
            return Err(Error::shape(format!(
                "window side {window_side} does not tile {h}x{w}"
            )));
        }
        Ok(WindowGeometry {
            kind,
            h,
            w,
            window_side,
        })
    }

    /// Windows along the vertical axis.
    pub fn rows(&self) -> usize {
        self.h / self.window_side
    }

    /// Windows along the horizontal axis.
    pub fn cols(&self) -> usize {
        self.w / self.window_side
    }

    pub fn n_windows(&self) -> usize {
        self.rows() * self.cols()
    }

    /// Tokens per window.
    pub fn tokens_per_window(&self) -> usize {
        self.window_side * self.window_side
    }

    /// Map `(window, slot)` back to `(row, col)` on the token map.
    pub fn spatial_of(&self, window: usize, slot: usize) -> (usize, usize) {
        let ws = self.window_side;
        let (wr, wc) = (window / self.cols(), window % self.cols());
        let (sr, sc) = (slot / ws, slot % ws);
        match self.kind {
            PartitionKind::Window => (wr * ws + sr, wc * ws + sc),
            // grid groups are indexed by their phase inside the stride cell
            PartitionKind::Grid => (sr * self.rows() + wr, sc * self.cols() + wc),
        }
    }

    /// Map a spatial `(row, col)` to its `(window, slot)`.
    pub fn slot_of(&self, row: usize, col: usize) -> (usize, usize) {
        let ws = self.window_side;
        match self.kind {
            PartitionKind::Window => {
                let (wr, wc) = (row / ws, col / ws);
                let (sr, sc) = (row % ws, col % ws);
                (wr * self.cols() + wc, sr * ws + sc)
            }
            PartitionKind::Grid => {
                let (sr, wr) = (row / self.rows(), row % self.rows());
                let (sc, wc) = (col / self.cols(), col % self.cols());
                (wr * self.cols() + wc, sr * ws + sc)
            }
        }
    }
}

/// Token map partitioned into windows: features `[n_windows, n_tokens, c]`
/// plus the geometry needed to invert the layout.
#[derive(Debug, Clone)]
pub struct PartitionedTokens {
    pub geometry: WindowGeometry,
    pub feats: Tensor,
}

fn partition_with(geometry: WindowGeometry, tokens: &Tensor) -> Result<PartitionedTokens> {
    if tokens.shape().len() != 3 {
        return Err(Error::shape(format!(
            "partition expects [h, w, c], got {:?}",
            tokens.shape()
        )));
    }
    let c = tokens.shape()[2];
    let (nw, nt) = (geometry.n_windows(), geometry.tokens_per_window());
    let mut feats = Tensor::zeros(&[nw, nt, c]);
    for win in 0..nw {
        for slot in 0..nt {
            let (r, col) = geometry.spatial_of(win, slot);
            feats
                .row_mut(win * nt + slot)
                .copy_from_slice(tokens.row(r * geometry.w + col));
        }
    }
    Ok(PartitionedTokens { geometry, feats })
}

fn reverse_with(parts: &PartitionedTokens) -> Result<Tensor> {
    let g = parts.geometry;
    let (nw, nt) = (g.n_windows(), g.tokens_per_window());
    if parts.feats.shape().len() != 3
        || parts.feats.shape()[0] != nw
        || parts.feats.shape()[1] != nt
    {
        return Err(Error::shape(format!(
            "partitioned features {:?} do not match geometry {}x{}",
            parts.feats.shape(),
            nw,
            nt
        )));
    }
    let c = parts.feats.shape()[2];
    let mut tokens = Tensor::zeros(&[g.h, g.w, c]);
    for win in 0..nw {
        for slot in 0..nt {
            let (r, col) = g.spatial_of(win, slot);
            tokens
                .row_mut(r * g.w + col)
                .copy_from_slice(parts.feats.row(win * nt + slot));
        }
    }
    Ok(tokens)
}

/// Partition into contiguous `ws x ws` windows.
pub fn window_partition(tokens: &Tensor, window_side: usize) -> Result<PartitionedTokens> {
    let (h, w) = (tokens.shape()[0], tokens.shape()[1]);
    partition_with(
        WindowGeometry::new(PartitionKind::Window, h, w, window_side)?,
        tokens,
    )
}

/// Invert [`window_partition`].
pub fn window_reverse(parts: &PartitionedTokens) -> Result<Tensor> {
    reverse_with(parts)
}

/// Partition into dilated groups: group `(wr, wc)` holds every token at
/// `(sr * (h / ws) + wr, sc * (w / ws) + wc)`.
pub fn grid_partition(tokens: &Tensor, window_side: usize) -> Result<PartitionedTokens> {
    let (h, w) = (tokens.shape()[0], tokens.shape()[1]);
    partition_with(
        WindowGeometry::new(PartitionKind::Grid, h, w, window_side)?,
        tokens,
    )
}

/// Invert [`grid_partition`].
pub fn grid_reverse(parts: &PartitionedTokens) -> Result<Tensor> {
    reverse_with(parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Token map whose channel 0 stores `row * w + col`, so every gathered
    /// value identifies its source position.
    fn tagged_map(h: usize, w: usize) -> Tensor {
        let mut t = Tensor::zeros(&[h, w, 2]);
        for r in 0..h {
            for c in 0..w {
                t.set(&[r, c, 0], (r * w + c) as crate::Real);
                t.set(&[r, c, 1], -((r * w + c) as crate::Real));
            }
        }
        t
    }

    #[test]
    fn window_partition_four_by_four() {
        // 4x4 map, window side 2: window 0 is rows 0-1, cols 0-1
        let parts = window_partition(&tagged_map(4, 4), 2).unwrap();
        assert_eq!(parts.feats.shape(), &[4, 4, 2]);
        let expect_w0 = [0.0, 1.0, 4.0, 5.0];
        for (slot, &e) in expect_w0.iter().enumerate() {
            assert_eq!(parts.feats.at(&[0, slot, 0]), e);
        }
        // token (2, 3) -> window index arithmetic: window row 1, window
        // col 1 -> window 3; slot row 0, slot col 1 -> slot 1
        assert_eq!(parts.geometry.slot_of(2, 3), (3, 1));
        assert_eq!(parts.feats.at(&[3, 1, 0]), (2 * 4 + 3) as crate::Real);
    }

    #[test]
    fn grid_partition_four_by_four() {
        // 4x4 map, window side 2: stride is 2, group 0 holds positions
        // (0,0), (0,2), (2,0), (2,2)
        let parts = grid_partition(&tagged_map(4, 4), 2).unwrap();
        assert_eq!(parts.feats.shape(), &[4, 4, 2]);
        let expect_g0 = [0.0, 2.0, 8.0, 10.0];
        for (slot, &e) in expect_g0.iter().enumerate() {
            assert_eq!(parts.feats.at(&[0, slot, 0]), e);
        }
        // spatial (1, 3): phase (1, 1) -> group 3; cell (0, 1) -> slot 1
        assert_eq!(parts.geometry.slot_of(1, 3), (3, 1));
    }

    #[test]
    fn both_kinds_cover_every_position_once() {
        for kind in [PartitionKind::Window, PartitionKind::Grid] {
            let g = WindowGeometry::new(kind, 6, 4, 2).unwrap();
            let mut seen = vec![false; 6 * 4];
            for win in 0..g.n_windows() {
                for slot in 0..g.tokens_per_window() {
                    let (r, c) = g.spatial_of(win, slot);
                    assert!(!seen[r * 4 + c], "{kind:?} repeats ({r},{c})");
                    seen[r * 4 + c] = true;
                    assert_eq!(g.slot_of(r, c), (win, slot));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn indivisible_side_rejected() {
        assert!(window_partition(&tagged_map(4, 4), 3).is_err());
        assert!(grid_partition(&tagged_map(4, 6), 4).is_err());
    }

    proptest! {
        #[test]
        fn window_roundtrip(hw in 1usize..4, ww in 1usize..4, ws in 1usize..4) {
            let (h, w) = (hw * ws, ww * ws);
            let map = tagged_map(h, w);
            let parts = window_partition(&map, ws).unwrap();
            let back = window_reverse(&parts).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn grid_roundtrip(hw in 1usize..4, ww in 1usize..4, ws in 1usize..4) {
            let (h, w) = (hw * ws, ww * ws);
            let map = tagged_map(h, w);
            let parts = grid_partition(&map, ws).unwrap();
            let back = grid_reverse(&parts).unwrap();
            prop_assert_eq!(back, map);
        }

        #[test]
        fn grid_groups_span_strides(ws in 1usize..5) {
            let (h, w) = (ws * 3, ws * 2);
            let g = WindowGeometry::new(PartitionKind::Grid, h, w, ws).unwrap();
            // every group touches each stride cell exactly once
            for win in 0..g.n_windows() {
                let mut rows_seen = vec![0usize; ws];
                for slot in 0..g.tokens_per_window() {
                    let (r, _) = g.spatial_of(win, slot);
                    rows_seen[r / g.rows()] += 1;
                }
                for &count in &rows_seen {
                    prop_assert_eq!(count, ws);
                }
            }
        }
    }
}
