//! Analytic FLOPs accounting driven by selection results.
//!
//! Convention: one multiply-accumulate is two FLOPs; softmax, masking,
//! normalization, and pointwise activations are excluded. Attention counts
//! use the padded window length (fillers occupy real compute). Every count
//! here mirrors a matmul-instrumented kernel, so tests can require exact
//! equality against the thread-local MAC counter.

use crate::selection::SelectionResult;

/// FLOPs of masked window self-attention over `n_sel_w` windows padded to
/// `k_max` tokens of `c` channels split across `n_heads` heads: QKV
/// projections, logits, weighted sum, and output projection. The head
/// count must divide `c`; it cancels algebraically in every term
/// (`n_heads * k^2 * (c / n_heads) = k^2 * c`), so it only gates validity.
pub fn attention_flops(n_sel_w: usize, k_max: usize, c: usize, n_heads: usize) -> u64 {
    assert!(
        n_heads > 0 && c % n_heads == 0,
        "head count {n_heads} must divide channels {c}"
    );
    let (n, k, c) = (n_sel_w as u64, k_max as u64, c as u64);
    2 * n * (3 * k * c * c + k * k * c + k * k * c + k * c * c)
}

/// FLOPs of the two-layer MLP over `n` tokens at expansion `h`.
pub fn mlp_flops(n_tokens: usize, c: usize, h: usize) -> u64 {
    let (n, c, h) = (n_tokens as u64, c as u64, h as u64);
    2 * 2 * n * c * (h * c)
}

/// FLOPs of the scoring stage over `n` tokens: the response projection plus
/// the exponential-linear product over `bins` sparsity entries.
pub fn scoring_flops(n_tokens: usize, c: usize, bins: usize) -> u64 {
    let (n, c, b) = (n_tokens as u64, c as u64, bins as u64);
    2 * (n * c * c + c * b)
}

/// FLOPs of the competition unit over `n` tokens: two p-norm reduction
/// passes (token-level and window-level), one accumulate per element.
pub fn selection_flops(n_tokens: usize, c: usize) -> u64 {
    let (n, c) = (n_tokens as u64, c as u64);
    2 * 2 * n * c
}

/// FLOPs of the strided patch embedding producing `n` tokens of `c_out`
/// channels from flattened patches of `patch_len` values.
pub fn embed_flops(n_tokens: usize, c_out: usize, patch_len: usize) -> u64 {
    2 * (n_tokens as u64) * (c_out as u64) * (patch_len as u64)
}

/// FLOPs of 2x2 patch merging producing `n` tokens of `c_out` channels
/// from `4 * c_in` gathered inputs.
pub fn merge_flops(n_out_tokens: usize, c_out: usize, c_in: usize) -> u64 {
    2 * (n_out_tokens as u64) * (c_out as u64) * 4 * (c_in as u64)
}

/// FLOPs of one LSTM step over `n` positions with matched input/hidden
/// width `c` (eight `c x c` gate products per position).
pub fn lstm_flops(n_tokens: usize, c: usize) -> u64 {
    let (n, c) = (n_tokens as u64, c as u64);
    2 * n * 8 * c * c
}

/// Per-layer FLOPs broken down by pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerFlops {
    pub attention: u64,
    pub mlp: u64,
    pub scoring: u64,
    pub selection: u64,
}

impl LayerFlops {
    /// Attention-related FLOPs: the transformer compute (attention + MLP),
    /// excluding scoring/selection overhead and all convolution-like maps.
    pub fn a_flops(&self) -> u64 {
        self.attention + self.mlp
    }

    pub fn total(&self) -> u64 {
        self.attention + self.mlp + self.scoring + self.selection
    }
}

/// Analytic FLOPs of one layer under a given selection.
pub fn layer_report(
    selection: &SelectionResult,
    n_tokens_per_window: usize,
    c: usize,
    mlp_expansion: usize,
    bins: usize,
) -> LayerFlops {
    let n_total = selection.n_windows() * n_tokens_per_window;
    let k_max = selection
        .token_keep
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0);
    LayerFlops {
        // the head count cancels in the attention formula, so the report
        // does not need to know it
        attention: attention_flops(selection.windows_kept(), k_max, c, 1),
        mlp: mlp_flops(selection.tokens_kept(), c, mlp_expansion),
        scoring: scoring_flops(n_total, c, bins),
        selection: selection_flops(n_total, c),
    }
}

/// Aggregated FLOPs of a backbone run.
#[derive(Debug, Clone, Default)]
pub struct FlopsReport {
    pub per_layer: Vec<LayerFlops>,
    /// Attention-related FLOPs actually spent.
    pub a_flops: u64,
    /// Attention-related FLOPs of the same network under keep-all
    /// selection.
    pub dense_a_flops: u64,
    /// Embedding, merging, and LSTM compute.
    pub backbone_flops: u64,
    /// Everything: transformer layers (including scoring/selection
    /// overhead) plus backbone compute.
    pub total_flops: u64,
}

impl FlopsReport {
    pub fn push_layer(&mut self, actual: LayerFlops, dense: LayerFlops) {
        self.per_layer.push(actual);
        self.a_flops += actual.a_flops();
        self.dense_a_flops += dense.a_flops();
        self.total_flops += actual.total();
    }

    pub fn push_backbone(&mut self, flops: u64) {
        self.backbone_flops += flops;
        self.total_flops += flops;
    }

    /// Fold another report into this one (multi-step aggregation).
    pub fn merge(&mut self, other: &FlopsReport) {
        self.per_layer.extend_from_slice(&other.per_layer);
        self.a_flops += other.a_flops;
        self.dense_a_flops += other.dense_a_flops;
        self.backbone_flops += other.backbone_flops;
        self.total_flops += other.total_flops;
    }
}
