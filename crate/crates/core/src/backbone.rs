//! Layers, blocks, and the four-stage recurrent hierarchy.
//!
//! One layer: partition the token map, score the raw partitioned tokens
//! against the event sparsity, select windows then tokens, run masked
//! window attention and the MLP on the kept tokens (pre-norm residual
//! branches), optionally broadcast context, and scatter results back so
//! every dropped position keeps its input value bit-for-bit. A block runs
//! a window-partition layer, a grid-partition layer that reuses the first
//! layer's kept positions, and an LSTM step. Stages downsample with a
//! strided patch embedding (stage one, plus a positional encoding) or 2x2
//! patch merging.

use crate::events::{downsample_voxel, event_sparsity, SensorConfig};
use crate::flopsmeter::{
    embed_flops, layer_report, lstm_flops, merge_flops, FlopsReport, LayerFlops,
};
use crate::scoring::{score_tokens, ScoringParams, WeightFn};
use crate::selection::{
    gather, intensified_scores, select, select_masked, thresholds, CompetitionParams,
    RaggedTokens, SelectedWindow, SelectionResult,
};
use crate::sparse_attention::{
    context_broadcast, mswsa, pad_pack, scatter_back, sparse_mlp, AttentionParams, MlpParams,
    PackedWindows,
};
use crate::tensorkit::{
    grid_partition, layer_norm, lstm_step, p_norm, patch_embed, patch_merge, sinusoidal_pe,
    window_partition, window_reverse, LstmWeights, PartitionKind, PartitionedTokens, Tensor,
    WindowGeometry,
};
use crate::{Error, Real, Result};

/// Per-token normalization parameters of one residual branch.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl NormParams {
    pub fn reference(channels: usize) -> Self {
        NormParams {
            gamma: Tensor::filled(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

/// Everything one layer needs.
#[derive(Debug, Clone)]
pub struct LayerConfig {
    pub partition_kind: PartitionKind,
    pub window_side: usize,
    pub scoring: ScoringParams,
    pub competition: CompetitionParams,
    pub attention: AttentionParams,
    pub mlp: MlpParams,
    /// Pre-norm of the attention branch.
    pub norm1: NormParams,
    /// Pre-norm of the MLP branch.
    pub norm2: NormParams,
    pub cb_enabled: bool,
    /// Layer 2 of a block reuses layer 1's kept token positions.
    pub share_token_selection: bool,
}

/// How a layer decides what to keep.
enum SelectionMode<'a> {
    /// Score-driven selection; optionally constrained to a shared spatial
    /// token mask.
    Adaptive { shared: Option<&'a [bool]> },
    /// Baseline: keep every token of every window.
    KeepAll,
    /// Baseline: keep all tokens of the top-k windows by L2 activation.
    TopKWindows(usize),
}

/// Observability record of one layer application.
#[derive(Debug, Clone)]
pub struct LayerStats {
    pub tokens_total: usize,
    pub tokens_kept: usize,
    pub windows_total: usize,
    pub windows_kept: usize,
    pub retain_ratio_tokens: Real,
    pub retain_ratio_windows: Real,
    pub flops: LayerFlops,
    /// Same layer under keep-all selection.
    pub dense_flops: LayerFlops,
    /// `[H_t, W_t]` token scores mapped back to the spatial grid.
    pub score_heatmap: Tensor,
    /// Spatial kept-token mask, row-major `H_t * W_t`.
    pub keep_mask: Vec<bool>,
}

fn partition(tokens: &Tensor, cfg: &LayerConfig) -> Result<PartitionedTokens> {
    match cfg.partition_kind {
        PartitionKind::Window => window_partition(tokens, cfg.window_side),
        PartitionKind::Grid => grid_partition(tokens, cfg.window_side),
    }
}

fn ragged_add(base: &RaggedTokens, update: &RaggedTokens) -> Result<RaggedTokens> {
    if base.windows.len() != update.windows.len() {
        return Err(Error::arity("residual arity mismatch"));
    }
    let mut windows = Vec::with_capacity(base.windows.len());
    for (a, b) in base.windows.iter().zip(&update.windows) {
        windows.push(SelectedWindow {
            window: a.window,
            token_ids: a.token_ids.clone(),
            feats: a.feats.add(&b.feats)?,
        });
    }
    Ok(RaggedTokens {
        windows,
        channels: base.channels,
    })
}

fn ragged_layer_norm(x: &RaggedTokens, norm: &NormParams) -> Result<RaggedTokens> {
    let mut windows = Vec::with_capacity(x.windows.len());
    for sw in &x.windows {
        windows.push(SelectedWindow {
            window: sw.window,
            token_ids: sw.token_ids.clone(),
            feats: layer_norm(&sw.feats, &norm.gamma, &norm.beta)?,
        });
    }
    Ok(RaggedTokens {
        windows,
        channels: x.channels,
    })
}

/// Map a per-(window, slot) quantity back onto the spatial grid.
fn to_spatial<T: Copy>(
    geometry: &WindowGeometry,
    default: T,
    mut value: impl FnMut(usize, usize) -> Option<T>,
) -> Vec<T> {
    let mut out = vec![default; geometry.h * geometry.w];
    for win in 0..geometry.n_windows() {
        for slot in 0..geometry.tokens_per_window() {
            if let Some(v) = value(win, slot) {
                let (r, c) = geometry.spatial_of(win, slot);
                out[r * geometry.w + c] = v;
            }
        }
    }
    out
}

fn layer_with_mode(
    tokens: &Tensor,
    sparsity: &Tensor,
    cfg: &LayerConfig,
    mode: SelectionMode,
) -> Result<(Tensor, SelectionResult, LayerStats)> {
    let parts = partition(tokens, cfg)?;
    let geometry = parts.geometry;
    let (n_w, n_t) = (geometry.n_windows(), geometry.tokens_per_window());

    // scores and weighting are computed on the raw partitioned tokens so
    // they track event magnitudes; normalization lives inside the
    // residual branches below
    let (score_tensors, t_star) = score_tokens(&parts.feats, sparsity, &cfg.scoring)?;
    let scores = intensified_scores(&score_tensors.s_i, &cfg.competition)?;
    let th = thresholds(cfg.competition.b, &geometry);

    let (selection, t_s) = match mode {
        SelectionMode::Adaptive { shared: None } => select(&t_star, &scores, &th)?,
        SelectionMode::Adaptive {
            shared: Some(mask),
        } => {
            if mask.len() != geometry.h * geometry.w {
                return Err(Error::arity(format!(
                    "shared mask length {} vs {} positions",
                    mask.len(),
                    geometry.h * geometry.w
                )));
            }
            let mut allowed = vec![false; n_w * n_t];
            for w in 0..n_w {
                for t in 0..n_t {
                    let (r, c) = geometry.spatial_of(w, t);
                    allowed[w * n_t + t] = mask[r * geometry.w + c];
                }
            }
            select_masked(&t_star, &scores, &th, &allowed)?
        }
        SelectionMode::KeepAll => {
            let sel = SelectionResult::keep_all(n_w, n_t);
            let gathered = gather(&t_star, &sel)?;
            (sel, gathered)
        }
        SelectionMode::TopKWindows(k) => {
            let norms = p_norm(&parts.feats, 2.0, &[1, 2])?;
            let mut order: Vec<usize> = (0..n_w).collect();
            order.sort_by(|&a, &b| {
                norms.data()[b]
                    .partial_cmp(&norms.data()[a])
                    .expect("window norms are finite")
                    .then(a.cmp(&b))
            });
            let mut window_keep = vec![false; n_w];
            for &w in order.iter().take(k.clamp(1, n_w)) {
                window_keep[w] = true;
            }
            let token_keep = window_keep
                .iter()
                .map(|&kept| if kept { (0..n_t).collect() } else { Vec::new() })
                .collect();
            let sel = SelectionResult {
                window_keep,
                token_keep,
            };
            let gathered = gather(&t_star, &sel)?;
            (sel, gathered)
        }
    };

    // attention branch: pre-norm, masked attention, residual on T_s
    let packed = pad_pack(&t_s, &t_star, &selection)?;
    let normed_packed = PackedWindows {
        feats: layer_norm(&packed.feats, &cfg.norm1.gamma, &cfg.norm1.beta)?,
        ..packed
    };
    let attn = mswsa(&normed_packed, &cfg.attention)?;
    let y = ragged_add(&t_s, &attn)?;

    // MLP branch: pre-norm, sparse MLP, residual
    let mlp_out = sparse_mlp(&ragged_layer_norm(&y, &cfg.norm2)?, &cfg.mlp)?;
    let y = ragged_add(&y, &mlp_out)?;

    // context broadcast applies to the adaptive pipeline only; baselines
    // stay plain attention + MLP
    let cb_on = cfg.cb_enabled && matches!(mode, SelectionMode::Adaptive { .. });
    let y = context_broadcast(&y, cb_on);

    let out_feats = scatter_back(&y, &parts.feats, &selection)?;
    let out = window_reverse(&PartitionedTokens {
        geometry,
        feats: out_feats,
    })?;

    let c = cfg.attention.channels();
    let flops = layer_report(&selection, n_t, c, cfg.mlp.expansion(), cfg.scoring.bins());
    let dense_flops = layer_report(
        &SelectionResult::keep_all(n_w, n_t),
        n_t,
        c,
        cfg.mlp.expansion(),
        cfg.scoring.bins(),
    );
    let heatmap = to_spatial(&geometry, 0.0, |w, t| Some(scores.s_t.at(&[w, t])));
    let keep_mask = to_spatial(&geometry, false, |w, t| {
        Some(selection.window_keep[w] && selection.token_keep[w].binary_search(&t).is_ok())
    });
    let stats = LayerStats {
        tokens_total: n_w * n_t,
        tokens_kept: selection.tokens_kept(),
        windows_total: n_w,
        windows_kept: selection.windows_kept(),
        retain_ratio_tokens: selection.tokens_kept() as Real / (n_w * n_t) as Real,
        retain_ratio_windows: selection.windows_kept() as Real / n_w as Real,
        flops,
        dense_flops,
        score_heatmap: Tensor::from_vec(&[geometry.h, geometry.w], heatmap)?,
        keep_mask,
    };
    Ok((out, selection, stats))
}

/// One adaptive layer. `shared` optionally constrains the token filter to
/// a spatial mask from an earlier layer of the same block.
pub fn sast_layer(
    tokens: &Tensor,
    sparsity: &Tensor,
    cfg: &LayerConfig,
    shared: Option<&[bool]>,
) -> Result<(Tensor, SelectionResult, LayerStats)> {
    layer_with_mode(tokens, sparsity, cfg, SelectionMode::Adaptive { shared })
}

/// Baseline: the same layer with selection forced to keep-all (full window
/// attention, no pruning, no context broadcast).
pub fn dense_layer(
    tokens: &Tensor,
    sparsity: &Tensor,
    cfg: &LayerConfig,
) -> Result<(Tensor, LayerStats)> {
    layer_with_mode(tokens, sparsity, cfg, SelectionMode::KeepAll).map(|(t, _, s)| (t, s))
}

/// Baseline: prune a fixed fraction of windows by L2 activation, keep all
/// tokens of surviving windows, no context broadcast.
pub fn fixed_ratio_layer(
    tokens: &Tensor,
    sparsity: &Tensor,
    cfg: &LayerConfig,
    ratio: Real,
) -> Result<(Tensor, LayerStats)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::config(format!(
            "pruning ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let side = cfg.window_side;
    let n_w = (tokens.shape()[0] / side) * (tokens.shape()[1] / side);
    let k = (((1.0 - ratio) * n_w as Real).round() as usize).clamp(1, n_w);
    layer_with_mode(tokens, sparsity, cfg, SelectionMode::TopKWindows(k)).map(|(t, _, s)| (t, s))
}

/// Recurrent state of one block.
#[derive(Debug, Clone)]
pub struct BlockState {
    pub h: Tensor,
    pub c: Tensor,
}

impl BlockState {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        BlockState {
            h: Tensor::zeros(&[height, width, channels]),
            c: Tensor::zeros(&[height, width, channels]),
        }
    }
}

/// Two layers (window then grid partition) plus an LSTM step.
#[derive(Debug, Clone)]
pub struct Block {
    pub layer1: LayerConfig,
    pub layer2: LayerConfig,
    pub lstm: LstmWeights,
}

/// Which pipeline the backbone runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackboneVariant {
    /// Score-driven selection (the adaptive pipeline).
    Adaptive,
    /// Keep-all baseline.
    Dense,
    /// Fixed window-pruning baseline at the given ratio.
    FixedRatio(Real),
}

fn block_with_variant(
    tokens: &Tensor,
    sparsity: &Tensor,
    block: &Block,
    state: &BlockState,
    variant: BackboneVariant,
) -> Result<(Tensor, BlockState, Vec<LayerStats>)> {
    let (x2, stats1, stats2) = match variant {
        BackboneVariant::Adaptive => {
            let (x1, _, stats1) =
                layer_with_mode(tokens, sparsity, &block.layer1, SelectionMode::Adaptive {
                    shared: None,
                })?;
            let shared_mask = stats1.keep_mask.clone();
            let shared = block
                .layer2
                .share_token_selection
                .then_some(shared_mask.as_slice());
            let (x2, _, stats2) =
                layer_with_mode(&x1, sparsity, &block.layer2, SelectionMode::Adaptive { shared })?;
            (x2, stats1, stats2)
        }
        BackboneVariant::Dense => {
            let (x1, _, stats1) =
                layer_with_mode(tokens, sparsity, &block.layer1, SelectionMode::KeepAll)?;
            let (x2, _, stats2) =
                layer_with_mode(&x1, sparsity, &block.layer2, SelectionMode::KeepAll)?;
            (x2, stats1, stats2)
        }
        BackboneVariant::FixedRatio(ratio) => {
            let side = block.layer1.window_side;
            let n_w = (tokens.shape()[0] / side) * (tokens.shape()[1] / side);
            let k = (((1.0 - ratio) * n_w as Real).round() as usize).clamp(1, n_w);
            let (x1, _, stats1) =
                layer_with_mode(tokens, sparsity, &block.layer1, SelectionMode::TopKWindows(k))?;
            let (x2, _, stats2) =
                layer_with_mode(&x1, sparsity, &block.layer2, SelectionMode::TopKWindows(k))?;
            (x2, stats1, stats2)
        }
    };
    let (y, (h, c)) = lstm_step(&x2, (&state.h, &state.c), &block.lstm)?;
    Ok((y, BlockState { h, c }, vec![stats1, stats2]))
}

/// One adaptive block step: window layer, grid layer sharing the window
/// layer's kept positions, LSTM.
pub fn sast_block(
    tokens: &Tensor,
    sparsity: &Tensor,
    block: &Block,
    state: &BlockState,
) -> Result<(Tensor, BlockState, Vec<LayerStats>)> {
    block_with_variant(tokens, sparsity, block, state, BackboneVariant::Adaptive)
}

/// Declarative shape of one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageSpec {
    /// Spatial downsampling entering the stage.
    pub stride: usize,
    pub window_side: usize,
    pub channels: usize,
    /// Number of blocks.
    pub depth: usize,
}

/// Declarative shape plus hyper-parameters of the whole backbone.
#[derive(Debug, Clone)]
pub struct BackboneSpec {
    pub sensor: SensorConfig,
    pub stages: Vec<StageSpec>,
    pub a: Real,
    pub b: Real,
    pub p: Real,
    pub eps_f: Real,
    pub mask_value: Real,
    pub weight_fn: WeightFn,
    pub n_heads: usize,
    pub mlp_expansion: usize,
    pub cb_enabled: bool,
    pub share_token_selection: bool,
    /// Scale of the reference patch embedding (tunes score magnitudes).
    pub embed_gain: Real,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            sensor: SensorConfig::default(),
            stages: vec![
                StageSpec { stride: 4, window_side: 4, channels: 32, depth: 1 },
                StageSpec { stride: 2, window_side: 4, channels: 64, depth: 1 },
                StageSpec { stride: 2, window_side: 2, channels: 128, depth: 1 },
                StageSpec { stride: 2, window_side: 2, channels: 256, depth: 1 },
            ],
            a: 2e-4,
            b: 0.099,
            p: 1.0,
            eps_f: 1e-8,
            mask_value: -1e9,
            weight_fn: WeightFn::Sigmoid,
            n_heads: 4,
            mlp_expansion: 4,
            cb_enabled: false,
            share_token_selection: true,
            embed_gain: 8.0,
        }
    }
}

impl BackboneSpec {
    fn layer_config(&self, channels: usize, kind: PartitionKind, window_side: usize) -> LayerConfig {
        let bins = self.sensor.voxel_bins();
        let mut scoring = ScoringParams::reference(channels, bins);
        scoring.a = self.a;
        scoring.eps_f = self.eps_f;
        scoring.weight_fn = self.weight_fn;
        let mut attention = AttentionParams::reference(channels, self.n_heads);
        attention.mask_value = self.mask_value;
        LayerConfig {
            partition_kind: kind,
            window_side,
            scoring,
            competition: CompetitionParams { p: self.p, b: self.b },
            attention,
            mlp: MlpParams::reference(channels, self.mlp_expansion),
            norm1: NormParams::reference(channels),
            norm2: NormParams::reference(channels),
            cb_enabled: self.cb_enabled,
            share_token_selection: self.share_token_selection,
        }
    }
}

enum TokenProducer {
    /// Strided patch embedding straight from the voxel.
    Embed { w: Tensor, b: Tensor, stride: usize },
    /// 2x2 patch merging from the previous stage.
    Merge { w: Tensor, b: Tensor, c_in: usize },
}

/// One resolution level of the hierarchy.
pub struct Stage {
    producer: TokenProducer,
    pub blocks: Vec<Block>,
    pub channels: usize,
    pub window_side: usize,
    /// Cumulative spatial downsampling from the sensor.
    pub cum_stride: usize,
    /// Token-map height and width.
    pub height: usize,
    pub width: usize,
}

/// The full recurrent hierarchy with fixed (untrained reference) weights.
pub struct Backbone {
    pub sensor: SensorConfig,
    pub stages: Vec<Stage>,
    /// Positional encoding added after the stage-one embedding.
    pe: Tensor,
    bins: usize,
}

/// LSTM state of every block.
#[derive(Debug, Clone)]
pub struct BackboneState {
    pub blocks: Vec<Vec<BlockState>>,
}

/// Everything one step produces.
pub struct StepOutput {
    /// Final token map of every stage.
    pub features: Vec<Tensor>,
    /// Layer stats per stage, in execution order.
    pub stats: Vec<Vec<LayerStats>>,
    pub report: FlopsReport,
}

impl StepOutput {
    /// Kept tokens / total tokens over every layer of the step.
    pub fn retain_ratio(&self) -> Real {
        let (mut kept, mut total) = (0usize, 0usize);
        for stage in &self.stats {
            for layer in stage {
                kept += layer.tokens_kept;
                total += layer.tokens_total;
            }
        }
        kept as Real / total as Real
    }

    pub fn windows_retained(&self) -> usize {
        self.stats
            .iter()
            .flatten()
            .map(|l| l.windows_kept)
            .sum()
    }

    pub fn tokens_retained(&self) -> usize {
        self.stats.iter().flatten().map(|l| l.tokens_kept).sum()
    }

    pub fn tokens_total(&self) -> usize {
        self.stats.iter().flatten().map(|l| l.tokens_total).sum()
    }
}

fn reference_embed(c_out: usize, bins: usize, stride: usize, gain: Real) -> (Tensor, Tensor) {
    // channel c sums the patch counts of time-polarity bin (c mod bins),
    // with a mild per-channel gain ramp so channels are not identical
    let mut w = Tensor::zeros(&[c_out, stride * stride * bins]);
    for ch in 0..c_out {
        let ramp = 0.75 + 0.5 * ch as Real / (c_out.max(2) - 1) as Real;
        for cell in 0..stride * stride {
            w.set(&[ch, cell * bins + ch % bins], gain * ramp);
        }
    }
    (w, Tensor::zeros(&[c_out]))
}

fn reference_merge(c_in: usize, c_out: usize) -> (Tensor, Tensor) {
    // average the 2x2 neighborhood, cycling input channels across the
    // (usually wider) output
    let mut w = Tensor::zeros(&[c_out, 4 * c_in]);
    for ch in 0..c_out {
        for k in 0..4 {
            w.set(&[ch, k * c_in + ch % c_in], 0.25);
        }
    }
    (w, Tensor::zeros(&[c_out]))
}

fn reference_lstm(channels: usize) -> LstmWeights {
    // gate order i, f, g, o: biased toward pass-through of the fresh
    // candidate (open input and output gates, mostly closed forget gate)
    let mut w = LstmWeights::zeros(channels, channels);
    for u in 0..channels {
        w.bias.set(&[u], 2.0);
        w.bias.set(&[channels + u], -2.0);
        w.bias.set(&[3 * channels + u], 2.0);
        w.w_ih.set(&[2 * channels + u, u], 0.5);
    }
    w
}

impl Backbone {
    /// Build the untrained reference backbone for a spec.
    pub fn reference(spec: &BackboneSpec) -> Result<Backbone> {
        if spec.stages.is_empty() {
            return Err(Error::config("backbone needs at least one stage"));
        }
        let bins = spec.sensor.voxel_bins();
        let mut stages = Vec::with_capacity(spec.stages.len());
        let mut cum_stride = 1usize;
        let mut prev_channels = 0usize;
        for (i, ss) in spec.stages.iter().enumerate() {
            if ss.stride == 0 || ss.depth == 0 {
                return Err(Error::config(format!("stage {i}: zero stride or depth")));
            }
            cum_stride *= ss.stride;
            if spec.sensor.height % cum_stride != 0 || spec.sensor.width % cum_stride != 0 {
                return Err(Error::config(format!(
                    "stage {i}: cumulative stride {cum_stride} does not divide sensor {}x{}",
                    spec.sensor.height, spec.sensor.width
                )));
            }
            let height = spec.sensor.height / cum_stride;
            let width = spec.sensor.width / cum_stride;
            if height % ss.window_side != 0 || width % ss.window_side != 0 {
                return Err(Error::config(format!(
                    "stage {i}: window side {} does not tile {height}x{width}",
                    ss.window_side
                )));
            }
            let producer = if i == 0 {
                let (w, b) = reference_embed(ss.channels, bins, ss.stride, spec.embed_gain);
                TokenProducer::Embed { w, b, stride: ss.stride }
            } else {
                if ss.stride != 2 {
                    return Err(Error::config(format!(
                        "stage {i}: patch merging downsamples by 2, got stride {}",
                        ss.stride
                    )));
                }
                let (w, b) = reference_merge(prev_channels, ss.channels);
                TokenProducer::Merge { w, b, c_in: prev_channels }
            };
            let blocks = (0..ss.depth)
                .map(|_| Block {
                    layer1: spec.layer_config(ss.channels, PartitionKind::Window, ss.window_side),
                    layer2: spec.layer_config(ss.channels, PartitionKind::Grid, ss.window_side),
                    lstm: reference_lstm(ss.channels),
                })
                .collect();
            stages.push(Stage {
                producer,
                blocks,
                channels: ss.channels,
                window_side: ss.window_side,
                cum_stride,
                height,
                width,
            });
            prev_channels = ss.channels;
        }
        let first = &stages[0];
        let pe = sinusoidal_pe(first.height, first.width, first.channels)?;
        Ok(Backbone {
            sensor: spec.sensor,
            stages,
            pe,
            bins,
        })
    }

    /// Zeroed LSTM state for every block.
    pub fn init_state(&self) -> BackboneState {
        BackboneState {
            blocks: self
                .stages
                .iter()
                .map(|s| {
                    s.blocks
                        .iter()
                        .map(|_| BlockState::zeros(s.height, s.width, s.channels))
                        .collect()
                })
                .collect(),
        }
    }

    /// Process one voxel, mutating the recurrent state.
    pub fn step(
        &self,
        voxel: &Tensor,
        state: &mut BackboneState,
        variant: BackboneVariant,
    ) -> Result<StepOutput> {
        if voxel.shape() != [self.bins, self.sensor.height, self.sensor.width] {
            return Err(Error::shape(format!(
                "voxel {:?} vs sensor [{}, {}, {}]",
                voxel.shape(),
                self.bins,
                self.sensor.height,
                self.sensor.width
            )));
        }
        let mut report = FlopsReport::default();
        let mut features = Vec::with_capacity(self.stages.len());
        let mut stats_all = Vec::with_capacity(self.stages.len());
        let mut x = Tensor::zeros(&[0]);
        for (si, stage) in self.stages.iter().enumerate() {
            x = match &stage.producer {
                TokenProducer::Embed { w, b, stride } => {
                    report.push_backbone(embed_flops(
                        stage.height * stage.width,
                        stage.channels,
                        stride * stride * self.bins,
                    ));
                    patch_embed(voxel, *stride, w, b)?.add(&self.pe)?
                }
                TokenProducer::Merge { w, b, c_in } => {
                    report.push_backbone(merge_flops(
                        stage.height * stage.width,
                        stage.channels,
                        *c_in,
                    ));
                    patch_merge(&x, w, b)?
                }
            };
            let pooled = downsample_voxel(voxel, stage.cum_stride)?;
            let sparsity = event_sparsity(&pooled)?;
            let mut stage_stats = Vec::new();
            for (bi, block) in stage.blocks.iter().enumerate() {
                let (y, new_state, stats) =
                    block_with_variant(&x, &sparsity, block, &state.blocks[si][bi], variant)?;
                x = y;
                state.blocks[si][bi] = new_state;
                for s in &stats {
                    report.push_layer(s.flops, s.dense_flops);
                }
                report.push_backbone(lstm_flops(stage.height * stage.width, stage.channels));
                stage_stats.extend(stats);
            }
            stats_all.push(stage_stats);
            features.push(x.clone());
        }
        Ok(StepOutput {
            features,
            stats: stats_all,
            report,
        })
    }

    /// Run a whole voxel sequence from a fresh state.
    pub fn run(&self, voxels: &[Tensor], variant: BackboneVariant) -> Result<Vec<StepOutput>> {
        let mut state = self.init_state();
        voxels
            .iter()
            .map(|v| self.step(v, &mut state, variant))
            .collect()
    }
}
