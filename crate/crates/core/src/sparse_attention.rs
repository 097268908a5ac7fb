//! Masked sparse window self-attention and the sparse token pipeline.
//!
//! Selected windows are ragged, so they are padded to a common length using
//! each window's own filtered-out tokens; an additive key mask removes the
//! fillers from every attention distribution. Attention, the MLP, and the
//! optional context broadcast all touch only selected tokens — everything
//! else flows through [`scatter_back`] unchanged.

use crate::selection::{RaggedTokens, SelectedWindow, SelectionResult};
use crate::tensorkit::{linear, matmul, softmax_slice, Tensor};
use crate::{Error, Real, Result};

/// Weights of one masked sparse window self-attention op.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    /// `[C, C]` query projection.
    pub w_q: Tensor,
    /// `[C, C]` key projection.
    pub w_k: Tensor,
    /// `[C, C]` value projection.
    pub w_v: Tensor,
    /// `[C, C]` output projection closing the multi-head concat.
    pub w_o: Tensor,
    pub n_heads: usize,
    /// Additive logit for padded key columns.
    pub mask_value: Real,
}

impl AttentionParams {
    /// Identity projections — attention mixes tokens but the value path
    /// stays untransformed.
    pub fn reference(channels: usize, n_heads: usize) -> Self {
        AttentionParams {
            w_q: Tensor::eye(channels),
            w_k: Tensor::eye(channels),
            w_v: Tensor::eye(channels),
            w_o: Tensor::eye(channels),
            n_heads,
            mask_value: -1e9,
        }
    }

    pub fn channels(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        for (name, w) in [
            ("W_Q", &self.w_q),
            ("W_K", &self.w_k),
            ("W_V", &self.w_v),
            ("W_O", &self.w_o),
        ] {
            if w.shape() != [c, c] {
                return Err(Error::shape(format!("{name} must be [{c}, {c}], got {:?}", w.shape())));
            }
        }
        if self.n_heads == 0 || c % self.n_heads != 0 {
            return Err(Error::config(format!(
                "{} heads do not divide {} channels",
                self.n_heads, c
            )));
        }
        if self.mask_value > -1e9 {
            return Err(Error::config(format!(
                "mask value {} is not strongly negative",
                self.mask_value
            )));
        }
        Ok(())
    }
}

/// Selected windows padded to a rectangle.
#[derive(Debug, Clone)]
pub struct PackedWindows {
    /// `[n_sel, k_max, C]` features; real slots precede fillers.
    pub feats: Tensor,
    /// `true` marks a filler slot.
    pub pad_mask: Vec<Vec<bool>>,
    /// Source window index per packed row.
    pub windows: Vec<usize>,
    /// Source token index per slot (kept token or filler).
    pub slot_tokens: Vec<Vec<usize>>,
    /// Kept-token count per packed row.
    pub real_counts: Vec<usize>,
}

impl PackedWindows {
    pub fn n_windows(&self) -> usize {
        self.windows.len()
    }

    pub fn k_max(&self) -> usize {
        if self.feats.len() == 0 {
            0
        } else {
            self.feats.shape()[1]
        }
    }
}

/// Pad each selected window to the longest kept count, filling with that
/// window's filtered-out tokens in ascending token index.
pub fn pad_pack(
    t_s: &RaggedTokens,
    all_tokens: &Tensor,
    selection: &SelectionResult,
) -> Result<PackedWindows> {
    if all_tokens.shape().len() != 3 || all_tokens.shape()[0] != selection.n_windows() {
        return Err(Error::arity(format!(
            "token grid {:?} vs selection over {} windows",
            all_tokens.shape(),
            selection.n_windows()
        )));
    }
    if t_s.windows.len() != selection.windows_kept() {
        return Err(Error::arity(format!(
            "{} gathered windows vs {} kept",
            t_s.windows.len(),
            selection.windows_kept()
        )));
    }
    let n_t = all_tokens.shape()[1];
    let c = all_tokens.shape()[2];
    let k_max = t_s.max_tokens();
    let n_sel = t_s.windows.len();

    let mut feats = Tensor::zeros(&[n_sel, k_max, c]);
    let mut pad_mask = Vec::with_capacity(n_sel);
    let mut windows = Vec::with_capacity(n_sel);
    let mut slot_tokens = Vec::with_capacity(n_sel);
    let mut real_counts = Vec::with_capacity(n_sel);

    for (i, sw) in t_s.windows.iter().enumerate() {
        let kept = sw.token_ids.len();
        let need = k_max - kept;
        // filtered-out tokens of this window, ascending
        let fillers: Vec<usize> = (0..n_t).filter(|t| !sw.token_ids.contains(t)).collect();
        if fillers.len() < need {
            return Err(Error::arity(format!(
                "window {} cannot supply {} fillers",
                sw.window, need
            )));
        }
        let mut slots = Vec::with_capacity(k_max);
        let mut mask = Vec::with_capacity(k_max);
        for (slot, &t) in sw.token_ids.iter().enumerate() {
            feats.row_mut(i * k_max + slot).copy_from_slice(sw.feats.row(slot));
            slots.push(t);
            mask.push(false);
        }
        for (j, &t) in fillers[..need].iter().enumerate() {
            let slot = kept + j;
            feats
                .row_mut(i * k_max + slot)
                .copy_from_slice(all_tokens.row(sw.window * n_t + t));
            slots.push(t);
            mask.push(true);
        }
        pad_mask.push(mask);
        windows.push(sw.window);
        slot_tokens.push(slots);
        real_counts.push(kept);
    }
    Ok(PackedWindows {
        feats,
        pad_mask,
        windows,
        slot_tokens,
        real_counts,
    })
}

/// Masked sparse window self-attention: per-window multi-head attention
/// with padded key columns masked out, then un-pad.
pub fn mswsa(packed: &PackedWindows, params: &AttentionParams) -> Result<RaggedTokens> {
    params.validate()?;
    let c = params.channels();
    if packed.k_max() > 0 && packed.feats.shape()[2] != c {
        return Err(Error::shape(format!(
            "packed channels {} vs projection {}",
            packed.feats.shape()[2],
            c
        )));
    }
    let k = packed.k_max();
    let n_heads = params.n_heads;
    let dh = c / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let zero_bias = Tensor::zeros(&[c]);

    let mut out_windows = Vec::with_capacity(packed.n_windows());
    for i in 0..packed.n_windows() {
        let x = Tensor::from_vec(
            &[k, c],
            packed.feats.data()[i * k * c..(i + 1) * k * c].to_vec(),
        )?;
        let q = linear(&x, &params.w_q, &zero_bias)?;
        let key = linear(&x, &params.w_k, &zero_bias)?;
        let v = linear(&x, &params.w_v, &zero_bias)?;

        let mut heads_out = Tensor::zeros(&[k, c]);
        for h in 0..n_heads {
            let slice = |t: &Tensor| -> Tensor {
                let mut m = Tensor::zeros(&[k, dh]);
                for row in 0..k {
                    m.row_mut(row)
                        .copy_from_slice(&t.row(row)[h * dh..(h + 1) * dh]);
                }
                m
            };
            let qh = slice(&q);
            let kh = slice(&key);
            let vh = slice(&v);
            // logits = Q Kᵀ / sqrt(dh) with padded key columns masked
            let kh_t = transpose(&kh);
            let mut logits = matmul(&qh, &kh_t)?;
            for row in 0..k {
                let lrow = logits.row_mut(row);
                for col in 0..k {
                    lrow[col] *= scale;
                    if packed.pad_mask[i][col] {
                        lrow[col] += params.mask_value;
                    }
                }
                softmax_slice(lrow);
            }
            let attended = matmul(&logits, &vh)?;
            for row in 0..k {
                heads_out.row_mut(row)[h * dh..(h + 1) * dh].copy_from_slice(attended.row(row));
            }
        }
        let projected = linear(&heads_out, &params.w_o, &zero_bias)?;

        // un-pad: keep only the real slots
        let kept = packed.real_counts[i];
        let mut feats = Tensor::zeros(&[kept, c]);
        for slot in 0..kept {
            feats.row_mut(slot).copy_from_slice(projected.row(slot));
        }
        out_windows.push(SelectedWindow {
            window: packed.windows[i],
            token_ids: packed.slot_tokens[i][..kept].to_vec(),
            feats,
        });
    }
    Ok(RaggedTokens {
        windows: out_windows,
        channels: c,
    })
}

fn transpose(m: &Tensor) -> Tensor {
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.set(&[j, i], m.at(&[i, j]));
        }
    }
    out
}

/// Pointwise activation of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(&self, x: Real) -> Real {
        match self {
            Activation::Gelu => crate::tensorkit::gelu(x),
            Activation::Identity => x,
        }
    }
}

/// Two-layer MLP weights applied to selected tokens only.
#[derive(Debug, Clone)]
pub struct MlpParams {
    /// `[h * C, C]`
    pub w1: Tensor,
    /// `[h * C]`
    pub b1: Tensor,
    /// `[C, h * C]`
    pub w2: Tensor,
    /// `[C]`
    pub b2: Tensor,
    pub activation: Activation,
}

impl MlpParams {
    /// Identity-preserving reference weights at expansion `h`: the hidden
    /// layer stacks `h` copies of the input and the output layer averages
    /// them back, so the map reduces to the pointwise activation.
    pub fn reference(channels: usize, h: usize) -> Self {
        let mut w1 = Tensor::zeros(&[h * channels, channels]);
        for copy in 0..h {
            for ch in 0..channels {
                w1.set(&[copy * channels + ch, ch], 1.0);
            }
        }
        let mut w2 = Tensor::zeros(&[channels, h * channels]);
        for copy in 0..h {
            for ch in 0..channels {
                w2.set(&[ch, copy * channels + ch], 1.0 / h as Real);
            }
        }
        MlpParams {
            w1,
            b1: Tensor::zeros(&[h * channels]),
            w2,
            b2: Tensor::zeros(&[channels]),
            activation: Activation::Gelu,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        let hidden = self.w1.shape()[0];
        if self.w1.shape()[1] != channels
            || self.b1.shape() != [hidden]
            || self.w2.shape() != [channels, hidden]
            || self.b2.shape() != [channels]
        {
            return Err(Error::shape(format!(
                "mlp shapes W1 {:?} b1 {:?} W2 {:?} b2 {:?} for C = {channels}",
                self.w1.shape(),
                self.b1.shape(),
                self.w2.shape(),
                self.b2.shape()
            )));
        }
        Ok(())
    }

    pub fn expansion(&self) -> usize {
        self.w1.shape()[0] / self.w1.shape()[1]
    }
}

/// Apply the two-layer MLP to every selected token; arity preserved.
pub fn sparse_mlp(t_a: &RaggedTokens, params: &MlpParams) -> Result<RaggedTokens> {
    params.validate(t_a.channels)?;
    let mut windows = Vec::with_capacity(t_a.windows.len());
    for sw in &t_a.windows {
        let hidden = linear(&sw.feats, &params.w1, &params.b1)?;
        let activated = hidden.map(|v| params.activation.apply(v));
        let out = linear(&activated, &params.w2, &params.b2)?;
        windows.push(SelectedWindow {
            window: sw.window,
            token_ids: sw.token_ids.clone(),
            feats: out,
        });
    }
    Ok(RaggedTokens {
        windows,
        channels: t_a.channels,
    })
}

/// Context broadcast: blend every selected token with the mean over all
/// selected tokens of the layer. Disabled, it is the identity.
pub fn context_broadcast(tokens: &RaggedTokens, enabled: bool) -> RaggedTokens {
    if !enabled || tokens.total_tokens() == 0 {
        return tokens.clone();
    }
    let c = tokens.channels;
    let n = tokens.total_tokens() as Real;
    let mut mean = vec![0.0 as Real; c];
    for sw in &tokens.windows {
        for slot in 0..sw.token_ids.len() {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += sw.feats.at(&[slot, ch]);
            }
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut windows = Vec::with_capacity(tokens.windows.len());
    for sw in &tokens.windows {
        let mut feats = sw.feats.clone();
        for slot in 0..sw.token_ids.len() {
            for ch in 0..c {
                let v = feats.at(&[slot, ch]);
                feats.set(&[slot, ch], 0.5 * v + 0.5 * mean[ch]);
            }
        }
        windows.push(SelectedWindow {
            window: sw.window,
            token_ids: sw.token_ids.clone(),
            feats,
        });
    }
    RaggedTokens {
        windows,
        channels: c,
    }
}

/// Write processed tokens back into the partitioned grid; every position
/// not in the selection keeps its original value bit-for-bit.
pub fn scatter_back(
    processed: &RaggedTokens,
    original: &Tensor,
    selection: &SelectionResult,
) -> Result<Tensor> {
    if original.shape().len() != 3 || original.shape()[0] != selection.n_windows() {
        return Err(Error::arity(format!(
            "grid {:?} vs selection over {} windows",
            original.shape(),
            selection.n_windows()
        )));
    }
    if processed.windows.len() != selection.windows_kept() {
        return Err(Error::arity(format!(
            "{} processed windows vs {} kept",
            processed.windows.len(),
            selection.windows_kept()
        )));
    }
    let n_t = original.shape()[1];
    let mut out = original.clone();
    for sw in &processed.windows {
        if !selection.window_keep[sw.window] || sw.token_ids != selection.token_keep[sw.window] {
            return Err(Error::arity(format!(
                "processed window {} does not match the selection",
                sw.window
            )));
        }
        for (slot, &t) in sw.token_ids.iter().enumerate() {
            out.row_mut(sw.window * n_t + t)
                .copy_from_slice(sw.feats.row(slot));
        }
    }
    Ok(out)
}
