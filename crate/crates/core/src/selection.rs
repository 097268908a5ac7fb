//! Window and token co-selection from intensified scores.
//!
//! A competition unit turns initial scores into per-window token
//! distributions and a cross-window distribution (both softmaxes), then two
//! sequential filters keep windows and tokens whose scores strictly exceed
//! thresholds derived from the strictness parameter `b`. Fallback rules
//! guarantee the selection is never empty.

use crate::tensorkit::{p_norm, softmax_slice, Tensor, WindowGeometry};
use crate::{Error, Real, Result};

/// Competition-unit hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct CompetitionParams {
    /// Norm order for score aggregation, `p >= 1`.
    pub p: Real,
    /// Selection strictness: thresholds are `b / N`.
    pub b: Real,
}

impl Default for CompetitionParams {
    fn default() -> Self {
        CompetitionParams { p: 1.0, b: 0.099 }
    }
}

impl CompetitionParams {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1.0 {
            return Err(Error::config(format!("norm order p must be >= 1, got {}", self.p)));
        }
        if self.b <= 0.0 {
            return Err(Error::config(format!("strictness b must be positive, got {}", self.b)));
        }
        Ok(())
    }
}

/// Token- and window-level score distributions.
#[derive(Debug, Clone)]
pub struct IntensifiedScores {
    /// `[N_w, N_t]`, each row a distribution over the window's tokens.
    pub s_t: Tensor,
    /// `[N_w]`, a distribution over windows.
    pub s_w: Tensor,
}

/// Selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub mu_t: Real,
    pub mu_w: Real,
}

/// Token scores: channel p-norm per token, softmax over each window's
/// tokens.
pub fn token_scores(s_i: &Tensor, p: Real) -> Result<Tensor> {
    if s_i.shape().len() != 3 {
        return Err(Error::shape(format!(
            "token scores expect [N_w, N_t, C], got {:?}",
            s_i.shape()
        )));
    }
    let mut norms = p_norm(s_i, p, &[2])?;
    for w in 0..norms.shape()[0] {
        softmax_slice(norms.row_mut(w));
    }
    Ok(norms)
}

/// Window scores: p-norm over channel and token axes, scaled by `1 / N_t`,
/// softmax over windows.
pub fn window_scores(s_i: &Tensor, p: Real) -> Result<Tensor> {
    if s_i.shape().len() != 3 {
        return Err(Error::shape(format!(
            "window scores expect [N_w, N_t, C], got {:?}",
            s_i.shape()
        )));
    }
    let n_t = s_i.shape()[1] as Real;
    let mut norms = p_norm(s_i, p, &[1, 2])?.scale(1.0 / n_t);
    softmax_slice(norms.data_mut());
    Ok(norms)
}

/// Both score distributions in one pass.
pub fn intensified_scores(s_i: &Tensor, params: &CompetitionParams) -> Result<IntensifiedScores> {
    params.validate()?;
    Ok(IntensifiedScores {
        s_t: token_scores(s_i, params.p)?,
        s_w: window_scores(s_i, params.p)?,
    })
}

/// Thresholds `mu_t = b / N_t`, `mu_w = b / N_w`.
pub fn thresholds(b: Real, geometry: &WindowGeometry) -> Thresholds {
    Thresholds {
        mu_t: b / geometry.tokens_per_window() as Real,
        mu_w: b / geometry.n_windows() as Real,
    }
}

/// Which windows and tokens a layer keeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionResult {
    /// Kept flag per window.
    pub window_keep: Vec<bool>,
    /// Sorted kept-token indices per window; empty for dropped windows.
    pub token_keep: Vec<Vec<usize>>,
}

impl SelectionResult {
    /// Selection that keeps every token of every window.
    pub fn keep_all(n_windows: usize, n_tokens: usize) -> Self {
        SelectionResult {
            window_keep: vec![true; n_windows],
            token_keep: vec![(0..n_tokens).collect(); n_windows],
        }
    }

    pub fn n_windows(&self) -> usize {
        self.window_keep.len()
    }

    pub fn windows_kept(&self) -> usize {
        self.window_keep.iter().filter(|&&k| k).count()
    }

    pub fn tokens_kept(&self) -> usize {
        self.token_keep.iter().map(Vec::len).sum()
    }

    /// Indices of kept windows in ascending order.
    pub fn kept_windows(&self) -> Vec<usize> {
        (0..self.n_windows()).filter(|&w| self.window_keep[w]).collect()
    }

    pub fn validate(&self, n_tokens: usize) -> Result<()> {
        if self.window_keep.len() != self.token_keep.len() {
            return Err(Error::arity(format!(
                "window flags {} vs token lists {}",
                self.window_keep.len(),
                self.token_keep.len()
            )));
        }
        if self.windows_kept() == 0 {
            return Err(Error::arity("selection keeps no window"));
        }
        for (w, kept) in self.token_keep.iter().enumerate() {
            if self.window_keep[w] {
                if kept.is_empty() {
                    return Err(Error::arity(format!("kept window {w} retains no token")));
                }
            } else if !kept.is_empty() {
                return Err(Error::arity(format!("dropped window {w} lists tokens")));
            }
            for pair in kept.windows(2) {
                if pair[1] <= pair[0] {
                    return Err(Error::arity(format!("window {w} token ids not increasing")));
                }
            }
            if kept.iter().any(|&t| t >= n_tokens) {
                return Err(Error::arity(format!("window {w} token id out of range")));
            }
        }
        Ok(())
    }
}

/// Kept tokens of one window, gathered densely.
#[derive(Debug, Clone)]
pub struct SelectedWindow {
    /// Index of the source window.
    pub window: usize,
    /// Kept token indices, ascending.
    pub token_ids: Vec<usize>,
    /// `[kept, C]` gathered features.
    pub feats: Tensor,
}

/// Ragged per-window gathering of kept tokens.
#[derive(Debug, Clone)]
pub struct RaggedTokens {
    pub windows: Vec<SelectedWindow>,
    pub channels: usize,
}

impl RaggedTokens {
    pub fn total_tokens(&self) -> usize {
        self.windows.iter().map(|w| w.token_ids.len()).sum()
    }

    pub fn max_tokens(&self) -> usize {
        self.windows.iter().map(|w| w.token_ids.len()).max().unwrap_or(0)
    }
}

fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Apply the two sequential filters.
///
/// Window `w` passes iff `S_w[w] > mu_w`; within passing windows token `t`
/// passes iff `S_t[w, t] > mu_t`. If no window passes, the argmax-score
/// window is kept; a kept window that would lose every token keeps its
/// argmax-score token.
pub fn select(
    t_star: &Tensor,
    scores: &IntensifiedScores,
    th: &Thresholds,
) -> Result<(SelectionResult, RaggedTokens)> {
    select_impl(t_star, scores, th, None)
}

/// Like [`select`], but the token filter is replaced by an externally
/// supplied per-(window, token) mask — used when a layer reuses the kept
/// token positions of the previous layer in its block. The window filter
/// and both fallback rules still apply.
pub fn select_masked(
    t_star: &Tensor,
    scores: &IntensifiedScores,
    th: &Thresholds,
    allowed: &[bool],
) -> Result<(SelectionResult, RaggedTokens)> {
    select_impl(t_star, scores, th, Some(allowed))
}

fn select_impl(
    t_star: &Tensor,
    scores: &IntensifiedScores,
    th: &Thresholds,
    allowed: Option<&[bool]>,
) -> Result<(SelectionResult, RaggedTokens)> {
    let n_w = scores.s_w.shape()[0];
    if scores.s_t.shape()[0] != n_w || t_star.shape()[0] != n_w {
        return Err(Error::shape(format!(
            "score shapes disagree: S_t {:?}, S_w {:?}, tokens {:?}",
            scores.s_t.shape(),
            scores.s_w.shape(),
            t_star.shape()
        )));
    }
    let n_t = scores.s_t.shape()[1];
    if let Some(mask) = allowed {
        if mask.len() != n_w * n_t {
            return Err(Error::arity(format!(
                "token mask length {} vs {} tokens",
                mask.len(),
                n_w * n_t
            )));
        }
    }

    let mut window_keep: Vec<bool> = (0..n_w).map(|w| scores.s_w.data()[w] > th.mu_w).collect();
    if !window_keep.iter().any(|&k| k) {
        window_keep[argmax(scores.s_w.data())] = true;
    }

    let mut token_keep = vec![Vec::new(); n_w];
    for w in 0..n_w {
        if !window_keep[w] {
            continue;
        }
        let row = scores.s_t.row(w);
        let mut kept: Vec<usize> = match allowed {
            Some(mask) => (0..n_t).filter(|&t| mask[w * n_t + t]).collect(),
            None => (0..n_t).filter(|&t| row[t] > th.mu_t).collect(),
        };
        if kept.is_empty() {
            kept.push(argmax(row));
        }
        token_keep[w] = kept;
    }

    let selection = SelectionResult {
        window_keep,
        token_keep,
    };
    let gathered = gather(t_star, &selection)?;
    Ok((selection, gathered))
}

/// Gather kept tokens from `[N_w, N_t, C]` features under an existing
/// selection (used when a layer reuses its block's shared selection).
pub fn gather(t_star: &Tensor, selection: &SelectionResult) -> Result<RaggedTokens> {
    if t_star.shape().len() != 3 || t_star.shape()[0] != selection.n_windows() {
        return Err(Error::arity(format!(
            "tokens {:?} vs selection over {} windows",
            t_star.shape(),
            selection.n_windows()
        )));
    }
    let n_t = t_star.shape()[1];
    let c = t_star.shape()[2];
    let mut windows = Vec::new();
    for w in selection.kept_windows() {
        let ids = &selection.token_keep[w];
        if ids.iter().any(|&t| t >= n_t) {
            return Err(Error::arity(format!("window {w} token id out of range")));
        }
        let mut feats = Tensor::zeros(&[ids.len(), c]);
        for (slot, &t) in ids.iter().enumerate() {
            feats.row_mut(slot).copy_from_slice(t_star.row(w * n_t + t));
        }
        windows.push(SelectedWindow {
            window: w,
            token_ids: ids.clone(),
            feats,
        });
    }
    Ok(RaggedTokens {
        windows,
        channels: c,
    })
}
