//! Token scoring: responses, the sparsity-controlled initial scores, and
//! the spatial-temporal-polar (STP) reweighting of tokens.
//!
//! Scores tie token saliency to the event stream: a response unit measures
//! per-channel activity, an exponential-linear unit turns the per-bin event
//! sparsity into a positive control factor, and their ratio (scaled by the
//! sparsity hyper-parameter `a`) yields initial scores. The same responses
//! and control factor multiplicatively reweight the tokens so the scoring
//! path carries gradient signal.

use crate::tensorkit::{linear, softmax_slice, Tensor};
use crate::{Error, Real, Result};

/// Elementwise weighting function used by the STP reweighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightFn {
    #[default]
    Sigmoid,
    Tanh,
    /// Normalizes over the channel axis.
    Softmax,
    Identity,
}

impl WeightFn {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sigmoid" => Ok(WeightFn::Sigmoid),
            "tanh" => Ok(WeightFn::Tanh),
            "softmax" => Ok(WeightFn::Softmax),
            "identity" => Ok(WeightFn::Identity),
            other => Err(Error::config(format!("unknown weight_fn {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WeightFn::Sigmoid => "sigmoid",
            WeightFn::Tanh => "tanh",
            WeightFn::Softmax => "softmax",
            WeightFn::Identity => "identity",
        }
    }

    /// Apply along the last axis (only Softmax actually couples entries).
    fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            WeightFn::Sigmoid => x.map(crate::tensorkit::sigmoid),
            WeightFn::Tanh => x.map(Real::tanh),
            WeightFn::Identity => x.clone(),
            WeightFn::Softmax => {
                let mut out = x.clone();
                for r in 0..out.n_rows() {
                    softmax_slice(out.row_mut(r));
                }
                out
            }
        }
    }
}

/// Learnable parameters and hyper-parameters of the scoring stage.
#[derive(Debug, Clone)]
pub struct ScoringParams {
    /// `[C, C]` response weights.
    pub w_r: Tensor,
    /// `[C]` response bias.
    pub b_r: Tensor,
    /// `[C, B]` exponential-linear weights over the sparsity vector.
    pub w_f: Tensor,
    /// Absolute sparsity level; larger keeps more tokens.
    pub a: Real,
    /// Positive floor for the control factor (guards empty scenes).
    pub eps_f: Real,
    pub weight_fn: WeightFn,
}

impl ScoringParams {
    /// Untrained reference parameters: identity response, zero bias, zero
    /// exponential-linear weights — scores become directly event-driven.
    pub fn reference(channels: usize, bins: usize) -> Self {
        ScoringParams {
            w_r: Tensor::eye(channels),
            b_r: Tensor::zeros(&[channels]),
            w_f: Tensor::zeros(&[channels, bins]),
            a: 2e-4,
            eps_f: 1e-8,
            weight_fn: WeightFn::Sigmoid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a <= 0.0 {
            return Err(Error::config(format!("a must be positive, got {}", self.a)));
        }
        if self.eps_f <= 0.0 {
            return Err(Error::config(format!(
                "eps_F must be positive, got {}",
                self.eps_f
            )));
        }
        let c = self.b_r.shape()[0];
        if self.w_r.shape() != [c, c] || self.w_f.shape()[0] != c {
            return Err(Error::shape(format!(
                "scoring parameter shapes disagree: W_R {:?}, b_R {:?}, W_F {:?}",
                self.w_r.shape(),
                self.b_r.shape(),
                self.w_f.shape()
            )));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.b_r.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.w_f.shape()[1]
    }
}

/// All intermediate tensors of one scoring evaluation.
#[derive(Debug, Clone)]
pub struct ScoreTensors {
    /// `[N_w, N_t, C]` non-negative token responses.
    pub r: Tensor,
    /// `[C]` control factor, floored at `eps_F`.
    pub f: Tensor,
    /// `[N_w, N_t, C]` initial scores.
    pub s_i: Tensor,
}

/// Token responses `R = ReLU(W_R T + b_R)`, shape preserved.
pub fn response(tokens: &Tensor, w_r: &Tensor, b_r: &Tensor) -> Result<Tensor> {
    Ok(linear(tokens, w_r, b_r)?.map(|v| v.max(0.0)))
}

/// Control factor `F[c] = max(eps_F, sum_b exp(W_F[c, b]) * r_b)`.
///
/// The exponential keeps the factor positive for any weights; the floor
/// covers all-empty scenes where every `r_b` is zero.
pub fn control_factor(sparsity: &Tensor, w_f: &Tensor, eps_f: Real) -> Result<Tensor> {
    if sparsity.shape().len() != 1 || w_f.shape().len() != 2 || w_f.shape()[1] != sparsity.shape()[0]
    {
        return Err(Error::shape(format!(
            "control factor: sparsity {:?} vs weights {:?}",
            sparsity.shape(),
            w_f.shape()
        )));
    }
    let exp_w = w_f.map(Real::exp);
    let zero = Tensor::zeros(&[w_f.shape()[0]]);
    let raw = linear(sparsity, &exp_w, &zero)?;
    Ok(raw.map(|v| v.max(eps_f)))
}

/// Initial scores `S_i[w, t, c] = a * R[w, t, c] / F[c]`.
pub fn initial_scores(r: &Tensor, f: &Tensor, a: Real) -> Result<Tensor> {
    let c = r.last_dim();
    if f.shape() != [c] {
        return Err(Error::shape(format!(
            "initial scores: responses {:?} vs factor {:?}",
            r.shape(),
            f.shape()
        )));
    }
    let mut s = r.clone();
    for row in 0..s.n_rows() {
        let slice = s.row_mut(row);
        for (ch, v) in slice.iter_mut().enumerate() {
            *v = a * *v / f.data()[ch];
        }
    }
    Ok(s)
}

/// STP reweighting `T*[w, t, c] = fn(R[w, t, c]) * fn(F[c]) * T[w, t, c]`.
pub fn stp_weight(tokens: &Tensor, r: &Tensor, f: &Tensor, weight_fn: WeightFn) -> Result<Tensor> {
    if tokens.shape() != r.shape() {
        return Err(Error::shape(format!(
            "stp: tokens {:?} vs responses {:?}",
            tokens.shape(),
            r.shape()
        )));
    }
    if weight_fn == WeightFn::Identity {
        return Ok(tokens.clone());
    }
    let w_s = weight_fn.apply(r);
    let w_tp = weight_fn.apply(f);
    let mut out = tokens.clone();
    for row in 0..out.n_rows() {
        let ws_row = w_s.row(row);
        let slice = out.row_mut(row);
        for (ch, v) in slice.iter_mut().enumerate() {
            *v *= ws_row[ch] * w_tp.data()[ch];
        }
    }
    Ok(out)
}

/// One full scoring pass over partitioned tokens `[N_w, N_t, C]` given the
/// per-bin event sparsity. Returns intermediates plus the reweighted tokens.
pub fn score_tokens(
    tokens: &Tensor,
    sparsity: &Tensor,
    params: &ScoringParams,
) -> Result<(ScoreTensors, Tensor)> {
    params.validate()?;
    let r = response(tokens, &params.w_r, &params.b_r)?;
    let f = control_factor(sparsity, &params.w_f, params.eps_f)?;
    let s_i = initial_scores(&r, &f, params.a)?;
    let t_star = stp_weight(tokens, &r, &f, params.weight_fn)?;
    Ok((ScoreTensors { r, f, s_i }, t_star))
}

/// Gradients of the reweighted tokens with respect to the learnable
/// parameters.
#[derive(Debug, Clone)]
pub struct ScoringGrads {
    pub w_r: Tensor,
    pub b_r: Tensor,
    pub w_f: Tensor,
}

/// Analytic chain-rule gradients of `sum(upstream ⊙ T*)` with respect to
/// `(W_R, b_R, W_F)`, on the sigmoid path.
///
/// Subgradient conventions: ReLU at zero contributes 0; the control-factor
/// floor blocks gradient when the raw factor is at or below `eps_F`.
pub fn scoring_grad(
    tokens: &Tensor,
    sparsity: &Tensor,
    params: &ScoringParams,
    upstream: &Tensor,
) -> Result<ScoringGrads> {
    if params.weight_fn != WeightFn::Sigmoid {
        return Err(Error::config(
            "analytic gradients are defined for the sigmoid weighting",
        ));
    }
    if upstream.shape() != tokens.shape() {
        return Err(Error::shape(format!(
            "upstream {:?} vs tokens {:?}",
            upstream.shape(),
            tokens.shape()
        )));
    }
    let c = params.channels();
    let bins = params.bins();
    let sig = crate::tensorkit::sigmoid;

    // forward intermediates
    let pre = linear(tokens, &params.w_r, &params.b_r)?;
    let r = pre.map(|v| v.max(0.0));
    let exp_w = params.w_f.map(Real::exp);
    let zero = Tensor::zeros(&[c]);
    let f_raw = linear(sparsity, &exp_w, &zero)?;
    let f = f_raw.map(|v| v.max(params.eps_f));

    let mut g_wr = Tensor::zeros(&[c, c]);
    let mut g_br = Tensor::zeros(&[c]);
    let mut g_wf = Tensor::zeros(&[c, bins]);
    // accumulated over tokens: d(loss)/dF before the factor's own chain
    let mut f_accum = vec![0.0 as Real; c];

    for row in 0..tokens.n_rows() {
        let t_row = tokens.row(row);
        let up_row = upstream.row(row);
        let pre_row = pre.row(row);
        let r_row = r.row(row);
        for ch in 0..c {
            let sig_f = sig(f.data()[ch]);
            let sig_r = sig(r_row[ch]);
            // d T*/dR = sigma'(R) * sigma(F) * T
            if pre_row[ch] > 0.0 {
                let d_r = up_row[ch] * sig_r * (1.0 - sig_r) * sig_f * t_row[ch];
                g_br.data_mut()[ch] += d_r;
                for k in 0..c {
                    g_wr.data_mut()[ch * c + k] += d_r * t_row[k];
                }
            }
            // d T*/dF = sigma(R) * sigma'(F) * T
            f_accum[ch] += up_row[ch] * sig_r * t_row[ch];
        }
    }
    for ch in 0..c {
        if f_raw.data()[ch] > params.eps_f {
            let sig_f = sig(f.data()[ch]);
            let d_f = f_accum[ch] * sig_f * (1.0 - sig_f);
            for b in 0..bins {
                g_wf.data_mut()[ch * bins + b] +=
                    d_f * exp_w.data()[ch * bins + b] * sparsity.data()[b];
            }
        }
    }
    Ok(ScoringGrads {
        w_r: g_wr,
        b_r: g_br,
        w_f: g_wf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: Real, hi: Real) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn response_relu_and_bias() {
        let t = Tensor::from_vec(&[1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let r = response(&t, &Tensor::eye(2), &Tensor::zeros(&[2])).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);

        let zero = Tensor::zeros(&[1, 1, 2]);
        let b = Tensor::from_vec(&[2], vec![-1.0, 3.0]).unwrap();
        let r = response(&zero, &Tensor::eye(2), &b).unwrap();
        assert_eq!(r.data(), &[0.0, 3.0]);
    }

    #[test]
    fn response_matches_linear_clamp_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let t = rand_tensor(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let w = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[4], -1.0, 1.0);
        let r = response(&t, &w, &b).unwrap();
        for row in 0..6 {
            for ch in 0..4 {
                let mut acc = b.data()[ch];
                for k in 0..4 {
                    acc += w.at(&[ch, k]) * t.row(row)[k];
                }
                let expect = acc.max(0.0);
                assert!((r.row(row)[ch] - expect).abs() <= 1e-12);
                assert!(r.row(row)[ch] >= 0.0);
            }
        }
    }

    #[test]
    fn control_factor_hand_cases() {
        // zero weights, saturated sparsity: F = number of bins
        let r = Tensor::filled(&[4], 1.0);
        let f = control_factor(&r, &Tensor::zeros(&[3, 4]), 1e-8).unwrap();
        for &v in f.data() {
            assert_abs_diff_eq!(v, 4.0, epsilon = 1e-12);
        }

        // empty scene floors at eps_F
        let f = control_factor(&Tensor::zeros(&[4]), &Tensor::zeros(&[3, 4]), 1e-8).unwrap();
        for &v in f.data() {
            assert_eq!(v, 1e-8);
        }

        // forced arithmetic
        let r = Tensor::from_vec(&[2], vec![0.5, 0.25]).unwrap();
        let f = control_factor(&r, &Tensor::zeros(&[1, 2]), 1e-8).unwrap();
        assert_abs_diff_eq!(f.data()[0], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn initial_scores_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = rand_tensor(&mut rng, &[1, 2, 3], 0.0, 2.0);
        let f = rand_tensor(&mut rng, &[3], 0.5, 2.0);

        // a = 0 collapses everything
        let s = initial_scores(&r, &f, 0.0).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));

        // R = F pointwise gives exactly a
        let r_eq = Tensor::from_vec(&[1, 1, 3], f.data().to_vec()).unwrap();
        let s = initial_scores(&r_eq, &f, 2e-4).unwrap();
        for &v in s.data() {
            assert_abs_diff_eq!(v, 2e-4, epsilon = 1e-16);
        }

        // forced arithmetic: 1 * 2 / 0.75
        let r1 = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let f1 = Tensor::from_vec(&[1], vec![0.75]).unwrap();
        let s = initial_scores(&r1, &f1, 1.0).unwrap();
        assert_abs_diff_eq!(s.data()[0], 2.6667, epsilon = 1e-4);
    }

    #[test]
    fn initial_scores_homogeneous_in_a() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = rand_tensor(&mut rng, &[2, 2, 3], 0.0, 2.0);
        let f = rand_tensor(&mut rng, &[3], 0.1, 2.0);
        let s1 = initial_scores(&r, &f, 0.3).unwrap();
        let s2 = initial_scores(&r, &f, 0.9).unwrap();
        assert!(s1.scale(3.0).max_abs_diff(&s2) <= 1e-15);
    }

    #[test]
    fn scores_non_increasing_in_sparsity() {
        // raising any r_b raises F hence lowers every score component
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = rand_tensor(&mut rng, &[1, 4, 4], -1.0, 3.0);
        let params = ScoringParams::reference(4, 4);
        let r = response(&t, &params.w_r, &params.b_r).unwrap();
        let lo = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.0, 0.3]).unwrap();
        let mut hi = lo.clone();
        hi.set(&[2], 0.5);
        let f_lo = control_factor(&lo, &params.w_f, params.eps_f).unwrap();
        let f_hi = control_factor(&hi, &params.w_f, params.eps_f).unwrap();
        let s_lo = initial_scores(&r, &f_lo, params.a).unwrap();
        let s_hi = initial_scores(&r, &f_hi, params.a).unwrap();
        for (a, b) in s_lo.data().iter().zip(s_hi.data()) {
            assert!(b <= a);
        }
    }

    #[test]
    fn stp_weight_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = rand_tensor(&mut rng, &[2, 2, 2], -2.0, 2.0);

        // zero responses and (pre-floor) zero factor: sigmoid gives 1/4
        let zero_r = Tensor::zeros(&[2, 2, 2]);
        let zero_f = Tensor::zeros(&[2]);
        let out = stp_weight(&t, &zero_r, &zero_f, WeightFn::Sigmoid).unwrap();
        let expect = t.scale(0.25);
        assert!(out.max_abs_diff(&expect) <= 1e-12);

        // identity leaves tokens untouched
        let out = stp_weight(&t, &zero_r, &zero_f, WeightFn::Identity).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn stp_weight_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let t = rand_tensor(&mut rng, &[2, 3, 4], -2.0, 2.0);
        let r = rand_tensor(&mut rng, &[2, 3, 4], 0.0, 3.0);
        let f = rand_tensor(&mut rng, &[4], 0.0, 2.0);
        for fun in [WeightFn::Sigmoid, WeightFn::Tanh] {
            let out = stp_weight(&t, &r, &f, fun).unwrap();
            let g = |x: Real| match fun {
                WeightFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
                WeightFn::Tanh => x.tanh(),
                _ => unreachable!(),
            };
            for row in 0..6 {
                for ch in 0..4 {
                    let expect = g(r.row(row)[ch]) * g(f.data()[ch]) * t.row(row)[ch];
                    assert!((out.row(row)[ch] - expect).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn stp_softmax_normalizes_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = Tensor::filled(&[1, 2, 4], 1.0);
        let r = rand_tensor(&mut rng, &[1, 2, 4], 0.0, 3.0);
        let f = rand_tensor(&mut rng, &[4], 0.0, 2.0);
        let out = stp_weight(&t, &r, &f, WeightFn::Softmax).unwrap();
        // with unit tokens, each row is softmax(R_row) ⊙ softmax(F):
        // rows sum to sum(softmax(F) ⊙ softmax(R_row)) < 1
        let mut sf = f.data().to_vec();
        softmax_slice(&mut sf);
        for row in 0..2 {
            let mut sr = r.row(row).to_vec();
            softmax_slice(&mut sr);
            for ch in 0..4 {
                assert_abs_diff_eq!(out.row(row)[ch], sr[ch] * sf[ch], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_weighting_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = rand_tensor(&mut rng, &[3, 4, 4], -5.0, 5.0);
        let r = rand_tensor(&mut rng, &[3, 4, 4], 0.0, 4.0);
        let f = rand_tensor(&mut rng, &[4], 0.0, 3.0);
        let out = stp_weight(&t, &r, &f, WeightFn::Sigmoid).unwrap();
        for (y, x) in out.data().iter().zip(t.data()) {
            assert!(y.abs() <= x.abs() + 1e-15);
        }
    }

    #[test]
    fn grad_zero_upstream_and_zero_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = ScoringParams::reference(3, 2);
        let t = rand_tensor(&mut rng, &[1, 2, 3], -1.0, 1.0);
        let r = Tensor::from_vec(&[2], vec![0.4, 0.1]).unwrap();

        let g = scoring_grad(&t, &r, &params, &Tensor::zeros(&[1, 2, 3])).unwrap();
        assert!(g.w_r.data().iter().all(|&v| v == 0.0));
        assert!(g.b_r.data().iter().all(|&v| v == 0.0));
        assert!(g.w_f.data().iter().all(|&v| v == 0.0));

        let zero_t = Tensor::zeros(&[1, 2, 3]);
        let up = rand_tensor(&mut rng, &[1, 2, 3], -1.0, 1.0);
        let g = scoring_grad(&zero_t, &r, &params, &up).unwrap();
        assert!(g.w_r.data().iter().all(|&v| v == 0.0));
    }

    fn loss(t: &Tensor, r: &Tensor, params: &ScoringParams, up: &Tensor) -> Real {
        let (_, t_star) = score_tokens(t, r, params).unwrap();
        t_star
            .data()
            .iter()
            .zip(up.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    #[test]
    fn grad_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        let (c, bins) = (3, 2);
        let mut params = ScoringParams::reference(c, bins);
        params.w_r = rand_tensor(&mut rng, &[c, c], -0.8, 0.8);
        params.b_r = rand_tensor(&mut rng, &[c], -0.3, 0.3);
        params.w_f = rand_tensor(&mut rng, &[c, bins], -0.5, 0.5);
        let t = rand_tensor(&mut rng, &[2, 2, c], -1.5, 1.5);
        let sparsity = Tensor::from_vec(&[bins], vec![0.35, 0.6]).unwrap();
        let up = rand_tensor(&mut rng, &[2, 2, c], -1.0, 1.0);

        // keep clear of the ReLU kink so finite differences are valid
        let pre = linear(&t, &params.w_r, &params.b_r).unwrap();
        assert!(pre.data().iter().all(|v| v.abs() > 1e-4), "resample seed");

        let analytic = scoring_grad(&t, &sparsity, &params, &up).unwrap();
        let h = 1e-5;
        let check = |get: &mut dyn FnMut(&mut ScoringParams) -> &mut Tensor,
                     grad: &Tensor,
                     label: &str| {
            for j in 0..grad.len() {
                let mut plus = params.clone();
                get(&mut plus).data_mut()[j] += h;
                let mut minus = params.clone();
                get(&mut minus).data_mut()[j] -= h;
                let fd = (loss(&t, &sparsity, &plus, &up) - loss(&t, &sparsity, &minus, &up))
                    / (2.0 * h);
                let g = grad.data()[j];
                let denom = fd.abs().max(g.abs()).max(1e-8);
                assert!(
                    (fd - g).abs() / denom <= 1e-4,
                    "{label}[{j}]: analytic {g} vs fd {fd}"
                );
            }
        };
        check(&mut |p| &mut p.w_r, &analytic.w_r, "W_R");
        check(&mut |p| &mut p.b_r, &analytic.b_r, "b_R");
        check(&mut |p| &mut p.w_f, &analytic.w_f, "W_F");
    }

    #[test]
    fn grad_blocked_by_floored_factor() {
        // empty scene: F sits on the eps_F floor, so W_F gets no gradient
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let params = ScoringParams::reference(3, 2);
        let t = rand_tensor(&mut rng, &[1, 2, 3], -1.0, 1.0);
        let up = rand_tensor(&mut rng, &[1, 2, 3], -1.0, 1.0);
        let g = scoring_grad(&t, &Tensor::zeros(&[2]), &params, &up).unwrap();
        assert!(g.w_f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ScoringParams::reference(2, 2);
        p.a = 0.0;
        assert!(p.validate().is_err());
        let mut p = ScoringParams::reference(2, 2);
        p.eps_f = -1.0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn response_non_negative(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rand_tensor(&mut rng, &[2, 2, 3], -3.0, 3.0);
            let w = rand_tensor(&mut rng, &[3, 3], -2.0, 2.0);
            let b = rand_tensor(&mut rng, &[3], -2.0, 2.0);
            let r = response(&t, &w, &b).unwrap();
            prop_assert!(r.data().iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn control_factor_at_least_floor(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = rand_tensor(&mut rng, &[4], 0.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 4], -3.0, 3.0);
            let f = control_factor(&r, &w, 1e-8).unwrap();
            prop_assert!(f.data().iter().all(|&v| v >= 1e-8));
        }
    }
}
