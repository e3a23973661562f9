//! Per-frame audio selector: informativeness scoring, timestamp-to-frame
//! label alignment, binary cross-entropy training, and threshold filtering.
//!
//! The scorer is a plain logistic over raw frame features. A frame is
//! labeled informative when its midpoint falls inside an annotated span;
//! at inference, frames with probability above the threshold survive and
//! a `min_keep` floor prevents segments from filtering to empty.

use crate::error::{Error, Result};
use crate::training::OptimizerConfig;
use crate::types::{AudioSegment, Segment, FRAME_MS};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorModel {
    pub weights: Array1<f64>,
    pub bias: f64,
    /// Keep frames with probability strictly above this, in (0, 1).
    pub threshold: f64,
    /// Minimum number of frames that survive filtering.
    pub min_keep: usize,
}

impl SelectorModel {
    pub fn new(weights: Array1<f64>, bias: f64, threshold: f64, min_keep: usize) -> Result<Self> {
        let model = SelectorModel {
            weights,
            bias,
            threshold,
            min_keep,
        };
        model.validate()?;
        Ok(model)
    }

    /// Zero-initialized scorer (every frame scores 0.5).
    pub fn zeros(frame_dim: usize) -> Self {
        SelectorModel {
            weights: Array1::zeros(frame_dim),
            bias: 0.0,
            threshold: 0.5,
            min_keep: 1,
        }
    }

    pub fn frame_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "selector threshold {} must be strictly inside (0, 1)",
                self.threshold
            )));
        }
        if self.min_keep == 0 {
            return Err(Error::Config("selector min_keep must be positive".into()));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("selector parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + 1
    }
}

/// Binary per-frame labels; length equals the segment's frame count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabels {
    pub labels: Vec<u8>,
}

impl FrameLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Label frames of an audio segment: frame `t` covers
/// `[40t, 40(t+1))` ms and is positive iff its midpoint `40t + 20` ms
/// lies inside any annotated span.
pub fn frame_labels(audio: &AudioSegment) -> FrameLabels {
    let labels = (0..audio.num_frames())
        .map(|t| {
            let mid = t as u32 * FRAME_MS + FRAME_MS / 2;
            let inside = audio
                .spans
                .iter()
                .any(|s| s.start_ms <= mid && mid < s.end_ms);
            u8::from(inside)
        })
        .collect();
    FrameLabels { labels }
}

/// [`frame_labels`] behind the segment type; errors on text segments.
pub fn align_spans_to_labels(segment: &Segment) -> Result<FrameLabels> {
    match segment {
        Segment::Audio(a) => Ok(frame_labels(a)),
        Segment::Text(_) => Err(Error::invariant(
            "align_spans_to_labels",
            "segment is not audio",
        )),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dim(model: &SelectorModel, frames: &Array2<f32>) -> Result<()> {
    if frames.ncols() != model.frame_dim() {
        return Err(Error::DimMismatch {
            context: "selector".into(),
            expected: model.frame_dim(),
            got: frames.ncols(),
        });
    }
    Ok(())
}

/// Selection probability per frame: `sigmoid(w . f_t + b)`.
pub fn score_frames(model: &SelectorModel, frames: &Array2<f32>) -> Result<Array1<f64>> {
    check_dim(model, frames)?;
    Ok(Array1::from_iter(frames.rows().into_iter().map(|row| {
        let z = row
            .iter()
            .zip(model.weights.iter())
            .map(|(f, w)| f64::from(*f) * w)
            .sum::<f64>()
            + model.bias;
        sigmoid(z)
    })))
}

/// Summed binary cross-entropy and its analytic gradient.
///
/// `loss = -sum_t [y_t log p_t + (1 - y_t) log(1 - p_t)]`, computed in
/// logit space for stability; `d loss / d logit_t = p_t - y_t`.
pub fn selector_loss_and_grad(
    model: &SelectorModel,
    frames: &Array2<f32>,
    labels: &FrameLabels,
) -> Result<(f64, Array1<f64>, f64)> {
    check_dim(model, frames)?;
    if labels.len() != frames.nrows() {
        return Err(Error::DimMismatch {
            context: "selector labels".into(),
            expected: frames.nrows(),
            got: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad_w = Array1::<f64>::zeros(model.frame_dim());
    let mut grad_b = 0.0;
    for (row, y) in frames.rows().into_iter().zip(labels.labels.iter()) {
        let y = f64::from(*y);
        let z = row
            .iter()
            .zip(model.weights.iter())
            .map(|(f, w)| f64::from(*f) * w)
            .sum::<f64>()
            + model.bias;
        // max(z, 0) - y*z + ln(1 + exp(-|z|))
        loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        let g = sigmoid(z) - y;
        for (gw, f) in grad_w.iter_mut().zip(row.iter()) {
            *gw += g * f64::from(*f);
        }
        grad_b += g;
    }
    Ok((loss, grad_w, grad_b))
}

/// Keep frames scoring strictly above the threshold, in original order.
/// If fewer than `min_keep` survive, the `min_keep` highest-probability
/// frames are kept instead (ties resolved toward lower indices).
pub fn filter_frames(
    model: &SelectorModel,
    frames: &Array2<f32>,
) -> Result<(Array2<f32>, Vec<usize>)> {
    let probs = score_frames(model, frames)?;
    let mut kept: Vec<usize> = (0..frames.nrows())
        .filter(|t| probs[*t] > model.threshold)
        .collect();
    if kept.len() < model.min_keep {
        let mut by_prob: Vec<usize> = (0..frames.nrows()).collect();
        // Stable sort by descending probability keeps lower indices first
        // on ties.
        by_prob.sort_by(|a, b| probs[*b].partial_cmp(&probs[*a]).unwrap());
        kept = by_prob
            .into_iter()
            .take(model.min_keep.min(frames.nrows()))
            .collect();
        kept.sort_unstable();
    }
    let mut out = Array2::<f32>::zeros((kept.len(), frames.ncols()));
    for (r, t) in kept.iter().enumerate() {
        out.row_mut(r).assign(&frames.row(*t));
    }
    Ok((out, kept))
}

/// Deterministic train/held-out split of labeled segments.
pub fn split_data(
    data: &[(Array2<f32>, FrameLabels)],
    heldout_fraction: f64,
    seed: u64,
) -> (Vec<(Array2<f32>, FrameLabels)>, Vec<(Array2<f32>, FrameLabels)>) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut crate::seeded::rng(crate::seeded::subseed(
        seed, "split", 0,
    )));
    let n_heldout = ((data.len() as f64) * heldout_fraction).round() as usize;
    let n_heldout = n_heldout.min(data.len().saturating_sub(1));
    let (held, train) = order.split_at(n_heldout);
    (
        train.iter().map(|i| data[*i].clone()).collect(),
        held.iter().map(|i| data[*i].clone()).collect(),
    )
}

/// Labeled (frames, labels) pairs for every audio segment in an iterator
/// of sequences.
pub fn labeled_segments<'a>(
    seqs: impl IntoIterator<Item = &'a crate::types::InterleavedSequence>,
) -> Vec<(Array2<f32>, FrameLabels)> {
    let mut out = Vec::new();
    for seq in seqs {
        for seg in &seq.segments {
            if let Segment::Audio(a) = seg {
                out.push((a.frames.clone(), frame_labels(a)));
            }
        }
    }
    out
}

fn heldout_loss(model: &SelectorModel, data: &[(Array2<f32>, FrameLabels)]) -> Result<f64> {
    let mut total = 0.0;
    let mut frames = 0usize;
    for (f, l) in data {
        let (loss, _, _) = selector_loss_and_grad(model, f, l)?;
        total += loss;
        frames += l.len();
    }
    Ok(if frames == 0 { 0.0 } else { total / frames as f64 })
}

/// Train the selector with SGD+momentum under the shared warmup schedule.
/// An internal 20% held-out split tracks the best model seen; training is
/// deterministic under `opt.seed` and aborts on non-finite loss.
pub fn train_selector(
    data: &[(Array2<f32>, FrameLabels)],
    opt: &OptimizerConfig,
) -> Result<SelectorModel> {
    opt.validate()?;
    if data.is_empty() {
        return Err(Error::invariant("train_selector", "empty training data"));
    }
    let frame_dim = data[0].0.ncols();
    let (train, held) = split_data(data, 0.2, opt.seed);
    let held = if held.is_empty() { &train } else { &held };

    let mut model = SelectorModel::zeros(frame_dim);
    let mut best = model.clone();
    let mut best_loss = heldout_loss(&model, held)?;

    let n_batches = train.len().div_ceil(opt.batch_size);
    let total_steps = n_batches * opt.epochs;
    let mut vel_w = Array1::<f64>::zeros(frame_dim);
    let mut vel_b = 0.0f64;
    let mut step = 0usize;

    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut crate::seeded::rng(crate::seeded::subseed(
            opt.seed,
            "selector-epoch",
            epoch as u64,
        )));
        for batch in order.chunks(opt.batch_size) {
            let mut grad_w = Array1::<f64>::zeros(frame_dim);
            let mut grad_b = 0.0f64;
            let mut loss = 0.0f64;
            let mut n_frames = 0usize;
            for idx in batch {
                let (f, l) = &train[*idx];
                let (seg_loss, gw, gb) = selector_loss_and_grad(&model, f, l)?;
                loss += seg_loss;
                grad_w += &gw;
                grad_b += gb;
                n_frames += l.len();
            }
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    step,
                    message: format!("selector loss became {loss}"),
                });
            }
            // Per-frame mean keeps the step size independent of segment
            // lengths.
            let scale = 1.0 / n_frames.max(1) as f64;
            let lr = opt.lr_at(step, total_steps);
            vel_w = &vel_w * opt.momentum - &(&grad_w * (scale * lr));
            vel_b = vel_b * opt.momentum - grad_b * scale * lr;
            model.weights += &vel_w;
            model.bias += vel_b;
            step += 1;
        }
        let hl = heldout_loss(&model, held)?;
        if hl < best_loss {
            best_loss = hl;
            best = model.clone();
        }
    }
    Ok(best)
}

/// Token-level F1 of thresholded predictions against labels.
pub fn token_f1(model: &SelectorModel, data: &[(Array2<f32>, FrameLabels)]) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (frames, labels) in data {
        let probs = score_frames(model, frames)?;
        for (p, y) in probs.iter().zip(labels.labels.iter()) {
            let pred = *p > model.threshold;
            match (pred, *y == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    })
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SelectorCheckpoint {
    format_version: u32,
    frame_dim: usize,
    weights: Vec<f64>,
    bias: f64,
    threshold: f64,
    min_keep: usize,
}

pub fn save_selector(model: &SelectorModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ck = SelectorCheckpoint {
        format_version: 1,
        frame_dim: model.frame_dim(),
        weights: model.weights.to_vec(),
        bias: model.bias,
        threshold: model.threshold,
        min_keep: model.min_keep,
    };
    let json = serde_json::to_string_pretty(&ck)
        .map_err(|e| Error::Config(format!("serialize selector: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_selector(path: impl AsRef<Path>) -> Result<SelectorModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: SelectorCheckpoint =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    if ck.weights.len() != ck.frame_dim {
        return Err(Error::DimMismatch {
            context: "selector checkpoint".into(),
            expected: ck.frame_dim,
            got: ck.weights.len(),
        });
    }
    SelectorModel::new(
        Array1::from_vec(ck.weights),
        ck.bias,
        ck.threshold,
        ck.min_keep,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded;
    use crate::synth::{self, EnvironmentKind, SynthConfig};
    use crate::types::SpanAnnotation;
    use rand::Rng;

    fn random_frames(seed: u64, n: usize, dim: usize) -> Array2<f32> {
        let mut r = seeded::rng(seed);
        Array2::from_shape_fn((n, dim), |_| r.random_range(-1.0f32..1.0))
    }

    fn audio(n: usize, dim: usize, spans: Vec<SpanAnnotation>) -> AudioSegment {
        AudioSegment {
            frames: random_frames(1, n, dim),
            spans,
            transcript: None,
        }
    }

    #[test]
    fn labels_full_span() {
        let a = audio(4, 2, vec![SpanAnnotation { start_ms: 0, end_ms: 160 }]);
        assert_eq!(frame_labels(&a).labels, vec![1, 1, 1, 1]);
    }

    #[test]
    fn labels_empty_spans() {
        let a = audio(3, 2, vec![]);
        assert_eq!(frame_labels(&a).labels, vec![0, 0, 0]);
    }

    #[test]
    fn labels_midpoint_rule() {
        // Span [30, 50) over 2 frames: midpoints 20 and 60 are outside.
        let a = audio(2, 2, vec![SpanAnnotation { start_ms: 30, end_ms: 50 }]);
        assert_eq!(frame_labels(&a).labels, vec![0, 0]);
        // Span [20, 50): midpoint 20 is inside (half-open on the right).
        let a = audio(2, 2, vec![SpanAnnotation { start_ms: 20, end_ms: 50 }]);
        assert_eq!(frame_labels(&a).labels, vec![1, 0]);
    }

    #[test]
    fn labels_match_hand_enumerated_oracle() {
        let mut r = seeded::rng(5);
        for trial in 0..100 {
            let n = r.random_range(1..12);
            let total = n as u32 * FRAME_MS;
            let mut spans = Vec::new();
            let mut cursor = 0u32;
            while cursor + 10 < total && r.random_bool(0.6) {
                let start = r.random_range(cursor..total - 5);
                let end = r.random_range(start + 1..=total);
                spans.push(SpanAnnotation {
                    start_ms: start,
                    end_ms: end,
                });
                cursor = end;
            }
            let a = audio(n, 3, spans.clone());
            let got = frame_labels(&a).labels;
            for (t, label) in got.iter().enumerate() {
                let mid = t as u32 * 40 + 20;
                let mut expect = 0u8;
                for s in &spans {
                    if mid >= s.start_ms && mid < s.end_ms {
                        expect = 1;
                    }
                }
                assert_eq!(*label, expect, "trial {trial} frame {t}");
            }
        }
    }

    #[test]
    fn align_rejects_text_segments() {
        let seg = Segment::text("hello").unwrap();
        assert!(align_spans_to_labels(&seg).is_err());
    }

    #[test]
    fn labeling_is_idempotent() {
        let a = audio(6, 2, vec![SpanAnnotation { start_ms: 40, end_ms: 200 }]);
        assert_eq!(frame_labels(&a), frame_labels(&a));
    }

    #[test]
    fn zero_model_scores_half() {
        let m = SelectorModel::zeros(4);
        let p = score_frames(&m, &random_frames(2, 5, 4)).unwrap();
        for v in p.iter() {
            assert_eq!(*v, 0.5);
        }
    }

    #[test]
    fn large_bias_saturates() {
        let m = SelectorModel {
            bias: 10.0,
            ..SelectorModel::zeros(4)
        };
        let p = score_frames(&m, &random_frames(3, 5, 4)).unwrap();
        for v in p.iter() {
            assert!(*v > 0.999);
        }
    }

    #[test]
    fn scores_match_scalar_reference() {
        let mut r = seeded::rng(9);
        let m = SelectorModel {
            weights: Array1::from_iter((0..6).map(|_| r.random_range(-2.0..2.0))),
            bias: 0.3,
            ..SelectorModel::zeros(6)
        };
        let frames = random_frames(4, 10, 6);
        let got = score_frames(&m, &frames).unwrap();
        for t in 0..10 {
            let mut z = m.bias;
            for j in 0..6 {
                z += f64::from(frames[[t, j]]) * m.weights[j];
            }
            let expect = 1.0 / (1.0 + (-z).exp());
            assert!((got[t] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn score_dim_mismatch_errors() {
        let m = SelectorModel::zeros(4);
        assert!(matches!(
            score_frames(&m, &random_frames(1, 3, 5)),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn uniform_half_loss_is_t_ln2() {
        let m = SelectorModel::zeros(3);
        for t in [1usize, 4, 9] {
            let frames = random_frames(7, t, 3);
            let labels = FrameLabels {
                labels: (0..t).map(|i| (i % 2) as u8).collect(),
            };
            let (loss, _, _) = selector_loss_and_grad(&m, &frames, &labels).unwrap();
            assert!((loss - t as f64 * std::f64::consts::LN_2).abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_correct_predictions_vanish() {
        // One feature; weight chosen so |logit| > 10 with the right sign.
        let frames = ndarray::arr2(&[[1.0f32], [-1.0f32]]);
        let labels = FrameLabels { labels: vec![1, 0] };
        let m = SelectorModel {
            weights: Array1::from_vec(vec![12.0]),
            ..SelectorModel::zeros(1)
        };
        let (loss, _, _) = selector_loss_and_grad(&m, &frames, &labels).unwrap();
        assert!(loss < 1e-3);
        assert!(loss > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = seeded::rng(21);
        for trial in 0..20 {
            let dim = r.random_range(1..6);
            let n = r.random_range(1..8);
            let frames = random_frames(100 + trial, n, dim);
            let labels = FrameLabels {
                labels: (0..n).map(|_| u8::from(r.random_bool(0.5))).collect(),
            };
            let m = SelectorModel {
                weights: Array1::from_iter((0..dim).map(|_| r.random_range(-1.5..1.5))),
                bias: r.random_range(-1.0..1.0),
                ..SelectorModel::zeros(dim)
            };
            let (_, gw, gb) = selector_loss_and_grad(&m, &frames, &labels).unwrap();
            let h = 1e-6;
            let loss_at = |m: &SelectorModel| selector_loss_and_grad(m, &frames, &labels).unwrap().0;
            let check = |analytic: f64, fd: f64| {
                let denom = analytic.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (analytic - fd).abs() / denom <= 1e-6,
                    "trial {trial}: analytic {analytic} vs fd {fd}"
                );
            };
            for j in 0..dim {
                let mut plus = m.clone();
                plus.weights[j] += h;
                let mut minus = m.clone();
                minus.weights[j] -= h;
                check(gw[j], (loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
            }
            let mut plus = m.clone();
            plus.bias += h;
            let mut minus = m.clone();
            minus.bias -= h;
            check(gb, (loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
        }
    }

    #[test]
    fn filter_keeps_all_when_above_threshold() {
        let m = SelectorModel {
            bias: 5.0,
            ..SelectorModel::zeros(3)
        };
        let frames = random_frames(3, 6, 3);
        let (kept, idx) = filter_frames(&m, &frames).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(kept, frames);
    }

    #[test]
    fn filter_min_keep_takes_argmax() {
        let m = SelectorModel {
            weights: Array1::from_vec(vec![1.0]),
            bias: -10.0,
            ..SelectorModel::zeros(1)
        };
        let frames = ndarray::arr2(&[[0.1f32], [0.9], [0.5]]);
        let (kept, idx) = filter_frames(&m, &frames).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(kept, ndarray::arr2(&[[0.9f32]]));
    }

    #[test]
    fn filter_matches_brute_force_oracle() {
        let mut r = seeded::rng(31);
        for trial in 0..100u64 {
            let dim = r.random_range(1..5);
            let n = r.random_range(1..15);
            let frames = random_frames(500 + trial, n, dim);
            let m = SelectorModel {
                weights: Array1::from_iter((0..dim).map(|_| r.random_range(-3.0..3.0))),
                bias: r.random_range(-1.0..1.0),
                threshold: r.random_range(0.05..0.95),
                min_keep: r.random_range(1..4),
            };
            let probs = score_frames(&m, &frames).unwrap();
            // Oracle: scalar rule application.
            let mut expect: Vec<usize> =
                (0..n).filter(|t| probs[*t] > m.threshold).collect();
            if expect.len() < m.min_keep {
                let mut ranked: Vec<usize> = (0..n).collect();
                ranked.sort_by(|a, b| {
                    probs[*b]
                        .partial_cmp(&probs[*a])
                        .unwrap()
                        .then(a.cmp(b))
                });
                expect = ranked.into_iter().take(m.min_keep.min(n)).collect();
                expect.sort_unstable();
            }
            let (_, idx) = filter_frames(&m, &frames).unwrap();
            assert_eq!(idx, expect, "trial {trial}");
            // Order preservation.
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn raising_threshold_never_grows_kept_set() {
        let frames = random_frames(77, 12, 4);
        let mut r = seeded::rng(78);
        let weights = Array1::from_iter((0..4).map(|_| r.random_range(-2.0..2.0)));
        let mut prev: Option<Vec<usize>> = None;
        for threshold in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let m = SelectorModel {
                weights: weights.clone(),
                bias: 0.0,
                threshold,
                min_keep: 1,
            };
            let probs = score_frames(&m, &frames).unwrap();
            let kept: Vec<usize> = (0..12).filter(|t| probs[*t] > threshold).collect();
            if let Some(p) = &prev {
                assert!(kept.iter().all(|k| p.contains(k)));
            }
            prev = Some(kept);
        }
    }

    fn synth_training_data(seed: u64, n: usize) -> Vec<(Array2<f32>, FrameLabels)> {
        let cfg = SynthConfig {
            seed,
            ..SynthConfig::default()
        };
        let mut out = Vec::new();
        for i in 0..n {
            let env = EnvironmentKind::ALL[i % 4];
            let text = format!("topic{i} word{} extra{} tail", i * 3 + 1, i * 7 + 2);
            let seg = synth::featurize_text_as_audio(&text, env, &cfg).unwrap();
            let a = seg.as_audio().unwrap();
            out.push((a.frames.clone(), frame_labels(a)));
        }
        out
    }

    fn quick_opt(seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            epochs: 5,
            batch_size: 8,
            lr_scale: 40_000.0, // effective lr 2.0 at the 5e-5 base
            seed,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn training_learns_separable_data() {
        let data = synth_training_data(3, 60);
        let (train, held) = split_data(&data, 0.25, 3);
        let model = train_selector(&train, &quick_opt(3)).unwrap();
        let f1 = token_f1(&model, &held).unwrap();
        assert!(f1 >= 0.95, "held-out F1 {f1}");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = synth_training_data(4, 8);
        let opt = OptimizerConfig {
            epochs: 0,
            ..quick_opt(4)
        };
        let model = train_selector(&data, &opt).unwrap();
        assert_eq!(model, SelectorModel::zeros(32));
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_training_data(5, 20);
        let a = train_selector(&data, &quick_opt(11)).unwrap();
        let b = train_selector(&data, &quick_opt(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("selector.json");
        let data = synth_training_data(6, 12);
        let model = train_selector(&data, &quick_opt(6)).unwrap();
        save_selector(&model, &path).unwrap();
        assert_eq!(load_selector(&path).unwrap(), model);
    }

    #[test]
    fn threshold_bounds_are_enforced() {
        assert!(SelectorModel::new(Array1::zeros(2), 0.0, 0.0, 1).is_err());
        assert!(SelectorModel::new(Array1::zeros(2), 0.0, 1.0, 1).is_err());
        assert!(SelectorModel::new(Array1::zeros(2), 0.0, 0.5, 0).is_err());
    }
}
