//! Contrastive training: InfoNCE with hand-derived gradients, SGD with
//! momentum under linear warmup, and the two-stage pipeline (weak pairs
//! first, interleaved instances with hard negatives second).
//!
//! Per instance, negatives are the instance's hard negatives plus the
//! other instances' positives (in-batch). The loss is
//! `-log(exp(s+/tau) / (exp(s+/tau) + sum_i exp(s-_i/tau)))`, reduced by
//! batch mean and computed with max-subtraction so no score/temperature
//! combination in range can overflow.

use crate::encoder::{
    encode_sequence_traced, AudioFrontend, Embedding, EncodeTrace, RetrieverModel, SegmentTrace,
};
use crate::error::{Error, Result};
use crate::seeded;
use crate::types::{Corpus, InterleavedSequence, Segment};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// One InfoNCE unit: a query, its positive document, and optional mined
/// hard negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub query: InterleavedSequence,
    pub positive: String,
    pub hard_negatives: Vec<String>,
}

impl TrainingInstance {
    pub fn new(
        query: InterleavedSequence,
        positive: impl Into<String>,
        hard_negatives: Vec<String>,
    ) -> Result<Self> {
        let positive = positive.into();
        if hard_negatives.contains(&positive) {
            return Err(Error::invariant(
                &query.id,
                format!("positive `{positive}` also appears among hard negatives"),
            ));
        }
        Ok(TrainingInstance {
            query,
            positive,
            hard_negatives,
        })
    }

    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for id in std::iter::once(&self.positive).chain(self.hard_negatives.iter()) {
            if corpus.get(id).is_none() {
                return Err(Error::UnknownId {
                    id: id.clone(),
                    context: format!("training instance for query `{}`", self.query.id),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Peak learning rate before desk scaling.
    pub learning_rate: f64,
    /// Desk-scale multiplier; the effective rate is `learning_rate * lr_scale`.
    pub lr_scale: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// Hard cap on warmup steps.
    pub max_warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Update only `audio_proj`, leaving the text table and fusion fixed.
    /// Used by stage I to align audio into the text geometry instead of
    /// letting the text geometry collapse toward the audio image.
    pub train_audio_only: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 5e-5,
            lr_scale: 10_000.0,
            warmup_fraction: 0.10,
            max_warmup_steps: 500,
            epochs: 2,
            batch_size: 32,
            momentum: 0.9,
            seed: 0,
            train_audio_only: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.lr_scale > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup_fraction {} must be in [0, 1]",
                self.warmup_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} must be in [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }

    pub fn effective_lr(&self) -> f64 {
        self.learning_rate * self.lr_scale
    }

    /// Linear warmup to the peak rate, then constant.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = ((total_steps as f64 * self.warmup_fraction).round() as usize)
            .min(self.max_warmup_steps);
        if step < warmup {
            self.effective_lr() * (step + 1) as f64 / warmup as f64
        } else {
            self.effective_lr()
        }
    }
}

/// Gradients for the learnable blocks, same shapes as the parameters.
/// Frozen parts (gates, selector during retriever training) have none.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub text_table: Array2<f64>,
    pub audio_proj: Array2<f64>,
    pub fusion: Array2<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &RetrieverModel) -> Self {
        Gradients {
            text_table: Array2::zeros(model.text_table.dim()),
            audio_proj: Array2::zeros(model.audio_proj.dim()),
            fusion: Array2::zeros(model.fusion.dim()),
        }
    }

    pub fn norm(&self) -> f64 {
        let sq = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
        (sq(&self.text_table) + sq(&self.audio_proj) + sq(&self.fusion)).sqrt()
    }
}

/// Numeric kernel: `-log(exp(zp)/(exp(zp) + sum exp(zn)))` over
/// `z = s/tau`, with max-subtraction.
pub fn infonce_from_scores(pos: f64, negs: &[f64], tau: f64) -> f64 {
    let zp = pos / tau;
    let mut zmax = zp;
    for n in negs {
        zmax = zmax.max(n / tau);
    }
    let mut denom = (zp - zmax).exp();
    for n in negs {
        denom += (n / tau - zmax).exp();
    }
    denom.ln() - (zp - zmax)
}

/// Forward pass shared by loss and gradient: every unique sequence in the
/// batch is encoded exactly once.
struct BatchForward {
    queries: Vec<(Embedding, EncodeTrace)>,
    docs: Vec<(Embedding, EncodeTrace)>,
    doc_index: BTreeMap<String, usize>,
    /// Per instance: positive doc slot, then negative doc slots
    /// (hard negatives, then other instances' positives, in order).
    candidates: Vec<(usize, Vec<usize>)>,
}

fn forward_batch(
    model: &RetrieverModel,
    batch: &[TrainingInstance],
    corpus: &Corpus,
    frontend: AudioFrontend,
) -> Result<BatchForward> {
    if batch.is_empty() {
        return Err(Error::invariant("infonce", "empty batch"));
    }
    let mut positives = std::collections::BTreeSet::new();
    for inst in batch {
        inst.validate_against(corpus)?;
        if !positives.insert(inst.positive.clone()) {
            return Err(Error::DuplicateId {
                id: inst.positive.clone(),
            });
        }
    }

    // Unique docs in deterministic first-use order.
    let mut doc_index: BTreeMap<String, usize> = BTreeMap::new();
    let mut doc_order: Vec<&str> = Vec::new();
    let intern = |id: &str, doc_index: &mut BTreeMap<String, usize>,
                      doc_order: &mut Vec<&str>| {
        if !doc_index.contains_key(id) {
            doc_index.insert(id.to_string(), doc_order.len());
        }
    };
    for inst in batch {
        if !doc_index.contains_key(inst.positive.as_str()) {
            intern(&inst.positive, &mut doc_index, &mut doc_order);
            doc_order.push(&inst.positive);
        }
        for h in &inst.hard_negatives {
            if !doc_index.contains_key(h.as_str()) {
                intern(h, &mut doc_index, &mut doc_order);
                doc_order.push(h);
            }
        }
    }

    let queries: Vec<(Embedding, EncodeTrace)> = batch
        .par_iter()
        .map(|inst| encode_sequence_traced(model, &inst.query, frontend))
        .collect::<Result<_>>()?;
    let docs: Vec<(Embedding, EncodeTrace)> = doc_order
        .par_iter()
        .map(|id| {
            let doc = corpus.get(id).expect("validated above");
            encode_sequence_traced(model, doc, frontend)
        })
        .collect::<Result<_>>()?;

    let candidates = batch
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let pos = doc_index[inst.positive.as_str()];
            let mut negs: Vec<usize> = inst
                .hard_negatives
                .iter()
                .map(|h| doc_index[h.as_str()])
                .collect();
            for (j, other) in batch.iter().enumerate() {
                if j != i {
                    negs.push(doc_index[other.positive.as_str()]);
                }
            }
            (pos, negs)
        })
        .collect();

    Ok(BatchForward {
        queries,
        docs,
        doc_index,
        candidates,
    })
}

/// Mean InfoNCE loss over a batch.
pub fn infonce_loss(
    model: &RetrieverModel,
    batch: &[TrainingInstance],
    corpus: &Corpus,
    frontend: AudioFrontend,
) -> Result<f64> {
    let fwd = forward_batch(model, batch, corpus, frontend)?;
    let mut total = 0.0;
    for (i, (pos, negs)) in fwd.candidates.iter().enumerate() {
        let q = fwd.queries[i].0.as_array();
        let sp = q.dot(fwd.docs[*pos].0.as_array());
        let sn: Vec<f64> = negs
            .iter()
            .map(|n| q.dot(fwd.docs[*n].0.as_array()))
            .collect();
        total += infonce_from_scores(sp, &sn, model.tau);
    }
    Ok(total / batch.len() as f64)
}

/// Push a gradient w.r.t. the unit embedding back through normalization,
/// fusion, gating, pooling, and the segment encoders.
fn backprop_encoding(
    model: &RetrieverModel,
    trace: &EncodeTrace,
    grad_embedding: &Array1<f64>,
    grads: &mut Gradients,
) {
    if trace.degenerate {
        return;
    }
    // d/dv of v/|v|: (g - (g.e)e)/|v|
    let e = &trace.pre_norm / trace.norm;
    let g_dot_e = grad_embedding.dot(&e);
    let grad_v = (grad_embedding - &(&e * g_dot_e)) / trace.norm;

    // v = u . fusion
    // fusion gradient: outer(u, grad_v)
    for (i, ui) in trace.pre_fusion.iter().enumerate() {
        for (j, gv) in grad_v.iter().enumerate() {
            grads.fusion[[i, j]] += ui * gv;
        }
    }
    let grad_u = model.fusion.dot(&grad_v);

    let n_segments = trace.segments.len() as f64;
    for (i, seg) in trace.segments.iter().enumerate() {
        // c_i = e_i * gate_i; u = mean_i c_i
        let gate = model.positional_gates.row(i);
        let grad_e: Array1<f64> =
            Array1::from_iter(grad_u.iter().zip(gate.iter()).map(|(g, w)| g * w / n_segments));
        match seg {
            SegmentTrace::Text { buckets } => {
                let scale = 1.0 / buckets.len() as f64;
                for b in buckets {
                    let mut row = grads.text_table.row_mut(*b);
                    row += &(&grad_e * scale);
                }
            }
            SegmentTrace::Audio { mean } => {
                // e = mean . audio_proj; gradient: outer(mean, grad_e)
                for (r, m) in mean.iter().enumerate() {
                    for (c, g) in grad_e.iter().enumerate() {
                        grads.audio_proj[[r, c]] += m * g;
                    }
                }
            }
        }
    }
}

/// Mean InfoNCE loss and its full analytic gradient for every learnable
/// block, including the paths through negative documents.
pub fn infonce_grad(
    model: &RetrieverModel,
    batch: &[TrainingInstance],
    corpus: &Corpus,
    frontend: AudioFrontend,
) -> Result<(f64, Gradients)> {
    let fwd = forward_batch(model, batch, corpus, frontend)?;
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros_like(model);

    let mut query_grads: Vec<Array1<f64>> =
        vec![Array1::zeros(model.out_dim()); fwd.queries.len()];
    let mut doc_grads: Vec<Array1<f64>> = vec![Array1::zeros(model.out_dim()); fwd.docs.len()];

    let mut total = 0.0;
    for (i, (pos, negs)) in fwd.candidates.iter().enumerate() {
        let q = fwd.queries[i].0.as_array();
        let slots: Vec<usize> = std::iter::once(*pos).chain(negs.iter().copied()).collect();
        let scores: Vec<f64> = slots
            .iter()
            .map(|s| q.dot(fwd.docs[*s].0.as_array()))
            .collect();
        total += infonce_from_scores(scores[0], &scores[1..], model.tau);

        // softmax over z = s/tau with max-subtraction
        let zmax = scores
            .iter()
            .map(|s| s / model.tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s / model.tau - zmax).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for (c, slot) in slots.iter().enumerate() {
            let softmax = exps[c] / denom;
            let indicator = if c == 0 { 1.0 } else { 0.0 };
            // dL/ds for the batch-mean loss
            let coef = (softmax - indicator) / (model.tau * n);
            if coef == 0.0 {
                continue;
            }
            query_grads[i] += &(fwd.docs[*slot].0.as_array() * coef);
            doc_grads[*slot] += &(q * coef);
        }
    }

    for (i, g) in query_grads.iter().enumerate() {
        backprop_encoding(model, &fwd.queries[i].1, g, &mut grads);
    }
    for (s, g) in doc_grads.iter().enumerate() {
        backprop_encoding(model, &fwd.docs[s].1, g, &mut grads);
    }
    drop(fwd.doc_index);
    Ok((total / n, grads))
}

/// One point of the recorded loss curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPoint {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// SGD-with-momentum training over one stage. Shuffling is deterministic
/// from `opt.seed`; a non-finite loss aborts with its step index.
pub fn train_stage(
    model: &RetrieverModel,
    data: &[TrainingInstance],
    opt: &OptimizerConfig,
    corpus: &Corpus,
    frontend: AudioFrontend,
) -> Result<(RetrieverModel, Vec<LossPoint>)> {
    opt.validate()?;
    if data.is_empty() {
        return Err(Error::invariant("train_stage", "empty training data"));
    }
    let mut model = model.clone();
    let mut velocity = Gradients::zeros_like(&model);
    let mut curve = Vec::new();

    let n_batches = data.len().div_ceil(opt.batch_size);
    let total_steps = n_batches * opt.epochs;
    let mut step = 0usize;

    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded::rng(seeded::subseed(
            opt.seed,
            "train-epoch",
            epoch as u64,
        )));
        for chunk in order.chunks(opt.batch_size) {
            let batch: Vec<TrainingInstance> =
                chunk.iter().map(|i| data[*i].clone()).collect();
            let (loss, grads) = infonce_grad(&model, &batch, corpus, frontend)?;
            if !loss.is_finite() {
                return Err(Error::Numeric {
                    step,
                    message: format!("training loss became {loss}"),
                });
            }
            let lr = opt.lr_at(step, total_steps);
            velocity.audio_proj = &velocity.audio_proj * opt.momentum - &(&grads.audio_proj * lr);
            model.audio_proj += &velocity.audio_proj;
            if !opt.train_audio_only {
                velocity.text_table =
                    &velocity.text_table * opt.momentum - &(&grads.text_table * lr);
                velocity.fusion = &velocity.fusion * opt.momentum - &(&grads.fusion * lr);
                model.text_table += &velocity.text_table;
                model.fusion += &velocity.fusion;
            }
            curve.push(LossPoint { step, loss, lr });
            step += 1;
        }
    }
    Ok((model, curve))
}

/// Stage plan: weak single-segment pairs for stage I (with their own
/// pseudo-document corpus), interleaved instances with hard negatives for
/// stage II (resolved in the main corpus).
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub stage1_instances: Vec<TrainingInstance>,
    pub stage1_corpus: Corpus,
    pub stage1_opt: OptimizerConfig,
    pub stage2_instances: Vec<TrainingInstance>,
    pub stage2_opt: OptimizerConfig,
    /// Apply the selector front end while training (it stays frozen).
    pub train_with_selector: bool,
}

impl StagePlan {
    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        for inst in &self.stage1_instances {
            if inst.query.segments.len() > 1 {
                return Err(Error::invariant(
                    &inst.query.id,
                    "stage I queries must be single-segment",
                ));
            }
            if !inst.hard_negatives.is_empty() {
                return Err(Error::invariant(
                    &inst.query.id,
                    "stage I instances cannot carry hard negatives",
                ));
            }
            let doc = self.stage1_corpus.get(&inst.positive).ok_or_else(|| {
                Error::UnknownId {
                    id: inst.positive.clone(),
                    context: "stage I corpus".into(),
                }
            })?;
            if doc.segments.len() > 1 {
                return Err(Error::invariant(
                    &inst.positive,
                    "stage I positives must be single-segment",
                ));
            }
        }
        for inst in &self.stage2_instances {
            if inst.query.segments.len() < 2 {
                return Err(Error::invariant(
                    &inst.query.id,
                    "stage II queries must be interleaved (>= 2 segments)",
                ));
            }
            inst.validate_against(corpus)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub stage1: RetrieverModel,
    pub stage2: RetrieverModel,
    /// (stage label, point) in training order.
    pub curve: Vec<(String, LossPoint)>,
}

/// Run stage I then stage II (initialized from the stage I checkpoint).
/// An empty stage II data set returns the stage I model unchanged.
pub fn run_two_stage(
    model: &RetrieverModel,
    plan: &StagePlan,
    corpus: &Corpus,
) -> Result<TwoStageResult> {
    plan.validate(corpus)?;
    let frontend = if plan.train_with_selector {
        AudioFrontend::Selector
    } else {
        AudioFrontend::Passthrough
    };

    let (stage1, curve1) = if plan.stage1_instances.is_empty() {
        (model.clone(), Vec::new())
    } else {
        train_stage(
            model,
            &plan.stage1_instances,
            &plan.stage1_opt,
            &plan.stage1_corpus,
            frontend,
        )?
    };

    let (stage2, curve2) = if plan.stage2_instances.is_empty() {
        (stage1.clone(), Vec::new())
    } else {
        train_stage(
            &stage1,
            &plan.stage2_instances,
            &plan.stage2_opt,
            corpus,
            frontend,
        )?
    };

    let mut curve = Vec::with_capacity(curve1.len() + curve2.len());
    curve.extend(curve1.into_iter().map(|p| ("stage1".to_string(), p)));
    curve.extend(curve2.into_iter().map(|p| ("stage2".to_string(), p)));
    Ok(TwoStageResult {
        stage1,
        stage2,
        curve,
    })
}

/// Derive stage I weak pairs from a corpus.
///
/// Cross-modal pairs put an audio segment on one side and its own
/// transcript text on the other (ASR/TTS-style same-content supervision,
/// direction alternating by document parity); text-text and audio-audio
/// pairs link sibling segments of one document. Single segments on both
/// sides, no interleaving, no hard negatives.
pub fn derive_weak_pairs(corpus: &Corpus) -> Result<(Corpus, Vec<TrainingInstance>)> {
    let mut pseudo_docs = Vec::new();
    let mut instances = Vec::new();
    for (i, doc) in corpus.iter().enumerate() {
        let texts: Vec<&Segment> = doc
            .segments
            .iter()
            .filter(|s| s.as_text().is_some())
            .collect();
        let audios: Vec<&Segment> = doc
            .segments
            .iter()
            .filter(|s| s.as_audio().is_some())
            .collect();

        let pair = |query_seg: Segment,
                    positive_seg: Segment,
                    tag: &str,
                    pseudo_docs: &mut Vec<InterleavedSequence>,
                    instances: &mut Vec<TrainingInstance>|
         -> Result<()> {
            let positive_id = format!("w:{}:{tag}", doc.id);
            pseudo_docs.push(InterleavedSequence::new(
                positive_id.clone(),
                vec![positive_seg],
            )?);
            let query = InterleavedSequence::new(
                format!("wq:{}:{tag}", doc.id),
                vec![query_seg],
            )?;
            instances.push(TrainingInstance::new(query, positive_id, Vec::new())?);
            Ok(())
        };

        // Same-content audio/transcript pairs, one direction per doc.
        for (j, audio) in audios.iter().enumerate() {
            let Some(transcript) = audio.as_audio().and_then(|a| a.transcript.clone()) else {
                continue;
            };
            let text_seg = Segment::text(transcript)?;
            if (i + j) % 2 == 0 {
                pair(
                    (*audio).clone(),
                    text_seg,
                    &format!("at{j}"),
                    &mut pseudo_docs,
                    &mut instances,
                )?;
            } else {
                pair(
                    text_seg,
                    (*audio).clone(),
                    &format!("ta{j}"),
                    &mut pseudo_docs,
                    &mut instances,
                )?;
            }
        }
        if texts.len() >= 2 {
            pair(
                texts[0].clone(),
                texts[1].clone(),
                "tt",
                &mut pseudo_docs,
                &mut instances,
            )?;
        }
        if audios.len() >= 2 {
            pair(
                audios[0].clone(),
                audios[1].clone(),
                "aa",
                &mut pseudo_docs,
                &mut instances,
            )?;
        }
    }
    Ok((Corpus::from_documents(pseudo_docs)?, instances))
}

/// Loss curve CSV: `step,stage,loss,lr`.
pub fn write_loss_curve(curve: &[(String, LossPoint)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    writeln!(w, "step,stage,loss,lr").map_err(|e| Error::io(path, e))?;
    for (stage, p) in curve {
        writeln!(w, "{},{},{},{}", p.step, stage, p.loss, p.lr)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::synth::{featurize_text_as_audio, EnvironmentKind, SynthConfig};
    use rand::Rng;

    fn small_encoder_cfg() -> EncoderConfig {
        EncoderConfig {
            frame_dim: 4,
            embed_dim: 6,
            out_dim: 5,
            vocab_buckets: 16,
            max_segments: 4,
            seed: 3,
            ..EncoderConfig::default()
        }
    }

    fn synth_cfg() -> SynthConfig {
        SynthConfig {
            seed: 3,
            frame_dim: 4,
            filler_ratio: 0.4,
            ..SynthConfig::default()
        }
    }

    fn seq(id: &str, words: &str, with_audio: bool) -> InterleavedSequence {
        let mut segs = vec![Segment::text(words).unwrap()];
        if with_audio {
            segs.push(
                featurize_text_as_audio(words, EnvironmentKind::Clean, &synth_cfg()).unwrap(),
            );
        }
        InterleavedSequence::new(id, segs).unwrap()
    }

    fn toy_world() -> (RetrieverModel, Corpus, Vec<TrainingInstance>) {
        let model = RetrieverModel::init(&small_encoder_cfg()).unwrap();
        let docs = vec![
            seq("d0", "kamo tiva ruze", true),
            seq("d1", "boma lesu wira", true),
            seq("d2", "zuno pake fiml", true),
            seq("d3", "hevo ruze gading", false),
            seq("d4", "weto nubi sorel", true),
        ];
        let corpus = Corpus::from_documents(docs).unwrap();
        let batch = vec![
            TrainingInstance::new(seq("q0", "kamo tiva asks", true), "d0", vec!["d3".into()])
                .unwrap(),
            TrainingInstance::new(seq("q1", "boma lesu asks", true), "d1", vec![]).unwrap(),
            TrainingInstance::new(
                seq("q2", "zuno pake asks", false),
                "d2",
                vec!["d3".into(), "d4".into()],
            )
            .unwrap(),
        ];
        (model, corpus, batch)
    }

    #[test]
    fn equal_scores_give_ln_n_plus_one() {
        for n in [1usize, 3, 7] {
            let negs = vec![0.42; n];
            let loss = infonce_from_scores(0.42, &negs, 0.05);
            assert!(
                (loss - ((n + 1) as f64).ln()).abs() < 1e-9,
                "n={n}: {loss}"
            );
        }
    }

    #[test]
    fn saturated_separation_vanishes() {
        let loss = infonce_from_scores(1.0, &[-1.0], 0.05);
        assert!(loss < 1e-15, "{loss}");
        assert!(loss >= 0.0);
    }

    #[test]
    fn larger_tau_shrinks_confident_loss() {
        // With s+ above every negative, flattening the logits raises loss?
        // No: doubling tau shrinks the logit spread, moving softmax toward
        // uniform, so loss increases. Direction check both ways.
        let l_small = infonce_from_scores(0.9, &[0.1, 0.0], 0.05);
        let l_large = infonce_from_scores(0.9, &[0.1, 0.0], 0.1);
        assert!(l_large > l_small);
    }

    #[test]
    fn loss_monotone_in_scores() {
        let base = infonce_from_scores(0.5, &[0.2, 0.1], 0.05);
        assert!(infonce_from_scores(0.6, &[0.2, 0.1], 0.05) < base);
        assert!(infonce_from_scores(0.5, &[0.3, 0.1], 0.05) > base);
    }

    #[test]
    fn no_overflow_at_extreme_scores_and_small_tau() {
        for tau in [1e-3, 0.05, 1.0] {
            let loss = infonce_from_scores(1.0, &[-1.0, 1.0, 0.999], tau);
            assert!(loss.is_finite(), "tau={tau}: {loss}");
        }
    }

    #[test]
    fn full_loss_equal_scores_identity() {
        // Positive and hard negatives with identical content (distinct
        // ids) produce equal similarities: loss must be exactly ln(N+1).
        let model = RetrieverModel::init(&small_encoder_cfg()).unwrap();
        let same = "kamo tiva ruze";
        let docs: Vec<InterleavedSequence> =
            (0..4).map(|i| seq(&format!("d{i}"), same, false)).collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let inst = TrainingInstance::new(
            seq("q", "anything here", false),
            "d0",
            vec!["d1".into(), "d2".into(), "d3".into()],
        )
        .unwrap();
        let loss =
            infonce_loss(&model, &[inst], &corpus, AudioFrontend::Passthrough).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn loss_invariant_to_negative_and_instance_order() {
        let (model, corpus, batch) = toy_world();
        let loss = infonce_loss(&model, &batch, &corpus, AudioFrontend::Passthrough).unwrap();

        let mut reordered = batch.clone();
        reordered[2].hard_negatives.reverse();
        reordered.swap(0, 1);
        let loss2 =
            infonce_loss(&model, &reordered, &corpus, AudioFrontend::Passthrough).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
    }

    #[test]
    fn duplicate_positives_rejected() {
        let (model, corpus, mut batch) = toy_world();
        batch[1].positive = "d0".into();
        assert!(matches!(
            infonce_loss(&model, &batch, &corpus, AudioFrontend::Passthrough),
            Err(Error::DuplicateId { .. })
        ));
    }

    #[test]
    fn unresolvable_id_rejected() {
        let (model, corpus, mut batch) = toy_world();
        batch[0].hard_negatives.push("ghost".into());
        assert!(matches!(
            infonce_loss(&model, &batch, &corpus, AudioFrontend::Passthrough),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn positive_in_hard_negatives_rejected_at_construction() {
        assert!(TrainingInstance::new(seq("q", "x", false), "d0", vec!["d0".into()]).is_err());
    }

    // The mandatory pre-build oracle: analytic gradients must match
    // central finite differences on every parameter block.
    #[test]
    fn gradients_match_finite_differences() {
        let (model, corpus, batch) = toy_world();
        for frontend in [AudioFrontend::Passthrough, AudioFrontend::Pool(2)] {
            let (_, grads) = infonce_grad(&model, &batch, &corpus, frontend).unwrap();
            let h = 1e-5;
            let loss_of = |m: &RetrieverModel| {
                infonce_loss(m, &batch, &corpus, frontend).unwrap()
            };
            let check = |analytic: f64, fd: f64, what: &str| {
                // Central differences bottom out around 1e-10 absolute
                // (cancellation at h=1e-5); below that the comparison is
                // FD noise, not gradient error.
                if (analytic - fd).abs() < 1e-9 {
                    return;
                }
                let denom = analytic.abs().max(fd.abs());
                let rel = (analytic - fd).abs() / denom;
                assert!(rel <= 1e-4, "{what}: analytic {analytic} vs fd {fd} (rel {rel})");
            };

            for r in 0..model.text_table.nrows() {
                for c in 0..model.text_table.ncols() {
                    let mut plus = model.clone();
                    plus.text_table[[r, c]] += h;
                    let mut minus = model.clone();
                    minus.text_table[[r, c]] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    check(grads.text_table[[r, c]], fd, &format!("text[{r},{c}]"));
                }
            }
            for r in 0..model.audio_proj.nrows() {
                for c in 0..model.audio_proj.ncols() {
                    let mut plus = model.clone();
                    plus.audio_proj[[r, c]] += h;
                    let mut minus = model.clone();
                    minus.audio_proj[[r, c]] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    check(grads.audio_proj[[r, c]], fd, &format!("audio[{r},{c}]"));
                }
            }
            for r in 0..model.fusion.nrows() {
                for c in 0..model.fusion.ncols() {
                    let mut plus = model.clone();
                    plus.fusion[[r, c]] += h;
                    let mut minus = model.clone();
                    minus.fusion[[r, c]] -= h;
                    let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    check(grads.fusion[[r, c]], fd, &format!("fusion[{r},{c}]"));
                }
            }
        }
    }

    #[test]
    fn gradient_vanishes_at_saturated_minimum() {
        // Constructed optimum: bucket rows set to basis vectors and an
        // identity fusion make the query equal its positive (similarity
        // exactly 1) and exactly orthogonal to both negatives. At
        // tau = 0.02 the softmax residual is e^-50; every parameter
        // gradient underflows.
        let cfg = EncoderConfig {
            frame_dim: 4,
            embed_dim: 6,
            out_dim: 6,
            vocab_buckets: 64,
            max_segments: 4,
            seed: 3,
            ..EncoderConfig::default()
        };
        let mut model = RetrieverModel::init(&cfg).unwrap();
        model.tau = 0.02;
        model.fusion = ndarray::Array2::eye(6);
        let words = ["kamo", "boma", "zuno"];
        let buckets: Vec<usize> = words.iter().map(|w| model.bucket_of(w)).collect();
        assert_eq!(
            buckets.iter().collect::<std::collections::BTreeSet<_>>().len(),
            3,
            "test words must hash to distinct buckets"
        );
        model.text_table.fill(0.0);
        for (i, b) in buckets.iter().enumerate() {
            model.text_table[[*b, i]] = 1.0;
        }
        let corpus = Corpus::from_documents(vec![
            seq("d0", "kamo", false),
            seq("d1", "boma", false),
            seq("d2", "zuno", false),
        ])
        .unwrap();
        let inst = TrainingInstance::new(
            seq("q", "kamo", false),
            "d0",
            vec!["d1".into(), "d2".into()],
        )
        .unwrap();
        let (loss, grads) =
            infonce_grad(&model, &[inst], &corpus, AudioFrontend::Passthrough).unwrap();
        assert!(loss < 1e-15, "loss {loss}");
        assert!(grads.norm() < 1e-10, "grad norm {}", grads.norm());
    }

    #[test]
    fn zero_epochs_returns_same_model() {
        let (model, corpus, batch) = toy_world();
        let opt = OptimizerConfig {
            epochs: 0,
            seed: 5,
            ..OptimizerConfig::default()
        };
        let (trained, curve) =
            train_stage(&model, &batch, &opt, &corpus, AudioFrontend::Passthrough).unwrap();
        assert_eq!(trained, model);
        assert!(curve.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let (model, corpus, batch) = toy_world();
        let opt = OptimizerConfig {
            epochs: 3,
            batch_size: 2,
            lr_scale: 2000.0,
            seed: 9,
            ..OptimizerConfig::default()
        };
        let (a, ca) =
            train_stage(&model, &batch, &opt, &corpus, AudioFrontend::Passthrough).unwrap();
        let (b, cb) =
            train_stage(&model, &batch, &opt, &corpus, AudioFrontend::Passthrough).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn training_reduces_loss_on_toy_data() {
        let (model, corpus, batch) = toy_world();
        let opt = OptimizerConfig {
            epochs: 8,
            batch_size: 3,
            lr_scale: 4000.0,
            seed: 2,
            ..OptimizerConfig::default()
        };
        let before =
            infonce_loss(&model, &batch, &corpus, AudioFrontend::Passthrough).unwrap();
        let (trained, curve) =
            train_stage(&model, &batch, &opt, &corpus, AudioFrontend::Passthrough).unwrap();
        let after =
            infonce_loss(&trained, &batch, &corpus, AudioFrontend::Passthrough).unwrap();
        assert!(after < before, "loss {before} -> {after}");
        assert!(!curve.is_empty());
    }

    #[test]
    fn warmup_schedule_shape() {
        let opt = OptimizerConfig {
            warmup_fraction: 0.1,
            max_warmup_steps: 500,
            ..OptimizerConfig::default()
        };
        let peak = opt.effective_lr();
        // 100 total steps -> 10 warmup steps.
        assert!((opt.lr_at(0, 100) - peak * 0.1).abs() < 1e-12);
        assert!((opt.lr_at(9, 100) - peak).abs() < 1e-12);
        assert_eq!(opt.lr_at(50, 100), peak);
        // Cap kicks in for very long runs.
        let long = OptimizerConfig {
            max_warmup_steps: 500,
            ..opt
        };
        assert!((long.lr_at(0, 100_000) - peak / 500.0).abs() < 1e-12);
        assert_eq!(long.lr_at(500, 100_000), peak);
    }

    #[test]
    fn empty_stage2_returns_stage1_checkpoint() {
        let (model, corpus, _) = toy_world();
        let (weak_corpus, weak_pairs) = derive_weak_pairs(&corpus).unwrap();
        assert!(!weak_pairs.is_empty());
        let plan = StagePlan {
            stage1_instances: weak_pairs,
            stage1_corpus: weak_corpus,
            stage1_opt: OptimizerConfig {
                epochs: 1,
                batch_size: 4,
                lr_scale: 1000.0,
                seed: 1,
                ..OptimizerConfig::default()
            },
            stage2_instances: Vec::new(),
            stage2_opt: OptimizerConfig::default(),
            train_with_selector: false,
        };
        let result = run_two_stage(&model, &plan, &corpus).unwrap();
        assert_eq!(result.stage1, result.stage2);
    }

    #[test]
    fn weak_pairs_are_single_segment_both_sides() {
        let (_, corpus, _) = toy_world();
        let (weak_corpus, pairs) = derive_weak_pairs(&corpus).unwrap();
        for inst in &pairs {
            assert_eq!(inst.query.segments.len(), 1);
            assert!(inst.hard_negatives.is_empty());
            let doc = weak_corpus.get(&inst.positive).unwrap();
            assert_eq!(doc.segments.len(), 1);
        }
    }

    #[test]
    fn stage_plan_rejects_interleaved_stage1() {
        let (model, corpus, batch) = toy_world();
        let plan = StagePlan {
            stage1_instances: vec![batch[0].clone()], // 2-segment query
            stage1_corpus: corpus.clone(),
            stage1_opt: OptimizerConfig::default(),
            stage2_instances: Vec::new(),
            stage2_opt: OptimizerConfig::default(),
            train_with_selector: false,
        };
        assert!(run_two_stage(&model, &plan, &corpus).is_err());
    }

    #[test]
    fn loss_curve_csv_round_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = vec![
            (
                "stage1".to_string(),
                LossPoint {
                    step: 0,
                    loss: 1.5,
                    lr: 0.1,
                },
            ),
            (
                "stage2".to_string(),
                LossPoint {
                    step: 1,
                    loss: 0.75,
                    lr: 0.5,
                },
            ),
        ];
        write_loss_curve(&curve, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,stage,loss,lr");
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn random_small_batches_pass_fd_spot_checks() {
        // A second, randomized gradient/FD comparison on a handful of
        // entries per block (cheap enough to run with several frontends).
        let mut r = seeded::rng(100);
        let (model, corpus, batch) = toy_world();
        for frontend in [AudioFrontend::Passthrough, AudioFrontend::Pool(3)] {
            let (_, grads) = infonce_grad(&model, &batch, &corpus, frontend).unwrap();
            let loss_of =
                |m: &RetrieverModel| infonce_loss(m, &batch, &corpus, frontend).unwrap();
            let h = 1e-5;
            for _ in 0..10 {
                let r_i = r.random_range(0..model.audio_proj.nrows());
                let c_i = r.random_range(0..model.audio_proj.ncols());
                let mut plus = model.clone();
                plus.audio_proj[[r_i, c_i]] += h;
                let mut minus = model.clone();
                minus.audio_proj[[r_i, c_i]] -= h;
                let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let a = grads.audio_proj[[r_i, c_i]];
                let denom = a.abs().max(fd.abs());
                if denom > 1e-10 {
                    assert!((a - fd).abs() / denom <= 1e-4);
                }
            }
        }
    }
}
