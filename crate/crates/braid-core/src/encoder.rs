//! Toy bi-encoder mapping interleaved sequences to unit-norm embeddings.
//!
//! Text segments are means of hashed-bucket word embeddings; audio
//! segments are mean-pooled frames (optionally pruned by the selector or
//! a k-way average-pooling front end) projected into the shared space.
//! Segment vectors are gated elementwise by fixed, strictly positive
//! per-position vectors before fusion — additive positional codes would
//! cancel under mean pooling and make the encoder order-invariant, which
//! the gates deliberately avoid. The final projection is L2-normalized.

use crate::error::{Error, Result};
use crate::seeded;
use crate::selector::{self, SelectorModel};
use crate::synth::pseudo_tokens_of_text;
use crate::types::{AudioSegment, InterleavedSequence, Segment};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Sinusoidal gate amplitude; gates stay inside [1 - A, 1 + A].
pub const GATE_AMPLITUDE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub frame_dim: usize,
    /// Segment-space dimension (d).
    pub embed_dim: usize,
    /// Output embedding dimension (d_out).
    pub out_dim: usize,
    pub vocab_buckets: usize,
    pub max_segments: usize,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Gaussian jitter mixed into the hashed text rows at init; the
    /// "pretrained backbone" starts coarsely but imperfectly aligned and
    /// stage I training repairs the alignment.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            frame_dim: 32,
            embed_dim: 64,
            out_dim: 64,
            vocab_buckets: 4096,
            max_segments: 16,
            tau: 0.05,
            init_jitter: 0.8,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frame_dim", self.frame_dim),
            ("embed_dim", self.embed_dim),
            ("out_dim", self.out_dim),
            ("vocab_buckets", self.vocab_buckets),
            ("max_segments", self.max_segments),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be > 0", self.tau)));
        }
        Ok(())
    }
}

/// Fixed positional gates: `1 + A*sin(i * w_j)` with transformer-style
/// frequencies. Row 0 is all ones; every entry is strictly positive.
pub fn positional_gates(max_segments: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_segments, dim), |(i, j)| {
        let omega = 10_000f64.powf(-(j as f64) / dim as f64);
        1.0 + GATE_AMPLITUDE * (i as f64 * omega).sin()
    })
}

/// All learnable parameters of the bi-encoder plus the (frozen) selector
/// and fixed gates.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverModel {
    /// Hashed word embeddings, `vocab_buckets x d`.
    pub text_table: Array2<f64>,
    /// Audio projection, `frame_dim x d`.
    pub audio_proj: Array2<f64>,
    /// Fusion projection, `d x d_out`.
    pub fusion: Array2<f64>,
    pub tau: f64,
    pub selector: SelectorModel,
    /// Fixed `max_segments x d` gate matrix; not learned.
    pub positional_gates: Array2<f64>,
}

impl RetrieverModel {
    /// Seeded initialization playing the role of a pretrained multimodal
    /// backbone: text rows are the seeded hash directions of their
    /// buckets (the same derivation the frame featurizer uses for spoken
    /// words), and the projections start near the identity when square.
    /// With matching seed and dimensions the modalities are therefore
    /// coarsely aligned before any training.
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = seeded::rng(seeded::subseed(cfg.seed, "encoder-init", 0));
        let mut text_table = Array2::zeros((cfg.vocab_buckets, cfg.embed_dim));
        for b in 0..cfg.vocab_buckets {
            let base = seeded::unit_vector(
                seeded::subseed(cfg.seed, "token", b as u64),
                cfg.embed_dim,
            );
            let noise = seeded::unit_vector(
                seeded::subseed(cfg.seed, "token-jitter", b as u64),
                cfg.embed_dim,
            );
            let row = &base + &(&noise * cfg.init_jitter);
            let norm = row.dot(&row).sqrt();
            text_table.row_mut(b).assign(&(&row / norm));
        }
        let near_identity = |r: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |(i, j)| {
                let eye = if i == j { 1.0 } else { 0.0 };
                eye + r.sample::<f64, _>(StandardNormal) * 0.01
            })
        };
        let audio_proj = if cfg.frame_dim == cfg.embed_dim {
            near_identity(&mut r, cfg.frame_dim, cfg.embed_dim)
        } else {
            let s = 1.0 / (cfg.frame_dim as f64).sqrt();
            Array2::from_shape_fn((cfg.frame_dim, cfg.embed_dim), |_| {
                r.sample::<f64, _>(StandardNormal) * s
            })
        };
        let fusion = if cfg.embed_dim == cfg.out_dim {
            near_identity(&mut r, cfg.embed_dim, cfg.out_dim)
        } else {
            let s = 1.0 / (cfg.embed_dim as f64).sqrt();
            Array2::from_shape_fn((cfg.embed_dim, cfg.out_dim), |_| {
                r.sample::<f64, _>(StandardNormal) * s
            })
        };
        Ok(RetrieverModel {
            text_table,
            audio_proj,
            fusion,
            tau: cfg.tau,
            selector: SelectorModel::zeros(cfg.frame_dim),
            positional_gates: positional_gates(cfg.max_segments, cfg.embed_dim),
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.audio_proj.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.audio_proj.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.fusion.ncols()
    }

    pub fn vocab_buckets(&self) -> usize {
        self.text_table.nrows()
    }

    pub fn max_segments(&self) -> usize {
        self.positional_gates.nrows()
    }

    pub fn bucket_of(&self, word: &str) -> usize {
        (seeded::hash_str(word) % self.vocab_buckets() as u64) as usize
    }

    /// Learnable scalar count (selector included).
    pub fn num_params(&self) -> usize {
        self.text_table.len() + self.audio_proj.len() + self.fusion.len()
            + self.selector.num_params()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be > 0", self.tau)));
        }
        if self.text_table.ncols() != self.embed_dim()
            || self.fusion.nrows() != self.embed_dim()
            || self.positional_gates.ncols() != self.embed_dim()
        {
            return Err(Error::Config("inconsistent model dimensions".into()));
        }
        if self.selector.frame_dim() != self.frame_dim() {
            return Err(Error::DimMismatch {
                context: "selector vs audio_proj".into(),
                expected: self.frame_dim(),
                got: self.selector.frame_dim(),
            });
        }
        if self.positional_gates.iter().any(|g| *g <= 0.0) {
            return Err(Error::Config("positional gates must be positive".into()));
        }
        Ok(())
    }
}

/// Audio token front end applied before mean pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioFrontend {
    /// All frames pass through.
    Passthrough,
    /// Threshold filtering by the model's selector.
    Selector,
    /// k-way contiguous average pooling.
    Pool(usize),
}

impl AudioFrontend {
    pub fn from_flag(use_selector: bool) -> Self {
        if use_selector {
            AudioFrontend::Selector
        } else {
            AudioFrontend::Passthrough
        }
    }

    pub fn label(&self) -> String {
        match self {
            AudioFrontend::Passthrough => "passthrough".into(),
            AudioFrontend::Selector => "selector".into(),
            AudioFrontend::Pool(k) => format!("pool-{k}"),
        }
    }
}

/// Unit-norm output embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Array1<f64>);

impl Embedding {
    pub fn new(v: Array1<f64>) -> Result<Self> {
        let norm = v.dot(&v).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::invariant(
                "embedding",
                format!("norm {norm} is not 1 within 1e-9"),
            ));
        }
        Ok(Embedding(v))
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Row of 32-bit values as stored in the retrieval index.
    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|v| *v as f32).collect()
    }
}

/// Cosine similarity of unit-norm embeddings (plain dot product).
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            context: "similarity".into(),
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(a.as_array().dot(b.as_array()))
}

/// Split frames into `k` contiguous chunks (first `n mod k` chunks get
/// one extra frame) and mean-pool each chunk. Fewer than `k` frames
/// degrade to one row per frame.
pub fn pool_audio_kway(frames: &Array2<f32>, k: usize) -> Result<Array2<f32>> {
    if k == 0 {
        return Err(Error::Config("pool size k must be positive".into()));
    }
    let n = frames.nrows();
    if n == 0 {
        return Err(Error::invariant("pool_audio_kway", "no frames"));
    }
    let k = k.min(n);
    let base = n / k;
    let extra = n % k;
    let mut out = Array2::<f32>::zeros((k, frames.ncols()));
    let mut start = 0usize;
    for chunk in 0..k {
        let len = base + usize::from(chunk < extra);
        for j in 0..frames.ncols() {
            let mut acc = 0.0f64;
            for t in start..start + len {
                acc += f64::from(frames[[t, j]]);
            }
            out[[chunk, j]] = (acc / len as f64) as f32;
        }
        start += len;
    }
    Ok(out)
}

fn mean_rows_f64(frames: &Array2<f32>) -> Array1<f64> {
    let n = frames.nrows() as f64;
    let mut mean = Array1::<f64>::zeros(frames.ncols());
    for row in frames.rows() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += f64::from(*v);
        }
    }
    mean / n
}

/// Mean of hashed-bucket embeddings of whitespace-lowercased words.
pub fn encode_text_segment(model: &RetrieverModel, text: &str) -> Result<Array1<f64>> {
    let words = pseudo_tokens_of_text(text);
    if words.is_empty() {
        return Err(Error::invariant("encode_text_segment", "empty text"));
    }
    let mut acc = Array1::<f64>::zeros(model.embed_dim());
    for w in &words {
        acc += &model.text_table.row(model.bucket_of(w));
    }
    Ok(acc / words.len() as f64)
}

/// Front-end frames, mean-pool, then project by `audio_proj`.
pub fn encode_audio_segment(
    model: &RetrieverModel,
    audio: &AudioSegment,
    frontend: AudioFrontend,
) -> Result<Array1<f64>> {
    let mean = audio_mean(model, audio, frontend)?;
    Ok(mean.dot(&model.audio_proj))
}

fn audio_mean(
    model: &RetrieverModel,
    audio: &AudioSegment,
    frontend: AudioFrontend,
) -> Result<Array1<f64>> {
    if audio.frame_dim() != model.frame_dim() {
        return Err(Error::DimMismatch {
            context: "encode_audio_segment".into(),
            expected: model.frame_dim(),
            got: audio.frame_dim(),
        });
    }
    Ok(match frontend {
        AudioFrontend::Passthrough => mean_rows_f64(&audio.frames),
        AudioFrontend::Selector => {
            let (kept, _) = selector::filter_frames(&model.selector, &audio.frames)?;
            mean_rows_f64(&kept)
        }
        AudioFrontend::Pool(k) => mean_rows_f64(&pool_audio_kway(&audio.frames, k)?),
    })
}

/// Frames actually processed by the encoder for a sequence under a given
/// front end (the latency study counts these).
pub fn processed_audio_frames(
    model: &RetrieverModel,
    seq: &InterleavedSequence,
    frontend: AudioFrontend,
) -> Result<usize> {
    let mut total = 0usize;
    for seg in &seq.segments {
        if let Segment::Audio(a) = seg {
            total += match frontend {
                AudioFrontend::Passthrough => a.num_frames(),
                AudioFrontend::Selector => {
                    selector::filter_frames(&model.selector, &a.frames)?.1.len()
                }
                AudioFrontend::Pool(k) => k.min(a.num_frames()),
            };
        }
    }
    Ok(total)
}

/// Everything the backward pass needs about one encoded sequence.
#[derive(Debug, Clone)]
pub struct EncodeTrace {
    pub segments: Vec<SegmentTrace>,
    /// Gated segment mean `u` (dimension d).
    pub pre_fusion: Array1<f64>,
    /// Fusion output `v` before normalization (dimension d_out).
    pub pre_norm: Array1<f64>,
    pub norm: f64,
    /// Zero-norm fallback taken; no gradient flows.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub enum SegmentTrace {
    /// One bucket id per word occurrence.
    Text { buckets: Vec<usize> },
    /// Mean of the front-ended frames (dimension frame_dim).
    Audio { mean: Array1<f64> },
}

/// Encode one interleaved sequence into a unit embedding, keeping the
/// intermediate values needed for the analytic gradient.
pub fn encode_sequence_traced(
    model: &RetrieverModel,
    seq: &InterleavedSequence,
    frontend: AudioFrontend,
) -> Result<(Embedding, EncodeTrace)> {
    if seq.segments.is_empty() {
        return Err(Error::invariant(&seq.id, "empty sequence"));
    }
    if seq.segments.len() > model.max_segments() {
        return Err(Error::invariant(
            &seq.id,
            format!(
                "sequence has {} segments, model supports {}",
                seq.segments.len(),
                model.max_segments()
            ),
        ));
    }
    let mut traces = Vec::with_capacity(seq.segments.len());
    let mut pooled = Array1::<f64>::zeros(model.embed_dim());
    for (i, seg) in seq.segments.iter().enumerate() {
        let (vec, trace) = match seg {
            Segment::Text(t) => {
                let words = pseudo_tokens_of_text(t);
                if words.is_empty() {
                    return Err(Error::invariant(&seq.id, "empty text segment"));
                }
                let buckets: Vec<usize> = words.iter().map(|w| model.bucket_of(w)).collect();
                let mut acc = Array1::<f64>::zeros(model.embed_dim());
                for b in &buckets {
                    acc += &model.text_table.row(*b);
                }
                (acc / buckets.len() as f64, SegmentTrace::Text { buckets })
            }
            Segment::Audio(a) => {
                let mean = audio_mean(model, a, frontend)?;
                (mean.dot(&model.audio_proj), SegmentTrace::Audio { mean })
            }
        };
        let gated = &vec * &model.positional_gates.row(i);
        pooled += &gated;
        traces.push(trace);
    }
    pooled /= seq.segments.len() as f64;
    let v = pooled.dot(&model.fusion);
    let norm = v.dot(&v).sqrt();
    let (embedding, degenerate) = if norm <= f64::MIN_POSITIVE {
        let mut e1 = Array1::<f64>::zeros(model.out_dim());
        e1[0] = 1.0;
        (e1, true)
    } else {
        (&v / norm, false)
    };
    Ok((
        Embedding(embedding),
        EncodeTrace {
            segments: traces,
            pre_fusion: pooled,
            pre_norm: v,
            norm,
            degenerate,
        },
    ))
}

pub fn encode_sequence(
    model: &RetrieverModel,
    seq: &InterleavedSequence,
    frontend: AudioFrontend,
) -> Result<Embedding> {
    encode_sequence_traced(model, seq, frontend).map(|(e, _)| e)
}

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RetrieverCheckpoint {
    format_version: u32,
    frame_dim: usize,
    embed_dim: usize,
    out_dim: usize,
    vocab_buckets: usize,
    max_segments: usize,
    gate_amplitude: f64,
    tau: f64,
    text_table: Vec<Vec<f64>>,
    audio_proj: Vec<Vec<f64>>,
    fusion: Vec<Vec<f64>>,
    selector_weights: Vec<f64>,
    selector_bias: f64,
    selector_threshold: f64,
    selector_min_keep: usize,
}

fn to_rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>, context: &str) -> Result<Array2<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invariant(context, "ragged matrix"));
    }
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::invariant(context, e.to_string()))
}

/// Canonical checkpoint bytes; identical models always serialize to
/// identical bytes, so this doubles as the fingerprint input.
pub fn checkpoint_bytes(model: &RetrieverModel) -> Result<Vec<u8>> {
    model.validate()?;
    let ck = RetrieverCheckpoint {
        format_version: 1,
        frame_dim: model.frame_dim(),
        embed_dim: model.embed_dim(),
        out_dim: model.out_dim(),
        vocab_buckets: model.vocab_buckets(),
        max_segments: model.max_segments(),
        gate_amplitude: GATE_AMPLITUDE,
        tau: model.tau,
        text_table: to_rows(&model.text_table),
        audio_proj: to_rows(&model.audio_proj),
        fusion: to_rows(&model.fusion),
        selector_weights: model.selector.weights.to_vec(),
        selector_bias: model.selector.bias,
        selector_threshold: model.selector.threshold,
        selector_min_keep: model.selector.min_keep,
    };
    serde_json::to_vec(&ck).map_err(|e| Error::Config(format!("serialize checkpoint: {e}")))
}

/// Hex SHA-256 over the canonical checkpoint bytes.
pub fn model_fingerprint(model: &RetrieverModel) -> Result<String> {
    Ok(hex::encode(Sha256::digest(checkpoint_bytes(model)?)))
}

pub fn save_model(model: &RetrieverModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RetrieverModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: RetrieverCheckpoint =
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))?;
    if ck.format_version != 1 {
        return Err(Error::Config(format!(
            "unsupported checkpoint format_version {}",
            ck.format_version
        )));
    }
    let model = RetrieverModel {
        text_table: from_rows(ck.text_table, "text_table")?,
        audio_proj: from_rows(ck.audio_proj, "audio_proj")?,
        fusion: from_rows(ck.fusion, "fusion")?,
        tau: ck.tau,
        selector: SelectorModel::new(
            Array1::from_vec(ck.selector_weights),
            ck.selector_bias,
            ck.selector_threshold,
            ck.selector_min_keep,
        )?,
        positional_gates: positional_gates(ck.max_segments, ck.embed_dim),
    };
    model.validate()?;
    Ok(model)
}
