//! Evaluation harness: ranking metrics, the four retrieval settings, and
//! the perturbation/pooling/ablation/latency studies.

pub mod perturb;
pub mod studies;

use crate::encoder::{encode_sequence, AudioFrontend, RetrieverModel};
use crate::error::{Error, Result};
use crate::retrieval::{batch_search, build_index};
use crate::seeded;
use crate::types::{
    Benchmark, Corpus, InterleavedSequence, Qrels, RankedList, Segment, SegmentKind,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Indicator that any positive document appears within the top-k.
pub fn recall_at_k(run: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    let judged = qrels.judged(&run.query_id).ok_or_else(|| Error::UnknownId {
        id: run.query_id.clone(),
        context: "qrels".into(),
    })?;
    if !judged.values().any(|g| *g >= 1) {
        return Err(Error::invariant(
            &run.query_id,
            "query has no positive judgment",
        ));
    }
    let hit = run
        .entries()
        .iter()
        .take(k)
        .any(|(d, _)| qrels.grade(&run.query_id, d) >= 1);
    Ok(if hit { 1.0 } else { 0.0 })
}

/// nDCG@k with the `2^grade - 1` gain and `log2(rank + 1)` discount.
/// The ideal ranking comes from the query's judged grades sorted
/// descending; a query with no positive grades is an error, not a zero.
pub fn ndcg_at_k(run: &RankedList, qrels: &Qrels, k: usize) -> Result<f64> {
    let judged = qrels.judged(&run.query_id).ok_or_else(|| Error::UnknownId {
        id: run.query_id.clone(),
        context: "qrels".into(),
    })?;
    let gain = |g: u32| (2f64.powi(g as i32)) - 1.0;
    let mut ideal: Vec<f64> = judged.values().map(|g| gain(*g)).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        return Err(Error::invariant(
            &run.query_id,
            "IDCG is zero: no positive grades",
        ));
    }
    let dcg: f64 = run
        .entries()
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, (d, _))| gain(qrels.grade(&run.query_id, d)) / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / idcg)
}

/// The four retrieval settings (query form -> document form).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalSetting {
    AudioToText,
    TextToAudio,
    InterleavedToText,
    InterleavedToAudio,
}

impl RetrievalSetting {
    pub const ALL: [RetrievalSetting; 4] = [
        RetrievalSetting::AudioToText,
        RetrievalSetting::TextToAudio,
        RetrievalSetting::InterleavedToText,
        RetrievalSetting::InterleavedToAudio,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            RetrievalSetting::AudioToText => "A->T",
            RetrievalSetting::TextToAudio => "T->A",
            RetrievalSetting::InterleavedToText => "IAT->T",
            RetrievalSetting::InterleavedToAudio => "IAT->A",
        }
    }

    /// Modality kept on the document side.
    pub fn doc_kind(&self) -> SegmentKind {
        match self {
            RetrievalSetting::AudioToText | RetrievalSetting::InterleavedToText => {
                SegmentKind::Text
            }
            RetrievalSetting::TextToAudio | RetrievalSetting::InterleavedToAudio => {
                SegmentKind::Audio
            }
        }
    }

    /// Modality kept on the query side; `None` keeps the interleaved form.
    pub fn query_kind(&self) -> Option<SegmentKind> {
        match self {
            RetrievalSetting::AudioToText => Some(SegmentKind::Audio),
            RetrievalSetting::TextToAudio => Some(SegmentKind::Text),
            _ => None,
        }
    }
}

/// Keep only segments of one modality; `None` when nothing survives.
pub fn project_modality(
    seq: &InterleavedSequence,
    keep: SegmentKind,
) -> Option<InterleavedSequence> {
    let segments: Vec<Segment> = seq
        .segments
        .iter()
        .filter(|s| s.kind() == keep)
        .cloned()
        .collect();
    if segments.is_empty() {
        None
    } else {
        Some(InterleavedSequence {
            id: seq.id.clone(),
            segments,
        })
    }
}

pub(crate) fn project_corpus(corpus: &Corpus, keep: SegmentKind) -> Result<Corpus> {
    let docs: Vec<InterleavedSequence> = corpus
        .iter()
        .map(|d| {
            project_modality(d, keep).ok_or_else(|| {
                Error::invariant(
                    &d.id,
                    format!("document has no {keep:?} segments; setting would be empty"),
                )
            })
        })
        .collect::<Result<_>>()?;
    Corpus::from_documents(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingMetrics {
    pub recall_at: BTreeMap<usize, f64>,
    pub ndcg_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

/// Per-setting mean metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_setting: BTreeMap<RetrievalSetting, SettingMetrics>,
}

impl MetricReport {
    pub fn mean_recall(&self, k: usize) -> f64 {
        let vals: Vec<f64> = self
            .per_setting
            .values()
            .filter_map(|m| m.recall_at.get(&k).copied())
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn mean_ndcg(&self, k: usize) -> f64 {
        let vals: Vec<f64> = self
            .per_setting
            .values()
            .filter_map(|m| m.ndcg_at.get(&k).copied())
            .collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn to_tsv(&self) -> String {
        let mut ks: Vec<usize> = Vec::new();
        if let Some(m) = self.per_setting.values().next() {
            ks = m.recall_at.keys().copied().collect();
        }
        let mut out = String::from("setting\tn_queries");
        for k in &ks {
            let _ = write!(out, "\trecall@{k}");
        }
        for k in &ks {
            let _ = write!(out, "\tndcg@{k}");
        }
        out.push('\n');
        for setting in RetrievalSetting::ALL {
            if let Some(m) = self.per_setting.get(&setting) {
                let _ = write!(out, "{}\t{}", setting.label(), m.n_queries);
                for k in &ks {
                    let _ = write!(out, "\t{:.4}", m.recall_at[k]);
                }
                for k in &ks {
                    let _ = write!(out, "\t{:.4}", m.ndcg_at[k]);
                }
                out.push('\n');
            }
        }
        out
    }

    /// Aligned plain-text table, one row per setting.
    pub fn to_table(&self) -> String {
        let mut ks: Vec<usize> = Vec::new();
        if let Some(m) = self.per_setting.values().next() {
            ks = m.recall_at.keys().copied().collect();
        }
        let mut out = String::new();
        let _ = write!(out, "{:<8}{:>10}", "setting", "queries");
        for k in &ks {
            let _ = write!(out, "{:>12}", format!("R@{k}"));
        }
        for k in &ks {
            let _ = write!(out, "{:>12}", format!("nDCG@{k}"));
        }
        out.push('\n');
        for setting in RetrievalSetting::ALL {
            if let Some(m) = self.per_setting.get(&setting) {
                let _ = write!(out, "{:<8}{:>10}", setting.label(), m.n_queries);
                for k in &ks {
                    let _ = write!(out, "{:>12.4}", m.recall_at[k]);
                }
                for k in &ks {
                    let _ = write!(out, "{:>12.4}", m.ndcg_at[k]);
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Runs plus the report computed from them.
#[derive(Debug, Clone)]
pub struct EvaluationOutput {
    pub report: MetricReport,
    pub runs: BTreeMap<RetrievalSetting, Vec<RankedList>>,
}

/// Mean metrics per setting recomputed from persisted runs; the report
/// from [`evaluate_settings`] must match this exactly.
pub fn metrics_from_runs(
    runs: &BTreeMap<RetrievalSetting, Vec<RankedList>>,
    qrels: &Qrels,
    k_list: &[usize],
) -> Result<MetricReport> {
    let mut per_setting = BTreeMap::new();
    for (setting, setting_runs) in runs {
        if setting_runs.is_empty() {
            return Err(Error::invariant(setting.label(), "empty setting"));
        }
        let mut recall_at = BTreeMap::new();
        let mut ndcg_at = BTreeMap::new();
        for k in k_list {
            let mut rec = 0.0;
            let mut ndcg = 0.0;
            for run in setting_runs {
                rec += recall_at_k(run, qrels, *k)?;
                ndcg += ndcg_at_k(run, qrels, *k)?;
            }
            recall_at.insert(*k, rec / setting_runs.len() as f64);
            ndcg_at.insert(*k, ndcg / setting_runs.len() as f64);
        }
        per_setting.insert(
            *setting,
            SettingMetrics {
                recall_at,
                ndcg_at,
                n_queries: setting_runs.len(),
            },
        );
    }
    Ok(MetricReport { per_setting })
}

/// Evaluate all four settings: project documents and queries by modality,
/// search, and aggregate per-query metrics.
pub fn evaluate_settings(
    model: &RetrieverModel,
    benchmark: &Benchmark,
    k_list: &[usize],
    frontend: AudioFrontend,
) -> Result<EvaluationOutput> {
    evaluate_chosen_settings(model, benchmark, k_list, frontend, &RetrievalSetting::ALL)
}

/// Like [`evaluate_settings`] but restricted to a subset of settings.
pub fn evaluate_chosen_settings(
    model: &RetrieverModel,
    benchmark: &Benchmark,
    k_list: &[usize],
    frontend: AudioFrontend,
    settings: &[RetrievalSetting],
) -> Result<EvaluationOutput> {
    if k_list.is_empty() {
        return Err(Error::Config("k_list must not be empty".into()));
    }
    if benchmark.queries.is_empty() {
        return Err(Error::invariant("evaluate_settings", "no queries"));
    }
    let depth = *k_list.iter().max().unwrap();

    // Two document projections cover all four settings.
    let mut indexes: BTreeMap<SegmentKind, crate::retrieval::EmbeddingIndex> = BTreeMap::new();
    for setting in settings {
        let kind = setting.doc_kind();
        if !indexes.contains_key(&kind) {
            let projected = project_corpus(&benchmark.corpus, kind)?;
            indexes.insert(kind, build_index(model, &projected, frontend)?);
        }
    }

    let mut runs = BTreeMap::new();
    for setting in settings {
        let queries: Vec<(String, crate::encoder::Embedding)> = benchmark
            .queries
            .iter()
            .map(|q| {
                let projected = match setting.query_kind() {
                    Some(kind) => project_modality(q, kind).ok_or_else(|| {
                        Error::invariant(
                            &q.id,
                            format!("query has no {kind:?} segments; setting would be empty"),
                        )
                    })?,
                    None => q.clone(),
                };
                Ok((q.id.clone(), encode_sequence(model, &projected, frontend)?))
            })
            .collect::<Result<_>>()?;
        let setting_runs = batch_search(&indexes[&setting.doc_kind()], &queries, depth)?;
        runs.insert(*setting, setting_runs);
    }

    let report = metrics_from_runs(&runs, &benchmark.qrels, k_list)?;
    Ok(EvaluationOutput { report, runs })
}

/// Write one TREC run file per setting into `dir` (`run_A->T.tsv` style
/// names use the setting labels with `->` replaced by `2`).
pub fn write_setting_runs(
    runs: &BTreeMap<RetrievalSetting, Vec<RankedList>>,
    dir: impl AsRef<Path>,
) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut written = Vec::new();
    for (setting, setting_runs) in runs {
        let name = format!("run_{}.tsv", setting.label().replace("->", "2"));
        let path = dir.join(name);
        crate::io::write_run(setting_runs, &path)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// ASR-channel view
// ---------------------------------------------------------------------------

/// Seeded word-level corruption rates mimicking an ASR front end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsrNoise {
    pub word_drop: f64,
    pub word_sub: f64,
    pub seed: u64,
}

impl Default for AsrNoise {
    fn default() -> Self {
        // Roughly a 2.8% word error rate split between drops and
        // substitutions.
        AsrNoise {
            word_drop: 0.014,
            word_sub: 0.014,
            seed: 0,
        }
    }
}

/// Replace every audio segment by a text segment holding its (optionally
/// corrupted) transcript; the text-only channel a cascaded ASR retriever
/// would see. Errors when an audio segment lacks a transcript.
pub fn asr_view(seq: &InterleavedSequence, noise: &AsrNoise) -> Result<InterleavedSequence> {
    let mut r = seeded::rng(seeded::subseed(
        noise.seed,
        "asr-view",
        seeded::hash_str(&seq.id),
    ));
    let mut segments = Vec::with_capacity(seq.segments.len());
    for seg in &seq.segments {
        match seg {
            Segment::Text(t) => segments.push(Segment::Text(t.clone())),
            Segment::Audio(a) => {
                let transcript = a.transcript.as_deref().ok_or_else(|| {
                    Error::invariant(&seq.id, "audio segment has no transcript for ASR view")
                })?;
                let mut words: Vec<String> = Vec::new();
                for w in transcript.split_whitespace() {
                    if r.random_bool(noise.word_drop) {
                        continue;
                    }
                    if r.random_bool(noise.word_sub) {
                        words.push(format!("{w}x"));
                    } else {
                        words.push(w.to_string());
                    }
                }
                if words.is_empty() {
                    // Never emit an empty segment; keep one (possibly
                    // wrong) word as real ASR systems do.
                    words.push(
                        transcript
                            .split_whitespace()
                            .next()
                            .unwrap_or("uh")
                            .to_string(),
                    );
                }
                segments.push(Segment::Text(words.join(" ")));
            }
        }
    }
    InterleavedSequence::new(seq.id.clone(), segments)
}
