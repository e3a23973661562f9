//! Interleaving perturbations: shuffle audio contents among audio slots,
//! shuffle which slots are audio vs. text, or both. All perturbations
//! preserve the multiset of segments and are deterministic per seed.

use super::{metrics_from_runs, RetrievalSetting};
use crate::encoder::{encode_sequence, AudioFrontend, RetrieverModel};
use crate::error::{Error, Result};
use crate::retrieval::{batch_search, build_index};
use crate::seeded;
use crate::types::{Benchmark, InterleavedSequence, Segment, SegmentKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PerturbationKind {
    Original,
    ShuffleOrder,
    ShufflePosition,
    ShuffleBoth,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 4] = [
        PerturbationKind::Original,
        PerturbationKind::ShuffleOrder,
        PerturbationKind::ShufflePosition,
        PerturbationKind::ShuffleBoth,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PerturbationKind::Original => "original",
            PerturbationKind::ShuffleOrder => "shuffle-order",
            PerturbationKind::ShufflePosition => "shuffle-position",
            PerturbationKind::ShuffleBoth => "shuffle-both",
        }
    }
}

/// Sub-seeds used by [`PerturbationKind::ShuffleBoth`] so that it equals
/// `shuffle_position(shuffle_order(x, s1), s2)` exactly.
pub fn both_subseeds(seed: u64) -> (u64, u64) {
    (
        seeded::subseed(seed, "perturb-order", 0),
        seeded::subseed(seed, "perturb-position", 0),
    )
}

fn shuffle_order(seq: &InterleavedSequence, seed: u64) -> InterleavedSequence {
    let audio_slots: Vec<usize> = (0..seq.segments.len())
        .filter(|i| seq.segments[*i].kind() == SegmentKind::Audio)
        .collect();
    if audio_slots.len() < 2 {
        return seq.clone();
    }
    let mut r = seeded::rng(seeded::subseed(
        seed,
        "shuffle-order",
        seeded::hash_str(&seq.id),
    ));
    // Uniform non-identity permutation by rejection.
    let n = audio_slots.len();
    let perm = loop {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut r, 0..=i);
            p.swap(i, j);
        }
        if p.iter().enumerate().any(|(i, v)| i != *v) {
            break p;
        }
    };
    let mut segments = seq.segments.clone();
    for (slot_idx, source) in perm.iter().enumerate() {
        segments[audio_slots[slot_idx]] = seq.segments[audio_slots[*source]].clone();
    }
    InterleavedSequence {
        id: seq.id.clone(),
        segments,
    }
}

fn shuffle_position(seq: &InterleavedSequence, seed: u64) -> InterleavedSequence {
    let kinds: Vec<SegmentKind> = seq.segments.iter().map(Segment::kind).collect();
    let n_audio = kinds.iter().filter(|k| **k == SegmentKind::Audio).count();
    let n = kinds.len();
    // Only one arrangement exists when all segments share a modality.
    if n_audio == 0 || n_audio == n {
        return seq.clone();
    }
    let mut r = seeded::rng(seeded::subseed(
        seed,
        "shuffle-position",
        seeded::hash_str(&seq.id),
    ));
    // Uniformly shuffle the role pattern; rejection keeps it non-identity.
    // Shuffling the multiset vector makes each distinct pattern equally
    // likely.
    let pattern = loop {
        let mut p = kinds.clone();
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(&mut r, 0..=i);
            p.swap(i, j);
        }
        if p != kinds {
            break p;
        }
    };
    let mut texts = seq
        .segments
        .iter()
        .filter(|s| s.kind() == SegmentKind::Text)
        .cloned()
        .collect::<Vec<_>>()
        .into_iter();
    let mut audios = seq
        .segments
        .iter()
        .filter(|s| s.kind() == SegmentKind::Audio)
        .cloned()
        .collect::<Vec<_>>()
        .into_iter();
    let segments: Vec<Segment> = pattern
        .iter()
        .map(|k| match k {
            SegmentKind::Text => texts.next().expect("text count preserved"),
            SegmentKind::Audio => audios.next().expect("audio count preserved"),
        })
        .collect();
    InterleavedSequence {
        id: seq.id.clone(),
        segments,
    }
}

/// Apply a perturbation. `Original` returns the input unchanged.
pub fn perturb(
    seq: &InterleavedSequence,
    kind: PerturbationKind,
    seed: u64,
) -> InterleavedSequence {
    match kind {
        PerturbationKind::Original => seq.clone(),
        PerturbationKind::ShuffleOrder => shuffle_order(seq, seed),
        PerturbationKind::ShufflePosition => shuffle_position(seq, seed),
        PerturbationKind::ShuffleBoth => {
            let (s1, s2) = both_subseeds(seed);
            shuffle_position(&shuffle_order(seq, s1), s2)
        }
    }
}

/// Mean R@1/nDCG@5 per perturbation kind on the interleaved settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub iat_t_recall1: f64,
    pub iat_t_ndcg5: f64,
    pub iat_a_recall1: f64,
    pub iat_a_ndcg5: f64,
}

impl PerturbationRow {
    pub fn mean_recall1(&self) -> f64 {
        (self.iat_t_recall1 + self.iat_a_recall1) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub rows: BTreeMap<PerturbationKind, PerturbationRow>,
    pub n_seeds: usize,
}

impl PerturbationReport {
    pub fn to_tsv(&self) -> String {
        let mut out =
            String::from("perturbation\tIAT->T R@1\tIAT->T nDCG@5\tIAT->A R@1\tIAT->A nDCG@5\n");
        for kind in PerturbationKind::ALL {
            if let Some(r) = self.rows.get(&kind) {
                let _ = writeln!(
                    out,
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    kind.label(),
                    r.iat_t_recall1,
                    r.iat_t_ndcg5,
                    r.iat_a_recall1,
                    r.iat_a_ndcg5
                );
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<18}{:>14}{:>16}{:>14}{:>16}\n",
            "perturbation", "IAT->T R@1", "IAT->T nDCG@5", "IAT->A R@1", "IAT->A nDCG@5"
        );
        for kind in PerturbationKind::ALL {
            if let Some(r) = self.rows.get(&kind) {
                let _ = writeln!(
                    out,
                    "{:<18}{:>14.4}{:>16.4}{:>14.4}{:>16.4}",
                    kind.label(),
                    r.iat_t_recall1,
                    r.iat_t_ndcg5,
                    r.iat_a_recall1,
                    r.iat_a_ndcg5
                );
            }
        }
        out
    }
}

/// Evaluate each perturbation kind on IAT->T and IAT->A, averaging over
/// shuffle seeds (the Original row is seed-independent).
pub fn run_perturbation_study(
    model: &RetrieverModel,
    benchmark: &Benchmark,
    seeds: &[u64],
    frontend: AudioFrontend,
) -> Result<PerturbationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one perturbation seed".into()));
    }
    // Both interleaved settings share document indexes across all kinds
    // and seeds.
    let settings = [
        RetrievalSetting::InterleavedToText,
        RetrievalSetting::InterleavedToAudio,
    ];
    let mut indexes = BTreeMap::new();
    for s in settings {
        let kind = s.doc_kind();
        if !indexes.contains_key(&kind) {
            let projected = super::project_corpus(&benchmark.corpus, kind)?;
            indexes.insert(kind, build_index(model, &projected, frontend)?);
        }
    }

    let evaluate_once = |kind: PerturbationKind, seed: u64| -> Result<PerturbationRow> {
        let mut runs = BTreeMap::new();
        for setting in settings {
            let queries: Vec<(String, crate::encoder::Embedding)> = benchmark
                .queries
                .iter()
                .map(|q| {
                    let perturbed = perturb(q, kind, seed);
                    Ok((q.id.clone(), encode_sequence(model, &perturbed, frontend)?))
                })
                .collect::<Result<_>>()?;
            runs.insert(setting, batch_search(&indexes[&setting.doc_kind()], &queries, 5)?);
        }
        let report = metrics_from_runs(&runs, &benchmark.qrels, &[1, 5])?;
        let t = &report.per_setting[&RetrievalSetting::InterleavedToText];
        let a = &report.per_setting[&RetrievalSetting::InterleavedToAudio];
        Ok(PerturbationRow {
            iat_t_recall1: t.recall_at[&1],
            iat_t_ndcg5: t.ndcg_at[&5],
            iat_a_recall1: a.recall_at[&1],
            iat_a_ndcg5: a.ndcg_at[&5],
        })
    };

    let mut rows = BTreeMap::new();
    for kind in PerturbationKind::ALL {
        let row = if kind == PerturbationKind::Original {
            evaluate_once(kind, seeds[0])?
        } else {
            let mut acc = PerturbationRow {
                iat_t_recall1: 0.0,
                iat_t_ndcg5: 0.0,
                iat_a_recall1: 0.0,
                iat_a_ndcg5: 0.0,
            };
            for seed in seeds {
                let r = evaluate_once(kind, *seed)?;
                acc.iat_t_recall1 += r.iat_t_recall1;
                acc.iat_t_ndcg5 += r.iat_t_ndcg5;
                acc.iat_a_recall1 += r.iat_a_recall1;
                acc.iat_a_ndcg5 += r.iat_a_ndcg5;
            }
            let n = seeds.len() as f64;
            PerturbationRow {
                iat_t_recall1: acc.iat_t_recall1 / n,
                iat_t_ndcg5: acc.iat_t_ndcg5 / n,
                iat_a_recall1: acc.iat_a_recall1 / n,
                iat_a_ndcg5: acc.iat_a_ndcg5 / n,
            }
        };
        rows.insert(kind, row);
    }
    Ok(PerturbationReport {
        rows,
        n_seeds: seeds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{featurize_text_as_audio, EnvironmentKind, SynthConfig};
    use std::collections::BTreeMap as Map;

    fn scfg() -> SynthConfig {
        SynthConfig {
            seed: 13,
            frame_dim: 6,
            ..SynthConfig::default()
        }
    }

    fn seq(id: &str, pattern: &[SegmentKind]) -> InterleavedSequence {
        let mut segments = Vec::new();
        for (i, kind) in pattern.iter().enumerate() {
            match kind {
                SegmentKind::Text => {
                    segments.push(Segment::text(format!("text piece {id} {i}")).unwrap())
                }
                SegmentKind::Audio => segments.push(
                    featurize_text_as_audio(
                        &format!("audio piece {id} {i}"),
                        EnvironmentKind::Clean,
                        &scfg(),
                    )
                    .unwrap(),
                ),
            }
        }
        InterleavedSequence::new(id, segments).unwrap()
    }

    fn multiset(seq: &InterleavedSequence) -> Map<String, usize> {
        let mut m = Map::new();
        for s in &seq.segments {
            let key = match s {
                Segment::Text(t) => format!("t:{t}"),
                Segment::Audio(a) => format!("a:{:?}", a.transcript),
            };
            *m.entry(key).or_default() += 1;
        }
        m
    }

    #[test]
    fn original_is_identity() {
        let s = seq("x", &[SegmentKind::Text, SegmentKind::Audio]);
        assert_eq!(perturb(&s, PerturbationKind::Original, 9), s);
    }

    #[test]
    fn single_audio_shuffle_order_is_identity() {
        let s = seq("x", &[SegmentKind::Text, SegmentKind::Audio, SegmentKind::Text]);
        assert_eq!(perturb(&s, PerturbationKind::ShuffleOrder, 9), s);
    }

    #[test]
    fn shuffle_order_moves_audio_contents_but_keeps_slots() {
        let s = seq(
            "x",
            &[
                SegmentKind::Text,
                SegmentKind::Audio,
                SegmentKind::Text,
                SegmentKind::Audio,
            ],
        );
        let p = perturb(&s, PerturbationKind::ShuffleOrder, 4);
        assert_ne!(p, s);
        // Same slots are audio.
        for (a, b) in s.segments.iter().zip(p.segments.iter()) {
            assert_eq!(a.kind(), b.kind());
        }
        // Text untouched, multiset preserved.
        assert_eq!(s.segments[0], p.segments[0]);
        assert_eq!(s.segments[2], p.segments[2]);
        assert_eq!(multiset(&s), multiset(&p));
    }

    #[test]
    fn shuffle_position_reinterleaves_preserving_internal_orders() {
        let s = seq(
            "x",
            &[
                SegmentKind::Text,
                SegmentKind::Audio,
                SegmentKind::Text,
                SegmentKind::Audio,
            ],
        );
        let p = perturb(&s, PerturbationKind::ShufflePosition, 4);
        assert_ne!(
            s.segments.iter().map(Segment::kind).collect::<Vec<_>>(),
            p.segments.iter().map(Segment::kind).collect::<Vec<_>>()
        );
        assert_eq!(multiset(&s), multiset(&p));
        // Internal orders preserved.
        let texts_before: Vec<&Segment> =
            s.segments.iter().filter(|x| x.kind() == SegmentKind::Text).collect();
        let texts_after: Vec<&Segment> =
            p.segments.iter().filter(|x| x.kind() == SegmentKind::Text).collect();
        assert_eq!(texts_before, texts_after);
        let audio_before: Vec<&Segment> =
            s.segments.iter().filter(|x| x.kind() == SegmentKind::Audio).collect();
        let audio_after: Vec<&Segment> =
            p.segments.iter().filter(|x| x.kind() == SegmentKind::Audio).collect();
        assert_eq!(audio_before, audio_after);
    }

    #[test]
    fn multiset_preserved_for_all_kinds_and_seeds() {
        let s = seq(
            "y",
            &[
                SegmentKind::Audio,
                SegmentKind::Text,
                SegmentKind::Audio,
                SegmentKind::Text,
                SegmentKind::Audio,
            ],
        );
        for kind in PerturbationKind::ALL {
            for seed in 0..10 {
                let p = perturb(&s, kind, seed);
                assert_eq!(multiset(&s), multiset(&p), "{kind:?} seed {seed}");
                // Determinism.
                assert_eq!(p, perturb(&s, kind, seed));
            }
        }
    }

    #[test]
    fn shuffle_both_composes_with_derived_subseeds() {
        let s = seq(
            "z",
            &[
                SegmentKind::Text,
                SegmentKind::Audio,
                SegmentKind::Audio,
                SegmentKind::Text,
                SegmentKind::Audio,
            ],
        );
        for seed in [0u64, 7, 99] {
            let (s1, s2) = both_subseeds(seed);
            let composed = shuffle_position(&shuffle_order(&s, s1), s2);
            assert_eq!(perturb(&s, PerturbationKind::ShuffleBoth, seed), composed);
        }
    }
}
