//! Domain types and invariant enforcement.
//!
//! The unit of both queries and documents is an [`InterleavedSequence`]:
//! an ordered list of text and audio segments. Audio carries fixed-rate
//! frame features (one frame covers [`FRAME_MS`] milliseconds) plus
//! optional salient-span annotations used to supervise the selector.
//! Loaders reject invariant violations instead of repairing them.

use crate::error::{Error, Result};
use ndarray::Array2;
use std::collections::BTreeMap;

/// Milliseconds of signal covered by one audio frame.
pub const FRAME_MS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SegmentKind {
    Text,
    Audio,
}

/// Salient time span in milliseconds, half-open `[start_ms, end_ms)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanAnnotation {
    pub start_ms: u32,
    pub end_ms: u32,
}

impl SpanAnnotation {
    pub fn new(start_ms: u32, end_ms: u32) -> Result<Self> {
        if start_ms >= end_ms {
            return Err(Error::invariant(
                "span",
                format!("start_ms {start_ms} must be < end_ms {end_ms}"),
            ));
        }
        Ok(SpanAnnotation { start_ms, end_ms })
    }
}

/// Frame-feature matrix (`num_frames x frame_dim`) with span annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSegment {
    pub frames: Array2<f32>,
    pub spans: Vec<SpanAnnotation>,
    pub transcript: Option<String>,
}

impl AudioSegment {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn frame_dim(&self) -> usize {
        self.frames.ncols()
    }

    pub fn duration_ms(&self) -> u32 {
        self.num_frames() as u32 * FRAME_MS
    }

    fn validate(&self, context: &str) -> Result<()> {
        if self.num_frames() == 0 {
            return Err(Error::invariant(context, "audio segment has zero frames"));
        }
        if self.frame_dim() == 0 {
            return Err(Error::invariant(context, "audio segment has frame_dim 0"));
        }
        if let Some(bad) = self.frames.iter().find(|v| !v.is_finite()) {
            return Err(Error::invariant(
                context,
                format!("non-finite frame value {bad}"),
            ));
        }
        let total_ms = self.duration_ms();
        let mut sorted: Vec<SpanAnnotation> = self.spans.clone();
        sorted.sort_by_key(|s| s.start_ms);
        let mut prev_end = 0u32;
        for (i, s) in sorted.iter().enumerate() {
            if s.start_ms >= s.end_ms {
                return Err(Error::invariant(
                    context,
                    format!("span [{}, {}) is empty or inverted", s.start_ms, s.end_ms),
                ));
            }
            if s.end_ms > total_ms {
                return Err(Error::invariant(
                    context,
                    format!(
                        "span [{}, {}) exceeds segment duration {total_ms} ms",
                        s.start_ms, s.end_ms
                    ),
                ));
            }
            if i > 0 && s.start_ms < prev_end {
                return Err(Error::invariant(
                    context,
                    format!("span starting at {} ms overlaps previous span", s.start_ms),
                ));
            }
            prev_end = s.end_ms;
        }
        Ok(())
    }
}

/// One element of an interleaved sequence: a text chunk or an audio segment.
#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Text(String),
    Audio(AudioSegment),
}

impl Segment {
    pub fn text(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invariant("segment", "text segment is empty"));
        }
        Ok(Segment::Text(text))
    }

    pub fn audio(
        frames: Array2<f32>,
        spans: Vec<SpanAnnotation>,
        transcript: Option<String>,
    ) -> Result<Self> {
        let seg = AudioSegment {
            frames,
            spans,
            transcript,
        };
        seg.validate("segment")?;
        Ok(Segment::Audio(seg))
    }

    pub fn kind(&self) -> SegmentKind {
        match self {
            Segment::Text(_) => SegmentKind::Text,
            Segment::Audio(_) => SegmentKind::Audio,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Segment::Text(t) => Some(t),
            Segment::Audio(_) => None,
        }
    }

    pub fn as_audio(&self) -> Option<&AudioSegment> {
        match self {
            Segment::Text(_) => None,
            Segment::Audio(a) => Some(a),
        }
    }

    pub(crate) fn validate(&self, context: &str) -> Result<()> {
        match self {
            Segment::Text(t) => {
                if t.trim().is_empty() {
                    Err(Error::invariant(context, "text segment is empty"))
                } else {
                    Ok(())
                }
            }
            Segment::Audio(a) => a.validate(context),
        }
    }
}

/// Ordered sequence of text and audio segments; the unit of query and document.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub id: String,
    pub segments: Vec<Segment>,
}

impl InterleavedSequence {
    pub fn new(id: impl Into<String>, segments: Vec<Segment>) -> Result<Self> {
        let seq = InterleavedSequence {
            id: id.into(),
            segments,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invariant("sequence", "empty id"));
        }
        if self.segments.is_empty() {
            return Err(Error::invariant(&self.id, "sequence has no segments"));
        }
        for seg in &self.segments {
            seg.validate(&self.id)?;
        }
        Ok(())
    }

    /// Frame dimension used by this sequence's audio, if any.
    pub fn frame_dim(&self) -> Option<usize> {
        self.segments
            .iter()
            .find_map(|s| s.as_audio().map(AudioSegment::frame_dim))
    }

    pub fn num_audio_segments(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.kind() == SegmentKind::Audio)
            .count()
    }
}

/// Id-indexed document collection with a single corpus-wide frame dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    docs: BTreeMap<String, InterleavedSequence>,
    frame_dim: Option<usize>,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = InterleavedSequence>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut frame_dim: Option<usize> = None;
        for doc in docs {
            doc.validate()?;
            if let Some(dim) = doc.frame_dim() {
                match frame_dim {
                    None => frame_dim = Some(dim),
                    Some(expected) if expected != dim => {
                        return Err(Error::DimMismatch {
                            context: format!("frame_dim of doc `{}`", doc.id),
                            expected,
                            got: dim,
                        });
                    }
                    Some(_) => {}
                }
                // All audio segments inside one doc must agree too.
                for seg in &doc.segments {
                    if let Some(a) = seg.as_audio() {
                        if a.frame_dim() != frame_dim.unwrap() {
                            return Err(Error::DimMismatch {
                                context: format!("frame_dim of doc `{}`", doc.id),
                                expected: frame_dim.unwrap(),
                                got: a.frame_dim(),
                            });
                        }
                    }
                }
            }
            if map.contains_key(&doc.id) {
                return Err(Error::DuplicateId { id: doc.id });
            }
            map.insert(doc.id.clone(), doc);
        }
        Ok(Corpus {
            docs: map,
            frame_dim,
        })
    }

    pub fn get(&self, id: &str) -> Option<&InterleavedSequence> {
        self.docs.get(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &InterleavedSequence> {
        self.docs.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.keys().map(String::as_str)
    }

    pub fn frame_dim(&self) -> Option<usize> {
        self.frame_dim
    }
}

/// Relevance judgments: (query id, doc id) -> grade.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    by_query: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Qrels::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.by_query
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.by_query
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// All judged (doc id, grade) pairs for a query, ascending doc id.
    pub fn judged(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.by_query.get(query_id)
    }

    /// Doc ids with grade >= 1 for a query.
    pub fn positives(&self, query_id: &str) -> Vec<&str> {
        self.by_query
            .get(query_id)
            .map(|m| {
                m.iter()
                    .filter(|(_, g)| **g >= 1)
                    .map(|(d, _)| d.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.by_query.len()
    }

    /// Every qrels doc id must resolve in `corpus`, and every query must
    /// have at least one positive.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        for (qid, docs) in &self.by_query {
            if !docs.values().any(|g| *g >= 1) {
                return Err(Error::invariant(
                    qid.clone(),
                    "query has no positive judgment",
                ));
            }
            for doc_id in docs.keys() {
                if corpus.get(doc_id).is_none() {
                    return Err(Error::UnknownId {
                        id: doc_id.clone(),
                        context: format!("qrels for query `{qid}`"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.by_query.iter().flat_map(|(q, docs)| {
            docs.iter()
                .map(move |(d, g)| (q.as_str(), d.as_str(), *g))
        })
    }
}

/// Per-query ranked (doc id, score) results, strictly ordered by
/// (score desc, doc id asc) with no duplicate doc ids.
///
/// Scores are `f32`: the index matrix is 32-bit and the canonical run-file
/// format (9 significant digits) round-trips `f32` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: String,
    entries: Vec<(String, f32)>,
}

/// Total order used everywhere ranks are assigned: higher score first,
/// ascending doc id on ties.
pub fn rank_order(a: &(String, f32), b: &(String, f32)) -> std::cmp::Ordering {
    b.1.partial_cmp(&a.1)
        .expect("scores must be finite")
        .then_with(|| a.0.cmp(&b.0))
}

impl RankedList {
    /// Build from entries already in rank order; rejects order violations.
    pub fn new(query_id: impl Into<String>, entries: Vec<(String, f32)>) -> Result<Self> {
        let query_id = query_id.into();
        let mut seen = std::collections::BTreeSet::new();
        for (doc_id, score) in &entries {
            if !score.is_finite() {
                return Err(Error::invariant(
                    &query_id,
                    format!("non-finite score for doc `{doc_id}`"),
                ));
            }
            if !seen.insert(doc_id.clone()) {
                return Err(Error::DuplicateId { id: doc_id.clone() });
            }
        }
        for w in entries.windows(2) {
            if rank_order(&w[0], &w[1]) != std::cmp::Ordering::Less {
                return Err(Error::invariant(
                    &query_id,
                    format!(
                        "entries out of order: `{}` ({}) before `{}` ({})",
                        w[0].0, w[0].1, w[1].0, w[1].1
                    ),
                ));
            }
        }
        Ok(RankedList { query_id, entries })
    }

    /// Sort arbitrary scored entries into the unique rank order.
    pub fn from_unsorted(
        query_id: impl Into<String>,
        mut entries: Vec<(String, f32)>,
    ) -> Result<Self> {
        entries.sort_by(rank_order);
        RankedList::new(query_id, entries)
    }

    pub fn entries(&self) -> &[(String, f32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of a doc, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(d, _)| d == doc_id)
            .map(|i| i + 1)
    }
}

/// A retrieval benchmark: corpus, queries, and relevance judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub corpus: Corpus,
    pub queries: Vec<InterleavedSequence>,
    pub qrels: Qrels,
}

impl Benchmark {
    pub fn new(
        corpus: Corpus,
        queries: Vec<InterleavedSequence>,
        qrels: Qrels,
    ) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for q in &queries {
            q.validate()?;
            if !seen.insert(q.id.clone()) {
                return Err(Error::DuplicateId { id: q.id.clone() });
            }
        }
        qrels.validate_against(&corpus)?;
        for q in &queries {
            if qrels.judged(&q.id).is_none() {
                return Err(Error::UnknownId {
                    id: q.id.clone(),
                    context: "query missing from qrels".into(),
                });
            }
        }
        Ok(Benchmark {
            corpus,
            queries,
            qrels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    fn frames(n: usize, dim: usize) -> Array2<f32> {
        Array2::from_shape_fn((n, dim), |(i, j)| (i * dim + j) as f32 * 0.01)
    }

    #[test]
    fn span_requires_start_before_end() {
        assert!(SpanAnnotation::new(0, 40).is_ok());
        assert!(SpanAnnotation::new(40, 40).is_err());
        assert!(SpanAnnotation::new(50, 40).is_err());
    }

    #[test]
    fn audio_rejects_overlapping_spans() {
        let s = Segment::audio(
            frames(4, 2),
            vec![
                SpanAnnotation { start_ms: 0, end_ms: 80 },
                SpanAnnotation { start_ms: 40, end_ms: 120 },
            ],
            None,
        );
        assert!(matches!(s, Err(Error::Invariant { .. })));
    }

    #[test]
    fn audio_rejects_span_past_end() {
        let s = Segment::audio(
            frames(2, 2),
            vec![SpanAnnotation { start_ms: 0, end_ms: 81 }],
            None,
        );
        assert!(s.is_err());
        // Exactly at the boundary is fine.
        let s = Segment::audio(
            frames(2, 2),
            vec![SpanAnnotation { start_ms: 0, end_ms: 80 }],
            None,
        );
        assert!(s.is_ok());
    }

    #[test]
    fn audio_rejects_nonfinite_frames() {
        let s = Segment::audio(arr2(&[[f32::NAN, 0.0]]), vec![], None);
        assert!(s.is_err());
    }

    #[test]
    fn adjacent_spans_do_not_overlap() {
        let s = Segment::audio(
            frames(4, 2),
            vec![
                SpanAnnotation { start_ms: 0, end_ms: 80 },
                SpanAnnotation { start_ms: 80, end_ms: 160 },
            ],
            None,
        );
        assert!(s.is_ok());
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        let d1 = InterleavedSequence::new("a", vec![Segment::text("x").unwrap()]).unwrap();
        let d2 = InterleavedSequence::new("a", vec![Segment::text("y").unwrap()]).unwrap();
        let err = Corpus::from_documents(vec![d1, d2]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId { id } if id == "a"));
    }

    #[test]
    fn corpus_rejects_mixed_frame_dims() {
        let d1 = InterleavedSequence::new(
            "a",
            vec![Segment::audio(frames(2, 3), vec![], None).unwrap()],
        )
        .unwrap();
        let d2 = InterleavedSequence::new(
            "b",
            vec![Segment::audio(frames(2, 4), vec![], None).unwrap()],
        )
        .unwrap();
        assert!(Corpus::from_documents(vec![d1, d2]).is_err());
    }

    #[test]
    fn qrels_validation_needs_positive_and_resolvable_ids() {
        let doc = InterleavedSequence::new("d1", vec![Segment::text("x").unwrap()]).unwrap();
        let corpus = Corpus::from_documents(vec![doc]).unwrap();

        let mut q = Qrels::new();
        q.insert("q1", "d1", 0);
        assert!(q.validate_against(&corpus).is_err());

        let mut q = Qrels::new();
        q.insert("q1", "d1", 1);
        assert!(q.validate_against(&corpus).is_ok());

        let mut q = Qrels::new();
        q.insert("q1", "missing", 1);
        assert!(matches!(
            q.validate_against(&corpus),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn ranked_list_tie_break_is_doc_id_ascending() {
        // Scores 0.9 / 0.5 / 0.5 over ids b, a, c: ties order as a < c.
        let rl = RankedList::from_unsorted(
            "q",
            vec![
                ("a".into(), 0.5),
                ("b".into(), 0.9),
                ("c".into(), 0.5),
            ],
        )
        .unwrap();
        let ids: Vec<&str> = rl.entries().iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, vec!["b", "a", "c"]);
        assert_eq!(rl.rank_of("b"), Some(1));
        assert_eq!(rl.rank_of("a"), Some(2));
        assert_eq!(rl.rank_of("c"), Some(3));
    }

    #[test]
    fn ranked_list_rejects_duplicates_and_disorder() {
        assert!(matches!(
            RankedList::new("q", vec![("a".into(), 0.5), ("a".into(), 0.4)]),
            Err(Error::DuplicateId { .. })
        ));
        assert!(RankedList::new("q", vec![("a".into(), 0.4), ("b".into(), 0.5)]).is_err());
        // Equal scores with descending ids violate the tie-break.
        assert!(RankedList::new("q", vec![("b".into(), 0.5), ("a".into(), 0.5)]).is_err());
    }

    #[test]
    fn sorting_any_permutation_yields_unique_list() {
        let base: Vec<(String, f32)> = vec![
            ("a".into(), 0.5),
            ("b".into(), 0.9),
            ("c".into(), 0.5),
            ("d".into(), 0.1),
        ];
        let sorted = RankedList::from_unsorted("q", base.clone()).unwrap();
        // A different permutation of the same entries sorts identically.
        let mut perm: Vec<(String, f32)> = base;
        perm.reverse();
        perm.swap(0, 2);
        let sorted2 = RankedList::from_unsorted("q", perm).unwrap();
        assert_eq!(sorted, sorted2);
    }
}
