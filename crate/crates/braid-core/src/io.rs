//! Canonical serialization: corpus/query JSONL, qrels TSV, and run files.
//!
//! Writers are canonical — object keys sorted, floats at 9 significant
//! digits — so identical in-memory values always produce byte-identical
//! files. Floats are `f32` wherever they cross the serialization
//! boundary: 9 significant decimal digits round-trip `f32` exactly, which
//! makes read∘write the identity on values and write∘read the identity
//! on canonical files.

use crate::error::{Error, Result};
use crate::types::{
    rank_order, AudioSegment, Corpus, InterleavedSequence, Qrels, RankedList, Segment,
    SpanAnnotation,
};
use ndarray::Array2;
use serde::Deserialize;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Canonical float formatting: 9 significant digits, scientific notation.
/// Rust's float formatter rounds correctly (ties to even), so this is a
/// bijection on `f32`.
pub fn format_sig9(x: f32) -> String {
    format!("{x:.8e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

// ---------------------------------------------------------------------------
// JSONL documents (corpus and query files share one line schema)
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDoc {
    id: String,
    segments: Vec<RawSegment>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawSegment {
    Text {
        text: String,
    },
    Audio {
        frames: Vec<Vec<f32>>,
        #[serde(default)]
        spans: Vec<RawSpan>,
        #[serde(default)]
        transcript: Option<String>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpan {
    start_ms: u32,
    end_ms: u32,
}

fn raw_to_sequence(raw: RawDoc) -> Result<InterleavedSequence> {
    let mut segments = Vec::with_capacity(raw.segments.len());
    for seg in raw.segments {
        match seg {
            RawSegment::Text { text } => segments.push(Segment::Text(text)),
            RawSegment::Audio {
                frames,
                spans,
                transcript,
            } => {
                let rows = frames.len();
                let cols = frames.first().map(Vec::len).unwrap_or(0);
                if frames.iter().any(|r| r.len() != cols) {
                    return Err(Error::invariant(&raw.id, "ragged frame matrix"));
                }
                let flat: Vec<f32> = frames.into_iter().flatten().collect();
                let frames = Array2::from_shape_vec((rows, cols), flat)
                    .map_err(|e| Error::invariant(&raw.id, e.to_string()))?;
                let spans = spans
                    .into_iter()
                    .map(|s| SpanAnnotation {
                        start_ms: s.start_ms,
                        end_ms: s.end_ms,
                    })
                    .collect();
                segments.push(Segment::Audio(AudioSegment {
                    frames,
                    spans,
                    transcript,
                }));
            }
        }
    }
    // Validation happens here, with the doc id as context.
    InterleavedSequence::new(raw.id, segments)
}

fn sequence_to_line(seq: &InterleavedSequence) -> String {
    let mut out = String::new();
    out.push_str("{\"id\":");
    out.push_str(&json_str(&seq.id));
    out.push_str(",\"segments\":[");
    for (i, seg) in seq.segments.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        match seg {
            Segment::Text(t) => {
                out.push_str("{\"kind\":\"text\",\"text\":");
                out.push_str(&json_str(t));
                out.push('}');
            }
            Segment::Audio(a) => {
                out.push_str("{\"frames\":[");
                for (r, row) in a.frames.rows().into_iter().enumerate() {
                    if r > 0 {
                        out.push(',');
                    }
                    out.push('[');
                    for (c, v) in row.iter().enumerate() {
                        if c > 0 {
                            out.push(',');
                        }
                        let _ = write!(out, "{}", format_sig9(*v));
                    }
                    out.push(']');
                }
                out.push_str("],\"kind\":\"audio\",\"spans\":[");
                for (s, span) in a.spans.iter().enumerate() {
                    if s > 0 {
                        out.push(',');
                    }
                    let _ = write!(
                        out,
                        "{{\"end_ms\":{},\"start_ms\":{}}}",
                        span.end_ms, span.start_ms
                    );
                }
                out.push(']');
                if let Some(t) = &a.transcript {
                    out.push_str(",\"transcript\":");
                    out.push_str(&json_str(t));
                }
                out.push('}');
            }
        }
    }
    out.push_str("]}");
    out
}

/// Load an ordered list of interleaved sequences from a JSONL file.
/// Ids must be unique; every invariant is validated, violations rejected.
pub fn load_sequences(path: impl AsRef<Path>) -> Result<Vec<InterleavedSequence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDoc = serde_json::from_str(&line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        let seq = raw_to_sequence(raw)?;
        if !seen.insert(seq.id.clone()) {
            return Err(Error::DuplicateId { id: seq.id });
        }
        out.push(seq);
    }
    Ok(out)
}

pub fn save_sequences(
    seqs: impl IntoIterator<Item = impl std::borrow::Borrow<InterleavedSequence>>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seq in seqs {
        w.write_all(sequence_to_line(seq.borrow()).as_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load a corpus from JSONL; one document per line, ascending-id iteration.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    Corpus::from_documents(load_sequences(path)?)
}

/// Canonical corpus serialization: documents in ascending id order.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    save_sequences(corpus.iter(), path)
}

// ---------------------------------------------------------------------------
// Qrels TSV: qid <TAB> docid <TAB> grade
// ---------------------------------------------------------------------------

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut qrels = Qrels::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::parse(
                path,
                idx + 1,
                format!("expected 3 tab-separated fields, got {}", parts.len()),
            ));
        }
        let grade: u32 = parts[2]
            .parse()
            .map_err(|e| Error::parse(path, idx + 1, format!("bad grade: {e}")))?;
        qrels.insert(parts[0], parts[1], grade);
    }
    Ok(qrels)
}

pub fn save_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, docid, grade) in qrels.iter() {
        writeln!(w, "{qid}\t{docid}\t{grade}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Run files: qid <TAB> docid <TAB> rank <TAB> score
// ---------------------------------------------------------------------------

/// Write ranked lists in TREC-style lines; rank is 1-based and consistent
/// with entry order by construction of [`RankedList`].
pub fn write_run(run: &[RankedList], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for list in run {
        for (i, (doc_id, score)) in list.entries().iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                list.query_id,
                doc_id,
                i + 1,
                format_sig9(*score)
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a run file, validating rank consecutiveness and the ordering
/// invariant. Query blocks must be contiguous.
pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<RankedList>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut out: Vec<RankedList> = Vec::new();
    let mut done: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    let mut cur_qid: Option<String> = None;
    let mut cur_entries: Vec<(String, f32)> = Vec::new();

    let flush = |qid: Option<String>,
                     entries: &mut Vec<(String, f32)>,
                     out: &mut Vec<RankedList>|
     -> Result<()> {
        if let Some(qid) = qid {
            let list = RankedList::new(qid, std::mem::take(entries))?;
            out.push(list);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 tab-separated fields, got {}", parts.len()),
            ));
        }
        let (qid, docid) = (parts[0], parts[1]);
        let rank: usize = parts[2]
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad rank: {e}")))?;
        let score: f32 = parts[3]
            .parse()
            .map_err(|e| Error::parse(path, lineno, format!("bad score: {e}")))?;

        if cur_qid.as_deref() != Some(qid) {
            flush(cur_qid.take(), &mut cur_entries, &mut out)?;
            if !done.insert(qid.to_string()) {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("query `{qid}` appears in two separate blocks"),
                ));
            }
            cur_qid = Some(qid.to_string());
        }
        let expected_rank = cur_entries.len() + 1;
        if rank != expected_rank {
            return Err(Error::parse(
                path,
                lineno,
                format!("rank {rank} does not match position {expected_rank}"),
            ));
        }
        cur_entries.push((docid.to_string(), score));
    }
    flush(cur_qid, &mut cur_entries, &mut out)?;
    Ok(out)
}

/// Rank order re-exported for sorting scored candidates before
/// constructing ranked lists.
pub fn sort_scored(entries: &mut [(String, f32)]) {
    entries.sort_by(rank_order);
}
