//! Hard-negative mining from first-stage retrieval ranks.
//!
//! Documents ranked above the positive are false negatives (potentially
//! relevant, so excluded); documents ranked below the positive but within
//! the top-k pool become hard negatives, capped and kept in rank order.

use crate::encoder::{encode_sequence, AudioFrontend, RetrieverModel};
use crate::error::{Error, Result};
use crate::retrieval::{batch_search, build_index};
use crate::training::TrainingInstance;
use crate::types::{Benchmark, RankedList};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    /// Rank window that counts as "top retrieved results".
    pub top_k_pool: usize,
    pub max_hard_negatives: usize,
    /// When true, a query whose positive is missing from the run yields
    /// no hard negatives (marked instead of guessed).
    pub require_positive_found: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            top_k_pool: 50,
            max_hard_negatives: 7,
            require_positive_found: true,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k_pool == 0 || self.max_hard_negatives == 0 {
            return Err(Error::Config(
                "top_k_pool and max_hard_negatives must be positive".into(),
            ));
        }
        if self.max_hard_negatives > self.top_k_pool {
            return Err(Error::Config(format!(
                "max_hard_negatives {} exceeds top_k_pool {}",
                self.max_hard_negatives, self.top_k_pool
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiningOutcome {
    /// Docs ranked below the positive within the pool, in rank order.
    pub hard: Vec<String>,
    /// Docs ranked strictly above the positive.
    pub false_negatives: Vec<String>,
    /// "positive-not-retrieved" marker.
    pub positive_found: bool,
}

/// Apply the rank rule for a single positive.
pub fn mine_hard_negatives(
    run: &RankedList,
    positive: &str,
    cfg: &MiningConfig,
) -> Result<MiningOutcome> {
    let positives = BTreeSet::from([positive.to_string()]);
    mine_hard_negatives_multi(run, &positives, cfg)
}

/// Multi-positive variant: the highest-ranked positive anchors the rule
/// and the remaining positives are excluded from both output sets.
pub fn mine_hard_negatives_multi(
    run: &RankedList,
    positives: &BTreeSet<String>,
    cfg: &MiningConfig,
) -> Result<MiningOutcome> {
    cfg.validate()?;
    if positives.is_empty() {
        return Err(Error::invariant(&run.query_id, "no positives to anchor mining"));
    }
    let anchor_rank = run
        .entries()
        .iter()
        .position(|(d, _)| positives.contains(d))
        .map(|i| i + 1);

    let Some(anchor_rank) = anchor_rank else {
        if cfg.require_positive_found {
            return Ok(MiningOutcome {
                hard: Vec::new(),
                false_negatives: Vec::new(),
                positive_found: false,
            });
        }
        // Positive absent but mining forced: the whole pool is hard.
        let hard = run
            .entries()
            .iter()
            .take(cfg.top_k_pool)
            .filter(|(d, _)| !positives.contains(d))
            .take(cfg.max_hard_negatives)
            .map(|(d, _)| d.clone())
            .collect();
        return Ok(MiningOutcome {
            hard,
            false_negatives: Vec::new(),
            positive_found: false,
        });
    };

    let false_negatives: Vec<String> = run.entries()[..anchor_rank - 1]
        .iter()
        .filter(|(d, _)| !positives.contains(d))
        .map(|(d, _)| d.clone())
        .collect();
    let hard: Vec<String> = run
        .entries()
        .iter()
        .take(cfg.top_k_pool)
        .skip(anchor_rank)
        .filter(|(d, _)| !positives.contains(d))
        .take(cfg.max_hard_negatives)
        .map(|(d, _)| d.clone())
        .collect();
    Ok(MiningOutcome {
        hard,
        false_negatives,
        positive_found: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub queries: usize,
    pub mean_hard_negatives: f64,
    pub total_false_negatives: usize,
    /// Fraction of queries with at least one false negative.
    pub false_negative_rate: f64,
    pub positives_not_retrieved: usize,
}

/// Retrieve a candidate pool per query with the given model and apply the
/// rank rule, producing stage II training instances.
pub fn mine_for_dataset(
    model: &RetrieverModel,
    benchmark: &Benchmark,
    cfg: &MiningConfig,
    frontend: AudioFrontend,
) -> Result<(Vec<TrainingInstance>, MiningStats)> {
    cfg.validate()?;
    let index = build_index(model, &benchmark.corpus, frontend)?;
    let queries: Vec<(String, crate::encoder::Embedding)> = benchmark
        .queries
        .iter()
        .map(|q| Ok((q.id.clone(), encode_sequence(model, q, frontend)?)))
        .collect::<Result<_>>()?;
    let runs = batch_search(&index, &queries, cfg.top_k_pool)?;

    let mut instances = Vec::with_capacity(benchmark.queries.len());
    let mut hard_total = 0usize;
    let mut fn_total = 0usize;
    let mut fn_queries = 0usize;
    let mut not_retrieved = 0usize;

    for (query, run) in benchmark.queries.iter().zip(runs.iter()) {
        let positives: BTreeSet<String> = benchmark
            .qrels
            .positives(&query.id)
            .into_iter()
            .map(str::to_string)
            .collect();
        if positives.is_empty() {
            return Err(Error::invariant(&query.id, "query has no positive"));
        }
        let outcome = mine_hard_negatives_multi(run, &positives, cfg)?;

        // The instance's positive is the mining anchor: the highest-ranked
        // positive when retrieved, otherwise the first by id.
        let anchor = run
            .entries()
            .iter()
            .find(|(d, _)| positives.contains(d))
            .map(|(d, _)| d.clone())
            .unwrap_or_else(|| positives.iter().next().unwrap().clone());

        hard_total += outcome.hard.len();
        fn_total += outcome.false_negatives.len();
        if !outcome.false_negatives.is_empty() {
            fn_queries += 1;
        }
        if !outcome.positive_found {
            not_retrieved += 1;
        }
        instances.push(TrainingInstance::new(query.clone(), anchor, outcome.hard)?);
    }

    let n = benchmark.queries.len();
    let stats = MiningStats {
        queries: n,
        mean_hard_negatives: if n == 0 { 0.0 } else { hard_total as f64 / n as f64 },
        total_false_negatives: fn_total,
        false_negative_rate: if n == 0 { 0.0 } else { fn_queries as f64 / n as f64 },
        positives_not_retrieved: not_retrieved,
    };
    Ok((instances, stats))
}

/// Mined instances as JSONL: `{"qid", "positive", "hard_negatives"}`.
pub fn save_mined_instances(instances: &[TrainingInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    #[derive(Serialize)]
    struct Line<'a> {
        qid: &'a str,
        positive: &'a str,
        hard_negatives: &'a [String],
    }
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    );
    for inst in instances {
        let line = serde_json::to_string(&Line {
            qid: &inst.query.id,
            positive: &inst.positive,
            hard_negatives: &inst.hard_negatives,
        })
        .map_err(|e| Error::Config(format!("serialize mined instance: {e}")))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Load mined instances back, resolving query ids against a query list.
pub fn load_mined_instances(
    path: impl AsRef<Path>,
    queries: &[crate::types::InterleavedSequence],
) -> Result<Vec<TrainingInstance>> {
    let path = path.as_ref();
    #[derive(Deserialize)]
    struct Line {
        qid: String,
        positive: String,
        hard_negatives: Vec<String>,
    }
    let by_id: std::collections::BTreeMap<&str, &crate::types::InterleavedSequence> =
        queries.iter().map(|q| (q.id.as_str(), q)).collect();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        let query = by_id.get(l.qid.as_str()).ok_or_else(|| Error::UnknownId {
            id: l.qid.clone(),
            context: "mined instances".into(),
        })?;
        out.push(TrainingInstance::new(
            (*query).clone(),
            l.positive,
            l.hard_negatives,
        )?);
    }
    Ok(out)
}

pub fn save_mining_stats(stats: &MiningStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(stats)
        .map_err(|e| Error::Config(format!("serialize mining stats: {e}")))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}
