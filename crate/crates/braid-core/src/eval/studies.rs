//! Retriever-variant studies: selector vs. average pooling, component
//! ablations, and per-query embedding latency.

use super::{evaluate_settings, MetricReport, RetrievalSetting};
use crate::encoder::{
    encode_sequence, processed_audio_frames, AudioFrontend, RetrieverModel,
};
use crate::error::{Error, Result};
use crate::pipeline::{run_training_pipeline, PipelineConfig};
use crate::types::Benchmark;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Selector vs. k-way average pooling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingVariantRow {
    pub variant: String,
    pub mean_recall1: f64,
    pub mean_ndcg5: f64,
    pub per_setting_recall1: BTreeMap<RetrievalSetting, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolingReport {
    pub rows: Vec<PoolingVariantRow>,
}

impl PoolingReport {
    pub fn row(&self, variant: &str) -> Option<&PoolingVariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tmean R@1\tmean nDCG@5\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{:.4}\t{:.4}", r.variant, r.mean_recall1, r.mean_ndcg5);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<14}{:>12}{:>14}\n", "variant", "mean R@1", "mean nDCG@5");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}{:>12.4}{:>14.4}",
                r.variant, r.mean_recall1, r.mean_ndcg5
            );
        }
        out
    }
}

/// Evaluate the selector front end against k-way average pooling with
/// identical downstream weights.
pub fn compare_selector_vs_pooling(
    model: &RetrieverModel,
    benchmark: &Benchmark,
    k_values: &[usize],
) -> Result<PoolingReport> {
    let mut variants: Vec<(String, AudioFrontend)> =
        vec![("selector".into(), AudioFrontend::Selector)];
    for k in k_values {
        variants.push((format!("pool-{k}"), AudioFrontend::Pool(*k)));
    }
    let mut rows = Vec::new();
    for (name, frontend) in variants {
        let out = evaluate_settings(model, benchmark, &[1, 5], frontend)?;
        let per_setting_recall1 = out
            .report
            .per_setting
            .iter()
            .map(|(s, m)| (*s, m.recall_at[&1]))
            .collect();
        rows.push(PoolingVariantRow {
            variant: name,
            mean_recall1: out.report.mean_recall(1),
            mean_ndcg5: out.report.mean_ndcg(5),
            per_setting_recall1,
        });
    }
    Ok(PoolingReport { rows })
}

// ---------------------------------------------------------------------------
// Component ablation
// ---------------------------------------------------------------------------

/// Which training components an ablation variant keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub selector: bool,
    pub stage1: bool,
    pub stage2: bool,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [
        AblationVariant { selector: true, stage1: true, stage2: true },
        AblationVariant { selector: false, stage1: true, stage2: true },
        AblationVariant { selector: true, stage1: false, stage2: true },
        AblationVariant { selector: true, stage1: true, stage2: false },
    ];

    pub fn label(&self) -> String {
        match (self.selector, self.stage1, self.stage2) {
            (true, true, true) => "full".into(),
            (false, true, true) => "no-selector".into(),
            (true, false, true) => "no-stage1".into(),
            (true, true, false) => "no-stage2".into(),
            (s, a, b) => format!("sel={s},stage1={a},stage2={b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub selector: bool,
    pub stage1: bool,
    pub stage2: bool,
    pub recall1: BTreeMap<RetrievalSetting, f64>,
    pub ndcg5: BTreeMap<RetrievalSetting, f64>,
    pub mean_recall1: f64,
    pub mean_ndcg5: f64,
    /// Average change vs. the full model across settings.
    pub delta_recall1: f64,
    pub delta_ndcg5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tselector\tstage1\tstage2");
        for s in RetrievalSetting::ALL {
            let _ = write!(out, "\t{} R@1\t{} nDCG@5", s.label(), s.label());
        }
        out.push_str("\tdelta R@1\tdelta nDCG@5\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}",
                r.variant, r.selector, r.stage1, r.stage2
            );
            for s in RetrievalSetting::ALL {
                let _ = write!(out, "\t{:.4}\t{:.4}", r.recall1[&s], r.ndcg5[&s]);
            }
            let _ = writeln!(out, "\t{:+.4}\t{:+.4}", r.delta_recall1, r.delta_ndcg5);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<13}", "variant");
        for s in RetrievalSetting::ALL {
            let _ = write!(out, "{:>12}", format!("{} R@1", s.label()));
        }
        let _ = writeln!(out, "{:>12}{:>14}", "dR@1", "dnDCG@5");
        for r in &self.rows {
            let _ = write!(out, "{:<13}", r.variant);
            for s in RetrievalSetting::ALL {
                let _ = write!(out, "{:>12.4}", r.recall1[&s]);
            }
            let _ = writeln!(out, "{:>12.4}{:>14.4}", r.delta_recall1, r.delta_ndcg5);
        }
        out
    }
}

/// Train and evaluate the four standard variants (full, no selector, no
/// stage I, no stage II) on one benchmark with shared hyperparameters.
/// Every variant is emitted regardless of how it performs.
pub fn ablate_components(benchmark: &Benchmark, base: &PipelineConfig) -> Result<AblationReport> {
    let mut results: Vec<(AblationVariant, MetricReport)> = Vec::new();
    for variant in AblationVariant::ALL {
        let cfg = PipelineConfig {
            use_selector: variant.selector,
            run_stage1: variant.stage1,
            run_stage2: variant.stage2,
            ..base.clone()
        };
        let artifacts = run_training_pipeline(benchmark, &cfg)?;
        let out = evaluate_settings(&artifacts.model, benchmark, &[1, 5], cfg.frontend())?;
        results.push((variant, out.report));
    }

    let full_recall1 = results[0].1.mean_recall(1);
    let full_ndcg5 = results[0].1.mean_ndcg(5);
    let rows = results
        .into_iter()
        .map(|(variant, report)| {
            let recall1: BTreeMap<RetrievalSetting, f64> = report
                .per_setting
                .iter()
                .map(|(s, m)| (*s, m.recall_at[&1]))
                .collect();
            let ndcg5: BTreeMap<RetrievalSetting, f64> = report
                .per_setting
                .iter()
                .map(|(s, m)| (*s, m.ndcg_at[&5]))
                .collect();
            let mean_recall1 = report.mean_recall(1);
            let mean_ndcg5 = report.mean_ndcg(5);
            AblationRow {
                variant: variant.label(),
                selector: variant.selector,
                stage1: variant.stage1,
                stage2: variant.stage2,
                recall1,
                ndcg5,
                mean_recall1,
                mean_ndcg5,
                delta_recall1: mean_recall1 - full_recall1,
                delta_ndcg5: mean_ndcg5 - full_ndcg5,
            }
        })
        .collect();
    Ok(AblationReport { rows })
}

// ---------------------------------------------------------------------------
// Latency
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub median_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantLatency {
    pub variant: String,
    pub params_count: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub per_setting: BTreeMap<RetrievalSetting, LatencyStats>,
    /// Total audio frames processed across interleaved queries.
    pub processed_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub variants: Vec<VariantLatency>,
    pub warmup: usize,
    pub reps: usize,
}

impl LatencyReport {
    pub fn variant(&self, name: &str) -> Option<&VariantLatency> {
        self.variants.iter().find(|v| v.variant == name)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant\tparams\tmean ms\tmedian ms\tprocessed frames\n");
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.4}\t{:.4}\t{}",
                v.variant, v.params_count, v.mean_ms, v.median_ms, v.processed_frames
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14}{:>10}{:>12}{:>12}{:>18}\n",
            "variant", "params", "mean ms", "median ms", "frames processed"
        );
        for v in &self.variants {
            let _ = writeln!(
                out,
                "{:<14}{:>10}{:>12.4}{:>12.4}{:>18}",
                v.variant, v.params_count, v.mean_ms, v.median_ms, v.processed_frames
            );
        }
        out
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

/// Wall-clock per-query embedding time (search excluded) for each
/// retriever variant under the four settings, single-threaded. Warmup
/// repetitions are discarded.
pub fn bench_latency(
    model: &RetrieverModel,
    variants: &[(String, AudioFrontend)],
    benchmark: &Benchmark,
    warmup: usize,
    reps: usize,
) -> Result<LatencyReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    if benchmark.queries.is_empty() {
        return Err(Error::invariant("bench_latency", "no queries"));
    }
    let mut out = Vec::new();
    for (name, frontend) in variants {
        let mut all_samples: Vec<f64> = Vec::new();
        let mut per_setting = BTreeMap::new();
        for setting in RetrievalSetting::ALL {
            let queries: Vec<crate::types::InterleavedSequence> = benchmark
                .queries
                .iter()
                .map(|q| match setting.query_kind() {
                    Some(kind) => super::project_modality(q, kind).ok_or_else(|| {
                        Error::invariant(&q.id, format!("query has no {kind:?} segments"))
                    }),
                    None => Ok(q.clone()),
                })
                .collect::<Result<_>>()?;
            let mut samples: Vec<f64> = Vec::new();
            for rep in 0..(warmup + reps) {
                for q in &queries {
                    let t0 = Instant::now();
                    let _ = encode_sequence(model, q, *frontend)?;
                    let dt = t0.elapsed().as_secs_f64() * 1e3;
                    if rep >= warmup {
                        samples.push(dt);
                    }
                }
            }
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let med = median(&mut samples);
            all_samples.extend_from_slice(&samples);
            per_setting.insert(setting, LatencyStats { mean_ms: mean, median_ms: med });
        }
        let mut processed_frames = 0usize;
        for q in &benchmark.queries {
            processed_frames += processed_audio_frames(model, q, *frontend)?;
        }
        let mean_ms = all_samples.iter().sum::<f64>() / all_samples.len() as f64;
        let median_ms = median(&mut all_samples);
        out.push(VariantLatency {
            variant: name.clone(),
            params_count: model.num_params(),
            mean_ms,
            median_ms,
            per_setting,
            processed_frames,
        });
    }
    Ok(LatencyReport {
        variants: out,
        warmup,
        reps,
    })
}
