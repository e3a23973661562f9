// Scratch calibration harness (not part of the deliverable test suite).

use braid_core::encoder::{AudioFrontend, EncoderConfig, RetrieverModel};
use braid_core::eval::{evaluate_settings, RetrievalSetting};
use braid_core::pipeline::{run_training_pipeline, PipelineConfig};
use braid_core::synth::{build_synthetic_benchmark, SynthConfig};
use braid_core::training::OptimizerConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_docs: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(400);
    let n_queries: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(150);
    let lr1: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10_000.0);
    let lr2: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(10_000.0);
    let epochs1: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(2);
    let epochs2: usize = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(2);
    let batch: usize = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(32);

    let frame_dim: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(32);
    let t0 = std::time::Instant::now();
    let scfg = SynthConfig {
        seed: 7,
        frame_dim,
        ..SynthConfig::default()
    };
    let benchmark = build_synthetic_benchmark(&scfg, n_docs, n_queries, 2).unwrap();
    println!(
        "benchmark: {} docs, {} queries ({:.1?})",
        benchmark.corpus.len(),
        benchmark.queries.len(),
        t0.elapsed()
    );

    let cfg = PipelineConfig {
        encoder: EncoderConfig {
            seed: 7,
            frame_dim,
            ..EncoderConfig::default()
        },
        stage1_opt: OptimizerConfig {
            lr_scale: lr1,
            epochs: epochs1,
            batch_size: batch,
            seed: 71,
            train_audio_only: true,
            ..OptimizerConfig::default()
        },
        stage2_opt: OptimizerConfig {
            lr_scale: lr2,
            epochs: epochs2,
            batch_size: batch,
            seed: 72,
            ..OptimizerConfig::default()
        },
        ..PipelineConfig::default()
    };

    let report = |label: &str, model: &RetrieverModel, frontend: AudioFrontend| {
        let out = evaluate_settings(model, &benchmark, &[1, 5], frontend).unwrap();
        let r = &out.report;
        println!(
            "{label:<22} A->T {:.3}  T->A {:.3}  IAT->T {:.3}  IAT->A {:.3}  mean {:.3}",
            r.per_setting[&RetrievalSetting::AudioToText].recall_at[&1],
            r.per_setting[&RetrievalSetting::TextToAudio].recall_at[&1],
            r.per_setting[&RetrievalSetting::InterleavedToText].recall_at[&1],
            r.per_setting[&RetrievalSetting::InterleavedToAudio].recall_at[&1],
            r.mean_recall(1),
        );
    };

    let untrained = RetrieverModel::init(&cfg.encoder).unwrap();
    report("untrained", &untrained, AudioFrontend::Passthrough);

    // Diagnostics: stage-1 own-task accuracy (rank the weak positive
    // among all weak pseudo-docs) and embedding-space collapse.
    let diagnose = |label: &str, model: &RetrieverModel, frontend: AudioFrontend| {
        use braid_core::retrieval::{build_index, search};
        use braid_core::training::derive_weak_pairs;
        let (weak_corpus, pairs) = derive_weak_pairs(&benchmark.corpus).unwrap();
        let index = build_index(model, &weak_corpus, frontend).unwrap();
        let mut hits = 0usize;
        let n = pairs.len().min(200);
        for inst in pairs.iter().take(n) {
            let emb = braid_core::encoder::encode_sequence(model, &inst.query, frontend).unwrap();
            let run = search(&index, &inst.query.id, &emb, 1).unwrap();
            if run.entries()[0].0 == inst.positive {
                hits += 1;
            }
        }
        let doc_index = build_index(model, &benchmark.corpus, frontend).unwrap();
        let m = doc_index.len().min(100);
        let mut cos_sum = 0.0;
        let mut cnt = 0usize;
        for i in 0..m {
            for j in (i + 1)..m {
                let a = doc_index.row(i);
                let b = doc_index.row(j);
                cos_sum += a
                    .iter()
                    .zip(b.iter())
                    .map(|(x, y)| f64::from(*x) * f64::from(*y))
                    .sum::<f64>();
                cnt += 1;
            }
        }
        println!(
            "  [{label}] weak-pair R@1 {:.3}  mean doc-pair cos {:.3}",
            hits as f64 / n as f64,
            cos_sum / cnt as f64
        );
    };
    diagnose("untrained", &untrained, AudioFrontend::Passthrough);

    for (label, selector, stage1, stage2) in [
        ("full", true, true, true),
        ("no-selector", false, true, true),
        ("no-stage1", true, false, true),
        ("no-stage2", true, true, false),
    ] {
        let t = std::time::Instant::now();
        let c = PipelineConfig {
            use_selector: selector,
            run_stage1: stage1,
            run_stage2: stage2,
            ..cfg.clone()
        };
        let artifacts = run_training_pipeline(&benchmark, &c).unwrap();
        let last_losses: Vec<f64> = artifacts
            .curve
            .iter()
            .rev()
            .take(3)
            .map(|(_, p)| p.loss)
            .collect();
        print!("[{:.1?} last-loss {:?}] ", t.elapsed(), last_losses);
        report(label, &artifacts.model, c.frontend());
        diagnose(label, &artifacts.model, c.frontend());
        if let Some(stats) = &artifacts.mining_stats {
            println!(
                "  mining: mean_hard {:.2}, fn_rate {:.3}, not_retrieved {}",
                stats.mean_hard_negatives, stats.false_negative_rate, stats.positives_not_retrieved
            );
        }
    }
    println!("total {:.1?}", t0.elapsed());
}
