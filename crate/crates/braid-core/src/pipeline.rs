//! End-to-end training pipeline: selector training, stage I on derived
//! weak pairs, hard-negative mining with the stage I model, stage II on
//! the mined instances. Shared by the CLI and the ablation study.

use crate::encoder::{AudioFrontend, EncoderConfig, RetrieverModel};
use crate::error::Result;
use crate::mining::{mine_for_dataset, MiningConfig, MiningStats};
use crate::selector::{labeled_segments, train_selector};
use crate::training::{
    derive_weak_pairs, run_two_stage, LossPoint, OptimizerConfig, StagePlan, TrainingInstance,
};
use crate::types::Benchmark;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub selector_opt: OptimizerConfig,
    pub stage1_opt: OptimizerConfig,
    pub stage2_opt: OptimizerConfig,
    pub mining: MiningConfig,
    /// Train and evaluate with the selector front end.
    pub use_selector: bool,
    pub run_stage1: bool,
    pub run_stage2: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            encoder: EncoderConfig::default(),
            selector_opt: OptimizerConfig {
                lr_scale: 40_000.0,
                epochs: 4,
                batch_size: 16,
                ..OptimizerConfig::default()
            },
            stage1_opt: OptimizerConfig::default(),
            stage2_opt: OptimizerConfig::default(),
            mining: MiningConfig::default(),
            use_selector: true,
            run_stage1: true,
            run_stage2: true,
        }
    }
}

impl PipelineConfig {
    pub fn frontend(&self) -> AudioFrontend {
        AudioFrontend::from_flag(self.use_selector)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    /// Final model (stage II when run, else stage I, else initialization).
    pub model: RetrieverModel,
    pub stage1: RetrieverModel,
    pub mined: Vec<TrainingInstance>,
    pub mining_stats: Option<MiningStats>,
    pub curve: Vec<(String, LossPoint)>,
}

/// Run the configured pipeline on a benchmark.
pub fn run_training_pipeline(
    benchmark: &Benchmark,
    cfg: &PipelineConfig,
) -> Result<PipelineArtifacts> {
    let mut model = RetrieverModel::init(&cfg.encoder)?;

    if cfg.use_selector {
        let data = labeled_segments(benchmark.corpus.iter());
        model.selector = train_selector(&data, &cfg.selector_opt)?;
    }

    let (stage1_corpus, stage1_instances) = if cfg.run_stage1 {
        derive_weak_pairs(&benchmark.corpus)?
    } else {
        (crate::types::Corpus::default(), Vec::new())
    };

    // Mining happens between the stages, with whatever retriever stage I
    // produced (the initialization when stage I is disabled).
    let plan_stage1 = StagePlan {
        stage1_instances,
        stage1_corpus,
        stage1_opt: cfg.stage1_opt.clone(),
        stage2_instances: Vec::new(),
        stage2_opt: cfg.stage2_opt.clone(),
        train_with_selector: cfg.use_selector,
    };
    let stage1_result = run_two_stage(&model, &plan_stage1, &benchmark.corpus)?;
    let stage1 = stage1_result.stage1.clone();

    let (mined, mining_stats) = if cfg.run_stage2 {
        let (mined, stats) = mine_for_dataset(&stage1, benchmark, &cfg.mining, cfg.frontend())?;
        (mined, Some(stats))
    } else {
        (Vec::new(), None)
    };

    let plan = StagePlan {
        stage1_instances: Vec::new(),
        stage1_corpus: crate::types::Corpus::default(),
        stage1_opt: cfg.stage1_opt.clone(),
        stage2_instances: mined.clone(),
        stage2_opt: cfg.stage2_opt.clone(),
        train_with_selector: cfg.use_selector,
    };
    let stage2_result = run_two_stage(&stage1, &plan, &benchmark.corpus)?;

    let mut curve = stage1_result.curve;
    curve.extend(stage2_result.curve.into_iter().filter(|(s, _)| s == "stage2"));
    Ok(PipelineArtifacts {
        model: stage2_result.stage2,
        stage1,
        mined,
        mining_stats,
        curve,
    })
}
