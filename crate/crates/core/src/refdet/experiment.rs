//! Held-out comparison of bootstrap rounds on synthetic data.

use serde::{Deserialize, Serialize};

use super::{generate_dataset, RefConfig, RefModel, RefTrainer, SceneSet};
use crate::annotations::{DetectionRecord, Fold, ImageRecord};
use crate::evaluator::{
    build_roc, match_dataset, MatchPolicy, MatchResult, RocCurve, RocFlavor, RocSummary,
};
use crate::geometry::DEFAULT_OVERLAP_RESOLUTION;
use crate::miner::{bootstrap, BootstrapConfig, BoxError};
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub reference: RefConfig,
    pub bootstrap: BootstrapConfig,
    pub sampler: SamplerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_scenes: 50,
            test_scenes: 20,
            reference: RefConfig::default(),
            bootstrap: BootstrapConfig::default(),
            sampler: SamplerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundEvaluation {
    pub round_index: usize,
    pub detections: Vec<DetectionRecord>,
    pub matches: MatchResult,
    pub discrete: RocCurve,
    pub continuous: RocCurve,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seed: u64,
    pub rounds: Vec<RoundEvaluation>,
    pub pool_sizes: Vec<usize>,
}

/// False positives each of two curves needs to reach the highest
/// true-positive rate both of them attain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedRate {
    pub tp_rate: f64,
    pub fp_first: usize,
    pub fp_second: usize,
}

pub fn fp_at_matched_rate(first: &RocCurve, second: &RocCurve) -> MatchedRate {
    let tp_rate = first.max_tp().min(second.max_tp());
    MatchedRate {
        tp_rate,
        fp_first: first.fp_at_tp(tp_rate).unwrap_or(0),
        fp_second: second.fp_at_tp(tp_rate).unwrap_or(0),
    }
}

/// Detections of `model` on every image of `records`, in record order.
pub fn detect_all(
    model: &RefModel,
    records: &[ImageRecord],
) -> Result<Vec<DetectionRecord>, BoxError> {
    use rayon::prelude::*;
    records
        .par_iter()
        .map(|r| {
            Ok(DetectionRecord {
                image_id: r.image_id.clone(),
                detections: model.detect_image(&r.image_id)?,
            })
        })
        .collect()
}

pub fn evaluate_model(
    round_index: usize,
    model: &RefModel,
    records: &[ImageRecord],
) -> Result<RoundEvaluation, BoxError> {
    let detections = detect_all(model, records)?;
    let matches = match_dataset(
        records,
        &detections,
        MatchPolicy::GreedyByScore,
        DEFAULT_OVERLAP_RESOLUTION,
    )?;
    Ok(RoundEvaluation {
        round_index,
        discrete: build_roc(&matches, RocFlavor::Discrete),
        continuous: build_roc(&matches, RocFlavor::Continuous),
        detections,
        matches,
    })
}

impl RoundEvaluation {
    pub fn summary(&self) -> RocSummary {
        RocSummary::new(
            &self.matches,
            &self.discrete,
            &self.continuous,
            MatchPolicy::GreedyByScore,
        )
    }
}

/// Generates a dataset from `seed`, bootstraps on the first
/// `train_scenes` scenes and evaluates every round on the rest.
pub fn run_experiment(seed: u64, cfg: &ExperimentConfig) -> Result<ExperimentOutcome, BoxError> {
    let data = generate_dataset(
        seed,
        cfg.train_scenes + cfg.test_scenes,
        &cfg.reference.scene,
    )?;
    let records: Vec<ImageRecord> = data.iter().map(|(r, _)| r.clone()).collect();
    let scenes = SceneSet::new(
        data.into_iter().map(|(r, s)| (r.image_id, s)),
        &cfg.reference,
    );
    let (train, test) = records.split_at(cfg.train_scenes);
    let folds = [Fold {
        fold_index: 0,
        records: train.to_vec(),
    }];
    let mut trainer = RefTrainer::new(scenes, cfg.reference.clone(), seed);
    let mut rounds = Vec::new();
    let mut eval_error = None;
    let outcome = bootstrap(
        &mut trainer,
        &folds,
        &cfg.bootstrap,
        &cfg.sampler,
        |round, model| match evaluate_model(round, model, test) {
            Ok(ev) => {
                let summary = ev.summary();
                rounds.push(ev);
                Some(summary)
            }
            Err(e) => {
                eval_error.get_or_insert(e);
                None
            }
        },
    )
    .map_err(|f| -> BoxError { Box::new(f.source) })?;
    if let Some(e) = eval_error {
        return Err(e);
    }
    Ok(ExperimentOutcome {
        seed,
        rounds,
        pool_sizes: outcome.pools.iter().map(|p| p.len()).collect(),
    })
}
