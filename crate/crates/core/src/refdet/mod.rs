//! Reference detector: a small, fully deterministic stand-in for a
//! two-stage CNN detector. Synthetic scenes supply images, sliding windows
//! supply proposals and a logistic scorer over pooled-intensity features
//! does the classification. It plugs into [`crate::miner`] through the
//! [`Trainer`] and [`Detector`] traits.

pub mod experiment;
pub mod features;
pub mod pipeline;
pub mod scene;
pub mod scorer;

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotations::{Detection, ImageRecord};
use crate::geometry::{ellipse_bounding_box, BBox, GeometryError};
use crate::miner::{BoxError, Detector, HardNegative, Trainer};
use crate::sampler::{label_roi, Candidate, RoiKind, SamplerConfig, SamplerError};

use features::{FeatureConfig, FeatureMaps};
use pipeline::{detect_with, propose, DetectConfig, ProposalConfig};
use scene::{generate_scene, SceneConfig, SyntheticScene};
use scorer::{train_scorer, LinearScorer, PhaseLoss, SgdConfig, TrainImage};

#[derive(Debug, Error)]
pub enum RefDetError {
    #[error("could not place shape {placed} of {requested} without overlap")]
    Placement { placed: usize, requested: usize },
    #[error("region {0} has no area")]
    DegenerateRegion(BBox),
    #[error("region {0} does not intersect the image")]
    RegionOutsideImage(BBox),
    #[error("no foreground candidates in any training image")]
    NoForeground,
    #[error("no scene loaded for image {0:?}")]
    UnknownScene(String),
    #[error("snapshot has {found} weights, features have {expected}")]
    FeatureLength { expected: usize, found: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Everything that parameterizes the reference detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RefConfig {
    pub scene: SceneConfig,
    pub proposals: ProposalConfig,
    pub features: FeatureConfig,
    pub sgd: SgdConfig,
    pub detect: DetectConfig,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:04}")
}

/// Seed of the `index`-th scene of a dataset.
pub fn scene_seed(dataset_seed: u64, index: usize) -> u64 {
    dataset_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
        .rotate_left(17)
}

/// Generates `count` scenes and their image records, in parallel.
pub fn generate_dataset(
    seed: u64,
    count: usize,
    cfg: &SceneConfig,
) -> Result<Vec<(ImageRecord, SyntheticScene)>, RefDetError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(scene_seed(seed, i), cfg)?;
            let record = ImageRecord {
                image_id: scene_id(i),
                width: scene.width,
                height: scene.height,
                faces: scene.faces.clone(),
                fold: None,
            };
            Ok((record, scene))
        })
        .collect()
}

/// A scene with its proposals and feature tables precomputed.
#[derive(Debug)]
pub struct PreparedScene {
    pub scene: SyntheticScene,
    pub maps: FeatureMaps,
    pub proposals: Vec<BBox>,
}

/// Prepared scenes keyed by image id; shared between trainer and models.
#[derive(Debug, Clone, Default)]
pub struct SceneSet {
    scenes: Arc<HashMap<String, PreparedScene>>,
    features: FeatureConfig,
}

impl SceneSet {
    pub fn new(
        scenes: impl IntoIterator<Item = (String, SyntheticScene)>,
        cfg: &RefConfig,
    ) -> Self {
        let list: Vec<(String, SyntheticScene)> = scenes.into_iter().collect();
        let prepared: HashMap<String, PreparedScene> = list
            .into_par_iter()
            .map(|(id, scene)| {
                let maps = FeatureMaps::new(&scene, cfg.features);
                let proposals = propose(scene.width, scene.height, &cfg.proposals);
                (
                    id,
                    PreparedScene {
                        scene,
                        maps,
                        proposals,
                    },
                )
            })
            .collect();
        Self {
            scenes: Arc::new(prepared),
            features: cfg.features,
        }
    }

    pub fn get(&self, image_id: &str) -> Result<&PreparedScene, RefDetError> {
        self.scenes
            .get(image_id)
            .ok_or_else(|| RefDetError::UnknownScene(image_id.to_string()))
    }

    pub fn feature_config(&self) -> FeatureConfig {
        self.features
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Runs the detector on one scene.
pub fn detect(
    scene: &PreparedScene,
    scorer: &LinearScorer,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>, RefDetError> {
    let expected = scene.maps.config().len();
    if scorer.weights.len() != expected {
        return Err(RefDetError::FeatureLength {
            expected,
            found: scorer.weights.len(),
        });
    }
    detect_with(&scene.maps, &scene.proposals, scorer, cfg)
}

/// Labels every proposal of a training image against its faces and keeps
/// the foreground and background ones with their features.
pub fn training_candidates(
    record: &ImageRecord,
    prepared: &PreparedScene,
    sampler: &SamplerConfig,
) -> Result<TrainImage, RefDetError> {
    let gts: Vec<BBox> = record.faces.iter().map(ellipse_bounding_box).collect();
    let mut candidates = Vec::new();
    let mut features = Vec::new();
    for p in &prepared.proposals {
        let label = label_roi(p, &gts, sampler);
        if label.kind == RoiKind::Ignored {
            continue;
        }
        features.push(prepared.maps.extract(p)?);
        candidates.push(Candidate {
            image_id: record.image_id.clone(),
            region: *p,
            label,
        });
    }
    Ok(TrainImage {
        image_id: record.image_id.clone(),
        candidates,
        features,
    })
}

/// Trains a scorer on `images` with `hard_pool` forced into the batches.
pub fn train(
    scenes: &SceneSet,
    images: &[ImageRecord],
    hard_pool: &[HardNegative],
    sampler: &SamplerConfig,
    sgd: &SgdConfig,
    seed: u64,
    init: Option<&LinearScorer>,
) -> Result<(LinearScorer, Vec<PhaseLoss>), RefDetError> {
    sampler.validate()?;
    let train_images: Vec<TrainImage> = images
        .par_iter()
        .map(|r| training_candidates(r, scenes.get(&r.image_id)?, sampler))
        .collect::<Result<_, _>>()?;
    let pool = hard_pool
        .iter()
        .map(|h| {
            let f = scenes.get(&h.image_id)?.maps.extract(&h.region)?;
            Ok((h.pool_entry(), f))
        })
        .collect::<Result<Vec<_>, RefDetError>>()?;
    train_scorer(
        &train_images,
        &pool,
        sampler,
        sgd,
        seed,
        init,
        scenes.feature_config().len(),
    )
}

pub fn snapshot_id(scorer: &LinearScorer) -> String {
    let digest = Sha256::digest(scorer.to_text().as_bytes());
    hex::encode(&digest[..8])
}

/// A trained scorer bound to the scenes it can see.
#[derive(Debug, Clone)]
pub struct RefModel {
    pub scorer: LinearScorer,
    pub scenes: SceneSet,
    pub detect: DetectConfig,
}

impl RefModel {
    pub fn detect_image(&self, image_id: &str) -> Result<Vec<Detection>, RefDetError> {
        detect(self.scenes.get(image_id)?, &self.scorer, &self.detect)
    }
}

impl Detector for RefModel {
    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>, BoxError> {
        Ok(self.detect_image(&image.image_id)?)
    }
}

/// [`Trainer`] for the reference detector. Every call restarts from the
/// same seed unless the bootstrap driver passes a model to resume from.
#[derive(Debug, Clone)]
pub struct RefTrainer {
    pub scenes: SceneSet,
    pub config: RefConfig,
    pub seed: u64,
    /// Loss summary of each `train` call, in order.
    pub history: Vec<Vec<PhaseLoss>>,
}

impl RefTrainer {
    pub fn new(scenes: SceneSet, config: RefConfig, seed: u64) -> Self {
        Self {
            scenes,
            config,
            seed,
            history: Vec::new(),
        }
    }
}

impl Trainer for RefTrainer {
    type Model = RefModel;

    fn train(
        &mut self,
        images: &[ImageRecord],
        hard_pool: &[HardNegative],
        sampler: &SamplerConfig,
        init: Option<&RefModel>,
    ) -> Result<RefModel, BoxError> {
        let (scorer, losses) = train(
            &self.scenes,
            images,
            hard_pool,
            sampler,
            &self.config.sgd,
            self.seed,
            init.map(|m| &m.scorer),
        )?;
        self.history.push(losses);
        Ok(RefModel {
            scorer,
            scenes: self.scenes.clone(),
            detect: self.config.detect,
        })
    }

    fn snapshot_id(&self, model: &RefModel) -> String {
        snapshot_id(&model.scorer)
    }
}
