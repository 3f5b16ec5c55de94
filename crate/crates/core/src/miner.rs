//! Hard negative harvesting and the multi-round bootstrap driver.
//!
//! A detected region is a hard negative when its best IoU against the
//! image's ground truth (ellipse bounding boxes) is below the harvest IoU
//! threshold. Pools accumulate across rounds and each retraining forces
//! the pool into every mini-batch through the sampler.

use std::error::Error as StdError;
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Detection, Fold, ImageRecord, ParseError};
use crate::evaluator::RocSummary;
use crate::geometry::{ellipse_bounding_box, max_iou, BBox, OverlapScore};
use crate::sampler::{PoolEntry, SamplerConfig};

pub type BoxError = Box<dyn StdError + Send + Sync>;

/// Coordinate tolerance for treating two pool regions as the same.
pub const POOL_DEDUP_TOLERANCE: f64 = 1e-6;

/// Anything that turns an image into scored boxes. Shared read-only across
/// harvesting workers.
pub trait Detector: Sync {
    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>, BoxError>;
}

/// Produces a detector from a set of training images and a hard pool.
pub trait Trainer {
    type Model: Detector;

    /// `init` is the previous round's model when resuming; `None` means
    /// start from the trainer's own initialization.
    fn train(
        &mut self,
        images: &[ImageRecord],
        hard_pool: &[HardNegative],
        sampler: &SamplerConfig,
        init: Option<&Self::Model>,
    ) -> Result<Self::Model, BoxError>;

    /// Stable identifier for a trained model.
    fn snapshot_id(&self, model: &Self::Model) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardNegative {
    pub image_id: String,
    pub region: BBox,
    pub detector_score: f64,
    pub max_iou: OverlapScore,
}

impl HardNegative {
    pub fn pool_entry(&self) -> PoolEntry {
        PoolEntry {
            image_id: self.image_id.clone(),
            region: self.region,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarvestConfig {
    pub score_threshold: f64,
    pub iou_threshold: f64,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.8,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("detector failed on image {image_id:?}: {source}")]
    Detector {
        image_id: String,
        #[source]
        source: BoxError,
    },
    #[error("trainer failed: {0}")]
    Trainer(#[source] BoxError),
    #[error("round count must be at least 1")]
    NoRounds,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

fn harvest_order(a: &HardNegative, b: &HardNegative) -> std::cmp::Ordering {
    a.image_id
        .cmp(&b.image_id)
        .then(b.detector_score.total_cmp(&a.detector_score))
        .then(a.region.x_min().total_cmp(&b.region.x_min()))
        .then(a.region.y_min().total_cmp(&b.region.y_min()))
        .then(a.region.x_max().total_cmp(&b.region.x_max()))
        .then(a.region.y_max().total_cmp(&b.region.y_max()))
}

/// Runs `detector` over `images` in parallel and keeps detections scoring
/// at least `score_threshold` whose max IoU with the image's ground-truth
/// boxes is below `iou_threshold`. Output is ordered by image id, then by
/// descending score.
pub fn harvest<D: Detector + ?Sized>(
    detector: &D,
    images: &[ImageRecord],
    score_threshold: f64,
    iou_threshold: f64,
) -> Result<Vec<HardNegative>, MinerError> {
    let per_image: Vec<Vec<HardNegative>> = images
        .par_iter()
        .map(|image| {
            let dets = detector
                .detect(image)
                .map_err(|source| MinerError::Detector {
                    image_id: image.image_id.clone(),
                    source,
                })?;
            let gts: Vec<BBox> = image.faces.iter().map(ellipse_bounding_box).collect();
            Ok(dets
                .into_iter()
                .filter(|d| d.score >= score_threshold)
                .filter_map(|d| {
                    let (overlap, _) = max_iou(&d.region, &gts);
                    (overlap.value() < iou_threshold).then(|| HardNegative {
                        image_id: image.image_id.clone(),
                        region: d.region,
                        detector_score: d.score,
                        max_iou: overlap,
                    })
                })
                .collect())
        })
        .collect::<Result<_, MinerError>>()?;
    let mut out: Vec<HardNegative> = per_image.into_iter().flatten().collect();
    out.sort_by(harvest_order);
    Ok(out)
}

/// Accumulated hard negatives, kept in harvest order and free of
/// duplicates (same image, coordinates within [`POOL_DEDUP_TOLERANCE`]).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HardPool {
    entries: Vec<HardNegative>,
}

impl HardPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[HardNegative] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, image_id: &str, region: &BBox) -> bool {
        self.entries
            .iter()
            .any(|e| e.image_id == image_id && e.region.approx_eq(region, POOL_DEDUP_TOLERANCE))
    }

    /// Adds entries not already present; returns how many were new.
    pub fn extend(&mut self, found: impl IntoIterator<Item = HardNegative>) -> usize {
        let mut added = 0;
        for hn in found {
            if !self.contains(&hn.image_id, &hn.region) {
                self.entries.push(hn);
                added += 1;
            }
        }
        self.entries.sort_by(harvest_order);
        added
    }

    pub fn pool_entries(&self) -> Vec<PoolEntry> {
        self.entries.iter().map(HardNegative::pool_entry).collect()
    }

    /// One `image_id x_min y_min x_max y_max score max_iou` line per entry.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            writeln!(
                out,
                "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
                e.image_id,
                e.region.x_min(),
                e.region.y_min(),
                e.region.x_max(),
                e.region.y_max(),
                e.detector_score,
                e.max_iou.value()
            )
            .unwrap();
        }
        out
    }

    pub fn parse(content: &str) -> Result<Self, ParseError> {
        let mut found = Vec::new();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.trim_end_matches('\r').trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| ParseError::Malformed {
                line: idx + 1,
                message,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 7 {
                return Err(bad(format!("expected 7 fields, found {}", tokens.len())));
            }
            let mut nums = [0.0; 6];
            for (slot, tok) in nums.iter_mut().zip(&tokens[1..]) {
                *slot = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("non-numeric field {tok:?}")))?;
            }
            let region =
                BBox::new(nums[0], nums[1], nums[2], nums[3]).map_err(|e| bad(e.to_string()))?;
            found.push(HardNegative {
                image_id: tokens[0].to_string(),
                region,
                detector_score: nums[4],
                max_iou: OverlapScore::new(nums[5]),
            });
        }
        let mut pool = HardPool::new();
        pool.extend(found);
        Ok(pool)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub rounds: usize,
    pub harvest: HarvestConfig,
    /// Fine-tune from the previous round's model instead of restarting
    /// from the initial state.
    pub resume: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            rounds: 2,
            harvest: HarvestConfig::default(),
            resume: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: usize,
    /// Hard negatives harvested for this round's training (zero in round 1).
    pub hard_negatives_found: usize,
    /// Of those, how many were not already pooled.
    pub new_hard_negatives: usize,
    pub pool_size: usize,
    pub detector_snapshot_id: String,
    pub eval_summary: Option<RocSummary>,
}

#[derive(Debug)]
pub struct BootstrapOutcome<M> {
    pub model: M,
    pub reports: Vec<RoundReport>,
    /// Pool used to train each round, round 1 first.
    pub pools: Vec<HardPool>,
}

/// A failed round. The last fully completed round, if any, is kept.
pub struct BootstrapFailure<M> {
    pub failed_round: usize,
    pub source: MinerError,
    pub completed: Option<BootstrapOutcome<M>>,
}

impl<M> fmt::Debug for BootstrapFailure<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BootstrapFailure")
            .field("failed_round", &self.failed_round)
            .field("source", &self.source)
            .field(
                "completed_rounds",
                &self.completed.as_ref().map(|c| c.reports.len()),
            )
            .finish()
    }
}

impl<M> fmt::Display for BootstrapFailure<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bootstrap round {} failed: {}",
            self.failed_round, self.source
        )
    }
}

impl<M> StdError for BootstrapFailure<M> {
    fn source(&self) -> Option<&(dyn StdError + 'static)> {
        Some(&self.source)
    }
}

/// Runs the bootstrap loop over the images of `dataset`.
///
/// Round 1 trains with an empty pool. Each later round harvests with the
/// previous round's model, merges the finds into the pool and retrains.
/// `evaluate` is called once per round with the fresh model.
pub fn bootstrap<T, E>(
    trainer: &mut T,
    dataset: &[Fold],
    cfg: &BootstrapConfig,
    sampler: &SamplerConfig,
    mut evaluate: E,
) -> Result<BootstrapOutcome<T::Model>, BootstrapFailure<T::Model>>
where
    T: Trainer,
    E: FnMut(usize, &T::Model) -> Option<RocSummary>,
{
    if cfg.rounds == 0 {
        return Err(BootstrapFailure {
            failed_round: 1,
            source: MinerError::NoRounds,
            completed: None,
        });
    }
    let images: Vec<ImageRecord> = dataset
        .iter()
        .flat_map(|f| f.records.iter().cloned())
        .collect();
    let mut pool = HardPool::new();
    let mut reports: Vec<RoundReport> = Vec::new();
    let mut pools: Vec<HardPool> = Vec::new();
    let mut current: Option<T::Model> = None;

    for round in 1..=cfg.rounds {
        let fail = |source: MinerError,
                    model: Option<T::Model>,
                    reports: Vec<RoundReport>,
                    pools: Vec<HardPool>| BootstrapFailure {
            failed_round: round,
            source,
            completed: model.map(|model| BootstrapOutcome {
                model,
                reports,
                pools,
            }),
        };

        let (found, added) = match &current {
            Some(prev) => {
                match harvest(
                    prev,
                    &images,
                    cfg.harvest.score_threshold,
                    cfg.harvest.iou_threshold,
                ) {
                    Ok(found) => {
                        let n = found.len();
                        (n, pool.extend(found))
                    }
                    Err(e) => return Err(fail(e, current, reports, pools)),
                }
            }
            None => (0, 0),
        };
        log::info!(
            "round {round}: harvested {found} hard negatives ({added} new), pool size {}",
            pool.len()
        );

        let init = if cfg.resume { current.as_ref() } else { None };
        let model = match trainer.train(&images, pool.entries(), sampler, init) {
            Ok(m) => m,
            Err(e) => return Err(fail(MinerError::Trainer(e), current, reports, pools)),
        };
        let eval_summary = evaluate(round, &model);
        reports.push(RoundReport {
            round_index: round,
            hard_negatives_found: found,
            new_hard_negatives: added,
            pool_size: pool.len(),
            detector_snapshot_id: trainer.snapshot_id(&model),
            eval_summary,
        });
        pools.push(pool.clone());
        current = Some(model);
    }
    Ok(BootstrapOutcome {
        model: current.expect("at least one round ran"),
        reports,
        pools,
    })
}
