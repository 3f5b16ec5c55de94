//! Foreground/background labeling of candidate RoIs and assembly of
//! ratio-balanced mini-batches with forced hard-negative inclusion.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{max_iou, BBox, OverlapScore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("no foreground candidates available")]
    EmptyForeground,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Minimum max-IoU for a foreground RoI (inclusive).
    pub th_fg: f64,
    /// Lower end of the background interval `[th_bg_low, th_fg)`.
    pub th_bg_low: f64,
    pub bg_fg_ratio: f64,
    pub batch_size: usize,
    /// Enforce the ratio within each image instead of over the whole batch.
    pub per_image_ratio: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            th_fg: 0.5,
            th_bg_low: 0.1,
            bg_fg_ratio: 3.0,
            batch_size: 64,
            per_image_ratio: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: String| Err(SamplerError::InvalidConfig(m));
        if !(self.th_fg > 0.0 && self.th_fg <= 1.0) {
            return bad(format!("th_fg must lie in (0, 1], got {}", self.th_fg));
        }
        if !(self.th_bg_low >= 0.0 && self.th_bg_low < 1.0) {
            return bad(format!(
                "th_bg_low must lie in [0, 1), got {}",
                self.th_bg_low
            ));
        }
        if self.th_bg_low >= self.th_fg {
            return bad(format!(
                "th_bg_low ({}) must be below th_fg ({})",
                self.th_bg_low, self.th_fg
            ));
        }
        if !(self.bg_fg_ratio > 0.0 && self.bg_fg_ratio.is_finite()) {
            return bad(format!(
                "bg_fg_ratio must be positive, got {}",
                self.bg_fg_ratio
            ));
        }
        if self.batch_size < 4 {
            return bad(format!(
                "batch_size must be at least 4, got {}",
                self.batch_size
            ));
        }
        Ok(())
    }

    /// Foreground slots per batch; ceiling division keeps at least one.
    pub fn fg_quota(&self) -> usize {
        fg_quota_for(self.batch_size, self.bg_fg_ratio)
    }

    /// Background slots that accompany `fg_count` foreground RoIs.
    pub fn bg_quota(&self, fg_count: usize) -> usize {
        (self.bg_fg_ratio * fg_count as f64).round() as usize
    }
}

fn fg_quota_for(batch_size: usize, ratio: f64) -> usize {
    ((batch_size as f64 / (1.0 + ratio)).ceil() as usize).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoiKind {
    Foreground,
    Background,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiLabel {
    pub kind: RoiKind,
    pub matched_gt: Option<usize>,
    pub max_iou: OverlapScore,
}

/// Labels from an already computed max-IoU. Foreground is `>= th_fg`,
/// background is the half-open `[th_bg_low, th_fg)`, anything lower is
/// ignored.
pub fn label_from_overlap(
    max_iou: OverlapScore,
    matched_gt: Option<usize>,
    cfg: &SamplerConfig,
) -> RoiLabel {
    let v = max_iou.value();
    let kind = if v >= cfg.th_fg && matched_gt.is_some() {
        RoiKind::Foreground
    } else if v >= cfg.th_bg_low && v < cfg.th_fg {
        RoiKind::Background
    } else {
        RoiKind::Ignored
    };
    RoiLabel {
        kind,
        matched_gt: if kind == RoiKind::Foreground {
            matched_gt
        } else {
            None
        },
        max_iou,
    }
}

pub fn label_roi(roi: &BBox, gts: &[BBox], cfg: &SamplerConfig) -> RoiLabel {
    let (score, idx) = max_iou(roi, gts);
    label_from_overlap(score, idx, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub image_id: String,
    pub region: BBox,
    pub label: RoiLabel,
}

/// A negative harvested by an earlier detector, forced into batches.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub image_id: String,
    pub region: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FgEntry {
    pub image_id: String,
    pub region: BBox,
    pub matched_gt: usize,
    /// Index into the candidate list.
    pub source: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BgEntry {
    pub image_id: String,
    pub region: BBox,
    pub is_hard: bool,
    /// Index into the hard pool when `is_hard`, else into the candidates.
    pub source: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MiniBatch {
    pub fg: Vec<FgEntry>,
    pub bg: Vec<BgEntry>,
}

impl MiniBatch {
    pub fn hard_count(&self) -> usize {
        self.bg.iter().filter(|b| b.is_hard).count()
    }
}

/// Draws one mini-batch.
///
/// Foreground slots are `min(available, ceil(batch / (1 + ratio)))`, drawn
/// uniformly without replacement. Background slots number
/// `round(ratio * fg)` (or fewer if not enough are available) and are
/// filled from `hard_pool` first, in a seeded random order, then from
/// ordinary background candidates. Ignored candidates are never drawn.
pub fn sample_minibatch(
    candidates: &[Candidate],
    hard_pool: &[PoolEntry],
    cfg: &SamplerConfig,
    rng_seed: u64,
) -> Result<MiniBatch, SamplerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    if !cfg.per_image_ratio {
        let all_c: Vec<usize> = (0..candidates.len()).collect();
        let all_p: Vec<usize> = (0..hard_pool.len()).collect();
        let mut batch = MiniBatch::default();
        fill(
            candidates,
            &all_c,
            hard_pool,
            &all_p,
            cfg.fg_quota(),
            cfg,
            &mut rng,
            &mut batch,
        );
        if batch.fg.is_empty() {
            return Err(SamplerError::EmptyForeground);
        }
        return Ok(batch);
    }

    // One group per image in order of first appearance.
    let mut images: Vec<&str> = Vec::new();
    for c in candidates {
        if !images.contains(&c.image_id.as_str()) {
            images.push(&c.image_id);
        }
    }
    let fg_images: Vec<&str> = images
        .into_iter()
        .filter(|id| {
            candidates
                .iter()
                .any(|c| c.image_id == *id && c.label.kind == RoiKind::Foreground)
        })
        .collect();
    if fg_images.is_empty() {
        return Err(SamplerError::EmptyForeground);
    }
    let per_image_batch = cfg.batch_size.div_ceil(fg_images.len());
    let quota = fg_quota_for(per_image_batch, cfg.bg_fg_ratio);
    let mut batch = MiniBatch::default();
    for id in fg_images {
        let c_idx: Vec<usize> = (0..candidates.len())
            .filter(|&i| candidates[i].image_id == id)
            .collect();
        let p_idx: Vec<usize> = (0..hard_pool.len())
            .filter(|&i| hard_pool[i].image_id == id)
            .collect();
        fill(
            candidates, &c_idx, hard_pool, &p_idx, quota, cfg, &mut rng, &mut batch,
        );
    }
    Ok(batch)
}

#[allow(clippy::too_many_arguments)]
fn fill(
    candidates: &[Candidate],
    cand_idx: &[usize],
    hard_pool: &[PoolEntry],
    pool_idx: &[usize],
    fg_quota: usize,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
    batch: &mut MiniBatch,
) {
    let of_kind = |kind| -> Vec<usize> {
        cand_idx
            .iter()
            .copied()
            .filter(|&i| candidates[i].label.kind == kind)
            .collect()
    };
    let fg = of_kind(RoiKind::Foreground);
    let bg = of_kind(RoiKind::Background);

    let n_fg = fg.len().min(fg_quota);
    if n_fg == 0 {
        return;
    }
    for k in index::sample(rng, fg.len(), n_fg) {
        let c = &candidates[fg[k]];
        batch.fg.push(FgEntry {
            image_id: c.image_id.clone(),
            region: c.region,
            matched_gt: c
                .label
                .matched_gt
                .expect("foreground label carries a match"),
            source: fg[k],
        });
    }

    let bg_quota = cfg.bg_quota(n_fg);
    let n_hard = pool_idx.len().min(bg_quota);
    for k in index::sample(rng, pool_idx.len(), n_hard) {
        let p = &hard_pool[pool_idx[k]];
        batch.bg.push(BgEntry {
            image_id: p.image_id.clone(),
            region: p.region,
            is_hard: true,
            source: pool_idx[k],
        });
    }
    let n_plain = bg.len().min(bg_quota - n_hard);
    for k in index::sample(rng, bg.len(), n_plain) {
        let c = &candidates[bg[k]];
        batch.bg.push(BgEntry {
            image_id: c.image_id.clone(),
            region: c.region,
            is_hard: false,
            source: bg[k],
        });
    }
}
