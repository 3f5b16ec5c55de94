//! Sliding-window proposals, non-maximum suppression and end-to-end
//! detection.

use serde::{Deserialize, Serialize};

use super::features::FeatureMaps;
use super::scorer::LinearScorer;
use super::RefDetError;
use crate::annotations::Detection;
use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Window sizes as `(width, height)` in pixels.
    pub windows: Vec<(f64, f64)>,
    /// Step between windows as a fraction of the window size.
    pub stride_fraction: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            windows: vec![(20.0, 25.0), (26.0, 32.0), (32.0, 40.0), (40.0, 50.0)],
            stride_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.05,
            nms_iou: 0.3,
        }
    }
}

fn positions(extent: f64, window: f64, stride: f64) -> Vec<f64> {
    if window >= extent {
        return vec![0.0];
    }
    let count = ((extent - window) / stride).floor() as usize + 1;
    (0..count).map(|k| k as f64 * stride).collect()
}

/// Dense multi-scale sliding windows, clipped to the image. Scales are
/// emitted in configuration order, each as a row-major grid.
pub fn propose(width: u32, height: u32, cfg: &ProposalConfig) -> Vec<BBox> {
    let (w, h) = (width as f64, height as f64);
    let mut out = Vec::new();
    for &(ww, wh) in &cfg.windows {
        let xs = positions(w, ww, ww * cfg.stride_fraction);
        let ys = positions(h, wh, wh * cfg.stride_fraction);
        for &y in &ys {
            for &x in &xs {
                let b =
                    BBox::new(x, y, (x + ww).min(w), (y + wh).min(h)).expect("window inside image");
                out.push(b);
            }
        }
    }
    out
}

/// Greedy suppression: walk detections by descending score and drop any
/// whose IoU with an already kept one reaches `nms_iou`. Equal scores keep
/// input order.
pub fn nms(mut dets: Vec<Detection>, nms_iou: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| iou(&k.region, &d.region).value() < nms_iou)
        {
            kept.push(d);
        }
    }
    kept
}

/// Scores every proposal, thresholds and suppresses. Output is sorted by
/// descending score.
pub fn detect_with(
    maps: &FeatureMaps,
    proposals: &[BBox],
    scorer: &LinearScorer,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>, RefDetError> {
    let mut scored = Vec::new();
    for p in proposals {
        let f = maps.extract(p)?;
        let score = scorer.score(&f);
        if score >= cfg.score_threshold {
            scored.push(Detection::new(*p, score));
        }
    }
    Ok(nms(scored, cfg.nms_iou))
}
