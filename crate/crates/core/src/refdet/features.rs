//! Pooled-intensity and histogram features over rectangular regions.

use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use super::RefDetError;
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid_bins: usize,
    pub histogram_bins: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            grid_bins: 4,
            histogram_bins: 8,
        }
    }
}

impl FeatureConfig {
    pub fn len(&self) -> usize {
        self.grid_bins * self.grid_bins + self.histogram_bins
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Summed-area tables for one scene: intensity plus one indicator table
/// per histogram bin. Every region query is O(bins).
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    width: usize,
    height: usize,
    cfg: FeatureConfig,
    intensity: Vec<f64>,
    bins: Vec<Vec<u32>>,
}

fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

impl FeatureMaps {
    pub fn new(scene: &SyntheticScene, cfg: FeatureConfig) -> Self {
        let (w, h) = (scene.width as usize, scene.height as usize);
        let stride = w + 1;
        let mut intensity = vec![0.0; stride * (h + 1)];
        let mut bins = vec![vec![0u32; stride * (h + 1)]; cfg.histogram_bins];
        for y in 0..h {
            let mut row_sum = 0.0;
            let mut row_bins = vec![0u32; cfg.histogram_bins];
            for x in 0..w {
                let v = scene.pixel(x, y);
                row_sum += v;
                row_bins[bin_of(v, cfg.histogram_bins)] += 1;
                let at = (y + 1) * stride + x + 1;
                intensity[at] = intensity[y * stride + x + 1] + row_sum;
                for (table, count) in bins.iter_mut().zip(&row_bins) {
                    table[at] = table[y * stride + x + 1] + count;
                }
            }
        }
        Self {
            width: w,
            height: h,
            cfg,
            intensity,
            bins,
        }
    }

    pub fn config(&self) -> FeatureConfig {
        self.cfg
    }

    /// Pixel index range `[lo, hi)` whose centers fall in `[a, b)`, clamped
    /// to the image.
    fn pixel_span(a: f64, b: f64, limit: usize) -> (usize, usize) {
        let lo = (a - 0.5).ceil().clamp(0.0, limit as f64) as usize;
        let hi = (b - 0.5).ceil().clamp(0.0, limit as f64) as usize;
        (lo, hi.max(lo))
    }

    fn rect_sum<T>(&self, table: &[T], x0: usize, y0: usize, x1: usize, y1: usize) -> f64
    where
        T: Copy + Into<f64>,
    {
        let s = self.width + 1;
        let at = |x: usize, y: usize| -> f64 { table[y * s + x].into() };
        at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0)
    }

    /// Features of `region`: per-cell mean intensity over a
    /// `grid_bins x grid_bins` partition, then the normalized intensity
    /// histogram of the whole region.
    pub fn extract(&self, region: &BBox) -> Result<FeatureVector, RefDetError> {
        if region.area() <= 0.0 {
            return Err(RefDetError::DegenerateRegion(*region));
        }
        let clipped = region
            .clip(self.width as f64, self.height as f64)
            .filter(|c| c.area() > 0.0)
            .ok_or(RefDetError::RegionOutsideImage(*region))?;
        let (rx0, rx1) = Self::pixel_span(clipped.x_min(), clipped.x_max(), self.width);
        let (ry0, ry1) = Self::pixel_span(clipped.y_min(), clipped.y_max(), self.height);
        if rx1 == rx0 || ry1 == ry0 {
            return Err(RefDetError::DegenerateRegion(*region));
        }

        let g = self.cfg.grid_bins;
        let mut out = Vec::with_capacity(self.cfg.len());
        let cw = clipped.width() / g as f64;
        let ch = clipped.height() / g as f64;
        for j in 0..g {
            let y_a = clipped.y_min() + j as f64 * ch;
            let (mut y0, mut y1) = Self::pixel_span(y_a, y_a + ch, self.height);
            if y1 == y0 {
                // Cell thinner than a pixel: use the pixel under its center.
                y0 = ((y_a + 0.5 * ch).floor() as usize).min(self.height - 1);
                y1 = y0 + 1;
            }
            for i in 0..g {
                let x_a = clipped.x_min() + i as f64 * cw;
                let (mut x0, mut x1) = Self::pixel_span(x_a, x_a + cw, self.width);
                if x1 == x0 {
                    x0 = ((x_a + 0.5 * cw).floor() as usize).min(self.width - 1);
                    x1 = x0 + 1;
                }
                let n = ((x1 - x0) * (y1 - y0)) as f64;
                out.push(self.rect_sum(&self.intensity, x0, y0, x1, y1) / n);
            }
        }
        let total = ((rx1 - rx0) * (ry1 - ry0)) as f64;
        for table in &self.bins {
            out.push(self.rect_sum(table, rx0, ry0, rx1, ry1) / total);
        }
        Ok(FeatureVector(out))
    }
}

/// One-off feature extraction. Prefer [`FeatureMaps`] when querying many
/// regions of the same scene.
pub fn extract_features(
    scene: &SyntheticScene,
    region: &BBox,
    cfg: FeatureConfig,
) -> Result<FeatureVector, RefDetError> {
    FeatureMaps::new(scene, cfg).extract(region)
}
