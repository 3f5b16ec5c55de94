//! Region geometry: axis-aligned boxes, FDDB ellipses and the overlap
//! scores built on top of them.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest grid resolution accepted by [`box_ellipse_overlap`].
pub const MIN_OVERLAP_RESOLUTION: usize = 64;
/// Resolution used when callers do not choose one.
pub const DEFAULT_OVERLAP_RESOLUTION: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box coordinates must be finite: ({0}, {1}, {2}, {3})")]
    NonFiniteBox(f64, f64, f64, f64),
    #[error("box has negative extent: ({0}, {1}, {2}, {3})")]
    NegativeExtent(f64, f64, f64, f64),
    #[error("invalid ellipse: {0}")]
    InvalidEllipse(String),
    #[error("overlap resolution {0} is below the minimum of {MIN_OVERLAP_RESOLUTION}")]
    ResolutionTooLow(usize),
}

/// Axis-aligned rectangle with continuous corner coordinates.
///
/// Area is `(x_max - x_min) * (y_max - y_min)`; there is no "+1" pixel
/// convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFiniteBox(x_min, y_min, x_max, y_max));
        }
        if x_max < x_min || y_max < y_min {
            return Err(GeometryError::NegativeExtent(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from its top-left corner and size.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + width, y + height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Overlapping region, or `None` when the boxes do not touch.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x_min = self.x_min.max(other.x_min);
        let y_min = self.y_min.max(other.y_min);
        let x_max = self.x_max.min(other.x_max);
        let y_max = self.y_max.min(other.y_max);
        if x_max < x_min || y_max < y_min {
            None
        } else {
            Some(BBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        self.intersection(&BBox {
            x_min: 0.0,
            y_min: 0.0,
            x_max: width,
            y_max: height,
        })
    }

    pub fn contains_point(&self, x: f64, y: f64, slack: f64) -> bool {
        x >= self.x_min - slack
            && x <= self.x_max + slack
            && y >= self.y_min - slack
            && y <= self.y_max + slack
    }

    /// Uniformly scales all coordinates.
    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x_min: self.x_min * factor,
            y_min: self.y_min * factor,
            x_max: self.x_max * factor,
            y_max: self.y_max * factor,
        }
    }

    /// True when every corner coordinate differs by at most `tol`.
    pub fn approx_eq(&self, other: &BBox, tol: f64) -> bool {
        (self.x_min - other.x_min).abs() <= tol
            && (self.y_min - other.y_min).abs() <= tol
            && (self.x_max - other.x_max).abs() <= tol
            && (self.y_max - other.y_max).abs() <= tol
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// FDDB-style elliptical annotation. `angle` is the rotation of the major
/// axis from the x-axis in radians, normalized to `[-pi/2, pi/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    center_x: f64,
    center_y: f64,
    major_radius: f64,
    minor_radius: f64,
    angle: f64,
}

impl Ellipse {
    pub fn new(
        center_x: f64,
        center_y: f64,
        major_radius: f64,
        minor_radius: f64,
        angle: f64,
    ) -> Result<Self, GeometryError> {
        let fields = [center_x, center_y, major_radius, minor_radius, angle];
        if !fields.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidEllipse(format!(
                "non-finite field in {fields:?}"
            )));
        }
        if !(minor_radius > 0.0 && major_radius >= minor_radius) {
            return Err(GeometryError::InvalidEllipse(format!(
                "radii must satisfy major >= minor > 0, got major={major_radius} minor={minor_radius}"
            )));
        }
        Ok(Self {
            center_x,
            center_y,
            major_radius,
            minor_radius,
            angle: normalize_angle(angle),
        })
    }

    /// Like [`Ellipse::new`] but swaps the radii (rotating by pi/2) when
    /// they are given in the wrong order. FDDB files occasionally list the
    /// horizontal radius first.
    pub fn from_radii(
        center_x: f64,
        center_y: f64,
        radius_a: f64,
        radius_b: f64,
        angle: f64,
    ) -> Result<Self, GeometryError> {
        if radius_a >= radius_b {
            Self::new(center_x, center_y, radius_a, radius_b, angle)
        } else {
            Self::new(center_x, center_y, radius_b, radius_a, angle + FRAC_PI_2)
        }
    }

    pub fn center_x(&self) -> f64 {
        self.center_x
    }

    pub fn center_y(&self) -> f64 {
        self.center_y
    }

    pub fn major_radius(&self) -> f64 {
        self.major_radius
    }

    pub fn minor_radius(&self) -> f64 {
        self.minor_radius
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn area(&self) -> f64 {
        PI * self.major_radius * self.minor_radius
    }

    /// Point on the boundary at parameter `t`.
    pub fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let (u, v) = (self.major_radius * t.cos(), self.minor_radius * t.sin());
        (self.center_x + u * c - v * s, self.center_y + u * s + v * c)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.center_x, y - self.center_y);
        let u = (dx * c + dy * s) / self.major_radius;
        let v = (-dx * s + dy * c) / self.minor_radius;
        u * u + v * v <= 1.0
    }

    /// Scales center and radii; the angle is unchanged.
    pub fn scaled(&self, factor: f64) -> Ellipse {
        Ellipse {
            center_x: self.center_x * factor,
            center_y: self.center_y * factor,
            major_radius: self.major_radius * factor,
            minor_radius: self.minor_radius * factor,
            angle: self.angle,
        }
    }

    /// Horizontal extent of the ellipse on the line `y`, if it meets it.
    fn row_span(&self, y: f64) -> Option<(f64, f64)> {
        // Implicit form A dx^2 + B dx dy + C dy^2 <= 1 solved for dx.
        let (s, c) = self.angle.sin_cos();
        let (ia, ib) = (
            1.0 / (self.major_radius * self.major_radius),
            1.0 / (self.minor_radius * self.minor_radius),
        );
        let a = c * c * ia + s * s * ib;
        let b = 2.0 * s * c * (ia - ib);
        let cc = s * s * ia + c * c * ib;
        let dy = y - self.center_y;
        let qb = b * dy;
        let qc = cc * dy * dy - 1.0;
        let disc = qb * qb - 4.0 * a * qc;
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        let lo = (-qb - root) / (2.0 * a);
        let hi = (-qb + root) / (2.0 * a);
        Some((self.center_x + lo, self.center_x + hi))
    }
}

fn normalize_angle(angle: f64) -> f64 {
    let mut a = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if a >= FRAC_PI_2 {
        a -= PI;
    }
    a
}

/// Overlap ratio in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct OverlapScore(f64);

impl OverlapScore {
    pub const ZERO: OverlapScore = OverlapScore(0.0);

    /// Clamps into `[0, 1]`; NaN maps to zero.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            OverlapScore(0.0)
        } else {
            OverlapScore(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for OverlapScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Intersection over union. Zero-area unions give zero.
pub fn iou(a: &BBox, b: &BBox) -> OverlapScore {
    let inter = a.intersection(b).map_or(0.0, |i| i.area());
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        OverlapScore::ZERO
    } else {
        OverlapScore::new(inter / union)
    }
}

/// Best IoU of `query` against `references` and its index. Ties go to the
/// lowest index; an empty list yields `(0, None)`.
pub fn max_iou(query: &BBox, references: &[BBox]) -> (OverlapScore, Option<usize>) {
    let mut best = (OverlapScore::ZERO, None);
    for (idx, r) in references.iter().enumerate() {
        let score = iou(query, r);
        if best.1.is_none() || score > best.0 {
            best = (score, Some(idx));
        }
    }
    best
}

/// Tightest axis-aligned box around a rotated ellipse.
pub fn ellipse_bounding_box(e: &Ellipse) -> BBox {
    let (s, c) = e.angle.sin_cos();
    let (ra, rb) = (e.major_radius, e.minor_radius);
    let half_w = (ra * ra * c * c + rb * rb * s * s).sqrt();
    let half_h = (ra * ra * s * s + rb * rb * c * c).sqrt();
    BBox {
        x_min: e.center_x - half_w,
        y_min: e.center_y - half_h,
        x_max: e.center_x + half_w,
        y_max: e.center_y + half_h,
    }
}

/// IoU between a box and an ellipse region, estimated on a
/// `resolution x resolution` midpoint grid spanning the hull of the box and
/// the ellipse's bounding box.
///
/// Each grid row is resolved in closed form: the midpoints covered by the
/// box and by the ellipse on that row are both contiguous runs, so the
/// counts come from interval arithmetic instead of per-point tests.
pub fn box_ellipse_overlap(
    b: &BBox,
    e: &Ellipse,
    resolution: usize,
) -> Result<OverlapScore, GeometryError> {
    if resolution < MIN_OVERLAP_RESOLUTION {
        return Err(GeometryError::ResolutionTooLow(resolution));
    }
    let eb = ellipse_bounding_box(e);
    if b.intersection(&eb).is_none_or(|i| i.area() <= 0.0) {
        return Ok(OverlapScore::ZERO);
    }
    let frame = b.hull(&eb);
    let n = resolution as f64;
    let step_x = frame.width() / n;
    let step_y = frame.height() / n;

    // Midpoint i sits at frame.x_min + (i + 0.5) * step_x; returns the
    // half-open index range of midpoints inside [lo, hi].
    let index_range = |lo: f64, hi: f64| -> (i64, i64) {
        let first = ((lo - frame.x_min) / step_x - 0.5).ceil().max(0.0) as i64;
        let last = ((hi - frame.x_min) / step_x - 0.5).floor().min(n - 1.0) as i64;
        if last < first {
            (0, 0)
        } else {
            (first, last + 1)
        }
    };
    let box_cols = index_range(b.x_min, b.x_max);

    let (mut in_box, mut in_ellipse, mut in_both) = (0u64, 0u64, 0u64);
    for row in 0..resolution {
        let y = frame.y_min + (row as f64 + 0.5) * step_y;
        let box_row = y >= b.y_min && y <= b.y_max;
        if box_row {
            in_box += (box_cols.1 - box_cols.0) as u64;
        }
        if let Some((lo, hi)) = e.row_span(y) {
            let ell = index_range(lo, hi);
            in_ellipse += (ell.1 - ell.0) as u64;
            if box_row {
                let both = (ell.0.max(box_cols.0), ell.1.min(box_cols.1));
                if both.1 > both.0 {
                    in_both += (both.1 - both.0) as u64;
                }
            }
        }
    }
    let union = in_box + in_ellipse - in_both;
    if union == 0 {
        return Ok(OverlapScore::ZERO);
    }
    Ok(OverlapScore::new(in_both as f64 / union as f64))
}
