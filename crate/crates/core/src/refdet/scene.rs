//! Synthetic grayscale scenes with planted faces and face-like decoys.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RefDetError;
use crate::annotations::ParseError;
use crate::geometry::{ellipse_bounding_box, iou, BBox, Ellipse};

/// Intensity of the dark outer ring of a face.
pub const FACE_RING: f64 = 0.15;
/// Intensity of the bright inner core of a face.
pub const FACE_CORE: f64 = 0.85;
/// Default distractor core. Distractors share the face ring, so only a
/// dimmer core tells them apart.
pub const DECOY_CORE: f64 = 0.65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    pub faces: (usize, usize),
    pub distractors: (usize, usize),
    /// Range of the minor radius, in pixels.
    pub minor_radius: (f64, f64),
    /// Range of major/minor radius ratio.
    pub aspect: (f64, f64),
    /// Maximum deviation of the major axis from vertical, in radians.
    pub tilt: f64,
    /// Core radius as a fraction of the face radius.
    pub core_fraction: f64,
    /// Outer and inner intensity of distractors, split like faces.
    pub distractor_ring: f64,
    pub distractor_core: f64,
    pub background: f64,
    pub noise_sigma: f64,
    /// Shapes may overlap by less than this bounding-box IoU.
    pub max_shape_iou: f64,
    pub placement_attempts: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 160,
            faces: (1, 3),
            distractors: (2, 4),
            minor_radius: (10.0, 18.0),
            aspect: (1.15, 1.35),
            tilt: 0.2,
            core_fraction: 0.6,
            distractor_ring: FACE_RING,
            distractor_core: DECOY_CORE,
            background: 0.5,
            noise_sigma: 0.08,
            max_shape_iou: 0.1,
            placement_attempts: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub width: u32,
    pub height: u32,
    /// Row-major intensities in `[0, 1]`.
    pub pixels: Vec<f64>,
    pub faces: Vec<Ellipse>,
    pub distractors: Vec<Ellipse>,
}

impl SyntheticScene {
    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width as usize + x]
    }

    /// Raw intensity grid: a `width height` header, then one row per line
    /// with six decimals.
    pub fn grid_to_text(&self) -> String {
        let w = self.width as usize;
        let mut out = String::with_capacity(self.pixels.len() * 9 + 16);
        writeln!(out, "{} {}", self.width, self.height).unwrap();
        for row in self.pixels.chunks(w) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{v:.6}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Reads a grid written by [`SyntheticScene::grid_to_text`]. Faces and
    /// distractors are not part of the grid and come back empty.
    pub fn grid_from_text(content: &str) -> Result<Self, ParseError> {
        let bad = |line: usize, message: String| ParseError::Malformed { line, message };
        let mut lines = content.lines().map(|l| l.trim_end_matches('\r'));
        let header = lines.next().ok_or_else(|| ParseError::Truncated {
            line: 1,
            message: "expected `width height` header".into(),
        })?;
        let dims: Vec<u32> = header
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(1, format!("bad header {header:?}")))?;
        let [width, height] = dims[..] else {
            return Err(bad(1, format!("bad header {header:?}")));
        };
        if width == 0 || height == 0 {
            return Err(bad(1, "zero-sized grid".into()));
        }
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height as usize {
            let line_no = row + 2;
            let line = lines.next().ok_or_else(|| ParseError::Truncated {
                line: line_no,
                message: format!("expected row {} of {height}", row + 1),
            })?;
            let before = pixels.len();
            for tok in line.split_whitespace() {
                let v = tok
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(line_no, format!("non-numeric value {tok:?}")))?;
                pixels.push(v);
            }
            if pixels.len() - before != width as usize {
                return Err(bad(
                    line_no,
                    format!("expected {width} values, found {}", pixels.len() - before),
                ));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
            faces: Vec::new(),
            distractors: Vec::new(),
        })
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 1e6).round() / 1e6
}

/// Generates a scene. Faces and distractors are both two-tone ellipses
/// (ring, then core inside `core_fraction` of the radius) and differ only
/// in their tones. No two
/// shapes overlap by a bounding-box IoU of `max_shape_iou` or more.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<SyntheticScene, RefDetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_faces = rng.gen_range(cfg.faces.0..=cfg.faces.1);
    let n_distractors = rng.gen_range(cfg.distractors.0..=cfg.distractors.1);

    let mut placed: Vec<BBox> = Vec::new();
    let mut faces = Vec::with_capacity(n_faces);
    let mut distractors = Vec::with_capacity(n_distractors);
    for k in 0..n_faces + n_distractors {
        let shape = place_shape(&mut rng, cfg, &placed).ok_or(RefDetError::Placement {
            placed: k,
            requested: n_faces + n_distractors,
        })?;
        placed.push(ellipse_bounding_box(&shape));
        if k < n_faces {
            faces.push(shape);
        } else {
            distractors.push(shape);
        }
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut pixels = vec![cfg.background; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut v = cfg.background;
            for f in &faces {
                if let Some(rho) = normalized_radius(f, px, py) {
                    v = if rho <= cfg.core_fraction {
                        FACE_CORE
                    } else {
                        FACE_RING
                    };
                }
            }
            for d in &distractors {
                if let Some(rho) = normalized_radius(d, px, py) {
                    v = if rho <= cfg.core_fraction {
                        cfg.distractor_core
                    } else {
                        cfg.distractor_ring
                    };
                }
            }
            pixels[y * w + x] = v;
        }
    }
    if cfg.noise_sigma > 0.0 {
        for p in pixels.iter_mut() {
            *p += noise.sample(&mut rng);
        }
    }
    pixels.iter_mut().for_each(|p| *p = quantize(*p));

    Ok(SyntheticScene {
        width: cfg.width,
        height: cfg.height,
        pixels,
        faces,
        distractors,
    })
}

/// Elliptical radius of a point (1 on the boundary) if it lies inside.
fn normalized_radius(e: &Ellipse, x: f64, y: f64) -> Option<f64> {
    let (s, c) = e.angle().sin_cos();
    let (dx, dy) = (x - e.center_x(), y - e.center_y());
    let u = (dx * c + dy * s) / e.major_radius();
    let v = (-dx * s + dy * c) / e.minor_radius();
    let r2 = u * u + v * v;
    (r2 <= 1.0).then(|| r2.sqrt())
}

fn place_shape(rng: &mut ChaCha8Rng, cfg: &SceneConfig, placed: &[BBox]) -> Option<Ellipse> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    for _ in 0..cfg.placement_attempts {
        let rb = rng.gen_range(cfg.minor_radius.0..=cfg.minor_radius.1);
        let ra = rb * rng.gen_range(cfg.aspect.0..=cfg.aspect.1);
        let angle = std::f64::consts::FRAC_PI_2 + rng.gen_range(-cfg.tilt..=cfg.tilt);
        // Size the bounding box at the origin first, then pick a center that
        // keeps it inside the image.
        let probe = Ellipse::new(0.0, 0.0, ra, rb, angle).ok()?;
        let b = ellipse_bounding_box(&probe);
        let (hw, hh) = (0.5 * b.width(), 0.5 * b.height());
        if 2.0 * hw + 2.0 > w || 2.0 * hh + 2.0 > h {
            return None;
        }
        let cx = rng.gen_range(hw + 1.0..=w - hw - 1.0);
        let cy = rng.gen_range(hh + 1.0..=h - hh - 1.0);
        let e = Ellipse::new(cx, cy, ra, rb, angle).ok()?;
        let eb = ellipse_bounding_box(&e);
        if placed
            .iter()
            .all(|p| iou(p, &eb).value() < cfg.max_shape_iou)
        {
            return Some(e);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_scene_is_noise_around_background() {
        let cfg = SceneConfig {
            faces: (0, 0),
            distractors: (0, 0),
            ..SceneConfig::default()
        };
        let s = generate_scene(1, &cfg).unwrap();
        assert!(s.faces.is_empty() && s.distractors.is_empty());
        let mean = s.pixels.iter().sum::<f64>() / s.pixels.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn same_seed_same_pixels() {
        let cfg = SceneConfig::default();
        let a = generate_scene(42, &cfg).unwrap();
        let b = generate_scene(42, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.pixels, generate_scene(43, &cfg).unwrap().pixels);
    }

    #[test]
    fn planted_faces_are_inside_and_separated() {
        let cfg = SceneConfig {
            faces: (3, 3),
            ..SceneConfig::default()
        };
        for seed in 0..20 {
            let s = generate_scene(seed, &cfg).unwrap();
            assert_eq!(s.faces.len(), 3);
            let boxes: Vec<BBox> = s
                .faces
                .iter()
                .chain(&s.distractors)
                .map(ellipse_bounding_box)
                .collect();
            for b in &boxes[..3] {
                assert!(b.x_min() >= 0.0 && b.y_min() >= 0.0);
                assert!(b.x_max() <= cfg.width as f64 && b.y_max() <= cfg.height as f64);
            }
            for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    assert!(iou(&boxes[i], &boxes[j]).value() < 0.1);
                }
            }
        }
    }

    #[test]
    fn overcrowded_config_fails() {
        let cfg = SceneConfig {
            width: 64,
            height: 64,
            faces: (10, 10),
            placement_attempts: 50,
            ..SceneConfig::default()
        };
        assert!(matches!(
            generate_scene(0, &cfg),
            Err(RefDetError::Placement { .. })
        ));
    }

    #[test]
    fn grid_round_trip_is_exact() {
        let cfg = SceneConfig {
            width: 40,
            height: 30,
            faces: (1, 1),
            distractors: (0, 0),
            minor_radius: (5.0, 6.0),
            ..SceneConfig::default()
        };
        let s = generate_scene(9, &cfg).unwrap();
        let text = s.grid_to_text();
        let back = SyntheticScene::grid_from_text(&text).unwrap();
        assert_eq!(back.pixels, s.pixels);
        assert_eq!(back.grid_to_text(), text);
        assert!(SyntheticScene::grid_from_text("2 2\n0 0\n0\n").is_err());
    }
}
