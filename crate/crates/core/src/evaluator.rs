//! FDDB-protocol scoring.
//!
//! Detections are matched one-to-one to annotated ellipses per image. A
//! match needs a box/ellipse overlap of at least [`MATCH_THRESHOLD`]. The
//! discrete curve counts matched faces; the continuous curve sums the
//! overlaps of matched detections only (unmatched faces contribute zero).
//! Both are normalized by the total face count and plotted against the
//! absolute number of false positives.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{Detection, DetectionRecord, ImageRecord};
use crate::geometry::{box_ellipse_overlap, Ellipse, GeometryError, OverlapScore};

/// Minimum overlap for a detection to count as a true positive.
pub const MATCH_THRESHOLD: f64 = 0.5;
/// False-positive range covered by the area-under-curve summary.
pub const AUC_FP_LIMIT: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("detections given for unknown image {0:?}")]
    UnknownImage(String),
    #[error("detections for image {0:?} appear more than once")]
    DuplicateImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPolicy {
    /// Highest-scoring detection first, each taking its best free face.
    #[default]
    GreedyByScore,
    /// Maximum total overlap one-to-one assignment.
    OptimalAssignment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    pub image_id: String,
    pub score: f64,
    pub matched: bool,
    pub overlap: OverlapScore,
    pub matched_annotation: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub entries: Vec<MatchEntry>,
    pub total_faces: usize,
    pub total_images: usize,
}

impl MatchResult {
    pub fn matched_count(&self) -> usize {
        self.entries.iter().filter(|e| e.matched).count()
    }

    pub fn false_positive_count(&self) -> usize {
        self.entries.len() - self.matched_count()
    }

    /// Pools several results into one.
    pub fn merge(parts: &[MatchResult]) -> MatchResult {
        MatchResult {
            entries: parts
                .iter()
                .flat_map(|p| p.entries.iter().cloned())
                .collect(),
            total_faces: parts.iter().map(|p| p.total_faces).sum(),
            total_images: parts.iter().map(|p| p.total_images).sum(),
        }
    }
}

/// Matches one image's detections against its faces. Entries come back in
/// descending score order.
pub fn match_image(
    image_id: &str,
    dets: &[Detection],
    faces: &[Ellipse],
    policy: MatchPolicy,
    overlap_resolution: usize,
) -> Result<Vec<MatchEntry>, EvalError> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut overlaps = vec![vec![0.0; faces.len()]; dets.len()];
    for (row, &d) in overlaps.iter_mut().zip(&order) {
        for (cell, face) in row.iter_mut().zip(faces) {
            *cell = box_ellipse_overlap(&dets[d].region, face, overlap_resolution)?.value();
        }
    }

    let assignment = match policy {
        MatchPolicy::GreedyByScore => greedy_assignment(&overlaps),
        MatchPolicy::OptimalAssignment => optimal_assignment(&overlaps),
    };

    Ok(order
        .iter()
        .zip(assignment)
        .enumerate()
        .map(|(row, (&d, face))| MatchEntry {
            image_id: image_id.to_string(),
            score: dets[d].score,
            matched: face.is_some(),
            overlap: face.map_or(OverlapScore::ZERO, |f| OverlapScore::new(overlaps[row][f])),
            matched_annotation: face,
        })
        .collect())
}

/// Rows are detections in descending score order.
fn greedy_assignment(overlaps: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_faces = overlaps.first().map_or(0, Vec::len);
    let mut taken = vec![false; n_faces];
    overlaps
        .iter()
        .map(|row| {
            let mut best: Option<(usize, f64)> = None;
            for (f, &v) in row.iter().enumerate() {
                if !taken[f] && best.is_none_or(|(_, b)| v > b) {
                    best = Some((f, v));
                }
            }
            match best {
                Some((f, v)) if v >= MATCH_THRESHOLD => {
                    taken[f] = true;
                    Some(f)
                }
                _ => None,
            }
        })
        .collect()
}

/// Maximum-weight bipartite matching restricted to edges with overlap at or
/// above the match threshold.
fn optimal_assignment(overlaps: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n_dets = overlaps.len();
    let n_faces = overlaps.first().map_or(0, Vec::len);
    let weight = |d: usize, f: usize| {
        let v = overlaps[d][f];
        if v >= MATCH_THRESHOLD {
            v
        } else {
            0.0
        }
    };
    let dets: Vec<usize> = (0..n_dets)
        .filter(|&d| (0..n_faces).any(|f| weight(d, f) > 0.0))
        .collect();
    let faces: Vec<usize> = (0..n_faces)
        .filter(|&f| (0..n_dets).any(|d| weight(d, f) > 0.0))
        .collect();
    let mut out = vec![None; n_dets];
    if dets.is_empty() {
        return out;
    }
    let transpose = dets.len() > faces.len();
    let (rows, cols) = if transpose {
        (&faces, &dets)
    } else {
        (&dets, &faces)
    };
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| {
            cols.iter()
                .map(|&c| {
                    let w = if transpose {
                        weight(c, r)
                    } else {
                        weight(r, c)
                    };
                    -w
                })
                .collect()
        })
        .collect();
    for (r, c) in hungarian_min(&cost).into_iter().enumerate() {
        let (d, f) = if transpose {
            (cols[c], rows[r])
        } else {
            (rows[r], cols[c])
        };
        if weight(d, f) > 0.0 {
            out[d] = Some(f);
        }
    }
    out
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows <= cols`), using the shortest augmenting path formulation of the
/// Hungarian method with row/column potentials. Returns the column of each
/// row.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based internally; column 0 is a virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=m {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=m {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for col in 1..=m {
        if owner[col] != 0 {
            assignment[owner[col] - 1] = col - 1;
        }
    }
    assignment
}

/// Matches every image of an evaluation set. Images are processed in
/// parallel and merged in image-id order, so the result does not depend on
/// scheduling. Images without a detection record contribute faces only.
pub fn match_dataset(
    records: &[ImageRecord],
    detections: &[DetectionRecord],
    policy: MatchPolicy,
    overlap_resolution: usize,
) -> Result<MatchResult, EvalError> {
    let known: HashSet<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
    let mut by_image: HashMap<&str, &[Detection]> = HashMap::new();
    for d in detections {
        if !known.contains(d.image_id.as_str()) {
            return Err(EvalError::UnknownImage(d.image_id.clone()));
        }
        if by_image.insert(&d.image_id, &d.detections).is_some() {
            return Err(EvalError::DuplicateImage(d.image_id.clone()));
        }
    }
    let mut sorted: Vec<&ImageRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let per_image: Vec<Vec<MatchEntry>> = sorted
        .par_iter()
        .map(|r| {
            let dets = by_image.get(r.image_id.as_str()).copied().unwrap_or(&[]);
            match_image(&r.image_id, dets, &r.faces, policy, overlap_resolution)
        })
        .collect::<Result<_, _>>()?;
    Ok(MatchResult {
        entries: per_image.into_iter().flatten().collect(),
        total_faces: records.iter().map(|r| r.faces.len()).sum(),
        total_images: records.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocFlavor {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positives: usize,
    pub tp_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub flavor: RocFlavor,
}

impl RocCurve {
    /// Best true-positive measure reachable with at most `budget` false
    /// positives; zero if no point qualifies.
    pub fn tp_at_fp(&self, budget: usize) -> f64 {
        self.points
            .iter()
            .filter(|p| p.false_positives <= budget)
            .map(|p| p.tp_measure)
            .fold(0.0, f64::max)
    }

    /// Fewest false positives needed to reach `target`, if reachable.
    pub fn fp_at_tp(&self, target: f64) -> Option<usize> {
        self.points
            .iter()
            .filter(|p| p.tp_measure >= target)
            .map(|p| p.false_positives)
            .min()
    }

    pub fn max_tp(&self) -> f64 {
        self.points.iter().map(|p| p.tp_measure).fold(0.0, f64::max)
    }

    /// Area under the step curve over `[0, fp_limit]` false positives,
    /// normalized by `fp_limit`. Lies in `[0, 1]`.
    pub fn normalized_auc(&self, fp_limit: usize) -> f64 {
        if fp_limit == 0 {
            return 0.0;
        }
        let mut area = 0.0;
        let mut level = 0.0;
        let mut x = 0usize;
        for p in &self.points {
            let fp = p.false_positives.min(fp_limit);
            area += level * (fp - x) as f64;
            x = fp;
            if p.false_positives > fp_limit {
                break;
            }
            level = p.tp_measure;
        }
        area += level * (fp_limit - x) as f64;
        area / fp_limit as f64
    }

    /// CSV with a `false_positives,tp_measure` header and six decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("false_positives,tp_measure\n");
        for p in &self.points {
            writeln!(out, "{},{:.6}", p.false_positives, p.tp_measure).unwrap();
        }
        out
    }
}

/// Sweeps the score threshold over every distinct detection score, from
/// high to low, emitting one point per threshold.
pub fn build_roc(matches: &MatchResult, flavor: RocFlavor) -> RocCurve {
    if matches.entries.is_empty() {
        return RocCurve {
            points: vec![RocPoint {
                false_positives: 0,
                tp_measure: 0.0,
            }],
            flavor,
        };
    }
    let mut order: Vec<&MatchEntry> = matches.entries.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let norm = if matches.total_faces == 0 {
        0.0
    } else {
        1.0 / matches.total_faces as f64
    };
    let mut points = Vec::new();
    let (mut fp, mut tp) = (0usize, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let score = order[i].score;
        while i < order.len() && order[i].score == score {
            let e = order[i];
            if e.matched {
                tp += match flavor {
                    RocFlavor::Discrete => 1.0,
                    RocFlavor::Continuous => e.overlap.value(),
                };
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            false_positives: fp,
            tp_measure: (tp * norm).min(1.0),
        });
    }
    RocCurve { points, flavor }
}

/// Pools every fold's matches and builds the discrete and continuous
/// curves from the pooled set.
pub fn aggregate_folds(per_fold: &[MatchResult]) -> (RocCurve, RocCurve) {
    let pooled = MatchResult::merge(per_fold);
    (
        build_roc(&pooled, RocFlavor::Discrete),
        build_roc(&pooled, RocFlavor::Continuous),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub total_faces: usize,
    pub total_images: usize,
    pub total_detections: usize,
    pub matched_detections: usize,
    pub policy: MatchPolicy,
    pub fp_limit: usize,
    pub discrete_auc: f64,
    pub continuous_auc: f64,
    pub discrete_max_tp: f64,
    pub continuous_convention: String,
}

impl RocSummary {
    pub fn new(
        matches: &MatchResult,
        discrete: &RocCurve,
        continuous: &RocCurve,
        policy: MatchPolicy,
    ) -> Self {
        Self {
            total_faces: matches.total_faces,
            total_images: matches.total_images,
            total_detections: matches.entries.len(),
            matched_detections: matches.matched_count(),
            policy,
            fp_limit: AUC_FP_LIMIT,
            discrete_auc: discrete.normalized_auc(AUC_FP_LIMIT),
            continuous_auc: continuous.normalized_auc(AUC_FP_LIMIT),
            discrete_max_tp: discrete.max_tp(),
            continuous_convention:
                "sum of box/ellipse IoU over matched detections divided by total faces".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ellipse_bounding_box, BBox};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn entry(score: f64, matched: bool, overlap: f64) -> MatchEntry {
        MatchEntry {
            image_id: "img".into(),
            score,
            matched,
            overlap: OverlapScore::new(if matched { overlap } else { 0.0 }),
            matched_annotation: matched.then_some(0),
        }
    }

    fn face(cx: f64, cy: f64) -> Ellipse {
        Ellipse::new(cx, cy, 12.0, 9.0, 1.5).unwrap()
    }

    #[test]
    fn no_detections_no_entries() {
        let faces = [face(20.0, 20.0), face(60.0, 20.0), face(100.0, 20.0)];
        let e = match_image("x", &[], &faces, MatchPolicy::GreedyByScore, 128).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn exact_bounding_box_matches_at_quarter_pi() {
        let f = Ellipse::new(50.0, 50.0, 20.0, 14.0, 0.0).unwrap();
        let d = Detection::new(ellipse_bounding_box(&f), 0.9);
        for policy in [MatchPolicy::GreedyByScore, MatchPolicy::OptimalAssignment] {
            let e = match_image("x", &[d], &[f], policy, 512).unwrap();
            assert!(e[0].matched);
            assert!((e[0].overlap.value() - PI / 4.0).abs() < 2.0 / 512.0);
        }
    }

    #[test]
    fn one_face_two_detections() {
        let f = Ellipse::new(50.0, 50.0, 20.0, 14.0, 0.0).unwrap();
        let b = ellipse_bounding_box(&f);
        let dets = [Detection::new(b, 0.8), Detection::new(b, 0.9)];
        let e = match_image("x", &dets, &[f], MatchPolicy::GreedyByScore, 256).unwrap();
        assert_eq!(e[0].score, 0.9);
        assert!(e[0].matched && !e[1].matched);
        assert_eq!(e[1].overlap, OverlapScore::ZERO);
    }

    #[test]
    fn greedy_and_optimal_can_disagree() {
        let overlaps = vec![vec![0.9, 0.0], vec![0.8, 0.0], vec![0.0, 0.4]];
        assert_eq!(optimal_assignment(&overlaps), vec![Some(0), None, None]);
        // Greedy hands face 0 to the top detection, stranding the second one.
        let overlaps = vec![vec![0.7, 0.69], vec![0.95, 0.0]];
        assert_eq!(greedy_assignment(&overlaps), vec![Some(0), None]);
        assert_eq!(optimal_assignment(&overlaps), vec![Some(1), Some(0)]);
    }

    fn exhaustive_best(overlaps: &[Vec<f64>]) -> f64 {
        fn go(row: usize, used: &mut Vec<bool>, ov: &[Vec<f64>]) -> f64 {
            if row == ov.len() {
                return 0.0;
            }
            let mut best = go(row + 1, used, ov);
            for f in 0..used.len() {
                if !used[f] && ov[row][f] >= MATCH_THRESHOLD {
                    used[f] = true;
                    best = best.max(ov[row][f] + go(row + 1, used, ov));
                    used[f] = false;
                }
            }
            best
        }
        let m = overlaps.first().map_or(0, Vec::len);
        go(0, &mut vec![false; m], overlaps)
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive_search(
            n in 1usize..6, m in 1usize..6,
            vals in proptest::collection::vec(0.0..1.0f64, 36),
        ) {
            let ov: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| vals[i * 6 + j]).collect()).collect();
            let a = optimal_assignment(&ov);
            let total: f64 = a.iter().enumerate().filter_map(|(d, f)| f.map(|f| ov[d][f])).sum();
            prop_assert!((total - exhaustive_best(&ov)).abs() < 1e-9);
            let mut used: Vec<usize> = a.iter().flatten().copied().collect();
            used.sort();
            let len = used.len();
            used.dedup();
            prop_assert_eq!(used.len(), len);
        }
    }

    #[test]
    fn roc_hand_example() {
        let m = MatchResult {
            entries: vec![
                entry(0.9, true, 0.8),
                entry(0.7, false, 0.0),
                entry(0.5, true, 0.6),
            ],
            total_faces: 4,
            total_images: 1,
        };
        let d = build_roc(&m, RocFlavor::Discrete);
        let pts: Vec<(usize, f64)> = d
            .points
            .iter()
            .map(|p| (p.false_positives, p.tp_measure))
            .collect();
        assert_eq!(pts, vec![(0, 0.25), (1, 0.25), (1, 0.5)]);
        let c = build_roc(&m, RocFlavor::Continuous);
        assert!((c.points[2].tp_measure - 1.4 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn roc_edge_cases() {
        let empty = build_roc(&MatchResult::default(), RocFlavor::Discrete);
        assert_eq!(
            empty.points,
            vec![RocPoint {
                false_positives: 0,
                tp_measure: 0.0
            }]
        );

        let perfect = MatchResult {
            entries: (0..5)
                .map(|i| entry(1.0 - i as f64 * 0.1, true, 0.9))
                .collect(),
            total_faces: 5,
            total_images: 2,
        };
        let d = build_roc(&perfect, RocFlavor::Discrete);
        assert!(d.points.iter().all(|p| p.false_positives == 0));
        assert_eq!(d.points.last().unwrap().tp_measure, 1.0);
    }

    #[test]
    fn tied_scores_share_a_point() {
        let m = MatchResult {
            entries: vec![
                entry(0.5, true, 0.7),
                entry(0.5, false, 0.0),
                entry(0.4, false, 0.0),
            ],
            total_faces: 1,
            total_images: 1,
        };
        let d = build_roc(&m, RocFlavor::Discrete);
        assert_eq!(d.points.len(), 2);
        assert_eq!(
            (d.points[0].false_positives, d.points[0].tp_measure),
            (1, 1.0)
        );
    }

    #[test]
    fn aggregation_pools() {
        let a = MatchResult {
            entries: vec![entry(0.9, true, 0.8), entry(0.6, false, 0.0)],
            total_faces: 2,
            total_images: 1,
        };
        let (d1, c1) = aggregate_folds(std::slice::from_ref(&a));
        assert_eq!(d1, build_roc(&a, RocFlavor::Discrete));
        assert_eq!(c1, build_roc(&a, RocFlavor::Continuous));

        let (d2, c2) = aggregate_folds(&[a.clone(), a.clone()]);
        assert_eq!(d2.points.len(), d1.points.len());
        for (p, q) in d2.points.iter().zip(&d1.points) {
            assert_eq!(p.false_positives, 2 * q.false_positives);
            assert_eq!(p.tp_measure, q.tp_measure);
        }
        for (p, q) in c2.points.iter().zip(&c1.points) {
            assert!((p.tp_measure - q.tp_measure).abs() < 1e-12);
        }

        let mut b = a.clone();
        b.entries
            .iter_mut()
            .for_each(|e| e.image_id = "other".into());
        let merged = MatchResult::merge(&[a, b]);
        assert_eq!(
            (
                merged.total_faces,
                merged.total_images,
                merged.entries.len()
            ),
            (4, 2, 4)
        );
    }

    #[test]
    fn auc_and_lookups() {
        let curve = RocCurve {
            points: vec![
                RocPoint {
                    false_positives: 0,
                    tp_measure: 0.5,
                },
                RocPoint {
                    false_positives: 1000,
                    tp_measure: 1.0,
                },
            ],
            flavor: RocFlavor::Discrete,
        };
        assert!((curve.normalized_auc(2000) - 0.75).abs() < 1e-12);
        assert_eq!(curve.tp_at_fp(999), 0.5);
        assert_eq!(curve.fp_at_tp(0.9), Some(1000));
        assert_eq!(curve.fp_at_tp(1.1), None);
        assert_eq!(
            curve.to_csv(),
            "false_positives,tp_measure\n0,0.500000\n1000,1.000000\n"
        );
    }

    #[test]
    fn dataset_matching_checks_ids() {
        let rec = ImageRecord::new("a", 100, 100, vec![face(50.0, 50.0)]).unwrap();
        let stray = DetectionRecord {
            image_id: "zzz".into(),
            detections: vec![],
        };
        assert!(matches!(
            match_dataset(
                std::slice::from_ref(&rec),
                &[stray],
                MatchPolicy::GreedyByScore,
                64
            ),
            Err(EvalError::UnknownImage(_))
        ));
        let m = match_dataset(&[rec], &[], MatchPolicy::GreedyByScore, 64).unwrap();
        assert_eq!((m.total_faces, m.entries.len()), (1, 0));
    }

    /// Scenes where faces sit far apart so no detection can overlap two
    /// faces by 0.5 or more.
    fn separated_scene() -> impl Strategy<Value = (Vec<Ellipse>, Vec<Detection>)> {
        let faces = proptest::collection::vec((8.0..16.0f64, 1.0..1.4f64, -0.3..0.3f64), 1..5);
        let dets = proptest::collection::vec(
            (
                0usize..5,
                -6.0..6.0f64,
                -6.0..6.0f64,
                0.7..1.3f64,
                0.0..1.0f64,
            ),
            0..12,
        );
        (faces, dets).prop_map(|(fs, ds)| {
            let faces: Vec<Ellipse> = fs
                .iter()
                .enumerate()
                .map(|(i, &(rb, k, th))| {
                    Ellipse::new(60.0 + 100.0 * i as f64, 60.0, rb * k, rb, 1.5 + th).unwrap()
                })
                .collect();
            let dets = ds
                .iter()
                .map(|&(fi, dx, dy, s, score)| {
                    let f = faces[fi % faces.len()];
                    let b = ellipse_bounding_box(&f);
                    let (cx, cy) = b.center();
                    let (hw, hh) = (0.5 * b.width() * s, 0.5 * b.height() * s);
                    Detection::new(
                        BBox::new(cx + dx - hw, cy + dy - hh, cx + dx + hw, cy + dy + hh).unwrap(),
                        score,
                    )
                })
                .collect();
            (faces, dets)
        })
    }

    proptest! {
        #[test]
        fn policies_agree_on_separated_faces((faces, dets) in separated_scene()) {
            let g = match_image("x", &dets, &faces, MatchPolicy::GreedyByScore, 64).unwrap();
            let o = match_image("x", &dets, &faces, MatchPolicy::OptimalAssignment, 64).unwrap();
            let count = |v: &[MatchEntry]| v.iter().filter(|e| e.matched).count();
            prop_assert_eq!(count(&g), count(&o));
            for entries in [&g, &o] {
                let mut idx: Vec<usize> = entries.iter().filter_map(|e| e.matched_annotation).collect();
                let n = idx.len();
                idx.sort();
                idx.dedup();
                prop_assert_eq!(idx.len(), n);
                for e in entries.iter() {
                    prop_assert_eq!(e.overlap.value() > 0.0, e.matched);
                }
            }
        }
    }
}
