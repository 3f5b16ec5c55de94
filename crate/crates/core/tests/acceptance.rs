//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hardneg::annotations::{
    parse_annotation_file, parse_detection_file, write_annotation_file, write_detection_file,
    Detection, DetectionRecord, FaceAnnotation, ImageRecord,
};
use hardneg::evaluator::{build_roc, match_image, MatchPolicy, MatchResult, RocFlavor};
use hardneg::geometry::{
    box_ellipse_overlap, ellipse_bounding_box, iou, max_iou, BBox, Ellipse, OverlapScore,
};
use hardneg::miner::{harvest, BoxError, Detector, HardNegative, HardPool};
use hardneg::refdet::experiment::{fp_at_matched_rate, run_experiment, ExperimentConfig};
use hardneg::refdet::generate_dataset;
use hardneg::refdet::scene::SceneConfig;
use hardneg::refdet::scorer::{loss_and_gradient, LinearScorer, Phase, TrainingMeta};
use hardneg::sampler::{
    label_from_overlap, label_roi, sample_minibatch, Candidate, PoolEntry, RoiKind, SamplerConfig,
};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bx(a: f64, b: f64, c: f64, d: f64) -> BBox {
    BBox::new(a, b, c, d).unwrap()
}

// 1. Geometry oracles.

fn pixel_count(a: &BBox, b: &BBox) -> (u64, u64) {
    let (mut inter, mut union) = (0, 0);
    for y in 0..64 {
        for x in 0..64 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let ina = a.contains_point(px, py, 0.0);
            let inb = b.contains_point(px, py, 0.0);
            inter += u64::from(ina && inb);
            union += u64::from(ina || inb);
        }
    }
    (inter, union)
}

fn criterion_geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let int_box = |rng: &mut ChaCha8Rng| {
        let (x0, x1) = (rng.gen_range(0..=64), rng.gen_range(0..=64));
        let (y0, y1) = (rng.gen_range(0..=64), rng.gen_range(0..=64));
        bx(
            x0.min(x1) as f64,
            y0.min(y1) as f64,
            x0.max(x1) as f64,
            y0.max(y1) as f64,
        )
    };
    for case in 0..1000 {
        let (a, b) = (int_box(&mut rng), int_box(&mut rng));
        let (inter, union) = pixel_count(&a, &b);
        let oracle = if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        let got = iou(&a, &b).value();
        check(got == oracle, || {
            format!("case {case}: iou({a}, {b}) = {got}, pixel oracle {oracle}")
        })?;
    }

    let mut worst: f64 = 0.0;
    let mut ellipses = 0;
    for _ in 0..200 {
        let e = Ellipse::new(
            rng.gen_range(20.0..44.0),
            rng.gen_range(20.0..44.0),
            rng.gen_range(6.0..16.0),
            rng.gen_range(3.0..6.0),
            rng.gen_range(-3.0..3.0),
        )
        .unwrap();
        let (cx, cy) = (rng.gen_range(10.0..54.0), rng.gen_range(10.0..54.0));
        let (hw, hh) = (rng.gen_range(2.0..18.0), rng.gen_range(2.0..18.0));
        let b = bx(cx - hw, cy - hh, cx + hw, cy + hh);
        let mut prev = box_ellipse_overlap(&b, &e, 64).unwrap().value();
        let mut res = 64;
        while res < 512 {
            let next = box_ellipse_overlap(&b, &e, res * 2).unwrap().value();
            let diff = (next - prev).abs();
            worst = worst.max(diff * res as f64);
            check(diff < 4.0 / res as f64, || {
                format!(
                    "overlap({b}, {e:?}) moves {diff} between {res} and {}",
                    res * 2
                )
            })?;
            prev = next;
            res *= 2;
        }
        ellipses += 1;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "1000/1000 box pairs exact; {ellipses} ellipse cases converge (max |diff|*res {worst:.3} < 4); {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 2. Labeling partition.

fn criterion_labeling() -> Outcome {
    let cfg = SamplerConfig::default();
    let mut counts = HashMap::new();
    for i in 0..=10_000u32 {
        let v = i as f64 / 10_000.0;
        let expected = if v >= 0.5 {
            RoiKind::Foreground
        } else if v >= 0.1 {
            RoiKind::Background
        } else {
            RoiKind::Ignored
        };
        let got = label_from_overlap(OverlapScore::new(v), Some(0), &cfg).kind;
        check(got == expected, || {
            format!("IoU {v}: {got:?}, expected {expected:?}")
        })?;
        *counts.entry(format!("{got:?}")).or_insert(0) += 1;
    }
    // The boundaries again, through real boxes whose IoU is exactly 0.5 and 0.1.
    let gt = [bx(0.0, 0.0, 1.0, 1.0)];
    let half = label_roi(&bx(0.0, 0.0, 2.0, 1.0), &gt, &cfg);
    let tenth = label_roi(&bx(0.0, 0.0, 10.0, 1.0), &gt, &cfg);
    let below = label_roi(&bx(0.0, 0.0, 11.0, 1.0), &gt, &cfg);
    check(half.kind == RoiKind::Foreground, || {
        format!("IoU 0.5 box: {half:?}")
    })?;
    check(tenth.kind == RoiKind::Background, || {
        format!("IoU 0.1 box: {tenth:?}")
    })?;
    check(below.kind == RoiKind::Ignored, || {
        format!("IoU 1/11 box: {below:?}")
    })?;
    Ok(format!(
        "10001 grid points exact (fg {}, bg {}, ignored {}); 0.5 is fg, 0.1 is bg",
        counts["Foreground"], counts["Background"], counts["Ignored"]
    ))
}

// 3. Sampler contract.

fn criterion_sampler() -> Outcome {
    let cfg = SamplerConfig::default();
    let quota = cfg.bg_quota(cfg.fg_quota());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gt = [bx(40.0, 40.0, 60.0, 60.0)];
    let mut full_pool_trials = 0;
    for trial in 0..500 {
        let mut candidates = Vec::new();
        let n_fg = rng.gen_range(16..40);
        let n_bg = rng.gen_range(48..120);
        for k in 0..n_fg + n_bg {
            let region = if k < n_fg {
                let d = rng.gen_range(-2.0..2.0);
                bx(40.0 + d, 40.0, 60.0 + d, 60.0)
            } else {
                let d = rng.gen_range(8.0..14.0);
                bx(40.0 + d, 40.0, 60.0 + d, 60.0)
            };
            let label = label_roi(&region, &gt, &cfg);
            candidates.push(Candidate {
                image_id: "img".into(),
                region,
                label,
            });
        }
        let pool_size = rng.gen_range(0..=quota + 20);
        let pool: Vec<PoolEntry> = (0..pool_size)
            .map(|k| PoolEntry {
                image_id: "img".into(),
                region: bx(k as f64, 100.0, k as f64 + 10.0, 110.0),
            })
            .collect();
        let batch =
            sample_minibatch(&candidates, &pool, &cfg, rng.gen()).map_err(|e| e.to_string())?;
        check(batch.bg.len() == 3 * batch.fg.len(), || {
            format!(
                "trial {trial}: {} bg for {} fg",
                batch.bg.len(),
                batch.fg.len()
            )
        })?;
        check(batch.fg.len() == cfg.fg_quota(), || {
            format!(
                "trial {trial}: {} fg, quota {}",
                batch.fg.len(),
                cfg.fg_quota()
            )
        })?;
        let hard: BTreeSet<usize> = batch
            .bg
            .iter()
            .filter(|b| b.is_hard)
            .map(|b| b.source)
            .collect();
        if pool_size <= quota {
            full_pool_trials += 1;
            check(hard.len() == pool_size, || {
                format!(
                    "trial {trial}: {} of {pool_size} pool entries drawn",
                    hard.len()
                )
            })?;
        } else {
            check(hard.len() == quota, || {
                format!(
                    "trial {trial}: {} hard with pool {pool_size} > quota {quota}",
                    hard.len()
                )
            })?;
        }
    }
    Ok(format!(
        "500 trials: |bg| = 3|fg| always; whole pool included in all {full_pool_trials} trials with pool <= {quota}"
    ))
}

// 4. Harvest soundness and completeness.

struct Fixed(HashMap<String, Vec<Detection>>);

impl Detector for Fixed {
    fn detect(&self, image: &ImageRecord) -> Result<Vec<Detection>, BoxError> {
        Ok(self.0.get(&image.image_id).cloned().unwrap_or_default())
    }
}

fn criterion_harvest() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scenes = generate_dataset(4, 60, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let mut outputs = HashMap::new();
    let mut images = Vec::new();
    let mut expected = BTreeSet::new();
    let mut total = 0;
    for (record, _) in &scenes {
        let gts: Vec<BBox> = record.faces.iter().map(ellipse_bounding_box).collect();
        let mut dets = Vec::new();
        for _ in 0..rng.gen_range(0..30) {
            // Half near a face so every IoU regime shows up.
            let (cx, cy) = if rng.gen_bool(0.5) && !gts.is_empty() {
                let g = gts[rng.gen_range(0..gts.len())];
                let (x, y) = g.center();
                (
                    x + rng.gen_range(-15.0..15.0),
                    y + rng.gen_range(-15.0..15.0),
                )
            } else {
                (rng.gen_range(10.0..150.0), rng.gen_range(10.0..150.0))
            };
            let (hw, hh) = (rng.gen_range(8.0..22.0), rng.gen_range(8.0..26.0));
            let score = (rng.gen_range(0..=100) as f64) / 100.0;
            dets.push(Detection::new(
                bx(cx - hw, cy - hh, cx + hw, cy + hh),
                score,
            ));
        }
        total += dets.len();
        for d in &dets {
            let (m, _) = max_iou(&d.region, &gts);
            if d.score >= 0.8 && m.value() < 0.5 {
                expected.insert(key(&record.image_id, &d.region, d.score));
            }
        }
        outputs.insert(record.image_id.clone(), dets);
        images.push(record.clone());
    }
    let found = harvest(&Fixed(outputs), &images, 0.8, 0.5).map_err(|e| e.to_string())?;
    let got: BTreeSet<_> = found
        .iter()
        .map(|h| key(&h.image_id, &h.region, h.detector_score))
        .collect();
    check(got.len() == found.len(), || {
        "harvest returned duplicates".into()
    })?;
    check(got == expected, || {
        format!(
            "{} harvested, {} expected; {} missing, {} spurious",
            got.len(),
            expected.len(),
            expected.difference(&got).count(),
            got.difference(&expected).count()
        )
    })?;
    Ok(format!(
        "{} of {total} detections over 60 scenes harvested; set equals brute-force filter",
        got.len()
    ))
}

fn key(id: &str, b: &BBox, score: f64) -> (String, [u64; 5]) {
    (
        id.to_string(),
        [b.x_min(), b.y_min(), b.x_max(), b.y_max(), score].map(f64::to_bits),
    )
}

// 5. Evaluator oracle.

fn criterion_evaluator() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut points = 0;
    for case in 0..200 {
        let n_faces = rng.gen_range(0..5);
        let faces: Vec<Ellipse> = (0..n_faces)
            .map(|_| {
                Ellipse::new(
                    rng.gen_range(20.0..80.0),
                    rng.gen_range(20.0..80.0),
                    rng.gen_range(8.0..14.0),
                    rng.gen_range(5.0..8.0),
                    rng.gen_range(-1.5..1.5),
                )
                .unwrap()
            })
            .collect();
        let n_dets = rng.gen_range(0..=20);
        let dets: Vec<Detection> = (0..n_dets)
            .map(|_| {
                let (cx, cy) = if !faces.is_empty() && rng.gen_bool(0.6) {
                    let f = &faces[rng.gen_range(0..faces.len())];
                    (
                        f.center_x() + rng.gen_range(-4.0..4.0),
                        f.center_y() + rng.gen_range(-4.0..4.0),
                    )
                } else {
                    (rng.gen_range(10.0..90.0), rng.gen_range(10.0..90.0))
                };
                let (hw, hh) = (rng.gen_range(5.0..15.0), rng.gen_range(5.0..15.0));
                // Coarse scores so that ties occur.
                let score = rng.gen_range(1..=8) as f64 / 8.0;
                Detection::new(bx(cx - hw, cy - hh, cx + hw, cy + hh), score)
            })
            .collect();
        let entries = match_image("img", &dets, &faces, MatchPolicy::GreedyByScore, 128)
            .map_err(|e| e.to_string())?;
        let result = MatchResult {
            entries,
            total_faces: n_faces,
            total_images: 1,
        };
        let discrete = build_roc(&result, RocFlavor::Discrete);
        let continuous = build_roc(&result, RocFlavor::Continuous);

        // Oracle: rematch from scratch at every distinct threshold.
        let mut thresholds: Vec<f64> = dets.iter().map(|d| d.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let expected: Vec<(usize, f64, f64)> = if thresholds.is_empty() {
            vec![(0, 0.0, 0.0)]
        } else {
            thresholds
                .iter()
                .map(|&t| {
                    let kept: Vec<Detection> =
                        dets.iter().copied().filter(|d| d.score >= t).collect();
                    let m =
                        match_image("img", &kept, &faces, MatchPolicy::GreedyByScore, 128).unwrap();
                    let fp = m.iter().filter(|e| !e.matched).count();
                    let tp = m.iter().filter(|e| e.matched).count();
                    let cont: f64 = m
                        .iter()
                        .filter(|e| e.matched)
                        .map(|e| e.overlap.value())
                        .sum();
                    let norm = if n_faces == 0 {
                        0.0
                    } else {
                        1.0 / n_faces as f64
                    };
                    (fp, tp as f64 * norm, cont * norm)
                })
                .collect()
        };
        check(discrete.points.len() == expected.len(), || {
            format!(
                "case {case}: {} points, oracle {}",
                discrete.points.len(),
                expected.len()
            )
        })?;
        for (k, (&(fp, d, c), (pd, pc))) in expected
            .iter()
            .zip(discrete.points.iter().zip(&continuous.points))
            .enumerate()
        {
            check(pd.false_positives == fp && pc.false_positives == fp, || {
                format!(
                    "case {case} point {k}: fp {} / {}, oracle {fp}",
                    pd.false_positives, pc.false_positives
                )
            })?;
            check(pd.tp_measure == d, || {
                format!(
                    "case {case} point {k}: discrete {} vs oracle {d}",
                    pd.tp_measure
                )
            })?;
            check((pc.tp_measure - c).abs() <= 1e-12, || {
                format!(
                    "case {case} point {k}: continuous {} vs oracle {c}",
                    pc.tp_measure
                )
            })?;
            check(pc.tp_measure <= pd.tp_measure + 1e-12, || {
                format!("case {case} point {k}: continuous above discrete")
            })?;
        }
        for curve in [&discrete, &continuous] {
            for w in curve.points.windows(2) {
                check(
                    w[0].false_positives <= w[1].false_positives
                        && w[0].tp_measure <= w[1].tp_measure,
                    || format!("case {case}: {:?} curve not monotone", curve.flavor),
                )?;
            }
        }
        points += discrete.points.len();
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(10), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "200 cases, {points} points match threshold-sweep oracle; monotone; continuous <= discrete; {:.2}s",
        elapsed.as_secs_f64()
    ))
}

// 6. Gradient check.

fn criterion_gradient() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for point in 0..100 {
        let dim = 24;
        let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = rng.gen_range(-1.0..1.0);
        let n = rng.gen_range(1..=64);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let ys: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.3))))
            .collect();
        let refs: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let l2 = 0.0005;
        let (_, gw, gb) = loss_and_gradient(&w, b, &refs, &ys, l2);
        let h = 1e-5;
        let mut diff2 = 0.0;
        let mut norm2 = 0.0;
        for k in 0..=dim {
            let shifted = |delta: f64| {
                let mut wk = w.clone();
                let mut bk = b;
                if k < dim {
                    wk[k] += delta;
                } else {
                    bk += delta;
                }
                loss_and_gradient(&wk, bk, &refs, &ys, l2).0
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = if k < dim { gw[k] } else { gb };
            diff2 += (analytic - numeric).powi(2);
            norm2 += analytic.powi(2).max(numeric.powi(2));
        }
        let rel = diff2.sqrt() / norm2.sqrt().max(1e-12);
        worst = worst.max(rel);
        check(rel < 1e-5, || {
            format!("point {point}: relative error {rel:e}")
        })?;
    }
    Ok(format!(
        "100 random points, worst relative error {worst:.2e} < 1e-5"
    ))
}

// 7. Mining efficacy.

fn criterion_mining() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let mut improved = 0;
    let mut lines = Vec::new();
    let mut pooled: [Vec<MatchResult>; 2] = [Vec::new(), Vec::new()];
    for seed in 1..=5u64 {
        let out = run_experiment(seed, &cfg).map_err(|e| e.to_string())?;
        check(out.rounds.len() == 2, || {
            format!("seed {seed}: {} rounds", out.rounds.len())
        })?;
        let m = fp_at_matched_rate(&out.rounds[0].discrete, &out.rounds[1].discrete);
        if m.fp_second < m.fp_first {
            improved += 1;
        }
        lines.push(format!(
            "seed {seed}: {} -> {} fp at tpr {:.3}",
            m.fp_first, m.fp_second, m.tp_rate
        ));
        for (k, r) in out.rounds.iter().enumerate() {
            pooled[k].push(r.matches.clone());
        }
    }
    let r1 = build_roc(&MatchResult::merge(&pooled[0]), RocFlavor::Discrete);
    let r2 = build_roc(&MatchResult::merge(&pooled[1]), RocFlavor::Discrete);
    let elapsed = start.elapsed();
    let summary = format!(
        "{improved}/5 seeds improve [{}]; pooled tp@50 {:.3} -> {:.3}, tp@100 {:.3} -> {:.3}; {:.1}s",
        lines.join("; "),
        r1.tp_at_fp(50),
        r2.tp_at_fp(50),
        r1.tp_at_fp(100),
        r2.tp_at_fp(100),
        elapsed.as_secs_f64()
    );
    check(improved >= 4, || summary.clone())?;
    check(
        r2.tp_at_fp(50) >= r1.tp_at_fp(50) && r2.tp_at_fp(100) >= r1.tp_at_fp(100),
        || summary.clone(),
    )?;
    check(elapsed < Duration::from_secs(300), || summary.clone())?;
    Ok(summary)
}

// 8. CLI determinism.

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hardneg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "hardneg {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn collect_files(root: &Path, dir: &Path, into: &mut Vec<String>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            collect_files(root, &p, into);
        } else {
            into.push(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
        }
    }
}

fn criterion_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = |p: &str| tmp.path().join(p).to_string_lossy().into_owned();
    run_cli(&[
        "gen",
        "--scenes",
        "70",
        "--seed",
        "7",
        "--out",
        &path("data"),
    ])?;
    run_cli(&[
        "bootstrap",
        "--rounds",
        "2",
        "--seed",
        "7",
        "--data",
        &path("data"),
        "--out",
        &path("a"),
    ])?;
    run_cli(&[
        "bootstrap",
        "--rounds",
        "2",
        "--seed",
        "7",
        "--data",
        &path("data"),
        "--out",
        &path("b"),
        "--workers",
        "1",
    ])?;
    let mut files = Vec::new();
    collect_files(&tmp.path().join("a"), &tmp.path().join("a"), &mut files);
    files.sort();
    let mut counted: HashMap<&str, usize> = HashMap::new();
    for f in &files {
        let a = std::fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(tmp.path().join("b").join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(a == b, || format!("{f} differs between runs"))?;
        for kind in ["detections.txt", "pool.txt", ".csv"] {
            if f.ends_with(kind) {
                *counted.entry(kind).or_default() += 1;
            }
        }
    }
    check(counted.len() == 3, || {
        format!("missing outputs: {counted:?}")
    })?;
    Ok(format!(
        "{} files byte-identical ({} detection files, {} pool files, {} ROC CSVs)",
        files.len(),
        counted["detections.txt"],
        counted["pool.txt"],
        counted[".csv"]
    ))
}

// 9. Round trips.

fn criterion_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scenes = generate_dataset(9, 30, &SceneConfig::default()).map_err(|e| e.to_string())?;
    let annotations: Vec<FaceAnnotation> = scenes
        .iter()
        .map(|(r, _)| FaceAnnotation {
            image_id: r.image_id.clone(),
            faces: r.faces.clone(),
        })
        .collect();
    let text = write_annotation_file(&annotations);
    let parsed = parse_annotation_file(&text).map_err(|e| e.to_string())?;
    check(write_annotation_file(&parsed) == text, || {
        "annotation text changed".into()
    })?;
    for (a, b) in annotations.iter().zip(&parsed) {
        for (fa, fb) in a.faces.iter().zip(&b.faces) {
            let close = (fa.center_x() - fb.center_x()).abs() <= 5e-7
                && (fa.center_y() - fb.center_y()).abs() <= 5e-7
                && (fa.major_radius() - fb.major_radius()).abs() <= 5e-7
                && (fa.minor_radius() - fb.minor_radius()).abs() <= 5e-7
                && (fa.angle() - fb.angle()).abs() <= 5e-7;
            check(close, || {
                format!("{}: {fa:?} read back as {fb:?}", a.image_id)
            })?;
        }
    }

    let records: Vec<DetectionRecord> = scenes
        .iter()
        .map(|(r, _)| DetectionRecord {
            image_id: r.image_id.clone(),
            detections: (0..rng.gen_range(0..12))
                .map(|_| {
                    let (x, y) = (rng.gen_range(0.0..140.0), rng.gen_range(0.0..140.0));
                    Detection::new(
                        bx(
                            x,
                            y,
                            x + rng.gen_range(1.0..40.0),
                            y + rng.gen_range(1.0..40.0),
                        ),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect(),
        })
        .collect();
    let text = write_detection_file(&records);
    let parsed = parse_detection_file(&text).map_err(|e| e.to_string())?;
    check(write_detection_file(&parsed) == text, || {
        "detection text changed".into()
    })?;
    check(parsed.len() == records.len(), || {
        "detection record count changed".into()
    })?;

    let mut negatives = Vec::new();
    for r in &records {
        for d in &r.detections {
            negatives.push(HardNegative {
                image_id: r.image_id.clone(),
                region: d.region,
                detector_score: d.score,
                max_iou: OverlapScore::new(rng.gen_range(0.0..0.5)),
            });
        }
    }
    let mut pool = HardPool::new();
    pool.extend(negatives);
    let text = pool.to_text();
    let back = HardPool::parse(&text).map_err(|e| e.to_string())?;
    check(back.to_text() == text, || "pool text changed".into())?;
    check(back.len() == pool.len(), || {
        format!("pool size {} -> {}", pool.len(), back.len())
    })?;

    let scorer = LinearScorer {
        weights: (0..24).map(|_| rng.gen_range(-5.0..5.0)).collect(),
        bias: rng.gen_range(-3.0..3.0),
        training_meta: TrainingMeta {
            phases: vec![
                Phase {
                    iterations: 5000,
                    learning_rate: 0.001,
                },
                Phase {
                    iterations: 2000,
                    learning_rate: 0.0001,
                },
            ],
            momentum: 0.9,
            weight_decay: 0.0005,
            seed: 9,
        },
    };
    let text = scorer.to_text();
    let back = LinearScorer::from_text(&text).map_err(|e| e.to_string())?;
    check(back == scorer, || "snapshot values changed".into())?;
    check(back.to_text() == text, || "snapshot text changed".into())?;
    Ok(format!(
        "annotations ({} images), detections ({} boxes), pool ({} entries) and snapshot round-trip",
        annotations.len(),
        records.iter().map(|r| r.detections.len()).sum::<usize>(),
        pool.len()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "geometry oracles", criterion_geometry),
        (2, "labeling partition", criterion_labeling),
        (3, "sampler contract", criterion_sampler),
        (4, "harvest set equality", criterion_harvest),
        (5, "evaluator oracle", criterion_evaluator),
        (6, "gradient check", criterion_gradient),
        (7, "mining efficacy", criterion_mining),
        (8, "bootstrap determinism", criterion_determinism),
        (9, "format round trips", criterion_round_trip),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| name.contains(f.as_str()) || *f == n.to_string())
        {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
