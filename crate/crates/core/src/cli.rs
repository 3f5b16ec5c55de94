//! Command-line front end. Every stage reads and writes the plain-text
//! formats of the library, so stages can run as separate invocations.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::annotations::{
    assign_folds, build_records, parse_annotation_file, parse_detection_file, parse_fold_list,
    split_folds, write_annotation_file, write_detection_file, write_fold_list, DetectionRecord,
    FaceAnnotation, Fold, ImageRecord, Manifest,
};
use crate::evaluator::{
    aggregate_folds, match_dataset, MatchPolicy, MatchResult, RocCurve, RocSummary,
};
use crate::geometry::{DEFAULT_OVERLAP_RESOLUTION, MIN_OVERLAP_RESOLUTION};
use crate::miner::{bootstrap, harvest, BootstrapConfig, HardPool, HarvestConfig, RoundReport};
use crate::refdet::experiment::detect_all;
use crate::refdet::pipeline::DetectConfig;
use crate::refdet::scene::{SceneConfig, SyntheticScene};
use crate::refdet::scorer::{BatchReduction, LinearScorer, Phase, SgdConfig};
use crate::refdet::{generate_dataset, train, RefConfig, RefModel, RefTrainer, SceneSet};
use crate::sampler::SamplerConfig;

#[derive(Debug, Parser)]
#[command(
    name = "hardneg",
    version,
    about = "Hard-negative-mining bootstrapped training and ROC evaluation"
)]
pub struct Cli {
    /// Seed for scene generation, fold assignment and SGD.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel stages; 0 means the available
    /// parallelism. Output does not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output directory; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with a manifest, annotations and fold lists.
    Gen(GenArgs),
    /// Train a scorer on the training folds and write `snapshot.txt`.
    Train(TrainArgs),
    /// Run a snapshot over the training folds and write `pool.txt`.
    Harvest(HarvestArgs),
    /// Run a snapshot over the selected folds and write `detections.txt`.
    Detect(DetectArgs),
    /// Train, harvest and retrain for several rounds, evaluating each round.
    Bootstrap(BootstrapArgs),
    /// Match detections against annotations and write ROC curves.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Number of scenes to generate (at least 1).
    #[arg(long, default_value_t = 70, value_parser = clap::value_parser!(u64).range(1..))]
    pub scenes: u64,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(2..))]
    pub folds: u64,
    /// Scene width in pixels.
    #[arg(long, default_value_t = 160)]
    pub width: u32,
    /// Scene height in pixels.
    #[arg(long, default_value_t = 160)]
    pub height: u32,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Held-out folds, comma separated and numbered from 1. Training uses
    /// every other fold. Default: none held out.
    #[arg(long, value_delimiter = ',')]
    pub test_folds: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    /// Minimum IoU for a foreground RoI.
    #[arg(long, default_value_t = 0.5)]
    pub fg_threshold: f64,
    /// Lower IoU bound of background RoIs.
    #[arg(long, default_value_t = 0.1)]
    pub bg_low: f64,
    /// Background RoIs per foreground RoI in a mini-batch.
    #[arg(long, default_value_t = 3.0)]
    pub bg_fg_ratio: f64,
    /// RoIs per mini-batch.
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Apply the background/foreground ratio within each image instead of
    /// over the whole mini-batch. Off by default.
    #[arg(long)]
    pub per_image_ratio: bool,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig {
            th_fg: self.fg_threshold,
            th_bg_low: self.bg_low,
            bg_fg_ratio: self.bg_fg_ratio,
            batch_size: self.batch_size,
            per_image_ratio: self.per_image_ratio,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SgdArgs {
    /// SGD steps at the base learning rate.
    #[arg(long, default_value_t = 5000)]
    pub phase1_iters: usize,
    /// SGD steps at a tenth of the base learning rate.
    #[arg(long, default_value_t = 2000)]
    pub phase2_iters: usize,
    /// Base learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub learning_rate: f64,
    /// SGD momentum.
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// L2 penalty on the weights.
    #[arg(long, default_value_t = 0.0005)]
    pub weight_decay: f64,
    /// Images sampled per mini-batch.
    #[arg(long, default_value_t = 2)]
    pub images_per_batch: usize,
}

impl SgdArgs {
    fn config(&self) -> SgdConfig {
        SgdConfig {
            phases: vec![
                Phase {
                    iterations: self.phase1_iters,
                    learning_rate: self.learning_rate,
                },
                Phase {
                    iterations: self.phase2_iters,
                    learning_rate: self.learning_rate / 10.0,
                },
            ],
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            images_per_batch: self.images_per_batch,
            reduction: BatchReduction::Sum,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DetectorArgs {
    /// Minimum score of an emitted detection.
    #[arg(long, default_value_t = 0.05)]
    pub score_threshold: f64,
    /// Non-maximum suppression IoU.
    #[arg(long, default_value_t = 0.3)]
    pub nms_iou: f64,
}

impl DetectorArgs {
    fn config(&self) -> DetectConfig {
        DetectConfig {
            score_threshold: self.score_threshold,
            nms_iou: self.nms_iou,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct HarvestRuleArgs {
    /// Minimum detector score of a hard negative.
    #[arg(long, default_value_t = 0.8)]
    pub harvest_score: f64,
    /// A hard negative overlaps every face by less than this IoU.
    #[arg(long, default_value_t = 0.5)]
    pub harvest_iou: f64,
}

impl HarvestRuleArgs {
    fn config(&self) -> HarvestConfig {
        HarvestConfig {
            score_threshold: self.harvest_score,
            iou_threshold: self.harvest_iou,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hard-pool file whose entries are forced into background slots.
    /// Default: none.
    #[arg(long)]
    pub hard_pool: Option<PathBuf>,
    /// Snapshot to start from instead of zero weights. Default: none.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
}

#[derive(Debug, Args)]
pub struct HarvestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Scorer snapshot written by `train`.
    #[arg(long, default_value = "snapshot.txt")]
    pub snapshot: PathBuf,
    /// Existing pool to merge the new finds into. Default: none.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[command(flatten)]
    pub rule: HarvestRuleArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Folds to run on, comma separated and numbered from 1. Default: all.
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// Scorer snapshot written by `train`.
    #[arg(long, default_value = "snapshot.txt")]
    pub snapshot: PathBuf,
    #[command(flatten)]
    pub detector: DetectorArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training rounds; round 1 uses no hard negatives.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub rounds: u64,
    /// Continue each round from the previous model instead of restarting.
    /// Off by default.
    #[arg(long)]
    pub resume: bool,
    /// Matching policy for the per-round evaluation.
    #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
    pub policy: PolicyArg,
    /// Grid resolution of box/ellipse overlap.
    #[arg(long, default_value_t = DEFAULT_OVERLAP_RESOLUTION)]
    pub overlap_resolution: usize,
    #[command(flatten)]
    pub rule: HarvestRuleArgs,
    #[command(flatten)]
    pub detector: DetectorArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by `gen`.
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Detection file to evaluate.
    #[arg(long, default_value = "detections.txt")]
    pub detections: PathBuf,
    /// Folds to evaluate, comma separated and numbered from 1. Default: all.
    #[arg(long, value_delimiter = ',')]
    pub folds: Vec<usize>,
    /// How detections are assigned to faces.
    #[arg(long, value_enum, default_value_t = PolicyArg::Greedy)]
    pub policy: PolicyArg,
    /// Grid resolution of box/ellipse overlap.
    #[arg(long, default_value_t = DEFAULT_OVERLAP_RESOLUTION)]
    pub overlap_resolution: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Highest score first, each to its best free face.
    Greedy,
    /// Assignment maximizing total overlap.
    Optimal,
}

impl From<PolicyArg> for MatchPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Greedy => MatchPolicy::GreedyByScore,
            PolicyArg::Optimal => MatchPolicy::OptimalAssignment,
        }
    }
}

/// Parses `args` and runs the selected command.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    run(Cli::parse_from(args))
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build()
        .context("building worker pool")?;
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    pool.install(|| match &cli.command {
        Command::Gen(a) => cmd_gen(&cli, a),
        Command::Train(a) => cmd_train(&cli, a),
        Command::Harvest(a) => cmd_harvest(&cli, a),
        Command::Detect(a) => cmd_detect(&cli, a),
        Command::Bootstrap(a) => cmd_bootstrap(&cli, a),
        Command::Eval(a) => cmd_eval(&cli, a),
    })
}

/// Writes through a temporary file in the same directory, then renames, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn fold_file_name(index: usize) -> String {
    format!("fold-{index:02}.txt")
}

fn cmd_gen(cli: &Cli, args: &GenArgs) -> Result<()> {
    let cfg = SceneConfig {
        width: args.width,
        height: args.height,
        ..SceneConfig::default()
    };
    let data = generate_dataset(cli.seed, args.scenes as usize, &cfg)?;
    let records: Vec<ImageRecord> = data.iter().map(|(r, _)| r.clone()).collect();
    let folds = split_folds(&records, args.folds as usize, cli.seed)?;

    data.par_iter().try_for_each(|(r, scene)| {
        let path = cli.out.join("scenes").join(format!("{}.grid", r.image_id));
        write_atomic(&path, scene.grid_to_text().as_bytes())
    })?;
    for fold in &folds {
        let path = cli.out.join("folds").join(fold_file_name(fold.fold_index));
        write_atomic(&path, write_fold_list(fold).as_bytes())?;
    }
    let annotations: Vec<FaceAnnotation> = records
        .iter()
        .map(|r| FaceAnnotation {
            image_id: r.image_id.clone(),
            faces: r.faces.clone(),
        })
        .collect();
    write_atomic(
        &cli.out.join("annotations.txt"),
        write_annotation_file(&annotations).as_bytes(),
    )?;
    write_atomic(
        &cli.out.join("manifest.txt"),
        Manifest::from_records(&records).write().as_bytes(),
    )?;
    println!(
        "wrote {} scenes in {} folds to {}",
        records.len(),
        folds.len(),
        cli.out.display()
    );
    Ok(())
}

/// A dataset directory loaded into memory.
pub struct Dataset {
    pub folds: Vec<Fold>,
    pub scenes: Vec<(String, SyntheticScene)>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest =
            Manifest::parse(&read(&dir.join("manifest.txt"))?).context("parsing manifest.txt")?;
        let annotations = parse_annotation_file(&read(&dir.join("annotations.txt"))?)
            .context("parsing annotations.txt")?;
        let mut records = build_records(&manifest, &annotations)?;

        let fold_dir = dir.join("folds");
        let mut fold_files: Vec<PathBuf> = fs::read_dir(&fold_dir)
            .with_context(|| format!("listing {}", fold_dir.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        fold_files.retain(|p| p.extension().is_some_and(|e| e == "txt"));
        fold_files.sort();
        let lists: Vec<Vec<String>> = fold_files
            .iter()
            .map(|p| read(p).map(|t| parse_fold_list(&t)))
            .collect::<Result<_>>()?;
        for (i, p) in fold_files.iter().enumerate() {
            let expected = fold_file_name(i + 1);
            ensure!(
                p.file_name().is_some_and(|n| n == expected.as_str()),
                "fold files must be numbered consecutively from 1; found {}",
                p.display()
            );
        }
        assign_folds(&mut records, &lists)?;
        if let Some(r) = records.iter().find(|r| r.fold.is_none()) {
            bail!("image {} is not listed in any fold", r.image_id);
        }
        let folds = split_folds(&records, lists.len(), 0)?;

        let scenes = records
            .par_iter()
            .map(|r| {
                let path = dir.join("scenes").join(format!("{}.grid", r.image_id));
                let scene = SyntheticScene::grid_from_text(&read(&path)?)
                    .with_context(|| format!("parsing {}", path.display()))?;
                ensure!(
                    scene.width == r.width && scene.height == r.height,
                    "{}: grid is {}x{} but the manifest says {}x{}",
                    path.display(),
                    scene.width,
                    scene.height,
                    r.width,
                    r.height
                );
                Ok((r.image_id.clone(), scene))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { folds, scenes })
    }

    fn check_folds(&self, folds: &[usize]) -> Result<()> {
        for &f in folds {
            ensure!(
                (1..=self.folds.len()).contains(&f),
                "fold {f} does not exist; the dataset has folds 1 to {}",
                self.folds.len()
            );
        }
        Ok(())
    }

    /// Folds not in `test`, in fold order.
    pub fn training_folds(&self, test: &[usize]) -> Result<Vec<Fold>> {
        self.check_folds(test)?;
        let train: Vec<Fold> = self
            .folds
            .iter()
            .filter(|f| !test.contains(&f.fold_index))
            .cloned()
            .collect();
        ensure!(
            !train.is_empty(),
            "every fold is held out; nothing to train on"
        );
        Ok(train)
    }

    /// Records of the listed folds in fold order, or of every fold when
    /// `folds` is empty.
    pub fn records_of(&self, folds: &[usize]) -> Result<Vec<ImageRecord>> {
        self.check_folds(folds)?;
        Ok(self
            .folds
            .iter()
            .filter(|f| folds.is_empty() || folds.contains(&f.fold_index))
            .flat_map(|f| f.records.iter().cloned())
            .collect())
    }

    pub fn scene_set(&self, cfg: &RefConfig) -> SceneSet {
        SceneSet::new(self.scenes.iter().cloned(), cfg)
    }
}

fn flatten(folds: &[Fold]) -> Vec<ImageRecord> {
    folds
        .iter()
        .flat_map(|f| f.records.iter().cloned())
        .collect()
}

fn ref_config(sgd: Option<&SgdArgs>, detector: Option<&DetectorArgs>) -> RefConfig {
    let mut cfg = RefConfig::default();
    if let Some(s) = sgd {
        cfg.sgd = s.config();
    }
    if let Some(d) = detector {
        cfg.detect = d.config();
    }
    cfg
}

fn load_snapshot(path: &Path) -> Result<LinearScorer> {
    LinearScorer::from_text(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_pool(path: &Path, known: &SceneSet) -> Result<HardPool> {
    let pool =
        HardPool::parse(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    for e in pool.entries() {
        known.get(&e.image_id)?;
    }
    Ok(pool)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data.data)?;
    let cfg = ref_config(Some(&args.sgd), None);
    let scenes = dataset.scene_set(&cfg);
    let images = flatten(&dataset.training_folds(&args.data.test_folds)?);
    let pool = match &args.hard_pool {
        Some(p) => load_pool(p, &scenes)?,
        None => HardPool::new(),
    };
    let init = args.init.as_deref().map(load_snapshot).transpose()?;
    let (scorer, losses) = train(
        &scenes,
        &images,
        pool.entries(),
        &args.sampler.config(),
        &cfg.sgd,
        cli.seed,
        init.as_ref(),
    )?;
    for (i, l) in losses.iter().enumerate() {
        println!(
            "phase {}: {} iterations at lr {}, mean loss {:.6}, final loss {:.6}",
            i + 1,
            l.iterations,
            l.learning_rate,
            l.mean_loss,
            l.final_loss
        );
    }
    let path = cli.out.join("snapshot.txt");
    write_atomic(&path, scorer.to_text().as_bytes())?;
    println!(
        "trained on {} images with {} hard negatives; wrote {}",
        images.len(),
        pool.len(),
        path.display()
    );
    Ok(())
}

fn cmd_harvest(cli: &Cli, args: &HarvestArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data.data)?;
    let cfg = ref_config(None, Some(&args.detector));
    let scenes = dataset.scene_set(&cfg);
    let images = flatten(&dataset.training_folds(&args.data.test_folds)?);
    let model = RefModel {
        scorer: load_snapshot(&args.snapshot)?,
        scenes: scenes.clone(),
        detect: cfg.detect,
    };
    let rule = args.rule.config();
    let found = harvest(&model, &images, rule.score_threshold, rule.iou_threshold)?;
    let mut pool = match &args.pool {
        Some(p) => load_pool(p, &scenes)?,
        None => HardPool::new(),
    };
    let n = found.len();
    let added = pool.extend(found);
    let path = cli.out.join("pool.txt");
    write_atomic(&path, pool.to_text().as_bytes())?;
    println!(
        "harvested {n} hard negatives ({added} new) from {} images; pool size {}; wrote {}",
        images.len(),
        pool.len(),
        path.display()
    );
    Ok(())
}

fn cmd_detect(cli: &Cli, args: &DetectArgs) -> Result<()> {
    let dataset = Dataset::load(&args.data)?;
    let cfg = ref_config(None, Some(&args.detector));
    let model = RefModel {
        scorer: load_snapshot(&args.snapshot)?,
        scenes: dataset.scene_set(&cfg),
        detect: cfg.detect,
    };
    let images = sorted_by_id(dataset.records_of(&args.folds)?);
    let detections = detect_all(&model, &images).map_err(anyhow::Error::from_boxed)?;
    let path = cli.out.join("detections.txt");
    write_atomic(&path, write_detection_file(&detections).as_bytes())?;
    println!(
        "{} detections on {} images; wrote {}",
        detections.iter().map(|d| d.detections.len()).sum::<usize>(),
        images.len(),
        path.display()
    );
    Ok(())
}

/// Detections as a reader of the detection file sees them, so that
/// in-process evaluation agrees with `eval` on the written file.
fn as_written(dets: Vec<DetectionRecord>) -> Result<Vec<DetectionRecord>> {
    Ok(parse_detection_file(&write_detection_file(&dets))?)
}

fn sorted_by_id(mut records: Vec<ImageRecord>) -> Vec<ImageRecord> {
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    records
}

/// Matches per fold and pools the folds into one pair of curves.
fn evaluate_folds(
    folds: &[Fold],
    selected: &[usize],
    detections: &[DetectionRecord],
    policy: MatchPolicy,
    resolution: usize,
) -> Result<(MatchResult, RocCurve, RocCurve)> {
    let per_fold = folds
        .iter()
        .filter(|f| selected.is_empty() || selected.contains(&f.fold_index))
        .map(|f| {
            let ids: HashSet<&str> = f.records.iter().map(|r| r.image_id.as_str()).collect();
            let dets: Vec<DetectionRecord> = detections
                .iter()
                .filter(|d| ids.contains(d.image_id.as_str()))
                .cloned()
                .collect();
            Ok(match_dataset(&f.records, &dets, policy, resolution)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let (discrete, continuous) = aggregate_folds(&per_fold);
    Ok((MatchResult::merge(&per_fold), discrete, continuous))
}

fn write_curves(
    dir: &Path,
    matches: &MatchResult,
    discrete: &RocCurve,
    continuous: &RocCurve,
    policy: MatchPolicy,
) -> Result<RocSummary> {
    write_atomic(&dir.join("roc_discrete.csv"), discrete.to_csv().as_bytes())?;
    write_atomic(
        &dir.join("roc_continuous.csv"),
        continuous.to_csv().as_bytes(),
    )?;
    let summary = RocSummary::new(matches, discrete, continuous, policy);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn check_resolution(resolution: usize) -> Result<()> {
    ensure!(
        resolution >= MIN_OVERLAP_RESOLUTION,
        "--overlap-resolution must be at least {MIN_OVERLAP_RESOLUTION}"
    );
    Ok(())
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    check_resolution(args.overlap_resolution)?;
    let dataset = Dataset::load(&args.data)?;
    dataset.check_folds(&args.folds)?;
    let detections = parse_detection_file(&read(&args.detections)?)
        .with_context(|| format!("parsing {}", args.detections.display()))?;
    let known: HashSet<String> = dataset
        .folds
        .iter()
        .flat_map(|f| f.records.iter().map(|r| r.image_id.clone()))
        .collect();
    if let Some(d) = detections.iter().find(|d| !known.contains(&d.image_id)) {
        bail!(
            "detections name image {} which is not in the dataset",
            d.image_id
        );
    }
    let policy = MatchPolicy::from(args.policy);
    let (matches, discrete, continuous) = evaluate_folds(
        &dataset.folds,
        &args.folds,
        &detections,
        policy,
        args.overlap_resolution,
    )?;
    let summary = write_curves(&cli.out, &matches, &discrete, &continuous, policy)?;
    println!(
        "{} faces in {} images, {} detections ({} matched); discrete AUC {:.6}, continuous AUC {:.6}",
        summary.total_faces,
        summary.total_images,
        summary.total_detections,
        summary.matched_detections,
        summary.discrete_auc,
        summary.continuous_auc
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SplitReport {
    name: String,
    test_folds: Vec<usize>,
    reports: Vec<RoundReport>,
}

#[derive(Debug, Serialize)]
struct PooledRound {
    round_index: usize,
    summary: RocSummary,
}

#[derive(Debug, Serialize)]
struct BootstrapReport {
    seed: u64,
    rounds: usize,
    splits: Vec<SplitReport>,
    pooled: Vec<PooledRound>,
}

fn split_name(test: &[usize]) -> String {
    let parts: Vec<String> = test.iter().map(|f| format!("{f:02}")).collect();
    format!("test-{}", parts.join("-"))
}

/// With `--test-folds` this is a single train/test split. Without it every
/// fold is held out in turn and the per-round curves pool all folds.
fn cmd_bootstrap(cli: &Cli, args: &BootstrapArgs) -> Result<()> {
    check_resolution(args.overlap_resolution)?;
    let dataset = Dataset::load(&args.data.data)?;
    let cfg = ref_config(Some(&args.sgd), Some(&args.detector));
    let scenes = dataset.scene_set(&cfg);
    let sampler = args.sampler.config();
    let policy = MatchPolicy::from(args.policy);
    let rounds = args.rounds as usize;
    let boot = BootstrapConfig {
        rounds,
        harvest: args.rule.config(),
        resume: args.resume,
    };
    let splits: Vec<Vec<usize>> = if args.data.test_folds.is_empty() {
        dataset.folds.iter().map(|f| vec![f.fold_index]).collect()
    } else {
        let mut t = args.data.test_folds.clone();
        t.sort_unstable();
        t.dedup();
        vec![t]
    };
    let tested: Vec<usize> = splits.iter().flatten().copied().collect();

    let mut split_reports = Vec::new();
    // round -> detections of every held-out image
    let mut per_round: BTreeMap<usize, Vec<DetectionRecord>> = BTreeMap::new();
    for test in &splits {
        let name = split_name(test);
        let train_folds = dataset.training_folds(test)?;
        let test_images = sorted_by_id(dataset.records_of(test)?);
        let mut trainer = RefTrainer::new(scenes.clone(), cfg.clone(), cli.seed);
        let mut snapshots: Vec<String> = Vec::new();
        let mut round_dets: Vec<Vec<DetectionRecord>> = Vec::new();
        let mut failure: Option<anyhow::Error> = None;
        let outcome = bootstrap(&mut trainer, &train_folds, &boot, &sampler, |_, model| {
            snapshots.push(model.scorer.to_text());
            let scored = detect_all(model, &test_images)
                .map_err(anyhow::Error::from_boxed)
                .and_then(as_written)
                .and_then(|dets| {
                    let m = match_dataset(&test_images, &dets, policy, args.overlap_resolution)?;
                    let (d, c) = aggregate_folds(std::slice::from_ref(&m));
                    Ok((dets, RocSummary::new(&m, &d, &c, policy)))
                });
            match scored {
                Ok((dets, summary)) => {
                    round_dets.push(dets);
                    Some(summary)
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    None
                }
            }
        })
        .map_err(|f| anyhow::anyhow!("{name}: {f}"))?;
        if let Some(e) = failure {
            return Err(e.context(format!("evaluating {name}")));
        }
        for (k, report) in outcome.reports.iter().enumerate() {
            let dir = cli.out.join(format!("round-{}", k + 1)).join(&name);
            write_atomic(&dir.join("snapshot.txt"), snapshots[k].as_bytes())?;
            write_atomic(&dir.join("pool.txt"), outcome.pools[k].to_text().as_bytes())?;
            log::info!(
                "{name} round {}: {} hard negatives found, pool size {}",
                report.round_index,
                report.hard_negatives_found,
                report.pool_size
            );
        }
        for (k, dets) in round_dets.into_iter().enumerate() {
            per_round.entry(k + 1).or_default().extend(dets);
        }
        split_reports.push(SplitReport {
            name,
            test_folds: test.clone(),
            reports: outcome.reports,
        });
    }

    let mut pooled = Vec::new();
    for (round, mut dets) in per_round {
        dets.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let dir = cli.out.join(format!("round-{round}"));
        write_atomic(
            &dir.join("detections.txt"),
            write_detection_file(&dets).as_bytes(),
        )?;
        let (matches, discrete, continuous) = evaluate_folds(
            &dataset.folds,
            &tested,
            &dets,
            policy,
            args.overlap_resolution,
        )?;
        let summary = write_curves(&dir, &matches, &discrete, &continuous, policy)?;
        println!(
            "round {round}: {} detections on {} held-out images; discrete AUC {:.6}, continuous AUC {:.6}",
            summary.total_detections, summary.total_images, summary.discrete_auc, summary.continuous_auc
        );
        pooled.push(PooledRound {
            round_index: round,
            summary,
        });
    }
    write_json(
        &cli.out.join("reports.json"),
        &BootstrapReport {
            seed: cli.seed,
            rounds,
            splits: split_reports,
            pooled,
        },
    )?;
    Ok(())
}
