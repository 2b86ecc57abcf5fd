//! The `upd` command line.
//!
//! Global flags `--seed`, `--workers` and `--config` apply to every
//! subcommand. Most options can also come from `UPD_<NAME>` environment
//! variables (for example `UPD_WORKERS=4`) or from the flat config file;
//! flags beat the environment, which beats the file.
//!
//! Exit codes: 0 on success, 1 when any image failed or the run aborted on
//! a runtime error, 2 on configuration or usage errors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::geo::{emit_geojson, grid_aggregate, write_cells_csv, StudyRecord};
use crate::manifest::{load_manifest, ManifestEntry};
use crate::metrics::{detection_metrics, RankReport, RankingJudgment};
use crate::morphology::{estimate_bin, stratified_report, StratifiedItem};
use crate::perception::{
    compute_all_q_scores, label_dataset, read_comparisons_csv, read_labels_csv, read_q_scores_csv,
    write_labels_csv, write_q_scores_csv, LabelConfig,
};
use crate::ranking::{default_min_pixels, rank_factors, read_rankings_csv, write_rankings_csv, FactorRanking};
use crate::raster::ImageRaster;
use crate::scorecam::{ExplainerConfig, ScoreCam};
use crate::segmentation::load_segmentation;
use crate::swin::{complexity_msa, complexity_wmsa, load_weights, save_weights, SwinConfig, SwinModel};
use crate::train::{train_head, write_loss_curve_csv, LabeledFeature, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "upd", version, about = "Urban physical disorder detection and factor ranking")]
pub struct Cli {
    /// Seed for weight initialisation, splits and synthetic data.
    #[arg(long, global = true, env = "UPD_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for per-image work.
    #[arg(long, global = true, env = "UPD_WORKERS")]
    pub workers: Option<usize>,
    /// Flat key = value config file.
    #[arg(long, global = true, env = "UPD_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify every manifest image as UPD or non-UPD.
    Detect(DetectArgs),
    /// Explain UPD predictions and rank semantic factors.
    Rank(RankArgs),
    /// Ranking metrics at Top@1..Top@k against manifest ground truth.
    Eval(EvalArgs),
    /// Accuracy, precision, recall and F1 of a predictions file.
    EvalDetect(EvalDetectArgs),
    /// Perception dataset tools.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train the classification head on frozen backbone features.
    TrainHead(TrainHeadArgs),
    /// Detection and ranking metrics per street-canyon bin.
    Stratify(StratifyArgs),
    /// GeoJSON and grid aggregation of predictions.
    Map(MapArgs),
    /// Attention cost of global versus windowed self-attention.
    Complexity(ComplexityArgs),
    /// Compare fast kernels against naive oracles.
    Selftest,
    /// Write seed-derived backbone weights.
    InitWeights(InitWeightsArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Weight file; defaults to the seed-derived default model.
    #[arg(long, env = "UPD_WEIGHTS")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Rank images predicted non-UPD too.
    #[arg(long)]
    pub force: bool,
    #[arg(long, env = "UPD_TOP_K")]
    pub top_k: Option<usize>,
    /// Minimum class area in pixels; defaults to 0.1% of the image.
    #[arg(long, env = "UPD_MIN_PIXELS")]
    pub min_pixels: Option<usize>,
    /// Score only the highest-norm channels.
    #[arg(long, env = "UPD_CHANNELS")]
    pub channels: Option<usize>,
    /// Directory for activation-map PNGs.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    /// CSV of images that failed (image_id,error).
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub rankings: PathBuf,
    /// Manifest with a gt_ranking column.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "UPD_K_MAX")]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalDetectArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Labels CSV (image_id,label,...); alternatively use --manifest.
    #[arg(long, conflicts_with = "manifest")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Q scores per image and attribute from pairwise comparisons.
    Qscore {
        #[arg(long)]
        comparisons: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Binary UPD labels from Q scores by percentile.
    Label {
        #[arg(long)]
        qscores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "UPD_LOW_PCT")]
        low_pct: Option<f64>,
        #[arg(long, env = "UPD_HIGH_PCT")]
        high_pct: Option<f64>,
        #[arg(long, env = "UPD_MIN_VOTES")]
        min_votes: Option<u64>,
    },
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// Manifest with a label column.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output weight file with the trained head section.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Loss curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long, env = "UPD_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "UPD_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "UPD_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Fraction of each class used for training.
    #[arg(long, env = "UPD_TRAIN_FRACTION")]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct StratifyArgs {
    /// Manifest with labels, ground truth and optional morphology bins.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, env = "UPD_K_MAX")]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Manifest with lat and lon columns.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    /// GeoJSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Grid aggregation CSV.
    #[arg(long)]
    pub cells: Option<PathBuf>,
    /// Grid cell side in degrees.
    #[arg(long, env = "UPD_CELL_SIZE")]
    pub cell_size: Option<f64>,
    #[arg(long, env = "UPD_TOP_K")]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    #[arg(long)]
    pub h: u64,
    #[arg(long)]
    pub w: u64,
    #[arg(long)]
    pub c: u64,
    #[arg(long, default_value_t = 7)]
    pub m: u64,
}

#[derive(Debug, Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub window_size: Option<usize>,
}

/// Settings shared by every subcommand after merging flags, env and file.
struct Context {
    seed: u64,
    workers: usize,
    file: ConfigFile,
}

impl Context {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", self.workers)))
    }

    fn model(&self, args: &ModelArgs) -> Result<SwinModel> {
        let path = match &args.weights {
            Some(p) => Some(p.clone()),
            None => self.file.get_str("weights").map(PathBuf::from),
        };
        match path {
            Some(p) => {
                let (config, weights, has_head) = load_weights(&p)?;
                if !has_head {
                    log::warn!("{} has no trained head; predictions use the initial head", p.display());
                }
                Ok(SwinModel { config, weights })
            }
            None => SwinModel::from_seed(SwinConfig { seed: self.seed, ..SwinConfig::default() }),
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    body(&mut tmp)?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub image_id: String,
    pub outcome: std::result::Result<(u8, f64), String>,
}

/// Runs the classifier over the manifest with `workers` threads; results are
/// sorted by image id.
pub fn detect_all(model: &SwinModel, entries: &[ManifestEntry], pool: &rayon::ThreadPool) -> Vec<Prediction> {
    let mut out: Vec<Prediction> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let outcome = ImageRaster::load_png(&e.image_path)
                    .and_then(|img| model.forward(&img))
                    .map(|t| (t.predicted_label() as u8, t.upd_probability()))
                    .map_err(|err| err.to_string());
                Prediction { image_id: e.image_id.clone(), outcome }
            })
            .collect()
    });
    out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    out
}

pub fn write_predictions_csv<W: Write>(out: W, preds: &[Prediction]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["image_id", "label", "p_upd", "error"])?;
    for p in preds {
        match &p.outcome {
            Ok((label, prob)) => wtr.write_record([&p.image_id, &label.to_string(), &prob.to_string(), ""])?,
            Err(msg) => wtr.write_record([p.image_id.as_str(), "", "", msg.as_str()])?,
        }
    }
    wtr.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}

/// `image_id -> (label, p_upd)` for rows without an error.
pub fn read_predictions_csv(path: &Path) -> Result<BTreeMap<String, (u8, f64)>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (id, label, prob) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""), rec.get(2).unwrap_or(""));
        if label.is_empty() {
            continue;
        }
        let label: u8 = label
            .parse()
            .map_err(|_| Error::Schema(format!("{id}: bad label {label:?}")))?;
        let prob: f64 = prob
            .parse()
            .map_err(|_| Error::Schema(format!("{id}: bad probability {prob:?}")))?;
        out.insert(id.to_string(), (label, prob));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct RankSettings {
    pub force: bool,
    pub top_k: Option<usize>,
    pub min_pixels: Option<usize>,
    pub channels: Option<usize>,
}

pub enum RankOutcome {
    Ranked(FactorRanking, crate::raster::ActivationMap),
    Skipped,
    Failed(String),
}

fn rank_one(model: &SwinModel, explainer: &ScoreCam, e: &ManifestEntry, s: &RankSettings) -> Result<Option<(FactorRanking, crate::raster::ActivationMap)>> {
    let seg_path = e
        .segmentation_path
        .as_ref()
        .ok_or_else(|| Error::Dataset("manifest row has no segmentation_path".into()))?;
    let image = ImageRaster::load_png(&e.image_path)?;
    let trace = model.forward(&image)?;
    if trace.predicted_label() != 1 && !s.force {
        return Ok(None);
    }
    let seg = load_segmentation(seg_path, Some((image.height(), image.width())), None)?;
    let map = explainer.explain_detailed(&image, model)?.map;
    let min_pixels = s.min_pixels.unwrap_or_else(|| default_min_pixels(image.height(), image.width()));
    let mut ranking = rank_factors(&seg, &map, min_pixels)?;
    ranking.image_id = e.image_id.clone();
    if let Some(k) = s.top_k {
        ranking = ranking.truncated(k);
    }
    Ok(Some((ranking, map)))
}

/// Detect, explain and rank every manifest image; results sorted by image id.
pub fn rank_all(
    model: &SwinModel,
    entries: &[ManifestEntry],
    settings: &RankSettings,
    pool: &rayon::ThreadPool,
) -> Vec<(String, RankOutcome)> {
    let explainer = ScoreCam::new(ExplainerConfig {
        channel_budget: settings.channels,
        ..ExplainerConfig::default()
    });
    let mut out: Vec<(String, RankOutcome)> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let outcome = match rank_one(model, &explainer, e, settings) {
                    Ok(Some((r, m))) => RankOutcome::Ranked(r, m),
                    Ok(None) => RankOutcome::Skipped,
                    Err(err) => RankOutcome::Failed(err.to_string()),
                };
                (e.image_id.clone(), outcome)
            })
            .collect()
    });
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn judgments(entries: &[ManifestEntry], rankings: &[FactorRanking]) -> Result<Vec<RankingJudgment>> {
    let by_id: BTreeMap<&str, &FactorRanking> = rankings.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let mut out = Vec::new();
    for e in entries {
        let Some(gt) = &e.gt_ranking else { continue };
        let predicted = by_id.get(e.image_id.as_str()).map(|r| r.classes()).unwrap_or_default();
        out.push(RankingJudgment::new(e.image_id.clone(), predicted, gt.clone())?);
    }
    Ok(out)
}

fn cmd_detect(ctx: &Context, a: &DetectArgs) -> Result<i32> {
    let model = ctx.model(&a.model)?;
    let entries = load_manifest(&a.manifest)?;
    let preds = detect_all(&model, &entries, &ctx.pool()?);
    write_atomic(&a.out, |w| write_predictions_csv(w, &preds))?;
    let failed: Vec<&Prediction> = preds.iter().filter(|p| p.outcome.is_err()).collect();
    for p in &failed {
        eprintln!("{}: {}", p.image_id, p.outcome.as_ref().unwrap_err());
    }
    Ok(i32::from(!failed.is_empty()))
}

fn cmd_rank(ctx: &Context, a: &RankArgs) -> Result<i32> {
    let model = ctx.model(&a.model)?;
    let entries = load_manifest(&a.manifest)?;
    let settings = RankSettings {
        force: a.force || ctx.file.get::<bool>("force")?.unwrap_or(false),
        top_k: ctx.file.resolve(a.top_k, "top_k")?,
        min_pixels: ctx.file.resolve(a.min_pixels, "min_pixels")?,
        channels: ctx.file.resolve(a.channels, "channels")?,
    };
    let results = rank_all(&model, &entries, &settings, &ctx.pool()?);
    if let Some(dir) = &a.heatmaps {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rankings = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in results {
        match outcome {
            RankOutcome::Ranked(r, map) => {
                if let Some(dir) = &a.heatmaps {
                    map.save_png(dir.join(format!("{id}.png")))?;
                }
                rankings.push(r);
            }
            RankOutcome::Skipped => log::info!("{id}: predicted non-UPD, skipped"),
            RankOutcome::Failed(msg) => {
                eprintln!("{id}: {msg}");
                failures.push((id, msg));
            }
        }
    }
    write_atomic(&a.out, |w| write_rankings_csv(w, &rankings))?;
    if let Some(path) = &a.errors {
        write_atomic(path, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(["image_id", "error"])?;
            for (id, msg) in &failures {
                wtr.write_record([id, msg])?;
            }
            wtr.flush().map_err(|e| Error::io(path, e))?;
            Ok(())
        })?;
    }
    Ok(i32::from(!failures.is_empty()))
}

fn cmd_eval(ctx: &Context, a: &EvalArgs) -> Result<i32> {
    let k_max = ctx.file.resolve(a.k_max, "k_max")?.unwrap_or(4);
    let rankings = read_rankings_csv(open(&a.rankings)?)?;
    let entries = load_manifest(&a.manifest)?;
    let js = judgments(&entries, &rankings)?;
    if js.is_empty() {
        return Err(Error::Dataset("manifest has no gt_ranking rows".into()));
    }
    let report = RankReport::compute(&js, k_max)?;
    write_atomic(&a.out, |w| report.write_csv(w))?;
    print!("{}", report.to_text());
    Ok(0)
}

fn cmd_eval_detect(a: &EvalDetectArgs) -> Result<i32> {
    let preds = read_labels_csv(open(&a.predictions)?)?;
    let truth: BTreeMap<String, u8> = match (&a.labels, &a.manifest) {
        (Some(p), _) => read_labels_csv(open(p)?)?,
        (None, Some(m)) => load_manifest(m)?
            .into_iter()
            .filter_map(|e| e.label.map(|l| (e.image_id, l)))
            .collect(),
        (None, None) => return Err(Error::Config("eval-detect needs --labels or --manifest".into())),
    };
    let (mut p, mut l) = (Vec::new(), Vec::new());
    for (id, label) in &truth {
        match preds.get(id) {
            Some(&pred) => {
                p.push(pred);
                l.push(*label);
            }
            None => log::warn!("{id}: labeled but not predicted"),
        }
    }
    if p.is_empty() {
        return Err(Error::Dataset("no image has both a prediction and a label".into()));
    }
    let m = detection_metrics(&p, &l)?;
    write_atomic(&a.out, |w| m.write_csv(w))?;
    print!("{}", m.to_text());
    Ok(0)
}

fn cmd_dataset(ctx: &Context, c: &DatasetCommand) -> Result<i32> {
    match c {
        DatasetCommand::Qscore { comparisons, out } => {
            let records = read_comparisons_csv(open(comparisons)?)?;
            let scores = compute_all_q_scores(&records)?;
            write_atomic(out, |w| write_q_scores_csv(w, &scores))?;
        }
        DatasetCommand::Label { qscores, out, low_pct, high_pct, min_votes } => {
            let d = LabelConfig::default();
            let cfg = LabelConfig {
                low_pct: ctx.file.resolve(*low_pct, "low_pct")?.unwrap_or(d.low_pct),
                high_pct: ctx.file.resolve(*high_pct, "high_pct")?.unwrap_or(d.high_pct),
                min_votes: ctx.file.resolve(*min_votes, "min_votes")?.unwrap_or(d.min_votes),
            };
            let scores = read_q_scores_csv(open(qscores)?)?;
            let labels = label_dataset(&scores, &cfg)?;
            write_atomic(out, |w| write_labels_csv(w, &labels))?;
        }
    }
    Ok(0)
}

fn cmd_train_head(ctx: &Context, a: &TrainHeadArgs) -> Result<i32> {
    let model = ctx.model(&a.model)?;
    let entries: Vec<ManifestEntry> = load_manifest(&a.manifest)?
        .into_iter()
        .filter(|e| e.label.is_some())
        .collect();
    let pool = ctx.pool()?;
    let features: Vec<Result<LabeledFeature>> = pool.install(|| {
        entries
            .par_iter()
            .map(|e| {
                let img = ImageRaster::load_png(&e.image_path)?;
                let trace = model.forward(&img)?;
                LabeledFeature::new(trace.pooled, e.label.expect("filtered above"))
            })
            .collect()
    });
    let data = features.into_iter().collect::<Result<Vec<_>>>()?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: ctx.file.resolve(a.lr, "lr")?.unwrap_or(d.learning_rate),
        epochs: ctx.file.resolve(a.epochs, "epochs")?.unwrap_or(d.epochs),
        batch_size: ctx.file.resolve(a.batch_size, "batch_size")?.unwrap_or(d.batch_size),
        train_fraction: ctx.file.resolve(a.train_fraction, "train_fraction")?.unwrap_or(d.train_fraction),
        seed: ctx.seed,
        ..d
    };
    let outcome = train_head(&data, &cfg, &model.weights.head.fc)?;
    save_weights(&a.out, &model.config, &model.weights, Some(&outcome.head))?;
    if let Some(path) = &a.curve {
        write_atomic(path, |w| write_loss_curve_csv(w, &outcome.curve))?;
    }
    let last = outcome.curve.last();
    println!(
        "train accuracy {:.4}, final train loss {:.6}, val accuracy {}",
        outcome.train_accuracy,
        last.map_or(f64::NAN, |e| e.train_loss),
        last.and_then(|e| e.val_accuracy).map_or("n/a".into(), |v| format!("{v:.4}"))
    );
    Ok(0)
}

fn cmd_stratify(ctx: &Context, a: &StratifyArgs) -> Result<i32> {
    let k_max = ctx.file.resolve(a.k_max, "k_max")?.unwrap_or(4);
    let entries = load_manifest(&a.manifest)?;
    let preds = match &a.predictions {
        Some(p) => read_predictions_csv(p)?,
        None => BTreeMap::new(),
    };
    let rankings = match &a.rankings {
        Some(p) => read_rankings_csv(open(p)?)?,
        None => Vec::new(),
    };
    let js: BTreeMap<String, RankingJudgment> = if a.rankings.is_some() {
        judgments(&entries, &rankings)?
            .into_iter()
            .map(|j| (j.image_id.clone(), j))
            .collect()
    } else {
        BTreeMap::new()
    };
    let mut items = Vec::with_capacity(entries.len());
    for e in &entries {
        let bin = match (e.morphology, &e.segmentation_path) {
            (Some(b), _) => b,
            (None, Some(p)) => estimate_bin(&load_segmentation(p, None, None)?),
            (None, None) => {
                return Err(Error::Dataset(format!(
                    "{}: needs a morphology bin or a segmentation",
                    e.image_id
                )))
            }
        };
        items.push(StratifiedItem {
            bin,
            prediction: preds.get(&e.image_id).map(|p| p.0),
            label: e.label,
            judgment: js.get(&e.image_id).cloned(),
        });
    }
    let report = stratified_report(&items, k_max)?;
    write_atomic(&a.out, |w| report.write_csv(w))?;
    print!("{}", report.to_text());
    Ok(0)
}

fn cmd_map(ctx: &Context, a: &MapArgs) -> Result<i32> {
    let top_k = ctx.file.resolve(a.top_k, "top_k")?.unwrap_or(4);
    let entries = load_manifest(&a.manifest)?;
    let preds = read_predictions_csv(&a.predictions)?;
    let rankings: BTreeMap<String, FactorRanking> = match &a.rankings {
        Some(p) => read_rankings_csv(open(p)?)?
            .into_iter()
            .map(|r| (r.image_id.clone(), r))
            .collect(),
        None => BTreeMap::new(),
    };
    let mut records = Vec::new();
    for e in &entries {
        let (Some((lat, lon)), Some(&(label, p))) = (e.location, preds.get(&e.image_id)) else {
            log::warn!("{}: no location or prediction, not mapped", e.image_id);
            continue;
        };
        records.push(StudyRecord {
            image_id: e.image_id.clone(),
            lat,
            lon,
            upd: label == 1,
            p_upd: p,
            factors: rankings.get(&e.image_id).map(|r| r.entries.clone()).unwrap_or_default(),
        });
    }
    let geo = emit_geojson(&records, top_k);
    for msg in &geo.rejected {
        eprintln!("{msg}");
    }
    write_atomic(&a.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &geo.collection)?;
        writeln!(w).map_err(|e| Error::io(&a.out, e))
    })?;
    if let Some(path) = &a.cells {
        let cell = ctx.file.resolve(a.cell_size, "cell_size")?.unwrap_or(0.01);
        let valid: Vec<StudyRecord> = records.into_iter().filter(|r| r.validate().is_ok()).collect();
        let cells = grid_aggregate(&valid, cell)?;
        write_atomic(path, |w| write_cells_csv(w, &cells))?;
    }
    Ok(i32::from(!geo.rejected.is_empty()))
}

fn cmd_complexity(a: &ComplexityArgs) -> Result<i32> {
    let msa = complexity_msa(a.h, a.w, a.c)?;
    let wmsa = complexity_wmsa(a.h, a.w, a.c, a.m)?;
    println!("msa {msa}");
    println!("w-msa {wmsa}");
    println!("difference {}", msa as i128 - wmsa as i128);
    Ok(0)
}

fn cmd_selftest(ctx: &Context) -> Result<i32> {
    let results = crate::selftest::run_all(ctx.seed)?;
    for r in &results {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(i32::from(results.iter().any(|r| !r.passed)))
}

fn cmd_init_weights(ctx: &Context, a: &InitWeightsArgs) -> Result<i32> {
    let d = SwinConfig::default();
    let cfg = SwinConfig {
        patch_size: ctx.file.resolve(a.patch_size, "patch_size")?.unwrap_or(d.patch_size),
        embed_dim: ctx.file.resolve(a.embed_dim, "embed_dim")?.unwrap_or(d.embed_dim),
        window_size: ctx.file.resolve(a.window_size, "window_size")?.unwrap_or(d.window_size),
        seed: ctx.seed,
        ..d
    };
    let model = SwinModel::from_seed(cfg)?;
    save_weights(&a.out, &model.config, &model.weights, None)?;
    println!("{} parameters written to {}", model.weights.parameter_count(), a.out.display());
    Ok(0)
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// Executes a parsed command line and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let file = match &cli.config {
        Some(p) => match ConfigFile::load(p) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: {e}");
                return 2;
            }
        },
        None => ConfigFile::default(),
    };
    let ctx = (|| -> Result<Context> {
        let seed = file.resolve(cli.seed, "seed")?.unwrap_or(0);
        let workers = file.resolve(cli.workers, "workers")?.unwrap_or(1);
        if workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(Context { seed, workers, file: file.clone() })
    })();
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let result = match &cli.command {
        Command::Detect(a) => cmd_detect(&ctx, a),
        Command::Rank(a) => cmd_rank(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::EvalDetect(a) => cmd_eval_detect(a),
        Command::Dataset(c) => cmd_dataset(&ctx, c),
        Command::TrainHead(a) => cmd_train_head(&ctx, a),
        Command::Stratify(a) => cmd_stratify(&ctx, a),
        Command::Map(a) => cmd_map(&ctx, a),
        Command::Complexity(a) => cmd_complexity(a),
        Command::Selftest => cmd_selftest(&ctx),
        Command::InitWeights(a) => cmd_init_weights(&ctx, a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code(&e)
    })
}

/// Parses `args` (program name first) and runs; usage errors exit with 2.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
