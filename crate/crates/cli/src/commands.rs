//! The five pipeline commands: synth, preprocess, train, infer, eval.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pointground_core::encoders::{build_providers, Modality, Providers};
use pointground_core::evaluation::{build_report, outcome_for, MetricParams, QueryOutcome};
use pointground_core::inference::{Grounder, GroundingPrediction};
use pointground_core::model::{Checkpoint, GroundingModel};
use pointground_core::projection::{best_frame_region, ExtensionMode, Region2D};
use pointground_core::scene::{
    generate_synthetic_scene, synthetic_vocabulary, CategoryVocabulary, LoadMode, Scene,
};
use pointground_core::training::{
    train, EpochSummary, StepRecord, TrainObserver, TrainingScene,
};

use crate::bundle::{list_bundles, load_scene_bundle, load_scene_bundle_with, write_scene_bundle};
use crate::caches::{
    read_embeddings, read_regions, regions_cached, write_embeddings, write_manifest,
    write_regions, PreprocessManifest,
};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::config::{extension_mode_name, RunConfig};
use crate::report::{
    prediction_record, read_predictions, report_file, write_predictions, write_report,
    MetricSelection, PredictionErrorRecord, PredictionFile, ReportFile,
};
use crate::{cache_dir_for, Provenance};

pub struct SynthArgs {
    pub seed: u64,
    pub scenes_out: PathBuf,
    pub count: usize,
    pub proposals: usize,
    pub categories: usize,
    pub frames: usize,
}

/// Generate `count` synthetic scene bundles with per-scene seeds
/// `seed..seed+count`.
pub fn synth(args: &SynthArgs) -> Result<()> {
    fs::create_dir_all(&args.scenes_out)
        .with_context(|| format!("creating {}", args.scenes_out.display()))?;
    let vocab = synthetic_vocabulary(args.categories);
    for i in 0..args.count {
        let scene_seed = args.seed + i as u64;
        let scene =
            generate_synthetic_scene(scene_seed, args.proposals, args.categories, args.frames);
        let dir = args.scenes_out.join(&scene.scene_id);
        write_scene_bundle(&dir, &scene, &vocab)
            .with_context(|| format!("writing bundle {}", dir.display()))?;
        log::info!("wrote {}", dir.display());
    }
    println!("synth: wrote {} bundles to {}", args.count, args.scenes_out.display());
    Ok(())
}

pub struct PreprocessArgs {
    pub scenes: PathBuf,
    pub config: Option<PathBuf>,
    pub extension_mode: Option<ExtensionMode>,
    pub use_depth: Option<bool>,
    pub embed_cache: bool,
}

/// Project every proposal of every bundle, cache the selected regions, and
/// optionally persist the frozen 2D/category embeddings.
pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(mode) = args.extension_mode {
        config.extension_mode = mode;
    }
    if let Some(depth) = args.use_depth {
        config.use_depth_visibility = depth;
    }

    let bundles = list_bundles(&args.scenes)?;
    if bundles.is_empty() {
        bail!("no scene bundles under {}", args.scenes.display());
    }

    let mut vocab: Option<CategoryVocabulary> = None;
    let mut providers: Option<Providers> = None;
    let mut scene_ids = Vec::new();
    let mut failures = 0usize;
    for dir in &bundles {
        match preprocess_scene(dir, &config, args.embed_cache, &mut vocab, &mut providers) {
            Ok(scene_id) => scene_ids.push(scene_id),
            Err(err) => {
                failures += 1;
                log::error!("{}: {err:#}", dir.display());
            }
        }
    }

    if args.embed_cache {
        if let (Some(vocab), Some(providers)) = (vocab.as_ref(), providers.as_ref()) {
            let f_c = pointground_core::training::encode_category_embeddings(providers, vocab)?;
            write_embeddings(&args.scenes.join("categories.bin"), Modality::TextCategory, &f_c)?;
        }
    }

    let k = vocab.as_ref().map(|v| v.len()).unwrap_or(0);
    write_manifest(
        &args.scenes,
        &PreprocessManifest {
            provenance: Provenance::new(config.fingerprint(k), config.seed),
            extension_mode: extension_mode_name(config.extension_mode).to_string(),
            use_depth_visibility: config.use_depth_visibility,
            embed_cache: args.embed_cache,
            scenes: scene_ids.clone(),
        },
    )?;

    println!(
        "preprocess: cached regions for {} scenes ({} failed) under {}",
        scene_ids.len(),
        failures,
        args.scenes.display()
    );
    if failures > 0 {
        bail!("{failures} scenes failed to preprocess");
    }
    Ok(())
}

fn preprocess_scene(
    dir: &Path,
    config: &RunConfig,
    embed_cache: bool,
    vocab: &mut Option<CategoryVocabulary>,
    providers: &mut Option<Providers>,
) -> Result<String> {
    let (scene, scene_vocab) = load_scene_bundle(dir, LoadMode::Training)?;
    check_vocab_consistency(vocab, &scene_vocab, dir)?;

    let regions: Vec<Option<Region2D>> = scene
        .proposals
        .iter()
        .map(|p| best_frame_region(p, &scene, config.extension_mode, config.use_depth_visibility))
        .collect();
    for (p, r) in scene.proposals.iter().zip(&regions) {
        if r.is_none() {
            log::warn!(
                "scene {}: proposal {} is visible in no frame; no region cached",
                scene.scene_id,
                p.proposal_id
            );
        }
    }
    let cache_dir = cache_dir_for(dir, &scene.scene_id);
    write_regions(&cache_dir, &scene, &regions)?;

    if embed_cache {
        if providers.is_none() {
            let mut encoder = config.encoder.clone();
            encoder.seed = config.seed;
            *providers = Some(build_providers(&encoder, vocab.as_ref().unwrap())?);
        }
        let providers = providers.as_ref().unwrap();
        let ts = TrainingScene::from_cached_regions(scene, regions, providers);
        let present: Vec<&Vec<f64>> = ts.f2d.iter().flatten().collect();
        let d = config.encoder.d;
        let mut m = pointground_core::matrix::Matrix::zeros(present.len(), d);
        for (row, v) in present.iter().enumerate() {
            m.row_mut(row).copy_from_slice(v);
        }
        write_embeddings(&cache_dir.join("f2d.bin"), Modality::ImageRegion, &m)?;
        Ok(ts.scene.scene_id)
    } else {
        Ok(scene.scene_id)
    }
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub scenes: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
}

/// Observer writing the CSV training log and per-epoch checkpoints.
struct FileObserver {
    out_dir: PathBuf,
    log: fs::File,
    error: Option<anyhow::Error>,
}

impl FileObserver {
    fn new(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let log_path = out_dir.join("training_log.csv");
        let mut log = fs::File::create(&log_path)
            .with_context(|| format!("creating {}", log_path.display()))?;
        writeln!(log, "step,epoch,L_e,L_a,L_cls_2d,L_cls_3d,L_cls_q,total,lr")?;
        Ok(Self { out_dir: out_dir.to_path_buf(), log, error: None })
    }

    fn record(&mut self, result: Result<()>) {
        if self.error.is_none() {
            if let Err(err) = result {
                self.error = Some(err);
            }
        }
    }
}

impl TrainObserver for FileObserver {
    fn on_step(&mut self, record: &StepRecord) {
        let r = &record.report;
        let line = format!(
            "{},{},{},{},{},{},{},{},{}\n",
            record.step,
            record.epoch,
            r.l_e,
            r.l_a,
            r.l_cls_2d,
            r.l_cls_3d,
            r.l_cls_q,
            r.total,
            record.lr_base
        );
        let result = self.log.write_all(line.as_bytes()).map_err(anyhow::Error::from);
        self.record(result);
    }

    fn on_epoch_end(&mut self, summary: &EpochSummary, checkpoint: &Checkpoint) {
        let path = self.out_dir.join(format!("epoch_{}.ckpt", summary.epoch));
        let result = write_checkpoint(&path, checkpoint).map_err(anyhow::Error::from);
        self.record(result);
        log::info!("epoch {}: mean total loss {:.6}", summary.epoch, summary.mean_total);
    }
}

/// Train over preprocessed bundles and emit per-epoch checkpoints plus the
/// training log.
pub fn train_cmd(args: &TrainArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.encoder.seed = seed;
        config.train.seed = seed;
    }
    if let Some(epochs) = args.max_epochs {
        config.train.max_epochs = epochs;
    }

    let bundles = list_bundles(&args.scenes)?;
    if bundles.is_empty() {
        bail!("no scene bundles under {}", args.scenes.display());
    }

    // Load scenes and their caches; fall back to encoding crops on the fly
    // when no embedding cache exists.
    let mut vocab: Option<CategoryVocabulary> = None;
    let mut loaded: Vec<(PathBuf, Scene, CategoryVocabulary)> = Vec::new();
    for dir in &bundles {
        // With both caches in place the pixels are never touched.
        let scene_id = dir.file_name().map(|n| n.to_string_lossy().into_owned());
        let fully_cached = scene_id
            .map(|id| {
                let cache = cache_dir_for(dir, &id);
                regions_cached(&cache) && cache.join("f2d.bin").exists()
            })
            .unwrap_or(false);
        let (scene, scene_vocab) =
            load_scene_bundle_with(dir, LoadMode::Training, !fully_cached)
                .with_context(|| format!("loading {}", dir.display()))?;
        check_vocab_consistency(&mut vocab, &scene_vocab, dir)?;
        loaded.push((dir.clone(), scene, scene_vocab));
    }
    let vocab = vocab.expect("at least one bundle loaded");
    let mut encoder = config.encoder.clone();
    encoder.seed = config.seed;
    let providers = build_providers(&encoder, &vocab)?;

    let mut scenes = Vec::with_capacity(loaded.len());
    for (dir, scene, _) in loaded {
        let cache_dir = cache_dir_for(&dir, &scene.scene_id);
        if !regions_cached(&cache_dir) {
            bail!(
                "scene {} has no cached regions under {}; run `pointground preprocess` first",
                scene.scene_id,
                cache_dir.display()
            );
        }
        let regions = read_regions(&cache_dir, &scene)?;
        let f2d_path = cache_dir.join("f2d.bin");
        let ts = if f2d_path.exists() {
            let cached = read_embeddings(&f2d_path, Modality::ImageRegion)?;
            let mut f2d: Vec<Option<Vec<f64>>> = vec![None; scene.proposals.len()];
            let mut row = 0usize;
            for (i, region) in regions.iter().enumerate() {
                if region.is_some() {
                    if row >= cached.rows() {
                        bail!(
                            "scene {}: embedding cache has {} rows but more regions exist",
                            scene.scene_id,
                            cached.rows()
                        );
                    }
                    f2d[i] = Some(cached.row(row).to_vec());
                    row += 1;
                }
            }
            TrainingScene { scene, regions, f2d }
        } else {
            TrainingScene::from_cached_regions(scene, regions, &providers)
        };
        scenes.push(ts);
    }

    let model_config = config.model_config(vocab.len());
    let mut model = GroundingModel::new(model_config)?;
    let mut observer = FileObserver::new(&args.out)?;
    let outcome = train(&mut model, &scenes, &vocab, &providers, &config.train, &mut observer)?;
    if let Some(err) = observer.error {
        return Err(err.context("writing training artifacts"));
    }

    let first = outcome.epoch_mean_totals.first().copied().unwrap_or(0.0);
    let last = outcome.epoch_mean_totals.last().copied().unwrap_or(0.0);
    println!(
        "train: {} epochs over {} scenes; mean total loss {:.6} -> {:.6}; checkpoints in {}",
        config.train.max_epochs,
        scenes.len(),
        first,
        last,
        args.out.display()
    );
    Ok(())
}

pub struct InferArgs {
    pub checkpoint: PathBuf,
    pub scenes: PathBuf,
    pub topk: usize,
    pub out: PathBuf,
}

/// Ground every query of every bundle with a trained checkpoint (2D-free:
/// rasters are never decoded).
pub fn infer(args: &InferArgs) -> Result<()> {
    if args.topk == 0 {
        bail!("--topk must be at least 1");
    }
    let checkpoint = read_checkpoint(&args.checkpoint)?;
    let model = GroundingModel::from_checkpoint(&checkpoint)?;

    let bundles = list_bundles(&args.scenes)?;
    if bundles.is_empty() {
        bail!("no scene bundles under {}", args.scenes.display());
    }

    let mut vocab: Option<CategoryVocabulary> = None;
    let mut scenes = Vec::new();
    for dir in &bundles {
        let (scene, scene_vocab) = load_scene_bundle(dir, LoadMode::Inference)
            .with_context(|| format!("loading {}", dir.display()))?;
        check_vocab_consistency(&mut vocab, &scene_vocab, dir)?;
        scenes.push(scene);
    }
    let vocab = vocab.expect("at least one bundle loaded");
    if vocab.len() != model.k() {
        bail!("checkpoint was trained with K = {} but dataset has {}", model.k(), vocab.len());
    }
    let providers = build_providers(&checkpoint.config.encoder, &vocab)?;
    let grounder = Grounder::new(&model, providers.text.as_ref(), &vocab, args.topk)?;

    let mut predictions = Vec::new();
    let mut errors = Vec::new();
    for scene in &scenes {
        match grounder.ground_scene(scene) {
            Ok(results) => {
                for (query_id, result) in results {
                    match result {
                        Ok(p) => predictions.push(prediction_record(scene, &p)),
                        Err(err) => errors.push(PredictionErrorRecord {
                            query_id,
                            scene_id: scene.scene_id.clone(),
                            error: err.to_string(),
                        }),
                    }
                }
            }
            Err(err) => {
                for q in &scene.queries {
                    errors.push(PredictionErrorRecord {
                        query_id: q.query_id.clone(),
                        scene_id: scene.scene_id.clone(),
                        error: err.to_string(),
                    });
                }
            }
        }
    }

    let file = PredictionFile {
        provenance: Provenance::new(checkpoint.config_hash, checkpoint.seed),
        topk: args.topk,
        predictions,
        errors,
    };
    write_predictions(&args.out, &file)?;
    println!(
        "infer: grounded {} queries ({} errors) -> {}",
        file.predictions.len(),
        file.errors.len(),
        args.out.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub predictions: PathBuf,
    pub scenes: PathBuf,
    pub metrics: MetricSelection,
    pub report: PathBuf,
    pub metric_params: MetricParams,
}

/// Score predictions against ground truth and emit the report (JSON plus an
/// aligned text table on stdout).
pub fn eval(args: &EvalArgs) -> Result<ReportFile> {
    let file = read_predictions(&args.predictions)?;
    let bundles = list_bundles(&args.scenes)?;
    let mut scenes = Vec::new();
    for dir in &bundles {
        let (scene, _) = load_scene_bundle(dir, LoadMode::Inference)
            .with_context(|| format!("loading {}", dir.display()))?;
        scenes.push(scene);
    }

    let outcomes = join_outcomes(&file, &scenes);
    let report = build_report(&outcomes, &args.metric_params);
    let out = report_file(file.provenance.clone(), &report, args.metrics);
    write_report(&args.report, &out)?;
    print!("{}", crate::report::render_table(&out));
    println!("eval: scored {} queries -> {}", report.total_queries, args.report.display());
    Ok(out)
}

/// Join prediction records with their scenes' ground truth. Every scene
/// query is scored; queries without a prediction count as incorrect.
pub fn join_outcomes(file: &PredictionFile, scenes: &[Scene]) -> Vec<QueryOutcome> {
    let mut outcomes = Vec::new();
    for scene in scenes {
        for query in &scene.queries {
            let record = file
                .predictions
                .iter()
                .find(|p| p.scene_id == scene.scene_id && p.query_id == query.query_id);
            let prediction = record.and_then(|r| {
                let predicted_index = scene.proposal_index(r.predicted_proposal_id)?;
                let ranking: Option<Vec<usize>> =
                    r.ranking.iter().map(|&id| scene.proposal_index(id)).collect();
                Some(GroundingPrediction {
                    query_id: r.query_id.clone(),
                    mask: r.mask.clone(),
                    scores: r
                        .scores
                        .iter()
                        .map(|s| s.unwrap_or(f64::NEG_INFINITY))
                        .collect(),
                    predicted_index,
                    predicted_proposal_id: r.predicted_proposal_id,
                    topk_categories: r.topk_categories.clone(),
                    ranking: ranking?,
                    fallback: r.fallback,
                })
            });
            outcomes.push(outcome_for(scene, query, prediction.as_ref()));
        }
    }
    outcomes
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn check_vocab_consistency(
    seen: &mut Option<CategoryVocabulary>,
    current: &CategoryVocabulary,
    dir: &Path,
) -> Result<()> {
    match seen {
        None => {
            *seen = Some(current.clone());
            Ok(())
        }
        Some(v) if v == current => Ok(()),
        Some(_) => Err(anyhow!(
            "{}: category vocabulary differs from the first bundle's",
            dir.display()
        )),
    }
}
