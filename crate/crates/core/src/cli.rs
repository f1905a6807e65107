//! Batch front end. Every stage reads and writes files so the pipeline can
//! be resumed or audited one step at a time.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{parse_list, refinement_from, ConfigFile, RunConfig};
use crate::data::{self, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::grounding::{self, viz, GroundingConfig, Method, ModelGrounder};
use crate::model::{self, accuracy, load_checkpoint, save_checkpoint, train_with_trace, Model, ModelSpec};
use crate::pool::{self, build_ensemble_pool, build_pool, read_pool, train_evidence_cnn, write_pool, PoolConfig};
use crate::refine::{evaluate, RefinementConfig};
use crate::seed;

#[derive(Debug, Parser)]
#[command(name = "guided-zoom", version, about = "Saliency-grounded top-k refinement for fine-grained classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (key = value with [sections]); flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GZ_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset (train.gzds, test.gzds, manifest.json).
    GenData(GenData),
    /// Import a folder of PGM/PPM images, one subdirectory per class.
    Ingest(Ingest),
    /// Train the conventional CNN.
    Train(Train),
    /// Build an evidence pool from correctly classified training images.
    BuildPool(BuildPool),
    /// Train the Evidence CNN on a pool.
    TrainEvidence(TrainEvidence),
    /// Refine top-k decisions on a test set and write a metrics report.
    Refine(Refine),
    /// Write saliency maps and overlays for one image.
    Viz(Viz),
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator spec (e.g. the "spec" object of a previous manifest).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Ingest {
    /// Root folder with one subdirectory per class.
    #[arg(long)]
    pub root: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    /// Output container; the manifest is written next to it as .json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Comma-separated conv block widths.
    #[arg(long)]
    pub channels: Option<String>,
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    /// Optional held-out set for the reported accuracy.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Grounding layer, e.g. block3 or block3.relu.
    #[arg(long)]
    pub grounding_layer: Option<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct BuildPool {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// ceb, eb, gradcam, rise or ensemble.
    #[arg(long)]
    pub method: Option<String>,
    /// Erasing depth.
    #[arg(long = "L", visible_alias = "levels")]
    pub levels: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainEvidence {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Patch input side of the Evidence CNN.
    #[arg(long, default_value_t = 32)]
    pub side: usize,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Debug, Args)]
pub struct Refine {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub evidence: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "L", visible_alias = "levels")]
    pub levels: Option<usize>,
    /// w,w0,..,wL (normalized to sum 1).
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Viz {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Image index within the container.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Class to explain (default: the image label).
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
    /// Number of erasing levels to render after level 0.
    #[arg(long = "L", visible_alias = "levels", default_value_t = 0)]
    pub levels: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(Error::MissingArtifact(p.to_path_buf()));
        }
    }
    Ok(())
}

fn run_config(global: &Global) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::from_file(&ConfigFile::load(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if global.threads.is_some() {
        cfg.threads = global.threads;
    }
    cfg.sync_grounding();
    Ok(cfg)
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(seed::digest_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
    std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse()
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = run_config(&cli.global)?;
    if let Some(n) = cfg.threads {
        if n == 0 {
            return Err(Error::config("--threads must be at least 1"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::GenData(a) => gen_data(&cfg, a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(&cfg, a),
        Command::BuildPool(a) => build_pool_cmd(&cfg, a),
        Command::TrainEvidence(a) => train_evidence(&cfg, a),
        Command::Refine(a) => refine_cmd(&cfg, a),
        Command::Viz(a) => viz_cmd(&cfg, a),
    }
}

fn gen_data(cfg: &RunConfig, a: GenData) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            require(&[p])?;
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    spec.seed = cfg.seed;
    if let Some(c) = a.classes {
        spec.classes = c;
    }
    if let Some(n) = a.train_per_class {
        spec.train_per_class = n;
    }
    if let Some(n) = a.test_per_class {
        spec.test_per_class = n;
    }
    spec.validate()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let ds = data::generate(&spec)?;
    data::write_dataset(&a.out.join("train.gzds"), &ds.train)?;
    data::write_dataset(&a.out.join("test.gzds"), &ds.test)?;
    write_json(&a.out.join("manifest.json"), &ds.manifest(&spec))?;
    println!("train {} images, test {} images, {} classes", ds.train.len(), ds.test.len(), spec.classes);
    Ok(())
}

fn ingest(a: Ingest) -> Result<()> {
    let (ds, manifest) = data::ingest_folder(&a.root, a.side)?;
    data::write_dataset(&a.out, &ds)?;
    write_json(&a.out.with_extension("json"), &manifest)?;
    println!("{} images, {} classes", ds.len(), ds.classes);
    Ok(())
}

fn apply_flags(
    section: &crate::config::TrainSection,
    f: &TrainFlags,
    seed: u64,
) -> Result<(model::TrainConfig, Option<Vec<usize>>)> {
    let mut t = section.train.clone();
    if let Some(v) = f.iterations {
        t.iterations = v;
    }
    if let Some(v) = f.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    t.seed = seed;
    t.validate()?;
    let channels = match &f.channels {
        Some(s) => Some(parse_list("--channels", s)?),
        None => section.channels.clone(),
    };
    Ok((t, channels))
}

#[derive(Serialize)]
struct TrainReport<'a> {
    descriptor: String,
    train: &'a model::TrainConfig,
    dataset_sha256: String,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    epoch_loss: &'a [f64],
    iteration_loss: &'a [f64],
}

fn train(cfg: &RunConfig, a: Train) -> Result<()> {
    require(&[&a.data])?;
    if let Some(t) = &a.test {
        require(&[t])?;
    }
    let ds = data::read_dataset(&a.data)?;
    let (tc, channels) = apply_flags(&cfg.conventional, &a.flags, seed::derive(cfg.seed, "train"))?;
    let mut spec = ModelSpec::conventional(ds.classes);
    spec.input_size = ds.side;
    spec.in_channels = ds.channels;
    if let Some(c) = channels {
        spec = spec.with_channels(c);
    }
    if let Some(l) = a.grounding_layer.clone().or_else(|| cfg.grounding.layer.clone()) {
        spec = spec.with_grounding_layer(l);
    }
    spec.validate()?;
    let (model, trace) = train_with_trace(&ds.images, &spec, &tc)?;
    save_checkpoint(&model, &a.out)?;
    let train_acc = accuracy(&model, &ds.images)?;
    let test_acc = match &a.test {
        Some(p) => Some(accuracy(&model, &data::read_dataset(p)?.images)?),
        None => None,
    };
    let report = TrainReport {
        descriptor: spec.descriptor(),
        train: &tc,
        dataset_sha256: file_digest(&a.data)?,
        train_accuracy: train_acc,
        test_accuracy: test_acc,
        epoch_loss: &trace.epoch_loss,
        iteration_loss: &trace.iteration_loss,
    };
    write_json(&a.out.with_extension("trace.json"), &report)?;
    match test_acc {
        Some(t) => println!("train accuracy {train_acc:.4}, test accuracy {t:.4}"),
        None => println!("train accuracy {train_acc:.4}"),
    }
    Ok(())
}

fn grounding_for(cfg: &RunConfig, method: Method) -> GroundingConfig {
    cfg.grounding.clone().with_method(method)
}

fn build_pool_cmd(cfg: &RunConfig, a: BuildPool) -> Result<()> {
    require(&[&a.data, &a.model])?;
    let method = a.method.clone().unwrap_or_else(|| cfg.grounding.method.name().to_string());
    let levels = a.levels.unwrap_or(cfg.pool_levels);
    let ds = data::read_dataset(&a.data)?;
    let model = load_checkpoint(&a.model)?;
    check_classes(&ds, &model)?;
    cfg.grounding.validate(ds.side)?;
    let mut pool = if method.eq_ignore_ascii_case("ensemble") {
        if a.levels.is_some_and(|l| l != 0) {
            return Err(Error::config("the ensemble pool is built without erasing (L = 0)"));
        }
        let cfgs: Vec<GroundingConfig> =
            [Method::Ceb, Method::GradCam, Method::Rise].iter().map(|&m| grounding_for(cfg, m)).collect();
        let gs: Vec<ModelGrounder> = cfgs.iter().map(|c| ModelGrounder::new(&model, c.clone())).collect();
        let refs: Vec<&dyn grounding::Grounder> = gs.iter().map(|g| g as &dyn grounding::Grounder).collect();
        let mut p = build_ensemble_pool(
            &ds.images,
            ds.classes,
            &model,
            &refs,
            cfg.grounding.patch_size,
            cfg.grounding.erase_size,
        )?;
        p.manifest.grounding = cfgs;
        p
    } else {
        let g = grounding_for(cfg, parse_method(&method)?);
        let grounder = ModelGrounder::new(&model, g.clone());
        let mut p = build_pool(&ds.images, ds.classes, &model, &grounder, &PoolConfig::new(levels, &g))?;
        p.manifest.grounding = vec![g];
        p
    };
    pool.manifest.checkpoint_sha256 = Some(file_digest(&a.model)?);
    pool.manifest.dataset_sha256 = Some(file_digest(&a.data)?);
    for s in &pool.manifest.no_evidence {
        eprintln!("no evidence: image {} ({})", s.source_id, s.method);
    }
    write_pool(&a.out, &pool)?;
    println!(
        "{} patches from {} images ({} misclassified, {} without evidence)",
        pool.len(),
        ds.len(),
        pool.manifest.misclassified.len(),
        pool.manifest.no_evidence.len()
    );
    Ok(())
}

fn check_classes(ds: &Dataset, model: &Model) -> Result<()> {
    if ds.classes != model.spec().classes {
        return Err(Error::config(format!("dataset has {} classes, model {}", ds.classes, model.spec().classes)));
    }
    Ok(())
}

fn train_evidence(cfg: &RunConfig, a: TrainEvidence) -> Result<()> {
    require(&[&a.pool, &pool::manifest_path(&a.pool)])?;
    let pool = read_pool(&a.pool)?;
    let (tc, channels) = apply_flags(&cfg.evidence, &a.flags, seed::derive(cfg.seed, "evidence"))?;
    let mut spec = ModelSpec::evidence(pool.classes());
    spec.input_size = a.side;
    if let Some(c) = channels {
        spec = spec.with_channels(c);
    }
    spec.validate()?;
    let (model, trace) = train_evidence_cnn(&pool, &spec, &tc)?;
    save_checkpoint(&model, &a.out)?;
    write_json(
        &a.out.with_extension("trace.json"),
        &serde_json::json!({
            "descriptor": spec.descriptor(),
            "train": tc,
            "pool_sha256": file_digest(&a.pool)?,
            "patches": pool.len(),
            "epoch_loss": trace.epoch_loss,
        }),
    )?;
    println!("evidence model trained on {} patches", pool.len());
    Ok(())
}

fn refine_cmd(cfg: &RunConfig, a: Refine) -> Result<()> {
    let weights = a.weights.as_deref().map(|w| parse_list::<f64>("--weights", w)).transpose()?;
    let k = a.k.unwrap_or(cfg.refine.k);
    let mut rc = match (&weights, a.levels) {
        (Some(w), l) => refinement_from(k, l, Some(w))?,
        (None, Some(l)) if l != cfg.refine.levels => refinement_from(k, Some(l), None)?,
        _ => RefinementConfig { k, ..cfg.refine.clone() },
    };
    rc.evidence_side = cfg.refine.evidence_side;
    rc.grounding = match &a.method {
        Some(m) => grounding_for(cfg, parse_method(m)?),
        None => cfg.grounding.clone(),
    };
    require(&[&a.data, &a.model, &a.evidence])?;
    let ds = data::read_dataset(&a.data)?;
    let conv = load_checkpoint(&a.model)?;
    let ev = load_checkpoint(&a.evidence)?;
    check_classes(&ds, &conv)?;
    if ev.spec().classes != conv.spec().classes {
        return Err(Error::config("conventional and evidence models disagree on the class count"));
    }
    rc.evidence_side = Some(ev.spec().input_size);
    rc.grounding.validate(ds.side)?;
    let mut report = evaluate(&ds.images, &conv, &ev, &rc)?;
    report.provenance = Some(serde_json::json!({
        "seed": cfg.seed,
        "conventional_sha256": file_digest(&a.model)?,
        "evidence_sha256": file_digest(&a.evidence)?,
        "dataset_sha256": file_digest(&a.data)?,
        "grounding": rc.grounding,
        "evidence_side": rc.evidence_side,
    }));
    write_json(&a.out, &report)?;
    println!(
        "baseline top-1 {:.4}, top-{} {:.4}, refined top-1 {:.4}",
        report.baseline_top1, report.k, report.baseline_topk, report.refined_top1
    );
    Ok(())
}

fn viz_cmd(cfg: &RunConfig, a: Viz) -> Result<()> {
    require(&[&a.data, &a.model])?;
    let ds = data::read_dataset(&a.data)?;
    let model = load_checkpoint(&a.model)?;
    let sample = ds
        .images
        .get(a.index)
        .ok_or_else(|| Error::arg(format!("index {} out of range for {} images", a.index, ds.len())))?;
    let class_id = a.class.unwrap_or(sample.label);
    let method = match &a.method {
        Some(m) => parse_method(m)?,
        None => cfg.grounding.method,
    };
    let g = grounding_for(cfg, method);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let mut cur = sample.image.clone();
    for level in 0..=a.levels {
        let map = grounding::ground(&model, &cur, class_id, &g)?;
        let stem = format!("img{}_class{}_{}_L{}", a.index, class_id, method, level);
        viz::write_map(&a.out_dir.join(format!("{stem}_map.pgm")), &map)?;
        viz::write_overlay(&a.out_dir.join(format!("{stem}_overlay.ppm")), &cur, &map)?;
        println!("{stem}");
        if level < a.levels {
            let center = grounding::peak(&map)?;
            cur = grounding::erase(&cur, center, g.erase_size)?;
        }
    }
    Ok(())
}
