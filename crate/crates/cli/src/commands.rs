use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use s2s_core::data::{
    load_manifest, load_split, rescale_points, resize_photo, write_synthetic_dataset, DatasetManifest, PairedSample,
    PhotoSample, Split, SynthConfig,
};
use s2s_core::decoder::{generate, SampleOptions, DEFAULT_TEMPERATURE};
use s2s_core::imageio::{load_photo, overlay, save_gray, save_mask, save_photo};
use s2s_core::metrics::EvalReport;
use s2s_core::model::Model;
use s2s_core::plot::{bar_plot, pr_plot, read_pr_csv, save_png};
use s2s_core::saliency::{accumulate, predict_low_res, upsample, SaliencyMode};
use s2s_core::sketch_vector::{
    absolute_to_offsets, offsets_to_absolute, rasterize, read_ndjson, Canvas, SketchRecord, SketchSequence,
};
use s2s_core::trainer::{
    evaluate, evaluate_predictions, finetune_fraction, linear_probe, per_image_csv, run_ablation_suite, train,
    Checkpoint, EvalConfig, FinetuneConfig, ProbeConfig, TrainConfig, TrainOptions, Variant, CHECKPOINT_FILE,
    LOG_FILE,
};
use s2s_core::Error;

use crate::config::layered;

#[derive(Debug, Parser)]
#[command(name = "s2s", version, about = "Photo-to-sketch generation and sketch-supervised saliency")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON file whose fields override the command's configuration.
    #[arg(long, global = true, env = "S2S_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "S2S_JOBS", default_value_t = 1)]
    pub jobs: usize,
    /// Write into an output directory that already has files in it.
    #[arg(long, global = true, env = "S2S_FORCE")]
    pub force: bool,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset of photos, object masks and outline sketches.
    Synth(SynthArgs),
    /// Train a model on the training split of a dataset.
    Train(TrainArgs),
    /// Draw sketches for photos and visualize the attention.
    Generate(GenerateArgs),
    /// Predict saliency maps for photos.
    Saliency(SaliencyArgs),
    /// Score saliency on the test split of a dataset.
    Eval(EvalArgs),
    /// Train a linear head on frozen backbone features.
    Probe(ProbeArgs),
    /// Fine-tune the backbone with a head on a labelled fraction.
    Finetune(FinetuneArgs),
    /// Train and score ablated variants over several seeds.
    Ablate(AblateArgs),
    /// Plot precision-recall CSV files.
    PlotPr(PlotPrArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub train: Option<usize>,
    #[arg(long)]
    pub val: Option<usize>,
    #[arg(long)]
    pub test: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Tiny backbone on 64x64 photos.
    Desk,
    /// Full backbone on 256x256 photos.
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Mixture components.
    #[arg(long)]
    pub mixtures: Option<usize>,
    #[arg(long)]
    pub no_eqv: bool,
    #[arg(long)]
    pub attention_1d: bool,
    #[arg(long)]
    pub single_scale: bool,
    #[arg(long)]
    pub no_pen_state: bool,
    #[arg(long)]
    pub l1_regression: bool,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub photos: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    /// Most likely component mean and pen state at every step.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attention overlay every this many steps.
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long)]
    pub t_max: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SaliencySource {
    FreeRunning,
    TeacherForced,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(required = true)]
    pub photos: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = SaliencySource::FreeRunning)]
    pub mode: SaliencySource,
    /// NDJSON sketches, one per photo in order (teacher-forced mode).
    #[arg(long)]
    pub sketches: Option<PathBuf>,
    #[arg(long)]
    pub t_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    /// Score the ground-truth masks themselves.
    #[arg(long)]
    pub oracle: bool,
    /// Photo side for the oracle.
    #[arg(long, default_value_t = 64)]
    pub side: usize,
    #[arg(long)]
    pub t_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BackboneArgs {
    #[arg(long, required_unless_present = "random_init")]
    pub checkpoint: Option<PathBuf>,
    /// Fresh weights (the checkpoint's architecture if one is given, else the desk preset).
    #[arg(long)]
    pub random_init: bool,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub kernel: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: BackboneArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: BackboneArgs,
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "full,no_eqv,attention_1d,single_scale,no_pen_state,l1_regression")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PlotPrArgs {
    /// CSV files with `threshold,precision,recall` rows.
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    #[arg(short, long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 480)]
    pub width: u32,
    #[arg(long, default_value_t = 480)]
    pub height: u32,
}

#[derive(Debug)]
pub struct CommandResult {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Manifest { .. } | Error::UnsupportedTransform(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = Result<CommandResult, Failure>;

pub fn run(cli: Cli) -> Outcome {
    let g = &cli.global;
    if g.jobs > 0 {
        // a second call (e.g. from tests running in-process) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(g.jobs).build_global();
    }
    let res = match &cli.command {
        Command::Synth(a) => synth(g, a),
        Command::Train(a) => train_cmd(g, a),
        Command::Generate(a) => generate_cmd(g, a),
        Command::Saliency(a) => saliency_cmd(g, a),
        Command::Eval(a) => eval_cmd(g, a),
        Command::Probe(a) => probe_cmd(g, a),
        Command::Finetune(a) => finetune_cmd(g, a),
        Command::Ablate(a) => ablate_cmd(g, a),
        Command::PlotPr(a) => plot_pr_cmd(g, a),
    }?;
    for a in &res.artifacts {
        if !a.exists() {
            return Err(Failure::Runtime(anyhow::anyhow!("artifact {} was not written", a.display())));
        }
    }
    Ok(res)
}

fn require_file(p: &Path, what: &str) -> Result<(), Failure> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", p.display())))
    }
}

fn no_config(g: &Global, cmd: &str) -> Result<(), Failure> {
    match &g.config {
        Some(_) => Err(Failure::Usage(format!("{cmd} takes no --config"))),
        None => Ok(()),
    }
}

/// Create `dir`, refusing one that already has entries unless forced.
fn prepare_out(dir: &Path, force: bool) -> Result<(), Failure> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Failure::Usage(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(Failure::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>, artifacts: &mut Vec<PathBuf>) -> Result<(), Failure> {
    fs::write(&path, contents)?;
    artifacts.push(path);
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn manifest(path: &Path) -> Result<DatasetManifest, Failure> {
    require_file(path, "manifest")?;
    Ok(load_manifest(path)?)
}

fn split(m: &DatasetManifest, s: Split, side: usize) -> Result<Vec<PairedSample>, Failure> {
    let data = load_split(m, s, side)?;
    if data.is_empty() {
        return Err(Failure::Usage(format!("dataset has no {} samples", s.name())));
    }
    Ok(data)
}

fn load_checkpoint(p: &Path) -> Result<Checkpoint, Failure> {
    require_file(p, "checkpoint")?;
    Checkpoint::load(p).map_err(|e| Failure::Usage(e.to_string()))
}

fn synth(g: &Global, a: &SynthArgs) -> Outcome {
    let mut cfg = layered(&SynthConfig::default(), g.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.side {
        cfg.side = v;
    }
    if let Some(v) = a.train {
        cfg.train = v;
    }
    if let Some(v) = a.val {
        cfg.val = v;
    }
    if let Some(v) = a.test {
        cfg.test = v;
    }
    cfg.validate()?;
    prepare_out(&a.out, g.force)?;
    let mp = write_synthetic_dataset(&cfg, &a.out)?;
    let mut artifacts = vec![mp.clone()];
    write(a.out.join("synth_config.json"), to_json(&cfg), &mut artifacts)?;
    let m = load_manifest(&mp)?;
    artifacts.push(m.sketches_path());
    Ok(CommandResult {
        summary: format!(
            "synthesized {} train / {} val / {} test pairs at {}x{}",
            cfg.train, cfg.val, cfg.test, cfg.side, cfg.side
        ),
        artifacts,
    })
}

fn train_cmd(g: &Global, a: &TrainArgs) -> Outcome {
    let m = manifest(&a.data)?;
    let ck_path = a.out.join(CHECKPOINT_FILE);
    let resume = if a.resume {
        Some(load_checkpoint(&ck_path)?)
    } else {
        prepare_out(&a.out, g.force)?;
        None
    };
    let base = match (&resume, a.preset) {
        (Some(ck), _) => ck.train.clone(),
        (None, Preset::Desk) => TrainConfig::desk(),
        (None, Preset::Full) => TrainConfig::default(),
    };
    let mut cfg = layered(&base, g.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.mixtures {
        cfg.m = v;
    }
    let ab = &mut cfg.ablations;
    ab.no_eqv |= a.no_eqv;
    ab.attention_1d |= a.attention_1d;
    ab.single_scale |= a.single_scale;
    ab.no_pen_state |= a.no_pen_state;
    ab.l1_regression |= a.l1_regression;
    cfg.jobs = g.jobs;
    cfg.validate()?;
    let data = split(&m, Split::Train, cfg.image_side)?;
    let out = train(
        &cfg,
        &data,
        TrainOptions {
            out_dir: Some(a.out.clone()),
            resume,
            max_epochs: None,
        },
    )?;
    let mut artifacts = vec![ck_path, a.out.join(LOG_FILE)];
    let summary = json!({
        "epochs": out.checkpoint.epoch,
        "samples": data.len(),
        "scale_factor": out.checkpoint.model.scale_factor,
        "initial": out.initial,
        "final": out.final_report,
    });
    write(a.out.join("train_summary.json"), to_json(&summary), &mut artifacts)?;
    write(a.out.join("train_config.json"), to_json(&cfg), &mut artifacts)?;
    Ok(CommandResult {
        summary: format!(
            "trained {} epochs on {} samples: stroke loss {:.4} -> {:.4}",
            out.checkpoint.epoch,
            data.len(),
            out.initial.stroke,
            out.final_report.stroke
        ),
        artifacts,
    })
}

fn load_photos(paths: &[PathBuf]) -> Result<Vec<PhotoSample>, Failure> {
    let mut out: Vec<PhotoSample> = Vec::with_capacity(paths.len());
    for p in paths {
        require_file(p, "photo")?;
        let photo = load_photo(p).map_err(|e| Failure::Usage(e.to_string()))?;
        if out.iter().any(|q| q.id == photo.id) {
            return Err(Failure::Usage(format!("two photos share the name {:?}", photo.id)));
        }
        out.push(photo);
    }
    Ok(out)
}

#[derive(Serialize)]
struct GeneratedRecord {
    id: String,
    steps: usize,
    #[serde(flatten)]
    sketch: SketchRecord,
}

fn generate_cmd(g: &Global, a: &GenerateArgs) -> Outcome {
    no_config(g, "generate")?;
    if a.every == 0 {
        return Err(Failure::Usage("--every must be positive".into()));
    }
    if !(a.temperature > 0.0) {
        return Err(Failure::Usage("--temperature must be positive".into()));
    }
    let ck = load_checkpoint(&a.checkpoint)?;
    let photos = load_photos(&a.photos)?;
    prepare_out(&a.out, g.force)?;
    let model = &ck.model;
    let side = model.config.image_side;
    let t_max = a.t_max.unwrap_or(ck.train.t_max);
    let opts = SampleOptions {
        temperature: a.temperature,
        greedy: a.greedy,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut artifacts = Vec::new();
    let mut ndjson = String::new();
    for photo in &photos {
        let input = resize_photo(photo, side);
        let gen = generate(model, &input, &mut rng, opts, t_max)?;
        let points = offsets_to_absolute(&gen.sketch, (side as f64 / 2.0, side as f64 / 2.0));
        let canvas = Canvas::square(side);
        let rec = GeneratedRecord {
            id: photo.id.clone(),
            steps: gen.maps.len(),
            sketch: SketchRecord::from_points(&points, canvas),
        };
        ndjson.push_str(&serde_json::to_string(&rec).expect("serializable"));
        ndjson.push('\n');
        let raster = rasterize(&points, canvas, 1);
        let p = a.out.join(format!("{}_sketch.png", photo.id));
        save_mask(&p, &raster.pixels, side, side)?;
        artifacts.push(p);
        let ones = vec![1.0; gen.maps.len()];
        let mut ends: Vec<usize> = (a.every..=gen.maps.len()).step_by(a.every).collect();
        if ends.last() != Some(&gen.maps.len()) {
            ends.push(gen.maps.len());
        }
        for end in ends {
            let low = accumulate(&gen.maps[..end], &ones[..end])?;
            let map = upsample(&low, photo.height(), photo.width());
            let p = a.out.join(format!("{}_attention_{end:04}.png", photo.id));
            save_photo(&p, &overlay(photo, &map.values, 0.7))?;
            artifacts.push(p);
        }
    }
    write(a.out.join("sketches.ndjson"), ndjson, &mut artifacts)?;
    Ok(CommandResult {
        summary: format!("generated {} sketches", photos.len()),
        artifacts,
    })
}

fn read_sketches(path: &Path, n: usize, side: usize, scale: f64) -> Result<Vec<SketchSequence>, Failure> {
    require_file(path, "sketch file")?;
    let file = fs::File::open(path)?;
    let records = read_ndjson(std::io::BufReader::new(file)).map_err(|e| Failure::Usage(e.to_string()))?;
    if records.len() != n {
        return Err(Failure::Usage(format!("{} sketches for {n} photos", records.len())));
    }
    records
        .iter()
        .map(|r| {
            let pts = rescale_points(&r.to_points()?, r.canvas(), side);
            absolute_to_offsets(&pts, Canvas::square(side), scale)
        })
        .collect::<s2s_core::Result<_>>()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn saliency_cmd(g: &Global, a: &SaliencyArgs) -> Outcome {
    no_config(g, "saliency")?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let photos = load_photos(&a.photos)?;
    let model = &ck.model;
    let side = model.config.image_side;
    let sketches = match (a.mode, &a.sketches) {
        (SaliencySource::TeacherForced, Some(p)) => Some(read_sketches(p, photos.len(), side, model.scale_factor)?),
        (SaliencySource::TeacherForced, None) => {
            return Err(Failure::Usage("teacher-forced saliency needs --sketches".into()))
        }
        (SaliencySource::FreeRunning, Some(_)) => {
            return Err(Failure::Usage("--sketches is only used in teacher-forced mode".into()))
        }
        (SaliencySource::FreeRunning, None) => None,
    };
    prepare_out(&a.out, g.force)?;
    let t_max = a.t_max.unwrap_or(ck.train.t_max);
    let mut artifacts = Vec::new();
    for (i, photo) in photos.iter().enumerate() {
        let input = resize_photo(photo, side);
        let mode = match &sketches {
            Some(s) => SaliencyMode::TeacherForced(&s[i]),
            None => SaliencyMode::FreeRunning(SampleOptions::greedy()),
        };
        let low = predict_low_res(model, &input, mode, t_max)?;
        let map = upsample(&low, photo.height(), photo.width());
        let p = a.out.join(format!("{}.png", photo.id));
        save_gray(&p, &map.values, map.height, map.width)?;
        artifacts.push(p);
    }
    Ok(CommandResult {
        summary: format!("wrote {} saliency maps", photos.len()),
        artifacts,
    })
}

fn pr_csv(report: &EvalReport, cfg: &EvalConfig) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for (k, (r, p)) in report.pr_curve.iter().enumerate() {
        s.push_str(&format!("{:.6},{p:.6},{r:.6}\n", cfg.metric.threshold(k)));
    }
    s
}

fn write_mode(
    out: &Path,
    name: &str,
    report: &EvalReport,
    per_image: &[s2s_core::metrics::ImageScores],
    cfg: &EvalConfig,
    artifacts: &mut Vec<PathBuf>,
) -> Result<(), Failure> {
    write(out.join(format!("per_image_{name}.csv")), per_image_csv(per_image), artifacts)?;
    write(out.join(format!("pr_{name}.csv")), pr_csv(report, cfg), artifacts)?;
    let p = out.join(format!("pr_{name}.png"));
    save_png(&pr_plot(&[report.pr_curve.clone()], 480, 480)?, &p)?;
    artifacts.push(p);
    Ok(())
}

fn eval_cmd(g: &Global, a: &EvalArgs) -> Outcome {
    let mut cfg = layered(&EvalConfig::default(), g.config.as_deref())?;
    cfg.metric.validate()?;
    let m = manifest(&a.data)?;
    let ck = match (&a.checkpoint, a.oracle) {
        (Some(_), true) => return Err(Failure::Usage("--oracle takes no checkpoint".into())),
        (Some(p), false) => Some(load_checkpoint(p)?),
        (None, _) => None,
    };
    let side = ck.as_ref().map_or(a.side, |c| c.model.config.image_side);
    let data = split(&m, Split::Test, side)?;
    if data.iter().any(|s| s.gt_mask.is_none()) {
        return Err(Failure::Usage("every test sample needs a mask".into()));
    }
    prepare_out(&a.out, g.force)?;
    let mut artifacts = Vec::new();
    let (report_json, summary) = match &ck {
        None => {
            let preds: Vec<Vec<f64>> = data.iter().map(|s| s.mask_f64().expect("checked")).collect();
            let (report, per) = evaluate_predictions(&preds, &data, &cfg.metric)?;
            write_mode(&a.out, "oracle", &report, &per, &cfg, &mut artifacts)?;
            let summary = format!("oracle: max F {:.4}, MAE {:.4}", report.max_fbeta, report.mae);
            (json!({ "oracle": report }), summary)
        }
        Some(ck) => {
            cfg.t_max = a.t_max.unwrap_or(ck.train.t_max);
            let s = evaluate(&ck.model, &data, &cfg)?;
            let mut parts = Vec::new();
            for mr in &s.modes {
                write_mode(&a.out, mr.mode.name(), &mr.report, &mr.per_image, &cfg, &mut artifacts)?;
                parts.push(format!(
                    "{}: max F {:.4}, MAE {:.4}, S {:.4}",
                    mr.mode.name(),
                    mr.report.max_fbeta,
                    mr.report.mae,
                    mr.report.s_measure
                ));
            }
            (serde_json::to_value(&s).expect("serializable"), parts.join("; "))
        }
    };
    let report = json!({ "config": cfg, "images": data.len(), "results": report_json });
    write(a.out.join("eval_report.json"), to_json(&report), &mut artifacts)?;
    Ok(CommandResult { summary, artifacts })
}

/// Trained or freshly initialized model plus a label for reports.
fn backbone(a: &BackboneArgs) -> Result<(Model, String), Failure> {
    let ck = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    if !a.random_init {
        let ck = ck.expect("clap requires a checkpoint without --random-init");
        return Ok((ck.model, "checkpoint".into()));
    }
    let cfg = ck.map_or_else(TrainConfig::desk, |c| c.train);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.unwrap_or(0));
    Ok((Model::new(cfg.model_config(), &mut rng)?, "random_init".into()))
}

fn probe_cmd(g: &Global, a: &ProbeArgs) -> Outcome {
    let c = &a.common;
    let mut cfg = layered(&ProbeConfig::default(), g.config.as_deref())?;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.kernel {
        cfg.kernel = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    let m = manifest(&c.data)?;
    let (model, source) = backbone(c)?;
    let side = model.config.image_side;
    let (train_set, test) = (split(&m, Split::Train, side)?, split(&m, Split::Test, side)?);
    prepare_out(&c.out, g.force)?;
    let eval = EvalConfig::default();
    let out = linear_probe(&model, &train_set, &test, &cfg, &eval.metric)?;
    let mut artifacts = Vec::new();
    let report = json!({ "backbone": source, "config": cfg, "outcome": out });
    write(c.out.join("probe_report.json"), to_json(&report), &mut artifacts)?;
    Ok(CommandResult {
        summary: format!(
            "{}x{} probe on {source} backbone: max F {:.4}, MAE {:.4}",
            cfg.kernel, cfg.kernel, out.report.max_fbeta, out.report.mae
        ),
        artifacts,
    })
}

fn finetune_cmd(g: &Global, a: &FinetuneArgs) -> Outcome {
    let c = &a.common;
    let mut cfg = layered(&FinetuneConfig::default(), g.config.as_deref())?;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = c.kernel {
        cfg.kernel = v;
    }
    if let Some(v) = a.fraction {
        cfg.fraction = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    let m = manifest(&c.data)?;
    let (model, source) = backbone(c)?;
    let side = model.config.image_side;
    let (train_set, test) = (split(&m, Split::Train, side)?, split(&m, Split::Test, side)?);
    prepare_out(&c.out, g.force)?;
    let eval = EvalConfig::default();
    let out = finetune_fraction(&model, &train_set, &test, &cfg, &eval.metric)?;
    let mut artifacts = Vec::new();
    let report = json!({ "backbone": source, "config": cfg, "outcome": out });
    write(c.out.join("finetune_report.json"), to_json(&report), &mut artifacts)?;
    Ok(CommandResult {
        summary: format!(
            "fine-tuned {source} backbone on {:.0}% of the labels: max F {:.4}, MAE {:.4}",
            100.0 * cfg.fraction,
            out.report.max_fbeta,
            out.report.mae
        ),
        artifacts,
    })
}

fn ablate_cmd(g: &Global, a: &AblateArgs) -> Outcome {
    let mut base = layered(&TrainConfig::desk(), g.config.as_deref())?;
    if let Some(v) = a.epochs {
        base.epochs = v;
    }
    base.jobs = g.jobs;
    base.validate()?;
    let variants = a.variants.iter().map(|v| Variant::parse(v)).collect::<s2s_core::Result<Vec<_>>>()?;
    if a.seeds.is_empty() {
        return Err(Failure::Usage("need at least one seed".into()));
    }
    let m = manifest(&a.data)?;
    let (train_set, test) = (split(&m, Split::Train, base.image_side)?, split(&m, Split::Test, base.image_side)?);
    prepare_out(&a.out, g.force)?;
    let table = run_ablation_suite(&base, &variants, &a.seeds, &train_set, &test, &EvalConfig::default(), Some(&a.out))?;
    let mut artifacts = vec![a.out.join("ablation.csv"), a.out.join("ablation.md")];
    write(a.out.join("ablation.json"), to_json(&table), &mut artifacts)?;
    let names = table.variants();
    let bars: Vec<(usize, f64)> = names
        .iter()
        .enumerate()
        .map(|(i, v)| (i, table.median_max_fbeta(v).unwrap_or(0.0)))
        .collect();
    let p = a.out.join("ablation.png");
    save_png(&bar_plot(&bars, 480, 320)?, &p)?;
    artifacts.push(p);
    let best = names
        .iter()
        .zip(&bars)
        .max_by(|x, y| x.1 .1.total_cmp(&y.1 .1))
        .map(|(n, b)| format!("{n} ({:.4})", b.1))
        .unwrap_or_default();
    Ok(CommandResult {
        summary: format!(
            "{} variants x {} seeds; best median max F: {best}",
            variants.len(),
            a.seeds.len()
        ),
        artifacts,
    })
}

fn plot_pr_cmd(g: &Global, a: &PlotPrArgs) -> Outcome {
    no_config(g, "plot-pr")?;
    let mut curves = Vec::new();
    for p in &a.curves {
        require_file(p, "curve")?;
        let text = fs::read_to_string(p)?;
        curves.push(read_pr_csv(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?);
    }
    let img = pr_plot(&curves, a.width, a.height)?;
    prepare_out(&a.out, g.force)?;
    let p = a.out.join("pr.png");
    save_png(&img, &p)?;
    let legend: String = a
        .curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let [r, gr, b] = s2s_core::plot::PALETTE[i % s2s_core::plot::PALETTE.len()];
            format!("#{r:02x}{gr:02x}{b:02x},{}\n", c.display())
        })
        .collect();
    let mut artifacts = vec![p];
    write(a.out.join("legend.csv"), format!("colour,curve\n{legend}"), &mut artifacts)?;
    Ok(CommandResult {
        summary: format!("plotted {} curves", curves.len()),
        artifacts,
    })
}
