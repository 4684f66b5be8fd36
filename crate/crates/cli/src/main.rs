use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use promerge::bench::{bench, DirSource};
use promerge::eval::{evaluate_with, rle_encode, ImageMasks, IouKind, MaskEntry, MaskFile};
use promerge::features::list_feature_files;
use promerge::pipeline::predictions_file;
use promerge::synth::synth_scene;
use promerge::{load_feature_map, run_pipeline_with, save_feature_map, Execution, PipelineConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "promerge", version, about = "Prompt, prune and merge instance segmentation over patch features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one feature file or every `.pmfm` file of a directory.
    Segment(SegmentArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Time the pipeline over a directory of feature files.
    Bench(BenchArgs),
    /// Write synthetic scenes and their ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration field; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output mask size, e.g. 480x480.
    #[arg(long, value_name = "HxW", value_parser = parse_size)]
    size: Option<[usize; 2]>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Box IoU instead of mask IoU.
    #[arg(long = "box")]
    use_box: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long, default_value_t = 100)]
    measure: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    objects: usize,
    #[arg(long)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    height: usize,
    #[arg(long, default_value_t = 60)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    channels: usize,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl From<promerge::Error> for Failure {
    fn from(e: promerge::Error) -> Self {
        Failure {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        promerge::Error::from(e).into()
    }
}

/// Prefixes the error message with the path involved.
fn at<T>(path: &Path, r: promerge::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure {
        kind: e.kind(),
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let dim = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("bad size `{s}`: {e}"));
    Ok([dim(h)?, dim(w)?])
}

impl ConfigArgs {
    fn resolve(&self) -> Result<(PipelineConfig, Execution), Failure> {
        let mut cfg = match &self.config {
            Some(p) => at(p, PipelineConfig::load(p))?,
            None => PipelineConfig::default(),
        };
        for pair in &self.set {
            let (k, v) = pair.split_once('=').ok_or_else(|| Failure {
                kind: "Config",
                message: format!("--set expects KEY=VALUE, got `{pair}`"),
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        Ok((cfg, exec))
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn image_id(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn segment(args: &SegmentArgs) -> Result<String, Failure> {
    let (mut cfg, exec) = args.config.resolve()?;
    if let Some(size) = args.size {
        cfg.output_size = Some(size);
        cfg.validate()?;
    }
    let paths = if args.features.is_dir() {
        at(&args.features, list_feature_files(&args.features))?
    } else {
        vec![args.features.clone()]
    };
    let results = exec.try_map(&paths, |p| {
        let fm = at(p, load_feature_map(p))?;
        let mut r = at(p, run_pipeline_with(&fm, &cfg, exec))?;
        r.image_id = image_id(p);
        Ok::<_, Failure>(r)
    })?;
    at(&args.out, predictions_file(&results).write(&args.out))?;
    pretty(&json!({
        "images": results.len(),
        "masks": results.iter().map(|r| r.masks.len()).sum::<usize>(),
        "out": args.out,
    }))
}

fn eval(args: &EvalArgs) -> Result<String, Failure> {
    let pred = at(&args.pred, MaskFile::read(&args.pred))?;
    let gt = at(&args.gt, MaskFile::read(&args.gt))?;
    let kind = if args.use_box { IouKind::Box } else { IouKind::Mask };
    let report = evaluate_with(&pred, &gt, kind, Execution::Parallel)?;
    at(&args.out, fs::write(&args.out, serde_json::to_string_pretty(&report)?).map_err(Into::into))?;
    pretty(&json!({
        "ap": report.ap,
        "ap50": report.ap50,
        "ar100": report.ar100,
        "num_images": report.num_images,
        "no_ground_truth": report.no_ground_truth,
        "out": args.out,
    }))
}

fn run_bench(args: &BenchArgs) -> Result<String, Failure> {
    let (cfg, exec) = args.config.resolve()?;
    let source = at(&args.features, DirSource::open(&args.features))?;
    let report = bench(&source, args.warmup, args.measure, &cfg, exec)?;
    pretty(&report)
}

fn synth(args: &SynthArgs) -> Result<String, Failure> {
    at(&args.out, fs::create_dir_all(&args.out).map_err(Into::into))?;
    let mut gt = MaskFile::default();
    for i in 0..args.count {
        let scene = synth_scene(
            args.height,
            args.width,
            args.channels,
            args.objects,
            args.noise,
            args.seed.wrapping_add(i as u64),
        )?;
        let name = format!("scene_{i:04}");
        let path = args.out.join(format!("{name}.pmfm"));
        at(&path, save_feature_map(&scene.features, &path))?;
        gt.images.push(ImageMasks {
            image_id: name,
            height: args.height,
            width: args.width,
            masks: scene
                .objects
                .iter()
                .map(|m| MaskEntry {
                    counts: rle_encode(m).counts,
                    score: None,
                })
                .collect(),
        });
    }
    let gt_path = args.out.join("gt.json");
    at(&gt_path, gt.write(&gt_path))?;
    pretty(&json!({ "scenes": args.count, "gt": gt_path }))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({ "error": "Usage", "message": message.trim() }));
            return ExitCode::from(2);
        }
    };
    let outcome = match &cli.command {
        Command::Segment(a) => segment(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Synth(a) => synth(a),
    };
    match outcome {
        Ok(summary) => {
            // a closed stdout is not worth a panic
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "message": f.message }));
            ExitCode::FAILURE
        }
    }
}
