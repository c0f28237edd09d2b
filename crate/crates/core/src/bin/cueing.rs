//! Command-line front end: dataset synthesis and cleansing, training,
//! evaluation, rendering, complexity accounting and benchmarking.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use cueing::cleanse::{cleanse_dataset, CleanseOptions};
use cueing::data::{load_manifest, save_gaze_map, save_image, DatasetManifest, Image};
use cueing::eval::{evaluate, predict_map, RenderParams};
use cueing::model::{count_flops, load_checkpoint, param_breakdown, parse_key_values, save_checkpoint, CueingModel, ModelConfig};
use cueing::render::overlay;
use cueing::synth::{synth_dataset, SynthSpec};
use cueing::train::{load_frames, sample_finetune_subset, train_manifest, TrainConfig};
use cueing::verify::{run_suite, VerifyOptions};
use cueing::{Error, Result};

#[derive(Parser)]
#[command(name = "cueing", version, about = "Driver gaze prediction: cleanse, train, evaluate, render")]
struct Cli {
    /// Worker threads for per-frame parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Plain-text key=value settings file, applied before flags.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra key=value override (repeatable), applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Mask images and gaze maps outside the annotated boxes.
    Cleanse(CleanseArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Continue training a checkpoint on a random subset of a dataset.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write one predicted gaze map PNG per frame.
    Predict(PredictArgs),
    /// Write predicted gaze overlays.
    Render(RenderArgs),
    /// Print parameter counts and per-stage multiply-accumulates.
    Complexity(ComplexityArgs),
    /// Run the finite-difference gradient verification suite.
    Gradcheck(GradcheckArgs),
    /// Time single-image inference.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Probability of one gaze blob outside every box.
    #[arg(long)]
    distractor_prob: Option<f64>,
}

#[derive(Args)]
struct CleanseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Leave frames whose masked gaze is all zero out of the new manifest.
    #[arg(long)]
    drop_empty_gaze: bool,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// none, attention or all_except_linear.
    #[arg(long)]
    freeze: Option<String>,
    /// Skip frames whose gaze map is entirely zero.
    #[arg(long)]
    drop_empty_gaze: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Fraction of the manifest to train on [default: 0.02].
    #[arg(long)]
    fraction: Option<f64>,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct RenderFlags {
    /// Blur width in pixels; defaults to width/64.
    #[arg(long)]
    sigma: Option<f64>,
    /// bilinear or bicubic.
    #[arg(long)]
    interpolation: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderFlags,
    #[arg(long)]
    threshold: Option<f32>,
    /// objects or pixels.
    #[arg(long)]
    auc: Option<String>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderFlags,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderFlags,
    /// Heat-map opacity in [0, 1] [default: 0.5].
    #[arg(long)]
    alpha: Option<f32>,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: u64,
    /// Random draws per primitive.
    #[arg(long, default_value_t = 20)]
    draws: u64,
    /// Sampled coordinates per parameter tensor in the full-model check.
    #[arg(long, default_value_t = 24)]
    coords: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Benchmark on the first frame of this manifest instead of a flat gray image.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Every tunable, layered as defaults < config file < flags.
#[derive(Default)]
struct Settings {
    model: ModelConfig,
    train: TrainConfig,
    render: RenderParams,
    synth: SynthSpec,
    alpha: f32,
    fraction: f64,
    /// Model keys that were set explicitly.
    model_keys: Vec<String>,
}

impl Settings {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "seed" {
            let seed: u64 = value
                .parse()
                .map_err(|_| Error::Config(format!("`seed` expects a number, got `{value}`")))?;
            self.model.seed = seed;
            self.train.seed = seed;
            self.synth.seed = seed;
            return Ok(());
        }
        match key {
            "render.alpha" => {
                self.alpha = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))?;
                return Ok(());
            }
            "finetune.fraction" => {
                self.fraction = value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{value}`")))?;
                return Ok(());
            }
            _ => {}
        }
        if self.train.apply(key, value)? || self.render.apply(key, value)? || self.synth.apply(key, value)? {
            return Ok(());
        }
        self.model.apply(key, value)?;
        self.model_keys.push(key.to_string());
        Ok(())
    }

    fn set(&mut self, key: &str, value: Option<impl ToString>) -> Result<()> {
        match value {
            Some(v) => self.apply(key, &v.to_string()),
            None => Ok(()),
        }
    }

    fn model_flags(&mut self, m: &ModelFlags) -> Result<()> {
        self.set("tokens", m.tokens)?;
        self.set("width", m.width)?;
        self.set("height", m.height)
    }

    fn train_flags(&mut self, t: &TrainFlags) -> Result<()> {
        self.set("epochs", t.epochs)?;
        self.set("batch_size", t.batch_size)?;
        self.set("max_steps", t.max_steps)?;
        self.set("lr", t.lr)?;
        self.set("freeze", t.freeze.as_ref())?;
        if t.drop_empty_gaze {
            self.apply("drop_empty_gaze", "true")?;
        }
        Ok(())
    }

    fn render_flags(&mut self, r: &RenderFlags) -> Result<()> {
        self.set("render.sigma", r.sigma)?;
        self.set("render.interpolation", r.interpolation.as_ref())
    }

    /// Commands that load a checkpoint take the architecture from it.
    fn reject_model_keys(&self) -> Result<()> {
        match self.model_keys.first() {
            Some(k) => Err(Error::Config(format!(
                "`{k}` cannot be set here: the model architecture comes from the checkpoint"
            ))),
            None => Ok(()),
        }
    }
}

fn base_settings(cli: &Cli) -> Result<Settings> {
    let mut s = Settings {
        alpha: 0.5,
        fraction: 0.02,
        ..Settings::default()
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (k, v) in parse_key_values(&text)? {
            s.apply(&k, &v)?;
        }
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        s.apply(k.trim(), v.trim())?;
    }
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn echo_config(out: &Path, sections: &[String]) -> Result<()> {
    write_text(&out.join("config.txt"), &sections.concat())
}

fn open_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest(path)
}

fn cmd_synth(s: &mut Settings, a: &SynthArgs) -> Result<()> {
    s.synth.seed = a.seed;
    s.set("synth.frames", a.frames)?;
    s.set("synth.width", a.width)?;
    s.set("synth.height", a.height)?;
    s.set("synth.distractor_prob", a.distractor_prob)?;
    let manifest = synth_dataset(&s.synth, &a.out)?;
    echo_config(&a.out, &[s.synth.to_text()])?;
    println!("wrote {} frames to {}", manifest.len(), a.out.display());
    Ok(())
}

fn cmd_cleanse(s: &mut Settings, a: &CleanseArgs) -> Result<()> {
    if a.drop_empty_gaze {
        s.train.drop_empty_gaze = true;
    }
    let manifest = open_manifest(&a.manifest)?;
    let (out, report) = cleanse_dataset(
        &manifest,
        &a.out,
        CleanseOptions {
            drop_empty_gaze: s.train.drop_empty_gaze,
        },
    )?;
    echo_config(&a.out, &[format!("drop_empty_gaze={}\n", s.train.drop_empty_gaze)])?;
    print!("{}", report.to_text());
    println!("wrote {} entries to {}", out.len(), a.out.display());
    Ok(())
}

fn save_training(out: &Path, model: &CueingModel<f32>, history: &cueing::train::TrainHistory, extra: &str) -> Result<()> {
    create_dir(out)?;
    save_checkpoint(model, &out.join("model.ckpt"))?;
    write_text(&out.join("history.tsv"), &history.to_text())?;
    let mut steps = String::from("step\tloss\n");
    for (i, l) in history.step_loss.iter().enumerate() {
        steps.push_str(&format!("{}\t{l}\n", i + 1));
    }
    write_text(&out.join("steps.tsv"), &steps)?;
    echo_config(out, &[model.config().to_text(), extra.to_string()])
}

fn cmd_train(s: &mut Settings, a: &TrainArgs) -> Result<()> {
    s.apply("seed", &a.seed.to_string())?;
    s.model_flags(&a.model)?;
    s.train_flags(&a.train)?;
    let manifest = open_manifest(&a.manifest)?;
    let mut model = CueingModel::init(s.model.clone(), s.model.seed)?;
    let history = train_manifest(&mut model, &manifest, &s.train)?;
    save_training(&a.out, &model, &history, &s.train.to_text())?;
    println!(
        "trained {} steps on {} frames; final epoch loss {}",
        history.steps,
        history.samples,
        history.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_finetune(s: &mut Settings, a: &FinetuneArgs) -> Result<()> {
    s.reject_model_keys()?;
    s.train.seed = a.seed;
    s.set("finetune.fraction", a.fraction)?;
    s.train_flags(&a.train)?;
    let mut model = load_checkpoint(&a.checkpoint)?;
    let manifest = open_manifest(&a.manifest)?;
    let subset = sample_finetune_subset(&manifest, s.fraction, a.seed)?;
    let history = train_manifest(&mut model, &subset, &s.train)?;
    let ids: String = subset.entries.iter().map(|e| e.id() + "\n").collect();
    write_text(&a.out.join("subset.txt"), &ids)?;
    save_training(&a.out, &model, &history, &format!("{}finetune.fraction={}\n", s.train.to_text(), s.fraction))?;
    println!(
        "fine-tuned {} steps on {} of {} frames ({} trainable parameters)",
        history.steps,
        subset.len(),
        manifest.len(),
        model.count_params(true)
    );
    Ok(())
}

fn cmd_eval(s: &mut Settings, a: &EvalArgs) -> Result<()> {
    s.reject_model_keys()?;
    s.render_flags(&a.render)?;
    s.set("eval.threshold", a.threshold)?;
    s.set("eval.auc", a.auc.as_ref())?;
    let model = load_checkpoint(&a.checkpoint)?;
    let manifest = open_manifest(&a.manifest)?;
    let report = evaluate(&model, &manifest, &s.render)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("report.txt"), &report.to_text())?;
    write_text(&a.out.join("frames.txt"), &report.frames_text())?;
    echo_config(&a.out, &[model.config().to_text(), s.render.to_text()])?;
    print!("{}", report.to_text());
    Ok(())
}

fn predicted_maps(s: &Settings, checkpoint: &Path, manifest: &Path) -> Result<(CueingModel<f32>, Vec<(cueing::data::Frame, cueing::data::GazeMap)>)> {
    use rayon::prelude::*;
    let model = load_checkpoint(checkpoint)?;
    let manifest = open_manifest(manifest)?;
    let frames = load_frames(&manifest, model.config().width, model.config().height)?;
    let maps = frames
        .into_par_iter()
        .map(|f| {
            let m = predict_map(&model, &f, &s.render)?;
            Ok((f, m))
        })
        .collect::<Result<_>>()?;
    Ok((model, maps))
}

fn cmd_predict(s: &mut Settings, a: &PredictArgs) -> Result<()> {
    s.reject_model_keys()?;
    s.render_flags(&a.render)?;
    let (model, maps) = predicted_maps(s, &a.checkpoint, &a.manifest)?;
    for (f, m) in &maps {
        save_gaze_map(m, &a.out.join("gaze").join(format!("{}.png", f.id)))?;
    }
    echo_config(&a.out, &[model.config().to_text(), s.render.to_text()])?;
    println!("wrote {} gaze maps to {}", maps.len(), a.out.join("gaze").display());
    Ok(())
}

fn cmd_render(s: &mut Settings, a: &RenderArgs) -> Result<()> {
    s.reject_model_keys()?;
    s.render_flags(&a.render)?;
    s.set("render.alpha", a.alpha)?;
    let (model, maps) = predicted_maps(s, &a.checkpoint, &a.manifest)?;
    for (f, m) in &maps {
        let img = overlay(&f.image, m, s.alpha)?;
        save_image(&img, &a.out.join("overlays").join(format!("{}.png", f.id)))?;
    }
    echo_config(&a.out, &[model.config().to_text(), s.render.to_text(), format!("render.alpha={}\n", s.alpha)])?;
    println!("wrote {} overlays to {}", maps.len(), a.out.join("overlays").display());
    Ok(())
}

fn cmd_complexity(s: &mut Settings, a: &ComplexityArgs) -> Result<()> {
    s.model_flags(&a.model)?;
    s.model.validate()?;
    let mut text = String::new();
    let total: usize = param_breakdown(&s.model).iter().map(|(_, n)| n).sum();
    text.push_str(&format!("params={total}\n"));
    for (name, n) in param_breakdown(&s.model) {
        text.push_str(&format!("params.{name}={n}\n"));
    }
    text.push_str(&count_flops(&s.model)?.to_text());
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(&out.join("complexity.txt"), &text)?;
        echo_config(out, &[s.model.to_text()])?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<bool> {
    let opts = VerifyOptions {
        seeds: a.draws,
        model_coords: a.coords,
        base_seed: a.seed,
    };
    let start = Instant::now();
    let report = run_suite(&opts)?;
    let mut text = report.to_text();
    text.push_str(&format!(
        "{} in {:.1}s\n",
        if report.passed() { "all checks passed" } else { "gradient checks FAILED" },
        start.elapsed().as_secs_f64()
    ));
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(&out.join("gradcheck.txt"), &text)?;
        echo_config(out, &[format!("seed={}\ndraws={}\ncoords={}\n", a.seed, a.draws, a.coords)])?;
    }
    Ok(report.passed())
}

/// Peak resident set size in KiB, where the platform reports it.
fn peak_rss_kib() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank]
}

fn cmd_bench(s: &mut Settings, a: &BenchArgs) -> Result<()> {
    s.reject_model_keys()?;
    if a.iters == 0 {
        return Err(Error::Config("--iters must be at least 1".into()));
    }
    let model = load_checkpoint(&a.checkpoint)?;
    let (w, h) = (model.config().width, model.config().height);
    let image = match &a.manifest {
        Some(path) => {
            let manifest = open_manifest(path)?;
            let entry = manifest
                .entries
                .first()
                .ok_or_else(|| Error::Config(format!("manifest {} has no entries", path.display())))?;
            cueing::data::load_frame(&manifest, entry, w, h)?.image
        }
        None => Image::from_fn(h, w, |_, _, _| 0.5),
    };
    for _ in 0..a.warmup {
        model.predict(&image)?;
    }
    let mut ms = Vec::with_capacity(a.iters);
    for _ in 0..a.iters {
        let t = Instant::now();
        model.predict(&image)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    ms.sort_by(f64::total_cmp);
    let mut text = format!(
        "input={w}x{h}\ntokens={}\niters={}\nmean_ms={mean:.3}\np50_ms={:.3}\np95_ms={:.3}\n",
        model.config().tokens,
        a.iters,
        percentile(&ms, 0.5),
        percentile(&ms, 0.95)
    );
    text.push_str(&match peak_rss_kib() {
        Some(k) => format!("peak_rss_kib={k}\n"),
        None => "peak_rss_kib=unavailable\n".to_string(),
    });
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(&out.join("bench.txt"), &text)?;
        echo_config(out, &[model.config().to_text(), format!("iters={}\nwarmup={}\n", a.iters, a.warmup)])?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    let mut s = base_settings(cli)?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(&mut s, a)?,
        Command::Cleanse(a) => cmd_cleanse(&mut s, a)?,
        Command::Train(a) => cmd_train(&mut s, a)?,
        Command::Finetune(a) => cmd_finetune(&mut s, a)?,
        Command::Eval(a) => cmd_eval(&mut s, a)?,
        Command::Predict(a) => cmd_predict(&mut s, a)?,
        Command::Render(a) => cmd_render(&mut s, a)?,
        Command::Complexity(a) => cmd_complexity(&mut s, a)?,
        Command::Gradcheck(a) => return cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(&mut s, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let summary: Vec<&str> = rendered
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty() && !l.starts_with("Usage:"))
                .collect();
            eprintln!("{} (see --help)", summary.join(" "));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
