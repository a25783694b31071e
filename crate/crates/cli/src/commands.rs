use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use pgcycle::fog::{apply_fog, list_images, make_unpaired_set, synth_scene, FogParams, Transmission, UnpairedSetOptions};
use pgcycle::image::{load_image, save_image, Image, ValueRange};
use pgcycle::metrics::EvalReport;
use pgcycle::nn::Upsampler;
use pgcycle::prior::{
    corpus_histogram, dark_channel, gamma_enhance, heatmap, hist_equalize, inverted_dark_channel, normalize_min_max,
    DarkChannel, PriorMap,
};
use pgcycle::train::{run_training, DiscKind, Defogger, PriorWeighting, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "pgcycle", version, about = "Prior-guided unpaired defogging toolkit")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    pub fn log_level(&self) -> &'static str {
        if self.quiet {
            "warn"
        } else {
            "info"
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the prior map (or an intermediate map) of one image.
    Priormap(PriormapArgs),
    /// Histogram of inverted dark channels over a directory of images.
    Histogram(HistogramArgs),
    /// Add synthetic fog to one image.
    Fog(FogArgs),
    /// Build an unpaired foggy/clean training set.
    MakeDataset(MakeDatasetArgs),
    /// Train the defogging networks.
    Train(TrainArgs),
    /// Defog images with a trained checkpoint.
    Infer(InferArgs),
    /// Score defogged images.
    Eval(EvalArgs),
    /// Train one ablation variant.
    Ablate(AblateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapKind {
    /// Min-max normalised inverted dark channel.
    Prior,
    /// Channel minimum followed by a window minimum.
    Dark,
    /// One minus the channel minimum.
    Inverted,
    /// Inverted dark channel raised to --gamma.
    Gamma,
    /// Histogram-equalised inverted dark channel.
    Equalized,
}

#[derive(Debug, Args)]
struct PriormapArgs {
    input: PathBuf,
    output: PathBuf,
    #[arg(long, value_enum, default_value = "prior")]
    kind: MapKind,
    /// Window for --kind dark.
    #[arg(long, default_value_t = 15)]
    window: usize,
    #[arg(long, default_value_t = 3.0)]
    gamma: f64,
    /// Write a false-colour rendering instead of grayscale.
    #[arg(long)]
    heatmap: bool,
}

#[derive(Debug, Args)]
struct HistogramArgs {
    /// Directory of PNG/JPEG images.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; receives histogram.csv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Min-max normalise each map first (i.e. use prior maps).
    #[arg(long)]
    normalized: bool,
}

#[derive(Debug, Args)]
struct FogArgs {
    input: PathBuf,
    output: PathBuf,
    /// Airlight, one value or three comma-separated RGB values.
    #[arg(long, default_value = "0.9", value_delimiter = ',')]
    airlight: Vec<f64>,
    /// Constant transmission; without it a smooth random field is used.
    #[arg(long)]
    transmission: Option<f64>,
    #[arg(long, default_value_t = 0.3)]
    t_min: f64,
    #[arg(long, default_value_t = 0.9)]
    t_max: f64,
}

#[derive(Debug, Args)]
struct MakeDatasetArgs {
    /// Directory of clean source images.
    #[arg(long, required_unless_present = "synthetic")]
    clean_dir: Option<PathBuf>,
    /// Generate this many synthetic scenes as the source instead.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Side length of synthetic scenes.
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n_foggy: usize,
    #[arg(long, default_value_t = 8)]
    n_clean: usize,
    #[arg(long)]
    with_replacement: bool,
    #[arg(long, default_value_t = 0.9)]
    airlight: f64,
    #[arg(long, default_value_t = 0.3)]
    t_min: f64,
    #[arg(long, default_value_t = 0.9)]
    t_max: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Directory of foggy training images.
    #[arg(long)]
    foggy: PathBuf,
    /// Directory of clean training images.
    #[arg(long)]
    clean: PathBuf,
    /// Output directory for the loss log and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    resize_to: Option<usize>,
    #[arg(long)]
    crop_to: Option<usize>,
    #[arg(long)]
    max_iterations: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long, value_parser = ["input", "score", "none"])]
    prior_weighting: Option<String>,
    /// Give each cascade stage its own generator weights.
    #[arg(long)]
    per_stage_weights: bool,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image file or directory of images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the coarse, finer and finest stage outputs.
    #[arg(long)]
    emit_stages: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory of defogged images.
    #[arg(long)]
    input: PathBuf,
    /// Directory of ground-truth images with matching file names.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Output directory; receives eval.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    NoC2f,
    NoLrr,
    DeconvOnly,
    BilinearOnly,
    PixelshuffleOnly,
    NoPgcyc,
    PatchganDy,
    NoPrior,
}

impl Variant {
    pub fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Variant::NoC2f => cfg.coarse_to_fine = false,
            Variant::NoLrr => cfg.long_range_residual = false,
            Variant::DeconvOnly => cfg.upsampler = Upsampler::DeconvOnly,
            Variant::BilinearOnly => cfg.upsampler = Upsampler::BilinearOnly,
            Variant::PixelshuffleOnly => cfg.upsampler = Upsampler::PixelShuffleOnly,
            Variant::NoPgcyc => cfg.use_pgcyc = false,
            Variant::PatchganDy => cfg.disc_y = DiscKind::Patch,
            Variant::NoPrior => cfg.prior_weighting = PriorWeighting::None,
        }
    }
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long, value_enum)]
    variant: Variant,
    #[command(flatten)]
    train: TrainArgs,
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Priormap(a) => priormap(a),
        Command::Histogram(a) => histogram(a),
        Command::Fog(a) => fog(a, seed.unwrap_or(0)),
        Command::MakeDataset(a) => make_dataset(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed, None),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => train(a.train, seed, Some(a.variant)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn map_image(dc: &DarkChannel) -> Result<Image> {
    Ok(Image::new(dc.height, dc.width, 1, ValueRange::Unit, dc.data.clone())?)
}

fn priormap(a: PriormapArgs) -> Result<()> {
    let img = load_image(&a.input)?;
    let map = match a.kind {
        MapKind::Prior => {
            let pm = normalize_min_max(&inverted_dark_channel(&img)?);
            if pm.degenerate {
                log::warn!("{}: constant inverted dark channel, prior map is all ones", a.input.display());
            }
            pm.to_image()
        }
        MapKind::Dark => map_image(&dark_channel(&img, a.window)?)?,
        MapKind::Inverted => map_image(&inverted_dark_channel(&img)?)?,
        MapKind::Gamma => map_image(&gamma_enhance(&inverted_dark_channel(&img)?, a.gamma)?)?,
        MapKind::Equalized => map_image(&hist_equalize(&inverted_dark_channel(&img)?))?,
    };
    let out = if a.heatmap {
        heatmap(&PriorMap {
            height: map.height(),
            width: map.width(),
            data: map.data().to_vec(),
            degenerate: false,
        })
    } else {
        map
    };
    save_image(&out, &a.output)?;
    Ok(())
}

fn histogram(a: HistogramArgs) -> Result<()> {
    let paths = list_images(&a.input)?;
    let hist = corpus_histogram(&paths, a.normalized, a.bins)?;
    create_dir(&a.out)?;
    let path = a.out.join("histogram.csv");
    fs::write(&path, hist.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
    info!("{} pixels from {} images -> {}", hist.total(), paths.len(), path.display());
    Ok(())
}

fn fog_params(airlight: &[f64], transmission: Option<f64>, t_min: f64, t_max: f64, seed: u64) -> Result<FogParams> {
    let airlight = match *airlight {
        [a] => [a; 3],
        [r, g, b] => [r, g, b],
        _ => bail!("--airlight takes one or three values"),
    };
    let params = FogParams {
        airlight,
        transmission: match transmission {
            Some(t) => Transmission::Constant(t),
            None => Transmission::SmoothField { lo: t_min, hi: t_max },
        },
        seed,
    };
    params.validate()?;
    Ok(params)
}

fn fog(a: FogArgs, seed: u64) -> Result<()> {
    let params = fog_params(&a.airlight, a.transmission, a.t_min, a.t_max, seed)?;
    save_image(&apply_fog(&load_image(&a.input)?, &params)?, &a.output)?;
    Ok(())
}

fn make_dataset(a: MakeDatasetArgs, seed: u64) -> Result<()> {
    let fog = fog_params(&[a.airlight], None, a.t_min, a.t_max, seed)?;
    create_dir(&a.out)?;
    let source = match (a.synthetic, a.clean_dir) {
        (Some(n), _) => {
            let dir = a.out.join("source");
            create_dir(&dir)?;
            for i in 0..n {
                let scene = synth_scene(a.size, a.size, seed.wrapping_mul(1_000_003).wrapping_add(i as u64))?;
                save_image(&scene, dir.join(format!("scene_{i:04}.png")))?;
            }
            dir
        }
        (None, Some(dir)) => dir,
        (None, None) => bail!("either --clean-dir or --synthetic is required"),
    };
    let opts = UnpairedSetOptions {
        n_foggy: a.n_foggy,
        n_clean: a.n_clean,
        seed,
        with_replacement: a.with_replacement,
        fog,
    };
    let manifest = make_unpaired_set(&source, &a.out, &opts)?;
    info!("wrote {} images under {}", manifest.entries.len(), a.out.display());
    Ok(())
}

fn build_config(a: &TrainArgs, seed: Option<u64>, variant: Option<Variant>) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::from_file(path)?,
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k, v)?;
    }
    let mut set = |key: &str, value: Option<String>| value.map_or(Ok(()), |v| cfg.set(key, &v));
    set("lr", a.lr.map(|v| v.to_string()))?;
    set("epochs", a.epochs.map(|v| v.to_string()))?;
    set("batch_size", a.batch_size.map(|v| v.to_string()))?;
    set("resize_to", a.resize_to.map(|v| v.to_string()))?;
    set("crop_to", a.crop_to.map(|v| v.to_string()))?;
    set("max_iterations", a.max_iterations.map(|v| v.to_string()))?;
    set("checkpoint_every", a.checkpoint_every.map(|v| v.to_string()))?;
    set("prior_weighting", a.prior_weighting.clone())?;
    set("seed", seed.map(|v| v.to_string()))?;
    if a.per_stage_weights {
        cfg.per_stage_weights = true;
    }
    if let Some(v) = variant {
        v.apply(&mut cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(a: TrainArgs, seed: Option<u64>, variant: Option<Variant>) -> Result<()> {
    let cfg = build_config(&a, seed, variant)?;
    for dir in [&a.foggy, &a.clean] {
        if !dir.is_dir() {
            bail!("{} is not a directory", dir.display());
        }
    }
    let last = run_training(&cfg, &a.foggy, &a.clean, &a.out, a.resume.as_deref())?;
    info!("final checkpoint {}", last.display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let defogger = Defogger::<f32>::load(&a.checkpoint)?;
    let inputs = if a.input.is_dir() {
        list_images(&a.input)?
    } else {
        vec![a.input.clone()]
    };
    if inputs.is_empty() {
        bail!("no PNG or JPEG images in {}", a.input.display());
    }
    create_dir(&a.out)?;
    for path in &inputs {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let img = load_image(path)?;
        if a.emit_stages {
            let stages = defogger.defog_stages(&img)?;
            let names: &[&str] = if stages.len() == 3 { &["coarse", "finer", "finest"] } else { &["finest"] };
            for (s, name) in stages.iter().zip(names) {
                save_image(s, a.out.join(format!("{stem}_{name}.png")))?;
            }
            save_image(stages.last().expect("at least one stage"), a.out.join(format!("{stem}.png")))?;
        } else {
            save_image(&defogger.defog(&img)?, a.out.join(format!("{stem}.png")))?;
        }
        info!("defogged {}", path.display());
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let inputs = list_images(&a.input)?;
    if inputs.is_empty() {
        bail!("no PNG or JPEG images in {}", a.input.display());
    }
    let mut report = EvalReport::default();
    for path in &inputs {
        let name = path.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let img = load_image(path)?;
        let reference = match &a.reference {
            Some(dir) => Some(load_image(dir.join(&name)).with_context(|| format!("no reference for {name}"))?),
            None => None,
        };
        report.push(name, &img, reference.as_ref())?;
    }
    create_dir(&a.out)?;
    let path = a.out.join("eval.csv");
    let csv = report.to_csv();
    fs::write(&path, &csv).with_context(|| format!("cannot write {}", path.display()))?;
    if let Some(last) = csv.lines().last() {
        info!("{last}");
    }
    Ok(())
}
