use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::info;
use pgcycle_autograd::{Float, Graph};

use crate::cascade::{cascade_forward, SIDE_MULTIPLE};
use crate::checkpoint::Checkpoint;
use crate::image::{Image, ValueRange};
use crate::losses::LOSS_CSV_HEADER;
use crate::nn::ParameterSet;
use crate::{Error, Result};

use super::data::{Side, UnpairedData};
use super::state::{stack_images, translate};
use super::{TrainConfig, TrainState};

pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("checkpoint_{iteration:07}.safetensors")
}

/// Total iterations a run performs.
pub fn planned_iterations(config: &TrainConfig, data: &UnpairedData) -> u64 {
    let full = config.epochs * data.iterations_per_epoch(config.batch_size);
    config.max_iterations.map_or(full, |m| m.min(full))
}

/// Keeps the header and the rows up to `iteration` of an existing log.
fn truncate_log(path: &Path, iteration: u64) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut kept = vec![LOSS_CSV_HEADER.to_string()];
    for line in BufReader::new(file).lines().skip(1) {
        let line = line.map_err(|e| Error::io(path, e))?;
        let iter: u64 = line
            .split(',')
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::invalid(format!("{}: malformed row {line:?}", path.display())))?;
        if iter <= iteration {
            kept.push(line);
        }
    }
    fs::write(path, kept.join("\n") + "\n").map_err(|e| Error::io(path, e))
}

/// Trains on two unpaired directories, writing the loss log and checkpoints
/// under `out_dir`. With `resume`, training continues from that checkpoint;
/// `config` must describe the same networks. Returns the final checkpoint.
pub fn run_training(
    config: &TrainConfig,
    foggy_dir: &Path,
    clean_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<PathBuf> {
    config.validate()?;
    let data = UnpairedData::from_dirs(foggy_dir, clean_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut state = match resume {
        Some(path) => {
            let mut s = TrainState::<f32>::load(path)?;
            if !s.compatible_with(config) {
                return Err(Error::Config(format!(
                    "{} was trained with different network settings",
                    path.display()
                )));
            }
            s.config = config.clone();
            s
        }
        None => TrainState::<f32>::new(config.clone())?,
    };
    let log_path = out_dir.join(LOSS_LOG);
    if resume.is_some() && log_path.exists() {
        truncate_log(&log_path, state.iteration)?;
    } else {
        fs::write(&log_path, format!("{LOSS_CSV_HEADER}\n")).map_err(|e| Error::io(&log_path, e))?;
    }
    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let per_epoch = data.iterations_per_epoch(config.batch_size);
    let total = planned_iterations(config, &data);
    info!(
        "training {} foggy / {} clean images, {per_epoch} iterations per epoch, {total} in total",
        data.foggy.len(),
        data.clean.len()
    );
    while state.iteration < total {
        let it = state.iteration;
        state.epoch = it / per_epoch;
        let foggy = data.batch(config, it, Side::Foggy)?;
        let clean = data.batch(config, it, Side::Clean)?;
        let report = state.train_step(&foggy, &clean)?;
        writeln!(log, "{}", report.csv_row(it + 1)).map_err(|e| Error::io(&log_path, e))?;
        if (it + 1) % 10 == 0 || it == 0 {
            info!(
                "iter {} epoch {} total {:.4} cyc {:.4}",
                it + 1,
                state.epoch,
                report.total,
                report.terms.l_cyc
            );
        }
        if config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0 {
            state.save(out_dir.join(checkpoint_name(it + 1)))?;
        }
    }
    state.epoch = state.iteration / per_epoch;
    let last = out_dir.join(FINAL_CHECKPOINT);
    state.save(&last)?;
    Ok(last)
}

/// Inference-only view of a trained foggy-to-clean generator.
#[derive(Clone, Debug)]
pub struct Defogger<T: Float> {
    stages: Vec<ParameterSet<T>>,
    coarse_to_fine: bool,
}

impl<T: Float> Defogger<T> {
    pub fn new(stages: Vec<ParameterSet<T>>, coarse_to_fine: bool) -> Result<Self> {
        let ok = match stages.len() {
            1 => true,
            3 => coarse_to_fine,
            _ => false,
        };
        if !ok {
            return Err(Error::invalid(format!("unsupported generator stage count {}", stages.len())));
        }
        Ok(Self { stages, coarse_to_fine })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_json(c.meta("config")?)?;
        let n: usize = c.meta_parse("generator_stages")?;
        let stages = (0..n)
            .map(|i| ParameterSet::load_from(c, &format!("G.{i}")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages, config.coarse_to_fine)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn stages_mut(&mut self) -> &mut [ParameterSet<T>] {
        &mut self.stages
    }

    fn multiple(&self) -> usize {
        if self.coarse_to_fine {
            SIDE_MULTIPLE
        } else {
            4
        }
    }

    /// Defogged UNIT image with the input's dimensions.
    pub fn defog(&self, img: &Image) -> Result<Image> {
        let padded = img.reflect_pad_to_multiple(self.multiple())?.to_symm();
        let g = Graph::new();
        let gens: Vec<_> = self.stages.iter().map(|p| p.bind(&g, false)).collect();
        let x = g.constant(stack_images::<T>(std::slice::from_ref(&padded))?);
        let out = translate(&gens, x, self.coarse_to_fine)?;
        Image::from_tensor(&out.value(), 0, ValueRange::Symm)?
            .crop(0, 0, img.height(), img.width())
            .map(|i| i.to_unit())
    }

    /// Coarse, finer and finest outputs as UNIT images, each cropped to the
    /// input's extent at its scale.
    pub fn defog_stages(&self, img: &Image) -> Result<Vec<Image>> {
        if !self.coarse_to_fine {
            return Ok(vec![self.defog(img)?]);
        }
        let padded = img.reflect_pad_to_multiple(SIDE_MULTIPLE)?.to_symm();
        let g = Graph::new();
        let gens: Vec<_> = self.stages.iter().map(|p| p.bind(&g, false)).collect();
        let x = g.constant(stack_images::<T>(std::slice::from_ref(&padded))?);
        let out = cascade_forward(&gens, x)?;
        out.stages()
            .into_iter()
            .zip([4, 2, 1])
            .map(|(v, scale)| {
                Image::from_tensor(&v.value(), 0, ValueRange::Symm)?
                    .crop(0, 0, img.height().div_ceil(scale), img.width().div_ceil(scale))
                    .map(|i| i.to_unit())
            })
            .collect()
    }
}

/// Defogs one image with the generator stored in `checkpoint`.
pub fn infer(checkpoint: &Path, img: &Image) -> Result<Image> {
    Defogger::<f32>::load(checkpoint)?.defog(img)
}
