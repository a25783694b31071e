use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fog::list_images;
use crate::image::{load_image, random_crop, resize, Image};
use crate::{Error, Result};

use super::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Foggy = 1,
    Clean = 2,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for one purpose at one point of the run, independent of how
/// many draws earlier steps made. This is what makes resuming exact.
pub fn derived_rng(seed: u64, purpose: u64, a: u64, b: u64) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed ^ splitmix(purpose)) ^ a) ^ b);
    ChaCha8Rng::seed_from_u64(s)
}

pub(crate) const PURPOSE_SHUFFLE: u64 = 11;
pub(crate) const PURPOSE_CROP: u64 = 12;
pub(crate) const PURPOSE_REPLAY: u64 = 13;
pub(crate) const PURPOSE_INIT: u64 = 14;

/// Two unpaired image lists.
#[derive(Clone, Debug)]
pub struct UnpairedData {
    pub foggy: Vec<PathBuf>,
    pub clean: Vec<PathBuf>,
}

impl UnpairedData {
    pub fn from_dirs(foggy_dir: &Path, clean_dir: &Path) -> Result<Self> {
        let foggy = list_images(foggy_dir)?;
        let clean = list_images(clean_dir)?;
        for (dir, list) in [(foggy_dir, &foggy), (clean_dir, &clean)] {
            if list.is_empty() {
                return Err(Error::invalid(format!("{}: no PNG or JPEG images", dir.display())));
            }
        }
        Ok(Self { foggy, clean })
    }

    fn side(&self, side: Side) -> &[PathBuf] {
        match side {
            Side::Foggy => &self.foggy,
            Side::Clean => &self.clean,
        }
    }

    /// One pass over the larger side.
    pub fn iterations_per_epoch(&self, batch: usize) -> u64 {
        self.foggy.len().max(self.clean.len()).div_ceil(batch) as u64
    }

    /// Indices drawn at a zero-based global iteration. Each side has its own
    /// per-epoch permutation; the smaller side wraps around.
    pub fn batch_indices(&self, config: &TrainConfig, iteration: u64, side: Side) -> Vec<usize> {
        let ipe = self.iterations_per_epoch(config.batch_size);
        let (epoch, k) = (iteration / ipe, iteration % ipe);
        let n = self.side(side).len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut derived_rng(config.seed, PURPOSE_SHUFFLE, epoch, side as u64));
        (0..config.batch_size)
            .map(|b| perm[(k as usize * config.batch_size + b) % n])
            .collect()
    }

    /// Resized, randomly cropped UNIT images for one side of one iteration.
    pub fn batch(&self, config: &TrainConfig, iteration: u64, side: Side) -> Result<Vec<Image>> {
        let paths = self.side(side);
        self.batch_indices(config, iteration, side)
            .into_iter()
            .enumerate()
            .map(|(b, idx)| {
                let img = load_image(&paths[idx])?;
                let img = resize(&img, config.resize_to, config.resize_to)?;
                let tag = (iteration << 8) | b as u64;
                random_crop(&img, config.crop_to, &mut derived_rng(config.seed, PURPOSE_CROP, tag, side as u64))
            })
            .collect()
    }
}
