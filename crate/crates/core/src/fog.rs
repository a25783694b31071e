//! Synthetic fog via the atmospheric scattering model
//! `I = J t + A (1 - t)`, plus a procedural overwater scene generator and the
//! unpaired dataset builder used for desk-scale experiments.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{load_image, resize, save_image, Image, ValueRange};
use crate::{Error, Result};

/// Side of the seeded coarse grid behind [`Transmission::SmoothField`].
pub const FIELD_GRID: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transmission {
    Constant(f64),
    /// Bilinear upsampling of a seeded `FIELD_GRID²` uniform grid in `[lo, hi]`.
    SmoothField { lo: f64, hi: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FogParams {
    /// Global atmospheric light per channel.
    pub airlight: [f64; 3],
    pub transmission: Transmission,
    pub seed: u64,
}

impl Default for FogParams {
    fn default() -> Self {
        Self {
            airlight: [0.9; 3],
            transmission: Transmission::SmoothField { lo: 0.3, hi: 0.9 },
            seed: 0,
        }
    }
}

impl FogParams {
    pub fn constant(airlight: f64, t: f64) -> Self {
        Self {
            airlight: [airlight; 3],
            transmission: Transmission::Constant(t),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid(format!("airlight {:?} outside [0, 1]", self.airlight)));
        }
        match self.transmission {
            Transmission::Constant(t) if !(0.0..=1.0).contains(&t) => {
                Err(Error::invalid(format!("transmission {t} outside [0, 1]")))
            }
            Transmission::SmoothField { lo, hi } if !(lo > 0.0 && lo <= hi && hi <= 1.0) => Err(Error::invalid(
                format!("transmission range [{lo}, {hi}] must lie within (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

/// Transmission value per pixel, shared by all channels.
pub fn transmission_map(height: usize, width: usize, params: &FogParams) -> Result<Vec<f64>> {
    params.validate()?;
    match params.transmission {
        Transmission::Constant(t) => Ok(vec![t; height * width]),
        Transmission::SmoothField { lo, hi } => {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            let grid: Vec<f64> = (0..FIELD_GRID * FIELD_GRID)
                .map(|_| if lo == hi { lo } else { rng.gen_range(lo..=hi) })
                .collect();
            let coarse = Image::new(FIELD_GRID, FIELD_GRID, 1, ValueRange::Unit, grid)?;
            let field = resize(&coarse, height, width)?;
            Ok(field.data().iter().map(|&t| t.clamp(lo, hi)).collect())
        }
    }
}

/// Fogs a clean UNIT image.
pub fn apply_fog(clean: &Image, params: &FogParams) -> Result<Image> {
    if clean.channels() != 3 {
        return Err(Error::invalid("fog needs a 3-channel image"));
    }
    let clean = clean.to_unit();
    let (h, w) = (clean.height(), clean.width());
    let t = transmission_map(h, w, params)?;
    Image::from_fn(h, w, 3, ValueRange::Unit, |c, y, x| {
        let ti = t[y * w + x];
        clean.get(c, y, x) * ti + params.airlight[c] * (1.0 - ti)
    })
}

/// Procedural overwater scene: a bright hazy-blue sky, darker textured water
/// and a few saturated boats near the horizon.
pub fn synth_scene(height: usize, width: usize, seed: u64) -> Result<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = rng.gen_range(0.3..0.5) * height as f64;
    let sky_top = [rng.gen_range(0.25..0.45), rng.gen_range(0.45..0.65), rng.gen_range(0.75..0.95)];
    let sky_low = [rng.gen_range(0.6..0.75), rng.gen_range(0.7..0.85), rng.gen_range(0.85..0.98)];
    let water = [rng.gen_range(0.02..0.12), rng.gen_range(0.15..0.35), rng.gen_range(0.25..0.45)];
    let wave_freq = rng.gen_range(0.3..0.9);
    let wave_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    struct Boat {
        x0: f64,
        x1: f64,
        top: f64,
        bottom: f64,
        color: [f64; 3],
    }
    let boats: Vec<Boat> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let len = rng.gen_range(0.12..0.3) * width as f64;
            let x0 = rng.gen_range(0.0..(width as f64 - len).max(1.0));
            let bottom = horizon + rng.gen_range(0.05..0.35) * (height as f64 - horizon);
            let tall = rng.gen_range(0.06..0.15) * height as f64;
            let color = match rng.gen_range(0..3) {
                0 => [rng.gen_range(0.6..0.9), rng.gen_range(0.05..0.2), rng.gen_range(0.05..0.15)],
                1 => [rng.gen_range(0.02..0.12), rng.gen_range(0.02..0.12), rng.gen_range(0.02..0.15)],
                _ => [rng.gen_range(0.7..0.95), rng.gen_range(0.5..0.7), rng.gen_range(0.0..0.1)],
            };
            Boat {
                x0,
                x1: x0 + len,
                top: bottom - tall,
                bottom,
                color,
            }
        })
        .collect();
    Image::from_fn(height, width, 3, ValueRange::Unit, |c, y, x| {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        for b in &boats {
            // hull narrows towards the waterline
            let inset = (yf - b.top) / (b.bottom - b.top) * 0.15 * (b.x1 - b.x0);
            if yf >= b.top && yf < b.bottom && xf >= b.x0 + inset && xf < b.x1 - inset {
                return b.color[c];
            }
        }
        if yf < horizon {
            let s = yf / horizon;
            sky_top[c] + (sky_low[c] - sky_top[c]) * s
        } else {
            let depth = (yf - horizon) / (height as f64 - horizon).max(1.0);
            let wave = 0.06 * (wave_freq * xf + 3.0 * wave_freq * yf + wave_phase).sin();
            (water[c] * (0.8 + 0.4 * depth) + wave).clamp(0.0, 1.0)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Foggy,
    Clean,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Foggy => "foggy",
            Role::Clean => "clean",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "foggy" => Ok(Role::Foggy),
            "clean" => Ok(Role::Clean),
            other => Err(Error::invalid(format!("unknown manifest role {other:?}"))),
        }
    }
}

/// `role<TAB>path` listing of an unpaired dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(Role, PathBuf)>,
}

impl Manifest {
    pub fn paths(&self, role: Role) -> impl Iterator<Item = &Path> {
        self.entries.iter().filter(move |(r, _)| *r == role).map(|(_, p)| p.as_path())
    }

    pub fn to_tsv(&self) -> String {
        self.entries.iter().map(|(r, p)| format!("{r}\t{}\n", p.display())).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let (role, path) = line
                    .split_once('\t')
                    .ok_or_else(|| Error::invalid(format!("manifest line without tab: {line:?}")))?;
                Ok((role.parse()?, PathBuf::from(path)))
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }
}

/// PNG and JPEG files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct UnpairedSetOptions {
    pub n_foggy: usize,
    pub n_clean: usize,
    pub seed: u64,
    /// Draw each side with replacement from its own half of the sources.
    pub with_replacement: bool,
    /// Fog applied to the foggy side; its seed is replaced per image.
    pub fog: FogParams,
}

/// Builds `out_dir/{foggy,clean}/` from disjoint source images and writes
/// `out_dir/manifest.tsv`.
pub fn make_unpaired_set(clean_dir: &Path, out_dir: &Path, opts: &UnpairedSetOptions) -> Result<Manifest> {
    opts.fog.validate()?;
    let mut sources = list_images(clean_dir)?;
    if sources.is_empty() {
        return Err(Error::invalid(format!("no PNG/JPEG images in {}", clean_dir.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    sources.shuffle(&mut rng);
    let (foggy_src, clean_src): (Vec<PathBuf>, Vec<PathBuf>) = if opts.with_replacement {
        if sources.len() < 2 {
            return Err(Error::invalid("sampling with replacement needs at least two sources"));
        }
        let (a, b) = sources.split_at(sources.len() / 2);
        let pick = |pool: &[PathBuf], n: usize, rng: &mut ChaCha8Rng| -> Vec<PathBuf> {
            (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
        };
        let f = pick(a, opts.n_foggy, &mut rng);
        let c = pick(b, opts.n_clean, &mut rng);
        (f, c)
    } else {
        if opts.n_foggy + opts.n_clean > sources.len() {
            return Err(Error::invalid(format!(
                "{} foggy + {} clean images requested from {} sources without replacement",
                opts.n_foggy,
                opts.n_clean,
                sources.len()
            )));
        }
        let f = sources[..opts.n_foggy].to_vec();
        let c = sources[opts.n_foggy..opts.n_foggy + opts.n_clean].to_vec();
        (f, c)
    };
    let mut manifest = Manifest::default();
    for (i, src) in foggy_src.iter().enumerate() {
        let params = FogParams {
            seed: opts.seed.wrapping_mul(0x9E37_79B9).wrapping_add(i as u64),
            ..opts.fog
        };
        let out = out_dir.join("foggy").join(format!("foggy_{i:04}.png"));
        save_image(&apply_fog(&load_image(src)?, &params)?, &out)?;
        manifest.entries.push((Role::Foggy, out));
    }
    for (i, src) in clean_src.iter().enumerate() {
        let out = out_dir.join("clean").join(format!("clean_{i:04}.png"));
        save_image(&load_image(src)?, &out)?;
        manifest.entries.push((Role::Clean, out));
    }
    let path = out_dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: f64) -> Image {
        Image::filled(4, 5, 3, ValueRange::Unit, v).unwrap()
    }

    #[test]
    fn unit_transmission_is_identity() {
        let img = synth_scene(16, 16, 3).unwrap();
        assert_eq!(apply_fog(&img, &FogParams::constant(0.9, 1.0)).unwrap(), img);
    }

    #[test]
    fn zero_transmission_gives_airlight() {
        let out = apply_fog(&flat(0.2), &FogParams::constant(0.8, 0.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.8));
    }

    #[test]
    fn hand_evaluated_pixel() {
        let out = apply_fog(&flat(0.4), &FogParams::constant(1.0, 0.5)).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(apply_fog(&flat(0.4), &FogParams::constant(1.0, 1.5)).is_err());
        assert!(apply_fog(&flat(0.4), &FogParams::constant(1.0, -0.1)).is_err());
        assert!(apply_fog(&flat(0.4), &FogParams::constant(1.2, 0.5)).is_err());
        let bad_field = FogParams {
            transmission: Transmission::SmoothField { lo: 0.0, hi: 0.5 },
            ..FogParams::default()
        };
        assert!(apply_fog(&flat(0.4), &bad_field).is_err());
    }

    #[test]
    fn smooth_field_stays_in_range_and_is_seeded() {
        let p = FogParams {
            seed: 11,
            ..FogParams::default()
        };
        let t = transmission_map(33, 47, &p).unwrap();
        assert!(t.iter().all(|&v| (0.3..=0.9).contains(&v)));
        assert_eq!(t, transmission_map(33, 47, &p).unwrap());
        let other = FogParams { seed: 12, ..p };
        assert_ne!(t, transmission_map(33, 47, &other).unwrap());
    }

    #[test]
    fn scenes_are_deterministic_and_varied() {
        let a = synth_scene(24, 32, 1).unwrap();
        assert_eq!(a, synth_scene(24, 32, 1).unwrap());
        assert_ne!(a, synth_scene(24, 32, 2).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![(Role::Foggy, "a/b.png".into()), (Role::Clean, "c.png".into())],
        };
        assert_eq!(m.to_tsv(), "foggy\ta/b.png\nclean\tc.png\n");
        assert_eq!(Manifest::parse(&m.to_tsv()).unwrap(), m);
        assert!(Manifest::parse("fog\tx.png").is_err());
    }
}
