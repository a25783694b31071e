//! Full-reference quality (PSNR, SSIM) and a no-reference fog density proxy.

use std::fmt;

use crate::image::{Image, ValueRange};
use crate::prior::dark_channel;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const FOG_WINDOW: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// The images are identical.
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.6}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    let shape = |i: &Image| (i.channels(), i.height(), i.width());
    if shape(a) != shape(b) {
        return Err(Error::Shape(format!("images {:?} and {:?} differ", shape(a), shape(b))));
    }
    Ok(())
}

fn unit_data(img: &Image) -> Vec<f64> {
    match img.range() {
        ValueRange::Unit => img.data().to_vec(),
        ValueRange::Symm => img.to_unit().data().to_vec(),
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<Psnr> {
    check_pair(a, b)?;
    let (da, db) = (unit_data(a), unit_data(b));
    let mse = compensated_sum(da.iter().zip(&db).map(|(x, y)| (x - y).powi(2))) / da.len() as f64;
    Ok(if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(-10.0 * mse.log10())
    })
}

/// Neumaier summation; keeps uniform errors from drifting off their exact mean.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}

fn gaussian_taps() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Separable "valid" filtering of an `h`×`w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity over channels and window positions.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "image {h}x{w} is too small for SSIM (sides must be at least {SSIM_WINDOW})"
        )));
    }
    let taps = gaussian_taps();
    let (da, db) = (unit_data(a), unit_data(b));
    let n = h * w;
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa = &da[c * n..(c + 1) * n];
        let pb = &db[c * n..(c + 1) * n];
        let sq = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let e_aa = filter_valid(&sq(pa, pa), h, w, &taps);
        let e_bb = filter_valid(&sq(pb, pb), h, w, &taps);
        let e_ab = filter_valid(&sq(pa, pb), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok((total / a.channels() as f64).clamp(-1.0, 1.0))
}

/// Mean dark channel: near 0 for clear scenes, rising towards the airlight under fog.
pub fn fog_proxy(img: &Image, window: usize) -> Result<f64> {
    let dc = dark_channel(img, window)?;
    Ok(dc.data.iter().sum::<f64>() / dc.data.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub image: String,
    pub psnr: Option<Psnr>,
    pub ssim: Option<f64>,
    pub fog_proxy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Scores `output` (and, if given, compares it to `reference`).
    pub fn push(&mut self, name: impl Into<String>, output: &Image, reference: Option<&Image>) -> Result<()> {
        let (psnr, ssim) = match reference {
            Some(r) => (Some(psnr(output, r)?), Some(ssim(output, r)?)),
            None => (None, None),
        };
        self.rows.push(EvalRow {
            image: name.into(),
            psnr,
            ssim,
            fog_proxy: fog_proxy(output, FOG_WINDOW)?,
        });
        Ok(())
    }

    /// Arithmetic means; PSNR is infinite if any row is.
    pub fn mean(&self) -> Option<EvalRow> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        let all = |f: &dyn Fn(&EvalRow) -> Option<f64>| -> Option<f64> {
            self.rows.iter().map(f).sum::<Option<f64>>().map(|s| s / n)
        };
        let psnr = all(&|r| r.psnr.map(Psnr::db)).map(|v| {
            if v.is_infinite() {
                Psnr::Infinite
            } else {
                Psnr::Finite(v)
            }
        });
        Some(EvalRow {
            image: "mean".into(),
            psnr,
            ssim: all(&|r| r.ssim),
            fog_proxy: all(&|r| Some(r.fog_proxy)).unwrap_or(0.0),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim,fog_proxy\n");
        let line = |r: &EvalRow| {
            format!(
                "{},{},{},{:.6}\n",
                r.image,
                r.psnr.map(|p| p.to_string()).unwrap_or_default(),
                r.ssim.map(|s| format!("{s:.6}")).unwrap_or_default(),
                r.fog_proxy
            )
        };
        for r in &self.rows {
            out.push_str(&line(r));
        }
        if let Some(m) = self.mean() {
            out.push_str(&line(&m));
        }
        out
    }
}
