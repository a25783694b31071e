//! Dark channels, inverted dark channels and the min-max normalised prior map
//! that weights the defogging losses towards objects on the water.

use std::path::{Path, PathBuf};

use pgcycle_autograd::{Float, Tensor};

use crate::image::{load_image, quantize, resize, Image, ValueRange};
use crate::{Error, Result};

/// Single-channel map in `[0, 1]`. `window` is the min-filter size that
/// produced it (1 = channel minimum only).
#[derive(Clone, Debug, PartialEq)]
pub struct DarkChannel {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub data: Vec<f64>,
}

/// Per-pixel loss weights in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    /// Set when the inverted dark channel was constant and the map fell back
    /// to all ones.
    pub degenerate: bool,
}

impl PriorMap {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1.0; height * width],
            degenerate: false,
        }
    }

    pub fn to_image(&self) -> Image {
        Image::new(self.height, self.width, 1, ValueRange::Unit, self.data.clone()).expect("prior map in [0,1]")
    }

    /// `[1, 1, h, w]` weight tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("prior map dims")
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Block-average down to `h × w`; both sides must divide evenly.
    pub fn area_pool(&self, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || !self.height.is_multiple_of(h) || !self.width.is_multiple_of(w) {
            return Err(Error::Shape(format!(
                "cannot pool a {}x{} prior map onto a {h}x{w} score map",
                self.height, self.width
            )));
        }
        let (by, bx) = (self.height / h, self.width / w);
        let inv = 1.0 / (by * bx) as f64;
        let mut data = Vec::with_capacity(h * w);
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0;
                for y in oy * by..(oy + 1) * by {
                    acc += self.data[y * self.width + ox * bx..y * self.width + (ox + 1) * bx]
                        .iter()
                        .sum::<f64>();
                }
                data.push(acc * inv);
            }
        }
        Ok(Self {
            height: h,
            width: w,
            data,
            degenerate: self.degenerate,
        })
    }
}

fn require_rgb(img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!("expected a 3-channel image, got {}", img.channels())));
    }
    Ok(())
}

fn channel_min(img: &Image) -> Vec<f64> {
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    r.iter().zip(g).zip(b).map(|((&r, &g), &b)| r.min(g).min(b)).collect()
}

/// Channel minimum followed by a `window × window` minimum filter with
/// replicated borders.
pub fn dark_channel(img: &Image, window: usize) -> Result<DarkChannel> {
    require_rgb(img)?;
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("dark channel window must be odd, got {window}")));
    }
    let unit = img.to_unit();
    let (h, w) = (unit.height(), unit.width());
    let mins = channel_min(&unit);
    if window == 1 {
        return Ok(DarkChannel {
            height: h,
            width: w,
            window,
            data: mins,
        });
    }
    // Replicated borders only ever repeat in-image values, so the clipped
    // window minimum is the same and the filter separates into rows/columns.
    let r = window / 2;
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        let line = &mins[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            rows[y * w + x] = line[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
        }
    }
    let mut data = vec![0.0; h * w];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            data[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(DarkChannel {
        height: h,
        width: w,
        window,
        data,
    })
}

/// `1 - min_c I^c` per pixel, no spatial filtering.
pub fn inverted_dark_channel(img: &Image) -> Result<DarkChannel> {
    require_rgb(img)?;
    let unit = img.to_unit();
    Ok(DarkChannel {
        height: unit.height(),
        width: unit.width(),
        window: 1,
        data: channel_min(&unit).into_iter().map(|v| 1.0 - v).collect(),
    })
}

/// Min-max normalisation of a single-channel map. A constant map yields all
/// ones with the degenerate flag set.
pub fn normalize_min_max(dc: &DarkChannel) -> PriorMap {
    let (lo, hi) = dc
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo == 0.0 {
        log::warn!("constant inverted dark channel, prior map falls back to all ones");
        return PriorMap {
            height: dc.height,
            width: dc.width,
            data: vec![1.0; dc.data.len()],
            degenerate: true,
        };
    }
    let span = hi - lo;
    PriorMap {
        height: dc.height,
        width: dc.width,
        data: dc.data.iter().map(|&v| (v - lo) / span).collect(),
        degenerate: false,
    }
}

/// Prior map of a foggy or clean image.
pub fn prior_map(img: &Image) -> Result<PriorMap> {
    Ok(normalize_min_max(&inverted_dark_channel(img)?))
}

/// Element-wise `v^gamma`.
pub fn gamma_enhance(dc: &DarkChannel, gamma: f64) -> Result<DarkChannel> {
    if gamma <= 0.0 || !gamma.is_finite() {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(DarkChannel {
        data: dc.data.iter().map(|&v| v.powf(gamma)).collect(),
        ..dc.clone()
    })
}

/// 256-level histogram equalisation: every value maps to the cumulative
/// fraction of pixels at or below its quantised level. A single-level map is
/// returned unchanged.
pub fn hist_equalize(dc: &DarkChannel) -> DarkChannel {
    let mut counts = [0usize; 256];
    let levels: Vec<u8> = dc.data.iter().map(|&v| quantize(v)).collect();
    for &l in &levels {
        counts[l as usize] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() <= 1 {
        return dc.clone();
    }
    let total = levels.len() as f64;
    let mut cdf = [0.0; 256];
    let mut acc = 0usize;
    for (i, &c) in counts.iter().enumerate() {
        acc += c;
        cdf[i] = acc as f64 / total;
    }
    DarkChannel {
        data: levels.iter().map(|&l| cdf[l as usize]).collect(),
        ..dc.clone()
    }
}

/// Equal-width bin counts over `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins] }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        let i = ((v.clamp(0.0, 1.0) * n as f64).floor() as usize).min(n - 1);
        self.counts[i] += 1;
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_lower,bin_upper,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let n = self.counts.len() as f64;
        let mut out = String::from("bin_lower,bin_upper,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", i as f64 / n, (i + 1) as f64 / n, c));
        }
        out
    }
}

/// Side length images are rescaled to before accumulation.
pub const HISTOGRAM_SIDE: usize = 256;

/// Histogram of inverted dark channels (optionally min-max normalised) over a
/// set of image files. Unreadable files are skipped with a warning.
pub fn corpus_histogram(paths: &[PathBuf], normalized: bool, bins: usize) -> Result<Histogram> {
    if paths.is_empty() {
        return Err(Error::invalid("corpus histogram needs at least one image"));
    }
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut hist = Histogram::new(bins);
    let mut used = 0;
    for path in paths {
        match image_histogram(path, normalized, bins) {
            Ok(h) => {
                hist.merge(&h);
                used += 1;
            }
            Err(e) => log::warn!("skipping {}: {e}", path.display()),
        }
    }
    if used == 0 {
        return Err(Error::invalid("none of the histogram inputs could be read"));
    }
    Ok(hist)
}

fn image_histogram(path: &Path, normalized: bool, bins: usize) -> Result<Histogram> {
    let img = resize(&load_image(path)?, HISTOGRAM_SIDE, HISTOGRAM_SIDE)?;
    let idc = inverted_dark_channel(&img)?;
    let values = if normalized {
        normalize_min_max(&idc).data
    } else {
        idc.data
    };
    let mut h = Histogram::new(bins);
    values.iter().for_each(|&v| h.add(v));
    Ok(h)
}

/// False-colour rendering (blue → cyan → yellow → red) of a map in `[0, 1]`.
pub fn heatmap(map: &PriorMap) -> Image {
    const STOPS: [(f64, [f64; 3]); 5] = [
        (0.0, [0.0, 0.0, 0.5]),
        (0.25, [0.0, 0.4, 1.0]),
        (0.5, [0.0, 0.9, 0.8]),
        (0.75, [1.0, 0.85, 0.0]),
        (1.0, [0.8, 0.0, 0.0]),
    ];
    let color = |v: f64, c: usize| {
        let v = v.clamp(0.0, 1.0);
        let i = STOPS.iter().position(|s| s.0 >= v).unwrap_or(STOPS.len() - 1).max(1);
        let (t0, c0) = STOPS[i - 1];
        let (t1, c1) = STOPS[i];
        let f = (v - t0) / (t1 - t0);
        c0[c] + (c1[c] - c0[c]) * f
    };
    Image::from_fn(map.height, map.width, 3, ValueRange::Unit, |c, y, x| {
        color(map.data[y * map.width + x], c)
    })
    .expect("heatmap dims")
}
