//! Planar floating-point images and the geometric helpers every stage uses.

use std::path::Path;

use image::{ImageError, ImageFormat};
use pgcycle_autograd::{Float, Tensor};
use rand::Rng;

use crate::{Error, Result};

/// Value interval an [`Image`] promises to stay inside.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ValueRange {
    /// `[0, 1]`: disk I/O and prior-map math.
    Unit,
    /// `[-1, 1]`: network tensors.
    Symm,
}

impl ValueRange {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            ValueRange::Unit => (0.0, 1.0),
            ValueRange::Symm => (-1.0, 1.0),
        }
    }

    fn clamp(self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        v.clamp(lo, hi)
    }
}

/// `channels × height × width` raster stored plane by plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    range: ValueRange,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, range: ValueRange, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image size {height}x{width} must be at least 1x1")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        let (lo, hi) = range.bounds();
        if let Some(v) = data.iter().find(|v| !(lo..=hi).contains(*v)) {
            return Err(Error::invalid(format!("value {v} outside {range:?} range [{lo}, {hi}]")));
        }
        Ok(Self {
            height,
            width,
            channels,
            range,
            data,
        })
    }

    /// Builds an image from `f(channel, y, x)`; values are clamped into `range`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        range: ValueRange,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(range.clamp(f(c, y, x)));
                }
            }
        }
        Self::new(height, width, channels, range, data)
    }

    pub fn filled(height: usize, width: usize, channels: usize, range: ValueRange, value: f64) -> Result<Self> {
        Self::new(height, width, channels, range, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.data[c * hw..(c + 1) * hw]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn with_data(&self, height: usize, width: usize, data: Vec<f64>) -> Self {
        Self {
            height,
            width,
            channels: self.channels,
            range: self.range,
            data,
        }
    }

    /// `[0,1] -> [-1,1]` via `2v - 1`; identity on SYMM images.
    pub fn to_symm(&self) -> Self {
        match self.range {
            ValueRange::Symm => self.clone(),
            ValueRange::Unit => Self {
                range: ValueRange::Symm,
                data: self.data.iter().map(|&v| (v * 2.0 - 1.0).clamp(-1.0, 1.0)).collect(),
                ..*self
            },
        }
    }

    /// `[-1,1] -> [0,1]` via `(v + 1) / 2`; identity on UNIT images.
    pub fn to_unit(&self) -> Self {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Symm => Self {
                range: ValueRange::Unit,
                data: self.data.iter().map(|&v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)).collect(),
                ..*self
            },
        }
    }

    /// `[1, c, h, w]` tensor of the raw values.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, self.channels, self.height, self.width],
            self.data.iter().map(|&v| T::of(v)).collect(),
        )
        .expect("image dims")
    }

    /// Sample `n` of a tensor, clamped into `range`.
    pub fn from_tensor<T: Float>(t: &Tensor<T>, n: usize, range: ValueRange) -> Result<Self> {
        let [batch, c, h, w] = t.dims();
        if n >= batch {
            return Err(Error::Shape(format!("sample {n} of a batch of {batch}")));
        }
        let data = t.sample(n).iter().map(|v| range.clamp(v.as_f64())).collect();
        Self::new(h, w, c, range, data)
    }

    /// Sub-window `[y, y+h) × [x, x+w)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y + h > self.height || x + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w}@({y},{x}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for row in y..y + h {
                let start = (c * self.height + row) * self.width + x;
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(self.with_data(h, w, data))
    }

    /// Mirror-pads at the bottom and right up to the next multiple of `m`.
    pub fn reflect_pad_to_multiple(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("padding multiple must be positive"));
        }
        let h = self.height.div_ceil(m) * m;
        let w = self.width.div_ceil(m) * m;
        if (h, w) == (self.height, self.width) {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in 0..h {
                let sy = reflect_index(y, self.height);
                for x in 0..w {
                    data.push(self.get(c, sy, reflect_index(x, self.width)));
                }
            }
        }
        Ok(self.with_data(h, w, data))
    }
}

/// Mirror index without repeating the edge sample (`... 2 1 | 0 1 2 | 1 0 ...`).
fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Decodes a PNG or JPEG into a 3-channel UNIT image (`v / 255`).
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = image::io::Reader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {}
        _ => return Err(Error::UnsupportedFormat { path: path.into() }),
    }
    let decoded = reader.decode().map_err(|e| match e {
        ImageError::Unsupported(_) => Error::UnsupportedFormat { path: path.into() },
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.into(),
            reason: other.to_string(),
        },
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage(path.into()));
    }
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f64 / 255.0;
        }
    }
    Image::new(h, w, 3, ValueRange::Unit, data)
}

/// Round-half-up quantisation of a UNIT value to a byte.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an 8-bit PNG (RGB or grayscale); SYMM images are mapped to UNIT first.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let unit = img.to_unit();
    let (h, w, c) = (unit.height, unit.width, unit.channels);
    let mut bytes = vec![0u8; h * w * c];
    for ch in 0..c {
        for (i, &v) in unit.plane(ch).iter().enumerate() {
            bytes[i * c + ch] = quantize(v);
        }
    }
    let color = if c == 3 {
        image::ColorType::Rgb8
    } else {
        image::ColorType::L8
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(path, &bytes, w as u32, h as u32, color, ImageFormat::Png).map_err(|e| match e {
        ImageError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    })
}

/// Bilinear resize with half-pixel centres; the range tag is preserved.
pub fn resize(img: &Image, h: usize, w: usize) -> Result<Image> {
    if h == 0 || w == 0 {
        return Err(Error::invalid(format!("resize target {h}x{w} must be at least 1x1")));
    }
    if (h, w) == (img.height, img.width) {
        return Ok(img.clone());
    }
    let t = img.to_tensor::<f64>().resize_bilinear(h, w)?;
    let data = t.into_vec().into_iter().map(|v| img.range.clamp(v)).collect();
    Ok(img.with_data(h, w, data))
}

/// `size × size` window at offsets drawn uniformly (row first, then column).
pub fn random_crop<R: Rng + ?Sized>(img: &Image, size: usize, rng: &mut R) -> Result<Image> {
    if size == 0 || size > img.height.min(img.width) {
        return Err(Error::invalid(format!(
            "crop size {size} must be in 1..={}",
            img.height.min(img.width)
        )));
    }
    let y = rng.gen_range(0..=img.height - size);
    let x = rng.gen_range(0..=img.width - size);
    img.crop(y, x, size, size)
}

/// Downscale by 2 or 4; sides that are not multiples of `factor` are
/// reflect-padded first.
pub fn downscale_by(img: &Image, factor: usize) -> Result<Image> {
    if factor != 2 && factor != 4 {
        return Err(Error::invalid(format!("downscale factor must be 2 or 4, got {factor}")));
    }
    let padded = img.reflect_pad_to_multiple(factor)?;
    resize(&padded, padded.height / factor, padded.width / factor)
}
