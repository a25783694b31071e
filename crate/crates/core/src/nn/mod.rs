//! Network descriptions, their learnable parameters and forward passes.

mod discriminator;
mod generator;
mod vgg;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use pgcycle_autograd::{ConvOpts, Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::{Error, Result};

pub use discriminator::{disc_patch_forward, disc_pixel_forward, discriminator_forward, PATCH_MIN_SIDE};
pub use generator::{generator_forward, se_forward, uim_branches, uim_forward};
pub use vgg::{Vgg16, VGG_MEAN, VGG_STD};

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Generator,
    DiscPatch,
    DiscPixel,
}

/// How each upscaling module doubles resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Upsampler {
    /// Transposed conv, bilinear and pixel-shuffle branches side by side.
    Inception,
    DeconvOnly,
    BilinearOnly,
    PixelShuffleOnly,
}

impl fmt::Display for Upsampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Upsampler::Inception => "inception",
            Upsampler::DeconvOnly => "deconv-only",
            Upsampler::BilinearOnly => "bilinear-only",
            Upsampler::PixelShuffleOnly => "pixelshuffle-only",
        })
    }
}

impl FromStr for Upsampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "inception" => Upsampler::Inception,
            "deconv-only" => Upsampler::DeconvOnly,
            "bilinear-only" => Upsampler::BilinearOnly,
            "pixelshuffle-only" => Upsampler::PixelShuffleOnly,
            other => return Err(Error::Config(format!("unknown upsampler {other:?}"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub role: Role,
    pub in_channels: usize,
    pub instance_norm: bool,
    pub se_reduction: usize,
    /// Width of the first layer; later layers are multiples of it.
    pub base_width: usize,
    pub res_blocks: usize,
    pub upsampler: Upsampler,
    pub long_range_residual: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: [usize; 4],
}

struct ShapeList(Vec<ParamShape>);

impl ShapeList {
    fn push(&mut self, name: String, dims: [usize; 4]) {
        self.0.push(ParamShape { name, dims });
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.push(format!("{name}.weight"), [cout, cin, k, k]);
        self.push(format!("{name}.bias"), [1, cout, 1, 1]);
    }

    fn deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize) {
        self.push(format!("{name}.weight"), [cin, cout, k, k]);
        self.push(format!("{name}.bias"), [1, cout, 1, 1]);
    }
}

/// Output widths of the deconv, bilinear and shuffle branches of the two
/// upscaling modules.
pub(crate) fn uim_widths(base: usize) -> [[usize; 3]; 2] {
    [[base, base / 2, base / 2], [base / 2, base / 4, base / 4]]
}

impl NetworkSpec {
    pub fn generator() -> Self {
        Self {
            role: Role::Generator,
            in_channels: 6,
            instance_norm: true,
            se_reduction: 16,
            base_width: 64,
            res_blocks: 9,
            upsampler: Upsampler::Inception,
            long_range_residual: true,
        }
    }

    pub fn disc_patch() -> Self {
        Self {
            role: Role::DiscPatch,
            in_channels: 3,
            ..Self::generator()
        }
    }

    /// Per-pixel discriminator. Instance norm is off: its spatial statistics
    /// would couple every output pixel to the whole image.
    pub fn disc_pixel() -> Self {
        Self {
            role: Role::DiscPixel,
            in_channels: 3,
            instance_norm: false,
            ..Self::generator()
        }
    }

    pub fn with_base_width(mut self, w: usize) -> Self {
        self.base_width = w;
        self
    }

    pub fn with_res_blocks(mut self, n: usize) -> Self {
        self.res_blocks = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.base_width;
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.in_channels == 0 || w == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.role == Role::Generator {
            if !w.is_multiple_of(4) {
                return bad(format!("generator base width {w} must be a multiple of 4"));
            }
            if self.res_blocks == 0 {
                return bad("generator needs at least one residual block".into());
            }
            let r = self.se_reduction;
            for [d, b, p] in uim_widths(w) {
                let c = d + b + p;
                if r == 0 || c % r != 0 {
                    return bad(format!("SE reduction {r} does not divide {c} channels"));
                }
            }
        }
        Ok(())
    }

    /// Every learnable tensor in a fixed order.
    pub fn parameter_shapes(&self) -> Result<Vec<ParamShape>> {
        self.validate()?;
        let w = self.base_width;
        let mut s = ShapeList(Vec::new());
        match self.role {
            Role::Generator => {
                s.conv("enc.0", self.in_channels, w, 7);
                s.conv("enc.1", w, 2 * w, 3);
                s.conv("enc.2", 2 * w, 4 * w, 3);
                for i in 0..self.res_blocks {
                    s.conv(&format!("res.{i}.conv0"), 4 * w, 4 * w, 3);
                    s.conv(&format!("res.{i}.conv1"), 4 * w, 4 * w, 3);
                }
                let mut cin = 4 * w;
                for (u, [d, b, p]) in uim_widths(w).into_iter().enumerate() {
                    let pre = format!("uim{}", u + 1);
                    let total = d + b + p;
                    let half = cin / 2;
                    let deconv = |s: &mut ShapeList, out: usize| {
                        s.conv(&format!("{pre}.deconv.reduce"), cin, half, 1);
                        s.deconv(&format!("{pre}.deconv.up"), half, half, 3);
                        s.conv(&format!("{pre}.deconv.conv"), half, out, 3);
                    };
                    let bilinear = |s: &mut ShapeList, out: usize| {
                        s.conv(&format!("{pre}.bilinear.reduce"), cin, half, 1);
                        s.conv(&format!("{pre}.bilinear.conv0"), half, out, 3);
                        s.conv(&format!("{pre}.bilinear.conv1"), out, out, 3);
                    };
                    let shuffle = |s: &mut ShapeList, out: usize| s.conv(&format!("{pre}.shuffle.conv"), cin / 4, out, 3);
                    match self.upsampler {
                        Upsampler::Inception => {
                            deconv(&mut s, d);
                            bilinear(&mut s, b);
                            shuffle(&mut s, p);
                        }
                        Upsampler::DeconvOnly => deconv(&mut s, total),
                        Upsampler::BilinearOnly => bilinear(&mut s, total),
                        Upsampler::PixelShuffleOnly => shuffle(&mut s, total),
                    }
                    let squeezed = total / self.se_reduction;
                    s.conv(&format!("{pre}.se.fc0"), total, squeezed, 1);
                    s.conv(&format!("{pre}.se.fc1"), squeezed, total, 1);
                    cin = total;
                }
                s.conv("head.0", cin, w, 3);
                s.conv("head.1", w, 3, 7);
            }
            Role::DiscPatch => {
                let widths = [w, 2 * w, 4 * w, 8 * w, 1];
                let mut cin = self.in_channels;
                for (i, &c) in widths.iter().enumerate() {
                    s.conv(&format!("conv.{i}"), cin, c, 4);
                    cin = c;
                }
            }
            Role::DiscPixel => {
                let widths = [w, 2 * w, 1];
                let mut cin = self.in_channels;
                for (i, &c) in widths.iter().enumerate() {
                    s.conv(&format!("conv.{i}"), cin, c, 1);
                    cin = c;
                }
            }
        }
        Ok(s.0)
    }
}

/// Named learnable tensors for one network.
#[derive(Clone, Debug)]
pub struct ParameterSet<T: Float> {
    spec: NetworkSpec,
    names: Arc<HashMap<String, usize>>,
    shapes: Vec<ParamShape>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> PartialEq for ParameterSet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.shapes == other.shapes && self.tensors == other.tensors
    }
}

impl<T: Float> ParameterSet<T> {
    fn from_tensors(spec: NetworkSpec, shapes: Vec<ParamShape>, tensors: Vec<Tensor<T>>) -> Self {
        let names = shapes.iter().enumerate().map(|(i, s)| (s.name.clone(), i)).collect();
        Self {
            spec,
            names: Arc::new(names),
            shapes,
            tensors: tensors.into_iter().map(Arc::new).collect(),
        }
    }

    /// Weights ~ N(0, 0.02), biases zero, drawn in parameter order from `seed`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.parameter_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let tensors = shapes
            .iter()
            .map(|s| {
                let mut t = Tensor::zeros(s.dims);
                if s.name.ends_with(".weight") {
                    for v in t.data_mut() {
                        *v = T::of(normal.sample(&mut rng));
                    }
                }
                t
            })
            .collect();
        Ok(Self::from_tensors(spec, shapes, tensors))
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.parameter_shapes()?;
        let tensors = shapes.iter().map(|s| Tensor::zeros(s.dims)).collect();
        Ok(Self::from_tensors(spec, shapes, tensors))
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn shapes(&self) -> &[ParamShape] {
        &self.shapes
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.get(name).map(|&i| &*self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        let i = *self.names.get(name)?;
        Some(Arc::make_mut(&mut self.tensors[i]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.shapes.iter().map(|s| s.name.as_str()).zip(self.tensors.iter().map(|t| &**t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut().map(Arc::make_mut)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn cast<U: Float>(&self) -> ParameterSet<U> {
        ParameterSet::from_tensors(
            self.spec,
            self.shapes.clone(),
            self.tensors.iter().map(|t| t.cast()).collect(),
        )
    }

    /// Registers every tensor as a leaf of `g`.
    pub fn bind<'g>(&self, g: &'g Graph<T>, trainable: bool) -> Bound<'g, T> {
        Bound {
            spec: self.spec,
            names: self.names.clone(),
            vars: self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect(),
        }
    }

    /// Stores tensors as `prefix/name` and the spec as metadata `prefix.spec`.
    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.metadata.insert(
            format!("{prefix}.spec"),
            serde_json::to_string(&self.spec).expect("spec serializes"),
        );
        for (name, t) in self.iter() {
            ckpt.put(format!("{prefix}/{name}"), t);
        }
    }

    /// Inverse of [`save_into`](Self::save_into); every shape is checked
    /// against the stored spec.
    pub fn load_from(ckpt: &Checkpoint, prefix: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(ckpt.meta(&format!("{prefix}.spec"))?)
            .map_err(|e| Error::Checkpoint(format!("{prefix}: bad spec: {e}")))?;
        let shapes = spec.parameter_shapes()?;
        let mut tensors = Vec::with_capacity(shapes.len());
        for s in &shapes {
            let key = format!("{prefix}/{}", s.name);
            let t: Tensor<T> = ckpt.get(&key)?;
            if t.dims() != s.dims {
                return Err(Error::Checkpoint(format!(
                    "{key}: shape {:?} does not match spec shape {:?}",
                    t.dims(),
                    s.dims
                )));
            }
            tensors.push(t);
        }
        if let Some(extra) = ckpt
            .names_with_prefix(prefix)
            .find(|k| !shapes.iter().any(|s| k[prefix.len() + 1..] == s.name))
        {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self::from_tensors(spec, shapes, tensors))
    }
}

/// A parameter set bound into one graph.
#[derive(Clone)]
pub struct Bound<'g, T: Float> {
    spec: NetworkSpec,
    names: Arc<HashMap<String, usize>>,
    vars: Vec<Var<'g, T>>,
}

impl<'g, T: Float> Bound<'g, T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn var(&self, name: &str) -> Result<Var<'g, T>> {
        self.names
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::Spec(format!("no parameter named {name}")))
    }

    /// Leaves in parameter order.
    pub fn vars(&self) -> &[Var<'g, T>] {
        &self.vars
    }

    pub(crate) fn conv(&self, name: &str, x: Var<'g, T>, opts: ConvOpts) -> Result<Var<'g, T>> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        Ok(x.conv2d(w, Some(b), opts)?)
    }

    pub(crate) fn conv_transpose(&self, name: &str, x: Var<'g, T>, opts: ConvOpts) -> Result<Var<'g, T>> {
        let w = self.var(&format!("{name}.weight"))?;
        let b = self.var(&format!("{name}.bias"))?;
        Ok(x.conv_transpose2d(w, Some(b), opts)?)
    }

    pub(crate) fn norm(&self, x: Var<'g, T>) -> Var<'g, T> {
        if self.spec.instance_norm {
            x.instance_norm()
        } else {
            x
        }
    }
}
