use std::path::Path;
use std::sync::Arc;

use pgcycle_autograd::{ConvOpts, Float, Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use safetensors::tensor::Dtype;
use safetensors::SafeTensors;

use crate::{Error, Result};

pub const VGG_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const VGG_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Conv widths of the five stages.
const STAGES: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];

/// Index of each conv inside torchvision's `features` sequence.
fn torchvision_indices() -> Vec<usize> {
    let mut idx = Vec::new();
    let mut i = 0;
    for stage in STAGES {
        for _ in stage.iter() {
            idx.push(i);
            i += 2;
        }
        i += 1;
    }
    idx
}

/// Frozen 16-layer feature extractor, tapped after its 2nd and 5th pooling.
#[derive(Clone, Debug)]
pub struct Vgg16<T: Float> {
    layers: Vec<(Arc<Tensor<T>>, Arc<Tensor<T>>)>,
    pretrained: bool,
}

impl<T: Float> Vgg16<T> {
    /// Deterministic random weights (He-normal), channel widths divided by
    /// `width_div`.
    pub fn random(seed: u64, width_div: usize) -> Result<Self> {
        if width_div == 0 || 64 % width_div != 0 {
            return Err(Error::invalid(format!("vgg width divisor {width_div} must divide 64")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut layers = Vec::new();
        for stage in STAGES {
            for &c in stage {
                let cout = c / width_div;
                let normal = Normal::new(0.0, (2.0 / (cin * 9) as f64).sqrt()).expect("valid std");
                let w = (0..cout * cin * 9).map(|_| T::of(normal.sample(&mut rng))).collect();
                layers.push((
                    Arc::new(Tensor::from_vec([cout, cin, 3, 3], w)?),
                    Arc::new(Tensor::zeros([1, cout, 1, 1])),
                ));
                cin = cout;
            }
        }
        Ok(Self {
            layers,
            pretrained: false,
        })
    }

    /// Loads ImageNet weights exported from torchvision
    /// (`features.N.weight` / `features.N.bias`) as safetensors.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let st = SafeTensors::deserialize(&buf).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let fetch = |name: &str, expect: &[usize]| -> Result<Vec<T>> {
            let v = st
                .tensor(name)
                .map_err(|_| Error::Checkpoint(format!("{}: missing {name}", path.display())))?;
            if v.shape() != expect {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, expected {expect:?}",
                    v.shape()
                )));
            }
            match v.dtype() {
                Dtype::F32 => Ok(v
                    .data()
                    .chunks_exact(4)
                    .map(|b| T::of(f32::from_le_bytes(b.try_into().unwrap()) as f64))
                    .collect()),
                Dtype::F64 => Ok(v
                    .data()
                    .chunks_exact(8)
                    .map(|b| T::of(f64::from_le_bytes(b.try_into().unwrap())))
                    .collect()),
                other => Err(Error::Checkpoint(format!("{name}: unsupported dtype {other:?}"))),
            }
        };
        let mut layers = Vec::new();
        let mut cin = 3;
        let widths = STAGES.iter().flat_map(|s| s.iter().copied());
        for (idx, cout) in torchvision_indices().into_iter().zip(widths) {
            let w = fetch(&format!("features.{idx}.weight"), &[cout, cin, 3, 3])?;
            let b = fetch(&format!("features.{idx}.bias"), &[cout])?;
            layers.push((
                Arc::new(Tensor::from_vec([cout, cin, 3, 3], w)?),
                Arc::new(Tensor::from_vec([1, cout, 1, 1], b)?),
            ));
            cin = cout;
        }
        Ok(Self {
            layers,
            pretrained: true,
        })
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    /// Features of a `[-1, 1]` RGB batch at the two tap points.
    pub fn features<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
        if x.dims()[1] != 3 {
            return Err(Error::Shape(format!("feature extractor expects 3 channels, got {}", x.dims()[1])));
        }
        let scale = Tensor::from_vec([1, 3, 1, 1], VGG_STD.iter().map(|s| T::of(0.5 / s)).collect())?;
        let shift = Tensor::from_vec(
            [1, 3, 1, 1],
            VGG_MEAN.iter().zip(VGG_STD).map(|(m, s)| T::of((0.5 - m) / s)).collect(),
        )?;
        let mut f = x.mul(g.constant(scale))?.add(g.constant(shift))?;
        let mut layer = self.layers.iter();
        let mut taps = Vec::with_capacity(2);
        for (s, stage) in STAGES.iter().enumerate() {
            for _ in stage.iter() {
                let (w, b) = layer.next().expect("layer count");
                let (w, b) = (g.leaf(w.clone(), false), g.leaf(b.clone(), false));
                f = f.conv2d(w, Some(b), ConvOpts::new(1, 1))?.relu();
            }
            f = f.max_pool2();
            if s == 1 || s == 4 {
                taps.push(f);
            }
        }
        Ok((taps[0], taps[1]))
    }
}
