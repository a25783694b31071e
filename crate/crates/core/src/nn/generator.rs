use pgcycle_autograd::{ConvOpts, Float, Var};

use super::{Bound, Role, Upsampler};
use crate::{Error, Result};

fn same(k: usize) -> ConvOpts {
    ConvOpts::new(1, k / 2)
}

fn conv_block<'g, T: Float>(p: &Bound<'g, T>, name: &str, x: Var<'g, T>, opts: ConvOpts) -> Result<Var<'g, T>> {
    Ok(p.norm(p.conv(name, x, opts)?).relu())
}

fn deconv_branch<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let r = conv_block(p, &format!("{pre}.deconv.reduce"), x, same(1))?;
    let up = p.conv_transpose(&format!("{pre}.deconv.up"), r, ConvOpts::new(2, 1).with_out_pad(1))?;
    let up = p.norm(up).relu();
    conv_block(p, &format!("{pre}.deconv.conv"), up, same(3))
}

fn bilinear_branch<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let [_, _, h, w] = x.dims();
    let r = conv_block(p, &format!("{pre}.bilinear.reduce"), x, same(1))?;
    let up = r.resize_bilinear(2 * h, 2 * w)?;
    let c = conv_block(p, &format!("{pre}.bilinear.conv0"), up, same(3))?;
    conv_block(p, &format!("{pre}.bilinear.conv1"), c, same(3))
}

fn shuffle_branch<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    if !x.dims()[1].is_multiple_of(4) {
        return Err(Error::Shape(format!(
            "pixel shuffle needs a channel count divisible by 4, got {}",
            x.dims()[1]
        )));
    }
    let s = x.pixel_shuffle(2)?;
    conv_block(p, &format!("{pre}.shuffle.conv"), s, same(3))
}

/// The ×2 upscaling branches of module `pre`, concatenated, before channel
/// recalibration.
pub fn uim_branches<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    match p.spec().upsampler {
        Upsampler::Inception => {
            let d = deconv_branch(p, pre, x)?;
            let b = bilinear_branch(p, pre, x)?;
            let s = shuffle_branch(p, pre, x)?;
            Ok(x.graph().concat_channels(&[d, b, s])?)
        }
        Upsampler::DeconvOnly => deconv_branch(p, pre, x),
        Upsampler::BilinearOnly => bilinear_branch(p, pre, x),
        Upsampler::PixelShuffleOnly => shuffle_branch(p, pre, x),
    }
}

/// Squeeze-and-excitation: per-channel sigmoid gates from pooled statistics.
pub fn se_forward<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let s = x.global_avg_pool();
    let s = p.conv(&format!("{pre}.se.fc0"), s, same(1))?.relu();
    let gate = p.conv(&format!("{pre}.se.fc1"), s, same(1))?.sigmoid();
    Ok(x.mul(gate)?)
}

pub fn uim_forward<'g, T: Float>(p: &Bound<'g, T>, pre: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let cat = uim_branches(p, pre, x)?;
    se_forward(p, pre, cat)
}

/// Maps `[current image ‖ auxiliary image]` (6 channels, `[-1, 1]`) to a
/// 3-channel image in `[-1, 1]`. Sides must be multiples of 4.
pub fn generator_forward<'g, T: Float>(p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let spec = p.spec();
    if spec.role != Role::Generator {
        return Err(Error::Spec(format!("expected generator parameters, got {:?}", spec.role)));
    }
    let [_, c, h, w] = x.dims();
    if c != spec.in_channels {
        return Err(Error::Shape(format!("generator expects {} input channels, got {c}", spec.in_channels)));
    }
    if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("generator input {h}x{w} must have sides divisible by 4")));
    }
    let mut f = conv_block(p, "enc.0", x, same(7))?;
    f = conv_block(p, "enc.1", f, ConvOpts::new(2, 1))?;
    f = conv_block(p, "enc.2", f, ConvOpts::new(2, 1))?;
    for i in 0..spec.res_blocks {
        let r = conv_block(p, &format!("res.{i}.conv0"), f, same(3))?;
        let r = p.norm(p.conv(&format!("res.{i}.conv1"), r, same(3))?);
        f = f.add(r)?;
    }
    f = uim_forward(p, "uim1", f)?;
    f = uim_forward(p, "uim2", f)?;
    f = conv_block(p, "head.0", f, same(3))?;
    let residual = p.conv("head.1", f, same(7))?.tanh();
    if !spec.long_range_residual {
        return Ok(residual);
    }
    let current = x.narrow_channels(0, 3)?;
    Ok(current.add(residual)?.clamp(-1.0, 1.0))
}
