//! Three-stage coarse-to-fine defogging: the generator runs at 1/4, 1/2 and
//! full resolution, each stage conditioned on the upsampled result of the
//! previous one.

use pgcycle_autograd::{Float, Var};

use crate::nn::{generator_forward, Bound};
use crate::{Error, Result};

/// Input sides must be multiples of this so the coarsest stage still
/// satisfies the generator's divisible-by-4 rule.
pub const SIDE_MULTIPLE: usize = 16;

#[derive(Clone, Copy, Debug)]
pub struct CascadeOutput<'g, T: Float> {
    pub coarse: Var<'g, T>,
    pub finer: Var<'g, T>,
    pub finest: Var<'g, T>,
}

impl<'g, T: Float> CascadeOutput<'g, T> {
    pub fn stages(&self) -> [Var<'g, T>; 3] {
        [self.coarse, self.finer, self.finest]
    }
}

fn stage_weights<'a, 'g, T: Float>(gens: &'a [Bound<'g, T>], stage: usize) -> Result<&'a Bound<'g, T>> {
    match gens.len() {
        1 => Ok(&gens[0]),
        3 => Ok(&gens[stage]),
        n => Err(Error::invalid(format!(
            "cascade takes one shared generator or one per stage, got {n}"
        ))),
    }
}

/// Runs the cascade on a `[-1, 1]` batch. `gens` is either one shared
/// generator or three per-stage generators.
pub fn cascade_forward<'g, T: Float>(gens: &[Bound<'g, T>], x: Var<'g, T>) -> Result<CascadeOutput<'g, T>> {
    let [_, c, h, w] = x.dims();
    if c != 3 {
        return Err(Error::Shape(format!("cascade expects a 3-channel image, got {c}")));
    }
    if h % SIDE_MULTIPLE != 0 || w % SIDE_MULTIPLE != 0 || h == 0 {
        return Err(Error::Shape(format!(
            "cascade input {h}x{w} must have sides divisible by {SIDE_MULTIPLE}"
        )));
    }
    let g = x.graph();
    let quarter = x.resize_bilinear(h / 4, w / 4)?;
    let half = x.resize_bilinear(h / 2, w / 2)?;
    let coarse = generator_forward(stage_weights(gens, 0)?, g.concat_channels(&[quarter, quarter])?)?;
    let up = coarse.resize_bilinear(h / 2, w / 2)?;
    let finer = generator_forward(stage_weights(gens, 1)?, g.concat_channels(&[half, up])?)?;
    let up = finer.resize_bilinear(h, w)?;
    let finest = generator_forward(stage_weights(gens, 2)?, g.concat_channels(&[x, up])?)?;
    Ok(CascadeOutput { coarse, finer, finest })
}

/// Single full-resolution pass with the image duplicated as its own auxiliary
/// input; sides need only be multiples of 4.
pub fn single_stage_forward<'g, T: Float>(gen: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    generator_forward(gen, x.graph().concat_channels(&[x, x])?)
}
