use pgcycle_autograd::{ConvOpts, Float, Var};

use super::{Bound, Role};
use crate::{Error, Result};

const SLOPE: f64 = 0.2;
/// Smallest input side the five stride-2 layers can reduce to one cell.
pub const PATCH_MIN_SIDE: usize = 32;

fn check_input<T: Float>(p: &Bound<'_, T>, x: Var<'_, T>, role: Role) -> Result<()> {
    if p.spec().role != role {
        return Err(Error::Spec(format!("expected {role:?} parameters, got {:?}", p.spec().role)));
    }
    let c = x.dims()[1];
    if c != p.spec().in_channels {
        return Err(Error::Shape(format!(
            "discriminator expects {} channels, got {c}",
            p.spec().in_channels
        )));
    }
    Ok(())
}

/// Five 4×4 stride-2 convolutions; one score per receptive-field patch.
pub fn disc_patch_forward<'g, T: Float>(p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    check_input(p, x, Role::DiscPatch)?;
    let [_, _, h, w] = x.dims();
    if h < PATCH_MIN_SIDE || w < PATCH_MIN_SIDE {
        return Err(Error::Shape(format!(
            "patch discriminator needs inputs of at least {PATCH_MIN_SIDE}x{PATCH_MIN_SIDE}, got {h}x{w}"
        )));
    }
    let opts = ConvOpts::new(2, 1);
    let mut f = x;
    for i in 0..4 {
        f = p.norm(p.conv(&format!("conv.{i}"), f, opts)?).leaky_relu(SLOPE);
    }
    p.conv("conv.4", f, opts)
}

/// Three 1×1 convolutions; one score per input pixel.
pub fn disc_pixel_forward<'g, T: Float>(p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    check_input(p, x, Role::DiscPixel)?;
    let opts = ConvOpts::default();
    let f = p.norm(p.conv("conv.0", x, opts)?).leaky_relu(SLOPE);
    let f = p.norm(p.conv("conv.1", f, opts)?).leaky_relu(SLOPE);
    p.conv("conv.2", f, opts)
}

/// Dispatches on the bound spec's role.
pub fn discriminator_forward<'g, T: Float>(p: &Bound<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    match p.spec().role {
        Role::DiscPatch => disc_patch_forward(p, x),
        Role::DiscPixel => disc_pixel_forward(p, x),
        Role::Generator => Err(Error::Spec("generator parameters passed to a discriminator".into())),
    }
}
