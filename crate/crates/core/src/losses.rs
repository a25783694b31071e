//! Training objectives. All expectations are means over batch and pixels.

use pgcycle_autograd::{Float, Graph, Var};

use crate::nn::Vgg16;
use crate::{Error, Result};

pub const DEFAULT_LAMBDA1: f64 = 1.0;
pub const DEFAULT_LAMBDA2: f64 = 2.0;

fn same_shape<T: Float>(op: &str, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{op}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Weight maps are `[n, 1, h, w]` (or `[1, 1, h, w]`) over `[n, c, h, w]` data.
fn check_weights<T: Float>(op: &str, data: Var<'_, T>, pm: Var<'_, T>) -> Result<()> {
    let [n, _, h, w] = data.dims();
    let [pn, pc, ph, pw] = pm.dims();
    if pc != 1 || (ph, pw) != (h, w) || (pn != n && pn != 1) {
        return Err(Error::Shape(format!(
            "{op}: prior map {:?} does not cover {:?}",
            pm.dims(),
            data.dims()
        )));
    }
    Ok(())
}

fn l1<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(a.sub(b)?.abs().mean())
}

fn weighted_l1<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>, pm: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(a.sub(b)?.abs().mul(pm)?.mean())
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`.
pub fn cycle_loss<'g, T: Float>(
    x: Var<'g, T>,
    fgx: Var<'g, T>,
    y: Var<'g, T>,
    gfy: Var<'g, T>,
) -> Result<Var<'g, T>> {
    same_shape("cycle loss", x, fgx)?;
    same_shape("cycle loss", y, gfy)?;
    Ok(l1(fgx, x)?.add(l1(gfy, y)?)?)
}

/// Cycle loss with each pixel's residual scaled by its prior-map weight.
pub fn pg_cycle_loss<'g, T: Float>(
    x: Var<'g, T>,
    fgx: Var<'g, T>,
    y: Var<'g, T>,
    gfy: Var<'g, T>,
    pm_x: Var<'g, T>,
    pm_y: Var<'g, T>,
) -> Result<Var<'g, T>> {
    same_shape("prior-guided cycle loss", x, fgx)?;
    same_shape("prior-guided cycle loss", y, gfy)?;
    check_weights("prior-guided cycle loss", x, pm_x)?;
    check_weights("prior-guided cycle loss", y, pm_y)?;
    Ok(weighted_l1(fgx, x, pm_x)?.add(weighted_l1(gfy, y, pm_y)?)?)
}

/// Least-squares generator term `mean((fake - 1)^2)`.
pub fn lsgan_generator_loss<'g, T: Float>(fake: Var<'g, T>) -> Var<'g, T> {
    fake.affine(1.0, -1.0).square().mean()
}

/// Least-squares discriminator term `mean((real - 1)^2) + mean(fake^2)`.
pub fn lsgan_discriminator_loss<'g, T: Float>(real: Var<'g, T>, fake: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(real.affine(1.0, -1.0).square().mean().add(fake.square().mean())?)
}

/// Generator term against the per-pixel discriminator, with its score map
/// weighted by the foggy image's prior map.
pub fn pg_gan_generator_loss<'g, T: Float>(dy_fake: Var<'g, T>, pm_x: Var<'g, T>) -> Result<Var<'g, T>> {
    check_weights("prior-guided adversarial loss", dy_fake, pm_x)?;
    Ok(lsgan_generator_loss(dy_fake.mul(pm_x)?))
}

pub fn pg_gan_discriminator_loss<'g, T: Float>(
    dy_real: Var<'g, T>,
    dy_fake: Var<'g, T>,
    pm_x: Var<'g, T>,
) -> Result<Var<'g, T>> {
    check_weights("prior-guided adversarial loss", dy_fake, pm_x)?;
    lsgan_discriminator_loss(dy_real, dy_fake.mul(pm_x)?)
}

/// `(generator, discriminator)` least-squares terms for the unweighted
/// direction.
pub fn gan_f_losses<'g, T: Float>(real: Var<'g, T>, fake: Var<'g, T>) -> Result<(Var<'g, T>, Var<'g, T>)> {
    same_shape("adversarial loss", real, fake)?;
    Ok((lsgan_generator_loss(fake), lsgan_discriminator_loss(real, fake)?))
}

/// Sum over both taps and both cycles of mean squared feature differences.
pub fn perceptual_loss<'g, T: Float>(
    g: &'g Graph<T>,
    vgg: &Vgg16<T>,
    x: Var<'g, T>,
    fgx: Var<'g, T>,
    y: Var<'g, T>,
    gfy: Var<'g, T>,
) -> Result<Var<'g, T>> {
    same_shape("perceptual loss", x, fgx)?;
    same_shape("perceptual loss", y, gfy)?;
    let mut total: Option<Var<'g, T>> = None;
    for (a, b) in [(x, fgx), (y, gfy)] {
        let (a2, a5) = vgg.features(g, a)?;
        let (b2, b5) = vgg.features(g, b)?;
        for (fa, fb) in [(a2, b2), (a5, b5)] {
            let term = fa.sub(fb)?.square().mean();
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("four terms"))
}

/// Scalar values of one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_cyc: f64,
    pub l_pgcyc: f64,
    pub l_vgg: f64,
    pub l_pg_g: f64,
    pub l_gan_f: f64,
    pub l_dx: f64,
    pub l_dy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub terms: LossTerms,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "iter,l_cyc,l_pgcyc,l_vgg,l_pgG,l_ganF,l_dX,l_dY,total";

/// `lambda1 * (cycle + prior cycle + perceptual) + lambda2 * (both generator
/// adversarial terms)`.
pub fn total_loss(terms: LossTerms, lambda1: f64, lambda2: f64) -> Result<LossReport> {
    let named = [
        ("l_cyc", terms.l_cyc),
        ("l_pgcyc", terms.l_pgcyc),
        ("l_vgg", terms.l_vgg),
        ("l_pgG", terms.l_pg_g),
        ("l_ganF", terms.l_gan_f),
        ("l_dX", terms.l_dx),
        ("l_dY", terms.l_dy),
        ("lambda1", lambda1),
        ("lambda2", lambda2),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} = {v}")));
    }
    let total = lambda1 * (terms.l_cyc + terms.l_pgcyc + terms.l_vgg) + lambda2 * (terms.l_pg_g + terms.l_gan_f);
    Ok(LossReport {
        terms,
        lambda1,
        lambda2,
        total,
    })
}

impl LossReport {
    /// One row of the loss log; full round-trip precision.
    pub fn csv_row(&self, iter: u64) -> String {
        let t = &self.terms;
        format!(
            "{iter},{},{},{},{},{},{},{},{}",
            t.l_cyc, t.l_pgcyc, t.l_vgg, t.l_pg_g, t.l_gan_f, t.l_dx, t.l_dy, self.total
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_arithmetic() {
        let ones = LossTerms {
            l_cyc: 1.0,
            l_pgcyc: 1.0,
            l_vgg: 1.0,
            l_pg_g: 1.0,
            ..Default::default()
        };
        assert_eq!(total_loss(ones, 1.0, 2.0).unwrap().total, 5.0);
        assert_eq!(total_loss(LossTerms::default(), 1.0, 2.0).unwrap().total, 0.0);
        let mut adv = ones;
        adv.l_gan_f = 7.0;
        assert_eq!(total_loss(adv, 1.0, 0.0).unwrap().total, 3.0);
    }

    #[test]
    fn non_finite_terms_are_rejected() {
        let bad = LossTerms {
            l_vgg: f64::NAN,
            ..Default::default()
        };
        assert!(matches!(total_loss(bad, 1.0, 2.0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn csv_row_matches_header() {
        let r = total_loss(LossTerms::default(), 1.0, 2.0).unwrap();
        assert_eq!(r.csv_row(3).split(',').count(), LOSS_CSV_HEADER.split(',').count());
    }
}
