mod common;

use common::{eval, gradcheck, random_tensor, rel_err};
use pgcycle::autograd::{Graph, Tensor};
use pgcycle::losses::{
    cycle_loss, gan_f_losses, lsgan_discriminator_loss, lsgan_generator_loss, perceptual_loss, pg_cycle_loss,
    pg_gan_discriminator_loss, pg_gan_generator_loss, total_loss, LossTerms,
};
use pgcycle::nn::Vgg16;
use proptest::prelude::*;

fn t(dims: [usize; 4], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(dims, data.to_vec()).unwrap()
}

fn img(seed: u64) -> Tensor<f64> {
    random_tensor([1, 3, 4, 4], -1.0, 1.0, seed)
}

fn map(seed: u64) -> Tensor<f64> {
    random_tensor([1, 1, 4, 4], 0.0, 1.0, seed)
}

#[test]
fn cycle_loss_examples() {
    let (x, y) = (img(1), img(2));
    let cyc = |fgx: &Tensor<f64>, gfy: &Tensor<f64>| {
        eval(&[x.clone(), fgx.clone(), y.clone(), gfy.clone()], |_, v| cycle_loss(v[0], v[1], v[2], v[3]).unwrap())
    };
    assert_eq!(cyc(&x, &y), 0.0);
    let shifted = x.map(|v| v + 0.1);
    assert!((cyc(&shifted, &y) - 0.1).abs() < 1e-12);

    let a = t([1, 1, 2, 2], &[0.5, -0.25, 0.0, 1.0]);
    let fa = t([1, 1, 2, 2], &[0.25, 0.25, -0.5, 0.5]);
    let b = t([1, 1, 2, 2], &[-1.0, 0.0, 0.3, 0.2]);
    let fb = t([1, 1, 2, 2], &[-0.5, 0.1, 0.3, 0.0]);
    let hand = (0.25 + 0.5 + 0.5 + 0.5) / 4.0 + (0.5 + 0.1 + 0.0 + 0.2) / 4.0;
    let got = eval(&[a, fa, b, fb], |_, v| cycle_loss(v[0], v[1], v[2], v[3]).unwrap());
    assert!((got - hand).abs() < 1e-12);
}

#[test]
fn prior_guided_cycle_examples() {
    let (x, fgx, y) = (img(3), img(4), img(5));
    let zeros = Tensor::zeros([1, 1, 4, 4]);
    let got = eval(&[x, fgx, y.clone(), y, zeros.clone(), map(6)], |_, v| {
        pg_cycle_loss(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    });
    assert_eq!(got, 0.0);

    let a = t([1, 1, 2, 2], &[0.5, -0.25, 0.0, 1.0]);
    let fa = t([1, 1, 2, 2], &[0.25, 0.25, -0.5, 0.5]);
    let diag = t([1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let hand = (0.25 + 0.5) / 4.0;
    let got = eval(&[a.clone(), fa, a.clone(), a, diag.clone(), diag], |_, v| {
        pg_cycle_loss(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    });
    assert!((got - hand).abs() < 1e-12);
}

#[test]
fn prior_guided_adversarial_examples() {
    let ones = Tensor::ones([1, 1, 4, 4]);
    let zeros = Tensor::zeros([1, 1, 4, 4]);
    let d = eval(&[ones.clone(), zeros.clone(), map(1)], |_, v| pg_gan_discriminator_loss(v[0], v[1], v[2]).unwrap());
    assert_eq!(d, 0.0);

    let (real, fake) = (map(2), random_tensor([1, 1, 4, 4], -1.0, 2.0, 3));
    let weighted = eval(&[fake.clone(), ones.clone()], |_, v| pg_gan_generator_loss(v[0], v[1]).unwrap());
    let plain = eval(std::slice::from_ref(&fake), |_, v| lsgan_generator_loss(v[0]));
    assert!((weighted - plain).abs() < 1e-15);
    let weighted = eval(&[real.clone(), fake.clone(), ones], |_, v| pg_gan_discriminator_loss(v[0], v[1], v[2]).unwrap());
    let plain = eval(&[real.clone(), fake.clone()], |_, v| lsgan_discriminator_loss(v[0], v[1]).unwrap());
    assert!((weighted - plain).abs() < 1e-15);

    let gen = eval(&[fake.clone(), zeros.clone()], |_, v| pg_gan_generator_loss(v[0], v[1]).unwrap());
    assert_eq!(gen, 1.0);
    let disc = eval(&[real.clone(), fake, zeros], |_, v| pg_gan_discriminator_loss(v[0], v[1], v[2]).unwrap());
    let real_term = real.data().iter().map(|r| (r - 1.0).powi(2)).sum::<f64>() / 16.0;
    assert!((disc - real_term).abs() < 1e-12);
}

#[test]
fn unweighted_adversarial_examples() {
    let f = |real: &Tensor<f64>, fake: &Tensor<f64>| {
        let g = Graph::new();
        let (gen, disc) = gan_f_losses(g.constant(real.clone()), g.constant(fake.clone())).unwrap();
        (gen.item(), disc.item())
    };
    let ones = Tensor::ones([1, 1, 2, 2]);
    let zeros = Tensor::zeros([1, 1, 2, 2]);
    assert_eq!(f(&ones, &zeros), (1.0, 0.0));
    assert_eq!(f(&zeros, &ones).0, 0.0);
    let real = t([1, 1, 2, 2], &[0.5, 1.5, -0.5, 1.0]);
    let fake = t([1, 1, 2, 2], &[0.2, -0.4, 0.9, 0.0]);
    let gen = (0.64 + 1.96 + 0.01 + 1.0) / 4.0;
    let disc = (0.25 + 0.25 + 2.25 + 0.0) / 4.0 + (0.04 + 0.16 + 0.81 + 0.0) / 4.0;
    let (g, d) = f(&real, &fake);
    assert!((g - gen).abs() < 1e-12 && (d - disc).abs() < 1e-12);
}

#[test]
fn perceptual_examples_against_direct_features() {
    let vgg = Vgg16::<f64>::random(4, 8).unwrap();
    let xs: Vec<_> = (0..4).map(|i| random_tensor([1, 3, 8, 8], -1.0, 1.0, 40 + i)).collect();
    let loss = eval(&xs, |g, v| perceptual_loss(g, &vgg, v[0], v[1], v[2], v[3]).unwrap());
    let features = |x: &Tensor<f64>| {
        let g = Graph::new();
        let (a, b) = vgg.features(&g, g.constant(x.clone())).unwrap();
        (a.value().as_ref().clone(), b.value().as_ref().clone())
    };
    let mse = |a: &Tensor<f64>, b: &Tensor<f64>| {
        a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64
    };
    let f: Vec<_> = xs.iter().map(features).collect();
    let direct = mse(&f[0].0, &f[1].0) + mse(&f[0].1, &f[1].1) + mse(&f[2].0, &f[3].0) + mse(&f[2].1, &f[3].1);
    assert!(rel_err(loss, direct) < 1e-12, "{loss} vs {direct}");
    assert!(loss > 0.0);
    let same = eval(&[xs[0].clone(), xs[0].clone(), xs[2].clone(), xs[2].clone()], |g, v| {
        perceptual_loss(g, &vgg, v[0], v[1], v[2], v[3]).unwrap()
    });
    assert_eq!(same, 0.0);
    let swapped = eval(&[xs[1].clone(), xs[0].clone(), xs[3].clone(), xs[2].clone()], |g, v| {
        perceptual_loss(g, &vgg, v[0], v[1], v[2], v[3]).unwrap()
    });
    assert!(rel_err(loss, swapped) < 1e-12);
}

#[test]
fn total_follows_the_weighted_sum() {
    let terms = LossTerms { l_cyc: 1.0, l_pgcyc: 1.0, l_vgg: 1.0, l_pg_g: 1.0, l_gan_f: 0.0, l_dx: 3.0, l_dy: 4.0 };
    assert_eq!(total_loss(terms, 1.0, 2.0).unwrap().total, 5.0);
    assert_eq!(total_loss(LossTerms::default(), 1.0, 2.0).unwrap().total, 0.0);
    let a = total_loss(LossTerms { l_pg_g: 7.0, l_gan_f: 9.0, ..terms }, 1.0, 0.0).unwrap();
    assert_eq!(a.total, 3.0);
    assert!(total_loss(LossTerms { l_vgg: f64::NAN, ..terms }, 1.0, 2.0).is_err());
}

#[test]
fn mismatched_shapes_are_errors() {
    let g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros([1, 3, 4, 4]));
    let b = g.constant(Tensor::zeros([1, 3, 4, 2]));
    let pm = g.constant(Tensor::zeros([1, 1, 2, 2]));
    assert!(cycle_loss(a, b, a, a).is_err());
    assert!(pg_cycle_loss(a, a, a, a, pm, pm).is_err());
    let score = g.constant(Tensor::zeros([1, 1, 4, 4]));
    assert!(pg_gan_generator_loss(score, pm).is_err());
    assert!(gan_f_losses(score, pm).is_err());
}

#[test]
fn every_loss_matches_finite_differences() {
    let (x, fx, y, fy) = (img(10), img(11), img(12), img(13));
    let (pa, pb) = (map(14), map(15));
    gradcheck("cycle", &[x.clone(), fx.clone(), y.clone(), fy.clone()], |_, v| {
        cycle_loss(v[0], v[1], v[2], v[3]).unwrap()
    });
    gradcheck("pg-cycle", &[x.clone(), fx.clone(), y.clone(), fy.clone(), pa.clone(), pb.clone()], |_, v| {
        pg_cycle_loss(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    });
    let (real, fake) = (random_tensor([1, 1, 4, 4], -1.0, 2.0, 16), random_tensor([1, 1, 4, 4], -1.0, 2.0, 17));
    gradcheck("pg-gan generator", &[fake.clone(), pa.clone()], |_, v| pg_gan_generator_loss(v[0], v[1]).unwrap());
    gradcheck("pg-gan discriminator", &[real.clone(), fake.clone(), pa.clone()], |_, v| {
        pg_gan_discriminator_loss(v[0], v[1], v[2]).unwrap()
    });
    gradcheck("gan generator", &[real.clone(), fake.clone()], |_, v| gan_f_losses(v[0], v[1]).unwrap().0);
    gradcheck("gan discriminator", &[real, fake], |_, v| gan_f_losses(v[0], v[1]).unwrap().1);
    let vgg = Vgg16::<f64>::random(3, 8).unwrap();
    gradcheck("perceptual", &[x, fx, y, fy], |g, v| perceptual_loss(g, &vgg, v[0], v[1], v[2], v[3]).unwrap());
}

fn tensor_strategy(dims: [usize; 4], lo: f64, hi: f64) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(lo..hi, dims.iter().product::<usize>()).prop_map(move |d| Tensor::from_vec(dims, d).unwrap())
}

fn pg_cycle(inputs: &[Tensor<f64>]) -> f64 {
    eval(inputs, |_, v| pg_cycle_loss(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neutral_maps_reduce_to_the_plain_cycle_loss(
        x in tensor_strategy([2, 3, 3, 5], -1.0, 1.0), fx in tensor_strategy([2, 3, 3, 5], -1.0, 1.0),
        y in tensor_strategy([2, 3, 3, 5], -1.0, 1.0), fy in tensor_strategy([2, 3, 3, 5], -1.0, 1.0),
    ) {
        let ones = Tensor::ones([2, 1, 3, 5]);
        let plain = eval(&[x.clone(), fx.clone(), y.clone(), fy.clone()], |_, v| cycle_loss(v[0], v[1], v[2], v[3]).unwrap());
        let guided = pg_cycle(&[x, fx, y, fy, ones.clone(), ones]);
        prop_assert!((plain - guided).abs() <= 1e-6);
    }

    #[test]
    fn raising_a_weight_never_lowers_the_loss(
        x in tensor_strategy([1, 3, 4, 4], -1.0, 1.0), fx in tensor_strategy([1, 3, 4, 4], -1.0, 1.0),
        pm in tensor_strategy([1, 1, 4, 4], 0.0, 1.0), at in 0usize..16, bump in 0.0f64..2.0,
    ) {
        let mut raised = pm.clone();
        raised.data_mut()[at] += bump;
        let base = pg_cycle(&[x.clone(), fx.clone(), x.clone(), fx.clone(), pm.clone(), pm]);
        let more = pg_cycle(&[x.clone(), fx.clone(), x, fx, raised.clone(), raised]);
        prop_assert!(more >= base);
    }

    #[test]
    fn weights_scale_the_loss_linearly(
        x in tensor_strategy([1, 3, 4, 4], -1.0, 1.0), fx in tensor_strategy([1, 3, 4, 4], -1.0, 1.0),
        pm in tensor_strategy([1, 1, 4, 4], 0.0, 1.0), c in 0.01f64..100.0,
    ) {
        let scaled = pm.map(|v| v * c);
        let base = pg_cycle(&[x.clone(), fx.clone(), x.clone(), fx.clone(), pm.clone(), pm]);
        let more = pg_cycle(&[x.clone(), fx.clone(), x, fx, scaled.clone(), scaled]);
        prop_assert!((more - c * base).abs() <= 1e-9 * (1.0 + c * base));
    }

    #[test]
    fn losses_are_non_negative_and_vanish_only_at_the_target(
        x in tensor_strategy([1, 3, 2, 2], -1.0, 1.0), fx in tensor_strategy([1, 3, 2, 2], -1.0, 1.0),
        real in tensor_strategy([1, 1, 2, 2], -2.0, 2.0), fake in tensor_strategy([1, 1, 2, 2], -2.0, 2.0),
    ) {
        let cyc = eval(&[x.clone(), fx.clone(), x.clone(), x.clone()], |_, v| cycle_loss(v[0], v[1], v[2], v[3]).unwrap());
        prop_assert!(cyc >= 0.0);
        prop_assert_eq!(cyc == 0.0, x == fx);
        let (gen, disc) = {
            let g = Graph::new();
            let (a, b) = gan_f_losses(g.constant(real.clone()), g.constant(fake.clone())).unwrap();
            (a.item(), b.item())
        };
        prop_assert!(gen >= 0.0 && disc >= 0.0);
        prop_assert_eq!(gen == 0.0, fake.data().iter().all(|&v| v == 1.0));
        prop_assert_eq!(disc == 0.0, real.data().iter().all(|&v| v == 1.0) && fake.data().iter().all(|&v| v == 0.0));
    }
}
