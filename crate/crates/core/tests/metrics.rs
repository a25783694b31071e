mod common;

use common::ssim_reference;
use pgcycle::fog::{apply_fog, synth_scene, FogParams};
use pgcycle::image::{Image, ValueRange};
use pgcycle::metrics::{fog_proxy, psnr, ssim, EvalReport, Psnr, FOG_WINDOW};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    let data = (0..3 * h * w).map(|_| rng.gen_range(0.0..=1.0)).collect();
    Image::new(h, w, 3, ValueRange::Unit, data).unwrap()
}

fn flat(v: f64) -> Image {
    Image::filled(16, 16, 3, ValueRange::Unit, v).unwrap()
}

#[test]
fn psnr_of_uniform_differences() {
    assert_eq!(psnr(&flat(0.3), &flat(0.3)).unwrap(), Psnr::Infinite);
    assert_eq!(psnr(&flat(0.0), &flat(0.1)).unwrap(), Psnr::Finite(20.0));
    assert_eq!(psnr(&flat(0.0), &flat(0.01)).unwrap(), Psnr::Finite(40.0));
    assert_eq!(Psnr::Infinite.to_string(), "inf");
}

#[test]
fn ssim_matches_the_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for i in 0..20 {
        let (h, w) = (16 + i % 3, 16 + i % 5);
        let a = noise(h, w, &mut rng);
        // Correlated partner so scores cover more than the near-zero range.
        let other = noise(h, w, &mut rng);
        let mix: f64 = rng.gen_range(0.0..1.0);
        let b = Image::from_fn(h, w, 3, ValueRange::Unit, |c, y, x| {
            mix * a.get(c, y, x) + (1.0 - mix) * other.get(c, y, x)
        })
        .unwrap();
        let (got, want) = (ssim(&a, &b).unwrap(), ssim_reference(&a, &b));
        assert!((got - want).abs() <= 1e-6, "pair {i}: {got} vs {want}");
    }
}

#[test]
fn ssim_extremes() {
    let a = Image::from_fn(16, 16, 3, ValueRange::Unit, |_, y, x| ((x / 3 + y / 2) % 2) as f64).unwrap();
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let inv = Image::from_fn(16, 16, 3, ValueRange::Unit, |c, y, x| 1.0 - a.get(c, y, x)).unwrap();
    assert!(ssim(&a, &inv).unwrap() < 0.0);
    assert!(ssim(&flat(0.1).crop(0, 0, 10, 16).unwrap(), &flat(0.2).crop(0, 0, 10, 16).unwrap()).is_err());
}

#[test]
fn fog_raises_the_proxy() {
    assert_eq!(fog_proxy(&flat(0.0), FOG_WINDOW).unwrap(), 0.0);
    assert_eq!(fog_proxy(&flat(1.0), FOG_WINDOW).unwrap(), 1.0);
    for seed in 0..8 {
        let clean = synth_scene(40, 40, seed).unwrap();
        let foggy = apply_fog(&clean, &FogParams::constant(0.9, 0.5)).unwrap();
        assert!(fog_proxy(&foggy, FOG_WINDOW).unwrap() > fog_proxy(&clean, FOG_WINDOW).unwrap());
    }
}

#[test]
fn report_means_are_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut report = EvalReport::default();
    let pairs: Vec<(Image, Image)> = (0..4).map(|_| (noise(12, 12, &mut rng), noise(12, 12, &mut rng))).collect();
    for (i, (a, b)) in pairs.iter().enumerate() {
        report.push(format!("img{i}"), a, Some(b)).unwrap();
    }
    let mean = report.mean().unwrap();
    let avg = |f: &dyn Fn(&(Image, Image)) -> f64| pairs.iter().map(f).sum::<f64>() / 4.0;
    assert!((mean.psnr.unwrap().db() - avg(&|(a, b)| psnr(a, b).unwrap().db())).abs() < 1e-12);
    assert!((mean.ssim.unwrap() - avg(&|(a, b)| ssim(a, b).unwrap())).abs() < 1e-12);
    assert!((mean.fog_proxy - avg(&|(a, _)| fog_proxy(a, FOG_WINDOW).unwrap())).abs() < 1e-12);
    let csv = report.to_csv();
    assert!(csv.starts_with("image,psnr_db,ssim,fog_proxy\n"));
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));

    report.push("same", &pairs[0].0, Some(&pairs[0].0)).unwrap();
    assert_eq!(report.mean().unwrap().psnr, Some(Psnr::Infinite));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (noise(13, 11, &mut rng), noise(13, 11, &mut rng));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
