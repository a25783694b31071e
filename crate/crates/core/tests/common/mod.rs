#![allow(dead_code)]

use pgcycle::autograd::{Graph, Tensor, Var};
use pgcycle::image::Image;
use pgcycle::nn::{NetworkSpec, ParameterSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor(dims: [usize; 4], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.iter().product();
    Tensor::from_vec(dims, (0..len).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Smallest generator the width rules allow, with one residual block.
pub fn tiny_generator() -> NetworkSpec {
    NetworkSpec {
        se_reduction: 4,
        ..NetworkSpec::generator().with_base_width(4).with_res_blocks(1)
    }
}

pub fn zero_tensor(p: &mut ParameterSet<f64>, name: &str) {
    p.get_mut(name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
}

/// `sum(out * probe)` with a fixed random probe, so every output element
/// carries a distinct weight.
pub fn probe_loss<'g>(g: &'g Graph<f64>, out: Var<'g, f64>, seed: u64) -> Var<'g, f64> {
    let probe = g.constant(random_tensor(out.dims(), -1.0, 1.0, seed));
    out.mul(probe).unwrap().mean()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Central difference of `f` in element `j` of `x`.
pub fn central_difference(x: &Tensor<f64>, j: usize, h: f64, f: impl Fn(&Tensor<f64>) -> f64) -> f64 {
    let mut plus = x.clone();
    plus.data_mut()[j] += h;
    let mut minus = x.clone();
    minus.data_mut()[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// `n_foggy` fogged and `n_clean` clean procedural scenes of `side × side`
/// under `root/set/{foggy,clean}`.
pub fn desk_set(root: &std::path::Path, n_foggy: usize, n_clean: usize, side: usize) -> (std::path::PathBuf, std::path::PathBuf) {
    use pgcycle::fog::{make_unpaired_set, synth_scene, FogParams, UnpairedSetOptions};
    let src = root.join("src");
    for i in 0..(n_foggy + n_clean) as u64 {
        pgcycle::image::save_image(&synth_scene(side, side, i).unwrap(), src.join(format!("s{i:02}.png"))).unwrap();
    }
    let opts = UnpairedSetOptions { n_foggy, n_clean, seed: 1, with_replacement: false, fog: FogParams::default() };
    make_unpaired_set(&src, &root.join("set"), &opts).unwrap();
    (root.join("set/foggy"), root.join("set/clean"))
}

/// Small networks and crops for CPU runs.
pub fn desk_config(crop: usize) -> pgcycle::train::TrainConfig {
    pgcycle::train::TrainConfig {
        lr: 2e-3,
        resize_to: crop + crop / 8,
        crop_to: crop,
        base_width: 16,
        vgg_width_div: 4,
        checkpoint_every: 0,
        ..Default::default()
    }
}

/// Data rows of a loss log.
pub fn log_rows(path: &std::path::Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

pub fn eval<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.constant(x.clone())).collect();
    f(&g, &vars).item()
}

/// Gradients of a scalar loss with respect to every input against central
/// differences.
pub fn gradcheck<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
{
    let g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|x| g.variable(x.clone())).collect();
    let grads = g.backward(f(&g, &vars)).unwrap();
    for (i, v) in vars.iter().enumerate() {
        // Inputs the loss does not touch get no gradient entry.
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].dims()));
        for j in 0..inputs[i].len() {
            let numeric = central_difference(&inputs[i], j, 1e-6, |moved| {
                let mut xs = inputs.to_vec();
                xs[i] = moved.clone();
                eval(&xs, &f)
            });
            let a = analytic.data()[j];
            if a.abs().max(numeric.abs()) < 1e-9 {
                continue;
            }
            assert!(rel_err(a, numeric) < 1e-3, "{name}: input {i}[{j}] analytic {a} vs numeric {numeric}");
        }
    }
}

/// Direct SSIM: full 2-D Gaussian window evaluated at every valid position.
pub fn ssim_reference(a: &Image, b: &Image) -> f64 {
    let (k, sigma) = (11usize, 1.5f64);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut window = vec![vec![0.0; k]; k];
    let mut norm = 0.0;
    for (i, row) in window.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            norm += *v;
        }
    }
    let (h, w) = (a.height(), a.width());
    let mut per_channel = Vec::new();
    for c in 0..3 {
        let mut scores = Vec::new();
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = window[i][j] / norm;
                        let (p, q) = (a.get(c, y0 + i, x0 + j), b.get(c, y0 + i, x0 + j));
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                scores.push(
                    (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)),
                );
            }
        }
        per_channel.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    per_channel.iter().sum::<f64>() / 3.0
}
