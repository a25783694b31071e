//! Bilinear resampling with half-pixel centres.

use crate::{Error, Float, Result, Tensor};

/// Interpolation taps along one axis: `(lo, hi, weight_of_hi)` per output index.
pub fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check(x: [usize; 4], out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 || x[2] == 0 || x[3] == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize: cannot resample {}x{} to {out_h}x{out_w}",
            x[2], x[3]
        )));
    }
    Ok(())
}

pub fn forward<T: Float>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    check(x.dims(), out_h, out_w)?;
    let [n, c, h, w] = x.dims();
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let mut k = 0;
    let data = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let plane = x.plane(s, ch);
            for &(y0, y1, ly) in &ty {
                let ly = T::of(ly);
                let r0 = &plane[y0 * w..(y0 + 1) * w];
                let r1 = &plane[y1 * w..(y1 + 1) * w];
                for &(x0, x1, lx) in &tx {
                    let lx = T::of(lx);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    data[k] = top + (bottom - top) * ly;
                    k += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`forward`]: scatters `dy` back onto an `in_h×in_w` grid.
pub fn backward<T: Float>(dy: &Tensor<T>, in_h: usize, in_w: usize) -> Tensor<T> {
    let [n, c, oh, ow] = dy.dims();
    if (in_h, in_w) == (oh, ow) {
        return dy.clone();
    }
    let ty = axis_taps(in_h, oh);
    let tx = axis_taps(in_w, ow);
    let mut dx = Tensor::zeros([n, c, in_h, in_w]);
    for s in 0..n {
        for ch in 0..c {
            let g = dy.plane(s, ch);
            let base = (s * c + ch) * in_h * in_w;
            let dst = &mut dx.data_mut()[base..base + in_h * in_w];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::of(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::of(lx);
                    let v = g[oy * ow + ox];
                    let top = v * (T::one() - ly);
                    let bottom = v * ly;
                    dst[y0 * in_w + x0] += top * (T::one() - lx);
                    dst[y0 * in_w + x1] += top * lx;
                    dst[y1 * in_w + x0] += bottom * (T::one() - lx);
                    dst[y1 * in_w + x1] += bottom * lx;
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard_collapses_to_mean() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let y = forward(&x, 1, 1).unwrap();
        assert_eq!(y.data(), &[0.5]);
    }

    #[test]
    fn upsample_by_two_of_constant_is_constant() {
        let x = Tensor::full([1, 2, 3, 5], 0.25f64);
        let y = forward(&x, 6, 10).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn backward_is_adjoint() {
        // <R x, g> == <x, R^T g>
        let x = Tensor::from_vec([1, 1, 3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let g = Tensor::from_vec([1, 1, 5, 7], (0..35).map(|i| (i as f64 * 0.3).cos()).collect()).unwrap();
        let rx = forward(&x, 5, 7).unwrap();
        let rtg = backward(&g, 3, 4);
        let lhs: f64 = rx.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(rtg.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
