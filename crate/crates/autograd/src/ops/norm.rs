use crate::{Float, Tensor};

/// Per-(sample, channel) normalisation over the spatial plane, no affine
/// parameters. Returns the output and the inverse standard deviations.
pub fn instance_norm<T: Float>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let [n, c, h, w] = x.dims();
    let hw = h * w;
    let inv_n = T::one() / T::of(hw as f64);
    let mut out = Tensor::zeros(x.dims());
    let mut inv_std = Vec::with_capacity(n * c);
    for (plane, dst) in x.data().chunks(hw).zip(out.data_mut().chunks_mut(hw)) {
        let mean = plane.iter().copied().sum::<T>() * inv_n;
        let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let is = T::one() / (var + eps).sqrt();
        for (d, &v) in dst.iter_mut().zip(plane) {
            *d = (v - mean) * is;
        }
        inv_std.push(is);
    }
    (out, inv_std)
}

/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))` per plane.
pub fn instance_norm_backward<T: Float>(y: &Tensor<T>, inv_std: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = y.dims();
    let hw = h * w;
    let inv_n = T::one() / T::of(hw as f64);
    let mut dx = Tensor::zeros(y.dims());
    for (((yp, gp), dst), &is) in y
        .data()
        .chunks(hw)
        .zip(dy.data().chunks(hw))
        .zip(dx.data_mut().chunks_mut(hw))
        .zip(inv_std)
    {
        let mean_g = gp.iter().copied().sum::<T>() * inv_n;
        let mean_gy = gp.iter().zip(yp).map(|(&g, &v)| g * v).sum::<T>() * inv_n;
        for ((d, &g), &v) in dst.iter_mut().zip(gp).zip(yp) {
            *d = is * (g - mean_g - v * mean_gy);
        }
    }
    dx
}
