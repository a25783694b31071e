//! Channel concatenation/slicing, pixel shuffle and pooling.

use crate::{Error, Float, Result, Tensor};

pub fn concat_channels<T: Float>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?
        .dims();
    for x in xs {
        let d = x.dims();
        if d[0] != first[0] || d[2] != first[2] || d[3] != first[3] {
            return Err(Error::shape("concat_channels", first, d));
        }
    }
    let [n, _, h, w] = first;
    let c: usize = xs.iter().map(|x| x.dims()[1]).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        for x in xs {
            data.extend_from_slice(x.sample(s));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Splits a concatenated gradient back into per-input pieces.
pub fn split_channels<T: Float>(dy: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let [n, _, h, w] = dy.dims();
    let hw = h * w;
    let mut out: Vec<Vec<T>> = widths.iter().map(|&c| Vec::with_capacity(n * c * hw)).collect();
    for s in 0..n {
        let sample = dy.sample(s);
        let mut off = 0;
        for (i, &c) in widths.iter().enumerate() {
            out[i].extend_from_slice(&sample[off..off + c * hw]);
            off += c * hw;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &c)| Tensor::from_vec([n, c, h, w], d).expect("split sizes"))
        .collect()
}

pub fn narrow_channels<T: Float>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if start + len > c || len == 0 {
        return Err(Error::InvalidArgument(format!(
            "narrow_channels: range {start}..{} outside {c} channels",
            start + len
        )));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * len * hw);
    for s in 0..n {
        data.extend_from_slice(&x.sample(s)[start * hw..(start + len) * hw]);
    }
    Tensor::from_vec([n, len, h, w], data)
}

pub fn narrow_channels_backward<T: Float>(dy: &Tensor<T>, dims: [usize; 4], start: usize) -> Tensor<T> {
    let [n, c, h, w] = dims;
    let len = dy.dims()[1];
    let hw = h * w;
    let mut dx = Tensor::zeros(dims);
    for s in 0..n {
        let dst = &mut dx.data_mut()[(s * c + start) * hw..(s * c + start + len) * hw];
        dst.copy_from_slice(dy.sample(s));
    }
    dx
}

/// `[n, c*r*r, h, w] -> [n, c, h*r, w*r]`, channel `c*r*r + i*r + j` feeding
/// sub-position `(i, j)`.
pub fn pixel_shuffle<T: Float>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::InvalidArgument(format!(
            "pixel_shuffle: {c} channels not divisible by {}",
            r * r
        )));
    }
    let oc = c / (r * r);
    let mut out = Tensor::zeros([n, oc, h * r, w * r]);
    for s in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(s, co * r * r + i * r + j);
                    for y in 0..h {
                        for xx in 0..w {
                            let k = out.index(s, co, y * r + i, xx * r + j);
                            out.data_mut()[k] = src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_unshuffle<T: Float>(dy: &Tensor<T>, r: usize) -> Tensor<T> {
    let [n, oc, oh, ow] = dy.dims();
    let (h, w) = (oh / r, ow / r);
    let mut dx = Tensor::zeros([n, oc * r * r, h, w]);
    for s in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let base = (s * oc * r * r + co * r * r + i * r + j) * h * w;
                    for y in 0..h {
                        for xx in 0..w {
                            dx.data_mut()[base + y * w + xx] = dy.at(s, co, y * r + i, xx * r + j);
                        }
                    }
                }
            }
        }
    }
    dx
}

pub fn global_avg_pool<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    let inv = T::one() / T::of((h * w) as f64);
    let data = (0..n)
        .flat_map(|s| (0..c).map(move |ch| (s, ch)))
        .map(|(s, ch)| x.plane(s, ch).iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pool dims")
}

pub fn global_avg_pool_backward<T: Float>(dy: &Tensor<T>, dims: [usize; 4]) -> Tensor<T> {
    let hw = dims[2] * dims[3];
    let inv = T::one() / T::of(hw as f64);
    let mut dx = Tensor::zeros(dims);
    for (chunk, &g) in dx.data_mut().chunks_mut(hw).zip(dy.data()) {
        chunk.iter_mut().for_each(|v| *v = g * inv);
    }
    dx
}

/// 2x2 stride-2 max pooling in ceil mode (edge windows are clipped), so odd
/// and tiny inputs still produce at least one output per axis.
pub fn max_pool2<T: Float>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let mut k = 0;
    for s in 0..n {
        for ch in 0..c {
            let plane = x.plane(s, ch);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = oy * 2 * w + ox * 2;
                    for y in oy * 2..(oy * 2 + 2).min(h) {
                        for xx in ox * 2..(ox * 2 + 2).min(w) {
                            if plane[y * w + xx] > plane[best] {
                                best = y * w + xx;
                            }
                        }
                    }
                    out.data_mut()[k] = plane[best];
                    arg.push(best as u32);
                    k += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Float>(dy: &Tensor<T>, dims: [usize; 4], arg: &[u32]) -> Tensor<T> {
    let hw = dims[2] * dims[3];
    let per_plane = dy.dims()[2] * dy.dims()[3];
    let mut dx = Tensor::zeros(dims);
    for (i, (&g, &a)) in dy.data().iter().zip(arg).enumerate() {
        let plane = i / per_plane;
        dx.data_mut()[plane * hw + a as usize] += g;
    }
    dx
}
