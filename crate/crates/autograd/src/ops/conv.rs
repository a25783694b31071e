//! Convolutions lowered to GEMM through im2col / col2im.

use crate::float::{gemm, Mat};
use crate::{Error, Float, Result, Tensor};

/// Sliding-window geometry over a `c×h×w` image producing `oh×ow` positions.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Trivial 1x1 geometry where the image already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Float>(img: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adds the column matrix back onto the image (`img` is accumulated into).
fn col2im<T: Float>(cols: &[T], g: &Geometry, img: &mut [T]) {
    let p = g.positions();
    for c in 0..g.c {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Options shared by [`conv2d`] and [`conv_transpose2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub pad: usize,
    /// Extra rows/columns appended to a transposed convolution's output.
    pub out_pad: usize,
}

impl ConvOpts {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self {
            stride,
            pad,
            out_pad: 0,
        }
    }

    pub fn with_out_pad(mut self, out_pad: usize) -> Self {
        self.out_pad = out_pad;
        self
    }
}

impl Default for ConvOpts {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

fn check_kernel(op: &'static str, w: [usize; 4]) -> Result<usize> {
    if w[2] != w[3] || w[2] == 0 {
        return Err(Error::InvalidArgument(format!(
            "{op}: only square non-empty kernels are supported, got {w:?}"
        )));
    }
    Ok(w[2])
}

fn check_bias<T: Float>(op: &'static str, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.dims() != [1, channels, 1, 1] {
            return Err(Error::shape(op, b.dims(), [1, channels, 1, 1]));
        }
    }
    Ok(())
}

fn conv_geometry(x: [usize; 4], k: usize, opts: ConvOpts) -> Result<Geometry> {
    if opts.stride == 0 {
        return Err(Error::InvalidArgument("conv2d: stride must be positive".into()));
    }
    let (h, w) = (x[2] + 2 * opts.pad, x[3] + 2 * opts.pad);
    if h < k || w < k {
        return Err(Error::InvalidArgument(format!(
            "conv2d: padded input {h}x{w} smaller than kernel {k}"
        )));
    }
    Ok(Geometry {
        c: x[1],
        h: x[2],
        w: x[3],
        k,
        stride: opts.stride,
        pad: opts.pad,
        oh: (h - k) / opts.stride + 1,
        ow: (w - k) / opts.stride + 1,
    })
}

/// Cross-correlation with zero padding. `w` is `[out, in, k, k]`, bias `[1, out, 1, 1]`.
pub fn conv2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOpts,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv2d", w.dims())?;
    let [n, cin, _, _] = x.dims();
    let cout = w.dims()[0];
    if w.dims()[1] != cin {
        return Err(Error::shape("conv2d", x.dims(), w.dims()));
    }
    check_bias("conv2d", bias, cout)?;
    let g = conv_geometry(x.dims(), k, opts)?;
    let p = g.positions();
    let mut out = Tensor::zeros([n, cout, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.rows() * p] };
    let wm = Mat::new(w.data(), cout, g.rows());
    for s in 0..n {
        let xs = x.sample(s);
        let colm = if g.is_pointwise() {
            Mat::new(xs, g.rows(), p)
        } else {
            im2col(xs, &g, &mut cols);
            Mat::new(&cols, g.rows(), p)
        };
        let dst = &mut out.data_mut()[s * cout * p..(s + 1) * cout * p];
        gemm(wm, colm, T::zero(), dst);
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]; each is only computed when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    opts: ConvOpts,
    want: [bool; 3],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let k = check_kernel("conv2d", w.dims())?;
    let g = conv_geometry(x.dims(), k, opts)?;
    let [n, cin, h, wd] = x.dims();
    let cout = w.dims()[0];
    let p = g.positions();
    let mut dx = want[0].then(|| Tensor::zeros(x.dims()));
    let mut dw = want[1].then(|| Tensor::zeros(w.dims()));
    let db = want[2].then(|| {
        let mut b = Tensor::zeros([1, cout, 1, 1]);
        for s in 0..n {
            for co in 0..cout {
                b.data_mut()[co] += dy.plane(s, co).iter().copied().sum::<T>();
            }
        }
        b
    });
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.rows() * p] };
    let wm = Mat::new(w.data(), cout, g.rows());
    for s in 0..n {
        let dys = Mat::new(dy.sample(s), cout, p);
        if let Some(dw) = dw.as_mut() {
            let colm = if g.is_pointwise() {
                Mat::new(x.sample(s), g.rows(), p)
            } else {
                im2col(x.sample(s), &g, &mut cols);
                Mat::new(&cols, g.rows(), p)
            };
            gemm(dys, colm.t(), T::one(), dw.data_mut());
        }
        if let Some(dx) = dx.as_mut() {
            let chw = cin * h * wd;
            let dst = &mut dx.data_mut()[s * chw..(s + 1) * chw];
            if g.is_pointwise() {
                gemm(wm.t(), dys, T::zero(), dst);
            } else {
                gemm(wm.t(), dys, T::zero(), &mut cols);
                col2im(&cols, &g, dst);
            }
        }
    }
    Ok((dx, dw, db))
}

fn transpose_geometry(x: [usize; 4], cout: usize, k: usize, opts: ConvOpts) -> Result<Geometry> {
    if opts.stride == 0 || opts.out_pad >= opts.stride {
        return Err(Error::InvalidArgument(
            "conv_transpose2d: need stride > 0 and out_pad < stride".into(),
        ));
    }
    let full_h = (x[2] - 1) * opts.stride + k + opts.out_pad;
    let full_w = (x[3] - 1) * opts.stride + k + opts.out_pad;
    if full_h <= 2 * opts.pad || full_w <= 2 * opts.pad {
        return Err(Error::InvalidArgument(
            "conv_transpose2d: padding removes the whole output".into(),
        ));
    }
    Ok(Geometry {
        c: cout,
        h: full_h - 2 * opts.pad,
        w: full_w - 2 * opts.pad,
        k,
        stride: opts.stride,
        pad: opts.pad,
        oh: x[2],
        ow: x[3],
    })
}

/// Transposed convolution. `w` is `[in, out, k, k]`.
pub fn conv_transpose2d<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOpts,
) -> Result<Tensor<T>> {
    let k = check_kernel("conv_transpose2d", w.dims())?;
    let [n, cin, h, wd] = x.dims();
    if w.dims()[0] != cin {
        return Err(Error::shape("conv_transpose2d", x.dims(), w.dims()));
    }
    let cout = w.dims()[1];
    check_bias("conv_transpose2d", bias, cout)?;
    let g = transpose_geometry(x.dims(), cout, k, opts)?;
    let hw = h * wd;
    let mut out = Tensor::zeros([n, cout, g.h, g.w]);
    let mut cols = vec![T::zero(); g.rows() * hw];
    let wm = Mat::new(w.data(), cin, g.rows());
    let out_chw = cout * g.h * g.w;
    for s in 0..n {
        gemm(wm.t(), Mat::new(x.sample(s), cin, hw), T::zero(), &mut cols);
        let dst = &mut out.data_mut()[s * out_chw..(s + 1) * out_chw];
        col2im(&cols, &g, dst);
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(g.h * g.w).enumerate() {
                let bv = b.data()[co];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

#[allow(clippy::type_complexity)]
pub fn conv_transpose2d_backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    opts: ConvOpts,
    want: [bool; 3],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let k = check_kernel("conv_transpose2d", w.dims())?;
    let [n, cin, h, wd] = x.dims();
    let cout = w.dims()[1];
    let g = transpose_geometry(x.dims(), cout, k, opts)?;
    let hw = h * wd;
    let mut dx = want[0].then(|| Tensor::zeros(x.dims()));
    let mut dw = want[1].then(|| Tensor::zeros(w.dims()));
    let db = want[2].then(|| {
        let mut b = Tensor::zeros([1, cout, 1, 1]);
        for s in 0..n {
            for co in 0..cout {
                b.data_mut()[co] += dy.plane(s, co).iter().copied().sum::<T>();
            }
        }
        b
    });
    let mut cols = vec![T::zero(); g.rows() * hw];
    let wm = Mat::new(w.data(), cin, g.rows());
    for s in 0..n {
        im2col(dy.sample(s), &g, &mut cols);
        let colm = Mat::new(&cols, g.rows(), hw);
        if let Some(dx) = dx.as_mut() {
            gemm(wm, colm, T::zero(), &mut dx.data_mut()[s * cin * hw..(s + 1) * cin * hw]);
        }
        if let Some(dw) = dw.as_mut() {
            gemm(Mat::new(x.sample(s), cin, hw), colm.t(), T::one(), dw.data_mut());
        }
    }
    Ok((dx, dw, db))
}
