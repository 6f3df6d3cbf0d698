//! Raw forward/backward kernels on NCHW slices.

use super::{matmul_into, MatRef, PadMode, Scalar};
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
    pub mode: PadMode,
}

impl ConvGeom {
    pub fn new(
        input: (usize, usize, usize, usize),
        weight: (usize, usize, usize, usize),
        stride: usize,
        pad: usize,
        mode: PadMode,
    ) -> Result<Self> {
        let (n, cin, h, w) = input;
        let (cout, wcin, kh, kw) = weight;
        if cin != wcin {
            return Err(shape_err!(
                "conv: input has {cin} channels, weight expects {wcin}"
            ));
        }
        if stride == 0 {
            return Err(shape_err!("conv: stride must be positive"));
        }
        if mode == PadMode::Reflect && pad > 0 && (pad >= h || pad >= w) {
            return Err(shape_err!(
                "conv: reflect padding {pad} needs spatial size > {pad}, got {h}x{w}"
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(shape_err!(
                "conv: {kh}x{kw} kernel does not fit {h}x{w} input with padding {pad}"
            ));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
            mode,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source index along one axis for every (kernel offset, output position),
    /// `-1` meaning zero padding.
    fn axis_map(&self, k: usize, out: usize, size: usize) -> Vec<isize> {
        let mut map = Vec::with_capacity(k * out);
        for ki in 0..k {
            for o in 0..out {
                let i = (o * self.stride + ki) as isize - self.pad as isize;
                let src = if (0..size as isize).contains(&i) {
                    i
                } else {
                    match self.mode {
                        PadMode::Zero => -1,
                        PadMode::Reflect => {
                            if i < 0 {
                                -i
                            } else {
                                2 * (size as isize - 1) - i
                            }
                        }
                    }
                };
                map.push(src);
            }
        }
        map
    }
}

pub(crate) struct ColMaps {
    rows: Vec<isize>,
    cols: Vec<isize>,
}

impl ColMaps {
    pub fn new(g: &ConvGeom) -> Self {
        ColMaps {
            rows: g.axis_map(g.kh, g.ho, g.h),
            cols: g.axis_map(g.kw, g.wo, g.w),
        }
    }
}

/// Unfold one sample `(cin, h, w)` into `(cin·kh·kw, ho·wo)`.
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, maps: &ColMaps, x: &[T], cols: &mut [T]) {
    let plane = g.h * g.w;
    let p = g.ho * g.wo;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            let rmap = &maps.rows[ki * g.ho..(ki + 1) * g.ho];
            for kj in 0..g.kw {
                let cmap = &maps.cols[kj * g.wo..(kj + 1) * g.wo];
                let dst = &mut cols[row * p..(row + 1) * p];
                for (oh, &ih) in rmap.iter().enumerate() {
                    let d = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 {
                        d.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (dv, &iw) in d.iter_mut().zip(cmap) {
                        *dv = if iw < 0 { T::zero() } else { src[iw as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into `dx`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, maps: &ColMaps, cols: &[T], dx: &mut [T]) {
    let plane = g.h * g.w;
    let p = g.ho * g.wo;
    let mut row = 0;
    for c in 0..g.cin {
        let xc = &mut dx[c * plane..(c + 1) * plane];
        for ki in 0..g.kh {
            let rmap = &maps.rows[ki * g.ho..(ki + 1) * g.ho];
            for kj in 0..g.kw {
                let cmap = &maps.cols[kj * g.wo..(kj + 1) * g.wo];
                let src = &cols[row * p..(row + 1) * p];
                for (oh, &ih) in rmap.iter().enumerate() {
                    if ih < 0 {
                        continue;
                    }
                    let s = &src[oh * g.wo..(oh + 1) * g.wo];
                    let d = &mut xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (&sv, &iw) in s.iter().zip(cmap) {
                        if iw >= 0 {
                            d[iw as usize] += sv;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Returns the output and, when `keep_cols`, the unfolded input per sample.
pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    b: Option<&[T]>,
    keep_cols: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let maps = ColMaps::new(g);
    let (k, p) = (g.col_rows(), g.col_cols());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_stride];
    let mut saved = if keep_cols {
        vec![T::zero(); g.n * k * p]
    } else {
        Vec::new()
    };
    let mut scratch = if keep_cols {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let wmat = MatRef::new(w, g.cout, k);
    for s in 0..g.n {
        let cols: &mut [T] = if keep_cols {
            &mut saved[s * k * p..(s + 1) * k * p]
        } else {
            &mut scratch
        };
        im2col(g, &maps, &x[s * in_stride..(s + 1) * in_stride], cols);
        let o = &mut out[s * out_stride..(s + 1) * out_stride];
        if let Some(b) = b {
            for (co, row) in o.chunks_mut(p).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if b.is_some() { T::one() } else { T::zero() };
        matmul_into(wmat, MatRef::new(cols, k, p), beta, o);
    }
    (out, keep_cols.then_some(saved))
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Vec<T>,
    pub db: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    g: &ConvGeom,
    cols: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
) -> ConvGrads<T> {
    let maps = ColMaps::new(g);
    let (k, p) = (g.col_rows(), g.col_cols());
    let in_stride = g.cin * g.h * g.w;
    let out_stride = g.cout * p;
    let mut dw = vec![T::zero(); g.cout * k];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); g.n * in_stride]);
    let mut dcols = vec![T::zero(); if need_dx { k * p } else { 0 }];
    let wmat = MatRef::new(w, g.cout, k);
    for s in 0..g.n {
        let dys = &dy[s * out_stride..(s + 1) * out_stride];
        let cs = &cols[s * k * p..(s + 1) * k * p];
        for (co, row) in dys.chunks(p).enumerate() {
            db[co] += row.iter().copied().sum::<T>();
        }
        // dW += dY · colsᵀ
        matmul_into(
            MatRef::new(dys, g.cout, p),
            MatRef::new(cs, k, p).t(),
            T::one(),
            &mut dw,
        );
        if let Some(dx) = dx.as_mut() {
            matmul_into(wmat.t(), MatRef::new(dys, g.cout, p), T::zero(), &mut dcols);
            col2im(
                g,
                &maps,
                &dcols,
                &mut dx[s * in_stride..(s + 1) * in_stride],
            );
        }
    }
    ConvGrads { dx, dw, db }
}

/// Per-(sample, channel) normalization over spatial positions.
/// Returns `(xhat, inv_std)`.
pub(crate) fn instance_norm_forward<T: Scalar>(
    x: &[T],
    planes: usize,
    plane: usize,
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); planes];
    let hw = T::of(plane as f64);
    for i in 0..planes {
        let src = &x[i * plane..(i + 1) * plane];
        let mean = src.iter().copied().sum::<T>() / hw;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / hw;
        let is = T::one() / (var + eps).sqrt();
        inv[i] = is;
        for (o, &v) in out[i * plane..(i + 1) * plane].iter_mut().zip(src) {
            *o = (v - mean) * is;
        }
    }
    (out, inv)
}

pub(crate) fn instance_norm_backward<T: Scalar>(
    xhat: &[T],
    inv_std: &[T],
    dy: &[T],
    plane: usize,
) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    let hw = T::of(plane as f64);
    for (i, &is) in inv_std.iter().enumerate() {
        let r = i * plane..(i + 1) * plane;
        let (xh, g) = (&xhat[r.clone()], &dy[r.clone()]);
        let sum_g = g.iter().copied().sum::<T>();
        let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        for ((d, &gv), &xv) in dx[r].iter_mut().zip(g).zip(xh) {
            *d = is / hw * (hw * gv - sum_g - xv * sum_gx);
        }
    }
    dx
}

pub(crate) fn upsample2x_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); planes * h2 * w2];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
        for i in 0..h2 {
            let srow = &src[(i / 2) * w..(i / 2 + 1) * w];
            let drow = &mut dst[i * w2..(i + 1) * w2];
            for (j, d) in drow.iter_mut().enumerate() {
                *d = srow[j / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..h2 {
            let drow = &mut dst[(i / 2) * w..(i / 2 + 1) * w];
            for (j, &v) in src[i * w2..(i + 1) * w2].iter().enumerate() {
                drow[j / 2] += v;
            }
        }
    }
    dx
}

/// 2×2 average pooling with stride 2; odd trailing rows/columns are dropped.
pub(crate) fn avgpool2_forward<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = vec![T::zero(); planes * ho * wo];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
        for i in 0..ho {
            for j in 0..wo {
                let a = src[2 * i * w + 2 * j];
                let b = src[2 * i * w + 2 * j + 1];
                let c = src[(2 * i + 1) * w + 2 * j];
                let d = src[(2 * i + 1) * w + 2 * j + 1];
                dst[i * wo + j] = (a + b + c + d) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * ho * wo..(p + 1) * ho * wo];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let g = src[i * wo + j] * quarter;
                dst[2 * i * w + 2 * j] += g;
                dst[2 * i * w + 2 * j + 1] += g;
                dst[(2 * i + 1) * w + 2 * j] += g;
                dst[(2 * i + 1) * w + 2 * j + 1] += g;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(g: &ConvGeom, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.cout * g.ho * g.wo];
        let reflect = |i: isize, n: usize| -> Option<usize> {
            if (0..n as isize).contains(&i) {
                Some(i as usize)
            } else {
                match g.mode {
                    PadMode::Zero => None,
                    PadMode::Reflect => Some(if i < 0 {
                        (-i) as usize
                    } else {
                        (2 * (n as isize - 1) - i) as usize
                    }),
                }
            }
        };
        for s in 0..g.n {
            for co in 0..g.cout {
                for oh in 0..g.ho {
                    for ow in 0..g.wo {
                        let mut acc = 0.0;
                        for ci in 0..g.cin {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                                    let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                                    if let (Some(ih), Some(iw)) = (reflect(ih, g.h), reflect(iw, g.w))
                                    {
                                        acc += x[((s * g.cin + ci) * g.h + ih) * g.w + iw]
                                            * w[((co * g.cin + ci) * g.kh + ki) * g.kw + kj];
                                    }
                                }
                            }
                        }
                        out[((s * g.cout + co) * g.ho + oh) * g.wo + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loop() {
        for mode in [PadMode::Zero, PadMode::Reflect] {
            for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (1, 3, 7), (2, 0, 2)] {
                let g = ConvGeom::new((2, 3, 9, 8), (4, 3, k, k), stride, pad, mode).unwrap();
                let x: Vec<f64> = (0..2 * 3 * 9 * 8).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
                let w: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 13) % 7) as f64 * 0.1).collect();
                let (got, _) = conv2d_forward(&g, &x, &w, None, false);
                let want = direct_conv(&g, &x, &w);
                assert_eq!(got.len(), want.len());
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-9, "{mode:?} s{stride} p{pad} k{k}");
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        for mode in [PadMode::Zero, PadMode::Reflect] {
            let g = ConvGeom::new((1, 2, 6, 5), (1, 2, 3, 3), 2, 1, mode).unwrap();
            let maps = ColMaps::new(&g);
            let x: Vec<f64> = (0..60).map(|i| (i as f64 * 0.37).sin()).collect();
            let c: Vec<f64> = (0..g.col_rows() * g.col_cols())
                .map(|i| (i as f64 * 0.11).cos())
                .collect();
            let mut cols = vec![0.0; c.len()];
            im2col(&g, &maps, &x, &mut cols);
            let mut back = vec![0.0; x.len()];
            col2im(&g, &maps, &c, &mut back);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn reflect_padding_rejects_tiny_inputs() {
        assert!(ConvGeom::new((1, 1, 1, 1), (1, 1, 3, 3), 1, 1, PadMode::Reflect).is_err());
        assert!(ConvGeom::new((1, 1, 1, 1), (1, 1, 3, 3), 1, 1, PadMode::Zero).is_ok());
    }

    #[test]
    fn upsample_and_pool_shapes() {
        let x: Vec<f64> = (0..2 * 3 * 4).map(|v| v as f64).collect();
        let up = upsample2x_forward(&x, 2, 3, 4);
        assert_eq!(up.len(), 2 * 6 * 8);
        let down = avgpool2_forward(&up, 2, 6, 8);
        assert_eq!(down, x);
    }
}
