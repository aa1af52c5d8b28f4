//! Raw buffer kernels behind the graph operations.
//!
//! Convolutions go through im2col + one large GEMM. Column buffers are laid
//! out `[(batch, position), channel * k + tap]` so that the GEMM runs over
//! `batch * positions` rows at once.

use crate::scalar::Scalar;

/// Output length of a 1-D convolution, `None` when the kernel does not fit.
pub fn conv_out_len(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || k == 0 || k > padded {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

/// Output length of a transposed 1-D convolution.
pub fn conv_transpose_out_len(
    len: usize,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (len.checked_sub(1)?) * stride + k + output_padding;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

#[derive(Debug, Clone, Copy)]
pub struct ColGeom {
    pub batch: usize,
    pub channels: usize,
    pub len: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub positions: usize,
}

impl ColGeom {
    fn width(&self) -> usize {
        self.channels * self.k
    }

    #[inline]
    fn source(&self, pos: usize, tap: usize) -> Option<usize> {
        let idx = (pos * self.stride + tap) as isize - self.padding as isize;
        (idx >= 0 && (idx as usize) < self.len).then_some(idx as usize)
    }
}

pub fn im2col<T: Scalar>(x: &[T], g: ColGeom) -> Vec<T> {
    let w = g.width();
    let mut cols = vec![T::zero(); g.batch * g.positions * w];
    for b in 0..g.batch {
        for c in 0..g.channels {
            let src = &x[(b * g.channels + c) * g.len..][..g.len];
            for pos in 0..g.positions {
                let row = &mut cols[(b * g.positions + pos) * w + c * g.k..][..g.k];
                for (tap, slot) in row.iter_mut().enumerate() {
                    if let Some(i) = g.source(pos, tap) {
                        *slot = src[i];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds a column buffer back onto a `[batch, channels, len]` buffer.
pub fn col2im_add<T: Scalar>(cols: &[T], g: ColGeom, dst: &mut [T]) {
    let w = g.width();
    for b in 0..g.batch {
        for c in 0..g.channels {
            let out = &mut dst[(b * g.channels + c) * g.len..][..g.len];
            for pos in 0..g.positions {
                let row = &cols[(b * g.positions + pos) * w + c * g.k..][..g.k];
                for (tap, &v) in row.iter().enumerate() {
                    if let Some(i) = g.source(pos, tap) {
                        out[i] += v;
                    }
                }
            }
        }
    }
}

/// `[batch, rows, cols] -> [batch, cols, rows]`.
pub fn transpose_batched<T: Scalar>(src: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); src.len()];
    for b in 0..batch {
        let s = &src[b * rows * cols..][..rows * cols];
        let d = &mut dst[b * rows * cols..][..rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
    dst
}

#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub len_in: usize,
    pub len_out: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvDims {
    fn geom(&self) -> ColGeom {
        ColGeom {
            batch: self.batch,
            channels: self.c_in,
            len: self.len_in,
            k: self.k,
            stride: self.stride,
            padding: self.padding,
            positions: self.len_out,
        }
    }
}

/// `x: [B, Cin, L]`, `w: [Cout, Cin, k]` → `[B, Cout, L']`.
pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], bias: Option<&[T]>, d: ConvDims) -> Vec<T> {
    let ck = d.c_in * d.k;
    let rows = d.batch * d.len_out;
    let cols = im2col(x, d.geom());
    let mut out_t = vec![T::zero(); rows * d.c_out];
    T::gemm(
        rows,
        ck,
        d.c_out,
        T::one(),
        &cols,
        ck as isize,
        1,
        w,
        1,
        ck as isize,
        T::zero(),
        &mut out_t,
        d.c_out as isize,
        1,
    );
    let mut out = transpose_batched(&out_t, d.batch, d.len_out, d.c_out);
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias, d.batch, d.c_out, d.len_out);
    }
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    d: ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let ck = d.c_in * d.k;
    let rows = d.batch * d.len_out;
    let dout_t = transpose_batched(dout, d.batch, d.c_out, d.len_out);
    let dw = need.1.then(|| {
        let cols = im2col(x, d.geom());
        let mut dw = vec![T::zero(); d.c_out * ck];
        T::gemm(
            d.c_out,
            rows,
            ck,
            T::one(),
            &dout_t,
            1,
            d.c_out as isize,
            &cols,
            ck as isize,
            1,
            T::zero(),
            &mut dw,
            ck as isize,
            1,
        );
        dw
    });
    let dx = need.0.then(|| {
        let mut dcols = vec![T::zero(); rows * ck];
        T::gemm(
            rows,
            d.c_out,
            ck,
            T::one(),
            &dout_t,
            d.c_out as isize,
            1,
            w,
            ck as isize,
            1,
            T::zero(),
            &mut dcols,
            ck as isize,
            1,
        );
        let mut dx = vec![T::zero(); d.batch * d.c_in * d.len_in];
        col2im_add(&dcols, d.geom(), &mut dx);
        dx
    });
    let db = need
        .2
        .then(|| channel_sums(dout, d.batch, d.c_out, d.len_out));
    ConvGrads { dx, dw, db }
}

/// Geometry of a transposed convolution. `c_in`/`len_in` describe the input
/// being upsampled; the column buffer is indexed over input positions.
fn transpose_geom(d: ConvDims) -> ColGeom {
    ColGeom {
        batch: d.batch,
        channels: d.c_out,
        len: d.len_out,
        k: d.k,
        stride: d.stride,
        padding: d.padding,
        positions: d.len_in,
    }
}

/// `x: [B, Cin, L]`, `w: [Cin, Cout, k]` → `[B, Cout, L']`.
pub fn conv_transpose1d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    d: ConvDims,
) -> Vec<T> {
    let cok = d.c_out * d.k;
    let rows = d.batch * d.len_in;
    let x_t = transpose_batched(x, d.batch, d.c_in, d.len_in);
    let mut cols = vec![T::zero(); rows * cok];
    T::gemm(
        rows,
        d.c_in,
        cok,
        T::one(),
        &x_t,
        d.c_in as isize,
        1,
        w,
        cok as isize,
        1,
        T::zero(),
        &mut cols,
        cok as isize,
        1,
    );
    let mut out = vec![T::zero(); d.batch * d.c_out * d.len_out];
    col2im_add(&cols, transpose_geom(d), &mut out);
    if let Some(bias) = bias {
        add_channel_bias(&mut out, bias, d.batch, d.c_out, d.len_out);
    }
    out
}

pub fn conv_transpose1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    d: ConvDims,
    need: (bool, bool, bool),
) -> ConvGrads<T> {
    let cok = d.c_out * d.k;
    let rows = d.batch * d.len_in;
    let dcols = im2col(dout, transpose_geom(d));
    let dx = need.0.then(|| {
        let mut dx_t = vec![T::zero(); rows * d.c_in];
        T::gemm(
            rows,
            cok,
            d.c_in,
            T::one(),
            &dcols,
            cok as isize,
            1,
            w,
            1,
            cok as isize,
            T::zero(),
            &mut dx_t,
            d.c_in as isize,
            1,
        );
        transpose_batched(&dx_t, d.batch, d.len_in, d.c_in)
    });
    let dw = need.1.then(|| {
        let x_t = transpose_batched(x, d.batch, d.c_in, d.len_in);
        let mut dw = vec![T::zero(); d.c_in * cok];
        T::gemm(
            d.c_in,
            rows,
            cok,
            T::one(),
            &x_t,
            1,
            d.c_in as isize,
            &dcols,
            cok as isize,
            1,
            T::zero(),
            &mut dw,
            cok as isize,
            1,
        );
        dw
    });
    let db = need
        .2
        .then(|| channel_sums(dout, d.batch, d.c_out, d.len_out));
    ConvGrads { dx, dw, db }
}

pub fn add_channel_bias<T: Scalar>(out: &mut [T], bias: &[T], batch: usize, c: usize, len: usize) {
    for b in 0..batch {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            for v in &mut out[(b * c + ch) * len..][..len] {
                *v += bv;
            }
        }
    }
}

pub fn channel_sums<T: Scalar>(x: &[T], batch: usize, c: usize, len: usize) -> Vec<T> {
    let mut s = vec![T::zero(); c];
    for b in 0..batch {
        for (ch, acc) in s.iter_mut().enumerate() {
            *acc += x[(b * c + ch) * len..][..len].iter().copied().sum::<T>();
        }
    }
    s
}

/// Batched `a · op(b)` with `a: [B, M, K]` and `b: [B, K, N]` (or `[B, N, K]`
/// when `trans_b`). Returns `[B, M, N]`.
#[allow(clippy::too_many_arguments)]
pub fn bmm<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    for i in 0..batch {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &a[i * m * k..][..m * k],
            rsa,
            csa,
            &b[i * k * n..][..k * n],
            rsb,
            csb,
            T::zero(),
            &mut out[i * m * n..][..m * n],
            n as isize,
            1,
        );
    }
    out
}

/// Normalizes each segment group to zero mean / unit variance.
///
/// `segments(g)` yields the contiguous `(start, len)` spans that make up
/// group `g`. Returns `(xhat, inv_std)`.
pub fn normalize_groups<T: Scalar>(
    x: &[T],
    groups: usize,
    eps: T,
    segments: impl Fn(usize) -> Vec<(usize, usize)>,
) -> (Vec<T>, Vec<T>) {
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); groups];
    for (g, inv) in inv_std.iter_mut().enumerate() {
        let segs = segments(g);
        let count: usize = segs.iter().map(|s| s.1).sum();
        let n = T::c(count as f64);
        let mean = segs
            .iter()
            .map(|&(s, l)| x[s..s + l].iter().copied().sum::<T>())
            .sum::<T>()
            / n;
        let var = segs
            .iter()
            .map(|&(s, l)| x[s..s + l].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>())
            .sum::<T>()
            / n;
        *inv = T::one() / (var + eps).sqrt();
        for &(s, l) in &segs {
            for i in s..s + l {
                xhat[i] = (x[i] - mean) * *inv;
            }
        }
    }
    (xhat, inv_std)
}

/// Gradient through `xhat = (x - mean) * inv_std` given `dxhat`.
pub fn normalize_groups_backward<T: Scalar>(
    xhat: &[T],
    inv_std: &[T],
    dxhat: &[T],
    segments: impl Fn(usize) -> Vec<(usize, usize)>,
) -> Vec<T> {
    let mut dx = vec![T::zero(); xhat.len()];
    for (g, &inv) in inv_std.iter().enumerate() {
        let segs = segments(g);
        let count: usize = segs.iter().map(|s| s.1).sum();
        let n = T::c(count as f64);
        let mut sum_d = T::zero();
        let mut sum_dx = T::zero();
        for &(s, l) in &segs {
            for i in s..s + l {
                sum_d += dxhat[i];
                sum_dx += dxhat[i] * xhat[i];
            }
        }
        let mean_d = sum_d / n;
        let mean_dx = sum_dx / n;
        for &(s, l) in &segs {
            for i in s..s + l {
                dx[i] = inv * (dxhat[i] - mean_d - xhat[i] * mean_dx);
            }
        }
    }
    dx
}
