//! Raw slice kernels behind the tape ops. Layouts: activations `[H, W, C]`,
//! convolution weights `[kh, kw, Cin, Cout]`, dense weights `[In, Out]`.

use crate::Real;

/// Zero padding added around the spatial extent of a convolution input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn uniform(p: usize) -> Self {
        Padding {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Ceil-mode padding: the output extent is `ceil(n / stride)` along both
    /// axes, with `(k - 1) / 2` in front and whatever the tail needs behind.
    pub fn ceil_mode(h: usize, w: usize, k: usize, stride: usize) -> Self {
        let (top, bottom) = ceil_padding(h, k, stride);
        let (left, right) = ceil_padding(w, k, stride);
        Padding {
            top,
            bottom,
            left,
            right,
        }
    }
}

/// `(before, after)` padding so that a kernel `k` with `stride` maps an
/// extent `n` to exactly `ceil(n / stride)` outputs.
pub fn ceil_padding(n: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = n.div_ceil(stride);
    let before = (k - 1) / 2;
    let needed = (out - 1) * stride + k;
    let after = needed.saturating_sub(n + before);
    (before, after)
}

/// `floor((n + pad - k) / stride) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_dim(n: usize, pad_total: usize, k: usize, stride: usize) -> Option<usize> {
    if n + pad_total < k || stride == 0 {
        return None;
    }
    Some((n + pad_total - k) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: Padding,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Input coordinate for output `o`, kernel tap `k`, before-padding `p`.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, p: usize, n: usize) -> Option<usize> {
        let pos = o * stride + k;
        if pos < p || pos - p >= n {
            None
        } else {
            Some(pos - p)
        }
    }
}

pub(crate) fn conv_forward<T: Real>(g: &ConvGeom, x: &[T], w: &[T], b: Option<&[T]>, out: &mut [T]) {
    let (cin, cout) = (g.cin, g.cout);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * cout..][..cout];
            match b {
                Some(b) => o.copy_from_slice(b),
                None => o.fill(T::zero()),
            }
            for ky in 0..g.kh {
                let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad.top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad.left, g.w) else {
                        continue;
                    };
                    let xs = &x[(iy * g.w + ix) * cin..][..cin];
                    let ws = &w[(ky * g.kw + kx) * cin * cout..][..cin * cout];
                    for (ci, &a) in xs.iter().enumerate() {
                        let wr = &ws[ci * cout..][..cout];
                        for (oc, &wv) in o.iter_mut().zip(wr) {
                            *oc += a * wv;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (cin, cout) = (g.cin, g.cout);
    if let Some(db) = db {
        for pix in dout.chunks_exact(cout) {
            for (d, &v) in db.iter_mut().zip(pix) {
                *d += v;
            }
        }
    }
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &dout[(oy * g.ow + ox) * cout..][..cout];
            for ky in 0..g.kh {
                let Some(iy) = ConvGeom::src(oy, ky, g.stride, g.pad.top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeom::src(ox, kx, g.stride, g.pad.left, g.w) else {
                        continue;
                    };
                    let xoff = (iy * g.w + ix) * cin;
                    let woff = (ky * g.kw + kx) * cin * cout;
                    if let Some(dx) = dx.as_deref_mut() {
                        let ws = &w[woff..][..cin * cout];
                        let dxs = &mut dx[xoff..][..cin];
                        for (ci, d) in dxs.iter_mut().enumerate() {
                            let wr = &ws[ci * cout..][..cout];
                            let mut acc = T::zero();
                            for (&a, &b) in go.iter().zip(wr) {
                                acc += a * b;
                            }
                            *d += acc;
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let xs = &x[xoff..][..cin];
                        let dws = &mut dw[woff..][..cin * cout];
                        for (ci, &a) in xs.iter().enumerate() {
                            let dr = &mut dws[ci * cout..][..cout];
                            for (d, &gv) in dr.iter_mut().zip(go) {
                                *d += a * gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[n, :] = b + x[n, :] @ w` for `x: [rows, din]`, `w: [din, dout]`.
pub(crate) fn linear_forward<T: Real>(x: &[T], w: &[T], b: Option<&[T]>, din: usize, dout: usize, out: &mut [T]) {
    for (xr, or) in x.chunks_exact(din).zip(out.chunks_exact_mut(dout)) {
        match b {
            Some(b) => or.copy_from_slice(b),
            None => or.fill(T::zero()),
        }
        for (i, &a) in xr.iter().enumerate() {
            let wr = &w[i * dout..][..dout];
            for (o, &wv) in or.iter_mut().zip(wr) {
                *o += a * wv;
            }
        }
    }
}

pub(crate) fn linear_backward<T: Real>(
    x: &[T],
    w: &[T],
    dout_grad: &[T],
    din: usize,
    dout: usize,
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
    mut db: Option<&mut [T]>,
) {
    for (row, (xr, gr)) in x.chunks_exact(din).zip(dout_grad.chunks_exact(dout)).enumerate() {
        if let Some(db) = db.as_deref_mut() {
            for (d, &v) in db.iter_mut().zip(gr) {
                *d += v;
            }
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxr = &mut dx[row * din..][..din];
            for (i, d) in dxr.iter_mut().enumerate() {
                let wr = &w[i * dout..][..dout];
                let mut acc = T::zero();
                for (&a, &b) in gr.iter().zip(wr) {
                    acc += a * b;
                }
                *d += acc;
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            for (i, &a) in xr.iter().enumerate() {
                let dr = &mut dw[i * dout..][..dout];
                for (d, &gv) in dr.iter_mut().zip(gr) {
                    *d += a * gv;
                }
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn elu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

/// Numerically stable `log(1 + exp(-z * (2y - 1)))`.
#[inline]
pub(crate) fn bce_logit<T: Real>(z: T, y: T) -> T {
    let zero = T::zero();
    z.max(zero) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
pub(crate) fn huber<T: Real>(e: T, delta: T) -> T {
    let a = e.abs();
    let half = T::from_f64(0.5);
    if a <= delta {
        half * e * e
    } else {
        delta * (a - half * delta)
    }
}

#[inline]
pub(crate) fn huber_grad<T: Real>(e: T, delta: T) -> T {
    if e.abs() <= delta {
        e
    } else if e > T::zero() {
        delta
    } else {
        -delta
    }
}
