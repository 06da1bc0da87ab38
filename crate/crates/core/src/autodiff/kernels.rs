//! Forward and backward kernels that do not need the tape.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// `c = a * b + beta * c` for strided row/column-major views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserts above keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Validated geometry of a stride-1 "same" convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(x: Shape, w: Shape, b: Shape, pad: usize) -> Result<Self> {
        if w.h != w.w || w.h.is_multiple_of(2) {
            return Err(Error::InvalidShape(format!(
                "conv kernel must be square with odd size, got {w}"
            )));
        }
        if w.c != x.c {
            return Err(Error::InvalidShape(format!(
                "conv input has {} channels but kernel {w} expects {}",
                x.c, w.c
            )));
        }
        if b != Shape::new(1, w.n, 1, 1) {
            return Err(Error::InvalidShape(format!(
                "conv bias {b} does not match {} output channels",
                w.n
            )));
        }
        if pad != (w.h - 1) / 2 {
            return Err(Error::InvalidShape(format!(
                "padding {pad} does not give same-size output for kernel {}",
                w.h
            )));
        }
        Ok(ConvGeometry {
            n: x.n,
            cin: x.c,
            cout: w.n,
            h: x.h,
            w: x.w,
            k: w.h,
            pad,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1
    }
}

/// Unfolds one sample into a `[cin*k*k, h*w]` column matrix.
fn im2col(g: &ConvGeometry, x: &[f64], cols: &mut [f64]) {
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    let hw = g.plane();
    for ci in 0..g.cin {
        let src = &x[ci * hw..(ci + 1) * hw];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad).saturating_sub(dx).min(w);
                for y in 0..h {
                    let out = &mut dst[y * w..(y + 1) * w];
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h || x_lo >= x_hi {
                        out.fill(0.0);
                        continue;
                    }
                    let sy = sy - pad;
                    out[..x_lo].fill(0.0);
                    out[x_hi..].fill(0.0);
                    let sx_lo = x_lo + dx - pad;
                    out[x_lo..x_hi].copy_from_slice(&src[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back onto one sample.
fn col2im(g: &ConvGeometry, cols: &[f64], dx_out: &mut [f64]) {
    let (h, w, k, pad) = (g.h, g.w, g.k, g.pad);
    let hw = g.plane();
    for ci in 0..g.cin {
        let dst = &mut dx_out[ci * hw..(ci + 1) * hw];
        for dy in 0..k {
            for dx in 0..k {
                let row = (ci * k + dy) * k + dx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = pad.saturating_sub(dx);
                let x_hi = (w + pad).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    let sy = sy - pad;
                    let sx_lo = x_lo + dx - pad;
                    let d = &mut dst[sy * w + sx_lo..sy * w + sx_lo + (x_hi - x_lo)];
                    for (a, b) in d.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *a += b;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeometry, x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let hw = g.plane();
    let kk = g.patch_len();
    let mut out = Tensor::zeros([g.n, g.cout, g.h, g.w]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for n in 0..g.n {
        let xs = x.sample(n);
        let o = &mut out.data_mut()[n * g.cout * hw..(n + 1) * g.cout * hw];
        for (co, chunk) in o.chunks_mut(hw).enumerate() {
            chunk.fill(b.data()[co]);
        }
        let src: &[f64] = if g.is_pointwise() {
            xs
        } else {
            im2col(g, xs, &mut cols);
            &cols
        };
        gemm(g.cout, kk, hw, w.data(), kk, 1, src, hw, 1, 1.0, o, hw, 1);
    }
    out
}

pub(crate) struct ConvGrads {
    pub dx: Option<Tensor>,
    pub dw: Option<Tensor>,
    pub db: Option<Tensor>,
}

pub(crate) fn conv2d_backward(g: &ConvGeometry, x: &Tensor, w: &Tensor, grad: &Tensor, need: [bool; 3]) -> ConvGrads {
    let hw = g.plane();
    let kk = g.patch_len();
    let [need_x, need_w, need_b] = need;
    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(w.shape()));
    let db = need_b.then(|| {
        let mut db = Tensor::zeros([1, g.cout, 1, 1]);
        for n in 0..g.n {
            for co in 0..g.cout {
                db.data_mut()[co] += grad.plane(n, co).iter().sum::<f64>();
            }
        }
        db
    });
    let mut cols = if g.is_pointwise() || !need_w {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    let mut dcols = if g.is_pointwise() || !need_x {
        Vec::new()
    } else {
        vec![0.0; kk * hw]
    };
    for n in 0..g.n {
        let gs = grad.sample(n);
        if let Some(dw) = dw.as_mut() {
            let src: &[f64] = if g.is_pointwise() {
                x.sample(n)
            } else {
                im2col(g, x.sample(n), &mut cols);
                &cols
            };
            // dW[cout, kk] += G[cout, hw] * cols[kk, hw]^T
            gemm(g.cout, hw, kk, gs, hw, 1, src, 1, hw, 1.0, dw.data_mut(), kk, 1);
        }
        if let Some(dx) = dx.as_mut() {
            let s = g.cin * hw;
            let dxs = &mut dx.data_mut()[n * s..(n + 1) * s];
            if g.is_pointwise() {
                gemm(kk, g.cout, hw, w.data(), 1, kk, gs, hw, 1, 0.0, dxs, hw, 1);
            } else {
                // dcols[kk, hw] = W^T[kk, cout] * G[cout, hw]
                gemm(kk, g.cout, hw, w.data(), 1, kk, gs, hw, 1, 0.0, &mut dcols, hw, 1);
                col2im(g, &dcols, dxs);
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Cosine and sine tables `cos(2*pi*k*m/len)` as `len x len` matrices.
fn dft_tables(len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cos = vec![0.0; len * len];
    let mut sin = vec![0.0; len * len];
    for k in 0..len {
        for m in 0..len {
            // Reduce the phase index first so large k*m stays exact.
            let phase = 2.0 * std::f64::consts::PI * ((k * m) % len) as f64 / len as f64;
            cos[k * len + m] = phase.cos();
            sin[k * len + m] = phase.sin();
        }
    }
    (cos, sin)
}

/// Which half of the complex spectrum a DFT node carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpectrumPart {
    Real,
    Imag,
}

/// Separable 2-D DFT evaluated per `(n, c)` plane.
///
/// With `F = C - iS` for each axis, `Re = C x C - S x S` and
/// `Im = -(S x C + C x S)`. Both maps are self-adjoint in the sense that
/// the adjoint of `x -> Re(x)` is again `g -> Re(g)` (the tables are
/// symmetric), so the same routine serves forward and backward.
pub(crate) fn dft2_part(x: &Tensor, part: SpectrumPart) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h, s.w);
    let (ch, sh) = dft_tables(h);
    let (cw, sw) = dft_tables(w);
    let mut out = Tensor::zeros(s);
    let mut xc = vec![0.0; h * w];
    let mut xs = vec![0.0; h * w];
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            gemm(h, w, w, plane, w, 1, &cw, w, 1, 0.0, &mut xc, w, 1);
            gemm(h, w, w, plane, w, 1, &sw, w, 1, 0.0, &mut xs, w, 1);
            let o = out.plane_mut(n, c);
            match part {
                SpectrumPart::Real => {
                    gemm(h, h, w, &ch, h, 1, &xc, w, 1, 0.0, o, w, 1);
                    let mut tmp = vec![0.0; h * w];
                    gemm(h, h, w, &sh, h, 1, &xs, w, 1, 0.0, &mut tmp, w, 1);
                    for (a, b) in o.iter_mut().zip(&tmp) {
                        *a -= b;
                    }
                }
                SpectrumPart::Imag => {
                    gemm(h, h, w, &sh, h, 1, &xc, w, 1, 0.0, o, w, 1);
                    gemm(h, h, w, &ch, h, 1, &xs, w, 1, 1.0, o, w, 1);
                    for a in o.iter_mut() {
                        *a = -*a;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn pixel_shuffle(x: &Tensor, r: usize) -> Tensor {
    let s = x.shape();
    let c_out = s.c / (r * r);
    let mut out = Tensor::zeros([s.n, c_out, s.h * r, s.w * r]);
    for n in 0..s.n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let src = x.plane(n, c * r * r + i * r + j);
                    for y in 0..s.h {
                        for xx in 0..s.w {
                            out.set(n, c, y * r + i, xx * r + j, src[y * s.w + xx]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint (and inverse) of [`pixel_shuffle`].
pub(crate) fn pixel_unshuffle(y: &Tensor, r: usize) -> Tensor {
    let s = y.shape();
    let (h, w) = (s.h / r, s.w / r);
    let mut out = Tensor::zeros([s.n, s.c * r * r, h, w]);
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..r {
                for j in 0..r {
                    let ch = c * r * r + i * r + j;
                    for yy in 0..h {
                        for xx in 0..w {
                            let v = y.at(n, c, yy * r + i, xx * r + j);
                            out.set(n, ch, yy, xx, v);
                        }
                    }
                }
            }
        }
    }
    out
}
