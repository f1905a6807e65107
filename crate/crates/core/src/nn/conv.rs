//! Direct 2-D convolution lowered onto an im2col product.
//!
//! Every output element is accumulated from `+0` over the kernel index
//! `k = (ci, ky, kx)` in increasing order and the bias is added last. Skipped
//! padding taps contribute `±0`, which never changes an accumulator that
//! started at `+0`, so the result is bit-identical to the textbook nested loop.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::LayerParams;

const MR: usize = 8;
const NR: usize = 32;

/// `c[m×n] = a[m×k] · b[k×n]`, each element summed over `k` in order.
pub(crate) fn gemm<T: Scalar>(m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let mut packed = vec![T::zero(); MR * k];
    let mut i = 0;
    while i < m {
        let mr = MR.min(m - i);
        if mr == MR {
            // k-major copy of the MR rows so each step reads one contiguous run
            for r in 0..MR {
                for (kk, &v) in a[(i + r) * k..(i + r + 1) * k].iter().enumerate() {
                    packed[kk * MR + r] = v;
                }
            }
        }
        let mut j = 0;
        while j < n {
            let nr = NR.min(n - j);
            if mr == MR && nr == NR {
                if !simd::tile_full(n, k, &packed, &b[j..], &mut c[i * n + j..]) {
                    tile_full(n, k, &packed, &b[j..], &mut c[i * n + j..]);
                }
            } else {
                tile_edge(mr, nr, n, k, &a[i * k..], &b[j..], &mut c[i * n + j..]);
            }
            j += NR;
        }
        i += MR;
    }
}

#[inline(always)]
fn tile_full<T: Scalar>(n: usize, k: usize, packed: &[T], b: &[T], c: &mut [T]) {
    let mut acc = [[T::zero(); NR]; MR];
    for kk in 0..k {
        let brow: &[T; NR] = b[kk * n..kk * n + NR].try_into().unwrap();
        let acol: &[T; MR] = packed[kk * MR..kk * MR + MR].try_into().unwrap();
        for r in 0..MR {
            let av = acol[r];
            let row = &mut acc[r];
            for jj in 0..NR {
                row[jj] += av * brow[jj];
            }
        }
    }
    for r in 0..MR {
        c[r * n..r * n + NR].copy_from_slice(&acc[r]);
    }
}

/// Explicit 512-bit kernel for `f32`. Multiplies and adds stay separate
/// instructions, so the results match the portable kernel bit for bit.
mod simd {
    use std::any::TypeId;

    use super::{MR, NR};
    use crate::tensor::Scalar;

    /// Returns false when the fast path does not apply.
    #[inline]
    pub(super) fn tile_full<T: Scalar>(n: usize, k: usize, packed: &[T], b: &[T], c: &mut [T]) -> bool {
        #[cfg(target_arch = "x86_64")]
        if TypeId::of::<T>() == TypeId::of::<f32>() && std::arch::is_x86_feature_detected!("avx512f") {
            debug_assert!(packed.len() >= MR * k && b.len() >= (k - 1) * n + NR && c.len() >= (MR - 1) * n + NR);
            // SAFETY: T is f32 (checked above), lengths are checked by the caller's tiling
            unsafe {
                kernel(n, k, packed.as_ptr() as *const f32, b.as_ptr() as *const f32, c.as_mut_ptr() as *mut f32);
            }
            return true;
        }
        let _ = (n, k, packed, b, c);
        false
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn kernel(n: usize, k: usize, packed: *const f32, b: *const f32, c: *mut f32) {
        use std::arch::x86_64::*;
        const _: () = assert!(MR == 8 && NR == 32);
        let mut acc = [[_mm512_setzero_ps(); 2]; MR];
        for kk in 0..k {
            let b0 = _mm512_loadu_ps(b.add(kk * n));
            let b1 = _mm512_loadu_ps(b.add(kk * n + 16));
            for (r, row) in acc.iter_mut().enumerate() {
                let a = _mm512_set1_ps(*packed.add(kk * MR + r));
                row[0] = _mm512_add_ps(row[0], _mm512_mul_ps(a, b0));
                row[1] = _mm512_add_ps(row[1], _mm512_mul_ps(a, b1));
            }
        }
        for (r, row) in acc.iter().enumerate() {
            _mm512_storeu_ps(c.add(r * n), row[0]);
            _mm512_storeu_ps(c.add(r * n + 16), row[1]);
        }
    }
}

fn tile_edge<T: Scalar>(mr: usize, nr: usize, n: usize, k: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut acc = [[T::zero(); NR]; MR];
    for kk in 0..k {
        let brow = &b[kk * n..kk * n + nr];
        for r in 0..mr {
            let av = a[r * k + kk];
            for (jj, &bv) in brow.iter().enumerate() {
                acc[r][jj] += av * bv;
            }
        }
    }
    for r in 0..mr {
        c[r * n..r * n + nr].copy_from_slice(&acc[r][..nr]);
    }
}

/// Dot product with `NR` interleaved partial sums.
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    let mut lanes = [T::zero(); NR];
    let mut xs = x.chunks_exact(NR);
    let mut ys = y.chunks_exact(NR);
    for (xc, yc) in (&mut xs).zip(&mut ys) {
        for l in 0..NR {
            lanes[l] += xc[l] * yc[l];
        }
    }
    let mut s = xs.remainder().iter().zip(ys.remainder()).fold(T::zero(), |s, (&a, &b)| s + a * b);
    for l in lanes {
        s += l;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::arg("convolution stride must be positive"));
        }
        if in_h + 2 * padding < kernel || in_w + 2 * padding < kernel {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kernel} larger than padded input {in_h}x{in_w} (padding {padding})"),
            ));
        }
        Ok(ConvGeometry {
            in_channels,
            in_h,
            in_w,
            kernel,
            stride,
            padding,
            out_h: (in_h + 2 * padding - kernel) / stride + 1,
            out_w: (in_w + 2 * padding - kernel) / stride + 1,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfolds one `[c, h, w]` image into `[c·k·k, out_h·out_w]`.
    pub(crate) fn im2col<T: Scalar>(&self, input: &[T], col: &mut [T]) {
        let (k, p) = (self.kernel, self.positions());
        let mut row = 0;
        for ci in 0..self.in_channels {
            let plane = &input[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        let drow = &mut dst[oy * self.out_w..(oy + 1) * self.out_w];
                        if iy < 0 || iy >= self.in_h as isize {
                            drow.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            *d = if ix < 0 || ix >= self.in_w as isize { T::zero() } else { src[ix as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    pub(crate) fn col2im<T: Scalar>(&self, col: &[T], out: &mut [T]) {
        let (k, p) = (self.kernel, self.positions());
        let mut row = 0;
        for ci in 0..self.in_channels {
            let plane = &mut out[ci * self.in_h * self.in_w..(ci + 1) * self.in_h * self.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.in_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.in_w..(iy as usize + 1) * self.in_w];
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                dst[ix as usize] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn geometry_for<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<([usize; 4], usize, ConvGeometry)> {
    let [n, c, h, w] = input.dims4("conv2d input")?;
    let [co, ci, kh, kw] = weight.dims4("conv2d weight")?;
    if ci != c {
        return Err(Error::shape(
            "conv2d",
            format!("input has {c} channels but kernel expects {ci} (weight {:?})", weight.shape()),
        ));
    }
    if kh != kw {
        return Err(Error::shape("conv2d", format!("non-square kernel {kh}x{kw}")));
    }
    Ok(([n, c, h, w], co, ConvGeometry::new(c, h, w, kh, stride, padding)?))
}

/// Forward convolution of `[n, c, h, w]` by `[co, c, k, k]` plus bias `[co]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_with(input, &params.weight, params.bias.data(), stride, padding)
}

pub(crate) fn conv2d_with<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let ([n, _, _, _], co, g) = geometry_for(input, weight, stride, padding)?;
    if bias.len() != co {
        return Err(Error::shape("conv2d", format!("bias has {} entries for {co} filters", bias.len())));
    }
    let (kl, p) = (g.patch_len(), g.positions());
    let in_stride = g.in_channels * g.in_h * g.in_w;
    let mut col = vec![T::zero(); kl * p];
    let mut out = vec![T::zero(); n * co * p];
    for b in 0..n {
        g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut col);
        let dst = &mut out[b * co * p..(b + 1) * co * p];
        gemm(co, p, kl, weight.data(), &col, dst);
        for (o, &bv) in bias.iter().enumerate() {
            dst[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new(&[n, co, g.out_h, g.out_w], out)
}

/// Gradients of a convolution. `param_grads` receives `(dW, db)` accumulated
/// over the batch in item order when requested. With `need_input` unset
/// the returned input gradient is all zeros.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    dout: &Tensor<T>,
    stride: usize,
    padding: usize,
    param_grads: Option<(&mut [T], &mut [T])>,
    need_input: bool,
) -> Result<Tensor<T>> {
    let ([n, c, h, w], co, g) = geometry_for(input, weight, stride, padding)?;
    let [dn, dc, dh, dw] = dout.dims4("conv2d grad")?;
    if dn != n || dc != co || dh != g.out_h || dw != g.out_w {
        return Err(Error::shape(
            "conv2d backward",
            format!("grad {:?} does not match output [{n},{co},{},{}]", dout.shape(), g.out_h, g.out_w),
        ));
    }
    let (kl, p) = (g.patch_len(), g.positions());
    let in_stride = c * h * w;
    // W^T: [kl, co]
    let wd = weight.data();
    let mut wt = vec![T::zero(); kl * co];
    for o in 0..co {
        for q in 0..kl {
            wt[q * co + o] = wd[o * kl + q];
        }
    }
    let mut dcol = vec![T::zero(); kl * p];
    let mut col = vec![T::zero(); kl * p];
    let mut dinput = vec![T::zero(); n * in_stride];
    let mut param_grads = param_grads;
    let (mut dyt, mut dwt) = match param_grads {
        Some(_) if co >= NR => (vec![T::zero(); p * co], vec![T::zero(); kl * co]),
        _ => (Vec::new(), Vec::new()),
    };
    for b in 0..n {
        let dy = &dout.data()[b * co * p..(b + 1) * co * p];
        if need_input {
            gemm(kl, p, co, &wt, dy, &mut dcol);
            g.col2im(&dcol, &mut dinput[b * in_stride..(b + 1) * in_stride]);
        }
        if let Some((dw_acc, db_acc)) = param_grads.as_mut() {
            g.im2col(&input.data()[b * in_stride..(b + 1) * in_stride], &mut col);
            if co < NR {
                // too few filters to fill a tile: one long dot product per weight
                for o in 0..co {
                    let dyo = &dy[o * p..(o + 1) * p];
                    for q in 0..kl {
                        dw_acc[o * kl + q] += dot(dyo, &col[q * p..(q + 1) * p]);
                    }
                }
            } else {
                // dWᵀ = col · dyᵀ keeps the filter count on the wide tile axis
                for o in 0..co {
                    for (pos, &v) in dy[o * p..(o + 1) * p].iter().enumerate() {
                        dyt[pos * co + o] = v;
                    }
                }
                gemm(kl, co, p, &col, &dyt, &mut dwt);
                for o in 0..co {
                    for q in 0..kl {
                        dw_acc[o * kl + q] += dwt[q * co + o];
                    }
                }
            }
            for o in 0..co {
                db_acc[o] += dy[o * p..(o + 1) * p].iter().fold(T::zero(), |s, &v| s + v);
            }
        }
    }
    Tensor::new(&[n, c, h, w], dinput)
}
