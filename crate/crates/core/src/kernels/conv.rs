//! Convolution and transposed convolution.
//!
//! Forward and both backward passes are built on a tiled im2col: patches
//! are materialized as rows of a (tile, C_in*k*k) buffer so the inner loops
//! are contiguous dot products / axpys. Transposed convolution is expressed
//! as a stride-1 convolution of the zero-dilated input with the
//! channel-swapped, spatially flipped kernel, which reuses the same three
//! routines.

use super::{axpy, dot, for_chunks_mut, Exec, Scalar};
use crate::error::TensorError;
use crate::tensor::Shape;

/// Cap on the im2col tile buffer, in elements.
const TILE_ELEMS: usize = 1 << 23;

/// Resolved geometry of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    /// Validates extents and computes the output size
    /// `floor((in + 2*pad - k) / stride) + 1`.
    pub fn resolve(
        input: Shape,
        weight: Shape,
        stride: usize,
        pad: usize,
    ) -> Result<ConvGeom, TensorError> {
        if stride == 0 {
            return Err(TensorError::bad_config("conv2d", "stride must be >= 1"));
        }
        if weight.h != weight.w {
            return Err(TensorError::bad_config(
                "conv2d",
                format!("kernel must be square, got {}", weight),
            ));
        }
        if weight.c != input.c {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                what: "input channels",
                lhs: input,
                rhs: weight,
            });
        }
        let k = weight.h;
        let out_extent = |e: usize| -> Option<usize> {
            let padded = e + 2 * pad;
            if padded < k {
                return None;
            }
            Some((padded - k) / stride + 1)
        };
        let (h_out, w_out) = match (out_extent(input.h), out_extent(input.w)) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => {
                return Err(TensorError::bad_config(
                    "conv2d",
                    format!(
                        "non-positive output extent for input {} kernel {} stride {} pad {}",
                        input, k, stride, pad
                    ),
                ))
            }
        };
        Ok(ConvGeom {
            n: input.n,
            c_in: input.c,
            h_in: input.h,
            w_in: input.w,
            c_out: weight.n,
            k,
            stride,
            pad,
            h_out,
            w_out,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.c_out, self.h_out, self.w_out)
    }

    /// Patch length: C_in * k * k.
    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Output positions per sample.
    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    fn tile_rows(&self) -> usize {
        (TILE_ELEMS / self.patch_len().max(1)).clamp(1, self.positions())
    }
}

/// Fills `cols` with patch rows for output positions [m0, m0+rows).
/// `x` is a single sample (C_in, H, W). Out-of-bounds taps read as zero.
fn im2col_rows<T: Scalar>(x: &[T], g: &ConvGeom, m0: usize, cols: &mut [T], exec: Exec) {
    let patch = g.patch_len();
    for_chunks_mut(exec, cols, patch, move |r, row| {
        let m = m0 + r;
        let oh = m / g.w_out;
        let ow = m % g.w_out;
        let mut idx = 0;
        for ci in 0..g.c_in {
            let chan = &x[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
            for kh in 0..g.k {
                let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                if ih < 0 || ih >= g.h_in as isize {
                    row[idx..idx + g.k].fill(T::zero());
                    idx += g.k;
                    continue;
                }
                let base = ih as usize * g.w_in;
                for kw in 0..g.k {
                    let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                    row[idx] = if iw < 0 || iw >= g.w_in as isize {
                        T::zero()
                    } else {
                        chan[base + iw as usize]
                    };
                    idx += 1;
                }
            }
        }
    });
}

/// y = conv(x, w) + b. `y` is fully overwritten.
pub fn conv2d_forward<T: Scalar>(exec: Exec, x: &[T], w: &[T], b: &[T], g: &ConvGeom, y: &mut [T]) {
    let patch = g.patch_len();
    let m_total = g.positions();
    let tile = g.tile_rows();
    let mut cols = vec![T::zero(); tile * patch];
    for n in 0..g.n {
        let xs = &x[n * g.c_in * g.h_in * g.w_in..(n + 1) * g.c_in * g.h_in * g.w_in];
        let ys = &mut y[n * g.c_out * m_total..(n + 1) * g.c_out * m_total];
        let mut m0 = 0;
        while m0 < m_total {
            let rows = tile.min(m_total - m0);
            im2col_rows(xs, g, m0, &mut cols[..rows * patch], exec);
            let cols_ref = &cols;
            for_chunks_mut(exec, ys, m_total, |co, plane| {
                let wrow = &w[co * patch..(co + 1) * patch];
                let bias = b[co];
                for r in 0..rows {
                    plane[m0 + r] = dot(wrow, &cols_ref[r * patch..(r + 1) * patch]) + bias;
                }
            });
            m0 += rows;
        }
    }
}

/// dw += gy * cols, db += sum(gy). Gradients accumulate into the buffers.
pub fn conv2d_backward_weight<T: Scalar>(
    exec: Exec,
    x: &[T],
    gy: &[T],
    g: &ConvGeom,
    dw: &mut [T],
    db: &mut [T],
) {
    let patch = g.patch_len();
    let m_total = g.positions();
    let tile = g.tile_rows();
    let mut cols = vec![T::zero(); tile * patch];
    for n in 0..g.n {
        let xs = &x[n * g.c_in * g.h_in * g.w_in..(n + 1) * g.c_in * g.h_in * g.w_in];
        let gys = &gy[n * g.c_out * m_total..(n + 1) * g.c_out * m_total];
        let mut m0 = 0;
        while m0 < m_total {
            let rows = tile.min(m_total - m0);
            im2col_rows(xs, g, m0, &mut cols[..rows * patch], exec);
            let cols_ref = &cols;
            for_chunks_mut(exec, dw, patch, |co, dwrow| {
                let gplane = &gys[co * m_total..(co + 1) * m_total];
                for r in 0..rows {
                    axpy(gplane[m0 + r], &cols_ref[r * patch..(r + 1) * patch], dwrow);
                }
            });
            m0 += rows;
        }
        for (co, dbco) in db.iter_mut().enumerate() {
            let gplane = &gys[co * m_total..(co + 1) * m_total];
            let mut s = T::zero();
            for v in gplane {
                s = s + *v;
            }
            *dbco = *dbco + s;
        }
    }
}

/// dx += conv-backward(gy, w). Gradients accumulate into `dx`.
pub fn conv2d_backward_input<T: Scalar>(exec: Exec, gy: &[T], w: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.patch_len();
    let m_total = g.positions();
    let tile = g.tile_rows();
    let mut dcols = vec![T::zero(); tile * patch];
    for n in 0..g.n {
        let gys = &gy[n * g.c_out * m_total..(n + 1) * g.c_out * m_total];
        let dxs = &mut dx[n * g.c_in * g.h_in * g.w_in..(n + 1) * g.c_in * g.h_in * g.w_in];
        let mut m0 = 0;
        while m0 < m_total {
            let rows = tile.min(m_total - m0);
            for_chunks_mut(exec, &mut dcols[..rows * patch], patch, |r, row| {
                row.fill(T::zero());
                let m = m0 + r;
                for co in 0..g.c_out {
                    axpy(gys[co * m_total + m], &w[co * patch..(co + 1) * patch], row);
                }
            });
            // Scatter-add back to the input grid. Patches overlap, so this
            // stays sequential within a sample; tile order is ascending.
            for r in 0..rows {
                let m = m0 + r;
                let oh = m / g.w_out;
                let ow = m % g.w_out;
                let row = &dcols[r * patch..(r + 1) * patch];
                let mut idx = 0;
                for ci in 0..g.c_in {
                    let base_c = ci * g.h_in * g.w_in;
                    for kh in 0..g.k {
                        let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h_in as isize {
                            idx += g.k;
                            continue;
                        }
                        let base = base_c + ih as usize * g.w_in;
                        for kw in 0..g.k {
                            let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                            if iw >= 0 && iw < g.w_in as isize {
                                let t = base + iw as usize;
                                dxs[t] = dxs[t] + row[idx];
                            }
                            idx += 1;
                        }
                    }
                }
            }
            m0 += rows;
        }
    }
}

/// Resolved geometry of a transposed convolution, plus the equivalent
/// stride-1 convolution over the dilated input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTransposeGeom {
    pub n: usize,
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
    pub h_out: usize,
    pub w_out: usize,
    /// Dilated input extents: (in - 1) * stride + 1 + out_pad.
    pub h_dil: usize,
    pub w_dil: usize,
}

impl ConvTransposeGeom {
    /// Weight shape is (C_in, C_out, k, k). Output extent is
    /// `(in - 1) * stride - 2*pad + k + out_pad`.
    pub fn resolve(
        input: Shape,
        weight: Shape,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<ConvTransposeGeom, TensorError> {
        if stride == 0 {
            return Err(TensorError::bad_config(
                "conv_transpose2d",
                "stride must be >= 1",
            ));
        }
        if weight.h != weight.w {
            return Err(TensorError::bad_config(
                "conv_transpose2d",
                format!("kernel must be square, got {}", weight),
            ));
        }
        if weight.n != input.c {
            return Err(TensorError::DimMismatch {
                op: "conv_transpose2d",
                what: "input channels",
                lhs: input,
                rhs: weight,
            });
        }
        let k = weight.h;
        if pad + 1 > k {
            return Err(TensorError::bad_config(
                "conv_transpose2d",
                format!("pad {} must be < kernel {}", pad, k),
            ));
        }
        if out_pad >= stride {
            return Err(TensorError::bad_config(
                "conv_transpose2d",
                format!("output padding {} must be < stride {}", out_pad, stride),
            ));
        }
        if input.h == 0
            || input.w == 0
            || (input.h - 1) * stride + k + out_pad <= 2 * pad
            || (input.w - 1) * stride + k + out_pad <= 2 * pad
        {
            return Err(TensorError::bad_config(
                "conv_transpose2d",
                "non-positive output extent",
            ));
        }
        let ext = |e: usize| (e - 1) * stride + k + out_pad - 2 * pad;
        Ok(ConvTransposeGeom {
            n: input.n,
            c_in: input.c,
            h_in: input.h,
            w_in: input.w,
            c_out: weight.c,
            k,
            stride,
            pad,
            out_pad,
            h_out: ext(input.h),
            w_out: ext(input.w),
            h_dil: (input.h - 1) * stride + 1 + out_pad,
            w_dil: (input.w - 1) * stride + 1 + out_pad,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.c_out, self.h_out, self.w_out)
    }

    /// Geometry of the equivalent stride-1 convolution.
    fn as_conv(&self) -> ConvGeom {
        ConvGeom {
            n: self.n,
            c_in: self.c_in,
            h_in: self.h_dil,
            w_in: self.w_dil,
            c_out: self.c_out,
            k: self.k,
            stride: 1,
            pad: self.k - 1 - self.pad,
            h_out: self.h_out,
            w_out: self.w_out,
        }
    }

    /// Zero-stuffs `x` onto the stride grid of the dilated buffer.
    fn dilate<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut d = vec![T::zero(); self.n * self.c_in * self.h_dil * self.w_dil];
        for nc in 0..self.n * self.c_in {
            let src = &x[nc * self.h_in * self.w_in..(nc + 1) * self.h_in * self.w_in];
            let dst = &mut d[nc * self.h_dil * self.w_dil..(nc + 1) * self.h_dil * self.w_dil];
            for ih in 0..self.h_in {
                for iw in 0..self.w_in {
                    dst[ih * self.stride * self.w_dil + iw * self.stride] =
                        src[ih * self.w_in + iw];
                }
            }
        }
        d
    }

    /// Swaps the channel axes and flips the kernel spatially:
    /// (C_in, C_out, k, k) -> (C_out, C_in, k, k).
    fn flip_weights<T: Scalar>(&self, w: &[T]) -> Vec<T> {
        let k = self.k;
        let mut f = vec![T::zero(); w.len()];
        for ci in 0..self.c_in {
            for co in 0..self.c_out {
                for a in 0..k {
                    for b in 0..k {
                        f[((co * self.c_in + ci) * k + (k - 1 - a)) * k + (k - 1 - b)] =
                            w[((ci * self.c_out + co) * k + a) * k + b];
                    }
                }
            }
        }
        f
    }
}

/// y = conv_transpose(x, w) + b. `y` is fully overwritten.
pub fn conv_transpose2d_forward<T: Scalar>(
    exec: Exec,
    x: &[T],
    w: &[T],
    b: &[T],
    g: &ConvTransposeGeom,
    y: &mut [T],
) {
    let dil = g.dilate(x);
    let wf = g.flip_weights(w);
    conv2d_forward(exec, &dil, &wf, b, &g.as_conv(), y);
}

/// Accumulates input, weight, and bias gradients of the transposed
/// convolution into `dx`, `dw`, `db`.
pub fn conv_transpose2d_backward<T: Scalar>(
    exec: Exec,
    x: &[T],
    w: &[T],
    gy: &[T],
    g: &ConvTransposeGeom,
    dx: &mut [T],
    dw: &mut [T],
    db: &mut [T],
) {
    let conv = g.as_conv();
    let dil = g.dilate(x);
    let wf = g.flip_weights(w);

    let mut dwf = vec![T::zero(); w.len()];
    conv2d_backward_weight(exec, &dil, gy, &conv, &mut dwf, db);
    let k = g.k;
    for ci in 0..g.c_in {
        for co in 0..g.c_out {
            for a in 0..k {
                for b_ in 0..k {
                    let t = ((ci * g.c_out + co) * k + a) * k + b_;
                    dw[t] = dw[t] + dwf[((co * g.c_in + ci) * k + (k - 1 - a)) * k + (k - 1 - b_)];
                }
            }
        }
    }

    let mut ddil = vec![T::zero(); dil.len()];
    conv2d_backward_input(exec, gy, &wf, &conv, &mut ddil);
    for nc in 0..g.n * g.c_in {
        let src = &ddil[nc * g.h_dil * g.w_dil..(nc + 1) * g.h_dil * g.w_dil];
        let dst = &mut dx[nc * g.h_in * g.w_in..(nc + 1) * g.h_in * g.w_in];
        for ih in 0..g.h_in {
            for iw in 0..g.w_in {
                let t = ih * g.w_in + iw;
                dst[t] = dst[t] + src[ih * g.stride * g.w_dil + iw * g.stride];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(
        input: Shape,
        weight: Shape,
        stride: usize,
        pad: usize,
    ) -> ConvGeom {
        ConvGeom::resolve(input, weight, stride, pad).unwrap()
    }

    #[test]
    fn scalar_kernel_is_pointwise_scale() {
        // 1x1x3x3 ones, 1x1x1x1 weight [[2]], bias 0 -> all 2.0
        let g = geom(Shape::new(1, 1, 3, 3), Shape::new(1, 1, 1, 1), 1, 0);
        let x = vec![1.0f32; 9];
        let mut y = vec![0.0f32; 9];
        conv2d_forward(Exec::Seq, &x, &[2.0], &[0.0], &g, &mut y);
        assert_eq!(y, vec![2.0; 9]);
    }

    #[test]
    fn channel_mismatch_is_a_dim_error() {
        let err = ConvGeom::resolve(Shape::new(1, 2, 4, 4), Shape::new(4, 3, 3, 3), 1, 1);
        assert!(matches!(err, Err(TensorError::DimMismatch { .. })));
    }

    #[test]
    fn non_positive_output_is_a_config_error() {
        let err = ConvGeom::resolve(Shape::new(1, 1, 3, 3), Shape::new(1, 1, 5, 5), 1, 0);
        assert!(matches!(err, Err(TensorError::BadConfig { .. })));
    }

    #[test]
    fn transpose_scatters_onto_stride_grid() {
        // 1x1x2x2 input, identity 1x1 kernel, stride 2: values land on the
        // grid, zeros elsewhere.
        let g = ConvTransposeGeom::resolve(
            Shape::new(1, 1, 2, 2),
            Shape::new(1, 1, 1, 1),
            2,
            0,
            0,
        )
        .unwrap();
        assert_eq!((g.h_out, g.w_out), (3, 3));
        let x = vec![1.0f32, 2.0, 3.0, 4.0];
        let mut y = vec![0.0f32; 9];
        conv_transpose2d_forward(Exec::Seq, &x, &[1.0], &[0.0], &g, &mut y);
        assert_eq!(y, vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0, 0.0, 4.0]);
    }

    #[test]
    fn transpose_output_padding_extends_canvas() {
        let g = ConvTransposeGeom::resolve(
            Shape::new(1, 1, 2, 2),
            Shape::new(1, 1, 1, 1),
            2,
            0,
            1,
        )
        .unwrap();
        assert_eq!((g.h_out, g.w_out), (4, 4));
    }

    #[test]
    fn transpose_zero_input_gives_bias() {
        let g = ConvTransposeGeom::resolve(
            Shape::new(1, 1, 2, 2),
            Shape::new(1, 2, 3, 3),
            2,
            1,
            1,
        )
        .unwrap();
        assert_eq!((g.h_out, g.w_out), (4, 4));
        let x = vec![0.0f32; 4];
        let w = vec![0.5f32; 18];
        let mut y = vec![9.0f32; 2 * 16];
        conv_transpose2d_forward(Exec::Seq, &x, &w, &[1.0, -2.0], &g, &mut y);
        assert!(y[..16].iter().all(|&v| v == 1.0));
        assert!(y[16..].iter().all(|&v| v == -2.0));
    }

    #[test]
    fn stride2_roundtrip_restores_extents() {
        // Shape round-trip of the encoder/decoder pairing at 64x64.
        let enc = geom(Shape::new(1, 1, 64, 64), Shape::new(4, 1, 3, 3), 2, 1);
        assert_eq!((enc.h_out, enc.w_out), (32, 32));
        let dec = ConvTransposeGeom::resolve(
            Shape::new(1, 4, 32, 32),
            Shape::new(4, 1, 3, 3),
            2,
            1,
            1,
        )
        .unwrap();
        assert_eq!((dec.h_out, dec.w_out), (64, 64));
    }
}
