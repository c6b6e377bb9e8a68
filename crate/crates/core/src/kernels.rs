//! Raw array kernels behind the tape ops. Everything here works on flat
//! row-major slices; shape checking happens in the tape layer.

use alloc::vec;
use alloc::vec::Vec;

/// Geometry of a square-kernel convolution over a `c × h × w` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `ox` whose source column `ox * stride + kx - padding`
/// falls inside the input.
fn valid_columns(g: &ConvGeometry, kx: usize) -> core::ops::Range<usize> {
    let ow = g.out_width();
    let lo = g.padding.saturating_sub(kx).div_ceil(g.stride);
    let hi = (g.width + g.padding).saturating_sub(kx).div_ceil(g.stride).min(ow);
    lo..hi.max(lo)
}

/// Unfolds the input into a `patch_len × out_pixels` matrix.
pub fn im2col(input: &[f32], g: &ConvGeometry) -> Vec<f32> {
    if g.is_pointwise() {
        return input.to_vec();
    }
    let (oh, ow) = (g.out_height(), g.out_width());
    let mut col = vec![0.0f32; g.patch_len() * oh * ow];
    let plane = g.height * g.width;
    let mut row = 0;
    for c in 0..g.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let cols = valid_columns(g, kx);
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || cols.is_empty() {
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let dst_row = &mut dst[oy * ow + cols.start..oy * ow + cols.end];
                    let ix0 = cols.start * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        dst_row.copy_from_slice(&src_row[ix0..ix0 + dst_row.len()]);
                    } else {
                        for (d, s) in dst_row.iter_mut().zip(src_row[ix0..].iter().step_by(g.stride)) {
                            *d = *s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input.
pub fn col2im(col: &[f32], g: &ConvGeometry) -> Vec<f32> {
    if g.is_pointwise() {
        return col.to_vec();
    }
    let (oh, ow) = (g.out_height(), g.out_width());
    let plane = g.height * g.width;
    let mut out = vec![0.0f32; g.channels * plane];
    let mut row = 0;
    for c in 0..g.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let cols = valid_columns(g, kx);
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize || cols.is_empty() {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * ow + cols.start..oy * ow + cols.end];
                    let ix0 = cols.start * g.stride + kx - g.padding;
                    for (d, s) in dst_row[ix0..].iter_mut().step_by(g.stride).zip(src_row) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Row-major matrix operand, optionally read transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f32],
    /// Rows × columns of the matrix as stored.
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn logical(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a · b + beta · c` with `c` row-major `m × n`.
pub fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f32, c: &mut [f32]) {
    let (m, k) = a.logical();
    let (kb, n) = b.logical();
    assert_eq!(k, kb, "gemm inner dimensions");
    assert_eq!(c.len(), m * n, "gemm output size");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above guarantee every index addressed through the
    // given dimensions and strides lies inside the three slices.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution. Returns the output and the unfolded input, which
/// the backward pass reuses for the weight gradient.
pub fn conv2d_forward(
    input: &[f32],
    weight: &[f32],
    bias: &[f32],
    out_channels: usize,
    g: &ConvGeometry,
) -> (Vec<f32>, Vec<f32>) {
    let col = im2col(input, g);
    let p = g.out_pixels();
    let mut out = vec![0.0f32; out_channels * p];
    for (row, &b) in out.chunks_exact_mut(p).zip(bias) {
        row.fill(b);
    }
    gemm(
        MatRef::new(weight, out_channels, g.patch_len()),
        MatRef::new(&col, g.patch_len(), p),
        1.0,
        &mut out,
    );
    (out, col)
}

/// Weight and bias gradients of a convolution.
pub fn conv2d_backward_params(
    grad_out: &[f32],
    col: &[f32],
    out_channels: usize,
    g: &ConvGeometry,
) -> (Vec<f32>, Vec<f32>) {
    let p = g.out_pixels();
    let mut dw = vec![0.0f32; out_channels * g.patch_len()];
    gemm(
        MatRef::new(grad_out, out_channels, p),
        MatRef::new(col, g.patch_len(), p).t(),
        0.0,
        &mut dw,
    );
    let db = grad_out
        .chunks_exact(p)
        .map(|row| row.iter().map(|&v| v as f64).sum::<f64>() as f32)
        .collect();
    (dw, db)
}

/// Input gradient of a convolution.
pub fn conv2d_backward_input(
    grad_out: &[f32],
    weight: &[f32],
    out_channels: usize,
    g: &ConvGeometry,
) -> Vec<f32> {
    let p = g.out_pixels();
    let mut dcol = vec![0.0f32; g.patch_len() * p];
    gemm(
        MatRef::new(weight, out_channels, g.patch_len()).t(),
        MatRef::new(grad_out, out_channels, p),
        0.0,
        &mut dcol,
    );
    col2im(&dcol, g)
}

pub fn upsample_nearest(input: &[f32], c: usize, h: usize, w: usize, factor: usize) -> Vec<f32> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let src_row = &src[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, d) in dst[oy * ow..(oy + 1) * ow].iter_mut().enumerate() {
                *d = src_row[ox / factor];
            }
        }
    }
    out
}

/// Sums each `factor × factor` block of the upsampled gradient.
pub fn upsample_nearest_backward(
    grad: &[f32],
    c: usize,
    h: usize,
    w: usize,
    factor: usize,
) -> Vec<f32> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let src = &grad[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let dst_row = &mut dst[(oy / factor) * w..(oy / factor + 1) * w];
            for (ox, s) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                dst_row[ox / factor] += *s;
            }
        }
    }
    out
}
