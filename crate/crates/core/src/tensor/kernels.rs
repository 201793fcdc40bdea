//! Raw convolution kernels on row-major slices (im2col + gemm).

use super::Element;

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub fn transposed_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let full = (input - 1) * stride + kernel;
    full.checked_sub(2 * padding).filter(|&n| n > 0)
}

/// Geometry of a correlation between an "image" grid and a "window" grid.
/// For `conv2d` the image is the input; for the transposed op it is the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Geom {
    pub channels: usize,
    pub img_h: usize,
    pub img_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Geom {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }
    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds `img` (C×H×W) into `cols` ((C·kh·kw) × (out_h·out_w)).
pub(crate) fn im2col<T: Element>(img: &[T], g: &Geom, cols: &mut [T]) {
    if g.is_pointwise() {
        cols.copy_from_slice(img);
        return;
    }
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    let out_row = &mut dst[oh * g.out_w..(oh + 1) * g.out_w];
                    if ih < 0 || ih >= g.img_h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.img_w..(ih as usize + 1) * g.img_w];
                    if g.stride == 1 {
                        // contiguous run with zero borders
                        let start = kj as isize - pad;
                        for (ow, o) in out_row.iter_mut().enumerate() {
                            let iw = start + ow as isize;
                            *o = if iw >= 0 && iw < g.img_w as isize {
                                src[iw as usize]
                            } else {
                                T::zero()
                            };
                        }
                    } else {
                        for (ow, o) in out_row.iter_mut().enumerate() {
                            let iw = (ow * g.stride + kj) as isize - pad;
                            *o = if iw >= 0 && iw < g.img_w as isize {
                                src[iw as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds `cols` back onto `img`, accumulating overlapping windows.
pub(crate) fn col2im_add<T: Element>(cols: &[T], g: &Geom, img: &mut [T]) {
    if g.is_pointwise() {
        for (d, &s) in img.iter_mut().zip(cols) {
            *d += s;
        }
        return;
    }
    let ncols = g.col_cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut img[c * g.img_h * g.img_w..(c + 1) * g.img_h * g.img_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let ih = (oh * g.stride + ki) as isize - pad;
                    if ih < 0 || ih >= g.img_h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.img_w..(ih as usize + 1) * g.img_w];
                    let in_row = &src[oh * g.out_w..(oh + 1) * g.out_w];
                    for (ow, &v) in in_row.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - pad;
                        if iw >= 0 && iw < g.img_w as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · b (k×n) + beta·c`, all row-major, optionally transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds views.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward correlation for one sample: `out (O×HW) = K (O×CKK) · cols + bias`.
pub(crate) fn conv_forward<T: Element>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &Geom,
    out_channels: usize,
    cols: &mut Vec<T>,
    out: &mut [T],
) {
    cols.resize(g.col_rows() * g.col_cols(), T::zero());
    im2col(input, g, cols);
    let hw = g.col_cols();
    for (o, row) in out.chunks_mut(hw).enumerate() {
        row.fill(bias[o]);
    }
    matmul(out_channels, g.col_rows(), hw, kernel, false, cols, false, T::one(), out);
}

/// Backward of [`conv_forward`] for one sample. Accumulates into the gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Element>(
    input: &[T],
    kernel: &[T],
    g: &Geom,
    out_channels: usize,
    grad_out: &[T],
    cols: &mut Vec<T>,
    grad_input: Option<&mut [T]>,
    grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let hw = g.col_cols();
    let rows = g.col_rows();
    if let Some(gb) = grad_bias {
        for (o, row) in grad_out.chunks(hw).enumerate() {
            gb[o] += row.iter().copied().sum::<T>();
        }
    }
    if let Some(gk) = grad_kernel {
        cols.resize(rows * hw, T::zero());
        im2col(input, g, cols);
        matmul(out_channels, hw, rows, grad_out, false, cols, true, T::one(), gk);
    }
    if let Some(gi) = grad_input {
        cols.resize(rows * hw, T::zero());
        matmul(rows, out_channels, hw, kernel, true, grad_out, false, T::zero(), cols);
        col2im_add(cols, g, gi);
    }
}

/// Transposed correlation for one sample. `kernel` is C×(O·kh·kw) with C the
/// input channels; `g` describes the output image (O channels).
pub(crate) fn conv_transpose_forward<T: Element>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &Geom,
    in_channels: usize,
    cols: &mut Vec<T>,
    out: &mut [T],
) {
    let hw = g.col_cols();
    let rows = g.col_rows();
    cols.resize(rows * hw, T::zero());
    matmul(rows, in_channels, hw, kernel, true, input, false, T::zero(), cols);
    let plane = g.img_h * g.img_w;
    for (o, chunk) in out.chunks_mut(plane).enumerate() {
        chunk.fill(bias[o]);
    }
    col2im_add(cols, g, out);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose_backward<T: Element>(
    input: &[T],
    kernel: &[T],
    g: &Geom,
    in_channels: usize,
    grad_out: &[T],
    cols: &mut Vec<T>,
    grad_input: Option<&mut [T]>,
    grad_kernel: Option<&mut [T]>,
    grad_bias: Option<&mut [T]>,
) {
    let hw = g.col_cols();
    let rows = g.col_rows();
    let plane = g.img_h * g.img_w;
    if let Some(gb) = grad_bias {
        for (o, chunk) in grad_out.chunks(plane).enumerate() {
            gb[o] += chunk.iter().copied().sum::<T>();
        }
    }
    if grad_input.is_none() && grad_kernel.is_none() {
        return;
    }
    cols.resize(rows * hw, T::zero());
    im2col(grad_out, g, cols);
    if let Some(gi) = grad_input {
        matmul(in_channels, rows, hw, kernel, false, cols, false, T::one(), gi);
    }
    if let Some(gk) = grad_kernel {
        matmul(in_channels, hw, rows, input, false, cols, true, T::one(), gk);
    }
}
