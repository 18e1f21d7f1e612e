//! im2col + GEMM convolution kernels.

use super::{Tensor, TensorError};

/// Stride, dilation and symmetric zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        Self {
            stride,
            dilation,
            padding,
        }
    }

    /// Output extent along one axis, or `None` when no kernel placement fits.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::new(1, 1, 0)
    }
}

/// Resolved sizes of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub geom: ConvGeometry,
}

impl ConvShape {
    pub fn resolve(
        input: &Tensor,
        kernel: &Tensor,
        bias: Option<&Tensor>,
        geom: ConvGeometry,
    ) -> Result<Self, TensorError> {
        let [n, c_in, h, w] = input.dims4("conv2d input")?;
        let [c_out, kc, kh, kw] = kernel.dims4("conv2d kernel")?;
        if kc != c_in {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: kernel.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.numel() != c_out {
                return Err(TensorError::ShapeMismatch {
                    op: "conv2d bias",
                    left: kernel.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        if geom.dilation == 0 || geom.stride == 0 {
            return Err(TensorError::InvalidArgument(
                "conv2d stride and dilation must be positive".into(),
            ));
        }
        let (ho, wo) = match (geom.output_extent(h, kh), geom.output_extent(w, kw)) {
            (Some(ho), Some(wo)) => (ho, wo),
            _ => {
                return Err(TensorError::InvalidShape(format!(
                    "conv2d: kernel {kh}x{kw} with {geom:?} does not fit input {h}x{w}"
                )))
            }
        };
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho,
            wo,
            geom,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// Input coordinate sampled by output index `o` and kernel tap `k`.
    #[inline]
    fn source(&self, o: usize, k: usize) -> isize {
        (o * self.geom.stride + k * self.geom.dilation) as isize - self.geom.padding as isize
    }
}

/// `C = A * B + beta * C` where `C` is a dense row-major `m x n` buffer.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the assertions above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
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
            n as isize,
            1,
        );
    }
}

fn im2col(s: &ConvShape, x: &[f64], cols: &mut [f64]) {
    let plane = s.out_plane();
    for c in 0..s.c_in {
        let xc = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (c * s.kh + ki) * s.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = s.source(oy, ki);
                    let dst_row = &mut dst[oy * s.wo..(oy + 1) * s.wo];
                    if iy < 0 || iy >= s.h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = s.source(ox, kj);
                        *d = if ix < 0 || ix >= s.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(s: &ConvShape, cols: &[f64], dx: &mut [f64]) {
    let plane = s.out_plane();
    for c in 0..s.c_in {
        let dxc = &mut dx[c * s.h * s.w..(c + 1) * s.h * s.w];
        for ki in 0..s.kh {
            for kj in 0..s.kw {
                let row = (c * s.kh + ki) * s.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..s.ho {
                    let iy = s.source(oy, ki);
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * s.w..(iy as usize + 1) * s.w];
                    for ox in 0..s.wo {
                        let ix = s.source(ox, kj);
                        if ix >= 0 && ix < s.w as isize {
                            dst[ix as usize] += src[oy * s.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward(s: &ConvShape, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let plane = s.out_plane();
    let patch = s.patch_len();
    let mut out = vec![0.0; s.n * s.c_out * plane];
    let mut cols = vec![0.0; patch * plane];
    for b in 0..s.n {
        let x = &input[b * s.c_in * s.h * s.w..(b + 1) * s.c_in * s.h * s.w];
        im2col(s, x, &mut cols);
        let y = &mut out[b * s.c_out * plane..(b + 1) * s.c_out * plane];
        if let Some(bias) = bias {
            for (co, row) in y.chunks_exact_mut(plane).enumerate() {
                row.fill(bias[co]);
            }
        }
        gemm(s.c_out, patch, plane, kernel, (patch, 1), &cols, (plane, 1), 1.0, y);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub kernel: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    s: &ConvShape,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    need: (bool, bool, bool),
) -> ConvGrads {
    let (need_input, need_kernel, need_bias) = need;
    let plane = s.out_plane();
    let patch = s.patch_len();
    let in_len = s.c_in * s.h * s.w;
    let mut d_input = need_input.then(|| vec![0.0; s.n * in_len]);
    let mut d_kernel = need_kernel.then(|| vec![0.0; s.c_out * patch]);
    let mut d_bias = need_bias.then(|| vec![0.0; s.c_out]);
    let mut cols = vec![0.0; patch * plane];
    for b in 0..s.n {
        let g = &grad_out[b * s.c_out * plane..(b + 1) * s.c_out * plane];
        if let Some(db) = d_bias.as_mut() {
            for (co, row) in g.chunks_exact(plane).enumerate() {
                db[co] += row.iter().sum::<f64>();
            }
        }
        if let Some(dk) = d_kernel.as_mut() {
            im2col(s, &input[b * in_len..(b + 1) * in_len], &mut cols);
            // dK += dY * cols^T
            gemm(s.c_out, plane, patch, g, (plane, 1), &cols, (1, plane), 1.0, dk);
        }
        if let Some(dx) = d_input.as_mut() {
            // dcols = K^T * dY
            gemm(patch, s.c_out, plane, kernel, (1, patch), g, (plane, 1), 0.0, &mut cols);
            col2im(s, &cols, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    ConvGrads {
        input: d_input,
        kernel: d_kernel,
        bias: d_bias,
    }
}
