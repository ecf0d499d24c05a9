//! Strided convolution and transposed convolution over three spatial axes.
//!
//! A 2D convolution is the special case with a singleton leading axis, so the
//! image encoder and the tactile decoder share the same im2col/GEMM kernels.
//! Weight layouts follow the usual convention:
//! convolution `[out, in, k0, k1, k2]`, transposed convolution `[in, out, k0, k1, k2]`.
//! With that layout the two operations are adjoint for a shared kernel.

use super::gemm::{gemm, gemm_strided};
use crate::error::{Error, Result};

/// Kernel, stride and padding along each of the three spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Geometry {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Result<Self> {
        if kernel.iter().chain(stride.iter()).any(|&v| v == 0) {
            return Err(Error::InvalidArgument(format!(
                "kernel {kernel:?} and stride {stride:?} entries must be >= 1"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
        })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `floor((n + 2p - k) / s) + 1` per axis.
    pub fn conv_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return None;
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Some(out)
    }

    /// `(n - 1) * s + k - 2p` per axis.
    pub fn deconv_output(&self, input: [usize; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let full = (input[a] - 1) * self.stride[a] + self.kernel[a];
            if full <= 2 * self.padding[a] {
                return None;
            }
            out[a] = full - 2 * self.padding[a];
        }
        Some(out)
    }
}

/// Range `[lo, hi)` of output positions `o` whose source index
/// `o * stride + offset - pad` falls inside `[0, len)`.
#[inline]
fn valid_span(count: usize, stride: usize, offset: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    // o * stride + offset - pad <= len - 1
    let hi = if len + pad > offset {
        ((len + pad - offset - 1) / stride + 1).min(count)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one `[channels, d0, d1, d2]` sample into `[channels * kvol, o0 * o1 * o2]`.
fn im2col(
    input: &[f64],
    channels: usize,
    dims: [usize; 3],
    geom: &Geometry,
    out: [usize; 3],
    cols: &mut [f64],
) {
    if geom.stride[2] > 1 && geom.padding[2] == 0 {
        return im2col_phased(input, channels, dims, geom, out, cols);
    }
    let [k0, k1, k2] = geom.kernel;
    let [s0, s1, s2] = geom.stride;
    let [p0, p1, p2] = geom.padding;
    let n_out = out[0] * out[1] * out[2];
    let plane = dims[1] * dims[2];
    let volume = dims[0] * plane;
    let mut row = 0;
    for c in 0..channels {
        let src = &input[c * volume..(c + 1) * volume];
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    let mut idx = 0;
                    for o0 in 0..out[0] {
                        let i0 = (o0 * s0 + a) as isize - p0 as isize;
                        let valid0 = i0 >= 0 && (i0 as usize) < dims[0];
                        for o1 in 0..out[1] {
                            let i1 = (o1 * s1 + b) as isize - p1 as isize;
                            let valid = valid0 && i1 >= 0 && (i1 as usize) < dims[1];
                            let line = &mut dst[idx..idx + out[2]];
                            if !valid {
                                line.fill(0.0);
                            } else {
                                let base = i0 as usize * plane + i1 as usize * dims[2];
                                let (lo, hi) = valid_span(out[2], s2, e, p2, dims[2]);
                                line[..lo].fill(0.0);
                                line[hi..].fill(0.0);
                                if lo == hi {
                                    idx += out[2];
                                    continue;
                                }
                                let start = base + lo * s2 + e - p2;
                                for (slot, &v) in line[lo..hi]
                                    .iter_mut()
                                    .zip(src[start..].iter().step_by(s2))
                                {
                                    *slot = v;
                                }
                            }
                            idx += out[2];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// [`im2col`] for a strided, unpadded innermost axis. Each line is first split
/// into its `stride` phases so that every column row becomes a contiguous copy.
fn im2col_phased(
    input: &[f64],
    channels: usize,
    dims: [usize; 3],
    geom: &Geometry,
    out: [usize; 3],
    cols: &mut [f64],
) {
    let [k0, k1, k2] = geom.kernel;
    let [s0, s1, s2] = geom.stride;
    let [p0, p1, _] = geom.padding;
    let n_out = out[0] * out[1] * out[2];
    let phase_len = dims[2].div_ceil(s2);
    let line_len = s2 * phase_len;
    let lines = dims[0] * dims[1];
    let mut phased = vec![0.0; channels * lines * line_len];
    for (src, dst) in input.chunks(dims[2]).zip(phased.chunks_mut(line_len)) {
        for (j, &v) in src.iter().enumerate() {
            dst[(j % s2) * phase_len + j / s2] = v;
        }
    }
    let mut row = 0;
    for c in 0..channels {
        let src = &phased[c * lines * line_len..(c + 1) * lines * line_len];
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    let (_, hi) = valid_span(out[2], s2, e, 0, dims[2]);
                    let shift = (e % s2) * phase_len + e / s2;
                    let mut idx = 0;
                    for o0 in 0..out[0] {
                        let i0 = (o0 * s0 + a) as isize - p0 as isize;
                        let valid0 = i0 >= 0 && (i0 as usize) < dims[0];
                        for o1 in 0..out[1] {
                            let i1 = (o1 * s1 + b) as isize - p1 as isize;
                            let line = &mut dst[idx..idx + out[2]];
                            if valid0 && i1 >= 0 && (i1 as usize) < dims[1] {
                                let base = (i0 as usize * dims[1] + i1 as usize) * line_len + shift;
                                line[..hi].copy_from_slice(&src[base..base + hi]);
                                line[hi..].fill(0.0);
                            } else {
                                line.fill(0.0);
                            }
                            idx += out[2];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `target`.
fn col2im(
    cols: &[f64],
    channels: usize,
    dims: [usize; 3],
    geom: &Geometry,
    out: [usize; 3],
    target: &mut [f64],
) {
    let [k0, k1, k2] = geom.kernel;
    let [s0, s1, s2] = geom.stride;
    let [p0, p1, p2] = geom.padding;
    let n_out = out[0] * out[1] * out[2];
    let plane = dims[1] * dims[2];
    let volume = dims[0] * plane;
    let mut row = 0;
    for c in 0..channels {
        let dst = &mut target[c * volume..(c + 1) * volume];
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    let mut idx = 0;
                    for o0 in 0..out[0] {
                        let i0 = (o0 * s0 + a) as isize - p0 as isize;
                        let valid0 = i0 >= 0 && (i0 as usize) < dims[0];
                        for o1 in 0..out[1] {
                            let i1 = (o1 * s1 + b) as isize - p1 as isize;
                            if valid0 && i1 >= 0 && (i1 as usize) < dims[1] {
                                let base = i0 as usize * plane + i1 as usize * dims[2];
                                let (lo, hi) = valid_span(out[2], s2, e, p2, dims[2]);
                                if lo == hi {
                                    idx += out[2];
                                    continue;
                                }
                                let start = base + lo * s2 + e - p2;
                                for (slot, &v) in dst[start..]
                                    .iter_mut()
                                    .step_by(s2)
                                    .zip(&src[idx + lo..idx + hi])
                                {
                                    *slot += v;
                                }
                            }
                            idx += out[2];
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

thread_local! {
    static WORKSPACE: std::cell::RefCell<Vec<f64>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Runs `f` with a reusable scratch buffer of at least `len` values.
fn with_workspace<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    WORKSPACE.with(|cell| {
        let mut buf = cell.borrow_mut();
        if buf.len() < len {
            buf.resize(len, 0.0);
        }
        f(&mut buf[..len])
    })
}

/// Shapes of one convolution-style call, all excluding the batch axis.
#[derive(Clone, Copy, Debug)]
pub struct ConvShape {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_dims: [usize; 3],
    pub out_dims: [usize; 3],
}

impl ConvShape {
    fn in_volume(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out_dims.iter().product()
    }
}

/// Below this input-channel count the per-offset GEMMs of the shifted path are
/// too thin to beat a single im2col GEMM.
const SHIFTED_MIN_CHANNELS: usize = 8;

/// Zero-padded input split into its stride phases.
///
/// Phase `(r0, r1, r2)` holds padded positions `q * stride + r`, so a kernel tap
/// `(a, b, e)` reads a unit-stride window of phase `(a % s0, b % s1, e % s2)`
/// displaced by `(a / s0, b / s1, e / s2)`. Outputs are computed on a "wide" grid
/// that uses the phase pitches, which turns every tap into one strided GEMM.
struct Phased {
    pitch: [usize; 3],
    chan_stride: usize,
    phase_stride: usize,
    data: Vec<f64>,
}

impl Phased {
    fn layout(channels: usize, dims: [usize; 3], geom: &Geometry) -> ([usize; 3], usize, usize) {
        let mut pitch = [0; 3];
        for a in 0..3 {
            pitch[a] = (dims[a] + 2 * geom.padding[a]).div_ceil(geom.stride[a]);
        }
        let chan_stride = pitch.iter().product::<usize>();
        (pitch, chan_stride, channels * chan_stride)
    }

    fn zeros(channels: usize, dims: [usize; 3], geom: &Geometry) -> Self {
        let (pitch, chan_stride, phase_stride) = Self::layout(channels, dims, geom);
        let phases: usize = geom.stride.iter().product();
        Self {
            pitch,
            chan_stride,
            phase_stride,
            data: vec![0.0; phases * phase_stride],
        }
    }

    /// Index into `data` of unpadded input position `(c, j)` for every `j`,
    /// visited in row-major order.
    fn for_each_position(
        &self,
        channels: usize,
        dims: [usize; 3],
        geom: &Geometry,
        mut f: impl FnMut(usize, usize),
    ) {
        let [s0, s1, s2] = geom.stride;
        let [p0, p1, p2] = geom.padding;
        let [_, q1, q2] = self.pitch;
        let mut flat = 0;
        for c in 0..channels {
            for j0 in 0..dims[0] {
                let i0 = j0 + p0;
                for j1 in 0..dims[1] {
                    let i1 = j1 + p1;
                    for j2 in 0..dims[2] {
                        let i2 = j2 + p2;
                        let phase = ((i0 % s0) * s1 + i1 % s1) * s2 + i2 % s2;
                        let idx = phase * self.phase_stride
                            + c * self.chan_stride
                            + ((i0 / s0) * q1 + i1 / s1) * q2
                            + i2 / s2;
                        f(flat, idx);
                        flat += 1;
                    }
                }
            }
        }
    }

    fn scatter(input: &[f64], channels: usize, dims: [usize; 3], geom: &Geometry) -> Self {
        let mut phased = Self::zeros(channels, dims, geom);
        let mut data = std::mem::take(&mut phased.data);
        phased.for_each_position(channels, dims, geom, |flat, idx| data[idx] = input[flat]);
        phased.data = data;
        phased
    }

    fn gather(&self, channels: usize, dims: [usize; 3], geom: &Geometry, out: &mut [f64]) {
        self.for_each_position(channels, dims, geom, |flat, idx| out[flat] = self.data[idx]);
    }

    /// Number of wide-grid columns needed to reach the last real output.
    fn wide_len(&self, out: [usize; 3]) -> usize {
        ((out[0] - 1) * self.pitch[1] + out[1] - 1) * self.pitch[2] + out[2]
    }

    fn wide_index(&self, o: [usize; 3]) -> usize {
        (o[0] * self.pitch[1] + o[1]) * self.pitch[2] + o[2]
    }

    /// (kernel offset, phase base + shift) for every kernel tap.
    fn taps(&self, geom: &Geometry) -> Vec<(usize, usize)> {
        let [k0, k1, k2] = geom.kernel;
        let [s0, s1, s2] = geom.stride;
        let mut taps = Vec::with_capacity(geom.kernel_volume());
        for a in 0..k0 {
            for b in 0..k1 {
                for e in 0..k2 {
                    let phase = ((a % s0) * s1 + b % s1) * s2 + e % s2;
                    let shift = ((a / s0) * self.pitch[1] + b / s1) * self.pitch[2] + e / s2;
                    taps.push(((a * k1 + b) * k2 + e, phase * self.phase_stride + shift));
                }
            }
        }
        taps
    }
}

fn for_each_output(out: [usize; 3], mut f: impl FnMut([usize; 3])) {
    for o0 in 0..out[0] {
        for o1 in 0..out[1] {
            for o2 in 0..out[2] {
                f([o0, o1, o2]);
            }
        }
    }
}

fn conv_forward_shifted(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
) -> Vec<f64> {
    let (cin, cout) = (shape.in_channels, shape.out_channels);
    let kvol = geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut output = vec![0.0; shape.batch * cout * n_out];
    for b in 0..shape.batch {
        let x = &input[b * cin * n_in..(b + 1) * cin * n_in];
        let phased = Phased::scatter(x, cin, shape.in_dims, geom);
        let wide = phased.wide_len(shape.out_dims);
        let mut acc = vec![0.0; cout * wide];
        for (koff, start) in phased.taps(geom) {
            gemm_strided(
                cout,
                cin,
                wide,
                &weight[koff..],
                ((cin * kvol) as isize, kvol as isize),
                &phased.data[start..],
                (phased.chan_stride as isize, 1),
                1.0,
                &mut acc,
                (wide as isize, 1),
            );
        }
        let y = &mut output[b * cout * n_out..(b + 1) * cout * n_out];
        for co in 0..cout {
            let mut flat = co * n_out;
            for_each_output(shape.out_dims, |o| {
                y[flat] = bias[co] + acc[co * wide + phased.wide_index(o)];
                flat += 1;
            });
        }
    }
    output
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_shifted(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let (cin, cout) = (shape.in_channels, shape.out_channels);
    let kvol = geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut grad_in = need_input_grad.then(|| vec![0.0; shape.batch * cin * n_in]);
    for b in 0..shape.batch {
        let x = &input[b * cin * n_in..(b + 1) * cin * n_in];
        let g = &grad_out[b * cout * n_out..(b + 1) * cout * n_out];
        let phased = Phased::scatter(x, cin, shape.in_dims, geom);
        let wide = phased.wide_len(shape.out_dims);
        let mut g_wide = vec![0.0; cout * wide];
        for co in 0..cout {
            let mut flat = co * n_out;
            let mut total = 0.0;
            for_each_output(shape.out_dims, |o| {
                g_wide[co * wide + phased.wide_index(o)] = g[flat];
                total += g[flat];
                flat += 1;
            });
            grad_bias[co] += total;
        }
        let mut d_phased = need_input_grad.then(|| Phased::zeros(cin, shape.in_dims, geom));
        for (koff, start) in phased.taps(geom) {
            // dW[:, :, tap] += g_wide * window^T
            gemm_strided(
                cout,
                wide,
                cin,
                &g_wide,
                (wide as isize, 1),
                &phased.data[start..],
                (1, phased.chan_stride as isize),
                1.0,
                &mut grad_weight[koff..],
                ((cin * kvol) as isize, kvol as isize),
            );
            if let Some(d) = d_phased.as_mut() {
                // window gradient += W[:, :, tap]^T * g_wide
                gemm_strided(
                    cin,
                    cout,
                    wide,
                    &weight[koff..],
                    (kvol as isize, (cin * kvol) as isize),
                    &g_wide,
                    (wide as isize, 1),
                    1.0,
                    &mut d.data[start..],
                    (d.chan_stride as isize, 1),
                );
            }
        }
        if let (Some(d), Some(grad_in)) = (d_phased, grad_in.as_mut()) {
            d.gather(cin, shape.in_dims, geom, &mut grad_in[b * cin * n_in..(b + 1) * cin * n_in]);
        }
    }
    grad_in
}

/// Cross-correlation forward pass. `input` is `[B, Cin, d0, d1, d2]` flattened.
pub fn conv_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
) -> Vec<f64> {
    if shape.in_channels >= SHIFTED_MIN_CHANNELS {
        return conv_forward_shifted(input, weight, bias, geom, shape);
    }
    let kdim = shape.in_channels * geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut output = vec![0.0; shape.batch * shape.out_channels * n_out];
    with_workspace(kdim * n_out, |cols| {
        for b in 0..shape.batch {
            let x = &input[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
            im2col(x, shape.in_channels, shape.in_dims, geom, shape.out_dims, cols);
            let y = &mut output[b * shape.out_channels * n_out..(b + 1) * shape.out_channels * n_out];
            for (co, chunk) in y.chunks_mut(n_out).enumerate() {
                chunk.fill(bias[co]);
            }
            gemm(
                shape.out_channels,
                kdim,
                n_out,
                weight,
                (kdim as isize, 1),
                cols,
                (n_out as isize, 1),
                1.0,
                y,
            );
        }
    });
    output
}

/// Gradients of a convolution with respect to input (optional), weight and bias.
/// Weight and bias gradients are accumulated into the given buffers.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    if shape.in_channels >= SHIFTED_MIN_CHANNELS {
        return conv_backward_shifted(
            input,
            weight,
            grad_out,
            geom,
            shape,
            grad_weight,
            grad_bias,
            need_input_grad,
        );
    }
    let kdim = shape.in_channels * geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut grad_in = need_input_grad.then(|| vec![0.0; shape.batch * shape.in_channels * n_in]);
    with_workspace(kdim * n_out, |cols| {
        for b in 0..shape.batch {
            let x = &input[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
            let g = &grad_out[b * shape.out_channels * n_out..(b + 1) * shape.out_channels * n_out];
            for (co, chunk) in g.chunks(n_out).enumerate() {
                grad_bias[co] += chunk.iter().sum::<f64>();
            }
            im2col(x, shape.in_channels, shape.in_dims, geom, shape.out_dims, cols);
            // dW[Cout, K] += dY[Cout, N] * cols^T
            gemm(
                shape.out_channels,
                n_out,
                kdim,
                g,
                (n_out as isize, 1),
                cols,
                (1, n_out as isize),
                1.0,
                grad_weight,
            );
            if let Some(grad_in) = grad_in.as_mut() {
                // dcols[K, N] = W^T * dY
                gemm(
                    kdim,
                    shape.out_channels,
                    n_out,
                    weight,
                    (1, kdim as isize),
                    g,
                    (n_out as isize, 1),
                    0.0,
                    cols,
                );
                let dx = &mut grad_in[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
                col2im(cols, shape.in_channels, shape.in_dims, geom, shape.out_dims, dx);
            }
        }
    });
    grad_in
}

/// Transposed convolution forward pass; `weight` is `[Cin, Cout, k0, k1, k2]`.
pub fn deconv_forward(
    input: &[f64],
    weight: &[f64],
    bias: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
) -> Vec<f64> {
    let kdim = shape.out_channels * geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut output = vec![0.0; shape.batch * shape.out_channels * n_out];
    with_workspace(kdim * n_in, |cols| {
        for b in 0..shape.batch {
            let x = &input[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
            // cols[Cout*kvol, N_in] = W^T * x
            gemm(
                kdim,
                shape.in_channels,
                n_in,
                weight,
                (1, kdim as isize),
                x,
                (n_in as isize, 1),
                0.0,
                cols,
            );
            let y = &mut output[b * shape.out_channels * n_out..(b + 1) * shape.out_channels * n_out];
            for (co, chunk) in y.chunks_mut(n_out).enumerate() {
                chunk.fill(bias[co]);
            }
            col2im(cols, shape.out_channels, shape.out_dims, geom, shape.in_dims, y);
        }
    });
    output
}

#[allow(clippy::too_many_arguments)]
pub fn deconv_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    geom: &Geometry,
    shape: &ConvShape,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input_grad: bool,
) -> Option<Vec<f64>> {
    let kdim = shape.out_channels * geom.kernel_volume();
    let (n_in, n_out) = (shape.in_volume(), shape.out_volume());
    let mut grad_in = need_input_grad.then(|| vec![0.0; shape.batch * shape.in_channels * n_in]);
    with_workspace(kdim * n_in, |cols| {
        for b in 0..shape.batch {
            let x = &input[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
            let g = &grad_out[b * shape.out_channels * n_out..(b + 1) * shape.out_channels * n_out];
            for (co, chunk) in g.chunks(n_out).enumerate() {
                grad_bias[co] += chunk.iter().sum::<f64>();
            }
            im2col(g, shape.out_channels, shape.out_dims, geom, shape.in_dims, cols);
            // dW[Cin, Cout*kvol] += x[Cin, N_in] * cols^T
            gemm(
                shape.in_channels,
                n_in,
                kdim,
                x,
                (n_in as isize, 1),
                cols,
                (1, n_in as isize),
                1.0,
                grad_weight,
            );
            if let Some(grad_in) = grad_in.as_mut() {
                let dx = &mut grad_in[b * shape.in_channels * n_in..(b + 1) * shape.in_channels * n_in];
                gemm(
                    shape.in_channels,
                    kdim,
                    n_in,
                    weight,
                    (kdim as isize, 1),
                    cols,
                    (n_in as isize, 1),
                    0.0,
                    dx,
                );
            }
        }
    });
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop cross-correlation, independent of im2col/GEMM.
    fn naive_conv(
        input: &[f64],
        weight: &[f64],
        bias: &[f64],
        geom: &Geometry,
        s: &ConvShape,
    ) -> Vec<f64> {
        let [d0, d1, d2] = s.in_dims;
        let [o0, o1, o2] = s.out_dims;
        let [k0, k1, k2] = geom.kernel;
        let mut out = vec![0.0; s.batch * s.out_channels * o0 * o1 * o2];
        for b in 0..s.batch {
            for co in 0..s.out_channels {
                for x0 in 0..o0 {
                    for x1 in 0..o1 {
                        for x2 in 0..o2 {
                            let mut acc = bias[co];
                            for ci in 0..s.in_channels {
                                for a in 0..k0 {
                                    for bb in 0..k1 {
                                        for e in 0..k2 {
                                            let i0 = (x0 * geom.stride[0] + a) as isize
                                                - geom.padding[0] as isize;
                                            let i1 = (x1 * geom.stride[1] + bb) as isize
                                                - geom.padding[1] as isize;
                                            let i2 = (x2 * geom.stride[2] + e) as isize
                                                - geom.padding[2] as isize;
                                            if i0 < 0
                                                || i1 < 0
                                                || i2 < 0
                                                || i0 as usize >= d0
                                                || i1 as usize >= d1
                                                || i2 as usize >= d2
                                            {
                                                continue;
                                            }
                                            let xi = (((b * s.in_channels + ci) * d0
                                                + i0 as usize)
                                                * d1
                                                + i1 as usize)
                                                * d2
                                                + i2 as usize;
                                            let wi = (((co * s.in_channels + ci) * k0 + a) * k1
                                                + bb)
                                                * k2
                                                + e;
                                            acc += input[xi] * weight[wi];
                                        }
                                    }
                                }
                            }
                            out[(((b * s.out_channels + co) * o0 + x0) * o1 + x1) * o2 + x2] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn output_lengths() {
        let g = Geometry::new([1, 8, 8], [1, 2, 2], [0, 0, 0]).unwrap();
        assert_eq!(g.conv_output([1, 200, 200]), Some([1, 97, 97]));
        let g = Geometry::new([2, 2, 4], [1, 1, 2], [1, 1, 2]).unwrap();
        assert_eq!(g.deconv_output([5, 5, 46]), Some([4, 4, 90]));
        let g = Geometry::new([1, 1, 1], [1, 1, 1], [1, 0, 0]).unwrap();
        assert_eq!(g.deconv_output([2, 3, 3]), None);
    }

    #[test]
    fn gemm_path_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            ([1, 9, 11], [1, 3, 4], [1, 2, 1], [0, 1, 0]),
            ([4, 4, 20], [2, 2, 4], [1, 1, 2], [0, 0, 1]),
            ([3, 5, 7], [1, 1, 3], [1, 1, 2], [1, 0, 2]),
        ];
        for (dims, k, st, p) in cases {
            for cin in [3, SHIFTED_MIN_CHANNELS + 1] {
                check_against_naive(&mut rng, dims, cin, Geometry::new(k, st, p).unwrap());
            }
        }
    }

    #[test]
    fn shifted_path_handles_encoder_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let geom = Geometry::new([1, 8, 8], [1, 2, 2], [0, 0, 0]).unwrap();
        check_against_naive(&mut rng, [1, 23, 21], 8, geom);
        let geom = Geometry::new([2, 2, 4], [1, 1, 2], [0, 0, 0]).unwrap();
        check_against_naive(&mut rng, [4, 4, 30], 10, geom);
    }

    /// Compares forward values and all three gradients with the naive loops,
    /// the gradients through the adjoint identity <dY, conv(dX)> checks.
    fn check_against_naive(rng: &mut ChaCha8Rng, dims: [usize; 3], cin: usize, geom: Geometry) {
        {
            let shape = ConvShape {
                batch: 2,
                in_channels: cin,
                out_channels: 4,
                in_dims: dims,
                out_dims: geom.conv_output(dims).unwrap(),
            };
            let x = random_vec(rng, 2 * cin * dims.iter().product::<usize>());
            let w = random_vec(rng, 4 * cin * geom.kernel_volume());
            let bias = random_vec(rng, 4);
            let fast = conv_forward(&x, &w, &bias, &geom, &shape);
            let slow = naive_conv(&x, &w, &bias, &geom, &shape);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }

            // Linear in x and w: <g, conv(x, w)> = <dX, x> + <dW, w> + <dB, b>.
            let g = random_vec(rng, fast.len());
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; 4];
            let dx = conv_backward(&x, &w, &g, &geom, &shape, &mut dw, &mut db, true).unwrap();
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(&g, &slow);
            let via_w = dot(&dw, &w) + dot(&db, &bias);
            let via_x = dot(&dx, &x) + dot(&db, &bias);
            assert!((lhs - via_w).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {via_w}");
            assert!((lhs - via_x).abs() < 1e-9 * (1.0 + lhs.abs()), "{lhs} vs {via_x}");
        }
    }

    #[test]
    fn conv_and_deconv_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let geom = Geometry::new([2, 2, 4], [1, 1, 2], [0, 1, 3]).unwrap();
        let big = [5, 5, 46];
        let small = geom.conv_output(big).unwrap();
        assert_eq!(geom.deconv_output(small), Some(big));
        let (a, b) = (3, 2);
        let u = random_vec(&mut rng, b * big.iter().product::<usize>());
        let v = random_vec(&mut rng, a * small.iter().product::<usize>());
        let k = random_vec(&mut rng, a * b * geom.kernel_volume());
        let conv_shape = ConvShape {
            batch: 1,
            in_channels: b,
            out_channels: a,
            in_dims: big,
            out_dims: small,
        };
        let deconv_shape = ConvShape {
            batch: 1,
            in_channels: a,
            out_channels: b,
            in_dims: small,
            out_dims: big,
        };
        let cu = conv_forward(&u, &k, &vec![0.0; a], &geom, &conv_shape);
        let dv = deconv_forward(&v, &k, &vec![0.0; b], &geom, &deconv_shape);
        let lhs: f64 = cu.iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs: f64 = u.iter().zip(&dv).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn ones_filter_sums_window() {
        let geom = Geometry::new([1, 2, 2], [1, 1, 1], [0, 0, 0]).unwrap();
        let shape = ConvShape {
            batch: 1,
            in_channels: 1,
            out_channels: 1,
            in_dims: [1, 2, 2],
            out_dims: [1, 1, 1],
        };
        let y = conv_forward(&[1.0; 4], &[1.0; 4], &[0.0], &geom, &shape);
        assert_eq!(y, vec![4.0]);
    }
}
