//! Tensor operations with explicit backward passes.
//!
//! Tensors are `C x N x N`, channel-major, each channel row-major. Every
//! operation here is deterministic and single-threaded.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, n: usize) -> Self {
        Self {
            c,
            n,
            data: vec![0.0; c * n * n],
        }
    }

    pub fn from_vec(c: usize, n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * n * n, "tensor data length");
        Self { c, n, data }
    }

    pub fn plane(&self) -> usize {
        self.n * self.n
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let p = self.plane();
        &self.data[ch * p..(ch + 1) * p]
    }

    /// Stack tensors of equal resolution along the channel axis.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let n = parts[0].n;
        let c = parts.iter().map(|t| t.c).sum();
        let mut data = Vec::with_capacity(c * n * n);
        for t in parts {
            assert_eq!(t.n, n, "concat resolution mismatch");
            data.extend_from_slice(&t.data);
        }
        Tensor { c, n, data }
    }

    /// Channels `[from, from + count)` as a new tensor.
    pub fn slice_channels(&self, from: usize, count: usize) -> Tensor {
        let p = self.plane();
        Tensor {
            c: count,
            n: self.n,
            data: self.data[from * p..(from + count) * p].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Padding before/after for a "same" convolution with kernel `k`
/// (even kernels pad one more cell after than before).
pub fn same_padding(k: usize) -> (usize, usize) {
    ((k - 1) / 2, k / 2)
}

/// Unrolls `input` into a `(C*k*k) x (N*N)` row-major matrix.
fn im2col(input: &Tensor, k: usize) -> Vec<f64> {
    let (n, p) = (input.n, input.plane());
    let (before, _) = same_padding(k);
    let mut cols = vec![0.0; input.c * k * k * p];
    for c in 0..input.c {
        let src = input.channel(c);
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..n {
                    let iy = oy as isize + ky as isize - before as isize;
                    if iy < 0 || iy >= n as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let ox_lo = before.saturating_sub(kx);
                    let ox_hi = (n + before).saturating_sub(kx).min(n);
                    for ox in ox_lo..ox_hi {
                        let ix = ox + kx - before;
                        dst[oy * n + ox] = src[iy * n + ix];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into a tensor.
fn col2im(cols: &[f64], c: usize, n: usize, k: usize) -> Tensor {
    let p = n * n;
    let (before, _) = same_padding(k);
    let mut out = Tensor::zeros(c, n);
    for ch in 0..c {
        let dst = &mut out.data[ch * p..(ch + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..n {
                    let iy = oy as isize + ky as isize - before as isize;
                    if iy < 0 || iy >= n as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    let ox_lo = before.saturating_sub(kx);
                    let ox_hi = (n + before).saturating_sub(kx).min(n);
                    for ox in ox_lo..ox_hi {
                        dst[iy * n + ox + kx - before] += src[oy * n + ox];
                    }
                }
            }
        }
    }
    out
}

/// `C = alpha * A(m x k) * B(k x n) + beta * C`, all row-major, with optional
/// transposition of A or B expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slices cover the strided extents checked above.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
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

/// "Same" 2D convolution (cross-correlation), stride 1.
/// `weight` is `cout x cin x k x k`.
pub fn conv2d(input: &Tensor, weight: &[f64], bias: &[f64], k: usize) -> Tensor {
    let cout = bias.len();
    let kk = input.c * k * k;
    assert_eq!(weight.len(), cout * kk, "conv weight shape");
    let p = input.plane();
    let cols = im2col(input, k);
    let mut out = Tensor::zeros(cout, input.n);
    for (o, &b) in bias.iter().enumerate() {
        out.data[o * p..(o + 1) * p].fill(b);
    }
    gemm(cout, kk, p, weight, false, &cols, false, 1.0, &mut out.data);
    out
}

/// Gradients of [`conv2d`]; `grad_input` is skipped when `need_input` is false.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    k: usize,
    grad_out: &Tensor,
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let cout = grad_out.c;
    let kk = input.c * k * k;
    let p = input.plane();
    let cols = im2col(input, k);
    // dW += dOut (cout x p) * cols^T (p x kk)
    gemm(
        cout,
        p,
        kk,
        &grad_out.data,
        false,
        &cols,
        true,
        1.0,
        grad_weight,
    );
    for (o, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out.data[o * p..(o + 1) * p].iter().sum::<f64>();
    }
    if !need_input {
        return None;
    }
    // dCols = W^T (kk x cout) * dOut (cout x p)
    let mut dcols = vec![0.0; kk * p];
    gemm(
        kk,
        cout,
        p,
        weight,
        true,
        &grad_out.data,
        false,
        0.0,
        &mut dcols,
    );
    Some(col2im(&dcols, input.c, input.n, k))
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    Tensor {
        c: x.c,
        n: x.n,
        data: x
            .data
            .iter()
            .map(|&v| if v > 0.0 { v } else { slope * v })
            .collect(),
    }
}

/// Multiplies `grad` in place by the LeakyReLU derivative at `pre`.
pub fn leaky_relu_backward(pre: &Tensor, slope: f64, grad: &mut Tensor) {
    for (g, &v) in grad.data.iter_mut().zip(&pre.data) {
        if v <= 0.0 {
            *g *= slope;
        }
    }
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus(x: &Tensor) -> Tensor {
    Tensor {
        c: x.c,
        n: x.n,
        data: x
            .data
            .iter()
            .map(|&v| v.max(0.0) + (-v.abs()).exp().ln_1p())
            .collect(),
    }
}

/// Multiplies `grad` in place by the softplus derivative (the logistic
/// function) at `pre`.
pub fn softplus_backward(pre: &Tensor, grad: &mut Tensor) {
    for (g, &v) in grad.data.iter_mut().zip(&pre.data) {
        *g /= 1.0 + (-v).exp();
    }
}

/// 2x2 average pooling, stride 2.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let m = x.n / 2;
    let mut out = Tensor::zeros(x.c, m);
    for c in 0..x.c {
        let src = x.channel(c);
        let dst = &mut out.data[c * m * m..(c + 1) * m * m];
        for y in 0..m {
            for xx in 0..m {
                let i = 2 * y * x.n + 2 * xx;
                dst[y * m + xx] = 0.25 * (src[i] + src[i + 1] + src[i + x.n] + src[i + x.n + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor) -> Tensor {
    let m = grad_out.n;
    let n = 2 * m;
    let mut out = Tensor::zeros(grad_out.c, n);
    for c in 0..grad_out.c {
        let src = grad_out.channel(c);
        let dst = &mut out.data[c * n * n..(c + 1) * n * n];
        for y in 0..m {
            for x in 0..m {
                let g = 0.25 * src[y * m + x];
                let i = 2 * y * n + 2 * x;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + n] = g;
                dst[i + n + 1] = g;
            }
        }
    }
    out
}

/// Source taps for bilinear 2x upsampling with half-pixel centers
/// (`align_corners = false`): output `i` reads `(1 - w) * in[i0] + w * in[i1]`.
fn upsample_taps(n_in: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n_in)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling.
pub fn upsample2(x: &Tensor) -> Tensor {
    let n = x.n;
    let m = 2 * n;
    let taps = upsample_taps(n);
    let mut out = Tensor::zeros(x.c, m);
    let mut rows = vec![0.0; n * m];
    for c in 0..x.c {
        let src = x.channel(c);
        // horizontal pass: n rows of width m
        for y in 0..n {
            for (ox, &(i0, i1, w)) in taps.iter().enumerate() {
                rows[y * m + ox] = (1.0 - w) * src[y * n + i0] + w * src[y * n + i1];
            }
        }
        let dst = &mut out.data[c * m * m..(c + 1) * m * m];
        for (oy, &(j0, j1, w)) in taps.iter().enumerate() {
            for ox in 0..m {
                dst[oy * m + ox] = (1.0 - w) * rows[j0 * m + ox] + w * rows[j1 * m + ox];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    let m = grad_out.n;
    let n = m / 2;
    let taps = upsample_taps(n);
    let mut out = Tensor::zeros(grad_out.c, n);
    let mut rows = vec![0.0; n * m];
    for c in 0..grad_out.c {
        let g = grad_out.channel(c);
        rows.fill(0.0);
        for (oy, &(j0, j1, w)) in taps.iter().enumerate() {
            for ox in 0..m {
                let v = g[oy * m + ox];
                rows[j0 * m + ox] += (1.0 - w) * v;
                rows[j1 * m + ox] += w * v;
            }
        }
        let dst = &mut out.data[c * n * n..(c + 1) * n * n];
        for y in 0..n {
            for (ox, &(i0, i1, w)) in taps.iter().enumerate() {
                let v = rows[y * m + ox];
                dst[y * n + i0] += (1.0 - w) * v;
                dst[y * n + i1] += w * v;
            }
        }
    }
    out
}
