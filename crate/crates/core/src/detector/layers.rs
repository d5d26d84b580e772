//! Batched NCHW kernels with explicit backward passes.

/// `c[m x n] = alpha * a[m x k] * b[k x n] + beta * c`, row-major, with
/// optional transposition of `a` or `b` expressed through strides.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
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
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths checked above; strides describe in-bounds
    // row-major (or transposed) views of those slices.
    unsafe {
        matrixmultiply::dgemm(
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

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn pad(&self) -> usize {
        self.kernel / 2
    }
    pub fn h_out(&self) -> usize {
        (self.h_in + 2 * self.pad() - self.kernel) / self.stride + 1
    }
    pub fn w_out(&self) -> usize {
        (self.w_in + 2 * self.pad() - self.kernel) / self.stride + 1
    }
    pub fn col_rows(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
    pub fn out_plane(&self) -> usize {
        self.h_out() * self.w_out()
    }
    pub fn in_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }
    pub fn out_len(&self) -> usize {
        self.c_out * self.out_plane()
    }
    pub fn col_len(&self) -> usize {
        self.col_rows() * self.out_plane()
    }
}

/// One image `[c_in, h, w]` into `[c_in*k*k, h_out*w_out]`.
pub(crate) fn im2col(g: &ConvGeom, x: &[f64], col: &mut [f64]) {
    if g.kernel == 1 && g.stride == 1 {
        col.copy_from_slice(x);
        return;
    }
    let (ho, wo, pad) = (g.h_out(), g.w_out(), g.pad() as isize);
    let plane = ho * wo;
    for ci in 0..g.c_in {
        let xin = &x[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h_in as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &xin[iy as usize * g.w_in..(iy as usize + 1) * g.w_in];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.w_in as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx` (overwritten).
pub(crate) fn col2im(g: &ConvGeom, col: &[f64], dx: &mut [f64]) {
    if g.kernel == 1 && g.stride == 1 {
        dx.copy_from_slice(col);
        return;
    }
    dx.fill(0.0);
    let (ho, wo, pad) = (g.h_out(), g.w_out(), g.pad() as isize);
    let plane = ho * wo;
    for ci in 0..g.c_in {
        let xin = &mut dx[ci * g.h_in * g.w_in..(ci + 1) * g.h_in * g.w_in];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (ci * g.kernel + ky) * g.kernel + kx;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h_in as isize {
                        continue;
                    }
                    let dst = &mut xin[iy as usize * g.w_in..(iy as usize + 1) * g.w_in];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w_in as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution over a batch. Returns the output and, if `keep_cols`, the
/// per-image column buffers for the backward pass.
pub(crate) fn conv_forward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    weight: &[f64],
    bias: Option<&[f64]>,
    keep_cols: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; batch * g.out_len()];
    let mut cols = if keep_cols { vec![0.0; batch * g.col_len()] } else { Vec::new() };
    let mut scratch = if keep_cols { Vec::new() } else { vec![0.0; g.col_len()] };
    let plane = g.out_plane();
    for b in 0..batch {
        let xin = &x[b * g.in_len()..(b + 1) * g.in_len()];
        let col: &mut [f64] = if keep_cols {
            &mut cols[b * g.col_len()..(b + 1) * g.col_len()]
        } else {
            &mut scratch
        };
        im2col(g, xin, col);
        let ob = &mut out[b * g.out_len()..(b + 1) * g.out_len()];
        gemm(g.c_out, g.col_rows(), plane, weight, false, col, false, 0.0, ob);
        if let Some(bias) = bias {
            for (co, bv) in bias.iter().enumerate() {
                for v in &mut ob[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    (out, cols)
}

/// Backward of [`conv_forward`]. Accumulates into `dw`/`db` when given and
/// returns `dx` when `need_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    g: &ConvGeom,
    batch: usize,
    cols: &[f64],
    weight: &[f64],
    dout: &[f64],
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Vec<f64>> {
    let plane = g.out_plane();
    if let Some(dw) = dw {
        for b in 0..batch {
            let dob = &dout[b * g.out_len()..(b + 1) * g.out_len()];
            let col = &cols[b * g.col_len()..(b + 1) * g.col_len()];
            gemm(g.c_out, plane, g.col_rows(), dob, false, col, true, 1.0, dw);
        }
    }
    if let Some(db) = db {
        for b in 0..batch {
            let dob = &dout[b * g.out_len()..(b + 1) * g.out_len()];
            for (co, d) in db.iter_mut().enumerate() {
                *d += dob[co * plane..(co + 1) * plane].iter().sum::<f64>();
            }
        }
    }
    if !need_dx {
        return None;
    }
    let mut dx = vec![0.0; batch * g.in_len()];
    let mut dcol = vec![0.0; g.col_len()];
    for b in 0..batch {
        let dob = &dout[b * g.out_len()..(b + 1) * g.out_len()];
        gemm(g.col_rows(), g.c_out, plane, weight, true, dob, false, 0.0, &mut dcol);
        col2im(g, &dcol, &mut dx[b * g.in_len()..(b + 1) * g.in_len()]);
    }
    Some(dx)
}

pub(crate) struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
    pub count: usize,
}

/// Training-mode batch norm with batch statistics.
pub(crate) fn bn_forward_train(
    batch: usize,
    channels: usize,
    plane: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Vec<f64>, BnCache) {
    let m = (batch * plane) as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let s = &x[(b * channels + c) * plane..(b * channels + c + 1) * plane];
            mean[c] += s.iter().sum::<f64>();
        }
    }
    for v in &mut mean {
        *v /= m;
    }
    for b in 0..batch {
        for c in 0..channels {
            let s = &x[(b * channels + c) * plane..(b * channels + c + 1) * plane];
            var[c] += s.iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
    }
    for v in &mut var {
        *v /= m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        for c in 0..channels {
            let r = (b * channels + c) * plane..(b * channels + c + 1) * plane;
            for ((xh, yv), xv) in xhat[r.clone()].iter_mut().zip(&mut y[r.clone()]).zip(&x[r]) {
                *xh = (xv - mean[c]) * inv_std[c];
                *yv = gamma[c] * *xh + beta[c];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
            count: batch * plane,
        },
    )
}

pub(crate) fn bn_forward_eval(
    batch: usize,
    channels: usize,
    plane: usize,
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for c in 0..channels {
        let scale = gamma[c] / (running_var[c] + eps).sqrt();
        let shift = beta[c] - running_mean[c] * scale;
        for b in 0..batch {
            let r = (b * channels + c) * plane..(b * channels + c + 1) * plane;
            for (yv, xv) in y[r.clone()].iter_mut().zip(&x[r]) {
                *yv = xv * scale + shift;
            }
        }
    }
    y
}

/// Returns `dx`; accumulates `dgamma`/`dbeta` when given.
pub(crate) fn bn_backward(
    batch: usize,
    channels: usize,
    plane: usize,
    cache: &BnCache,
    gamma: &[f64],
    dy: &[f64],
    dgamma: Option<&mut [f64]>,
    dbeta: Option<&mut [f64]>,
) -> Vec<f64> {
    let m = cache.count as f64;
    let mut sum_dy = vec![0.0; channels];
    let mut sum_dy_xhat = vec![0.0; channels];
    for b in 0..batch {
        for c in 0..channels {
            let r = (b * channels + c) * plane..(b * channels + c + 1) * plane;
            for (d, xh) in dy[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_dy[c] += d;
                sum_dy_xhat[c] += d * xh;
            }
        }
    }
    if let Some(dg) = dgamma {
        for c in 0..channels {
            dg[c] += sum_dy_xhat[c];
        }
    }
    if let Some(db) = dbeta {
        for c in 0..channels {
            db[c] += sum_dy[c];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for b in 0..batch {
        for c in 0..channels {
            let k = gamma[c] * cache.inv_std[c] / m;
            let r = (b * channels + c) * plane..(b * channels + c + 1) * plane;
            for ((o, d), xh) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&cache.xhat[r]) {
                *o = k * (m * d - sum_dy[c] - xh * sum_dy_xhat[c]);
            }
        }
    }
    dx
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log(1 + e^x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn silu_forward(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v * sigmoid(v)).collect()
}

pub(crate) fn silu_backward(z: &[f64], dy: &mut [f64]) {
    for (d, &v) in dy.iter_mut().zip(z) {
        let s = sigmoid(v);
        *d *= s * (1.0 + v * (1.0 - s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_loop() {
        let g = ConvGeom {
            c_in: 2,
            h_in: 5,
            w_in: 6,
            c_out: 3,
            kernel: 3,
            stride: 2,
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let w: Vec<f64> = (0..g.c_out * g.col_rows()).map(|i| (i as f64 * 0.11).cos()).collect();
        let (out, _) = conv_forward(&g, 1, &x, &w, None, false);
        for co in 0..3 {
            for oy in 0..g.h_out() {
                for ox in 0..g.w_out() {
                    let mut acc = 0.0;
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = (oy * 2 + ky) as isize - 1;
                                let ix = (ox * 2 + kx) as isize - 1;
                                if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                    acc += w[((co * 2 + ci) * 3 + ky) * 3 + kx]
                                        * x[(ci * 5 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                    }
                    let got = out[(co * g.h_out() + oy) * g.w_out() + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = ConvGeom {
            c_in: 2,
            h_in: 7,
            w_in: 4,
            c_out: 1,
            kernel: 3,
            stride: 2,
        };
        let x: Vec<f64> = (0..g.in_len()).map(|i| (i as f64).sin()).collect();
        let c: Vec<f64> = (0..g.col_len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut col = vec![0.0; g.col_len()];
        im2col(&g, &x, &mut col);
        let mut back = vec![0.0; g.in_len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
