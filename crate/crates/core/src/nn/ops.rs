//! Dense tensor kernels for the fixed autoencoder architecture.
//!
//! Tensors are channel-major `(c, h, w)` in flat row-major storage. All
//! convolutions are valid (no padding) with stride 1.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    // Four accumulators keep the loop vectorizable without reassociating.
    let mut acc = [0.0f64; 4];
    let chunks = x.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            acc[l] += x[4 * i + l] * y[4 * i + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..x.len() {
        s += x[i] * y[i];
    }
    s
}

/// Weights laid out `[out][in][k][k]`.
pub fn conv2d_forward(input: &Tensor, weight: &[f64], bias: &[f64], out_c: usize, k: usize) -> Tensor {
    let (ic_n, h, w) = input.shape();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Tensor::zeros(out_c, oh, ow);
    for oc in 0..out_c {
        let plane = out.plane_mut(oc);
        plane.fill(bias[oc]);
        for ic in 0..ic_n {
            let src = input.plane(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((oc * ic_n + ic) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &src[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                        axpy(wv, row, &mut plane[oy * ow..(oy + 1) * ow]);
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// `need_input` is set.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    k: usize,
    grad_w: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Tensor> {
    let (ic_n, h, w) = input.shape();
    let (oc_n, oh, ow) = grad_out.shape();
    if let Some((gw, gb)) = grad_w {
        for oc in 0..oc_n {
            let g = grad_out.plane(oc);
            gb[oc] += g.iter().sum::<f64>();
            for ic in 0..ic_n {
                let src = input.plane(ic);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut s = 0.0;
                        for oy in 0..oh {
                            let row = &src[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                            s += dot(row, &g[oy * ow..(oy + 1) * ow]);
                        }
                        gw[((oc * ic_n + ic) * k + ky) * k + kx] += s;
                    }
                }
            }
        }
    }
    if !need_input {
        return None;
    }
    let mut gin = Tensor::zeros(ic_n, h, w);
    for ic in 0..ic_n {
        let dst = gin.plane_mut(ic);
        for oc in 0..oc_n {
            let g = grad_out.plane(oc);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((oc * ic_n + ic) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &mut dst[(oy + ky) * w + kx..(oy + ky) * w + kx + ow];
                        axpy(wv, &g[oy * ow..(oy + 1) * ow], row);
                    }
                }
            }
        }
    }
    Some(gin)
}

/// Weights laid out `[in][out][k][k]`.
///
/// Zero inputs are skipped, which makes the layer cheap on unpooled maps
/// where three of every four entries are zero.
pub fn conv_transpose2d_forward(
    input: &Tensor,
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
    k: usize,
) -> Tensor {
    let (ic_n, h, w) = input.shape();
    let (oh, ow) = (h + k - 1, w + k - 1);
    let mut out = Tensor::zeros(out_c, oh, ow);
    for oc in 0..out_c {
        out.plane_mut(oc).fill(bias[oc]);
    }
    let plane = oh * ow;
    for ic in 0..ic_n {
        let src = input.plane(ic);
        for y in 0..h {
            for x in 0..w {
                let v = src[y * w + x];
                if v == 0.0 {
                    continue;
                }
                for oc in 0..out_c {
                    let wk = &weight[(ic * out_c + oc) * k * k..][..k * k];
                    let dst = &mut out.data[oc * plane..(oc + 1) * plane];
                    for ky in 0..k {
                        let row = &mut dst[(y + ky) * ow + x..][..k];
                        axpy(v, &wk[ky * k..(ky + 1) * k], row);
                    }
                }
            }
        }
    }
    out
}

/// Which entries of the input gradient a backward pass should produce.
#[derive(Debug, Clone, Copy)]
pub enum InputGrad<'a> {
    Skip,
    Full,
    /// Only the listed flat positions; every other entry is left at zero.
    At(&'a [u32]),
}

pub fn conv_transpose2d_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    k: usize,
    grad_w: Option<(&mut [f64], &mut [f64])>,
    input_grad: InputGrad<'_>,
) -> Option<Tensor> {
    let (ic_n, h, w) = input.shape();
    let (oc_n, oh, ow) = grad_out.shape();
    let plane = oh * ow;
    if let Some((gw, gb)) = grad_w {
        for oc in 0..oc_n {
            gb[oc] += grad_out.plane(oc).iter().sum::<f64>();
        }
        for ic in 0..ic_n {
            let src = input.plane(ic);
            for y in 0..h {
                for x in 0..w {
                    let v = src[y * w + x];
                    if v == 0.0 {
                        continue;
                    }
                    for oc in 0..oc_n {
                        let g = &grad_out.data[oc * plane..(oc + 1) * plane];
                        let gk = &mut gw[(ic * oc_n + oc) * k * k..][..k * k];
                        for ky in 0..k {
                            axpy(v, &g[(y + ky) * ow + x..][..k], &mut gk[ky * k..(ky + 1) * k]);
                        }
                    }
                }
            }
        }
    }
    let at = |pos: usize| -> f64 {
        let (ic, y, x) = (pos / (h * w), pos / w % h, pos % w);
        let mut s = 0.0;
        for oc in 0..oc_n {
            let g = &grad_out.data[oc * plane..(oc + 1) * plane];
            let wk = &weight[(ic * oc_n + oc) * k * k..][..k * k];
            for ky in 0..k {
                s += dot(&wk[ky * k..(ky + 1) * k], &g[(y + ky) * ow + x..][..k]);
            }
        }
        s
    };
    match input_grad {
        InputGrad::Skip => None,
        InputGrad::Full => {
            let mut gin = Tensor::zeros(ic_n, h, w);
            for (pos, d) in gin.data.iter_mut().enumerate() {
                *d = at(pos);
            }
            Some(gin)
        }
        InputGrad::At(positions) => {
            let mut gin = Tensor::zeros(ic_n, h, w);
            for &pos in positions {
                gin.data[pos as usize] = at(pos as usize);
            }
            Some(gin)
        }
    }
}

/// Affine map over the last axis: `out[c][r][j] = b[j] + sum_k in[c][r][k] * W[k][j]`.
pub fn dense_forward(input: &Tensor, weight: &[f64], bias: &[f64], nodes: usize) -> Tensor {
    let (c, h, w) = input.shape();
    let mut out = Tensor::zeros(c, h, nodes);
    for (src, dst) in input.data.chunks_exact(w).zip(out.data.chunks_exact_mut(nodes)) {
        dst.copy_from_slice(bias);
        for (kk, &x) in src.iter().enumerate() {
            axpy(x, &weight[kk * nodes..(kk + 1) * nodes], dst);
        }
    }
    out
}

pub fn dense_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
    grad_w: Option<(&mut [f64], &mut [f64])>,
    need_input: bool,
) -> Option<Tensor> {
    let (c, h, w) = input.shape();
    let nodes = grad_out.w;
    if let Some((gw, gb)) = grad_w {
        for (src, g) in input.data.chunks_exact(w).zip(grad_out.data.chunks_exact(nodes)) {
            axpy(1.0, g, gb);
            for (kk, &x) in src.iter().enumerate() {
                if x != 0.0 {
                    axpy(x, g, &mut gw[kk * nodes..(kk + 1) * nodes]);
                }
            }
        }
    }
    if !need_input {
        return None;
    }
    let mut gin = Tensor::zeros(c, h, w);
    for (dst, g) in gin.data.chunks_exact_mut(w).zip(grad_out.data.chunks_exact(nodes)) {
        for (kk, d) in dst.iter_mut().enumerate() {
            *d = dot(&weight[kk * nodes..(kk + 1) * nodes], g);
        }
    }
    Some(gin)
}

/// 2x2 max pooling with stride 2. Returns the output and, per output
/// element, the flat index of the winning input element (first maximum in
/// scan order on ties).
pub fn maxpool_forward(input: &Tensor) -> (Tensor, Vec<u32>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(c, oh, ow);
    let mut idx = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * w + 2 * x + dx;
                    if input.data[j] > input.data[best] {
                        best = j;
                    }
                }
                let o = (ch * oh + y) * ow + x;
                out.data[o] = input.data[best];
                idx[o] = best as u32;
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward(grad_out: &Tensor, indices: &[u32], input_shape: (usize, usize, usize)) -> Tensor {
    let mut gin = Tensor::zeros(input_shape.0, input_shape.1, input_shape.2);
    for (g, &i) in grad_out.data.iter().zip(indices) {
        gin.data[i as usize] += g;
    }
    gin
}

/// Places each input element at the position recorded by the mirrored pool.
pub fn unpool_forward(input: &Tensor, indices: &[u32], out_shape: (usize, usize, usize)) -> Tensor {
    let mut out = Tensor::zeros(out_shape.0, out_shape.1, out_shape.2);
    for (v, &i) in input.data.iter().zip(indices) {
        out.data[i as usize] = *v;
    }
    out
}

pub fn unpool_backward(grad_out: &Tensor, indices: &[u32], input_shape: (usize, usize, usize)) -> Tensor {
    let mut gin = Tensor::zeros(input_shape.0, input_shape.1, input_shape.2);
    for (g, &i) in gin.data.iter_mut().zip(indices) {
        *g = grad_out.data[i as usize];
    }
    gin
}
