//! Single-sample layer kernels with explicit backward passes.
//!
//! Activations are `[channels, height·width]` row-major slices. Every
//! backward function accumulates parameter gradients into the caller's
//! gradient buffers (`+=`) and returns the input gradient.

use super::scalar::{gemm, MatRef, Scalar};

pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.pixels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }
}

/// Same-padded, stride-1 square convolution.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    fn im2col<S: Scalar>(&self, x: &[S], dims: Dims) -> Vec<S> {
        let (h, w, k) = (dims.height, dims.width, self.kernel);
        let hw = dims.pixels();
        let pad = k / 2;
        let mut cols = vec![S::zero(); self.patch_len() * hw];
        for ci in 0..self.cin {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let ox0 = pad.saturating_sub(kx);
                    let ox1 = (w + pad).saturating_sub(kx).min(w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let src = &plane[iy * w + ox0 + kx - pad..iy * w + ox1 + kx - pad];
                        row[oy * w + ox0..oy * w + ox1].copy_from_slice(src);
                    }
                }
            }
        }
        cols
    }

    fn col2im<S: Scalar>(&self, cols: &[S], dims: Dims) -> Vec<S> {
        let (h, w, k) = (dims.height, dims.width, self.kernel);
        let hw = dims.pixels();
        let pad = k / 2;
        let mut x = vec![S::zero(); self.cin * hw];
        for ci in 0..self.cin {
            let plane = &mut x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let ox0 = pad.saturating_sub(kx);
                    let ox1 = (w + pad).saturating_sub(kx).min(w);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..h {
                        let iy = oy + ky;
                        if iy < pad || iy - pad >= h {
                            continue;
                        }
                        let iy = iy - pad;
                        let dst = &mut plane[iy * w + ox0 + kx - pad..iy * w + ox1 + kx - pad];
                        for (d, &s) in dst.iter_mut().zip(&row[oy * w + ox0..oy * w + ox1]) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
        x
    }

    /// Returns the output and the unfolded input needed by `backward`.
    /// For 1×1 kernels the "unfolded" input is the input itself.
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S], dims: Dims) -> (Vec<S>, Vec<S>) {
        debug_assert_eq!(dims.channels, self.cin);
        let hw = dims.pixels();
        let cols = if self.kernel == 1 {
            x.to_vec()
        } else {
            self.im2col(x, dims)
        };
        let mut out = vec![S::zero(); self.cout * hw];
        let bias = &params[self.bias..self.bias + self.cout];
        for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
            row.fill(b);
        }
        let weight = &params[self.weight..self.weight + self.weight_len()];
        gemm(
            MatRef::rm(weight, self.cout, self.patch_len()),
            MatRef::rm(&cols, self.patch_len(), hw),
            S::one(),
            &mut out,
        );
        (out, cols)
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        grads: &mut [S],
        cols: &[S],
        dy: &[S],
        dims: Dims,
    ) -> Vec<S> {
        let hw = dims.pixels();
        let pl = self.patch_len();
        for (g, row) in grads[self.bias..self.bias + self.cout]
            .iter_mut()
            .zip(dy.chunks_exact(hw))
        {
            *g = *g + row.iter().copied().sum::<S>();
        }
        let wlen = self.weight_len();
        gemm(
            MatRef::rm(dy, self.cout, hw),
            MatRef::rm_t(cols, pl, hw),
            S::one(),
            &mut grads[self.weight..self.weight + wlen],
        );
        let weight = &params[self.weight..self.weight + wlen];
        let mut dcols = vec![S::zero(); pl * hw];
        gemm(
            MatRef::rm_t(weight, self.cout, pl),
            MatRef::rm(dy, self.cout, hw),
            S::zero(),
            &mut dcols,
        );
        if self.kernel == 1 {
            dcols
        } else {
            self.col2im(&dcols, dims)
        }
    }
}

/// Fully connected layer, weight stored `[out, in]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S]) -> Vec<S> {
        let w = &params[self.weight..self.weight + self.fan_in * self.fan_out];
        let b = &params[self.bias..self.bias + self.fan_out];
        w.chunks_exact(self.fan_in)
            .zip(b)
            .map(|(row, &bias)| row.iter().zip(x).fold(bias, |acc, (&a, &v)| acc + a * v))
            .collect()
    }

    pub fn backward<S: Scalar>(&self, params: &[S], grads: &mut [S], x: &[S], dy: &[S]) -> Vec<S> {
        let n = self.fan_in * self.fan_out;
        for (g, &d) in grads[self.bias..self.bias + self.fan_out]
            .iter_mut()
            .zip(dy)
        {
            *g = *g + d;
        }
        for (row, &d) in grads[self.weight..self.weight + n]
            .chunks_exact_mut(self.fan_in)
            .zip(dy)
        {
            for (g, &v) in row.iter_mut().zip(x) {
                *g = *g + d * v;
            }
        }
        let w = &params[self.weight..self.weight + n];
        let mut dx = vec![S::zero(); self.fan_in];
        for (row, &d) in w.chunks_exact(self.fan_in).zip(dy) {
            for (o, &a) in dx.iter_mut().zip(row) {
                *o = *o + a * d;
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

pub struct GroupNormCache<S> {
    xhat: Vec<S>,
    rstd: Vec<S>,
}

impl GroupNorm {
    pub fn forward<S: Scalar>(
        &self,
        params: &[S],
        x: &[S],
        hw: usize,
    ) -> (Vec<S>, GroupNormCache<S>) {
        let cpg = self.channels / self.groups;
        let n = S::from_f64((cpg * hw) as f64);
        let eps = S::from_f64(GROUP_NORM_EPS);
        let gamma = &params[self.gamma..self.gamma + self.channels];
        let beta = &params[self.beta..self.beta + self.channels];
        let mut xhat = vec![S::zero(); x.len()];
        let mut out = vec![S::zero(); x.len()];
        let mut rstds = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let span = g * cpg * hw..(g + 1) * cpg * hw;
            let xs = &x[span.clone()];
            let mean = xs.iter().copied().sum::<S>() / n;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let rstd = (var + eps).sqrt().recip();
            rstds.push(rstd);
            for (ci, c) in (g * cpg..(g + 1) * cpg).enumerate() {
                let off = span.start + ci * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean) * rstd;
                    xhat[i] = xh;
                    out[i] = xh * gamma[c] + beta[c];
                }
            }
        }
        (out, GroupNormCache { xhat, rstd: rstds })
    }

    pub fn backward<S: Scalar>(
        &self,
        params: &[S],
        grads: &mut [S],
        cache: &GroupNormCache<S>,
        dy: &[S],
        hw: usize,
    ) -> Vec<S> {
        let cpg = self.channels / self.groups;
        let n = S::from_f64((cpg * hw) as f64);
        let gamma = &params[self.gamma..self.gamma + self.channels];
        let mut dx = vec![S::zero(); dy.len()];
        for c in 0..self.channels {
            let span = c * hw..(c + 1) * hw;
            let mut dg = S::zero();
            let mut db = S::zero();
            for i in span {
                dg = dg + dy[i] * cache.xhat[i];
                db = db + dy[i];
            }
            grads[self.gamma + c] = grads[self.gamma + c] + dg;
            grads[self.beta + c] = grads[self.beta + c] + db;
        }
        for g in 0..self.groups {
            let start = g * cpg * hw;
            let end = start + cpg * hw;
            let mut sum_d = S::zero();
            let mut sum_dx = S::zero();
            for (i, (&dyi, &xh)) in dy[start..end].iter().zip(&cache.xhat[start..end]).enumerate() {
                let d = dyi * gamma[(start + i) / hw];
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * xh;
            }
            let rstd = cache.rstd[g];
            for i in start..end {
                let c = i / hw;
                let d = dy[i] * gamma[c];
                dx[i] = rstd * (d - sum_d / n - cache.xhat[i] * sum_dx / n);
            }
        }
        dx
    }
}

pub fn silu<S: Scalar>(x: &[S]) -> Vec<S> {
    x.iter().map(|&v| v / (S::one() + (-v).exp())).collect()
}

pub fn silu_backward<S: Scalar>(x: &[S], dy: &[S]) -> Vec<S> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = (S::one() + (-v).exp()).recip();
            d * s * (S::one() + v * (S::one() - s))
        })
        .collect()
}

/// 2×2 average pooling.
pub fn avg_pool2<S: Scalar>(x: &[S], dims: Dims) -> Vec<S> {
    let (h, w) = (dims.height, dims.width);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut out = vec![S::zero(); dims.channels * oh * ow];
    for c in 0..dims.channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<S: Scalar>(dy: &[S], dims: Dims) -> Vec<S> {
    let (h, w) = (dims.height, dims.width);
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64(0.25);
    let mut dx = vec![S::zero(); dims.len()];
    for c in 0..dims.channels {
        let src = &dy[c * oh * ow..(c + 1) * oh * ow];
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let g = src[y * ow + xx] * quarter;
                let i = 2 * y * w + 2 * xx;
                dst[i] = g;
                dst[i + 1] = g;
                dst[i + w] = g;
                dst[i + w + 1] = g;
            }
        }
    }
    dx
}

/// Nearest-neighbour 2× upsampling; `dims` are the input dims.
pub fn upsample2<S: Scalar>(x: &[S], dims: Dims) -> Vec<S> {
    let (h, w) = (dims.height, dims.width);
    let ow = 2 * w;
    let mut out = vec![S::zero(); dims.channels * 4 * h * w];
    for c in 0..dims.channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * 4 * h * w..(c + 1) * 4 * h * w];
        for y in 0..2 * h {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(dy: &[S], dims: Dims) -> Vec<S> {
    let (h, w) = (dims.height, dims.width);
    let ow = 2 * w;
    let mut dx = vec![S::zero(); dims.len()];
    for c in 0..dims.channels {
        let src = &dy[c * 4 * h * w..(c + 1) * 4 * h * w];
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for y in 0..2 * h {
            for xx in 0..ow {
                let i = (y / 2) * w + xx / 2;
                dst[i] = dst[i] + src[y * ow + xx];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of a (1-indexed) diffusion step.
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        out[i] = S::from_f64(arg.sin());
        out[half + i] = S::from_f64(arg.cos());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_matches_direct_sum() {
        let (cin, cout, k, h, w) = (2usize, 3usize, 3usize, 4usize, 5usize);
        let conv = Conv2d {
            cin,
            cout,
            kernel: k,
            weight: 0,
            bias: cout * cin * k * k,
        };
        let params: Vec<f64> = (0..conv.bias + cout)
            .map(|i| ((i * 37 % 17) as f64 - 8.0) * 0.1)
            .collect();
        let x: Vec<f64> = (0..cin * h * w)
            .map(|i| ((i * 13 % 11) as f64 - 5.0) * 0.2)
            .collect();
        let (out, _) = conv.forward(&params, &x, Dims::new(cin, h, w));
        let pad = 1isize;
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = params[conv.bias + co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - pad;
                                let ix = xx as isize + kx as isize - pad;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += params[((co * cin + ci) * k + ky) * k + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    let got = out[(co * h + y) * w + xx];
                    assert!((got - acc).abs() < 1e-12, "{got} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn pool_and_upsample_are_adjoint() {
        let dims = Dims::new(2, 4, 4);
        let x: Vec<f64> = (0..dims.len()).map(|i| i as f64 * 0.3 - 2.0).collect();
        let small = Dims::new(2, 2, 2);
        let y: Vec<f64> = (0..small.len()).map(|i| (i as f64).sin()).collect();
        // <pool(x), y> = <x, pool_backward(y)>
        let lhs: f64 = avg_pool2(&x, dims).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x
            .iter()
            .zip(&avg_pool2_backward(&y, dims))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
        // <up(y), x> = <y, up_backward(x)>
        let lhs: f64 = upsample2(&y, small)
            .iter()
            .zip(&x)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = y
            .iter()
            .zip(&upsample2_backward(&x, small))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn group_norm_output_is_standardized() {
        let gn = GroupNorm {
            channels: 4,
            groups: 2,
            gamma: 0,
            beta: 4,
        };
        let mut params = vec![1.0f64; 4];
        params.extend([0.0; 4]);
        let x: Vec<f64> = (0..4 * 9)
            .map(|i| (i as f64 * 1.7).cos() * 3.0 + 1.0)
            .collect();
        let (out, _) = gn.forward(&params, &x, 9);
        for g in 0..2 {
            let s = &out[g * 18..(g + 1) * 18];
            let mean: f64 = s.iter().sum::<f64>() / 18.0;
            let var: f64 = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn embedding_layout() {
        let e: Vec<f64> = timestep_embedding(0, 8);
        assert_eq!(&e[..4], &[0.0; 4]);
        assert_eq!(&e[4..], &[1.0; 4]);
    }
}
