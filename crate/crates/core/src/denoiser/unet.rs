//! Residual U-Net noise predictor.
//!
//! Layout: a stem convolution, `L` encoder levels of residual blocks joined by
//! 2×2 average pooling, a mirrored decoder that upsamples (nearest) and
//! concatenates the encoder output of the same level, and a
//! SiLU → conv head plus a step-conditioned input skip `g(t)·x`. Every residual block receives the sinusoidal
//! step embedding through a per-block linear projection. No attention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, silu, silu_backward, timestep_embedding, upsample2,
    upsample2_backward, Conv2d, Dims, GroupNorm, GroupNormCache, Linear,
};
use super::scalar::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub base_width: usize,
    /// Width multiplier per resolution level; its length is the level count.
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    /// Hidden width of the step-embedding MLP.
    pub time_dim: usize,
    /// Upper bound on group-norm groups; the actual count divides the width.
    pub norm_groups: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            base_width: 32,
            channel_mults: vec![1, 2, 2],
            blocks_per_level: 2,
            time_dim: 128,
            norm_groups: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self, image: [usize; 3]) -> Result<()> {
        let levels = self.channel_mults.len();
        if levels == 0 || self.blocks_per_level == 0 || self.base_width == 0 {
            return Err(Error::Config(
                "architecture needs at least one level, one block and a non-zero width".into(),
            ));
        }
        if !self.base_width.is_multiple_of(2) {
            return Err(Error::Config("base width must be even".into()));
        }
        if self.channel_mults.contains(&0) || self.time_dim == 0 || self.norm_groups == 0 {
            return Err(Error::Config("zero-sized architecture component".into()));
        }
        let factor = 1usize << (levels - 1);
        if image[0] == 0 || !image[1].is_multiple_of(factor) || !image[2].is_multiple_of(factor) || image[1] == 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by 2^{} for {} levels",
                image[1],
                image[2],
                levels - 1,
                levels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

#[derive(Default)]
struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    total: usize,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let len = shape.iter().product();
        let offset = self.total;
        self.entries.push(ParamEntry {
            name,
            shape,
            offset,
            len,
            init,
        });
        self.total += len;
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, zero: bool) -> Conv2d {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        let init = if zero {
            Init::Zeros
        } else {
            Init::Uniform(bound)
        };
        let weight = self.push(
            format!("{name}.weight"),
            vec![cout, cin, kernel, kernel],
            init,
        );
        let bias = self.push(format!("{name}.bias"), vec![cout], init);
        Conv2d {
            cin,
            cout,
            kernel,
            weight,
            bias,
        }
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let init = Init::Uniform(1.0 / (fan_in as f64).sqrt());
        let weight = self.push(format!("{name}.weight"), vec![fan_out, fan_in], init);
        let bias = self.push(format!("{name}.bias"), vec![fan_out], init);
        Linear {
            fan_in,
            fan_out,
            weight,
            bias,
        }
    }

    fn norm(&mut self, name: &str, channels: usize, max_groups: usize) -> GroupNorm {
        let gamma = self.push(format!("{name}.gamma"), vec![channels], Init::Ones);
        let beta = self.push(format!("{name}.beta"), vec![channels], Init::Zeros);
        GroupNorm {
            channels,
            groups: gcd(channels, max_groups),
            gamma,
            beta,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    cout: usize,
    norm1: GroupNorm,
    conv1: Conv2d,
    step_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

struct ResCache<S> {
    gn1: GroupNormCache<S>,
    a1: Vec<S>,
    cols1: Vec<S>,
    gn2: GroupNormCache<S>,
    a2: Vec<S>,
    cols2: Vec<S>,
    skip_cols: Option<Vec<S>>,
}

impl ResBlock {
    fn build(b: &mut LayoutBuilder, name: &str, cin: usize, cout: usize, cfg: &ArchConfig) -> Self {
        let norm1 = b.norm(&format!("{name}.norm1"), cin, cfg.norm_groups);
        let conv1 = b.conv(&format!("{name}.conv1"), cin, cout, 3, false);
        let step_proj = b.linear(&format!("{name}.step_proj"), cfg.time_dim, cout);
        let norm2 = b.norm(&format!("{name}.norm2"), cout, cfg.norm_groups);
        let conv2 = b.conv(&format!("{name}.conv2"), cout, cout, 3, false);
        let skip = (cin != cout).then(|| b.conv(&format!("{name}.skip"), cin, cout, 1, false));
        Self {
            cout,
            norm1,
            conv1,
            step_proj,
            norm2,
            conv2,
            skip,
        }
    }

    fn forward<S: Scalar>(
        &self,
        p: &[S],
        x: &[S],
        dims: Dims,
        step: &[S],
    ) -> (Vec<S>, ResCache<S>) {
        let hw = dims.pixels();
        let out_dims = dims.with_channels(self.cout);
        let (a1, gn1) = self.norm1.forward(p, x, hw);
        let (mut h, cols1) = self.conv1.forward(p, &silu(&a1), dims);
        let proj = self.step_proj.forward(p, step);
        for (row, &v) in h.chunks_exact_mut(hw).zip(&proj) {
            for e in row {
                *e = *e + v;
            }
        }
        let (a2, gn2) = self.norm2.forward(p, &h, hw);
        let (mut out, cols2) = self.conv2.forward(p, &silu(&a2), out_dims);
        let skip_cols = match &self.skip {
            Some(conv) => {
                let (s, cols) = conv.forward(p, x, dims);
                for (o, v) in out.iter_mut().zip(&s) {
                    *o = *o + *v;
                }
                Some(cols)
            }
            None => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = *o + *v;
                }
                None
            }
        };
        let cache = ResCache {
            gn1,
            a1,
            cols1,
            gn2,
            a2,
            cols2,
            skip_cols,
        };
        (out, cache)
    }

    /// Returns the input gradient; adds the step-embedding gradient to `dstep`.
    #[allow(clippy::too_many_arguments)]
    fn backward<S: Scalar>(
        &self,
        p: &[S],
        g: &mut [S],
        cache: &ResCache<S>,
        dout: &[S],
        dims: Dims,
        step: &[S],
        dstep: &mut [S],
    ) -> Vec<S> {
        let hw = dims.pixels();
        let out_dims = dims.with_channels(self.cout);
        let ds2 = self.conv2.backward(p, g, &cache.cols2, dout, out_dims);
        let da2 = silu_backward(&cache.a2, &ds2);
        let dh = self.norm2.backward(p, g, &cache.gn2, &da2, hw);
        let dproj: Vec<S> = dh
            .chunks_exact(hw)
            .map(|r| r.iter().copied().sum())
            .collect();
        let ds = self.step_proj.backward(p, g, step, &dproj);
        for (d, v) in dstep.iter_mut().zip(&ds) {
            *d = *d + *v;
        }
        let ds1 = self.conv1.backward(p, g, &cache.cols1, &dh, dims);
        let da1 = silu_backward(&cache.a1, &ds1);
        let mut dx = self.norm1.backward(p, g, &cache.gn1, &da1, hw);
        match (&self.skip, &cache.skip_cols) {
            (Some(conv), Some(cols)) => {
                let dskip = conv.backward(p, g, cols, dout, dims);
                for (d, v) in dx.iter_mut().zip(&dskip) {
                    *d = *d + *v;
                }
            }
            _ => {
                for (d, v) in dx.iter_mut().zip(dout) {
                    *d = *d + *v;
                }
            }
        }
        dx
    }
}

/// Network topology plus the flat parameter layout. Holds no weights.
#[derive(Clone, Debug)]
pub struct UNet {
    config: ArchConfig,
    image: [usize; 3],
    layout: Vec<ParamEntry>,
    num_params: usize,
    time1: Linear,
    time2: Linear,
    conv_in: Conv2d,
    encoder: Vec<Vec<ResBlock>>,
    decoder: Vec<Vec<ResBlock>>,
    out_conv: Conv2d,
    /// Scalar gain on the input added to the prediction. Group norm hides the
    /// image mean from the residual blocks; this path carries it through.
    skip_gain: Linear,
}

/// Intermediate values retained by [`UNet::forward_train`].
pub struct ForwardCache<S> {
    emb: Vec<S>,
    u1: Vec<S>,
    s1: Vec<S>,
    u2: Vec<S>,
    step: Vec<S>,
    cols_in: Vec<S>,
    encoder: Vec<Vec<ResCache<S>>>,
    decoder: Vec<Vec<ResCache<S>>>,
    a_out: Vec<S>,
    cols_out: Vec<S>,
    input: Vec<S>,
}

impl UNet {
    pub fn new(config: ArchConfig, image: [usize; 3]) -> Result<Self> {
        config.validate(image)?;
        let mut b = LayoutBuilder::default();
        let widths: Vec<usize> = config
            .channel_mults
            .iter()
            .map(|m| m * config.base_width)
            .collect();
        let levels = widths.len();
        let time1 = b.linear("time.0", config.base_width, config.time_dim);
        let time2 = b.linear("time.1", config.time_dim, config.time_dim);
        let conv_in = b.conv("conv_in", image[0], widths[0], 3, false);
        let mut encoder = Vec::with_capacity(levels);
        let mut ch = widths[0];
        for (l, &w) in widths.iter().enumerate() {
            let mut blocks = Vec::new();
            for i in 0..config.blocks_per_level {
                blocks.push(ResBlock::build(
                    &mut b,
                    &format!("down.{l}.{i}"),
                    ch,
                    w,
                    &config,
                ));
                ch = w;
            }
            encoder.push(blocks);
        }
        let mut decoder: Vec<Vec<ResBlock>> = Vec::with_capacity(levels - 1);
        for l in (0..levels - 1).rev() {
            let mut blocks = Vec::new();
            let mut cin = ch + widths[l];
            for i in 0..config.blocks_per_level {
                blocks.push(ResBlock::build(
                    &mut b,
                    &format!("up.{l}.{i}"),
                    cin,
                    widths[l],
                    &config,
                ));
                cin = widths[l];
            }
            ch = widths[l];
            decoder.push(blocks);
        }
        // decoder[j] holds level levels-2-j; store by level instead
        decoder.reverse();
        let out_conv = b.conv("out.conv", widths[0], image[0], 3, true);
        let skip_gain = Linear {
            fan_in: config.time_dim,
            fan_out: 1,
            weight: b.push("out.skip_gain.weight".into(), vec![1, config.time_dim], Init::Zeros),
            bias: b.push("out.skip_gain.bias".into(), vec![1], Init::Zeros),
        };
        Ok(Self {
            config,
            image,
            layout: b.entries,
            num_params: b.total,
            time1,
            time2,
            conv_in,
            encoder,
            decoder,
            out_conv,
            skip_gain,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image
    }

    pub fn layout(&self) -> &[ParamEntry] {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Samples initial weights; `zero_head` zeroes the output convolution and
    /// the input skip gain.
    pub fn init_params<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R, zero_head: bool) -> Vec<S> {
        let mut out = vec![S::zero(); self.num_params];
        let head = [
            self.out_conv.weight,
            self.out_conv.bias,
            self.skip_gain.weight,
            self.skip_gain.bias,
        ];
        for e in &self.layout {
            let init = match e.init {
                Init::Zeros if !zero_head && head.contains(&e.offset) => {
                    Init::Uniform(1.0 / ((self.out_conv.cin * 9) as f64).sqrt())
                }
                other => other,
            };
            let dst = &mut out[e.offset..e.offset + e.len];
            match init {
                Init::Ones => dst.fill(S::one()),
                Init::Zeros => dst.fill(S::zero()),
                Init::Uniform(bound) => {
                    for v in dst {
                        *v = S::from_f64(rng.random_range(-bound..bound));
                    }
                }
            }
        }
        out
    }

    fn level_dims(&self, level: usize, channels: usize) -> Dims {
        Dims::new(channels, self.image[1] >> level, self.image[2] >> level)
    }

    fn input_dims(&self) -> Dims {
        Dims::new(self.image[0], self.image[1], self.image[2])
    }

    /// Noise prediction for one image. `x` is `[C, H, W]` flattened.
    pub fn forward<S: Scalar>(&self, params: &[S], x: &[S], t: usize) -> Vec<S> {
        self.forward_train(params, x, t).0
    }

    pub fn forward_train<S: Scalar>(
        &self,
        p: &[S],
        x: &[S],
        t: usize,
    ) -> (Vec<S>, ForwardCache<S>) {
        assert_eq!(
            p.len(),
            self.num_params,
            "parameter vector has wrong length"
        );
        assert_eq!(x.len(), self.input_dims().len(), "input has wrong length");
        let emb = timestep_embedding::<S>(t, self.config.base_width);
        let u1 = self.time1.forward(p, &emb);
        let s1 = silu(&u1);
        let u2 = self.time2.forward(p, &s1);
        let step = silu(&u2);

        let levels = self.encoder.len();
        let (mut h, cols_in) = self.conv_in.forward(p, x, self.input_dims());
        let mut ch = self.conv_in.cout;
        let mut skips = Vec::with_capacity(levels);
        let mut enc_caches = Vec::with_capacity(levels);
        for (l, blocks) in self.encoder.iter().enumerate() {
            let mut caches = Vec::with_capacity(blocks.len());
            for block in blocks {
                let (out, c) = block.forward(p, &h, self.level_dims(l, ch), &step);
                h = out;
                ch = block.cout;
                caches.push(c);
            }
            enc_caches.push(caches);
            if l + 1 < levels {
                skips.push(h.clone());
                h = avg_pool2(&h, self.level_dims(l, ch));
            }
        }
        let mut dec_caches: Vec<Vec<ResCache<S>>> =
            (0..levels.saturating_sub(1)).map(|_| Vec::new()).collect();
        for l in (0..levels - 1).rev() {
            h = upsample2(&h, self.level_dims(l + 1, ch));
            h.extend_from_slice(&skips[l]);
            ch += self.encoder[l].last().map(|b| b.cout).unwrap_or(0);
            for block in &self.decoder[l] {
                let (out, c) = block.forward(p, &h, self.level_dims(l, ch), &step);
                h = out;
                ch = block.cout;
                dec_caches[l].push(c);
            }
        }
        let a_out = h;
        let (mut y, cols_out) = self
            .out_conv
            .forward(p, &silu(&a_out), self.level_dims(0, ch));
        let gain = self.skip_gain.forward(p, &step)[0];
        for (o, &v) in y.iter_mut().zip(x) {
            *o = *o + gain * v;
        }
        let cache = ForwardCache {
            emb,
            u1,
            s1,
            u2,
            step,
            cols_in,
            encoder: enc_caches,
            decoder: dec_caches,
            a_out,
            cols_out,
            input: x.to_vec(),
        };
        (y, cache)
    }

    /// Accumulates `∂loss/∂params` into `grads` given `∂loss/∂output`.
    pub fn backward<S: Scalar>(&self, p: &[S], grads: &mut [S], cache: &ForwardCache<S>, dy: &[S]) {
        assert_eq!(grads.len(), self.num_params);
        let levels = self.encoder.len();
        let width0 = self.conv_in.cout;
        let ds = self
            .out_conv
            .backward(p, grads, &cache.cols_out, dy, self.level_dims(0, width0));
        let da = silu_backward(&cache.a_out, &ds);
        let mut dh = da;

        let dgain = dy
            .iter()
            .zip(&cache.input)
            .fold(S::zero(), |acc, (&d, &v)| acc + d * v);
        let mut dstep = self
            .skip_gain
            .backward(p, grads, &cache.step, &[dgain]);
        let mut dskips: Vec<Vec<S>> = vec![Vec::new(); levels.saturating_sub(1)];
        for (l, dskip) in dskips.iter_mut().enumerate() {
            let blocks = &self.decoder[l];
            let below = self.decoder_input_channels(l);
            for (i, block) in blocks.iter().enumerate().rev() {
                let cin = if i == 0 { below } else { blocks[i - 1].cout };
                dh = block.backward(
                    p,
                    grads,
                    &cache.decoder[l][i],
                    &dh,
                    self.level_dims(l, cin),
                    &cache.step,
                    &mut dstep,
                );
            }
            let up_ch = below - self.encoder[l].last().map(|b| b.cout).unwrap_or(0);
            let split = up_ch * self.level_dims(l, 1).pixels();
            *dskip = dh[split..].to_vec();
            dh = upsample2_backward(&dh[..split], self.level_dims(l + 1, up_ch));
        }
        for l in (0..levels).rev() {
            let blocks = &self.encoder[l];
            if l + 1 < levels {
                let ch = blocks.last().map(|b| b.cout).unwrap_or(0);
                dh = avg_pool2_backward(&dh, self.level_dims(l, ch));
                for (d, v) in dh.iter_mut().zip(&dskips[l]) {
                    *d = *d + *v;
                }
            }
            for (i, block) in blocks.iter().enumerate().rev() {
                let cin = if i > 0 {
                    blocks[i - 1].cout
                } else if l > 0 {
                    self.encoder[l - 1].last().map(|b| b.cout).unwrap_or(0)
                } else {
                    width0
                };
                dh = block.backward(
                    p,
                    grads,
                    &cache.encoder[l][i],
                    &dh,
                    self.level_dims(l, cin),
                    &cache.step,
                    &mut dstep,
                );
            }
        }
        self.conv_in
            .backward(p, grads, &cache.cols_in, &dh, self.input_dims());

        let du2 = silu_backward(&cache.u2, &dstep);
        let ds1 = self.time2.backward(p, grads, &cache.s1, &du2);
        let du1 = silu_backward(&cache.u1, &ds1);
        self.time1.backward(p, grads, &cache.emb, &du1);
    }

    /// Channels entering the first decoder block of level `l`.
    fn decoder_input_channels(&self, l: usize) -> usize {
        let from_below = if l + 1 < self.decoder.len() {
            self.decoder[l + 1].last().map(|b| b.cout).unwrap_or(0)
        } else {
            self.encoder[l + 1].last().map(|b| b.cout).unwrap_or(0)
        };
        from_below + self.encoder[l].last().map(|b| b.cout).unwrap_or(0)
    }
}

/// `weight · mean((pred − target)²)` and its gradient with respect to `pred`.
pub fn mse_with_grad<S: Scalar>(pred: &[S], target: &[S], weight: S) -> (S, Vec<S>) {
    let n = S::from_f64(pred.len() as f64);
    let two = S::from_f64(2.0);
    let mut loss = S::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p - t;
            loss = loss + d * d;
            two * d / n * weight
        })
        .collect();
    (loss / n * weight, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> UNet {
        let cfg = ArchConfig {
            base_width: 4,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            time_dim: 8,
            norm_groups: 2,
        };
        UNet::new(cfg, [1, 4, 4]).unwrap()
    }

    #[test]
    fn layout_is_contiguous_and_named_uniquely() {
        let net = UNet::new(ArchConfig::default(), [1, 32, 32]).unwrap();
        let mut next = 0;
        let mut names = std::collections::HashSet::new();
        for e in net.layout() {
            assert_eq!(e.offset, next);
            next += e.len;
            assert!(names.insert(e.name.clone()), "duplicate {}", e.name);
        }
        assert_eq!(next, net.num_params());
    }

    #[test]
    fn skip_gain_scales_the_input() {
        let net = tiny();
        let mut p: Vec<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(2), true);
        let bias = net
            .layout()
            .iter()
            .find(|e| e.name == "out.skip_gain.bias")
            .unwrap()
            .offset;
        p[bias] = 0.5;
        let x: Vec<f64> = (0..16).map(|i| i as f64 - 4.0).collect();
        let y = net.forward(&p, &x, 7);
        assert!(y.iter().zip(&x).all(|(a, b)| *a == 0.5 * b));
    }

    #[test]
    fn rejects_indivisible_image() {
        assert!(UNet::new(ArchConfig::default(), [1, 30, 30]).is_err());
    }

    #[test]
    fn zero_head_predicts_zero() {
        let net = tiny();
        let p: Vec<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(1), true);
        let x: Vec<f32> = (0..16).map(|i| i as f32 * 0.1 - 0.8).collect();
        assert!(net.forward(&p, &x, 3).iter().all(|&v| v == 0.0));
        let p: Vec<f32> = net.init_params(&mut ChaCha8Rng::seed_from_u64(1), false);
        assert!(net.forward(&p, &x, 3).iter().any(|&v| v != 0.0));
    }

    /// Gradient of a random linear functional of the output, checked by
    /// central differences in f64. The full-loss check lives in the
    /// integration tests.
    #[test]
    fn backward_matches_finite_differences() {
        let net = tiny();
        let p: Vec<f64> = net.init_params(&mut ChaCha8Rng::seed_from_u64(5), false);
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.4).collect();
        let probe: Vec<f64> = (0..16).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.25).collect();
        let f = |params: &[f64]| -> f64 {
            net.forward(params, &x, 5)
                .iter()
                .zip(&probe)
                .map(|(a, b)| a * b)
                .sum()
        };
        let (_, cache) = net.forward_train(&p, &x, 5);
        let mut g = vec![0.0; p.len()];
        net.backward(&p, &mut g, &cache, &probe);
        let h = 1e-6;
        for i in (0..p.len()).step_by(7) {
            let mut pp = p.clone();
            pp[i] += h;
            let up = f(&pp);
            pp[i] -= 2.0 * h;
            let dn = f(&pp);
            let num = (up - dn) / (2.0 * h);
            let err = (num - g[i]).abs() / num.abs().max(g[i].abs()).max(1e-7);
            assert!(
                err < 1e-5,
                "param {i} ({}) analytic {} numeric {}",
                i,
                g[i],
                num
            );
        }
    }
}
