//! A two-stage U-Net with switchable normalization, downsampling,
//! upsampling and an optional ASPP bottleneck.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::aspp::{Aspp, AsppCache};
use super::conv::{conv2d, conv2d_backward, conv_transpose2x2, conv_transpose2x2_backward, Conv2dSpec};
use super::init::uniform_fan_in;
use super::norm::{
    batch_norm, batch_norm_backward, group_norm, group_norm_backward, NormCache, NormMode, RunningStats, BN_MOMENTUM,
};
use super::ops::{concat_channels, maxpool2, maxpool2_backward, pixelshuffle, pixelunshuffle, relu, relu_backward, split_channels};
use super::tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    GroupNorm,
    BatchNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Downsample {
    MaxPool,
    ConvStride,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Upsample {
    UpConv,
    PixelShuffle,
}

/// Architecture switches. The default is the plain U-Net: batch norm,
/// max pooling, transposed-convolution upsampling, no ASPP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub norm: NormKind,
    pub groups: usize,
    pub down: Downsample,
    pub up: Upsample,
    pub aspp: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_width: 8,
            norm: NormKind::BatchNorm,
            groups: 8,
            down: Downsample::MaxPool,
            up: Upsample::UpConv,
            aspp: false,
        }
    }
}

pub const CLASSES: usize = 3;

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    norm: NormCache,
    pre_relu: Tensor,
}

#[derive(Debug, Clone)]
enum DownCache {
    Pool { input_shape: Vec<usize>, argmax: Vec<usize> },
    Conv { input: Tensor },
}

#[derive(Debug, Clone)]
struct UpCache {
    input: Tensor,
}

/// Everything the backward pass needs, plus the batch-norm running
/// statistics produced by a train-mode forward.
#[derive(Debug, Clone)]
pub struct UNetCache {
    enc1: Vec<BlockCache>,
    down1: DownCache,
    enc2: Vec<BlockCache>,
    down2: DownCache,
    bott: Vec<BlockCache>,
    aspp: Option<AsppCache>,
    up2: UpCache,
    dec2: Vec<BlockCache>,
    up1: UpCache,
    dec1: Vec<BlockCache>,
    head_input: Tensor,
    pub buffers: ParamSet,
}

impl UNetCache {
    fn blocks(&self) -> impl Iterator<Item = &BlockCache> {
        self.enc1.iter().chain(&self.enc2).chain(&self.bott).chain(&self.dec2).chain(&self.dec1)
    }

    /// Fingerprint of every non-smooth decision taken in the forward pass:
    /// relu signs and max-pool winners. Two passes with equal signatures lie
    /// on the same smooth piece of the network.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let mut relus: Vec<&Tensor> = self.blocks().map(|b| &b.pre_relu).collect();
        if let Some(a) = &self.aspp {
            relus.extend(a.relu_inputs());
        }
        for t in relus {
            for v in t.data() {
                (*v > 0.0).hash(&mut h);
            }
        }
        for d in [&self.down1, &self.down2] {
            if let DownCache::Pool { argmax, .. } = d {
                argmax.hash(&mut h);
            }
        }
        h.finish()
    }

    /// Smallest |pre-activation| over all relus; used to keep finite
    /// difference probes away from kinks.
    pub fn min_relu_margin(&self) -> f64 {
        let mut m = f64::INFINITY;
        for b in self.blocks() {
            for v in b.pre_relu.data() {
                m = m.min(v.abs());
            }
        }
        if let Some(a) = &self.aspp {
            for t in a.relu_inputs() {
                for v in t.data() {
                    m = m.min(v.abs());
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniUNet {
    pub config: UNetConfig,
    pub params: ParamSet,
    /// Batch-norm running statistics (empty for group norm).
    pub buffers: ParamSet,
}

const CONVS_PER_BLOCK: usize = 2;

impl MiniUNet {
    /// Widths of the two encoder stages and the bottleneck.
    pub fn widths(config: &UNetConfig) -> [usize; 3] {
        let b = config.base_width;
        [b, 2 * b, 4 * b]
    }

    fn aspp_module(&self) -> Aspp {
        let w = Self::widths(&self.config)[2];
        Aspp::new(w, self.config.base_width, w)
    }

    fn up_out_channels(&self, in_c: usize) -> usize {
        match self.config.up {
            Upsample::UpConv => in_c / 2,
            Upsample::PixelShuffle => in_c / 4,
        }
    }

    /// Block layout: (name, input channels, output channels).
    fn block_layout(&self) -> Vec<(&'static str, usize, usize)> {
        let [w1, w2, w3] = Self::widths(&self.config);
        let u2 = self.up_out_channels(w3);
        let u1 = self.up_out_channels(w2);
        vec![
            ("enc1", self.config.in_channels, w1),
            ("enc2", w1, w2),
            ("bott", w2, w3),
            ("dec2", u2 + w2, w2),
            ("dec1", u1 + w1, w1),
        ]
    }

    pub fn new<R: Rng + ?Sized>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        if config.base_width == 0 || config.in_channels == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        if config.norm == NormKind::GroupNorm && (config.groups == 0 || config.base_width % config.groups != 0) {
            return Err(Error::Config(format!("{} channels cannot form {} groups", config.base_width, config.groups)));
        }
        if config.up == Upsample::PixelShuffle && config.base_width % 2 != 0 {
            return Err(Error::Config("pixel shuffle needs an even base width".into()));
        }
        let mut net = Self { config, params: ParamSet::new(), buffers: ParamSet::new() };
        for (name, cin, cout) in net.block_layout() {
            let mut c = cin;
            for i in 0..CONVS_PER_BLOCK {
                let p = format!("{name}.{i}");
                net.params.insert(format!("{p}.conv.weight"), uniform_fan_in(&[cout, c, 3, 3], rng));
                net.params.insert(format!("{p}.norm.weight"), Tensor::filled(&[cout], 1.0));
                net.params.insert(format!("{p}.norm.bias"), Tensor::zeros(&[cout]));
                if config.norm == NormKind::BatchNorm {
                    let stats = RunningStats::new(cout);
                    net.buffers.insert(format!("{p}.norm.running_mean"), stats.mean);
                    net.buffers.insert(format!("{p}.norm.running_var"), stats.var);
                }
                c = cout;
            }
        }
        let [w1, w2, w3] = Self::widths(&config);
        if config.down == Downsample::ConvStride {
            for (name, c) in [("down1", w1), ("down2", w2)] {
                net.params.insert(format!("{name}.weight"), uniform_fan_in(&[c, c, 3, 3], rng));
                net.params.insert(format!("{name}.bias"), Tensor::zeros(&[c]));
            }
        }
        if config.aspp {
            net.aspp_module().init_params("aspp", rng, &mut net.params);
        }
        for (name, cin) in [("up2", w3), ("up1", w2)] {
            let cout = net.up_out_channels(cin);
            match config.up {
                Upsample::UpConv => {
                    net.params.insert(format!("{name}.weight"), uniform_fan_in(&[cin, cout, 2, 2], rng));
                    net.params.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
                }
                Upsample::PixelShuffle => {
                    net.params.insert(format!("{name}.weight"), uniform_fan_in(&[4 * cout, cin, 3, 3], rng));
                    net.params.insert(format!("{name}.bias"), Tensor::zeros(&[4 * cout]));
                }
            }
        }
        net.params.insert("head.weight", uniform_fan_in(&[CLASSES, w1, 1, 1], rng));
        net.params.insert("head.bias", Tensor::zeros(&[CLASSES]));
        Ok(net)
    }

    /// Same layout with every parameter set to zero.
    pub fn zeroed(config: UNetConfig) -> Result<Self> {
        let mut rng = crate::rng::stream_rng(0, 0);
        let mut net = Self::new(config, &mut rng)?;
        net.params = net.params.zeros_like();
        Ok(net)
    }

    fn block_forward(&self, name: &str, x: &Tensor, mode: NormMode, buffers: &mut ParamSet) -> Result<(Tensor, Vec<BlockCache>)> {
        let mut caches = Vec::with_capacity(CONVS_PER_BLOCK);
        let mut cur = x.clone();
        for i in 0..CONVS_PER_BLOCK {
            let p = format!("{name}.{i}");
            let conv_out = conv2d(&cur, self.params.get(&format!("{p}.conv.weight"))?, None, Conv2dSpec::same(1))?;
            let nw = self.params.get(&format!("{p}.norm.weight"))?;
            let nb = self.params.get(&format!("{p}.norm.bias"))?;
            let (pre_relu, norm) = match self.config.norm {
                NormKind::GroupNorm => group_norm(&conv_out, self.config.groups, nw, nb)?,
                NormKind::BatchNorm => {
                    let mk = format!("{p}.norm.running_mean");
                    let vk = format!("{p}.norm.running_var");
                    let running = RunningStats { mean: self.buffers.get(&mk)?.clone(), var: self.buffers.get(&vk)?.clone() };
                    let (out, cache, updated) = batch_norm(&conv_out, nw, nb, &running, mode, BN_MOMENTUM)?;
                    buffers.insert(mk, updated.mean);
                    buffers.insert(vk, updated.var);
                    (out, cache)
                }
            };
            let out = relu(&pre_relu);
            caches.push(BlockCache { input: cur, norm, pre_relu });
            cur = out;
        }
        Ok((cur, caches))
    }

    fn block_backward(&self, name: &str, caches: &[BlockCache], upstream: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        let mut d = upstream.clone();
        for (i, c) in caches.iter().enumerate().rev() {
            let p = format!("{name}.{i}");
            let d_pre = relu_backward(&c.pre_relu, &d);
            let nw = self.params.get(&format!("{p}.norm.weight"))?;
            let ng = match self.config.norm {
                NormKind::GroupNorm => group_norm_backward(&c.norm, self.config.groups, nw, &d_pre)?,
                NormKind::BatchNorm => batch_norm_backward(&c.norm, nw, &d_pre)?,
            };
            grads.accumulate(&format!("{p}.norm.weight"), &ng.weight)?;
            grads.accumulate(&format!("{p}.norm.bias"), &ng.bias)?;
            let cg = conv2d_backward(&c.input, self.params.get(&format!("{p}.conv.weight"))?, Conv2dSpec::same(1), &ng.input)?;
            grads.accumulate(&format!("{p}.conv.weight"), &cg.weight)?;
            d = cg.input;
        }
        Ok(d)
    }

    fn down_forward(&self, name: &str, x: &Tensor) -> Result<(Tensor, DownCache)> {
        match self.config.down {
            Downsample::MaxPool => {
                let (out, argmax) = maxpool2(x)?;
                Ok((out, DownCache::Pool { input_shape: x.shape().to_vec(), argmax }))
            }
            Downsample::ConvStride => {
                let out = conv2d(
                    x,
                    self.params.get(&format!("{name}.weight"))?,
                    Some(self.params.get(&format!("{name}.bias"))?),
                    Conv2dSpec::strided(),
                )?;
                Ok((out, DownCache::Conv { input: x.clone() }))
            }
        }
    }

    fn down_backward(&self, name: &str, cache: &DownCache, upstream: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        match cache {
            DownCache::Pool { input_shape, argmax } => Ok(maxpool2_backward(input_shape, argmax, upstream)),
            DownCache::Conv { input } => {
                let g = conv2d_backward(input, self.params.get(&format!("{name}.weight"))?, Conv2dSpec::strided(), upstream)?;
                grads.accumulate(&format!("{name}.weight"), &g.weight)?;
                grads.accumulate(&format!("{name}.bias"), &g.bias)?;
                Ok(g.input)
            }
        }
    }

    fn up_forward(&self, name: &str, x: &Tensor) -> Result<(Tensor, UpCache)> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let b = self.params.get(&format!("{name}.bias"))?;
        let out = match self.config.up {
            Upsample::UpConv => conv_transpose2x2(x, w, b)?,
            Upsample::PixelShuffle => pixelshuffle(&conv2d(x, w, Some(b), Conv2dSpec::same(1))?)?,
        };
        Ok((out, UpCache { input: x.clone() }))
    }

    fn up_backward(&self, name: &str, cache: &UpCache, upstream: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        let w = self.params.get(&format!("{name}.weight"))?;
        let g = match self.config.up {
            Upsample::UpConv => conv_transpose2x2_backward(&cache.input, w, upstream)?,
            Upsample::PixelShuffle => conv2d_backward(&cache.input, w, Conv2dSpec::same(1), &pixelunshuffle(upstream)?)?,
        };
        grads.accumulate(&format!("{name}.weight"), &g.weight)?;
        grads.accumulate(&format!("{name}.bias"), &g.bias)?;
        Ok(g.input)
    }

    /// Class scores `(n, 3, h, w)` for an input `(n, c, h, w)` with `h` and
    /// `w` divisible by 4.
    pub fn forward(&self, x: &Tensor, mode: NormMode) -> Result<(Tensor, UNetCache)> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!("network expects {} input channels, got {c}", self.config.in_channels)));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Shape(format!("input {h}x{w} is not divisible by 4")));
        }
        let mut buffers = ParamSet::new();
        let (e1, enc1) = self.block_forward("enc1", x, mode, &mut buffers)?;
        let (d1, down1) = self.down_forward("down1", &e1)?;
        let (e2, enc2) = self.block_forward("enc2", &d1, mode, &mut buffers)?;
        let (d2, down2) = self.down_forward("down2", &e2)?;
        let (mut b, bott) = self.block_forward("bott", &d2, mode, &mut buffers)?;
        let mut aspp = None;
        if self.config.aspp {
            let (out, cache) = self.aspp_module().forward(&self.params, "aspp", &b)?;
            b = out;
            aspp = Some(cache);
        }
        let (u2, up2) = self.up_forward("up2", &b)?;
        let (o2, dec2) = self.block_forward("dec2", &concat_channels(&[&u2, &e2])?, mode, &mut buffers)?;
        let (u1, up1) = self.up_forward("up1", &o2)?;
        let (o1, dec1) = self.block_forward("dec1", &concat_channels(&[&u1, &e1])?, mode, &mut buffers)?;
        let scores = conv2d(&o1, self.params.get("head.weight")?, Some(self.params.get("head.bias")?), Conv2dSpec::pointwise())?;
        let cache = UNetCache { enc1, down1, enc2, down2, bott, aspp, up2, dec2, up1, dec1, head_input: o1, buffers };
        Ok((scores, cache))
    }

    /// Evaluation-mode scores without keeping the cache.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, NormMode::Eval)?.0)
    }

    /// Parameter gradients for `upstream = dL/dscores`.
    pub fn backward(&self, cache: &UNetCache, upstream: &Tensor) -> Result<ParamSet> {
        let mut grads = ParamSet::new();
        let head = conv2d_backward(&cache.head_input, self.params.get("head.weight")?, Conv2dSpec::pointwise(), upstream)?;
        grads.accumulate("head.weight", &head.weight)?;
        grads.accumulate("head.bias", &head.bias)?;

        let [w1, w2, w3] = Self::widths(&self.config);
        let d_c1 = self.block_backward("dec1", &cache.dec1, &head.input, &mut grads)?;
        let u1c = self.up_out_channels(w2);
        let parts = split_channels(&d_c1, &[u1c, w1])?;
        let mut d_e1 = parts[1].clone();
        let d_o2 = self.up_backward("up1", &cache.up1, &parts[0], &mut grads)?;

        let d_c2 = self.block_backward("dec2", &cache.dec2, &d_o2, &mut grads)?;
        let u2c = self.up_out_channels(w3);
        let parts = split_channels(&d_c2, &[u2c, w2])?;
        let mut d_e2 = parts[1].clone();
        let mut d_b = self.up_backward("up2", &cache.up2, &parts[0], &mut grads)?;

        if let Some(a) = &cache.aspp {
            d_b = self.aspp_module().backward(&self.params, "aspp", a, &d_b, &mut grads)?;
        }
        let d_d2 = self.block_backward("bott", &cache.bott, &d_b, &mut grads)?;
        d_e2.add_assign(&self.down_backward("down2", &cache.down2, &d_d2, &mut grads)?)?;
        let d_d1 = self.block_backward("enc2", &cache.enc2, &d_e2, &mut grads)?;
        d_e1.add_assign(&self.down_backward("down1", &cache.down1, &d_d1, &mut grads)?)?;
        self.block_backward("enc1", &cache.enc1, &d_e1, &mut grads)?;

        // Parameters that received no gradient (none in practice) still get
        // an entry so the layout matches the parameter set.
        for (name, t) in self.params.iter() {
            if !grads.contains(name) {
                grads.insert(name.clone(), Tensor::zeros_like(t));
            }
        }
        Ok(grads)
    }

    /// Adopts the running statistics produced by a train-mode forward.
    pub fn commit_buffers(&mut self, cache: &UNetCache) {
        for (name, t) in cache.buffers.iter() {
            self.buffers.insert(name.clone(), t.clone());
        }
    }
}
