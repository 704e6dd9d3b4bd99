//! Atrous spatial pyramid pooling: parallel dilated 3x3 convolutions plus a
//! global-pooling path, concatenated and fused by a 1x1 convolution.

use rand::Rng;

use crate::error::Result;

use super::conv::{conv2d, conv2d_backward, Conv2dSpec};
use super::init::uniform_fan_in;
use super::ops::{
    broadcast_spatial, broadcast_spatial_backward, concat_channels, global_avg_pool, global_avg_pool_backward, relu,
    relu_backward, split_channels,
};
use super::tensor::{ParamSet, Tensor};

pub const DEFAULT_RATES: [usize; 4] = [1, 6, 12, 18];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aspp {
    pub in_channels: usize,
    pub path_channels: usize,
    pub out_channels: usize,
    pub rates: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AsppCache {
    input: Tensor,
    path_pre: Vec<Tensor>,
    pooled: Tensor,
    pool_pre: Tensor,
    concat: Tensor,
    fused_pre: Tensor,
}

impl AsppCache {
    pub(crate) fn relu_inputs(&self) -> impl Iterator<Item = &Tensor> {
        self.path_pre.iter().chain([&self.pool_pre, &self.fused_pre])
    }
}

impl Aspp {
    pub fn new(in_channels: usize, path_channels: usize, out_channels: usize) -> Self {
        Self { in_channels, path_channels, out_channels, rates: DEFAULT_RATES.to_vec() }
    }

    fn paths(&self) -> usize {
        self.rates.len() + 1
    }

    pub fn init_params<R: Rng + ?Sized>(&self, prefix: &str, rng: &mut R, params: &mut ParamSet) {
        for &r in &self.rates {
            params.insert(format!("{prefix}.rate{r}.weight"), uniform_fan_in(&[self.path_channels, self.in_channels, 3, 3], rng));
            params.insert(format!("{prefix}.rate{r}.bias"), Tensor::zeros(&[self.path_channels]));
        }
        params.insert(format!("{prefix}.pool.weight"), uniform_fan_in(&[self.path_channels, self.in_channels, 1, 1], rng));
        params.insert(format!("{prefix}.pool.bias"), Tensor::zeros(&[self.path_channels]));
        params.insert(
            format!("{prefix}.fuse.weight"),
            uniform_fan_in(&[self.out_channels, self.paths() * self.path_channels, 1, 1], rng),
        );
        params.insert(format!("{prefix}.fuse.bias"), Tensor::zeros(&[self.out_channels]));
    }

    pub fn forward(&self, params: &ParamSet, prefix: &str, x: &Tensor) -> Result<(Tensor, AsppCache)> {
        let (_, _, h, w) = x.dims4()?;
        let mut path_pre = Vec::with_capacity(self.rates.len());
        let mut outs = Vec::with_capacity(self.paths());
        for &r in &self.rates {
            let pre = conv2d(
                x,
                params.get(&format!("{prefix}.rate{r}.weight"))?,
                Some(params.get(&format!("{prefix}.rate{r}.bias"))?),
                Conv2dSpec::same(r),
            )?;
            outs.push(relu(&pre));
            path_pre.push(pre);
        }
        let pooled = global_avg_pool(x)?;
        let pool_pre = conv2d(
            &pooled,
            params.get(&format!("{prefix}.pool.weight"))?,
            Some(params.get(&format!("{prefix}.pool.bias"))?),
            Conv2dSpec::pointwise(),
        )?;
        outs.push(broadcast_spatial(&relu(&pool_pre), h, w)?);
        let refs: Vec<&Tensor> = outs.iter().collect();
        let concat = concat_channels(&refs)?;
        let fused_pre = conv2d(
            &concat,
            params.get(&format!("{prefix}.fuse.weight"))?,
            Some(params.get(&format!("{prefix}.fuse.bias"))?),
            Conv2dSpec::pointwise(),
        )?;
        let out = relu(&fused_pre);
        Ok((out, AsppCache { input: x.clone(), path_pre, pooled, pool_pre, concat, fused_pre }))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward(&self, params: &ParamSet, prefix: &str, cache: &AsppCache, upstream: &Tensor, grads: &mut ParamSet) -> Result<Tensor> {
        let d_fused = relu_backward(&cache.fused_pre, upstream);
        let fuse = conv2d_backward(&cache.concat, params.get(&format!("{prefix}.fuse.weight"))?, Conv2dSpec::pointwise(), &d_fused)?;
        grads.accumulate(&format!("{prefix}.fuse.weight"), &fuse.weight)?;
        grads.accumulate(&format!("{prefix}.fuse.bias"), &fuse.bias)?;
        let parts = split_channels(&fuse.input, &vec![self.path_channels; self.paths()])?;

        let mut dx = Tensor::zeros_like(&cache.input);
        for ((&r, pre), d_out) in self.rates.iter().zip(&cache.path_pre).zip(&parts) {
            let d_pre = relu_backward(pre, d_out);
            let g = conv2d_backward(&cache.input, params.get(&format!("{prefix}.rate{r}.weight"))?, Conv2dSpec::same(r), &d_pre)?;
            grads.accumulate(&format!("{prefix}.rate{r}.weight"), &g.weight)?;
            grads.accumulate(&format!("{prefix}.rate{r}.bias"), &g.bias)?;
            dx.add_assign(&g.input)?;
        }
        let d_pool_out = broadcast_spatial_backward(&parts[self.rates.len()])?;
        let d_pool_pre = relu_backward(&cache.pool_pre, &d_pool_out);
        let g = conv2d_backward(&cache.pooled, params.get(&format!("{prefix}.pool.weight"))?, Conv2dSpec::pointwise(), &d_pool_pre)?;
        grads.accumulate(&format!("{prefix}.pool.weight"), &g.weight)?;
        grads.accumulate(&format!("{prefix}.pool.bias"), &g.bias)?;
        dx.add_assign(&global_avg_pool_backward(cache.input.shape(), &g.input))?;
        Ok(dx)
    }
}
