//! Parameter-free operators: activation, pooling, channel/space shuffles.

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Passes `upstream` where the forward input was positive.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Tensor {
    let data = x.data().iter().zip(upstream.data()).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// 2x2 non-overlapping max pooling. Returns the output and, per output
/// cell, the flat input index of the window maximum (ties resolve to the
/// first cell in row-major order).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("max pooling needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let src = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let candidates = [
                    base + 2 * y * w + 2 * xx,
                    base + 2 * y * w + 2 * xx + 1,
                    base + (2 * y + 1) * w + 2 * xx,
                    base + (2 * y + 1) * w + 2 * xx + 1,
                ];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if src[i] > src[best] {
                        best = i;
                    }
                }
                let o = (plane * oh + y) * ow + xx;
                out.data_mut()[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], upstream: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(upstream.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

/// `(n, 4c, h, w) -> (n, c, 2h, 2w)` with
/// `out[co, 2y+dy, 2x+dx] = in[4co + 2dy + dx, y, x]`.
pub fn pixelshuffle(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if c % 4 != 0 {
        return Err(Error::Shape(format!("pixel shuffle needs channels divisible by 4, got {c}")));
    }
    let co = c / 4;
    let mut out = Tensor::zeros(&[n, co, 2 * h, 2 * w]);
    let (oh, ow) = (2 * h, 2 * w);
    for s in 0..n {
        for o in 0..co {
            for dy in 0..2 {
                for dx in 0..2 {
                    let ci = o * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out.data_mut()[((s * co + o) * oh + 2 * y + dy) * ow + 2 * xx + dx] =
                                x.data()[((s * c + ci) * h + y) * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixelshuffle`]; also its backward pass.
pub fn pixelunshuffle(x: &Tensor) -> Result<Tensor> {
    let (n, co, oh, ow) = x.dims4()?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::Shape(format!("pixel unshuffle needs even spatial dims, got {oh}x{ow}")));
    }
    let (h, w, c) = (oh / 2, ow / 2, co * 4);
    let mut out = Tensor::zeros(&[n, c, h, w]);
    for s in 0..n {
        for o in 0..co {
            for dy in 0..2 {
                for dx in 0..2 {
                    let ci = o * 4 + dy * 2 + dx;
                    for y in 0..h {
                        for xx in 0..w {
                            out.data_mut()[((s * c + ci) * h + y) * w + xx] =
                                x.data()[((s * co + o) * oh + 2 * y + dy) * ow + 2 * xx + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Concatenates along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let (n, _, h, w) = parts.first().ok_or_else(|| Error::Shape("nothing to concatenate".into()))?.dims4()?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::Shape(format!("cannot concatenate {:?} with batch/spatial {n}x{h}x{w}", p.shape())));
        }
        total += pc;
    }
    let mut out = Vec::with_capacity(n * total * h * w);
    for s in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            out.extend_from_slice(&p.data()[s * pc * h * w..(s + 1) * pc * h * w]);
        }
    }
    Tensor::from_vec(&[n, total, h, w], out)
}

/// Splits a channel-concatenated gradient back into per-part gradients.
pub fn split_channels(x: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let (n, c, h, w) = x.dims4()?;
    if channels.iter().sum::<usize>() != c {
        return Err(Error::Shape(format!("split {channels:?} does not cover {c} channels")));
    }
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|&pc| Vec::with_capacity(n * pc * h * w)).collect();
    for s in 0..n {
        let mut offset = 0;
        for (part, &pc) in parts.iter_mut().zip(channels) {
            let start = (s * c + offset) * h * w;
            part.extend_from_slice(&x.data()[start..start + pc * h * w]);
            offset += pc;
        }
    }
    parts.into_iter().zip(channels).map(|(d, &pc)| Tensor::from_vec(&[n, pc, h, w], d)).collect()
}

/// Spatial mean per channel: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let hw = (h * w) as f64;
    let data = x.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
    Tensor::from_vec(&[n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], upstream: &Tensor) -> Tensor {
    let hw: usize = input_shape[2..].iter().product();
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(upstream.data()) {
        plane.iter_mut().for_each(|v| *v = g / hw as f64);
    }
    dx
}

/// Repeats `(n, c, 1, 1)` over an `h x w` grid.
pub fn broadcast_spatial(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, c, one_h, one_w) = x.dims4()?;
    if (one_h, one_w) != (1, 1) {
        return Err(Error::Shape(format!("broadcast expects 1x1 spatial input, got {:?}", x.shape())));
    }
    let data = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
    Tensor::from_vec(&[n, c, h, w], data)
}

pub fn broadcast_spatial_backward(upstream: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = upstream.dims4()?;
    let data = upstream.data().chunks(h * w).map(|p| p.iter().sum()).collect();
    Tensor::from_vec(&[n, c, 1, 1], data)
}
