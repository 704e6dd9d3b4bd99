//! Group and batch normalization.

use crate::error::{Error, Result};

use super::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Values kept from a normalization forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Tensor,
    /// `1 / sqrt(var + eps)` per normalization set.
    pub inv_std: Vec<f64>,
    /// Whether the statistics came from the input itself (and so carry
    /// gradient) or from stored running statistics.
    pub batch_statistics: bool,
}

#[derive(Debug, Clone)]
pub struct NormGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check_affine(c: usize, weight: &Tensor, bias: &Tensor) -> Result<()> {
    if weight.len() != c || bias.len() != c {
        return Err(Error::Shape(format!(
            "norm affine params {:?}/{:?} do not match {c} channels",
            weight.shape(),
            bias.shape()
        )));
    }
    Ok(())
}

/// Normalizes each `(sample, channel group)` to zero mean and unit variance,
/// then applies a per-channel scale and shift.
pub fn group_norm(x: &Tensor, groups: usize, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, NormCache)> {
    group_norm_eps(x, groups, weight, bias, NORM_EPS)
}

/// [`group_norm`] with an explicit variance floor.
pub fn group_norm_eps(x: &Tensor, groups: usize, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<(Tensor, NormCache)> {
    let (n, c, h, w) = x.dims4()?;
    if groups == 0 || c % groups != 0 {
        return Err(Error::Shape(format!("{c} channels cannot be split into {groups} groups")));
    }
    check_affine(c, weight, bias)?;
    let per_group = (c / groups) * h * w;
    let hw = h * w;
    let mut xhat = Tensor::zeros_like(x);
    let mut out = Tensor::zeros_like(x);
    let mut inv_std = Vec::with_capacity(n * groups);
    for (gi, chunk) in x.data().chunks(per_group).enumerate() {
        let mean = chunk.iter().sum::<f64>() / per_group as f64;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per_group as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        let base = gi * per_group;
        let first_channel = (gi % groups) * (c / groups);
        for (j, &v) in chunk.iter().enumerate() {
            let ch = first_channel + j / hw;
            let xh = (v - mean) * inv;
            xhat.data_mut()[base + j] = xh;
            out.data_mut()[base + j] = weight.data()[ch] * xh + bias.data()[ch];
        }
    }
    Ok((out, NormCache { xhat, inv_std, batch_statistics: true }))
}

pub fn group_norm_backward(cache: &NormCache, groups: usize, weight: &Tensor, upstream: &Tensor) -> Result<NormGrads> {
    let (_, c, h, w) = upstream.dims4()?;
    let per_group = (c / groups) * h * w;
    let hw = h * w;
    let mut dx = Tensor::zeros_like(upstream);
    let mut dweight = Tensor::zeros(&[c]);
    let mut dbias = Tensor::zeros(&[c]);
    let m = per_group as f64;
    for (gi, (up, xh)) in upstream.data().chunks(per_group).zip(cache.xhat.data().chunks(per_group)).enumerate() {
        let first_channel = (gi % groups) * (c / groups);
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for (j, (&g, &xv)) in up.iter().zip(xh).enumerate() {
            let ch = first_channel + j / hw;
            dweight.data_mut()[ch] += g * xv;
            dbias.data_mut()[ch] += g;
            let d = g * weight.data()[ch];
            sum_d += d;
            sum_dx += d * xv;
        }
        let inv = cache.inv_std[gi];
        let base = gi * per_group;
        for (j, (&g, &xv)) in up.iter().zip(xh).enumerate() {
            let ch = first_channel + j / hw;
            let d = g * weight.data()[ch];
            dx.data_mut()[base + j] = inv / m * (m * d - sum_d - xv * sum_dx);
        }
    }
    Ok(NormGrads { input: dx, weight: dweight, bias: dbias })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Train,
    Eval,
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(c: usize) -> Self {
        Self { mean: Tensor::zeros(&[c]), var: Tensor::filled(&[c], 1.0) }
    }
}

/// Batch normalization. Train mode normalizes with the (biased) minibatch
/// statistics and returns the updated running statistics
/// `running <- (1 - momentum) * running + momentum * batch`; eval mode uses
/// the running statistics and returns them unchanged.
pub fn batch_norm(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    running: &RunningStats,
    mode: NormMode,
    momentum: f64,
) -> Result<(Tensor, NormCache, RunningStats)> {
    let (n, c, h, w) = x.dims4()?;
    check_affine(c, weight, bias)?;
    if running.mean.len() != c || running.var.len() != c {
        return Err(Error::Shape(format!("running stats do not match {c} channels")));
    }
    if mode == NormMode::Train && n < 2 {
        return Err(Error::DegenerateBatch(n));
    }
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut means = vec![0.0; c];
    let mut vars = vec![0.0; c];
    match mode {
        NormMode::Train => {
            for s in 0..n {
                for ch in 0..c {
                    means[ch] += x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().sum::<f64>();
                }
            }
            means.iter_mut().for_each(|v| *v /= m);
            for s in 0..n {
                for ch in 0..c {
                    let mu = means[ch];
                    vars[ch] += x.data()[(s * c + ch) * hw..(s * c + ch + 1) * hw].iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
                }
            }
            vars.iter_mut().for_each(|v| *v /= m);
        }
        NormMode::Eval => {
            means.copy_from_slice(running.mean.data());
            vars.copy_from_slice(running.var.data());
        }
    }
    let inv_std: Vec<f64> = vars.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut xhat = Tensor::zeros_like(x);
    let mut out = Tensor::zeros_like(x);
    for s in 0..n {
        for ch in 0..c {
            for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                let xh = (x.data()[i] - means[ch]) * inv_std[ch];
                xhat.data_mut()[i] = xh;
                out.data_mut()[i] = weight.data()[ch] * xh + bias.data()[ch];
            }
        }
    }
    let updated = match mode {
        NormMode::Train => RunningStats {
            mean: Tensor::from_vec(&[c], (0..c).map(|ch| (1.0 - momentum) * running.mean.data()[ch] + momentum * means[ch]).collect())?,
            var: Tensor::from_vec(&[c], (0..c).map(|ch| (1.0 - momentum) * running.var.data()[ch] + momentum * vars[ch]).collect())?,
        },
        NormMode::Eval => running.clone(),
    };
    Ok((out, NormCache { xhat, inv_std, batch_statistics: mode == NormMode::Train }, updated))
}

pub fn batch_norm_backward(cache: &NormCache, weight: &Tensor, upstream: &Tensor) -> Result<NormGrads> {
    let (n, c, h, w) = upstream.dims4()?;
    let hw = h * w;
    let m = (n * hw) as f64;
    let mut dweight = Tensor::zeros(&[c]);
    let mut dbias = Tensor::zeros(&[c]);
    let mut sum_d = vec![0.0; c];
    let mut sum_dx = vec![0.0; c];
    for s in 0..n {
        for ch in 0..c {
            for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                let g = upstream.data()[i];
                let xv = cache.xhat.data()[i];
                dweight.data_mut()[ch] += g * xv;
                dbias.data_mut()[ch] += g;
                let d = g * weight.data()[ch];
                sum_d[ch] += d;
                sum_dx[ch] += d * xv;
            }
        }
    }
    let mut dx = Tensor::zeros_like(upstream);
    for s in 0..n {
        for ch in 0..c {
            let inv = cache.inv_std[ch];
            for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                let d = upstream.data()[i] * weight.data()[ch];
                dx.data_mut()[i] = if cache.batch_statistics {
                    inv / m * (m * d - sum_d[ch] - cache.xhat.data()[i] * sum_dx[ch])
                } else {
                    d * inv
                };
            }
        }
    }
    Ok(NormGrads { input: dx, weight: dweight, bias: dbias })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i * 7919) % 23) as f64 * 0.3 - 2.0).collect()).unwrap()
    }

    #[test]
    fn constant_groups_normalize_to_zero() {
        let mut x = Tensor::zeros(&[1, 4, 2, 2]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v = if i < 8 { 3.0 } else { -1.0 };
        }
        let (y, _) = group_norm(&x, 2, &Tensor::filled(&[4], 1.0), &Tensor::zeros(&[4])).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn group_moments_are_standard() {
        let x = ramp(&[2, 8, 3, 3]);
        let (y, _) = group_norm(&x, 4, &Tensor::filled(&[8], 1.0), &Tensor::zeros(&[8])).unwrap();
        for g in y.data().chunks(18) {
            let mean = g.iter().sum::<f64>() / 18.0;
            let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-6);
            // eps shrinks the variance slightly below one
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn group_norm_ignores_per_group_affine_input_change() {
        let x = ramp(&[1, 4, 3, 3]);
        let w = Tensor::filled(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let mut shifted = x.clone();
        for (i, v) in shifted.data_mut().iter_mut().enumerate() {
            let (a, c) = if i < 18 { (2.5, -1.0) } else { (0.5, 4.0) };
            *v = a * *v + c;
        }
        let (y0, _) = group_norm_eps(&x, 2, &w, &b, 0.0).unwrap();
        let (y1, _) = group_norm_eps(&shifted, 2, &w, &b, 0.0).unwrap();
        for (a, c) in y0.data().iter().zip(y1.data()) {
            assert!((a - c).abs() < 1e-9);
        }
        // with the default floor the deviation is bounded by |xhat| * eps / (2 var)
        let (y2, _) = group_norm(&x, 2, &w, &b).unwrap();
        let (y3, _) = group_norm(&shifted, 2, &w, &b).unwrap();
        for (a, c) in y2.data().iter().zip(y3.data()) {
            assert!((a - c).abs() < 1e-4);
        }
    }

    #[test]
    fn group_norm_rejects_indivisible_channels() {
        let x = Tensor::zeros(&[1, 6, 2, 2]);
        assert!(group_norm(&x, 4, &Tensor::zeros(&[6]), &Tensor::zeros(&[6])).is_err());
    }

    #[test]
    fn batch_norm_train_moments() {
        let x = ramp(&[3, 2, 2, 2]);
        let (y, _, _) = batch_norm(&x, &Tensor::filled(&[2], 1.0), &Tensor::zeros(&[2]), &RunningStats::new(2), NormMode::Train, BN_MOMENTUM).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.data()[(s * 2 + ch) * 4..(s * 2 + ch + 1) * 4].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-6);
        }
    }

    #[test]
    fn batch_norm_eval_matches_train_with_batch_stats() {
        let x = ramp(&[4, 3, 2, 2]);
        let w = Tensor::from_vec(&[3], vec![0.5, 1.5, -1.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![0.1, 0.0, 0.3]).unwrap();
        // momentum 1 copies the batch statistics into the running stats
        let (yt, _, stats) = batch_norm(&x, &w, &b, &RunningStats::new(3), NormMode::Train, 1.0).unwrap();
        let (ye, _, _) = batch_norm(&x, &w, &b, &stats, NormMode::Eval, 1.0).unwrap();
        for (a, c) in yt.data().iter().zip(ye.data()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_norm_needs_two_samples_in_train() {
        let x = Tensor::zeros(&[1, 2, 2, 2]);
        let r = batch_norm(&x, &Tensor::zeros(&[2]), &Tensor::zeros(&[2]), &RunningStats::new(2), NormMode::Train, 0.1);
        assert!(matches!(r, Err(Error::DegenerateBatch(1))));
    }
}
