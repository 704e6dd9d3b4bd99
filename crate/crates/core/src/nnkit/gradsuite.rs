//! Finite-difference verification of every operator and of the assembled
//! network, shared by the test suite and the command line.

use rand::Rng;

use crate::error::Result;
use crate::grid::Class;
use crate::rng::{stream_id, stream_rng};

use super::aspp::Aspp;
use super::conv::{conv2d, conv2d_backward, conv_transpose2x2, conv_transpose2x2_backward, Conv2dSpec};
use super::gradcheck::{check_random_probes, GradReport};
use super::loss::{weighted_ce, ClassWeights};
use super::norm::{batch_norm, batch_norm_backward, group_norm, group_norm_backward, NormMode, RunningStats, BN_MOMENTUM};
use super::ops::{
    broadcast_spatial, broadcast_spatial_backward, concat_channels, global_avg_pool, global_avg_pool_backward, maxpool2,
    maxpool2_backward, pixelshuffle, pixelunshuffle, relu, relu_backward, split_channels,
};
use super::tensor::{ParamSet, Tensor};
use super::unet::{Downsample, MiniUNet, NormKind, UNetConfig, Upsample};

/// Probes per operator.
pub const PROBES: usize = 50;
/// Inputs closer than this to a relu kink are not probed.
pub const RELU_BAND: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradReport,
}

fn random_tensor<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
}

fn random_classes<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Class> {
    (0..n).map(|_| Class::ALL[rng.gen_range(0..3)]).collect()
}

fn flatten(parts: &[Tensor]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn unflatten(template: &[Tensor], flat: &[f64]) -> Vec<Tensor> {
    let mut off = 0;
    template
        .iter()
        .map(|t| {
            let n = t.len();
            off += n;
            Tensor::from_vec(t.shape(), flat[off - n..off].to_vec()).expect("sized")
        })
        .collect()
}

/// Checks a function of several tensors. `f` returns the scalar objective,
/// a signature of its non-smooth decisions, and the analytic gradient of
/// the objective with respect to each input.
fn check_parts<R, F>(name: &str, parts: Vec<Tensor>, rng: &mut R, f: F) -> Result<SuiteEntry>
where
    R: Rng + ?Sized,
    F: Fn(&[Tensor]) -> Result<(f64, u64, Vec<Tensor>)>,
{
    let (_, _, grads) = f(&parts)?;
    let analytic = flatten(&grads);
    let values = flatten(&parts);
    let report = check_random_probes(&values, &analytic, PROBES, rng, |v| {
        let (obj, sig, _) = f(&unflatten(&parts, v))?;
        Ok((obj, sig))
    })?;
    Ok(SuiteEntry { name: name.to_string(), report })
}

/// Linear read-out `sum(r * y)` used as the objective of operator checks.
fn readout(y: &Tensor, r: &Tensor) -> f64 {
    y.dot(r)
}

fn sign_signature(t: &Tensor) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for v in t.data() {
        (*v > 0.0).hash(&mut h);
    }
    h.finish()
}

fn hash_indices(ix: &[usize]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    ix.hash(&mut h);
    h.finish()
}

pub fn operator_checks(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = stream_rng(seed, stream_id("gradsuite"));
    let rng = &mut rng;
    let mut out = Vec::new();

    for (label, spec) in [
        ("conv2d 3x3", Conv2dSpec::same(1)),
        ("conv2d 3x3 dilation 2", Conv2dSpec::same(2)),
        ("conv2d 3x3 stride 2", Conv2dSpec::strided()),
        ("conv2d 1x1", Conv2dSpec::pointwise()),
    ] {
        let k = if spec.padding == 0 { 1 } else { 3 };
        let x = random_tensor(&[2, 3, 4, 4], rng);
        let w = random_tensor(&[2, 3, k, k], rng);
        let b = random_tensor(&[2], rng);
        let y0 = conv2d(&x, &w, Some(&b), spec)?;
        let r = random_tensor(y0.shape(), rng);
        out.push(check_parts(label, vec![x, w, b], rng, |p| {
            let y = conv2d(&p[0], &p[1], Some(&p[2]), spec)?;
            let g = conv2d_backward(&p[0], &p[1], spec, &r)?;
            Ok((readout(&y, &r), 0, vec![g.input, g.weight, g.bias]))
        })?);
    }

    {
        let x = random_tensor(&[2, 3, 3, 3], rng);
        let w = random_tensor(&[3, 2, 2, 2], rng);
        let b = random_tensor(&[2], rng);
        let r = random_tensor(&[2, 2, 6, 6], rng);
        out.push(check_parts("transposed conv 2x2", vec![x, w, b], rng, |p| {
            let y = conv_transpose2x2(&p[0], &p[1], &p[2])?;
            let g = conv_transpose2x2_backward(&p[0], &p[1], &r)?;
            Ok((readout(&y, &r), 0, vec![g.input, g.weight, g.bias]))
        })?);
    }

    {
        // Keep inputs outside the exclusion band around the kink.
        let x = random_tensor(&[2, 2, 5, 5], rng).map(|v| if v.abs() < RELU_BAND { v.signum() * 0.5 } else { v });
        let r = random_tensor(x.shape(), rng);
        out.push(check_parts("relu", vec![x], rng, |p| {
            let y = relu(&p[0]);
            Ok((readout(&y, &r), sign_signature(&p[0]), vec![relu_backward(&p[0], &r)]))
        })?);
    }

    {
        let x = random_tensor(&[1, 2, 8, 8], rng);
        let r = random_tensor(&[1, 2, 4, 4], rng);
        out.push(check_parts("maxpool2", vec![x], rng, |p| {
            let (y, argmax) = maxpool2(&p[0])?;
            Ok((readout(&y, &r), hash_indices(&argmax), vec![maxpool2_backward(p[0].shape(), &argmax, &r)]))
        })?);
    }

    {
        let x = random_tensor(&[2, 8, 3, 3], rng);
        let r = random_tensor(&[2, 2, 6, 6], rng);
        out.push(check_parts("pixelshuffle", vec![x], rng, |p| {
            let y = pixelshuffle(&p[0])?;
            Ok((readout(&y, &r), 0, vec![pixelunshuffle(&r)?]))
        })?);
    }

    {
        let a = random_tensor(&[2, 2, 3, 3], rng);
        let b = random_tensor(&[2, 3, 3, 3], rng);
        let r = random_tensor(&[2, 5, 3, 3], rng);
        out.push(check_parts("concat channels", vec![a, b], rng, |p| {
            let y = concat_channels(&[&p[0], &p[1]])?;
            Ok((readout(&y, &r), 0, split_channels(&r, &[2, 3])?))
        })?);
    }

    {
        let x = random_tensor(&[2, 3, 4, 4], rng);
        let r = random_tensor(&[2, 3, 4, 4], rng);
        out.push(check_parts("global pool and broadcast", vec![x], rng, |p| {
            let pooled = global_avg_pool(&p[0])?;
            let y = broadcast_spatial(&pooled, 4, 4)?;
            let g = global_avg_pool_backward(p[0].shape(), &broadcast_spatial_backward(&r)?);
            Ok((readout(&y, &r), 0, vec![g]))
        })?);
    }

    {
        let x = random_tensor(&[2, 4, 3, 3], rng);
        let w = random_tensor(&[4], rng);
        let b = random_tensor(&[4], rng);
        let r = random_tensor(x.shape(), rng);
        out.push(check_parts("group norm", vec![x, w, b], rng, |p| {
            let (y, cache) = group_norm(&p[0], 2, &p[1], &p[2])?;
            let g = group_norm_backward(&cache, 2, &p[1], &r)?;
            Ok((readout(&y, &r), 0, vec![g.input, g.weight, g.bias]))
        })?);
    }

    {
        let x = random_tensor(&[3, 3, 3, 3], rng);
        let w = random_tensor(&[3], rng);
        let b = random_tensor(&[3], rng);
        let r = random_tensor(x.shape(), rng);
        let running = RunningStats::new(3);
        out.push(check_parts("batch norm (train)", vec![x, w, b], rng, |p| {
            let (y, cache, _) = batch_norm(&p[0], &p[1], &p[2], &running, NormMode::Train, BN_MOMENTUM)?;
            let g = batch_norm_backward(&cache, &p[1], &r)?;
            Ok((readout(&y, &r), 0, vec![g.input, g.weight, g.bias]))
        })?);
    }

    {
        let scores = random_tensor(&[2, 3, 4, 4], rng).map(|v| 3.0 * v);
        let targets = random_classes(2 * 16, rng);
        let weights = ClassWeights::default();
        out.push(check_parts("weighted cross-entropy", vec![scores], rng, |p| {
            let (loss, grad) = weighted_ce(&p[0], &targets, &weights)?;
            Ok((loss, 0, vec![grad]))
        })?);
    }

    {
        let aspp = Aspp::new(4, 2, 3);
        let mut params = ParamSet::new();
        aspp.init_params("aspp", rng, &mut params);
        let names: Vec<String> = params.names().cloned().collect();
        let x = random_tensor(&[2, 4, 8, 8], rng);
        let r = random_tensor(&[2, 3, 8, 8], rng);
        let mut parts = vec![x];
        parts.extend(names.iter().map(|n| params.get(n).expect("present").clone()));
        out.push(check_parts("aspp", parts, rng, |p| {
            let mut ps = ParamSet::new();
            for (n, t) in names.iter().zip(&p[1..]) {
                ps.insert(n.clone(), t.clone());
            }
            let (y, cache) = aspp.forward(&ps, "aspp", &p[0])?;
            let mut grads = ParamSet::new();
            let dx = aspp.backward(&ps, "aspp", &cache, &r, &mut grads)?;
            let sig = cache.relu_inputs().map(sign_signature).fold(0u64, |a, s| a.rotate_left(7) ^ s);
            let mut g = vec![dx];
            for n in &names {
                g.push(grads.get(n)?.clone());
            }
            Ok((readout(&y, &r), sig, g))
        })?);
    }
    Ok(out)
}

pub fn all_variants() -> Vec<UNetConfig> {
    let mut out = Vec::new();
    for norm in [NormKind::GroupNorm, NormKind::BatchNorm] {
        for down in [Downsample::MaxPool, Downsample::ConvStride] {
            for up in [Upsample::UpConv, Upsample::PixelShuffle] {
                for aspp in [false, true] {
                    out.push(UNetConfig { norm, down, up, aspp, ..UNetConfig::default() });
                }
            }
        }
    }
    out
}

pub fn variant_label(cfg: &UNetConfig) -> String {
    format!(
        "{}/{}/{}/{}",
        match cfg.norm {
            NormKind::GroupNorm => "groupnorm",
            NormKind::BatchNorm => "batchnorm",
        },
        match cfg.down {
            Downsample::MaxPool => "maxpool",
            Downsample::ConvStride => "convstride",
        },
        match cfg.up {
            Upsample::UpConv => "upconv",
            Upsample::PixelShuffle => "pixelshuffle",
        },
        if cfg.aspp { "aspp" } else { "plain" }
    )
}

/// Whole-network check: weighted cross-entropy of the scores against random
/// targets, probed at random parameters. The input is one 8x8 image (two
/// for batch norm, which needs a batch in train mode).
pub fn network_check(cfg: UNetConfig, seed: u64) -> Result<SuiteEntry> {
    let mut rng = stream_rng(seed, stream_id(&variant_label(&cfg)));
    let net = MiniUNet::new(cfg, &mut rng)?;
    let n = if cfg.norm == NormKind::BatchNorm { 2 } else { 1 };
    let x = random_tensor(&[n, 1, 8, 8], &mut rng);
    let targets = random_classes(n * 64, &mut rng);
    let weights = ClassWeights::default();
    let (scores, cache) = net.forward(&x, NormMode::Train)?;
    let (_, dscores) = weighted_ce(&scores, &targets, &weights)?;
    let analytic = net.backward(&cache, &dscores)?.flatten();
    let values = net.params.flatten();
    let mut probe_net = net.clone();
    let report = check_random_probes(&values, &analytic, PROBES, &mut rng, |v| {
        probe_net.params.assign_flat(v)?;
        let (scores, cache) = probe_net.forward(&x, NormMode::Train)?;
        let (loss, _) = weighted_ce(&scores, &targets, &weights)?;
        Ok((loss, cache.kink_signature()))
    })?;
    Ok(SuiteEntry { name: format!("mini U-Net {}", variant_label(&cfg)), report })
}
