//! Whole-frame inference with reflected context.

use crate::augment::mirror_index;
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap};
use crate::nnkit::{MiniUNet, Tensor};
use crate::reconstruct::{reconstruct, score_map, PostParams, ScoreMap};

/// Class scores of a full frame. The frame is reflect-padded by `context`
/// pixels on every side and further on the bottom/right up to a multiple of
/// four, run through the network in evaluation mode and cropped back.
pub fn frame_scores(net: &MiniUNet, image: &Grid<f64>, context: usize) -> Result<ScoreMap> {
    let (h, w) = image.shape();
    if h == 0 || w == 0 {
        return Err(Error::Shape("empty frame".into()));
    }
    let ph = (h + 2 * context).div_ceil(4) * 4;
    let pw = (w + 2 * context).div_ceil(4) * 4;
    let k = context as isize;
    let mut data = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        let sr = mirror_index(r as isize - k, h);
        for c in 0..pw {
            data.push(*image.get(sr, mirror_index(c as isize - k, w)));
        }
    }
    let scores = net.predict(&Tensor::from_vec(&[1, 1, ph, pw], data)?)?;
    let full = score_map(&scores, 0)?;
    Ok(Grid::from_fn(h, w, |r, c| *full.get(r + context, c + context)))
}

/// Frame to instance mask: scores, argmax, components and post-processing.
pub fn segment_frame(net: &MiniUNet, image: &Grid<f64>, context: usize, post: &PostParams) -> Result<LabelMap> {
    Ok(reconstruct(&frame_scores(net, image, context)?, post))
}
