#![allow(dead_code)]

use std::collections::BTreeMap;

use cellseg_core::grid::{Grid, LabelMap};
use cellseg_core::track::{CellFeatures, TrackSet};
use cellseg_core::targetgen::{Element, MorphParams};
use rand::seq::SliceRandom;
use rand::Rng;

/// Paints up to `max_instances` random ellipses (later ones overwrite
/// earlier ones) into an `h`×`w` map; instances may touch or overlap.
pub fn random_label_map<R: Rng>(rng: &mut R, h: usize, w: usize, max_instances: u32) -> LabelMap {
    let mut m = LabelMap::new(h, w);
    let n = rng.gen_range(0..=max_instances);
    for id in 1..=n {
        let cr = rng.gen_range(0.0..h as f64);
        let cc = rng.gen_range(0.0..w as f64);
        let ar = rng.gen_range(1.0..(h as f64 / 3.0).max(1.5));
        let ac = rng.gen_range(1.0..(w as f64 / 3.0).max(1.5));
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = ((r as f64 - cr) / ar, (c as f64 - cc) / ac);
                if dr * dr + dc * dc <= 1.0 {
                    m.set(r, c, id);
                }
            }
        }
    }
    m
}

/// Axis-aligned rectangles of side ≥ `min_side` separated by at least
/// `gap` background pixels in Chebyshev distance. Returns the map and the
/// number of instances placed.
pub fn separated_rectangles<R: Rng>(rng: &mut R, h: usize, w: usize, max_instances: u32, min_side: usize, gap: usize) -> (LabelMap, u32) {
    let mut m = LabelMap::new(h, w);
    let mut placed = 0;
    for _ in 0..max_instances * 8 {
        if placed == max_instances {
            break;
        }
        let rh = rng.gen_range(min_side..=(min_side * 3).min(h));
        let rw = rng.gen_range(min_side..=(min_side * 3).min(w));
        let r0 = rng.gen_range(0..=h - rh);
        let c0 = rng.gen_range(0..=w - rw);
        let clear = (r0.saturating_sub(gap)..(r0 + rh + gap).min(h))
            .all(|r| (c0.saturating_sub(gap)..(c0 + rw + gap).min(w)).all(|c| *m.get(r, c) == 0));
        if clear {
            placed += 1;
            for r in r0..r0 + rh {
                for c in c0..c0 + rw {
                    m.set(r, c, placed);
                }
            }
        }
    }
    (m, placed)
}

pub fn grid_from_rows<T: Clone>(rows: &[&[T]]) -> Grid<T> {
    let h = rows.len();
    let w = rows.first().map_or(0, |r| r.len());
    Grid::from_vec(h, w, rows.iter().flat_map(|r| r.iter().cloned()).collect()).unwrap()
}

fn reach(element: Element, dr: isize, dc: isize) -> usize {
    match element {
        Element::Square => dr.unsigned_abs().max(dc.unsigned_abs()),
        Element::Cross => dr.unsigned_abs() + dc.unsigned_abs(),
    }
}

/// Direct per-pixel reading of the target algorithm over the full image:
/// dilation as "some instance pixel within reach", erosion as "every pixel
/// within reach lies inside the image and the instance".
pub fn tertiary_oracle(labels: &LabelMap, p: &MorphParams) -> Grid<u8> {
    let (h, w) = labels.shape();
    let mut out = Grid::<u8>::new(h, w);
    let mut ids: Vec<u32> = labels.iter().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let within = |r: usize, c: usize, d: usize, element: Element, mut f: Box<dyn FnMut(Option<u32>) -> bool + '_>| -> bool {
        let d = d as isize;
        for dr in -d..=d {
            for dc in -d..=d {
                if reach(element, dr, dc) as isize > d {
                    continue;
                }
                if f(labels.get_signed(r as isize + dr, c as isize + dc).copied()) {
                    return true;
                }
            }
        }
        false
    };
    for &id in &ids {
        for r in 0..h {
            for c in 0..w {
                let dilated = within(r, c, p.dilate_iters, p.element, Box::new(|v| v == Some(id)));
                if dilated && *labels.get(r, c) == 0 {
                    out.set(r, c, 1);
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                if *labels.get(r, c) == id {
                    out.set(r, c, 2);
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                if *labels.get(r, c) != id {
                    continue;
                }
                let eroded = !within(r, c, p.erode_iters, p.element, Box::new(|v| v != Some(id)));
                let near_other = within(r, c, p.contact_distance, Element::Square, Box::new(|v| matches!(v, Some(o) if o != 0 && o != id)));
                if !eroded && near_other {
                    out.set(r, c, 1);
                }
            }
        }
    }
    out
}

/// Exhaustive search over partial one-to-one matchings of gated pairs:
/// the largest matching wins, then the cheapest.
pub fn matching_oracle(costs: &[Vec<Option<f64>>], m: usize) -> (usize, f64) {
    fn go(i: usize, costs: &[Vec<Option<f64>>], used: &mut Vec<bool>, size: usize, cost: f64, best: &mut (usize, f64)) {
        if i == costs.len() {
            if size > best.0 || (size == best.0 && cost < best.1) {
                *best = (size, cost);
            }
            return;
        }
        go(i + 1, costs, used, size, cost, best);
        for j in 0..used.len() {
            if let (false, Some(c)) = (used[j], costs[i][j]) {
                used[j] = true;
                go(i + 1, costs, used, size + 1, cost + c, best);
                used[j] = false;
            }
        }
    }
    let mut best = (0, f64::INFINITY);
    go(0, costs, &mut vec![false; m], 0, 0.0, &mut best);
    if best.0 == 0 {
        best.1 = 0.0;
    }
    best
}

pub fn disk_frame(h: usize, w: usize, cells: &[(u32, f64, f64, f64)]) -> (LabelMap, Grid<f64>) {
    let mut m = LabelMap::new(h, w);
    for &(id, cr, cc, radius) in cells {
        for r in 0..h {
            for c in 0..w {
                if (r as f64 - cr).hypot(c as f64 - cc) <= radius {
                    m.set(r, c, id);
                }
            }
        }
    }
    let img = m.map(|&v| if v == 0 { 0.1 } else { 0.5 + 0.04 * (v % 10) as f64 });
    (m, img)
}

pub fn random_cell<R: Rng>(rng: &mut R, id: u32) -> CellFeatures {
    CellFeatures {
        id,
        centroid: (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0)),
        weighted_centroid: (rng.gen_range(0.0..60.0), rng.gen_range(0.0..60.0)),
        area: rng.gen_range(10..200),
        max_intensity: rng.gen_range(0.0..1.0),
        equivalent_radius: rng.gen_range(1.0..8.0),
        solidity: rng.gen_range(0.5..1.0),
        aspect_ratio: rng.gen_range(1.0..3.0),
    }
}

/// Disks drifting along straight lines, with fresh random ids in every
/// frame. `truth[t]` maps each id of frame `t` to its cell.
pub struct MotionSequence {
    pub masks: Vec<LabelMap>,
    pub images: Vec<Grid<f64>>,
    pub truth: Vec<BTreeMap<u32, usize>>,
}

/// `n` (at most 16) cells start on a coarse lattice and move under 0.5 px
/// per frame, so they never meet.
pub fn linear_motion<R: Rng>(rng: &mut R, n: usize, frames: usize) -> MotionSequence {
    let mut slots: Vec<(usize, usize)> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
    slots.shuffle(rng);
    let cells: Vec<(f64, f64, f64, f64, f64)> = slots[..n]
        .iter()
        .map(|&(r, c)| {
            (
                14.0 + 28.0 * r as f64,
                14.0 + 28.0 * c as f64,
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(3.0..7.0),
            )
        })
        .collect();
    let mut seq = MotionSequence { masks: Vec::new(), images: Vec::new(), truth: Vec::new() };
    for t in 0..frames {
        let mut ids: Vec<u32> = (1..=40).collect();
        ids.shuffle(rng);
        let placed: Vec<(u32, f64, f64, f64)> =
            cells.iter().enumerate().map(|(k, c)| (ids[k], c.0 + c.2 * t as f64, c.1 + c.3 * t as f64, c.4)).collect();
        seq.truth.push(placed.iter().enumerate().map(|(k, p)| (p.0, k)).collect());
        let (m, img) = disk_frame(112, 112, &placed);
        seq.masks.push(m);
        seq.images.push(img);
    }
    seq
}

impl MotionSequence {
    /// `(correct, total)` frame-to-frame links of a tracking result.
    pub fn score_links(&self, tracks: &TrackSet) -> (usize, usize) {
        let (mut correct, mut total) = (0, 0);
        for t in 0..self.truth.len().saturating_sub(1) {
            for (&id, &cell) in &self.truth[t] {
                let next = self.truth[t + 1].iter().find(|(_, &k)| k == cell).map(|(&i, _)| i).expect("cell persists");
                total += 1;
                if tracks.frame_maps[t].get(&id).is_some() && tracks.frame_maps[t].get(&id) == tracks.frame_maps[t + 1].get(&next) {
                    correct += 1;
                }
            }
        }
        (correct, total)
    }
}
