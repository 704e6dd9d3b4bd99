//! Instance reconstruction from three-class score maps.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Class, Grid, LabelMap, TertiaryMap};
use crate::nnkit::Tensor;

/// Per-pixel class scores in (background, boundary, cell) order.
pub type ScoreMap = Grid<[f64; 3]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostParams {
    pub min_area: usize,
    pub max_hole: usize,
    pub connectivity: Connectivity,
    /// Rounds of boundary reclamation; 0 disables it.
    pub reclaim_iters: usize,
}

impl Default for PostParams {
    fn default() -> Self {
        Self { min_area: 20, max_hole: 20, connectivity: Connectivity::Four, reclaim_iters: 0 }
    }
}

/// Score map of one sample of an `(n, 3, h, w)` score tensor.
pub fn score_map(scores: &Tensor, sample: usize) -> Result<ScoreMap> {
    let (n, c, h, w) = scores.dims4()?;
    if c != 3 || sample >= n {
        return Err(Error::Shape(format!("no sample {sample} with 3 classes in {:?}", scores.shape())));
    }
    let hw = h * w;
    let d = &scores.data()[sample * 3 * hw..(sample + 1) * 3 * hw];
    Ok(Grid::from_fn(h, w, |r, col| {
        let p = r * w + col;
        [d[p], d[hw + p], d[2 * hw + p]]
    }))
}

/// Per-pixel argmax; ties go to the smallest class code.
pub fn argmax_classes(scores: &ScoreMap) -> TertiaryMap {
    scores.map(|s| {
        let mut best = 0;
        for k in 1..3 {
            if s[k] > s[best] {
                best = k;
            }
        }
        Class::ALL[best]
    })
}

/// Connected components of `member` pixels; returns component ids (0 for
/// non-members) numbered 1.. in raster order of each component's first pixel.
fn components(h: usize, w: usize, member: impl Fn(usize) -> bool, conn: Connectivity) -> (Vec<u32>, u32) {
    let mut ids = vec![0u32; h * w];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if ids[start] != 0 || !member(start) {
            continue;
        }
        next += 1;
        ids[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for &(dr, dc) in conn.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let q = nr as usize * w + nc as usize;
                if ids[q] == 0 && member(q) {
                    ids[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    (ids, next)
}

/// Connected components of cell-class pixels.
pub fn label_instances(t: &TertiaryMap, conn: Connectivity) -> LabelMap {
    let (h, w) = t.shape();
    let cells = t.as_slice();
    let (ids, _) = components(h, w, |i| cells[i] == Class::Cell, conn);
    Grid::from_vec(h, w, ids).expect("sized")
}

pub fn instance_areas(m: &LabelMap) -> BTreeMap<u32, usize> {
    let mut areas = BTreeMap::new();
    for &v in m.iter().filter(|&&v| v != 0) {
        *areas.entry(v).or_insert(0) += 1;
    }
    areas
}

/// Drops instances smaller than `min_area`; survivors keep their ids.
pub fn remove_small(m: &LabelMap, min_area: usize) -> LabelMap {
    let areas = instance_areas(m);
    m.map(|&v| if v != 0 && areas[&v] < min_area { 0 } else { v })
}

/// Absorbs background components (8-connected) of at most `max_hole` pixels
/// that do not touch the image border and whose 4-neighbours all belong to
/// one instance.
pub fn fill_holes(m: &LabelMap, max_hole: usize) -> LabelMap {
    let (h, w) = m.shape();
    let labels = m.as_slice();
    let (bg, count) = components(h, w, |i| labels[i] == 0, Connectivity::Eight);
    let mut size = vec![0usize; count as usize + 1];
    let mut border = vec![false; count as usize + 1];
    let mut owners: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); count as usize + 1];
    for p in 0..h * w {
        let b = bg[p] as usize;
        if b == 0 {
            continue;
        }
        size[b] += 1;
        let (r, c) = (p / w, p % w);
        if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
            border[b] = true;
        }
        for &(dr, dc) in Connectivity::Four.offsets() {
            if let Some(&v) = m.get_signed(r as isize + dr, c as isize + dc) {
                if v != 0 {
                    owners[b].insert(v);
                }
            }
        }
    }
    let mut out = m.clone();
    for (p, v) in out.as_mut_slice().iter_mut().enumerate() {
        let b = bg[p] as usize;
        if b != 0 && !border[b] && size[b] <= max_hole && owners[b].len() == 1 {
            *v = *owners[b].iter().next().expect("one owner");
        }
    }
    out
}

/// `iters` rounds in which every unassigned boundary-class pixel that is
/// 8-adjacent to exactly one instance joins it.
pub fn reclaim_boundary(m: &LabelMap, t: &TertiaryMap, iters: usize) -> LabelMap {
    let mut cur = m.clone();
    for _ in 0..iters {
        let prev = cur.clone();
        for (r, c, &class) in t.indexed() {
            if class != Class::Boundary || *prev.get(r, c) != 0 {
                continue;
            }
            let mut ids = BTreeSet::new();
            for &(dr, dc) in Connectivity::Eight.offsets() {
                if let Some(&v) = prev.get_signed(r as isize + dr, c as isize + dc) {
                    if v != 0 {
                        ids.insert(v);
                    }
                }
            }
            if ids.len() == 1 {
                cur.set(r, c, *ids.iter().next().expect("one id"));
            }
        }
    }
    cur
}

/// Score map to final instance mask.
pub fn reconstruct(scores: &ScoreMap, p: &PostParams) -> LabelMap {
    let t = argmax_classes(scores);
    let m = label_instances(&t, p.connectivity);
    let m = remove_small(&m, p.min_area);
    let m = fill_holes(&m, p.max_hole);
    reclaim_boundary(&m, &t, p.reclaim_iters)
}
