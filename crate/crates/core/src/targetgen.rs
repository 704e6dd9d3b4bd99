//! Three-class (background / boundary / cell) training targets from instance
//! label maps, built from binary dilation and erosion.

use serde::{Deserialize, Serialize};

use crate::grid::{instance_ids, Class, Grid, LabelMap, Mask, TertiaryMap};

/// Structuring element of a single morphology iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Element {
    /// 4-connected cross.
    Cross,
    /// 8-connected 3x3 square.
    #[default]
    Square,
}

impl Element {
    fn offsets(self) -> &'static [(isize, isize)] {
        const CROSS: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
        const SQUARE: [(isize, isize); 9] =
            [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];
        match self {
            Element::Cross => &CROSS,
            Element::Square => &SQUARE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MorphParams {
    pub dilate_iters: usize,
    pub erode_iters: usize,
    /// Chebyshev distance within which a band pixel counts as touching
    /// another instance.
    pub contact_distance: usize,
    pub element: Element,
}

impl Default for MorphParams {
    fn default() -> Self {
        Self::two_d()
    }
}

impl MorphParams {
    pub fn two_d() -> Self {
        Self { dilate_iters: 2, erode_iters: 2, contact_distance: 2, element: Element::Square }
    }

    /// Parameters for planes sliced from 3D stacks (wider dilation band).
    pub fn three_d() -> Self {
        Self { dilate_iters: 5, ..Self::two_d() }
    }
}

fn dilate_once(mask: &Mask, element: Element) -> Mask {
    let offsets = element.offsets();
    Grid::from_fn(mask.height(), mask.width(), |r, c| {
        offsets
            .iter()
            .any(|&(dr, dc)| mask.get_signed(r as isize + dr, c as isize + dc).copied().unwrap_or(false))
    })
}

fn erode_once(mask: &Mask, element: Element) -> Mask {
    let offsets = element.offsets();
    Grid::from_fn(mask.height(), mask.width(), |r, c| {
        offsets
            .iter()
            .all(|&(dr, dc)| mask.get_signed(r as isize + dr, c as isize + dc).copied().unwrap_or(false))
    })
}

/// Iterated binary dilation; pixels outside the image count as unset.
pub fn dilate(mask: &Mask, iters: usize, element: Element) -> Mask {
    let mut out = mask.clone();
    for _ in 0..iters {
        out = dilate_once(&out, element);
    }
    out
}

/// Iterated binary erosion; pixels outside the image count as unset, so
/// foreground touching the image border erodes away.
pub fn erode(mask: &Mask, iters: usize, element: Element) -> Mask {
    let mut out = mask.clone();
    for _ in 0..iters {
        out = erode_once(&out, element);
    }
    out
}

/// Window of the label map that contains an instance plus a margin.
struct Window {
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
}

fn bounding_window(labels: &LabelMap, id: u32, margin: usize) -> Option<Window> {
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0, usize::MAX, 0);
    for (r, c, &v) in labels.indexed() {
        if v == id {
            rmin = rmin.min(r);
            rmax = rmax.max(r);
            cmin = cmin.min(c);
            cmax = cmax.max(c);
        }
    }
    if rmin == usize::MAX {
        return None;
    }
    let r0 = rmin.saturating_sub(margin);
    let c0 = cmin.saturating_sub(margin);
    let r1 = (rmax + margin + 1).min(labels.height());
    let c1 = (cmax + margin + 1).min(labels.width());
    Some(Window { r0, c0, h: r1 - r0, w: c1 - c0 })
}

fn touches_other(labels: &LabelMap, r: usize, c: usize, id: u32, dist: usize) -> bool {
    let d = dist as isize;
    for dr in -d..=d {
        for dc in -d..=d {
            if let Some(&v) = labels.get_signed(r as isize + dr, c as isize + dc) {
                if v != 0 && v != id {
                    return true;
                }
            }
        }
    }
    false
}

/// Converts an instance label map into the three-class training target.
///
/// For every instance: background pixels reached by dilating the instance
/// become boundary; the instance pixels become cell; pixels of the erosion
/// band (instance minus its erosion) lying within `contact_distance` of a
/// different instance become boundary.
pub fn build_tertiary(labels: &LabelMap, params: &MorphParams) -> TertiaryMap {
    let mut out = TertiaryMap::new(labels.height(), labels.width());
    // The window margin must cover the dilation reach and leave at least one
    // unset pixel around the instance so erosion inside the window matches
    // erosion over the full image.
    let margin = params.dilate_iters.max(1) + 1;
    for id in instance_ids(labels) {
        let Some(win) = bounding_window(labels, id, margin) else { continue };
        let mask = Grid::from_fn(win.h, win.w, |r, c| *labels.get(win.r0 + r, win.c0 + c) == id);
        let dilated = dilate(&mask, params.dilate_iters, params.element);
        let eroded = erode(&mask, params.erode_iters, params.element);
        for r in 0..win.h {
            for c in 0..win.w {
                let (gr, gc) = (win.r0 + r, win.c0 + c);
                if *dilated.get(r, c) && *labels.get(gr, gc) == 0 {
                    out.set(gr, gc, Class::Boundary);
                }
            }
        }
        for r in 0..win.h {
            for c in 0..win.w {
                if *mask.get(r, c) {
                    out.set(win.r0 + r, win.c0 + c, Class::Cell);
                }
            }
        }
        for r in 0..win.h {
            for c in 0..win.w {
                let (gr, gc) = (win.r0 + r, win.c0 + c);
                if *mask.get(r, c) && !*eroded.get(r, c) && touches_other(labels, gr, gc, id, params.contact_distance) {
                    out.set(gr, gc, Class::Boundary);
                }
            }
        }
    }
    out
}

/// Per-class pixel counts `[background, boundary, cell]`.
pub fn class_histogram(map: &TertiaryMap) -> [usize; 3] {
    let mut h = [0; 3];
    for &c in map.iter() {
        h[c.code() as usize] += 1;
    }
    h
}
