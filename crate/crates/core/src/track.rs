//! Frame-to-frame cell tracking: per-instance features, gated optimal
//! assignment, track lifecycle and relabeling of masks by track id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{instances_in_raster_order, Grid, LabelMap};

/// One line of a track file: label, first frame, last frame, parent label
/// (0 for none).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u32,
    pub begin: usize,
    pub end: usize,
    pub parent: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellFeatures {
    pub id: u32,
    pub centroid: (f64, f64),
    pub weighted_centroid: (f64, f64),
    pub area: usize,
    pub max_intensity: f64,
    pub equivalent_radius: f64,
    pub solidity: f64,
    pub aspect_ratio: f64,
}

pub const FEATURE_COUNT: usize = 9;

impl CellFeatures {
    fn vector(&self) -> [f64; FEATURE_COUNT] {
        [
            self.centroid.0,
            self.centroid.1,
            self.weighted_centroid.0,
            self.weighted_centroid.1,
            self.area as f64,
            self.max_intensity,
            self.equivalent_radius,
            self.solidity,
            self.aspect_ratio,
        ]
    }

    pub fn distance(&self, other: &CellFeatures) -> f64 {
        (self.centroid.0 - other.centroid.0).hypot(self.centroid.1 - other.centroid.1)
    }
}

/// Twice the signed area of the triangle (o, a, b).
fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Area of the convex hull of `points` (monotone chain).
pub fn convex_hull_area(points: &[(f64, f64)]) -> f64 {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let n = hull.len();
    let twice: f64 = (0..n).map(|i| {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        a.0 * b.1 - b.0 * a.1
    }).sum();
    twice.abs() / 2.0
}

/// Features of every instance, in id order. Pixels are unit squares: the
/// hull is taken over pixel corners and each pixel contributes its own
/// second moment of 1/12 per axis.
pub fn extract_features(m: &LabelMap, img: &Grid<f64>) -> Result<Vec<CellFeatures>> {
    if m.shape() != img.shape() {
        return Err(Error::Shape(format!("mask {:?} and image {:?} differ", m.shape(), img.shape())));
    }
    let mut pixels: BTreeMap<u32, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (r, c, &id) in m.indexed() {
        if id != 0 {
            pixels.entry(id).or_default().push((r, c, *img.get(r, c)));
        }
    }
    let mut out = Vec::with_capacity(pixels.len());
    for (id, px) in pixels {
        let n = px.len() as f64;
        let cr = px.iter().map(|p| p.0 as f64).sum::<f64>() / n;
        let cc = px.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        let mass: f64 = px.iter().map(|p| p.2).sum();
        let weighted_centroid = if mass > 0.0 {
            (px.iter().map(|p| p.0 as f64 * p.2).sum::<f64>() / mass, px.iter().map(|p| p.1 as f64 * p.2).sum::<f64>() / mass)
        } else {
            (cr, cc)
        };
        let max_intensity = px.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);

        let corners: BTreeSet<(usize, usize)> =
            px.iter().flat_map(|&(r, c, _)| [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]).collect();
        let corners: Vec<(f64, f64)> = corners.into_iter().map(|(r, c)| (r as f64, c as f64)).collect();
        let hull = convex_hull_area(&corners);
        let solidity = if hull > 0.0 { (n / hull).min(1.0) } else { 1.0 };

        let var_r = px.iter().map(|p| (p.0 as f64 - cr).powi(2)).sum::<f64>() / n + 1.0 / 12.0;
        let var_c = px.iter().map(|p| (p.1 as f64 - cc).powi(2)).sum::<f64>() / n + 1.0 / 12.0;
        let cov = px.iter().map(|p| (p.0 as f64 - cr) * (p.1 as f64 - cc)).sum::<f64>() / n;
        let half_tr = (var_r + var_c) / 2.0;
        let disc = (((var_r - var_c) / 2.0).powi(2) + cov * cov).sqrt();
        let aspect_ratio = ((half_tr + disc) / (half_tr - disc)).sqrt().max(1.0);

        out.push(CellFeatures {
            id,
            centroid: (cr, cc),
            weighted_centroid,
            area: px.len(),
            max_intensity,
            equivalent_radius: (n / std::f64::consts::PI).sqrt(),
            solidity,
            aspect_ratio,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureWeights {
    pub centroid: f64,
    pub weighted_centroid: f64,
    pub area: f64,
    pub max_intensity: f64,
    pub equivalent_radius: f64,
    pub solidity: f64,
    pub aspect_ratio: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self {
            centroid: 1.0,
            weighted_centroid: 1.0,
            area: 0.5,
            max_intensity: 0.5,
            equivalent_radius: 0.5,
            solidity: 0.5,
            aspect_ratio: 0.5,
        }
    }
}

impl FeatureWeights {
    fn vector(&self) -> [f64; FEATURE_COUNT] {
        [
            self.centroid,
            self.centroid,
            self.weighted_centroid,
            self.weighted_centroid,
            self.area,
            self.max_intensity,
            self.equivalent_radius,
            self.solidity,
            self.aspect_ratio,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchParams {
    pub gate_radius: f64,
    pub weights: FeatureWeights,
    /// z-score every feature over the cells of both frames.
    pub normalize: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { gate_radius: 50.0, weights: FeatureWeights::default(), normalize: true }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.vector();
        if !(self.gate_radius > 0.0 && self.gate_radius.is_finite()) || ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("gate radius must be positive and feature weights non-negative".into()));
        }
        Ok(())
    }
}

/// Cost matrix between two frames; `None` marks pairs outside the gate.
pub fn cost_matrix(a: &[CellFeatures], b: &[CellFeatures], p: &MatchParams) -> Vec<Vec<Option<f64>>> {
    let va: Vec<[f64; FEATURE_COUNT]> = a.iter().map(CellFeatures::vector).collect();
    let vb: Vec<[f64; FEATURE_COUNT]> = b.iter().map(CellFeatures::vector).collect();
    let mut scale = [1.0; FEATURE_COUNT];
    let mut shift = [0.0; FEATURE_COUNT];
    let mut active = [true; FEATURE_COUNT];
    if p.normalize {
        let n = (va.len() + vb.len()) as f64;
        for k in 0..FEATURE_COUNT {
            let mean = va.iter().chain(&vb).map(|v| v[k]).sum::<f64>() / n;
            let var = va.iter().chain(&vb).map(|v| (v[k] - mean).powi(2)).sum::<f64>() / n;
            shift[k] = mean;
            if var > 0.0 {
                scale[k] = 1.0 / var.sqrt();
            } else {
                active[k] = false;
            }
        }
    }
    let w = p.weights.vector();
    a.iter()
        .zip(&va)
        .map(|(fa, xa)| {
            b.iter()
                .zip(&vb)
                .map(|(fb, xb)| {
                    if fa.distance(fb) > p.gate_radius {
                        return None;
                    }
                    let s: f64 = (0..FEATURE_COUNT)
                        .filter(|&k| active[k])
                        .map(|k| w[k] * ((xa[k] - shift[k]) * scale[k] - (xb[k] - shift[k]) * scale[k]).powi(2))
                        .sum();
                    Some(s.sqrt())
                })
                .collect()
        })
        .collect()
}

/// Minimum-cost perfect assignment on a square matrix (Hungarian method
/// with potentials). Returns the column assigned to each row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

/// Among all one-to-one matchings of gated pairs, the one with the most
/// pairs, and among those the smallest total cost. Returns index pairs.
pub fn optimal_matching(costs: &[Vec<Option<f64>>], m: usize) -> Vec<(usize, usize)> {
    let n = costs.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let max_cost = costs.iter().flatten().flatten().fold(0.0f64, |a, &c| a.max(c));
    // Leaving a cell unmatched costs more than any rearrangement of the
    // matched costs can save, so cardinality dominates.
    let skip = (n.min(m) as f64 + 1.0) * (max_cost + 1.0);
    let forbidden = 4.0 * (n + m) as f64 * skip;
    let size = n + m;
    let mut square = vec![vec![0.0; size]; size];
    for i in 0..size {
        for j in 0..size {
            square[i][j] = match (i < n, j < m) {
                (true, true) => costs[i][j].unwrap_or(forbidden),
                (true, false) => if j - m == i { skip } else { forbidden },
                (false, true) => if i - n == j { skip } else { forbidden },
                (false, false) => 0.0,
            };
        }
    }
    let assign = hungarian(&square);
    (0..n).filter(|&i| assign[i] < m && costs[i][assign[i]].is_some()).map(|i| (i, assign[i])).collect()
}

/// Matches cells of consecutive frames; returns `(id in a, id in b)` pairs.
pub fn match_frames(a: &[CellFeatures], b: &[CellFeatures], p: &MatchParams) -> Vec<(u32, u32)> {
    let costs = cost_matrix(a, b, p);
    let mut pairs: Vec<(u32, u32)> = optimal_matching(&costs, b.len()).into_iter().map(|(i, j)| (a[i].id, b[j].id)).collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub tracks: Vec<TrackRecord>,
    /// Per frame: instance id to track id.
    pub frame_maps: Vec<BTreeMap<u32, u32>>,
}

/// Chains matches into tracks. `instances[t]` lists the ids of frame `t` in
/// raster order; `matches[t]` pairs frame `t` with frame `t + 1`. Track ids
/// follow birth order (frame, then raster order).
pub fn build_tracks(instances: &[Vec<u32>], matches: &[Vec<(u32, u32)>]) -> Result<TrackSet> {
    if matches.len() + 1 != instances.len().max(1) {
        return Err(Error::InconsistentMatches(format!(
            "{} frames need {} match lists, got {}",
            instances.len(),
            instances.len().saturating_sub(1),
            matches.len()
        )));
    }
    let mut tracks: Vec<TrackRecord> = Vec::new();
    let mut frame_maps: Vec<BTreeMap<u32, u32>> = Vec::with_capacity(instances.len());
    for (t, ids) in instances.iter().enumerate() {
        let mut predecessor: BTreeMap<u32, u32> = BTreeMap::new();
        if t > 0 {
            let prev: BTreeSet<u32> = instances[t - 1].iter().copied().collect();
            let cur: BTreeSet<u32> = ids.iter().copied().collect();
            let mut used_prev = BTreeSet::new();
            for &(a, b) in &matches[t - 1] {
                if !prev.contains(&a) || !cur.contains(&b) {
                    return Err(Error::InconsistentMatches(format!("pair ({a}, {b}) between frames {} and {t} names a missing instance", t - 1)));
                }
                if !used_prev.insert(a) || predecessor.insert(b, a).is_some() {
                    return Err(Error::InconsistentMatches(format!("instance used twice between frames {} and {t}", t - 1)));
                }
            }
        }
        let mut map = BTreeMap::new();
        for &id in ids {
            let track = match predecessor.get(&id) {
                Some(a) => {
                    let tr = frame_maps[t - 1][a];
                    tracks[tr as usize - 1].end = t;
                    tr
                }
                None => {
                    let tr = tracks.len() as u32 + 1;
                    tracks.push(TrackRecord { id: tr, begin: t, end: t, parent: 0 });
                    tr
                }
            };
            map.insert(id, track);
        }
        frame_maps.push(map);
    }
    Ok(TrackSet { tracks, frame_maps })
}

/// Replaces instance ids with track ids; pixel support is unchanged.
pub fn relabel_by_track(masks: &[LabelMap], tracks: &TrackSet) -> Result<Vec<LabelMap>> {
    masks
        .iter()
        .enumerate()
        .map(|(t, m)| {
            let map = tracks.frame_maps.get(t).ok_or(Error::UnmappedInstance { frame: t, id: 0 })?;
            let mut out = m.clone();
            for v in out.as_mut_slice() {
                if *v != 0 {
                    *v = *map.get(v).ok_or(Error::UnmappedInstance { frame: t, id: *v })?;
                }
            }
            Ok(out)
        })
        .collect()
}

/// Tracks a sequence of masks with their (normalized) images.
pub fn track_sequence(masks: &[LabelMap], images: &[Grid<f64>], p: &MatchParams) -> Result<(TrackSet, Vec<LabelMap>)> {
    p.validate()?;
    if masks.len() != images.len() {
        return Err(Error::Shape(format!("{} masks for {} images", masks.len(), images.len())));
    }
    let features: Vec<Vec<CellFeatures>> = masks.iter().zip(images).map(|(m, i)| extract_features(m, i)).collect::<Result<_>>()?;
    let matches: Vec<Vec<(u32, u32)>> = features.windows(2).map(|w| match_frames(&w[0], &w[1], p)).collect();
    let instances: Vec<Vec<u32>> = masks.iter().map(instances_in_raster_order).collect();
    let set = build_tracks(&instances, &matches)?;
    let relabeled = relabel_by_track(masks, &set)?;
    Ok((set, relabeled))
}
