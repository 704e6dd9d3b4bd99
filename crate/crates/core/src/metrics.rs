//! Jaccard and SEG scores.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask};

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both are empty.
pub fn jaccard(a: &Mask, b: &Mask) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("masks {:?} and {:?} differ", a.shape(), b.shape())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b.iter()) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// SEG outcome of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSeg {
    /// Mean over ground-truth objects; `None` when the frame has none.
    pub seg: Option<f64>,
    pub gt_objects: usize,
    pub matched: usize,
}

/// Each ground-truth object is matched to the predicted object covering
/// strictly more than half of it; its score is the Jaccard index of the
/// pair, or 0 without a match. The frame score is the mean over objects.
pub fn seg_frame(gt: &LabelMap, pred: &LabelMap) -> Result<FrameSeg> {
    if gt.shape() != pred.shape() {
        return Err(Error::Shape(format!("ground truth {:?} and prediction {:?} differ", gt.shape(), pred.shape())));
    }
    let mut gt_area: HashMap<u32, usize> = HashMap::new();
    // Objects in raster order of their first pixel, so the sum below does
    // not depend on how objects are numbered.
    let mut gt_order: Vec<u32> = Vec::new();
    let mut pred_area: HashMap<u32, usize> = HashMap::new();
    let mut overlap: HashMap<(u32, u32), usize> = HashMap::new();
    for (&g, &p) in gt.iter().zip(pred.iter()) {
        if g != 0 {
            let area = gt_area.entry(g).or_default();
            if *area == 0 {
                gt_order.push(g);
            }
            *area += 1;
        }
        if p != 0 {
            *pred_area.entry(p).or_default() += 1;
        }
        if g != 0 && p != 0 {
            *overlap.entry((g, p)).or_default() += 1;
        }
    }
    if gt_area.is_empty() {
        return Ok(FrameSeg { seg: None, gt_objects: 0, matched: 0 });
    }
    let mut best: HashMap<u32, (u32, usize)> = HashMap::new();
    for (&(g, p), &ov) in &overlap {
        if 2 * ov > gt_area[&g] {
            best.insert(g, (p, ov));
        }
    }
    let mut total = 0.0;
    for g in &gt_order {
        let area = gt_area[g];
        if let Some(&(p, ov)) = best.get(g) {
            total += ov as f64 / (area + pred_area[&p] - ov) as f64;
        }
    }
    Ok(FrameSeg { seg: Some(total / gt_area.len() as f64), gt_objects: gt_area.len(), matched: best.len() })
}

/// Frame SEG, `None` for frames without ground-truth objects.
pub fn seg_score(gt: &LabelMap, pred: &LabelMap) -> Result<Option<f64>> {
    Ok(seg_frame(gt, pred)?.seg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub dataset: String,
    pub sequence: String,
    pub frame: usize,
    pub result: FrameSeg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub dataset: String,
    /// Mean over scored frames; `None` when no frame had objects.
    pub mean: Option<f64>,
    pub frames_scored: usize,
    pub gt_objects: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    pub frames: Vec<FrameRecord>,
    pub datasets: Vec<DatasetSummary>,
    /// Unweighted mean of the dataset means.
    pub mean: Option<f64>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn summarize_dataset(dataset: &str, frames: &[FrameRecord]) -> DatasetSummary {
    let own: Vec<&FrameRecord> = frames.iter().filter(|f| f.dataset == dataset).collect();
    DatasetSummary {
        dataset: dataset.to_string(),
        mean: mean(own.iter().filter_map(|f| f.result.seg)),
        frames_scored: own.iter().filter(|f| f.result.seg.is_some()).count(),
        gt_objects: own.iter().map(|f| f.result.gt_objects).sum(),
        matched: own.iter().map(|f| f.result.matched).sum(),
    }
}

/// Per-dataset means over frames with objects, then the unweighted mean over
/// datasets. Datasets appear in order of first occurrence.
pub fn aggregate(frames: Vec<FrameRecord>) -> SegReport {
    let mut names: Vec<String> = Vec::new();
    for f in &frames {
        if !names.contains(&f.dataset) {
            names.push(f.dataset.clone());
        }
    }
    let datasets: Vec<DatasetSummary> = names.iter().map(|n| summarize_dataset(n, &frames)).collect();
    let mean = mean(datasets.iter().filter_map(|d| d.mean));
    SegReport { frames, datasets, mean }
}

impl SegReport {
    pub fn dataset_mean(&self, name: &str) -> Option<f64> {
        self.datasets.iter().find(|d| d.dataset == name).and_then(|d| d.mean)
    }

    /// CSV with one row per frame: dataset, sequence, frame, seg (empty when
    /// the frame has no objects).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["dataset", "sequence", "frame", "seg"])?;
        for f in &self.frames {
            let seg = f.result.seg.map(|s| format!("{s:.6}")).unwrap_or_default();
            w.write_record([f.dataset.as_str(), f.sequence.as_str(), &f.frame.to_string(), &seg])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON summary: dataset means and the global mean.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            datasets: &'a [DatasetSummary],
            mean: Option<f64>,
        }
        std::fs::write(path, serde_json::to_string_pretty(&Summary { datasets: &self.datasets, mean: self.mean })?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn row(ids: &[u32]) -> LabelMap {
        Grid::from_vec(1, ids.len(), ids.to_vec()).unwrap()
    }

    #[test]
    fn jaccard_cases() {
        let a = Grid::from_fn(1, 20, |_, c| c < 10);
        let b = Grid::from_fn(1, 20, |_, c| (4..14).contains(&c));
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &a.map(|v| !v)).unwrap(), 0.0);
        assert!((jaccard(&a, &b).unwrap() - 6.0 / 14.0).abs() < 1e-15);
        let empty = Grid::filled(1, 3, false);
        assert_eq!(jaccard(&empty, &empty).unwrap(), 0.0);
    }

    #[test]
    fn exactly_half_coverage_is_not_a_match() {
        let gt = row(&[1; 10]);
        let pred = row(&[2, 2, 2, 2, 2, 0, 0, 0, 0, 0]);
        assert_eq!(seg_score(&gt, &pred).unwrap(), Some(0.0));
    }

    #[test]
    fn six_of_ten_overlap() {
        let mut g = vec![1u32; 10];
        g.extend([0; 4]);
        let mut p = vec![0u32; 4];
        p.extend([5; 10]);
        assert!((seg_score(&row(&g), &row(&p)).unwrap().unwrap() - 6.0 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let gt = row(&[0, 1, 1, 2, 0, 3]);
        assert_eq!(seg_score(&gt, &gt).unwrap(), Some(1.0));
        assert_eq!(seg_score(&row(&[0, 0]), &row(&[1, 1])).unwrap(), None);
        assert!(seg_score(&row(&[0]), &row(&[0, 0])).is_err());
    }

    fn rec(dataset: &str, seg: Option<f64>) -> FrameRecord {
        FrameRecord { dataset: dataset.into(), sequence: "01".into(), frame: 0, result: FrameSeg { seg, gt_objects: 1, matched: 0 } }
    }

    #[test]
    fn aggregate_is_unweighted_over_datasets() {
        let r = aggregate(vec![rec("a", Some(0.4)), rec("b", Some(0.8)), rec("b", Some(0.8)), rec("b", None)]);
        assert!((r.mean.unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(r.datasets[1].frames_scored, 2);
        let one = aggregate(vec![rec("a", Some(0.3))]);
        assert_eq!(one.mean, Some(0.3));
        let many = aggregate((0..13).map(|i| rec(&format!("d{i}"), Some(0.7))).collect());
        assert!((many.mean.unwrap() - 0.7).abs() < 1e-12);
    }
}
