//! Synthetic multi-dataset benchmark: moving ellipses with per-dataset
//! contrast, size, density and noise, written in the CTC layout.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ctc::frame_file_name;
use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, RawImage};
use crate::imageio::write_tiff16;
use crate::rng::{stream_id, stream_rng};

/// Appearance and motion regime of one pseudo-dataset. Intensities are in
/// [0, 1] before the raw mapping `offset + gain * value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoDataset {
    pub name: String,
    pub sequences: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub min_cells: usize,
    pub max_cells: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Largest major/minor axis ratio.
    pub elongation: f64,
    pub foreground: f64,
    pub background: f64,
    pub noise: f64,
    /// Largest displacement per frame in pixels.
    pub speed: f64,
    pub raw_offset: f64,
    pub raw_gain: f64,
}

impl PseudoDataset {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| Err(Error::Config(format!("pseudo-dataset '{}': {why}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("invalid name");
        }
        if self.sequences == 0 || self.frames == 0 || self.height < 8 || self.width < 8 {
            return bad("needs sequences, frames and at least 8x8 pixels");
        }
        if self.min_cells > self.max_cells || self.max_cells == 0 {
            return bad("cell count range is empty");
        }
        if !(0.5 <= self.min_radius && self.min_radius <= self.max_radius) || 2.0 * self.max_radius + 2.0 >= self.height.min(self.width) as f64 {
            return bad("radius range does not fit the frame");
        }
        if self.elongation < 1.0 || self.noise < 0.0 || self.speed < 0.0 || self.raw_gain <= 0.0 {
            return bad("elongation >= 1, noise >= 0, speed >= 0 and gain > 0 are required");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub datasets: Vec<PseudoDataset>,
}

impl CorpusSpec {
    /// Four regimes: a large bright dataset, a small one with inverted
    /// polarity, a small crowded one with tiny touching cells, and a small
    /// dim noisy one.
    pub fn benchmark() -> Self {
        let base = PseudoDataset {
            name: String::new(),
            sequences: 1,
            frames: 30,
            height: 64,
            width: 64,
            min_cells: 3,
            max_cells: 6,
            min_radius: 6.0,
            max_radius: 10.0,
            elongation: 1.6,
            foreground: 0.8,
            background: 0.2,
            noise: 0.05,
            speed: 1.0,
            raw_offset: 800.0,
            raw_gain: 2400.0,
        };
        Self {
            datasets: vec![
                PseudoDataset { name: "bright-sparse".into(), sequences: 16, ..base.clone() },
                PseudoDataset {
                    name: "dark-inverted".into(),
                    min_radius: 5.0,
                    max_radius: 9.0,
                    foreground: 0.2,
                    background: 0.75,
                    raw_offset: 3000.0,
                    raw_gain: 1500.0,
                    ..base.clone()
                },
                PseudoDataset {
                    name: "small-crowded".into(),
                    min_cells: 12,
                    max_cells: 18,
                    min_radius: 3.0,
                    max_radius: 5.0,
                    elongation: 1.3,
                    foreground: 0.7,
                    background: 0.3,
                    raw_offset: 200.0,
                    raw_gain: 9000.0,
                    ..base.clone()
                },
                PseudoDataset {
                    name: "dim-noisy".into(),
                    min_radius: 6.0,
                    max_radius: 9.0,
                    foreground: 0.45,
                    background: 0.3,
                    noise: 0.09,
                    raw_offset: 100.0,
                    raw_gain: 600.0,
                    ..base
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("corpus has no datasets".into()));
        }
        for (i, d) in self.datasets.iter().enumerate() {
            d.validate()?;
            if self.datasets[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::Config(format!("duplicate pseudo-dataset '{}'", d.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    center: (f64, f64),
    velocity: (f64, f64),
    axes: (f64, f64),
    angle: f64,
    spin: f64,
    brightness: f64,
}

/// Reflects `x` into `[lo, hi]` (a ball bouncing between walls).
fn bounce(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let t = (x - lo).rem_euclid(2.0 * span);
    lo + if t > span { 2.0 * span - t } else { t }
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub raw: RawImage,
    pub labels: LabelMap,
    /// Intensities in [0, 1] before the raw mapping and quantization.
    pub clean: Grid<f64>,
}

/// Renders one sequence. Cell `k` carries label `k + 1` in every frame, so
/// the label maps double as tracking ground truth.
pub fn render_sequence(ds: &PseudoDataset, sequence: usize, seed: u64) -> Vec<SynthFrame> {
    let mut rng = stream_rng(seed, stream_id(&format!("synth/{}/{sequence}", ds.name)));
    let (h, w) = (ds.height as f64, ds.width as f64);
    let count = rng.gen_range(ds.min_cells..=ds.max_cells);
    let margin = ds.max_radius + 1.0;
    let cells: Vec<Cell> = (0..count)
        .map(|_| {
            let major = rng.gen_range(ds.min_radius..=ds.max_radius);
            let minor = (major / rng.gen_range(1.0..=ds.elongation)).max(0.5);
            let heading = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = rng.gen_range(0.0..=ds.speed);
            Cell {
                center: (rng.gen_range(margin..=h - margin), rng.gen_range(margin..=w - margin)),
                velocity: (speed * heading.sin(), speed * heading.cos()),
                axes: (major, minor),
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                spin: rng.gen_range(-0.05..=0.05),
                brightness: rng.gen_range(0.85..=1.15),
            }
        })
        .collect();
    let noise = Normal::new(0.0, ds.noise.max(0.0)).expect("finite std");
    (0..ds.frames)
        .map(|t| {
            let tf = t as f64;
            let mut labels: LabelMap = Grid::filled(ds.height, ds.width, 0);
            let mut value: Grid<f64> = Grid::filled(ds.height, ds.width, ds.background);
            for (k, c) in cells.iter().enumerate() {
                let cr = bounce(c.center.0 + c.velocity.0 * tf, margin, h - margin);
                let cc = bounce(c.center.1 + c.velocity.1 * tf, margin, w - margin);
                let (sin, cos) = (c.angle + c.spin * tf).sin_cos();
                let reach = c.axes.0.ceil() as isize + 1;
                for r in (cr as isize - reach).max(0)..=(cr as isize + reach).min(ds.height as isize - 1) {
                    for col in (cc as isize - reach).max(0)..=(cc as isize + reach).min(ds.width as isize - 1) {
                        let (dy, dx) = (r as f64 - cr, col as f64 - cc);
                        let u = (dx * cos + dy * sin) / c.axes.0;
                        let v = (-dx * sin + dy * cos) / c.axes.1;
                        let q = u * u + v * v;
                        if q <= 1.0 {
                            labels.set(r as usize, col as usize, k as u32 + 1);
                            // slightly brighter core, dimmer rim
                            let shade = c.brightness * (1.05 - 0.1 * q);
                            value.set(r as usize, col as usize, ds.background + (ds.foreground - ds.background) * shade);
                        }
                    }
                }
            }
            let clean = box_blur(&value);
            let raw = clean.map(|&v| {
                let noisy = v + noise.sample(&mut rng);
                (ds.raw_offset + ds.raw_gain * noisy).round().clamp(0.0, 65535.0) as u16
            });
            SynthFrame { raw, labels, clean }
        })
        .collect()
}

/// 3x3 mean filter with edge clamping.
fn box_blur(g: &Grid<f64>) -> Grid<f64> {
    let (h, w) = g.shape();
    Grid::from_fn(h, w, |r, c| {
        let mut sum = 0.0;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                let rr = (r as isize + dr).clamp(0, h as isize - 1) as usize;
                let cc = (c as isize + dc).clamp(0, w as isize - 1) as usize;
                sum += g.get(rr, cc);
            }
        }
        sum / 9.0
    })
}

/// Writes every pseudo-dataset under `root/<name>` with full GT
/// annotations; returns the dataset roots.
pub fn make_synthetic_corpus(spec: &CorpusSpec, root: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    spec.validate()?;
    let mut roots = Vec::with_capacity(spec.datasets.len());
    for ds in &spec.datasets {
        let droot = root.join(&ds.name);
        for s in 0..ds.sequences {
            let seq = format!("{:02}", s + 1);
            let frames_dir = droot.join(&seq);
            let seg_dir = droot.join(format!("{seq}_GT")).join("SEG");
            fs::create_dir_all(&frames_dir)?;
            fs::create_dir_all(&seg_dir)?;
            for (t, f) in render_sequence(ds, s, seed).into_iter().enumerate() {
                write_tiff16(&frames_dir.join(frame_file_name("t", t, ds.frames)), &[f.raw])?;
                let labels = f.labels.map(|&v| v as u16);
                write_tiff16(&seg_dir.join(frame_file_name("man_seg", t, ds.frames)), &[labels])?;
            }
        }
        roots.push(droot);
    }
    Ok(roots)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounce_stays_inside() {
        for i in -50..50 {
            let x = bounce(i as f64 * 0.7, 2.0, 5.0);
            assert!((2.0..=5.0).contains(&x));
        }
        assert_eq!(bounce(6.0, 2.0, 5.0), 4.0);
    }

    #[test]
    fn rendering_is_deterministic_and_labelled() {
        let spec = CorpusSpec::benchmark();
        spec.validate().unwrap();
        let ds = &spec.datasets[2];
        let a = render_sequence(ds, 0, 3);
        assert_eq!(a, render_sequence(ds, 0, 3));
        assert_ne!(a, render_sequence(ds, 0, 4));
        assert_eq!(a.len(), ds.frames);
        assert!(a.iter().all(|f| f.labels.iter().any(|&v| v != 0)));
    }

    #[test]
    fn inverted_dataset_has_dark_cells() {
        let spec = CorpusSpec::benchmark();
        let f = &render_sequence(&spec.datasets[1], 0, 1)[0];
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for (v, &l) in f.raw.iter().zip(f.labels.iter()) {
            if l != 0 {
                inside += *v as f64;
                n_in += 1;
            } else {
                outside += *v as f64;
                n_out += 1;
            }
        }
        assert!(inside / (n_in as f64) < outside / (n_out as f64));
    }
}
