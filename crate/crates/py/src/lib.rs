//! Python bindings: target generation, reconstruction, SEG scoring,
//! learning-rate schedules, scheme streams, frame matching, the synthetic
//! corpus, training and checkpoint inference. Images and masks cross the
//! boundary as nested lists (rows of pixels).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cellseg_core::grid::{Class, Grid, LabelMap, TertiaryMap};
use cellseg_core::inference::segment_frame;
use cellseg_core::metrics;
use cellseg_core::nnkit::{checkpoint, MiniUNet};
use cellseg_core::optim::LrSchedule;
use cellseg_core::reconstruct::{self, Connectivity, PostParams};
use cellseg_core::schedule::{make_stream, Event, Scheme, SchemeSpec};
use cellseg_core::targetgen::{self, Element, MorphParams};
use cellseg_core::track::{self, MatchParams};
use cellseg_core::trainer::synth::{make_synthetic_corpus, CorpusSpec};
use cellseg_core::trainer::{run_training, RunConfig, RunData};
use cellseg_core::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Converts rows of values into a grid, rejecting ragged input.
pub fn grid_from_rows<T: Clone>(rows: Vec<Vec<T>>) -> Result<Grid<T>, Error> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape("rows differ in length".into()));
    }
    Grid::from_vec(height, width, rows.into_iter().flatten().collect())
}

pub fn grid_to_rows<T: Clone>(g: &Grid<T>) -> Vec<Vec<T>> {
    g.as_slice().chunks(g.width().max(1)).take(g.height()).map(<[T]>::to_vec).collect()
}

fn tertiary_from_codes(rows: Vec<Vec<u8>>) -> Result<TertiaryMap, Error> {
    let codes = grid_from_rows(rows)?;
    let classes: Option<Vec<Class>> = codes.iter().map(|&c| Class::from_code(c)).collect();
    let classes = classes.ok_or_else(|| Error::Shape("class codes must be 0, 1 or 2".into()))?;
    Grid::from_vec(codes.height(), codes.width(), classes)
}

fn parse_connectivity(c: u8) -> Result<Connectivity, Error> {
    match c {
        4 => Ok(Connectivity::Four),
        8 => Ok(Connectivity::Eight),
        _ => Err(Error::Config(format!("connectivity must be 4 or 8, got {c}"))),
    }
}

/// Three-class target (0 background, 1 boundary, 2 cell) of an instance mask.
#[pyfunction]
#[pyo3(signature = (labels, dilate=2, erode=2, contact=2, element="square"))]
fn build_tertiary(labels: Vec<Vec<u32>>, dilate: usize, erode: usize, contact: usize, element: &str) -> PyResult<Vec<Vec<u8>>> {
    let element = match element {
        "square" => Element::Square,
        "cross" => Element::Cross,
        other => return Err(PyValueError::new_err(format!("unknown element '{other}'"))),
    };
    let params = MorphParams { dilate_iters: dilate, erode_iters: erode, contact_distance: contact, element };
    let labels: LabelMap = grid_from_rows(labels).map_err(to_py)?;
    Ok(grid_to_rows(&targetgen::build_tertiary(&labels, &params).map(|c| c.code())))
}

/// Instances as connected components of the cell class.
#[pyfunction]
#[pyo3(signature = (tertiary, connectivity=4))]
fn label_instances(tertiary: Vec<Vec<u8>>, connectivity: u8) -> PyResult<Vec<Vec<u32>>> {
    let t = tertiary_from_codes(tertiary).map_err(to_py)?;
    let conn = parse_connectivity(connectivity).map_err(to_py)?;
    Ok(grid_to_rows(&reconstruct::label_instances(&t, conn)))
}

/// SEG of one frame; `None` when the ground truth holds no objects.
#[pyfunction]
fn seg_score(gt: Vec<Vec<u32>>, pred: Vec<Vec<u32>>) -> PyResult<Option<f64>> {
    let gt = grid_from_rows(gt).map_err(to_py)?;
    let pred = grid_from_rows(pred).map_err(to_py)?;
    metrics::seg_score(&gt, &pred).map_err(to_py)
}

/// Learning rate at `step` for a constant, cosine or warm-restart schedule.
#[pyfunction]
#[pyo3(signature = (kind, lr_max, lr_min, total_steps, step, restart_steps=Vec::new()))]
fn lr_at(kind: &str, lr_max: f64, lr_min: f64, total_steps: usize, step: usize, restart_steps: Vec<usize>) -> PyResult<f64> {
    let s = match kind {
        "constant" => LrSchedule::constant(lr_max, total_steps),
        "cosine" => LrSchedule::cosine(lr_max, lr_min, total_steps),
        "cosine_warm_restarts" => LrSchedule::warm_restarts(lr_max, lr_min, total_steps, restart_steps),
        other => return Err(PyValueError::new_err(format!("unknown schedule '{other}'"))),
    };
    s.validate().map_err(to_py)?;
    s.lr_at(step).map_err(to_py)
}

/// First `count` events of a scheme: dataset indices for draws, `None` for
/// optimizer steps.
#[pyfunction]
#[pyo3(signature = (scheme, n_datasets, count, seed=0, dataset_sizes=None))]
fn scheme_events(scheme: &str, n_datasets: usize, count: usize, seed: u64, dataset_sizes: Option<Vec<usize>>) -> PyResult<Vec<Option<usize>>> {
    let mut spec = SchemeSpec::new(Scheme::parse(scheme).map_err(to_py)?, n_datasets, seed);
    if let Some(sizes) = dataset_sizes {
        spec.dataset_sizes = sizes;
    }
    let stream = make_stream(&spec).map_err(to_py)?;
    Ok(stream
        .take(count)
        .map(|e| match e {
            Event::Draw(d) => Some(d),
            Event::Step => None,
        })
        .collect())
}

/// Matches instances between two frames: pairs of (id in a, id in b).
#[pyfunction]
#[pyo3(signature = (mask_a, image_a, mask_b, image_b, gate_radius=50.0))]
fn match_frames(
    mask_a: Vec<Vec<u32>>,
    image_a: Vec<Vec<f64>>,
    mask_b: Vec<Vec<u32>>,
    image_b: Vec<Vec<f64>>,
    gate_radius: f64,
) -> PyResult<Vec<(u32, u32)>> {
    let params = MatchParams { gate_radius, ..MatchParams::default() };
    params.validate().map_err(to_py)?;
    let fa = track::extract_features(&grid_from_rows(mask_a).map_err(to_py)?, &grid_from_rows(image_a).map_err(to_py)?).map_err(to_py)?;
    let fb = track::extract_features(&grid_from_rows(mask_b).map_err(to_py)?, &grid_from_rows(image_b).map_err(to_py)?).map_err(to_py)?;
    Ok(track::match_frames(&fa, &fb, &params))
}

/// Writes the four-dataset synthetic benchmark under `root`; returns the
/// dataset names.
#[pyfunction]
fn synthetic_corpus(root: PathBuf, seed: u64) -> PyResult<Vec<String>> {
    let spec = CorpusSpec::benchmark();
    make_synthetic_corpus(&spec, &root, seed).map_err(to_py)?;
    Ok(spec.datasets.into_iter().map(|d| d.name).collect())
}

/// Trains from a TOML run config over datasets under `data_root` and
/// writes history, checkpoints and summary to `out`. Returns the best mean
/// validation SEG.
#[pyfunction]
fn train(config_toml: &str, data_root: PathBuf, out: PathBuf) -> PyResult<Option<f64>> {
    let cfg = RunConfig::from_toml(config_toml).map_err(to_py)?;
    let data = RunData::load(&cfg, &data_root).map_err(to_py)?;
    let outcome = run_training(&cfg, &data).map_err(to_py)?;
    outcome.write_outputs(&out).map_err(to_py)?;
    Ok(outcome.best.mean_seg)
}

/// A trained network with its post-processing settings.
#[pyclass]
struct Segmenter {
    net: MiniUNet,
    post: PostParams,
    context: usize,
}

#[pymethods]
impl Segmenter {
    #[new]
    #[pyo3(signature = (checkpoint_path, min_area=20, max_hole=20, context=8))]
    fn new(checkpoint_path: PathBuf, min_area: usize, max_hole: usize, context: usize) -> PyResult<Self> {
        let net = checkpoint::load(&checkpoint_path).map_err(to_py)?;
        Ok(Self { net, post: PostParams { min_area, max_hole, ..PostParams::default() }, context })
    }

    /// Instance mask of a normalized image.
    fn segment(&self, image: Vec<Vec<f64>>) -> PyResult<Vec<Vec<u32>>> {
        let image = grid_from_rows(image).map_err(to_py)?;
        Ok(grid_to_rows(&segment_frame(&self.net, &image, self.context, &self.post).map_err(to_py)?))
    }

    fn parameter_count(&self) -> usize {
        self.net.params.iter().map(|(_, t)| t.len()).sum()
    }
}

#[pymodule]
fn cellseg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(build_tertiary, m)?)?;
    m.add_function(wrap_pyfunction!(label_instances, m)?)?;
    m.add_function(wrap_pyfunction!(seg_score, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(scheme_events, m)?)?;
    m.add_function(wrap_pyfunction!(match_frames, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Segmenter>()?;
    Ok(())
}
