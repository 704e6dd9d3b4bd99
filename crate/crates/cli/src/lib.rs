//! Subcommands of the `cellseg` binary. Every command validates its inputs
//! before writing anything, writes only below `--out`, and records a
//! `manifest.json` of inputs, parameters and outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cellseg_core::ctc::{
    frame_file_name, normalize_sequence, scan_dataset, write_label_stack, write_track_file, AnnotationKind,
    DatasetDescriptor, Dimensionality,
};
use cellseg_core::grid::{Grid, LabelMap, RawImage};
use cellseg_core::imageio::{is_image_file, read_label_stack, read_raw_stack, write_tiff8};
use cellseg_core::inference::segment_frame;
use cellseg_core::metrics::{aggregate, seg_frame, FrameRecord, SegReport};
use cellseg_core::nnkit::checkpoint;
use cellseg_core::reconstruct::PostParams;
use cellseg_core::targetgen::{build_tertiary, Element, MorphParams};
use cellseg_core::track::{track_sequence, MatchParams};
use cellseg_core::trainer::ablation::{run_ablation, AblationConfig, AblationReport};
use cellseg_core::trainer::synth::{make_synthetic_corpus, CorpusSpec};
use cellseg_core::trainer::{run_training_with, RunConfig, RunData};
use cellseg_core::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "cellseg", version, about = "Universal cell segmentation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build three-class training targets for every annotated frame.
    Prepare(PrepareArgs),
    /// Generate the synthetic multi-dataset benchmark corpus.
    Synth(SynthArgs),
    /// Train a network from a run config.
    Train(TrainArgs),
    /// Train every variant of an ablation plan over several seeds.
    Ablate(AblateArgs),
    /// Segment every frame of a dataset with a trained checkpoint.
    Infer(InferArgs),
    /// Score predicted masks against ground truth with the SEG measure.
    Eval(EvalArgs),
    /// Link segmented cells across frames and write CTC track files.
    Track(TrackArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset root in the CTC layout.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Dilation iterations (default 2, or 5 for volumetric data).
    #[arg(long)]
    pub dilate: Option<usize>,
    #[arg(long)]
    pub erode: Option<usize>,
    /// Chebyshev distance defining cell-cell contact.
    #[arg(long)]
    pub contact: Option<usize>,
    /// Structuring element: square or cross.
    #[arg(long)]
    pub element: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Corpus description (TOML); defaults to the four-dataset benchmark.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Root holding the dataset directories; overrides `data_root`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root in the CTC layout.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Post-processing parameters (TOML).
    #[arg(long)]
    pub post: Option<PathBuf>,
    /// Reflected context added around each frame.
    #[arg(long, default_value_t = 8)]
    pub pad: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground truth: a dataset root, a results root or a flat mask directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Predictions in any of the same layouts.
    #[arg(long)]
    pub pred: PathBuf,
    /// Where to write `seg.csv` and `seg.json`; nothing is written without it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset name in the report (default: name of the ground-truth directory).
    #[arg(long)]
    pub dataset: Option<String>,
    /// Exit with status 1 unless the mean SEG reaches this value.
    #[arg(long)]
    pub min_seg: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Results root holding `NN_RES/maskTTT.tif` for every frame.
    #[arg(long)]
    pub masks: PathBuf,
    /// Dataset root with the raw frames, for intensity features.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Matching parameters (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gate: Option<f64>,
}

/// Runs a parsed command line and maps the outcome onto the exit-code
/// contract: 0 success, 1 internal failure, 2 input or configuration error.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Prepare(a) => prepare(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Ablate(a) => ablate(&a),
        Command::Infer(a) => infer(&a),
        Command::Eval(a) => eval(&a),
        Command::Track(a) => track(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_FAILURE
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    parameters: serde_json::Value,
    inputs: Vec<PathBuf>,
    /// Paths relative to the output directory.
    outputs: Vec<PathBuf>,
}

impl Manifest {
    fn new(command: &'static str, seed: Option<u64>, parameters: serde_json::Value, inputs: Vec<PathBuf>) -> Self {
        Self { command, version: env!("CARGO_PKG_VERSION"), seed, parameters, inputs, outputs: Vec::new() }
    }

    fn write(mut self, out: &Path) -> Result<()> {
        self.outputs.sort();
        self.outputs.push(PathBuf::from("manifest.json"));
        fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(())
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

/// A seed from the clock, for commands run without one; it is recorded in
/// the manifest so the run can be repeated.
fn fresh_seed() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

fn parse_element(s: &str) -> Result<Element> {
    match s {
        "square" => Ok(Element::Square),
        "cross" => Ok(Element::Cross),
        other => Err(Error::Config(format!("unknown structuring element '{other}' (square or cross)"))),
    }
}

fn prepare(a: &PrepareArgs) -> Result<u8> {
    let d = scan_dataset(&a.data)?;
    let mut morph = if d.dimensionality == Dimensionality::ThreeD { MorphParams::three_d() } else { MorphParams::two_d() };
    if let Some(v) = a.dilate {
        morph.dilate_iters = v;
    }
    if let Some(v) = a.erode {
        morph.erode_iters = v;
    }
    if let Some(v) = a.contact {
        morph.contact_distance = v;
    }
    if let Some(e) = &a.element {
        morph.element = parse_element(e)?;
    }
    let mut jobs = Vec::new();
    for s in &d.sequences {
        for kind in [AnnotationKind::Gt, AnnotationKind::St] {
            for &f in s.annotated_frames(kind) {
                let path = s.annotation_path(kind, f).expect("listed frames have paths").to_path_buf();
                let rel = PathBuf::from(format!("{}_{}", s.id, kind.dir_suffix())).join(frame_file_name("tertiary", f, s.frame_count));
                jobs.push((path, rel));
            }
        }
    }
    if jobs.is_empty() {
        return Err(Error::MissingAnnotation(format!("{}: no GT or ST segmentation annotations", a.data.display())));
    }
    let targets = jobs
        .iter()
        .map(|(path, _)| {
            let planes = read_label_stack(path)?;
            Ok(planes.iter().map(|l| build_tertiary(l, &morph).map(|c| c.code())).collect::<Vec<Grid<u8>>>())
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new("prepare", None, serde_json::to_value(morph)?, jobs.iter().map(|(p, _)| p.clone()).collect());
    for ((_, rel), planes) in jobs.iter().zip(&targets) {
        let path = a.out.join(rel);
        fs::create_dir_all(path.parent().expect("relative path has a parent"))?;
        write_tiff8(&path, planes)?;
        manifest.outputs.push(rel.clone());
    }
    println!("prepared {} targets from {} sequences", jobs.len(), d.sequences.len());
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}

fn synth(a: &SynthArgs) -> Result<u8> {
    let spec = match &a.config {
        Some(p) => parse_toml::<CorpusSpec>(p)?,
        None => CorpusSpec::benchmark(),
    };
    spec.validate()?;
    let seed = a.seed.unwrap_or_else(fresh_seed);
    fs::create_dir_all(&a.out)?;
    let written = make_synthetic_corpus(&spec, &a.out, seed)?;
    fs::write(a.out.join("corpus.toml"), to_toml(&spec)?)?;
    // A desk-scale run over the corpus, with data resolved next to it.
    let mut run = RunConfig::desk_default(spec.datasets.iter().map(|d| d.name.clone()).collect(), seed);
    run.data_root = Some(".".into());
    fs::write(a.out.join("train.toml"), run.to_toml()?)?;
    let mut manifest = Manifest::new("synth", Some(seed), serde_json::to_value(&spec)?, a.config.iter().cloned().collect());
    manifest.outputs = written.iter().map(|p| p.strip_prefix(&a.out).unwrap_or(p).to_path_buf()).collect();
    manifest.outputs.extend(["corpus.toml".into(), "train.toml".into()]);
    println!("wrote {} datasets under {} with seed {seed}", written.len(), a.out.display());
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}

fn data_root(flag: &Option<PathBuf>, cfg: &RunConfig, config_path: &Path) -> Result<PathBuf> {
    match (flag, &cfg.data_root) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) if p.is_relative() => Ok(config_path.parent().unwrap_or(Path::new(".")).join(p)),
        (None, Some(p)) => Ok(p.clone()),
        (None, None) => Err(Error::Config("no data root: pass --data or set data_root".into())),
    }
}

fn train(a: &TrainArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let root = data_root(&a.data, &cfg, &a.config)?;
    let data = RunData::load(&cfg, &root)?;
    let outcome = run_training_with(&cfg, &data, |v| {
        let mean = v.mean.map_or("n/a".to_string(), |m| format!("{m:.4}"));
        eprintln!("draw {:>6}: mean validation SEG {mean}", v.iteration);
    })?;
    fs::create_dir_all(&a.out)?;
    outcome.write_outputs(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml()?)?;
    let mut manifest = Manifest::new("train", Some(cfg.seed), serde_json::to_value(&cfg)?, vec![a.config.clone(), root]);
    manifest.outputs = ["history.csv", "best.ckpt", "final.ckpt", "summary.json", "config.toml"].map(PathBuf::from).to_vec();
    match outcome.best.mean_seg {
        Some(m) => println!("best mean SEG {m:.4} at draw {}", outcome.best.iteration),
        None => println!("no validation score recorded"),
    }
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}

fn ablate(a: &AblateArgs) -> Result<u8> {
    let plan = AblationConfig::from_toml(&read_text(&a.config)?)?;
    // Variants sharing datasets and target settings share prepared data.
    let mut prepared: BTreeMap<String, RunData> = BTreeMap::new();
    let mut keys = Vec::with_capacity(plan.variants.len());
    for v in &plan.variants {
        let c = &v.config;
        let key = serde_json::to_string(&(&c.datasets, c.data_config, c.morph, c.morph_3d, &c.data_root))?;
        if !prepared.contains_key(&key) {
            let root = data_root(&a.data, c, &a.config)?;
            prepared.insert(key.clone(), RunData::load(c, &root)?);
        }
        keys.push(key);
    }
    let mut report = AblationReport { rows: Vec::new(), summary: Vec::new() };
    for (v, key) in plan.variants.iter().zip(&keys) {
        let part = run_ablation(std::slice::from_ref(v), &plan.seeds, &prepared[key], |r| {
            let seg = r.best_mean_seg.map_or("n/a".to_string(), |m| format!("{m:.4}"));
            eprintln!("{} seed {}: best mean SEG {seg} at draw {}", r.variant, r.seed, r.best_iteration);
        })?;
        report.rows.extend(part.rows);
        report.summary.extend(part.summary);
    }
    fs::create_dir_all(&a.out)?;
    report.write(&a.out)?;
    for s in &report.summary {
        println!("{:<24} {:.4} ± {:.4} over {} runs", s.variant, s.mean_best_seg, s.std_best_seg, s.runs);
    }
    let mut manifest = Manifest::new("ablate", None, serde_json::json!({ "seeds": plan.seeds }), vec![a.config.clone()]);
    manifest.outputs = vec!["ablation.csv".into(), "ablation.json".into()];
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}

struct NormalizedSequence {
    id: String,
    frame_count: usize,
    /// Frames of normalized planes.
    frames: Vec<Vec<Grid<f64>>>,
}

fn load_normalized(d: &DatasetDescriptor) -> Result<Vec<NormalizedSequence>> {
    d.sequences
        .iter()
        .map(|s| {
            let stacks: Vec<Vec<RawImage>> = s.frame_paths.iter().map(|p| read_raw_stack(p)).collect::<Result<_>>()?;
            let flat: Vec<RawImage> = stacks.iter().flatten().cloned().collect();
            let (images, _) = normalize_sequence(&flat)?;
            let mut it = images.into_iter().map(|i| i.pixels);
            let frames = stacks.iter().map(|st| it.by_ref().take(st.len()).collect()).collect();
            Ok(NormalizedSequence { id: s.id.clone(), frame_count: s.frame_count, frames })
        })
        .collect()
}

fn infer(a: &InferArgs) -> Result<u8> {
    let net = checkpoint::load(&a.checkpoint)?;
    let post = match &a.post {
        Some(p) => parse_toml::<PostParams>(p)?,
        None => PostParams::default(),
    };
    let d = scan_dataset(&a.data)?;
    let sequences = load_normalized(&d)?;
    let mut masks = Vec::new();
    for s in &sequences {
        for (f, planes) in s.frames.iter().enumerate() {
            let labels = planes.iter().map(|p| segment_frame(&net, p, a.pad, &post)).collect::<Result<Vec<LabelMap>>>()?;
            let rel = PathBuf::from(format!("{}_RES", s.id)).join(frame_file_name("mask", f, s.frame_count));
            masks.push((rel, labels));
        }
    }
    fs::create_dir_all(&a.out)?;
    let params = serde_json::json!({ "post": post, "pad": a.pad });
    let mut manifest = Manifest::new("infer", None, params, vec![a.checkpoint.clone(), a.data.clone()]);
    for (rel, labels) in &masks {
        let path = a.out.join(rel);
        fs::create_dir_all(path.parent().expect("relative path has a parent"))?;
        write_label_stack(labels, &path)?;
        manifest.outputs.push(rel.clone());
    }
    println!("segmented {} frames in {} sequences", masks.len(), sequences.len());
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}

/// Mask files keyed by (sequence, frame).
type MaskIndex = BTreeMap<(String, usize), PathBuf>;

fn frame_number(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let start = stem.find(|c: char| c.is_ascii_digit())?;
    stem[start..].chars().take_while(char::is_ascii_digit).collect::<String>().parse().ok()
}

fn index_dir(dir: &Path, sequence: &str, prefix: &str, out: &mut MaskIndex) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir).map_err(|e| Error::Layout { path: dir.to_path_buf(), reason: e.to_string() })?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if p.is_file() && is_image_file(&p) && name.starts_with(prefix) {
            let frame = frame_number(&p).ok_or_else(|| Error::Layout { path: p.clone(), reason: "no frame number in file name".into() })?;
            if out.insert((sequence.to_string(), frame), p.clone()).is_some() {
                return Err(Error::Layout { path: p, reason: format!("second mask for frame {frame}") });
            }
        }
    }
    Ok(())
}

/// Indexes masks under a dataset root (`NN_GT/SEG/man_segTTT.tif`), a
/// results root (`NN_RES/maskTTT.tif`) or a flat directory of masks.
fn index_masks(dir: &Path) -> Result<MaskIndex> {
    if !dir.is_dir() {
        return Err(Error::Layout { path: dir.to_path_buf(), reason: "not a directory".into() });
    }
    let mut subdirs: Vec<(String, PathBuf)> = Vec::new();
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if let Some(name) = p.file_name().and_then(|n| n.to_str()) {
            if p.is_dir() {
                subdirs.push((name.to_string(), p.clone()));
            }
        }
    }
    subdirs.sort();
    let mut out = MaskIndex::new();
    for (name, p) in &subdirs {
        if let Some(seq) = name.strip_suffix("_GT") {
            if p.join("SEG").is_dir() {
                index_dir(&p.join("SEG"), seq, "man_seg", &mut out)?;
            }
        } else if let Some(seq) = name.strip_suffix("_RES") {
            index_dir(p, seq, "mask", &mut out)?;
        }
    }
    if out.is_empty() {
        index_dir(dir, "", "", &mut out)?;
    }
    if out.is_empty() {
        return Err(Error::MissingAnnotation(format!("{}: no masks found", dir.display())));
    }
    Ok(out)
}

fn eval_report(gt: &Path, pred: &Path, dataset: &str) -> Result<SegReport> {
    let gt_index = index_masks(gt)?;
    let pred_index = index_masks(pred)?;
    let missing: Vec<String> =
        gt_index.keys().filter(|k| !pred_index.contains_key(*k)).map(|(s, f)| format!("{s}:{f}")).collect();
    if !missing.is_empty() {
        return Err(Error::Shape(format!("no prediction for ground-truth frames {}", missing.join(", "))));
    }
    let mut frames = Vec::new();
    for ((seq, frame), gpath) in &gt_index {
        let g = read_label_stack(gpath)?;
        let p = read_label_stack(&pred_index[&(seq.clone(), *frame)])?;
        if g.len() != p.len() {
            return Err(Error::Shape(format!("{seq}:{frame}: {} ground-truth planes but {} predicted", g.len(), p.len())));
        }
        for (gp, pp) in g.iter().zip(&p) {
            frames.push(FrameRecord { dataset: dataset.to_string(), sequence: seq.clone(), frame: *frame, result: seg_frame(gp, pp)? });
        }
    }
    Ok(aggregate(frames))
}

fn eval(a: &EvalArgs) -> Result<u8> {
    let dataset = a.dataset.clone().unwrap_or_else(|| {
        a.gt.canonicalize().ok().and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).unwrap_or_else(|| "dataset".into())
    });
    let report = eval_report(&a.gt, &a.pred, &dataset)?;
    for d in &report.datasets {
        let mean = d.mean.map_or("n/a".to_string(), |m| format!("{m:.6}"));
        println!("{}: SEG {mean} over {} frames ({} of {} objects matched)", d.dataset, d.frames_scored, d.matched, d.gt_objects);
    }
    let mean = report.mean.unwrap_or(0.0);
    println!("mean SEG {mean:.6}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        report.write_csv(&out.join("seg.csv"))?;
        report.write_summary(&out.join("seg.json"))?;
        let params = serde_json::json!({ "dataset": dataset, "min_seg": a.min_seg });
        let mut manifest = Manifest::new("eval", None, params, vec![a.gt.clone(), a.pred.clone()]);
        manifest.outputs = vec!["seg.csv".into(), "seg.json".into()];
        manifest.write(out)?;
    }
    match a.min_seg {
        Some(t) if report.mean.is_none_or(|m| m < t) => {
            eprintln!("mean SEG {mean:.6} is below the threshold {t}");
            Ok(EXIT_FAILURE)
        }
        _ => Ok(EXIT_OK),
    }
}

fn track(a: &TrackArgs) -> Result<u8> {
    let mut params = match &a.config {
        Some(p) => parse_toml::<MatchParams>(p)?,
        None => MatchParams::default(),
    };
    if let Some(g) = a.gate {
        params.gate_radius = g;
    }
    params.validate()?;
    let d = scan_dataset(&a.data)?;
    if d.dimensionality == Dimensionality::ThreeD {
        return Err(Error::Config("tracking works on 2D sequences only".into()));
    }
    let index = index_masks(&a.masks)?;
    let sequences = load_normalized(&d)?;
    let mut results = Vec::new();
    for s in &sequences {
        let masks = (0..s.frame_count)
            .map(|f| {
                let p = index.get(&(s.id.clone(), f)).ok_or_else(|| Error::MissingAnnotation(format!("no mask for sequence {} frame {f}", s.id)))?;
                let mut planes = read_label_stack(p)?;
                if planes.len() != 1 {
                    return Err(Error::Shape(format!("{}: expected a single-plane mask", p.display())));
                }
                Ok(planes.remove(0))
            })
            .collect::<Result<Vec<LabelMap>>>()?;
        let images: Vec<Grid<f64>> = s.frames.iter().map(|f| f[0].clone()).collect();
        let (tracks, relabeled) = track_sequence(&masks, &images, &params)?;
        results.push((s, tracks, relabeled));
    }
    fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new("track", None, serde_json::to_value(params)?, vec![a.masks.clone(), a.data.clone()]);
    for (s, tracks, relabeled) in &results {
        let dir = PathBuf::from(format!("{}_RES", s.id));
        fs::create_dir_all(a.out.join(&dir))?;
        for (f, m) in relabeled.iter().enumerate() {
            let rel = dir.join(frame_file_name("mask", f, s.frame_count));
            write_label_stack(std::slice::from_ref(m), &a.out.join(&rel))?;
            manifest.outputs.push(rel);
        }
        let rel = dir.join("res_track.txt");
        write_track_file(&tracks.tracks, &a.out.join(&rel))?;
        manifest.outputs.push(rel);
        println!("sequence {}: {} tracks over {} frames", s.id, tracks.tracks.len(), s.frame_count);
    }
    manifest.write(&a.out)?;
    Ok(EXIT_OK)
}
