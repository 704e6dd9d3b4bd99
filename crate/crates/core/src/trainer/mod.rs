//! Multi-dataset training: run configuration, data preparation, the
//! scheme-driven training loop with periodic validation and best-model
//! selection, the synthetic benchmark and ablation runs.


pub mod ablation;
pub mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{Loader, LoaderConfig, Provenance, SamplePair};
use crate::ctc::{build_split, normalize_sequence, scan_dataset, DataConfig, DatasetDescriptor, Dimensionality};
use crate::error::{Error, Result};
use crate::grid::{Class, Grid, LabelMap, RawImage, TertiaryMap};
use crate::imageio::{read_label_stack, read_raw_stack};
use crate::inference::frame_scores;
use crate::metrics::{seg_frame, summarize_dataset, FrameRecord};
use crate::nnkit::checkpoint;
use crate::nnkit::norm::NormMode;
use crate::nnkit::{weighted_ce, ClassWeights, MiniUNet, NormKind, Tensor, UNetConfig};
use crate::optim::{AdamW, AdamWParams, GradBuffer, LrKind, LrSchedule};
use crate::reconstruct::{argmax_classes, reconstruct, PostParams};
use crate::rng::{stream_id, stream_rng};
use crate::schedule::{make_stream, Event, Scheme, SchemeSpec};
use crate::targetgen::{build_tertiary, MorphParams};

pub const CONFIG_VERSION: u32 = 1;

/// Learning-rate settings; restart points are given in epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrConfig {
    pub kind: LrKind,
    pub lr_max: f64,
    #[serde(default)]
    pub lr_min: Option<f64>,
    #[serde(default)]
    pub restart_epochs: Vec<usize>,
}

impl Default for LrConfig {
    fn default() -> Self {
        Self { kind: LrKind::Constant, lr_max: 1e-4, lr_min: None, restart_epochs: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub scheme: Scheme,
    #[serde(default = "default_data_config")]
    pub data_config: DataConfig,
    /// Dataset directory names under the data root.
    pub datasets: Vec<String>,
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    pub epochs: usize,
    /// Minibatches drawn from each dataset per epoch.
    #[serde(default = "default_draws_per_dataset")]
    pub draws_per_dataset: usize,
    /// Validate every this many epochs (and once at the end).
    #[serde(default = "default_validation_period")]
    pub validation_period: usize,
    pub loader: LoaderConfig,
    #[serde(default)]
    pub loader_overrides: BTreeMap<String, LoaderConfig>,
    #[serde(default)]
    pub model: UNetConfig,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub lr: LrConfig,
    #[serde(default)]
    pub adamw: AdamWParams,
    #[serde(default)]
    pub morph: MorphParams,
    #[serde(default = "MorphParams::three_d")]
    pub morph_3d: MorphParams,
    #[serde(default)]
    pub post: PostParams,
    /// Reflected context added around frames at validation.
    #[serde(default = "default_inference_pad")]
    pub inference_pad: usize,
    /// Seq: minibatches per dataset before moving on (default: an equal
    /// share of the budget).
    #[serde(default)]
    pub seq_quota: Option<usize>,
    /// Mix: sampling weights replacing the dataset sizes.
    #[serde(default)]
    pub mix_weights: Option<Vec<f64>>,
}

fn default_data_config() -> DataConfig {
    DataConfig::AllGt
}
fn default_draws_per_dataset() -> usize {
    20
}
fn default_validation_period() -> usize {
    10
}
fn default_inference_pad() -> usize {
    8
}

impl RunConfig {
    /// Desk-scale defaults over the given datasets.
    pub fn desk_default(datasets: Vec<String>, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            scheme: Scheme::Acc,
            data_config: DataConfig::AllGt,
            datasets,
            data_root: None,
            epochs: 25,
            draws_per_dataset: 20,
            validation_period: 2,
            // Half-frame crops keep the crop position random on 64x64 frames.
            loader: LoaderConfig { crop_size: 32, batch_size: 4, pad: 0 },
            loader_overrides: BTreeMap::new(),
            // Group norm: batch statistics drift across heterogeneous datasets.
            model: UNetConfig { norm: NormKind::GroupNorm, ..UNetConfig::default() },
            class_weights: ClassWeights::default(),
            lr: LrConfig { lr_max: 1e-3, ..LrConfig::default() },
            adamw: AdamWParams::default(),
            morph: MorphParams::two_d(),
            morph_3d: MorphParams::three_d(),
            post: PostParams::default(),
            inference_pad: 8,
            seq_quota: None,
            mix_weights: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn loader_for(&self, dataset: &str) -> LoaderConfig {
        self.loader_overrides.get(dataset).copied().unwrap_or(self.loader)
    }

    pub fn iterations_per_epoch(&self) -> usize {
        self.draws_per_dataset * self.datasets.len()
    }

    pub fn total_draws(&self) -> usize {
        self.epochs * self.iterations_per_epoch()
    }

    /// Learning-rate schedule in draw units.
    pub fn lr_schedule(&self) -> LrSchedule {
        let total = self.total_draws().max(1);
        let lr_min = self.lr.lr_min.unwrap_or(self.lr.lr_max);
        match self.lr.kind {
            LrKind::Constant => LrSchedule::constant(self.lr.lr_max, total),
            LrKind::Cosine => LrSchedule::cosine(self.lr.lr_max, lr_min, total),
            LrKind::CosineWarmRestarts => LrSchedule::warm_restarts(
                self.lr.lr_max,
                lr_min,
                total,
                self.lr.restart_epochs.iter().map(|e| e * self.iterations_per_epoch()).collect(),
            ),
        }
    }

    pub fn scheme_spec(&self, dataset_sizes: Vec<usize>) -> SchemeSpec {
        let n = self.datasets.len();
        SchemeSpec {
            scheme: self.scheme,
            n_datasets: n,
            dataset_sizes,
            mix_weights: self.mix_weights.clone(),
            per_dataset_quota: Some(self.seq_quota.unwrap_or_else(|| (self.total_draws() / n.max(1)).max(1))),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        if self.datasets.is_empty() {
            return bad("no datasets listed".into());
        }
        for (i, d) in self.datasets.iter().enumerate() {
            if self.datasets[..i].contains(d) {
                return bad(format!("dataset '{d}' listed twice"));
            }
        }
        if let Some(k) = self.loader_overrides.keys().find(|k| !self.datasets.contains(k)) {
            return bad(format!("loader override for unknown dataset '{k}'"));
        }
        if self.draws_per_dataset == 0 || self.validation_period == 0 {
            return bad("draws_per_dataset and validation_period must be positive".into());
        }
        for d in &self.datasets {
            let l = self.loader_for(d);
            if l.crop_size == 0 || l.batch_size == 0 {
                return bad(format!("{d}: crop and batch sizes must be positive"));
            }
            if l.pad >= l.crop_size {
                return bad(format!("{d}: pad {} must be smaller than the crop {}", l.pad, l.crop_size));
            }
            if (l.crop_size + 2 * l.pad) % 4 != 0 {
                return bad(format!("{d}: crop + 2 * pad = {} is not divisible by 4", l.crop_size + 2 * l.pad));
            }
            if self.model.norm == NormKind::BatchNorm && l.batch_size < 2 {
                return bad(format!("{d}: batch norm needs a batch of at least 2"));
            }
        }
        if let Some(w) = &self.mix_weights {
            if w.len() != self.datasets.len() {
                return bad("mix_weights needs one weight per dataset".into());
            }
        }
        if self.seq_quota == Some(0) {
            return bad("seq_quota must be positive".into());
        }
        self.class_weights.validate()?;
        if self.epochs > 0 {
            self.lr_schedule().validate()?;
        }
        let mut probe = rand::rngs::mock::StepRng::new(0, 1);
        MiniUNet::new(self.model, &mut probe)?;
        Ok(())
    }
}

/// A validation frame with its ground truth.
#[derive(Debug, Clone)]
pub struct ValidFrame {
    pub dataset: usize,
    pub sequence: String,
    pub frame: usize,
    pub slice: Option<usize>,
    pub image: Grid<f64>,
    pub gt: LabelMap,
    pub target: TertiaryMap,
}

/// Prepared training samples and validation frames, in dataset order.
#[derive(Debug, Clone)]
pub struct RunData {
    pub names: Vec<String>,
    pub train: Vec<Vec<SamplePair>>,
    pub valid: Vec<ValidFrame>,
}

struct LoadedSequence {
    images: Vec<Vec<Grid<f64>>>,
}

fn load_sequence(d: &DatasetDescriptor, seq: &crate::ctc::SequenceDescriptor) -> Result<LoadedSequence> {
    let stacks: Vec<Vec<RawImage>> = seq.frame_paths.iter().map(|p| read_raw_stack(p)).collect::<Result<_>>()?;
    let depth = stacks.first().map_or(0, Vec::len);
    let flat: Vec<RawImage> = stacks.iter().flatten().cloned().collect();
    let (images, _) = normalize_sequence(&flat).map_err(|e| match e {
        Error::DegenerateRange(v) => Error::layout(&d.root.join(&seq.id), format!("constant intensity {v} over the sequence")),
        other => other,
    })?;
    let mut it = images.into_iter().map(|i| i.pixels);
    let images = (0..stacks.len()).map(|_| it.by_ref().take(depth).collect()).collect();
    Ok(LoadedSequence { images })
}

impl RunData {
    /// Scans, normalizes and splits the configured datasets and builds the
    /// three-class targets of every training frame.
    pub fn load(cfg: &RunConfig, root: &Path) -> Result<Self> {
        let descriptors: Vec<DatasetDescriptor> = cfg.datasets.iter().map(|n| {
            let mut d = scan_dataset(&root.join(n))?;
            d.name = n.clone();
            Ok(d)
        }).collect::<Result<_>>()?;
        let plan = build_split(&descriptors, cfg.data_config)?;
        let mut sequences: BTreeMap<(String, String), LoadedSequence> = BTreeMap::new();
        for d in &descriptors {
            for s in &d.sequences {
                sequences.insert((d.name.clone(), s.id.clone()), load_sequence(d, s)?);
            }
        }
        let index: BTreeMap<&str, usize> = cfg.datasets.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let annotation = |entry: &crate::ctc::SplitEntry| -> Result<(Vec<LabelMap>, MorphParams)> {
            let d = &descriptors[index[entry.dataset.as_str()]];
            let seq = d.sequence(&entry.sequence).expect("split names a scanned sequence");
            let path = seq.annotation_path(entry.kind, entry.frame).expect("split names an annotated frame");
            let morph = if d.dimensionality == Dimensionality::ThreeD { cfg.morph_3d } else { cfg.morph };
            Ok((read_label_stack(path)?, morph))
        };
        let mut train = vec![Vec::new(); cfg.datasets.len()];
        for entry in &plan.train {
            let (labels, morph) = annotation(entry)?;
            let images = &sequences[&(entry.dataset.clone(), entry.sequence.clone())].images[entry.frame];
            for (z, l) in labels.iter().enumerate() {
                let provenance = Provenance {
                    dataset: entry.dataset.clone(),
                    sequence: entry.sequence.clone(),
                    frame: entry.frame,
                    crop_origin: (0, 0),
                };
                let image = images.get(z).ok_or_else(|| Error::Shape(format!("{}: annotation has more planes than the frame", entry.dataset)))?;
                train[index[entry.dataset.as_str()]].push(SamplePair::new(image.clone(), build_tertiary(l, &morph), provenance)?);
            }
        }
        let mut valid = Vec::new();
        for entry in &plan.valid {
            let (labels, morph) = annotation(entry)?;
            let images = &sequences[&(entry.dataset.clone(), entry.sequence.clone())].images[entry.frame];
            let planes = labels.len();
            for (z, l) in labels.into_iter().enumerate() {
                valid.push(ValidFrame {
                    dataset: index[entry.dataset.as_str()],
                    sequence: entry.sequence.clone(),
                    frame: entry.frame,
                    slice: (planes > 1).then_some(z),
                    image: images[z].clone(),
                    target: build_tertiary(&l, &morph),
                    gt: l,
                });
            }
        }
        if let Some(i) = train.iter().position(Vec::is_empty) {
            return Err(Error::EmptyLoader(cfg.datasets[i].clone()));
        }
        Ok(Self { names: cfg.datasets.clone(), train, valid })
    }
}

/// Per-dataset and mean SEG plus boundary recall at one validation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub per_dataset: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// `confusion[target][predicted]` pixel counts over all validation frames.
    pub confusion: [[usize; 3]; 3],
}

impl ValidationRecord {
    /// Fraction of boundary-class target pixels predicted as boundary.
    pub fn boundary_recall(&self) -> Option<f64> {
        let row = self.confusion[Class::Boundary.code() as usize];
        let total: usize = row.iter().sum();
        (total > 0).then(|| row[Class::Boundary.code() as usize] as f64 / total as f64)
    }
}

pub fn validate_model(net: &MiniUNet, data: &RunData, cfg: &RunConfig, iteration: usize) -> Result<ValidationRecord> {
    let mut frames = Vec::with_capacity(data.valid.len());
    let mut confusion = [[0usize; 3]; 3];
    for f in &data.valid {
        let scores = frame_scores(net, &f.image, cfg.inference_pad)?;
        let classes = argmax_classes(&scores);
        for (t, p) in f.target.iter().zip(classes.iter()) {
            confusion[t.code() as usize][p.code() as usize] += 1;
        }
        let pred = reconstruct(&scores, &cfg.post);
        frames.push(FrameRecord {
            dataset: data.names[f.dataset].clone(),
            sequence: f.sequence.clone(),
            frame: f.frame,
            result: seg_frame(&f.gt, &pred)?,
        });
    }
    let per_dataset: Vec<Option<f64>> = data.names.iter().map(|n| summarize_dataset(n, &frames).mean).collect();
    let scored: Vec<f64> = per_dataset.iter().flatten().copied().collect();
    let mean = (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64);
    Ok(ValidationRecord { iteration, per_dataset, mean, confusion })
}

/// One row per draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// Draws completed, including this one.
    pub iteration: usize,
    /// Optimizer steps completed after this draw's step.
    pub step: usize,
    pub dataset: usize,
    pub lr: f64,
    pub loss: f64,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestModelRecord {
    pub model: MiniUNet,
    pub mean_seg: Option<f64>,
    pub iteration: usize,
    pub validation: Option<ValidationRecord>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: BestModelRecord,
    pub final_model: MiniUNet,
    pub history: Vec<HistoryRow>,
    pub validations: Vec<ValidationRecord>,
    pub dataset_names: Vec<String>,
    pub steps: usize,
}

fn batch_tensors(batch: &[SamplePair]) -> Result<(Tensor, Vec<Class>)> {
    let (h, w) = batch[0].shape();
    let mut x = Vec::with_capacity(batch.len() * h * w);
    let mut t = Vec::with_capacity(batch.len() * h * w);
    for s in batch {
        if s.shape() != (h, w) {
            return Err(Error::Shape("minibatch samples differ in size".into()));
        }
        x.extend_from_slice(s.image.as_slice());
        t.extend_from_slice(s.target.as_slice());
    }
    Ok((Tensor::from_vec(&[batch.len(), 1, h, w], x)?, t))
}

/// Runs the scheme event stream: every `Draw(d)` takes a minibatch from
/// loader `d` and adds its loss gradient to the buffer; every `Step`
/// applies AdamW to the summed gradient. Validation runs every
/// `validation_period` epochs and once at the end; the best record keeps
/// the model with the strictly highest mean validation SEG.
pub fn run_training(cfg: &RunConfig, data: &RunData) -> Result<RunOutcome> {
    run_training_with(cfg, data, |_| {})
}

pub fn run_training_with(cfg: &RunConfig, data: &RunData, mut on_validation: impl FnMut(&ValidationRecord)) -> Result<RunOutcome> {
    cfg.validate()?;
    if data.names != cfg.datasets {
        return Err(Error::Config("prepared data does not match the configured datasets".into()));
    }
    let mut net = MiniUNet::new(cfg.model, &mut stream_rng(cfg.seed, stream_id("init")))?;
    let initial = net.clone();
    let total = cfg.total_draws();
    let mut outcome = RunOutcome {
        best: BestModelRecord { model: initial, mean_seg: None, iteration: 0, validation: None },
        final_model: net.clone(),
        history: Vec::with_capacity(total),
        validations: Vec::new(),
        dataset_names: cfg.datasets.clone(),
        steps: 0,
    };
    if total == 0 {
        return Ok(outcome);
    }
    let mut loaders: Vec<Loader> = cfg
        .datasets
        .iter()
        .zip(&data.train)
        .map(|(name, samples)| Loader::new(name, samples.clone(), cfg.loader_for(name), cfg.seed))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> = data.train.iter().map(Vec::len).collect();
    let stream = make_stream(&cfg.scheme_spec(sizes))?;
    let schedule = cfg.lr_schedule();
    let mut opt = AdamW::new(&net.params, cfg.adamw);
    let mut buf = GradBuffer::zeros_like(&net.params);
    let val_every = cfg.validation_period * cfg.iterations_per_epoch();
    let mut draws = 0usize;
    let mut pending_rows = 0usize;
    let has_valid = !data.valid.is_empty();

    for event in stream {
        match event {
            Event::Draw(d) => {
                if draws == total {
                    break;
                }
                let batch = loaders[d].next_minibatch()?;
                let (x, targets) = batch_tensors(&batch)?;
                let (scores, cache) = net.forward(&x, NormMode::Train)?;
                let (loss, dscores) = weighted_ce(&scores, &targets, &cfg.class_weights)?;
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { iteration: draws + 1, loss });
                }
                let grads = net.backward(&cache, &dscores)?;
                net.commit_buffers(&cache);
                buf.accumulate(&grads)?;
                draws += 1;
                pending_rows += 1;
                outcome.history.push(HistoryRow { iteration: draws, step: 0, dataset: d, lr: 0.0, loss, validation: None });
            }
            Event::Step => {
                let lr = schedule.lr_at(draws - buf.batches_absorbed)?;
                opt.step(&mut net.params, &mut buf, lr)?;
                outcome.steps += 1;
                let n_rows = outcome.history.len();
                for row in &mut outcome.history[n_rows - pending_rows..] {
                    row.lr = lr;
                    row.step = outcome.steps;
                }
                pending_rows = 0;
                let due = draws % val_every == 0 || draws == total;
                if has_valid && due {
                    let record = validate_model(&net, data, cfg, draws)?;
                    on_validation(&record);
                    let improved = match (record.mean, outcome.best.mean_seg) {
                        (Some(m), Some(b)) => m > b,
                        (Some(_), None) => true,
                        _ => false,
                    };
                    if improved {
                        outcome.best =
                            BestModelRecord { model: net.clone(), mean_seg: record.mean, iteration: draws, validation: Some(record.clone()) };
                    }
                    outcome.history.last_mut().expect("a draw precedes every step").validation = Some(record.clone());
                    outcome.validations.push(record);
                }
                if draws == total {
                    break;
                }
            }
        }
    }
    if !has_valid {
        outcome.best = BestModelRecord { model: net.clone(), mean_seg: None, iteration: draws, validation: None };
    }
    outcome.final_model = net;
    Ok(outcome)
}

impl RunOutcome {
    /// Mean loss over draws `from..to` (1-based iteration numbers, inclusive
    /// of `from`, exclusive of `to`).
    pub fn mean_loss(&self, from: usize, to: usize) -> Option<f64> {
        let v: Vec<f64> = self.history.iter().filter(|r| r.iteration >= from && r.iteration < to).map(|r| r.loss).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string(), "step".into(), "dataset".into(), "lr".into(), "loss".into()];
        header.extend(self.dataset_names.iter().map(|n| format!("seg_{n}")));
        header.extend(["mean_seg".to_string(), "boundary_recall".into()]);
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.history {
            let mut rec = vec![
                r.iteration.to_string(),
                r.step.to_string(),
                self.dataset_names[r.dataset].clone(),
                r.lr.to_string(),
                r.loss.to_string(),
            ];
            match &r.validation {
                Some(v) => {
                    rec.extend(v.per_dataset.iter().map(|s| opt(*s)));
                    rec.push(opt(v.mean));
                    rec.push(opt(v.boundary_recall()));
                }
                None => rec.extend(std::iter::repeat_n(String::new(), self.dataset_names.len() + 2)),
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `history.csv`, `best.ckpt`, `final.ckpt` and `summary.json`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_history_csv(&dir.join("history.csv"))?;
        checkpoint::save(&self.best.model, &dir.join("best.ckpt"))?;
        checkpoint::save(&self.final_model, &dir.join("final.ckpt"))?;
        let summary = serde_json::json!({
            "datasets": self.dataset_names,
            "draws": self.history.len(),
            "steps": self.steps,
            "best_iteration": self.best.iteration,
            "best_mean_seg": self.best.mean_seg,
            "best_per_dataset_seg": self.best.validation.as_ref().map(|v| v.per_dataset.clone()),
            "best_boundary_recall": self.best.validation.as_ref().and_then(ValidationRecord::boundary_recall),
            "validations": self.validations,
        });
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    }
}
