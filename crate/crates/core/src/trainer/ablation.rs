//! Repeated training runs over configuration variants and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{run_training, RunConfig, RunData, ValidationRecord};

/// A named configuration change applied on top of the base config.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub best_mean_seg: Option<f64>,
    pub best_iteration: usize,
    pub final_loss: Option<f64>,
    pub best_boundary_recall: Option<f64>,
    pub validations: Vec<ValidationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub runs: usize,
    pub mean_best_seg: f64,
    pub std_best_seg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
}

/// Mean training loss over the last epoch of a run.
fn tail_loss(history: &[crate::trainer::HistoryRow], epoch: usize) -> Option<f64> {
    let tail = &history[history.len().saturating_sub(epoch)..];
    (!tail.is_empty()).then(|| tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64)
}

/// Trains every variant once per seed on the same prepared data. A seed
/// replaces the variant's own seed.
pub fn run_ablation(variants: &[Variant], seeds: &[u64], data: &RunData, mut progress: impl FnMut(&AblationRow)) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for v in variants {
        for &seed in seeds {
            let cfg = RunConfig { seed, ..v.config.clone() };
            let out = run_training(&cfg, data)?;
            let row = AblationRow {
                variant: v.name.clone(),
                seed,
                best_mean_seg: out.best.mean_seg,
                best_iteration: out.best.iteration,
                final_loss: tail_loss(&out.history, cfg.iterations_per_epoch()),
                best_boundary_recall: out.best.validation.as_ref().and_then(ValidationRecord::boundary_recall),
                validations: out.validations,
            };
            progress(&row);
            rows.push(row);
        }
    }
    let summary = variants
        .iter()
        .map(|v| {
            let s: Vec<f64> = rows.iter().filter(|r| r.variant == v.name).map(|r| r.best_mean_seg.unwrap_or(0.0)).collect();
            let n = s.len().max(1) as f64;
            let mean = s.iter().sum::<f64>() / n;
            let var = s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            VariantSummary { variant: v.name.clone(), runs: s.len(), mean_best_seg: mean, std_best_seg: var.sqrt() }
        })
        .collect();
    Ok(AblationReport { rows, summary })
}

impl AblationReport {
    pub fn mean_of(&self, variant: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.variant == variant).map(|s| s.mean_best_seg)
    }

    /// Writes `ablation.csv` (one row per run) and `ablation.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
        w.write_record(["variant", "seed", "best_mean_seg", "best_iteration", "final_loss", "best_boundary_recall"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.variant.clone(),
                r.seed.to_string(),
                opt(r.best_mean_seg),
                r.best_iteration.to_string(),
                opt(r.final_loss),
                opt(r.best_boundary_recall),
            ])?;
        }
        w.flush()?;
        std::fs::write(dir.join("ablation.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Ablation plan: a base run config, named variants given as partial
/// overrides of it, and the seeds every variant is trained with.
#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AblationFile {
    seeds: Vec<u64>,
    base: toml::Value,
    variants: Vec<VariantFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantFile {
    name: String,
    #[serde(default)]
    set: Option<toml::Value>,
}

impl AblationConfig {
    /// Parses `seeds = [...]`, a `[base]` run config and `[[variants]]`
    /// entries with a `name` and an optional `set` table of overrides.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: AblationFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if file.seeds.is_empty() || file.variants.is_empty() {
            return Err(Error::Config("an ablation needs at least one seed and one variant".into()));
        }
        let mut variants = Vec::with_capacity(file.variants.len());
        for v in file.variants {
            let mut value = file.base.clone();
            if let Some(set) = v.set {
                merge(&mut value, set);
            }
            let text = toml::to_string(&value).map_err(|e| Error::Config(e.to_string()))?;
            let config = RunConfig::from_toml(&text).map_err(|e| Error::Config(format!("variant '{}': {e}", v.name)))?;
            variants.push(Variant { name: v.name, config });
        }
        Ok(Self { seeds: file.seeds, variants })
    }
}
