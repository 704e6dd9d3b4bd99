//! Multi-dataset training schemes as deterministic streams of `Draw` and
//! `Step` events.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Frame-level mixing: dataset `i` with probability proportional to its size.
    Mix,
    /// Each dataset for a fixed quota of minibatches, one after another.
    Seq,
    /// Round robin in a fixed order.
    Fix,
    /// Round robin in an order reshuffled every round.
    Shu,
    /// Uniform random dataset per minibatch.
    Cho,
    /// One minibatch from every dataset, gradients summed, then one step.
    Acc,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Scheme::Mix, Scheme::Seq, Scheme::Fix, Scheme::Shu, Scheme::Cho, Scheme::Acc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mix => "Mix",
            Scheme::Seq => "Seq",
            Scheme::Fix => "Fix",
            Scheme::Shu => "Shu",
            Scheme::Cho => "Cho",
            Scheme::Acc => "Acc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Draw(usize),
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSpec {
    pub scheme: Scheme,
    pub n_datasets: usize,
    /// Frame counts per dataset; used by Mix.
    #[serde(default)]
    pub dataset_sizes: Vec<usize>,
    /// Optional Mix weights replacing the sizes.
    #[serde(default)]
    pub mix_weights: Option<Vec<f64>>,
    /// Minibatches per dataset; required by Seq.
    #[serde(default)]
    pub per_dataset_quota: Option<usize>,
    pub seed: u64,
}

impl SchemeSpec {
    pub fn new(scheme: Scheme, n_datasets: usize, seed: u64) -> Self {
        Self { scheme, n_datasets, dataset_sizes: Vec::new(), mix_weights: None, per_dataset_quota: None, seed }
    }
}

enum State {
    Fixed,
    Shuffled(Vec<usize>),
    Chosen,
    Mixed(WeightedIndex<f64>),
    Sequential { quota: usize },
    Accumulated,
}

/// Infinite event stream for one scheme.
pub struct EventStream {
    n: usize,
    state: State,
    rng: StreamRng,
    draws: usize,
    pending_step: bool,
}

pub fn make_stream(spec: &SchemeSpec) -> Result<EventStream> {
    let n = spec.n_datasets;
    if n == 0 {
        return Err(Error::Config("a scheme needs at least one dataset".into()));
    }
    let state = match spec.scheme {
        Scheme::Fix => State::Fixed,
        Scheme::Shu => State::Shuffled(Vec::new()),
        Scheme::Cho => State::Chosen,
        Scheme::Acc => State::Accumulated,
        Scheme::Seq => match spec.per_dataset_quota {
            Some(q) if q > 0 => State::Sequential { quota: q },
            _ => return Err(Error::Config("Seq needs a positive per-dataset quota".into())),
        },
        Scheme::Mix => {
            let weights: Vec<f64> = match &spec.mix_weights {
                Some(w) => w.clone(),
                None => spec.dataset_sizes.iter().map(|&s| s as f64).collect(),
            };
            if weights.len() != n || weights.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
                return Err(Error::Config(format!("Mix needs {n} positive dataset sizes or weights")));
            }
            State::Mixed(WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?)
        }
    };
    Ok(EventStream { n, state, rng: stream_rng(spec.seed, stream_id("schedule")), draws: 0, pending_step: false })
}

impl Iterator for EventStream {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        if self.pending_step {
            self.pending_step = false;
            return Some(Event::Step);
        }
        let k = self.draws;
        let dataset = match &mut self.state {
            State::Fixed | State::Accumulated => k % self.n,
            State::Shuffled(order) => {
                if k % self.n == 0 {
                    *order = (0..self.n).collect();
                    order.shuffle(&mut self.rng);
                }
                order[k % self.n]
            }
            State::Chosen => self.rng.gen_range(0..self.n),
            State::Mixed(dist) => dist.sample(&mut self.rng),
            State::Sequential { quota } => (k / *quota) % self.n,
        };
        self.draws += 1;
        self.pending_step = match self.state {
            State::Accumulated => self.draws % self.n == 0,
            _ => true,
        };
        Some(Event::Draw(dataset))
    }
}

/// Per-dataset counts over the first `n_draws` draws of a stream.
pub fn round_counts(stream: impl IntoIterator<Item = Event>, n_datasets: usize, n_draws: usize) -> Vec<usize> {
    let mut counts = vec![0; n_datasets];
    let mut seen = 0;
    for e in stream {
        if seen == n_draws {
            break;
        }
        if let Event::Draw(i) = e {
            counts[i] += 1;
            seen += 1;
        }
    }
    counts
}
