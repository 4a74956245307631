//! Reordering policies: greedy single-sample insertion, best-of-k batch
//! insertion and the uniform random baseline.

mod harness;

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RandomStream;
use crate::sample::SamplePool;
use crate::state::SelectionState;
use crate::wasserstein::{batch_distances, candidate_distances, wass_vector, Objective, WassersteinVector};

pub use harness::{
    curve_from_values, prefix_curve, replicate_harness, ConvergenceReport, HarnessRun, PolicyCurve, ReportMeta,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("batch size {b} must be between 1 and the pool size {n}")]
    BatchSize { b: usize, n: usize },
    #[error("number of candidate batches must be at least 1")]
    NoBatches,
    #[error("at least one replicate is required")]
    NoReplicates,
    #[error("checkpoint {m} outside [1, {n}]")]
    Checkpoint { m: usize, n: usize },
}

/// How candidate batches are produced each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// `k` independent uniform subsets of `R`, each without replacement.
    #[default]
    #[value(help = "k independent uniform subsets of the remaining samples")]
    Random,
    /// The first `k` size-`b` subsets of `R` in lexicographic order of
    /// ascending index. With `b = 1` and `k >= |R|` every remaining sample
    /// is tried, which makes the batch policy coincide with the greedy one.
    #[value(help = "first k subsets of the remaining samples in lexicographic index order")]
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    /// Samples per batch (`b`).
    pub batch_size: usize,
    /// Candidate batches per iteration (`k`).
    pub num_batches: usize,
    #[serde(default)]
    pub draw: DrawMode,
}

impl BatchConfig {
    pub fn new(batch_size: usize, num_batches: usize) -> Self {
        Self {
            batch_size,
            num_batches,
            draw: DrawMode::Random,
        }
    }

    pub fn validate(&self, n: usize) -> Result<(), PolicyError> {
        if self.batch_size == 0 || self.batch_size > n {
            return Err(PolicyError::BatchSize { b: self.batch_size, n });
        }
        if self.num_batches == 0 {
            return Err(PolicyError::NoBatches);
        }
        Ok(())
    }
}

/// Which policy to run, without its random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicySpec {
    Greedy,
    Batch(BatchConfig),
    Random,
}

impl PolicySpec {
    pub fn tag(&self) -> &'static str {
        match self {
            PolicySpec::Greedy => "greedy",
            PolicySpec::Batch(_) => "batch",
            PolicySpec::Random => "random",
        }
    }

    /// Human-readable label, e.g. `batch-b50-k500`.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::Batch(c) => format!("batch-b{}-k{}", c.batch_size, c.num_batches),
            other => other.tag().to_string(),
        }
    }

    pub fn batch_size(&self) -> Option<usize> {
        match self {
            PolicySpec::Batch(c) => Some(c.batch_size),
            PolicySpec::Greedy => Some(1),
            PolicySpec::Random => None,
        }
    }

    /// Runs the policy. `rng` is ignored by the greedy policy.
    pub fn run(&self, pool: &SamplePool, objective: &Objective, rng: &mut RandomStream) -> Result<SelectionTrace, PolicyError> {
        match self {
            PolicySpec::Greedy => Ok(greedy_reorder_with(pool, objective)),
            PolicySpec::Batch(cfg) => batch_reorder_with(pool, cfg, objective, rng),
            PolicySpec::Random => Ok(random_reorder(pool, rng)),
        }
    }
}

/// One iteration of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PickEvent {
    pub iter: usize,
    pub picked: Vec<usize>,
    pub w: WassersteinVector,
    pub cumulative: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub policy: String,
    pub events: Vec<PickEvent>,
    /// Objective evaluations performed (candidates or batches scored).
    pub evaluations: u64,
}

impl SelectionTrace {
    /// The full pick order.
    pub fn order(&self) -> Vec<usize> {
        self.events.iter().flat_map(|e| e.picked.iter().copied()).collect()
    }

    pub fn iterations(&self) -> usize {
        self.events.len()
    }

    pub fn final_manhattan(&self) -> Option<f64> {
        self.events.last().map(|e| e.w.manhattan)
    }

    pub fn total_elapsed(&self) -> Duration {
        self.events.iter().map(|e| e.elapsed).sum()
    }
}

struct TraceBuilder<'a> {
    pool: &'a SamplePool,
    state: SelectionState,
    trace: SelectionTrace,
}

impl<'a> TraceBuilder<'a> {
    fn new(pool: &'a SamplePool, policy: String) -> Self {
        Self {
            pool,
            state: SelectionState::new(pool),
            trace: SelectionTrace {
                policy,
                events: Vec::new(),
                evaluations: 0,
            },
        }
    }

    fn commit(&mut self, picked: Vec<usize>, started: Instant) {
        self.state
            .insert_all(self.pool, &picked)
            .expect("policies only pick unpicked samples");
        let w = wass_vector(self.pool, &self.state).expect("state is non-empty after a pick");
        let iter = self.trace.events.len();
        self.trace.events.push(PickEvent {
            iter,
            picked,
            w,
            cumulative: self.state.n_picked(),
            elapsed: started.elapsed(),
        });
    }
}

/// Scores within `TIE_TOLERANCE * max(1, best)` of the best are ties.
/// Mathematically equal scores (e.g. the two middle order statistics of an
/// even-sized 1-D pool) can differ in the last bits once computed.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// First index whose score ties with the minimum.
fn first_argmin(scores: &[f64]) -> usize {
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = best + TIE_TOLERANCE * best.abs().max(1.0);
    scores.iter().position(|&s| s <= cutoff).expect("non-empty scores")
}

/// Greedy reordering under the Manhattan objective.
pub fn greedy_reorder(pool: &SamplePool) -> SelectionTrace {
    greedy_reorder_with(pool, &Objective::manhattan())
}

/// Greedy reordering: each iteration scores every remaining sample and
/// appends the minimizer, smallest index first on ties (see
/// [`TIE_TOLERANCE`]). The last sample is
/// appended without scoring, so `n(n+1)/2 - 1` evaluations happen in total.
pub fn greedy_reorder_with(pool: &SamplePool, objective: &Objective) -> SelectionTrace {
    let mut tb = TraceBuilder::new(pool, PolicySpec::Greedy.label());
    while !tb.state.is_complete() {
        let started = Instant::now();
        let remaining = tb.state.remaining();
        let pick = if remaining.len() == 1 {
            remaining[0]
        } else {
            let state = &tb.state;
            let scores: Vec<f64> = remaining
                .par_iter()
                .map(|&i| objective.score(&candidate_distances(pool, state, i)))
                .collect();
            tb.trace.evaluations += scores.len() as u64;
            remaining[first_argmin(&scores)]
        };
        tb.commit(vec![pick], started);
    }
    tb.trace
}

/// Best-of-k batch reordering under the Manhattan objective.
pub fn batch_reorder(pool: &SamplePool, cfg: &BatchConfig, rng: &mut RandomStream) -> Result<SelectionTrace, PolicyError> {
    batch_reorder_with(pool, cfg, &Objective::manhattan(), rng)
}

/// Batch reordering. Each iteration proposes `k` batches of size
/// `min(b, |R|)`, scores them all and appends the best (first drawn on
/// ties). Once `|R| <= b` the remainder is appended unscored.
pub fn batch_reorder_with(
    pool: &SamplePool,
    cfg: &BatchConfig,
    objective: &Objective,
    rng: &mut RandomStream,
) -> Result<SelectionTrace, PolicyError> {
    cfg.validate(pool.len())?;
    let b = cfg.batch_size;
    let mut tb = TraceBuilder::new(pool, PolicySpec::Batch(*cfg).label());
    let mut scratch: Vec<usize> = Vec::with_capacity(pool.len());
    while !tb.state.is_complete() {
        let started = Instant::now();
        let remaining = tb.state.remaining();
        if remaining.len() <= b {
            let rest = remaining.to_vec();
            tb.commit(rest, started);
            continue;
        }
        let batches = match cfg.draw {
            DrawMode::Random => draw_random_batches(remaining, b, cfg.num_batches, rng, &mut scratch),
            DrawMode::Exhaustive => lexicographic_batches(remaining, b, cfg.num_batches),
        };
        let state = &tb.state;
        let scores: Vec<f64> = batches
            .par_iter()
            .map(|batch| objective.score(&batch_distances(pool, state, batch)))
            .collect();
        tb.trace.evaluations += scores.len() as u64;
        let best = first_argmin(&scores);
        let chosen = batches.into_iter().nth(best).expect("argmin within range");
        tb.commit(chosen, started);
    }
    Ok(tb.trace)
}

/// `k` subsets of size `b`, each a partial Fisher-Yates shuffle of
/// `remaining` that is undone afterwards so every draw starts from the same
/// arrangement.
fn draw_random_batches(
    remaining: &[usize],
    b: usize,
    k: usize,
    rng: &mut RandomStream,
    scratch: &mut Vec<usize>,
) -> Vec<Vec<usize>> {
    scratch.clear();
    scratch.extend_from_slice(remaining);
    let r = scratch.len();
    let mut swaps = Vec::with_capacity(b);
    (0..k)
        .map(|_| {
            swaps.clear();
            for pos in 0..b {
                let other = pos + rng.index(r - pos);
                scratch.swap(pos, other);
                swaps.push(other);
            }
            let batch = scratch[..b].to_vec();
            for (pos, &other) in swaps.iter().enumerate().rev() {
                scratch.swap(pos, other);
            }
            batch
        })
        .collect()
}

fn lexicographic_batches(remaining: &[usize], b: usize, k: usize) -> Vec<Vec<usize>> {
    let r = remaining.len();
    let mut out = Vec::new();
    let mut pos: Vec<usize> = (0..b).collect();
    loop {
        out.push(pos.iter().map(|&p| remaining[p]).collect());
        if out.len() == k {
            break;
        }
        // advance to the next combination
        let Some(i) = (0..b).rev().find(|&i| pos[i] < r - b + i) else {
            break;
        };
        pos[i] += 1;
        for t in i + 1..b {
            pos[t] = pos[t - 1] + 1;
        }
    }
    out
}

/// Uniform random permutation (Fisher-Yates on the seeded stream), with
/// one event per pick.
pub fn random_reorder(pool: &SamplePool, rng: &mut RandomStream) -> SelectionTrace {
    let started = Instant::now();
    let n = pool.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.index(i + 1);
        order.swap(i, j);
    }
    let mut tb = TraceBuilder::new(pool, PolicySpec::Random.label());
    let mut t0 = Some(started);
    for i in order {
        let started = t0.take().unwrap_or_else(Instant::now);
        tb.commit(vec![i], started);
    }
    tb.trace
}
