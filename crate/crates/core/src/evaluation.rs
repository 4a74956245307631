//! Propagation of ordered samples through a model, and convergence of the
//! propagated outputs toward the full output distribution.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::phasefield::{self, extract_qoi, PhaseFieldError, PhaseFieldParams, QoIRecord, Trajectory};
use crate::rng::RandomStream;
use crate::sample::{PoolError, SamplePool};
use crate::selection::{
    curve_from_values, prefix_curve, replicate_harness, ConvergenceReport, HarnessRun, PolicyCurve, PolicyError,
    PolicySpec, ReportMeta,
};
use crate::selection::{BatchConfig, DrawMode};
use crate::wasserstein::Objective;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("budget {budget} exceeds pool size {n}")]
    Budget { budget: usize, n: usize },
    #[error("order entry {0} is not a valid sample index")]
    BadOrder(usize),
    #[error("output pool is incomplete: sample {0} has not been propagated")]
    Incomplete(usize),
    #[error("no successful outputs among the first {0} picks")]
    EmptyPrefix(usize),
    #[error("all model evaluations failed")]
    NoOutputs,
    #[error("output pool was built for {found} samples, pool has {expected}")]
    SizeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Pool(#[from] PoolError),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("model failed on sample {sample}: {message}")]
pub struct ModelError {
    pub sample: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub values: Vec<f64>,
    /// Free-form, `;`-separated annotations (empty when nothing to report).
    pub flags: String,
}

/// A map from one input sample to one output vector.
pub trait Model: Sync {
    fn name(&self) -> &str;

    /// Column names of the output vector for inputs of dimension `input_dim`.
    fn output_names(&self, input_dim: usize) -> Vec<String>;

    fn output_dim(&self, input_dim: usize) -> usize {
        self.output_names(input_dim).len()
    }

    /// Same input and same `sample_id` always give the same output.
    fn is_deterministic(&self) -> bool {
        true
    }

    fn evaluate(&self, sample_id: usize, input: &[f64]) -> Result<ModelOutput, ModelError>;
}

/// Output equals input.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityModel;

impl Model for IdentityModel {
    fn name(&self) -> &str {
        "identity"
    }

    fn output_names(&self, input_dim: usize) -> Vec<String> {
        (0..input_dim).map(|j| format!("x{j}")).collect()
    }

    fn evaluate(&self, _sample_id: usize, input: &[f64]) -> Result<ModelOutput, ModelError> {
        Ok(ModelOutput {
            values: input.to_vec(),
            flags: String::new(),
        })
    }
}

/// Cheap nonlinear analytic stand-in for an expensive simulator, built
/// mostly from one-input responses with a weak interaction:
///
/// ```text
/// y0 = x0 + sin(2 x1) / 2
/// y1 = exp(x2 / 2)
/// y2 = x3^3 / 3 + tanh(x0)
/// y3 = ln(1 + x2^2) + x0 x1 / 5
/// ```
///
/// Indices are taken modulo the input dimension.
#[derive(Debug, Clone, Copy, Default)]
pub struct SurrogateModel;

impl Model for SurrogateModel {
    fn name(&self) -> &str {
        "surrogate"
    }

    fn output_names(&self, _input_dim: usize) -> Vec<String> {
        (0..4).map(|j| format!("y{j}")).collect()
    }

    fn evaluate(&self, _sample_id: usize, x: &[f64]) -> Result<ModelOutput, ModelError> {
        let at = |j: usize| x[j % x.len()];
        Ok(ModelOutput {
            values: vec![
                at(0) + 0.5 * (2.0 * at(1)).sin(),
                (0.5 * at(2)).exp(),
                at(3).powi(3) / 3.0 + at(0).tanh(),
                (1.0 + at(2) * at(2)).ln() + 0.2 * at(0) * at(1),
            ],
            flags: String::new(),
        })
    }
}

/// Runs the Cahn-Hilliard model with `[c*, W, kappa, M]` from each sample
/// and reports the microstructure descriptors of the final field. The
/// initial-condition noise of sample `i` comes from child stream `(i, 0)`
/// of `seed`.
#[derive(Debug, Clone)]
pub struct PhaseFieldModel {
    pub base: PhaseFieldParams,
    pub seed: u64,
}

impl PhaseFieldModel {
    pub fn new(base: PhaseFieldParams, seed: u64) -> Self {
        Self { base, seed }
    }

    pub fn params_for(&self, input: &[f64]) -> Result<PhaseFieldParams, PhaseFieldError> {
        self.base.with_inputs(input)
    }

    pub fn simulate(&self, sample_id: usize, input: &[f64]) -> Result<(Trajectory, QoIRecord), PhaseFieldError> {
        let p = self.params_for(input)?;
        let mut rng = RandomStream::new(self.seed).child(sample_id as u64, 0);
        let traj = phasefield::run(&p, &mut rng)?;
        let qoi = extract_qoi(traj.final_field(), &p);
        Ok((traj, qoi))
    }
}

impl Model for PhaseFieldModel {
    fn name(&self) -> &str {
        "phasefield"
    }

    fn output_names(&self, _input_dim: usize) -> Vec<String> {
        QoIRecord::NAMES.iter().map(|s| s.to_string()).collect()
    }

    fn evaluate(&self, sample_id: usize, input: &[f64]) -> Result<ModelOutput, ModelError> {
        let (_, qoi) = self.simulate(sample_id, input).map_err(|e| ModelError {
            sample: sample_id,
            message: e.to_string(),
        })?;
        Ok(ModelOutput {
            values: qoi.to_vec(),
            flags: qoi.flags.to_field(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowStatus {
    Pending,
    Done(ModelOutput),
    Failed(String),
}

/// Model outputs keyed by original sample index.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPool {
    names: Vec<String>,
    rows: Vec<RowStatus>,
    /// Wall time of each model call, in evaluation order.
    call_times: Vec<(usize, Duration)>,
}

impl OutputPool {
    pub fn empty(n: usize, names: Vec<String>) -> Self {
        Self {
            names,
            rows: vec![RowStatus::Pending; n],
            call_times: Vec::new(),
        }
    }

    /// Pool with some rows already known (e.g. read back from disk).
    pub fn from_rows(names: Vec<String>, rows: Vec<RowStatus>) -> Self {
        Self {
            names,
            rows,
            call_times: Vec::new(),
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &RowStatus {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[RowStatus] {
        &self.rows
    }

    pub fn evaluated(&self) -> usize {
        self.rows.iter().filter(|r| !matches!(r, RowStatus::Pending)).count()
    }

    pub fn failed(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| matches!(r, RowStatus::Failed(_)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn call_times(&self) -> &[(usize, Duration)] {
        &self.call_times
    }

    /// Evaluates the model on the first `budget` entries of `order` that
    /// are still pending. Earlier results are kept.
    pub fn extend(&mut self, pool: &SamplePool, order: &[usize], model: &dyn Model, budget: usize) -> Result<(), EvalError> {
        let n = pool.len();
        if self.rows.len() != n {
            return Err(EvalError::SizeMismatch {
                expected: n,
                found: self.rows.len(),
            });
        }
        if budget > n || budget > order.len() {
            return Err(EvalError::Budget { budget, n });
        }
        if let Some(&bad) = order.iter().find(|&&i| i >= n) {
            return Err(EvalError::BadOrder(bad));
        }
        let todo: Vec<usize> = order[..budget]
            .iter()
            .copied()
            .filter(|&i| matches!(self.rows[i], RowStatus::Pending))
            .collect();
        let results: Vec<(usize, RowStatus, Duration)> = todo
            .par_iter()
            .map(|&i| {
                let started = Instant::now();
                let status = match model.evaluate(i, pool.row(i)) {
                    Ok(out) => RowStatus::Done(out),
                    Err(e) => RowStatus::Failed(e.message),
                };
                (i, status, started.elapsed())
            })
            .collect();
        for (i, status, took) in results {
            self.rows[i] = status;
            self.call_times.push((i, took));
        }
        Ok(())
    }

    /// Successful rows as a sample pool, plus the original index of each.
    pub fn successful(&self) -> Result<(SamplePool, Vec<usize>), EvalError> {
        let mut data = Vec::new();
        let mut index = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            match r {
                RowStatus::Pending => return Err(EvalError::Incomplete(i)),
                RowStatus::Done(out) => {
                    data.extend_from_slice(&out.values);
                    index.push(i);
                }
                RowStatus::Failed(_) => {}
            }
        }
        if index.is_empty() {
            return Err(EvalError::NoOutputs);
        }
        let pool = SamplePool::from_flat(index.len(), self.names.len(), data)?;
        Ok((pool, index))
    }
}

/// Evaluates the first `budget` picks of `order`.
pub fn propagate(pool: &SamplePool, order: &[usize], model: &dyn Model, budget: usize) -> Result<OutputPool, EvalError> {
    let mut out = OutputPool::empty(pool.len(), model.output_names(pool.dim()));
    out.extend(pool, order, model, budget)?;
    Ok(out)
}

/// Output-space Manhattan distance between the first `m` picks and all
/// samples, for each checkpoint `m`. Failed rows are dropped from both
/// sides; `m` counts picks, failed or not.
pub fn output_convergence(full: &OutputPool, order: &[usize], checkpoints: &[usize]) -> Result<Vec<f64>, EvalError> {
    let n = full.len();
    let (reference, index) = full.successful()?;
    let mut to_ref = vec![usize::MAX; n];
    for (k, &i) in index.iter().enumerate() {
        to_ref[i] = k;
    }
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if let Some(&m) = cps.iter().find(|&&m| m == 0 || m > n) {
        return Err(PolicyError::Checkpoint { m, n }.into());
    }
    let mut mapped = Vec::with_capacity(index.len());
    let mut successes_at = Vec::with_capacity(cps.len());
    let mut next = 0;
    for (k, &i) in order.iter().enumerate() {
        if i >= n {
            return Err(EvalError::BadOrder(i));
        }
        if to_ref[i] != usize::MAX {
            mapped.push(to_ref[i]);
        }
        while next < cps.len() && cps[next] == k + 1 {
            if mapped.is_empty() {
                return Err(EvalError::EmptyPrefix(cps[next]));
            }
            successes_at.push(mapped.len());
            next += 1;
        }
    }
    if next < cps.len() {
        return Err(EvalError::BadOrder(order.len()));
    }
    // consecutive checkpoints may share a success count after failures
    let mut unique = successes_at.clone();
    unique.dedup();
    let values = prefix_curve(&reference, &mapped, &unique)?;
    Ok(successes_at
        .iter()
        .map(|s| values[unique.iter().position(|u| u == s).expect("present")])
        .collect())
}

/// Output-space curve of several orders treated as replicates.
pub fn output_curve(full: &OutputPool, label: String, orders: &[Vec<usize>], checkpoints: &[usize]) -> Result<PolicyCurve, EvalError> {
    let values = orders
        .iter()
        .map(|o| output_convergence(full, o, checkpoints))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(curve_from_values(label, None, values))
}

/// Iteration boundaries of a batch policy: `b, 2b, ..., n`.
pub fn batch_checkpoints(b: usize, n: usize) -> Vec<usize> {
    let mut cps: Vec<usize> = (1..).map(|t| t * b).take_while(|&m| m < n).collect();
    cps.push(n);
    cps
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub report: ConvergenceReport,
    pub runs: Vec<HarnessRun>,
}

/// One batch-policy run per batch size (plus the random baseline when
/// `baseline` is set), all on the same pool, checkpoints and root stream.
/// When `checkpoints` is empty the union of every size's iteration
/// boundaries is used.
#[allow(clippy::too_many_arguments)]
pub fn batch_size_sweep(
    pool: &SamplePool,
    sizes: &[usize],
    k: usize,
    draw: DrawMode,
    replicates: usize,
    checkpoints: &[usize],
    root: &RandomStream,
    objective: &Objective,
    baseline: bool,
    meta: ReportMeta,
) -> Result<SweepResult, EvalError> {
    let n = pool.len();
    let mut specs = Vec::new();
    for &b in sizes {
        let cfg = BatchConfig {
            batch_size: b,
            num_batches: k,
            draw,
        };
        cfg.validate(n)?;
        specs.push(PolicySpec::Batch(cfg));
    }
    if baseline {
        specs.push(PolicySpec::Random);
    }
    let cps = if checkpoints.is_empty() {
        let mut all: Vec<usize> = sizes.iter().flat_map(|&b| batch_checkpoints(b, n)).collect();
        all.sort_unstable();
        all.dedup();
        all
    } else {
        checkpoints.to_vec()
    };
    let runs = specs
        .iter()
        .map(|spec| replicate_harness(pool, spec, objective, replicates, &cps, root))
        .collect::<Result<Vec<_>, _>>()?;
    let report = ConvergenceReport {
        meta,
        space: "input".into(),
        checkpoints: runs.first().map(|r| r.checkpoints.clone()).unwrap_or_default(),
        policies: runs.iter().map(|r| r.curve.clone()).collect(),
    };
    Ok(SweepResult { report, runs })
}
