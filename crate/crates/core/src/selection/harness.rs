//! Replicated runs of a policy, summarized as convergence curves.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PolicyError, PolicySpec, SelectionTrace};
use crate::rng::{RandomStream, RNG_NAME};
use crate::sample::SamplePool;
use crate::state::SelectionState;
use crate::stats;
use crate::wasserstein::{wass_vector, Objective};

/// Header shared by every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub rng: String,
    pub seed: u64,
    pub pool_hash: String,
    /// Effective configuration that produced the report.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ReportMeta {
    pub fn new(seed: u64, pool_hash: String, config: serde_json::Value) -> Self {
        Self {
            rng: RNG_NAME.to_string(),
            seed,
            pool_hash,
            config,
        }
    }
}

/// Summary of one policy across replicates, one entry per checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCurve {
    pub label: String,
    pub policy: String,
    pub batch_size: Option<usize>,
    pub num_batches: Option<usize>,
    pub replicates: usize,
    pub mean: Vec<f64>,
    /// 2.5th percentile across replicates, never above the mean.
    pub lo: Vec<f64>,
    /// 97.5th percentile across replicates, never below the mean.
    pub hi: Vec<f64>,
    /// `mean - 2 * stderr`.
    pub se_lo: Vec<f64>,
    /// `mean + 2 * stderr`.
    pub se_hi: Vec<f64>,
    /// Raw values, `values[replicate][checkpoint]`.
    pub values: Vec<Vec<f64>>,
    /// Child seed of each replicate.
    pub seeds: Vec<u64>,
    pub iterations: Vec<usize>,
    pub evaluations: Vec<u64>,
    /// Wall time per replicate; absent unless timing was requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<Vec<f64>>,
}

impl PolicyCurve {
    /// Band width `hi - lo` at checkpoint position `c`.
    pub fn band_width(&self, c: usize) -> f64 {
        self.hi[c] - self.lo[c]
    }

    /// Values of every replicate at checkpoint position `c`.
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub meta: ReportMeta,
    /// `"input"` or `"output"`.
    pub space: String,
    pub checkpoints: Vec<usize>,
    pub policies: Vec<PolicyCurve>,
}

impl ConvergenceReport {
    pub fn policy(&self, label: &str) -> Option<&PolicyCurve> {
        self.policies.iter().find(|p| p.label == label)
    }

    pub fn checkpoint_index(&self, m: usize) -> Option<usize> {
        self.checkpoints.iter().position(|&c| c == m)
    }
}

/// Aggregates per-replicate curves. `values[r][c]` is replicate `r` at
/// checkpoint position `c`.
pub fn curve_from_values(label: String, spec: Option<&PolicySpec>, values: Vec<Vec<f64>>) -> PolicyCurve {
    let replicates = values.len();
    let n_cp = values.first().map_or(0, Vec::len);
    let mut curve = PolicyCurve {
        label,
        policy: spec.map_or_else(|| "trace".to_string(), |s| s.tag().to_string()),
        batch_size: spec.and_then(PolicySpec::batch_size),
        num_batches: match spec {
            Some(PolicySpec::Batch(c)) => Some(c.num_batches),
            _ => None,
        },
        replicates,
        mean: Vec::with_capacity(n_cp),
        lo: Vec::with_capacity(n_cp),
        hi: Vec::with_capacity(n_cp),
        se_lo: Vec::with_capacity(n_cp),
        se_hi: Vec::with_capacity(n_cp),
        values: Vec::new(),
        seeds: Vec::new(),
        iterations: Vec::new(),
        evaluations: Vec::new(),
        wall_time_ms: None,
    };
    for c in 0..n_cp {
        let col: Vec<f64> = values.iter().map(|v| v[c]).collect();
        let mean = stats::mean(&col);
        let se = stats::std_error(&col);
        curve.mean.push(mean);
        curve.lo.push(stats::percentile(&col, 0.025).min(mean));
        curve.hi.push(stats::percentile(&col, 0.975).max(mean));
        curve.se_lo.push(mean - 2.0 * se);
        curve.se_hi.push(mean + 2.0 * se);
    }
    curve.values = values;
    curve
}

/// Sorted, de-duplicated checkpoints, each within `[1, n]`.
pub(crate) fn normalize_checkpoints(checkpoints: &[usize], n: usize) -> Result<Vec<usize>, PolicyError> {
    let mut cps = checkpoints.to_vec();
    cps.sort_unstable();
    cps.dedup();
    if let Some(&m) = cps.iter().find(|&&m| m == 0 || m > n) {
        return Err(PolicyError::Checkpoint { m, n });
    }
    Ok(cps)
}

/// Manhattan norm of the first `m` samples of `order` against the whole
/// pool, for each checkpoint `m` (sorted ascending on return).
pub fn prefix_curve(pool: &SamplePool, order: &[usize], checkpoints: &[usize]) -> Result<Vec<f64>, PolicyError> {
    let cps = normalize_checkpoints(checkpoints, order.len().min(pool.len()))?;
    let mut state = SelectionState::new(pool);
    let mut out = Vec::with_capacity(cps.len());
    let mut next = 0;
    for (k, &i) in order.iter().enumerate() {
        if next == cps.len() {
            break;
        }
        state.insert(pool, i).expect("order is a permutation");
        if k + 1 == cps[next] {
            out.push(wass_vector(pool, &state).expect("non-empty").manhattan);
            next += 1;
        }
    }
    Ok(out)
}

/// All replicate traces plus their summary curve.
#[derive(Debug, Clone)]
pub struct HarnessRun {
    pub curve: PolicyCurve,
    pub traces: Vec<SelectionTrace>,
    pub checkpoints: Vec<usize>,
}

/// Runs `policy` `replicates` times, replicate `r` on `root.child(r, 0)`,
/// and samples each trace's Manhattan distance at the checkpoints.
pub fn replicate_harness(
    pool: &SamplePool,
    policy: &PolicySpec,
    objective: &Objective,
    replicates: usize,
    checkpoints: &[usize],
    root: &RandomStream,
) -> Result<HarnessRun, PolicyError> {
    if replicates == 0 {
        return Err(PolicyError::NoReplicates);
    }
    if let PolicySpec::Batch(cfg) = policy {
        cfg.validate(pool.len())?;
    }
    let cps = normalize_checkpoints(checkpoints, pool.len())?;
    let runs: Vec<(u64, SelectionTrace, Vec<f64>)> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = root.child(r, 0);
            let seed = rng.seed();
            let trace = policy.run(pool, objective, &mut rng)?;
            let values = prefix_curve(pool, &trace.order(), &cps)?;
            Ok((seed, trace, values))
        })
        .collect::<Result<_, PolicyError>>()?;
    let mut seeds = Vec::with_capacity(replicates);
    let mut traces = Vec::with_capacity(replicates);
    let mut values = Vec::with_capacity(replicates);
    for (s, t, v) in runs {
        seeds.push(s);
        traces.push(t);
        values.push(v);
    }
    let mut curve = curve_from_values(policy.label(), Some(policy), values);
    curve.seeds = seeds;
    curve.iterations = traces.iter().map(SelectionTrace::iterations).collect();
    curve.evaluations = traces.iter().map(|t| t.evaluations).collect();
    Ok(HarnessRun {
        curve,
        traces,
        checkpoints: cps,
    })
}

impl HarnessRun {
    /// Attaches measured wall time per replicate to the curve.
    pub fn with_timing(mut self) -> Self {
        self.curve.wall_time_ms = Some(
            self.traces
                .iter()
                .map(|t| t.total_elapsed().as_secs_f64() * 1e3)
                .collect(),
        );
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{generate_pool, Prior, PriorSpec};
    use crate::selection::BatchConfig;

    fn normal_pool(n: usize, d: usize, seed: u64) -> SamplePool {
        let spec = PriorSpec {
            priors: vec![Prior::Normal { mean: 0.0, sd: 1.0 }; d],
        };
        generate_pool(&spec, n, &mut RandomStream::new(seed)).unwrap()
    }

    #[test]
    fn single_replicate_band_collapses() {
        let pool = normal_pool(40, 2, 1);
        let run = replicate_harness(
            &pool,
            &PolicySpec::Random,
            &Objective::manhattan(),
            1,
            &[5, 10, 40],
            &RandomStream::new(3),
        )
        .unwrap();
        let c = &run.curve;
        assert_eq!(c.lo, c.mean);
        assert_eq!(c.hi, c.mean);
        assert_eq!(c.mean[2], 0.0);
    }

    #[test]
    fn greedy_replicates_identical() {
        let pool = normal_pool(30, 3, 2);
        let run = replicate_harness(
            &pool,
            &PolicySpec::Greedy,
            &Objective::manhattan(),
            4,
            &(1..=30).collect::<Vec<_>>(),
            &RandomStream::new(3),
        )
        .unwrap();
        for c in 0..30 {
            assert_eq!(run.curve.band_width(c), 0.0);
        }
        assert!(run.traces.windows(2).all(|w| w[0].order() == w[1].order()));
    }

    #[test]
    fn prefix_curve_matches_trace_events() {
        let pool = normal_pool(50, 2, 4);
        let trace = PolicySpec::Batch(BatchConfig::new(10, 8))
            .run(&pool, &Objective::manhattan(), &mut RandomStream::new(6))
            .unwrap();
        let cps: Vec<usize> = trace.events.iter().map(|e| e.cumulative).collect();
        let curve = prefix_curve(&pool, &trace.order(), &cps).unwrap();
        let recorded: Vec<f64> = trace.events.iter().map(|e| e.w.manhattan).collect();
        assert_eq!(curve, recorded);
    }

    #[test]
    fn bad_checkpoints_and_replicates() {
        let pool = normal_pool(10, 1, 4);
        let root = RandomStream::new(0);
        let obj = Objective::manhattan();
        assert_eq!(
            replicate_harness(&pool, &PolicySpec::Random, &obj, 2, &[0], &root).unwrap_err(),
            PolicyError::Checkpoint { m: 0, n: 10 }
        );
        assert_eq!(
            replicate_harness(&pool, &PolicySpec::Random, &obj, 2, &[11], &root).unwrap_err(),
            PolicyError::Checkpoint { m: 11, n: 10 }
        );
        assert_eq!(
            replicate_harness(&pool, &PolicySpec::Random, &obj, 0, &[1], &root).unwrap_err(),
            PolicyError::NoReplicates
        );
    }

    #[test]
    fn band_brackets_mean() {
        let pool = normal_pool(60, 2, 5);
        let run = replicate_harness(
            &pool,
            &PolicySpec::Random,
            &Objective::manhattan(),
            50,
            &[3, 10, 30, 60],
            &RandomStream::new(8),
        )
        .unwrap();
        let c = &run.curve;
        for i in 0..4 {
            assert!(c.lo[i] <= c.mean[i] && c.mean[i] <= c.hi[i]);
            assert!(c.mean[i] >= 0.0);
        }
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let pool = normal_pool(80, 2, 9);
        let policy = PolicySpec::Batch(BatchConfig::new(8, 30));
        let cps = [8, 16, 40, 80];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    replicate_harness(&pool, &policy, &Objective::manhattan(), 5, &cps, &RandomStream::new(1)).unwrap()
                })
        };
        let (a, b) = (run(1), run(4));
        assert_eq!(a.curve, b.curve);
        for (x, y) in a.traces.iter().zip(&b.traces) {
            assert_eq!(x.order(), y.order());
        }
    }
}
