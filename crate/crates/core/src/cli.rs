//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 input/output failure,
//! 4 simulation failure, 5 consistency failure (pool hash mismatch).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::evaluation::{
    batch_checkpoints, batch_size_sweep, output_curve, EvalError, IdentityModel, Model, ModelError, ModelOutput,
    OutputPool, PhaseFieldModel, SurrogateModel,
};
use crate::io::{self, IoError, TraceFile};
use crate::phasefield::PhaseFieldParams;
use crate::rng::{RandomStream, RNG_NAME};
use crate::sample::{generate_pool, PriorSpec, SamplePool};
use crate::selection::{
    curve_from_values, prefix_curve, replicate_harness, BatchConfig, DrawMode, PolicyCurve, PolicyError, PolicySpec,
    ReportMeta,
};
use crate::wasserstein::{Aggregation, Objective};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("consistency error: {0}")]
    Consistency(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Simulation(_) => 4,
            CliError::Consistency(_) => 5,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Policy(p) => p.into(),
            EvalError::Budget { .. } | EvalError::EmptyPrefix(_) => CliError::Config(e.to_string()),
            EvalError::NoOutputs => CliError::Simulation(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Greedy,
    #[default]
    Batch,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Identity,
    Surrogate,
    Phasefield,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Input pool CSV.
    pub pool: Option<PathBuf>,
    /// Output of `gen` and `simulate`.
    pub out: Option<PathBuf>,
    /// Trace JSONL: written by `reorder`, read by `simulate`.
    pub trace: Option<PathBuf>,
    /// Traces read by `evaluate`.
    pub traces: Vec<PathBuf>,
    pub report: Option<PathBuf>,
    /// Plot CSV.
    pub csv: Option<PathBuf>,
    /// Precomputed QoI CSV read by `evaluate`.
    pub outputs: Option<PathBuf>,
    /// Directory for phase-field snapshots.
    pub snapshots: Option<PathBuf>,
}

/// Everything a command depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub priors: PriorSpec,
    pub n: usize,
    pub seed: u64,
    pub policy: PolicyKind,
    pub b: Option<usize>,
    pub k: Option<usize>,
    pub draw: DrawMode,
    pub replicates: usize,
    pub checkpoints: Option<Vec<usize>>,
    pub aggregation: Aggregation,
    /// Divide each dimension's distance by its standard deviation.
    pub normalize: bool,
    /// Batch sizes for `compare`.
    pub sizes: Vec<usize>,
    /// Include the random baseline in `compare`.
    pub baseline: bool,
    pub model: ModelKind,
    pub model_seed: u64,
    pub budget: Option<usize>,
    pub resume: bool,
    pub phasefield: PhaseFieldParams,
    /// Record wall-clock times (outputs are then no longer reproducible).
    pub timing: bool,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            priors: PriorSpec::phase_field_demo(),
            n: 1000,
            seed: 0,
            policy: PolicyKind::Batch,
            b: None,
            k: None,
            draw: DrawMode::Random,
            replicates: 1,
            checkpoints: None,
            aggregation: Aggregation::Manhattan,
            normalize: false,
            sizes: Vec::new(),
            baseline: true,
            model: ModelKind::Identity,
            model_seed: 0,
            budget: None,
            resume: false,
            phasefield: PhaseFieldParams::default(),
            timing: false,
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        io::to_json(self)
    }

    pub fn policy_spec(&self) -> Result<PolicySpec, CliError> {
        Ok(match self.policy {
            PolicyKind::Greedy => PolicySpec::Greedy,
            PolicyKind::Random => PolicySpec::Random,
            PolicyKind::Batch => {
                let (Some(b), Some(k)) = (self.b, self.k) else {
                    return Err(CliError::Config("policy batch requires b and k".into()));
                };
                PolicySpec::Batch(BatchConfig {
                    batch_size: b,
                    num_batches: k,
                    draw: self.draw,
                })
            }
        })
    }

    pub fn objective(&self, pool: &SamplePool) -> Objective {
        if self.normalize {
            Objective::std_normalized(pool, self.aggregation)
        } else {
            Objective {
                aggregation: self.aggregation,
                weights: None,
            }
        }
    }

    fn model(&self) -> Box<dyn Model> {
        match self.model {
            ModelKind::Identity => Box::new(IdentityModel),
            ModelKind::Surrogate => Box::new(SurrogateModel),
            ModelKind::Phasefield => Box::new(PhaseFieldModel::new(self.phasefield.clone(), self.model_seed)),
        }
    }

    /// Fields that determine model outputs; resumed runs must match them.
    fn model_signature(&self) -> serde_json::Value {
        match self.model {
            ModelKind::Phasefield => json!({
                "model": self.model,
                "model_seed": self.model_seed,
                "phasefield": self.phasefield,
            }),
            _ => json!({ "model": self.model }),
        }
    }

    fn meta(&self, seed: u64, pool_hash: &str) -> ReportMeta {
        ReportMeta::new(seed, pool_hash.to_string(), serde_json::to_value(self).expect("serializable"))
    }

    /// Checks that do not need input files.
    pub fn validate(&self, cmd: CommandKind) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.replicates == 0 {
            return bad("replicates must be at least 1");
        }
        if self.checkpoints.as_ref().is_some_and(|c| c.contains(&0)) {
            return bad("checkpoints must be at least 1");
        }
        self.phasefield
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let p = &self.paths;
        match cmd {
            CommandKind::Gen => {
                if self.n == 0 {
                    return bad("n must be at least 1");
                }
                self.priors
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
                require(&p.out, "output path (-o)")?;
            }
            CommandKind::Reorder => {
                require(&p.pool, "pool path")?;
                require(&p.trace, "trace path")?;
                let spec = self.policy_spec()?;
                if let PolicySpec::Batch(c) = spec {
                    if c.batch_size == 0 {
                        return bad("b must be at least 1");
                    }
                    if c.num_batches == 0 {
                        return bad("k must be at least 1");
                    }
                }
            }
            CommandKind::Simulate => {
                require(&p.pool, "pool path")?;
                require(&p.out, "output path (-o)")?;
            }
            CommandKind::Evaluate => {
                require(&p.pool, "pool path")?;
                if p.traces.is_empty() {
                    return bad("at least one trace is required");
                }
            }
            CommandKind::Compare => {
                require(&p.pool, "pool path")?;
                if self.sizes.is_empty() {
                    return bad("sizes must list at least one batch size");
                }
                if self.sizes.contains(&0) {
                    return bad("batch sizes must be at least 1");
                }
                match self.k {
                    None => return bad("compare requires k"),
                    Some(0) => return bad("k must be at least 1"),
                    Some(_) => {}
                }
                if p.report.is_none() && p.csv.is_none() {
                    return bad("compare needs a report or csv path");
                }
            }
        }
        for out in [&p.out, &p.report, &p.csv].into_iter().flatten() {
            writable(out)?;
        }
        if cmd == CommandKind::Reorder {
            writable(p.trace.as_ref().expect("checked"))?;
        }
        if let Some(dir) = &p.snapshots {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("snapshot directory {} does not exist", dir.display())));
            }
        }
        Ok(())
    }
}

fn require(path: &Option<PathBuf>, what: &str) -> Result<(), CliError> {
    match path {
        Some(_) => Ok(()),
        None => Err(CliError::Config(format!("missing {what}"))),
    }
}

fn writable(path: &Path) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        return Err(CliError::Config(format!("directory {} does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(CliError::Config(format!("{} is a directory", path.display())));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Gen,
    Reorder,
    Simulate,
    Evaluate,
    Compare,
}

#[derive(Debug, Parser)]
#[command(name = "mc-reorder", version, about = "Reorder Monte Carlo sample pools so early prefixes match the full pool")]
pub struct Cli {
    /// Worker threads [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a sample pool from the priors
    Gen(GenArgs),
    /// Reorder a pool with the greedy, batch or random policy
    Reorder(ReorderArgs),
    /// Propagate (reordered) samples through a model
    Simulate(SimulateArgs),
    /// Input- and output-space convergence of existing traces
    Evaluate(EvaluateArgs),
    /// Batch-size sweep against the random baseline
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config file; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Validate and print the merged configuration, then exit
    #[arg(long)]
    pub check_config: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// JSON file with a `priors` list [default: phase-field demo priors]
    #[arg(long, value_name = "FILE")]
    pub priors: Option<PathBuf>,
    /// Number of samples
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output pool CSV
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectionArgs {
    /// Candidate draw mode
    #[arg(long, value_enum)]
    pub draw: Option<DrawMode>,
    /// Number of replicates
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated sample counts at which to report distances
    #[arg(long, value_delimiter = ',', value_name = "M,...")]
    pub checkpoints: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// How per-dimension distances are combined while selecting
    #[arg(long, value_enum)]
    pub aggregation: Option<Aggregation>,
    /// Divide each dimension's distance by its standard deviation while selecting
    #[arg(long)]
    pub normalize: bool,
    /// Record wall-clock times (breaks byte-identical reruns)
    #[arg(long)]
    pub timing: bool,
    /// Report JSON
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Plot CSV (policy,b,m,mean,lo,hi)
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReorderArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Input pool CSV
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Selection policy [default: batch]
    #[arg(long, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Batch size
    #[arg(long = "b", value_name = "B")]
    pub b: Option<usize>,
    /// Candidate batches per iteration
    #[arg(long = "k", value_name = "K")]
    pub k: Option<usize>,
    #[command(flatten)]
    pub sel: SelectionArgs,
    /// Output trace JSONL (replicate 0)
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model the samples are propagated through [default: identity]
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Seed of the phase-field initial-condition noise
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Phase-field grid cells per side
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Phase-field time steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// Phase-field time step
    #[arg(long)]
    pub dt: Option<f64>,
    /// Phase-field domain side length
    #[arg(long)]
    pub domain_l: Option<f64>,
    /// Phase-field initial noise amplitude
    #[arg(long)]
    pub noise_amp: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Input pool CSV
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Trace JSONL giving the propagation order [default: pool order]
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Number of samples to propagate [default: all]
    #[arg(long)]
    pub budget: Option<usize>,
    /// Keep rows already present in the output file
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Snapshot every this many steps (with --snapshots)
    #[arg(long)]
    pub snapshot_every: Option<usize>,
    /// Directory for phase-field snapshots
    #[arg(long, value_name = "DIR")]
    pub snapshots: Option<PathBuf>,
    /// Output QoI CSV
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Input pool CSV
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Trace JSONL; repeat for several traces
    #[arg(long, value_name = "FILE")]
    pub trace: Vec<PathBuf>,
    /// Precomputed outputs of every sample [default: run the model]
    #[arg(long, value_name = "FILE")]
    pub outputs: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated sample counts at which to report distances
    #[arg(long, value_delimiter = ',', value_name = "M,...")]
    pub checkpoints: Option<Vec<usize>>,
    /// Report JSON
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Plot CSV (policy,b,m,mean,lo,hi)
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Input pool CSV
    #[arg(long, value_name = "FILE")]
    pub pool: Option<PathBuf>,
    /// Comma-separated batch sizes
    #[arg(long, value_delimiter = ',', value_name = "B,...")]
    pub sizes: Option<Vec<usize>>,
    /// Candidate batches per iteration
    #[arg(long = "k", value_name = "K")]
    pub k: Option<usize>,
    /// Leave out the random baseline
    #[arg(long)]
    pub no_baseline: bool,
    #[command(flatten)]
    pub sel: SelectionArgs,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn base_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    match &args.config {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = io::read_text(path).map_err(|e| CliError::Config(e.to_string()))?;
            RunConfig::from_json(&text)
        }
    }
}

impl SelectionArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.draw, self.draw);
        set(&mut c.replicates, self.replicates);
        set_opt(&mut c.checkpoints, self.checkpoints.clone());
        set(&mut c.seed, self.seed);
        set(&mut c.aggregation, self.aggregation);
        c.normalize |= self.normalize;
        c.timing |= self.timing;
        set_opt(&mut c.paths.report, self.report.clone());
        set_opt(&mut c.paths.csv, self.csv.clone());
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        set(&mut c.model, self.model);
        set(&mut c.model_seed, self.model_seed);
        let p = &mut c.phasefield;
        set(&mut p.grid_n, self.grid_n);
        set(&mut p.steps, self.steps);
        set(&mut p.dt, self.dt);
        set(&mut p.domain_l, self.domain_l);
        set(&mut p.noise_amp, self.noise_amp);
    }
}

impl Command {
    pub fn kind(&self) -> CommandKind {
        match self {
            Command::Gen(_) => CommandKind::Gen,
            Command::Reorder(_) => CommandKind::Reorder,
            Command::Simulate(_) => CommandKind::Simulate,
            Command::Evaluate(_) => CommandKind::Evaluate,
            Command::Compare(_) => CommandKind::Compare,
        }
    }

    fn config_args(&self) -> &ConfigArgs {
        match self {
            Command::Gen(a) => &a.cfg,
            Command::Reorder(a) => &a.cfg,
            Command::Simulate(a) => &a.cfg,
            Command::Evaluate(a) => &a.cfg,
            Command::Compare(a) => &a.cfg,
        }
    }

    /// Config file overlaid with the command-line flags.
    pub fn effective_config(&self) -> Result<RunConfig, CliError> {
        let mut c = base_config(self.config_args())?;
        match self {
            Command::Gen(a) => {
                if let Some(path) = &a.priors {
                    let text = io::read_text(path).map_err(|e| CliError::Config(e.to_string()))?;
                    c.priors = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                }
                set(&mut c.n, a.n);
                set(&mut c.seed, a.seed);
                set_opt(&mut c.paths.out, a.out.clone());
            }
            Command::Reorder(a) => {
                set_opt(&mut c.paths.pool, a.pool.clone());
                set(&mut c.policy, a.policy);
                set_opt(&mut c.b, a.b);
                set_opt(&mut c.k, a.k);
                a.sel.apply(&mut c);
                set_opt(&mut c.paths.trace, a.trace.clone());
            }
            Command::Simulate(a) => {
                set_opt(&mut c.paths.pool, a.pool.clone());
                set_opt(&mut c.paths.trace, a.trace.clone());
                set_opt(&mut c.budget, a.budget);
                c.resume |= a.resume;
                a.model.apply(&mut c);
                set(&mut c.phasefield.snapshot_every, a.snapshot_every);
                set_opt(&mut c.paths.snapshots, a.snapshots.clone());
                set_opt(&mut c.paths.out, a.out.clone());
            }
            Command::Evaluate(a) => {
                set_opt(&mut c.paths.pool, a.pool.clone());
                if !a.trace.is_empty() {
                    c.paths.traces = a.trace.clone();
                }
                set_opt(&mut c.paths.outputs, a.outputs.clone());
                a.model.apply(&mut c);
                set_opt(&mut c.checkpoints, a.checkpoints.clone());
                set_opt(&mut c.paths.report, a.report.clone());
                set_opt(&mut c.paths.csv, a.csv.clone());
            }
            Command::Compare(a) => {
                set_opt(&mut c.paths.pool, a.pool.clone());
                set(&mut c.sizes, a.sizes.clone());
                set_opt(&mut c.k, a.k);
                if a.no_baseline {
                    c.baseline = false;
                }
                a.sel.apply(&mut c);
            }
        }
        Ok(c)
    }
}

/// Parses nothing, prints nothing on success beyond command summaries;
/// returns the error that determines the exit code.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.command.effective_config()?;
    let kind = cli.command.kind();
    cfg.validate(kind)?;
    if cli.command.config_args().check_config {
        print!("{}", cfg.to_json());
        return Ok(());
    }
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Config("threads must be at least 1".into())),
        Some(t) => t,
        None => 0,
    };
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    workers.install(|| match kind {
        CommandKind::Gen => cmd_gen(&cfg),
        CommandKind::Reorder => cmd_reorder(&cfg),
        CommandKind::Simulate => cmd_simulate(&cfg),
        CommandKind::Evaluate => cmd_evaluate(&cfg),
        CommandKind::Compare => cmd_compare(&cfg),
    })
}

fn load_pool(cfg: &RunConfig) -> Result<SamplePool, CliError> {
    Ok(io::read_pool(cfg.paths.pool.as_ref().expect("validated"))?)
}

fn load_trace(path: &Path, pool: &SamplePool) -> Result<TraceFile, CliError> {
    let trace = io::read_trace(path)?;
    let hash = pool.content_hash();
    match trace.pool_hash() {
        Some(h) if h == hash => Ok(trace),
        Some(h) => Err(CliError::Consistency(format!(
            "{} was produced from pool {h}, but the pool is {hash}",
            path.display()
        ))),
        None => Err(CliError::Consistency(format!("{} records no pool hash", path.display()))),
    }
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<(), CliError> {
    let mut rng = RandomStream::new(cfg.seed);
    let pool = generate_pool(&cfg.priors, cfg.n, &mut rng).map_err(|e| CliError::Config(e.to_string()))?;
    let out = cfg.paths.out.as_ref().expect("validated");
    io::write_pool(out, &pool)?;
    let hash = pool.content_hash();
    io::write_text(&io::sidecar(out, ".meta.json"), &io::to_json(&json!({ "meta": cfg.meta(cfg.seed, &hash) })))?;
    println!("{hash}");
    Ok(())
}

fn default_checkpoints(spec: &PolicySpec, n: usize) -> Vec<usize> {
    match spec.batch_size() {
        Some(b) => batch_checkpoints(b, n),
        None => (1..=n).collect(),
    }
}

pub fn cmd_reorder(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = load_pool(cfg)?;
    let n = pool.len();
    let spec = cfg.policy_spec()?;
    if let PolicySpec::Batch(c) = &spec {
        c.validate(n)?;
    }
    let checkpoints = cfg.checkpoints.clone().unwrap_or_else(|| default_checkpoints(&spec, n));
    let objective = cfg.objective(&pool);
    let root = RandomStream::new(cfg.seed);
    let mut run = replicate_harness(&pool, &spec, &objective, cfg.replicates, &checkpoints, &root)?;
    if cfg.timing {
        run = run.with_timing();
    }
    let hash = pool.content_hash();
    let first = &run.traces[0];
    let trace_meta = json!({
        "rng": RNG_NAME,
        "seed": cfg.seed,
        "replicate": 0,
        "replicate_seed": run.curve.seeds[0],
        "policy": spec.label(),
        "spec": spec,
        "pool_hash": hash,
        "evaluations": first.evaluations,
        "config": cfg,
    });
    let trace_path = cfg.paths.trace.as_ref().expect("validated");
    io::write_text(trace_path, &io::trace_to_jsonl(&trace_meta, first, cfg.timing))?;

    let report_path = match (&cfg.paths.report, cfg.replicates > 1) {
        (Some(p), _) => Some(p.clone()),
        (None, true) => Some(io::sidecar(trace_path, ".report.json")),
        (None, false) => None,
    };
    let report = crate::selection::ConvergenceReport {
        meta: cfg.meta(cfg.seed, &hash),
        space: "input".into(),
        checkpoints: run.checkpoints.clone(),
        policies: vec![run.curve.clone()],
    };
    if let Some(path) = &report_path {
        io::write_text(path, &io::to_json(&report))?;
    }
    if let Some(path) = &cfg.paths.csv {
        io::write_text(path, &io::report_plot_csv(&report))?;
    }
    println!(
        "{}: {} iterations, {} evaluations, final manhattan {}",
        spec.label(),
        first.iterations(),
        first.evaluations,
        first.final_manhattan().unwrap_or(0.0)
    );
    Ok(())
}

/// Wraps the phase-field model so every run also writes its snapshots.
struct SnapshotWriter<'a> {
    inner: &'a PhaseFieldModel,
    dir: &'a Path,
    errors: Mutex<Vec<String>>,
}

impl Model for SnapshotWriter<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn output_names(&self, input_dim: usize) -> Vec<String> {
        self.inner.output_names(input_dim)
    }

    fn evaluate(&self, sample_id: usize, input: &[f64]) -> Result<ModelOutput, ModelError> {
        let fail = |e: crate::phasefield::PhaseFieldError| ModelError {
            sample: sample_id,
            message: e.to_string(),
        };
        let (traj, qoi) = self.inner.simulate(sample_id, input).map_err(fail)?;
        let params = self.inner.params_for(input).map_err(fail)?;
        for snap in &traj.snapshots {
            if let Err(e) = io::write_snapshot(self.dir, sample_id, snap, &params) {
                self.errors.lock().expect("not poisoned").push(e.to_string());
            }
        }
        Ok(ModelOutput {
            values: qoi.to_vec(),
            flags: qoi.flags.to_field(),
        })
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = load_pool(cfg)?;
    let n = pool.len();
    let hash = pool.content_hash();
    let order: Vec<usize> = match &cfg.paths.trace {
        Some(path) => load_trace(path, &pool)?.order(),
        None => (0..n).collect(),
    };
    let budget = cfg.budget.unwrap_or(order.len());
    if budget > order.len() {
        return Err(CliError::Config(format!("budget {budget} exceeds the {} available samples", order.len())));
    }
    let out = cfg.paths.out.as_ref().expect("validated");
    let meta_path = io::sidecar(out, ".meta.json");
    let signature = cfg.model_signature();
    let model = cfg.model();
    let mut outputs = if cfg.resume && out.exists() {
        let meta: serde_json::Value = serde_json::from_str(&io::read_text(&meta_path)?)
            .map_err(|e| CliError::Io(format!("{}: {e}", meta_path.display())))?;
        if meta["pool_hash"] != json!(hash) {
            return Err(CliError::Consistency(format!("{} was produced from a different pool", out.display())));
        }
        if meta["model"] != signature {
            return Err(CliError::Consistency(format!("{} was produced by a different model", out.display())));
        }
        let existing = io::read_outputs(out, n)?;
        if existing.names() != model.output_names(pool.dim()).as_slice() {
            return Err(CliError::Consistency(format!("{} has different output columns", out.display())));
        }
        existing
    } else {
        OutputPool::empty(n, model.output_names(pool.dim()))
    };

    let snapshot_errors = match (&cfg.paths.snapshots, cfg.model) {
        (Some(dir), ModelKind::Phasefield) => {
            let inner = PhaseFieldModel::new(cfg.phasefield.clone(), cfg.model_seed);
            let writer = SnapshotWriter {
                inner: &inner,
                dir,
                errors: Mutex::new(Vec::new()),
            };
            outputs.extend(&pool, &order, &writer, budget)?;
            writer.errors.into_inner().expect("not poisoned")
        }
        (Some(_), _) => return Err(CliError::Config("snapshots are only produced by the phasefield model".into())),
        (None, _) => {
            outputs.extend(&pool, &order, model.as_ref(), budget)?;
            Vec::new()
        }
    };

    io::write_text(out, &io::outputs_to_csv(&outputs))?;
    let meta = json!({
        "rng": RNG_NAME,
        "pool_hash": hash,
        "model": signature,
        "evaluated": outputs.evaluated(),
        "failed": outputs.failed(),
        "config": cfg,
    });
    io::write_text(&meta_path, &io::to_json(&meta))?;
    if let Some(e) = snapshot_errors.first() {
        return Err(CliError::Io(e.clone()));
    }
    let failed = outputs.failed();
    if !failed.is_empty() {
        let detail: Vec<String> = failed
            .iter()
            .map(|&i| match outputs.row(i) {
                crate::evaluation::RowStatus::Failed(msg) => format!("sample {i}: {msg}"),
                _ => unreachable!(),
            })
            .collect();
        return Err(CliError::Simulation(detail.join("; ")));
    }
    println!("{} of {n} samples evaluated", outputs.evaluated());
    Ok(())
}

/// Input- and output-space curves of a set of traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub meta: ReportMeta,
    pub checkpoints: Vec<usize>,
    pub input: Vec<PolicyCurve>,
    pub output: Vec<PolicyCurve>,
    /// Samples whose model evaluation failed; excluded from output distances.
    pub failed: Vec<usize>,
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = load_pool(cfg)?;
    let n = pool.len();
    let hash = pool.content_hash();
    let traces = cfg
        .paths
        .traces
        .iter()
        .map(|p| load_trace(p, &pool))
        .collect::<Result<Vec<_>, _>>()?;

    // traces sharing a policy label are replicates of one curve
    let mut groups: Vec<(String, Vec<&TraceFile>)> = Vec::new();
    for (t, path) in traces.iter().zip(&cfg.paths.traces) {
        let label = t
            .label()
            .map(str::to_string)
            .unwrap_or_else(|| path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        match groups.iter_mut().find(|(l, _)| *l == label) {
            Some((_, g)) => g.push(t),
            None => groups.push((label, vec![t])),
        }
    }
    let checkpoints: Vec<usize> = match &cfg.checkpoints {
        Some(c) => c.clone(),
        None => {
            let mut all = BTreeSet::new();
            for t in &traces {
                let mut m = 0;
                for line in &t.lines {
                    m += line.picked.len();
                    all.insert(m);
                }
            }
            all.into_iter().filter(|&m| m <= n).collect()
        }
    };

    let outputs = match &cfg.paths.outputs {
        Some(path) => {
            let meta_path = io::sidecar(path, ".meta.json");
            if meta_path.exists() {
                let meta: serde_json::Value = serde_json::from_str(&io::read_text(&meta_path)?)
                    .map_err(|e| CliError::Io(format!("{}: {e}", meta_path.display())))?;
                if meta["pool_hash"] != json!(hash) {
                    return Err(CliError::Consistency(format!("{} was produced from a different pool", path.display())));
                }
            }
            io::read_outputs(path, n)?
        }
        None => {
            let all: Vec<usize> = (0..n).collect();
            crate::evaluation::propagate(&pool, &all, cfg.model().as_ref(), n)?
        }
    };

    let mut input = Vec::new();
    let mut output = Vec::new();
    for (label, group) in &groups {
        let orders: Vec<Vec<usize>> = group.iter().map(|t| t.order()).collect();
        let seeds: Vec<u64> = group
            .iter()
            .filter_map(|t| t.meta.get("replicate_seed").and_then(|v| v.as_u64()))
            .collect();
        let values = orders
            .iter()
            .map(|o| prefix_curve(&pool, o, &checkpoints))
            .collect::<Result<Vec<_>, _>>()?;
        let spec: Option<PolicySpec> = group[0]
            .meta
            .get("spec")
            .and_then(|v| serde_json::from_value(v.clone()).ok());
        let mut curve = curve_from_values(label.clone(), spec.as_ref(), values);
        curve.seeds = seeds.clone();
        curve.iterations = group.iter().map(|t| t.lines.len()).collect();
        let mut out_curve = output_curve(&outputs, label.clone(), &orders, &checkpoints)?;
        out_curve.policy = curve.policy.clone();
        out_curve.batch_size = curve.batch_size;
        out_curve.num_batches = curve.num_batches;
        out_curve.seeds = seeds;
        out_curve.iterations = curve.iterations.clone();
        input.push(curve);
        output.push(out_curve);
    }
    let mut cps = checkpoints.clone();
    cps.sort_unstable();
    cps.dedup();
    let report = EvaluationReport {
        meta: cfg.meta(cfg.seed, &hash),
        checkpoints: cps.clone(),
        input,
        output,
        failed: outputs.failed(),
    };
    if let Some(path) = &cfg.paths.report {
        io::write_text(path, &io::to_json(&report))?;
    }
    if let Some(path) = &cfg.paths.csv {
        let rows: Vec<(String, &PolicyCurve)> = report
            .input
            .iter()
            .map(|c| (format!("input:{}", c.label), c))
            .chain(report.output.iter().map(|c| (format!("output:{}", c.label), c)))
            .collect();
        io::write_text(path, &io::plot_csv(&rows, &cps))?;
    }
    if cfg.paths.report.is_none() && cfg.paths.csv.is_none() {
        print!("{}", io::to_json(&report));
    }
    Ok(())
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<(), CliError> {
    let pool = load_pool(cfg)?;
    let hash = pool.content_hash();
    let objective = cfg.objective(&pool);
    let root = RandomStream::new(cfg.seed);
    let mut sweep = batch_size_sweep(
        &pool,
        &cfg.sizes,
        cfg.k.expect("validated"),
        cfg.draw,
        cfg.replicates,
        cfg.checkpoints.as_deref().unwrap_or(&[]),
        &root,
        &objective,
        cfg.baseline,
        cfg.meta(cfg.seed, &hash),
    )?;
    if cfg.timing {
        for (curve, run) in sweep.report.policies.iter_mut().zip(sweep.runs) {
            *curve = run.with_timing().curve;
        }
    }
    if let Some(path) = &cfg.paths.report {
        io::write_text(path, &io::to_json(&sweep.report))?;
    }
    if let Some(path) = &cfg.paths.csv {
        io::write_text(path, &io::report_plot_csv(&sweep.report))?;
    }
    Ok(())
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
